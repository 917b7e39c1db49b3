//! Thin command-line front end: parse argv, call into the library, map
//! failures to exit codes. Exit 0 on success, 1 when a run fails, 2 when
//! the invocation itself is wrong.

use crate::config::RunConfig;
use crate::error::Error;
use crate::metrics;
use crate::nn::CheckpointInfo;
use crate::orchestrator::Session;
use crate::scenario;
use crate::verify;
use std::path::{Path, PathBuf};

pub const USAGE: &str = "\
hyfl: three-layer federated learning over secret shares

usage:
  hyfl run <config> [--out <dir>] [--seed <n>]
      train from a `key = value` config file and write the metrics,
      config echo, seed record and model shares under the output directory
  hyfl scenario <name> [--paper-scale] [--out <dir>]
      run a preset experiment family (default output: results/)
  hyfl verify
      re-run the built-in correctness checks
  hyfl inspect <checkpoint>
      print a model checkpoint header
  hyfl help
      show this text

scenarios: q1-convergence, q2-backend, q4-attack-grid, q5-cost, q6-tm-variant";

enum Failure {
    /// The invocation itself is malformed; print usage, exit 2.
    Usage(String),
    /// The invocation was fine but the work failed; exit 1.
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Exit = std::result::Result<i32, Failure>;

/// Entry point for the binary: `args` excludes the program name.
pub fn dispatch(args: &[String]) -> i32 {
    match go(args) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn go(args: &[String]) -> Exit {
    let words: Vec<&str> = args.iter().map(String::as_str).collect();
    match words.split_first() {
        None => Err(Failure::Usage("a subcommand is required".into())),
        Some((&"help", _)) | Some((&"--help", _)) | Some((&"-h", _)) => {
            println!("{USAGE}");
            Ok(0)
        }
        Some((&"run", rest)) => cmd_run(rest),
        Some((&"scenario", rest)) => cmd_scenario(rest),
        Some((&"verify", rest)) => cmd_verify(rest),
        Some((&"inspect", rest)) => cmd_inspect(rest),
        Some((other, _)) => Err(Failure::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn no_flags(rest: &[&str], cmd: &str) -> std::result::Result<(), Failure> {
    match rest.first() {
        None => Ok(()),
        Some(extra) => Err(Failure::Usage(format!("`{cmd}` takes no arguments, got `{extra}`"))),
    }
}

fn positional<'a>(rest: &mut &[&'a str], what: &str) -> std::result::Result<&'a str, Failure> {
    match rest.split_first() {
        Some((first, tail)) if !first.starts_with('-') => {
            *rest = tail;
            Ok(first)
        }
        _ => Err(Failure::Usage(format!("missing {what}"))),
    }
}

fn flag_value<'a>(rest: &mut &[&'a str], flag: &str) -> std::result::Result<&'a str, Failure> {
    match rest.split_first() {
        Some((v, tail)) => {
            *rest = tail;
            Ok(v)
        }
        None => Err(Failure::Usage(format!("{flag} needs a value"))),
    }
}

fn cmd_run(mut rest: &[&str]) -> Exit {
    let path = positional(&mut rest, "the config file path")?;
    let mut out: Option<String> = None;
    let mut seed: Option<u64> = None;
    while let Some((flag, tail)) = rest.split_first() {
        rest = tail;
        match *flag {
            "--out" => out = Some(flag_value(&mut rest, "--out")?.to_string()),
            "--seed" => {
                let v = flag_value(&mut rest, "--seed")?;
                seed = Some(v.parse().map_err(|_| {
                    Failure::Usage(format!("--seed wants an unsigned integer, got `{v}`"))
                })?);
            }
            other => return Err(Failure::Usage(format!("unknown flag `{other}`"))),
        }
    }

    let mut cfg = RunConfig::load(Path::new(path))?;
    if let Some(dir) = out {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    run_to_disk(&cfg)?;
    Ok(0)
}

/// Trains per `cfg`, streams round lines to stdout, writes the artifact
/// directory, and reports where everything landed.
fn run_to_disk(cfg: &RunConfig) -> std::result::Result<(), Error> {
    println!(
        "{} · {} · {} rounds · {} clients in {} clusters · seed {}",
        cfg.mode.label(),
        cfg.backend.label(),
        cfg.rounds,
        cfg.clients,
        cfg.clusters,
        cfg.seed
    );
    let mut session = Session::new(cfg.plan()?, cfg.corpus()?)?;
    let every = if cfg.rounds <= 20 { 1 } else { 10 };
    let records = session.run_with(|r| {
        if r.round % every == 0 || r.round == cfg.rounds {
            let fixed = match r.fixed_accuracy {
                Some(a) => format!("  fixed {a:.4}"),
                None => String::new(),
            };
            println!("round {:>4}  accuracy {:.4}{fixed}", r.round, r.accuracy);
        }
    })?;
    let files = metrics::write_run(&cfg.out_dir, cfg, &mut session, &records)?;
    if let Some(last) = records.last() {
        println!("final accuracy {:.4}", last.accuracy);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_scenario(mut rest: &[&str]) -> Exit {
    let name = positional(&mut rest, "the scenario name")?;
    let mut out = PathBuf::from("results");
    let mut paper_scale = false;
    while let Some((flag, tail)) = rest.split_first() {
        rest = tail;
        match *flag {
            "--paper-scale" => paper_scale = true,
            "--out" => out = PathBuf::from(flag_value(&mut rest, "--out")?),
            other => return Err(Failure::Usage(format!("unknown flag `{other}`"))),
        }
    }
    let plan = match scenario::build(name, paper_scale) {
        Err(Error::UnknownScenario(n)) => {
            return Err(Failure::Usage(format!("unknown scenario `{n}`")))
        }
        other => other?,
    };
    println!("{}: {} ({} runs)", plan.name, plan.about, plan.runs.len());
    let report = plan.execute(&out, |line| println!("{line}"))?;
    for line in &report.lines {
        println!("{line}");
    }
    println!("wrote {}", report.dir.display());
    Ok(0)
}

fn cmd_verify(rest: &[&str]) -> Exit {
    no_flags(rest, "verify")?;
    let outcomes = verify::run_all(|o| {
        let tag = if o.ok { "ok  " } else { "FAIL" };
        println!("{tag} {:<28} {}", o.name, o.detail);
    });
    let failed = outcomes.iter().filter(|o| !o.ok).count();
    if failed > 0 {
        println!("{failed} of {} checks failed", outcomes.len());
        return Ok(1);
    }
    println!("all {} checks passed", outcomes.len());
    Ok(0)
}

fn cmd_inspect(mut rest: &[&str]) -> Exit {
    let path = positional(&mut rest, "the checkpoint path")?;
    no_flags(rest, "inspect")?;
    println!("{}", inspect_text(Path::new(path))?);
    Ok(0)
}

/// Human-readable checkpoint header, without touching the share payload.
pub fn inspect_text(path: &Path) -> std::result::Result<String, Error> {
    let info = CheckpointInfo::peek(path)?;
    Ok(format!(
        "mode: {}\nfrac_bits: {}\nparams: {}\narch: {}",
        info.mode, info.frac_bits, info.params, info.descriptor
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{save_checkpoint, Architecture, Model};
    use std::fs;

    fn call(words: &[&str]) -> i32 {
        let args: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        dispatch(&args)
    }

    #[test]
    fn malformed_invocations_exit_2() {
        assert_eq!(call(&[]), 2);
        assert_eq!(call(&["frobnicate"]), 2);
        assert_eq!(call(&["run"]), 2);
        assert_eq!(call(&["run", "cfg.txt", "--what"]), 2);
        assert_eq!(call(&["run", "cfg.txt", "--seed", "minus-one"]), 2);
        assert_eq!(call(&["scenario"]), 2);
        assert_eq!(call(&["scenario", "q9-imaginary"]), 2);
        assert_eq!(call(&["verify", "--loud"]), 2);
        assert_eq!(call(&["inspect"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(call(&["help"]), 0);
        assert_eq!(call(&["--help"]), 0);
    }

    #[test]
    fn broken_configs_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "train.lr = fast\n").unwrap();
        assert_eq!(call(&["run", path.to_str().unwrap()]), 1);
        assert_eq!(call(&["run", dir.path().join("absent.txt").to_str().unwrap()]), 1);
    }

    #[test]
    fn run_subcommand_trains_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("tiny.txt");
        fs::write(
            &cfg,
            "mode = HyFL\n\
             topology.clients = 12\n\
             topology.clusters = 3\n\
             topology.sampled = 2\n\
             rounds = 2\n\
             model.arch = mlp:784,4,10\n\
             train.epochs = 1\n\
             data.source = synthetic\n\
             data.train = 80\n\
             data.test = 30\n\
             data.shard = 6\n\
             trust.root = 10\n\
             eval.fixed_every = 0\n",
        )
        .unwrap();
        let out = dir.path().join("artifacts");
        assert_eq!(call(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        assert!(out.join("metrics.csv").is_file());
        assert!(out.join("config.txt").is_file());

        // a seed override lands in the seed record
        assert_eq!(
            call(&[
                "run",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "77"
            ]),
            0
        );
        assert_eq!(fs::read_to_string(out.join("seed.txt")).unwrap(), "77\n");
    }

    #[test]
    fn inspect_prints_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.share");
        let model = Model::init(Architecture::mlp(&[784, 4, 10]), 3).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let text = inspect_text(&path).unwrap();
        assert!(text.contains("mode: float"));
        assert!(text.contains("params: 3190"));
        assert_eq!(call(&["inspect", path.to_str().unwrap()]), 0);
        assert_eq!(call(&["inspect", dir.path().join("no.share").to_str().unwrap()]), 1);
    }
}
