//! Named experiment presets. Each scenario is a list of runs sharing one
//! master seed; executing it writes per-run artifact directories, a
//! scenario-level plot script, and a summary of the comparison the
//! scenario exists to make.
//!
//! All presets are desk scale by default and finish on a single core:
//! the convergence and backend pairs in well under a minute plus one
//! fixed-point run of a couple of minutes, the trim-variant quartet in
//! about a minute, the cost table in under a minute, and the full attack
//! grid (109 runs) in roughly a quarter hour. `paper_scale` swaps the
//! base preset for the full parameter tables; those runs take hours and
//! exist for completeness, not for the test suite.

use std::fs;
use std::path::{Path, PathBuf};

use crate::attacks::Placement;
use crate::config::{AttackName, RuleKind, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, PLOT_SCRIPT};
use crate::orchestrator::{Mode, RoundRecord, Session};

pub const NAMES: [&str; 5] =
    ["q1-convergence", "q2-backend", "q4-attack-grid", "q5-cost", "q6-tm-variant"];

/// One named run inside a scenario.
#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub name: String,
    pub cfg: RunConfig,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub about: &'static str,
    pub runs: Vec<ScenarioRun>,
}

/// What `execute` leaves behind: the scenario directory and the summary
/// lines (also written to `summary.txt` inside it).
#[derive(Debug)]
pub struct ScenarioReport {
    pub dir: PathBuf,
    pub lines: Vec<String>,
}

fn base(paper_scale: bool, mode: Mode) -> RunConfig {
    if paper_scale {
        RunConfig::paper(mode)
    } else {
        RunConfig::desk(mode)
    }
}

/// Builds a preset by name; `paper_scale` restores the full parameter
/// tables instead of the desk defaults.
pub fn build(name: &str, paper_scale: bool) -> Result<Scenario> {
    let hyfl = || base(paper_scale, Mode::Hyfl);
    let run = |name: String, cfg: RunConfig| ScenarioRun { name, cfg };
    let runs = match name {
        "q1-convergence" => {
            vec![
                run("hyfl".into(), hyfl()),
                run("flat".into(), base(paper_scale, Mode::FlatSingle)),
            ]
        }
        "q2-backend" => {
            let mut float = hyfl();
            float.backend = crate::sharing::BackendKind::Float;
            let mut fixed = hyfl();
            fixed.backend = crate::sharing::BackendKind::FixedSim;
            vec![run("float".into(), float), run("fixed".into(), fixed)]
        }
        "q4-attack-grid" => {
            let mut runs = vec![run("clean".into(), hyfl())];
            for attack in [AttackName::Rlf, AttackName::Slf, AttackName::Dlf, AttackName::Tlf] {
                for rate in [0.01, 0.1, 0.2] {
                    for placement in [
                        Placement::EquallyDistributed,
                        Placement::Focused,
                        Placement::ClusterFocused,
                    ] {
                        for rule in
                            [RuleKind::FedAvg, RuleKind::TrimmedMean, RuleKind::FlTrust]
                        {
                            let mut cfg = hyfl();
                            cfg.attack = attack;
                            cfg.rate = rate;
                            cfg.placement = placement;
                            cfg.rule = rule;
                            runs.push(run(
                                format!(
                                    "{}-{rate}-{}-{}",
                                    attack.label(),
                                    placement.label(),
                                    rule.label()
                                ),
                                cfg,
                            ));
                        }
                    }
                }
            }
            runs
        }
        "q5-cost" => {
            // The cost table needs the big model; accuracy is beside the
            // point, so the desk version keeps only a few rounds.
            let mut cost_base = hyfl();
            cost_base.arch = crate::nn::Architecture::lenet();
            cost_base.backend = crate::sharing::BackendKind::FixedSim;
            if !paper_scale {
                cost_base.rounds = 3;
                cost_base.fixed_every = 0;
            }
            [RuleKind::FedAvg, RuleKind::TrimmedMean, RuleKind::TmVariant, RuleKind::FlTrust]
                .into_iter()
                .map(|rule| {
                    let mut cfg = cost_base.clone();
                    cfg.rule = rule;
                    let name = match rule {
                        RuleKind::TmVariant => format!("{}-{}", rule.label(), cfg.beta),
                        _ => rule.label().to_string(),
                    };
                    run(name, cfg)
                })
                .collect()
        }
        "q6-tm-variant" => {
            let mut runs = Vec::new();
            let mut tm = hyfl();
            tm.rule = RuleKind::TrimmedMean;
            runs.push(run("trimmedMean".into(), tm));
            for beta in [10, 100, 1000] {
                let mut cfg = hyfl();
                cfg.rule = RuleKind::TmVariant;
                cfg.beta = beta;
                runs.push(run(format!("tmVariant-{beta}"), cfg));
            }
            runs
        }
        other => return Err(Error::UnknownScenario(other.into())),
    };
    let about = match name {
        "q1-convergence" => "clustered vs flat federated training on identical seeds",
        "q2-backend" => "fixed-point ring training against the float reference",
        "q4-attack-grid" => "label-flip attacks x rates x placements x aggregation rules",
        "q5-cost" => "per-round aggregation cost of the four rules on the big model",
        _ => "full trimmed mean against its sampled variants",
    };
    Ok(Scenario { name: name.into(), about, runs })
}

impl Scenario {
    /// Runs every configured run, writing artifacts under
    /// `out_root/<scenario>/<run>/`. `progress` is called once per run
    /// with a short completion line.
    pub fn execute(
        &self,
        out_root: &Path,
        mut progress: impl FnMut(&str),
    ) -> Result<ScenarioReport> {
        let dir = out_root.join(&self.name);
        fs::create_dir_all(&dir)?;
        let mut lines = vec![format!("{}: {}", self.name, self.about)];
        let mut series = Vec::new();
        for (i, r) in self.runs.iter().enumerate() {
            let mut cfg = r.cfg.clone();
            cfg.out_dir = dir.join(&r.name);
            let mut session = Session::new(cfg.plan()?, cfg.corpus()?)?;
            let records = session.run()?;
            metrics::write_run(&cfg.out_dir, &cfg, &mut session, &records)?;
            let last = records.last().expect("scenario runs have at least one round");
            let line = format!(
                "[{}/{}] {}: round {} accuracy {:.4}",
                i + 1,
                self.runs.len(),
                r.name,
                last.round,
                last.accuracy
            );
            progress(&line);
            lines.push(line);
            series.push((r.name.clone(), records));
        }
        lines.extend(self.summarize(&series));
        fs::write(dir.join("plot.py"), PLOT_SCRIPT)?;
        fs::write(dir.join("summary.txt"), lines.join("\n") + "\n")?;
        Ok(ScenarioReport { dir, lines })
    }

    /// The comparison each scenario exists to make, as plain lines.
    fn summarize(&self, series: &[(String, Vec<RoundRecord>)]) -> Vec<String> {
        let by_name = |n: &str| series.iter().find(|(name, _)| name == n).map(|(_, r)| r);
        let mut out = Vec::new();
        match self.name.as_str() {
            "q1-convergence" => {
                if let (Some(hy), Some(fl)) = (by_name("hyfl"), by_name("flat")) {
                    let upto = hy.len().min(fl.len());
                    let from = 10.min(upto);
                    let wins = (from..=upto)
                        .filter(|&r| hy[r - 1].accuracy >= fl[r - 1].accuracy)
                        .count();
                    out.push(format!(
                        "clustered training at or above flat in {wins} of rounds {from}..={upto}"
                    ));
                }
            }
            "q2-backend" => {
                if let (Some(f), Some(x)) = (by_name("float"), by_name("fixed")) {
                    let worst = f
                        .iter()
                        .zip(x)
                        .skip(9)
                        .step_by(10)
                        .map(|(a, b)| (a.accuracy - b.accuracy).abs())
                        .fold(0.0f64, f64::max);
                    out.push(format!(
                        "largest fixed-vs-float accuracy gap at 10-round probes: {:.2} pp",
                        100.0 * worst
                    ));
                }
            }
            "q4-attack-grid" => {
                let clean = by_name("clean").map(|r| r.last().unwrap().accuracy);
                if let Some(clean) = clean {
                    out.push(format!("clean baseline final accuracy {clean:.4}"));
                    for (name, records) in series.iter().filter(|(n, _)| n != "clean") {
                        let last = records.last().unwrap();
                        out.push(format!(
                            "{name}: final {:.4} ({:+.4} vs clean)",
                            last.accuracy,
                            last.accuracy - clean
                        ));
                    }
                }
            }
            "q5-cost" => {
                for (name, records) in series {
                    let c = records.last().unwrap().agg_cost;
                    out.push(format!(
                        "{name}: aggregation step per round moves {} bytes, {} comparisons",
                        c.bytes, c.comparisons
                    ));
                }
                let cmp = |n: &str| {
                    by_name(n).map(|r| r.last().unwrap().agg_cost.comparisons)
                };
                if let (Some(full), Some(sampled)) = (cmp("trimmedMean"), cmp("tmVariant-100")) {
                    if sampled > 0 {
                        out.push(format!(
                            "coordinate sampling needs {:.2}x fewer comparisons than the full trim",
                            full as f64 / sampled as f64
                        ));
                    }
                }
            }
            _ => {
                for (name, records) in series {
                    let last = records.last().unwrap();
                    out.push(format!(
                        "{name}: final accuracy {:.4} at {} comparisons per aggregation",
                        last.accuracy, last.agg_cost.comparisons
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataSource;

    #[test]
    fn unknown_scenario_is_an_error() {
        assert!(matches!(
            build("q3-heterogeneity", false),
            Err(Error::UnknownScenario(n)) if n == "q3-heterogeneity"
        ));
        for name in NAMES {
            assert!(build(name, false).is_ok(), "{name} must build");
        }
    }

    #[test]
    fn every_preset_validates_at_both_scales() {
        for paper in [false, true] {
            for name in NAMES {
                let s = build(name, paper).unwrap();
                assert!(!s.runs.is_empty());
                for r in &s.runs {
                    r.cfg.plan().unwrap_or_else(|e| panic!("{name}/{}: {e}", r.name));
                }
            }
        }
    }

    #[test]
    fn variant_scenario_emits_the_four_curves() {
        let s = build("q6-tm-variant", false).unwrap();
        let names: Vec<&str> = s.runs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["trimmedMean", "tmVariant-10", "tmVariant-100", "tmVariant-1000"]);
    }

    #[test]
    fn attack_grid_covers_the_whole_cross_product() {
        let s = build("q4-attack-grid", false).unwrap();
        assert_eq!(s.runs.len(), 1 + 4 * 3 * 3 * 3);
        assert_eq!(s.runs[0].name, "clean");
        let dlf_tm: Vec<&ScenarioRun> = s
            .runs
            .iter()
            .filter(|r| r.cfg.attack == AttackName::Dlf && r.cfg.rule == RuleKind::TrimmedMean)
            .collect();
        assert_eq!(dlf_tm.len(), 9, "3 rates x 3 placements");
        assert!(s.runs.iter().skip(1).all(|r| r.cfg.rate > 0.0));
    }

    /// Shrinks a scenario's runs so executing it takes moments.
    fn shrink(s: &mut Scenario) {
        for r in &mut s.runs {
            r.cfg.clients = 12;
            r.cfg.clusters = 3;
            r.cfg.sampled = if r.cfg.mode.is_flat() { 6 } else { 2 };
            r.cfg.rounds = 2;
            r.cfg.shard = 6;
            r.cfg.epochs = 1;
            r.cfg.batch = 8;
            r.cfg.data = DataSource::Synthetic { train: 80, test: 30 };
            r.cfg.root_size = 10;
            r.cfg.alpha = 1;
            r.cfg.fixed_every = 0;
        }
    }

    #[test]
    fn execution_lays_out_the_artifact_tree() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = build("q1-convergence", false).unwrap();
        shrink(&mut s);
        let mut seen = 0;
        let report = s.execute(dir.path(), |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(report.dir, dir.path().join("q1-convergence"));
        for run in ["hyfl", "flat"] {
            assert!(report.dir.join(run).join("metrics.csv").is_file());
            assert!(report.dir.join(run).join("config.txt").is_file());
        }
        assert!(report.dir.join("plot.py").is_file());
        let summary = std::fs::read_to_string(report.dir.join("summary.txt")).unwrap();
        assert!(summary.contains("rounds"), "{summary}");
    }

    #[test]
    fn cost_summary_reports_the_sampling_ratio() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = build("q5-cost", false).unwrap();
        shrink(&mut s);
        for r in &mut s.runs {
            // keep the big model but barely train: tiny pools, one round
            r.cfg.rounds = 1;
        }
        let report = s.execute(dir.path(), |_| {}).unwrap();
        let ratio_line = report
            .lines
            .iter()
            .find(|l| l.contains("fewer comparisons"))
            .expect("ratio line present");
        // lenet length 44426 over beta 100, exact by the count formula
        assert!(ratio_line.contains("444.26"), "{ratio_line}");
    }
}
