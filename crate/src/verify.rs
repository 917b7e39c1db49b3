//! Self-contained correctness checks behind the `verify` subcommand: the
//! oracle comparisons and algebraic identities the test suite pins, in a
//! form a release binary can re-run in seconds on any machine.

use crate::agg::{
    carrier_for, fed_avg, network::sort_schedule, trimmed_mean, trimmed_mean_variant,
    trust_scores,
};
use crate::attacks::AttackKind;
use crate::config::RunConfig;
use crate::data::{ClientShard, Dataset};
use crate::error::Result;
use crate::fixed::{FixedScalar, FixedVec, DEFAULT_FRAC_BITS};
use crate::metrics::render_csv;
use crate::nn::{gradient, Architecture, LayerSpec, Model};
use crate::orchestrator::{Mode, Session};
use crate::rng::{kind, substream};
use crate::sharing::{
    engine_for, BackendKind, Carrier, Committee, CostModel, RevealSink, ShareEngine, ShareSet,
};

/// One finished check.
pub struct Outcome {
    pub name: &'static str,
    pub ok: bool,
    /// What was measured on success, what went wrong on failure.
    pub detail: String,
}

type Check = (&'static str, fn() -> std::result::Result<String, String>);

/// Runs the whole suite in order, calling `progress` after each check.
pub fn run_all(mut progress: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let checks: Vec<Check> = vec![
        ("fixed-encode-roundtrip", fixed_encode_roundtrip),
        ("share-reveal-identity", share_reveal_identity),
        ("linear-aggregation-free", linear_aggregation_free),
        ("sorting-network-counts", sorting_network_counts),
        ("oblivious-trim-oracle", oblivious_trim_oracle),
        ("variant-exclusion", variant_exclusion),
        ("gradient-finite-difference", gradient_finite_difference),
        ("label-flip-formulas", label_flip_formulas),
        ("trust-scores", trust_scores_check),
        ("run-determinism", run_determinism),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let out = match f() {
                Ok(detail) => Outcome { name, ok: true, detail },
                Err(detail) => Outcome { name, ok: false, detail },
            };
            progress(&out);
            out
        })
        .collect()
}

fn fail(msg: String) -> std::result::Result<String, String> {
    Err(msg)
}

fn fixed_engine(kind_: BackendKind) -> Box<dyn ShareEngine> {
    let mut e = engine_for(kind_, DEFAULT_FRAC_BITS, CostModel::default(), 7);
    e.register(Committee::standard("g")).expect("fresh engine");
    e
}

fn ring_vec(rng: &mut rand_chacha::ChaCha8Rng, len: usize) -> Vec<f64> {
    use rand::Rng;
    (0..len).map(|_| rng.gen_range(-100.0..100.0)).collect()
}

fn share_on(
    e: &mut dyn ShareEngine,
    xs: &[f64],
    who: u64,
) -> Result<ShareSet> {
    let c = carrier_for(e.kind(), e.frac_bits(), xs)?;
    e.share(&c, &format!("client:{who}"), "g", &mut substream(7, kind::SHARE, who, 0))
}

fn fixed_encode_roundtrip() -> std::result::Result<String, String> {
    let mut rng = substream(1, kind::SYNTH, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = ring_vec(&mut rng, 1)[0];
        let err = (FixedScalar::encode(x, DEFAULT_FRAC_BITS).map_err(|e| e.to_string())?
            .decode()
            - x)
            .abs();
        worst = worst.max(err);
    }
    let bound = 1.0 / (1u64 << DEFAULT_FRAC_BITS) as f64;
    if worst > bound {
        return fail(format!("round-off {worst:e} above one encoding step {bound:e}"));
    }
    Ok(format!("1000 values, worst round-off {worst:.2e}"))
}

fn share_reveal_identity() -> std::result::Result<String, String> {
    for backend in [BackendKind::FixedSim, BackendKind::MultiPartyInProcess] {
        let mut e = fixed_engine(backend);
        let mut rng = substream(2, kind::SYNTH, 0, 0);
        for i in 0..50u64 {
            let xs = ring_vec(&mut rng, 64);
            let expect = FixedVec::encode_slice(&xs, DEFAULT_FRAC_BITS)
                .map_err(|e| e.to_string())?;
            let s = share_on(e.as_mut(), &xs, i).map_err(|e| e.to_string())?;
            let back = e.reveal(&s, RevealSink::Diagnostics).map_err(|e| e.to_string())?;
            let back = back.as_fixed().ok_or("fixed carrier expected")?;
            if back.raw() != expect.raw() {
                return fail(format!("{} vector {i} reconstructed wrong", backend.label()));
            }
            e.free(s);
        }
    }
    Ok("50 vectors of length 64 exact on both fixed backends".into())
}

fn linear_aggregation_free() -> std::result::Result<String, String> {
    let mut e = fixed_engine(BackendKind::MultiPartyInProcess);
    let mut rng = substream(3, kind::SYNTH, 0, 0);
    let inputs: Vec<ShareSet> = (0..3)
        .map(|i| share_on(e.as_mut(), &ring_vec(&mut rng, 200), i))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let before = e.meter().snapshot();
    let avg = fed_avg(e.as_mut(), &inputs, None).map_err(|e| e.to_string())?;
    let moved = e.meter().snapshot().minus(before);
    e.free(avg);
    if moved.bytes != 0 || moved.comparisons != 0 || moved.rounds != 0 {
        return fail(format!("averaging moved {moved:?}"));
    }
    Ok("averaging 3 shared vectors of length 200 moved nothing".into())
}

fn sorting_network_counts() -> std::result::Result<String, String> {
    for (n, want) in [(2usize, 1usize), (10, 31), (100, 1077)] {
        let got = sort_schedule(n).len();
        if got != want {
            return fail(format!("n={n}: {got} compare-swaps, expected {want}"));
        }
    }
    Ok("1, 31 and 1077 compare-swaps for 2, 10 and 100 inputs".into())
}

fn oblivious_trim_oracle() -> std::result::Result<String, String> {
    use rand::seq::SliceRandom;
    let (m, len, alpha) = (10usize, 20usize, 2usize);
    for trial in 0..5u64 {
        let mut rng = substream(4, kind::TRIM, trial, 0);
        // distinct integers per coordinate, shuffled across inputs
        let mut rows = vec![vec![0.0f64; len]; m];
        for j in 0..len {
            let mut col: Vec<f64> = (0..m as i64).map(|v| (v * 3 - 11) as f64).collect();
            col.shuffle(&mut rng);
            for (i, r) in rows.iter_mut().enumerate() {
                r[j] = col[i];
            }
        }
        let mut e = fixed_engine(BackendKind::FixedSim);
        let inputs: Vec<ShareSet> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| share_on(e.as_mut(), r, i as u64))
            .collect::<Result<_>>()
            .map_err(|e| e.to_string())?;
        let out = trimmed_mean(e.as_mut(), &inputs, alpha).map_err(|e| e.to_string())?;
        let got = e.reveal(&out, RevealSink::Diagnostics).map_err(|e| e.to_string())?;
        let got = got.as_fixed().ok_or("fixed carrier expected")?.raw().to_vec();
        if got != plain_trim(&rows, alpha) {
            return fail(format!("trial {trial} differs from the plaintext oracle"));
        }
    }
    Ok("5 instances of 10 length-20 inputs, bit-exact".into())
}

/// Sort-and-trim in the clear, same ring ops the engine uses.
fn plain_trim(rows: &[Vec<f64>], alpha: usize) -> Vec<u64> {
    let (m, len) = (rows.len(), rows[0].len());
    let keep = m - 2 * alpha;
    let coeff = FixedScalar::encode(1.0 / keep as f64, DEFAULT_FRAC_BITS).unwrap();
    (0..len)
        .map(|j| {
            let mut col: Vec<FixedScalar> = rows
                .iter()
                .map(|r| FixedScalar::encode(r[j], DEFAULT_FRAC_BITS).unwrap())
                .collect();
            col.sort_by_key(|v| v.raw() as i64);
            col[alpha..m - alpha]
                .iter()
                .fold(FixedScalar::encode(0.0, DEFAULT_FRAC_BITS).unwrap(), |acc, v| {
                    acc.add_wrap(v.mul_truncate(coeff))
                })
                .raw()
        })
        .collect()
}

fn variant_exclusion() -> std::result::Result<String, String> {
    let (m, len, alpha) = (10usize, 12usize, 2usize);
    let mut rng = substream(5, kind::SYNTH, 0, 0);
    let mut e = fixed_engine(BackendKind::FixedSim);
    let mut rows: Vec<Vec<f64>> = (0..m).map(|_| ring_vec(&mut rng, len)).collect();
    for v in rows[6].iter_mut() {
        *v += 1000.0;
    }
    let inputs: Vec<ShareSet> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| share_on(e.as_mut(), r, i as u64))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let ids: Vec<u64> = (0..m as u64).collect();
    let out = trimmed_mean_variant(e.as_mut(), &inputs, &ids, None, alpha, len, 5, 1)
        .map_err(|e| e.to_string())?;
    if out.excluded.len() != 2 * alpha {
        return fail(format!("excluded {} models, expected {}", out.excluded.len(), 2 * alpha));
    }
    if !out.excluded.contains(&6) {
        return fail(format!("planted outlier kept; excluded {:?}", out.excluded));
    }
    e.free(out.aggregated);
    Ok(format!("excluded {:?}, outlier 6 among them", out.excluded))
}

fn gradient_finite_difference() -> std::result::Result<String, String> {
    let arch = Architecture {
        input: (1, 2, 2),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { input: 4, output: 3 }],
    };
    let model = Model::init(arch.clone(), 11).map_err(|e| e.to_string())?;
    let images: Vec<f64> = (0..8).map(|i| (i as f64) / 7.0 - 0.4).collect();
    let labels = vec![0usize, 2];
    let (_, g, _) = gradient(&model, &images, &labels).map_err(|e| e.to_string())?;
    let g = match g {
        Carrier::F64(g) => g,
        _ => return fail("float gradient expected".into()),
    };
    let base = model.params.to_f64_vec();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..base.len() {
        let probe = |delta: f64| -> std::result::Result<f64, String> {
            let mut p = base.clone();
            p[idx] += delta;
            let m = Model::from_params(arch.clone(), Carrier::F64(p)).map_err(|e| e.to_string())?;
            Ok(gradient(&m, &images, &labels).map_err(|e| e.to_string())?.0)
        };
        let fd = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
        let rel = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    if worst > 1e-4 {
        return fail(format!("worst relative error {worst:e}"));
    }
    Ok(format!("15 coordinates, worst relative error {worst:.1e}"))
}

fn label_flip_formulas() -> std::result::Result<String, String> {
    let data = Dataset::new(vec![0u8; 10], (0..10u8).collect(), 1, 1).map_err(|e| e.to_string())?;
    let arch = Architecture::mlp(&[784, 4, 10]);
    let shard = ClientShard {
        client_id: 0,
        indices: (0..10).collect(),
        labels: (0..10u8).collect(),
    };
    let malicious = [0u64].into_iter().collect();

    let mut once = vec![shard.clone()];
    crate::attacks::poison_shards(&mut once, &malicious, AttackKind::StaticLabelFlip, &data, &arch, 10, 1)
        .map_err(|e| e.to_string())?;
    if once[0].labels[3] != 6 {
        return fail(format!("static flip sent 3 to {}", once[0].labels[3]));
    }
    let mut twice = once.clone();
    crate::attacks::poison_shards(&mut twice, &malicious, AttackKind::StaticLabelFlip, &data, &arch, 10, 1)
        .map_err(|e| e.to_string())?;
    if twice[0].labels != shard.labels {
        return fail("applying the static flip twice is not the identity".into());
    }

    let mut targeted = vec![shard.clone()];
    crate::attacks::poison_shards(
        &mut targeted,
        &malicious,
        AttackKind::TargetedLabelFlip { source: 3, target: 6 },
        &data,
        &arch,
        10,
        1,
    )
    .map_err(|e| e.to_string())?;
    for (i, (&a, &b)) in shard.labels.iter().zip(&targeted[0].labels).enumerate() {
        let want = if a == 3 { 6 } else { a };
        if b != want {
            return fail(format!("targeted flip rewrote index {i}: {a} -> {b}"));
        }
    }
    Ok("static flip 3->6 involutive, targeted flip touches only its source class".into())
}

fn trust_scores_check() -> std::result::Result<String, String> {
    let root = vec![1.0, 0.0, 0.0];
    let updates = vec![
        vec![2.0, 0.0, 0.0],
        vec![0.0, 3.0, 0.0],
        vec![-1.0, 0.0, 0.0],
    ];
    let s = trust_scores(&root, &updates).map_err(|e| e.to_string())?;
    for (got, want) in s.iter().zip([1.0, 0.0, 0.0]) {
        if (got - want).abs() > 1e-9 {
            return fail(format!("scores {s:?}, expected [1, 0, 0]"));
        }
    }
    Ok("parallel, orthogonal and antiparallel updates score 1, 0, 0".into())
}

fn run_determinism() -> std::result::Result<String, String> {
    let mut cfg = RunConfig::desk(Mode::Hyfl);
    cfg.clients = 12;
    cfg.clusters = 3;
    cfg.sampled = 2;
    cfg.rounds = 2;
    cfg.shard = 6;
    cfg.epochs = 1;
    cfg.arch = crate::config::parse_arch("mlp:784,4,10").map_err(|e| e.to_string())?;
    cfg.data = crate::config::DataSource::Synthetic { train: 80, test: 30 };
    cfg.root_size = 10;
    cfg.fixed_every = 0;
    let go = || -> Result<String> {
        let mut s = Session::new(cfg.plan()?, cfg.corpus()?)?;
        let records = s.run()?;
        Ok(render_csv(&cfg, &records))
    };
    let (a, b) = (go().map_err(|e| e.to_string())?, go().map_err(|e| e.to_string())?);
    if a != b {
        return fail("two identical runs rendered different metrics".into());
    }
    Ok("two 2-round runs render byte-identical metrics".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_whole_suite_passes() {
        let outcomes = run_all(|_| {});
        assert_eq!(outcomes.len(), 10);
        for o in &outcomes {
            assert!(o.ok, "{}: {}", o.name, o.detail);
        }
    }
}
