//! Aggregation schemes over secret-shared model vectors.
//!
//! Four rules, all consuming one share set per source and producing the
//! combined model without opening any input:
//!
//! * [`fed_avg`]: weighted mean, purely local linear algebra, zero traffic.
//! * [`trimmed_mean`]: per-coordinate oblivious sort, drop the top and
//!   bottom `alpha` values, average the rest.
//! * [`trimmed_mean_variant`]: sort only `beta` sampled coordinates while
//!   dragging source tags along, open just the extreme tag rows, then drop
//!   the `2*alpha` sources that surface most often.
//! * [`fl_trust`]: score every update by its clipped cosine against a
//!   reference update and average the magnitude-normalized survivors.

pub mod network;

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fixed::FixedVec;
use crate::rng::{kind, substream};
use crate::sharing::{
    charge_beaver, charge_compare, BackendKind, Boundary, Carrier, CostMeter, RevealSink,
    ShareEngine, ShareSet,
};
use network::{schedule_depth, sort_schedule};

/// Aggregation rule selector, as it appears in configs and metric rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    FedAvg,
    TrimmedMean { alpha: usize },
    TmVariant { alpha: usize, beta: usize },
    FlTrust,
}

impl Aggregator {
    pub fn label(&self) -> &'static str {
        match self {
            Aggregator::FedAvg => "fedAvg",
            Aggregator::TrimmedMean { .. } => "trimmedMean",
            Aggregator::TmVariant { .. } => "tmVariant",
            Aggregator::FlTrust => "flTrust",
        }
    }
}

/// What one aggregation step produced, beyond the combined model itself.
#[derive(Debug)]
pub struct AggOutcome {
    pub aggregated: ShareSet,
    /// Source ids dropped by an outlier rule, ascending. Empty for rules
    /// that keep everything.
    pub excluded: Vec<u64>,
    /// Per-source trust scores in input order. Empty unless the rule
    /// computes them.
    pub scores: Vec<f64>,
}

fn check_uniform(inputs: &[ShareSet]) -> Result<usize> {
    if inputs.is_empty() {
        return Err(Error::NotEnough { requested: 1, available: 0 });
    }
    let len = inputs[0].len();
    for s in inputs {
        if s.len() != len {
            return Err(Error::LengthMismatch { left: s.len(), right: len });
        }
    }
    Ok(len)
}

/// Sample counts turned into convex coefficients. `None` means an
/// unweighted mean.
fn normalized_weights(m: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / m as f64; m]),
        Some(w) => {
            if w.len() != m {
                return Err(Error::LengthMismatch { left: w.len(), right: m });
            }
            if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::BadWeights);
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::BadWeights);
            }
            Ok(w.iter().map(|&x| x / total).collect())
        }
    }
}

fn mean_of(e: &mut dyn ShareEngine, refs: &[&ShareSet], coeffs: &[f64]) -> Result<ShareSet> {
    e.weighted_sum(coeffs, refs)
}

/// Weighted average. Additive shares add locally, so the meter moves by
/// zero bytes and zero rounds.
pub fn fed_avg(
    e: &mut dyn ShareEngine,
    inputs: &[ShareSet],
    weights: Option<&[f64]>,
) -> Result<ShareSet> {
    check_uniform(inputs)?;
    let coeffs = normalized_weights(inputs.len(), weights)?;
    let refs: Vec<&ShareSet> = inputs.iter().collect();
    mean_of(e, &refs, &coeffs)
}

/// Run one oblivious compare-exchange schedule over whole rows. Every
/// coordinate sorts in parallel because the exchange is elementwise.
/// Afterwards row k holds the k-th smallest value of each coordinate.
fn sort_rows(
    e: &mut dyn ShareEngine,
    rows: &mut [ShareSet],
    schedule: &[(usize, usize)],
) -> Result<()> {
    for &(i, j) in schedule {
        let (lo, hi) = e.compare_swap(&rows[i], &rows[j])?;
        e.free(std::mem::replace(&mut rows[i], lo));
        e.free(std::mem::replace(&mut rows[j], hi));
    }
    collapse_sort_rounds(e, schedule, rows.len());
    Ok(())
}

/// Comparators at the same network depth are independent and run in
/// parallel; per-call charging counted each as its own round, so collapse
/// the round counter to depth * rounds-per-comparison.
fn collapse_sort_rounds(e: &mut dyn ShareEngine, schedule: &[(usize, usize)], n: usize) {
    let per = e.cost_model().comparison_rounds;
    let over = (schedule.len() - schedule_depth(schedule, n)) as u64 * per;
    e.meter_mut().rounds -= over;
}

/// Coordinate-wise trimmed mean: sort every coordinate with the oblivious
/// network, discard the top and bottom `alpha` rows, average the middle.
pub fn trimmed_mean(
    e: &mut dyn ShareEngine,
    inputs: &[ShareSet],
    alpha: usize,
) -> Result<ShareSet> {
    check_uniform(inputs)?;
    let m = inputs.len();
    if 2 * alpha >= m {
        return Err(Error::TrimTooWide { trim: 2 * alpha, models: m });
    }
    let mut rows: Vec<ShareSet> = Vec::with_capacity(m);
    for s in inputs {
        rows.push(e.duplicate(s)?);
    }
    sort_rows(e, &mut rows, &sort_schedule(m))?;
    let keep = m - 2 * alpha;
    let refs: Vec<&ShareSet> = rows[alpha..m - alpha].iter().collect();
    let out = mean_of(e, &refs, &vec![1.0 / keep as f64; keep])?;
    for r in rows {
        e.free(r);
    }
    Ok(out)
}

/// Decode a revealed tag row back to source ids. Tags are encoded as the
/// id value itself, which both numeric modes carry exactly.
fn tags_to_ids(c: &Carrier) -> Vec<u64> {
    c.to_f64_vec().iter().map(|v| v.round() as u64).collect()
}

/// The `2*alpha` most frequent ids in the tally; equal counts break toward
/// the lower id so the outcome never depends on map iteration order.
fn top_hitters(tally: &BTreeMap<u64, u64>, take: usize) -> Vec<u64> {
    let mut counted: Vec<(u64, u64)> = tally.iter().map(|(&id, &n)| (id, n)).collect();
    counted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<u64> = counted.into_iter().take(take).map(|(id, _)| id).collect();
    out.sort_unstable();
    out
}

/// Outlier-excluding variant of the trimmed mean. Instead of sorting all
/// gamma coordinates, sort `beta` sampled ones with a source tag carried
/// next to each value, open only the extreme tag rows, and drop the
/// `2*alpha` sources that appear most often among those extremes. The
/// survivors are combined with [`fed_avg`].
///
/// The tag opening is a diagnostics reveal: it discloses which sources were
/// extreme on sampled coordinates, never a model value. Its price lands in
/// bytes and rounds; the comparison counter moves only with the sort, which
/// touches beta coordinates instead of gamma.
#[allow(clippy::too_many_arguments)]
pub fn trimmed_mean_variant(
    e: &mut dyn ShareEngine,
    inputs: &[ShareSet],
    source_ids: &[u64],
    weights: Option<&[f64]>,
    alpha: usize,
    beta: usize,
    seed: u64,
    round: u64,
) -> Result<AggOutcome> {
    let gamma = check_uniform(inputs)?;
    let m = inputs.len();
    if source_ids.len() != m {
        return Err(Error::LengthMismatch { left: source_ids.len(), right: m });
    }
    if 2 * alpha >= m {
        return Err(Error::TrimTooWide { trim: 2 * alpha, models: m });
    }
    if beta == 0 || beta > gamma {
        return Err(Error::BetaOutOfRange { beta, len: gamma });
    }

    let mut rng = substream(seed, kind::TRIM, 0, round);
    let mut picked = rand::seq::index::sample(&mut rng, gamma, beta).into_vec();
    picked.sort_unstable();

    let home = inputs[0].committee().to_string();
    let mut vals: Vec<ShareSet> = Vec::with_capacity(m);
    let mut tags: Vec<ShareSet> = Vec::with_capacity(m);
    for (s, &id) in inputs.iter().zip(source_ids) {
        vals.push(e.gather(s, &picked)?);
        let tag = vec![id as f64; beta];
        tags.push(e.constant(&carrier_for(e.kind(), e.frac_bits(), &tag)?, &home)?);
    }

    let schedule = sort_schedule(m);
    for &(i, j) in &schedule {
        let (lo_v, lo_t, hi_v, hi_t) =
            e.compare_swap_tagged(&vals[i], &tags[i], &vals[j], &tags[j])?;
        e.free(std::mem::replace(&mut vals[i], lo_v));
        e.free(std::mem::replace(&mut tags[i], lo_t));
        e.free(std::mem::replace(&mut vals[j], hi_v));
        e.free(std::mem::replace(&mut tags[j], hi_t));
    }
    collapse_sort_rounds(e, &schedule, m);

    // Extreme rows of the tag matrix: the ids behind each coordinate's
    // bottom-alpha and top-alpha values. The openings are independent, so
    // they count as one round, not 2*alpha.
    let mut tally: BTreeMap<u64, u64> = BTreeMap::new();
    for r in (0..alpha).chain(m - alpha..m) {
        let opened = e.reveal(&tags[r], RevealSink::Diagnostics)?;
        for id in tags_to_ids(&opened) {
            *tally.entry(id).or_insert(0) += 1;
        }
    }
    if alpha > 0 {
        e.meter_mut().rounds -= 2 * alpha as u64 - 1;
    }

    for s in vals.into_iter().chain(tags) {
        e.free(s);
    }

    let excluded = top_hitters(&tally, 2 * alpha);
    debug_assert_eq!(excluded.len(), 2 * alpha);
    let cut: BTreeSet<u64> = excluded.iter().copied().collect();
    let keep: Vec<usize> = (0..m).filter(|&i| !cut.contains(&source_ids[i])).collect();
    let refs: Vec<&ShareSet> = keep.iter().map(|&i| &inputs[i]).collect();
    let kept_weights = weights.map(|w| keep.iter().map(|&i| w[i]).collect::<Vec<_>>());
    let coeffs = normalized_weights(refs.len(), kept_weights.as_deref())?;
    let aggregated = mean_of(e, &refs, &coeffs)?;
    Ok(AggOutcome { aggregated, excluded, scores: Vec::new() })
}

/// Clipped-cosine trust scores against a reference update, computed in
/// plain form: score_i = max(0, cos(root, update_i)).
///
/// A zero-norm update has no direction and earns no trust. A zero-norm
/// root makes every score undefined and is an error.
pub fn trust_scores(root: &[f64], updates: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n0 = l2(root);
    if n0 == 0.0 {
        return Err(Error::ZeroRootUpdate);
    }
    updates
        .iter()
        .map(|g| {
            if g.len() != root.len() {
                return Err(Error::LengthMismatch { left: g.len(), right: root.len() });
            }
            let ni = l2(g);
            if ni == 0.0 {
                return Ok(0.0);
            }
            Ok((dot(root, g) / (n0 * ni)).max(0.0))
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Trust-scored aggregation. Every update is rescaled to the root update's
/// magnitude, then averaged with its clipped-cosine score as weight. If no
/// update earns trust, `previous` is returned unchanged.
///
/// The scoring runs behind the functionality boundary (no reveal), priced
/// as its arithmetic circuit over shares: three length-gamma products per
/// update (dot with the root, own norm, scaled accumulation) plus one for
/// the root norm, and one clip comparison per update. Square roots and the
/// final division are scalar work, too small to meter against the
/// length-gamma terms.
pub fn fl_trust(
    e: &mut dyn ShareEngine,
    inputs: &[ShareSet],
    root: &ShareSet,
    previous: &ShareSet,
    rng: &mut ChaCha8Rng,
) -> Result<(ShareSet, Vec<f64>)> {
    let gamma = check_uniform(inputs)?;
    if root.len() != gamma {
        return Err(Error::LengthMismatch { left: root.len(), right: gamma });
    }
    let m = inputs.len();
    let home = root.committee().to_string();

    let g0 = e.functionality_input(root, Boundary(()))?.to_f64_vec();
    let mut updates = Vec::with_capacity(m);
    for s in inputs {
        updates.push(e.functionality_input(s, Boundary(()))?.to_f64_vec());
    }
    let scores = trust_scores(&g0, &updates)?;

    {
        let c = e.committee(&home)?.clone();
        let model = *e.cost_model();
        let meter = e.meter_mut();
        for _ in 0..3 * m + 1 {
            charge_beaver(meter, &model, &c, gamma);
        }
        charge_compare(meter, &model, &c, m);
    }

    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return Ok((e.duplicate(previous)?, scores));
    }
    let n0 = l2(&g0);
    let mut acc = vec![0.0; gamma];
    for (g, &s) in updates.iter().zip(&scores) {
        if s == 0.0 {
            continue;
        }
        let scale = s * n0 / (l2(g) * total);
        for (a, v) in acc.iter_mut().zip(g) {
            *a += scale * v;
        }
    }
    let out = carrier_for(e.kind(), e.frac_bits(), &acc)?;
    let shared = e.functionality_output(out, &home, rng, Boundary(()))?;
    Ok((shared, scores))
}

/// Encode a plain vector in the numeric mode a backend expects.
pub fn carrier_for(kind: BackendKind, frac_bits: u32, xs: &[f64]) -> Result<Carrier> {
    match kind {
        BackendKind::Float => Ok(Carrier::F64(xs.to_vec())),
        BackendKind::FixedSim | BackendKind::MultiPartyInProcess => {
            Ok(Carrier::Fixed(FixedVec::encode_slice(xs, frac_bits)?))
        }
    }
}

/// Meter totals useful to report per aggregation step.
pub fn meter_delta(before: &CostMeter, after: &CostMeter) -> (u64, u64) {
    (after.total_bytes() - before.total_bytes(), after.comparisons - before.comparisons)
}
