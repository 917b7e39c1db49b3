//! Additive secret sharing with cost accounting.
//!
//! A value is split into uniformly random vectors summing to it mod 2^64.
//! Three interchangeable backends implement the same engine interface:
//!
//! * plaintext float64 (`BackendKind::Float`) — the in-the-clear baseline,
//! * carried-plaintext fixed point (`BackendKind::FixedSim`) — single
//!   process, values kept reconstructed, every operation still charged to
//!   the cost meter,
//! * in-process multi-party (`BackendKind::MultiPartyInProcess`) — real
//!   share vectors held by party threads exchanging messages over
//!   channels.
//!
//! Fixed backends must produce bit-identical revealed results. Secure
//! comparison is cost-modeled, not cryptographically realized: backends
//! compute the ordering on reconstructed values while charging the
//! configured per-comparison cost.

mod carried;
mod multiparty;

pub use carried::CarriedEngine;
pub use multiparty::MpEngine;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fixed::FixedVec;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BackendKind {
    Float,
    FixedSim,
    MultiPartyInProcess,
}

impl BackendKind {
    pub fn label(self) -> &'static str {
        match self {
            BackendKind::Float => "float",
            BackendKind::FixedSim => "fixedSim",
            BackendKind::MultiPartyInProcess => "multiPartyInProcess",
        }
    }
}

/// All parties are semi-honest: they follow the protocol and only try to
/// learn from what they see.
pub const CORRUPTION_MODEL: &str = "semi-honest";

/// A committee of parties jointly holding shares. `compute` parties hold
/// share vectors; the optional helper deals correlated randomness and
/// assists truncation and comparison.
#[derive(Clone, Debug)]
pub struct Committee {
    pub id: String,
    pub compute: usize,
    pub helper: bool,
    /// When the committee is physically colocated with a data owner (a
    /// flat-FL client training its own model), traffic from that owner to
    /// the committee is local and costs nothing.
    pub colocated_with: Option<String>,
}

impl Committee {
    /// Default committee shape: two compute parties plus a helper.
    pub fn standard(id: impl Into<String>) -> Self {
        Self { id: id.into(), compute: 2, helper: true, colocated_with: None }
    }

    /// Single-party committee, e.g. a flat-FL client or single server.
    pub fn solo(id: impl Into<String>, owner: Option<String>) -> Self {
        Self { id: id.into(), compute: 1, helper: false, colocated_with: owner }
    }

    pub fn party_label(&self, idx: usize) -> String {
        format!("{}:{}", self.id, idx)
    }
}

/// Modeled cost parameters. Share elements travel as 8-byte ring words; a
/// secure comparison is charged at a flat byte and round price per element
/// compared (the protocol itself is not realized).
#[derive(Clone, Copy, Debug)]
pub struct CostModel {
    pub bytes_per_element: u64,
    pub comparison_bytes: u64,
    pub comparison_rounds: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { bytes_per_element: 8, comparison_bytes: 64, comparison_rounds: 7 }
    }
}

/// Counters accumulated by every engine operation.
#[derive(Clone, Debug, Default)]
pub struct CostMeter {
    bytes: BTreeMap<(String, String), u64>,
    pub rounds: u64,
    pub comparisons: u64,
    pub beaver_triples: u64,
}

/// Plain totals of a meter at one instant; subtract two to get the cost of
/// a phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostSnapshot {
    pub bytes: u64,
    pub rounds: u64,
    pub comparisons: u64,
    pub beaver_triples: u64,
}

impl CostSnapshot {
    pub fn minus(self, earlier: CostSnapshot) -> CostSnapshot {
        CostSnapshot {
            bytes: self.bytes - earlier.bytes,
            rounds: self.rounds - earlier.rounds,
            comparisons: self.comparisons - earlier.comparisons,
            beaver_triples: self.beaver_triples - earlier.beaver_triples,
        }
    }
}

impl CostMeter {
    pub fn charge_bytes(&mut self, from: &str, to: &str, n: u64) {
        // loopback is free: a solo committee computing on its own data
        // moves nothing over a wire
        if n == 0 || from == to {
            return;
        }
        *self.bytes.entry((from.to_string(), to.to_string())).or_insert(0) += n;
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes.values().sum()
    }

    pub fn bytes_between(&self, from: &str, to: &str) -> u64 {
        self.bytes.get(&(from.to_string(), to.to_string())).copied().unwrap_or(0)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(String, String), &u64)> {
        self.bytes.iter()
    }

    pub fn merge(&mut self, other: &CostMeter) {
        for ((f, t), n) in &other.bytes {
            *self.bytes.entry((f.clone(), t.clone())).or_insert(0) += n;
        }
        self.rounds += other.rounds;
        self.comparisons += other.comparisons;
        self.beaver_triples += other.beaver_triples;
    }

    pub fn snapshot(&self) -> CostSnapshot {
        CostSnapshot {
            bytes: self.total_bytes(),
            rounds: self.rounds,
            comparisons: self.comparisons,
            beaver_triples: self.beaver_triples,
        }
    }
}

/// Where a revealed value is allowed to go. Engines log every reveal so a
/// run can assert the model never left the share domain except toward the
/// evaluation sink or an inference client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RevealSink {
    Metrics,
    InferenceClient(u64),
    Diagnostics,
}

impl RevealSink {
    pub fn label(&self) -> String {
        match self {
            RevealSink::Metrics => "metrics".into(),
            RevealSink::InferenceClient(c) => format!("client:{c}"),
            RevealSink::Diagnostics => "diagnostics".into(),
        }
    }
}

/// Sealed capability token for the functionality boundary. Only this crate
/// can construct it, so external code cannot pull reconstructed values out
/// of an engine except through [`ShareEngine::reveal`].
pub struct Boundary(pub(crate) ());

/// Reconstructed value in the engine's numeric mode.
#[derive(Clone, Debug, PartialEq)]
pub enum Carrier {
    F64(Vec<f64>),
    Fixed(FixedVec),
}

impl Carrier {
    pub fn len(&self) -> usize {
        match self {
            Carrier::F64(v) => v.len(),
            Carrier::Fixed(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            Carrier::F64(v) => v.clone(),
            Carrier::Fixed(v) => v.decode_vec(),
        }
    }

    pub fn as_fixed(&self) -> Option<&FixedVec> {
        match self {
            Carrier::F64(_) => None,
            Carrier::Fixed(v) => Some(v),
        }
    }
}

/// Handle to one secret-shared vector. The payload is backend-private;
/// holders can only learn the committee, length and precision.
#[derive(Debug)]
pub struct ShareSet {
    pub(crate) committee: String,
    pub(crate) len: usize,
    pub(crate) frac_bits: u32,
    pub(crate) payload: Payload,
}

#[derive(Debug)]
pub(crate) enum Payload {
    Carried(Carrier),
    Slot(u64),
}

impl ShareSet {
    pub fn committee(&self) -> &str {
        &self.committee
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }
}

/// Engine interface common to all backends. Operations on one ShareSet are
/// not concurrently invocable; callers serialize access (the orchestrator
/// wraps the engine in a mutex).
pub trait ShareEngine: Send {
    fn kind(&self) -> BackendKind;
    fn cost_model(&self) -> &CostModel;
    fn frac_bits(&self) -> u32;
    fn meter(&self) -> &CostMeter;
    fn meter_mut(&mut self) -> &mut CostMeter;
    fn reveal_log(&self) -> &[RevealSink];

    fn register(&mut self, committee: Committee) -> Result<()>;
    fn committee(&self, id: &str) -> Result<&Committee>;

    /// Split `value` into fresh shares held by `committee`. Charges
    /// len * bytes_per_element toward every receiving party, one round.
    fn share(
        &mut self,
        value: &Carrier,
        from: &str,
        committee: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<ShareSet>;

    /// Reconstruct toward `sink`. Charges (compute - 1) * len *
    /// bytes_per_element, one round, and appends to the reveal log.
    fn reveal(&mut self, s: &ShareSet, sink: RevealSink) -> Result<Carrier>;

    /// Move shares to another committee with fresh randomness. Consumes the
    /// input: the old shares are invalidated. Charges len *
    /// bytes_per_element per receiving party, one round.
    fn reshare(&mut self, s: ShareSet, dst: &str, rng: &mut ChaCha8Rng) -> Result<ShareSet>;

    /// Local copy; no communication.
    fn duplicate(&mut self, s: &ShareSet) -> Result<ShareSet>;

    /// Release backend storage for a ShareSet that will not be used again.
    fn free(&mut self, s: ShareSet);

    fn add(&mut self, a: &ShareSet, b: &ShareSet) -> Result<ShareSet>;
    fn sub(&mut self, a: &ShareSet, b: &ShareSet) -> Result<ShareSet>;

    /// Multiply by a public scalar. Local (zero bytes, zero rounds); the
    /// fixed backends truncate the product.
    fn scalar_mul(&mut self, c: f64, a: &ShareSet) -> Result<ShareSet>;

    /// sum_k coeffs[k] * inputs[k], composed from scalar_mul and add, so it
    /// stays a purely local linear computation.
    fn weighted_sum(&mut self, coeffs: &[f64], inputs: &[&ShareSet]) -> Result<ShareSet>;

    /// Extract the elements at public `indices` into a new set of shares.
    /// The index list is public, so every party selects locally: no
    /// communication, no rounds.
    fn gather(&mut self, s: &ShareSet, indices: &[usize]) -> Result<ShareSet>;

    /// Trivial sharing of a public constant (one party holds the value,
    /// the rest hold zero). Local setup, zero cost.
    fn constant(&mut self, value: &Carrier, committee: &str) -> Result<ShareSet>;

    /// Elementwise product via Beaver triples: one triple per element, two
    /// openings (2 * len * bytes_per_element per party), one round.
    fn mul_elementwise(
        &mut self,
        a: &ShareSet,
        b: &ShareSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<ShareSet>;

    /// Oblivious elementwise compare-exchange: returns (min, max) per
    /// element. Charges len comparisons at the configured model.
    fn compare_swap(&mut self, a: &ShareSet, b: &ShareSet) -> Result<(ShareSet, ShareSet)>;

    /// Compare-exchange keyed on values that drags a tag vector along with
    /// each value, for sorts that only need the identity of the extremes.
    /// Same comparison cost as `compare_swap`.
    #[allow(clippy::type_complexity)]
    fn compare_swap_tagged(
        &mut self,
        a_val: &ShareSet,
        a_tag: &ShareSet,
        b_val: &ShareSet,
        b_tag: &ShareSet,
    ) -> Result<(ShareSet, ShareSet, ShareSet, ShareSet)>;

    /// Functionality boundary: hand the reconstructed value to a secure
    /// functionality body (training, inference forward pass) evaluated
    /// under simulation semantics. Not a reveal; unreachable outside this
    /// crate (see [`Boundary`]).
    fn functionality_input(&mut self, s: &ShareSet, token: Boundary) -> Result<Carrier>;

    /// Re-enter the share domain with a functionality result.
    fn functionality_output(
        &mut self,
        value: Carrier,
        committee: &str,
        rng: &mut ChaCha8Rng,
        token: Boundary,
    ) -> Result<ShareSet>;

    /// One party's share vector. Diagnostics only: a single additive share
    /// is uniformly random and carries no information about the value.
    fn inspect_share(&mut self, s: &ShareSet, party: usize) -> Result<Vec<u64>>;
}

/// Construct the engine for a backend choice.
pub fn engine_for(
    kind: BackendKind,
    frac_bits: u32,
    cost: CostModel,
    master_seed: u64,
) -> Box<dyn ShareEngine> {
    match kind {
        BackendKind::Float | BackendKind::FixedSim => {
            Box::new(CarriedEngine::new(kind, frac_bits, cost))
        }
        BackendKind::MultiPartyInProcess => Box::new(MpEngine::new(frac_bits, cost, master_seed)),
    }
}

// Shared charging rules so every backend prices an operation identically.

pub(crate) fn charge_share(meter: &mut CostMeter, model: &CostModel, from: &str, c: &Committee, len: usize) {
    if c.colocated_with.as_deref() == Some(from) {
        return;
    }
    for i in 0..c.compute {
        meter.charge_bytes(from, &c.party_label(i), len as u64 * model.bytes_per_element);
    }
    meter.rounds += 1;
}

pub(crate) fn charge_reveal(meter: &mut CostMeter, model: &CostModel, c: &Committee, len: usize) {
    for i in 1..c.compute {
        meter.charge_bytes(&c.party_label(i), &c.party_label(0), len as u64 * model.bytes_per_element);
    }
    meter.rounds += 1;
}

pub(crate) fn charge_reshare(
    meter: &mut CostMeter,
    model: &CostModel,
    src: &Committee,
    dst: &Committee,
    len: usize,
) {
    for i in 0..dst.compute {
        meter.charge_bytes(
            &src.party_label(i % src.compute),
            &dst.party_label(i),
            len as u64 * model.bytes_per_element,
        );
    }
    meter.rounds += 1;
}

pub(crate) fn charge_beaver(meter: &mut CostMeter, model: &CostModel, c: &Committee, len: usize) {
    for i in 0..c.compute {
        let peer = (i + 1) % c.compute.max(1);
        meter.charge_bytes(
            &c.party_label(i),
            &c.party_label(peer),
            2 * len as u64 * model.bytes_per_element,
        );
    }
    meter.rounds += 1;
    meter.beaver_triples += len as u64;
}

pub(crate) fn charge_compare(meter: &mut CostMeter, model: &CostModel, c: &Committee, len: usize) {
    let peer = if c.compute > 1 { c.party_label(1) } else { c.party_label(0) };
    meter.charge_bytes(&c.party_label(0), &peer, len as u64 * model.comparison_bytes);
    meter.rounds += model.comparison_rounds;
    meter.comparisons += len as u64;
}

pub(crate) fn check_pair(a: &ShareSet, b: &ShareSet) -> Result<()> {
    if a.committee != b.committee {
        return Err(Error::CommitteeMismatch { left: a.committee.clone(), right: b.committee.clone() });
    }
    if a.len != b.len {
        return Err(Error::LengthMismatch { left: a.len, right: b.len });
    }
    if a.frac_bits != b.frac_bits {
        return Err(Error::FracBitsMismatch { left: a.frac_bits, right: b.frac_bits });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::DEFAULT_FRAC_BITS;
    use crate::rng::{kind, substream};
    use rand::{Rng, RngCore};

    const F: u32 = DEFAULT_FRAC_BITS;

    fn fixed_engines(seed: u64) -> Vec<Box<dyn ShareEngine>> {
        vec![
            engine_for(BackendKind::FixedSim, F, CostModel::default(), seed),
            engine_for(BackendKind::MultiPartyInProcess, F, CostModel::default(), seed),
        ]
    }

    fn setup(e: &mut dyn ShareEngine) {
        e.register(Committee::standard("g")).unwrap();
        e.register(Committee::standard("c1")).unwrap();
    }

    fn enc(xs: &[f64]) -> Carrier {
        Carrier::Fixed(FixedVec::encode_slice(xs, F).unwrap())
    }

    fn raws(c: &Carrier) -> Vec<u64> {
        c.as_fixed().unwrap().raw().to_vec()
    }

    #[test]
    fn share_reveal_roundtrip_is_exact() {
        for mut e in fixed_engines(1) {
            setup(e.as_mut());
            let mut rng = substream(1, "test", 0, 0);
            let xs: Vec<f64> = (0..100).map(|i| (i as f64 - 50.0) * 0.37).collect();
            let v = enc(&xs);
            let s = e.share(&v, "client:0", "g", &mut rng).unwrap();
            let back = e.reveal(&s, RevealSink::Diagnostics).unwrap();
            assert_eq!(raws(&v), raws(&back), "backend {:?}", e.kind());
        }
    }

    #[test]
    fn zero_vector_double_add_stays_zero() {
        for mut e in fixed_engines(2) {
            setup(e.as_mut());
            let mut rng = substream(2, "test", 0, 0);
            let s = e.share(&enc(&[0.0; 10]), "client:0", "g", &mut rng).unwrap();
            let sum = e.add(&s, &s).unwrap();
            let back = e.reveal(&sum, RevealSink::Diagnostics).unwrap();
            assert_eq!(raws(&back), vec![0u64; 10]);
        }
    }

    #[test]
    fn multiparty_shares_replay_from_seed() {
        let mut e = engine_for(BackendKind::MultiPartyInProcess, F, CostModel::default(), 0);
        e.register(Committee::standard("g")).unwrap();
        let value = FixedVec::encode_slice(&[1.5, -2.25, 0.625], F).unwrap();
        let mut rng = substream(42, kind::SHARE, 0, 0);
        let s = e.share(&Carrier::Fixed(value.clone()), "client:0", "g", &mut rng).unwrap();

        // Party 0 drew first: three uniform words off the same stream.
        let mut replay = substream(42, kind::SHARE, 0, 0);
        let expect0: Vec<u64> = (0..3).map(|_| replay.next_u64()).collect();
        assert_eq!(e.inspect_share(&s, 0).unwrap(), expect0);
        let expect1: Vec<u64> = value
            .raw()
            .iter()
            .zip(&expect0)
            .map(|(&v, &r)| v.wrapping_sub(r))
            .collect();
        assert_eq!(e.inspect_share(&s, 1).unwrap(), expect1);
    }

    #[test]
    fn reshare_preserves_value_and_refreshes_shares() {
        let mut e = engine_for(BackendKind::MultiPartyInProcess, F, CostModel::default(), 3);
        e.register(Committee::standard("g")).unwrap();
        e.register(Committee::standard("c1")).unwrap();
        let mut rng = substream(3, "test", 0, 0);
        let xs: Vec<f64> = (0..32).map(|i| i as f64 * 0.125 - 2.0).collect();
        let s = e.share(&enc(&xs), "client:0", "g", &mut rng).unwrap();
        let before0 = e.inspect_share(&s, 0).unwrap();
        let moved = e.reshare(s, "c1", &mut rng).unwrap();
        assert_eq!(moved.committee(), "c1");
        let after0 = e.inspect_share(&moved, 0).unwrap();
        assert_ne!(before0, after0, "reshare must re-randomize");
        let back = e.reveal(&moved, RevealSink::Diagnostics).unwrap();
        assert_eq!(raws(&back), raws(&enc(&xs)));
    }

    #[test]
    fn reshare_across_committee_sizes() {
        let mut e = engine_for(BackendKind::MultiPartyInProcess, F, CostModel::default(), 4);
        e.register(Committee::solo("solo", None)).unwrap();
        e.register(Committee::standard("g")).unwrap();
        let mut rng = substream(4, "test", 0, 0);
        let xs = [3.75, -1.5];
        let s = e.share(&enc(&xs), "client:0", "solo", &mut rng).unwrap();
        let up = e.reshare(s, "g", &mut rng).unwrap();
        let back = e.reveal(&up, RevealSink::Diagnostics).unwrap();
        assert_eq!(raws(&back), raws(&enc(&xs)));
        let down = e.reshare(up, "solo", &mut rng).unwrap();
        let back2 = e.reveal(&down, RevealSink::Diagnostics).unwrap();
        assert_eq!(raws(&back2), raws(&enc(&xs)));
    }

    #[test]
    fn linear_chain_matches_plaintext_pipeline() {
        // Ten chained linear ops, then reveal: must equal running the same
        // fixed-point ops on the plaintext.
        let xs: Vec<f64> = (0..20).map(|i| (i as f64) * 0.11 - 1.0).collect();
        let ys: Vec<f64> = (0..20).map(|i| 0.5 - (i as f64) * 0.07).collect();
        let px = FixedVec::encode_slice(&xs, F).unwrap();
        let py = FixedVec::encode_slice(&ys, F).unwrap();
        let c_half = crate::fixed::FixedScalar::encode(0.5, F).unwrap();
        let mut plain = px.clone();
        for _ in 0..3 {
            plain = plain.add(&py).unwrap();
            plain = plain.scale(c_half).unwrap();
            plain = plain.sub(&px).unwrap();
        }
        plain = plain.add(&plain.clone()).unwrap();

        for mut e in fixed_engines(5) {
            setup(e.as_mut());
            let mut rng = substream(5, "test", 0, 0);
            let sx = e.share(&Carrier::Fixed(px.clone()), "client:0", "g", &mut rng).unwrap();
            let sy = e.share(&Carrier::Fixed(py.clone()), "client:0", "g", &mut rng).unwrap();
            let mut acc = e.duplicate(&sx).unwrap();
            for _ in 0..3 {
                acc = e.add(&acc, &sy).unwrap();
                acc = e.scalar_mul(0.5, &acc).unwrap();
                acc = e.sub(&acc, &sx).unwrap();
            }
            acc = e.add(&acc, &acc).unwrap();
            let got = e.reveal(&acc, RevealSink::Diagnostics).unwrap();
            assert_eq!(raws(&got), plain.raw(), "backend {:?}", e.kind());
        }
    }

    #[test]
    fn linear_ops_cost_nothing() {
        for mut e in fixed_engines(6) {
            setup(e.as_mut());
            let mut rng = substream(6, "test", 0, 0);
            let s1 = e.share(&enc(&[1.0; 50]), "client:0", "g", &mut rng).unwrap();
            let s2 = e.share(&enc(&[2.0; 50]), "client:1", "g", &mut rng).unwrap();
            let snap = e.meter().snapshot();
            let a = e.add(&s1, &s2).unwrap();
            let b = e.scalar_mul(0.25, &a).unwrap();
            let _ = e.weighted_sum(&[0.5, 0.5], &[&s1, &s2]).unwrap();
            let _ = e.sub(&b, &s1).unwrap();
            let delta = e.meter().snapshot().minus(snap);
            assert_eq!(delta.bytes, 0, "backend {:?}", e.kind());
            assert_eq!(delta.rounds, 0);
            assert_eq!(delta.comparisons, 0);
            assert_eq!(delta.beaver_triples, 0);
        }
    }

    #[test]
    fn beaver_product_matches_plaintext_truncating_multiply() {
        let mut rng_data = substream(7, "test", 1, 0);
        let xs: Vec<f64> = (0..100).map(|_| rng_data.gen_range(-3.0..3.0)).collect();
        let ys: Vec<f64> = (0..100).map(|_| rng_data.gen_range(-3.0..3.0)).collect();
        let px = FixedVec::encode_slice(&xs, F).unwrap();
        let py = FixedVec::encode_slice(&ys, F).unwrap();
        let mut expect = FixedVec::zeros(100, F);
        for i in 0..100 {
            expect.set(i, px.get(i).mul_truncate(py.get(i)));
        }
        for mut e in fixed_engines(7) {
            setup(e.as_mut());
            let mut rng = substream(7, "test", 0, 0);
            let sx = e.share(&Carrier::Fixed(px.clone()), "client:0", "g", &mut rng).unwrap();
            let sy = e.share(&Carrier::Fixed(py.clone()), "client:0", "g", &mut rng).unwrap();
            let snap = e.meter().snapshot();
            let prod = e.mul_elementwise(&sx, &sy, &mut rng).unwrap();
            let delta = e.meter().snapshot().minus(snap);
            assert_eq!(delta.beaver_triples, 100);
            assert_eq!(delta.bytes, 2 * 2 * 100 * 8, "two openings per party");
            assert_eq!(delta.rounds, 1);
            let got = e.reveal(&prod, RevealSink::Diagnostics).unwrap();
            assert_eq!(raws(&got), expect.raw(), "backend {:?}", e.kind());
        }
    }

    #[test]
    fn compare_swap_orders_each_element() {
        for mut e in fixed_engines(8) {
            setup(e.as_mut());
            let mut rng = substream(8, "test", 0, 0);
            let a = e.share(&enc(&[3.0, -1.0, 2.5]), "client:0", "g", &mut rng).unwrap();
            let b = e.share(&enc(&[1.0, -2.0, 2.5]), "client:0", "g", &mut rng).unwrap();
            let snap = e.meter().snapshot();
            let (lo, hi) = e.compare_swap(&a, &b).unwrap();
            let delta = e.meter().snapshot().minus(snap);
            assert_eq!(delta.comparisons, 3);
            assert_eq!(delta.bytes, 3 * 64);
            assert_eq!(delta.rounds, 7);
            let lo = e.reveal(&lo, RevealSink::Diagnostics).unwrap();
            let hi = e.reveal(&hi, RevealSink::Diagnostics).unwrap();
            assert_eq!(raws(&lo), raws(&enc(&[1.0, -2.0, 2.5])));
            assert_eq!(raws(&hi), raws(&enc(&[3.0, -1.0, 2.5])));
        }
    }

    #[test]
    fn share_and_reveal_charge_the_documented_bytes() {
        for mut e in fixed_engines(9) {
            setup(e.as_mut());
            let mut rng = substream(9, "test", 0, 0);
            let snap = e.meter().snapshot();
            let s = e.share(&enc(&[1.0; 100]), "client:0", "g", &mut rng).unwrap();
            let after_share = e.meter().snapshot().minus(snap);
            assert_eq!(after_share.bytes, 2 * 100 * 8, "one share vector per compute party");
            assert_eq!(after_share.rounds, 1);
            let snap2 = e.meter().snapshot();
            let _ = e.reveal(&s, RevealSink::Diagnostics).unwrap();
            let after_reveal = e.meter().snapshot().minus(snap2);
            assert_eq!(after_reveal.bytes, 100 * 8, "compute-1 parties forward shares");
            assert_eq!(after_reveal.rounds, 1);
        }
    }

    #[test]
    fn colocated_owner_shares_for_free() {
        let mut e = engine_for(BackendKind::FixedSim, F, CostModel::default(), 10);
        e.register(Committee::solo("client-7", Some("client:7".into()))).unwrap();
        let mut rng = substream(10, "test", 0, 0);
        let _ = e.share(&enc(&[1.0; 10]), "client:7", "client-7", &mut rng).unwrap();
        assert_eq!(e.meter().total_bytes(), 0);
    }

    #[test]
    fn single_party_share_bytes_look_uniform() {
        // Chi-square over the low-order byte of party-0 share words; the
        // shared value is a constant, so structure would mean leakage.
        let mut e = engine_for(BackendKind::MultiPartyInProcess, F, CostModel::default(), 11);
        e.register(Committee::standard("g")).unwrap();
        let mut rng = substream(11, kind::SHARE, 0, 0);
        let v = enc(&[1.0; 10]);
        let mut counts = [0u64; 256];
        for _ in 0..1000 {
            let s = e.share(&v, "client:0", "g", &mut rng).unwrap();
            for w in e.inspect_share(&s, 0).unwrap() {
                counts[(w & 0xff) as usize] += 1;
            }
            e.free(s);
        }
        let n: u64 = counts.iter().sum();
        let expected = n as f64 / 256.0;
        let stat: f64 = counts.iter().map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        }).sum();
        // 0.99 quantile of chi-square with 255 degrees of freedom.
        assert!(stat < 310.457, "chi-square statistic {stat} too large");
    }

    #[test]
    fn reveal_log_records_every_sink() {
        let mut e = engine_for(BackendKind::FixedSim, F, CostModel::default(), 12);
        e.register(Committee::standard("g")).unwrap();
        let mut rng = substream(12, "test", 0, 0);
        let s = e.share(&enc(&[1.0]), "client:0", "g", &mut rng).unwrap();
        let _ = e.reveal(&s, RevealSink::Metrics).unwrap();
        let _ = e.reveal(&s, RevealSink::InferenceClient(4)).unwrap();
        assert_eq!(
            e.reveal_log(),
            &[RevealSink::Metrics, RevealSink::InferenceClient(4)]
        );
    }

    #[test]
    fn fixed_backends_reveal_bit_identical_results() {
        let mut rng_data = substream(13, "test", 1, 0);
        let xs: Vec<f64> = (0..64).map(|_| rng_data.gen_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = (0..64).map(|_| rng_data.gen_range(-2.0..2.0)).collect();
        let mut outputs: Vec<Vec<u64>> = Vec::new();
        for mut e in fixed_engines(13) {
            setup(e.as_mut());
            let mut rng = substream(13, "test", 0, 0);
            let sx = e.share(&enc(&xs), "client:0", "g", &mut rng).unwrap();
            let sy = e.share(&enc(&ys), "client:0", "g", &mut rng).unwrap();
            let prod = e.mul_elementwise(&sx, &sy, &mut rng).unwrap();
            let scaled = e.scalar_mul(0.3, &prod).unwrap();
            let summed = e.weighted_sum(&[0.7, 0.3], &[&scaled, &sx]).unwrap();
            let (lo, _hi) = e.compare_swap(&summed, &sy).unwrap();
            let moved = e.reshare(lo, "c1", &mut rng).unwrap();
            let out = e.reveal(&moved, RevealSink::Diagnostics).unwrap();
            outputs.push(raws(&out));
        }
        assert_eq!(outputs[0], outputs[1], "carried and multi-party disagree");
    }

    #[test]
    fn gather_and_constant_are_local_and_exact() {
        for mut e in fixed_engines(21) {
            setup(e.as_mut());
            let mut rng = substream(21, "test", 0, 0);
            let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 3.0).collect();
            let s = e.share(&enc(&xs), "client:0", "g", &mut rng).unwrap();
            let before = e.meter().snapshot();
            let g = e.gather(&s, &[11, 0, 4, 4]).unwrap();
            let k = e.constant(&enc(&[7.25, -1.0]), "g").unwrap();
            assert_eq!(
                e.meter().snapshot(),
                before,
                "public-index ops must cost nothing"
            );
            let gv = e.reveal(&g, RevealSink::Diagnostics).unwrap();
            assert_eq!(raws(&gv), raws(&enc(&[2.5, -3.0, -1.0, -1.0])));
            let kv = e.reveal(&k, RevealSink::Diagnostics).unwrap();
            assert_eq!(raws(&kv), raws(&enc(&[7.25, -1.0])));
            assert!(e.gather(&s, &[12]).is_err(), "out of range index");
        }
    }

    #[test]
    fn float_backend_runs_the_same_interface() {
        let mut e = engine_for(BackendKind::Float, F, CostModel::default(), 14);
        e.register(Committee::solo("srv", None)).unwrap();
        let mut rng = substream(14, "test", 0, 0);
        let s = e.share(&Carrier::F64(vec![1.0, 2.0]), "client:0", "srv", &mut rng).unwrap();
        let d = e.weighted_sum(&[0.5], &[&s]).unwrap();
        let out = e.reveal(&d, RevealSink::Diagnostics).unwrap();
        assert_eq!(out.to_f64_vec(), vec![0.5, 1.0]);
        assert!(matches!(
            e.share(&enc(&[1.0]), "client:0", "srv", &mut rng),
            Err(Error::NumericMode { .. })
        ));
    }
}
