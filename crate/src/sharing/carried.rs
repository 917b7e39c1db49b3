//! Single-process backend carrying reconstructed values.
//!
//! Serves both the plaintext float baseline and the fixed-point simulation
//! mode. No share vectors exist; every operation computes directly on the
//! carried value and charges the meter exactly what the multi-party
//! backend would.

use rand_chacha::ChaCha8Rng;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fixed::{FixedScalar, FixedVec};

use super::{
    charge_beaver, charge_compare, charge_reshare, charge_reveal, charge_share, check_pair,
    BackendKind, Boundary, Carrier, Committee, CostMeter, CostModel, Payload, RevealSink,
    ShareEngine, ShareSet,
};

pub struct CarriedEngine {
    kind: BackendKind,
    frac_bits: u32,
    cost: CostModel,
    meter: CostMeter,
    committees: BTreeMap<String, Committee>,
    reveals: Vec<RevealSink>,
}

impl CarriedEngine {
    pub fn new(kind: BackendKind, frac_bits: u32, cost: CostModel) -> Self {
        assert!(
            kind != BackendKind::MultiPartyInProcess,
            "multi-party backend has its own engine"
        );
        Self {
            kind,
            frac_bits,
            cost,
            meter: CostMeter::default(),
            committees: BTreeMap::new(),
            reveals: Vec::new(),
        }
    }

    fn carried<'a>(&self, s: &'a ShareSet) -> &'a Carrier {
        match &s.payload {
            Payload::Carried(c) => c,
            Payload::Slot(_) => unreachable!("slot payload in carried engine"),
        }
    }

    fn check_mode(&self, value: &Carrier) -> Result<()> {
        match (self.kind, value) {
            (BackendKind::Float, Carrier::F64(_)) => Ok(()),
            (BackendKind::FixedSim, Carrier::Fixed(v)) => {
                if v.frac_bits() != self.frac_bits {
                    return Err(Error::FracBitsMismatch {
                        left: self.frac_bits,
                        right: v.frac_bits(),
                    });
                }
                Ok(())
            }
            _ => Err(Error::NumericMode { expected: self.kind.label() }),
        }
    }

    fn wrap(&self, committee: &str, value: Carrier) -> ShareSet {
        ShareSet {
            committee: committee.to_string(),
            len: value.len(),
            frac_bits: self.frac_bits,
            payload: Payload::Carried(value),
        }
    }

    fn zip_map(
        &self,
        a: &ShareSet,
        b: &ShareSet,
        f_float: impl Fn(f64, f64) -> f64,
        f_fixed: impl Fn(FixedScalar, FixedScalar) -> FixedScalar,
    ) -> Result<ShareSet> {
        check_pair(a, b)?;
        let value = match (self.carried(a), self.carried(b)) {
            (Carrier::F64(x), Carrier::F64(y)) => {
                Carrier::F64(x.iter().zip(y).map(|(&p, &q)| f_float(p, q)).collect())
            }
            (Carrier::Fixed(x), Carrier::Fixed(y)) => {
                let mut out = FixedVec::zeros(x.len(), x.frac_bits());
                for i in 0..x.len() {
                    out.set(i, f_fixed(x.get(i), y.get(i)));
                }
                Carrier::Fixed(out)
            }
            _ => unreachable!("mixed carriers inside one engine"),
        };
        Ok(self.wrap(&a.committee, value))
    }
}

impl ShareEngine for CarriedEngine {
    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    fn meter(&self) -> &CostMeter {
        &self.meter
    }

    fn meter_mut(&mut self) -> &mut CostMeter {
        &mut self.meter
    }

    fn reveal_log(&self) -> &[RevealSink] {
        &self.reveals
    }

    fn register(&mut self, committee: Committee) -> Result<()> {
        self.committees.insert(committee.id.clone(), committee);
        Ok(())
    }

    fn committee(&self, id: &str) -> Result<&Committee> {
        self.committees.get(id).ok_or_else(|| Error::UnknownCommittee(id.to_string()))
    }

    fn share(
        &mut self,
        value: &Carrier,
        from: &str,
        committee: &str,
        _rng: &mut ChaCha8Rng,
    ) -> Result<ShareSet> {
        self.check_mode(value)?;
        let c = self.committee(committee)?.clone();
        charge_share(&mut self.meter, &self.cost, from, &c, value.len());
        Ok(self.wrap(committee, value.clone()))
    }

    fn reveal(&mut self, s: &ShareSet, sink: RevealSink) -> Result<Carrier> {
        let c = self.committee(&s.committee)?.clone();
        charge_reveal(&mut self.meter, &self.cost, &c, s.len);
        self.reveals.push(sink);
        Ok(self.carried(s).clone())
    }

    fn reshare(&mut self, s: ShareSet, dst: &str, _rng: &mut ChaCha8Rng) -> Result<ShareSet> {
        let src = self.committee(&s.committee)?.clone();
        let dst_c = self.committee(dst)?.clone();
        charge_reshare(&mut self.meter, &self.cost, &src, &dst_c, s.len);
        let value = match s.payload {
            Payload::Carried(c) => c,
            Payload::Slot(_) => unreachable!(),
        };
        Ok(self.wrap(dst, value))
    }

    fn duplicate(&mut self, s: &ShareSet) -> Result<ShareSet> {
        Ok(self.wrap(&s.committee, self.carried(s).clone()))
    }

    fn free(&mut self, _s: ShareSet) {}

    fn add(&mut self, a: &ShareSet, b: &ShareSet) -> Result<ShareSet> {
        self.zip_map(a, b, |x, y| x + y, |x, y| x.add_wrap(y))
    }

    fn sub(&mut self, a: &ShareSet, b: &ShareSet) -> Result<ShareSet> {
        self.zip_map(a, b, |x, y| x - y, |x, y| x.sub_wrap(y))
    }

    fn scalar_mul(&mut self, c: f64, a: &ShareSet) -> Result<ShareSet> {
        let value = match self.carried(a) {
            Carrier::F64(x) => Carrier::F64(x.iter().map(|&p| p * c).collect()),
            Carrier::Fixed(x) => {
                let enc = FixedScalar::encode(c, self.frac_bits)?;
                Carrier::Fixed(x.scale(enc)?)
            }
        };
        Ok(self.wrap(&a.committee, value))
    }

    fn weighted_sum(&mut self, coeffs: &[f64], inputs: &[&ShareSet]) -> Result<ShareSet> {
        if coeffs.len() != inputs.len() {
            return Err(Error::LengthMismatch { left: coeffs.len(), right: inputs.len() });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut acc = self.scalar_mul(coeffs[0], inputs[0])?;
        for (&c, s) in coeffs[1..].iter().zip(&inputs[1..]) {
            let term = self.scalar_mul(c, s)?;
            acc = self.add(&acc, &term)?;
        }
        Ok(acc)
    }

    fn gather(&mut self, s: &ShareSet, indices: &[usize]) -> Result<ShareSet> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= s.len) {
            return Err(Error::LengthMismatch { left: bad, right: s.len });
        }
        let value = match self.carried(s) {
            Carrier::F64(x) => Carrier::F64(indices.iter().map(|&i| x[i]).collect()),
            Carrier::Fixed(x) => {
                let mut out = FixedVec::zeros(indices.len(), x.frac_bits());
                for (o, &i) in indices.iter().enumerate() {
                    out.set(o, x.get(i));
                }
                Carrier::Fixed(out)
            }
        };
        Ok(self.wrap(&s.committee, value))
    }

    fn constant(&mut self, value: &Carrier, committee: &str) -> Result<ShareSet> {
        self.check_mode(value)?;
        self.committee(committee)?;
        Ok(self.wrap(committee, value.clone()))
    }

    fn mul_elementwise(
        &mut self,
        a: &ShareSet,
        b: &ShareSet,
        _rng: &mut ChaCha8Rng,
    ) -> Result<ShareSet> {
        let c = self.committee(&a.committee)?.clone();
        let out = self.zip_map(a, b, |x, y| x * y, |x, y| x.mul_truncate(y))?;
        charge_beaver(&mut self.meter, &self.cost, &c, a.len);
        Ok(out)
    }

    fn compare_swap(&mut self, a: &ShareSet, b: &ShareSet) -> Result<(ShareSet, ShareSet)> {
        check_pair(a, b)?;
        let c = self.committee(&a.committee)?.clone();
        let (lo, hi) = match (self.carried(a), self.carried(b)) {
            (Carrier::F64(x), Carrier::F64(y)) => {
                let mut lo = Vec::with_capacity(x.len());
                let mut hi = Vec::with_capacity(x.len());
                for (&p, &q) in x.iter().zip(y) {
                    if p <= q {
                        lo.push(p);
                        hi.push(q);
                    } else {
                        lo.push(q);
                        hi.push(p);
                    }
                }
                (Carrier::F64(lo), Carrier::F64(hi))
            }
            (Carrier::Fixed(x), Carrier::Fixed(y)) => {
                let mut lo = FixedVec::zeros(x.len(), x.frac_bits());
                let mut hi = FixedVec::zeros(x.len(), x.frac_bits());
                for i in 0..x.len() {
                    let (p, q) = (x.get(i), y.get(i));
                    if (p.raw() as i64) <= (q.raw() as i64) {
                        lo.set(i, p);
                        hi.set(i, q);
                    } else {
                        lo.set(i, q);
                        hi.set(i, p);
                    }
                }
                (Carrier::Fixed(lo), Carrier::Fixed(hi))
            }
            _ => unreachable!(),
        };
        charge_compare(&mut self.meter, &self.cost, &c, a.len);
        Ok((self.wrap(&a.committee, lo), self.wrap(&a.committee, hi)))
    }

    fn compare_swap_tagged(
        &mut self,
        a_val: &ShareSet,
        a_tag: &ShareSet,
        b_val: &ShareSet,
        b_tag: &ShareSet,
    ) -> Result<(ShareSet, ShareSet, ShareSet, ShareSet)> {
        check_pair(a_val, b_val)?;
        check_pair(a_tag, b_tag)?;
        if a_val.len != a_tag.len {
            return Err(Error::LengthMismatch { left: a_val.len, right: a_tag.len });
        }
        let c = self.committee(&a_val.committee)?.clone();
        let swap_mask: Vec<bool> = match (self.carried(a_val), self.carried(b_val)) {
            (Carrier::F64(x), Carrier::F64(y)) => {
                x.iter().zip(y).map(|(&p, &q)| p > q).collect()
            }
            (Carrier::Fixed(x), Carrier::Fixed(y)) => (0..x.len())
                .map(|i| (x.get(i).raw() as i64) > (y.get(i).raw() as i64))
                .collect(),
            _ => unreachable!(),
        };
        let pick = |taken: &Carrier, other: &Carrier, take_other: &dyn Fn(usize) -> bool| match (taken, other) {
            (Carrier::F64(x), Carrier::F64(y)) => Carrier::F64(
                (0..x.len()).map(|i| if take_other(i) { y[i] } else { x[i] }).collect(),
            ),
            (Carrier::Fixed(x), Carrier::Fixed(y)) => {
                let mut out = FixedVec::zeros(x.len(), x.frac_bits());
                for i in 0..x.len() {
                    out.set(i, if take_other(i) { y.get(i) } else { x.get(i) });
                }
                Carrier::Fixed(out)
            }
            _ => unreachable!(),
        };
        let swapped = |i: usize| swap_mask[i];
        let lo_v = pick(self.carried(a_val), self.carried(b_val), &swapped);
        let lo_t = pick(self.carried(a_tag), self.carried(b_tag), &swapped);
        let hi_v = pick(self.carried(b_val), self.carried(a_val), &swapped);
        let hi_t = pick(self.carried(b_tag), self.carried(a_tag), &swapped);
        charge_compare(&mut self.meter, &self.cost, &c, a_val.len);
        Ok((
            self.wrap(&a_val.committee, lo_v),
            self.wrap(&a_val.committee, lo_t),
            self.wrap(&a_val.committee, hi_v),
            self.wrap(&a_val.committee, hi_t),
        ))
    }

    fn functionality_input(&mut self, s: &ShareSet, _token: Boundary) -> Result<Carrier> {
        Ok(self.carried(s).clone())
    }

    fn functionality_output(
        &mut self,
        value: Carrier,
        committee: &str,
        _rng: &mut ChaCha8Rng,
        _token: Boundary,
    ) -> Result<ShareSet> {
        self.check_mode(&value)?;
        self.committee(committee)?;
        Ok(self.wrap(committee, value))
    }

    fn inspect_share(&mut self, _s: &ShareSet, _party: usize) -> Result<Vec<u64>> {
        Err(Error::NotImplemented(
            "share inspection: the carried backends hold no physical shares".into(),
        ))
    }
}
