//! Numeric backends for layer arithmetic.
//!
//! `FloatNum` is plain f64 with a BLAS-style matmul. `FixedNum` runs every
//! multiplication on the two's-complement ring with one truncation per
//! output, mirroring what a secure execution computes, and tallies the
//! multiplications and comparisons a protocol would pay for.

use std::cell::Cell;

use crate::fixed::FixedScalar;

/// Interactive-operation tally for one training or inference call.
/// `mults` counts ring multiplications (one masked-opening pair each),
/// `comparisons` counts oblivious sign tests.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq)]
pub struct OpCount {
    pub mults: u64,
    pub comparisons: u64,
}

impl OpCount {
    pub fn add(&mut self, other: OpCount) {
        self.mults += other.mults;
        self.comparisons += other.comparisons;
    }
}

// Softmax on shares evaluates exp by limit iteration and the normalizer by
// Newton division; this models that as a flat multiplication charge per
// logit (8 squarings + 2 reciprocal steps).
const SOFTMAX_MULTS_PER_ELEM: u64 = 10;

pub(crate) trait Numeric {
    type E: Copy + Send + Sync;

    fn enc(&self, x: f64) -> Self::E;
    fn dec(&self, e: Self::E) -> f64;
    fn zero(&self) -> Self::E;
    fn add(&self, a: Self::E, b: Self::E) -> Self::E;
    fn sub(&self, a: Self::E, b: Self::E) -> Self::E;
    /// Counted multiplication.
    fn mul(&self, a: Self::E, b: Self::E) -> Self::E;
    /// Counted sign test, true when `a > b`.
    fn gt(&self, a: Self::E, b: Self::E) -> bool;

    /// `out = A (m x k) * B (k x n)`, row-major out, arbitrary input
    /// strides. Fixed-point accumulates at double scale and truncates once
    /// per output. Counts m*k*n multiplications.
    #[allow(clippy::too_many_arguments)]
    fn matmul(
        &self,
        m: usize,
        k: usize,
        n: usize,
        a: &[Self::E],
        a_rs: usize,
        a_cs: usize,
        b: &[Self::E],
        b_rs: usize,
        b_cs: usize,
        out: &mut [Self::E],
    );

    /// Softmax cross-entropy over `logits` (batch x classes, row-major).
    /// Returns summed loss and the gradient wrt logits, already divided by
    /// `batch`. Counted as a flat per-logit multiplication charge.
    fn softmax_ce(
        &self,
        logits: &[Self::E],
        labels: &[usize],
        classes: usize,
    ) -> (f64, Vec<Self::E>);

    fn take_ops(&self) -> OpCount;
}

fn softmax_ce_f64(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    debug_assert_eq!(logits.len(), batch * classes);
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &z in row {
            denom += (z - max).exp();
        }
        loss -= (row[label] - max) - denom.ln();
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (c, gz) in g.iter_mut().enumerate() {
            let p = (row[c] - max).exp() / denom;
            *gz = (p - if c == label { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    (loss, grad)
}

pub(crate) struct FloatNum;

impl Numeric for FloatNum {
    type E = f64;

    fn enc(&self, x: f64) -> f64 {
        x
    }
    fn dec(&self, e: f64) -> f64 {
        e
    }
    fn zero(&self) -> f64 {
        0.0
    }
    fn add(&self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn gt(&self, a: f64, b: f64) -> bool {
        a > b
    }

    fn matmul(
        &self,
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        a_rs: usize,
        a_cs: usize,
        b: &[f64],
        b_rs: usize,
        b_cs: usize,
        out: &mut [f64],
    ) {
        debug_assert!(out.len() == m * n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                a_rs as isize,
                a_cs as isize,
                b.as_ptr(),
                b_rs as isize,
                b_cs as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn softmax_ce(&self, logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
        softmax_ce_f64(logits, labels, classes)
    }

    fn take_ops(&self) -> OpCount {
        OpCount::default()
    }
}

pub(crate) struct FixedNum {
    pub frac_bits: u32,
    mults: Cell<u64>,
    comparisons: Cell<u64>,
}

impl FixedNum {
    pub fn new(frac_bits: u32) -> Self {
        Self { frac_bits, mults: Cell::new(0), comparisons: Cell::new(0) }
    }

    fn scalar(&self, raw: u64) -> FixedScalar {
        FixedScalar::from_raw(raw, self.frac_bits)
    }
}

impl Numeric for FixedNum {
    type E = u64;

    fn enc(&self, x: f64) -> u64 {
        // Saturate instead of erroring: transient training values may
        // brush the range edge, and secure execution wraps silently there
        // anyway. Divergence checks catch runaway magnitudes.
        let scaled = (x * (1u64 << self.frac_bits) as f64).round();
        let clamped = scaled.clamp(-(2f64.powi(62)), 2f64.powi(62));
        clamped as i64 as u64
    }

    fn dec(&self, e: u64) -> f64 {
        self.scalar(e).decode()
    }

    fn zero(&self) -> u64 {
        0
    }

    fn add(&self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b)
    }

    fn sub(&self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b)
    }

    fn mul(&self, a: u64, b: u64) -> u64 {
        self.mults.set(self.mults.get() + 1);
        self.scalar(a).mul_truncate(self.scalar(b)).raw()
    }

    fn gt(&self, a: u64, b: u64) -> bool {
        self.comparisons.set(self.comparisons.get() + 1);
        (a.wrapping_sub(b) as i64) > 0
    }

    fn matmul(
        &self,
        m: usize,
        k: usize,
        n: usize,
        a: &[u64],
        a_rs: usize,
        a_cs: usize,
        b: &[u64],
        b_rs: usize,
        b_cs: usize,
        out: &mut [u64],
    ) {
        debug_assert!(out.len() == m * n);
        let f = self.frac_bits;
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0u64;
                #[cfg(debug_assertions)]
                let mut shadow: i128 = 0;
                for kk in 0..k {
                    let x = a[i * a_rs + kk * a_cs];
                    let y = b[kk * b_rs + j * b_cs];
                    acc = acc.wrapping_add(x.wrapping_mul(y));
                    #[cfg(debug_assertions)]
                    {
                        shadow += (x as i64 as i128) * (y as i64 as i128);
                    }
                }
                #[cfg(debug_assertions)]
                debug_assert!(
                    shadow >> f <= i64::MAX as i128 && shadow >> f >= i64::MIN as i128,
                    "fixed-point dot overflow"
                );
                out[i * n + j] = ((acc as i64) >> f) as u64;
            }
        }
        self.mults.set(self.mults.get() + (m * k * n) as u64);
    }

    fn softmax_ce(&self, logits: &[u64], labels: &[usize], classes: usize) -> (f64, Vec<u64>) {
        // Exp and the normalizer run outside the ring; only the quantized
        // gradient flows back. The protocol charge is modeled flat.
        let dec: Vec<f64> = logits.iter().map(|&e| self.dec(e)).collect();
        let (loss, grad) = softmax_ce_f64(&dec, labels, classes);
        self.mults
            .set(self.mults.get() + SOFTMAX_MULTS_PER_ELEM * logits.len() as u64);
        (loss, grad.into_iter().map(|g| self.enc(g)).collect())
    }

    fn take_ops(&self) -> OpCount {
        let ops = OpCount { mults: self.mults.get(), comparisons: self.comparisons.get() };
        self.mults.set(0);
        self.comparisons.set(0);
        ops
    }
}
