//! 64-bit ring fixed-point arithmetic.
//!
//! Values live in Z_2^64, read as two's complement with `frac_bits`
//! fractional bits: encode(x) = round(x * 2^frac_bits) mod 2^64. Addition
//! wraps. Multiplication forms the exact signed product and truncates by an
//! arithmetic shift, so results are deterministic and bit-reproducible, the
//! same semantics an MPC engine's simulation mode applies.
//!
//! Overflow checks are `debug_assert`s: active in debug and test builds,
//! compiled out of experiment binaries where values wrap silently.

use crate::error::{Error, Result};

pub const DEFAULT_FRAC_BITS: u32 = 22;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FixedScalar {
    raw: u64,
    frac_bits: u32,
}

impl FixedScalar {
    /// Encode a real into the ring. Requires |x| < 2^(63 - frac_bits).
    pub fn encode(x: f64, frac_bits: u32) -> Result<Self> {
        debug_assert!(frac_bits < 63, "frac_bits must leave room for an integer part");
        if !x.is_finite() {
            return Err(Error::Overflow { value: x, frac_bits });
        }
        let scaled = (x * (1u64 << frac_bits) as f64).round();
        if scaled >= 9_223_372_036_854_775_808.0 || scaled < -9_223_372_036_854_775_808.0 {
            return Err(Error::Overflow { value: x, frac_bits });
        }
        Ok(Self { raw: (scaled as i64) as u64, frac_bits })
    }

    pub fn from_raw(raw: u64, frac_bits: u32) -> Self {
        Self { raw, frac_bits }
    }

    pub fn zero(frac_bits: u32) -> Self {
        Self { raw: 0, frac_bits }
    }

    pub fn raw(self) -> u64 {
        self.raw
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    /// Nearest f64 to the represented rational raw / 2^frac_bits.
    pub fn decode(self) -> f64 {
        (self.raw as i64) as f64 / (1u64 << self.frac_bits) as f64
    }

    pub fn add_wrap(self, other: Self) -> Self {
        debug_assert_eq!(self.frac_bits, other.frac_bits);
        Self { raw: self.raw.wrapping_add(other.raw), frac_bits: self.frac_bits }
    }

    pub fn sub_wrap(self, other: Self) -> Self {
        debug_assert_eq!(self.frac_bits, other.frac_bits);
        Self { raw: self.raw.wrapping_sub(other.raw), frac_bits: self.frac_bits }
    }

    pub fn neg(self) -> Self {
        Self { raw: self.raw.wrapping_neg(), frac_bits: self.frac_bits }
    }

    /// Truncating multiply: arithmetic shift of the exact signed product.
    /// Rounds toward negative infinity; the result is within one ulp of the
    /// real product while |a * b| < 2^(63 - frac_bits).
    pub fn mul_truncate(self, other: Self) -> Self {
        debug_assert_eq!(self.frac_bits, other.frac_bits);
        let product = (self.raw as i64 as i128) * (other.raw as i64 as i128);
        let shifted = product >> self.frac_bits;
        debug_assert!(
            shifted >= i64::MIN as i128 && shifted <= i64::MAX as i128,
            "fixed-point product overflow: {} * {}",
            self.decode(),
            other.decode()
        );
        Self { raw: (shifted as i64) as u64, frac_bits: self.frac_bits }
    }

    /// True when the two's-complement reading is negative.
    pub fn is_negative(self) -> bool {
        (self.raw as i64) < 0
    }
}

/// Vector over the same ring; all elementwise ops check length and
/// fractional bits.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FixedVec {
    raw: Vec<u64>,
    frac_bits: u32,
}

impl FixedVec {
    pub fn encode_slice(xs: &[f64], frac_bits: u32) -> Result<Self> {
        let mut raw = Vec::with_capacity(xs.len());
        for &x in xs {
            raw.push(FixedScalar::encode(x, frac_bits)?.raw);
        }
        Ok(Self { raw, frac_bits })
    }

    pub fn zeros(len: usize, frac_bits: u32) -> Self {
        Self { raw: vec![0; len], frac_bits }
    }

    pub fn from_raw(raw: Vec<u64>, frac_bits: u32) -> Self {
        Self { raw, frac_bits }
    }

    pub fn decode_vec(&self) -> Vec<f64> {
        let scale = (1u64 << self.frac_bits) as f64;
        self.raw.iter().map(|&r| (r as i64) as f64 / scale).collect()
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn raw(&self) -> &[u64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [u64] {
        &mut self.raw
    }

    pub fn into_raw(self) -> Vec<u64> {
        self.raw
    }

    pub fn get(&self, i: usize) -> FixedScalar {
        FixedScalar { raw: self.raw[i], frac_bits: self.frac_bits }
    }

    pub fn set(&mut self, i: usize, v: FixedScalar) {
        debug_assert_eq!(self.frac_bits, v.frac_bits);
        self.raw[i] = v.raw;
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.raw.len() != other.raw.len() {
            return Err(Error::LengthMismatch { left: self.raw.len(), right: other.raw.len() });
        }
        if self.frac_bits != other.frac_bits {
            return Err(Error::FracBitsMismatch { left: self.frac_bits, right: other.frac_bits });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let raw = self
            .raw
            .iter()
            .zip(&other.raw)
            .map(|(&a, &b)| a.wrapping_add(b))
            .collect();
        Ok(Self { raw, frac_bits: self.frac_bits })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check(other)?;
        for (a, &b) in self.raw.iter_mut().zip(&other.raw) {
            *a = a.wrapping_add(b);
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let raw = self
            .raw
            .iter()
            .zip(&other.raw)
            .map(|(&a, &b)| a.wrapping_sub(b))
            .collect();
        Ok(Self { raw, frac_bits: self.frac_bits })
    }

    pub fn neg(&self) -> Self {
        Self {
            raw: self.raw.iter().map(|&a| a.wrapping_neg()).collect(),
            frac_bits: self.frac_bits,
        }
    }

    /// Elementwise truncating multiply by a public scalar.
    pub fn scale(&self, c: FixedScalar) -> Result<Self> {
        if c.frac_bits != self.frac_bits {
            return Err(Error::FracBitsMismatch { left: self.frac_bits, right: c.frac_bits });
        }
        let raw = self
            .raw
            .iter()
            .map(|&a| FixedScalar { raw: a, frac_bits: self.frac_bits }.mul_truncate(c).raw)
            .collect();
        Ok(Self { raw, frac_bits: self.frac_bits })
    }

    /// Dot product with ring accumulation at doubled scale and a single
    /// final truncation, the way an MPC matmul truncates per output rather
    /// than per term. Exact while |sum of products| < 2^(63 - 2*frac_bits).
    pub fn dot(&self, other: &Self) -> Result<FixedScalar> {
        self.check(other)?;
        let mut acc: u64 = 0;
        #[cfg(debug_assertions)]
        let mut shadow: i128 = 0;
        for (&a, &b) in self.raw.iter().zip(&other.raw) {
            acc = acc.wrapping_add(a.wrapping_mul(b));
            #[cfg(debug_assertions)]
            {
                shadow += (a as i64 as i128) * (b as i64 as i128);
            }
        }
        #[cfg(debug_assertions)]
        debug_assert!(
            shadow >= i64::MIN as i128 && shadow <= i64::MAX as i128,
            "dot-product accumulator overflowed the ring"
        );
        Ok(FixedScalar {
            raw: ((acc as i64) >> self.frac_bits) as u64,
            frac_bits: self.frac_bits,
        })
    }
}
