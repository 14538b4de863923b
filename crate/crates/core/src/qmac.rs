//! SIMD multi-precision multiply-accumulate unit.
//!
//! Every product, at every precision, is assembled from 8×8 multiplier
//! primitives. A 16-bit product uses four primitives and a 32-bit product uses
//! sixteen; partial products are recombined with shifts and adds. Operands are
//! split into bytes where the top byte is signed and the lower bytes are
//! unsigned, so each primitive is told the signedness of both inputs.
//!
//! Operand words are 128 bits wide and hold 16, 4 or 1 lanes. Accumulators are
//! four times the operand width (32, 64 or 128 bits) and saturate.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fxp::{Precision, QTensor};

/// Which 8×8 multiplier the Q-MAC is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MultiplierKind {
    #[default]
    Exact,
    /// Mitchell's one-step logarithmic multiplier.
    MitchellLog,
}

/// One 8×8 multiplier primitive with per-operand signedness.
#[inline]
fn primitive(a: u8, a_signed: bool, b: u8, b_signed: bool, kind: MultiplierKind) -> i32 {
    let x = if a_signed { a as i8 as i32 } else { a as i32 };
    let y = if b_signed { b as i8 as i32 } else { b as i32 };
    match kind {
        MultiplierKind::Exact => x * y,
        MultiplierKind::MitchellLog => {
            let mag = mitchell(x.unsigned_abs(), y.unsigned_abs()) as i32;
            if (x < 0) != (y < 0) {
                -mag
            } else {
                mag
            }
        }
    }
}

/// Mitchell's approximation of `m1 * m2` for unsigned magnitudes.
///
/// With `m = 2^k (1 + f)`, `log2 m ≈ k + f`; the antilog of the summed
/// approximations is evaluated exactly in integers.
fn mitchell(m1: u32, m2: u32) -> u32 {
    if m1 == 0 || m2 == 0 {
        return 0;
    }
    let k1 = 31 - m1.leading_zeros();
    let k2 = 31 - m2.leading_zeros();
    let f1 = m1 - (1 << k1);
    let f2 = m2 - (1 << k2);
    // (f1/2^k1 + f2/2^k2) scaled by 2^(k1+k2)
    let frac = (f1 << k2) + (f2 << k1);
    let base = 1u32 << (k1 + k2);
    if frac < base {
        base + frac
    } else {
        frac << 1
    }
}

/// Signed 8×8 product through one primitive.
pub fn mul8(a: i8, b: i8, kind: MultiplierKind) -> i16 {
    primitive(a as u8, true, b as u8, true, kind) as i16
}

/// Multiply two `bytes`-byte signed integers with `bytes²` primitive calls.
#[inline]
fn compose(a: i64, b: i64, bytes: usize, kind: MultiplierKind) -> i128 {
    let mut acc: i128 = 0;
    for i in 0..bytes {
        let ab = (a >> (8 * i)) as u8;
        let a_signed = i + 1 == bytes;
        for j in 0..bytes {
            let bb = (b >> (8 * j)) as u8;
            let b_signed = j + 1 == bytes;
            let partial = primitive(ab, a_signed, bb, b_signed, kind) as i128;
            acc += partial << (8 * (i + j));
        }
    }
    acc
}

/// Exact 16×16 product from four 8×8 primitives.
pub fn mul16_composed(a: i16, b: i16) -> i32 {
    compose(a as i64, b as i64, 2, MultiplierKind::Exact) as i32
}

/// Exact 32×32 product from sixteen 8×8 primitives.
pub fn mul32_composed(a: i32, b: i32) -> i64 {
    compose(a as i64, b as i64, 4, MultiplierKind::Exact) as i64
}

/// Product of two codes at `mode` width using `kind` primitives.
#[inline]
pub fn mul_lane(a: i32, b: i32, mode: Precision, kind: MultiplierKind) -> i64 {
    match mode {
        Precision::FxP8 => mul8(a as i8, b as i8, kind) as i64,
        Precision::FxP16 => compose(a as i64, b as i64, 2, kind) as i64,
        Precision::FxP32 => compose(a as i64, b as i64, 4, kind) as i64,
    }
}

/// 128-bit packed operand register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimdWord {
    raw: u128,
    mode: Precision,
}

impl SimdWord {
    /// Pack exactly `lane_count(mode)` codes, lane 0 in the low bits.
    pub fn pack(lanes: &[i32], mode: Precision) -> Result<Self> {
        let n = mode.lane_count();
        if lanes.len() != n {
            return Err(Error::LaneCount { expected: n, found: lanes.len() });
        }
        Self::pack_padded(lanes, mode)
    }

    /// Pack up to `lane_count(mode)` codes; missing lanes are zero.
    pub fn pack_padded(lanes: &[i32], mode: Precision) -> Result<Self> {
        let n = mode.lane_count();
        if lanes.len() > n {
            return Err(Error::LaneCount { expected: n, found: lanes.len() });
        }
        let bits = mode.bits();
        let mask = (1u128 << bits) - 1;
        let mut raw = 0u128;
        for (i, &code) in lanes.iter().enumerate() {
            if !mode.contains(code as i64) {
                return Err(Error::CodeOutOfRange { code: code as i64, precision: mode });
            }
            raw |= ((code as i64 as u128) & mask) << (bits as usize * i);
        }
        Ok(Self { raw, mode })
    }

    #[inline]
    pub fn raw(&self) -> u128 {
        self.raw
    }

    #[inline]
    pub fn mode(&self) -> Precision {
        self.mode
    }

    /// Sign-extended value of lane `i`.
    #[inline]
    pub fn lane(&self, i: usize) -> i32 {
        let bits = self.mode.bits() as usize;
        let field = (self.raw >> (bits * i)) as u32;
        match self.mode {
            Precision::FxP8 => field as u8 as i8 as i32,
            Precision::FxP16 => field as u16 as i16 as i32,
            Precision::FxP32 => field as i32,
        }
    }

    pub fn unpack(&self) -> Vec<i32> {
        (0..self.mode.lane_count()).map(|i| self.lane(i)).collect()
    }
}

/// Per-lane saturating accumulators of one Q-MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccumulatorBank {
    accs: [i128; 16],
    mode: Precision,
}

impl AccumulatorBank {
    pub fn new(mode: Precision) -> Self {
        Self { accs: [0; 16], mode }
    }

    /// Bank with preset lane values; each is clamped to the accumulator width.
    pub fn from_values(values: &[i128], mode: Precision) -> Result<Self> {
        let n = mode.lane_count();
        if values.len() != n {
            return Err(Error::LaneCount { expected: n, found: values.len() });
        }
        let mut bank = Self::new(mode);
        for (slot, &v) in bank.accs.iter_mut().zip(values) {
            *slot = clamp_width(v, Self::width_for(mode));
        }
        Ok(bank)
    }

    #[inline]
    pub fn mode(&self) -> Precision {
        self.mode
    }

    /// Accumulator width in bits for `mode`.
    pub const fn width_for(mode: Precision) -> u32 {
        mode.bits() * 4
    }

    pub fn width(&self) -> u32 {
        Self::width_for(self.mode)
    }

    pub fn values(&self) -> &[i128] {
        &self.accs[..self.mode.lane_count()]
    }

    /// Sum of all lanes with saturation at the accumulator width, lane 0 first.
    pub fn reduce(&self) -> i128 {
        let width = self.width();
        self.values().iter().fold(0i128, |s, &v| saturating_add(s, v, width))
    }

    /// One Q-MAC cycle in place.
    pub fn mac(&mut self, a: &SimdWord, b: &SimdWord, kind: MultiplierKind) -> Result<()> {
        for w in [a, b] {
            if w.mode != self.mode {
                return Err(Error::ModeMismatch { expected: self.mode, found: w.mode });
            }
        }
        let width = self.width();
        for i in 0..self.mode.lane_count() {
            let p = mul_lane(a.lane(i), b.lane(i), self.mode, kind) as i128;
            self.accs[i] = saturating_add(self.accs[i], p, width);
        }
        Ok(())
    }
}

#[inline]
fn bounds(width: u32) -> (i128, i128) {
    if width >= 128 {
        (i128::MIN, i128::MAX)
    } else {
        (-(1i128 << (width - 1)), (1i128 << (width - 1)) - 1)
    }
}

#[inline]
fn clamp_width(v: i128, width: u32) -> i128 {
    let (lo, hi) = bounds(width);
    v.clamp(lo, hi)
}

#[inline]
pub(crate) fn saturating_add(a: i128, b: i128, width: u32) -> i128 {
    clamp_width(a.saturating_add(b), width)
}

/// One Q-MAC cycle: `acc_i ← sat(acc_i + a_i·b_i)` for every active lane.
pub fn simd_mac(acc: &AccumulatorBank, a: &SimdWord, b: &SimdWord, kind: MultiplierKind) -> Result<AccumulatorBank> {
    let mut next = *acc;
    next.mac(a, b, kind)?;
    Ok(next)
}

/// Number of Q-MAC cycles a dot product of length `len` occupies.
pub fn dot_cycles(len: usize, mode: Precision) -> usize {
    len.div_ceil(mode.lane_count())
}

/// Dot product of code slices streamed through the Q-MAC at `mode`.
///
/// The tail is zero-padded to a full word; the lane accumulators are reduced by
/// saturating addition. The result is in product space.
pub fn dot_codes(a: &[i32], b: &[i32], mode: Precision, kind: MultiplierKind) -> Result<i128> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    let lanes = mode.lane_count();
    let mut bank = AccumulatorBank::new(mode);
    for (ca, cb) in a.chunks(lanes).zip(b.chunks(lanes)) {
        let wa = SimdWord::pack_padded(ca, mode)?;
        let wb = SimdWord::pack_padded(cb, mode)?;
        bank.mac(&wa, &wb, kind)?;
    }
    Ok(bank.reduce())
}

/// Dot product of two tensors (see [`dot_codes`]).
pub fn dot(a: &QTensor, b: &QTensor, mode: Precision, kind: MultiplierKind) -> Result<i128> {
    dot_codes(a.codes(), b.codes(), mode, kind)
}
