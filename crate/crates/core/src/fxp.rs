//! Adaptive fixed-point number system.
//!
//! A tensor is quantized with a single per-tensor scale derived from its
//! dynamic range: `scale = 2^n / (|min(W,0)| + |max(W,0)|)` and
//! `code = saturate(round(W * scale))`. Quantization is symmetric (no zero
//! point), rounding is half-to-even and overflow saturates to the signed range
//! of the declared bit width.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// SIMD precision mode of the datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    FxP8,
    FxP16,
    FxP32,
}

impl Precision {
    pub const ALL: [Precision; 3] = [Precision::FxP8, Precision::FxP16, Precision::FxP32];

    pub const fn bits(self) -> u32 {
        match self {
            Precision::FxP8 => 8,
            Precision::FxP16 => 16,
            Precision::FxP32 => 32,
        }
    }

    /// Number of lanes one 128-bit operand word carries in this mode.
    pub const fn lane_count(self) -> usize {
        match self {
            Precision::FxP8 => 16,
            Precision::FxP16 => 4,
            Precision::FxP32 => 1,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(Precision::FxP8),
            16 => Ok(Precision::FxP16),
            32 => Ok(Precision::FxP32),
            other => Err(Error::UnsupportedBits(other)),
        }
    }

    pub const fn code_min(self) -> i32 {
        match self {
            Precision::FxP8 => i8::MIN as i32,
            Precision::FxP16 => i16::MIN as i32,
            Precision::FxP32 => i32::MIN,
        }
    }

    pub const fn code_max(self) -> i32 {
        match self {
            Precision::FxP8 => i8::MAX as i32,
            Precision::FxP16 => i16::MAX as i32,
            Precision::FxP32 => i32::MAX,
        }
    }

    pub fn contains(self, code: i64) -> bool {
        code >= self.code_min() as i64 && code <= self.code_max() as i64
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FxP{}", self.bits())
    }
}

/// Per-tensor quantization parameters: codes per unit and bit width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    scale: f64,
    precision: Precision,
}

impl QuantParams {
    pub fn new(scale: f64, precision: Precision) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidScale(scale));
        }
        Ok(Self { scale, precision })
    }

    /// Parameters covering `[-1, 1]`: `scale = 2^(bits-1)`.
    ///
    /// Used for the outputs of sigmoid, tanh and softmax.
    pub fn unit(precision: Precision) -> Self {
        Self { scale: pow2(precision.bits() as i32 - 1), precision }
    }

    /// Parameters for a tensor whose magnitude is bounded by `amax`, i.e. the
    /// range `[-amax, amax]`.
    pub fn for_range(amax: f64, precision: Precision) -> Result<Self> {
        if !amax.is_finite() || amax < 0.0 {
            return Err(Error::NonFiniteInput);
        }
        if amax == 0.0 {
            return Ok(Self { scale: 1.0, precision });
        }
        Self::new(pow2(precision.bits() as i32) / (2.0 * amax), precision)
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn precision(&self) -> Precision {
        self.precision
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.precision.bits()
    }

    /// Same real-valued resolution re-expressed at another bit width.
    pub fn at_precision(&self, precision: Precision) -> Self {
        let shift = precision.bits() as i32 - self.precision.bits() as i32;
        Self { scale: self.scale * pow2(shift), precision }
    }
}

/// Integer-coded tensor: codes, quantization parameters and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    codes: Vec<i32>,
    params: QuantParams,
    shape: Vec<usize>,
}

impl QTensor {
    pub fn new(codes: Vec<i32>, params: QuantParams, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != codes.len() {
            return Err(Error::LengthMismatch { expected: n, found: codes.len() });
        }
        if let Some(&bad) = codes.iter().find(|&&c| !params.precision.contains(c as i64)) {
            return Err(Error::CodeOutOfRange { code: bad as i64, precision: params.precision });
        }
        Ok(Self { codes, params, shape })
    }

    /// One-dimensional tensor.
    pub fn vector(codes: Vec<i32>, params: QuantParams) -> Result<Self> {
        let n = codes.len();
        Self::new(codes, params, alloc::vec![n])
    }

    pub fn zeros(params: QuantParams, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { codes: alloc::vec![0; n], params, shape }
    }

    #[inline]
    pub fn codes(&self) -> &[i32] {
        &self.codes
    }

    #[inline]
    pub fn params(&self) -> QuantParams {
        self.params
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn precision(&self) -> Precision {
        self.params.precision
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn into_codes(self) -> Vec<i32> {
        self.codes
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.codes.len() {
            return Err(Error::LengthMismatch { expected: n, found: self.codes.len() });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Re-express every code at `params` with one rounding step.
    pub fn rescale(&self, params: QuantParams) -> Self {
        let codes = if params == self.params {
            self.codes.clone()
        } else {
            let factor = params.scale / self.params.scale;
            self.codes.iter().map(|&c| saturate(round_half_even(c as f64 * factor), params.precision)).collect()
        };
        Self { codes, params, shape: self.shape.clone() }
    }
}

#[inline]
pub(crate) fn pow2(exp: i32) -> f64 {
    libm::ldexp(1.0, exp)
}

/// Round to nearest, ties to even.
#[inline]
pub fn round_half_even(x: f64) -> f64 {
    libm::rint(x)
}

/// Clamp an already-rounded value into the signed range of `precision`.
#[inline]
pub fn saturate(x: f64, precision: Precision) -> i32 {
    let lo = precision.code_min() as f64;
    let hi = precision.code_max() as f64;
    if x.is_nan() {
        0
    } else if x <= lo {
        precision.code_min()
    } else if x >= hi {
        precision.code_max()
    } else {
        x as i32
    }
}

/// Per-tensor scale from the tensor's dynamic range.
///
/// `scale = 2^bits / (|min(values,0)| + |max(values,0)|)`; an all-zero tensor
/// gets `scale = 1`.
pub fn calibrate(values: &[f64], precision: Precision) -> Result<QuantParams> {
    let (lo, hi) = signed_extent(values)?;
    let span = -lo + hi;
    if span == 0.0 {
        return QuantParams::new(1.0, precision);
    }
    QuantParams::new(pow2(precision.bits() as i32) / span, precision)
}

/// [`calibrate`] applied to the symmetric hull `[-a, a]`, `a = max |v|`.
///
/// This is the calibration the network layers use: it keeps one-sided tensors
/// (post-ReLU activations) from losing half of the code range.
pub fn calibrate_symmetric(values: &[f64], precision: Precision) -> Result<QuantParams> {
    let (lo, hi) = signed_extent(values)?;
    QuantParams::for_range(libm::fmax(-lo, hi), precision)
}

fn signed_extent(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        lo = libm::fmin(lo, v);
        hi = libm::fmax(hi, v);
    }
    Ok((lo, hi))
}

#[inline]
pub fn quantize_value(v: f64, params: QuantParams) -> i32 {
    saturate(round_half_even(v * params.scale), params.precision)
}

/// Quantize a flat array into a one-dimensional [`QTensor`].
pub fn quantize(values: &[f64], params: QuantParams) -> QTensor {
    let codes = values.iter().map(|&v| quantize_value(v, params)).collect();
    QTensor { codes, params, shape: alloc::vec![values.len()] }
}

#[inline]
pub fn dequantize_code(code: i32, params: QuantParams) -> f64 {
    code as f64 / params.scale
}

pub fn dequantize(t: &QTensor) -> Vec<f64> {
    t.codes.iter().map(|&c| dequantize_code(c, t.params)).collect()
}

/// Bring a product-space accumulator (scale `a.scale * b.scale`) to an output
/// code at `out` with a single rounding.
pub fn requantize(acc: i128, a: QuantParams, b: QuantParams, out: QuantParams) -> i32 {
    let factor = out.scale / (a.scale * b.scale);
    saturate(round_half_even(acc as f64 * factor), out.precision)
}

/// Convert a real bias into the product space of `a × b`.
pub fn bias_to_product_space(code: i32, bias: QuantParams, a: QuantParams, b: QuantParams) -> i128 {
    let v = round_half_even(code as f64 * (a.scale * b.scale / bias.scale));
    // Product-space magnitudes stay far below 2^127; the cast saturates anyway.
    v as i128
}
