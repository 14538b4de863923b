//! Versatile activation unit: ReLU, sigmoid, tanh and softmax.
//!
//! Sigmoid, tanh and the exponentials behind softmax share one hyperbolic
//! CORDIC rotation core; quotients go through a linear-vectoring CORDIC
//! divider. Internally every quantity is a 64-bit code with
//! [`FRAC_BITS`] fractional bits regardless of the I/O precision.
//!
//! The rotation uses an expanded schedule: three range-extension iterations
//! with factors `1 - 2^(i-2)` for `i = -2, -1, 0` bring the convergence range
//! to about ±5.16, followed by the usual `atanh(2^-i)` iterations with repeats
//! at `i = 4, 13, 40, ...`. The angle left over after the last iteration is
//! folded in with one second-order correction step.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fxp::{dequantize_code, round_half_even, saturate, Precision, QTensor, QuantParams};

/// Fractional bits of the internal working format.
pub const FRAC_BITS: u32 = 40;
const ONE: i64 = 1 << FRAC_BITS;

/// Largest |θ| accepted by the rotation core.
pub const THETA_MAX: f64 = 4.0;
/// Lower end of the exponential's domain (two half-range rotations).
pub const EXP_MIN: f64 = -8.0;

/// Shift indices of the range-extension iterations.
const EXPANSION: [i32; 3] = [-2, -1, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CordicMode {
    HyperbolicRotation,
    LinearVectoring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActKind {
    ReLU,
    Sigmoid,
    Tanh,
    Softmax,
}

/// Iteration schedule and gain of the hyperbolic core.
#[derive(Debug, Clone, PartialEq)]
pub struct CordicConfig {
    iterations: usize,
    schedule: Vec<i32>,
    angles: Vec<i64>,
    gain: f64,
    mode: CordicMode,
}

impl CordicConfig {
    /// Hyperbolic rotation with `iterations` scheduled steps in total
    /// (range extension and repeats included).
    pub fn hyperbolic(iterations: usize) -> Result<Self> {
        if iterations < 8 {
            return Err(Error::Domain("CORDIC needs at least 8 iterations"));
        }
        let schedule = build_schedule(iterations);
        let angles = schedule.iter().map(|&i| to_fixed(step_angle(i))).collect();
        let gain = schedule_gain(&schedule);
        Ok(Self { iterations, schedule, angles, gain, mode: CordicMode::HyperbolicRotation })
    }

    /// Default iteration budget: 16 for FxP8/FxP16, 32 for FxP32.
    pub fn for_precision(precision: Precision) -> Self {
        let n = match precision {
            Precision::FxP8 | Precision::FxP16 => 16,
            Precision::FxP32 => 32,
        };
        Self::hyperbolic(n).expect("default iteration count is valid")
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn schedule(&self) -> &[i32] {
        &self.schedule
    }

    /// Stored gain `K_h`, the product of the per-step scale factors.
    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn mode(&self) -> CordicMode {
        self.mode
    }

    /// Gain recomputed from the schedule.
    pub fn recompute_gain(&self) -> f64 {
        schedule_gain(&self.schedule)
    }

    /// Replace the stored gain.
    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }
}

fn build_schedule(iterations: usize) -> Vec<i32> {
    let mut schedule: Vec<i32> = EXPANSION.to_vec();
    let mut next_repeat = 4;
    let mut i = 1;
    while schedule.len() < iterations {
        schedule.push(i);
        if i == next_repeat && schedule.len() < iterations {
            schedule.push(i);
            next_repeat = 3 * next_repeat + 1;
        }
        i += 1;
    }
    schedule.truncate(iterations);
    schedule
}

/// Per-step tanh of the rotation angle.
fn step_ratio(i: i32) -> f64 {
    if i <= 0 {
        1.0 - libm::ldexp(1.0, i - 2)
    } else {
        libm::ldexp(1.0, -i)
    }
}

fn step_angle(i: i32) -> f64 {
    libm::atanh(step_ratio(i))
}

fn schedule_gain(schedule: &[i32]) -> f64 {
    schedule.iter().fold(1.0, |g, &i| {
        let t = step_ratio(i);
        g * libm::sqrt(1.0 - t * t)
    })
}

/// Latency in cycles of the low-latency CORDIC core: `⌈3n/8⌉ + 1`.
pub fn latency_cycles(cfg: &CordicConfig) -> u64 {
    (3 * cfg.iterations as u64).div_ceil(8) + 1
}

/// The `(x, y, z)` triple of the recurrence in the working format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CordicState {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

#[inline]
fn to_fixed(v: f64) -> i64 {
    round_half_even(libm::ldexp(v, FRAC_BITS as i32)) as i64
}

#[inline]
fn from_fixed(v: i64) -> f64 {
    libm::ldexp(v as f64, -(FRAC_BITS as i32))
}

#[inline]
fn mul_fixed(a: i64, b: i64) -> i64 {
    let p = a as i128 * b as i128;
    ((p + (1i128 << (FRAC_BITS - 1))) >> FRAC_BITS) as i64
}

/// `v * t_i` with shifts only.
#[inline]
fn scaled(v: i64, i: i32) -> i64 {
    if i <= 0 {
        v - (v >> (2 - i))
    } else {
        v >> i
    }
}

/// Rotate `(1/gain, 0)` by `theta` (working format, `|theta| ≤ 4`).
fn rotate(theta: i64, cfg: &CordicConfig) -> CordicState {
    let mut s = CordicState { x: to_fixed(1.0 / cfg.gain), y: 0, z: theta };
    for (&i, &angle) in cfg.schedule.iter().zip(&cfg.angles) {
        let dx = scaled(s.y, i);
        let dy = scaled(s.x, i);
        if s.z >= 0 {
            s.x += dx;
            s.y += dy;
            s.z -= angle;
        } else {
            s.x -= dx;
            s.y -= dy;
            s.z += angle;
        }
    }
    // residual angle, second order
    let (x, y) = (s.x, s.y);
    let half_z2 = mul_fixed(s.z, s.z) >> 1;
    s.x = x + mul_fixed(s.z, y) + mul_fixed(half_z2, x);
    s.y = y + mul_fixed(s.z, x) + mul_fixed(half_z2, y);
    s.z = 0;
    s
}

/// Quotient `y / x` for `x > 0` and `|y| ≤ x`, working format.
fn divide(y: i64, x: i64) -> i64 {
    debug_assert!(x > 0);
    let mut rem = y;
    let mut q: i64 = 0;
    for k in 0..=FRAC_BITS {
        let step = x >> k;
        if rem >= 0 {
            rem -= step;
            q += ONE >> k;
        } else {
            rem += step;
            q -= ONE >> k;
        }
    }
    q
}

/// Hyperbolic rotation returning `(sinh θ, cosh θ)`.
pub fn cordic_hyperbolic(theta: f64, cfg: &CordicConfig) -> Result<(f64, f64)> {
    if theta.is_nan() || theta.abs() > THETA_MAX {
        return Err(Error::Domain("hyperbolic CORDIC argument outside [-4, 4]"));
    }
    let (sinh, cosh) = sinh_cosh_fixed(to_fixed(theta), cfg);
    Ok((from_fixed(sinh), from_fixed(cosh)))
}

fn sinh_cosh_fixed(theta: i64, cfg: &CordicConfig) -> (i64, i64) {
    let s = rotate(theta.abs(), cfg);
    if theta < 0 {
        (-s.y, s.x)
    } else {
        (s.y, s.x)
    }
}

/// tanh of `|theta|`, `0 ≤ theta ≤ 4`, working format.
fn tanh_abs_fixed(theta: i64, cfg: &CordicConfig) -> i64 {
    let s = rotate(theta, cfg);
    divide(s.y, s.x)
}

/// `e^x` for `x ∈ [-8, 0]`, working format, via `(cosh(x/2) + sinh(x/2))²`.
fn exp_fixed(x: i64, cfg: &CordicConfig) -> i64 {
    let half = -((-x) >> 1);
    let s = rotate(-half, cfg);
    let e = s.x - s.y;
    mul_fixed(e, e)
}

/// Exponential of a non-positive argument.
pub fn exp_fx(x: f64, cfg: &CordicConfig) -> Result<f64> {
    if x.is_nan() || x > 0.0 {
        return Err(Error::Domain("exp_fx expects x <= 0"));
    }
    if x < EXP_MIN {
        return Err(Error::Domain("exp_fx expects x >= -8"));
    }
    Ok(from_fixed(exp_fixed(to_fixed(x), cfg)))
}

#[inline]
fn requantize_fixed(v: i64, out: QuantParams) -> i32 {
    saturate(round_half_even(from_fixed(v) * out.scale()), out.precision())
}

/// Element-wise tanh; inputs are clamped to ±4.
///
/// Output saturation is symmetric (`±code_max`) so the function stays odd at
/// the code level.
pub fn tanh_fx(x: &QTensor, cfg: &CordicConfig, out: QuantParams) -> QTensor {
    let top = out.precision().code_max();
    map_codes(x, out, |code| {
        let v = dequantize_code(code, x.params()).clamp(-THETA_MAX, THETA_MAX);
        let t = tanh_abs_fixed(to_fixed(v.abs()), cfg);
        requantize_fixed(if v < 0.0 { -t } else { t }, out).max(-top)
    })
}

/// Element-wise logistic sigmoid, `1/2 + tanh(x/2)/2`; inputs clamped to ±8.
pub fn sigmoid_fx(x: &QTensor, cfg: &CordicConfig, out: QuantParams) -> QTensor {
    map_codes(x, out, |code| {
        let v = dequantize_code(code, x.params()).clamp(-2.0 * THETA_MAX, 2.0 * THETA_MAX);
        let t = tanh_abs_fixed(to_fixed(v.abs() * 0.5), cfg);
        let half_t = libm::ldexp(t as f64, -(FRAC_BITS as i32) - 1);
        let s = if v < 0.0 { 0.5 - half_t } else { 0.5 + half_t };
        saturate(round_half_even(s * out.scale()), out.precision())
    })
}

/// Element-wise ReLU on codes; parameters are unchanged.
pub fn relu_fx(x: &QTensor) -> QTensor {
    map_codes(x, x.params(), |c| c.max(0))
}

/// Softmax over all elements of `logits`.
///
/// The maximum is subtracted in the code domain, exponentials are buffered in
/// order and then divided by their sum. Output codes are apportioned by
/// largest remainder so the dequantized sum is within one code of 1.
pub fn softmax_fx(logits: &QTensor, cfg: &CordicConfig, out: QuantParams) -> QTensor {
    let codes = logits.codes();
    if codes.is_empty() {
        return QTensor::zeros(out, logits.shape().to_vec());
    }
    let max = *codes.iter().max().expect("non-empty");
    let mut fifo: VecDeque<i64> = VecDeque::with_capacity(codes.len());
    for &c in codes {
        let d = ((c as i64 - max as i64) as f64 / logits.params().scale()).max(EXP_MIN);
        fifo.push_back(exp_fixed(to_fixed(d), cfg));
    }
    let sum: i64 = fifo.iter().sum();

    let scale = out.scale();
    let mut floors: Vec<i64> = Vec::with_capacity(codes.len());
    let mut rems: Vec<f64> = Vec::with_capacity(codes.len());
    while let Some(e) = fifo.pop_front() {
        let raw = from_fixed(divide(e, sum)) * scale;
        let f = libm::floor(raw);
        floors.push(f as i64);
        rems.push(raw - f);
    }
    let target = round_half_even(scale) as i64;
    let mut need = target - floors.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..floors.len()).collect();
    // stable: ties go to the lower index
    order.sort_by(|&a, &b| rems[b].partial_cmp(&rems[a]).unwrap_or(core::cmp::Ordering::Equal));
    let mut k = 0;
    while need > 0 {
        floors[order[k % order.len()]] += 1;
        need -= 1;
        k += 1;
    }
    let mut k = 0;
    while need < 0 {
        let idx = order[order.len() - 1 - (k % order.len())];
        if floors[idx] > 0 {
            floors[idx] -= 1;
            need += 1;
        }
        k += 1;
    }
    let codes = floors.into_iter().map(|f| saturate(f as f64, out.precision())).collect();
    QTensor::new(codes, out, logits.shape().to_vec()).expect("saturated codes fit")
}

/// Dispatch on [`ActKind`]. ReLU keeps the input parameters and ignores `out`.
pub fn activate(kind: ActKind, x: &QTensor, cfg: &CordicConfig, out: QuantParams) -> QTensor {
    match kind {
        ActKind::ReLU => relu_fx(x),
        ActKind::Sigmoid => sigmoid_fx(x, cfg, out),
        ActKind::Tanh => tanh_fx(x, cfg, out),
        ActKind::Softmax => softmax_fx(x, cfg, out),
    }
}

fn map_codes(x: &QTensor, out: QuantParams, f: impl Fn(i32) -> i32) -> QTensor {
    let codes = x.codes().iter().map(|&c| f(c)).collect();
    QTensor::new(codes, out, x.shape().to_vec()).expect("activation codes are saturated")
}
