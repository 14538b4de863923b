//! Verification suites: Q-MAC against wide-integer oracles, the approximate
//! multiplier's error profile, and activation error tables.

use qforce_core::fxp::{dequantize_code, quantize};
use qforce_core::qmac::{
    dot_codes, mul16_composed, mul32_composed, mul8, AccumulatorBank, MultiplierKind, SimdWord,
};
use qforce_core::vact::{sigmoid_fx, tanh_fx, CordicConfig};
use qforce_core::{Precision, QuantParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Outcome of one verification suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suite {
    pub name: String,
    pub cases: u64,
    pub mismatches: u64,
}

impl Suite {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

fn run(name: &str, cases: impl Iterator<Item = bool>) -> Suite {
    let (mut n, mut bad) = (0, 0);
    for ok in cases {
        n += 1;
        bad += u64::from(!ok);
    }
    Suite { name: name.into(), cases: n, mismatches: bad }
}

/// All 65,536 signed 8-bit pairs.
pub fn mul8_exhaustive() -> Suite {
    run(
        "mul8_exhaustive",
        (-128i32..=127).flat_map(|a| {
            (-128i32..=127).map(move |b| mul8(a as i8, b as i8, MultiplierKind::Exact) as i32 == a * b)
        }),
    )
}

/// Codes at byte boundaries and the extremes of a `bits`-wide signed type.
pub fn corner_codes(bits: u32) -> Vec<i64> {
    let min = -(1i64 << (bits - 1));
    let max = (1i64 << (bits - 1)) - 1;
    let mut v = vec![min, min + 1, -1, 0, 1, max - 1, max];
    for k in (8..bits).step_by(8) {
        for c in [(1i64 << k) - 1, 1i64 << k, -(1i64 << k), -(1i64 << k) + 1, (1 << k) + 0x7f, 0x80 << (k - 8)] {
            if (min..=max).contains(&c) {
                v.push(c);
            }
        }
    }
    v.sort_unstable();
    v.dedup();
    v
}

/// `samples` random pairs plus all corner cross-products at 16 bits.
pub fn mul16_random(samples: u64, seed: u64) -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corners = corner_codes(16);
    let corner_pairs: Vec<(i16, i16)> =
        corners.iter().flat_map(|&a| corners.iter().map(move |&b| (a as i16, b as i16))).collect();
    let random = (0..samples).map(move |_| (rng.random::<i16>(), rng.random::<i16>()));
    run("mul16_composed", corner_pairs.into_iter().chain(random).map(|(a, b)| mul16_composed(a, b) == a as i32 * b as i32))
}

/// `samples` random pairs plus all corner cross-products at 32 bits.
pub fn mul32_random(samples: u64, seed: u64) -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3232);
    let corners = corner_codes(32);
    let corner_pairs: Vec<(i32, i32)> =
        corners.iter().flat_map(|&a| corners.iter().map(move |&b| (a as i32, b as i32))).collect();
    let random = (0..samples).map(move |_| (rng.random::<i32>(), rng.random::<i32>()));
    run("mul32_composed", corner_pairs.into_iter().chain(random).map(|(a, b)| mul32_composed(a, b) == a as i64 * b as i64))
}

fn random_code<R: Rng>(rng: &mut R, mode: Precision) -> i32 {
    rng.random_range(mode.code_min()..=mode.code_max())
}

fn clamp_to(v: i128, width: u32) -> i128 {
    if width >= 128 {
        return v;
    }
    v.clamp(-(1i128 << (width - 1)), (1i128 << (width - 1)) - 1)
}

/// Scalar model of one lane: `acc ← clamp(acc + a·b)` with plain integer
/// products at the accumulator width.
fn scalar_step(acc: i128, a: i32, b: i32, width: u32) -> i128 {
    clamp_to(acc.saturating_add(a as i128 * b as i128), width)
}

/// `sequences` random packed MAC sequences (1–8 cycles, preloaded
/// accumulators near the saturation bounds) against per-lane scalar
/// computation, then the same number of dot products of random length with a
/// zero-padded tail.
pub fn simd_lanes(mode: Precision, sequences: u64, seed: u64) -> Result<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mode.bits() as u64);
    let lanes = mode.lane_count();
    let width = AccumulatorBank::width_for(mode);
    let lim = 1i128 << (width - 2);
    let mut results = Vec::with_capacity(2 * sequences as usize);
    for s in 0..sequences {
        let preload: Vec<i128> = (0..lanes)
            .map(|_| match s % 3 {
                0 => 0,
                1 => rng.random_range(-1000..1000),
                _ => {
                    let edge = clamp_to(i128::MAX, width);
                    if rng.random_bool(0.5) { edge - rng.random_range(0..1 << 20) } else { -edge + rng.random_range(0..1 << 20) }
                }
            })
            .collect();
        let mut bank = AccumulatorBank::from_values(&preload, mode)?;
        let mut model = preload.clone();
        for _ in 0..rng.random_range(1..=8) {
            let a: Vec<i32> = (0..lanes).map(|_| random_code(&mut rng, mode)).collect();
            let b: Vec<i32> = (0..lanes).map(|_| random_code(&mut rng, mode)).collect();
            bank.mac(&SimdWord::pack(&a, mode)?, &SimdWord::pack(&b, mode)?, MultiplierKind::Exact)?;
            for i in 0..lanes {
                model[i] = scalar_step(model[i], a[i], b[i], width);
            }
        }
        results.push(bank.values() == model.as_slice());

        let len = rng.random_range(1..=4 * lanes + 3);
        let a: Vec<i32> = (0..len).map(|_| random_code(&mut rng, mode)).collect();
        let b: Vec<i32> = (0..len).map(|_| random_code(&mut rng, mode)).collect();
        let mut per_lane = vec![0i128; lanes];
        for i in 0..len {
            per_lane[i % lanes] = scalar_step(per_lane[i % lanes], a[i], b[i], width);
        }
        let want = per_lane.iter().fold(0i128, |s, &v| clamp_to(s.saturating_add(v), width));
        let got = dot_codes(&a, &b, mode, MultiplierKind::Exact)?;
        // unsaturated dot products must equal the exact sum as well
        let exact: i128 = a.iter().zip(&b).map(|(&x, &y)| x as i128 * y as i128).sum();
        results.push(got == want && (exact.abs() >= lim || got == exact));
    }
    Ok(run(&format!("simd_lanes_{}", mode.bits()), results.into_iter()))
}

/// Worst and mean relative error of the approximate 8-bit multiplier over all
/// pairs with a nonzero exact product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitchellProfile {
    pub worst: f64,
    pub mean: f64,
    /// True if no product exceeds the exact value.
    pub never_over: bool,
}

pub fn mitchell_profile() -> MitchellProfile {
    let (mut worst, mut sum, mut n, mut never_over) = (0.0f64, 0.0, 0u64, true);
    for a in -128i32..=127 {
        for b in -128i32..=127 {
            let exact = a * b;
            if exact == 0 {
                continue;
            }
            let approx = mul8(a as i8, b as i8, MultiplierKind::MitchellLog) as i32;
            never_over &= approx.abs() <= exact.abs();
            let e = (approx - exact).abs() as f64 / exact.abs() as f64;
            worst = worst.max(e);
            sum += e;
            n += 1;
        }
    }
    MitchellProfile { worst, mean: sum / n as f64, never_over }
}

/// Dot-product quality of results of the approximate multiplier:
/// mean over `vectors` of `1 − |approx − exact| / |exact|`.
///
/// Vectors hold nonzero FxP8 codes of length `len`; element signs are drawn
/// so every product is positive, which keeps `|exact|` away from zero.
pub fn dot_qor(vectors: usize, len: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = Precision::FxP8;
    let mut total = 0.0;
    for _ in 0..vectors {
        let mut a = Vec::with_capacity(len);
        let mut b = Vec::with_capacity(len);
        for _ in 0..len {
            let sign = if rng.random_bool(0.5) { 1 } else { -1 };
            a.push(sign * rng.random_range(1..=127));
            b.push(sign * rng.random_range(1..=127));
        }
        let exact = dot_codes(&a, &b, mode, MultiplierKind::Exact)? as f64;
        let approx = dot_codes(&a, &b, mode, MultiplierKind::MitchellLog)? as f64;
        total += 1.0 - (approx - exact).abs() / exact.abs();
    }
    Ok(total / vectors as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpKind {
    Tanh,
    Sigmoid,
}

impl DumpKind {
    pub fn name(self) -> &'static str {
        match self {
            DumpKind::Tanh => "tanh",
            DumpKind::Sigmoid => "sigmoid",
        }
    }
}

/// One row of the activation error table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VactRow {
    pub kind: DumpKind,
    pub precision: Precision,
    pub x: f64,
    pub fixed: f64,
    pub oracle: f64,
    pub error: f64,
}

/// Activation outputs on `x = k/256`, `k ∈ [−1024, 1024]`, against `f64`.
/// Inputs are exact at that resolution; outputs use the unit format of `precision`.
pub fn vact_table(kind: DumpKind, precision: Precision) -> Vec<VactRow> {
    let xs: Vec<f64> = (-1024..=1024).map(|k| k as f64 / 256.0).collect();
    let inp = QuantParams::new(256.0, Precision::FxP32).expect("valid scale");
    let out = QuantParams::unit(precision);
    let cfg = CordicConfig::for_precision(precision);
    let x = quantize(&xs, inp);
    let y = match kind {
        DumpKind::Tanh => tanh_fx(&x, &cfg, out),
        DumpKind::Sigmoid => sigmoid_fx(&x, &cfg, out),
    };
    xs.iter()
        .zip(y.codes())
        .map(|(&x, &c)| {
            let fixed = dequantize_code(c, out);
            let oracle = match kind {
                DumpKind::Tanh => x.tanh(),
                DumpKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            };
            VactRow { kind, precision, x, fixed, oracle, error: (fixed - oracle).abs() }
        })
        .collect()
}
