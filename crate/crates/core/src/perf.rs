//! Analytic cycle and throughput model of the accelerator.
//!
//! The model is compute-bound: memory traffic contributes no stall cycles.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fxp::Precision;
use crate::qnet::{conv_out_dim, LayerDesc, NetworkSpec};
use crate::vact::{latency_cycles, CordicConfig};

/// Clock used when none is given, in MHz.
pub const DEFAULT_FREQ_MHZ: f64 = 232.0;
pub const MAX_PES: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HwConfig {
    pub num_pes: u32,
    pub precision: Precision,
    pub freq_mhz: f64,
    /// Total hyperbolic CORDIC iterations per activation.
    pub cordic_n: usize,
}

impl HwConfig {
    /// Default clock and the default CORDIC budget for `precision`.
    pub fn new(num_pes: u32, precision: Precision) -> Result<Self> {
        let hw = Self {
            num_pes,
            precision,
            freq_mhz: DEFAULT_FREQ_MHZ,
            cordic_n: CordicConfig::for_precision(precision).iterations(),
        };
        hw.validate()?;
        Ok(hw)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_PES).contains(&self.num_pes) {
            return Err(Error::Domain("number of PEs must be in 1..=8"));
        }
        if !(self.freq_mhz.is_finite() && self.freq_mhz > 0.0) {
            return Err(Error::Domain("clock frequency must be positive"));
        }
        CordicConfig::hyperbolic(self.cordic_n)?;
        Ok(())
    }

    /// Latency of one activation on the configured CORDIC core.
    pub fn af_latency(&self) -> u64 {
        // validated configs always build
        CordicConfig::hyperbolic(self.cordic_n).map(|c| latency_cycles(&c)).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPerf {
    pub name: String,
    pub mac_ops: u64,
    pub af_ops: u64,
    pub mac_cycles: u64,
    pub af_cycles: u64,
}

impl LayerPerf {
    pub fn cycles(&self) -> u64 {
        self.mac_cycles + self.af_cycles
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfReport {
    pub hw: HwConfig,
    pub layers: Vec<LayerPerf>,
    pub mac_ops: u64,
    pub af_ops: u64,
    pub mac_cycles: u64,
    pub af_cycles: u64,
    pub fps: f64,
    pub gops: f64,
    /// Always true: no memory stalls are modelled.
    pub compute_bound: bool,
}

impl PerfReport {
    pub fn total_cycles(&self) -> u64 {
        self.mac_cycles + self.af_cycles
    }
}

/// `(mac_ops, af_ops)` for one LSTM time step.
pub fn lstm_step_ops(input: usize, hidden: usize) -> (u64, u64) {
    let (m, n) = (input as u64, hidden as u64);
    // 3 sigmoid + 2 tanh + 3 element-wise products per unit
    (4 * n * (m + n), 8 * n)
}

/// `(mac_ops, af_ops)` of one layer. LSTM layers count all `K` unrolled steps.
pub fn layer_ops(layer: &LayerDesc) -> (u64, u64) {
    match *layer {
        LayerDesc::Conv { in_h, in_w, in_c, out_c, kernel, .. } => {
            let outputs = (conv_out_dim(in_h, kernel) * conv_out_dim(in_w, kernel) * out_c) as u64;
            (outputs * (kernel * kernel * in_c) as u64, outputs)
        }
        LayerDesc::Fc { in_dim, out_dim, .. } => ((in_dim * out_dim) as u64, out_dim as u64),
        LayerDesc::Lstm { input, hidden, unroll, .. } => {
            let (m, a) = lstm_step_ops(input, hidden);
            (m * unroll as u64, a * unroll as u64)
        }
    }
}

/// Cycle estimate of `net` with every layer executed at `hw.precision`.
pub fn estimate(net: &NetworkSpec, hw: &HwConfig) -> Result<PerfReport> {
    net.validate()?;
    hw.validate()?;
    let lanes_pes = (hw.precision.lane_count() as u64) * hw.num_pes as u64;
    let pes = hw.num_pes as u64;
    let latency = hw.af_latency();
    let layers: Vec<LayerPerf> = net
        .layers()
        .iter()
        .map(|l| {
            let (mac_ops, af_ops) = layer_ops(l);
            LayerPerf {
                name: l.name().into(),
                mac_ops,
                af_ops,
                mac_cycles: mac_ops.div_ceil(lanes_pes),
                af_cycles: (af_ops * latency).div_ceil(pes),
            }
        })
        .collect();
    let mac_ops = layers.iter().map(|l| l.mac_ops).sum();
    let af_ops = layers.iter().map(|l| l.af_ops).sum();
    let mac_cycles = layers.iter().map(|l| l.mac_cycles).sum();
    let af_cycles = layers.iter().map(|l| l.af_cycles).sum();
    let total = (mac_cycles + af_cycles) as f64;
    let fps = hw.freq_mhz * 1e6 / total;
    let gops = 2.0 * mac_ops as f64 * fps / 1e9;
    Ok(PerfReport { hw: *hw, layers, mac_ops, af_ops, mac_cycles, af_cycles, fps, gops, compute_bound: true })
}

/// One report per `(precision, pes)` pair, precision-major.
pub fn sweep(net: &NetworkSpec, pes: &[u32], precisions: &[Precision], freq_mhz: f64) -> Result<Vec<PerfReport>> {
    let mut rows = Vec::with_capacity(pes.len() * precisions.len());
    for &p in precisions {
        for &n in pes {
            let mut hw = HwConfig::new(n, p)?;
            hw.freq_mhz = freq_mhz;
            rows.push(estimate(net, &hw)?);
        }
    }
    Ok(rows)
}
