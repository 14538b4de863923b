//! Quantized hierarchical policy network.
//!
//! Three stride-2 Q-Conv layers feed a flattened Q-FC that produces a
//! 32-dimensional embedding. A sub-goal module (Q-FC or a K-step Q-LSTM) maps
//! the embedding to a sub-goal vector; `[embedding ‖ subgoal]` goes through the
//! action head and a softmax. Every multiply runs through [`crate::qmac`] and
//! every nonlinearity through [`crate::vact`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fxp::{
    bias_to_product_space, dequantize_code, requantize, round_half_even, saturate, Precision, QTensor, QuantParams,
};
use crate::qmac::{dot_codes, mul_lane, saturating_add, AccumulatorBank, MultiplierKind};
use crate::vact::{self, ActKind, CordicConfig};

/// Convolution stride; max-pooling is replaced by striding.
pub const STRIDE: usize = 2;
/// Width of the image embedding.
pub const EMBED_DIM: usize = 32;

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub out_channels: usize,
    pub kernel: usize,
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubgoalShape {
    Fc { dim: usize, precision: Precision },
    Lstm { hidden: usize, unroll: usize, precision: Precision },
}

impl SubgoalShape {
    pub fn dim(&self) -> usize {
        match *self {
            SubgoalShape::Fc { dim, .. } => dim,
            SubgoalShape::Lstm { hidden, .. } => hidden,
        }
    }

    pub fn precision(&self) -> Precision {
        match *self {
            SubgoalShape::Fc { precision, .. } | SubgoalShape::Lstm { precision, .. } => precision,
        }
    }
}

/// Declarative description of the policy graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// Input image as (height, width, channels).
    pub input: (usize, usize, usize),
    pub conv: Vec<ConvShape>,
    pub embed_dim: usize,
    pub embed_precision: Precision,
    pub subgoal: SubgoalShape,
    pub actions: usize,
    pub head_precision: Precision,
}

/// One layer of a [`NetworkSpec`], with resolved input dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerDesc {
    Conv { name: String, in_h: usize, in_w: usize, in_c: usize, out_c: usize, kernel: usize, precision: Precision },
    Fc { name: String, in_dim: usize, out_dim: usize, activation: ActKind, precision: Precision },
    Lstm { name: String, input: usize, hidden: usize, unroll: usize, precision: Precision },
}

impl LayerDesc {
    pub fn name(&self) -> &str {
        match self {
            LayerDesc::Conv { name, .. } | LayerDesc::Fc { name, .. } | LayerDesc::Lstm { name, .. } => name,
        }
    }

    pub fn precision(&self) -> Precision {
        match *self {
            LayerDesc::Conv { precision, .. } | LayerDesc::Fc { precision, .. } | LayerDesc::Lstm { precision, .. } => {
                precision
            }
        }
    }
}

/// Output side length of a valid stride-2 convolution.
pub fn conv_out_dim(input: usize, kernel: usize) -> usize {
    (input - kernel) / STRIDE + 1
}

impl NetworkSpec {
    /// 32×32×3 input, conv 3×3 with 8/16/16 channels, 32-wide embedding and a
    /// four-way action head.
    pub fn default_with(subgoal: SubgoalShape, precision: Precision) -> Self {
        let conv = [8, 16, 16].iter().map(|&out_channels| ConvShape { out_channels, kernel: 3, precision }).collect();
        Self {
            input: (32, 32, 3),
            conv,
            embed_dim: EMBED_DIM,
            embed_precision: precision,
            subgoal,
            actions: 4,
            head_precision: precision,
        }
    }

    /// Default topology with an FC(32→16, ReLU) sub-goal module.
    pub fn default_fc(precision: Precision) -> Self {
        Self::default_with(SubgoalShape::Fc { dim: 16, precision }, precision)
    }

    /// Default topology with a 16-unit LSTM sub-goal module unrolled K = 4 steps.
    pub fn default_lstm(precision: Precision) -> Self {
        Self::default_with(SubgoalShape::Lstm { hidden: 16, unroll: 4, precision }, precision)
    }

    /// Same topology with every layer at `precision`.
    pub fn with_precision(&self, precision: Precision) -> Self {
        let mut s = self.clone();
        for c in &mut s.conv {
            c.precision = precision;
        }
        s.embed_precision = precision;
        s.head_precision = precision;
        s.subgoal = match s.subgoal {
            SubgoalShape::Fc { dim, .. } => SubgoalShape::Fc { dim, precision },
            SubgoalShape::Lstm { hidden, unroll, .. } => SubgoalShape::Lstm { hidden, unroll, precision },
        };
        s
    }

    pub fn is_lstm(&self) -> bool {
        matches!(self.subgoal, SubgoalShape::Lstm { .. })
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    /// Flattened length after the convolution stack.
    pub fn flat_dim(&self) -> usize {
        let (mut h, mut w, mut c) = self.input;
        for cs in &self.conv {
            h = conv_out_dim(h, cs.kernel);
            w = conv_out_dim(w, cs.kernel);
            c = cs.out_channels;
        }
        h * w * c
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim != EMBED_DIM {
            return Err(Error::Shape(format!("embedding must be {EMBED_DIM} wide, got {}", self.embed_dim)));
        }
        if self.actions == 0 || self.subgoal.dim() == 0 {
            return Err(Error::Shape("empty action head or sub-goal".into()));
        }
        if let SubgoalShape::Lstm { unroll: 0, .. } = self.subgoal {
            return Err(Error::Shape("LSTM unroll K must be at least 1".into()));
        }
        let (mut h, mut w, _) = self.input;
        for (i, cs) in self.conv.iter().enumerate() {
            if cs.kernel == 0 || h < cs.kernel || w < cs.kernel || cs.out_channels == 0 {
                return Err(Error::Shape(format!("conv{i}: {h}x{w} input cannot take a {0}x{0} kernel", cs.kernel)));
            }
            h = conv_out_dim(h, cs.kernel);
            w = conv_out_dim(w, cs.kernel);
        }
        Ok(())
    }

    /// The layer list in execution order.
    pub fn layers(&self) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        let (mut h, mut w, mut c) = self.input;
        for (i, cs) in self.conv.iter().enumerate() {
            out.push(LayerDesc::Conv {
                name: format!("conv{i}"),
                in_h: h,
                in_w: w,
                in_c: c,
                out_c: cs.out_channels,
                kernel: cs.kernel,
                precision: cs.precision,
            });
            h = conv_out_dim(h, cs.kernel);
            w = conv_out_dim(w, cs.kernel);
            c = cs.out_channels;
        }
        out.push(LayerDesc::Fc {
            name: "embed".into(),
            in_dim: h * w * c,
            out_dim: self.embed_dim,
            activation: ActKind::ReLU,
            precision: self.embed_precision,
        });
        out.push(match self.subgoal {
            SubgoalShape::Fc { dim, precision } => LayerDesc::Fc {
                name: "subgoal".into(),
                in_dim: self.embed_dim,
                out_dim: dim,
                activation: ActKind::ReLU,
                precision,
            },
            SubgoalShape::Lstm { hidden, unroll, precision } => {
                LayerDesc::Lstm { name: "subgoal".into(), input: self.embed_dim, hidden, unroll, precision }
            }
        });
        out.push(LayerDesc::Fc {
            name: "head".into(),
            in_dim: self.embed_dim + self.subgoal.dim(),
            out_dim: self.actions,
            activation: ActKind::Softmax,
            precision: self.head_precision,
        });
        out
    }
}

// ---------------------------------------------------------------------------
// Quantized layers
// ---------------------------------------------------------------------------

/// Stride-2 valid convolution with ReLU. Weights are `out × in × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: QTensor,
    pub bias: QTensor,
    pub precision: Precision,
    /// Parameters of the (post-ReLU) output activations.
    pub out_params: QuantParams,
}

impl ConvLayerSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.kernel;
        expect_shape("conv weight", self.weight.shape(), &[self.out_channels, self.in_channels, k, k])?;
        expect_shape("conv bias", self.bias.shape(), &[self.out_channels])?;
        same_precision(self.precision, &[self.weight.precision(), self.bias.precision(), self.out_params.precision()])
    }
}

/// Fully connected layer. Weights are `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: QTensor,
    pub bias: QTensor,
    pub precision: Precision,
    pub activation: ActKind,
    /// Parameters the accumulator is requantized to. For ReLU these are also
    /// the output parameters; sigmoid, tanh and softmax emit at
    /// [`QuantParams::unit`].
    pub out_params: QuantParams,
}

impl FcLayerSpec {
    pub fn validate(&self) -> Result<()> {
        expect_shape("fc weight", self.weight.shape(), &[self.out_dim, self.in_dim])?;
        expect_shape("fc bias", self.bias.shape(), &[self.out_dim])?;
        same_precision(self.precision, &[self.weight.precision(), self.bias.precision(), self.out_params.precision()])
    }

    /// Parameters of the layer's output tensor.
    pub fn output_params(&self) -> QuantParams {
        match self.activation {
            ActKind::ReLU => self.out_params,
            _ => QuantParams::unit(self.precision),
        }
    }
}

/// Gate order used by [`LstmWeights`] arrays.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// LSTM weights; index 0..4 is input, forget, output and candidate gate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input_dim: usize,
    pub hidden: usize,
    pub precision: Precision,
    /// `W_x*`, each `hidden × input`.
    pub wx: [QTensor; 4],
    /// `W_h*`, each `hidden × hidden`.
    pub wh: [QTensor; 4],
    /// `b_*`, each of length `hidden`.
    pub b: [QTensor; 4],
    /// Target of the gate pre-activation requantization.
    pub gate_params: QuantParams,
    /// Cell-state parameters, at FxP16 or wider.
    pub cell_params: QuantParams,
}

impl LstmWeights {
    /// Gate pre-activations are represented on ±8 (the sigmoid clamp).
    pub fn default_gate_params(precision: Precision) -> QuantParams {
        QuantParams::for_range(8.0, precision).expect("positive range")
    }

    /// Cell state on ±8 at `max(precision, FxP16)`.
    pub fn default_cell_params(precision: Precision) -> QuantParams {
        QuantParams::for_range(8.0, cell_precision(precision)).expect("positive range")
    }

    pub fn validate(&self) -> Result<()> {
        for g in 0..4 {
            expect_shape("lstm W_x", self.wx[g].shape(), &[self.hidden, self.input_dim])?;
            expect_shape("lstm W_h", self.wh[g].shape(), &[self.hidden, self.hidden])?;
            expect_shape("lstm bias", self.b[g].shape(), &[self.hidden])?;
            same_precision(self.precision, &[self.wx[g].precision(), self.wh[g].precision(), self.b[g].precision()])?;
        }
        same_precision(self.precision, &[self.gate_params.precision()])?;
        if self.cell_params.precision() != cell_precision(self.precision) {
            return Err(Error::Shape(format!(
                "cell state must be {} for a {} LSTM",
                cell_precision(self.precision),
                self.precision
            )));
        }
        Ok(())
    }
}

/// Cell-state precision: FxP16 at least.
pub fn cell_precision(precision: Precision) -> Precision {
    precision.max(Precision::FxP16)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: QTensor,
    pub c: QTensor,
}

impl LstmState {
    pub fn zeros(w: &LstmWeights) -> Self {
        Self {
            h: QTensor::zeros(QuantParams::unit(w.precision), vec![w.hidden]),
            c: QTensor::zeros(w.cell_params, vec![w.hidden]),
        }
    }
}

// one instance per network; boxing buys nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum SubgoalModule {
    Fc(FcLayerSpec),
    Lstm(LstmWeights),
}

/// A fully quantized policy: topology, weights and activation formats.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub spec: NetworkSpec,
    pub input_params: QuantParams,
    pub conv: Vec<ConvLayerSpec>,
    pub embed: FcLayerSpec,
    pub subgoal: SubgoalModule,
    /// Format of the `[embedding ‖ subgoal]` vector fed to the head.
    pub concat_params: QuantParams,
    pub head: FcLayerSpec,
}

impl QNetwork {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let layers = self.spec.layers();
        if self.conv.len() != self.spec.conv.len() {
            return Err(Error::Shape("conv layer count differs from spec".into()));
        }
        for (layer, desc) in self.conv.iter().zip(&layers) {
            layer.validate()?;
            if let LayerDesc::Conv { in_c, out_c, kernel, precision, .. } = *desc {
                if (layer.in_channels, layer.out_channels, layer.kernel, layer.precision) != (in_c, out_c, kernel, precision) {
                    return Err(Error::Shape(format!("{} does not match spec", desc.name())));
                }
            }
        }
        self.embed.validate()?;
        if self.embed.in_dim != self.spec.flat_dim() || self.embed.out_dim != self.spec.embed_dim {
            return Err(Error::Shape("embedding layer does not match spec".into()));
        }
        match (&self.subgoal, self.spec.subgoal) {
            (SubgoalModule::Fc(fc), SubgoalShape::Fc { dim, .. }) => {
                fc.validate()?;
                if fc.in_dim != self.spec.embed_dim || fc.out_dim != dim {
                    return Err(Error::Shape("sub-goal FC does not match spec".into()));
                }
            }
            (SubgoalModule::Lstm(w), SubgoalShape::Lstm { hidden, .. }) => {
                w.validate()?;
                if w.input_dim != self.spec.embed_dim || w.hidden != hidden {
                    return Err(Error::Shape("sub-goal LSTM does not match spec".into()));
                }
            }
            _ => return Err(Error::Shape("sub-goal variant differs from spec".into())),
        }
        self.head.validate()?;
        if self.head.in_dim != self.spec.embed_dim + self.spec.subgoal.dim() || self.head.out_dim != self.spec.actions {
            return Err(Error::Shape("action head does not match spec".into()));
        }
        if self.head.activation != ActKind::Softmax {
            return Err(Error::Shape("action head must end in softmax".into()));
        }
        Ok(())
    }

    pub fn lstm(&self) -> Option<&LstmWeights> {
        match &self.subgoal {
            SubgoalModule::Lstm(w) => Some(w),
            SubgoalModule::Fc(_) => None,
        }
    }

    /// Quantize an HWC image with the network's input format.
    pub fn quantize_observation(&self, pixels: &[f64]) -> Result<QTensor> {
        let (h, w, c) = self.spec.input;
        crate::fxp::quantize(pixels, self.input_params).reshape(vec![h, w, c])
    }

    /// Fresh recurrent state, if the sub-goal module is an LSTM.
    pub fn initial_state(&self) -> Option<LstmState> {
        self.lstm().map(LstmState::zeros)
    }
}

fn expect_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected {want:?}, found {got:?}")));
    }
    Ok(())
}

fn same_precision(expected: Precision, found: &[Precision]) -> Result<()> {
    match found.iter().find(|&&p| p != expected) {
        Some(&p) => Err(Error::ModeMismatch { expected, found: p }),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Operations executed by one named layer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerOps {
    pub name: String,
    pub mac_ops: u64,
    pub af_ops: u64,
    /// Q-MAC cycles actually issued (one per packed word).
    pub mac_cycles: u64,
}

/// Output of [`Engine::hrl_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct HrlOutput {
    pub action_probs: QTensor,
    pub subgoal: QTensor,
    pub state: Option<LstmState>,
}

/// Execution context: multiplier choice, CORDIC configuration and op counters.
#[derive(Debug, Clone)]
pub struct Engine {
    kind: MultiplierKind,
    cordic: [CordicConfig; 3],
    ops: Vec<LayerOps>,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new(MultiplierKind::Exact)
    }
}

impl Engine {
    pub fn new(kind: MultiplierKind) -> Self {
        Self { kind, cordic: Precision::ALL.map(CordicConfig::for_precision), ops: Vec::new() }
    }

    /// Override the CORDIC configuration used for `precision`.
    pub fn with_cordic(mut self, precision: Precision, cfg: CordicConfig) -> Self {
        self.cordic[precision_index(precision)] = cfg;
        self
    }

    pub fn kind(&self) -> MultiplierKind {
        self.kind
    }

    pub fn cordic(&self, precision: Precision) -> &CordicConfig {
        &self.cordic[precision_index(precision)]
    }

    /// Per-layer counts recorded since the last call; resets the counters.
    pub fn take_ops(&mut self) -> Vec<LayerOps> {
        core::mem::take(&mut self.ops)
    }

    pub fn ops(&self) -> &[LayerOps] {
        &self.ops
    }

    /// Start attributing operations to `name`.
    pub fn begin_layer(&mut self, name: &str) {
        self.ops.push(LayerOps { name: name.into(), ..LayerOps::default() });
    }

    fn current(&mut self) -> &mut LayerOps {
        if self.ops.is_empty() {
            self.begin_layer("");
        }
        self.ops.last_mut().expect("just pushed")
    }

    fn dot(&mut self, a: &[i32], b: &[i32], mode: Precision) -> Result<i128> {
        let acc = dot_codes(a, b, mode, self.kind)?;
        let cur = self.current();
        cur.mac_ops += a.len() as u64;
        cur.mac_cycles += crate::qmac::dot_cycles(a.len(), mode) as u64;
        Ok(acc)
    }

    fn count_af(&mut self, n: usize) {
        self.current().af_ops += n as u64;
    }

    /// Valid-padding stride-2 convolution followed by ReLU. Input is HWC.
    #[allow(clippy::needless_range_loop)]
    pub fn conv2d_s2(&mut self, input: &QTensor, spec: &ConvLayerSpec) -> Result<QTensor> {
        spec.validate()?;
        let &[h, w, c] = input.shape() else {
            return Err(Error::Shape(format!("conv input must be HWC, found {:?}", input.shape())));
        };
        let k = spec.kernel;
        if c != spec.in_channels {
            return Err(Error::Shape(format!("conv expects {} input channels, found {c}", spec.in_channels)));
        }
        if h < k || w < k {
            return Err(Error::Shape(format!("conv input {h}x{w} smaller than kernel {k}")));
        }
        let input = to_precision(input, spec.precision);
        let (oh, ow) = (conv_out_dim(h, k), conv_out_dim(w, k));
        let window_len = c * k * k;
        let mut window = vec![0i32; window_len];
        let mut out = Vec::with_capacity(oh * ow * spec.out_channels);
        let bias_ps: Vec<i128> = spec
            .bias
            .codes()
            .iter()
            .map(|&b| bias_to_product_space(b, spec.bias.params(), spec.weight.params(), input.params()))
            .collect();
        let width = AccumulatorBank::width_for(spec.precision);
        let codes = input.codes();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut idx = 0;
                for ch in 0..c {
                    for ky in 0..k {
                        let row = (STRIDE * oy + ky) * w;
                        for kx in 0..k {
                            window[idx] = codes[(row + STRIDE * ox + kx) * c + ch];
                            idx += 1;
                        }
                    }
                }
                for o in 0..spec.out_channels {
                    let wrow = &spec.weight.codes()[o * window_len..(o + 1) * window_len];
                    let acc = saturating_add(self.dot(wrow, &window, spec.precision)?, bias_ps[o], width);
                    let code = requantize(acc, spec.weight.params(), input.params(), spec.out_params);
                    out.push(code.max(0));
                }
            }
        }
        self.count_af(out.len());
        QTensor::new(out, spec.out_params, vec![oh, ow, spec.out_channels])
    }

    /// Fully connected layer: dot + bias, requantize, activation.
    pub fn fc(&mut self, input: &QTensor, spec: &FcLayerSpec) -> Result<QTensor> {
        spec.validate()?;
        if input.len() != spec.in_dim {
            return Err(Error::Shape(format!("fc expects {} inputs, found {}", spec.in_dim, input.len())));
        }
        let input = to_precision(input, spec.precision);
        let width = AccumulatorBank::width_for(spec.precision);
        let mut pre = Vec::with_capacity(spec.out_dim);
        for o in 0..spec.out_dim {
            let wrow = &spec.weight.codes()[o * spec.in_dim..(o + 1) * spec.in_dim];
            let b = bias_to_product_space(spec.bias.codes()[o], spec.bias.params(), spec.weight.params(), input.params());
            let acc = saturating_add(self.dot(wrow, input.codes(), spec.precision)?, b, width);
            pre.push(requantize(acc, spec.weight.params(), input.params(), spec.out_params));
        }
        self.count_af(spec.out_dim);
        let pre = QTensor::vector(pre, spec.out_params)?;
        let cfg = self.cordic(spec.precision).clone();
        Ok(vact::activate(spec.activation, &pre, &cfg, QuantParams::unit(spec.precision)))
    }

    /// One LSTM time step.
    #[allow(clippy::needless_range_loop)]
    pub fn lstm_step(&mut self, x: &QTensor, state: &LstmState, w: &LstmWeights) -> Result<LstmState> {
        w.validate()?;
        if x.len() != w.input_dim || state.h.len() != w.hidden || state.c.len() != w.hidden {
            return Err(Error::Shape(format!(
                "lstm expects x[{}], h[{}], c[{}]; found x[{}], h[{}], c[{}]",
                w.input_dim,
                w.hidden,
                w.hidden,
                x.len(),
                state.h.len(),
                state.c.len()
            )));
        }
        let prec = w.precision;
        let x = to_precision(x, prec);
        let h_prev = to_precision(&state.h, prec);
        let c_prev = state.c.rescale(w.cell_params);
        let n = w.hidden;
        let gate_out = QuantParams::unit(prec);
        let cfg = self.cordic(prec).clone();

        let mut gates: [QTensor; 4] = core::array::from_fn(|_| QTensor::zeros(gate_out, vec![n]));
        for g in 0..4 {
            let mut pre = Vec::with_capacity(n);
            for j in 0..n {
                let wx = &w.wx[g].codes()[j * w.input_dim..(j + 1) * w.input_dim];
                let wh = &w.wh[g].codes()[j * n..(j + 1) * n];
                let ax = self.dot(wx, x.codes(), prec)?;
                let ah = self.dot(wh, h_prev.codes(), prec)?;
                let terms = [
                    (ax, w.wx[g].params().scale() * x.params().scale()),
                    (ah, w.wh[g].params().scale() * h_prev.params().scale()),
                    (w.b[g].codes()[j] as i128, w.b[g].params().scale()),
                ];
                pre.push(requantize_sum(&terms, w.gate_params));
            }
            let pre = QTensor::vector(pre, w.gate_params)?;
            gates[g] = if g == 3 { vact::tanh_fx(&pre, &cfg, gate_out) } else { vact::sigmoid_fx(&pre, &cfg, gate_out) };
        }
        let [i_t, f_t, o_t, g_t] = &gates;

        let cell_prec = w.cell_params.precision();
        let sg = gate_out.scale();
        let sc = w.cell_params.scale();
        let mut c_codes = Vec::with_capacity(n);
        for j in 0..n {
            let fc = mul_lane(f_t.codes()[j], c_prev.codes()[j], cell_prec, self.kind) as i128;
            let ig = mul_lane(i_t.codes()[j], g_t.codes()[j], cell_prec, self.kind) as i128;
            c_codes.push(requantize_sum(&[(fc, sg * sc), (ig, sg * sg)], w.cell_params));
        }
        let c_t = QTensor::vector(c_codes, w.cell_params)?;
        let tc = vact::tanh_fx(&c_t, &cfg, gate_out);
        let h_params = QuantParams::unit(prec);
        let h_codes = (0..n)
            .map(|j| {
                let p = mul_lane(tc.codes()[j], o_t.codes()[j], cell_prec, self.kind) as i128;
                requantize_sum(&[(p, sg * sg)], h_params)
            })
            .collect();
        // 3 sigmoid + 2 tanh + 3 element-wise products per unit
        self.count_af(8 * n);
        Ok(LstmState { h: QTensor::vector(h_codes, h_params)?, c: c_t })
    }

    /// Full forward pass of the hierarchical policy.
    ///
    /// `state` must be present exactly when the sub-goal module is an LSTM; the
    /// LSTM is stepped `K` times on the embedding.
    pub fn hrl_forward(&mut self, obs: &QTensor, net: &QNetwork, state: Option<&LstmState>) -> Result<HrlOutput> {
        let (h, w, c) = net.spec.input;
        if obs.shape() != [h, w, c] {
            return Err(Error::Shape(format!("observation must be {h}x{w}x{c}, found {:?}", obs.shape())));
        }
        let mut x = if obs.params() == net.input_params { obs.clone() } else { obs.rescale(net.input_params) };
        for (i, layer) in net.conv.iter().enumerate() {
            self.begin_layer(&format!("conv{i}"));
            x = self.conv2d_s2(&x, layer)?;
        }
        let flat_len = x.len();
        let flat = x.reshape(vec![flat_len])?;
        self.begin_layer("embed");
        let embedding = self.fc(&flat, &net.embed)?;

        self.begin_layer("subgoal");
        let (subgoal, new_state) = match (&net.subgoal, state, net.spec.subgoal) {
            (SubgoalModule::Fc(fc), None, _) => (self.fc(&embedding, fc)?, None),
            (SubgoalModule::Lstm(lw), Some(s), SubgoalShape::Lstm { unroll, .. }) => {
                let mut s = s.clone();
                for _ in 0..unroll {
                    s = self.lstm_step(&embedding, &s, lw)?;
                }
                (s.h.clone(), Some(s))
            }
            (SubgoalModule::Fc(_), Some(_), _) => {
                return Err(Error::Shape("FC sub-goal module takes no recurrent state".into()))
            }
            _ => return Err(Error::Shape("LSTM sub-goal module needs a recurrent state".into())),
        };

        let mut concat = embedding.rescale(net.concat_params).into_codes();
        concat.extend_from_slice(subgoal.rescale(net.concat_params).codes());
        let concat = QTensor::vector(concat, net.concat_params)?;
        self.begin_layer("head");
        let action_probs = self.fc(&concat, &net.head)?;
        Ok(HrlOutput { action_probs, subgoal, state: new_state })
    }
}

fn precision_index(p: Precision) -> usize {
    match p {
        Precision::FxP8 => 0,
        Precision::FxP16 => 1,
        Precision::FxP32 => 2,
    }
}

fn to_precision(t: &QTensor, p: Precision) -> QTensor {
    if t.precision() == p {
        t.clone()
    } else {
        t.rescale(t.params().at_precision(p))
    }
}

/// Single-rounding requantization of several accumulators, each given with
/// the real scale of its integer domain.
fn requantize_sum(terms: &[(i128, f64)], out: QuantParams) -> i32 {
    let v: f64 = terms.iter().map(|&(acc, scale)| acc as f64 * (out.scale() / scale)).sum();
    saturate(round_half_even(v), out.precision())
}

/// How [`select_action`] picks an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Argmax; ties go to the lowest index.
    Greedy,
    /// Sample from the renormalized distribution with a seeded generator.
    Sample { seed: u64 },
}

/// Pick an action from softmax output codes.
pub fn select_action(probs: &QTensor, selection: Selection) -> usize {
    match selection {
        Selection::Greedy => argmax(probs.codes()),
        Selection::Sample { seed } => {
            let p: Vec<f64> = probs.codes().iter().map(|&c| dequantize_code(c.max(0), probs.params())).collect();
            let total: f64 = p.iter().sum();
            if total <= 0.0 {
                return argmax(probs.codes());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = (rng.next_u64() >> 11) as f64 * libm::ldexp(1.0, -53) * total;
            let mut cum = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                cum += pi;
                if u < cum {
                    return i;
                }
            }
            // rounding at the top end: last nonzero entry
            p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
        }
    }
}

/// Index of the largest code, lowest index on ties.
pub fn argmax(codes: &[i32]) -> usize {
    let mut best = 0;
    for (i, &c) in codes.iter().enumerate() {
        if c > codes[best] {
            best = i;
        }
    }
    best
}
