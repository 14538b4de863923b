//! Float reference implementation of the policy graph, with gradients.
//!
//! Layout conventions match the quantized engine: images are HWC, conv
//! weights are `out × in × k × k`, dense weights are `out × in`, and the
//! LSTM gate order is input, forget, output, candidate.

use qforce_core::qnet::{conv_out_dim, LayerDesc, NetworkSpec, SubgoalShape, GATES, STRIDE};
use rand::Rng;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim).map(|o| self.b[o] + dot(&self.w[o * self.in_dim..(o + 1) * self.in_dim], x)).collect()
    }

    fn backward(&self, x: &[f64], dy: &[f64], g: &mut Dense, mut dx: Option<&mut [f64]>) {
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.b[o] += d;
            let row = o * self.in_dim..(o + 1) * self.in_dim;
            for (gw, &xi) in g.w[row.clone()].iter_mut().zip(x) {
                *gw += d * xi;
            }
            if let Some(dx) = dx.as_deref_mut() {
                for (dxi, &wi) in dx.iter_mut().zip(&self.w[row]) {
                    *dxi += d * wi;
                }
            }
        }
    }
}

/// Stride-2 valid convolution followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv {
    pub fn zeros(in_c: usize, out_c: usize, k: usize) -> Self {
        Self { in_c, out_c, k, w: vec![0.0; out_c * in_c * k * k], b: vec![0.0; out_c] }
    }

    /// Input offsets of the receptive field of output `(oy, ox)` in weight order.
    fn window(&self, w: usize, oy: usize, ox: usize, idx: &mut Vec<usize>) {
        idx.clear();
        for ch in 0..self.in_c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    idx.push(((STRIDE * oy + ky) * w + STRIDE * ox + kx) * self.in_c + ch);
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = (conv_out_dim(h, self.k), conv_out_dim(w, self.k));
        let n = self.in_c * self.k * self.k;
        let mut idx = Vec::with_capacity(n);
        let mut patch = vec![0.0; n];
        let mut out = Vec::with_capacity(oh * ow * self.out_c);
        for oy in 0..oh {
            for ox in 0..ow {
                self.window(w, oy, ox, &mut idx);
                for (p, &i) in patch.iter_mut().zip(&idx) {
                    *p = x[i];
                }
                for o in 0..self.out_c {
                    out.push((self.b[o] + dot(&self.w[o * n..(o + 1) * n], &patch)).max(0.0));
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(&self, x: &[f64], h: usize, w: usize, y: &[f64], dy: &[f64], g: &mut Conv, mut dx: Option<&mut [f64]>) {
        let ow = conv_out_dim(w, self.k);
        let oh = conv_out_dim(h, self.k);
        let n = self.in_c * self.k * self.k;
        let mut idx = Vec::with_capacity(n);
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (oy * ow + ox) * self.out_c;
                if (0..self.out_c).all(|o| y[base + o] <= 0.0 || dy[base + o] == 0.0) {
                    continue;
                }
                self.window(w, oy, ox, &mut idx);
                for o in 0..self.out_c {
                    let d = dy[base + o];
                    if y[base + o] <= 0.0 || d == 0.0 {
                        continue;
                    }
                    g.b[o] += d;
                    let row = o * n..(o + 1) * n;
                    for (gw, &i) in g.w[row.clone()].iter_mut().zip(&idx) {
                        *gw += d * x[i];
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        for (&wi, &i) in self.w[row].iter().zip(&idx) {
                            dx[i] += d * wi;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    pub unroll: usize,
    pub wx: [Vec<f64>; 4],
    pub wh: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
}

#[derive(Debug, Clone)]
pub struct LstmStep {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Gate pre-activations.
    pub z: [Vec<f64>; 4],
    /// Gate outputs: σ for i, f, o and tanh for g.
    pub a: [Vec<f64>; 4],
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize, unroll: usize) -> Self {
        Self {
            input,
            hidden,
            unroll,
            wx: core::array::from_fn(|_| vec![0.0; hidden * input]),
            wh: core::array::from_fn(|_| vec![0.0; hidden * hidden]),
            b: core::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let (m, n) = (self.input, self.hidden);
        let z: [Vec<f64>; 4] = core::array::from_fn(|g| {
            (0..n)
                .map(|j| self.b[g][j] + dot(&self.wx[g][j * m..(j + 1) * m], x) + dot(&self.wh[g][j * n..(j + 1) * n], h_prev))
                .collect()
        });
        let a: [Vec<f64>; 4] =
            core::array::from_fn(|g| z[g].iter().map(|&v| if g == 3 { v.tanh() } else { sigmoid(v) }).collect());
        let c: Vec<f64> = (0..n).map(|j| a[1][j] * c_prev[j] + a[0][j] * a[3][j]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = (0..n).map(|j| a[2][j] * tanh_c[j]).collect();
        LstmStep { h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), z, a, c, tanh_c, h }
    }

    /// `unroll` steps on a constant input from a zero state.
    pub fn forward(&self, x: &[f64]) -> Vec<LstmStep> {
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(self.unroll);
        for _ in 0..self.unroll {
            let s = self.step(x, &h, &c);
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            steps.push(s);
        }
        steps
    }

    #[allow(clippy::needless_range_loop)]
    fn backward(&self, x: &[f64], steps: &[LstmStep], dh_out: &[f64], g: &mut Lstm, dx: &mut [f64]) {
        let (m, n) = (self.input, self.hidden);
        let mut dh = dh_out.to_vec();
        let mut dc = vec![0.0; n];
        for s in steps.iter().rev() {
            let mut dz: [Vec<f64>; 4] = core::array::from_fn(|_| vec![0.0; n]);
            for j in 0..n {
                let (i, f, o, gg) = (s.a[0][j], s.a[1][j], s.a[2][j], s.a[3][j]);
                let d_o = dh[j] * s.tanh_c[j];
                dc[j] += dh[j] * o * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                dz[0][j] = dc[j] * gg * i * (1.0 - i);
                dz[1][j] = dc[j] * s.c_prev[j] * f * (1.0 - f);
                dz[2][j] = d_o * o * (1.0 - o);
                dz[3][j] = dc[j] * i * (1.0 - gg * gg);
                dc[j] *= f;
            }
            let mut dh_prev = vec![0.0; n];
            for gate in 0..4 {
                for j in 0..n {
                    let d = dz[gate][j];
                    if d == 0.0 {
                        continue;
                    }
                    g.b[gate][j] += d;
                    for i in 0..m {
                        g.wx[gate][j * m + i] += d * x[i];
                        dx[i] += d * self.wx[gate][j * m + i];
                    }
                    for i in 0..n {
                        g.wh[gate][j * n + i] += d * s.h_prev[i];
                        dh_prev[i] += d * self.wh[gate][j * n + i];
                    }
                }
            }
            dh = dh_prev;
        }
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Subgoal {
    Fc(Dense),
    Lstm(Lstm),
}

/// Float policy with the same topology as the quantized network.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatNet {
    pub spec: NetworkSpec,
    pub conv: Vec<Conv>,
    pub embed: Dense,
    pub subgoal: Subgoal,
    pub head: Dense,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Vec<f64>,
    /// Post-ReLU output of each conv layer.
    pub conv: Vec<Vec<f64>>,
    /// Post-ReLU embedding.
    pub embed: Vec<f64>,
    /// Sub-goal vector (post-ReLU FC output or final LSTM `h`).
    pub subgoal: Vec<f64>,
    pub lstm: Vec<LstmStep>,
    pub concat: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl FloatNet {
    /// All-zero parameters.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut conv = Vec::new();
        let mut dense = Vec::new();
        let mut subgoal = None;
        for layer in spec.layers() {
            match layer {
                LayerDesc::Conv { in_c, out_c, kernel, .. } => conv.push(Conv::zeros(in_c, out_c, kernel)),
                LayerDesc::Fc { name, in_dim, out_dim, .. } if name == "subgoal" => {
                    subgoal = Some(Subgoal::Fc(Dense::zeros(in_dim, out_dim)))
                }
                LayerDesc::Fc { in_dim, out_dim, .. } => dense.push(Dense::zeros(in_dim, out_dim)),
                LayerDesc::Lstm { input, hidden, unroll, .. } => {
                    subgoal = Some(Subgoal::Lstm(Lstm::zeros(input, hidden, unroll)))
                }
            }
        }
        let head = dense.pop().expect("head layer");
        let embed = dense.pop().expect("embedding layer");
        Ok(Self { spec: spec.clone(), conv, embed, subgoal: subgoal.expect("sub-goal layer"), head })
    }

    /// He-uniform initialization for ReLU layers, `±1/√hidden` for the LSTM,
    /// a small head so the initial policy is close to uniform. Biases start at 0.
    pub fn init<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut fill = |v: &mut Vec<f64>, bound: f64| v.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        for c in &mut net.conv {
            fill(&mut c.w, he(c.in_c * c.k * c.k));
        }
        fill(&mut net.embed.w, he(net.embed.in_dim));
        match &mut net.subgoal {
            Subgoal::Fc(d) => fill(&mut d.w, he(d.in_dim)),
            Subgoal::Lstm(l) => {
                let bound = 1.0 / (l.hidden as f64).sqrt();
                for g in 0..4 {
                    fill(&mut l.wx[g], bound);
                    fill(&mut l.wh[g], bound);
                }
            }
        }
        fill(&mut net.head.w, 0.1 * he(net.head.in_dim));
        Ok(net)
    }

    pub fn forward(&self, obs: &[f64]) -> Trace {
        let (mut h, mut w, _) = self.spec.input;
        let mut conv = Vec::with_capacity(self.conv.len());
        let mut x = obs;
        for layer in &self.conv {
            conv.push(layer.forward(x, h, w));
            h = conv_out_dim(h, layer.k);
            w = conv_out_dim(w, layer.k);
            x = conv.last().expect("just pushed");
        }
        let embed = relu(self.embed.forward(x));
        let (subgoal, lstm) = match &self.subgoal {
            Subgoal::Fc(d) => (relu(d.forward(&embed)), Vec::new()),
            Subgoal::Lstm(l) => {
                let steps = l.forward(&embed);
                (steps.last().map(|s| s.h.clone()).unwrap_or_else(|| vec![0.0; l.hidden]), steps)
            }
        };
        let concat: Vec<f64> = embed.iter().chain(&subgoal).copied().collect();
        let logits = self.head.forward(&concat);
        let probs = softmax(&logits);
        Trace { input: obs.to_vec(), conv, embed, subgoal, lstm, concat, logits, probs }
    }

    /// Accumulate into `grads` the gradient of a loss whose derivative with
    /// respect to the logits is `dlogits`.
    pub fn backward(&self, trace: &Trace, dlogits: &[f64], grads: &mut FloatNet) {
        let mut dconcat = vec![0.0; self.head.in_dim];
        self.head.backward(&trace.concat, dlogits, &mut grads.head, Some(&mut dconcat));
        let e = self.embed.out_dim;
        let mut dembed = dconcat[..e].to_vec();
        let dsub = &dconcat[e..];
        match (&self.subgoal, &mut grads.subgoal) {
            (Subgoal::Fc(d), Subgoal::Fc(g)) => {
                let dpre = relu_grad(&trace.subgoal, dsub);
                d.backward(&trace.embed, &dpre, g, Some(&mut dembed));
            }
            (Subgoal::Lstm(l), Subgoal::Lstm(g)) => l.backward(&trace.embed, &trace.lstm, dsub, g, &mut dembed),
            _ => unreachable!("gradient buffer has the network's topology"),
        }
        let dpre = relu_grad(&trace.embed, &dembed);
        let flat = trace.conv.last().map_or(&trace.input, |v| v);
        let mut dx = vec![0.0; flat.len()];
        self.embed.backward(flat, &dpre, &mut grads.embed, Some(&mut dx));

        let mut dims = vec![(self.spec.input.0, self.spec.input.1)];
        for c in &self.conv {
            let &(h, w) = dims.last().expect("non-empty");
            dims.push((conv_out_dim(h, c.k), conv_out_dim(w, c.k)));
        }
        for i in (0..self.conv.len()).rev() {
            let x = if i == 0 { &trace.input } else { &trace.conv[i - 1] };
            let (h, w) = dims[i];
            let mut dprev = if i > 0 { Some(vec![0.0; x.len()]) } else { None };
            self.conv[i].backward(x, h, w, &trace.conv[i], &dx, &mut grads.conv[i], dprev.as_deref_mut());
            if let Some(d) = dprev {
                dx = d;
            }
        }
    }

    /// Parameter tensors with names and shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.w"), vec![c.out_c, c.in_c, c.k, c.k], &c.w));
            out.push((format!("conv{i}.b"), vec![c.out_c], &c.b));
        }
        out.push(("embed.w".into(), vec![self.embed.out_dim, self.embed.in_dim], &self.embed.w));
        out.push(("embed.b".into(), vec![self.embed.out_dim], &self.embed.b));
        match &self.subgoal {
            Subgoal::Fc(d) => {
                out.push(("subgoal.w".into(), vec![d.out_dim, d.in_dim], &d.w));
                out.push(("subgoal.b".into(), vec![d.out_dim], &d.b));
            }
            Subgoal::Lstm(l) => {
                for (g, name) in GATES.iter().enumerate() {
                    out.push((format!("subgoal.wx.{name}"), vec![l.hidden, l.input], &l.wx[g]));
                    out.push((format!("subgoal.wh.{name}"), vec![l.hidden, l.hidden], &l.wh[g]));
                    out.push((format!("subgoal.b.{name}"), vec![l.hidden], &l.b[g]));
                }
            }
        }
        out.push(("head.w".into(), vec![self.head.out_dim, self.head.in_dim], &self.head.w));
        out.push(("head.b".into(), vec![self.head.out_dim], &self.head.b));
        out
    }

    /// Mutable parameter tensors in the order of [`FloatNet::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        out.push(&mut self.embed.w);
        out.push(&mut self.embed.b);
        match &mut self.subgoal {
            Subgoal::Fc(d) => {
                out.push(&mut d.w);
                out.push(&mut d.b);
            }
            Subgoal::Lstm(l) => {
                for ((wx, wh), b) in l.wx.iter_mut().zip(l.wh.iter_mut()).zip(l.b.iter_mut()) {
                    out.push(wx);
                    out.push(wh);
                    out.push(b);
                }
            }
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    /// Rebuild from named tensors; every tensor must be present with the
    /// shape implied by `spec`.
    pub fn from_tensors<'a>(spec: &NetworkSpec, mut lookup: impl FnMut(&str) -> Option<(&'a [usize], &'a [f64])>) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let expected: Vec<(String, Vec<usize>)> = net.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        for ((name, shape), slot) in expected.iter().zip(net.tensors_mut()) {
            let (got_shape, data) =
                lookup(name).ok_or_else(|| HarnessError::format("float weights", format!("missing tensor {name}")))?;
            if got_shape != shape.as_slice() || data.len() != slot.len() {
                return Err(HarnessError::format(
                    "float weights",
                    format!("{name}: expected shape {shape:?}, found {got_shape:?}"),
                ));
            }
            slot.copy_from_slice(data);
        }
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn is_lstm(&self) -> bool {
        matches!(self.spec.subgoal, SubgoalShape::Lstm { .. })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn relu_grad(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(&y, &d)| if y > 0.0 { d } else { 0.0 }).collect()
}
