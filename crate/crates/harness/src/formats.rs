//! On-disk formats: network spec (TOML), float weights (JSON) and the
//! quantized weight file (binary).

use std::path::Path;

use qforce_core::qnet::{
    ConvLayerSpec, ConvShape, FcLayerSpec, LstmWeights, NetworkSpec, QNetwork, SubgoalModule, SubgoalShape, GATES,
};
use qforce_core::vact::ActKind;
use qforce_core::{Precision, QTensor, QuantParams};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::oracle::FloatNet;

// ---------------------------------------------------------------------------
// Network spec
// ---------------------------------------------------------------------------

/// TOML schema of a [`NetworkSpec`].
///
/// ```toml
/// input = [32, 32, 3]
/// precision = 16
/// actions = 4
///
/// [[conv]]
/// out_channels = 8
/// kernel = 3
///
/// [embed]
/// dim = 32
///
/// [subgoal]
/// variant = "lstm"
/// hidden = 16
/// unroll = 4
/// ```
///
/// Every layer table accepts an optional `precision` overriding the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub input: [usize; 3],
    pub precision: u32,
    #[serde(default = "default_actions")]
    pub actions: usize,
    pub conv: Vec<ConvEntry>,
    pub embed: EmbedEntry,
    pub subgoal: SubgoalEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_precision: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvEntry {
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedEntry {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
pub enum SubgoalEntry {
    Fc {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        precision: Option<u32>,
    },
    Lstm {
        hidden: usize,
        unroll: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        precision: Option<u32>,
    },
}

fn default_actions() -> usize {
    4
}

impl SpecFile {
    pub fn to_spec(&self) -> Result<NetworkSpec> {
        let base = Precision::from_bits(self.precision)?;
        let p = |o: Option<u32>| o.map_or(Ok(base), Precision::from_bits);
        let conv = self
            .conv
            .iter()
            .map(|c| Ok(ConvShape { out_channels: c.out_channels, kernel: c.kernel, precision: p(c.precision)? }))
            .collect::<Result<Vec<_>>>()?;
        let subgoal = match self.subgoal {
            SubgoalEntry::Fc { dim, precision } => SubgoalShape::Fc { dim, precision: p(precision)? },
            SubgoalEntry::Lstm { hidden, unroll, precision } => {
                SubgoalShape::Lstm { hidden, unroll, precision: p(precision)? }
            }
        };
        let spec = NetworkSpec {
            input: (self.input[0], self.input[1], self.input[2]),
            conv,
            embed_dim: self.embed.dim,
            embed_precision: p(self.embed.precision)?,
            subgoal,
            actions: self.actions,
            head_precision: p(self.head_precision)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Layer precisions equal to the head's are left implicit.
    pub fn from_spec(spec: &NetworkSpec) -> Self {
        let base = spec.head_precision;
        let p = |q: Precision| (q != base).then_some(q.bits());
        Self {
            input: [spec.input.0, spec.input.1, spec.input.2],
            precision: base.bits(),
            actions: spec.actions,
            conv: spec
                .conv
                .iter()
                .map(|c| ConvEntry { out_channels: c.out_channels, kernel: c.kernel, precision: p(c.precision) })
                .collect(),
            embed: EmbedEntry { dim: spec.embed_dim, precision: p(spec.embed_precision) },
            subgoal: match spec.subgoal {
                SubgoalShape::Fc { dim, precision } => SubgoalEntry::Fc { dim, precision: p(precision) },
                SubgoalShape::Lstm { hidden, unroll, precision } => {
                    SubgoalEntry::Lstm { hidden, unroll, precision: p(precision) }
                }
            },
            head_precision: None,
        }
    }
}

pub fn parse_spec(text: &str) -> Result<NetworkSpec> {
    toml::from_str::<SpecFile>(text).map_err(|e| HarnessError::format("network spec", e))?.to_spec()
}

pub fn spec_to_toml(spec: &NetworkSpec) -> String {
    toml::to_string(&SpecFile::from_spec(spec)).expect("spec schema serializes")
}

pub fn load_spec(path: &Path) -> Result<NetworkSpec> {
    parse_spec(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Float weights
// ---------------------------------------------------------------------------

pub const FLOAT_FORMAT: &str = "qfrl-float-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloatWeightsFile {
    pub format: String,
    pub spec: SpecFile,
    pub tensors: Vec<FloatTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloatTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON text of a float policy. Numbers are printed in shortest round-trip
/// form, so reloading is bit-exact.
pub fn float_to_json(net: &FloatNet) -> String {
    let file = FloatWeightsFile {
        format: FLOAT_FORMAT.into(),
        spec: SpecFile::from_spec(&net.spec),
        tensors: net
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| FloatTensor { name, shape, data: data.clone() })
            .collect(),
    };
    let mut s = serde_json::to_string(&file).expect("float weights serialize");
    s.push('\n');
    s
}

pub fn float_from_json(text: &str) -> Result<FloatNet> {
    let file: FloatWeightsFile = serde_json::from_str(text)?;
    if file.format != FLOAT_FORMAT {
        return Err(HarnessError::format("float weights", format!("unknown format tag {:?}", file.format)));
    }
    let spec = file.spec.to_spec()?;
    FloatNet::from_tensors(&spec, |name| {
        file.tensors.iter().find(|t| t.name == name).map(|t| (t.shape.as_slice(), t.data.as_slice()))
    })
}

pub fn save_float(path: &Path, net: &FloatNet) -> Result<()> {
    Ok(std::fs::write(path, float_to_json(net))?)
}

pub fn load_float(path: &Path) -> Result<FloatNet> {
    float_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Quantized weight file
// ---------------------------------------------------------------------------

pub const MAGIC: &[u8; 4] = b"QFRL";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: QTensor,
}

/// Quantized tensors in little-endian binary:
///
/// | field        | encoding                                   |
/// |--------------|--------------------------------------------|
/// | magic        | `QFRL`                                     |
/// | version      | u16                                        |
/// | count        | u32                                        |
/// | name         | u16 byte length + UTF-8                    |
/// | bits         | u8 (8, 16, 32)                             |
/// | scale        | f64 bit pattern                            |
/// | ndims, dims  | u8, then u32 each                          |
/// | codes        | two's complement at `bits` width           |
///
/// Activation formats are stored as zero-length tensors (`dims = [0]`)
/// carrying only bits and scale.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightFile {
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            HarnessError::format("weight file", format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

impl WeightFile {
    pub fn push(&mut self, name: impl Into<String>, tensor: QTensor) {
        self.tensors.push(NamedTensor { name: name.into(), tensor });
    }

    pub fn push_params(&mut self, name: impl Into<String>, params: QuantParams) {
        self.push(name, QTensor::zeros(params, vec![0]));
    }

    pub fn get(&self, name: &str) -> Result<&QTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
            .ok_or_else(|| HarnessError::format("weight file", format!("missing tensor {name}")))
    }

    pub fn params(&self, name: &str) -> Result<QuantParams> {
        self.get(name).map(QTensor::params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let p = t.tensor.params();
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(p.bits() as u8);
            out.extend_from_slice(&p.scale().to_bits().to_le_bytes());
            out.push(t.tensor.shape().len() as u8);
            for &d in t.tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &c in t.tensor.codes() {
                match p.precision() {
                    Precision::FxP8 => out.push(c as i8 as u8),
                    Precision::FxP16 => out.extend_from_slice(&(c as i16).to_le_bytes()),
                    Precision::FxP32 => out.extend_from_slice(&c.to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(HarnessError::format("weight file", "bad magic"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(HarnessError::format("weight file", format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?);
        let mut file = WeightFile::default();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| HarnessError::format("weight file", e))?
                .to_owned();
            let precision = Precision::from_bits(r.array::<1>()?[0] as u32)?;
            let scale = f64::from_bits(u64::from_le_bytes(r.array()?));
            let params = QuantParams::new(scale, precision)?;
            let ndims = r.array::<1>()?[0] as usize;
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let width = precision.bits() as usize / 8;
            let raw = r.take(n.checked_mul(width).ok_or_else(|| HarnessError::format("weight file", "tensor too large"))?)?;
            let codes = raw
                .chunks_exact(width)
                .map(|b| match precision {
                    Precision::FxP8 => b[0] as i8 as i32,
                    Precision::FxP16 => i16::from_le_bytes([b[0], b[1]]) as i32,
                    Precision::FxP32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]),
                })
                .collect();
            file.push(name, QTensor::new(codes, params, shape)?);
        }
        if r.pos != buf.len() {
            return Err(HarnessError::format("weight file", format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_network(net: &QNetwork) -> Self {
        let mut f = WeightFile::default();
        f.push_params("input.act", net.input_params);
        for (i, c) in net.conv.iter().enumerate() {
            f.push(format!("conv{i}.w"), c.weight.clone());
            f.push(format!("conv{i}.b"), c.bias.clone());
            f.push_params(format!("conv{i}.act"), c.out_params);
        }
        push_fc(&mut f, "embed", &net.embed);
        match &net.subgoal {
            SubgoalModule::Fc(fc) => push_fc(&mut f, "subgoal", fc),
            SubgoalModule::Lstm(w) => {
                for (g, name) in GATES.iter().enumerate() {
                    f.push(format!("subgoal.wx.{name}"), w.wx[g].clone());
                    f.push(format!("subgoal.wh.{name}"), w.wh[g].clone());
                    f.push(format!("subgoal.b.{name}"), w.b[g].clone());
                }
                f.push_params("subgoal.gate.act", w.gate_params);
                f.push_params("subgoal.cell.act", w.cell_params);
            }
        }
        f.push_params("concat.act", net.concat_params);
        push_fc(&mut f, "head", &net.head);
        f
    }

    /// Rebuild the network described by `spec`; shapes and precisions must agree.
    pub fn to_network(&self, spec: &NetworkSpec) -> Result<QNetwork> {
        let mut conv = Vec::new();
        for (i, layer) in spec.layers().iter().enumerate().take(spec.conv.len()) {
            if let qforce_core::qnet::LayerDesc::Conv { in_c, out_c, kernel, precision, .. } = *layer {
                conv.push(ConvLayerSpec {
                    in_channels: in_c,
                    out_channels: out_c,
                    kernel,
                    weight: self.get(&format!("conv{i}.w"))?.clone(),
                    bias: self.get(&format!("conv{i}.b"))?.clone(),
                    precision,
                    out_params: self.params(&format!("conv{i}.act"))?,
                });
            }
        }
        let embed = self.fc("embed", spec.embed_precision, ActKind::ReLU)?;
        let subgoal = match spec.subgoal {
            SubgoalShape::Fc { precision, .. } => SubgoalModule::Fc(self.fc("subgoal", precision, ActKind::ReLU)?),
            SubgoalShape::Lstm { hidden, precision, .. } => {
                let get = |kind: &str, g: usize| self.get(&format!("subgoal.{kind}.{}", GATES[g])).cloned();
                let mut wx = Vec::new();
                let mut wh = Vec::new();
                let mut b = Vec::new();
                for g in 0..4 {
                    wx.push(get("wx", g)?);
                    wh.push(get("wh", g)?);
                    b.push(get("b", g)?);
                }
                let arr = |v: Vec<QTensor>| -> [QTensor; 4] { v.try_into().expect("four gates") };
                SubgoalModule::Lstm(LstmWeights {
                    input_dim: spec.embed_dim,
                    hidden,
                    precision,
                    wx: arr(wx),
                    wh: arr(wh),
                    b: arr(b),
                    gate_params: self.params("subgoal.gate.act")?,
                    cell_params: self.params("subgoal.cell.act")?,
                })
            }
        };
        let net = QNetwork {
            spec: spec.clone(),
            input_params: self.params("input.act")?,
            conv,
            embed,
            subgoal,
            concat_params: self.params("concat.act")?,
            head: self.fc("head", spec.head_precision, ActKind::Softmax)?,
        };
        net.validate()?;
        Ok(net)
    }

    /// Default topology matching the stored tensors: the sub-goal variant is
    /// read from the tensor names, precision from the head weights.
    pub fn default_spec(&self) -> Result<NetworkSpec> {
        let p = self.get("head.w")?.precision();
        let lstm = self.tensors.iter().any(|t| t.name.starts_with("subgoal.wx."));
        Ok(if lstm { NetworkSpec::default_lstm(p) } else { NetworkSpec::default_fc(p) })
    }

    fn fc(&self, name: &str, precision: Precision, activation: ActKind) -> Result<FcLayerSpec> {
        let weight = self.get(&format!("{name}.w"))?.clone();
        let &[out_dim, in_dim] = weight.shape() else {
            return Err(HarnessError::format("weight file", format!("{name}.w must be 2-D")));
        };
        Ok(FcLayerSpec {
            in_dim,
            out_dim,
            weight,
            bias: self.get(&format!("{name}.b"))?.clone(),
            precision,
            activation,
            out_params: self.params(&format!("{name}.act"))?,
        })
    }
}

fn push_fc(f: &mut WeightFile, name: &str, fc: &FcLayerSpec) {
    f.push(format!("{name}.w"), fc.weight.clone());
    f.push(format!("{name}.b"), fc.bias.clone());
    f.push_params(format!("{name}.act"), fc.out_params);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_toml_round_trip() {
        for p in Precision::ALL {
            for spec in [NetworkSpec::default_fc(p), NetworkSpec::default_lstm(p)] {
                let text = spec_to_toml(&spec);
                assert_eq!(parse_spec(&text).unwrap(), spec);
            }
        }
        let mut mixed = NetworkSpec::default_lstm(Precision::FxP16);
        mixed.conv[0].precision = Precision::FxP8;
        assert_eq!(parse_spec(&spec_to_toml(&mixed)).unwrap(), mixed);
    }

    #[test]
    fn spec_toml_document() {
        let text = r#"
            input = [32, 32, 3]
            precision = 8
            [[conv]]
            out_channels = 8
            kernel = 3
            [[conv]]
            out_channels = 16
            kernel = 3
            [[conv]]
            out_channels = 16
            kernel = 3
            precision = 16
            [embed]
            dim = 32
            [subgoal]
            variant = "fc"
            dim = 16
        "#;
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.actions, 4);
        assert_eq!(spec.conv[2].precision, Precision::FxP16);
        assert_eq!(spec.subgoal, SubgoalShape::Fc { dim: 16, precision: Precision::FxP8 });
        assert!(parse_spec(&text.replace("precision = 8", "precision = 12")).is_err());
        assert!(parse_spec(&text.replace("dim = 32", "dim = 32\nwidth = 2")).is_err());
    }

    #[test]
    fn weight_file_rejects_corruption() {
        let mut f = WeightFile::default();
        f.push("a", QTensor::new(vec![1, -2, 3], QuantParams::new(4.0, Precision::FxP16).unwrap(), vec![3]).unwrap());
        let bytes = f.to_bytes();
        assert_eq!(WeightFile::from_bytes(&bytes).unwrap(), f);
        assert!(WeightFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(WeightFile::from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(WeightFile::from_bytes(&bad).is_err());
        let mut bits = bytes;
        bits[4 + 2 + 4 + 2 + 1] = 12;
        assert!(WeightFile::from_bytes(&bits).is_err());
    }

    #[test]
    fn weight_file_layout() {
        let mut f = WeightFile::default();
        f.push("w", QTensor::new(vec![-1, 2], QuantParams::new(0.5, Precision::FxP8).unwrap(), vec![1, 2]).unwrap());
        let b = f.to_bytes();
        let mut want = b"QFRL".to_vec();
        want.extend([1, 0, 1, 0, 0, 0, 1, 0, b'w', 8]);
        want.extend(0.5f64.to_bits().to_le_bytes());
        want.extend([2, 1, 0, 0, 0, 2, 0, 0, 0, 0xff, 2]);
        assert_eq!(b, want);
    }
}
