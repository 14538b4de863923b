//! Post-training quantization of a float policy.

use qforce_core::fxp::{calibrate_symmetric, quantize};
use qforce_core::qnet::{ConvLayerSpec, FcLayerSpec, LstmWeights, QNetwork, SubgoalModule};
use qforce_core::vact::ActKind;
use qforce_core::{Precision, QTensor, QuantParams};
use rand::Rng;

use crate::env::GridWorld;
use crate::error::{HarnessError, Result};
use crate::oracle::{Dense, FloatNet, Subgoal};
use crate::rollout::episode_rng;

/// Minimum number of calibration forward passes.
pub const MIN_CALIBRATION: usize = 256;

/// `count` rendered states: uniform start cells, half of them with the key
/// already collected. Stream `i` of `seed` draws state `i`.
pub fn calibration_observations(env: &GridWorld, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|i| {
            let mut rng = episode_rng(seed, i);
            let mut e = env.clone();
            e.reset(&mut rng);
            if rng.random_bool(0.5) {
                e.has_key = true;
            }
            e.render()
        })
        .collect()
}

/// Largest magnitude seen at each activation point over the calibration set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationRanges {
    pub input: f64,
    pub conv: Vec<f64>,
    pub embed: f64,
    pub subgoal: f64,
    pub logits: f64,
}

impl ActivationRanges {
    pub fn observe(net: &FloatNet, observations: &[Vec<f64>]) -> Self {
        let amax = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut r = Self { conv: vec![0.0; net.conv.len()], ..Self::default() };
        for obs in observations {
            let t = net.forward(obs);
            r.input = r.input.max(amax(&t.input));
            for (slot, c) in r.conv.iter_mut().zip(&t.conv) {
                *slot = slot.max(amax(c));
            }
            r.embed = r.embed.max(amax(&t.embed));
            r.subgoal = r.subgoal.max(amax(&t.subgoal));
            r.logits = r.logits.max(amax(&t.logits));
        }
        r
    }
}

fn weights(values: &[f64], shape: Vec<usize>, p: Precision) -> Result<QTensor> {
    Ok(quantize(values, calibrate_symmetric(values, p)?).reshape(shape)?)
}

fn range(amax: f64, p: Precision) -> Result<QuantParams> {
    Ok(calibrate_symmetric(&[amax], p)?)
}

fn dense(d: &Dense, p: Precision, activation: ActKind, out_amax: f64) -> Result<FcLayerSpec> {
    Ok(FcLayerSpec {
        in_dim: d.in_dim,
        out_dim: d.out_dim,
        weight: weights(&d.w, vec![d.out_dim, d.in_dim], p)?,
        bias: weights(&d.b, vec![d.out_dim], p)?,
        precision: p,
        activation,
        out_params: range(out_amax, p)?,
    })
}

/// Per-tensor symmetric quantization of every weight and bias at
/// `precision`, with activation formats calibrated by float forward passes.
///
/// ReLU outputs are calibrated on their post-activation range, the head on its
/// logits. LSTM gate and cell formats use the fixed ±8 ranges.
pub fn quantize_policy(net: &FloatNet, precision: Precision, calibration: &[Vec<f64>]) -> Result<QNetwork> {
    if calibration.len() < MIN_CALIBRATION {
        return Err(HarnessError::Contract(format!(
            "calibration needs at least {MIN_CALIBRATION} observations, got {}",
            calibration.len()
        )));
    }
    let spec = net.spec.with_precision(precision);
    let r = ActivationRanges::observe(net, calibration);
    let p = precision;
    let conv = net
        .conv
        .iter()
        .zip(&r.conv)
        .map(|(c, &amax)| {
            Ok(ConvLayerSpec {
                in_channels: c.in_c,
                out_channels: c.out_c,
                kernel: c.k,
                weight: weights(&c.w, vec![c.out_c, c.in_c, c.k, c.k], p)?,
                bias: weights(&c.b, vec![c.out_c], p)?,
                precision: p,
                out_params: range(amax, p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let subgoal = match &net.subgoal {
        Subgoal::Fc(d) => SubgoalModule::Fc(dense(d, p, ActKind::ReLU, r.subgoal)?),
        Subgoal::Lstm(l) => {
            let q = |v: &[Vec<f64>; 4], shape: &[usize]| -> Result<[QTensor; 4]> {
                let t: Vec<QTensor> = v.iter().map(|w| weights(w, shape.to_vec(), p)).collect::<Result<_>>()?;
                Ok(t.try_into().expect("four gates"))
            };
            SubgoalModule::Lstm(LstmWeights {
                input_dim: l.input,
                hidden: l.hidden,
                precision: p,
                wx: q(&l.wx, &[l.hidden, l.input])?,
                wh: q(&l.wh, &[l.hidden, l.hidden])?,
                b: q(&l.b, &[l.hidden])?,
                gate_params: LstmWeights::default_gate_params(p),
                cell_params: LstmWeights::default_cell_params(p),
            })
        }
    };
    let qnet = QNetwork {
        spec,
        input_params: range(r.input, p)?,
        conv,
        embed: dense(&net.embed, p, ActKind::ReLU, r.embed)?,
        subgoal,
        concat_params: range(r.embed.max(r.subgoal), p)?,
        head: dense(&net.head, p, ActKind::Softmax, r.logits)?,
    };
    qnet.validate()?;
    Ok(qnet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::WeightFile;
    use qforce_core::fxp::dequantize;
    use qforce_core::qnet::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_round_trip_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = NetworkSpec::default_lstm(Precision::FxP8);
        let net = FloatNet::init(&spec, &mut rng).unwrap();
        let calib = calibration_observations(&GridWorld::default(), MIN_CALIBRATION, 3);
        for p in Precision::ALL {
            let q = quantize_policy(&net, p, &calib).unwrap();
            let file = WeightFile::from_network(&q);
            for (name, _, data) in net.tensors() {
                let t = file.get(&name).unwrap();
                let lsb = 1.0 / t.params().scale();
                for ((a, b), &c) in dequantize(t).iter().zip(data).zip(t.codes()) {
                    // the range scale maps +max to 2^(n-1), one past the top code
                    let bound = if c == p.code_max() { lsb } else { 0.5 * lsb };
                    assert!((a - b).abs() <= bound + 4.0 * f64::EPSILON * b.abs(), "{p} {name}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn too_few_calibration_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = FloatNet::init(&NetworkSpec::default_fc(Precision::FxP8), &mut rng).unwrap();
        let calib = calibration_observations(&GridWorld::default(), 10, 3);
        assert!(matches!(quantize_policy(&net, Precision::FxP8, &calib), Err(HarnessError::Contract(_))));
    }

    #[test]
    fn calibration_set_is_seeded() {
        let env = GridWorld::default();
        assert_eq!(calibration_observations(&env, 20, 4), calibration_observations(&env, 20, 4));
        assert_ne!(calibration_observations(&env, 20, 4), calibration_observations(&env, 20, 5));
    }
}
