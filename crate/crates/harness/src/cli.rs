//! The `qfrl` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qforce_core::perf::{sweep, DEFAULT_FREQ_MHZ};
use qforce_core::qnet::{select_action, NetworkSpec, Selection};
use qforce_core::Precision;

use crate::env::{GridWorld, OBS_CHANNELS};
use crate::error::{HarnessError, Result};
use crate::formats::{load_float, load_spec, save_float, WeightFile};
use crate::quant::{calibration_observations, quantize_policy, MIN_CALIBRATION};
use crate::report::{self, Format};
use crate::rollout::{QuantPolicy, RolloutReport};
use crate::train::{train_oracle, TrainConfig};
use crate::verify::{self, DumpKind};

#[derive(Debug, Parser)]
#[command(name = "qfrl", version, about = "Bit-exact emulator of a quantized RL inference engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a float policy on the gridworld (REINFORCE).
    Train(TrainArgs),
    /// Quantize float weights into a QFRL weight file.
    Quantize(QuantizeArgs),
    /// Run one observation image through a quantized policy.
    Infer(InferArgs),
    /// Cycle/throughput model sweep over PEs and precisions.
    Bench(BenchArgs),
    /// Reward-retention study of quantized policies against the float policy.
    Rollout(RolloutArgs),
    /// Activation error table on the [-4, 4] grid.
    VactDump(VactArgs),
    /// Q-MAC verification suites.
    MacVerify(MacArgs),
    /// Render a gridworld state to a PNG observation.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Fc,
    Lstm,
}

impl Variant {
    pub fn spec(self, precision: Precision) -> NetworkSpec {
        match self {
            Variant::Fc => NetworkSpec::default_fc(precision),
            Variant::Lstm => NetworkSpec::default_lstm(precision),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Variant::Fc => "fc",
            Variant::Lstm => "lstm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Multiplier {
    Exact,
    Mitchell,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    s.trim()
        .parse::<u32>()
        .ok()
        .and_then(|b| Precision::from_bits(b).ok())
        .ok_or_else(|| format!("precision must be 8, 16 or 32, got {s:?}"))
}

/// `N`, `A..B` (inclusive) or `A,B,C`.
fn parse_pes(s: &str) -> std::result::Result<PeList, String> {
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| format!("bad PE count {t:?}"));
    let list = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty PE range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<std::result::Result<Vec<_>, _>>()?
    };
    Ok(PeList(list))
}

fn parse_cell(s: &str) -> std::result::Result<(usize, usize), String> {
    let bad = || format!("cell must be `x,y`, got {s:?}");
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeList(pub Vec<u32>);

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Variant::Fc)]
    pub variant: Variant,
    /// Network spec (TOML); overrides --variant.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Episode budget (training may continue up to 10x until the target is met).
    #[arg(long, default_value_t = 2000)]
    pub episodes: usize,
    /// Float weights output (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Float weights (JSON) from `train`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Precision,
    /// Seed of the calibration states.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of calibration forward passes (at least 256).
    #[arg(long, default_value_t = MIN_CALIBRATION)]
    pub calib: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Quantized weight file.
    #[arg(long)]
    pub weights: PathBuf,
    /// RGB image matching the network input (32x32 by default).
    #[arg(long)]
    pub obs: PathBuf,
    /// Network spec (TOML); defaults to the standard topology.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Variant::Fc, Variant::Lstm])]
    pub variant: Vec<Variant>,
    /// Network spec (TOML); replaces --variant.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// PE counts: `N`, `A..B` or `A,B,C`.
    #[arg(long, value_parser = parse_pes, default_value = "1..8")]
    pub pes: PeList,
    #[arg(long, value_parser = parse_precision, value_delimiter = ',', default_value = "8,16,32")]
    pub precision: Vec<Precision>,
    #[arg(long, default_value_t = DEFAULT_FREQ_MHZ)]
    pub freq: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Float weights (JSON). Trained from --seed when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Variant trained when no weights are given.
    #[arg(long, value_enum, default_value_t = Variant::Fc)]
    pub variant: Variant,
    #[arg(long, value_parser = parse_precision, value_delimiter = ',', default_value = "8,16,32")]
    pub precision: Vec<Precision>,
    #[arg(long, default_value_t = 200)]
    pub episodes: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = MIN_CALIBRATION)]
    pub calib: usize,
    /// Training budget when no weights are given.
    #[arg(long, default_value_t = 2000)]
    pub train_episodes: usize,
    /// Add wall-clock columns (not reproducible across runs).
    #[arg(long)]
    pub timing: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VactArgs {
    #[arg(long, value_parser = parse_precision, value_delimiter = ',', default_value = "8,16,32")]
    pub precision: Vec<Precision>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [DumpKindArg::Tanh, DumpKindArg::Sigmoid])]
    pub kind: Vec<DumpKindArg>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DumpKindArg {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Args)]
pub struct MacArgs {
    #[arg(long, value_parser = parse_precision, value_delimiter = ',', default_value = "8,16,32")]
    pub precision: Vec<Precision>,
    /// Random pairs per composed-multiplier suite.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    /// Random packed MAC sequences per precision.
    #[arg(long, default_value_t = 10_000)]
    pub sequences: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `mitchell` reports the approximate multiplier's error profile instead.
    #[arg(long, value_enum, default_value_t = Multiplier::Exact)]
    pub multiplier: Multiplier,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Agent cell as `x,y`.
    #[arg(long, value_parser = parse_cell)]
    pub agent: (usize, usize),
    #[arg(long)]
    pub has_key: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Quantize(a) => quantize(a),
        Command::Infer(a) => infer(a),
        Command::Bench(a) => bench(a),
        Command::Rollout(a) => rollout(a),
        Command::VactDump(a) => vact_dump(a),
        Command::MacVerify(a) => mac_verify(a),
        Command::Render(a) => render(a),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => a.variant.spec(Precision::FxP16),
    };
    let cfg = TrainConfig { episodes: a.episodes, ..TrainConfig::default() };
    let r = train_oracle(&GridWorld::default(), &spec, a.seed, &cfg)?;
    save_float(&a.out, &r.net)?;
    eprintln!("trained {} episodes; greedy mean reward {:.4}", r.episodes, r.eval_reward);
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let net = load_float(&a.weights)?;
    let calib = calibration_observations(&GridWorld::default(), a.calib, a.seed);
    let q = quantize_policy(&net, a.precision, &calib)?;
    WeightFile::from_network(&q).save(&a.out)
}

/// HWC pixels in `[0, 1]` from an RGB image of the given size.
pub fn load_observation(path: &Path, spec: &NetworkSpec) -> Result<Vec<f64>> {
    let img = image::open(path)?.to_rgb8();
    let (h, w, c) = spec.input;
    if c != OBS_CHANNELS || img.width() as usize != w || img.height() as usize != h {
        return Err(HarnessError::Contract(format!(
            "observation must be a {w}x{h} RGB image, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
}

fn infer(a: InferArgs) -> Result<()> {
    let file = WeightFile::load(&a.weights)?;
    let spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => file.default_spec()?,
    };
    let policy = QuantPolicy::new(file.to_network(&spec)?);
    let probs = policy.probs(&load_observation(&a.obs, &spec)?)?;
    let action = select_action(&probs, Selection::Greedy);
    emit(a.out.as_deref(), &report::infer(&probs, action, a.format))
}

fn bench(a: BenchArgs) -> Result<()> {
    let nets: Vec<(String, NetworkSpec)> = match &a.spec {
        Some(p) => vec![("spec".into(), load_spec(p)?)],
        None => a.variant.iter().map(|v| (v.name().into(), v.spec(Precision::FxP8))).collect(),
    };
    let mut rows = Vec::new();
    for (name, spec) in &nets {
        for r in sweep(spec, &a.pes.0, &a.precision, a.freq)? {
            rows.push((name.clone(), r));
        }
    }
    emit(a.out.as_deref(), &report::bench(&rows, a.format))
}

fn rollout(a: RolloutArgs) -> Result<()> {
    let env = GridWorld::default();
    let net = match &a.weights {
        Some(p) => load_float(p)?,
        None => {
            let cfg = TrainConfig { episodes: a.train_episodes, ..TrainConfig::default() };
            let r = train_oracle(&env, &a.variant.spec(Precision::FxP16), a.seed, &cfg)?;
            eprintln!("trained {} episodes; greedy mean reward {:.4}", r.episodes, r.eval_reward);
            r.net
        }
    };
    let calib = calibration_observations(&env, a.calib, a.seed);
    let mut quantized = Vec::new();
    for &p in &a.precision {
        let q = quantize_policy(&net, p, &calib)?;
        quantized.push((format!("q{}", p.bits()), QuantPolicy::new(q)));
    }
    let rep = RolloutReport::run(&net, &quantized, &env, a.episodes, a.seed)?;
    if let Some(s) = report::speedup(&rep) {
        eprintln!("wall-clock speedup FxP8 vs FxP32: {s:.2}x");
    }
    emit(a.out.as_deref(), &report::rollout(&rep, a.format, a.timing))
}

fn vact_dump(a: VactArgs) -> Result<()> {
    let mut rows = Vec::new();
    for &k in &a.kind {
        let kind = match k {
            DumpKindArg::Tanh => DumpKind::Tanh,
            DumpKindArg::Sigmoid => DumpKind::Sigmoid,
        };
        for &p in &a.precision {
            rows.extend(verify::vact_table(kind, p));
        }
    }
    emit(a.out.as_deref(), &report::vact(&rows, a.format))
}

fn mac_verify(a: MacArgs) -> Result<()> {
    if a.multiplier == Multiplier::Mitchell {
        let prof = verify::mitchell_profile();
        let qor = verify::dot_qor(1000, 64, a.seed)?;
        let rows = [
            ("worst_rel_error", prof.worst.to_string()),
            ("mean_rel_error", prof.mean.to_string()),
            ("never_overestimates", prof.never_over.to_string()),
            ("dot_qor", qor.to_string()),
            ("reference_qor_range", "0.984-0.992".to_string()),
        ];
        return emit(a.out.as_deref(), &report::metrics(&rows, a.format));
    }
    let mut suites = Vec::new();
    for &p in &a.precision {
        match p {
            Precision::FxP8 => suites.push(verify::mul8_exhaustive()),
            Precision::FxP16 => suites.push(verify::mul16_random(a.samples, a.seed)),
            Precision::FxP32 => suites.push(verify::mul32_random(a.samples, a.seed)),
        }
        suites.push(verify::simd_lanes(p, a.sequences, a.seed)?);
    }
    emit(a.out.as_deref(), &report::suites(&suites, a.format))?;
    let bad: u64 = suites.iter().map(|s| s.mismatches).sum();
    if bad > 0 {
        return Err(HarnessError::Contract(format!("{bad} Q-MAC mismatches")));
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let mut env = GridWorld::default();
    let agent = a.agent;
    if agent.0 >= env.width || agent.1 >= env.height {
        return Err(HarnessError::Contract(format!("agent cell {agent:?} is outside the grid")));
    }
    env.reset_to(agent, a.has_key);
    let px: Vec<u8> = env.render().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let side = crate::env::OBS_SIDE as u32;
    let img = image::RgbImage::from_raw(side, side, px).expect("buffer matches image size");
    Ok(img.save(&a.out)?)
}

/// Entry point: parse, run, map errors to exit codes (1 contract or usage,
/// 2 I/O).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => match run(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}
