//! CSV and JSON renderings of reports. Column sets and key names are fixed.

use qforce_core::perf::PerfReport;
use qforce_core::QTensor;
use qforce_core::fxp::dequantize;
use serde_json::{json, Value};

use crate::rollout::{RolloutReport, RolloutRow};
use crate::verify::{Suite, VactRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

pub const BENCH_COLUMNS: &str =
    "variant,precision,pes,freq_mhz,cordic_n,mac_ops,af_ops,mac_cycles,af_cycles,total_cycles,fps,gops,compute_bound";

/// `(variant, report)` rows.
pub fn bench(rows: &[(String, PerfReport)], format: Format) -> String {
    match format {
        Format::Csv => csv(
            BENCH_COLUMNS,
            rows.iter().map(|(v, r)| {
                format!(
                    "{v},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.hw.precision.bits(),
                    r.hw.num_pes,
                    r.hw.freq_mhz,
                    r.hw.cordic_n,
                    r.mac_ops,
                    r.af_ops,
                    r.mac_cycles,
                    r.af_cycles,
                    r.total_cycles(),
                    r.fps,
                    r.gops,
                    r.compute_bound
                )
            }),
        ),
        Format::Json => json_text(&Value::Array(
            rows.iter()
                .map(|(v, r)| {
                    json!({
                        "variant": v,
                        "precision": r.hw.precision.bits(),
                        "pes": r.hw.num_pes,
                        "freq_mhz": r.hw.freq_mhz,
                        "cordic_n": r.hw.cordic_n,
                        "mac_ops": r.mac_ops,
                        "af_ops": r.af_ops,
                        "mac_cycles": r.mac_cycles,
                        "af_cycles": r.af_cycles,
                        "total_cycles": r.total_cycles(),
                        "fps": r.fps,
                        "gops": r.gops,
                        "compute_bound": r.compute_bound,
                        "layers": r.layers.iter().map(|l| json!({
                            "name": l.name,
                            "mac_ops": l.mac_ops,
                            "af_ops": l.af_ops,
                            "mac_cycles": l.mac_cycles,
                            "af_cycles": l.af_cycles,
                        })).collect::<Vec<_>>(),
                    })
                })
                .collect(),
        )),
    }
}

pub const ROLLOUT_COLUMNS: &str = "policy,episodes,mean_reward,std_reward,success_rate,mean_steps,retention";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rollout report. Timing columns are included only when `timing` is set,
/// since wall-clock values differ between runs.
pub fn rollout(report: &RolloutReport, format: Format, timing: bool) -> String {
    let speedup = speedup(report);
    match format {
        Format::Csv => {
            let header = if timing { format!("{ROLLOUT_COLUMNS},us_per_inference") } else { ROLLOUT_COLUMNS.into() };
            csv(
                &header,
                report.rows.iter().map(|r| {
                    let mut line = format!(
                        "{},{},{},{},{},{},{}",
                        r.policy,
                        r.episodes,
                        r.mean_reward,
                        r.std_reward,
                        r.success_rate,
                        r.mean_steps,
                        opt(r.retention)
                    );
                    if timing {
                        line.push_str(&format!(",{}", r.us_per_inference));
                    }
                    line
                }),
            )
        }
        Format::Json => {
            let rows: Vec<Value> = report
                .rows
                .iter()
                .map(|r: &RolloutRow| {
                    let mut v = json!({
                        "policy": r.policy,
                        "episodes": r.episodes,
                        "mean_reward": r.mean_reward,
                        "std_reward": r.std_reward,
                        "success_rate": r.success_rate,
                        "mean_steps": r.mean_steps,
                        "retention": r.retention,
                    });
                    if timing {
                        v["us_per_inference"] = json!(r.us_per_inference);
                    }
                    v
                })
                .collect();
            let mut doc = json!({ "seed": report.seed, "rows": rows });
            if timing {
                doc["speedup_q8_vs_q32"] = json!(speedup);
            }
            json_text(&doc)
        }
    }
}

/// Wall-clock speedup of the FxP8 path over the FxP32 path, if both ran.
pub fn speedup(report: &RolloutReport) -> Option<f64> {
    let (q8, q32) = (report.row("q8")?, report.row("q32")?);
    (q8.us_per_inference > 0.0).then(|| q32.us_per_inference / q8.us_per_inference)
}

pub const VACT_COLUMNS: &str = "kind,precision,x,fixed,oracle,error";

pub fn vact(rows: &[VactRow], format: Format) -> String {
    match format {
        Format::Csv => csv(
            VACT_COLUMNS,
            rows.iter().map(|r| {
                format!("{},{},{},{},{},{}", r.kind.name(), r.precision.bits(), r.x, r.fixed, r.oracle, r.error)
            }),
        ),
        Format::Json => json_text(&Value::Array(
            rows.iter()
                .map(|r| {
                    json!({
                        "kind": r.kind.name(),
                        "precision": r.precision.bits(),
                        "x": r.x,
                        "fixed": r.fixed,
                        "oracle": r.oracle,
                        "error": r.error,
                    })
                })
                .collect(),
        )),
    }
}

pub const SUITE_COLUMNS: &str = "suite,cases,mismatches,status";

pub fn suites(rows: &[Suite], format: Format) -> String {
    let status = |s: &Suite| if s.passed() { "pass" } else { "fail" };
    match format {
        Format::Csv => csv(
            SUITE_COLUMNS,
            rows.iter().map(|s| format!("{},{},{},{}", s.name, s.cases, s.mismatches, status(s))),
        ),
        Format::Json => json_text(&Value::Array(
            rows.iter()
                .map(|s| json!({"suite": s.name, "cases": s.cases, "mismatches": s.mismatches, "status": status(s)}))
                .collect(),
        )),
    }
}

pub const METRIC_COLUMNS: &str = "metric,value";

pub fn metrics(rows: &[(&str, String)], format: Format) -> String {
    match format {
        Format::Csv => csv(METRIC_COLUMNS, rows.iter().map(|(k, v)| format!("{k},{v}"))),
        Format::Json => {
            let map: serde_json::Map<String, Value> =
                rows.iter().map(|(k, v)| ((*k).to_owned(), Value::String(v.clone()))).collect();
            json_text(&Value::Object(map))
        }
    }
}

pub const INFER_COLUMNS: &str = "action,code,probability";

/// Action-probability codes with their dequantized values; `action` is the
/// greedy choice.
pub fn infer(probs: &QTensor, action: usize, format: Format) -> String {
    let values = dequantize(probs);
    match format {
        Format::Csv => csv(
            INFER_COLUMNS,
            probs.codes().iter().zip(&values).enumerate().map(|(i, (c, p))| format!("{i},{c},{p}")),
        ),
        Format::Json => json_text(&json!({
            "precision": probs.precision().bits(),
            "scale": probs.params().scale(),
            "codes": probs.codes(),
            "probabilities": values,
            "action": action,
        })),
    }
}
