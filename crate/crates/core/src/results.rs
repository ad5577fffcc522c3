//! CSV and manifest artifacts for trials and studies.
//!
//! Floating-point values are written in scientific notation with nine
//! significant digits (`{:.8e}`); non-finite values are written as `nan`,
//! `inf` or `-inf`, and absent optional values as an empty field. Column
//! order is fixed and files are overwritten in place, so emitting the same
//! result twice yields identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{EvStudy, Pair, RandomizationSummary, Scenario, TrialResult};

/// Voltage histogram bin width, p.u.
pub const HISTOGRAM_BIN_PU: f64 = 0.002;

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ResultsError + '_ {
    move |source| ResultsError::Io { path: path.display().to_string(), source }
}

/// Fixed-precision float formatting used in every artifact.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.8e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), ResultsError> {
    let csv_err = |source| ResultsError::Csv { path: path.display().to_string(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// The two variation metrics for one case: mean over nodes of each node's
/// standard deviation, and the range of all samples across all nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoltageVariation {
    pub mean_std_pu: f64,
    pub total_range_pu: f64,
}

pub fn summarize_voltage_variation(trial: &TrialResult) -> VoltageVariation {
    if trial.nodes.is_empty() {
        return VoltageVariation { mean_std_pu: 0.0, total_range_pu: 0.0 };
    }
    let mean_std_pu = trial.nodes.iter().map(|n| n.std_dev()).sum::<f64>() / trial.nodes.len() as f64;
    let lo = trial.nodes.iter().map(|n| n.min()).fold(f64::INFINITY, f64::min);
    let hi = trial.nodes.iter().map(|n| n.max()).fold(f64::NEG_INFINITY, f64::max);
    VoltageVariation { mean_std_pu, total_range_pu: hi - lo }
}

/// Histogram of every node sample, bins `[k w, (k+1) w)` from the lowest to the highest occupied bin.
pub fn voltage_histogram(trial: &TrialResult) -> Vec<(i64, usize)> {
    let bins: Vec<i64> = trial
        .nodes
        .iter()
        .flat_map(|n| n.samples.iter())
        .map(|v| (v / HISTOGRAM_BIN_PU).floor() as i64)
        .collect();
    let (Some(&lo), Some(&hi)) = (bins.iter().min(), bins.iter().max()) else {
        return Vec::new();
    };
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for b in bins {
        counts[(b - lo) as usize] += 1;
    }
    counts.into_iter().enumerate().map(|(k, c)| (lo + k as i64, c)).collect()
}

/// Write the artifacts of one case into `dir`.
pub fn emit(trial: &TrialResult, dir: &Path) -> Result<(), ResultsError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(
        &dir.join("series.csv"),
        &["time_s", "ac_kw", "desired_kw", "u", "available", "switched", "head_kw", "head_kva"],
        trial.steps.iter().map(|s| {
            vec![
                fmt_f(s.time_s),
                fmt_f(s.ac_kw),
                fmt_opt(s.desired_kw),
                fmt_f(s.u),
                s.available.to_string(),
                s.switched.to_string(),
                fmt_f(s.head_kw),
                fmt_f(s.head_kva),
            ]
        }),
    )?;
    write_csv(
        &dir.join("voltage_nodes.csv"),
        &[
            "node_id",
            "mean_pu",
            "std_pu",
            "min_pu",
            "max_pu",
            "steps_above",
            "steps_below",
            "longest_above_s",
            "longest_below_s",
        ],
        trial.nodes.iter().map(|n| {
            let e = trial.node_excursions.get(&n.id).copied().unwrap_or_default();
            vec![
                n.id.clone(),
                fmt_f(n.mean()),
                fmt_f(n.std_dev()),
                fmt_f(n.min()),
                fmt_f(n.max()),
                e.steps_above.to_string(),
                e.steps_below.to_string(),
                fmt_f(e.longest_above_s),
                fmt_f(e.longest_below_s),
            ]
        }),
    )?;
    write_csv(
        &dir.join("transformers.csv"),
        &["transformer_id", "rating_kva", "houses", "mean_load_pu", "mean_aging_factor", "max_hot_spot_c", "mean_duty"],
        trial.transformers.iter().map(|t| {
            vec![
                t.id.clone(),
                fmt_f(t.rating_kva),
                t.houses.to_string(),
                fmt_f(t.mean_load_pu),
                fmt_f(t.mean_aging_factor),
                fmt_f(t.max_hot_spot_c),
                fmt_f(t.mean_duty),
            ]
        }),
    )?;
    write_csv(
        &dir.join("violations.csv"),
        &["component_id", "kind", "start_s", "end_s", "worst_value"],
        trial.violations.iter().map(|v| {
            vec![v.component_id.clone(), v.kind.to_string(), fmt_f(v.start_s), fmt_f(v.end_s), fmt_f(v.worst_value)]
        }),
    )?;
    write_csv(
        &dir.join("voltage_histogram.csv"),
        &["bin_lo_pu", "bin_hi_pu", "count"],
        voltage_histogram(trial).into_iter().map(|(k, c)| {
            vec![fmt_f(k as f64 * HISTOGRAM_BIN_PU), fmt_f((k + 1) as f64 * HISTOGRAM_BIN_PU), c.to_string()]
        }),
    )?;
    write_csv(
        &dir.join("events.csv"),
        &["time_s", "component_id", "kind"],
        trial.events.iter().map(|e| vec![fmt_f(e.time_s), e.component_id.clone(), e.kind.clone()]),
    )?;
    if let Some(line) = &trial.monitored_line {
        write_csv(
            &dir.join("sensitivity.csv"),
            &["time_s", "line_id", "p_pu", "q_pu", "v_send_pu", "q_term", "p_term", "v_term", "total"],
            trial.sensitivity.iter().map(|s| {
                vec![
                    fmt_f(s.time_s),
                    line.clone(),
                    fmt_f(s.p_pu),
                    fmt_f(s.q_pu),
                    fmt_f(s.v_send_pu),
                    fmt_f(s.q_term),
                    fmt_f(s.p_term),
                    fmt_f(s.v_term),
                    fmt_f(s.total),
                ]
            }),
        )?;
    }
    Ok(())
}

/// Base and regulation directories plus the transformer comparison and variation summary.
pub fn emit_pair(pair: &Pair, dir: &Path) -> Result<(), ResultsError> {
    emit(&pair.base, &dir.join("base"))?;
    emit(&pair.regulation, &dir.join("regulation"))?;
    write_csv(
        &dir.join("transformer_aging.csv"),
        &[
            "transformer_id",
            "rating_kva",
            "mean_load_pu",
            "mean_aging_base",
            "mean_aging_regulation",
            "delta_aging_pct",
            "mean_duty",
        ],
        pair.base.transformers.iter().zip(&pair.regulation.transformers).map(|(b, r)| {
            vec![
                b.id.clone(),
                fmt_f(b.rating_kva),
                fmt_f(b.mean_load_pu),
                fmt_f(b.mean_aging_factor),
                fmt_f(r.mean_aging_factor),
                fmt_f(100.0 * (r.mean_aging_factor - b.mean_aging_factor) / b.mean_aging_factor),
                fmt_f(b.mean_duty),
            ]
        }),
    )?;
    let (vb, vr) = (summarize_voltage_variation(&pair.base), summarize_voltage_variation(&pair.regulation));
    write_csv(
        &dir.join("summary.csv"),
        &["case", "mean_ac_kw", "energy_kwh", "tracking_rms_pct", "mean_std_pu", "total_range_pu", "violations"],
        [(&pair.base, vb), (&pair.regulation, vr)].into_iter().map(|(t, v)| {
            vec![
                t.case.name().to_string(),
                fmt_f(t.mean_ac_kw()),
                fmt_f(t.energy_kwh()),
                fmt_opt(t.tracking_rms_pct()),
                fmt_f(v.mean_std_pu),
                fmt_f(v.total_range_pu),
                t.violations.len().to_string(),
            ]
        }),
    )
}

/// Over-limit node table and one pair directory per EV mode.
pub fn emit_ev_study(study: &EvStudy, dir: &Path) -> Result<(), ResultsError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(
        &dir.join("ev_table.csv"),
        &[
            "ev_mode",
            "base_any_pct",
            "regulation_any_pct",
            "base_over_2min_pct",
            "regulation_over_2min_pct",
            "base_sensitivity",
            "regulation_sensitivity",
        ],
        study.rows.iter().map(|r| {
            vec![
                r.mode.name().to_string(),
                fmt_f(r.base_any_pct),
                fmt_f(r.regulation_any_pct),
                fmt_f(r.base_sustained_pct),
                fmt_f(r.regulation_sustained_pct),
                fmt_opt(r.base_sensitivity),
                fmt_opt(r.regulation_sensitivity),
            ]
        }),
    )?;
    for r in &study.rows {
        emit_pair(&r.pair, &dir.join(format!("ev-{}", r.mode.name())))?;
    }
    Ok(())
}

/// Aging tallies, the count distribution against its binomial expectation, and every trial.
pub fn emit_randomization(summary: &RandomizationSummary, dir: &Path) -> Result<(), ResultsError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(
        &dir.join("aging_counts.csv"),
        &["transformer_id", "increased_count", "mean_delta_aging_pct", "mean_duty"],
        (0..summary.transformer_ids.len()).map(|j| {
            vec![
                summary.transformer_ids[j].clone(),
                summary.counts[j].to_string(),
                fmt_f(summary.mean_delta_aging_pct[j]),
                fmt_f(summary.mean_duty[j]),
            ]
        }),
    )?;
    write_csv(
        &dir.join("aging_distribution.csv"),
        &["count", "observed", "expected"],
        summary
            .observed
            .iter()
            .zip(&summary.expected)
            .enumerate()
            .map(|(k, (o, e))| vec![k.to_string(), o.to_string(), fmt_f(*e)]),
    )?;
    write_csv(
        &dir.join("randomization.csv"),
        &["n_trials", "p_hat", "chi_square", "dof", "critical_95", "correlation"],
        [vec![
            summary.n_trials.to_string(),
            fmt_f(summary.p_hat),
            fmt_f(summary.chi_square),
            summary.chi_square_dof.to_string(),
            fmt_f(summary.chi_square_critical_95),
            fmt_f(summary.correlation),
        ]],
    )?;
    for (k, pair) in summary.trials.iter().enumerate() {
        emit_pair(pair, &dir.join(format!("trial-{k}")))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    input_digest: &'a str,
    files: Vec<(String, String)>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ResultsError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join("manifest.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Write `manifest.json` listing the input digest, seed and the SHA-256 of
/// every other file under `dir`.
pub fn write_manifest(dir: &Path, scenario: &Scenario, command: &str) -> Result<(), ResultsError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut entries: Vec<(String, String)> = files
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(io_err(p))?;
            let rel = p.strip_prefix(dir).expect("under root").to_string_lossy().replace('\\', "/");
            Ok((rel, hex::encode(Sha256::digest(&bytes))))
        })
        .collect::<Result<_, ResultsError>>()?;
    entries.sort();
    let manifest = Manifest {
        tool: "tclgrid",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: scenario.config.seed,
        input_digest: &scenario.input_digest,
        files: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Case, EvMode, NodeSeries};
    use std::collections::BTreeMap;

    fn trial(nodes: Vec<Vec<f64>>) -> TrialResult {
        TrialResult {
            case: Case::Base,
            ev_mode: EvMode::None,
            seed: 0,
            test_hour_start_s: 0.0,
            dt_s: 2.0,
            baseline_kw: None,
            mean_on_power_kw: 0.0,
            steps: Vec::new(),
            nodes: nodes
                .into_iter()
                .enumerate()
                .map(|(k, samples)| NodeSeries { id: format!("n{k}"), samples })
                .collect(),
            transformers: Vec::new(),
            violations: Vec::new(),
            node_excursions: BTreeMap::new(),
            max_unbalance_pct: BTreeMap::new(),
            events: Vec::new(),
            monitored_line: None,
            sensitivity: Vec::new(),
            ev_houses: Vec::new(),
            house_duty: Vec::new(),
        }
    }

    #[test]
    fn constant_nodes_have_no_variation() {
        let v = summarize_voltage_variation(&trial(vec![vec![1.0; 5], vec![1.0; 5]]));
        assert_eq!((v.mean_std_pu, v.total_range_pu), (0.0, 0.0));
    }

    #[test]
    fn variation_by_hand() {
        // std of [1.00, 1.02] is 0.01, of [0.98, 0.98] is 0; range 1.02 - 0.98.
        let v = summarize_voltage_variation(&trial(vec![vec![1.00, 1.02], vec![0.98, 0.98]]));
        assert!((v.mean_std_pu - 0.005).abs() < 1e-15);
        assert!((v.total_range_pu - 0.04).abs() < 1e-15);
    }

    #[test]
    fn histogram_conserves_counts() {
        let t = trial(vec![vec![0.951, 0.999, 1.0, 1.049], vec![1.01, 1.011, 1.013]]);
        let h = voltage_histogram(&t);
        assert_eq!(h.iter().map(|b| b.1).sum::<usize>(), 7);
    }

    #[test]
    fn float_format_round_trips_to_nine_digits() {
        for x in [1.0, -0.000123456789123, 6.02214076e23, 1.0 / 3.0, 0.0] {
            let s = fmt_f(x);
            let y: f64 = s.parse().unwrap();
            assert!((x - y).abs() <= 5e-9 * x.abs(), "{x} {s}");
            assert_eq!(fmt_f(y), s);
        }
        assert_eq!(fmt_f(f64::NAN), "nan");
    }

    #[test]
    fn empty_violation_log_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit(&trial(vec![vec![1.0]]), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("violations.csv")).unwrap();
        assert_eq!(text, "component_id,kind,start_s,end_s,worst_value\n");
    }
}
