//! CSV and JSON emission. Column orders are fixed; all floating-point
//! numbers print with 17 significant digits so files are byte-stable across
//! reruns of the same configuration.
//!
//! Per-cell files (in `<out>/<label>/`):
//! - `trace.csv`: `t,worst_gap,gap_0..gap_{N-1},potential,
//!   running_nash_regret,thm_bound_rho,thm_bound_uniform,<metric>` where
//!   `<metric>` is `sum_log_z` for KL runs and `sq_displacement` for
//!   Euclidean runs.
//! - `artifact.json`: the full [`RunArtifact`] including timing metadata.
//!
//! Top-level files: `summary.csv` (one row per cell), `scaling.csv` (sweep
//! aggregation), `certification.csv` (oracle reports), `bounds.csv`.

use std::fs;
use std::path::Path;

use anyhow::Context;

use mpg_core::oracle::OracleReport;

use crate::runner::{BoundRow, RunArtifact, ScalingRow};

/// 17 significant digits: enough to reproduce any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt_usize(x: Option<usize>) -> String {
    match x {
        Some(v) => v.to_string(),
        None => "inf".to_string(),
    }
}

fn fmt_opt_f64(x: Option<f64>) -> String {
    match x {
        Some(v) => fmt_f64(v),
        None => "inf".to_string(),
    }
}

/// Trace CSV body for one cell.
pub fn trace_csv(artifact: &RunArtifact) -> String {
    let metric_name = if artifact.algorithm == "kl" { "sum_log_z" } else { "sq_displacement" };
    let gap_cols: Vec<String> = (0..artifact.num_players).map(|i| format!("gap_{i}")).collect();
    let mut out = format!(
        "t,worst_gap,{},potential,running_nash_regret,thm_bound_rho,thm_bound_uniform,{metric_name}\n",
        gap_cols.join(",")
    );
    for row in &artifact.rows {
        let gaps: Vec<String> = row.per_player_gaps.iter().map(|&g| fmt_f64(g)).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.t,
            fmt_f64(row.worst_gap),
            gaps.join(","),
            fmt_f64(row.potential),
            fmt_f64(row.running_nash_regret),
            fmt_f64(row.thm_bound_rho),
            fmt_f64(row.thm_bound_uniform),
            fmt_f64(row.reg_metric),
        ));
    }
    out
}

pub const SUMMARY_HEADER: &str = "label,algorithm,advantage_form,num_players,num_states,seed,\
step_size,iterations_run,phi_max,kappa_rho,kappa_tilde_upper,mismatch_method,mpg_residual,\
empirical_c_upper,nash_regret,iterations_to_epsilon,epsilon,content_hash";

/// Summary CSV body: one row per (algorithm, N, seed) cell.
pub fn summary_csv(artifacts: &[RunArtifact]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for a in artifacts {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            a.label,
            a.algorithm,
            a.advantage_form,
            a.num_players,
            a.num_states,
            a.seed,
            fmt_f64(a.step_size),
            a.iterations_run,
            fmt_f64(a.phi_max),
            fmt_f64(a.mismatch.kappa_rho),
            fmt_f64(a.mismatch.kappa_tilde_upper),
            a.mismatch.method,
            fmt_opt_f64(a.mpg_residual),
            fmt_opt_f64(a.empirical_c_upper),
            fmt_f64(a.nash_regret),
            fmt_opt_usize(a.iterations_to_epsilon),
            fmt_f64(a.epsilon),
            a.content_hash,
        ));
    }
    out
}

/// Certification CSV body.
pub fn certification_csv(reports: &[OracleReport]) -> String {
    let mut out =
        "oracle,instance,built_value,oracle_value,abs_error,rel_error,tolerance,pass\n".to_string();
    for r in reports {
        out.push_str(&format!(
            "{},\"{}\",{},{},{},{},{},{}\n",
            r.oracle,
            r.instance,
            fmt_f64(r.built_value),
            fmt_f64(r.oracle_value),
            fmt_f64(r.abs_error),
            fmt_f64(r.rel_error),
            fmt_f64(r.tolerance),
            r.pass,
        ));
    }
    out
}

/// Scaling CSV body.
pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out =
        "num_players,algorithm,median_iterations_to_epsilon,median_theorem_iteration_bound\n"
            .to_string();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.num_players,
            r.algorithm,
            fmt_opt_f64(r.median_iterations_to_epsilon),
            fmt_f64(r.median_theorem_iteration_bound),
        ));
    }
    out
}

/// Bounds CSV body.
pub fn bounds_csv(rows: &[BoundRow]) -> String {
    let mut out = "num_players,algorithm,phi_max,kappa_tilde_upper,theorem_step_size,assumed_c,\
regret_bound_at_t,horizon_t,iterations_for_epsilon,epsilon\n"
        .to_string();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.num_players,
            r.algorithm,
            fmt_f64(r.phi_max),
            fmt_f64(r.kappa_tilde_upper),
            fmt_f64(r.theorem_step_size),
            fmt_opt_f64(r.assumed_c),
            fmt_f64(r.regret_bound_at_t),
            r.horizon_t,
            fmt_f64(r.iterations_for_epsilon),
            fmt_f64(r.epsilon),
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Writes per-cell and top-level files under `out_dir`. CSV bodies never
/// contain timing metadata, so reruns of the same config are hash-equal.
pub fn write_run_outputs(
    out_dir: &Path,
    artifacts: &[RunArtifact],
    scaling: Option<&[ScalingRow]>,
    format: OutputFormat,
) -> anyhow::Result<()> {
    for artifact in artifacts {
        check_running_regret_consistency(artifact)?;
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for artifact in artifacts {
        let cell_dir = out_dir.join(&artifact.label);
        fs::create_dir_all(&cell_dir)?;
        match format {
            OutputFormat::Csv => {
                fs::write(cell_dir.join("trace.csv"), trace_csv(artifact))?;
            }
            OutputFormat::Json => {
                fs::write(
                    cell_dir.join("artifact.json"),
                    serde_json::to_string_pretty(artifact)?,
                )?;
            }
        }
    }
    if format == OutputFormat::Csv {
        fs::write(out_dir.join("summary.csv"), summary_csv(artifacts))?;
        let reports: Vec<OracleReport> = artifacts
            .iter()
            .flat_map(|a| a.certification.iter().cloned())
            .collect();
        fs::write(out_dir.join("certification.csv"), certification_csv(&reports))?;
        if let Some(rows) = scaling {
            fs::write(out_dir.join("scaling.csv"), scaling_csv(rows))?;
        }
    } else {
        let all = serde_json::json!({
            "artifacts": artifacts,
            "scaling": scaling,
        });
        fs::write(out_dir.join("experiment.json"), serde_json::to_string_pretty(&all)?)?;
    }
    Ok(())
}

/// The running regret column must be the prefix average of the worst gaps.
fn check_running_regret_consistency(artifact: &RunArtifact) -> anyhow::Result<()> {
    let mut acc = 0.0f64;
    for (idx, row) in artifact.rows.iter().enumerate() {
        acc += row.worst_gap;
        let want = acc / (idx as f64 + 1.0);
        if (row.running_nash_regret - want).abs() > 1e-12 {
            anyhow::bail!(
                "{}: running regret column inconsistent at t={} ({} vs {})",
                artifact.label,
                row.t,
                row.running_nash_regret,
                want
            );
        }
    }
    Ok(())
}
