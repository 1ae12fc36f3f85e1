//! On-disk run artifacts: `metrics.csv`, `c_snapshots/round_<t>.csv` and
//! `summary.json`. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use super::RunTrajectory;
use crate::error::Result;

pub const CSV_HEADER: &str = "round,block,objective,grad_theta_norm_sq,prox_c_norm1_sq,composite,\
train_metric,test_metric,broadcast,upload,sync,cumulative_floats";

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn export_run(traj: &RunTrajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &traj.rounds {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            r.block.map_or("", |b| b.as_str()),
            fmt(r.objective),
            fmt(r.criterion.grad_theta_norm_sq),
            fmt(r.criterion.prox_c_norm1_sq),
            fmt(r.criterion.composite),
            fmt(r.train_metric),
            fmt(r.test_metric),
            r.comm.broadcast,
            r.comm.upload,
            r.comm.sync,
            r.cumulative_floats
        )
        .expect("writing to a String");
    }
    fs::write(dir.join("metrics.csv"), csv)?;

    let snap_dir = dir.join("c_snapshots");
    fs::create_dir_all(&snap_dir)?;
    for (t, c) in &traj.snapshots {
        let mut s = String::new();
        for row in c.blocks() {
            let cells: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        fs::write(snap_dir.join(format!("round_{t}.csv")), s)?;
    }

    let summary = json!({
        "algorithm": traj.algorithm,
        "config": traj.config,
        "metric": traj.metric_name(),
        "rounds": traj.rounds.len(),
        "output_index": traj.output_index,
        "output_weights": traj.output_weights,
        "initial": traj.initial,
        "final": traj.rounds.last(),
        "final_eval": traj.final_eval,
        "ledger": {
            "model_dim": traj.ledger.model_dim,
            "canonical_dim": traj.ledger.canonical_dim,
            "k": traj.ledger.k,
            "totals": traj.ledger.totals,
            "cumulative_floats": traj.ledger.cumulative_floats(),
            "per_round_comparison": traj.ledger.comparison(),
        },
        "smoothness": traj.smoothness,
        "cluster_assignment": traj.cluster_assignment,
        "wall_time_secs": traj.wall_time_secs,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
