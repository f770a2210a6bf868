//! Machine-readable run reports: JSON summaries plus CSV tables.

use std::path::Path;

use bdsvie_core::bdsvie::SmSolution;
use bdsvie_core::norms::EstimateReport;
use bdsvie_core::probability::NoiseModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSummary {
    pub k: usize,
    pub t: f64,
    pub mean_y: f64,
    pub var_y: f64,
    pub z_energy_delta: f64,
    pub z_energy_deltac: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub margin: f64,
    pub pass: bool,
}

impl From<&EstimateReport> for CheckLine {
    fn from(r: &EstimateReport) -> Self {
        Self {
            name: r.name.to_string(),
            lhs: r.lhs,
            rhs: r.rhs,
            slack: r.slack,
            margin: r.margin,
            pass: r.pass,
        }
    }
}

impl CheckLine {
    pub fn bound(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs: value,
            rhs: bound,
            slack: 1.0,
            margin: bound - value,
            pass: value <= bound,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub suite: String,
    pub pass: bool,
    pub lines: Vec<CheckLine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub beta: f64,
    pub iterations: usize,
    pub beta_retries: usize,
    pub differences: Vec<f64>,
    pub ratios: Vec<f64>,
    pub residual_max: f64,
    pub residual_weighted: f64,
    pub nodes: Vec<NodeSummary>,
    pub checks: Vec<CheckOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl RunReport {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Per-node summaries of a solved state.
pub fn summarize(noise: &NoiseModel, sol: &SmSolution) -> Vec<NodeSummary> {
    let n = noise.steps();
    let dt = noise.grid().dt();
    (0..=n)
        .map(|k| {
            let mean = sol.y[k].expect();
            let mean_y = if mean.len() == 1 {
                mean[0]
            } else {
                mean.iter().map(|v| v * v).sum::<f64>().sqrt()
            };
            let sq: f64 = mean.iter().map(|v| v * v).sum();
            let var_y = (sol.y[k].second_moment() - sq).max(0.0);
            let mut z_energy_delta = 0.0;
            let mut z_energy_deltac = 0.0;
            for i in 0..n {
                let m = sol.z.get(k, i).second_moment() * dt;
                if i >= k {
                    z_energy_delta += m;
                } else {
                    z_energy_deltac += m;
                }
            }
            NodeSummary {
                k,
                t: noise.grid().node(k),
                mean_y,
                var_y,
                z_energy_delta,
                z_energy_deltac,
            }
        })
        .collect()
}

pub fn write_solution_csv(path: &Path, nodes: &[NodeSummary]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "t", "mean_Y", "var_Y", "z_energy_delta", "z_energy_deltac"])?;
    for node in nodes {
        w.write_record([
            node.k.to_string(),
            node.t.to_string(),
            node.mean_y.to_string(),
            node.var_y.to_string(),
            node.z_energy_delta.to_string(),
            node.z_energy_deltac.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Generic small table writer for the demonstration command.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
