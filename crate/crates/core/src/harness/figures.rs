//! Curve grids and mean-belief tables written next to simulation output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, Figure1Config, Figure2Config};
use super::HarnessError;
use crate::learning::{BeliefTrajectory, Rule};
use crate::uncertain_models::{log_asymptotic_ulr, normalized_belief_limits, CategoricalParams, EvidenceCounts};

pub const FIG1_CSV_HEADER: &str = "truth_evidence,rival_evidence,p_truth,p_rival";
pub const FIG2_CSV_HEADER: &str = "r,pi,log_asymptotic_ulr";
pub const FIG5_CSV_HEADER: &str = "t,rule,regime,hypothesis,mean_log_belief";

fn params(probs: &[f64]) -> Result<CategoricalParams, HarnessError> {
    CategoricalParams::new(probs.to_vec()).map_err(|e| HarnessError::Invalid(e.to_string()))
}

fn runtime(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// Where the rival out-scores the truth for one truth-evidence total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Curve {
    pub truth_evidence: f64,
    /// Smallest and largest rival total preferring the rival.
    pub rival_preferred: Option<[u64; 2]>,
    pub rival_preferred_count: u64,
}

/// Normalized limits over the rival-evidence scan, with idealized evidence for both.
pub fn figure1(cfg: &Figure1Config) -> Result<(String, Vec<Figure1Curve>), HarnessError> {
    let truth = params(&cfg.truth)?;
    let rival = params(&cfg.rival)?;
    let mut csv = format!("{FIG1_CSV_HEADER}\n");
    let mut curves = Vec::new();
    for &r1 in &cfg.truth_evidence {
        let mut curve = Figure1Curve {
            truth_evidence: r1,
            rival_preferred: None,
            rival_preferred_count: 0,
        };
        let own = EvidenceCounts::idealized(r1, &truth).map_err(runtime)?;
        for r2 in cfg.rival_evidence[0]..=cfg.rival_evidence[1] {
            let other = EvidenceCounts::idealized(r2 as f64, &rival).map_err(runtime)?;
            let p = normalized_belief_limits(&[own.clone(), other], &truth).map_err(runtime)?;
            let _ = writeln!(csv, "{r1},{r2},{},{}", p[0], p[1]);
            if p[1] > p[0] {
                curve.rival_preferred_count += 1;
                curve.rival_preferred = Some(match curve.rival_preferred {
                    None => [r2, r2],
                    Some([lo, _]) => [lo, r2],
                });
            }
        }
        curves.push(curve);
    }
    Ok((csv, curves))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure2Summary {
    pub points: usize,
    /// `None` when no hypothesis matches the truth.
    pub matched_increasing: Option<bool>,
    /// Every mismatched hypothesis has a negative value at the largest `R`.
    pub mismatched_negative_at_max: bool,
}

/// Log-spaced grid from `min` to `max`, both included.
pub fn log_grid(min: f64, max: f64, per_decade: u32) -> Vec<f64> {
    let decades = (max / min).log10();
    let steps = (decades * per_decade as f64).round().max(0.0) as u32;
    let mut grid: Vec<f64> = (0..steps)
        .map(|i| min * 10f64.powf(i as f64 / per_decade as f64))
        .collect();
    grid.push(max);
    grid.dedup();
    grid
}

pub fn figure2(cfg: &Figure2Config) -> Result<(String, Figure2Summary), HarnessError> {
    let truth = params(&cfg.truth)?;
    let grid = log_grid(cfg.evidence_min, cfg.evidence_max, cfg.points_per_decade);
    let mut csv = format!("{FIG2_CSV_HEADER}\n");
    let mut matched_increasing = None;
    let mut mismatched_negative = true;
    for &pi in &cfg.pis {
        let hyp = params(&[pi, 1.0 - pi])?;
        let values = grid
            .iter()
            .map(|&r| log_asymptotic_ulr(&EvidenceCounts::idealized(r, &hyp).map_err(runtime)?, &truth).map_err(runtime))
            .collect::<Result<Vec<f64>, _>>()?;
        for (r, v) in grid.iter().zip(&values) {
            let _ = writeln!(csv, "{r},{pi},{v}");
        }
        if (pi - truth.prob(0)).abs() < 1e-12 {
            let inc = values.windows(2).all(|w| w[1] > w[0]);
            matched_increasing = Some(matched_increasing.unwrap_or(true) && inc);
        } else if !(values.last().copied().unwrap_or(0.0) < 0.0) {
            mismatched_negative = false;
        }
    }
    Ok((
        csv,
        Figure2Summary {
            points: grid.len(),
            matched_increasing,
            mismatched_negative_at_max: mismatched_negative,
        },
    ))
}

/// Running mean of log beliefs over agents and runs, keyed by `(t, hypothesis)`.
#[derive(Debug, Clone, Default)]
pub struct MeanBeliefs {
    cells: BTreeMap<(u64, usize), (f64, u64)>,
}

impl MeanBeliefs {
    pub fn add(&mut self, t: u64, theta: usize, log_belief: f64) {
        let cell = self.cells.entry((t, theta)).or_insert((0.0, 0));
        cell.0 += log_belief;
        cell.1 += 1;
    }

    /// Adds every snapshot, in the same order the belief CSV lists them.
    pub fn add_trajectory(&mut self, trajectory: &BeliefTrajectory) {
        for snap in &trajectory.snapshots {
            for agent in 0..trajectory.agents {
                for theta in 0..trajectory.hypotheses {
                    self.add(snap.t, theta, snap.log_mu[agent * trajectory.hypotheses + theta]);
                }
            }
        }
    }

    pub fn mean(&self, t: u64, theta: usize) -> Option<f64> {
        self.cells.get(&(t, theta)).map(|(s, n)| s / *n as f64)
    }

    pub fn write_rows(&self, out: &mut String, rule: Rule, regime: &str) {
        for (&(t, theta), &(sum, n)) in &self.cells {
            let _ = writeln!(out, "{t},{},{regime},{theta},{}", rule.label(), sum / n as f64);
        }
    }
}

/// Rebuilds `fig5_beliefs.csv` from the per-rule belief CSVs in `dir`.
pub fn regenerate_fig5(dir: &Path) -> Result<String, HarnessError> {
    let manifest_path = dir.join("manifest.json");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path).map_err(HarnessError::io(&manifest_path))?,
    )
    .map_err(|e| HarnessError::Invalid(format!("{}: {e}", manifest_path.display())))?;
    let effective = manifest["effective_config"]
        .as_str()
        .ok_or_else(|| HarnessError::Invalid(format!("{}: no effective_config", manifest_path.display())))?;
    let config: ExperimentConfig = toml::from_str(effective).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let sim = config
        .simulation
        .ok_or_else(|| HarnessError::Invalid("experiment has no simulation output".into()))?;
    let regime = sim.evidence.regime.label();
    let mut csv = format!("{FIG5_CSV_HEADER}\n");
    for rule in &sim.rules {
        let path = dir.join(rule.label()).join("beliefs.csv");
        let text = std::fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
        let mut means = MeanBeliefs::default();
        for (n, line) in text.lines().enumerate().skip(1) {
            let bad = || HarnessError::Invalid(format!("{}:{}: malformed row", path.display(), n + 1));
            let fields: Vec<&str> = line.split(',').collect();
            let [_, t, _, theta, v] = fields.as_slice() else {
                return Err(bad());
            };
            means.add(
                t.parse().map_err(|_| bad())?,
                theta.parse().map_err(|_| bad())?,
                v.parse().map_err(|_| bad())?,
            );
        }
        means.write_rows(&mut csv, *rule, &regime);
    }
    Ok(csv)
}
