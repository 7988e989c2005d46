//! Monte Carlo orchestration and the on-disk artifact tree.
//!
//! ```text
//! <out>/manifest.json        config text, hash, seed, version
//! <out>/summary.json         error statistics, rates, checks
//! <out>/evidence.csv         prior evidence of every run
//! <out>/<rule>/beliefs.csv   recorded log beliefs per rule
//! <out>/fig5_beliefs.csv     mean log belief over agents and runs
//! <out>/signals.csv          drawn signals, when recorded
//! <out>/topology.txt         edge list of the graph
//! <out>/mixing.csv           weight matrix
//! <out>/fig1_curves.csv, fig2_curves.csv
//! ```
//!
//! `summary.json` carries no timestamps or paths, so reruns of one config
//! reproduce it byte for byte.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, SimulationConfig};
use super::figures::{self, Figure1Curve, Figure2Summary, MeanBeliefs, FIG5_CSV_HEADER};
use super::HarnessError;
use crate::analysis::{
    asymptotic_limits, average_kl, ca_divergence, error_stats, fit_rate_after_burn_in, CaEstimate, CaMethod,
    ErrorStats, RateFitResult, RateModel, RunView, DEFAULT_BURN_IN, MAX_EXACT_TERMS,
};
use crate::learning::{run, write_trajectory_csv, BeliefTrajectory, EngineConfig, Rule, TRAJECTORY_CSV_HEADER};
use crate::network::{consensus_gap, MixingMatrix};
use crate::signals::{
    derive_seed, generate_evidence_table, signal_streams, write_evidence_csv, write_signal_csv, EvidenceTable,
    StreamPurpose, WorldModel, EVIDENCE_CSV_HEADER, SIGNAL_CSV_HEADER,
};
use crate::uncertain_models::{ulrt_classify, UlrDecision};

/// Rounds at which the summary reports `consensus_gap` against its bound.
pub const GAP_ROUNDS: [u32; 4] = [1, 10, 100, 1000];

/// Slack allowed when comparing DeGroot and log-linear beliefs.
pub const DOMINANCE_TOLERANCE: f64 = 1e-9;

const CA_SAMPLES: usize = 200_000;

/// An `f64` that serializes non-finite values as the strings `inf`, `-inf`, `nan`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&self.0.to_string().to_lowercase())
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub figure1: Option<Vec<Figure1Curve>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub figure2: Option<Figure2Summary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub agents: usize,
    pub hypotheses: usize,
    pub ground_truth: usize,
    pub regime: String,
    pub horizon: u64,
    pub runs: u64,
    pub checkpoints: Vec<u64>,
    pub network: NetworkSummary,
    /// Per hypothesis, the rates learning theory predicts for certain evidence.
    pub reference_rates: Vec<ReferenceRate>,
    pub rules: Vec<RuleSummary>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetworkSummary {
    pub edges: usize,
    pub eta: f64,
    pub lambda_bound: f64,
    pub consensus_gap: Vec<GapRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub t: u32,
    pub gap: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceRate {
    /// `(1/m) Σ_i D_KL(π_i* || π_iθ)`.
    pub average_kl: Num,
    pub ca_divergence: CaEstimate,
    pub ca_method: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RuleSummary {
    pub rule: Rule,
    pub failed_runs: Vec<FailedRun>,
    pub error_stats: Option<ErrorStats>,
    /// `[hypothesis][checkpoint]`: max over runs of `max_i |log μ_i - mean log μ|`.
    pub consensus_spread: Vec<Vec<Num>>,
    /// `[hypothesis][checkpoint]`: median over runs of the agent-mean log belief.
    pub median_log_belief: Vec<Vec<Num>>,
    /// `[hypothesis]`: linear fit of the mean log belief after burn-in.
    pub rates: Vec<Option<RateFitResult>>,
    /// `[hypothesis]`: test decisions on final beliefs over all agents and runs.
    pub decisions: Vec<DecisionCounts>,
    pub final_state: Vec<RunFinal>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedRun {
    pub run: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DecisionCounts {
    pub accept: usize,
    pub reject: usize,
    pub unsure: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFinal {
    pub run: u64,
    /// `[agent][hypothesis]`.
    pub log_beliefs: Vec<Vec<Num>>,
    /// `[agent][category]`.
    pub histograms: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<Rule>,
    pub passed: bool,
    pub detail: String,
}

/// Where an experiment wrote its output.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub summary: Summary,
}

struct RunOutcome {
    run: u64,
    evidence: EvidenceTable,
    limits: Vec<Vec<Option<f64>>>,
    /// Indexed like the config's rule list.
    trajectories: Vec<Result<BeliefTrajectory, String>>,
}

pub fn config_hash(effective: &str) -> String {
    hex::encode(Sha256::digest(effective.as_bytes()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(HarnessError::io(path))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    fs::File::create(path).map(BufWriter::new).map_err(HarnessError::io(path))
}

/// Runs every part the config enables and writes the artifact tree.
///
/// `source` is the config text as written by the user; it lands verbatim in
/// the manifest. `threads = None` uses all available cores. Runs that hit
/// NaN beliefs are listed in the summary and reported as
/// [`HarnessError::RunsFailed`] once all artifacts are on disk.
pub fn run_experiment(
    config: &ExperimentConfig,
    source: &str,
    threads: Option<usize>,
) -> Result<Artifacts, HarnessError> {
    config.validate()?;
    let dir = config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;

    // the output location is not part of the experiment's identity
    let mut identity = config.clone();
    identity.output = None;
    let effective = toml::to_string(&identity).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let hash = config_hash(&effective);
    let manifest = serde_json::json!({
        "name": config.name,
        "seed": config.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "config": source,
        "effective_config": effective,
    });
    write_file(&dir.join("manifest.json"), &format!("{manifest:#}\n"))?;

    let mut summary = Summary {
        name: config.name.clone(),
        seed: config.seed,
        config_hash: hash,
        simulation: None,
        figure1: None,
        figure2: None,
    };
    if let Some(cfg) = &config.figure1 {
        let (csv, curves) = figures::figure1(cfg)?;
        write_file(&dir.join("fig1_curves.csv"), &csv)?;
        summary.figure1 = Some(curves);
    }
    if let Some(cfg) = &config.figure2 {
        let (csv, shape) = figures::figure2(cfg)?;
        write_file(&dir.join("fig2_curves.csv"), &csv)?;
        summary.figure2 = Some(shape);
    }
    let mut failed = 0;
    if let Some(sim) = &config.simulation {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.unwrap_or(0))
            .build()
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let sim_summary = pool.install(|| simulate(sim, config.seed, &dir))?;
        failed = sim_summary.rules.iter().map(|r| r.failed_runs.len()).sum();
        summary.simulation = Some(sim_summary);
    }
    let json = serde_json::to_string_pretty(&summary).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    write_file(&dir.join("summary.json"), &(json + "\n"))?;
    if failed > 0 {
        let total = config.simulation.as_ref().map_or(0, |s| s.runs as usize * s.rules.len());
        return Err(HarnessError::RunsFailed { failed, total });
    }
    Ok(Artifacts { dir, summary })
}

fn simulate_run(sim: &SimulationConfig, seed: u64, run_index: u64, world: &WorldModel, matrix: &MixingMatrix) -> Result<RunOutcome, HarnessError> {
    let evidence = generate_evidence_table(world, &sim.evidence, seed, run_index)
        .map_err(|e| HarnessError::Runtime(format!("run {run_index}: {e}")))?;
    let limits = asymptotic_limits(world, &evidence).map_err(|e| HarnessError::Runtime(format!("run {run_index}: {e}")))?;
    let trajectories = sim
        .rules
        .iter()
        .enumerate()
        .map(|(i, &rule)| {
            let engine = EngineConfig {
                rule,
                horizon: sim.horizon,
                record_stride: sim.record_stride,
                checkpoints: sim.checkpoints.clone(),
                // every rule sees the same streams, so one copy is enough
                record_signals: sim.record_signals && i == 0,
            };
            let mut streams = signal_streams(seed, run_index, world.agents());
            run(world, matrix, &evidence, &engine, &mut streams).map_err(|e| e.to_string())
        })
        .collect();
    Ok(RunOutcome {
        run: run_index,
        evidence,
        limits,
        trajectories,
    })
}

fn simulate(sim: &SimulationConfig, seed: u64, dir: &Path) -> Result<SimulationSummary, HarnessError> {
    let world = sim.world()?;
    let (topology, matrix) = sim.network(seed)?;
    write_file(&dir.join("topology.txt"), &topology.to_edge_list())?;
    write_file(&dir.join("mixing.csv"), &matrix.to_csv())?;

    let outcomes = (0..sim.runs)
        .into_par_iter()
        .map(|r| simulate_run(sim, seed, r, &world, &matrix))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = create(&dir.join("evidence.csv"))?;
    let io = HarnessError::io(dir.join("evidence.csv"));
    (|| -> std::io::Result<()> {
        writeln!(out, "{EVIDENCE_CSV_HEADER}")?;
        for o in &outcomes {
            write_evidence_csv(&mut out, o.run, &o.evidence)?;
        }
        out.flush()
    })()
    .map_err(io)?;

    if sim.record_signals {
        let path = dir.join("signals.csv");
        let mut out = create(&path)?;
        (|| -> std::io::Result<()> {
            writeln!(out, "{SIGNAL_CSV_HEADER}")?;
            for o in &outcomes {
                if let Ok(Some(signals)) = o.trajectories[0].as_ref().map(|t| t.signals.as_ref()) {
                    write_signal_csv(&mut out, o.run, signals)?;
                }
            }
            out.flush()
        })()
        .map_err(HarnessError::io(&path))?;
    }

    let regime = sim.evidence.regime.label();
    let mut fig5 = format!("{FIG5_CSV_HEADER}\n");
    let mut rules = Vec::new();
    for (ri, &rule) in sim.rules.iter().enumerate() {
        let rule_dir = dir.join(rule.label());
        fs::create_dir_all(&rule_dir).map_err(HarnessError::io(&rule_dir))?;
        let path = rule_dir.join("beliefs.csv");
        let mut out = create(&path)?;
        let mut means = MeanBeliefs::default();
        (|| -> std::io::Result<()> {
            writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
            for o in &outcomes {
                if let Ok(t) = &o.trajectories[ri] {
                    write_trajectory_csv(&mut out, o.run, t)?;
                    means.add_trajectory(t);
                }
            }
            out.flush()
        })()
        .map_err(HarnessError::io(&path))?;
        means.write_rows(&mut fig5, rule, &regime);
        rules.push(summarize_rule(sim, rule, ri, &outcomes)?);
    }
    write_file(&dir.join("fig5_beliefs.csv"), &fig5)?;

    let reference_rates = reference_rates(&world, seed)?;
    let checks = checks(sim, &world, &outcomes, &rules);
    Ok(SimulationSummary {
        agents: world.agents(),
        hypotheses: world.hypothesis_count(),
        ground_truth: sim.ground_truth,
        regime,
        horizon: sim.horizon,
        runs: sim.runs,
        checkpoints: sim.checkpoints.clone(),
        network: NetworkSummary {
            edges: topology.edges().len(),
            eta: matrix.eta(),
            lambda_bound: matrix.lambda_bound(),
            consensus_gap: GAP_ROUNDS
                .iter()
                .map(|&t| GapRow {
                    t,
                    gap: consensus_gap(&matrix, t),
                    bound: std::f64::consts::SQRT_2 * matrix.agents() as f64 * matrix.lambda_bound().powi(t as i32),
                })
                .collect(),
        },
        reference_rates,
        rules,
        checks,
    })
}

fn reference_rates(world: &WorldModel, seed: u64) -> Result<Vec<ReferenceRate>, HarnessError> {
    let m = world.agents();
    let truths: Vec<_> = (0..m).map(|i| world.ground_truth(i).clone()).collect();
    let terms: f64 = truths.iter().map(|t| t.categories() as f64).product();
    (0..world.hypothesis_count())
        .map(|theta| {
            let hyps: Vec<_> = (0..m).map(|i| world.hypothesis(i, theta).clone()).collect();
            let (method, label) = if terms <= MAX_EXACT_TERMS as f64 {
                (CaMethod::Exact, "exact")
            } else {
                let seed = derive_seed(seed, 0, theta as u64, StreamPurpose::Auxiliary(0xCA));
                (CaMethod::MonteCarlo { samples: CA_SAMPLES, seed }, "monte_carlo")
            };
            let err = |e: crate::analysis::AnalysisError| HarnessError::Runtime(e.to_string());
            Ok(ReferenceRate {
                average_kl: Num(average_kl(&truths, &hyps).map_err(err)?),
                ca_divergence: ca_divergence(&truths, &hyps, method).map_err(err)?,
                ca_method: label,
            })
        })
        .collect()
}

/// Agent-mean log belief of hypothesis `theta` at a snapshot.
fn agent_mean(t: &BeliefTrajectory, snap: usize, theta: usize) -> f64 {
    let s = &t.snapshots[snap];
    (0..t.agents).map(|i| s.log_mu[i * t.hypotheses + theta]).sum::<f64>() / t.agents as f64
}

/// Spread around the mean; `0` when every belief is `-inf`, `inf` when only some are.
fn spread(values: &[f64]) -> f64 {
    let infinite = values.iter().filter(|v| v.is_infinite()).count();
    if infinite == values.len() {
        0.0
    } else if infinite > 0 {
        f64::INFINITY
    } else {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        if a == b {
            a
        } else {
            (a + b) / 2.0
        }
    }
}

fn summarize_rule(sim: &SimulationConfig, rule: Rule, ri: usize, outcomes: &[RunOutcome]) -> Result<RuleSummary, HarnessError> {
    let ok: Vec<(&RunOutcome, &BeliefTrajectory)> = outcomes
        .iter()
        .filter_map(|o| o.trajectories[ri].as_ref().ok().map(|t| (o, t)))
        .collect();
    let failed_runs = outcomes
        .iter()
        .filter_map(|o| {
            o.trajectories[ri].as_ref().err().map(|e| FailedRun {
                run: o.run,
                error: e.clone(),
            })
        })
        .collect();
    let hypotheses = outcomes.first().map_or(0, |o| o.evidence[0].len());

    let views: Vec<RunView<'_>> = ok
        .iter()
        .map(|(o, t)| RunView {
            trajectory: t,
            evidence: &o.evidence,
            log_limits: &o.limits,
        })
        .collect();
    let error_stats = if views.is_empty() {
        None
    } else {
        Some(error_stats(&views, &sim.checkpoints).map_err(|e| HarnessError::Runtime(e.to_string()))?)
    };

    let snap_index = |t: &BeliefTrajectory, at: u64| t.snapshots.iter().position(|s| s.t == at);
    let mut consensus_spread = Vec::with_capacity(hypotheses);
    let mut median_log_belief = Vec::with_capacity(hypotheses);
    let mut rates = Vec::with_capacity(hypotheses);
    let mut decisions = Vec::with_capacity(hypotheses);
    for theta in 0..hypotheses {
        let mut spreads = Vec::new();
        let mut medians = Vec::new();
        for &c in &sim.checkpoints {
            let mut worst: f64 = 0.0;
            let mut means = Vec::new();
            for (_, t) in &ok {
                let Some(k) = snap_index(t, c) else { continue };
                let s = &t.snapshots[k];
                let beliefs: Vec<f64> = (0..t.agents).map(|i| s.log_mu[i * t.hypotheses + theta]).collect();
                worst = worst.max(spread(&beliefs));
                means.push(agent_mean(t, k, theta));
            }
            spreads.push(Num(worst));
            medians.push(Num(median(means)));
        }
        consensus_spread.push(spreads);
        median_log_belief.push(medians);

        // mean over runs and agents at every snapshot
        rates.push(ok.first().and_then(|(_, first)| {
            let series: Vec<(f64, f64)> = (0..first.snapshots.len())
                .map(|k| {
                    let sum: f64 = ok.iter().map(|(_, t)| agent_mean(t, k, theta)).sum();
                    (first.snapshots[k].t as f64, sum / ok.len() as f64)
                })
                .collect();
            fit_rate_after_burn_in(&series, RateModel::Linear, DEFAULT_BURN_IN).ok()
        }));

        let mut counts = DecisionCounts::default();
        for (_, t) in &ok {
            let last = t.last();
            for i in 0..t.agents {
                let v = last.log_mu[i * t.hypotheses + theta];
                match ulrt_classify(v, sim.upsilon).map(|o| o.decision) {
                    Ok(UlrDecision::Accept) => counts.accept += 1,
                    Ok(UlrDecision::Reject) => counts.reject += 1,
                    _ => counts.unsure += 1,
                }
            }
        }
        decisions.push(counts);
    }

    let final_state = ok
        .iter()
        .map(|(o, t)| {
            let last = t.last();
            RunFinal {
                run: o.run,
                log_beliefs: (0..t.agents)
                    .map(|i| (0..t.hypotheses).map(|h| Num(last.log_mu[i * t.hypotheses + h])).collect())
                    .collect(),
                histograms: last.histograms.iter().map(|h| h.counts().to_vec()).collect(),
            }
        })
        .collect();

    Ok(RuleSummary {
        rule,
        failed_runs,
        error_stats,
        consensus_spread,
        median_log_belief,
        rates,
        decisions,
        final_state,
    })
}

fn checks(sim: &SimulationConfig, world: &WorldModel, outcomes: &[RunOutcome], rules: &[RuleSummary]) -> Vec<Check> {
    let mut out = Vec::new();
    let certain = sim.evidence.regime.bounds().is_none();
    let truth = sim.ground_truth;
    let first_last = |row: &[Num]| match (row.first(), row.last()) {
        (Some(a), Some(b)) if row.len() >= 2 => Some((a.0, b.0)),
        _ => None,
    };

    let ll = sim.rules.iter().position(|&r| r == Rule::LogLinear);
    let dg = sim.rules.iter().position(|&r| r == Rule::DeGroot);
    if let (Some(ll), Some(dg)) = (ll, dg) {
        let mut worst = f64::NEG_INFINITY;
        let mut compared = 0usize;
        for o in outcomes {
            let (Ok(a), Ok(b)) = (&o.trajectories[ll], &o.trajectories[dg]) else { continue };
            for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
                for (&x, &y) in sa.log_mu.iter().zip(&sb.log_mu) {
                    compared += 1;
                    if x > y {
                        worst = worst.max(if y == f64::NEG_INFINITY { f64::INFINITY } else { x - y });
                    }
                }
            }
        }
        out.push(Check {
            name: "degroot_dominates_log_linear",
            rule: None,
            passed: compared > 0 && worst <= DOMINANCE_TOLERANCE,
            detail: if worst == f64::NEG_INFINITY {
                format!("{compared} belief pairs; log-linear never above DeGroot")
            } else {
                format!("{compared} belief pairs; largest log-linear excess {worst:e}")
            },
        });
    }

    for r in rules {
        if !certain {
            let shrinking: Vec<usize> = (0..world.hypothesis_count())
                .filter(|&h| first_last(&r.consensus_spread[h]).is_some_and(|(a, b)| b < a))
                .collect();
            if sim.checkpoints.len() >= 2 {
                out.push(Check {
                    name: "consensus_spread_shrinks",
                    rule: Some(r.rule),
                    passed: shrinking.len() == world.hypothesis_count(),
                    detail: format!(
                        "spread fell between the first and last checkpoint for hypotheses {shrinking:?}"
                    ),
                });
            }
            if r.rule == Rule::LogLinear {
                if let Some(stats) = &r.error_stats {
                    let row: Vec<Num> = stats.e_cen[truth].iter().map(|c| Num(c.value.unwrap_or(f64::NAN))).collect();
                    if let Some((a, b)) = first_last(&row) {
                        out.push(Check {
                            name: "centralized_error_decreases",
                            rule: Some(r.rule),
                            passed: b < a,
                            detail: format!("e_cen of the true hypothesis: {a:e} -> {b:e}"),
                        });
                    }
                }
            }
        } else {
            let mismatched: Vec<usize> = (0..world.hypothesis_count())
                .filter(|&h| (0..world.agents()).any(|i| world.hypothesis(i, h) != world.ground_truth(i)))
                .collect();
            let decaying = mismatched
                .iter()
                .filter(|&&h| match &r.rates[h] {
                    Some(fit) => fit.slope < 0.0,
                    // a fit is impossible once beliefs reach -inf
                    None => r.median_log_belief[h].last().is_some_and(|v| v.0 == f64::NEG_INFINITY),
                })
                .count();
            out.push(Check {
                name: "mismatched_beliefs_decay",
                rule: Some(r.rule),
                passed: decaying == mismatched.len(),
                detail: format!("{decaying} of {} mismatched hypotheses decay", mismatched.len()),
            });
            if let Some((a, b)) = first_last(&r.median_log_belief[truth]) {
                out.push(Check {
                    name: "matched_belief_grows",
                    rule: Some(r.rule),
                    passed: b > a,
                    detail: format!("median log belief of the true hypothesis: {a} -> {b}"),
                });
            }
        }
    }
    out
}
