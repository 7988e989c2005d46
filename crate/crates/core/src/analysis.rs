//! Divergences, error statistics and convergence-rate fits.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::learning::BeliefTrajectory;
use crate::logspace::log_sum_exp;
use crate::signals::{sample_signal, EvidenceTable, WorldModel};
use crate::uncertain_models::{log_asymptotic_ulr, log_ratio, CategoricalParams, EvidenceCounts, ModelError};

/// Exact D_CA enumeration is refused above this many terms.
pub const MAX_EXACT_TERMS: usize = 1_000_000;

/// Fraction of the horizon dropped before rate fits.
pub const DEFAULT_BURN_IN: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("expected {expected} categories, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ground truths ({truths}) and hypotheses ({hypotheses}) cover different agent counts")]
    AgentMismatch { truths: usize, hypotheses: usize },
    #[error("exact enumeration needs {terms} terms, above the cap of {MAX_EXACT_TERMS}")]
    TooManyTerms { terms: f64 },
    #[error("need at least one Monte Carlo sample")]
    NoSamples,
    #[error("checkpoint t={0} is missing from a trajectory")]
    MissingCheckpoint(u64),
    #[error("rate fit needs at least 10 points, got {0}")]
    TooFewPoints(usize),
    #[error("rate fit input is not increasing in t or has non-finite values")]
    BadSeries,
    #[error("rate fit design matrix is singular")]
    SingularDesign,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `D_KL(p || q)` in nats. Infinite when `q` misses mass that `p` has.
pub fn kl_divergence(p: &CategoricalParams, q: &CategoricalParams) -> Result<f64, AnalysisError> {
    if p.categories() != q.categories() {
        return Err(AnalysisError::DimensionMismatch {
            expected: p.categories(),
            got: q.categories(),
        });
    }
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        if a > 0.0 {
            if b == 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total)
}

/// Mean of `D_KL(truth_i || hypothesis_i)` over agents.
pub fn average_kl(truths: &[CategoricalParams], hypotheses: &[CategoricalParams]) -> Result<f64, AnalysisError> {
    check_agents(truths, hypotheses)?;
    let mut sum = 0.0;
    for (t, h) in truths.iter().zip(hypotheses) {
        sum += kl_divergence(t, h)?;
    }
    Ok(sum / truths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaMethod {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaEstimate {
    pub value: f64,
    /// Zero for exact enumeration.
    pub std_error: f64,
}

fn check_agents(truths: &[CategoricalParams], hypotheses: &[CategoricalParams]) -> Result<(), AnalysisError> {
    if truths.len() != hypotheses.len() || truths.is_empty() {
        return Err(AnalysisError::AgentMismatch {
            truths: truths.len(),
            hypotheses: hypotheses.len(),
        });
    }
    for (t, h) in truths.iter().zip(hypotheses) {
        if t.categories() != h.categories() {
            return Err(AnalysisError::DimensionMismatch {
                expected: t.categories(),
                got: h.categories(),
            });
        }
    }
    Ok(())
}

/// Centralized-average divergence
/// `-E[log((1/m) Σ_i π_{i,k_i,θ} / π_{i,k_i,θ*})]` with `k_i ~ π_{i,θ*}` independent.
pub fn ca_divergence(
    truths: &[CategoricalParams],
    hypotheses: &[CategoricalParams],
    method: CaMethod,
) -> Result<CaEstimate, AnalysisError> {
    check_agents(truths, hypotheses)?;
    let m = truths.len();
    let ratio = |i: usize, k: usize| hypotheses[i].prob(k) / truths[i].prob(k);
    match method {
        CaMethod::Exact => {
            let terms: f64 = truths.iter().map(|t| t.categories() as f64).product();
            if terms > MAX_EXACT_TERMS as f64 {
                return Err(AnalysisError::TooManyTerms { terms });
            }
            let mut index = vec![0usize; m];
            let mut total = 0.0;
            'outer: loop {
                let weight: f64 = index.iter().enumerate().map(|(i, &k)| truths[i].prob(k)).product();
                if weight > 0.0 {
                    let avg = index.iter().enumerate().map(|(i, &k)| ratio(i, k)).sum::<f64>() / m as f64;
                    total -= weight * avg.ln();
                }
                // odometer increment
                for i in 0..m {
                    index[i] += 1;
                    if index[i] < truths[i].categories() {
                        continue 'outer;
                    }
                    index[i] = 0;
                }
                break;
            }
            Ok(CaEstimate {
                value: total,
                std_error: 0.0,
            })
        }
        CaMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(AnalysisError::NoSamples);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..samples {
                let avg = (0..m)
                    .map(|i| ratio(i, sample_signal(&truths[i], &mut rng)))
                    .sum::<f64>()
                    / m as f64;
                let x = -avg.ln();
                sum += x;
                sum_sq += x * x;
            }
            let n = samples as f64;
            let mean = sum / n;
            let var = if samples > 1 {
                ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            Ok(CaEstimate {
                value: mean,
                std_error: (var / n).sqrt(),
            })
        }
    }
}

/// Almost-sure limit of each agent's log ratio, `[agent][hypothesis]`.
///
/// `Some(-inf)` for a certain model that differs from the truth; `None` for a
/// certain model equal to the truth (its ratio grows without bound).
pub fn asymptotic_limits(world: &WorldModel, evidence: &EvidenceTable) -> Result<Vec<Vec<Option<f64>>>, AnalysisError> {
    evidence
        .iter()
        .enumerate()
        .map(|(agent, row)| {
            row.iter()
                .map(|e| match e {
                    EvidenceCounts::Finite { .. } => Ok(Some(log_asymptotic_ulr(e, world.ground_truth(agent))?)),
                    EvidenceCounts::Certain(pi) if pi == world.ground_truth(agent) => Ok(None),
                    EvidenceCounts::Certain(_) => Ok(Some(f64::NEG_INFINITY)),
                })
                .collect()
        })
        .collect()
}

/// One Monte Carlo run as seen by [`error_stats`].
#[derive(Debug, Clone, Copy)]
pub struct RunView<'a> {
    pub trajectory: &'a BeliefTrajectory,
    pub evidence: &'a EvidenceTable,
    /// From [`asymptotic_limits`].
    pub log_limits: &'a [Vec<Option<f64>>],
}

/// A maximum error over agents and runs; `value` is `None` when a reference is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorCell {
    pub value: Option<f64>,
    /// Terms whose reference exceeded 1 and were divided by it.
    pub normalized_terms: usize,
    pub terms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub checkpoints: Vec<u64>,
    /// `[hypothesis][checkpoint]`: agent ratio vs its own asymptotic limit.
    pub e_lambda: Vec<Vec<ErrorCell>>,
    /// `[hypothesis][checkpoint]`: agent belief vs the run's mean belief.
    pub e_con: Vec<Vec<ErrorCell>>,
    /// `[hypothesis][checkpoint]`: agent belief vs the geometric mean of the limits.
    pub e_cen: Vec<Vec<ErrorCell>>,
    pub normalization: &'static str,
}

pub const NORMALIZATION_RULE: &str =
    "each |x - ref| term is divided by ref when ref > 1 and left raw otherwise; the cell reports the maximum";

struct CellAcc {
    max: f64,
    normalized: usize,
    terms: usize,
    unavailable: bool,
}

impl CellAcc {
    fn new() -> Self {
        Self {
            max: 0.0,
            normalized: 0,
            terms: 0,
            unavailable: false,
        }
    }

    /// Adds the error between `exp(log_x)` and `exp(log_ref)`.
    fn push(&mut self, log_x: f64, log_ref: Option<f64>) {
        let Some(log_ref) = log_ref else {
            self.unavailable = true;
            return;
        };
        self.terms += 1;
        let err = if log_ref > 0.0 {
            self.normalized += 1;
            (log_x - log_ref).exp_m1().abs()
        } else {
            (log_x.exp() - log_ref.exp()).abs()
        };
        if err > self.max || err.is_nan() {
            self.max = err;
        }
    }

    fn finish(self) -> ErrorCell {
        ErrorCell {
            value: (!self.unavailable).then_some(self.max),
            normalized_terms: self.normalized,
            terms: self.terms,
        }
    }
}

/// Maximum error statistics over agents and runs at each checkpoint.
pub fn error_stats(runs: &[RunView<'_>], checkpoints: &[u64]) -> Result<ErrorStats, AnalysisError> {
    let hypotheses = runs.first().map_or(0, |r| r.trajectory.hypotheses);
    let mut e_lambda = Vec::with_capacity(hypotheses);
    let mut e_con = Vec::with_capacity(hypotheses);
    let mut e_cen = Vec::with_capacity(hypotheses);
    for theta in 0..hypotheses {
        let (mut row_l, mut row_con, mut row_cen) = (Vec::new(), Vec::new(), Vec::new());
        for &t in checkpoints {
            let (mut l, mut con, mut cen) = (CellAcc::new(), CellAcc::new(), CellAcc::new());
            for run in runs {
                let traj = run.trajectory;
                let snap = traj.at(t).ok_or(AnalysisError::MissingCheckpoint(t))?;
                let m = traj.agents;
                let beliefs: Vec<f64> = (0..m).map(|i| snap.log_mu[i * traj.hypotheses + theta]).collect();
                let log_mean = log_sum_exp(beliefs.iter().copied()) - (m as f64).ln();
                let centralized = run
                    .log_limits
                    .iter()
                    .map(|row| row[theta])
                    .try_fold(0.0, |acc, v| v.map(|v| acc + v))
                    .map(|s| s / m as f64);
                for (i, &b) in beliefs.iter().enumerate() {
                    let ratio = log_ratio(&snap.histograms[i], &run.evidence[i][theta])?;
                    l.push(ratio, run.log_limits[i][theta]);
                    con.push(b, Some(log_mean));
                    cen.push(b, centralized);
                }
            }
            row_l.push(l.finish());
            row_con.push(con.finish());
            row_cen.push(cen.finish());
        }
        e_lambda.push(row_l);
        e_con.push(row_con);
        e_cen.push(row_cen);
    }
    Ok(ErrorStats {
        checkpoints: checkpoints.to_vec(),
        e_lambda,
        e_con,
        e_cen,
        normalization: NORMALIZATION_RULE,
    })
}

/// `max_i |log μ_i(θ) - mean_i log μ_i(θ)|` for one snapshot of beliefs.
pub fn log_consensus_spread(log_beliefs: &[f64]) -> f64 {
    let mean = log_beliefs.iter().sum::<f64>() / log_beliefs.len() as f64;
    log_beliefs.iter().map(|b| (b - mean).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `log μ(t) = c + slope t`
    Linear,
    /// `log μ(t) = log C + α log t + slope t`
    LinearPlusLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFitResult {
    pub slope: f64,
    pub intercept: f64,
    pub poly_exponent: Option<f64>,
    pub scale: Option<f64>,
    pub residual_rms: f64,
    pub points: usize,
}

/// Least-squares fit of log beliefs against time.
pub fn fit_rate(points: &[(f64, f64)], model: RateModel) -> Result<RateFitResult, AnalysisError> {
    if points.len() < 10 {
        return Err(AnalysisError::TooFewPoints(points.len()));
    }
    if points.iter().any(|(t, y)| !t.is_finite() || !y.is_finite())
        || points.windows(2).any(|w| w[1].0 < w[0].0)
    {
        return Err(AnalysisError::BadSeries);
    }
    if model == RateModel::LinearPlusLog && points[0].0 <= 0.0 {
        return Err(AnalysisError::BadSeries);
    }
    let n = points.len();
    // columns are centred and scaled before solving
    let mut columns: Vec<Vec<f64>> = vec![points.iter().map(|p| p.0).collect()];
    if model == RateModel::LinearPlusLog {
        columns.push(points.iter().map(|p| p.0.ln()).collect());
    }
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let mut centers = Vec::new();
    let mut scales = Vec::new();
    for col in &columns {
        let c = col.iter().sum::<f64>() / n as f64;
        let s = col.iter().map(|x| (x - c).abs()).fold(0.0, f64::max);
        if s == 0.0 {
            return Err(AnalysisError::SingularDesign);
        }
        centers.push(c);
        scales.push(s);
    }
    let design = DMatrix::from_fn(n, columns.len(), |r, c| (columns[c][r] - centers[c]) / scales[c]);
    let target = DVector::from_iterator(n, ys.iter().map(|y| y - y_mean));
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * max_sv.max(f64::MIN_POSITIVE) {
        return Err(AnalysisError::SingularDesign);
    }
    let beta = svd.solve(&target, 0.0).map_err(|_| AnalysisError::SingularDesign)?;
    let coef: Vec<f64> = beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let intercept = y_mean - coef.iter().zip(&centers).map(|(b, c)| b * c).sum::<f64>();
    let fitted = &design * &beta;
    let residual_rms = ((&target - fitted).norm_squared() / n as f64).sqrt();
    let slope = coef[0];
    if !slope.is_finite() {
        return Err(AnalysisError::SingularDesign);
    }
    let (poly_exponent, scale) = match model {
        RateModel::Linear => (None, None),
        RateModel::LinearPlusLog => (Some(coef[1]), Some(intercept.exp())),
    };
    Ok(RateFitResult {
        slope,
        intercept,
        poly_exponent,
        scale,
        residual_rms,
        points: n,
    })
}

/// [`fit_rate`] on the points with `t >= burn_in * t_max`.
pub fn fit_rate_after_burn_in(
    points: &[(f64, f64)],
    model: RateModel,
    burn_in: f64,
) -> Result<RateFitResult, AnalysisError> {
    let t_max = points.last().map_or(0.0, |p| p.0);
    let kept: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 >= burn_in * t_max).collect();
    fit_rate(&kept, model)
}
