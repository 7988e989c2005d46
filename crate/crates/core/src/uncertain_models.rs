//! Dirichlet-multinomial machinery behind uncertain likelihood ratios.
//!
//! An agent holds, for each hypothesis, a vector of prior evidence `r`
//! (pseudo-counts over `K` categories) and accumulates a histogram `n` of its
//! own private signals. The uncertain likelihood ratio compares the posterior
//! predictive of `n` under `r` with the predictive under vacuous evidence
//! `r = 0`:
//!
//! ```text
//! log Λ(n | r) = log B(r + n + 1) + log B(1) - log B(r + 1) - log B(n + 1)
//! ```
//!
//! Every quantity is kept in log domain. `-inf` is a legal value and means
//! "probability zero".

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::logspace::normalize_log_weights;

/// Tolerance on `sum(probs) == 1` for [`CategoricalParams`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("need at least two categories, got {0}")]
    TooFewCategories(usize),
    #[error("probability {value} at category {index} is negative or not finite")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("evidence count {value} at category {index} is negative or not finite")]
    InvalidCount { index: usize, value: f64 },
    #[error("log-beta argument {value} at position {index} must be positive and finite")]
    NonPositiveArgument { index: usize, value: f64 },
    #[error("expected {expected} categories, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("category {index} out of range for {categories} categories")]
    CategoryOutOfRange { index: usize, categories: usize },
    #[error("update at time {t} needs a histogram with total {expected}, got {got}")]
    TimeMismatch { t: u64, expected: u64, got: u64 },
    #[error("operation requires finite evidence, got a certain model")]
    CertainEvidence,
    #[error("test threshold must exceed 1, got {0}")]
    InvalidThreshold(f64),
    #[error("need at least two hypotheses, got {0}")]
    TooFewHypotheses(usize),
    #[error("every hypothesis has a vanishing limit")]
    AllLimitsVanish,
}

/// A probability vector over `K >= 2` categories.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalParams {
    probs: Vec<f64>,
}

impl CategoricalParams {
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.len() < 2 {
            return Err(ModelError::TooFewCategories(probs.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidProbability { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(ModelError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    pub fn uniform(categories: usize) -> Result<Self, ModelError> {
        Self::new(vec![1.0 / categories as f64; categories])
    }

    pub fn categories(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs[k]
    }
}

/// Prior evidence an agent holds for one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub enum EvidenceCounts {
    /// Finitely many (possibly fractional) pseudo-counts.
    Finite { counts: Vec<f64>, total: f64 },
    /// Infinite evidence: the hypothesis' distribution is known exactly.
    Certain(CategoricalParams),
}

impl EvidenceCounts {
    pub fn finite(counts: Vec<f64>) -> Result<Self, ModelError> {
        if counts.len() < 2 {
            return Err(ModelError::TooFewCategories(counts.len()));
        }
        for (index, &value) in counts.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidCount { index, value });
            }
        }
        let total = counts.iter().sum();
        Ok(Self::Finite { counts, total })
    }

    /// Zero evidence: complete ignorance about the hypothesis.
    pub fn vacuous(categories: usize) -> Result<Self, ModelError> {
        Self::finite(vec![0.0; categories])
    }

    /// Evidence `r = total * pi`, the expected counts of `total` draws.
    pub fn idealized(total: f64, pi: &CategoricalParams) -> Result<Self, ModelError> {
        Self::finite(pi.probs().iter().map(|p| total * p).collect())
    }

    pub fn certain(pi: CategoricalParams) -> Self {
        Self::Certain(pi)
    }

    pub fn categories(&self) -> usize {
        match self {
            Self::Finite { counts, .. } => counts.len(),
            Self::Certain(pi) => pi.categories(),
        }
    }

    /// Total pseudo-count `R`; `None` for a certain model.
    pub fn total(&self) -> Option<f64> {
        match self {
            Self::Finite { total, .. } => Some(*total),
            Self::Certain(_) => None,
        }
    }

    pub fn is_certain(&self) -> bool {
        matches!(self, Self::Certain(_))
    }

    fn finite_counts(&self) -> Result<(&[f64], f64), ModelError> {
        match self {
            Self::Finite { counts, total } => Ok((counts, *total)),
            Self::Certain(_) => Err(ModelError::CertainEvidence),
        }
    }
}

/// Signal counts observed by one agent up to time `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservationHistogram {
    counts: Vec<u64>,
    time: u64,
}

impl ObservationHistogram {
    pub fn empty(categories: usize) -> Self {
        Self {
            counts: vec![0; categories],
            time: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let time = counts.iter().sum();
        Self { counts, time }
    }

    pub fn record(&mut self, k: usize) {
        self.counts[k] += 1;
        self.time += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn categories(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UlrDecision {
    Accept,
    Reject,
    Unsure,
}

/// Result of comparing a log ratio against the thresholds `±log(upsilon)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlrTestOutcome {
    pub decision: UlrDecision,
    pub threshold: f64,
    pub log_ratio: f64,
}

/// `log B(alpha) = sum_k lnΓ(alpha_k) - lnΓ(sum_k alpha_k)`.
pub fn log_beta(alpha: &[f64]) -> Result<f64, ModelError> {
    if alpha.len() < 2 {
        return Err(ModelError::TooFewCategories(alpha.len()));
    }
    for (index, &value) in alpha.iter().enumerate() {
        if !value.is_finite() || value <= 0.0 {
            return Err(ModelError::NonPositiveArgument { index, value });
        }
    }
    Ok(log_beta_of(alpha.iter().copied()))
}

fn log_beta_of<I: Iterator<Item = f64>>(alpha: I) -> f64 {
    let (sum_ln, total) = alpha.fold((0.0, 0.0), |(s, t), a| (s + ln_gamma(a), t + a));
    sum_ln - ln_gamma(total)
}

/// `log B(1, ..., 1) = -ln((K - 1)!)`.
fn log_beta_ones(categories: usize) -> f64 {
    -ln_gamma(categories as f64)
}

fn check_categories(expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        return Err(ModelError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Log density of `Dirichlet(r + 1)` at `pi`.
pub fn dirichlet_log_pdf(pi: &CategoricalParams, evidence: &EvidenceCounts) -> Result<f64, ModelError> {
    let (counts, _) = evidence.finite_counts()?;
    check_categories(counts.len(), pi.categories())?;
    let mut kernel = 0.0;
    for (&r, &p) in counts.iter().zip(pi.probs()) {
        if r > 0.0 {
            if p == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            kernel += r * p.ln();
        }
    }
    Ok(kernel - log_beta_of(counts.iter().map(|r| r + 1.0)))
}

/// Log posterior predictive probability of the histogram `n` given evidence `r`.
pub fn log_posterior_predictive(
    n: &ObservationHistogram,
    evidence: &EvidenceCounts,
) -> Result<f64, ModelError> {
    let (counts, _) = evidence.finite_counts()?;
    check_categories(counts.len(), n.categories())?;
    let joint = log_beta_of(counts.iter().zip(n.counts()).map(|(r, &c)| r + c as f64 + 1.0));
    Ok(joint - log_beta_of(counts.iter().map(|r| r + 1.0)))
}

/// Log uncertain likelihood ratio: predictive under `r` over the vacuous predictive.
pub fn log_ulr(n: &ObservationHistogram, evidence: &EvidenceCounts) -> Result<f64, ModelError> {
    let (counts, _) = evidence.finite_counts()?;
    check_categories(counts.len(), n.categories())?;
    let k = counts.len();
    let joint = log_beta_of(counts.iter().zip(n.counts()).map(|(r, &c)| r + c as f64 + 1.0));
    let prior = log_beta_of(counts.iter().map(|r| r + 1.0));
    let vacuous = log_beta_of(n.counts().iter().map(|&c| c as f64 + 1.0));
    Ok(joint + log_beta_ones(k) - prior - vacuous)
}

/// Ratio accumulated by a certain model: the `R -> inf` limit of [`log_ulr`] with `r = R pi`.
///
/// Equals `Σ_k n_k log pi_k + log B(1) - log B(n + 1)`, the telescoped sum of
/// certain-mode updates.
pub fn log_certain_ratio(n: &ObservationHistogram, pi: &CategoricalParams) -> Result<f64, ModelError> {
    check_categories(pi.categories(), n.categories())?;
    let mut kernel = 0.0;
    for (&c, &p) in n.counts().iter().zip(pi.probs()) {
        if c > 0 {
            if p == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            kernel += c as f64 * p.ln();
        }
    }
    let vacuous = log_beta_of(n.counts().iter().map(|&c| c as f64 + 1.0));
    Ok(kernel + log_beta_ones(pi.categories()) - vacuous)
}

/// [`log_ulr`] for finite evidence, [`log_certain_ratio`] for certain models.
pub fn log_ratio(n: &ObservationHistogram, evidence: &EvidenceCounts) -> Result<f64, ModelError> {
    match evidence {
        EvidenceCounts::Finite { .. } => log_ulr(n, evidence),
        EvidenceCounts::Certain(pi) => log_certain_ratio(n, pi),
    }
}

/// Log of the one-step ratio `Λ(t) / Λ(t - 1)` after observing category `k` at time `t`.
///
/// `n_prev` is the histogram before the observation and must have total `t - 1`.
pub fn log_likelihood_update(
    n_prev: &ObservationHistogram,
    k: usize,
    evidence: &EvidenceCounts,
    t: u64,
) -> Result<f64, ModelError> {
    let categories = evidence.categories();
    check_categories(categories, n_prev.categories())?;
    if k >= categories {
        return Err(ModelError::CategoryOutOfRange { index: k, categories });
    }
    if t == 0 || n_prev.time() != t - 1 {
        return Err(ModelError::TimeMismatch {
            t,
            expected: t.saturating_sub(1),
            got: n_prev.time(),
        });
    }
    Ok(update_log(evidence, n_prev.counts()[k], k, t))
}

/// Unchecked kernel of [`log_likelihood_update`]; `count_k` is `n_{k,t-1}`.
#[inline]
pub(crate) fn update_log(evidence: &EvidenceCounts, count_k: u64, k: usize, t: u64) -> f64 {
    let seen = count_k as f64 + 1.0;
    match evidence {
        EvidenceCounts::Finite { counts, total } => {
            let span = (t + counts.len() as u64 - 1) as f64;
            ((counts[k] + seen) * span / ((total + span) * seen)).ln()
        }
        EvidenceCounts::Certain(pi) => {
            let p = pi.prob(k);
            if p == 0.0 {
                return f64::NEG_INFINITY;
            }
            let span = (t + pi.categories() as u64 - 1) as f64;
            (p * span / seen).ln()
        }
    }
}

/// Almost-sure limit of `log Λ(n_t | r)` as `t -> inf` under ground truth `pi*`.
pub fn log_asymptotic_ulr(
    evidence: &EvidenceCounts,
    ground_truth: &CategoricalParams,
) -> Result<f64, ModelError> {
    let (counts, _) = evidence.finite_counts()?;
    check_categories(counts.len(), ground_truth.categories())?;
    let mut kernel = 0.0;
    for (&r, &p) in counts.iter().zip(ground_truth.probs()) {
        if r > 0.0 {
            if p == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            kernel += r * p.ln();
        }
    }
    Ok(log_beta_ones(counts.len()) - log_beta_of(counts.iter().map(|r| r + 1.0)) + kernel)
}

/// Uncertain likelihood ratio test with symmetric thresholds `±log(upsilon)`.
pub fn ulrt_classify(log_ratio: f64, upsilon: f64) -> Result<UlrTestOutcome, ModelError> {
    if !(upsilon > 1.0) || !upsilon.is_finite() {
        return Err(ModelError::InvalidThreshold(upsilon));
    }
    let threshold = upsilon.ln();
    let decision = if log_ratio >= threshold {
        UlrDecision::Accept
    } else if log_ratio < -threshold {
        UlrDecision::Reject
    } else {
        UlrDecision::Unsure
    };
    Ok(UlrTestOutcome {
        decision,
        threshold: upsilon,
        log_ratio,
    })
}

/// Large-`t` limit of beliefs normalized across hypotheses (uniform priors).
///
/// The normalized rule divides each posterior predictive by the sum over
/// hypotheses; in the limit this is a softmax over the asymptotic log ratios.
/// Unequal amounts of evidence can make a wrong hypothesis win here.
pub fn normalized_belief_limits(
    hypotheses: &[EvidenceCounts],
    ground_truth: &CategoricalParams,
) -> Result<Vec<f64>, ModelError> {
    if hypotheses.len() < 2 {
        return Err(ModelError::TooFewHypotheses(hypotheses.len()));
    }
    let limits = hypotheses
        .iter()
        .map(|e| log_asymptotic_ulr(e, ground_truth))
        .collect::<Result<Vec<_>, _>>()?;
    normalize_log_weights(&limits).ok_or(ModelError::AllLimitsVanish)
}
