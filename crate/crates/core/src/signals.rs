//! Ground-truth signal streams and prior-evidence generation.
//!
//! All randomness is derived from one master seed. Each `(run, agent,
//! purpose)` triple gets its own ChaCha stream, so changing the number of runs,
//! the horizon, or the hypothesis list leaves unrelated streams untouched.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uncertain_models::{CategoricalParams, EvidenceCounts, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("world needs at least one agent")]
    NoAgents,
    #[error("hypothesis set is empty")]
    NoHypotheses,
    #[error("ground-truth index {index} outside hypothesis set of size {size}")]
    TruthOutOfRange { index: usize, size: usize },
    #[error("agent {agent}: hypotheses have {got} categories, ground truth has {expected}")]
    CategoryMismatch { agent: usize, expected: usize, got: usize },
    #[error("agent {agent} has {got} hypotheses, expected {expected}")]
    HypothesisCountMismatch { agent: usize, expected: usize, got: usize },
    #[error("evidence range [{lo}, {hi}] is empty")]
    EmptyRange { lo: u64, hi: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ground truth and candidate hypotheses, per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    ground_truth: Vec<CategoricalParams>,
    hypotheses: Vec<Vec<CategoricalParams>>,
}

impl WorldModel {
    pub fn new(
        ground_truth: Vec<CategoricalParams>,
        hypotheses: Vec<Vec<CategoricalParams>>,
    ) -> Result<Self, WorldError> {
        if ground_truth.is_empty() {
            return Err(WorldError::NoAgents);
        }
        if hypotheses.len() != ground_truth.len() {
            return Err(WorldError::HypothesisCountMismatch {
                agent: hypotheses.len().min(ground_truth.len()),
                expected: ground_truth.len(),
                got: hypotheses.len(),
            });
        }
        let count = hypotheses[0].len();
        if count == 0 {
            return Err(WorldError::NoHypotheses);
        }
        for (agent, (truth, set)) in ground_truth.iter().zip(&hypotheses).enumerate() {
            if set.len() != count {
                return Err(WorldError::HypothesisCountMismatch {
                    agent,
                    expected: count,
                    got: set.len(),
                });
            }
            for h in set {
                if h.categories() != truth.categories() {
                    return Err(WorldError::CategoryMismatch {
                        agent,
                        expected: truth.categories(),
                        got: h.categories(),
                    });
                }
            }
        }
        Ok(Self {
            ground_truth,
            hypotheses,
        })
    }

    /// Every agent shares the same hypotheses; the truth is one of them.
    pub fn shared(
        agents: usize,
        hypotheses: Vec<CategoricalParams>,
        truth_index: usize,
    ) -> Result<Self, WorldError> {
        if agents == 0 {
            return Err(WorldError::NoAgents);
        }
        if hypotheses.is_empty() {
            return Err(WorldError::NoHypotheses);
        }
        let truth = hypotheses
            .get(truth_index)
            .cloned()
            .ok_or(WorldError::TruthOutOfRange {
                index: truth_index,
                size: hypotheses.len(),
            })?;
        Self::new(vec![truth; agents], vec![hypotheses; agents])
    }

    pub fn agents(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn hypothesis_count(&self) -> usize {
        self.hypotheses[0].len()
    }

    pub fn categories(&self, agent: usize) -> usize {
        self.ground_truth[agent].categories()
    }

    pub fn ground_truth(&self, agent: usize) -> &CategoricalParams {
        &self.ground_truth[agent]
    }

    pub fn hypothesis(&self, agent: usize, theta: usize) -> &CategoricalParams {
        &self.hypotheses[agent][theta]
    }
}

/// How much prior evidence agents collect per hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceRegime {
    /// `R` in `[0, 100]`.
    Low,
    /// `R` in `[1000, 10000]`.
    High,
    /// Certain models.
    Infinite,
    /// `R` in `[lo, hi]`.
    Range { lo: u64, hi: u64 },
}

impl EvidenceRegime {
    /// Inclusive range of total evidence; `None` for [`EvidenceRegime::Infinite`].
    pub fn bounds(&self) -> Option<(u64, u64)> {
        match *self {
            Self::Low => Some((0, 100)),
            Self::High => Some((1000, 10_000)),
            Self::Infinite => None,
            Self::Range { lo, hi } => Some((lo, hi)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Low => "low".into(),
            Self::High => "high".into(),
            Self::Infinite => "infinite".into(),
            Self::Range { lo, hi } => format!("range_{lo}_{hi}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceStyle {
    /// `r ~ Multinomial(R, pi)`.
    #[default]
    Sampled,
    /// `r = R * pi` exactly.
    Idealized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpec {
    pub regime: EvidenceRegime,
    #[serde(default)]
    pub style: EvidenceStyle,
}

impl EvidenceSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        if let Some((lo, hi)) = self.regime.bounds() {
            if lo > hi {
                return Err(WorldError::EmptyRange { lo, hi });
            }
        }
        Ok(())
    }
}

/// Draws a category by inverse CDF.
pub fn sample_signal<R: Rng + ?Sized>(pi: &CategoricalParams, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in pi.probs().iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
        }
        acc += p;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding slack above the final cumulative sum
    last_positive
}

/// Draws prior evidence for one hypothesis according to `spec`.
pub fn generate_evidence<R: Rng + ?Sized>(
    pi_theta: &CategoricalParams,
    spec: &EvidenceSpec,
    rng: &mut R,
) -> Result<EvidenceCounts, WorldError> {
    spec.validate()?;
    let Some((lo, hi)) = spec.regime.bounds() else {
        return Ok(EvidenceCounts::certain(pi_theta.clone()));
    };
    let total = rng.random_range(lo..=hi);
    let counts = match spec.style {
        EvidenceStyle::Idealized => pi_theta.probs().iter().map(|p| total as f64 * p).collect(),
        EvidenceStyle::Sampled => sample_multinomial(total, pi_theta.probs(), rng)
            .into_iter()
            .map(|c| c as f64)
            .collect(),
    };
    Ok(EvidenceCounts::finite(counts)?)
}

/// Multinomial draw by sequential conditional binomials.
fn sample_multinomial<R: Rng + ?Sized>(trials: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut remaining = trials;
    let mut mass = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            out[k] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining, q).expect("probability clamped to [0, 1]").sample(rng);
        out[k] = draw;
        remaining -= draw;
        mass -= p;
    }
    out
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Topology,
    Evidence { hypothesis: usize },
    Signals,
    Auxiliary(u64),
}

impl StreamPurpose {
    fn code(&self) -> u64 {
        match *self {
            Self::Topology => 1,
            Self::Signals => 2,
            Self::Evidence { hypothesis } => 0x1000 + hypothesis as u64,
            Self::Auxiliary(tag) => 0xA000_0000_0000_0000 ^ tag,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed for one `(run, agent, purpose)` stream.
pub fn derive_seed(master: u64, run: u64, agent: u64, purpose: StreamPurpose) -> u64 {
    [run, agent, purpose.code()]
        .iter()
        .fold(splitmix64(master), |h, &x| splitmix64(h ^ splitmix64(x)))
}

pub fn stream(master: u64, run: u64, agent: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, run, agent, purpose))
}

/// Evidence indexed `[agent][hypothesis]`.
pub type EvidenceTable = Vec<Vec<EvidenceCounts>>;

/// Draws every agent's evidence for every hypothesis of one Monte Carlo run.
pub fn generate_evidence_table(
    world: &WorldModel,
    spec: &EvidenceSpec,
    master_seed: u64,
    run: u64,
) -> Result<EvidenceTable, WorldError> {
    (0..world.agents())
        .map(|agent| {
            (0..world.hypothesis_count())
                .map(|theta| {
                    let mut rng = stream(master_seed, run, agent as u64, StreamPurpose::Evidence { hypothesis: theta });
                    generate_evidence(world.hypothesis(agent, theta), spec, &mut rng)
                })
                .collect()
        })
        .collect()
}

/// Per-agent signal streams for one run.
pub fn signal_streams(master_seed: u64, run: u64, agents: usize) -> Vec<ChaCha8Rng> {
    (0..agents)
        .map(|a| stream(master_seed, run, a as u64, StreamPurpose::Signals))
        .collect()
}

pub const EVIDENCE_CSV_HEADER: &str = "run,agent,hypothesis,k,r_k";
pub const SIGNAL_CSV_HEADER: &str = "run,agent,t,omega";

/// Appends evidence rows (`run,agent,hypothesis,k,r_k`); certain models print `inf`.
pub fn write_evidence_csv<W: Write>(out: &mut W, run: u64, table: &EvidenceTable) -> io::Result<()> {
    for (agent, row) in table.iter().enumerate() {
        for (theta, evidence) in row.iter().enumerate() {
            match evidence {
                EvidenceCounts::Finite { counts, .. } => {
                    for (k, r) in counts.iter().enumerate() {
                        writeln!(out, "{run},{agent},{theta},{k},{r}")?;
                    }
                }
                EvidenceCounts::Certain(pi) => {
                    for k in 0..pi.categories() {
                        writeln!(out, "{run},{agent},{theta},{k},inf")?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Appends signal rows (`run,agent,t,omega`), `signals[t-1][agent]` being agent's draw at time `t`.
pub fn write_signal_csv<W: Write>(out: &mut W, run: u64, signals: &[Vec<usize>]) -> io::Result<()> {
    for (i, round) in signals.iter().enumerate() {
        for (agent, omega) in round.iter().enumerate() {
            writeln!(out, "{run},{agent},{},{omega}", i + 1)?;
        }
    }
    Ok(())
}
