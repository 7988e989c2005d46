//! Experiment configuration documents.
//!
//! A config is one TOML document. Top-level keys name the experiment and its
//! seed; the `[simulation]`, `[figure1]` and `[figure2]` tables each enable one
//! kind of output. Unknown keys are rejected. See `presets/*.toml` for complete
//! examples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::learning::Rule;
use crate::network::{lazy_metropolis, random_geometric_graph, MixingMatrix, Topology};
use crate::signals::{stream, EvidenceSpec, StreamPurpose, WorldModel};
use crate::uncertain_models::CategoricalParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Output directory; the CLI `--out` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure1: Option<Figure1Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure2: Option<Figure2Config>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub agents: usize,
    /// Hypotheses shared by every agent, each a probability vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<Vec<Vec<f64>>>,
    /// Per-agent hypotheses `[agent][hypothesis][category]`; excludes `hypotheses`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_hypotheses: Option<Vec<Vec<Vec<f64>>>>,
    /// Index of the true hypothesis.
    pub ground_truth: usize,
    pub topology: TopologySpec,
    #[serde(default)]
    pub weights: WeightsSpec,
    pub evidence: EvidenceSpec,
    pub rules: Vec<Rule>,
    pub horizon: u64,
    pub runs: u64,
    pub checkpoints: Vec<u64>,
    pub record_stride: u64,
    #[serde(default = "default_upsilon")]
    pub upsilon: f64,
    #[serde(default)]
    pub record_signals: bool,
}

fn default_upsilon() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    RandomGeometric { radius: f64 },
    Complete,
    Ring,
    /// Path to an edge-list file, relative to the config file.
    EdgeList { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsSpec {
    #[default]
    LazyMetropolis,
    /// `A = (1/m) 11'`; only meaningful on a complete graph.
    Uniform,
}

/// Normalized-limit scan of a true hypothesis against one rival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure1Config {
    pub truth: Vec<f64>,
    pub rival: Vec<f64>,
    /// Evidence totals for the true hypothesis; one curve each.
    pub truth_evidence: Vec<f64>,
    /// Inclusive integer range of rival evidence totals.
    pub rival_evidence: [u64; 2],
}

/// Asymptotic ratio against idealized evidence `R π` on a log grid of `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure2Config {
    pub truth: Vec<f64>,
    /// First-category probabilities of two-category hypotheses.
    pub pis: Vec<f64>,
    pub evidence_min: f64,
    pub evidence_max: f64,
    pub points_per_decade: u32,
}

/// Values the CLI may override on top of a loaded document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub runs: Option<u64>,
    pub agents: Option<usize>,
    pub output: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Invalid(msg.into())
}

fn categorical(what: &str, probs: &[f64]) -> Result<CategoricalParams, HarnessError> {
    CategoricalParams::new(probs.to_vec()).map_err(|e| invalid(format!("{what}: {e}")))
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut config = parse_config(&text).map_err(|e| match e {
        HarnessError::Invalid(msg) => invalid(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if let Some(TopologySpec::EdgeList { path: edges }) = config.simulation.as_mut().map(|s| &mut s.topology) {
        if edges.is_relative() {
            *edges = path.parent().unwrap_or(Path::new(".")).join(&*edges);
        }
    }
    Ok(config)
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.simulation.is_none() && self.figure1.is_none() && self.figure2.is_none() {
            return Err(invalid("config enables none of [simulation], [figure1], [figure2]"));
        }
        if let Some(sim) = &self.simulation {
            sim.validate()?;
        }
        if let Some(f) = &self.figure1 {
            f.validate()?;
        }
        if let Some(f) = &self.figure2 {
            f.validate()?;
        }
        Ok(())
    }

    /// Applies CLI overrides and revalidates.
    ///
    /// A new horizon drops checkpoints beyond it and adds the horizon itself.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), HarnessError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.output {
            self.output = Some(out.clone());
        }
        let scaling = o.horizon.is_some() || o.runs.is_some() || o.agents.is_some();
        match self.simulation.as_mut() {
            Some(sim) => {
                if let Some(h) = o.horizon {
                    sim.horizon = h;
                    sim.checkpoints.retain(|&c| c <= h);
                    if !sim.checkpoints.contains(&h) {
                        sim.checkpoints.push(h);
                    }
                }
                if let Some(n) = o.runs {
                    sim.runs = n;
                }
                if let Some(m) = o.agents {
                    if sim.agent_hypotheses.is_some() {
                        return Err(invalid("--agents cannot resize per-agent hypotheses"));
                    }
                    if matches!(sim.topology, TopologySpec::EdgeList { .. }) {
                        return Err(invalid("--agents cannot resize an edge-list topology"));
                    }
                    sim.agents = m;
                }
            }
            None if scaling => return Err(invalid("--horizon, --runs and --agents need a [simulation] table")),
            None => {}
        }
        self.validate()
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.agents == 0 {
            return Err(invalid("simulation.agents must be at least 1"));
        }
        self.world()?;
        if self.rules.is_empty() {
            return Err(invalid("simulation.rules is empty"));
        }
        if self.horizon == 0 {
            return Err(invalid("simulation.horizon must be at least 1"));
        }
        if self.runs == 0 {
            return Err(invalid("simulation.runs must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(invalid("simulation.record_stride must be at least 1"));
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.horizon) {
            return Err(invalid(format!(
                "checkpoint {c} outside 1..={} (simulation.horizon)",
                self.horizon
            )));
        }
        if !(self.upsilon > 1.0) {
            return Err(invalid(format!("simulation.upsilon must exceed 1, got {}", self.upsilon)));
        }
        if let TopologySpec::RandomGeometric { radius } = self.topology {
            if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
                return Err(invalid(format!("topology radius {radius} outside (0, sqrt(2)]")));
            }
        }
        self.evidence.validate().map_err(|e| invalid(format!("simulation.evidence: {e}")))?;
        Ok(())
    }

    pub fn world(&self) -> Result<WorldModel, HarnessError> {
        let world = match (&self.hypotheses, &self.agent_hypotheses) {
            (Some(_), Some(_)) => return Err(invalid("set only one of hypotheses and agent_hypotheses")),
            (None, None) => return Err(invalid("hypothesis list is missing")),
            (Some(shared), None) => {
                if shared.is_empty() {
                    return Err(invalid("hypothesis list is empty"));
                }
                let set = shared
                    .iter()
                    .enumerate()
                    .map(|(i, p)| categorical(&format!("hypothesis {i}"), p))
                    .collect::<Result<Vec<_>, _>>()?;
                WorldModel::shared(self.agents, set, self.ground_truth)
            }
            (None, Some(per_agent)) => {
                if per_agent.len() != self.agents {
                    return Err(invalid(format!(
                        "agent_hypotheses lists {} agents, simulation.agents is {}",
                        per_agent.len(),
                        self.agents
                    )));
                }
                let mut sets = Vec::with_capacity(per_agent.len());
                let mut truths = Vec::with_capacity(per_agent.len());
                for (a, row) in per_agent.iter().enumerate() {
                    if row.is_empty() {
                        return Err(invalid(format!("agent {a}: hypothesis list is empty")));
                    }
                    let set = row
                        .iter()
                        .enumerate()
                        .map(|(i, p)| categorical(&format!("agent {a} hypothesis {i}"), p))
                        .collect::<Result<Vec<_>, _>>()?;
                    let truth = set.get(self.ground_truth).cloned().ok_or_else(|| {
                        invalid(format!(
                            "ground_truth {} outside agent {a}'s {} hypotheses",
                            self.ground_truth,
                            set.len()
                        ))
                    })?;
                    truths.push(truth);
                    sets.push(set);
                }
                WorldModel::new(truths, sets)
            }
        };
        world.map_err(|e| invalid(e.to_string()))
    }

    /// Builds the graph and weights. Random graphs depend only on the master seed.
    pub fn network(&self, seed: u64) -> Result<(Topology, MixingMatrix), HarnessError> {
        let topology = match &self.topology {
            TopologySpec::RandomGeometric { radius } => {
                let mut rng = stream(seed, 0, 0, StreamPurpose::Topology);
                random_geometric_graph(self.agents, *radius, &mut rng)
            }
            TopologySpec::Complete => Topology::complete(self.agents),
            TopologySpec::Ring => Topology::ring(self.agents),
            TopologySpec::EdgeList { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| invalid(format!("edge list {}: {e}", path.display())))?;
                Topology::from_edge_list(&text)
            }
        }
        .map_err(|e| invalid(format!("topology: {e}")))?;
        if topology.agents() != self.agents {
            return Err(invalid(format!(
                "topology has {} agents, simulation.agents is {}",
                topology.agents(),
                self.agents
            )));
        }
        let matrix = match self.weights {
            WeightsSpec::LazyMetropolis => lazy_metropolis(&topology),
            WeightsSpec::Uniform => MixingMatrix::uniform(self.agents).map_err(|e| invalid(e.to_string()))?,
        };
        Ok((topology, matrix))
    }
}

impl Figure1Config {
    fn validate(&self) -> Result<(), HarnessError> {
        let truth = categorical("figure1.truth", &self.truth)?;
        let rival = categorical("figure1.rival", &self.rival)?;
        if truth.categories() != rival.categories() {
            return Err(invalid("figure1.truth and figure1.rival differ in length"));
        }
        if self.truth_evidence.is_empty() || self.truth_evidence.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("figure1.truth_evidence needs non-negative finite totals"));
        }
        if self.rival_evidence[0] > self.rival_evidence[1] {
            return Err(invalid("figure1.rival_evidence range is empty"));
        }
        Ok(())
    }
}

impl Figure2Config {
    fn validate(&self) -> Result<(), HarnessError> {
        let truth = categorical("figure2.truth", &self.truth)?;
        if truth.categories() != 2 {
            return Err(invalid("figure2.truth must have two categories"));
        }
        if self.pis.is_empty() || self.pis.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("figure2.pis needs values in [0, 1]"));
        }
        if !(self.evidence_min > 0.0 && self.evidence_max >= self.evidence_min && self.evidence_max.is_finite()) {
            return Err(invalid("figure2 evidence range must satisfy 0 < min <= max"));
        }
        if self.points_per_decade == 0 {
            return Err(invalid("figure2.points_per_decade must be at least 1"));
        }
        Ok(())
    }
}
