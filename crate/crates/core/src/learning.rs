//! Synchronous belief evolution under the log-linear and DeGroot-style rules.
//!
//! Every round each agent draws one private signal, computes its one-step
//! likelihood update `ℓ` for every hypothesis, and combines it with its
//! neighbours' beliefs from the previous round:
//!
//! ```text
//! log-linear: log μ_i(θ) ← log ℓ_iθ + Σ_j A_ij log μ_j(θ)
//! DeGroot:    log μ_i(θ) ← log ℓ_iθ + log Σ_j A_ij μ_j(θ)
//! ```
//!
//! Beliefs are stored as logs; `-inf` is absorbing under the log-linear rule
//! and drops out of the DeGroot sum unless every neighbour is at `-inf`.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::MixingMatrix;
use crate::signals::{sample_signal, EvidenceTable, WorldModel};
use crate::uncertain_models::{update_log, ObservationHistogram};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("signal {signal} from agent {agent} is outside {categories} categories")]
    SignalOutOfRange {
        agent: usize,
        signal: usize,
        categories: usize,
    },
    #[error("log belief became NaN at t={t}, agent {agent}, hypothesis {hypothesis}")]
    NotANumber { t: u64, agent: usize, hypothesis: usize },
    #[error("record stride must be at least 1")]
    ZeroStride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Weighted geometric mean of neighbour beliefs.
    LogLinear,
    /// Weighted arithmetic mean of neighbour beliefs.
    #[serde(rename = "degroot")]
    DeGroot,
}

impl Rule {
    pub fn label(&self) -> &'static str {
        match self {
            Rule::LogLinear => "log_linear",
            Rule::DeGroot => "degroot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub rule: Rule,
    pub horizon: u64,
    pub record_stride: u64,
    /// Extra rounds to snapshot in addition to multiples of the stride.
    pub checkpoints: Vec<u64>,
    /// Keep every drawn signal in the trajectory.
    pub record_signals: bool,
}

impl EngineConfig {
    pub fn new(rule: Rule, horizon: u64, record_stride: u64) -> Self {
        Self {
            rule,
            horizon,
            record_stride,
            checkpoints: Vec::new(),
            record_signals: false,
        }
    }

    fn records(&self, t: u64) -> bool {
        t == 0 || t == self.horizon || t.is_multiple_of(self.record_stride) || self.checkpoints.contains(&t)
    }
}

/// Log beliefs `[agent][hypothesis]`, per-agent histograms and the round counter.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    log_mu: Vec<f64>,
    hypotheses: usize,
    histograms: Vec<ObservationHistogram>,
    t: u64,
}

impl BeliefState {
    /// Unit beliefs and empty histograms.
    pub fn initial(world: &WorldModel) -> Self {
        let m = world.agents();
        let s = world.hypothesis_count();
        Self {
            log_mu: vec![0.0; m * s],
            hypotheses: s,
            histograms: (0..m).map(|i| ObservationHistogram::empty(world.categories(i))).collect(),
            t: 0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn agents(&self) -> usize {
        self.histograms.len()
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn log_belief(&self, agent: usize, theta: usize) -> f64 {
        self.log_mu[agent * self.hypotheses + theta]
    }

    /// Row-major `[agent][hypothesis]` log beliefs.
    pub fn log_beliefs(&self) -> &[f64] {
        &self.log_mu
    }

    pub fn histograms(&self) -> &[ObservationHistogram] {
        &self.histograms
    }
}

/// Fixed ingredients of a simulation: who talks to whom, what is true, what agents know.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    matrix: &'a MixingMatrix,
    world: &'a WorldModel,
    evidence: &'a EvidenceTable,
    rule: Rule,
    log_rows: Vec<Vec<(usize, f64)>>,
}

impl<'a> Engine<'a> {
    pub fn new(
        matrix: &'a MixingMatrix,
        world: &'a WorldModel,
        evidence: &'a EvidenceTable,
        rule: Rule,
    ) -> Result<Self, LearningError> {
        let m = world.agents();
        if matrix.agents() != m {
            return Err(LearningError::DimensionMismatch {
                what: "mixing matrix size",
                expected: m,
                got: matrix.agents(),
            });
        }
        if evidence.len() != m {
            return Err(LearningError::DimensionMismatch {
                what: "evidence rows",
                expected: m,
                got: evidence.len(),
            });
        }
        for (agent, row) in evidence.iter().enumerate() {
            if row.len() != world.hypothesis_count() {
                return Err(LearningError::DimensionMismatch {
                    what: "evidence per agent",
                    expected: world.hypothesis_count(),
                    got: row.len(),
                });
            }
            for e in row {
                if e.categories() != world.categories(agent) {
                    return Err(LearningError::DimensionMismatch {
                        what: "evidence categories",
                        expected: world.categories(agent),
                        got: e.categories(),
                    });
                }
            }
        }
        let log_rows = (0..m)
            .map(|i| matrix.row(i).iter().map(|&(j, w)| (j, w.ln())).collect())
            .collect();
        Ok(Self {
            matrix,
            world,
            evidence,
            rule,
            log_rows,
        })
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    /// One round: every agent draws a signal from its own stream, then all agents update.
    ///
    /// Returns the signals drawn this round.
    pub fn step<R: Rng>(&self, state: &mut BeliefState, streams: &mut [R]) -> Result<Vec<usize>, LearningError> {
        if streams.len() != state.agents() {
            return Err(LearningError::DimensionMismatch {
                what: "signal streams",
                expected: state.agents(),
                got: streams.len(),
            });
        }
        let signals: Vec<usize> = streams
            .iter_mut()
            .enumerate()
            .map(|(i, rng)| sample_signal(self.world.ground_truth(i), rng))
            .collect();
        self.step_with_signals(state, &signals)?;
        Ok(signals)
    }

    /// One round with the given signals (`signals[i]` is agent `i`'s observation).
    pub fn step_with_signals(&self, state: &mut BeliefState, signals: &[usize]) -> Result<(), LearningError> {
        let m = state.agents();
        let s = state.hypotheses;
        if signals.len() != m {
            return Err(LearningError::DimensionMismatch {
                what: "signals",
                expected: m,
                got: signals.len(),
            });
        }
        for (agent, &signal) in signals.iter().enumerate() {
            let categories = self.world.categories(agent);
            if signal >= categories {
                return Err(LearningError::SignalOutOfRange { agent, signal, categories });
            }
        }
        let t = state.t + 1;
        let prev = state.log_mu.clone();
        for (i, &k) in signals.iter().enumerate() {
            let count_k = state.histograms[i].counts()[k];
            for theta in 0..s {
                let update = update_log(&self.evidence[i][theta], count_k, k, t);
                let mixed = match self.rule {
                    Rule::LogLinear => self
                        .matrix
                        .row(i)
                        .iter()
                        .map(|&(j, w)| w * prev[j * s + theta])
                        .sum::<f64>(),
                    Rule::DeGroot => self.log_mix(i, theta, s, &prev),
                };
                let value = update + mixed;
                if value.is_nan() {
                    return Err(LearningError::NotANumber { t, agent: i, hypothesis: theta });
                }
                state.log_mu[i * s + theta] = value;
            }
        }
        for (hist, &k) in state.histograms.iter_mut().zip(signals) {
            hist.record(k);
        }
        state.t = t;
        Ok(())
    }

    fn log_mix(&self, i: usize, theta: usize, s: usize, prev: &[f64]) -> f64 {
        let row = &self.log_rows[i];
        let max = row
            .iter()
            .map(|&(j, lw)| lw + prev[j * s + theta])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        let sum: f64 = row.iter().map(|&(j, lw)| (lw + prev[j * s + theta] - max).exp()).sum();
        max + sum.ln()
    }
}

/// Beliefs and histograms at one recorded round.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: u64,
    /// Row-major `[agent][hypothesis]`.
    pub log_mu: Vec<f64>,
    pub histograms: Vec<ObservationHistogram>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrajectory {
    pub rule: Rule,
    pub agents: usize,
    pub hypotheses: usize,
    pub snapshots: Vec<Snapshot>,
    /// `signals[t-1][agent]`, present when requested in the config.
    pub signals: Option<Vec<Vec<usize>>>,
}

impl BeliefTrajectory {
    pub fn at(&self, t: u64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.t == t)
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory always holds the initial snapshot")
    }

    pub fn log_belief(snapshot: &Snapshot, hypotheses: usize, agent: usize, theta: usize) -> f64 {
        snapshot.log_mu[agent * hypotheses + theta]
    }

    /// `(t, log μ_i(θ))` for every snapshot.
    pub fn series(&self, agent: usize, theta: usize) -> Vec<(f64, f64)> {
        self.snapshots
            .iter()
            .map(|s| (s.t as f64, s.log_mu[agent * self.hypotheses + theta]))
            .collect()
    }
}

fn snapshot(state: &BeliefState) -> Snapshot {
    Snapshot {
        t: state.t,
        log_mu: state.log_mu.clone(),
        histograms: state.histograms.clone(),
    }
}

/// Runs `config.horizon` rounds from unit beliefs, snapshotting as configured.
pub fn run<R: Rng>(
    world: &WorldModel,
    matrix: &MixingMatrix,
    evidence: &EvidenceTable,
    config: &EngineConfig,
    streams: &mut [R],
) -> Result<BeliefTrajectory, LearningError> {
    if config.record_stride == 0 {
        return Err(LearningError::ZeroStride);
    }
    let engine = Engine::new(matrix, world, evidence, config.rule)?;
    let mut state = BeliefState::initial(world);
    let mut snapshots = vec![snapshot(&state)];
    let mut signals = config.record_signals.then(Vec::new);
    for _ in 0..config.horizon {
        let drawn = engine.step(&mut state, streams)?;
        if let Some(log) = signals.as_mut() {
            log.push(drawn);
        }
        if config.records(state.t) {
            snapshots.push(snapshot(&state));
        }
    }
    Ok(BeliefTrajectory {
        rule: config.rule,
        agents: world.agents(),
        hypotheses: world.hypothesis_count(),
        snapshots,
        signals,
    })
}

pub const TRAJECTORY_CSV_HEADER: &str = "run,t,agent,hypothesis,log_belief";

/// Appends `run,t,agent,hypothesis,log_belief` rows for every snapshot.
pub fn write_trajectory_csv<W: Write>(out: &mut W, run: u64, trajectory: &BeliefTrajectory) -> io::Result<()> {
    for snap in &trajectory.snapshots {
        for agent in 0..trajectory.agents {
            for theta in 0..trajectory.hypotheses {
                let v = snap.log_mu[agent * trajectory.hypotheses + theta];
                writeln!(out, "{run},{},{agent},{theta},{v}", snap.t)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{lazy_metropolis, Topology};
    use crate::signals::signal_streams;
    use crate::uncertain_models::{log_likelihood_update, log_ulr, CategoricalParams, EvidenceCounts};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cat(p: &[f64]) -> CategoricalParams {
        CategoricalParams::new(p.to_vec()).unwrap()
    }

    fn table_i() -> Vec<CategoricalParams> {
        vec![cat(&[0.6, 0.4]), cat(&[0.55, 0.45]), cat(&[0.5, 0.5]), cat(&[0.4, 0.6])]
    }

    fn finite_table(world: &WorldModel, seed: u64) -> EvidenceTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..world.agents())
            .map(|i| {
                (0..world.hypothesis_count())
                    .map(|h| {
                        let r: f64 = rng.random_range(0.0..80.0);
                        EvidenceCounts::idealized(r, world.hypothesis(i, h)).unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_agent_collapses_to_ulr() {
        let world = WorldModel::shared(1, table_i(), 0).unwrap();
        let evidence = finite_table(&world, 1);
        let matrix = lazy_metropolis(&Topology::complete(1).unwrap());
        for rule in [Rule::LogLinear, Rule::DeGroot] {
            let mut streams = signal_streams(5, 0, 1);
            let traj = run(&world, &matrix, &evidence, &EngineConfig::new(rule, 500, 50), &mut streams).unwrap();
            for snap in &traj.snapshots {
                for theta in 0..4 {
                    let closed = log_ulr(&snap.histograms[0], &evidence[0][theta]).unwrap();
                    assert!((snap.log_mu[theta] - closed).abs() < 1e-9, "{rule:?} t={}", snap.t);
                }
            }
        }
    }

    #[test]
    fn identical_agents_stay_identical() {
        let world = WorldModel::shared(2, table_i(), 0).unwrap();
        let row = finite_table(&WorldModel::shared(1, table_i(), 0).unwrap(), 3).remove(0);
        let evidence = vec![row.clone(), row];
        let matrix = lazy_metropolis(&Topology::complete(2).unwrap());
        let engine = Engine::new(&matrix, &world, &evidence, Rule::LogLinear).unwrap();
        let mut state = BeliefState::initial(&world);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let k = sample_signal(world.ground_truth(0), &mut rng);
            engine.step_with_signals(&mut state, &[k, k]).unwrap();
            for theta in 0..4 {
                assert_eq!(state.log_belief(0, theta), state.log_belief(1, theta));
            }
        }
    }

    #[test]
    fn rules_agree_after_one_round_and_split_after_two() {
        let world = WorldModel::shared(2, vec![cat(&[0.6, 0.4])], 0).unwrap();
        let evidence = vec![
            vec![EvidenceCounts::finite(vec![1.0, 0.0]).unwrap()],
            vec![EvidenceCounts::finite(vec![0.0, 3.0]).unwrap()],
        ];
        let matrix = lazy_metropolis(&Topology::complete(2).unwrap());
        let ll = Engine::new(&matrix, &world, &evidence, Rule::LogLinear).unwrap();
        let dg = Engine::new(&matrix, &world, &evidence, Rule::DeGroot).unwrap();
        let (mut a, mut b) = (BeliefState::initial(&world), BeliefState::initial(&world));
        ll.step_with_signals(&mut a, &[0, 0]).unwrap();
        dg.step_with_signals(&mut b, &[0, 0]).unwrap();
        // t = 1: ℓ_1 = (1+1)·2/(1+2) = 4/3, ℓ_2 = 1·2/(3+2) = 2/5
        let (l1, l2) = ((4.0f64 / 3.0).ln(), 0.4f64.ln());
        for (state, want) in [(&a, [l1, l2]), (&b, [l1, l2])] {
            assert!((state.log_belief(0, 0) - want[0]).abs() < 1e-15);
            assert!((state.log_belief(1, 0) - want[1]).abs() < 1e-15);
        }
        ll.step_with_signals(&mut a, &[0, 0]).unwrap();
        dg.step_with_signals(&mut b, &[0, 0]).unwrap();
        // t = 2: ℓ'_1 = (1+1+1)·3/(1+3)/2 = 9/8, ℓ'_2 = 2·3/(3+3)/2 = 1/2
        let (p1, p2) = ((9.0f64 / 8.0).ln(), 0.5f64.ln());
        let ll_want = [p1 + 0.5 * (l1 + l2), p2 + 0.5 * (l1 + l2)];
        let dg_mix = (0.5 * (4.0 / 3.0 + 0.4f64)).ln();
        let dg_want = [p1 + dg_mix, p2 + dg_mix];
        for i in 0..2 {
            assert!((a.log_belief(i, 0) - ll_want[i]).abs() < 1e-14);
            assert!((b.log_belief(i, 0) - dg_want[i]).abs() < 1e-14);
            assert!(b.log_belief(i, 0) > a.log_belief(i, 0));
        }
    }

    #[test]
    fn log_linear_matches_matrix_power_closed_form() {
        let m = 5;
        let world = WorldModel::shared(m, table_i(), 0).unwrap();
        let evidence = finite_table(&world, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let topology = crate::network::random_geometric_graph(m, 0.6, &mut rng).unwrap();
        let matrix = lazy_metropolis(&topology);
        let mut config = EngineConfig::new(Rule::LogLinear, 100, 1);
        config.record_signals = true;
        let mut streams = signal_streams(77, 0, m);
        let traj = run(&world, &matrix, &evidence, &config, &mut streams).unwrap();
        let signals = traj.signals.as_ref().unwrap();

        // independent route: log μ_t = Σ_τ A^{t-τ} log ℓ_τ
        let a = matrix.weights().clone();
        for theta in 0..4 {
            let mut hist: Vec<ObservationHistogram> = (0..m).map(|_| ObservationHistogram::empty(2)).collect();
            let mut updates: Vec<DVector<f64>> = Vec::new();
            for (tau, round) in signals.iter().enumerate() {
                updates.push(DVector::from_fn(m, |i, _| {
                    log_likelihood_update(&hist[i], round[i], &evidence[i][theta], tau as u64 + 1).unwrap()
                }));
                for (h, &k) in hist.iter_mut().zip(round) {
                    h.record(k);
                }
            }
            for t in [1usize, 2, 17, 100] {
                let mut total = DVector::zeros(m);
                for tau in 1..=t {
                    total += a.pow((t - tau) as u32) * &updates[tau - 1];
                }
                let snap = traj.at(t as u64).unwrap();
                for i in 0..m {
                    let got = snap.log_mu[i * 4 + theta];
                    assert!((got - total[i]).abs() < 1e-9, "theta={theta} t={t} agent={i}: {got} vs {}", total[i]);
                }
            }
        }
    }

    #[test]
    fn zero_horizon_has_one_snapshot() {
        let world = WorldModel::shared(3, table_i(), 0).unwrap();
        let evidence = finite_table(&world, 0);
        let matrix = lazy_metropolis(&Topology::ring(3).unwrap());
        let mut streams = signal_streams(1, 0, 3);
        let traj = run(&world, &matrix, &evidence, &EngineConfig::new(Rule::DeGroot, 0, 10), &mut streams).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert!(traj.snapshots[0].log_mu.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let world = WorldModel::shared(4, table_i(), 0).unwrap();
        let evidence = finite_table(&world, 2);
        let matrix = lazy_metropolis(&Topology::ring(4).unwrap());
        let go = || {
            let mut streams = signal_streams(123, 4, 4);
            run(&world, &matrix, &evidence, &EngineConfig::new(Rule::DeGroot, 400, 7), &mut streams).unwrap()
        };
        let (a, b) = (go(), go());
        assert_eq!(a, b);
        assert!(a.at(7).is_some() && a.at(400).is_some() && a.at(8).is_none());
    }

    #[test]
    fn degroot_dominates_log_linear_pathwise() {
        let m = 6;
        let world = WorldModel::shared(m, table_i(), 0).unwrap();
        let evidence = finite_table(&world, 4);
        let matrix = lazy_metropolis(&Topology::ring(m).unwrap());
        let go = |rule| {
            let mut streams = signal_streams(55, 0, m);
            run(&world, &matrix, &evidence, &EngineConfig::new(rule, 2000, 1), &mut streams).unwrap()
        };
        let (ll, dg) = (go(Rule::LogLinear), go(Rule::DeGroot));
        for (a, b) in ll.snapshots.iter().zip(&dg.snapshots) {
            assert_eq!(a.histograms, b.histograms);
            for (x, y) in a.log_mu.iter().zip(&b.log_mu) {
                assert!(*y >= *x - 1e-9);
            }
        }
    }

    #[test]
    fn impossible_signal_is_absorbing() {
        // agent 0 is certain the signal is always category 0, but it sees category 1
        let world = WorldModel::new(
            vec![cat(&[0.5, 0.5]); 3],
            vec![vec![cat(&[1.0, 0.0])]; 3],
        )
        .unwrap();
        let mut evidence: EvidenceTable = vec![vec![EvidenceCounts::finite(vec![5.0, 1.0]).unwrap()]; 3];
        evidence[0][0] = EvidenceCounts::certain(cat(&[1.0, 0.0]));
        let matrix = lazy_metropolis(&Topology::new(3, [(0, 1), (1, 2)]).unwrap());
        for rule in [Rule::LogLinear, Rule::DeGroot] {
            let engine = Engine::new(&matrix, &world, &evidence, rule).unwrap();
            let mut state = BeliefState::initial(&world);
            engine.step_with_signals(&mut state, &[1, 0, 0]).unwrap();
            assert_eq!(state.log_belief(0, 0), f64::NEG_INFINITY);
            assert!(state.log_belief(1, 0).is_finite());
            engine.step_with_signals(&mut state, &[0, 0, 0]).unwrap();
            match rule {
                Rule::LogLinear => {
                    assert_eq!(state.log_belief(0, 0), f64::NEG_INFINITY);
                    assert_eq!(state.log_belief(1, 0), f64::NEG_INFINITY);
                    assert!(state.log_belief(2, 0).is_finite());
                    engine.step_with_signals(&mut state, &[0, 0, 0]).unwrap();
                    assert_eq!(state.log_belief(2, 0), f64::NEG_INFINITY);
                }
                Rule::DeGroot => {
                    // the neighbour's mass pulls agent 0 back to a finite value
                    assert!(state.log_belief(0, 0).is_finite());
                    assert!(state.log_belief(1, 0).is_finite());
                }
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let world = WorldModel::shared(3, table_i(), 0).unwrap();
        let evidence = finite_table(&world, 0);
        let wrong = lazy_metropolis(&Topology::ring(4).unwrap());
        assert!(matches!(
            Engine::new(&wrong, &world, &evidence, Rule::LogLinear),
            Err(LearningError::DimensionMismatch { .. })
        ));
        let matrix = lazy_metropolis(&Topology::ring(3).unwrap());
        let engine = Engine::new(&matrix, &world, &evidence, Rule::LogLinear).unwrap();
        let mut state = BeliefState::initial(&world);
        assert!(matches!(
            engine.step_with_signals(&mut state, &[0, 2, 0]),
            Err(LearningError::SignalOutOfRange { agent: 1, .. })
        ));
        let mut streams = signal_streams(1, 0, 3);
        assert!(matches!(
            run(&world, &matrix, &evidence, &EngineConfig::new(Rule::LogLinear, 5, 0), &mut streams),
            Err(LearningError::ZeroStride)
        ));
    }

    #[test]
    fn csv_export() {
        let world = WorldModel::shared(2, vec![cat(&[0.5, 0.5])], 0).unwrap();
        let evidence = vec![vec![EvidenceCounts::vacuous(2).unwrap()]; 2];
        let matrix = lazy_metropolis(&Topology::complete(2).unwrap());
        let mut streams = signal_streams(1, 0, 2);
        let traj = run(&world, &matrix, &evidence, &EngineConfig::new(Rule::LogLinear, 2, 1), &mut streams).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, 3, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().next().unwrap(), "3,0,0,0,0");
    }
}
