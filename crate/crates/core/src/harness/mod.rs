//! Experiment configuration, Monte Carlo orchestration, figure data and the CLI.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod figures;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{load_config, parse_config, ExperimentConfig, Overrides};
pub use experiment::{run_experiment, Artifacts};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad config, bad flag values or inconsistent inputs.
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
    #[error("{failed} of {total} runs aborted; see summary.json")]
    RunsFailed { failed: usize, total: usize },
}

impl HarnessError {
    /// 1 for validation problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

pub const PRESET_NAMES: [&str; 5] = ["paper_low", "paper_high", "paper_certain", "figure1", "figure2"];

/// Source text of a bundled preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "paper_low" => include_str!("../../presets/paper_low.toml"),
        "paper_high" => include_str!("../../presets/paper_high.toml"),
        "paper_certain" => include_str!("../../presets/paper_certain.toml"),
        "figure1" => include_str!("../../presets/figure1.toml"),
        "figure2" => include_str!("../../presets/figure2.toml"),
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig, HarnessError> {
    let text = preset_source(name).ok_or_else(|| {
        HarnessError::Invalid(format!("unknown preset `{name}`; expected one of {}", PRESET_NAMES.join(", ")))
    })?;
    parse_config(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::EvidenceRegime;

    #[test]
    fn presets_parse() {
        for name in PRESET_NAMES {
            preset(name).unwrap();
        }
        assert!(preset("paper_medium").is_err());
    }

    #[test]
    fn paper_low_defaults() {
        let c = preset("paper_low").unwrap();
        let sim = c.simulation.unwrap();
        assert_eq!(sim.agents, 20);
        assert_eq!(sim.horizon, 100_000);
        assert_eq!(sim.runs, 10);
        assert_eq!(sim.evidence.regime, EvidenceRegime::Low);
        let world = sim.world().unwrap();
        assert_eq!(world.categories(0), 2);
        assert_eq!(world.hypothesis_count(), 4);
        assert_eq!(world.hypothesis(3, 1).probs(), &[0.55, 0.45]);
        assert_eq!(world.ground_truth(7).probs(), &[0.6, 0.4]);
    }

    fn edit(from: &str, to: &str) -> Result<ExperimentConfig, HarnessError> {
        let text = preset_source("paper_low").unwrap();
        assert!(text.contains(from));
        parse_config(&text.replacen(from, to, 1))
    }

    #[test]
    fn empty_hypotheses_rejected() {
        let err = edit("hypotheses = [[0.6, 0.4], [0.55, 0.45], [0.5, 0.5], [0.4, 0.6]]", "hypotheses = []");
        assert!(matches!(err, Err(HarnessError::Invalid(m)) if m.contains("empty")));
    }

    #[test]
    fn checkpoint_beyond_horizon_rejected() {
        let err = edit("[1000, 10000, 100000]", "[1000, 200000]");
        assert!(matches!(err, Err(HarnessError::Invalid(m)) if m.contains("200000")));
    }

    #[test]
    fn unknown_key_named() {
        let err = edit("upsilon = 2.0", "upsilon = 2.0\nupsilom = 3.0");
        assert!(matches!(err, Err(HarnessError::Invalid(ref m)) if m.contains("upsilom")), "{err:?}");
        let err = edit("radius = 0.4", "radius = 0.4\nwidth = 1");
        assert!(matches!(err, Err(HarnessError::Invalid(ref m)) if m.contains("width")), "{err:?}");
    }

    #[test]
    fn other_invariants() {
        assert!(edit("ground_truth = 0", "ground_truth = 4").is_err());
        assert!(edit("runs = 10", "runs = 0").is_err());
        assert!(edit("upsilon = 2.0", "upsilon = 1.0").is_err());
        assert!(edit("radius = 0.4", "radius = 2.0").is_err());
        assert!(edit("[0.4, 0.6]]", "[0.4, 0.7]]").is_err());
        assert!(edit("[0.4, 0.6]]", "[0.2, 0.2, 0.6]]").is_err());
        assert!(edit("rules = [\"log_linear\", \"degroot\"]", "rules = []").is_err());
        assert!(parse_config("name = \"x\"\nseed = 1\n").is_err());
        assert!(parse_config("name = \"x\"\nseed = \n").is_err());
    }

    #[test]
    fn regime_spellings() {
        let c = edit("regime = \"low\"", "regime = { range = { lo = 5, hi = 9 } }").unwrap();
        assert_eq!(c.simulation.unwrap().evidence.regime, EvidenceRegime::Range { lo: 5, hi: 9 });
        assert!(edit("regime = \"low\"", "regime = { range = { lo = 9, hi = 5 } }").is_err());
    }

    #[test]
    fn horizon_override_trims_checkpoints() {
        let mut c = preset("paper_low").unwrap();
        c.apply(&Overrides {
            horizon: Some(10_000),
            runs: Some(5),
            ..Default::default()
        })
        .unwrap();
        let sim = c.simulation.unwrap();
        assert_eq!(sim.checkpoints, vec![1000, 10_000]);
        assert_eq!(sim.runs, 5);

        let mut c = preset("paper_low").unwrap();
        c.apply(&Overrides {
            horizon: Some(5000),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.simulation.unwrap().checkpoints, vec![1000, 5000]);

        let mut c = preset("figure2").unwrap();
        assert!(c
            .apply(&Overrides {
                runs: Some(3),
                ..Default::default()
            })
            .is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap();
            let text = toml::to_string(&c).unwrap();
            assert_eq!(parse_config(&text).unwrap(), c);
        }
    }
}
