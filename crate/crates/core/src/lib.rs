//! Distributed learning with uncertain likelihoods.
//!
//! Agents on a network hold only finite prior evidence about each candidate
//! distribution. They score hypotheses with uncertain likelihood ratios and mix
//! beliefs with their neighbours using log-linear or DeGroot rules. The
//! [`harness`] module runs whole Monte Carlo experiments; the `social-learning`
//! binary wraps it.

pub mod logspace;
pub mod uncertain_models;
pub mod network;
pub mod signals;
pub mod learning;
pub mod analysis;
pub mod harness;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/uncertain-likelihood.md")]
    mod uncertain_likelihood {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/evidence-and-signals.md")]
    mod evidence_and_signals {}
    #[doc = include_str!("../../../book/src/learning-rules.md")]
    mod learning_rules {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
