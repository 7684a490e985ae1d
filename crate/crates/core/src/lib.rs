//! Edge-private estimation for directed random graphs whose edge
//! probabilities are `mu(alpha_i + beta_j)`.
//!
//! The pipeline: [`graph`] samples or parses a directed graph and computes
//! its bi-degree sequence; [`privacy`] releases that sequence with discrete
//! Laplace noise; [`estimator`] solves the moment equations for the node
//! parameters and attaches asymptotic standard errors; [`simulation`]
//! repeats the whole loop to measure interval coverage.
//!
//! ```
//! use dpgraph::{degrees, fit, privatize, sample_graph, ParameterVector, Probit, SolveOptions};
//! use dpgraph::estimator::MomentTargets;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let theta = ParameterVector::zeros(60);
//! let g = sample_graph(&theta, &Probit, &mut rng);
//! let noisy = privatize(&degrees(&g), 2.0, &mut rng).unwrap();
//! let res = fit(&MomentTargets::from(&noisy), &Probit, Some(&noisy.params), &SolveOptions::default()).unwrap();
//! assert!(res.exists);
//! ```

pub mod error;
pub mod estimator;
pub mod graph;
pub mod model;
pub mod privacy;
pub mod simulation;
pub mod stats;

pub use error::{Error, NonExistence, Result};
pub use estimator::{
    confidence_interval, fit, newton_solve, standardized_stats, FitResult, SolveOptions, StatKind,
    VarianceMode,
};
pub use graph::{degrees, expected_degrees, parse_edge_list, sample_graph, BiDegree, DirectedGraph, ParameterVector};
pub use model::{EdgeMean, Logit, Model, ModelBounds, Probit};
pub use privacy::{privatize, NoisyBiDegree, PrivacyParams};
pub use simulation::{run_experiment, CoverageReport, EpsSpec, ExperimentConfig, LSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/privacy.md")]
    struct Privacy;
    #[doc = include_str!("../../../book/src/estimation.md")]
    struct Estimation;
    #[doc = include_str!("../../../book/src/inference.md")]
    struct Inference;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../README.md")]
    struct Readme;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
