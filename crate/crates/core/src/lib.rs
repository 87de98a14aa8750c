pub mod data;
pub mod error;
pub mod evaluation;
pub mod hypergraph;
pub mod model;
pub mod multiscale;
pub mod numerics;
pub mod predictor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Ablation, Forward, Hermes, ModelConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/multiscale.md")]
    mod multiscale {}
    #[doc = include_str!("../../../book/src/hyperedges.md")]
    mod hyperedges {}
    #[doc = include_str!("../../../book/src/lead-lag.md")]
    mod lead_lag {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
