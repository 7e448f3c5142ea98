//! Canopy: news recommendation with hierarchical user-interest trees.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod matching;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod training;

// Guide chapters double as doc-tests: every Rust block in book/ compiles
// and runs against the public API, one module per chapter so a failure
// names its chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/hierarchy.md")]
    mod hierarchy {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/recall.md")]
    mod recall {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
