//! Text encoder whose learned groups compete for caption tokens, trained
//! against frozen object-level image embeddings of a synthetic world.
//!
//! The guide in `book/` walks through every module; its code blocks are
//! compiled as doc-tests of this crate.

pub mod autodiff;
pub mod batch;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod world;
pub mod train;
pub mod visualize;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/grouping.md")]
    mod grouping {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/world.md")]
    mod world {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/findings.md")]
    mod findings {}
}
