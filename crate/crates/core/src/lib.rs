pub mod attack;
pub mod codec;
pub mod datakit;
pub mod harness;
pub mod qsim;
pub mod models;
pub mod nn;
pub mod unlearn;

/// Chapters of the book in `book/src`, compiled here so their examples run as doc-tests.
pub mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod overview {}
    #[doc = include_str!("../../../book/src/circuits.md")]
    pub mod circuits {}
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/unlearning.md")]
    pub mod unlearning {}
    #[doc = include_str!("../../../book/src/attack.md")]
    pub mod attack {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
