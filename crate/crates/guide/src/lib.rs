//! Compiles every chapter of the book as a doctest so the listings stay in
//! step with the library. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/ensembles.md")]
pub mod ensembles {}
#[doc = include_str!("../../../book/src/error-models.md")]
pub mod error_models {}
#[doc = include_str!("../../../book/src/uncertainty.md")]
pub mod uncertainty {}
#[doc = include_str!("../../../book/src/mc-dropout.md")]
pub mod mc_dropout {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
