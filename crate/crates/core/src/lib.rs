//! Structural causal models over exact rationals, interventions on them, and
//! mechanical checks that one model implements another: exact
//! transformation, constructive abstraction, translation and abstraction
//! under translation. Also representation audits of a single aligned
//! variable and a rotation search for distributed alignments.
//!
//! The guide in `book/` walks through each layer; its code blocks run as
//! doctests of this crate.

pub mod expr;
pub mod model;
pub mod rational;
pub mod intervene;
pub mod translate;
pub mod abstraction;
pub mod audit;
pub mod formats;
pub mod align_search;
pub mod fixtures;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/interventions.md")]
    mod interventions {}
    #[doc = include_str!("../../../book/src/abstraction.md")]
    mod abstraction {}
    #[doc = include_str!("../../../book/src/translations.md")]
    mod translations {}
    #[doc = include_str!("../../../book/src/audits.md")]
    mod audits {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
