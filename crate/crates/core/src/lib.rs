//! Privacy accounting for exact counting queries answered on random disjoint
//! blocks of a database.
//!
//! See the guide in `book/` for a walk-through of each module.

pub mod baseline;
pub mod compose;
pub mod curve;
pub mod distkit;
pub mod error;
pub mod oracle;
pub mod partition;
pub mod query;
pub mod seeding;
pub mod spc;
pub mod tables;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/composition.md")]
    mod composition {}
    #[doc = include_str!("../../../book/src/dp-comparison.md")]
    mod dp_comparison {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
