//! The guide's chapters, one module each, so `cargo test --doc` runs every
//! Rust block in `book/src`. A failing doc-test names the chapter module.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/temperatures.md")]
pub mod temperatures {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
