//! Compile-and-run harness for the guide in `book/`.
//!
//! Each chapter of the mdbook is included here as module documentation,
//! so `cargo test -p seqmem-book` executes every runnable snippet the
//! book shows. If a chapter drifts out of sync with the library, the
//! doc-tests fail.

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/numerics.md")]
pub mod numerics {}

#[doc = include_str!("../../../book/src/laes.md")]
pub mod laes {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/init.md")]
pub mod init {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
