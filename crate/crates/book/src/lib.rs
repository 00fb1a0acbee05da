//! The guide's chapters, compiled as documentation so `cargo test --doc` runs
//! every snippet. Each chapter gets its own module to make failures easy to
//! trace back to a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/images.md")]
pub mod images {}
#[doc = include_str!("../../../book/src/detector.md")]
pub mod detector {}
#[doc = include_str!("../../../book/src/salience.md")]
pub mod salience {}
#[doc = include_str!("../../../book/src/masks.md")]
pub mod masks {}
#[doc = include_str!("../../../book/src/attack.md")]
pub mod attack {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
