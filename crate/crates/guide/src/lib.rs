//! The chapters of `book/` as modules, so `cargo test --doc` runs every
//! snippet in the guide.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/expressions.md")]
pub mod expressions {}

#[doc = include_str!("../../../book/src/problems.md")]
pub mod problems {}

#[doc = include_str!("../../../book/src/first-order.md")]
pub mod first_order {}

#[doc = include_str!("../../../book/src/second-order.md")]
pub mod second_order {}

#[doc = include_str!("../../../book/src/refutation.md")]
pub mod refutation {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/caveats.md")]
pub mod caveats {}
