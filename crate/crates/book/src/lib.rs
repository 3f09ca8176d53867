//! Compiles every code listing of the guide in `book/src` as a doctest, one
//! module per chapter so a failure points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/embeddings.md")]
pub mod embeddings {}
#[doc = include_str!("../../../book/src/partitioning.md")]
pub mod partitioning {}
#[doc = include_str!("../../../book/src/scheduling.md")]
pub mod scheduling {}
#[doc = include_str!("../../../book/src/dispatch.md")]
pub mod dispatch {}
#[doc = include_str!("../../../book/src/maintenance.md")]
pub mod maintenance {}
#[doc = include_str!("../../../book/src/optimizer.md")]
pub mod optimizer {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
