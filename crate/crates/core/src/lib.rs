pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod lowering;
pub mod model;
pub mod ogap;
pub mod rank;
pub mod rgap;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/lowering.md")]
    mod lowering {}
    #[doc = include_str!("../../../book/src/logit.md")]
    mod logit {}
    #[doc = include_str!("../../../book/src/recursion.md")]
    mod recursion {}
    #[doc = include_str!("../../../book/src/rank.md")]
    mod rank {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
