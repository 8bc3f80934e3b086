//! Mutual-information-optimal linear precoding for vector Gaussian channels
//! with finite input alphabets.

pub mod channel;
pub mod error;
pub mod estimator;
pub mod formats;
pub mod infomeasures;
pub mod integration;
pub mod jacobian;
pub mod matcalc;
pub mod mindist;
pub mod precoder_opt;
pub mod verify;

/// Guide chapters, compiled so their snippets run as doc-tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    pub mod estimation {}
    #[doc = include_str!("../../../book/src/power-allocation.md")]
    pub mod power_allocation {}
    #[doc = include_str!("../../../book/src/right-factor.md")]
    pub mod right_factor {}
    #[doc = include_str!("../../../book/src/minimum-distance.md")]
    pub mod minimum_distance {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../book/src/verification.md")]
    pub mod verification {}
}
