pub mod patterns;
pub mod quadrature;
pub mod channel;
pub mod modem;
pub mod analysis;
pub mod montecarlo;
pub mod config;
pub mod experiment;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/patterns.md")]
    mod patterns {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/codebook-design.md")]
    mod codebook_design {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
