pub mod ellipsoid;
pub mod error;
pub mod market;
pub mod rng;
pub mod oracle;
pub mod policy;
pub mod harness;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/ch01-markets.md")]
    pub mod chapter1 {}
    #[doc = include_str!("../../../book/src/ch02-ellipsoid.md")]
    pub mod chapter2 {}
    #[doc = include_str!("../../../book/src/ch03-explore-commit.md")]
    pub mod chapter3 {}
    #[doc = include_str!("../../../book/src/ch04-pooling.md")]
    pub mod chapter4 {}
    #[doc = include_str!("../../../book/src/ch05-one-bit.md")]
    pub mod chapter5 {}
    #[doc = include_str!("../../../book/src/ch06-experiments.md")]
    pub mod chapter6 {}
}
