//! Lifted atomic norm minimization for joint radar parameter estimation and
//! symbol decoding.

pub mod decode;
pub mod dictionary;
pub mod error;
pub mod harness;
pub mod io;
pub mod localization;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sdr;
pub mod waveform;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/dictionaries.md")]
    mod dictionaries {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
