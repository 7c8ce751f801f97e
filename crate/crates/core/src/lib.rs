//! Few-shot open-set automatic modulation classification.
//!
//! The crate covers the whole pipeline: baseband signal synthesis over
//! fading channels ([`signal`]), multi-sequence representations
//! ([`repr`]), a small reverse-mode autodiff core ([`tensor`]), the
//! multi-scale attention encoder ([`net`]), episodic prototype training
//! ([`meta`]), the nearest-class-mean open-set classifier ([`openset`]),
//! metrics and experiments ([`eval`]) and on-disk formats ([`io`]).

pub mod error;
pub mod eval;
pub mod io;
pub mod meta;
pub mod net;
pub mod openset;
pub mod repr;
pub mod rng;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
