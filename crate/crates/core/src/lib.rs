//! Exact and Monte-Carlo machinery for penalised path measures.
//!
//! * [`chain`], [`oracle`]: recurrent Markov chains, exact propagation, brute-force expectations.
//! * [`harmonic`], [`qmeasure`]: harmonic functions off a point and the σ-finite measures Q_x they induce.
//! * [`mc`], [`quadrature`], [`identities`]: samplers and verification suites for the
//!   Brownian, planar and Bessel identities.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod error;
pub mod exact;
pub mod harmonic;
pub mod identities;
pub mod mc;
pub mod oracle;
pub mod qmeasure;
pub mod quadrature;

pub use error::{Error, Result};
