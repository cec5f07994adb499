//! Energy functions, dynamics and analysis tools that treat associative
//! memories as probabilistic models and vice versa.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! files, threads or the command line lives in `amprob-lab`.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`numerics`] | tensors, tape-based reverse-mode autodiff, stable primitives, seeded RNG |
//! | [`energy`] | Hopfield, MCHN, ClAM and kernel density energies |
//! | [`latent`] | mixture posteriors, ELBO energies, CRP prior and CRP energies |
//! | [`dynamics`] | Euler gradient flow, logit flow, CCCP update, Langevin sampler |
//! | [`clustering`] | ClAM / ClAM+ELBO training, k-means baseline, metrics |
//! | [`capacity`] | separation, storage checks and retrieval experiments for Gaussian KDEs |
//! | [`iclebm`] | a causal transformer that outputs in-context energies, trained by contrastive divergence |
//! | [`attnnorm`] | LayerNorm + attention as an inhomogeneous vMF mixture |
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attnnorm;
pub mod capacity;
pub mod clustering;
pub mod dynamics;
pub mod energy;
mod error;
pub mod iclebm;
pub mod latent;
pub mod numerics;

pub use error::{Error, Result};
