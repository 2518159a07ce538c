//! Volterra lattice GGE molecular dynamics and the linearized generalized
//! hydrodynamics of its conserved fields.
//!
//! Layers, bottom up: [`lattice`] and [`integrate`] (dynamics), [`ensembles`]
//! (samplers and spectra), [`grid`], [`kernel`] and [`dos`] (density of states),
//! [`ghd`] (dressing, C, B and Euler-scale curves), [`md`] (Monte Carlo
//! correlations) and [`compare`].

pub mod compare;
pub mod dos;
pub mod ensembles;
pub mod error;
pub mod ghd;
pub mod grid;
pub mod integrate;
pub mod io;
pub mod kernel;
pub mod lattice;
pub mod md;
pub mod quad;
pub mod special;
pub mod whittaker;

pub use error::{Error, Result};
