//! Sharp L_p interpolation error asymptotics on adaptive block partitions.
//!
//! Layers, bottom up: polynomials ([`poly`]), blocks and partitions
//! ([`blocks`]), projection operators ([`proj`]), norms and quadrature
//! ([`norms`]), the shape-optimized error function ([`kfun`]), adaptive
//! partitions ([`adapt`]) and convergence studies ([`bench`]).

pub mod adapt;
pub mod bench;
pub mod blocks;
pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod kfun;
pub mod norms;
pub mod optim;
pub mod poly;
pub mod proj;

pub use error::{Error, Result};
