//! Latent-space Bayesian inversion of river bathymetry from depth-averaged
//! velocity observations.
//!
//! The pipeline has an offline and an online stage:
//!
//! * **offline**: sample bathymetries from a geostatistical prior
//!   ([`prior`]), run the steady flow surrogate ([`forward`]) to build a
//!   dataset, and train a reduced-order model mapping a low-dimensional
//!   latent vector to velocities and bathymetry ([`rom::sve`] or the linear
//!   baseline [`rom::pca`]);
//! * **online**: given noisy, possibly sparse velocity observations, find
//!   the MAP latent vector by Gauss-Newton iteration and propagate the
//!   linearised posterior covariance to a bathymetry uncertainty map
//!   ([`inversion`]).
//!
//! [`diagnostics`] bundles the comparative studies (latent-dimension sweeps,
//! Hessian spectra, sparsity sweeps and distribution-shift reports).

pub mod config;
pub mod container;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod forward;
pub mod generate;
pub mod inversion;
pub mod io;
pub mod nn;
pub mod par;
pub mod prior;
pub mod rng;
pub mod rom;

pub use error::{Error, Result};
pub use fields::{
    apply_mask, equispaced_mask, grid_rmse, BathymetryField, BoundaryConditions, ChannelGeometry, Dataset,
    FlowField, Grid, ObservationMask, ObservationSet, Record,
};
pub use par::Execution;
