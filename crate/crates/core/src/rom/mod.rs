//! Reduced-order models mapping a latent vector (plus boundary conditions)
//! to velocity and bathymetry fields.

pub mod pca;
pub mod persist;
pub mod sve;

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Result};
use crate::fields::{BathymetryField, BoundaryConditions, ChannelGeometry, Dataset, Grid, ObservationMask};

/// Decoder output in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFields {
    pub u: Grid,
    pub v: Grid,
    pub s: Grid,
}

impl DecodedFields {
    /// Masked velocities in observation order.
    pub fn observed(&self, geometry: &ChannelGeometry, mask: &ObservationMask) -> Vec<f64> {
        let m = geometry.n_nodes();
        mask.stacked_rows(geometry)
            .into_iter()
            .map(|r| if r < m { self.u.as_slice()[r] } else { self.v.as_slice()[r - m] })
            .collect()
    }
}

/// Common interface of the trained surrogates used by the inversion.
pub trait LatentRom: Send + Sync {
    fn geometry(&self) -> ChannelGeometry;

    fn latent_dim(&self) -> usize;

    fn kind(&self) -> &'static str;

    fn decode(&self, z: &[f64], bc: &BoundaryConditions) -> Result<DecodedFields>;

    /// Exact Jacobian of the masked velocity heads with respect to `z`;
    /// rows follow the observation ordering.
    fn velocity_jacobian(&self, z: &[f64], bc: &BoundaryConditions, mask: &ObservationMask) -> Result<DMatrix<f64>>;

    /// Exact Jacobian of the bathymetry head (`m x k`).
    fn bathymetry_jacobian(&self, z: &[f64], bc: &BoundaryConditions) -> Result<DMatrix<f64>>;

    /// Latent point representing a bathymetry (encoder mean or projection).
    fn encode_latent(&self, bathy: &BathymetryField, bc: &BoundaryConditions) -> Result<Vec<f64>>;

    fn predict_observations(&self, z: &[f64], bc: &BoundaryConditions, mask: &ObservationMask) -> Result<Vec<f64>> {
        Ok(self.decode(z, bc)?.observed(&self.geometry(), mask))
    }

    fn predict_with_jacobian(
        &self,
        z: &[f64],
        bc: &BoundaryConditions,
        mask: &ObservationMask,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        Ok((self.predict_observations(z, bc, mask)?, self.velocity_jacobian(z, bc, mask)?))
    }

    /// Bathymetry head for every column of `zs`, returned column-wise (`m x n`).
    fn decode_bathymetry_batch(&self, zs: &DMatrix<f64>, bc: &BoundaryConditions) -> Result<DMatrix<f64>> {
        let m = self.geometry().n_nodes();
        let mut out = DMatrix::zeros(m, zs.ncols());
        for (c, z) in zs.column_iter().enumerate() {
            let z: Vec<f64> = z.iter().copied().collect();
            out.column_mut(c).copy_from_slice(self.decode(&z, bc)?.s.as_slice());
        }
        Ok(out)
    }
}

pub(crate) fn check_latent(z: &[f64], k: usize) -> Result<()> {
    if z.len() != k {
        return Err(mismatch(format!("latent vector has {} entries, model expects {k}", z.len())));
    }
    Ok(())
}

/// Per-node mean with one scalar standard deviation for a whole field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldScaler {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl FieldScaler {
    /// Fits on the columns of `samples` (`m x n`).
    pub fn fit(samples: &DMatrix<f64>) -> Self {
        let (m, n) = samples.shape();
        let mean: Vec<f64> = (0..m).map(|r| samples.row(r).sum() / n as f64).collect();
        let mut ss = 0.0;
        for c in 0..n {
            for r in 0..m {
                let d = samples[(r, c)] - mean[r];
                ss += d * d;
            }
        }
        let std = (ss / (m * n) as f64).sqrt();
        Self { mean, std: if std > 0.0 { std } else { 1.0 } }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(v, m)| (v - m) / self.std).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(v, m)| v * self.std + m).collect()
    }

    pub fn normalize_columns(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(samples.nrows(), samples.ncols(), |r, c| (samples[(r, c)] - self.mean[r]) / self.std)
    }
}

/// Per-component standardisation of the two boundary-condition scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcScaler {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl BcScaler {
    pub fn fit(bcs: &[BoundaryConditions]) -> Self {
        let n = bcs.len().max(1) as f64;
        let mut mean = [0.0; 2];
        for bc in bcs {
            let a = bc.as_array();
            mean[0] += a[0] / n;
            mean[1] += a[1] / n;
        }
        let mut var = [0.0; 2];
        for bc in bcs {
            let a = bc.as_array();
            var[0] += (a[0] - mean[0]).powi(2) / n;
            var[1] += (a[1] - mean[1]).powi(2) / n;
        }
        let std = var.map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Self { mean, std }
    }

    pub fn normalize(&self, bc: &BoundaryConditions) -> [f64; 2] {
        let a = bc.as_array();
        [(a[0] - self.mean[0]) / self.std[0], (a[1] - self.mean[1]) / self.std[1]]
    }
}

/// Column matrices of the dataset fields selected by `indices`.
pub(crate) struct FieldMatrices {
    pub s: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub bcs: Vec<BoundaryConditions>,
}

pub(crate) fn field_matrices(dataset: &Dataset, indices: &[usize]) -> FieldMatrices {
    let m = dataset.geometry.n_nodes();
    let n = indices.len();
    let mut s = DMatrix::zeros(m, n);
    let mut u = DMatrix::zeros(m, n);
    let mut v = DMatrix::zeros(m, n);
    let mut bcs = Vec::with_capacity(n);
    for (c, &i) in indices.iter().enumerate() {
        let rec = &dataset.records[i];
        s.column_mut(c).copy_from_slice(rec.bathymetry.bed.as_slice());
        u.column_mut(c).copy_from_slice(rec.flow.u.as_slice());
        v.column_mut(c).copy_from_slice(rec.flow.v.as_slice());
        bcs.push(rec.bc);
    }
    FieldMatrices { s, u, v, bcs }
}

/// Every tenth record (index 9, 19, ...) is held out for validation; at
/// least one record always is.
pub fn train_validation_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::with_capacity(n);
    let mut val = Vec::with_capacity(n / 10 + 1);
    for i in 0..n {
        if i % 10 == 9 {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    if val.is_empty() && n > 1 {
        val.push(train.pop().unwrap());
    }
    (train, val)
}

/// Optimiser settings shared by both ROM kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 32, step_size: 1e-3, seed: 0 }
    }
}

/// Per-epoch losses; entry 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurve {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub best_epoch: usize,
}

/// A decoder that is exactly affine in `z`:
/// velocities `W_vel z + c_vel` (stacked `[u; v]`) and bathymetry `W_s z + c_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRom {
    pub geometry: ChannelGeometry,
    pub w_vel: DMatrix<f64>,
    pub c_vel: DVector<f64>,
    pub w_s: DMatrix<f64>,
    pub c_s: DVector<f64>,
}

impl AffineRom {
    pub fn new(
        geometry: ChannelGeometry,
        w_vel: DMatrix<f64>,
        c_vel: DVector<f64>,
        w_s: DMatrix<f64>,
        c_s: DVector<f64>,
    ) -> Result<Self> {
        let m = geometry.n_nodes();
        let k = w_vel.ncols();
        if w_vel.nrows() != 2 * m || c_vel.len() != 2 * m || w_s.shape() != (m, k) || c_s.len() != m {
            return Err(mismatch("affine decoder blocks do not match geometry"));
        }
        Ok(Self { geometry, w_vel, c_vel, w_s, c_s })
    }

    /// Deterministic pseudo-random fixture.
    pub fn random(geometry: ChannelGeometry, k: usize, seed: u64) -> Self {
        let m = geometry.n_nodes();
        let draw = |n: usize, salt: u64| crate::rng::standard_normals(seed ^ salt, crate::rng::Stream::Init, n);
        let w_vel = DMatrix::from_vec(2 * m, k, draw(2 * m * k, 1)) * 0.1;
        let c_vel = DVector::from_vec(draw(2 * m, 2)) * 0.5;
        let w_s = DMatrix::from_vec(m, k, draw(m * k, 3)) * 0.3;
        let c_s = DVector::from_vec(draw(m, 4)) - DVector::repeat(m, 3.0);
        Self { geometry, w_vel, c_vel, w_s, c_s }
    }
}

impl LatentRom for AffineRom {
    fn geometry(&self) -> ChannelGeometry {
        self.geometry
    }

    fn latent_dim(&self) -> usize {
        self.w_vel.ncols()
    }

    fn kind(&self) -> &'static str {
        "affine"
    }

    fn decode(&self, z: &[f64], _bc: &BoundaryConditions) -> Result<DecodedFields> {
        check_latent(z, self.latent_dim())?;
        let g = self.geometry;
        let m = g.n_nodes();
        let zv = DVector::from_column_slice(z);
        let vel = &self.w_vel * &zv + &self.c_vel;
        let s = &self.w_s * &zv + &self.c_s;
        Ok(DecodedFields {
            u: Grid::from_vec(g.n_across, g.n_along, vel.as_slice()[..m].to_vec())?,
            v: Grid::from_vec(g.n_across, g.n_along, vel.as_slice()[m..].to_vec())?,
            s: Grid::from_vec(g.n_across, g.n_along, s.as_slice().to_vec())?,
        })
    }

    fn velocity_jacobian(&self, z: &[f64], _bc: &BoundaryConditions, mask: &ObservationMask) -> Result<DMatrix<f64>> {
        check_latent(z, self.latent_dim())?;
        mask.check_bounds(&self.geometry)?;
        let rows = mask.stacked_rows(&self.geometry);
        Ok(self.w_vel.select_rows(rows.iter()))
    }

    fn bathymetry_jacobian(&self, z: &[f64], _bc: &BoundaryConditions) -> Result<DMatrix<f64>> {
        check_latent(z, self.latent_dim())?;
        Ok(self.w_s.clone())
    }

    fn encode_latent(&self, bathy: &BathymetryField, _bc: &BoundaryConditions) -> Result<Vec<f64>> {
        let rhs = DVector::from_column_slice(bathy.bed.as_slice()) - &self.c_s;
        let svd = self.w_s.clone().svd(true, true);
        let z = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| crate::error::Error::Factorization(e.to_string()))?;
        Ok(z.as_slice().to_vec())
    }
}
