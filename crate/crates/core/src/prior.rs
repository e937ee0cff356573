//! Geostatistical bathymetry prior: a deterministic mean shape plus a
//! squared-exponential Gaussian field, sampled through a truncated
//! Karhunen-Loeve basis.
//!
//! The anisotropic kernel on a regular grid is separable, so the full
//! covariance is the Kronecker product of a 1-D across-channel and a 1-D
//! along-channel correlation matrix. Its eigenpairs are products of the
//! 1-D eigenpairs, which keeps basis construction cheap at any grid size.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::fields::{BathymetryField, BoundaryConditions, ChannelGeometry, Grid};
use crate::rng::{standard_normals, stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    /// Marginal standard deviation (m).
    pub sigma: f64,
    /// Along-channel correlation length (m).
    pub len_along: f64,
    /// Across-channel correlation length (m).
    pub len_across: f64,
    /// Diagonal jitter (m^2).
    pub nugget: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { sigma: 1.2, len_along: 200.0, len_across: 20.0, nugget: 1e-6 }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.len_along > 0.0 && self.len_across > 0.0 && self.nugget >= 0.0) {
            return Err(invalid(format!("invalid kernel spec {self:?}")));
        }
        Ok(())
    }

    pub fn covariance(&self, dx: f64, dy: f64) -> f64 {
        self.sigma
            * self.sigma
            * (-(dx * dx) / (self.len_along * self.len_along) - (dy * dy) / (self.len_across * self.len_across))
                .exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolicMeanSpec {
    pub thalweg_elevation: f64,
    pub bank_rise: f64,
    /// Bed slope along the channel (negative = falling toward the outlet).
    pub along_trend: f64,
}

impl Default for ParabolicMeanSpec {
    fn default() -> Self {
        Self { thalweg_elevation: -5.0, bank_rise: 4.0, along_trend: -1e-4 }
    }
}

/// Flat-bottomed channel with linear banks; the second prior family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidalMeanSpec {
    pub bottom_elevation: f64,
    pub bank_rise: f64,
    /// Fraction of the width occupied by the flat bottom, in (0, 1).
    pub bottom_fraction: f64,
    pub along_trend: f64,
}

impl Default for TrapezoidalMeanSpec {
    fn default() -> Self {
        Self { bottom_elevation: -4.0, bank_rise: 3.0, bottom_fraction: 0.5, along_trend: -1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanShape {
    Parabolic(ParabolicMeanSpec),
    Trapezoidal(TrapezoidalMeanSpec),
}

impl MeanShape {
    pub fn name(&self) -> &'static str {
        match self {
            MeanShape::Parabolic(_) => "parabolic",
            MeanShape::Trapezoidal(_) => "trapezoidal",
        }
    }

    pub fn field(&self, geometry: &ChannelGeometry) -> Result<BathymetryField> {
        match self {
            MeanShape::Parabolic(spec) => parabolic_mean(geometry, spec),
            MeanShape::Trapezoidal(spec) => trapezoidal_mean(geometry, spec),
        }
    }
}

pub fn parabolic_mean(geometry: &ChannelGeometry, spec: &ParabolicMeanSpec) -> Result<BathymetryField> {
    if !(spec.bank_rise >= 0.0) {
        return Err(invalid("bank_rise must be non-negative"));
    }
    let half = (geometry.n_across - 1) as f64;
    let bed = Grid::from_fn(geometry.n_across, geometry.n_along, |i, j| {
        let t = 2.0 * i as f64 / half - 1.0;
        spec.thalweg_elevation + spec.bank_rise * t * t + spec.along_trend * (j as f64 * geometry.dx)
    });
    BathymetryField::new(*geometry, bed)
}

pub fn trapezoidal_mean(geometry: &ChannelGeometry, spec: &TrapezoidalMeanSpec) -> Result<BathymetryField> {
    if !(spec.bank_rise >= 0.0) || !(spec.bottom_fraction > 0.0 && spec.bottom_fraction < 1.0) {
        return Err(invalid(format!("invalid trapezoidal spec {spec:?}")));
    }
    let half = (geometry.n_across - 1) as f64;
    let bed = Grid::from_fn(geometry.n_across, geometry.n_along, |i, j| {
        let t = (2.0 * i as f64 / half - 1.0).abs();
        let bank = ((t - spec.bottom_fraction) / (1.0 - spec.bottom_fraction)).max(0.0);
        spec.bottom_elevation + spec.bank_rise * bank + spec.along_trend * (j as f64 * geometry.dx)
    });
    BathymetryField::new(*geometry, bed)
}

/// Truncated eigen-factorisation of the prior covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBasis {
    pub geometry: ChannelGeometry,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// `m x n_modes`, orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    /// Flattened mean field (length m).
    pub mean: Vec<f64>,
    /// Retained share of the total prior variance.
    pub captured_variance: f64,
}

impl FieldBasis {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Covariance implied by the retained modes.
    pub fn truncated_covariance(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.eigenvectors.nrows(), self.n_modes(), |r, c| {
            self.eigenvectors[(r, c)] * self.eigenvalues[c].sqrt()
        });
        &scaled * scaled.transpose()
    }
}

fn correlation_1d(n: usize, spacing: f64, len: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, b| {
        let d = (a as f64 - b as f64) * spacing;
        (-(d * d) / (len * len)).exp()
    })
}

fn sorted_eigen(mat: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = mat.nrows();
    let eig = SymmetricEigen::try_new(mat, 1e-14, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Leading `n_modes` eigenpairs of the kernel covariance (nugget included).
pub fn build_field_basis(
    geometry: &ChannelGeometry,
    mean: &BathymetryField,
    kernel: &KernelSpec,
    n_modes: usize,
) -> Result<FieldBasis> {
    kernel.validate()?;
    let m = geometry.n_nodes();
    if n_modes == 0 || n_modes > m {
        return Err(invalid(format!("n_modes must be in 1..={m}, got {n_modes}")));
    }
    if mean.geometry != *geometry {
        return Err(crate::error::mismatch("mean field geometry differs from basis geometry"));
    }
    let (va, ea) = sorted_eigen(correlation_1d(geometry.n_across, geometry.dy, kernel.len_across))?;
    let (vl, el) = sorted_eigen(correlation_1d(geometry.n_along, geometry.dx, kernel.len_along))?;

    let var = kernel.sigma * kernel.sigma;
    let scale = va[0].abs().max(vl[0].abs()) * var;
    let mut pairs = Vec::with_capacity(m);
    for (a, &la) in va.iter().enumerate() {
        for (l, &ll) in vl.iter().enumerate() {
            let lam = var * la * ll + kernel.nugget;
            if lam < -1e-10 * scale.max(kernel.nugget) - 1e-300 {
                return Err(Error::Eigen(format!(
                    "covariance is not positive semi-definite (eigenvalue {lam:e}); increase the nugget"
                )));
            }
            pairs.push((lam.max(0.0), a, l));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    pairs.truncate(n_modes);

    let (na, nl) = (geometry.n_across, geometry.n_along);
    let mut vectors = DMatrix::zeros(m, n_modes);
    for (c, &(_, a, l)) in pairs.iter().enumerate() {
        for i in 0..na {
            let ai = ea[(i, a)];
            for j in 0..nl {
                vectors[(i * nl + j, c)] = ai * el[(j, l)];
            }
        }
        // fix the sign so the largest-magnitude entry is positive
        let col = vectors.column(c);
        let pivot = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            vectors.column_mut(c).neg_mut();
        }
    }
    let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let total = m as f64 * (var + kernel.nugget);
    let captured_variance = eigenvalues.iter().sum::<f64>() / total;
    Ok(FieldBasis {
        geometry: *geometry,
        eigenvalues,
        eigenvectors: vectors,
        mean: mean.bed.as_slice().to_vec(),
        captured_variance,
    })
}

/// `mean + sum_k sqrt(lambda_k) xi_k phi_k` for given coefficients.
pub fn sample_with_coefficients(basis: &FieldBasis, xi: &[f64]) -> Result<BathymetryField> {
    if xi.len() != basis.n_modes() {
        return Err(crate::error::mismatch(format!(
            "{} coefficients for {} modes",
            xi.len(),
            basis.n_modes()
        )));
    }
    let weights: Vec<f64> = xi.iter().zip(&basis.eigenvalues).map(|(x, l)| x * l.sqrt()).collect();
    let w = nalgebra::DVector::from_vec(weights);
    let delta = &basis.eigenvectors * w;
    let flat = basis.mean.iter().zip(delta.iter()).map(|(m, d)| m + d).collect();
    BathymetryField::from_flat(basis.geometry, flat)
}

pub fn sample_bathymetry(basis: &FieldBasis, seed: u64) -> Result<BathymetryField> {
    let xi = standard_normals(seed, Stream::Field, basis.n_modes());
    sample_with_coefficients(basis, &xi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcRanges {
    pub discharge: (f64, f64),
    pub downstream_surface: (f64, f64),
}

impl Default for BcRanges {
    fn default() -> Self {
        Self { discharge: (200.0, 400.0), downstream_surface: (0.0, 1.0) }
    }
}

impl BcRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(self.discharge) || !ok(self.downstream_surface) || !(self.discharge.0 > 0.0) {
            return Err(invalid(format!("invalid boundary-condition ranges {self:?}")));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> BoundaryConditions {
        BoundaryConditions {
            discharge: 0.5 * (self.discharge.0 + self.discharge.1),
            downstream_surface: 0.5 * (self.downstream_surface.0 + self.downstream_surface.1),
        }
    }
}

pub fn sample_bc(ranges: &BcRanges, seed: u64) -> Result<BoundaryConditions> {
    ranges.validate()?;
    let mut rng = stream_rng(seed, Stream::Boundary);
    let mut draw = |(lo, hi): (f64, f64)| {
        let u: f64 = rng.random();
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) * u
        }
    };
    let discharge = draw(ranges.discharge);
    let downstream_surface = draw(ranges.downstream_surface);
    BoundaryConditions::new(discharge, downstream_surface)
}

/// A named prior: mean shape, kernel and truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub mean: MeanShape,
    pub kernel: KernelSpec,
    pub n_modes: usize,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mean: MeanShape::Parabolic(ParabolicMeanSpec::default()),
            kernel: KernelSpec::default(),
            n_modes: 200,
        }
    }
}

impl PriorSpec {
    /// Flat-bottom family with shorter correlation lengths.
    pub fn trapezoidal_family(sigma: f64) -> Self {
        Self {
            mean: MeanShape::Trapezoidal(TrapezoidalMeanSpec::default()),
            kernel: KernelSpec { sigma, len_along: 90.0, len_across: 12.0, nugget: 1e-6 },
            n_modes: 200,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.kernel.sigma = sigma;
        self
    }

    pub fn basis(&self, geometry: &ChannelGeometry) -> Result<FieldBasis> {
        let mean = self.mean.field(geometry)?;
        build_field_basis(geometry, &mean, &self.kernel, self.n_modes.min(geometry.n_nodes()))
    }
}
