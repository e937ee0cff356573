//! Linear-reduction baseline: PCA bases for the bathymetry input and the
//! three output fields, joined by a regressor on the coefficients.
//!
//! The latent vector is the whitened input coefficient vector. The regressor
//! is a closed-form least-squares affine map plus a small dense network
//! trained on its residual; the network's output layer starts at zero, so an
//! untrained model is the pure least-squares map.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::{
    check_latent, field_matrices, train_validation_split, BcScaler, DecodedFields, LatentRom, TrainHyper,
    TrainingCurve,
};
use crate::error::{invalid, mismatch, Error, Result};
use crate::fields::{BathymetryField, BoundaryConditions, ChannelGeometry, Dataset, Grid, ObservationMask};
use crate::nn::{Activation, Adam, Mlp};
use crate::par::{map_range, Execution};
use crate::rng::{derive_seed, stream_rng, Stream};

const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    /// `m x k`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Sample variance along each component, descending.
    pub explained_variance: DVector<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn project(&self, x: &[f64]) -> DVector<f64> {
        let centered = DVector::from_column_slice(x) - &self.mean;
        self.components.tr_mul(&centered)
    }

    pub fn expand(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.components * coeffs
    }

    pub fn reconstruct(&self, x: &[f64]) -> DVector<f64> {
        self.expand(&self.project(x))
    }
}

/// Top-`k` principal components of the rows of `samples` (`N x m`).
///
/// Signs are fixed so that the largest-magnitude entry of each component is
/// positive.
pub fn fit_pca(samples: &DMatrix<f64>, k: usize) -> Result<PcaBasis> {
    let (n, m) = samples.shape();
    if k == 0 || k > n.min(m) {
        return Err(invalid(format!("cannot extract {k} components from {n} samples of dimension {m}")));
    }
    let mean = DVector::from_fn(m, |c, _| samples.column(c).mean());
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n.max(2) - 1) as f64;

    // Eigen-decompose whichever Gram matrix is smaller.
    let (values, vectors) = if n < m {
        let gram = &centered * centered.transpose();
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut comps = DMatrix::zeros(m, k);
        let mut vals = Vec::with_capacity(k);
        for (c, &o) in order.iter().take(k).enumerate() {
            let lam = eig.eigenvalues[o].max(0.0);
            let mut dir = centered.tr_mul(&eig.eigenvectors.column(o));
            let norm = dir.norm();
            if norm > 1e-12 * lam.sqrt().max(1e-300) && norm > 0.0 {
                dir /= norm;
            } else {
                dir = DVector::zeros(m);
            }
            comps.set_column(c, &dir);
            vals.push(lam / denom);
        }
        (vals, complete_orthonormal(comps))
    } else {
        let cov = centered.tr_mul(&centered);
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let comps = DMatrix::from_fn(m, k, |r, c| eig.eigenvectors[(r, order[c])]);
        let vals = order.iter().take(k).map(|&o| eig.eigenvalues[o].max(0.0) / denom).collect();
        (vals, comps)
    };

    let mut components = vectors;
    for mut col in components.column_iter_mut() {
        let lead = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok(PcaBasis { mean, components, explained_variance: DVector::from_vec(values) })
}

/// Replaces zero columns (rank-deficient directions) by unit vectors
/// orthogonal to the others, via Gram-Schmidt against the canonical basis.
fn complete_orthonormal(mut comps: DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = comps.shape();
    let mut next_axis = 0;
    for c in 0..k {
        if comps.column(c).norm() > 0.5 {
            continue;
        }
        while next_axis < m {
            let mut e = DVector::zeros(m);
            e[next_axis] = 1.0;
            next_axis += 1;
            for o in 0..k {
                if o != c && comps.column(o).norm() > 0.5 {
                    let p = comps.column(o).dot(&e);
                    e -= comps.column(o) * p;
                }
            }
            let nrm = e.norm();
            if nrm > 1e-6 {
                comps.set_column(c, &(e / nrm));
                break;
            }
        }
    }
    comps
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaArchitecture {
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub bc_embedding: bool,
}

impl Default for PcaArchitecture {
    fn default() -> Self {
        Self { latent_dim: 20, hidden_widths: vec![128], activation: Activation::Softplus, bc_embedding: true }
    }
}

impl PcaArchitecture {
    fn n_bc(&self) -> usize {
        if self.bc_embedding {
            2
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaRomModel {
    pub geometry: ChannelGeometry,
    pub arch: PcaArchitecture,
    pub input_basis: PcaBasis,
    pub u_basis: PcaBasis,
    pub v_basis: PcaBasis,
    pub s_basis: PcaBasis,
    /// Per-field coefficient scale (square root of the leading variance).
    pub coeff_scale: [f64; 3],
    /// `3k x (k + n_bc + 1)`; the last column is the intercept.
    pub linear: DMatrix<f64>,
    pub residual: Mlp,
    pub params: Vec<f64>,
    pub bc_scaler: BcScaler,
    pub curve: TrainingCurve,
    pub seed: u64,
}

fn scale_of(basis: &PcaBasis) -> f64 {
    let s = basis.explained_variance[0].sqrt();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

impl PcaRomModel {
    fn regressor_input(&self, z: &[f64], bc: &BoundaryConditions) -> DVector<f64> {
        let mut x = z.to_vec();
        if self.arch.bc_embedding {
            x.extend(self.bc_scaler.normalize(bc));
        }
        DVector::from_vec(x)
    }

    /// Whitened input coefficients of a bathymetry.
    pub fn latent_of(&self, bed: &[f64]) -> Vec<f64> {
        let c = self.input_basis.project(bed);
        c.iter()
            .zip(self.input_basis.explained_variance.iter())
            .map(|(c, v)| if *v > 0.0 { c / v.sqrt() } else { *c })
            .collect()
    }

    fn linear_part(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = x.len();
        let mut y = self.linear.columns(0, p) * x;
        y += self.linear.column(p);
        y
    }

    /// Normalised output coefficients `[u; v; s]` and their `z`-Jacobian.
    fn coefficients(&self, z: &[f64], bc: &BoundaryConditions, with_jac: bool) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.arch.latent_dim;
        let x = self.regressor_input(z, bc);
        let lin = self.linear_part(&x);
        if with_jac {
            let mut t = DMatrix::zeros(x.len(), k);
            for i in 0..k {
                t[(i, i)] = 1.0;
            }
            let (r, jr) = self.residual.tangent(&self.params, &x, &t);
            (lin + r, self.linear.columns(0, k) + jr)
        } else {
            let r = self.residual.predict(&self.params, &DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
            (lin + r.column(0), DMatrix::zeros(0, 0))
        }
    }

    fn bases(&self) -> [&PcaBasis; 3] {
        [&self.u_basis, &self.v_basis, &self.s_basis]
    }
}

/// Fits the four bases and the regressor. With `epochs = 0` the residual
/// network stays at zero.
pub fn train_pca_rom(
    dataset: &Dataset,
    arch: &PcaArchitecture,
    hyper: &TrainHyper,
    exec: Execution,
) -> Result<PcaRomModel> {
    let k = arch.latent_dim;
    if k == 0 || arch.hidden_widths.iter().any(|&w| w == 0) {
        return Err(invalid("latent_dim and widths must be at least 1"));
    }
    if hyper.batch_size == 0 || dataset.len() < 2 * hyper.batch_size {
        return Err(invalid(format!(
            "need at least {} records for batch size {}, got {}",
            2 * hyper.batch_size,
            hyper.batch_size,
            dataset.len()
        )));
    }
    let (train_idx, val_idx) = train_validation_split(dataset.len());
    let f = field_matrices(dataset, &train_idx);
    let s_basis = fit_pca(&f.s.transpose(), k)?;
    let u_basis = fit_pca(&f.u.transpose(), k)?;
    let v_basis = fit_pca(&f.v.transpose(), k)?;
    let nbc = arch.n_bc();
    let residual = Mlp::new(k + nbc, &arch.hidden_widths, 3 * k, arch.activation, 0);
    let mut params = vec![0.0; residual.end()];
    residual.init(&mut params, &mut stream_rng(hyper.seed, Stream::Init));
    let last = residual.layers.last().unwrap().clone();
    last.weights_mut(&mut params).fill(0.0);

    let mut model = PcaRomModel {
        geometry: dataset.geometry,
        arch: arch.clone(),
        input_basis: s_basis.clone(),
        coeff_scale: [scale_of(&u_basis), scale_of(&v_basis), scale_of(&s_basis)],
        u_basis,
        v_basis,
        s_basis,
        linear: DMatrix::zeros(3 * k, k + nbc + 1),
        residual,
        params,
        bc_scaler: BcScaler::fit(&f.bcs),
        curve: TrainingCurve::default(),
        seed: hyper.seed,
    };

    let (x_train, t_train) = regression_pairs(&model, dataset, &train_idx);
    let (x_val, t_val) = regression_pairs(&model, dataset, &val_idx);
    model.linear = least_squares(&x_train, &t_train)?;
    let r_train = &t_train - apply_linear(&model.linear, &x_train);
    let r_val = &t_val - apply_linear(&model.linear, &x_val);

    let mse = |m: &PcaRomModel, x: &DMatrix<f64>, r: &DMatrix<f64>| residual_loss(m, x, r, r.ncols(), None);
    let mut curve = TrainingCurve {
        train: vec![mse(&model, &x_train, &r_train)],
        validation: vec![mse(&model, &x_val, &r_val)],
        best_epoch: 0,
    };
    let mut best = (curve.validation[0], model.params.clone());
    let mut opt = Adam::new(model.params.len(), hyper.step_size);
    let mut order: Vec<usize> = (0..x_train.ncols()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut stream_rng(derive_seed(hyper.seed, &[epoch as u64]), Stream::Shuffle));
        let mut epoch_loss = 0.0;
        for cols in order.chunks(hyper.batch_size) {
            let xb = x_train.select_columns(cols.iter());
            let rb = r_train.select_columns(cols.iter());
            let n = cols.len();
            let parts = map_range(exec, n.div_ceil(GRAD_CHUNK), |c| {
                let sel: Vec<usize> = (c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n)).collect();
                let mut g = vec![0.0; model.params.len()];
                let l = residual_loss(
                    &model,
                    &xb.select_columns(sel.iter()),
                    &rb.select_columns(sel.iter()),
                    n,
                    Some(&mut g),
                );
                (l, g)
            });
            let mut grad = vec![0.0; model.params.len()];
            let mut loss = 0.0;
            for (l, g) in parts {
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += loss * n as f64;
            opt.step(&mut model.params, &grad);
        }
        let v = mse(&model, &x_val, &r_val);
        if !v.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        curve.train.push(epoch_loss / x_train.ncols() as f64);
        curve.validation.push(v);
        if v < best.0 {
            best = (v, model.params.clone());
            curve.best_epoch = epoch;
        }
    }
    model.params = best.1;
    model.curve = curve;
    Ok(model)
}

/// Regressor inputs (`[z; bc]`) and normalised target coefficients.
fn regression_pairs(model: &PcaRomModel, dataset: &Dataset, indices: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = model.arch.latent_dim;
    let p = k + model.arch.n_bc();
    let mut x = DMatrix::zeros(p, indices.len());
    let mut t = DMatrix::zeros(3 * k, indices.len());
    for (c, &i) in indices.iter().enumerate() {
        let rec = &dataset.records[i];
        let z = model.latent_of(rec.bathymetry.bed.as_slice());
        x.set_column(c, &model.regressor_input(&z, &rec.bc));
        let fields = [rec.flow.u.as_slice(), rec.flow.v.as_slice(), rec.bathymetry.bed.as_slice()];
        for (b, (basis, field)) in model.bases().iter().zip(fields).enumerate() {
            let coeff = basis.project(field) / model.coeff_scale[b];
            t.view_mut((b * k, c), (k, 1)).copy_from(&coeff);
        }
    }
    (x, t)
}

fn apply_linear(a: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let p = x.nrows();
    let mut y = a.columns(0, p) * x;
    for mut col in y.column_iter_mut() {
        col += a.column(p);
    }
    y
}

/// Affine least squares `t ~ A [x; 1]` with a vanishing ridge for stability.
fn least_squares(x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, n) = x.shape();
    let mut xa = DMatrix::from_element(p + 1, n, 1.0);
    xa.rows_mut(0, p).copy_from(x);
    let mut gram = &xa * xa.transpose();
    let ridge = 1e-10 * gram.trace().max(1.0) / (p + 1) as f64;
    for i in 0..=p {
        gram[(i, i)] += ridge;
    }
    let chol = gram.cholesky().ok_or(Error::Factorization("regressor normal equations".into()))?;
    let rhs = &xa * t.transpose();
    Ok(chol.solve(&rhs).transpose())
}

/// Mean over `norm` columns of the squared residual error per coefficient.
fn residual_loss(model: &PcaRomModel, x: &DMatrix<f64>, r: &DMatrix<f64>, norm: usize, grad: Option<&mut [f64]>) -> f64 {
    let d = r.nrows() as f64 * norm as f64;
    let tape = model.residual.forward(&model.params, x);
    let diff = &tape.output - r;
    let loss = diff.norm_squared() / d;
    if let Some(grad) = grad {
        model.residual.backward(&model.params, &tape, diff * (2.0 / d), grad);
    }
    loss
}

impl LatentRom for PcaRomModel {
    fn geometry(&self) -> ChannelGeometry {
        self.geometry
    }

    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn kind(&self) -> &'static str {
        "pca"
    }

    fn decode(&self, z: &[f64], bc: &BoundaryConditions) -> Result<DecodedFields> {
        check_latent(z, self.arch.latent_dim)?;
        let k = self.arch.latent_dim;
        let (coeff, _) = self.coefficients(z, bc, false);
        let g = self.geometry;
        let mut out = Vec::with_capacity(3);
        for (b, basis) in self.bases().iter().enumerate() {
            let c = coeff.rows(b * k, k) * self.coeff_scale[b];
            out.push(Grid::from_vec(g.n_across, g.n_along, basis.expand(&c).as_slice().to_vec())?);
        }
        let s = out.pop().unwrap();
        let v = out.pop().unwrap();
        let u = out.pop().unwrap();
        Ok(DecodedFields { u, v, s })
    }

    fn velocity_jacobian(&self, z: &[f64], bc: &BoundaryConditions, mask: &ObservationMask) -> Result<DMatrix<f64>> {
        Ok(self.predict_with_jacobian(z, bc, mask)?.1)
    }

    fn predict_with_jacobian(
        &self,
        z: &[f64],
        bc: &BoundaryConditions,
        mask: &ObservationMask,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        check_latent(z, self.arch.latent_dim)?;
        mask.check_bounds(&self.geometry)?;
        let k = self.arch.latent_dim;
        let m = self.geometry.n_nodes();
        let (coeff, jc) = self.coefficients(z, bc, true);
        let rows = mask.stacked_rows(&self.geometry);
        let mut values = Vec::with_capacity(rows.len());
        let mut jac = DMatrix::zeros(rows.len(), k);
        for (r, &row) in rows.iter().enumerate() {
            let (b, node) = if row < m { (0, row) } else { (1, row - m) };
            let basis = self.bases()[b];
            let comp = basis.components.row(node) * self.coeff_scale[b];
            values.push(basis.mean[node] + (&comp * coeff.rows(b * k, k))[0]);
            jac.set_row(r, &(&comp * jc.rows(b * k, k)));
        }
        Ok((values, jac))
    }

    fn bathymetry_jacobian(&self, z: &[f64], bc: &BoundaryConditions) -> Result<DMatrix<f64>> {
        check_latent(z, self.arch.latent_dim)?;
        let k = self.arch.latent_dim;
        let (_, jc) = self.coefficients(z, bc, true);
        Ok(&self.s_basis.components * jc.rows(2 * k, k) * self.coeff_scale[2])
    }

    fn encode_latent(&self, bathy: &BathymetryField, _bc: &BoundaryConditions) -> Result<Vec<f64>> {
        if bathy.geometry != self.geometry {
            return Err(mismatch("bathymetry geometry differs from the model"));
        }
        Ok(self.latent_of(bathy.bed.as_slice()))
    }
}
