//! MAP estimation of the latent vector from velocity observations by
//! Gauss-Newton iteration with backtracking, plus the linearised posterior.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::container::{Container, NamedArray};
use crate::error::{invalid, mismatch, Error, Result};
use crate::fields::{BathymetryField, BoundaryConditions, ChannelGeometry, Grid, ObservationMask, ObservationSet};
use crate::io::{geometry_arrays, meta_arrays, read_geometry, read_meta};
use crate::par::{map_range, try_map_range, Execution};
use crate::rng::{standard_normals, Stream};
use crate::rom::LatentRom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

impl JacobianMode {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "analytic" => Some(Self::Analytic),
            "fd" | "finite-difference" => Some(Self::FiniteDifference),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOptions {
    pub shrink: f64,
    pub max_backtracks: usize,
    pub sufficient_decrease: f64,
}

impl Default for LineSearchOptions {
    fn default() -> Self {
        Self { shrink: 0.5, max_backtracks: 20, sufficient_decrease: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionOptions {
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this fraction of its initial value.
    pub grad_tol: f64,
    pub alpha_init: f64,
    pub line_search: LineSearchOptions,
    pub jacobian_mode: JacobianMode,
    pub fd_delta: f64,
    /// Latent prior covariance; `None` is the identity.
    pub sigma_prior: Option<DMatrix<f64>>,
    /// Posterior draws used for the bathymetry standard deviation map.
    pub uq_samples: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            grad_tol: 1e-6,
            alpha_init: 1.0,
            line_search: LineSearchOptions::default(),
            jacobian_mode: JacobianMode::Analytic,
            fd_delta: 1e-4,
            sigma_prior: None,
            uq_samples: 500,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl InversionOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        let ls = &self.line_search;
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(invalid(format!("line-search shrink must lie in (0, 1), got {}", ls.shrink)));
        }
        if !(self.fd_delta > 0.0) {
            return Err(invalid(format!("fd_delta must be positive, got {}", self.fd_delta)));
        }
        if !(self.alpha_init > 0.0) || !(self.grad_tol >= 0.0) || !(ls.sufficient_decrease >= 0.0) {
            return Err(invalid("alpha_init must be positive and tolerances non-negative"));
        }
        Ok(())
    }
}

/// Latent prior covariance with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPrior {
    pub sigma: DMatrix<f64>,
    pub sigma_inv: DMatrix<f64>,
}

impl LatentPrior {
    pub fn identity(k: usize) -> Self {
        Self { sigma: DMatrix::identity(k, k), sigma_inv: DMatrix::identity(k, k) }
    }

    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(mismatch("prior covariance must be square"));
        }
        let sigma_inv = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Factorization("prior covariance is not positive definite".into()))?
            .inverse();
        Ok(Self { sigma, sigma_inv })
    }

    pub fn from_options(opts: &InversionOptions, k: usize) -> Result<Self> {
        match &opts.sigma_prior {
            None => Ok(Self::identity(k)),
            Some(s) if s.shape() == (k, k) => Self::new(s.clone()),
            Some(s) => Err(mismatch(format!("prior covariance is {:?}, latent dimension is {k}", s.shape()))),
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

fn check_obs(model: &dyn LatentRom, z: &[f64], obs: &ObservationSet) -> Result<()> {
    if z.len() != model.latent_dim() {
        return Err(mismatch(format!("latent vector has {} entries, model expects {}", z.len(), model.latent_dim())));
    }
    obs.mask.check_bounds(&model.geometry())?;
    if obs.values.len() != obs.mask.n_obs() || obs.noise_std.len() != obs.values.len() {
        return Err(mismatch("observation vector does not match its mask"));
    }
    Ok(())
}

fn r_inv(obs: &ObservationSet) -> Vec<f64> {
    obs.noise_std.iter().map(|s| 1.0 / (s * s)).collect()
}

/// `(y - y_hat)' R^-1 (y - y_hat) + z' Sigma^-1 z`.
pub fn objective_value(y_hat: &[f64], z: &[f64], obs: &ObservationSet, prior: &LatentPrior) -> f64 {
    let data: f64 = obs
        .values
        .iter()
        .zip(y_hat)
        .zip(&obs.noise_std)
        .map(|((y, p), s)| ((y - p) / s).powi(2))
        .sum();
    let zv = DVector::from_column_slice(z);
    data + zv.dot(&(&prior.sigma_inv * &zv))
}

pub fn map_objective(model: &dyn LatentRom, z: &[f64], obs: &ObservationSet, prior: &LatentPrior) -> Result<f64> {
    check_obs(model, z, obs)?;
    if prior.dim() != z.len() {
        return Err(mismatch("prior dimension differs from the latent dimension"));
    }
    let y_hat = model.predict_observations(z, &obs.bc, &obs.mask)?;
    Ok(objective_value(&y_hat, z, obs, prior))
}

/// Gradient of the MAP objective under the Gauss-Newton linearisation.
pub fn objective_gradient(
    y_hat: &[f64],
    jac: &DMatrix<f64>,
    z: &[f64],
    obs: &ObservationSet,
    prior: &LatentPrior,
) -> DVector<f64> {
    let w = DVector::from_iterator(
        obs.values.len(),
        obs.values.iter().zip(y_hat).zip(&obs.noise_std).map(|((y, p), s)| (y - p) / (s * s)),
    );
    let zv = DVector::from_column_slice(z);
    (&prior.sigma_inv * zv - jac.tr_mul(&w)) * 2.0
}

/// Algebraic form used to solve the Gauss-Newton system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepForm {
    /// Factorises the `n x n` matrix `J Sigma J' + R`.
    DataSpace,
    /// Factorises the `k x k` matrix `Sigma^-1 + J' R^-1 J`.
    Information,
    /// Whichever of the two systems is smaller.
    Auto,
}

/// Full Gauss-Newton target
/// `Sigma J' (J Sigma J' + R)^-1 (y - y_hat + J z)`.
pub fn gauss_newton_target(
    z: &[f64],
    y_hat: &[f64],
    jac: &DMatrix<f64>,
    obs: &ObservationSet,
    prior: &LatentPrior,
    form: StepForm,
) -> Result<DVector<f64>> {
    let (n, k) = jac.shape();
    if n != obs.values.len() || y_hat.len() != n || k != z.len() || prior.dim() != k {
        return Err(mismatch("Gauss-Newton inputs have inconsistent shapes"));
    }
    let zv = DVector::from_column_slice(z);
    let rhs = DVector::from_iterator(n, obs.values.iter().zip(y_hat).map(|(y, p)| y - p)) + jac * &zv;
    let form = match form {
        StepForm::Auto if n <= k => StepForm::DataSpace,
        StepForm::Auto => StepForm::Information,
        f => f,
    };
    match form {
        StepForm::DataSpace => {
            let sjt = &prior.sigma * jac.transpose();
            let mut a = jac * &sjt;
            for (i, s) in obs.noise_std.iter().enumerate() {
                a[(i, i)] += s * s;
            }
            let chol = a
                .cholesky()
                .ok_or_else(|| Error::Factorization("J Sigma J' + R is not positive definite".into()))?;
            Ok(sjt * chol.solve(&rhs))
        }
        _ => {
            let ri = r_inv(obs);
            let jt_ri = DMatrix::from_fn(k, n, |r, c| jac[(c, r)] * ri[c]);
            let h = &prior.sigma_inv + &jt_ri * jac;
            let chol = h
                .cholesky()
                .ok_or_else(|| Error::Factorization("information matrix is not positive definite".into()))?;
            Ok(chol.solve(&(jt_ri * rhs)))
        }
    }
}

/// `z_next = (1 - alpha) z + alpha * target`.
pub fn gauss_newton_step(
    z: &[f64],
    y_hat: &[f64],
    jac: &DMatrix<f64>,
    obs: &ObservationSet,
    prior: &LatentPrior,
    alpha: f64,
    form: StepForm,
) -> Result<Vec<f64>> {
    let target = gauss_newton_target(z, y_hat, jac, obs, prior, form)?;
    Ok(z.iter().zip(target.iter()).map(|(a, t)| (1.0 - alpha) * a + alpha * t).collect())
}

/// Forward-difference Jacobian of the masked velocity prediction, using
/// exactly `k + 1` decoder evaluations. Returns the prediction at `z` too.
pub fn jacobian_fd(
    model: &dyn LatentRom,
    z: &[f64],
    obs: &ObservationSet,
    delta: f64,
    exec: Execution,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_obs(model, z, obs)?;
    if !(delta > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let k = z.len();
    let cols = try_map_range(exec, k + 1, |i| {
        let mut zp = z.to_vec();
        if i > 0 {
            zp[i - 1] += delta;
        }
        let y = model.predict_observations(&zp, &obs.bc, &obs.mask)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder output".into()));
        }
        Ok(y)
    })?;
    let y0 = &cols[0];
    let jac = DMatrix::from_fn(y0.len(), k, |r, c| (cols[c + 1][r] - y0[r]) / delta);
    Ok((y0.clone(), jac))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub value: f64,
    pub stalled: bool,
    pub evaluations: usize,
}

/// Backtracking on `phi(alpha)`: accepts the first trial
/// `alpha_init * shrink^t` with `phi(alpha) <= phi0 - c * alpha * |slope|`.
/// Without an acceptable trial, returns the smallest trial and `stalled`.
pub fn line_search(
    mut phi: impl FnMut(f64) -> Result<f64>,
    phi0: f64,
    slope: f64,
    alpha_init: f64,
    opts: &LineSearchOptions,
) -> Result<LineSearchOutcome> {
    let mut alpha = alpha_init;
    let mut value = f64::NAN;
    for t in 0..=opts.max_backtracks {
        if t > 0 {
            alpha *= opts.shrink;
        }
        value = phi(alpha)?;
        if value.is_finite() && value <= phi0 - opts.sufficient_decrease * alpha * slope.abs() && value <= phi0 {
            return Ok(LineSearchOutcome { alpha, value, stalled: false, evaluations: t + 1 });
        }
    }
    Ok(LineSearchOutcome { alpha, value, stalled: true, evaluations: opts.max_backtracks + 1 })
}

/// Information form `(Sigma^-1 + J' R^-1 J)^-1`, symmetrised.
pub fn posterior_covariance(jac: &DMatrix<f64>, prior: &LatentPrior, noise_std: &[f64]) -> Result<DMatrix<f64>> {
    let (n, k) = jac.shape();
    if noise_std.len() != n || prior.dim() != k {
        return Err(mismatch("posterior covariance inputs have inconsistent shapes"));
    }
    let jt_ri = DMatrix::from_fn(k, n, |r, c| jac[(c, r)] / (noise_std[c] * noise_std[c]));
    let h = &prior.sigma_inv + jt_ri * jac;
    let q = h
        .cholesky()
        .ok_or_else(|| Error::Factorization("information matrix is singular".into()))?
        .inverse();
    Ok((&q + q.transpose()) * 0.5)
}

/// Data-space form `Sigma - Sigma J' (J Sigma J' + R)^-1 J Sigma`.
pub fn posterior_covariance_data_space(
    jac: &DMatrix<f64>,
    prior: &LatentPrior,
    noise_std: &[f64],
) -> Result<DMatrix<f64>> {
    let n = jac.nrows();
    if noise_std.len() != n || prior.dim() != jac.ncols() {
        return Err(mismatch("posterior covariance inputs have inconsistent shapes"));
    }
    let sjt = &prior.sigma * jac.transpose();
    let mut a = jac * &sjt;
    for (i, s) in noise_std.iter().enumerate() {
        a[(i, i)] += s * s;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Factorization("J Sigma J' + R is not positive definite".into()))?;
    let q = &prior.sigma - &sjt * chol.solve(&sjt.transpose());
    Ok((&q + q.transpose()) * 0.5)
}

/// Lower factor `L` with `L L' = q`, retrying once with a `1e-10` relative jitter.
fn covariance_factor(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = q.clone().cholesky() {
        return Ok(c.l());
    }
    let scale = q.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut jittered = q.clone();
    for i in 0..q.nrows() {
        jittered[(i, i)] += 1e-10 * scale;
    }
    jittered
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Factorization("posterior covariance is not positive semi-definite".into()))
}

/// Draws per decoder batch in the uncertainty propagation.
const UQ_BATCH: usize = 128;

/// Pointwise standard deviation of the decoded bathymetry over
/// `z ~ N(z_map, q_post)`.
pub fn bathymetry_uncertainty(
    model: &dyn LatentRom,
    z_map: &[f64],
    q_post: &DMatrix<f64>,
    bc: &BoundaryConditions,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Grid> {
    let k = model.latent_dim();
    let g = model.geometry();
    let m = g.n_nodes();
    if z_map.len() != k || q_post.shape() != (k, k) {
        return Err(mismatch("posterior shapes do not match the model"));
    }
    if n_samples < 2 || q_post.iter().all(|&x| x == 0.0) {
        return Ok(Grid::zeros(g.n_across, g.n_along));
    }
    let l = covariance_factor(q_post)?;
    let xi = DMatrix::from_vec(k, n_samples, standard_normals(seed, Stream::Posterior, k * n_samples));
    let mut zs = &l * xi;
    for mut col in zs.column_iter_mut() {
        col += DVector::from_column_slice(z_map);
    }
    // shifted sums for numerical stability
    let shift = model.decode(z_map, bc)?.s;
    let n_batches = n_samples.div_ceil(UQ_BATCH);
    let parts = try_map_range(exec, n_batches, |b| {
        let c0 = b * UQ_BATCH;
        let cols = (n_samples - c0).min(UQ_BATCH);
        let s = model.decode_bathymetry_batch(&zs.columns(c0, cols).into_owned(), bc)?;
        let mut sum = vec![0.0; m];
        let mut sq = vec![0.0; m];
        for col in s.column_iter() {
            for (r, v) in col.iter().enumerate() {
                let d = v - shift.as_slice()[r];
                sum[r] += d;
                sq[r] += d * d;
            }
        }
        Ok::<_, Error>((sum, sq))
    })?;
    let mut sum = vec![0.0; m];
    let mut sq = vec![0.0; m];
    for (s, q) in parts {
        sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        sq.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
    }
    let n = n_samples as f64;
    let std = sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| ((q - s * s / n) / (n - 1.0)).max(0.0).sqrt())
        .collect();
    Grid::from_vec(g.n_across, g.n_along, std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub z_map: Vec<f64>,
    pub q_post: DMatrix<f64>,
    pub bathymetry_map: BathymetryField,
    pub bathymetry_std: Grid,
    /// Objective at the start and after every accepted iteration.
    pub objective_trace: Vec<f64>,
    pub gradient_trace: Vec<f64>,
    pub converged: bool,
    pub stalled: bool,
    pub iterations_used: usize,
}

fn predict(
    model: &dyn LatentRom,
    z: &[f64],
    obs: &ObservationSet,
    opts: &InversionOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    match opts.jacobian_mode {
        JacobianMode::Analytic => model.predict_with_jacobian(z, &obs.bc, &obs.mask),
        JacobianMode::FiniteDifference => jacobian_fd(model, z, obs, opts.fd_delta, opts.execution),
    }
}

/// Gauss-Newton iteration from `z = 0`, then the linearised posterior at the
/// final iterate.
pub fn invert(model: &dyn LatentRom, obs: &ObservationSet, opts: &InversionOptions) -> Result<PosteriorEstimate> {
    opts.validate()?;
    let k = model.latent_dim();
    let prior = LatentPrior::from_options(opts, k)?;
    let mut z = vec![0.0; k];
    check_obs(model, &z, obs)?;

    let (mut y_hat, mut jac) = predict(model, &z, obs, opts)?;
    let mut value = objective_value(&y_hat, &z, obs, &prior);
    let mut grad = objective_gradient(&y_hat, &jac, &z, obs, &prior);
    let g0 = grad.norm();
    let tol = opts.grad_tol * g0;
    let mut objective_trace = vec![value];
    let mut gradient_trace = vec![g0];
    let mut converged = g0 == 0.0;
    let mut stalled = false;
    let mut iterations_used = 0;

    while !converged && iterations_used < opts.max_iterations {
        let target = gauss_newton_target(&z, &y_hat, &jac, obs, &prior, StepForm::Auto)?;
        let dir: Vec<f64> = target.iter().zip(&z).map(|(t, a)| t - a).collect();
        let slope = grad.dot(&DVector::from_column_slice(&dir));
        let trial = |alpha: f64| -> Vec<f64> { z.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect() };
        let ls = line_search(
            |alpha| map_objective(model, &trial(alpha), obs, &prior),
            value,
            slope,
            opts.alpha_init,
            &opts.line_search,
        )?;
        if ls.stalled {
            stalled = true;
            break;
        }
        z = trial(ls.alpha);
        value = ls.value;
        (y_hat, jac) = predict(model, &z, obs, opts)?;
        grad = objective_gradient(&y_hat, &jac, &z, obs, &prior);
        iterations_used += 1;
        objective_trace.push(value);
        gradient_trace.push(grad.norm());
        converged = grad.norm() <= tol;
    }

    let q_post = posterior_covariance(&jac, &prior, &obs.noise_std)?;
    let decoded = model.decode(&z, &obs.bc)?;
    let bathymetry_std =
        bathymetry_uncertainty(model, &z, &q_post, &obs.bc, opts.uq_samples, opts.seed, opts.execution)?;
    Ok(PosteriorEstimate {
        bathymetry_map: BathymetryField::new(model.geometry(), decoded.s)?,
        z_map: z,
        q_post,
        bathymetry_std,
        objective_trace,
        gradient_trace,
        converged,
        stalled,
        iterations_used,
    })
}

/// Inverts many observation sets independently.
pub fn invert_many(
    model: &dyn LatentRom,
    sets: &[ObservationSet],
    opts: &InversionOptions,
) -> Result<Vec<PosteriorEstimate>> {
    let inner = InversionOptions { execution: Execution::Sequential, ..opts.clone() };
    let results = map_range(opts.execution, sets.len(), |i| invert(model, &sets[i], &inner));
    results.into_iter().collect()
}

/// Keeps only the mask points listed in `keep` (indices into the mask).
pub fn restrict_observations(obs: &ObservationSet, keep: &[usize]) -> Result<ObservationSet> {
    let pts = obs.mask.indices();
    let n = pts.len();
    if keep.iter().any(|&i| i >= n) {
        return Err(invalid("kept observation index is out of range"));
    }
    let mut mask = ObservationMask::from_indices_unchecked(keep.iter().map(|&i| pts[i]).collect());
    mask.includes_u = obs.mask.includes_u;
    mask.includes_v = obs.mask.includes_v;
    let mut rows = Vec::new();
    let mut block = 0;
    for include in [obs.mask.includes_u, obs.mask.includes_v] {
        if include {
            rows.extend(keep.iter().map(|&i| block + i));
            block += n;
        }
    }
    ObservationSet::new(
        mask,
        rows.iter().map(|&r| obs.values[r]).collect(),
        rows.iter().map(|&r| obs.noise_std[r]).collect(),
        obs.bc,
    )
}

pub fn observation_container(obs: &ObservationSet, geometry: &ChannelGeometry) -> Result<Container> {
    let mut c = Container::new();
    for a in geometry_arrays(geometry)? {
        c.push(a);
    }
    let pts = obs.mask.indices();
    let flat: Vec<u32> = pts.iter().flat_map(|&(i, j)| [i as u32, j as u32]).collect();
    c.push(NamedArray::u32("obs/indices", &[pts.len(), 2], flat)?);
    c.push(NamedArray::u32(
        "obs/components",
        &[2],
        vec![obs.mask.includes_u as u32, obs.mask.includes_v as u32],
    )?);
    c.push(NamedArray::f64("obs/values", &[obs.values.len()], obs.values.clone())?);
    c.push(NamedArray::f64("obs/noise_std", &[obs.noise_std.len()], obs.noise_std.clone())?);
    c.push(NamedArray::f64("obs/bc", &[2], obs.bc.as_array().to_vec())?);
    Ok(c)
}

pub fn observations_from_container(c: &Container) -> Result<(ChannelGeometry, ObservationSet)> {
    let geometry = read_geometry(c)?;
    let idx = c.get("obs/indices")?;
    if idx.dims.len() != 2 || idx.dims[1] != 2 {
        return Err(Error::DimensionMismatch("obs/indices must be [n, 2]".into()));
    }
    let flat = idx.to_u32()?;
    let pts = flat.chunks(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
    let comps = c.get("obs/components")?.to_u32()?;
    if comps.len() != 2 {
        return Err(Error::DimensionMismatch("obs/components must hold 2 flags".into()));
    }
    let mask = ObservationMask::new(&geometry, pts, comps[0] != 0, comps[1] != 0)?;
    let n = mask.n_obs();
    let bc = c.f64_with_dims("obs/bc", &[2])?;
    let obs = ObservationSet::new(
        mask,
        c.f64_with_dims("obs/values", &[n])?,
        c.f64_with_dims("obs/noise_std", &[n])?,
        BoundaryConditions::new(bc[0], bc[1])?,
    )?;
    Ok((geometry, obs))
}

pub fn save_observations(obs: &ObservationSet, geometry: &ChannelGeometry, path: impl AsRef<Path>) -> Result<()> {
    observation_container(obs, geometry)?.save(path)
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<(ChannelGeometry, ObservationSet)> {
    observations_from_container(&Container::load(path)?)
}

pub fn estimate_container(est: &PosteriorEstimate, metadata: &[(String, String)]) -> Result<Container> {
    let g = est.bathymetry_map.geometry;
    let k = est.z_map.len();
    let shape = [g.n_across, g.n_along];
    let mut c = Container::new();
    for a in geometry_arrays(&g)? {
        c.push(a);
    }
    c.push(NamedArray::f64("z_map", &[k], est.z_map.clone())?);
    c.push(NamedArray::f64("q_post", &[k, k], est.q_post.transpose().as_slice().to_vec())?);
    c.push(NamedArray::f64("bathymetry_map", &shape, est.bathymetry_map.bed.as_slice().to_vec())?);
    c.push(NamedArray::f64("bathymetry_std", &shape, est.bathymetry_std.as_slice().to_vec())?);
    c.push(NamedArray::f64("trace/objective", &[est.objective_trace.len()], est.objective_trace.clone())?);
    c.push(NamedArray::f64("trace/gradient", &[est.gradient_trace.len()], est.gradient_trace.clone())?);
    c.push(NamedArray::u32(
        "status",
        &[3],
        vec![est.converged as u32, est.stalled as u32, est.iterations_used as u32],
    )?);
    for a in meta_arrays(metadata)? {
        c.push(a);
    }
    Ok(c)
}

pub fn estimate_from_container(c: &Container) -> Result<(PosteriorEstimate, Vec<(String, String)>)> {
    let g = read_geometry(c)?;
    let z_map = c.get("z_map")?.to_f64();
    let k = z_map.len();
    let q = c.f64_with_dims("q_post", &[k, k])?;
    let shape = [g.n_across, g.n_along];
    let grid = |name: &str| -> Result<Grid> { Grid::from_vec(g.n_across, g.n_along, c.f64_with_dims(name, &shape)?) };
    let status = c.get("status")?.to_u32()?;
    if status.len() != 3 {
        return Err(Error::Malformed("status must hold 3 values".into()));
    }
    let est = PosteriorEstimate {
        q_post: DMatrix::from_row_slice(k, k, &q),
        bathymetry_map: BathymetryField::new(g, grid("bathymetry_map")?)?,
        bathymetry_std: grid("bathymetry_std")?,
        objective_trace: c.get("trace/objective")?.to_f64(),
        gradient_trace: c.get("trace/gradient")?.to_f64(),
        converged: status[0] != 0,
        stalled: status[1] != 0,
        iterations_used: status[2] as usize,
        z_map,
    };
    Ok((est, read_meta(c)?))
}

pub fn save_estimate(est: &PosteriorEstimate, metadata: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    estimate_container(est, metadata)?.save(path)
}

pub fn load_estimate(path: impl AsRef<Path>) -> Result<(PosteriorEstimate, Vec<(String, String)>)> {
    estimate_from_container(&Container::load(path)?)
}
