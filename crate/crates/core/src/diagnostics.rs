//! Comparative studies: RMSE tables, latent-dimension and sparsity sweeps,
//! loss-term Hessian spectra, Mahalanobis distribution-shift reports and
//! heatmap export.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Error, Result};
use crate::fields::{equispaced_mask, grid_rmse, Dataset, Grid, ObservationMask, Record};
use crate::forward::observe;
use crate::inversion::{invert, InversionOptions};
use crate::par::{map_range, Execution};
use crate::rng::derive_seed;
use crate::rom::pca::fit_pca;
use crate::rom::sve::{train_sve, SveArchitecture};
use crate::rom::{LatentRom, TrainHyper};

/// Mean and truncated eigen-factorisation of a sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub mean: DVector<f64>,
    /// Descending, non-negative.
    pub eigenvalues: DVector<f64>,
    /// `m x r`, orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    /// Variance added to every direction, including those outside the
    /// retained eigenvectors.
    pub nugget: f64,
}

impl TrainStats {
    pub const DEFAULT_RANK: usize = 100;
    pub const DEFAULT_NUGGET: f64 = 1e-6;

    pub fn from_parts(mean: DVector<f64>, eigenvalues: DVector<f64>, eigenvectors: DMatrix<f64>, nugget: f64) -> Result<Self> {
        let m = mean.len();
        if eigenvectors.shape() != (m, eigenvalues.len()) {
            return Err(mismatch("eigenvectors do not match the mean and eigenvalues"));
        }
        if eigenvalues.iter().any(|&l| l < 0.0) || nugget < 0.0 {
            return Err(invalid("eigenvalues and nugget must be non-negative"));
        }
        Ok(Self { mean, eigenvalues, eigenvectors, nugget })
    }

    /// Fits on the columns of `samples` (`m x n`), keeping at most `rank`
    /// eigenpairs. The nugget is relative to the leading eigenvalue.
    pub fn fit(samples: &DMatrix<f64>, rank: usize, nugget_rel: f64) -> Result<Self> {
        let (m, n) = samples.shape();
        if n < 2 {
            return Err(invalid("need at least two samples for covariance statistics"));
        }
        let r = rank.min(m).min(n).max(1);
        let pca = fit_pca(&samples.transpose(), r)?;
        let nugget = nugget_rel * pca.explained_variance[0];
        Self::from_parts(pca.mean, pca.explained_variance, pca.components, nugget)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn is_complete(&self) -> bool {
        self.eigenvalues.len() == self.dim()
    }
}

/// `sqrt((x - mu)' Sigma^-1 (x - mu) / m)`.
pub fn mahalanobis(x: &[f64], stats: &TrainStats) -> Result<f64> {
    let m = stats.dim();
    if x.len() != m {
        return Err(mismatch(format!("sample has {} entries, statistics expect {m}", x.len())));
    }
    let d = DVector::from_column_slice(x) - &stats.mean;
    let c = stats.eigenvectors.tr_mul(&d);
    let mut q = 0.0;
    for (ci, li) in c.iter().zip(stats.eigenvalues.iter()) {
        let v = li + stats.nugget;
        if v <= 0.0 {
            return Err(Error::Factorization("zero variance direction without a nugget".into()));
        }
        q += ci * ci / v;
    }
    if !stats.is_complete() {
        let resid = (d.norm_squared() - c.norm_squared()).max(0.0);
        if resid > 0.0 {
            if stats.nugget <= 0.0 {
                return Err(Error::Factorization("sample leaves the retained subspace and there is no nugget".into()));
            }
            q += resid / stats.nugget;
        }
    }
    Ok((q / m as f64).sqrt())
}

/// Singular values (descending) of the central-difference Hessian of `loss` at `z`.
pub fn hessian_spectrum(
    loss: impl Fn(&[f64]) -> Result<f64> + Sync,
    z: &[f64],
    h: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(invalid("Hessian step must be positive"));
    }
    let k = z.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let eval = |i: usize, j: usize, si: f64, sj: f64| {
        let mut p = z.to_vec();
        p[i] += si * h;
        p[j] += sj * h;
        loss(&p)
    };
    let entries = map_range(exec, pairs.len(), |p| -> Result<f64> {
        let (i, j) = pairs[p];
        let v = (eval(i, j, 1.0, 1.0)? - eval(i, j, 1.0, -1.0)? - eval(i, j, -1.0, 1.0)? + eval(i, j, -1.0, -1.0)?)
            / (4.0 * h * h);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss in Hessian stencil".into()))
        }
    });
    let mut hess = DMatrix::zeros(k, k);
    for ((i, j), v) in pairs.into_iter().zip(entries) {
        let v = v?;
        hess[(i, j)] = v;
        hess[(j, i)] = v;
    }
    let mut sv: Vec<f64> = hess.symmetric_eigenvalues().iter().map(|l| l.abs()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// First index whose value drops below `fraction` of the leading value
/// (the length when none does).
pub fn decay_index(spectrum: &[f64], fraction: f64) -> usize {
    let top = spectrum.first().copied().unwrap_or(0.0);
    spectrum.iter().position(|&s| s < fraction * top).unwrap_or(spectrum.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    U,
    V,
    S,
}

impl LossTerm {
    pub const ALL: [LossTerm; 3] = [LossTerm::U, LossTerm::V, LossTerm::S];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::U => "u",
            LossTerm::V => "v",
            LossTerm::S => "s",
        }
    }
}

/// Mean squared reconstruction error of one decoder head against a record.
pub fn loss_term_value(model: &dyn LatentRom, term: LossTerm, z: &[f64], target: &Record) -> Result<f64> {
    let d = model.decode(z, &target.bc)?;
    let (a, b) = match term {
        LossTerm::U => (d.u, &target.flow.u),
        LossTerm::V => (d.v, &target.flow.v),
        LossTerm::S => (d.s, &target.bathymetry.bed),
    };
    Ok(grid_rmse(&a, b)?.powi(2))
}

/// Hessian spectrum of a decoder head's reconstruction loss around `z`.
pub fn loss_term_spectrum(
    model: &dyn LatentRom,
    term: LossTerm,
    z: &[f64],
    target: &Record,
    h: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    hessian_spectrum(|p| loss_term_value(model, term, p, target), z, h, exec)
}

/// Summary of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub samples: Vec<f64>,
}

impl SweepCell {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len().max(1) as f64
    }

    pub fn std(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let mu = self.mean();
        (self.samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis_name: String,
    pub axis: Vec<f64>,
    pub cells: Vec<SweepCell>,
    /// Additional per-axis scalar columns (e.g. forward-head RMSEs).
    pub extra: Vec<(String, Vec<f64>)>,
    pub metadata: Vec<(String, String)>,
}

impl SweepReport {
    pub fn means(&self) -> Vec<f64> {
        self.cells.iter().map(SweepCell::mean).collect()
    }

    /// One row per (axis value, sample).
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},sample,rmse\n", self.axis_name);
        for (a, cell) in self.axis.iter().zip(&self.cells) {
            for (i, v) in cell.samples.iter().enumerate() {
                let _ = writeln!(s, "{a},{i},{v}");
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{:>12} {:>12} {:>12} {:>6}", self.axis_name, "mean_rmse", "std_rmse", "n");
        for (name, _) in &self.extra {
            let _ = write!(s, " {name:>12}");
        }
        s.push('\n');
        for (i, (a, cell)) in self.axis.iter().zip(&self.cells).enumerate() {
            let _ = write!(s, "{a:>12} {:>12.6} {:>12.6} {:>6}", cell.mean(), cell.std(), cell.samples.len());
            for (_, col) in &self.extra {
                let _ = write!(s, " {:>12.6}", col[i]);
            }
            s.push('\n');
        }
        s
    }
}

/// How observations are synthesised for a batch of inversions.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPlan {
    /// Equispaced points; `None` observes every node.
    pub points: Option<usize>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ObservationPlan {
    fn default() -> Self {
        Self { points: None, noise: 0.05, seed: 0 }
    }
}

impl ObservationPlan {
    pub fn mask(&self, dataset: &Dataset) -> Result<ObservationMask> {
        match self.points {
            None => Ok(ObservationMask::full(&dataset.geometry)),
            Some(n) => equispaced_mask(&dataset.geometry, n),
        }
    }
}

/// Bathymetry RMSE of the MAP estimate for each listed record.
pub fn inversion_rmses(
    model: &dyn LatentRom,
    dataset: &Dataset,
    indices: &[usize],
    plan: &ObservationPlan,
    opts: &InversionOptions,
    exec: Execution,
) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(invalid("no records to invert"));
    }
    if dataset.geometry != model.geometry() {
        return Err(mismatch("dataset geometry differs from the model"));
    }
    let mask = plan.mask(dataset)?;
    let inner = InversionOptions { execution: Execution::Sequential, ..opts.clone() };
    let out = map_range(exec, indices.len(), |c| -> Result<f64> {
        let i = indices[c];
        let rec = &dataset.records[i];
        let obs = observe(&rec.flow, &rec.bc, &mask, plan.noise, derive_seed(plan.seed, &[i as u64]))?;
        let est = invert(model, &obs, &inner)?;
        grid_rmse(&est.bathymetry_map.bed, &rec.bathymetry.bed)
    });
    out.into_iter().collect()
}

/// Autoencoding RMSE of each head: decode(encode(s)) against the record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadRmse {
    pub u: f64,
    pub v: f64,
    pub s: f64,
}

pub fn reconstruction_rmse(model: &dyn LatentRom, dataset: &Dataset, indices: &[usize], exec: Execution) -> Result<HeadRmse> {
    if indices.is_empty() {
        return Err(invalid("empty split"));
    }
    let parts = map_range(exec, indices.len(), |c| -> Result<[f64; 3]> {
        let rec = &dataset.records[indices[c]];
        let z = model.encode_latent(&rec.bathymetry, &rec.bc)?;
        let d = model.decode(&z, &rec.bc)?;
        Ok([
            grid_rmse(&d.u, &rec.flow.u)?.powi(2),
            grid_rmse(&d.v, &rec.flow.v)?.powi(2),
            grid_rmse(&d.s, &rec.bathymetry.bed)?.powi(2),
        ])
    });
    let mut acc = [0.0; 3];
    for p in parts {
        let p = p?;
        for (a, b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    }
    let n = indices.len() as f64;
    Ok(HeadRmse { u: (acc[0] / n).sqrt(), v: (acc[1] / n).sqrt(), s: (acc[2] / n).sqrt() })
}

/// One row of an evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub split: String,
    pub n: usize,
    pub heads: HeadRmse,
    pub inversion: f64,
}

pub fn format_eval_table(model_kind: &str, rows: &[EvalRow]) -> String {
    let mut s = format!(
        "{:<6} {:<10} {:>5} {:>10} {:>10} {:>10} {:>14}\n",
        "model", "split", "n", "rmse_u", "rmse_v", "rmse_s", "rmse_inverted"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<6} {:<10} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>14.4}",
            model_kind, r.split, r.n, r.heads.u, r.heads.v, r.heads.s, r.inversion
        );
    }
    s
}

pub fn eval_table_csv(model_kind: &str, rows: &[EvalRow]) -> String {
    let mut s = String::from("model,split,n,rmse_u,rmse_v,rmse_s,rmse_inverted\n");
    for r in rows {
        let _ = writeln!(s, "{model_kind},{},{},{},{},{},{}", r.split, r.n, r.heads.u, r.heads.v, r.heads.s, r.inversion);
    }
    s
}

/// Trains one SVE per latent dimension on `train` and inverts `test`.
pub fn latent_dim_sweep(
    train: &Dataset,
    test: &Dataset,
    dims: &[usize],
    arch: &SveArchitecture,
    hyper: &TrainHyper,
    plan: &ObservationPlan,
    opts: &InversionOptions,
    exec: Execution,
) -> Result<SweepReport> {
    if dims.is_empty() || dims.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("latent dimensions must be non-empty and ascending"));
    }
    let test_idx: Vec<usize> = (0..test.len()).collect();
    let mut cells = Vec::with_capacity(dims.len());
    let mut heads = [Vec::new(), Vec::new(), Vec::new()];
    for &k in dims {
        let model = train_sve(train, &SveArchitecture { latent_dim: k, ..arch.clone() }, hyper, exec)?;
        let h = reconstruction_rmse(&model, test, &test_idx, exec)?;
        heads[0].push(h.u);
        heads[1].push(h.v);
        heads[2].push(h.s);
        cells.push(SweepCell { samples: inversion_rmses(&model, test, &test_idx, plan, opts, exec)? });
    }
    let [u, v, s] = heads;
    Ok(SweepReport {
        axis_name: "latent_dim".into(),
        axis: dims.iter().map(|&d| d as f64).collect(),
        cells,
        extra: vec![("fwd_rmse_u".into(), u), ("fwd_rmse_v".into(), v), ("fwd_rmse_s".into(), s)],
        metadata: vec![("seed".into(), hyper.seed.to_string()), ("epochs".into(), hyper.epochs.to_string())],
    })
}

/// Inversion RMSE per observation count (`None` = every node).
pub fn sparsity_sweep(
    model: &dyn LatentRom,
    test: &Dataset,
    indices: &[usize],
    counts: &[Option<usize>],
    noise: f64,
    seed: u64,
    opts: &InversionOptions,
    exec: Execution,
) -> Result<SweepReport> {
    let m = test.geometry.n_nodes();
    let resolved: Vec<usize> = counts.iter().map(|c| c.unwrap_or(m)).collect();
    if resolved.is_empty() || resolved.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("observation counts must be strictly descending"));
    }
    let mut cells = Vec::with_capacity(counts.len());
    for &count in counts {
        let plan = ObservationPlan { points: count, noise, seed };
        cells.push(SweepCell { samples: inversion_rmses(model, test, indices, &plan, opts, exec)? });
    }
    Ok(SweepReport {
        axis_name: "obs_points".into(),
        axis: resolved.iter().map(|&c| c as f64).collect(),
        cells,
        extra: Vec::new(),
        metadata: vec![("noise".into(), noise.to_string()), ("seed".into(), seed.to_string())],
    })
}

/// Mahalanobis statistics of the training set in the three spaces used by
/// the shift report.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftStats {
    pub u: TrainStats,
    pub v: TrainStats,
    pub latent: TrainStats,
}

impl ShiftStats {
    pub fn fit(model: &dyn LatentRom, train: &Dataset, rank: usize, exec: Execution) -> Result<Self> {
        let n = train.len();
        let m = train.geometry.n_nodes();
        let k = model.latent_dim();
        let latents = map_range(exec, n, |i| {
            let rec = &train.records[i];
            model.encode_latent(&rec.bathymetry, &rec.bc)
        });
        let mut zs = DMatrix::zeros(k, n);
        for (c, z) in latents.into_iter().enumerate() {
            zs.set_column(c, &DVector::from_vec(z?));
        }
        let mut us = DMatrix::zeros(m, n);
        let mut vs = DMatrix::zeros(m, n);
        for (c, rec) in train.records.iter().enumerate() {
            us.column_mut(c).copy_from_slice(rec.flow.u.as_slice());
            vs.column_mut(c).copy_from_slice(rec.flow.v.as_slice());
        }
        Ok(Self {
            u: TrainStats::fit(&us, rank, TrainStats::DEFAULT_NUGGET)?,
            v: TrainStats::fit(&vs, rank, TrainStats::DEFAULT_NUGGET)?,
            latent: TrainStats::fit(&zs, rank, TrainStats::DEFAULT_NUGGET)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRow {
    pub cluster: String,
    pub sample: usize,
    pub d_u: f64,
    pub d_v: f64,
    pub d_latent: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub cluster: String,
    pub n: usize,
    pub d_u: f64,
    pub d_v: f64,
    pub d_latent: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftReport {
    pub rows: Vec<ShiftRow>,
    pub clusters: Vec<ClusterSummary>,
}

impl ShiftReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cluster,sample,mahalanobis_u,mahalanobis_v,mahalanobis_latent,rmse\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.cluster, r.sample, r.d_u, r.d_v, r.d_latent, r.rmse);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{:<16} {:>5} {:>10} {:>10} {:>10} {:>10}\n", "cluster", "n", "d_u", "d_v", "d_latent", "rmse");
        for c in &self.clusters {
            let _ = writeln!(
                s,
                "{:<16} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                c.cluster, c.n, c.d_u, c.d_v, c.d_latent, c.rmse
            );
        }
        s
    }

    pub fn cluster(&self, name: &str) -> Option<&ClusterSummary> {
        self.clusters.iter().find(|c| c.cluster == name)
    }
}

/// Per-sample Mahalanobis distances and inversion RMSEs for labelled test sets.
pub fn shift_report(
    model: &dyn LatentRom,
    stats: &ShiftStats,
    test_sets: &[(String, Dataset)],
    plan: &ObservationPlan,
    opts: &InversionOptions,
    exec: Execution,
) -> Result<ShiftReport> {
    let mut rows = Vec::new();
    let mut clusters = Vec::new();
    for (label, ds) in test_sets {
        if ds.geometry != model.geometry() {
            return Err(mismatch(format!("test set `{label}` has a different geometry")));
        }
        let idx: Vec<usize> = (0..ds.len()).collect();
        let rmses = inversion_rmses(model, ds, &idx, plan, opts, exec)?;
        let dists = map_range(exec, ds.len(), |i| -> Result<[f64; 3]> {
            let rec = &ds.records[i];
            let z = model.encode_latent(&rec.bathymetry, &rec.bc)?;
            Ok([
                mahalanobis(rec.flow.u.as_slice(), &stats.u)?,
                mahalanobis(rec.flow.v.as_slice(), &stats.v)?,
                mahalanobis(&z, &stats.latent)?,
            ])
        });
        let mut sum = [0.0; 4];
        for (i, (d, rmse)) in dists.into_iter().zip(rmses).enumerate() {
            let d = d?;
            sum[0] += d[0];
            sum[1] += d[1];
            sum[2] += d[2];
            sum[3] += rmse;
            rows.push(ShiftRow { cluster: label.clone(), sample: i, d_u: d[0], d_v: d[1], d_latent: d[2], rmse });
        }
        let n = ds.len().max(1) as f64;
        clusters.push(ClusterSummary {
            cluster: label.clone(),
            n: ds.len(),
            d_u: sum[0] / n,
            d_v: sum[1] / n,
            d_latent: sum[2] / n,
            rmse: sum[3] / n,
        });
    }
    Ok(ShiftReport { rows, clusters })
}

/// Writes an 8-bit binary PGM scaled linearly from the grid minimum (black)
/// to maximum (white), plus a sidecar CSV of the raw values. Returns the
/// sidecar path.
pub fn write_heatmap(grid: &Grid, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    if !grid.is_finite() {
        return Err(Error::NonFinite("heatmap values".into()));
    }
    let (lo, hi) = (grid.min(), grid.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
    bytes.extend(grid.as_slice().iter().map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8));
    std::fs::File::create(path)?.write_all(&bytes)?;

    let sidecar = path.with_extension("csv");
    let mut csv = String::with_capacity(grid.as_slice().len() * 12);
    for i in 0..grid.rows() {
        let row: Vec<String> = (0..grid.cols()).map(|j| grid.get(i, j).to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    std::fs::write(&sidecar, csv)?;
    Ok(sidecar)
}
