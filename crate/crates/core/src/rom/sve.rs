//! Supervised variational encoder.
//!
//! The encoder maps a normalised bathymetry (plus normalised boundary
//! conditions) to a diagonal Gaussian over the latent space; its output layer
//! holds the mean block followed by the log-variance block. The decoder maps
//! a latent sample (plus the same boundary-condition scalars) to stacked
//! normalised `[u; v; s]` fields.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::{
    check_latent, field_matrices, train_validation_split, BcScaler, DecodedFields, FieldScaler, LatentRom,
    TrainHyper, TrainingCurve,
};
use crate::error::{invalid, mismatch, Error, Result};
use crate::fields::{BathymetryField, BoundaryConditions, ChannelGeometry, Dataset, Grid, ObservationMask};
use crate::nn::{Activation, Adam, Mlp, Tape};
use crate::par::{map_range, Execution};
use crate::rng::{derive_seed, standard_normals, stream_rng, Stream};

/// Columns per independently computed gradient block. Fixed so that
/// training results do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SveArchitecture {
    pub latent_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub activation: Activation,
    pub kl_weight: f64,
    pub bc_embedding: bool,
}

impl Default for SveArchitecture {
    fn default() -> Self {
        Self {
            latent_dim: 20,
            encoder_widths: vec![512, 128],
            decoder_widths: vec![128, 512],
            activation: Activation::Softplus,
            kl_weight: 1e-3,
            bc_embedding: true,
        }
    }
}

impl SveArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(invalid("latent_dim must be at least 1"));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(invalid("layer widths must be at least 1"));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(invalid("kl_weight must be non-negative"));
        }
        Ok(())
    }

    fn n_bc(&self) -> usize {
        if self.bc_embedding {
            2
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SveModel {
    pub geometry: ChannelGeometry,
    pub arch: SveArchitecture,
    pub params: Vec<f64>,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub s_scaler: FieldScaler,
    pub u_scaler: FieldScaler,
    pub v_scaler: FieldScaler,
    pub bc_scaler: BcScaler,
    pub curve: TrainingCurve,
    pub seed: u64,
}

/// Loss terms; reconstruction terms are mean squared errors on normalised fields.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SveLoss {
    pub total: f64,
    pub term_u: f64,
    pub term_v: f64,
    pub term_s: f64,
    pub term_kl: f64,
}

impl std::ops::AddAssign for SveLoss {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.term_u += o.term_u;
        self.term_v += o.term_v;
        self.term_s += o.term_s;
        self.term_kl += o.term_kl;
    }
}

/// Normalised training columns.
#[derive(Debug, Clone)]
pub struct SveBatch {
    pub s: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `2 x n` normalised boundary conditions (empty rows when unused).
    pub bc: DMatrix<f64>,
}

impl SveBatch {
    pub fn len(&self) -> usize {
        self.s.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn columns(&self, cols: &[usize]) -> SveBatch {
        SveBatch {
            s: self.s.select_columns(cols.iter()),
            u: self.u.select_columns(cols.iter()),
            v: self.v.select_columns(cols.iter()),
            bc: self.bc.select_columns(cols.iter()),
        }
    }
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let n = top.ncols();
    let (a, b) = (top.nrows(), bottom.nrows());
    let mut out = DMatrix::zeros(a + b, n);
    out.rows_mut(0, a).copy_from(top);
    if b > 0 {
        out.rows_mut(a, b).copy_from(bottom);
    }
    out
}

impl SveModel {
    /// Builds a model with seeded fan-in initialisation and the given scalers.
    pub fn initialize(
        geometry: ChannelGeometry,
        arch: SveArchitecture,
        scalers: (FieldScaler, FieldScaler, FieldScaler, BcScaler),
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let m = geometry.n_nodes();
        let k = arch.latent_dim;
        let nbc = arch.n_bc();
        let encoder = Mlp::new(m + nbc, &arch.encoder_widths, 2 * k, arch.activation, 0);
        let decoder = Mlp::new(k + nbc, &arch.decoder_widths, 3 * m, arch.activation, encoder.end());
        let mut params = vec![0.0; decoder.end()];
        let mut rng = stream_rng(seed, Stream::Init);
        encoder.init(&mut params, &mut rng);
        decoder.init(&mut params, &mut rng);
        let (s_scaler, u_scaler, v_scaler, bc_scaler) = scalers;
        Ok(Self {
            geometry,
            arch,
            params,
            encoder,
            decoder,
            s_scaler,
            u_scaler,
            v_scaler,
            bc_scaler,
            curve: TrainingCurve::default(),
            seed,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn bc_column(&self, bc: &BoundaryConditions) -> Vec<f64> {
        if self.arch.bc_embedding {
            self.bc_scaler.normalize(bc).to_vec()
        } else {
            Vec::new()
        }
    }

    /// Normalises dataset columns for training or evaluation.
    pub fn batch(&self, dataset: &Dataset, indices: &[usize]) -> SveBatch {
        let f = field_matrices(dataset, indices);
        let nbc = self.arch.n_bc();
        let bc = DMatrix::from_fn(nbc, f.bcs.len(), |r, c| self.bc_scaler.normalize(&f.bcs[c])[r]);
        SveBatch {
            s: self.s_scaler.normalize_columns(&f.s),
            u: self.u_scaler.normalize_columns(&f.u),
            v: self.v_scaler.normalize_columns(&f.v),
            bc,
        }
    }

    pub fn encode(&self, bathy: &BathymetryField, bc: &BoundaryConditions) -> Result<LatentGaussian> {
        if bathy.geometry != self.geometry {
            return Err(mismatch("bathymetry geometry differs from the model"));
        }
        let mut x = self.s_scaler.normalize(bathy.bed.as_slice());
        x.extend(self.bc_column(bc));
        let out = self.encoder.predict(&self.params, &DMatrix::from_column_slice(x.len(), 1, &x));
        let k = self.arch.latent_dim;
        Ok(LatentGaussian {
            mu: out.as_slice()[..k].to_vec(),
            log_var: out.as_slice()[k..].to_vec(),
        })
    }

    fn decoder_input(&self, z: &[f64], bc: &BoundaryConditions) -> DVector<f64> {
        let mut x = z.to_vec();
        x.extend(self.bc_column(bc));
        DVector::from_vec(x)
    }

    fn denormalize_output(&self, out: &[f64]) -> Result<DecodedFields> {
        let g = self.geometry;
        let m = g.n_nodes();
        let grid = |v: Vec<f64>| Grid::from_vec(g.n_across, g.n_along, v);
        Ok(DecodedFields {
            u: grid(self.u_scaler.denormalize(&out[..m]))?,
            v: grid(self.v_scaler.denormalize(&out[m..2 * m]))?,
            s: grid(self.s_scaler.denormalize(&out[2 * m..]))?,
        })
    }

    /// Forward pass of the loss with explicit reparameterisation noise `xi`
    /// (`k x n`), accumulating parameter gradients into `grad` when given.
    /// `norm` is the batch size the terms are averaged over.
    pub fn loss_with_noise(
        &self,
        batch: &SveBatch,
        xi: &DMatrix<f64>,
        norm: usize,
        grad: Option<&mut [f64]>,
    ) -> SveLoss {
        let m = self.geometry.n_nodes();
        let k = self.arch.latent_dim;
        let n = batch.len();
        let beta = self.arch.kl_weight;
        let bn = norm as f64;

        let enc_in = stack_rows(&batch.s, &batch.bc);
        let enc_tape: Tape = self.encoder.forward(&self.params, &enc_in);
        let enc_out = &enc_tape.output;
        let mu = enc_out.rows(0, k).into_owned();
        let lv = enc_out.rows(k, k).into_owned();
        let sd = lv.map(|x| (0.5 * x).exp());
        let z = &mu + sd.component_mul(xi);

        let dec_in = stack_rows(&z, &batch.bc);
        let dec_tape = self.decoder.forward(&self.params, &dec_in);
        let out = &dec_tape.output;

        let sq = |a: nalgebra::DMatrixView<f64>, b: &DMatrix<f64>| {
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / (bn * m as f64)
        };
        let term_u = sq(out.rows(0, m), &batch.u);
        let term_v = sq(out.rows(m, m), &batch.v);
        let term_s = sq(out.rows(2 * m, m), &batch.s);
        let mut kl = 0.0;
        for (mu_i, lv_i) in mu.iter().zip(lv.iter()) {
            kl += 0.5 * (lv_i.exp() + mu_i * mu_i - 1.0 - lv_i);
        }
        let term_kl = kl / bn;
        let loss = SveLoss { total: term_u + term_v + term_s + beta * term_kl, term_u, term_v, term_s, term_kl };

        if let Some(grad) = grad {
            let scale = 2.0 / (bn * m as f64);
            let mut d_out = DMatrix::zeros(3 * m, n);
            for c in 0..n {
                for r in 0..m {
                    d_out[(r, c)] = scale * (out[(r, c)] - batch.u[(r, c)]);
                    d_out[(m + r, c)] = scale * (out[(m + r, c)] - batch.v[(r, c)]);
                    d_out[(2 * m + r, c)] = scale * (out[(2 * m + r, c)] - batch.s[(r, c)]);
                }
            }
            let d_in = self.decoder.backward(&self.params, &dec_tape, d_out, grad);
            let mut d_enc = DMatrix::zeros(2 * k, n);
            for c in 0..n {
                for r in 0..k {
                    let dz = d_in[(r, c)];
                    let (m_rc, lv_rc) = (mu[(r, c)], lv[(r, c)]);
                    d_enc[(r, c)] = dz + beta * m_rc / bn;
                    d_enc[(k + r, c)] =
                        dz * xi[(r, c)] * 0.5 * sd[(r, c)] + beta * 0.5 * (lv_rc.exp() - 1.0) / bn;
                }
            }
            self.encoder.backward(&self.params, &enc_tape, d_enc, grad);
        }
        loss
    }

    /// Loss with the latent set to the encoder mean.
    pub fn loss_at_mean(&self, batch: &SveBatch) -> SveLoss {
        let xi = DMatrix::zeros(self.arch.latent_dim, batch.len());
        self.loss_with_noise(batch, &xi, batch.len(), None)
    }

    /// Exact Jacobian of the decoder output rows `rows` (of the stacked
    /// normalised output) with respect to `z`, together with the full output.
    fn decoder_tangent(&self, z: &[f64], bc: &BoundaryConditions) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.arch.latent_dim;
        let x = self.decoder_input(z, bc);
        let mut t = DMatrix::zeros(x.len(), k);
        for i in 0..k {
            t[(i, i)] = 1.0;
        }
        self.decoder.tangent(&self.params, &x, &t)
    }
}

/// Fits scalers on `indices` and initialises a model.
pub fn init_sve(dataset: &Dataset, arch: &SveArchitecture, indices: &[usize], seed: u64) -> Result<SveModel> {
    let f = field_matrices(dataset, indices);
    let scalers = (
        FieldScaler::fit(&f.s),
        FieldScaler::fit(&f.u),
        FieldScaler::fit(&f.v),
        BcScaler::fit(&f.bcs),
    );
    SveModel::initialize(dataset.geometry, arch.clone(), scalers, seed)
}

/// `z = mu + exp(log_var / 2) * xi`, `xi ~ N(0, I)` keyed by `seed`.
pub fn reparameterize(g: &LatentGaussian, seed: u64) -> Vec<f64> {
    let xi = standard_normals(seed, Stream::Latent, g.mu.len());
    g.mu.iter()
        .zip(&g.log_var)
        .zip(&xi)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Loss and gradient of one mini-batch, computed over fixed column blocks.
pub fn batch_gradient(model: &SveModel, batch: &SveBatch, xi: &DMatrix<f64>, exec: Execution) -> (SveLoss, Vec<f64>) {
    let n = batch.len();
    let n_chunks = n.div_ceil(GRAD_CHUNK);
    let parts = map_range(exec, n_chunks, |c| {
        let cols: Vec<usize> = (c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n)).collect();
        let sub = batch.columns(&cols);
        let sub_xi = xi.select_columns(cols.iter());
        let mut g = vec![0.0; model.n_params()];
        let loss = model.loss_with_noise(&sub, &sub_xi, n, Some(&mut g));
        (loss, g)
    });
    let mut total = SveLoss::default();
    let mut grad = vec![0.0; model.n_params()];
    for (loss, g) in parts {
        total += loss;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (total, grad)
}

fn validation_loss(model: &SveModel, batch: &SveBatch, exec: Execution) -> SveLoss {
    let n = batch.len();
    let n_chunks = n.div_ceil(GRAD_CHUNK);
    let parts = map_range(exec, n_chunks, |c| {
        let cols: Vec<usize> = (c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n)).collect();
        let sub = batch.columns(&cols);
        let xi = DMatrix::zeros(model.arch.latent_dim, cols.len());
        model.loss_with_noise(&sub, &xi, n, None)
    });
    parts.into_iter().fold(SveLoss::default(), |mut acc, l| {
        acc += l;
        acc
    })
}

/// Trains on 90% of the records and returns the snapshot with the best
/// validation loss (latent at the encoder mean).
pub fn train_sve(dataset: &Dataset, arch: &SveArchitecture, hyper: &TrainHyper, exec: Execution) -> Result<SveModel> {
    if hyper.batch_size == 0 || dataset.len() < 2 * hyper.batch_size {
        return Err(invalid(format!(
            "need at least {} records for batch size {}, got {}",
            2 * hyper.batch_size,
            hyper.batch_size,
            dataset.len()
        )));
    }
    let (train_idx, val_idx) = train_validation_split(dataset.len());
    let mut model = init_sve(dataset, arch, &train_idx, hyper.seed)?;
    let train = model.batch(dataset, &train_idx);
    let val = model.batch(dataset, &val_idx);
    let k = arch.latent_dim;

    let start_val = validation_loss(&model, &val, exec);
    let start_train = validation_loss(&model, &train, exec);
    let mut curve = TrainingCurve { train: vec![start_train.total], validation: vec![start_val.total], best_epoch: 0 };
    let mut best = (start_val.total, model.params.clone());
    let mut opt = Adam::new(model.n_params(), hyper.step_size);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=hyper.epochs {
        let mut rng = stream_rng(derive_seed(hyper.seed, &[epoch as u64]), Stream::Shuffle);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, cols) in order.chunks(hyper.batch_size).enumerate() {
            let sub = train.columns(cols);
            let xi_seed = derive_seed(hyper.seed, &[epoch as u64, b as u64]);
            let xi = DMatrix::from_vec(k, cols.len(), standard_normals(xi_seed, Stream::Latent, k * cols.len()));
            let (loss, grad) = batch_gradient(&model, &sub, &xi, exec);
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += loss.total * cols.len() as f64;
            opt.step(&mut model.params, &grad);
        }
        let v = validation_loss(&model, &val, exec);
        if !v.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        curve.train.push(epoch_loss / train.len() as f64);
        curve.validation.push(v.total);
        if v.total < best.0 {
            best = (v.total, model.params.clone());
            curve.best_epoch = epoch;
        }
    }
    model.params = best.1;
    model.curve = curve;
    Ok(model)
}

/// Loss terms of a dataset subset with the latent at the encoder mean.
pub fn evaluate_loss(model: &SveModel, dataset: &Dataset, indices: &[usize], exec: Execution) -> SveLoss {
    validation_loss(model, &model.batch(dataset, indices), exec)
}

impl LatentRom for SveModel {
    fn geometry(&self) -> ChannelGeometry {
        self.geometry
    }

    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn kind(&self) -> &'static str {
        "sve"
    }

    fn decode(&self, z: &[f64], bc: &BoundaryConditions) -> Result<DecodedFields> {
        check_latent(z, self.arch.latent_dim)?;
        let x = self.decoder_input(z, bc);
        let out = self.decoder.predict(&self.params, &DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
        self.denormalize_output(out.as_slice())
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
        let m = self.geometry.n_nodes();
        let (out, t) = self.decoder_tangent(z, bc);
        let rows = mask.stacked_rows(&self.geometry);
        let mut jac = t.select_rows(rows.iter());
        let mut values = Vec::with_capacity(rows.len());
        for (r, &row) in rows.iter().enumerate() {
            let (scaler, node) = if row < m { (&self.u_scaler, row) } else { (&self.v_scaler, row - m) };
            jac.row_mut(r).scale_mut(scaler.std);
            values.push(out[row] * scaler.std + scaler.mean[node]);
        }
        Ok((values, jac))
    }

    fn bathymetry_jacobian(&self, z: &[f64], bc: &BoundaryConditions) -> Result<DMatrix<f64>> {
        check_latent(z, self.arch.latent_dim)?;
        let m = self.geometry.n_nodes();
        let (_, t) = self.decoder_tangent(z, bc);
        Ok(t.rows(2 * m, m).into_owned() * self.s_scaler.std)
    }

    fn encode_latent(&self, bathy: &BathymetryField, bc: &BoundaryConditions) -> Result<Vec<f64>> {
        Ok(self.encode(bathy, bc)?.mu)
    }

    fn decode_bathymetry_batch(&self, zs: &DMatrix<f64>, bc: &BoundaryConditions) -> Result<DMatrix<f64>> {
        let k = self.arch.latent_dim;
        if zs.nrows() != k {
            return Err(mismatch("latent batch has the wrong dimension"));
        }
        let bcn = self.bc_column(bc);
        let x = DMatrix::from_fn(k + bcn.len(), zs.ncols(), |r, c| if r < k { zs[(r, c)] } else { bcn[r - k] });
        let m = self.geometry.n_nodes();
        let out = self.decoder.predict(&self.params, &x);
        let sc = &self.s_scaler;
        Ok(DMatrix::from_fn(m, zs.ncols(), |r, c| out[(2 * m + r, c)] * sc.std + sc.mean[r]))
    }
}
