//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! The run reports rather than gates: it exits non-zero on a FAIL only when
//! `ACCEPTANCE_STRICT` is set.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use riverbed::diagnostics::{
    decay_index, inversion_rmses, latent_dim_sweep, loss_term_spectrum, shift_report, sparsity_sweep, LossTerm,
    ObservationPlan, ShiftStats, TrainStats,
};
use riverbed::forward::{observe, simulate};
use riverbed::generate::{generate_dataset, GenerationSpec};
use riverbed::inversion::{
    gauss_newton_step, invert, jacobian_fd, posterior_covariance, posterior_covariance_data_space, InversionOptions,
    LatentPrior, PosteriorEstimate, StepForm,
};
use riverbed::prior::{sample_bathymetry, sample_bc, PriorSpec};
use riverbed::rng::{standard_normals, Stream};
use riverbed::rom::pca::{train_pca_rom, PcaArchitecture, PcaRomModel};
use riverbed::rom::sve::{init_sve, train_sve, SveArchitecture, SveModel};
use riverbed::rom::{AffineRom, LatentRom, TrainHyper};
use riverbed::{BoundaryConditions, ChannelGeometry, Dataset, Execution, ObservationMask, ObservationSet};

const EXEC: Execution = Execution::Parallel;
const PRIOR_SIGMA: f64 = 1.2;
const NOISE: f64 = 0.05;
const DESK_EPOCHS: usize = 60;

type Outcome = Result<String, String>;

/// Posterior covariances of every desk inversion run by the suite, with the
/// prior they were computed under.
static POSTERIORS: Mutex<Vec<(DMatrix<f64>, DMatrix<f64>)>> = Mutex::new(Vec::new());

fn record_posterior(est: &PosteriorEstimate) {
    let k = est.q_post.nrows();
    POSTERIORS.lock().unwrap().push((est.q_post.clone(), DMatrix::identity(k, k)));
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Desk {
    train: Dataset,
    test: Dataset,
    sve: SveModel,
    pca: PcaRomModel,
    train_seconds: f64,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let start = Instant::now();
        let spec = GenerationSpec::default();
        let (train, _) = generate_dataset(&spec, 500, 101, EXEC).unwrap();
        let (test, _) = generate_dataset(&spec, 40, 202, EXEC).unwrap();
        let hyper = TrainHyper { epochs: DESK_EPOCHS, ..TrainHyper::default() };
        let sve = train_sve(&train, &SveArchitecture::default(), &hyper, EXEC).unwrap();
        let pca = train_pca_rom(&train, &PcaArchitecture::default(), &hyper, EXEC).unwrap();
        Desk { train, test, sve, pca, train_seconds: start.elapsed().as_secs_f64() }
    })
}

fn fast_opts() -> InversionOptions {
    InversionOptions { uq_samples: 16, ..InversionOptions::default() }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn all_indices(ds: &Dataset) -> Vec<usize> {
    (0..ds.len()).collect()
}

/// Largest eigenvalue violation of `q <= sigma`, i.e. `max(0, -min eig(sigma - q))`.
fn loewner_violation(q: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    let d = sigma - q;
    let d = (&d + d.transpose()) * 0.5;
    (-SymmetricEigen::new(d).eigenvalues.min()).max(0.0)
}

fn forward_conservation() -> Outcome {
    let spec = GenerationSpec::default();
    let basis = spec.prior.basis(&spec.geometry).unwrap();
    let g = spec.geometry;
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut solved = 0;
    let mut draw = 0u64;
    while solved < 100 {
        draw += 1;
        let bathy = sample_bathymetry(&basis, draw).unwrap();
        let bc = sample_bc(&spec.bc, draw).unwrap();
        let Ok(flow) = simulate(&bathy, &bc, &spec.forward) else { continue };
        for j in 0..g.n_along {
            let q: f64 = (0..g.n_across).map(|i| flow.u.get(i, j) * flow.depth.get(i, j).max(0.0) * g.dy).sum();
            worst = worst.max((q - bc.discharge).abs() / bc.discharge);
        }
        solved += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-10 && secs < 5.0, format!("max flux residual {worst:.2e}, {secs:.2}s for 100 solves ({draw} draws)"))
}

fn jacobian_oracle() -> Outcome {
    let spec = GenerationSpec {
        geometry: ChannelGeometry::new(7, 15, 20.0, 5.0).unwrap(),
        prior: PriorSpec { n_modes: 40, ..PriorSpec::default() },
        ..GenerationSpec::default()
    };
    let (ds, _) = generate_dataset(&spec, 40, 7, EXEC).unwrap();
    let idx = all_indices(&ds);
    let arch = SveArchitecture { latent_dim: 5, encoder_widths: vec![24], decoder_widths: vec![24], ..Default::default() };
    let pca_arch = PcaArchitecture { latent_dim: 5, hidden_widths: vec![12], ..Default::default() };
    let hyper = TrainHyper { epochs: 3, batch_size: 8, ..TrainHyper::default() };
    let mut models: Vec<Box<dyn LatentRom>> = Vec::new();
    for seed in 0..5 {
        models.push(Box::new(init_sve(&ds, &arch, &idx, seed).unwrap()));
        models.push(Box::new(train_pca_rom(&ds, &pca_arch, &TrainHyper { seed, ..hyper }, EXEC).unwrap()));
    }
    let mask = ObservationMask::full(&spec.geometry);
    let mut worst = 0.0f64;
    for pair in 0..20 {
        let model = &models[pair % models.len()];
        let z = standard_normals(pair as u64, Stream::Latent, 5);
        let bc = ds.records[pair].bc;
        let y = model.predict_observations(&z, &bc, &mask).unwrap();
        let obs = ObservationSet::new(mask.clone(), y, vec![NOISE; mask.n_obs()], bc).unwrap();
        let (_, analytic) = model.predict_with_jacobian(&z, &bc, &mask).unwrap();
        let (_, fd) = jacobian_fd(model.as_ref(), &z, &obs, 1e-4, EXEC).unwrap();
        worst = worst.max((&analytic - &fd).amax() / analytic.amax());

        let js = model.bathymetry_jacobian(&z, &bc).unwrap();
        let s0 = model.decode(&z, &bc).unwrap().s;
        let mut js_fd = DMatrix::zeros(js.nrows(), 5);
        for c in 0..5 {
            let mut zp = z.clone();
            zp[c] += 1e-4;
            let sp = model.decode(&zp, &bc).unwrap().s;
            for r in 0..js.nrows() {
                js_fd[(r, c)] = (sp.as_slice()[r] - s0.as_slice()[r]) / 1e-4;
            }
        }
        worst = worst.max((&js - &js_fd).amax() / js.amax());
    }

    // forward-difference truncation error is first order on a smooth model
    let smooth = &models[0];
    let z = vec![0.3, -0.2, 0.5, 0.1, -0.4];
    let bc = ds.records[0].bc;
    let (_, analytic) = smooth.predict_with_jacobian(&z, &bc, &mask).unwrap();
    let y = smooth.predict_observations(&z, &bc, &mask).unwrap();
    let obs = ObservationSet::new(mask.clone(), y, vec![NOISE; mask.n_obs()], bc).unwrap();
    let err = |d: f64| (&analytic - jacobian_fd(smooth.as_ref(), &z, &obs, d, EXEC).unwrap().1).amax();
    let ratio = err(1e-3) / err(5e-4);
    check(
        worst <= 1e-2 && (1.6..2.4).contains(&ratio),
        format!("worst relative max-norm gap {worst:.2e} over 20 pairs; error ratio at delta/2 {ratio:.3}"),
    )
}

fn linear_gaussian_exactness() -> Outcome {
    let g = ChannelGeometry::new(4, 6, 20.0, 5.0).unwrap();
    let k = 6;
    let mut worst_map = 0.0f64;
    let mut worst_cov = 0.0f64;
    for seed in 0..5u64 {
        let model = AffineRom::random(g, k, seed);
        let mask = ObservationMask::new(&g, (0..10).map(|i| (i % 4, (5 * i) % 6)).collect(), true, true).unwrap();
        let rows = mask.stacked_rows(&g);
        let n = rows.len();
        let j = model.w_vel.select_rows(rows.iter());
        let c = DVector::from_iterator(n, rows.iter().map(|&r| model.c_vel[r]));
        let noise: Vec<f64> = (0..n).map(|i| 0.05 + 0.01 * (i % 3) as f64).collect();
        let z_true = DVector::from_vec(standard_normals(seed, Stream::Latent, k));
        let eps = DVector::from_vec(standard_normals(seed, Stream::Noise, n));
        let y = &j * &z_true + &c + eps.component_mul(&DVector::from_column_slice(&noise));
        let bc = BoundaryConditions::new(300.0, 2.0).unwrap();
        let obs = ObservationSet::new(mask.clone(), y.as_slice().to_vec(), noise.clone(), bc).unwrap();

        let a = DMatrix::from_vec(k, k, standard_normals(seed + 50, Stream::Init, k * k));
        let sigma = &a * a.transpose() * 0.2 + DMatrix::identity(k, k);
        let prior = LatentPrior::new(sigma.clone()).unwrap();

        let r_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, noise.iter().map(|s| 1.0 / (s * s))));
        let info = sigma.clone().try_inverse().unwrap() + j.transpose() * &r_inv * &j;
        let z_star = info.clone().try_inverse().unwrap() * j.transpose() * &r_inv * (&y - &c);

        let z0 = standard_normals(seed + 9, Stream::Latent, k);
        let y0 = model.predict_observations(&z0, &bc, &mask).unwrap();
        for form in [StepForm::DataSpace, StepForm::Information] {
            let z1 = gauss_newton_step(&z0, &y0, &j, &obs, &prior, 1.0, form).unwrap();
            worst_map = worst_map.max((DVector::from_vec(z1) - &z_star).amax() / z_star.amax());
        }
        let opts = InversionOptions { max_iterations: 1, sigma_prior: Some(sigma.clone()), uq_samples: 8, ..fast_opts() };
        let est = invert(&model, &obs, &opts).unwrap();
        worst_map = worst_map.max((DVector::from_vec(est.z_map) - &z_star).amax() / z_star.amax());

        let q_info = posterior_covariance(&j, &prior, &noise).unwrap();
        let q_data = posterior_covariance_data_space(&j, &prior, &noise).unwrap();
        let q_oracle = info.try_inverse().unwrap();
        worst_cov = worst_cov.max((&q_info - &q_data).amax()).max((&q_info - &q_oracle).amax());
    }
    check(
        worst_map <= 1e-8 && worst_cov <= 1e-10,
        format!("MAP relative gap {worst_map:.2e}, covariance form gap {worst_cov:.2e}"),
    )
}

fn sve_gradient_check() -> Outcome {
    let spec = GenerationSpec {
        geometry: ChannelGeometry::new(3, 5, 20.0, 5.0).unwrap(),
        prior: PriorSpec { n_modes: 15, ..PriorSpec::default() },
        ..GenerationSpec::default()
    };
    let (ds, _) = generate_dataset(&spec, 6, 31, EXEC).unwrap();
    let idx = all_indices(&ds);
    let arch = SveArchitecture {
        latent_dim: 3,
        encoder_widths: vec![5],
        decoder_widths: vec![5],
        kl_weight: 0.2,
        ..Default::default()
    };
    let model = init_sve(&ds, &arch, &idx, 17).unwrap();
    let p = model.n_params();
    let batch = model.batch(&ds, &idx);
    let xi = DMatrix::from_vec(3, 6, standard_normals(4, Stream::Latent, 18));
    let mut grad = vec![0.0; p];
    model.loss_with_noise(&batch, &xi, 6, Some(&mut grad));
    let h = 1e-5;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..p {
        probe.params[i] = model.params[i] + h;
        let lp = probe.loss_with_noise(&batch, &xi, 6, None).total;
        probe.params[i] = model.params[i] - h;
        let lm = probe.loss_with_noise(&batch, &xi, 6, None).total;
        probe.params[i] = model.params[i];
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
    }
    check(p <= 500 && worst <= 1e-4, format!("{p} parameters, worst relative gap {worst:.2e}"))
}

fn inverse_crime() -> Outcome {
    let d = desk();
    let mask = ObservationMask::full(&d.test.geometry);
    let mut worst = 0.0f64;
    let mut max_iter = 0;
    let mut monotone = true;
    let mut chi2 = Vec::new();
    for case in 0..5 {
        let rec = &d.test.records[case];
        let z_star = d.sve.encode_latent(&rec.bathymetry, &rec.bc).unwrap();
        let clean = d.sve.decode(&z_star, &rec.bc).unwrap();
        let mut flow = rec.flow.clone();
        flow.u = clean.u;
        flow.v = clean.v;
        let obs = observe(&flow, &rec.bc, &mask, NOISE, 900 + case as u64).unwrap();
        let est = invert(&d.sve, &obs, &fast_opts()).unwrap();
        let e = DVector::from_vec(est.z_map.clone()) - DVector::from_column_slice(&z_star);
        let norm: f64 = z_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(e.norm() / norm);
        let q_inv = est.q_post.clone().try_inverse().unwrap();
        chi2.push(e.dot(&(q_inv * &e)));
        max_iter = max_iter.max(est.iterations_used);
        monotone &= est.objective_trace.windows(2).all(|w| w[1] <= w[0]);
        record_posterior(&est);
    }
    check(
        worst <= 0.05 && max_iter <= 10 && monotone,
        format!(
            "worst relative latent error {worst:.4}, max iterations {max_iter}, objective non-increasing {monotone}; \
             error chi2 under q_post {:?} (k = {})",
            chi2.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>(),
            d.sve.latent_dim()
        ),
    )
}

fn table_ordering() -> Outcome {
    let d = desk();
    let idx = all_indices(&d.test);
    let plan = ObservationPlan { points: None, noise: NOISE, seed: 5 };
    let sve = mean(&inversion_rmses(&d.sve, &d.test, &idx, &plan, &fast_opts(), EXEC).unwrap());
    let pca = mean(&inversion_rmses(&d.pca, &d.test, &idx, &plan, &fast_opts(), EXEC).unwrap());
    check(
        sve < pca && pca < PRIOR_SIGMA,
        format!(
            "test RMSE sve {sve:.4} m, pca {pca:.4} m, prior sigma {PRIOR_SIGMA} m; data + training {:.0}s",
            d.train_seconds
        ),
    )
}

fn sparsity_trend() -> Outcome {
    let d = desk();
    let m = d.test.geometry.n_nodes();
    let counts = [None, Some(m / 10), Some(m / 40), Some(m / 100), Some(m / 200)];
    let idx: Vec<usize> = (0..20).collect();
    let report = sparsity_sweep(&d.sve, &d.test, &idx, &counts, NOISE, 6, &fast_opts(), EXEC).unwrap();
    let means = report.means();
    let trend = means.windows(2).all(|w| w[1] >= 0.95 * w[0]);
    let last = *means.last().unwrap();
    check(
        trend && last < PRIOR_SIGMA,
        format!("points {:?} -> mean RMSE {:?}", report.axis, means.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()),
    )
}

fn latent_saturation() -> Outcome {
    let d = desk();
    let dims = [5, 10, 20, 40];
    let arch = SveArchitecture { encoder_widths: vec![128, 64], decoder_widths: vec![64, 128], ..Default::default() };
    let hyper = TrainHyper { epochs: 40, ..TrainHyper::default() };
    let plan = ObservationPlan { points: None, noise: NOISE, seed: 8 };
    let test = d.test.subset(&(0..20).collect::<Vec<_>>()).unwrap();
    let report = latent_dim_sweep(&d.train, &test, &dims, &arch, &hyper, &plan, &fast_opts(), EXEC).unwrap();
    let m = report.means();
    let non_increasing = m.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let saturating = (m[2] - m[3]) < (m[0] - m[1]);

    let rec = &d.test.records[0];
    let z = d.sve.encode_latent(&rec.bathymetry, &rec.bc).unwrap();
    let idx: Vec<usize> = [LossTerm::U, LossTerm::V, LossTerm::S]
        .iter()
        .map(|&t| decay_index(&loss_term_spectrum(&d.sve, t, &z, rec, 1e-3, EXEC).unwrap(), 0.01))
        .collect();
    let hessian = idx[0] < idx[2] && idx[1] < idx[2];
    check(
        non_increasing && saturating && hessian,
        format!(
            "k {dims:?} -> RMSE {:?}; 1% decay index u {} v {} s {}",
            m.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            idx[0],
            idx[1],
            idx[2]
        ),
    )
}

fn shift_ordering() -> Outcome {
    let d = desk();
    let mut sets = Vec::new();
    for (i, sigma) in [1.2, 2.13, 3.05, 4.57].into_iter().enumerate() {
        let spec = GenerationSpec { prior: PriorSpec::default().with_sigma(sigma), ..GenerationSpec::default() };
        sets.push((format!("sigma={sigma}"), generate_dataset(&spec, 20, 300 + i as u64, EXEC).unwrap().0));
    }
    let trap = GenerationSpec { prior: PriorSpec::trapezoidal_family(PRIOR_SIGMA), ..GenerationSpec::default() };
    sets.push(("trapezoidal".to_string(), generate_dataset(&trap, 20, 310, EXEC).unwrap().0));
    let stats = ShiftStats::fit(&d.sve, &d.train, TrainStats::DEFAULT_RANK, EXEC).unwrap();
    let plan = ObservationPlan { points: None, noise: NOISE, seed: 9 };
    let report = shift_report(&d.sve, &stats, &sets, &plan, &fast_opts(), EXEC).unwrap();
    let c = &report.clusters;
    let inc = |f: fn(&riverbed::diagnostics::ClusterSummary) -> f64| c[..4].windows(2).all(|w| f(&w[1]) > f(&w[0]));
    let distances = inc(|s| s.d_u) && inc(|s| s.d_v) && inc(|s| s.d_latent);
    let rmse = inc(|s| s.rmse);
    let family = c[4].rmse > c[0].rmse;
    let fmt = c
        .iter()
        .map(|s| format!("{}: d_u {:.2} d_v {:.2} d_z {:.2} rmse {:.3}", s.cluster, s.d_u, s.d_v, s.d_latent, s.rmse))
        .collect::<Vec<_>>()
        .join("; ");
    check(distances && rmse && family, fmt)
}

fn uq_sanity() -> Outcome {
    let d = desk();
    let mask = ObservationMask::full(&d.test.geometry);
    let opts = InversionOptions::default();
    let mut wider = 0;
    let cases = 5;
    let mut ratio = Vec::new();
    for case in 0..cases {
        let rec = &d.test.records[10 + case];
        let mut mean_std = [0.0; 2];
        for (slot, r) in [NOISE, 0.25].into_iter().enumerate() {
            let obs = observe(&rec.flow, &rec.bc, &mask, r, 40 + case as u64).unwrap();
            let est = invert(&d.sve, &obs, &opts).unwrap();
            mean_std[slot] = mean(est.bathymetry_std.as_slice());
            record_posterior(&est);
        }
        if mean_std[1] > mean_std[0] {
            wider += 1;
        }
        ratio.push(mean_std[1] / mean_std[0]);
    }
    for case in 0..3 {
        let rec = &d.test.records[20 + case];
        let obs = observe(&rec.flow, &rec.bc, &mask, NOISE, 60).unwrap();
        record_posterior(&invert(&d.pca, &obs, &fast_opts()).unwrap());
    }
    let posteriors = POSTERIORS.lock().unwrap();
    let worst = posteriors.iter().map(|(q, s)| loewner_violation(q, s)).fold(0.0, f64::max);
    check(
        wider == cases && worst <= 1e-8,
        format!(
            "std(0.25)/std(0.05) per case {:?}; worst q_post <= sigma violation {worst:.2e} over {} inversions",
            ratio.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>(),
            posteriors.len()
        ),
    )
}

fn cli_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = common::full_pipeline(a.path());
    let second = common::full_pipeline(b.path());
    let differing: Vec<String> = first
        .iter()
        .filter(|(p, bytes)| second.get(*p) != Some(bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    check(
        differing.is_empty() && first.len() == second.len(),
        format!("{} artifacts compared across two full runs, {} differ {differing:?}", first.len(), differing.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("forward conservation", forward_conservation),
        ("jacobian oracle", jacobian_oracle),
        ("linear-gaussian exactness", linear_gaussian_exactness),
        ("sve gradient check", sve_gradient_check),
        ("inverse-crime recovery", inverse_crime),
        ("sve vs pca ordering", table_ordering),
        ("sparsity trend", sparsity_trend),
        ("latent-dimension saturation", latent_saturation),
        ("distribution-shift ordering", shift_ordering),
        ("uq sanity", uq_sanity),
        ("cli determinism", cli_determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", n + 1)
            }
        }
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failed);
    if failed == 0 || std::env::var_os("ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
