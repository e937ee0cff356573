use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use riverbed::config::{RomKind, RunConfig};
use riverbed::diagnostics::{
    eval_table_csv, format_eval_table, inversion_rmses, latent_dim_sweep, loss_term_spectrum, decay_index,
    reconstruction_rmse, shift_report, sparsity_sweep, write_heatmap, EvalRow, LossTerm, ObservationPlan, ShiftStats,
    TrainStats,
};
use riverbed::forward::observe;
use riverbed::generate::generate_dataset;
use riverbed::inversion::{invert as run_inversion, save_estimate, save_observations, load_observations, PosteriorEstimate};
use riverbed::io::{load_dataset, save_dataset};
use riverbed::rom::pca::train_pca_rom;
use riverbed::rom::persist::{load_rom, save_rom, AnyRom};
use riverbed::rom::sve::train_sve;
use riverbed::rom::{train_validation_split, LatentRom};
use riverbed::{equispaced_mask, grid_rmse, Dataset, Execution, Grid, ObservationMask};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<riverbed::Error> for CliError {
    fn from(e: riverbed::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn with_path<T>(path: &Path, r: riverbed::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let msg = format!("{}: {e}", path.display());
        if e.is_validation() {
            CliError::Validation(msg)
        } else {
            CliError::Runtime(msg)
        }
    })
}

fn execution() -> Execution {
    if cfg!(feature = "parallel") {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

pub fn configure_threads(threads: Option<usize>) -> CliResult {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(validation("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot size the thread pool: {e}")))?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| validation(format!("{}: {e}", p.display())))?;
            with_path(p, RunConfig::from_text(&text))
        }
    }
}

fn dataset(path: &Path) -> CliResult<Dataset> {
    with_path(path, load_dataset(path))
}

fn model(path: &Path) -> CliResult<AnyRom> {
    with_path(path, load_rom(path))
}

fn check_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(validation(format!("output directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn mask_for(ds: &Dataset, points: Option<usize>) -> CliResult<ObservationMask> {
    Ok(match points {
        None => ObservationMask::full(&ds.geometry),
        Some(n) => equispaced_mask(&ds.geometry, n)?,
    })
}

pub fn generate(config: Option<&Path>, n: usize, seed: u64, out: &Path) -> CliResult {
    let cfg = load_config(config)?;
    if n == 0 {
        return Err(validation("--n must be at least 1"));
    }
    check_parent(out)?;
    let start = Instant::now();
    let (ds, report) = generate_dataset(&cfg.generation, n, seed, execution())?;
    save_dataset(&ds, out)?;
    println!(
        "generated {n} records ({}x{} nodes), {} rejections, prior variance captured {:.4}, {:.2}s",
        ds.geometry.n_across,
        ds.geometry.n_along,
        report.rejections,
        report.captured_variance,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

pub struct TrainRequest {
    pub dataset: PathBuf,
    pub rom: Option<String>,
    pub latent_dim: Option<usize>,
    pub config: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn train(req: &TrainRequest) -> CliResult {
    let mut cfg = load_config(req.config.as_deref())?;
    if let Some(kind) = &req.rom {
        cfg.rom.kind = kind.parse()?;
    }
    if let Some(k) = req.latent_dim {
        if k == 0 {
            return Err(validation("--latent-dim must be at least 1"));
        }
        cfg.rom.set_latent_dim(k);
    }
    if let Some(e) = req.epochs {
        cfg.rom.hyper.epochs = e;
    }
    if let Some(s) = req.seed {
        cfg.rom.hyper.seed = s;
    }
    check_parent(&req.out)?;
    let ds = dataset(&req.dataset)?;
    let exec = execution();
    let start = Instant::now();
    let model: AnyRom = match cfg.rom.kind {
        RomKind::Sve => train_sve(&ds, &cfg.rom.sve, &cfg.rom.hyper, exec)?.into(),
        RomKind::Pca => train_pca_rom(&ds, &cfg.rom.pca, &cfg.rom.hyper, exec)?.into(),
    };
    let elapsed = start.elapsed().as_secs_f64();
    save_rom(&model, &req.out)?;

    let curve = model.curve();
    let (_, val_idx) = train_validation_split(ds.len());
    let heads = reconstruction_rmse(&model, &ds, &val_idx, exec)?;
    println!(
        "trained {} (k = {}) in {elapsed:.1}s; validation loss {:.5} -> {:.5} (best epoch {} of {})",
        model.kind(),
        model.latent_dim(),
        curve.validation[0],
        curve.validation[curve.best_epoch],
        curve.best_epoch,
        curve.validation.len() - 1
    );
    println!("validation rmse: u {:.4} m/s, v {:.4} m/s, bathymetry {:.4} m", heads.u, heads.v, heads.s);
    Ok(())
}

pub enum ObsSource {
    File(PathBuf),
    Synthesized { dataset: PathBuf, record: usize, mask_points: Option<usize>, noise_seed: u64 },
}

fn write_case_heatmaps(dir: &Path, truth: Option<&Grid>, est: &PosteriorEstimate) -> CliResult {
    std::fs::create_dir_all(dir)?;
    write_heatmap(&est.bathymetry_map.bed, dir.join("estimate.pgm"))?;
    write_heatmap(&est.bathymetry_std, dir.join("std.pgm"))?;
    if let Some(t) = truth {
        write_heatmap(t, dir.join("truth.pgm"))?;
        let err = Grid::from_fn(t.rows(), t.cols(), |i, j| est.bathymetry_map.bed.get(i, j) - t.get(i, j));
        write_heatmap(&err, dir.join("error.pgm"))?;
    }
    Ok(())
}

pub fn invert(
    model_path: &Path,
    source: ObsSource,
    config: Option<&Path>,
    save_obs: Option<&Path>,
    heatmaps: Option<&Path>,
    out: &Path,
) -> CliResult {
    let cfg = load_config(config)?;
    check_parent(out)?;
    let rom = model(model_path)?;
    let geometry = rom.geometry();
    let (obs, truth, label) = match source {
        ObsSource::File(path) => {
            let (g, obs) = with_path(&path, load_observations(&path))?;
            if g != geometry {
                return Err(validation("observation geometry differs from the model"));
            }
            (obs, None, path.display().to_string())
        }
        ObsSource::Synthesized { dataset: path, record, mask_points, noise_seed } => {
            let ds = dataset(&path)?;
            if record >= ds.len() {
                return Err(validation(format!("--record {record} is out of range (dataset has {})", ds.len())));
            }
            if ds.geometry != geometry {
                return Err(validation("dataset geometry differs from the model"));
            }
            let rec = &ds.records[record];
            let mask = mask_for(&ds, mask_points)?;
            let obs = observe(&rec.flow, &rec.bc, &mask, cfg.observation_noise, noise_seed)?;
            (obs, Some(rec.bathymetry.bed.clone()), format!("{}#{record}", path.display()))
        }
    };
    let start = Instant::now();
    let est = run_inversion(&rom, &obs, &cfg.inversion)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut meta = vec![
        ("model".to_string(), rom.kind().to_string()),
        ("observations".to_string(), label),
        ("n_obs".to_string(), obs.n_obs().to_string()),
    ];
    let rmse = truth.as_ref().map(|t| grid_rmse(&est.bathymetry_map.bed, t)).transpose()?;
    if let Some(r) = rmse {
        meta.push(("rmse".to_string(), r.to_string()));
    }
    save_estimate(&est, &meta, out)?;
    if let Some(p) = save_obs {
        save_observations(&obs, &geometry, p)?;
    }
    if let Some(dir) = heatmaps {
        write_case_heatmaps(dir, truth.as_ref(), &est)?;
    }

    let znorm = est.z_map.iter().map(|z| z * z).sum::<f64>().sqrt();
    println!(
        "|z_map| = {znorm:.4}, iterations {}, converged {}, objective {:.6} -> {:.6}, {elapsed:.2}s",
        est.iterations_used,
        est.converged,
        est.objective_trace[0],
        est.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(r) = rmse {
        println!("bathymetry rmse vs truth: {r:.4} m");
    }
    Ok(())
}

pub struct EvaluateRequest {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub test: Option<PathBuf>,
    pub mask_points: Option<usize>,
    pub max_inversions: usize,
    pub noise_seed: u64,
    pub config: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

fn split_row(
    rom: &AnyRom,
    name: &str,
    ds: &Dataset,
    idx: &[usize],
    plan: &ObservationPlan,
    cfg: &RunConfig,
    max_inversions: usize,
) -> CliResult<EvalRow> {
    if idx.is_empty() {
        return Err(CliError::Validation(format!("{name} split is empty")));
    }
    let exec = execution();
    let heads = reconstruction_rmse(rom, ds, idx, exec)?;
    let inv_idx = &idx[..idx.len().min(max_inversions)];
    let inversion = if inv_idx.is_empty() {
        f64::NAN
    } else {
        let r = inversion_rmses(rom, ds, inv_idx, plan, &cfg.inversion, exec)?;
        r.iter().sum::<f64>() / r.len() as f64
    };
    Ok(EvalRow { split: name.to_string(), n: idx.len(), heads, inversion })
}

pub fn evaluate(req: &EvaluateRequest) -> CliResult {
    let cfg = load_config(req.config.as_deref())?;
    if let Some(p) = &req.csv {
        check_parent(p)?;
    }
    let rom = model(&req.model)?;
    let train = dataset(&req.dataset)?;
    let test = req.test.as_deref().map(dataset).transpose()?;
    for ds in std::iter::once(&train).chain(test.as_ref()) {
        if ds.geometry != rom.geometry() {
            return Err(validation("dataset geometry differs from the model"));
        }
    }
    let plan = ObservationPlan { points: req.mask_points, noise: cfg.observation_noise, seed: req.noise_seed };
    let (train_idx, val_idx) = train_validation_split(train.len());
    let mut rows = vec![
        split_row(&rom, "train", &train, &train_idx, &plan, &cfg, req.max_inversions)?,
        split_row(&rom, "validation", &train, &val_idx, &plan, &cfg, req.max_inversions)?,
    ];
    if let Some(t) = &test {
        let idx: Vec<usize> = (0..t.len()).collect();
        rows.push(split_row(&rom, "test", t, &idx, &plan, &cfg, req.max_inversions)?);
    }
    print!("{}", format_eval_table(rom.kind(), &rows));
    if let Some(p) = &req.csv {
        std::fs::write(p, eval_table_csv(rom.kind(), &rows))?;
    }
    Ok(())
}

fn prepare_out_dir(dir: &Path) -> CliResult {
    check_parent(dir)?;
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn diagnose_hessian(model_path: &Path, dataset_path: &Path, record: usize, step: f64, out_dir: &Path) -> CliResult {
    if !(step > 0.0) {
        return Err(validation("--step must be positive"));
    }
    let rom = model(model_path)?;
    let ds = dataset(dataset_path)?;
    if record >= ds.len() {
        return Err(validation(format!("--record {record} is out of range (dataset has {})", ds.len())));
    }
    if ds.geometry != rom.geometry() {
        return Err(validation("dataset geometry differs from the model"));
    }
    prepare_out_dir(out_dir)?;
    let rec = &ds.records[record];
    let z = rom.encode_latent(&rec.bathymetry, &rec.bc)?;
    let spectra = LossTerm::ALL
        .iter()
        .map(|&t| loss_term_spectrum(&rom, t, &z, rec, step, execution()))
        .collect::<riverbed::Result<Vec<_>>>()?;
    let mut csv = String::from("index,u,v,s\n");
    for i in 0..z.len() {
        csv.push_str(&format!("{i},{},{},{}\n", spectra[0][i], spectra[1][i], spectra[2][i]));
    }
    std::fs::write(out_dir.join("hessian.csv"), csv)?;
    let mut summary = String::from("term  max_singular_value  index_below_1pct\n");
    for (t, s) in LossTerm::ALL.iter().zip(&spectra) {
        summary.push_str(&format!("{:<5} {:>18.6e} {:>17}\n", t.name(), s[0], decay_index(s, 0.01)));
    }
    std::fs::write(out_dir.join("hessian.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| validation(format!("cannot parse `{s}` in {flag}"))))
        .collect()
}

pub fn diagnose_mahalanobis(
    model_path: &Path,
    train_path: &Path,
    tests: &[String],
    mask_points: Option<usize>,
    noise_seed: u64,
    config: Option<&Path>,
    out_dir: &Path,
) -> CliResult {
    let cfg = load_config(config)?;
    let mut labelled = Vec::with_capacity(tests.len());
    for t in tests {
        let (label, path) = t.split_once('=').ok_or_else(|| validation(format!("--test `{t}` is not label=path")))?;
        labelled.push((label.to_string(), PathBuf::from(path)));
    }
    let rom = model(model_path)?;
    let train = dataset(train_path)?;
    let sets = labelled
        .into_iter()
        .map(|(l, p)| Ok((l, dataset(&p)?)))
        .collect::<CliResult<Vec<_>>>()?;
    prepare_out_dir(out_dir)?;
    let exec = execution();
    let stats = ShiftStats::fit(&rom, &train, TrainStats::DEFAULT_RANK, exec)?;
    let plan = ObservationPlan { points: mask_points, noise: cfg.observation_noise, seed: noise_seed };
    let report = shift_report(&rom, &stats, &sets, &plan, &cfg.inversion, exec)?;
    std::fs::write(out_dir.join("mahalanobis.csv"), report.to_csv())?;
    std::fs::write(out_dir.join("mahalanobis.txt"), report.summary())?;
    print!("{}", report.summary());
    Ok(())
}

pub fn diagnose_sparsity(
    model_path: &Path,
    dataset_path: &Path,
    counts: &str,
    max_records: Option<usize>,
    noise_seed: u64,
    config: Option<&Path>,
    out_dir: &Path,
) -> CliResult {
    let cfg = load_config(config)?;
    let counts: Vec<Option<usize>> = counts
        .split(',')
        .map(|c| match c.trim() {
            "full" => Ok(None),
            n => n.parse().map(Some).map_err(|_| validation(format!("cannot parse `{n}` in --counts"))),
        })
        .collect::<CliResult<_>>()?;
    let rom = model(model_path)?;
    let ds = dataset(dataset_path)?;
    let n = max_records.unwrap_or(ds.len()).min(ds.len());
    if n == 0 {
        return Err(validation("no records selected"));
    }
    let idx: Vec<usize> = (0..n).collect();
    let exec = execution();
    let report = sparsity_sweep(&rom, &ds, &idx, &counts, cfg.observation_noise, noise_seed, &cfg.inversion, exec)?;
    prepare_out_dir(out_dir)?;
    std::fs::write(out_dir.join("sparsity.csv"), report.to_csv())?;
    std::fs::write(out_dir.join("sparsity.txt"), report.summary())?;

    // heatmaps for the first record at the sparsest count
    let rec = &ds.records[0];
    let mask = mask_for(&ds, *counts.last().unwrap_or(&None))?;
    let obs = observe(&rec.flow, &rec.bc, &mask, cfg.observation_noise, noise_seed)?;
    let est = run_inversion(&rom, &obs, &cfg.inversion)?;
    write_case_heatmaps(&out_dir.join("heatmaps"), Some(&rec.bathymetry.bed), &est)?;
    print!("{}", report.summary());
    Ok(())
}

pub fn diagnose_latent_sweep(
    train_path: &Path,
    test_path: &Path,
    dims: &str,
    mask_points: Option<usize>,
    noise_seed: u64,
    config: Option<&Path>,
    out_dir: &Path,
) -> CliResult {
    let cfg = load_config(config)?;
    let dims: Vec<usize> = parse_list("--dims", dims)?;
    if dims.is_empty() || dims.contains(&0) || dims.windows(2).any(|w| w[1] < w[0]) {
        return Err(validation("--dims must be positive and ascending"));
    }
    let train = dataset(train_path)?;
    let test = dataset(test_path)?;
    prepare_out_dir(out_dir)?;
    let plan = ObservationPlan { points: mask_points, noise: cfg.observation_noise, seed: noise_seed };
    let report = latent_dim_sweep(&train, &test, &dims, &cfg.rom.sve, &cfg.rom.hyper, &plan, &cfg.inversion, execution())?;
    std::fs::write(out_dir.join("latent_sweep.csv"), report.to_csv())?;
    std::fs::write(out_dir.join("latent_sweep.txt"), report.summary())?;
    print!("{}", report.summary());
    Ok(())
}
