//! Flat `block.key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must be known;
//! duplicates are rejected. Unset keys keep their defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fields::ChannelGeometry;
use crate::generate::GenerationSpec;
use crate::inversion::{InversionOptions, JacobianMode};
use crate::nn::Activation;
use crate::prior::{MeanShape, ParabolicMeanSpec, TrapezoidalMeanSpec};
use crate::rom::pca::PcaArchitecture;
use crate::rom::sve::SveArchitecture;
use crate::rom::TrainHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RomKind {
    #[default]
    Sve,
    Pca,
}

impl FromStr for RomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sve" => Ok(RomKind::Sve),
            "pca" => Ok(RomKind::Pca),
            other => Err(Error::Config(format!("unknown rom kind `{other}` (expected sve or pca)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomConfig {
    pub kind: RomKind,
    pub sve: SveArchitecture,
    pub pca: PcaArchitecture,
    pub hyper: TrainHyper,
}

impl Default for RomConfig {
    fn default() -> Self {
        Self { kind: RomKind::Sve, sve: SveArchitecture::default(), pca: PcaArchitecture::default(), hyper: TrainHyper::default() }
    }
}

impl RomConfig {
    pub fn set_latent_dim(&mut self, k: usize) {
        self.sve.latent_dim = k;
        self.pca.latent_dim = k;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub generation: GenerationSpec,
    pub rom: RomConfig,
    pub inversion: InversionOptions,
    /// Observation noise standard deviation for synthesised observations (m/s).
    pub observation_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generation: GenerationSpec::default(),
            rom: RomConfig::default(),
            inversion: InversionOptions::default(),
            observation_noise: 0.05,
        }
    }
}

pub const KNOWN_KEYS: &[&str] = &[
    "geometry.preset",
    "geometry.n_across",
    "geometry.n_along",
    "geometry.dx",
    "geometry.dy",
    "prior.family",
    "prior.sigma",
    "prior.len_along",
    "prior.len_across",
    "prior.nugget",
    "prior.n_modes",
    "prior.mean_elevation",
    "prior.bank_rise",
    "prior.along_trend",
    "prior.bottom_fraction",
    "forward.manning_n",
    "forward.min_depth",
    "forward.max_backwater_slope",
    "forward.discharge_min",
    "forward.discharge_max",
    "forward.surface_min",
    "forward.surface_max",
    "rom.kind",
    "rom.latent_dim",
    "rom.encoder_widths",
    "rom.decoder_widths",
    "rom.hidden_widths",
    "rom.activation",
    "rom.kl_weight",
    "rom.bc_embedding",
    "rom.epochs",
    "rom.batch_size",
    "rom.step_size",
    "rom.seed",
    "inversion.max_iterations",
    "inversion.grad_tol",
    "inversion.alpha_init",
    "inversion.shrink",
    "inversion.max_backtracks",
    "inversion.sufficient_decrease",
    "inversion.jacobian",
    "inversion.fd_delta",
    "inversion.uq_samples",
    "inversion.seed",
    "inversion.noise",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse `{value}` as a boolean for key `{key}`"))),
    }
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|w| parse(key, w.trim())).collect()
}

/// Splits the text into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `block.key = value`", n + 1)))?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1)));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = RunConfig::default();
        let get = |k: &str| pairs.get(k).map(String::as_str);

        // Whole-block choices first so that individual keys refine them.
        if let Some(v) = get("geometry.preset") {
            cfg.generation.geometry = match v {
                "desk" => ChannelGeometry::desk(),
                "full_scale" | "full" => ChannelGeometry::full_scale(),
                other => return Err(Error::Config(format!("unknown geometry preset `{other}`"))),
            };
        }
        if let Some(v) = get("prior.family") {
            cfg.generation.prior.mean = match v {
                "parabolic" => MeanShape::Parabolic(ParabolicMeanSpec::default()),
                "trapezoidal" => MeanShape::Trapezoidal(TrapezoidalMeanSpec::default()),
                other => return Err(Error::Config(format!("unknown prior family `{other}`"))),
            };
        }

        for (key, value) in &pairs {
            let (k, v) = (key.as_str(), value.as_str());
            let g = &mut cfg.generation;
            match k {
                "geometry.preset" | "prior.family" => {}
                "geometry.n_across" => g.geometry.n_across = parse(k, v)?,
                "geometry.n_along" => g.geometry.n_along = parse(k, v)?,
                "geometry.dx" => g.geometry.dx = parse(k, v)?,
                "geometry.dy" => g.geometry.dy = parse(k, v)?,
                "prior.sigma" => g.prior.kernel.sigma = parse(k, v)?,
                "prior.len_along" => g.prior.kernel.len_along = parse(k, v)?,
                "prior.len_across" => g.prior.kernel.len_across = parse(k, v)?,
                "prior.nugget" => g.prior.kernel.nugget = parse(k, v)?,
                "prior.n_modes" => g.prior.n_modes = parse(k, v)?,
                "prior.mean_elevation" => match &mut g.prior.mean {
                    MeanShape::Parabolic(p) => p.thalweg_elevation = parse(k, v)?,
                    MeanShape::Trapezoidal(t) => t.bottom_elevation = parse(k, v)?,
                },
                "prior.bank_rise" => match &mut g.prior.mean {
                    MeanShape::Parabolic(p) => p.bank_rise = parse(k, v)?,
                    MeanShape::Trapezoidal(t) => t.bank_rise = parse(k, v)?,
                },
                "prior.along_trend" => match &mut g.prior.mean {
                    MeanShape::Parabolic(p) => p.along_trend = parse(k, v)?,
                    MeanShape::Trapezoidal(t) => t.along_trend = parse(k, v)?,
                },
                "prior.bottom_fraction" => match &mut g.prior.mean {
                    MeanShape::Trapezoidal(t) => t.bottom_fraction = parse(k, v)?,
                    MeanShape::Parabolic(_) => {
                        return Err(Error::Config("`prior.bottom_fraction` requires prior.family = trapezoidal".into()))
                    }
                },
                "forward.manning_n" => g.forward.manning_n = parse(k, v)?,
                "forward.min_depth" => g.forward.min_depth = parse(k, v)?,
                "forward.max_backwater_slope" => g.forward.max_backwater_slope = parse(k, v)?,
                "forward.discharge_min" => g.bc.discharge.0 = parse(k, v)?,
                "forward.discharge_max" => g.bc.discharge.1 = parse(k, v)?,
                "forward.surface_min" => g.bc.downstream_surface.0 = parse(k, v)?,
                "forward.surface_max" => g.bc.downstream_surface.1 = parse(k, v)?,
                "rom.kind" => cfg.rom.kind = v.parse()?,
                "rom.latent_dim" => cfg.rom.set_latent_dim(parse(k, v)?),
                "rom.encoder_widths" => cfg.rom.sve.encoder_widths = parse_widths(k, v)?,
                "rom.decoder_widths" => cfg.rom.sve.decoder_widths = parse_widths(k, v)?,
                "rom.hidden_widths" => cfg.rom.pca.hidden_widths = parse_widths(k, v)?,
                "rom.activation" => {
                    let a = Activation::from_name(v).ok_or_else(|| Error::Config(format!("unknown activation `{v}`")))?;
                    cfg.rom.sve.activation = a;
                    cfg.rom.pca.activation = a;
                }
                "rom.kl_weight" => cfg.rom.sve.kl_weight = parse(k, v)?,
                "rom.bc_embedding" => {
                    let b = parse_bool(k, v)?;
                    cfg.rom.sve.bc_embedding = b;
                    cfg.rom.pca.bc_embedding = b;
                }
                "rom.epochs" => cfg.rom.hyper.epochs = parse(k, v)?,
                "rom.batch_size" => cfg.rom.hyper.batch_size = parse(k, v)?,
                "rom.step_size" => cfg.rom.hyper.step_size = parse(k, v)?,
                "rom.seed" => cfg.rom.hyper.seed = parse(k, v)?,
                "inversion.max_iterations" => cfg.inversion.max_iterations = parse(k, v)?,
                "inversion.grad_tol" => cfg.inversion.grad_tol = parse(k, v)?,
                "inversion.alpha_init" => cfg.inversion.alpha_init = parse(k, v)?,
                "inversion.shrink" => cfg.inversion.line_search.shrink = parse(k, v)?,
                "inversion.max_backtracks" => cfg.inversion.line_search.max_backtracks = parse(k, v)?,
                "inversion.sufficient_decrease" => cfg.inversion.line_search.sufficient_decrease = parse(k, v)?,
                "inversion.jacobian" => {
                    cfg.inversion.jacobian_mode = JacobianMode::from_name(v)
                        .ok_or_else(|| Error::Config(format!("unknown jacobian mode `{v}` (expected analytic or fd)")))?
                }
                "inversion.fd_delta" => cfg.inversion.fd_delta = parse(k, v)?,
                "inversion.uq_samples" => cfg.inversion.uq_samples = parse(k, v)?,
                "inversion.seed" => cfg.inversion.seed = parse(k, v)?,
                "inversion.noise" => cfg.observation_noise = parse(k, v)?,
                _ => unreachable!("key list and match arms disagree on `{k}`"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::InvalidArgument(m) | Error::DimensionMismatch(m) => Error::Config(m),
            other => other,
        };
        let g = &self.generation;
        ChannelGeometry::new(g.geometry.n_across, g.geometry.n_along, g.geometry.dx, g.geometry.dy).map_err(as_config)?;
        g.prior.kernel.validate().map_err(as_config)?;
        g.forward.validate().map_err(as_config)?;
        g.bc.validate().map_err(as_config)?;
        if g.prior.n_modes == 0 {
            return Err(Error::Config("prior.n_modes must be at least 1".into()));
        }
        self.rom.sve.validate().map_err(as_config)?;
        if self.rom.hyper.batch_size == 0 || !(self.rom.hyper.step_size > 0.0) {
            return Err(Error::Config("rom.batch_size and rom.step_size must be positive".into()));
        }
        self.inversion.validate().map_err(as_config)?;
        if !(self.observation_noise > 0.0) {
            return Err(Error::Config("inversion.noise must be positive".into()));
        }
        Ok(())
    }
}
