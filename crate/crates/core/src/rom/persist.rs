//! Model files: the binary container with a `model/kind` tag.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::pca::{PcaArchitecture, PcaBasis, PcaRomModel};
use super::sve::{SveArchitecture, SveModel};
use super::{BcScaler, DecodedFields, FieldScaler, LatentRom, TrainingCurve};
use crate::container::{Container, NamedArray};
use crate::error::{Error, Result};
use crate::fields::{BathymetryField, BoundaryConditions, ChannelGeometry, ObservationMask};
use crate::io::{geometry_arrays, meta_arrays, read_geometry, read_meta};
use crate::nn::{Activation, Mlp};

/// Either trained surrogate, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyRom {
    Sve(SveModel),
    Pca(PcaRomModel),
}

impl AnyRom {
    pub fn as_rom(&self) -> &dyn LatentRom {
        match self {
            AnyRom::Sve(m) => m,
            AnyRom::Pca(m) => m,
        }
    }

    pub fn curve(&self) -> &TrainingCurve {
        match self {
            AnyRom::Sve(m) => &m.curve,
            AnyRom::Pca(m) => &m.curve,
        }
    }
}

impl LatentRom for AnyRom {
    fn geometry(&self) -> ChannelGeometry {
        self.as_rom().geometry()
    }

    fn latent_dim(&self) -> usize {
        self.as_rom().latent_dim()
    }

    fn kind(&self) -> &'static str {
        self.as_rom().kind()
    }

    fn decode(&self, z: &[f64], bc: &BoundaryConditions) -> Result<DecodedFields> {
        self.as_rom().decode(z, bc)
    }

    fn velocity_jacobian(&self, z: &[f64], bc: &BoundaryConditions, mask: &ObservationMask) -> Result<DMatrix<f64>> {
        self.as_rom().velocity_jacobian(z, bc, mask)
    }

    fn bathymetry_jacobian(&self, z: &[f64], bc: &BoundaryConditions) -> Result<DMatrix<f64>> {
        self.as_rom().bathymetry_jacobian(z, bc)
    }

    fn encode_latent(&self, bathy: &BathymetryField, bc: &BoundaryConditions) -> Result<Vec<f64>> {
        self.as_rom().encode_latent(bathy, bc)
    }

    fn predict_with_jacobian(
        &self,
        z: &[f64],
        bc: &BoundaryConditions,
        mask: &ObservationMask,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.as_rom().predict_with_jacobian(z, bc, mask)
    }

    fn decode_bathymetry_batch(&self, zs: &DMatrix<f64>, bc: &BoundaryConditions) -> Result<DMatrix<f64>> {
        self.as_rom().decode_bathymetry_batch(zs, bc)
    }
}

impl From<SveModel> for AnyRom {
    fn from(m: SveModel) -> Self {
        AnyRom::Sve(m)
    }
}

impl From<PcaRomModel> for AnyRom {
    fn from(m: PcaRomModel) -> Self {
        AnyRom::Pca(m)
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed(msg.into())
}

fn vec_array(name: &str, data: &[f64]) -> Result<NamedArray> {
    NamedArray::f64(name, &[data.len()], data.to_vec())
}

/// Stored row-major with dims `[rows, cols]`.
fn mat_array(name: &str, m: &DMatrix<f64>) -> Result<NamedArray> {
    NamedArray::f64(name, &[m.nrows(), m.ncols()], m.transpose().as_slice().to_vec())
}

fn read_vec(c: &Container, name: &str) -> Result<Vec<f64>> {
    let a = c.get(name)?;
    if a.dims.len() != 1 {
        return Err(Error::DimensionMismatch(format!("`{name}` must be one-dimensional")));
    }
    Ok(a.to_f64())
}

fn read_mat(c: &Container, name: &str) -> Result<DMatrix<f64>> {
    let a = c.get(name)?;
    if a.dims.len() != 2 {
        return Err(Error::DimensionMismatch(format!("`{name}` must be two-dimensional")));
    }
    let (r, cols) = (a.dims[0] as usize, a.dims[1] as usize);
    Ok(DMatrix::from_row_slice(r, cols, &a.to_f64()))
}

fn read_scalar_u32(c: &Container, name: &str) -> Result<u32> {
    c.get(name)?.to_u32()?.first().copied().ok_or_else(|| malformed(format!("`{name}` is empty")))
}

fn widths_array(name: &str, w: &[usize]) -> Result<NamedArray> {
    NamedArray::u32(name, &[w.len()], w.iter().map(|&x| x as u32).collect())
}

fn read_widths(c: &Container, name: &str) -> Result<Vec<usize>> {
    Ok(c.get(name)?.to_u32()?.into_iter().map(|x| x as usize).collect())
}

fn read_activation(c: &Container) -> Result<Activation> {
    let code = read_scalar_u32(c, "arch/activation")?;
    Activation::from_code(code).ok_or_else(|| malformed(format!("unknown activation code {code}")))
}

fn push_common(c: &mut Container, kind: &str, geometry: &ChannelGeometry, curve: &TrainingCurve, seed: u64) -> Result<()> {
    c.push(NamedArray::text("model/kind", kind)?);
    for a in geometry_arrays(geometry)? {
        c.push(a);
    }
    c.push(vec_array("curve/train", &curve.train)?);
    c.push(vec_array("curve/validation", &curve.validation)?);
    c.push(NamedArray::u32("curve/best_epoch", &[1], vec![curve.best_epoch as u32])?);
    for a in meta_arrays(&[
        ("seed".to_string(), seed.to_string()),
        ("epochs".to_string(), curve.train.len().saturating_sub(1).to_string()),
        ("best_validation".to_string(), curve.validation.get(curve.best_epoch).map_or(String::new(), |v| v.to_string())),
    ])? {
        c.push(a);
    }
    Ok(())
}

fn read_curve(c: &Container) -> Result<TrainingCurve> {
    Ok(TrainingCurve {
        train: read_vec(c, "curve/train")?,
        validation: read_vec(c, "curve/validation")?,
        best_epoch: read_scalar_u32(c, "curve/best_epoch")? as usize,
    })
}

fn read_seed(c: &Container) -> Result<u64> {
    let meta = read_meta(c)?;
    let seed = meta.iter().find(|(k, _)| k == "seed").ok_or_else(|| Error::MissingArray("meta/seed".into()))?;
    seed.1.parse().map_err(|_| malformed("meta/seed is not an integer"))
}

fn push_field_scaler(c: &mut Container, name: &str, s: &FieldScaler) -> Result<()> {
    c.push(vec_array(&format!("scaler/{name}/mean"), &s.mean)?);
    c.push(vec_array(&format!("scaler/{name}/std"), &[s.std])?);
    Ok(())
}

fn read_field_scaler(c: &Container, name: &str, m: usize) -> Result<FieldScaler> {
    let mean = c.f64_with_dims(&format!("scaler/{name}/mean"), &[m])?;
    let std = c.f64_with_dims(&format!("scaler/{name}/std"), &[1])?[0];
    if !(std > 0.0) {
        return Err(malformed(format!("scaler `{name}` has non-positive std")));
    }
    Ok(FieldScaler { mean, std })
}

fn push_bc_scaler(c: &mut Container, s: &BcScaler) -> Result<()> {
    c.push(vec_array("scaler/bc", &[s.mean[0], s.mean[1], s.std[0], s.std[1]])?);
    Ok(())
}

fn read_bc_scaler(c: &Container) -> Result<BcScaler> {
    let v = c.f64_with_dims("scaler/bc", &[4])?;
    Ok(BcScaler { mean: [v[0], v[1]], std: [v[2], v[3]] })
}

pub fn sve_container(model: &SveModel) -> Result<Container> {
    let mut c = Container::new();
    push_common(&mut c, "sve", &model.geometry, &model.curve, model.seed)?;
    let a = &model.arch;
    c.push(NamedArray::u32("arch/latent_dim", &[1], vec![a.latent_dim as u32])?);
    c.push(widths_array("arch/encoder_widths", &a.encoder_widths)?);
    c.push(widths_array("arch/decoder_widths", &a.decoder_widths)?);
    c.push(NamedArray::u32("arch/activation", &[1], vec![a.activation.code()])?);
    c.push(vec_array("arch/kl_weight", &[a.kl_weight])?);
    c.push(NamedArray::u32("arch/bc_embedding", &[1], vec![a.bc_embedding as u32])?);
    c.push(vec_array("weights", &model.params)?);
    push_field_scaler(&mut c, "s", &model.s_scaler)?;
    push_field_scaler(&mut c, "u", &model.u_scaler)?;
    push_field_scaler(&mut c, "v", &model.v_scaler)?;
    push_bc_scaler(&mut c, &model.bc_scaler)?;
    Ok(c)
}

fn sve_from_container(c: &Container) -> Result<SveModel> {
    let geometry = read_geometry(c)?;
    let arch = SveArchitecture {
        latent_dim: read_scalar_u32(c, "arch/latent_dim")? as usize,
        encoder_widths: read_widths(c, "arch/encoder_widths")?,
        decoder_widths: read_widths(c, "arch/decoder_widths")?,
        activation: read_activation(c)?,
        kl_weight: c.f64_with_dims("arch/kl_weight", &[1])?[0],
        bc_embedding: read_scalar_u32(c, "arch/bc_embedding")? != 0,
    };
    arch.validate()?;
    let m = geometry.n_nodes();
    let k = arch.latent_dim;
    let nbc = if arch.bc_embedding { 2 } else { 0 };
    let encoder = Mlp::new(m + nbc, &arch.encoder_widths, 2 * k, arch.activation, 0);
    let decoder = Mlp::new(k + nbc, &arch.decoder_widths, 3 * m, arch.activation, encoder.end());
    let params = c.f64_with_dims("weights", &[decoder.end()])?;
    Ok(SveModel {
        geometry,
        params,
        encoder,
        decoder,
        s_scaler: read_field_scaler(c, "s", m)?,
        u_scaler: read_field_scaler(c, "u", m)?,
        v_scaler: read_field_scaler(c, "v", m)?,
        bc_scaler: read_bc_scaler(c)?,
        curve: read_curve(c)?,
        seed: read_seed(c)?,
        arch,
    })
}

fn push_basis(c: &mut Container, name: &str, b: &PcaBasis) -> Result<()> {
    c.push(vec_array(&format!("basis/{name}/mean"), b.mean.as_slice())?);
    c.push(mat_array(&format!("basis/{name}/components"), &b.components)?);
    c.push(vec_array(&format!("basis/{name}/variance"), b.explained_variance.as_slice())?);
    Ok(())
}

fn read_basis(c: &Container, name: &str, m: usize, k: usize) -> Result<PcaBasis> {
    let components = read_mat(c, &format!("basis/{name}/components"))?;
    if components.shape() != (m, k) {
        return Err(Error::DimensionMismatch(format!("basis `{name}` has shape {:?}", components.shape())));
    }
    Ok(PcaBasis {
        mean: DVector::from_vec(c.f64_with_dims(&format!("basis/{name}/mean"), &[m])?),
        components,
        explained_variance: DVector::from_vec(c.f64_with_dims(&format!("basis/{name}/variance"), &[k])?),
    })
}

pub fn pca_container(model: &PcaRomModel) -> Result<Container> {
    let mut c = Container::new();
    push_common(&mut c, "pca", &model.geometry, &model.curve, model.seed)?;
    let a = &model.arch;
    c.push(NamedArray::u32("arch/latent_dim", &[1], vec![a.latent_dim as u32])?);
    c.push(widths_array("arch/hidden_widths", &a.hidden_widths)?);
    c.push(NamedArray::u32("arch/activation", &[1], vec![a.activation.code()])?);
    c.push(NamedArray::u32("arch/bc_embedding", &[1], vec![a.bc_embedding as u32])?);
    push_basis(&mut c, "input", &model.input_basis)?;
    push_basis(&mut c, "u", &model.u_basis)?;
    push_basis(&mut c, "v", &model.v_basis)?;
    push_basis(&mut c, "s", &model.s_basis)?;
    c.push(vec_array("coeff_scale", &model.coeff_scale)?);
    c.push(mat_array("linear", &model.linear)?);
    c.push(vec_array("weights", &model.params)?);
    push_bc_scaler(&mut c, &model.bc_scaler)?;
    Ok(c)
}

fn pca_from_container(c: &Container) -> Result<PcaRomModel> {
    let geometry = read_geometry(c)?;
    let arch = PcaArchitecture {
        latent_dim: read_scalar_u32(c, "arch/latent_dim")? as usize,
        hidden_widths: read_widths(c, "arch/hidden_widths")?,
        activation: read_activation(c)?,
        bc_embedding: read_scalar_u32(c, "arch/bc_embedding")? != 0,
    };
    let m = geometry.n_nodes();
    let k = arch.latent_dim;
    if k == 0 {
        return Err(malformed("latent_dim is zero"));
    }
    let nbc = if arch.bc_embedding { 2 } else { 0 };
    let residual = Mlp::new(k + nbc, &arch.hidden_widths, 3 * k, arch.activation, 0);
    let linear = read_mat(c, "linear")?;
    if linear.shape() != (3 * k, k + nbc + 1) {
        return Err(Error::DimensionMismatch("regressor matrix shape".into()));
    }
    let scale = c.f64_with_dims("coeff_scale", &[3])?;
    Ok(PcaRomModel {
        geometry,
        input_basis: read_basis(c, "input", m, k)?,
        u_basis: read_basis(c, "u", m, k)?,
        v_basis: read_basis(c, "v", m, k)?,
        s_basis: read_basis(c, "s", m, k)?,
        coeff_scale: [scale[0], scale[1], scale[2]],
        linear,
        params: c.f64_with_dims("weights", &[residual.end()])?,
        residual,
        bc_scaler: read_bc_scaler(c)?,
        curve: read_curve(c)?,
        seed: read_seed(c)?,
        arch,
    })
}

pub fn rom_container(model: &AnyRom) -> Result<Container> {
    match model {
        AnyRom::Sve(m) => sve_container(m),
        AnyRom::Pca(m) => pca_container(m),
    }
}

pub fn rom_from_container(c: &Container) -> Result<AnyRom> {
    match c.text("model/kind")?.as_str() {
        "sve" => Ok(AnyRom::Sve(sve_from_container(c)?)),
        "pca" => Ok(AnyRom::Pca(pca_from_container(c)?)),
        other => Err(malformed(format!("unknown model kind `{other}`"))),
    }
}

pub fn save_rom(model: &AnyRom, path: impl AsRef<Path>) -> Result<()> {
    rom_container(model)?.save(path)
}

pub fn load_rom(path: impl AsRef<Path>) -> Result<AnyRom> {
    rom_from_container(&Container::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_dataset, GenerationSpec};
    use crate::par::Execution;
    use crate::prior::PriorSpec;
    use crate::rom::pca::train_pca_rom;
    use crate::rom::sve::train_sve;
    use crate::rom::TrainHyper;

    fn dataset() -> crate::fields::Dataset {
        let spec = GenerationSpec {
            geometry: ChannelGeometry::new(3, 5, 20.0, 5.0).unwrap(),
            prior: PriorSpec { n_modes: 10, ..PriorSpec::default() },
            ..GenerationSpec::default()
        };
        generate_dataset(&spec, 20, 3, Execution::Sequential).unwrap().0
    }

    #[test]
    fn sve_round_trip_is_exact() {
        let ds = dataset();
        let arch = SveArchitecture { latent_dim: 2, encoder_widths: vec![6], decoder_widths: vec![], ..Default::default() };
        let hyper = TrainHyper { epochs: 2, batch_size: 4, step_size: 1e-2, seed: 5 };
        let model = AnyRom::from(train_sve(&ds, &arch, &hyper, Execution::Sequential).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vgm");
        save_rom(&model, &path).unwrap();
        assert_eq!(load_rom(&path).unwrap(), model);
    }

    #[test]
    fn pca_round_trip_is_exact() {
        let ds = dataset();
        let arch = PcaArchitecture { latent_dim: 3, hidden_widths: vec![4], ..Default::default() };
        let hyper = TrainHyper { epochs: 2, batch_size: 4, step_size: 1e-2, seed: 6 };
        let model = AnyRom::from(train_pca_rom(&ds, &arch, &hyper, Execution::Sequential).unwrap());
        let bytes = rom_container(&model).unwrap().to_bytes().unwrap();
        let back = rom_from_container(&Container::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.kind(), "pca");
    }

    #[test]
    fn unknown_kind_and_wrong_sizes_are_rejected() {
        let ds = dataset();
        let arch = PcaArchitecture { latent_dim: 2, hidden_widths: vec![3], ..Default::default() };
        let hyper = TrainHyper { epochs: 0, batch_size: 4, step_size: 1e-2, seed: 0 };
        let model = AnyRom::from(train_pca_rom(&ds, &arch, &hyper, Execution::Sequential).unwrap());
        let mut c = rom_container(&model).unwrap();
        c.arrays.retain(|a| a.name != "weights");
        assert!(matches!(rom_from_container(&c), Err(Error::MissingArray(_))));
        c.push(vec_array("weights", &[1.0, 2.0]).unwrap());
        assert!(matches!(rom_from_container(&c), Err(Error::DimensionMismatch(_))));
        let mut c = rom_container(&model).unwrap();
        c.arrays.retain(|a| a.name != "model/kind");
        c.push(NamedArray::text("model/kind", "conv").unwrap());
        assert!(matches!(rom_from_container(&c), Err(Error::Malformed(_))));
    }
}
