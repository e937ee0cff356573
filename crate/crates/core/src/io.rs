//! Dataset persistence on top of [`crate::container`].

use std::path::Path;

use crate::container::{Container, Dtype, NamedArray};
use crate::error::{Error, Result};
use crate::fields::{BathymetryField, BoundaryConditions, ChannelGeometry, Dataset, FlowField, Grid, Record};

pub const RECORD_FIELDS: [&str; 6] = ["bathymetry", "u", "v", "depth", "surface", "bc"];

pub fn geometry_arrays(geometry: &ChannelGeometry) -> Result<[NamedArray; 2]> {
    Ok([
        NamedArray::u32(
            "geometry/dims",
            &[2],
            vec![geometry.n_across as u32, geometry.n_along as u32],
        )?,
        NamedArray::f64("geometry/spacing", &[2], vec![geometry.dx, geometry.dy])?,
    ])
}

pub fn read_geometry(c: &Container) -> Result<ChannelGeometry> {
    let dims = c.get("geometry/dims")?.to_u32()?;
    let spacing = c.f64_with_dims("geometry/spacing", &[2])?;
    if dims.len() != 2 {
        return Err(Error::DimensionMismatch("geometry/dims must hold 2 values".into()));
    }
    ChannelGeometry::new(dims[0] as usize, dims[1] as usize, spacing[0], spacing[1])
}

pub fn meta_arrays(metadata: &[(String, String)]) -> Result<Vec<NamedArray>> {
    metadata
        .iter()
        .map(|(k, v)| NamedArray::text(format!("meta/{k}"), v))
        .collect()
}

pub fn read_meta(c: &Container) -> Result<Vec<(String, String)>> {
    c.arrays
        .iter()
        .filter_map(|a| a.name.strip_prefix("meta/").map(|k| (k, a)))
        .map(|(k, a)| Ok((k.to_string(), a.to_text()?)))
        .collect()
}

fn push_values(c: &mut Container, name: String, dims: &[usize], values: &[f64], dtype: Dtype) -> Result<()> {
    let arr = match dtype {
        Dtype::F32 => NamedArray::f32_from(name, dims, values)?,
        Dtype::F64 => NamedArray::f64(name, dims, values.to_vec())?,
        Dtype::U32 => return Err(Error::InvalidArgument("field payloads must be real-valued".into())),
    };
    c.push(arr);
    Ok(())
}

pub fn dataset_container(dataset: &Dataset, dtype: Dtype) -> Result<Container> {
    let g = dataset.geometry;
    let grid = [g.n_across, g.n_along];
    let mut c = Container::new();
    for a in geometry_arrays(&g)? {
        c.push(a);
    }
    for a in meta_arrays(&dataset.metadata)? {
        c.push(a);
    }
    for (i, rec) in dataset.records.iter().enumerate() {
        push_values(&mut c, format!("rec{i}/bathymetry"), &grid, rec.bathymetry.bed.as_slice(), dtype)?;
        push_values(&mut c, format!("rec{i}/u"), &grid, rec.flow.u.as_slice(), dtype)?;
        push_values(&mut c, format!("rec{i}/v"), &grid, rec.flow.v.as_slice(), dtype)?;
        push_values(&mut c, format!("rec{i}/depth"), &grid, rec.flow.depth.as_slice(), dtype)?;
        push_values(&mut c, format!("rec{i}/surface"), &[g.n_along], &rec.flow.surface, dtype)?;
        push_values(&mut c, format!("rec{i}/bc"), &[2], &rec.bc.as_array(), dtype)?;
    }
    Ok(c)
}

/// Writes a dataset with 32-bit payloads.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    save_dataset_with(dataset, path, Dtype::F32)
}

pub fn save_dataset_with(dataset: &Dataset, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    dataset_container(dataset, dtype)?.save(path)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_container(&Container::load(path)?)
}

pub fn dataset_from_container(c: &Container) -> Result<Dataset> {
    let g = read_geometry(c)?;
    let grid = [g.n_across, g.n_along];
    let n_records = c
        .arrays
        .iter()
        .filter(|a| a.name.starts_with("rec") && a.name.ends_with("/bathymetry"))
        .count();
    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let read = |field: &str, dims: &[usize]| c.f64_with_dims(&format!("rec{i}/{field}"), dims);
        let bed = Grid::from_vec(g.n_across, g.n_along, read("bathymetry", &grid)?)?;
        let u = Grid::from_vec(g.n_across, g.n_along, read("u", &grid)?)?;
        let v = Grid::from_vec(g.n_across, g.n_along, read("v", &grid)?)?;
        let depth = Grid::from_vec(g.n_across, g.n_along, read("depth", &grid)?)?;
        let surface = read("surface", &[g.n_along])?;
        let bc = read("bc", &[2])?;
        records.push(Record {
            bathymetry: BathymetryField::new(g, bed)?,
            bc: BoundaryConditions::new(bc[0], bc[1])?,
            flow: FlowField { geometry: g, u, v, depth, surface },
        });
    }
    Dataset::new(g, records, read_meta(c)?)
}

/// Rounds every stored value to the nearest f32 so that a 32-bit save is lossless.
pub fn quantize_record(rec: &mut Record) {
    let q = |x: &mut f64| *x = f64::from(*x as f32);
    rec.bathymetry.bed.as_mut_slice().iter_mut().for_each(q);
    rec.flow.u.as_mut_slice().iter_mut().for_each(q);
    rec.flow.v.as_mut_slice().iter_mut().for_each(q);
    rec.flow.depth.as_mut_slice().iter_mut().for_each(q);
    rec.flow.surface.iter_mut().for_each(q);
    q(&mut rec.bc.discharge);
    q(&mut rec.bc.downstream_surface);
}
