//! Grid geometry, field containers, observation masks and error metrics.
//!
//! Grids are stored row-major: row `i` runs across the channel (bank to
//! bank), column `j` runs along it (upstream to outlet). The flattened index
//! of node `(i, j)` is `i * n_along + j` everywhere in the crate.

use std::collections::HashMap;

use crate::error::{invalid, mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelGeometry {
    pub n_across: usize,
    pub n_along: usize,
    /// Along-channel node spacing (m).
    pub dx: f64,
    /// Across-channel node spacing (m).
    pub dy: f64,
}

impl ChannelGeometry {
    pub fn new(n_across: usize, n_along: usize, dx: f64, dy: f64) -> Result<Self> {
        if n_across < 3 || n_along < 3 {
            return Err(invalid(format!(
                "geometry needs at least 3x3 nodes, got {n_across}x{n_along}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(invalid(format!("spacing must be positive, got dx={dx} dy={dy}")));
        }
        Ok(Self { n_across, n_along, dx, dy })
    }

    /// 21 x 101 nodes at 16 m x 4 m.
    pub fn desk() -> Self {
        Self { n_across: 21, n_along: 101, dx: 16.0, dy: 4.0 }
    }

    /// 41 x 501 nodes, the full-resolution reach.
    pub fn full_scale() -> Self {
        Self { n_across: 41, n_along: 501, dx: 3.2, dy: 2.0 }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_across * self.n_along
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_along + col
    }
}

/// Dense row-major 2-D array of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(mismatch(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.get(i, j))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathymetryField {
    pub geometry: ChannelGeometry,
    /// Bed elevation (m, positive up), `n_across x n_along`.
    pub bed: Grid,
}

impl BathymetryField {
    pub fn new(geometry: ChannelGeometry, bed: Grid) -> Result<Self> {
        if bed.shape() != (geometry.n_across, geometry.n_along) {
            return Err(mismatch(format!(
                "bed grid {:?} does not match geometry {}x{}",
                bed.shape(),
                geometry.n_across,
                geometry.n_along
            )));
        }
        if !bed.is_finite() {
            return Err(Error::NonFinite("bed elevation".into()));
        }
        Ok(Self { geometry, bed })
    }

    pub fn from_flat(geometry: ChannelGeometry, flat: Vec<f64>) -> Result<Self> {
        Self::new(geometry, Grid::from_vec(geometry.n_across, geometry.n_along, flat)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub geometry: ChannelGeometry,
    /// Along-channel velocity (m/s).
    pub u: Grid,
    /// Across-channel velocity (m/s).
    pub v: Grid,
    /// Water depth (m).
    pub depth: Grid,
    /// Water-surface elevation per column (m).
    pub surface: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryConditions {
    /// Upstream discharge (m^3/s).
    pub discharge: f64,
    /// Free-surface elevation at the outlet (m).
    pub downstream_surface: f64,
}

impl BoundaryConditions {
    pub fn new(discharge: f64, downstream_surface: f64) -> Result<Self> {
        if !(discharge > 0.0) || !discharge.is_finite() {
            return Err(invalid(format!("discharge must be positive, got {discharge}")));
        }
        if !downstream_surface.is_finite() {
            return Err(invalid("downstream surface must be finite"));
        }
        Ok(Self { discharge, downstream_surface })
    }

    /// Checks that the outlet cross-section is wet under this stage.
    pub fn check_outlet(&self, bathy: &BathymetryField) -> Result<()> {
        let last = bathy.geometry.n_along - 1;
        let min_bed = bathy.bed.column(last).fold(f64::INFINITY, f64::min);
        if self.downstream_surface <= min_bed {
            return Err(Error::InfeasibleBathymetry(format!(
                "outlet stage {:.3} m is below the outlet bed minimum {:.3} m",
                self.downstream_surface, min_bed
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.discharge, self.downstream_surface]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    indices: Vec<(usize, usize)>,
    pub includes_u: bool,
    pub includes_v: bool,
}

impl ObservationMask {
    pub fn new(
        geometry: &ChannelGeometry,
        indices: Vec<(usize, usize)>,
        includes_u: bool,
        includes_v: bool,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("observation mask is empty"));
        }
        if !includes_u && !includes_v {
            return Err(invalid("observation mask must include u or v"));
        }
        let mut seen = HashMap::with_capacity(indices.len());
        for (k, &(i, j)) in indices.iter().enumerate() {
            if i >= geometry.n_across || j >= geometry.n_along {
                return Err(invalid(format!("mask index ({i}, {j}) out of bounds")));
            }
            if let Some(prev) = seen.insert((i, j), k) {
                return Err(invalid(format!("mask index ({i}, {j}) repeated at {prev} and {k}")));
            }
        }
        Ok(Self { indices, includes_u, includes_v })
    }

    /// Every node, both components.
    pub fn full(geometry: &ChannelGeometry) -> Self {
        let indices = (0..geometry.n_across)
            .flat_map(|i| (0..geometry.n_along).map(move |j| (i, j)))
            .collect();
        Self { indices, includes_u: true, includes_v: true }
    }

    /// Builds a mask without the uniqueness check. Used for row-duplication
    /// fixtures; observation operators treat it like any other mask.
    pub fn from_indices_unchecked(indices: Vec<(usize, usize)>) -> Self {
        Self { indices, includes_u: true, includes_v: true }
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_components(&self) -> usize {
        self.includes_u as usize + self.includes_v as usize
    }

    pub fn n_obs(&self) -> usize {
        self.indices.len() * self.n_components()
    }

    /// Flat node indices in mask order.
    pub fn flat_indices(&self, geometry: &ChannelGeometry) -> Vec<usize> {
        self.indices.iter().map(|&(i, j)| geometry.index(i, j)).collect()
    }

    /// Rows of the stacked `[u; v]` output vector (length `2m`) picked by
    /// this mask, in observation order.
    pub fn stacked_rows(&self, geometry: &ChannelGeometry) -> Vec<usize> {
        let m = geometry.n_nodes();
        let flat = self.flat_indices(geometry);
        let mut rows = Vec::with_capacity(self.n_obs());
        if self.includes_u {
            rows.extend(flat.iter().copied());
        }
        if self.includes_v {
            rows.extend(flat.iter().map(|&k| m + k));
        }
        rows
    }

    pub fn check_bounds(&self, geometry: &ChannelGeometry) -> Result<()> {
        match self
            .indices
            .iter()
            .find(|&&(i, j)| i >= geometry.n_across || j >= geometry.n_along)
        {
            Some(&(i, j)) => Err(invalid(format!("mask index ({i}, {j}) out of bounds"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub mask: ObservationMask,
    /// All u samples, then all v samples, in mask order.
    pub values: Vec<f64>,
    /// Per-entry noise standard deviation (m/s).
    pub noise_std: Vec<f64>,
    pub bc: BoundaryConditions,
}

impl ObservationSet {
    pub fn new(
        mask: ObservationMask,
        values: Vec<f64>,
        noise_std: Vec<f64>,
        bc: BoundaryConditions,
    ) -> Result<Self> {
        if values.len() != mask.n_obs() || noise_std.len() != values.len() {
            return Err(mismatch(format!(
                "mask implies {} observations, got {} values and {} noise entries",
                mask.n_obs(),
                values.len(),
                noise_std.len()
            )));
        }
        if let Some(r) = noise_std.iter().find(|r| !(**r > 0.0)) {
            return Err(invalid(format!("noise std must be positive, got {r}")));
        }
        Ok(Self { mask, values, noise_std, bc })
    }

    pub fn n_obs(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub bathymetry: BathymetryField,
    pub bc: BoundaryConditions,
    pub flow: FlowField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: ChannelGeometry,
    pub records: Vec<Record>,
    /// Provenance (prior name, seed, generation parameters), ordered by key.
    pub metadata: Vec<(String, String)>,
}

impl Dataset {
    pub fn new(
        geometry: ChannelGeometry,
        records: Vec<Record>,
        metadata: Vec<(String, String)>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(invalid("dataset needs at least one record"));
        }
        if let Some(k) = records
            .iter()
            .position(|r| r.bathymetry.geometry != geometry || r.flow.geometry != geometry)
        {
            return Err(mismatch(format!("record {k} has a different geometry")));
        }
        Ok(Self { geometry, records, metadata })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Returns a dataset holding the given records (cloned).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::new(self.geometry, records, self.metadata.clone())
    }
}

/// Root-mean-square difference of two equally shaped grids.
pub fn grid_rmse(a: &Grid, b: &Grid) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(mismatch(format!("rmse of {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(slice_rmse(a.as_slice(), b.as_slice()))
}

pub(crate) fn slice_rmse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Near-uniform lattice of about `n_points` nodes.
///
/// Candidate strides are those whose lattice count lands within 10% of the
/// request (or, failing that, those with the smallest count error). Among
/// them the lattice whose point-count aspect ratio is closest (in log terms)
/// to the grid's wins; then the smaller count error; then the smaller
/// across-channel stride. The lattice is centred in both directions.
pub fn equispaced_mask(geometry: &ChannelGeometry, n_points: usize) -> Result<ObservationMask> {
    let total = geometry.n_nodes();
    if n_points == 0 || n_points > total {
        return Err(invalid(format!("n_points must be in 1..={total}, got {n_points}")));
    }
    let (na, nl) = (geometry.n_across, geometry.n_along);
    let grid_aspect = (na as f64 / nl as f64).ln();
    let target = n_points as f64;

    let mut candidates = Vec::with_capacity(na * nl);
    for sa in 1..=na {
        let ca = na.div_ceil(sa);
        for sl in 1..=nl {
            let cl = nl.div_ceil(sl);
            let count = ca * cl;
            candidates.push((sa, sl, ca, cl, count.abs_diff(n_points)));
        }
    }
    let tolerance = 0.1 * target;
    let within: Vec<_> = candidates.iter().filter(|c| c.4 as f64 <= tolerance).copied().collect();
    let pool = if within.is_empty() {
        let best = candidates.iter().map(|c| c.4).min().unwrap_or(0);
        candidates.into_iter().filter(|c| c.4 == best).collect()
    } else {
        within
    };

    let aspect_gap = |ca: usize, cl: usize| ((ca as f64 / cl as f64).ln() - grid_aspect).abs();
    let &(sa, sl, ca, cl, _) = pool
        .iter()
        .min_by(|x, y| {
            aspect_gap(x.2, x.3)
                .total_cmp(&aspect_gap(y.2, y.3))
                .then(x.4.cmp(&y.4))
                .then(x.0.cmp(&y.0))
                .then(x.1.cmp(&y.1))
        })
        .expect("stride search space is non-empty");

    let off_a = (na - 1 - (ca - 1) * sa) / 2;
    let off_l = (nl - 1 - (cl - 1) * sl) / 2;
    let indices = (0..ca)
        .flat_map(|a| (0..cl).map(move |l| (off_a + a * sa, off_l + l * sl)))
        .collect();
    ObservationMask::new(geometry, indices, true, true)
}

/// Restricts a flow field to the mask: all u samples, then all v samples.
pub fn apply_mask(flow: &FlowField, mask: &ObservationMask) -> Result<Vec<f64>> {
    mask.check_bounds(&flow.geometry)?;
    let mut out = Vec::with_capacity(mask.n_obs());
    if mask.includes_u {
        out.extend(mask.indices().iter().map(|&(i, j)| flow.u.get(i, j)));
    }
    if mask.includes_v {
        out.extend(mask.indices().iter().map(|&(i, j)| flow.v.get(i, j)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(na: usize, nl: usize) -> ChannelGeometry {
        ChannelGeometry::new(na, nl, 1.0, 1.0).unwrap()
    }

    fn flow_from(geometry: ChannelGeometry, u: Grid, v: Grid) -> FlowField {
        let depth = Grid::filled(geometry.n_across, geometry.n_along, 1.0);
        FlowField { geometry, u, v, depth, surface: vec![0.0; geometry.n_along] }
    }

    #[test]
    fn geometry_invariants() {
        assert!(ChannelGeometry::new(2, 10, 1.0, 1.0).is_err());
        assert!(ChannelGeometry::new(3, 3, 0.0, 1.0).is_err());
        assert_eq!(ChannelGeometry::desk().n_nodes(), 2121);
        assert_eq!(ChannelGeometry::full_scale().n_nodes(), 20_541);
    }

    #[test]
    fn rmse_identity_and_offset() {
        let a = Grid::from_fn(4, 6, |i, j| (i * 7 + j) as f64 * 0.3 - 1.0);
        assert_eq!(grid_rmse(&a, &a).unwrap(), 0.0);
        let b = a.map(|x| x + 0.5);
        assert!((grid_rmse(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!(grid_rmse(&a, &Grid::zeros(6, 4)).is_err());
    }

    #[test]
    fn rmse_matches_hand_summation() {
        let a = Grid::from_fn(5, 5, |i, j| ((i * 31 + j * 17) % 11) as f64 * 0.37 - 1.3);
        let b = Grid::from_fn(5, 5, |i, j| ((i * 13 + j * 29) % 7) as f64 * 0.51 - 0.2);
        let mut sum = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let d = a.get(i, j) - b.get(i, j);
                sum += d * d;
            }
        }
        let expected = (sum / 25.0).sqrt();
        assert!((grid_rmse(&a, &b).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn full_and_single_masks() {
        let g = ChannelGeometry::desk();
        let full = equispaced_mask(&g, g.n_nodes()).unwrap();
        assert_eq!(full.indices(), ObservationMask::full(&g).indices());

        let one = equispaced_mask(&g, 1).unwrap();
        assert_eq!(one.indices(), &[(10, 50)]);
        assert!(equispaced_mask(&g, 0).is_err());
        assert!(equispaced_mask(&g, g.n_nodes() + 1).is_err());
    }

    /// Independent enumeration of the stride rule for the 41 x 501 grid at
    /// 100 points.
    #[test]
    fn sparsest_full_scale_lattice_matches_enumeration() {
        let g = ChannelGeometry::full_scale();
        let mask = equispaced_mask(&g, 100).unwrap();

        let aspect = (41.0f64 / 501.0).ln();
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for sa in 1..=41usize {
            for sl in 1..=501usize {
                let ca = (41 + sa - 1) / sa;
                let cl = (501 + sl - 1) / sl;
                let err = (ca * cl).abs_diff(100);
                if err > 10 {
                    continue;
                }
                let gap = ((ca as f64 / cl as f64).ln() - aspect).abs();
                let better = match best {
                    None => true,
                    Some((bg, be, bsa, bsl, _)) => {
                        (gap, err, sa, sl) < (bg, be, bsa, bsl)
                    }
                };
                if better {
                    best = Some((gap, err, sa, sl, ca * cl));
                }
            }
        }
        let (_, _, sa, sl, count) = best.unwrap();
        assert_eq!(mask.len(), count);
        let rows: Vec<usize> = mask.indices().iter().map(|p| p.0).collect();
        let cols: Vec<usize> = mask.indices().iter().map(|p| p.1).collect();
        assert!(rows.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + sa));
        assert!(cols.windows(2).all(|w| w[0] + sl == w[1] || w[1] < w[0]));
        assert!((mask.len() as f64 - 100.0).abs() <= 10.0);
    }

    #[test]
    fn desk_masks_stay_within_ten_percent() {
        let g = ChannelGeometry::desk();
        for n in [2121, 1000, 500, 200, 100, 50, 20, 10, 5, 2, 1] {
            let m = equispaced_mask(&g, n).unwrap();
            let err = (m.len() as f64 - n as f64).abs();
            assert!(err <= 0.1 * n as f64 + 1e-9 || n < 10, "n={n} got {}", m.len());
        }
    }

    #[test]
    fn apply_mask_orders_u_then_v() {
        let g = geom(4, 5);
        let u = Grid::from_fn(4, 5, |i, j| (i * 5 + j) as f64);
        let v = Grid::from_fn(4, 5, |i, j| -((i * 5 + j) as f64));
        let flow = flow_from(g, u.clone(), v.clone());

        let full = apply_mask(&flow, &ObservationMask::full(&g)).unwrap();
        assert_eq!(full.len(), 40);
        assert_eq!(&full[..20], u.as_slice());
        assert_eq!(&full[20..], v.as_slice());

        let one = ObservationMask::new(&g, vec![(2, 3)], true, true).unwrap();
        assert_eq!(apply_mask(&flow, &one).unwrap(), vec![13.0, -13.0]);

        let bad = ObservationMask::from_indices_unchecked(vec![(4, 0)]);
        assert!(apply_mask(&flow, &bad).is_err());
    }

    #[test]
    fn random_mask_matches_direct_lookup() {
        let g = geom(6, 9);
        let u = Grid::from_fn(6, 9, |i, j| ((i * 37 + j * 11) % 13) as f64 * 0.1);
        let v = Grid::from_fn(6, 9, |i, j| ((i * 7 + j * 23) % 17) as f64 * -0.2);
        let flow = flow_from(g, u.clone(), v.clone());
        let idx = vec![(0, 8), (5, 0), (3, 3), (1, 7), (4, 2), (2, 5), (5, 8)];
        let mask = ObservationMask::new(&g, idx.clone(), true, true).unwrap();
        let got = apply_mask(&flow, &mask).unwrap();
        for (k, &(i, j)) in idx.iter().enumerate() {
            assert_eq!(got[k], u.get(i, j));
            assert_eq!(got[7 + k], v.get(i, j));
        }
    }

    #[test]
    fn mask_rejects_duplicates_and_out_of_bounds() {
        let g = geom(3, 3);
        assert!(ObservationMask::new(&g, vec![(0, 0), (0, 0)], true, true).is_err());
        assert!(ObservationMask::new(&g, vec![(3, 0)], true, true).is_err());
        assert!(ObservationMask::new(&g, vec![], true, true).is_err());
    }

    #[test]
    fn observation_set_length_invariant() {
        let g = geom(3, 3);
        let mask = ObservationMask::new(&g, vec![(1, 1)], true, false).unwrap();
        let bc = BoundaryConditions::new(10.0, 1.0).unwrap();
        assert!(ObservationSet::new(mask.clone(), vec![0.1], vec![0.05], bc).is_ok());
        assert!(ObservationSet::new(mask.clone(), vec![0.1, 0.2], vec![0.05; 2], bc).is_err());
        assert!(ObservationSet::new(mask, vec![0.1], vec![0.0], bc).is_err());
    }

    proptest! {
        #[test]
        fn rmse_properties(
            a in proptest::collection::vec(-10.0f64..10.0, 12),
            b in proptest::collection::vec(-10.0f64..10.0, 12),
            c in -5.0f64..5.0,
        ) {
            let ga = Grid::from_vec(3, 4, a).unwrap();
            let gb = Grid::from_vec(3, 4, b).unwrap();
            let ab = grid_rmse(&ga, &gb).unwrap();
            let ba = grid_rmse(&gb, &ga).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ab == 0.0, ga == gb);
            let shifted = grid_rmse(&ga.map(|x| x + c), &gb.map(|x| x + c)).unwrap();
            prop_assert!((shifted - ab).abs() <= 1e-9 * (1.0 + ab));
        }

        #[test]
        fn full_mask_unflattens_exactly(vals in proptest::collection::vec(-3.0f64..3.0, 30)) {
            let g = geom(3, 5);
            let u = Grid::from_vec(3, 5, vals[..15].to_vec()).unwrap();
            let v = Grid::from_vec(3, 5, vals[15..].to_vec()).unwrap();
            let flow = flow_from(g, u.clone(), v.clone());
            let flat = apply_mask(&flow, &ObservationMask::full(&g)).unwrap();
            prop_assert_eq!(Grid::from_vec(3, 5, flat[..15].to_vec()).unwrap(), u);
            prop_assert_eq!(Grid::from_vec(3, 5, flat[15..].to_vec()).unwrap(), v);
        }

        #[test]
        fn equispaced_mask_is_deterministic(n in 1usize..=2121) {
            let g = ChannelGeometry::desk();
            let a = equispaced_mask(&g, n).unwrap();
            let b = equispaced_mask(&g, n).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
