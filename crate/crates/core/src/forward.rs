//! Steady 1.5-D flow surrogate: a backwater surface profile marched upstream
//! from the outlet stage, Manning conveyance splitting the discharge into
//! along-channel velocities, and continuity-derived across-channel velocities.

use crate::error::{invalid, Error, Result};
use crate::fields::{apply_mask, BathymetryField, BoundaryConditions, FlowField, Grid, ObservationMask, ObservationSet};
use crate::rng::{standard_normals, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardParams {
    /// Manning roughness (s m^-1/3).
    pub manning_n: f64,
    /// Nodes at or below this depth are dry (m).
    pub min_depth: f64,
    /// Upper bound on the friction slope used per marching step.
    pub max_backwater_slope: f64,
}

impl Default for ForwardParams {
    fn default() -> Self {
        Self { manning_n: 0.03, min_depth: 0.01, max_backwater_slope: 0.01 }
    }
}

impl ForwardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.manning_n > 0.0 && self.min_depth >= 0.0 && self.max_backwater_slope > 0.0) {
            return Err(invalid(format!("invalid forward parameters {self:?}")));
        }
        Ok(())
    }
}

/// Conveyance of one cross-section given per-node depths (dry nodes skipped).
fn conveyance(depths: impl Iterator<Item = f64>, dy: f64, params: &ForwardParams) -> f64 {
    depths
        .filter(|&d| d > params.min_depth)
        .map(|d| d.powf(5.0 / 3.0) * dy / params.manning_n)
        .sum()
}

fn depth_at(surface: f64, bed: f64) -> f64 {
    (surface - bed).max(0.0)
}

/// Water-surface elevation per column, marched upstream from the outlet.
///
/// The friction slope between columns `j` and `j+1` uses the conveyance of
/// the mid-reach section (average bed of both columns) under the already
/// known downstream surface.
pub fn backwater_profile(
    bathy: &BathymetryField,
    bc: &BoundaryConditions,
    params: &ForwardParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    let g = bathy.geometry;
    let bed = &bathy.bed;
    let (na, nl) = (g.n_across, g.n_along);
    bc.check_outlet(bathy)?;

    let mut surface = vec![0.0; nl];
    surface[nl - 1] = bc.downstream_surface;
    let q2 = bc.discharge * bc.discharge;
    for j in (0..nl - 1).rev() {
        let s = surface[j + 1];
        let k = conveyance(
            (0..na).map(|i| depth_at(s, 0.5 * (bed.get(i, j) + bed.get(i, j + 1)))),
            g.dy,
            params,
        );
        if k <= 0.0 {
            return Err(Error::InfeasibleBathymetry(format!(
                "reach between columns {j} and {} is dry",
                j + 1
            )));
        }
        let slope = (q2 / (k * k)).min(params.max_backwater_slope);
        surface[j] = s + slope * g.dx;
    }
    for (j, &s) in surface.iter().enumerate() {
        if !(0..na).any(|i| depth_at(s, bed.get(i, j)) > params.min_depth) {
            return Err(Error::InfeasibleBathymetry(format!("cross-section {j} is dry")));
        }
    }
    Ok(surface)
}

pub fn depth_grid(bathy: &BathymetryField, surface: &[f64]) -> Grid {
    let g = bathy.geometry;
    Grid::from_fn(g.n_across, g.n_along, |i, j| depth_at(surface[j], bathy.bed.get(i, j)))
}

/// Along-channel velocity distributing the discharge by local conveyance.
pub fn conveyance_velocity(
    bathy: &BathymetryField,
    surface: &[f64],
    bc: &BoundaryConditions,
    params: &ForwardParams,
) -> Result<Grid> {
    let g = bathy.geometry;
    if surface.len() != g.n_along {
        return Err(crate::error::mismatch("surface length differs from n_along"));
    }
    let depth = depth_grid(bathy, surface);
    let mut u = Grid::zeros(g.n_across, g.n_along);
    for j in 0..g.n_along {
        let k = conveyance(depth.column(j), g.dy, params);
        if k <= 0.0 {
            return Err(Error::InfeasibleBathymetry(format!("cross-section {j} is dry")));
        }
        let scale = bc.discharge / (k * params.manning_n);
        for i in 0..g.n_across {
            let d = depth.get(i, j);
            if d > params.min_depth {
                u.set(i, j, scale * d.powf(2.0 / 3.0));
            }
        }
    }
    Ok(u)
}

/// Across-channel velocity from depth-integrated continuity.
///
/// With `q = u d` and its along-channel derivative `D` (central differences,
/// one-sided at the ends), the lateral unit discharge through the face on the
/// bank side of row `i` is `-sum_{i' < i} D[i'] dy`; `v = flux / d` on wet
/// nodes and zero on dry nodes and on the bank row `i = 0`.
pub fn transverse_velocity(u: &Grid, depth: &Grid, geometry: &crate::fields::ChannelGeometry) -> Result<Grid> {
    let (na, nl) = (geometry.n_across, geometry.n_along);
    if u.shape() != (na, nl) || depth.shape() != (na, nl) {
        return Err(crate::error::mismatch("u/depth shape differs from geometry"));
    }
    let div = along_divergence(u, depth, geometry);
    let mut v = Grid::zeros(na, nl);
    for j in 0..nl {
        let mut flux = 0.0;
        for i in 1..na {
            flux -= div.get(i - 1, j) * geometry.dy;
            // u is exactly zero on dry nodes
            if u.get(i, j) != 0.0 {
                v.set(i, j, flux / depth.get(i, j));
            }
        }
    }
    Ok(v)
}

/// `d(u d)/dx` on every node.
pub fn along_divergence(u: &Grid, depth: &Grid, geometry: &crate::fields::ChannelGeometry) -> Grid {
    let (na, nl) = (geometry.n_across, geometry.n_along);
    let q = |i: usize, j: usize| u.get(i, j) * depth.get(i, j);
    Grid::from_fn(na, nl, |i, j| {
        if j == 0 {
            (q(i, 1) - q(i, 0)) / geometry.dx
        } else if j == nl - 1 {
            (q(i, nl - 1) - q(i, nl - 2)) / geometry.dx
        } else {
            (q(i, j + 1) - q(i, j - 1)) / (2.0 * geometry.dx)
        }
    })
}

/// Lateral discharge through the far-bank face of every column.
pub fn far_bank_flux(u: &Grid, depth: &Grid, geometry: &crate::fields::ChannelGeometry) -> Vec<f64> {
    let div = along_divergence(u, depth, geometry);
    (0..geometry.n_along)
        .map(|j| -(0..geometry.n_across).map(|i| div.get(i, j)).sum::<f64>() * geometry.dy)
        .collect()
}

/// Noise-free forward map from bathymetry and boundary conditions to flow.
pub fn simulate(bathy: &BathymetryField, bc: &BoundaryConditions, params: &ForwardParams) -> Result<FlowField> {
    let surface = backwater_profile(bathy, bc, params)?;
    let u = conveyance_velocity(bathy, &surface, bc, params)?;
    let depth = depth_grid(bathy, &surface);
    let v = transverse_velocity(&u, &depth, &bathy.geometry)?;
    Ok(FlowField { geometry: bathy.geometry, u, v, depth, surface })
}

/// Masked velocities plus independent Gaussian noise of standard deviation `r`.
pub fn observe(
    flow: &FlowField,
    bc: &BoundaryConditions,
    mask: &ObservationMask,
    r: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid(format!("noise level must be positive, got {r}")));
    }
    let truth = apply_mask(flow, mask)?;
    let noise = standard_normals(seed, Stream::Noise, truth.len());
    let values = truth.iter().zip(&noise).map(|(t, e)| t + r * e).collect();
    let n = truth.len();
    ObservationSet::new(mask.clone(), values, vec![r; n], *bc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ChannelGeometry;
    use crate::prior::{parabolic_mean, ParabolicMeanSpec, PriorSpec, sample_bathymetry};

    fn flat(g: ChannelGeometry, z: f64) -> BathymetryField {
        BathymetryField::new(g, Grid::filled(g.n_across, g.n_along, z)).unwrap()
    }

    fn column_flux(flow: &FlowField, j: usize) -> f64 {
        (0..flow.geometry.n_across)
            .map(|i| flow.u.get(i, j) * flow.depth.get(i, j) * flow.geometry.dy)
            .sum()
    }

    #[test]
    fn frictionless_channel_has_flat_surface() {
        let g = ChannelGeometry::desk();
        let bc = BoundaryConditions::new(300.0, 1.0).unwrap();
        let p = ForwardParams { manning_n: 1e-9, ..Default::default() };
        let s = backwater_profile(&flat(g, -3.0), &bc, &p).unwrap();
        assert!(s.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    /// Three upstream steps on a rectangular channel, marched by hand.
    #[test]
    fn hand_marched_rectangular_channel() {
        let g = ChannelGeometry::new(5, 4, 100.0, 2.0).unwrap();
        let (q, n) = (20.0, 0.03);
        let p = ForwardParams { manning_n: n, min_depth: 0.01, max_backwater_slope: 1.0 };
        let bc = BoundaryConditions::new(q, 1.0).unwrap();
        let s = backwater_profile(&flat(g, 0.0), &bc, &p).unwrap();
        let w = 5.0 * 2.0;
        let mut expect = vec![0.0; 4];
        expect[3] = 1.0;
        for j in (0..3).rev() {
            let d: f64 = expect[j + 1];
            expect[j] = d + 100.0 * n * n * q * q / (w * w * d.powf(10.0 / 3.0));
        }
        for (a, b) in s.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dry_outlet_is_infeasible() {
        let g = ChannelGeometry::desk();
        let bc = BoundaryConditions::new(300.0, 1.0).unwrap();
        let err = backwater_profile(&flat(g, 2.0), &bc, &ForwardParams::default()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBathymetry(_)));
    }

    #[test]
    fn uniform_channel_velocity() {
        let g = ChannelGeometry::new(5, 6, 10.0, 2.0).unwrap();
        let bathy = flat(g, 0.0);
        let bc = BoundaryConditions::new(12.0, 2.0).unwrap();
        let surface = vec![2.0; 6];
        let u = conveyance_velocity(&bathy, &surface, &bc, &ForwardParams::default()).unwrap();
        let expected = 12.0 / (10.0 * 2.0);
        assert!(u.as_slice().iter().all(|&x| (x - expected).abs() < 1e-14));
    }

    #[test]
    fn doubled_depth_node_scales_by_two_thirds_power() {
        let g = ChannelGeometry::new(5, 3, 10.0, 1.0).unwrap();
        let mut bed = Grid::filled(5, 3, 0.0);
        bed.set(2, 1, -1.0); // depth 2 instead of 1 at one node
        let bathy = BathymetryField::new(g, bed).unwrap();
        let bc = BoundaryConditions::new(6.0, 1.0).unwrap();
        let p = ForwardParams::default();
        let u = conveyance_velocity(&bathy, &[1.0; 3], &bc, &p).unwrap();
        let base = u.get(0, 1);
        assert!((u.get(2, 1) / base - 2f64.powf(2.0 / 3.0)).abs() < 1e-12);
        // K = (4 + 2^(5/3)) / n, u_shallow = Q / (K n)
        let k = (4.0 + 2f64.powf(5.0 / 3.0)) / p.manning_n;
        assert!((base - 6.0 / (k * p.manning_n)).abs() < 1e-14);
    }

    #[test]
    fn flux_is_conserved_per_column() {
        let g = ChannelGeometry::desk();
        let basis = PriorSpec::default().basis(&g).unwrap();
        let bc = BoundaryConditions::new(280.0, 0.4).unwrap();
        let p = ForwardParams::default();
        let mut checked = 0;
        for seed in 0..20 {
            let bathy = sample_bathymetry(&basis, seed).unwrap();
            let Ok(flow) = simulate(&bathy, &bc, &p) else { continue };
            for j in 0..g.n_along {
                let r = (column_flux(&flow, j) - 280.0).abs() / 280.0;
                assert!(r <= 1e-12, "column {j}: {r}");
            }
            checked += 1;
        }
        assert!(checked > 15);
    }

    #[test]
    fn uniform_bed_gives_no_lateral_flow() {
        let g = ChannelGeometry::desk();
        let spec = ParabolicMeanSpec { along_trend: 0.0, ..Default::default() };
        let bathy = parabolic_mean(&g, &spec).unwrap();
        let bc = BoundaryConditions::new(300.0, 0.5).unwrap();
        // flat surface so every column is identical
        let p = ForwardParams { manning_n: 1e-12, ..Default::default() };
        let flow = simulate(&bathy, &bc, &p).unwrap();
        assert!(flow.v.as_slice().iter().all(|&x| x.abs() < 1e-9));
    }

    /// Lateral velocity on a 5 x 5 grid from a single-column bump in u d,
    /// integrated by hand.
    #[test]
    fn lateral_velocity_hand_integration() {
        let g = ChannelGeometry::new(5, 5, 2.0, 0.5).unwrap();
        let depth = Grid::filled(5, 5, 1.0);
        let mut u = Grid::filled(5, 5, 1.0);
        u.set(1, 2, 1.4);
        u.set(3, 2, 0.6);
        let v = transverse_velocity(&u, &depth, &g).unwrap();
        // d(ud)/dx at column 1: (q[.,2] - q[.,0]) / 4 -> row1: +0.1, row3: -0.1
        // column 3: (q[.,4] - q[.,2]) / 4 -> row1: -0.1, row3: +0.1
        let expected_col1 = [0.0, 0.0, -0.1 * 0.5, -0.1 * 0.5, 0.0];
        let expected_col3 = [0.0, 0.0, 0.1 * 0.5, 0.1 * 0.5, 0.0];
        for i in 0..5 {
            assert!((v.get(i, 1) - expected_col1[i]).abs() < 1e-14, "row {i}");
            assert!((v.get(i, 3) - expected_col3[i]).abs() < 1e-14, "row {i}");
            assert_eq!(v.get(i, 2), 0.0);
        }
    }

    #[test]
    fn far_bank_flux_vanishes() {
        let g = ChannelGeometry::desk();
        let basis = PriorSpec::default().basis(&g).unwrap();
        let bc = BoundaryConditions::new(300.0, 0.6).unwrap();
        let flow = simulate(&sample_bathymetry(&basis, 3).unwrap(), &bc, &ForwardParams::default()).unwrap();
        for f in far_bank_flux(&flow.u, &flow.depth, &g) {
            assert!(f.abs() <= 1e-10 * 300.0, "{f}");
        }
    }

    #[test]
    fn parabolic_channel_is_fastest_at_the_thalweg() {
        let g = ChannelGeometry::desk();
        let bathy = parabolic_mean(&g, &ParabolicMeanSpec::default()).unwrap();
        let bc = BoundaryConditions::new(300.0, 0.5).unwrap();
        let p = ForwardParams::default();
        let a = simulate(&bathy, &bc, &p).unwrap();
        let b = simulate(&bathy, &bc, &p).unwrap();
        assert_eq!(a, b);
        for j in 0..g.n_along {
            let (imax, _) = (0..g.n_across)
                .map(|i| (i, a.u.get(i, j)))
                .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
            assert_eq!(imax, 10);
            assert!(a.depth.get(10, j) > a.depth.get(0, j));
        }
    }

    #[test]
    fn deepening_a_node_speeds_it_up_consistently() {
        let g = ChannelGeometry::desk();
        let basis = PriorSpec::default().basis(&g).unwrap();
        let bathy = sample_bathymetry(&basis, 4).unwrap();
        let bc = BoundaryConditions::new(300.0, 0.6).unwrap();
        let p = ForwardParams::default();
        let (i, j) = (10, 50);
        let u_at = |delta: f64| {
            let mut b = bathy.clone();
            b.bed.set(i, j, b.bed.get(i, j) + delta);
            simulate(&b, &bc, &p).unwrap().u.get(i, j)
        };
        let h = 1e-4;
        let base = u_at(0.0);
        assert!(u_at(-h) > base);
        let forward = (u_at(h) - base) / h;
        let central = (u_at(h) - u_at(-h)) / (2.0 * h);
        assert!((forward - central).abs() <= 0.01 * central.abs(), "{forward} vs {central}");
    }

    #[test]
    fn uniform_bed_surface_rises_upstream() {
        let g = ChannelGeometry::desk();
        let bc = BoundaryConditions::new(300.0, 0.5).unwrap();
        let s = backwater_profile(&flat(g, -4.0), &bc, &ForwardParams::default()).unwrap();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn observation_noise() {
        let g = ChannelGeometry::desk();
        let bathy = parabolic_mean(&g, &ParabolicMeanSpec::default()).unwrap();
        let bc = BoundaryConditions::new(300.0, 0.5).unwrap();
        let flow = simulate(&bathy, &bc, &ForwardParams::default()).unwrap();
        let mask = ObservationMask::full(&g);
        let truth = apply_mask(&flow, &mask).unwrap();

        let tiny = observe(&flow, &bc, &mask, 1e-300, 1).unwrap();
        assert!(tiny.values.iter().zip(&truth).all(|(a, b)| (a - b).abs() < 1e-290));

        let mut resid = Vec::new();
        for seed in 0..3 {
            let obs = observe(&flow, &bc, &mask, 0.05, seed).unwrap();
            resid.extend(obs.values.iter().zip(&truth).map(|(a, b)| a - b));
        }
        let resid = &resid[..10_000];
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64).sqrt();
        assert!((sd - 0.05).abs() < 0.02 * 0.05, "{sd}");

        assert_eq!(observe(&flow, &bc, &mask, 0.05, 4).unwrap(), observe(&flow, &bc, &mask, 0.05, 4).unwrap());
        assert!(observe(&flow, &bc, &mask, 0.0, 4).is_err());
    }
}
