//! Gaussian local spectra on the virtual-array pairs and their steered
//! aggregation over a (azimuth, elevation) grid.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dsp::{self, Signal};
use crate::error::{Error, Result};
use crate::geometry::{pair_delay_unit, Constants, Doa, EchoTimes, Vec3, VirtualArray};
use crate::model::Model;

/// Pairs closer than this are treated as coincident.
const DEGENERATE_PAIR: f64 = 1e-9;

/// A Gaussian in delay space attached to one pair of (virtual) microphones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLocal {
    pub center: f64,
    pub variance: f64,
    /// Pair endpoints in the surface frame.
    pub pair: (Vec3, Vec3),
}

impl GaussianLocal {
    pub fn eval(&self, unit: Vec3, c: f64) -> f64 {
        let tau = pair_delay_unit(self.pair.0, self.pair.1, unit, c);
        (-(tau - self.center).powi(2) / (2.0 * self.variance)).exp()
    }
}

/// Regular grid in degrees; azimuth is the fast axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoaGrid {
    pub az_start: f64,
    pub az_step: f64,
    pub n_az: usize,
    pub el_start: f64,
    pub el_step: f64,
    pub n_el: usize,
}

impl Default for DoaGrid {
    /// Half-degree sphere sampling: azimuth −179.5..=180, elevation 0..=90.
    fn default() -> Self {
        Self { az_start: -179.5, az_step: 0.5, n_az: 720, el_start: 0.0, el_step: 0.5, n_el: 181 }
    }
}

impl DoaGrid {
    pub fn len(&self) -> usize {
        self.n_az * self.n_el
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn azimuth(&self, i: usize) -> f64 {
        self.az_start + i as f64 * self.az_step
    }

    pub fn elevation(&self, j: usize) -> f64 {
        self.el_start + j as f64 * self.el_step
    }

    /// Direction of flat index `idx` (elevation-major).
    pub fn doa(&self, idx: usize) -> Doa {
        Doa { azimuth: self.azimuth(idx % self.n_az), elevation: self.elevation(idx / self.n_az) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngularSpectrumMap {
    pub grid: DoaGrid,
    /// Ψ per grid point, elevation-major.
    pub values: Vec<f64>,
    pub argmax: usize,
}

impl AngularSpectrumMap {
    /// Ties go to the lowest elevation, then the lowest azimuth.
    pub fn new(grid: DoaGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || values.is_empty() {
            return Err(Error::invalid("spectrum size does not match the grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Internal("angular spectrum has non-finite values".into()));
        }
        let mut argmax = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[argmax] {
                argmax = i;
            }
        }
        Ok(Self { grid, values, argmax })
    }

    pub fn value(&self, az_index: usize, el_index: usize) -> f64 {
        self.values[el_index * self.grid.n_az + az_index]
    }

    pub fn peak(&self) -> f64 {
        self.values[self.argmax]
    }

    pub fn doa(&self) -> Doa {
        self.grid.doa(self.argmax)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "azimuth,elevation,psi")?;
        for (i, v) in self.values.iter().enumerate() {
            let d = self.grid.doa(i);
            writeln!(w, "{},{},{}", d.azimuth, d.elevation, v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// One local per pair: TDOA on (m1, m2), iTDOA on (im1, im2), TDOE on
/// (m1, im1). Coincident or repeated pairs (mics on the surface) are dropped.
pub fn build_locals(v_hat: EchoTimes, variances: [f64; 3], va: &VirtualArray) -> Result<Vec<GaussianLocal>> {
    if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("variances must be positive, got {variances:?}")));
    }
    let centers = v_hat.to_array();
    if centers.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("predicted echo times are not finite"));
    }
    const NAMES: [&str; 3] = ["TDOA", "iTDOA", "TDOE"];
    let mut locals = Vec::with_capacity(3);
    for (i, pair) in va.local_pairs().into_iter().enumerate() {
        if pair.0.distance(pair.1) < DEGENERATE_PAIR {
            log::warn!("{} pair is degenerate (coincident points); dropping it", NAMES[i]);
            continue;
        }
        let duplicate = locals.iter().any(|l: &GaussianLocal| {
            l.pair.0.distance(pair.0) < DEGENERATE_PAIR && l.pair.1.distance(pair.1) < DEGENERATE_PAIR
        });
        if duplicate {
            log::warn!("{} pair coincides with an earlier pair; dropping it", NAMES[i]);
            continue;
        }
        locals.push(GaussianLocal { center: centers[i], variance: variances[i], pair });
    }
    Ok(locals)
}

/// Sum of the local Gaussians steered over every grid direction.
pub fn srp_aggregate(locals: &[GaussianLocal], grid: &DoaGrid, k: &Constants) -> Result<AngularSpectrumMap> {
    if locals.is_empty() {
        return Err(Error::invalid("aggregation needs at least one local spectrum"));
    }
    if let Some(l) = locals.iter().find(|l| !(l.variance > 0.0)) {
        return Err(Error::invalid(format!("local variance {} is not positive", l.variance)));
    }
    k.validate()?;
    let az: Vec<(f64, f64)> = (0..grid.n_az).map(|i| grid.azimuth(i).to_radians().sin_cos()).collect();
    let el: Vec<(f64, f64)> = (0..grid.n_el).map(|j| grid.elevation(j).to_radians().sin_cos()).collect();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let ((sa, ca), (se, ce)) = (az[idx % grid.n_az], el[idx / grid.n_az]);
            let unit = Vec3::new(ce * ca, ce * sa, se);
            locals.iter().map(|l| l.eval(unit, k.c)).sum()
        })
        .collect();
    AngularSpectrumMap::new(*grid, values)
}

/// DOA from given echo times and variances.
pub fn localize_echo_times(
    v_hat: EchoTimes,
    variances: [f64; 3],
    va: &VirtualArray,
    grid: &DoaGrid,
    k: &Constants,
) -> Result<(Doa, AngularSpectrumMap)> {
    let locals = build_locals(v_hat, variances, va)?;
    let map = srp_aggregate(&locals, grid, k)?;
    Ok((map.doa(), map))
}

/// Full pipeline: features, echo-time regression, aggregation.
pub fn localize(
    sig1: &Signal,
    sig2: &Signal,
    model: &Model,
    va: &VirtualArray,
    k: &Constants,
) -> Result<(Doa, AngularSpectrumMap, EchoTimes)> {
    let fv = dsp::features(&dsp::stft(sig1)?, &dsp::stft(sig2)?)?;
    let v_hat = model.predict(&fv.x)?;
    let (doa, map) = localize_echo_times(v_hat, model.variances(), va, &DoaGrid::default(), k)?;
    Ok((doa, map, v_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{aoa_from_tdoa, doa_unit_vector, FaceId, MicPair, RoomBox};
    use crate::roomsim::sample_scene;
    use proptest::prelude::*;

    fn angular_gap(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(360.0);
        d.min(360.0 - d)
    }

    fn x_local(center: f64) -> GaussianLocal {
        GaussianLocal { center, variance: 1e-9, pair: (Vec3::new(-0.05, 0.0, 0.0), Vec3::new(0.05, 0.0, 0.0)) }
    }

    #[test]
    fn grid_shape() {
        let g = DoaGrid::default();
        assert_eq!(g.len(), 130_320);
        assert_eq!(g.azimuth(719), 180.0);
        assert_eq!(g.elevation(180), 90.0);
        assert_eq!(g.doa(720), Doa { azimuth: -179.5, elevation: 0.5 });
    }

    #[test]
    fn broadside_local_ties_resolve_to_lowest_corner() {
        let map = srp_aggregate(&[x_local(0.0)], &DoaGrid::default(), &Constants::default()).unwrap();
        assert_eq!(map.doa(), Doa { azimuth: -90.0, elevation: 0.0 });
        let g = map.grid;
        // Constant along the circle orthogonal to x.
        for j in 0..g.n_el {
            assert!((map.value(179, j) - map.peak()).abs() < 1e-12);
            assert!((map.value(539, j) - map.peak()).abs() < 1e-12);
        }
    }

    #[test]
    fn tdoa_local_level_set_contains_true_aoa() {
        let k = Constants::default();
        for &deg in &[30.0_f64, 60.0, 100.0, 145.0] {
            // Source direction at angle `deg` from the +x pair axis in the horizontal plane.
            let u = Vec3::new(deg.to_radians().cos(), deg.to_radians().sin(), 0.0);
            let l = x_local(pair_delay_unit(Vec3::new(-0.05, 0.0, 0.0), Vec3::new(0.05, 0.0, 0.0), u, k.c));
            let map = srp_aggregate(&[l], &DoaGrid::default(), &k).unwrap();
            let aoa = aoa_from_tdoa(-l.center, &k);
            assert!((aoa - deg).abs() < 1e-6);
            let peak = map.doa();
            let unit = doa_unit_vector(peak);
            assert!((unit.x.clamp(-1.0, 1.0).acos().to_degrees() - aoa).abs() < 1.0);
        }
    }

    /// Echo times from exact path lengths for a source anywhere (not
    /// necessarily inside the room).
    fn exact_times(va: &VirtualArray, s: Vec3, c: f64) -> EchoTimes {
        let (d1, d2) = (va.m1.distance(s), va.m2.distance(s));
        let (e1, e2) = (va.im1.distance(s), va.im2.distance(s));
        EchoTimes { tdoa: (d2 - d1) / c, itdoa: (e2 - e1) / c, tdoe: (e1 - d1) / c }
    }

    /// Azimuth of the plane holding all four virtual microphones.
    fn array_plane_azimuth(va: &VirtualArray) -> f64 {
        let axis = va.frame().to_local(va.m2 - va.m1);
        axis.y.atan2(axis.x).to_degrees()
    }

    #[test]
    fn distant_oracle_recovers_doa_up_to_array_plane_mirror() {
        let k = Constants::default();
        let grid = DoaGrid::default();
        for seed in 0..20 {
            let scene = sample_scene(seed).unwrap();
            let va = scene.virtual_array().unwrap();
            let frame = va.frame();
            let truth = Doa::new(((seed * 37) % 360) as f64 - 179.0, ((seed * 13) % 80) as f64 + 5.0).unwrap();
            let s = va.centroid() + frame.to_world(doa_unit_vector(truth)) * 1e4;
            let (doa, map) = localize_echo_times(exact_times(&va, s, k.c), [1e-10; 3], &va, &grid, &k).unwrap();
            assert!((doa.elevation - truth.elevation).abs() <= 0.5, "seed {seed}: {doa:?} vs {truth:?}");
            let mirror = 2.0 * array_plane_azimuth(&va) - truth.azimuth;
            let gap = angular_gap(doa.azimuth, truth.azimuth).min(angular_gap(doa.azimuth, mirror));
            // Allow for weak azimuth conditioning when the mic axis is steep.
            assert!(gap <= 1.0, "seed {seed}: {doa:?} vs {truth:?} (mirror {mirror})");
            // The mirrored direction scores (almost) the same.
            let u = doa_unit_vector(Doa { azimuth: 2.0 * array_plane_azimuth(&va) - doa.azimuth, ..doa });
            let locals = build_locals(exact_times(&va, s, k.c), [1e-10; 3], &va).unwrap();
            let v: f64 = locals.iter().map(|l| l.eval(u, k.c)).sum();
            assert!((v - map.peak()).abs() < 1e-6, "seed {seed}: {v} vs {}", map.peak());
        }
    }

    #[test]
    fn locals_follow_pair_assignment() {
        let room = RoomBox::new(Vec3::new(4.0, 5.0, 3.0)).unwrap();
        let mics = MicPair::new(Vec3::new(1.0, 2.0, 0.2), Vec3::new(1.1, 2.0, 0.2)).unwrap();
        let va = VirtualArray::new(&mics, &room, FaceId::ZMin).unwrap();
        let v = EchoTimes { tdoa: 1e-4, itdoa: 2e-4, tdoe: 3e-4 };
        let locals = build_locals(v, [1.0, 2.0, 3.0], &va).unwrap();
        assert_eq!(locals.len(), 3);
        for (i, l) in locals.iter().enumerate() {
            assert_eq!(l.center, v.to_array()[i]);
            assert_eq!(l.variance, (i + 1) as f64);
            assert!((l.pair.0.distance(l.pair.1) - [0.1, 0.1, 0.4][i]).abs() < 1e-12);
        }
        assert!(build_locals(v, [0.0, 1.0, 1.0], &va).is_err());
    }

    #[test]
    fn mics_on_surface_keep_one_local() {
        let room = RoomBox::new(Vec3::new(4.0, 5.0, 3.0)).unwrap();
        let mics = MicPair::new(Vec3::new(1.0, 2.0, 0.0), Vec3::new(1.1, 2.0, 0.0)).unwrap();
        let va = VirtualArray::new(&mics, &room, FaceId::ZMin).unwrap();
        let locals = build_locals(EchoTimes::default(), [1e-9; 3], &va).unwrap();
        assert_eq!(locals.len(), 1);
        assert!(srp_aggregate(&[], &DoaGrid::default(), &Constants::default()).is_err());
    }

    #[test]
    fn model_variances_become_local_widths() {
        // nRMSE (0.18, 0.28, 0.25) against target std s gives MSE (0.18 s)² etc.
        let s: [f64; 3] = [2.0e-4, 1.5e-4, 4.0e-3];
        let mse = [(0.18 * s[0]).powi(2), (0.28 * s[1]).powi(2), (0.25 * s[2]).powi(2)];
        let model = Model::constant(EchoTimes::default(), mse);
        let scene = sample_scene(1).unwrap();
        let locals = build_locals(EchoTimes::default(), model.variances(), &scene.virtual_array().unwrap()).unwrap();
        for (l, m) in locals.iter().zip(mse) {
            assert_eq!(l.variance, m);
        }
    }

    #[test]
    fn csv_export() {
        let grid = DoaGrid { n_az: 3, n_el: 2, ..DoaGrid::default() };
        let map = AngularSpectrumMap::new(grid, vec![0.0, 1.0, 2.0, 3.0, 2.0, 1.0]).unwrap();
        let mut out = Vec::new();
        map.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "azimuth,elevation,psi");
        assert_eq!(lines[4], "-179.5,0.5,3");
        assert_eq!(map.doa(), Doa { azimuth: -179.5, elevation: 0.5 });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn argmax_invariant_to_offset_and_order(seed in 0u64..500, offset in -10.0f64..10.0) {
            let scene = sample_scene(seed).unwrap();
            let va = scene.virtual_array().unwrap();
            let grid = DoaGrid { az_step: 5.0, n_az: 72, az_start: -175.0, el_step: 5.0, n_el: 19, el_start: 0.0 };
            let k = Constants::default();
            let mut locals = build_locals(scene.echo_times().unwrap(), [1e-9, 2e-9, 3e-9], &va).unwrap();
            let map = srp_aggregate(&locals, &grid, &k).unwrap();
            locals.reverse();
            let rev = srp_aggregate(&locals, &grid, &k).unwrap();
            prop_assert_eq!(map.argmax, rev.argmax);
            for (a, b) in map.values.iter().zip(&rev.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let shifted = AngularSpectrumMap::new(grid, map.values.iter().map(|v| v + offset).collect()).unwrap();
            prop_assert_eq!(shifted.argmax, map.argmax);
        }
    }
}
