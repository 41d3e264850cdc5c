//! Shoebox room simulation: random close-surface scenes, image-source room
//! impulse responses and reverberation-time estimates.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Constants, Doa, EchoTimes, FaceId, MicPair, RoomBox, Vec3, VirtualArray};

/// Distance between the two microphones of a generated pair, m.
pub const MIC_SPACING: f64 = 0.10;
/// Microphones stay within this distance of the close face, m.
pub const MAX_MIC_TO_SURFACE: f64 = 0.30;
/// Minimum clearance between any microphone/source and the walls, m.
pub const INTERIOR_MARGIN: f64 = 0.05;
/// Minimum source-to-microphone distance in generated scenes, m.
pub const MIN_SOURCE_DISTANCE: f64 = 0.5;
/// The close-face echo trails the direct path by at least this many samples.
pub const MIN_ECHO_LAG_SAMPLES: f64 = 2.0;
/// Every other first-order echo trails the close-face echo by at least this many samples.
pub const MIN_ECHO_ORDER_GAP_SAMPLES: f64 = 1.0;
/// Upper bound on the automatically chosen image order.
pub const MAX_IMAGE_ORDER: usize = 12;
/// Half-width of the fractional-delay kernel; the kernel has `2 * KERNEL_HALF + 1` taps.
pub const KERNEL_HALF: usize = 40;
/// Hard cap on simulated RIR length, s.
pub const MAX_RIR_SECONDS: f64 = 2.0;

const MAX_REJECTIONS: usize = 10_000;

/// A complete close-surface scene; the unit of dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: RoomBox,
    /// Energy absorption per face, indexed by [`FaceId::index`].
    pub absorption: [f64; 6],
    pub close_face: FaceId,
    pub mics: MicPair,
    pub source: Vec3,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    /// Structural checks that every simulated scene must pass.
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        RoomBox::new(self.room.dims)?;
        if self.absorption.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("absorption coefficients must lie in [0, 1]"));
        }
        MicPair::new(self.mics.m1, self.mics.m2)?;
        for (name, p) in [("m1", self.mics.m1), ("m2", self.mics.m2), ("source", self.source)] {
            if !self.room.contains(p) {
                return Err(Error::invalid(format!("{name} {p} is outside the room")));
            }
        }
        if self.source == self.mics.m1 || self.source == self.mics.m2 {
            return Err(Error::invalid("source coincides with a microphone"));
        }
        Ok(())
    }

    /// Checks the constraints of the random close-surface protocol.
    pub fn validate_protocol(&self) -> Result<()> {
        self.validate()?;
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        let r = &self.room;
        if !(3.0..=9.0).contains(&r.dims.x) || !(3.0..=9.0).contains(&r.dims.y) || !(2.0..=4.0).contains(&r.dims.z) {
            return fail("room dimensions outside the sampling ranges");
        }
        if (self.mics.spacing() - MIC_SPACING).abs() > 1e-9 {
            return fail("microphone spacing is not 0.10 m");
        }
        for face in FaceId::ALL {
            let a = self.absorption[face.index()];
            let ok = if face == self.close_face { a > 0.0 && a < 0.5 } else { a > 0.5 && a < 1.0 };
            if !ok {
                return fail("absorption outside its protocol range");
            }
        }
        for p in [self.mics.m1, self.mics.m2, self.source] {
            if !r.contains_with_margin(p, INTERIOR_MARGIN - 1e-12) {
                return fail("point closer than the interior margin to a wall");
            }
        }
        for m in [self.mics.m1, self.mics.m2] {
            if r.distance_to_face(m, self.close_face) > MAX_MIC_TO_SURFACE + 1e-12 {
                return fail("microphone farther than 0.30 m from the close face");
            }
            if m.distance(self.source) < MIN_SOURCE_DISTANCE {
                return fail("source too close to a microphone");
            }
        }
        if !echo_ordering_holds(self) {
            return fail("close-face echo is not clearly the first echo");
        }
        Ok(())
    }

    pub fn echo_times(&self) -> Result<EchoTimes> {
        geometry::echo_times(&self.mics, self.source, &self.room, self.close_face, &self.constants)
    }

    pub fn virtual_array(&self) -> Result<VirtualArray> {
        VirtualArray::new(&self.mics, &self.room, self.close_face)
    }

    /// Ground-truth direction of the source in the close-surface frame.
    pub fn true_doa(&self) -> Result<Doa> {
        self.virtual_array()?.doa_of(self.source)
    }

    pub fn mic(&self, index: MicIndex) -> Vec3 {
        match index {
            MicIndex::First => self.mics.m1,
            MicIndex::Second => self.mics.m2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicIndex {
    First,
    Second,
}

impl TryFrom<usize> for MicIndex {
    type Error = Error;
    fn try_from(i: usize) -> Result<Self> {
        match i {
            1 => Ok(MicIndex::First),
            2 => Ok(MicIndex::Second),
            _ => Err(Error::invalid(format!("microphone index must be 1 or 2, got {i}"))),
        }
    }
}

/// Analytic arrival times attached to a simulated RIR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RirMeta {
    pub direct_delay: f64,
    pub first_echo_delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub samples: Vec<f64>,
    pub fs: u32,
    pub meta: RirMeta,
}

/// One image source contributing to an RIR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageArrival {
    pub delay: f64,
    pub amplitude: f64,
    pub order: usize,
}

fn open_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

fn echo_delay_via(scene: &SceneSpec, mic: Vec3, face: FaceId) -> f64 {
    geometry::reflect_across(mic, &scene.room, face).distance(scene.source) / scene.constants.c
}

fn echo_ordering_holds(scene: &SceneSpec) -> bool {
    let fs = scene.constants.fs_f64();
    [scene.mics.m1, scene.mics.m2].into_iter().all(|m| {
        let direct = m.distance(scene.source) / scene.constants.c;
        let close = echo_delay_via(scene, m, scene.close_face);
        let others_ok = FaceId::ALL
            .into_iter()
            .filter(|&f| f != scene.close_face)
            .all(|f| echo_delay_via(scene, m, f) - close >= MIN_ECHO_ORDER_GAP_SAMPLES / fs);
        (close - direct) * fs >= MIN_ECHO_LAG_SAMPLES && others_ok
    })
}

/// Draws a random close-surface scene; a pure function of `seed`.
pub fn sample_scene(seed: u64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let constants = Constants::default();
    for _ in 0..MAX_REJECTIONS {
        let dims = Vec3::new(
            rng.random_range(3.0..=9.0),
            rng.random_range(3.0..=9.0),
            rng.random_range(2.0..=4.0),
        );
        let room = RoomBox::new(dims)?;
        let close_face = FaceId::ALL[rng.random_range(0..6)];
        let mut absorption = [0.0; 6];
        for face in FaceId::ALL {
            absorption[face.index()] = if face == close_face {
                open_uniform(&mut rng, 0.0, 0.5)
            } else {
                open_uniform(&mut rng, 0.5, 1.0)
            };
        }

        // Pair center: uniform in the slab next to the close face.
        let axis = close_face.axis();
        let mut center = Vec3::default();
        for a in 0..3 {
            let v = if a == axis {
                let depth = rng.random_range(INTERIOR_MARGIN..=MAX_MIC_TO_SURFACE);
                if close_face.is_max() { dims.get(a) - depth } else { depth }
            } else {
                rng.random_range(INTERIOR_MARGIN..=dims.get(a) - INTERIOR_MARGIN)
            };
            center = center.with(a, v);
        }
        let dir = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = dir.norm();
        if n < 1e-9 {
            continue;
        }
        let half = dir * (0.5 * MIC_SPACING / n);
        let source = Vec3::new(
            rng.random_range(INTERIOR_MARGIN..=dims.x - INTERIOR_MARGIN),
            rng.random_range(INTERIOR_MARGIN..=dims.y - INTERIOR_MARGIN),
            rng.random_range(INTERIOR_MARGIN..=dims.z - INTERIOR_MARGIN),
        );
        let Ok(mics) = MicPair::new(center - half, center + half) else {
            continue;
        };
        let scene = SceneSpec { room, absorption, close_face, mics, source, constants, seed };
        if scene.validate_protocol().is_ok() {
            return Ok(scene);
        }
    }
    Err(Error::Internal(format!("scene sampling exceeded {MAX_REJECTIONS} rejections (seed {seed})")))
}

/// Sabine reverberation time, s.
pub fn rt60_sabine(scene: &SceneSpec) -> Result<f64> {
    let absorbing: f64 = FaceId::ALL
        .iter()
        .map(|&f| scene.room.face_area(f) * scene.absorption[f.index()])
        .sum();
    if absorbing <= 0.0 {
        return Err(Error::invalid("all absorption coefficients are zero; RT60 is unbounded"));
    }
    Ok(0.161 * scene.room.volume() / absorbing)
}

/// Smallest image order whose images all lie beyond `c * RT60`, capped at
/// [`MAX_IMAGE_ORDER`].
pub fn default_max_order(scene: &SceneSpec) -> usize {
    let rt60 = rt60_sabine(scene).unwrap_or(MAX_RIR_SECONDS);
    let d = &scene.room.dims;
    let min_dim = d.x.min(d.y).min(d.z);
    let reach = scene.constants.c * rt60.min(MAX_RIR_SECONDS);
    ((reach / min_dim).floor() as usize + 2).clamp(1, MAX_IMAGE_ORDER)
}

/// Duration covered by simulated RIRs, s.
pub fn rir_duration(scene: &SceneSpec) -> f64 {
    let rt60 = rt60_sabine(scene).unwrap_or(MAX_RIR_SECONDS);
    rt60.min(MAX_RIR_SECONDS)
}

/// Enumerates image sources of `mic` up to `max_order` reflections whose
/// delay does not exceed `max_delay`. Reflection coefficient per bounce is
/// `sqrt(1 - alpha)`; amplitude falls off as `1 / r`.
pub fn image_sources(scene: &SceneSpec, mic: Vec3, max_order: usize, max_delay: f64) -> Vec<ImageArrival> {
    let beta: Vec<f64> = scene.absorption.iter().map(|a| (1.0 - a).max(0.0).sqrt()).collect();
    let dims = scene.room.dims;
    let s = scene.source;
    let n = max_order as i64;
    let c = scene.constants.c;
    let mut out = Vec::new();

    // Per-axis candidates: (relative coordinate, reflections on min face, on max face).
    let axis_terms = |axis: usize| {
        let mut terms = Vec::with_capacity(2 * (2 * max_order + 1));
        for m in -n..=n {
            for q in 0..=1i64 {
                let img = (1 - 2 * q) as f64 * s.get(axis) + 2.0 * m as f64 * dims.get(axis);
                let lo = (m - q).unsigned_abs() as usize;
                let hi = m.unsigned_abs() as usize;
                if lo + hi <= max_order {
                    terms.push((img - mic.get(axis), lo, hi));
                }
            }
        }
        terms
    };
    let (tx, ty, tz) = (axis_terms(0), axis_terms(1), axis_terms(2));
    let max_dist = max_delay * c;
    for &(dx, lx, hx) in &tx {
        for &(dy, ly, hy) in &ty {
            let oxy = lx + hx + ly + hy;
            if oxy > max_order || dx * dx + dy * dy > max_dist * max_dist {
                continue;
            }
            for &(dz, lz, hz) in &tz {
                let order = oxy + lz + hz;
                if order > max_order {
                    continue;
                }
                let r = (dx * dx + dy * dy + dz * dz).sqrt();
                if r > max_dist || r == 0.0 {
                    continue;
                }
                let refl = beta[0].powi(lx as i32)
                    * beta[1].powi(hx as i32)
                    * beta[2].powi(ly as i32)
                    * beta[3].powi(hy as i32)
                    * beta[4].powi(lz as i32)
                    * beta[5].powi(hz as i32);
                if refl == 0.0 {
                    continue;
                }
                out.push(ImageArrival { delay: r / c, amplitude: refl / r, order });
            }
        }
    }
    out
}

/// Hann-windowed sinc evaluated at offset `x` samples from the pulse center.
pub fn windowed_sinc(x: f64) -> f64 {
    let width = KERNEL_HALF as f64 + 1.0;
    if x.abs() >= width {
        return 0.0;
    }
    let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    sinc * 0.5 * (1.0 + (PI * x / width).cos())
}

/// Adds a band-limited pulse centered at fractional sample `t`.
pub(crate) fn stamp_pulse(buf: &mut [f64], t: f64, amplitude: f64) {
    let center = t.round() as i64;
    let half = KERNEL_HALF as i64;
    for n in (center - half).max(0)..=(center + half) {
        let Some(slot) = buf.get_mut(n as usize) else { break };
        *slot += amplitude * windowed_sinc(n as f64 - t);
    }
}

/// Image-source room impulse response of one microphone.
pub fn simulate_rir(scene: &SceneSpec, mic: MicIndex, max_order: usize) -> Result<Rir> {
    if max_order < 1 {
        return Err(Error::invalid("max_order must be at least 1"));
    }
    scene.validate()?;
    let fs = scene.constants.fs_f64();
    let c = scene.constants.c;
    let m = scene.mic(mic);
    let direct_delay = m.distance(scene.source) / c;
    let first_echo_delay = echo_delay_via(scene, m, scene.close_face);

    let duration = rir_duration(scene).max(first_echo_delay + 0.005);
    let len = (duration * fs).ceil() as usize + KERNEL_HALF + 1;
    let mut samples = vec![0.0; len];
    for img in image_sources(scene, m, max_order, duration) {
        stamp_pulse(&mut samples, img.delay * fs, img.amplitude);
    }
    Ok(Rir {
        samples,
        fs: scene.constants.fs,
        meta: RirMeta { direct_delay, first_echo_delay },
    })
}

/// Both RIRs with the default image order.
pub fn simulate_pair(scene: &SceneSpec) -> Result<(Rir, Rir)> {
    let order = default_max_order(scene);
    Ok((
        simulate_rir(scene, MicIndex::First, order)?,
        simulate_rir(scene, MicIndex::Second, order)?,
    ))
}

/// RT60 from Schroeder backward integration: line fit between −5 dB and
/// −25 dB, extrapolated to −60 dB.
pub fn schroeder_rt60(rir: &Rir) -> Result<f64> {
    if rir.samples.is_empty() {
        return Err(Error::invalid("empty RIR"));
    }
    let mut edc: Vec<f64> = rir.samples.iter().map(|h| h * h).collect();
    for i in (0..edc.len() - 1).rev() {
        edc[i] += edc[i + 1];
    }
    let total = edc[0];
    if !(total > 0.0) {
        return Err(Error::Measurement("RIR has no energy".into()));
    }
    let db = |e: f64| 10.0 * (e / total).log10();
    let start = edc.iter().position(|&e| db(e) <= -5.0);
    let end = edc.iter().position(|&e| db(e) <= -25.0);
    let (Some(start), Some(end)) = (start, end) else {
        return Err(Error::Measurement("energy decay does not span −5..−25 dB".into()));
    };
    if end < start + 10 {
        return Err(Error::Measurement(format!("decay segment only {} samples long", end.saturating_sub(start))));
    }
    let fs = f64::from(rir.fs);
    let pts: Vec<(f64, f64)> = (start..end).map(|i| (i as f64 / fs, db(edc[i]))).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Measurement("energy decay is not decreasing".into()));
    }
    Ok(-60.0 / slope)
}


/// Arrival times (s) of the first `count` pulses measured from the samples.
///
/// A pulse is a local maximum of |h| reaching `0.35` of the strongest
/// sample. Each peak is refined to 1/100 sample by band-limited
/// interpolation.
pub fn measure_arrivals(rir: &Rir, count: usize) -> Vec<f64> {
    let h = &rir.samples;
    let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 || h.len() < 3 {
        return Vec::new();
    }
    let threshold = 0.35 * peak;
    let fs = f64::from(rir.fs);
    let mut out = Vec::with_capacity(count);
    let mut last = f64::NEG_INFINITY;
    for i in 1..h.len() - 1 {
        let a = h[i].abs();
        if a >= threshold && a >= h[i - 1].abs() && a > h[i + 1].abs() {
            let t = refine_peak(h, i);
            if t - last > 0.5 {
                out.push(t / fs);
                last = t;
            }
            if out.len() == count {
                break;
            }
        }
    }
    out
}

fn interpolate(h: &[f64], t: f64) -> f64 {
    let center = t.round() as i64;
    let lo = (center - 64).max(0);
    let hi = (center + 64).min(h.len() as i64 - 1);
    (lo..=hi)
        .map(|n| {
            let x = PI * (t - n as f64);
            let sinc = if x == 0.0 { 1.0 } else { x.sin() / x };
            h[n as usize] * sinc
        })
        .sum()
}

fn refine_peak(h: &[f64], i: usize) -> f64 {
    let mut best = (i as f64, h[i].abs());
    for step in -100..=100 {
        let t = i as f64 + step as f64 / 100.0;
        let v = interpolate(h, t).abs();
        if v > best.1 {
            best = (t, v);
        }
    }
    best.0
}
