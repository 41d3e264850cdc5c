//! Points, shoebox rooms, mirror images and the closed-form delay/angle
//! relations of the image-microphone model.
//!
//! All angles are in degrees. Directions of arrival are expressed in a frame
//! attached to the close surface: the third axis is the inward surface
//! normal, so elevation 90° points straight away from the surface.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with(mut self, axis: usize, value: f64) -> Vec3 {
        match axis {
            0 => self.x = value,
            1 => self.y = value,
            _ => self.z = value,
        }
        self
    }

    pub fn midpoint(self, other: Vec3) -> Vec3 {
        (self + other) * 0.5
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.x, self.y, self.z)
    }
}

/// Axis-aligned shoebox with one corner at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomBox {
    pub dims: Vec3,
}

impl RoomBox {
    pub fn new(dims: Vec3) -> Result<Self> {
        if !(dims.is_finite() && dims.x > 0.0 && dims.y > 0.0 && dims.z > 0.0) {
            return Err(Error::invalid(format!("room dimensions must be positive, got {dims}")));
        }
        Ok(Self { dims })
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// Closed containment test (points on a face count as inside).
    pub fn contains(&self, p: Vec3) -> bool {
        self.contains_with_margin(p, 0.0)
    }

    pub fn contains_with_margin(&self, p: Vec3, margin: f64) -> bool {
        p.is_finite()
            && (0..3).all(|a| p.get(a) >= margin && p.get(a) <= self.dims.get(a) - margin)
    }

    pub fn face_area(&self, face: FaceId) -> f64 {
        let (a, b) = match face.axis() {
            0 => (self.dims.y, self.dims.z),
            1 => (self.dims.x, self.dims.z),
            _ => (self.dims.x, self.dims.y),
        };
        a * b
    }

    pub fn surface_area(&self) -> f64 {
        FaceId::ALL.iter().map(|&f| self.face_area(f)).sum()
    }

    /// Signed distance from `p` to the plane of `face`, positive on the room side.
    pub fn distance_to_face(&self, p: Vec3, face: FaceId) -> f64 {
        let coord = p.get(face.axis());
        if face.is_max() {
            self.dims.get(face.axis()) - coord
        } else {
            coord
        }
    }

    pub fn plane_coordinate(&self, face: FaceId) -> f64 {
        if face.is_max() {
            self.dims.get(face.axis())
        } else {
            0.0
        }
    }
}

/// One of the six faces of a [`RoomBox`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceId {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl FaceId {
    pub const ALL: [FaceId; 6] = [
        FaceId::XMin,
        FaceId::XMax,
        FaceId::YMin,
        FaceId::YMax,
        FaceId::ZMin,
        FaceId::ZMax,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FaceId> {
        Self::ALL.get(i).copied()
    }

    pub fn axis(self) -> usize {
        self.index() / 2
    }

    pub fn is_max(self) -> bool {
        self.index() % 2 == 1
    }

    /// Unit normal pointing into the room.
    pub fn inward_normal(self) -> Vec3 {
        let sign = if self.is_max() { -1.0 } else { 1.0 };
        Vec3::default().with(self.axis(), sign)
    }

    /// Right-handed frame whose third axis is the inward normal.
    pub fn frame(self) -> SurfaceFrame {
        let normal = self.inward_normal();
        let first = if self.axis() == 0 {
            Vec3::new(0.0, 1.0, 0.0)
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        SurfaceFrame {
            first,
            second: normal.cross(first),
            normal,
        }
    }
}

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaceId::XMin => "x=0",
            FaceId::XMax => "x=max",
            FaceId::YMin => "y=0",
            FaceId::YMax => "y=max",
            FaceId::ZMin => "z=0",
            FaceId::ZMax => "z=max",
        };
        f.write_str(s)
    }
}

/// Orthonormal basis attached to a surface; `normal` points into the room.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFrame {
    pub first: Vec3,
    pub second: Vec3,
    pub normal: Vec3,
}

impl SurfaceFrame {
    pub fn to_local(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(self.first), v.dot(self.second), v.dot(self.normal))
    }

    pub fn to_world(&self, v: Vec3) -> Vec3 {
        self.first * v.x + self.second * v.y + self.normal * v.z
    }
}

/// Reflection of `p` across the plane of `face`, without range checks.
pub fn reflect_across(p: Vec3, room: &RoomBox, face: FaceId) -> Vec3 {
    let axis = face.axis();
    let plane = room.plane_coordinate(face);
    p.with(axis, 2.0 * plane - p.get(axis))
}

/// Mirrors `p` across `face`.
///
/// Accepts points in the room or in its mirror image across `face`, so that
/// mirroring an image point returns the original.
pub fn mirror_point(p: Vec3, room: &RoomBox, face: FaceId) -> Result<Vec3> {
    let mirrored = reflect_across(p, room, face);
    if room.contains(p) || room.contains(mirrored) {
        Ok(mirrored)
    } else {
        Err(Error::invalid(format!("point {p} is outside the room and its mirror across {face}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicPair {
    pub m1: Vec3,
    pub m2: Vec3,
}

impl MicPair {
    pub fn new(m1: Vec3, m2: Vec3) -> Result<Self> {
        if !(m1.is_finite() && m2.is_finite()) || m1 == m2 {
            return Err(Error::invalid("microphones must be finite and distinct"));
        }
        Ok(Self { m1, m2 })
    }

    pub fn spacing(&self) -> f64 {
        self.m1.distance(self.m2)
    }

    pub fn center(&self) -> Vec3 {
        self.m1.midpoint(self.m2)
    }
}

/// The real microphone pair together with its images across the close face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualArray {
    pub m1: Vec3,
    pub m2: Vec3,
    pub im1: Vec3,
    pub im2: Vec3,
    pub face: FaceId,
}

impl VirtualArray {
    pub fn new(mics: &MicPair, room: &RoomBox, face: FaceId) -> Result<Self> {
        Ok(Self {
            m1: mics.m1,
            m2: mics.m2,
            im1: mirror_point(mics.m1, room, face)?,
            im2: mirror_point(mics.m2, room, face)?,
            face,
        })
    }

    /// Mean of the four points; lies on the close surface.
    pub fn centroid(&self) -> Vec3 {
        (self.m1 + self.m2 + self.im1 + self.im2) * 0.25
    }

    pub fn frame(&self) -> SurfaceFrame {
        self.face.frame()
    }

    /// The pairs whose delays are TDOA, iTDOA and TDOE, in that order.
    pub fn pairs(&self) -> [(Vec3, Vec3); 3] {
        [(self.m1, self.m2), (self.im1, self.im2), (self.m1, self.im1)]
    }

    /// Same pairs expressed in the surface frame, relative to the centroid.
    pub fn local_pairs(&self) -> [(Vec3, Vec3); 3] {
        let frame = self.frame();
        let c = self.centroid();
        self.pairs()
            .map(|(a, b)| (frame.to_local(a - c), frame.to_local(b - c)))
    }

    /// Direction of `source` seen from the centroid, in the surface frame.
    pub fn doa_of(&self, source: Vec3) -> Result<Doa> {
        Doa::from_direction(self.frame().to_local(source - self.centroid()))
    }
}

/// Direction of arrival in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doa {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Doa {
    /// Azimuth must lie in (−180, 180], elevation in [0, 90].
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !(azimuth > -180.0 && azimuth <= 180.0) || !(0.0..=90.0).contains(&elevation) {
            return Err(Error::invalid(format!(
                "direction ({azimuth}, {elevation}) out of range"
            )));
        }
        Ok(Self { azimuth, elevation })
    }

    /// Converts a non-zero direction vector; tiny negative elevations
    /// (below 1e-9 degrees) are rounded to zero.
    pub fn from_direction(v: Vec3) -> Result<Self> {
        let r = v.norm();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid("direction vector must be non-zero and finite"));
        }
        let mut azimuth = v.y.atan2(v.x).to_degrees();
        if azimuth <= -180.0 {
            azimuth += 360.0;
        }
        let mut elevation = (v.z / r).clamp(-1.0, 1.0).asin().to_degrees();
        if elevation < 0.0 && elevation > -1e-9 {
            elevation = 0.0;
        }
        Doa::new(azimuth, elevation)
    }
}

/// The echo-time triple (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EchoTimes {
    pub tdoa: f64,
    pub itdoa: f64,
    pub tdoe: f64,
}

impl EchoTimes {
    pub fn to_array(self) -> [f64; 3] {
        [self.tdoa, self.itdoa, self.tdoe]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { tdoa: a[0], itdoa: a[1], tdoe: a[2] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Speed of sound, m/s.
    pub c: f64,
    /// Nominal inter-microphone distance, m.
    pub d: f64,
    /// Sample rate, Hz.
    pub fs: u32,
}

impl Default for Constants {
    fn default() -> Self {
        Self { c: 343.0, d: 0.10, fs: 16_000 }
    }
}

impl Constants {
    pub fn validate(&self) -> Result<()> {
        if self.c > 0.0 && self.d > 0.0 && self.fs > 0 && self.c.is_finite() && self.d.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("constants c, d and fs must be positive"))
        }
    }

    pub fn fs_f64(&self) -> f64 {
        f64::from(self.fs)
    }

    /// Largest physically possible |TDOA| for the nominal spacing.
    pub fn max_tdoa(&self) -> f64 {
        self.d / self.c
    }
}

/// TDOA, image TDOA and TDOE from exact path lengths.
pub fn echo_times(
    mics: &MicPair,
    source: Vec3,
    room: &RoomBox,
    face: FaceId,
    k: &Constants,
) -> Result<EchoTimes> {
    k.validate()?;
    for (name, p) in [("m1", mics.m1), ("m2", mics.m2), ("source", source)] {
        if !room.contains(p) {
            return Err(Error::invalid(format!("{name} {p} is outside the room")));
        }
    }
    let d1 = mics.m1.distance(source);
    let d2 = mics.m2.distance(source);
    if d1 == 0.0 || d2 == 0.0 {
        return Err(Error::invalid("source coincides with a microphone"));
    }
    let va = VirtualArray::new(mics, room, face)?;
    let e1 = va.im1.distance(source);
    let e2 = va.im2.distance(source);
    Ok(EchoTimes {
        tdoa: (d2 - d1) / k.c,
        itdoa: (e2 - e1) / k.c,
        tdoe: (e1 - d1) / k.c,
    })
}

/// Angle of arrival relative to the pair axis, saturating when |cτ/d| > 1.
pub fn aoa_from_tdoa(tau: f64, k: &Constants) -> f64 {
    (k.c * tau / k.d).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn doa_unit_vector(doa: Doa) -> Vec3 {
    let (az, el) = (doa.azimuth.to_radians(), doa.elevation.to_radians());
    Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Far-field delay of `p_b` relative to `p_a` for a plane wave from `doa`.
///
/// Positive when the wave reaches `p_b` later, matching the sign of
/// [`echo_times`].
pub fn pair_delay_farfield(p_a: Vec3, p_b: Vec3, doa: Doa, k: &Constants) -> f64 {
    pair_delay_unit(p_a, p_b, doa_unit_vector(doa), k.c)
}

pub(crate) fn pair_delay_unit(p_a: Vec3, p_b: Vec3, unit: Vec3, c: f64) -> f64 {
    -unit.dot(p_b - p_a) / c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn room() -> RoomBox {
        RoomBox::new(Vec3::new(4.0, 6.0, 3.0)).unwrap()
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    #[test]
    fn mirror_examples() {
        let r = room();
        let p = Vec3::new(1.0, 1.0, 0.2);
        let m = mirror_point(p, &r, FaceId::ZMin).unwrap();
        assert_eq!(m, Vec3::new(1.0, 1.0, -0.2));
        assert_eq!(mirror_point(m, &r, FaceId::ZMin).unwrap(), p);
        let q = mirror_point(Vec3::new(2.0, 3.0, 1.0), &r, FaceId::XMax).unwrap();
        assert!(close(q, Vec3::new(6.0, 3.0, 1.0), 1e-12));
    }

    #[test]
    fn mirror_rejects_far_points() {
        let r = room();
        assert!(mirror_point(Vec3::new(10.0, 1.0, 1.0), &r, FaceId::ZMin).is_err());
        assert!(mirror_point(Vec3::new(1.0, 1.0, -5.0), &r, FaceId::ZMin).is_err());
    }

    #[test]
    fn room_rejects_non_positive_dims() {
        assert!(RoomBox::new(Vec3::new(1.0, 0.0, 1.0)).is_err());
        assert!(RoomBox::new(Vec3::new(1.0, 1.0, f64::NAN)).is_err());
    }

    #[test]
    fn echo_times_symmetric_source_has_zero_tdoa() {
        let r = room();
        let mics = MicPair::new(Vec3::new(1.0, 1.0, 0.2), Vec3::new(1.1, 1.0, 0.2)).unwrap();
        let s = Vec3::new(1.05, 4.0, 2.0);
        let v = echo_times(&mics, s, &r, FaceId::ZMin, &Constants::default()).unwrap();
        assert!(v.tdoa.abs() < 1e-15);
        assert!(v.itdoa.abs() < 1e-15);
    }

    #[test]
    fn echo_times_explicit_and_specular_bounce() {
        let r = room();
        let k = Constants::default();
        let m1 = Vec3::new(1.0, 1.0, 0.2);
        let m2 = Vec3::new(1.1, 1.0, 0.2);
        let s = Vec3::new(1.0, 3.0, 1.2);
        let mics = MicPair::new(m1, m2).unwrap();
        let v = echo_times(&mics, s, &r, FaceId::ZMin, &k).unwrap();

        let d1 = (0.0f64 + 4.0 + 1.0).sqrt();
        let d2 = (0.01f64 + 4.0 + 1.0).sqrt();
        assert!((v.tdoa - (d2 - d1) / 343.0).abs() < 1e-15);
        let e1 = (0.0f64 + 4.0 + 1.4 * 1.4).sqrt();
        assert!((v.tdoe - (e1 - d1) / 343.0).abs() < 1e-15);

        // Independent route: find the specular point on z=0 where the
        // angle of incidence equals the angle of reflection, then sum the
        // two legs of the bounced path.
        let bounce = |m: Vec3| {
            let t = m.z / (m.z + s.z);
            let p = Vec3::new(m.x + t * (s.x - m.x), m.y + t * (s.y - m.y), 0.0);
            m.distance(p) + p.distance(s)
        };
        let tdoe = (bounce(m1) - m1.distance(s)) / k.c;
        let itdoa = (bounce(m2) - bounce(m1)) / k.c;
        assert!((v.tdoe - tdoe).abs() < 1e-14);
        assert!((v.itdoa - itdoa).abs() < 1e-14);
    }

    #[test]
    fn mics_on_face_have_zero_tdoe() {
        let r = room();
        let mics = MicPair::new(Vec3::new(1.0, 1.0, 0.0), Vec3::new(1.1, 1.0, 0.0)).unwrap();
        let v = echo_times(&mics, Vec3::new(2.0, 3.0, 1.0), &r, FaceId::ZMin, &Constants::default())
            .unwrap();
        assert_eq!(v.tdoe, 0.0);
        assert_eq!(v.itdoa, v.tdoa);
    }

    #[test]
    fn echo_times_rejects_coincident_source() {
        let r = room();
        let mics = MicPair::new(Vec3::new(1.0, 1.0, 0.2), Vec3::new(1.1, 1.0, 0.2)).unwrap();
        let k = Constants::default();
        assert!(echo_times(&mics, mics.m1, &r, FaceId::ZMin, &k).is_err());
        assert!(echo_times(&mics, Vec3::new(9.0, 1.0, 1.0), &r, FaceId::ZMin, &k).is_err());
    }

    #[test]
    fn aoa_examples() {
        let k = Constants::default();
        assert!((aoa_from_tdoa(0.0, &k) - 90.0).abs() < 1e-12);
        assert!(aoa_from_tdoa(k.d / k.c, &k).abs() < 1e-6);
        assert_eq!(aoa_from_tdoa(1.1 * k.d / k.c, &k), 0.0);
        assert_eq!(aoa_from_tdoa(-1.1 * k.d / k.c, &k), 180.0);
    }

    #[test]
    fn unit_vector_anchors() {
        let u = |a, e| doa_unit_vector(Doa::new(a, e).unwrap());
        assert!(close(u(0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 1e-15));
        assert!(close(u(90.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 1e-15));
        assert!(close(u(0.0, 90.0), Vec3::new(0.0, 0.0, 1.0), 1e-15));
    }

    #[test]
    fn doa_range_checks() {
        assert!(Doa::new(-180.0, 0.0).is_err());
        assert!(Doa::new(180.0, 0.0).is_ok());
        assert!(Doa::new(0.0, -1.0).is_err());
        assert!(Doa::new(0.0, 90.5).is_err());
        let d = Doa::from_direction(Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        assert_eq!(d.azimuth, 180.0);
    }

    #[test]
    fn farfield_examples() {
        let k = Constants::default();
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(0.1, 0.0, 0.0);
        let broadside = Doa::new(90.0, 0.0).unwrap();
        assert!(pair_delay_farfield(a, b, broadside, &k).abs() < 1e-18);
        let endfire = Doa::new(0.0, 0.0).unwrap();
        assert!((pair_delay_farfield(a, b, endfire, &k) + 0.1 / 343.0).abs() < 1e-18);
    }

    #[test]
    fn farfield_matches_exact_tdoa_at_100m() {
        let big = RoomBox::new(Vec3::new(300.0, 300.0, 300.0)).unwrap();
        let k = Constants::default();
        let m1 = Vec3::new(150.0, 150.0, 0.2);
        let m2 = Vec3::new(150.08, 150.06, 0.2);
        let mics = MicPair::new(m1, m2).unwrap();
        let dir = Vec3::new(0.3, -0.8, 0.5);
        let dir = dir * (1.0 / dir.norm());
        let s = mics.center() + dir * 100.0;
        let v = echo_times(&mics, s, &big, FaceId::ZMin, &k).unwrap();
        let doa = Doa::from_direction(s - mics.center()).unwrap();
        let ff = pair_delay_farfield(m1, m2, doa, &k);
        assert!((v.tdoa - ff).abs() < 1e-7, "{} vs {}", v.tdoa, ff);
    }

    #[test]
    fn frames_are_right_handed() {
        for f in FaceId::ALL {
            let fr = f.frame();
            assert!(close(fr.first.cross(fr.second), fr.normal, 1e-15));
            assert_eq!(fr.normal, f.inward_normal());
        }
    }

    #[test]
    fn centroid_lies_on_surface() {
        let r = room();
        let mics = MicPair::new(Vec3::new(3.8, 1.0, 1.0), Vec3::new(3.75, 1.05, 1.07)).unwrap();
        let va = VirtualArray::new(&mics, &r, FaceId::XMax).unwrap();
        assert!((va.centroid().x - 4.0).abs() < 1e-12);
        let doa = va.doa_of(Vec3::new(1.0, 1.0, 1.0)).unwrap();
        assert!((doa.elevation - 90.0).abs() < 2.0);
    }

    fn arb_face() -> impl Strategy<Value = FaceId> {
        (0usize..6).prop_map(|i| FaceId::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn mirror_is_involution(x in 0.0..4.0f64, y in 0.0..6.0f64, z in 0.0..3.0f64, face in arb_face()) {
            let r = room();
            let p = Vec3::new(x, y, z);
            let once = mirror_point(p, &r, face).unwrap();
            let twice = mirror_point(once, &r, face).unwrap();
            prop_assert!(close(twice, p, 1e-12));
            // midpoint lies on the face plane
            let mid = p.midpoint(once);
            prop_assert!((mid.get(face.axis()) - r.plane_coordinate(face)).abs() < 1e-12);
        }

        #[test]
        fn tdoa_bounded_by_spacing(
            cx in 0.5..3.5f64, cy in 0.5..5.5f64, cz in 0.1..0.3f64,
            az in -3.1..3.1f64, sx in 0.1..3.9f64, sy in 0.1..5.9f64, sz in 0.1..2.9f64,
        ) {
            let r = room();
            let k = Constants::default();
            let half = Vec3::new(az.cos(), az.sin(), 0.0) * 0.05;
            let mics = MicPair::new(Vec3::new(cx, cy, cz) - half, Vec3::new(cx, cy, cz) + half).unwrap();
            let s = Vec3::new(sx, sy, sz);
            prop_assume!(s.distance(mics.m1) > 1e-3 && s.distance(mics.m2) > 1e-3);
            let v = echo_times(&mics, s, &r, FaceId::ZMin, &k).unwrap();
            prop_assert!(v.tdoa.abs() <= mics.spacing() / k.c + 1e-12);
            prop_assert!(v.tdoe >= 0.0);
        }

        #[test]
        fn farfield_consistency_per_virtual_pair(
            cz in 0.05..0.3f64, az in -3.1..3.1f64, tilt in -1.0..1.0f64,
            saz in -3.1..3.1f64, sel in 0.05..1.5f64, dist in 50.0..120.0f64,
        ) {
            let big = RoomBox::new(Vec3::new(400.0, 400.0, 200.0)).unwrap();
            let k = Constants::default();
            let c = Vec3::new(200.0, 200.0, cz.max(0.06));
            let half = Vec3::new(az.cos() * tilt.cos(), az.sin() * tilt.cos(), tilt.sin() * 0.2) ;
            let half = half * (0.05 / half.norm());
            let mics = MicPair::new(c - half, c + half).unwrap();
            let dir = Vec3::new(sel.cos() * saz.cos(), sel.cos() * saz.sin(), sel.sin());
            let s = c + dir * dist;
            let v = echo_times(&mics, s, &big, FaceId::ZMin, &k).unwrap();
            let va = VirtualArray::new(&mics, &big, FaceId::ZMin).unwrap();
            for ((a, b), value) in va.pairs().into_iter().zip(v.to_array()) {
                // Each pair is steered from its own midpoint.
                let doa = Doa::from_direction(s - a.midpoint(b)).unwrap();
                let ff = pair_delay_farfield(a, b, doa, &k);
                prop_assert!((ff - value).abs() < 1e-6, "{ff} vs {value}");
            }
        }

        #[test]
        fn unit_vector_norm(ai in 0usize..720, ei in 0usize..181) {
            let doa = Doa::new(-179.5 + 0.5 * ai as f64, 0.5 * ei as f64).unwrap();
            prop_assert!((doa_unit_vector(doa).norm() - 1.0).abs() < 1e-12);
        }
    }
}
