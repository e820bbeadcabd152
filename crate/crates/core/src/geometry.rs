//! Rigid transforms, pose frames and the calibrated pixel-to-base chain.
//!
//! Frame naming follows `T_a^b`: the pose of frame `a` expressed in frame `b`,
//! so `T_a^b * p_a = p_b`. The pixel chain is
//!
//! ```text
//! p_B = T_E^B * T_U^E * S * [ix, iy, 0, 1]^T,   S = diag(sx, sy, 1, 1)
//! ```
//!
//! with the image origin at the top-left corner, `x` along columns and `y`
//! along rows (increasing depth).

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::Vec3;

/// Tolerance for orthonormality and unit-length checks.
pub const FRAME_TOL: f64 = 1e-9;

/// Default ultrasound pixel spacing in mm per pixel.
pub const DEFAULT_PIXEL_SPACING: f64 = 0.15436;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Rotation3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform from a raw 3x3 matrix, rejecting anything that is
    /// not a proper rotation within [`FRAME_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > FRAME_TOL || (rotation.determinant() - 1.0).abs() > FRAME_TOL {
            return domain("rotation is not orthonormal with determinant +1");
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation,
        }
    }

    /// Fixed-axis roll-pitch-yaw in degrees: rotate about X, then Y, then Z.
    pub fn from_rpy_deg(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            rotation: Rotation3::from_euler_angles(roll.to_radians(), pitch.to_radians(), yaw.to_radians()),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_axis_angle(axis: &Vec3, angle_rad: f64, translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle_rad),
            translation,
        }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// `self * other`: maps `other`'s source frame into `self`'s target frame.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let r_inv = self.rotation.inverse();
        RigidTransform {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle in degrees (geodesic distance from identity).
    pub fn angle_deg(&self) -> f64 {
        let cos = ((self.rotation.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos().to_degrees()
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Continuous pixel coordinates; `ix` is the column, `iy` the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub ix: f64,
    pub iy: f64,
}

impl PixelCoord {
    pub fn new(ix: f64, iy: f64) -> Self {
        Self { ix, iy }
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.ix - other.ix).hypot(self.iy - other.iy)
    }

    pub fn to_vec2(&self) -> crate::Vec2 {
        crate::Vec2::new(self.ix, self.iy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageCalibration {
    /// mm per pixel along image columns.
    pub sx: f64,
    /// mm per pixel along image rows.
    pub sy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for ImageCalibration {
    fn default() -> Self {
        Self {
            sx: DEFAULT_PIXEL_SPACING,
            sy: DEFAULT_PIXEL_SPACING,
            width: 512,
            height: 512,
        }
    }
}

impl ImageCalibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.sx > 0.0 && self.sy > 0.0) || !self.sx.is_finite() || !self.sy.is_finite() {
            return domain("pixel spacing must be positive and finite");
        }
        if self.width == 0 || self.height == 0 {
            return domain("image extent must be non-zero");
        }
        Ok(())
    }

    pub fn contains(&self, p: &PixelCoord) -> bool {
        p.ix >= 0.0 && p.iy >= 0.0 && p.ix < self.width as f64 && p.iy < self.height as f64
    }

    pub fn width_mm(&self) -> f64 {
        self.sx * self.width as f64
    }

    pub fn height_mm(&self) -> f64 {
        self.sy * self.height as f64
    }

    /// Image-frame millimetres back to (unrounded) pixel coordinates.
    pub fn mm_to_pixel(&self, x_mm: f64, y_mm: f64) -> PixelCoord {
        PixelCoord::new(x_mm / self.sx, y_mm / self.sy)
    }

    /// Area of one pixel in mm^2.
    pub fn pixel_area(&self) -> f64 {
        self.sx * self.sy
    }
}

/// Scales a pixel into the image frame: `(sx*ix, sy*iy, 0)`.
pub fn pixel_to_image_mm(p: &PixelCoord, cal: &ImageCalibration) -> Result<Vec3> {
    if !cal.contains(p) {
        return domain(format!(
            "pixel ({}, {}) outside {}x{} image",
            p.ix, p.iy, cal.width, cal.height
        ));
    }
    Ok(Vec3::new(cal.sx * p.ix, cal.sy * p.iy, 0.0))
}

/// `p_B = T_E^B * T_U^E * pixel_to_image_mm(p)`.
pub fn pixel_to_base(
    p: &PixelCoord,
    cal: &ImageCalibration,
    t_u_e: &RigidTransform,
    t_e_b: &RigidTransform,
) -> Result<Vec3> {
    let p_image = pixel_to_image_mm(p, cal)?;
    Ok(t_e_b.apply_point(&t_u_e.apply_point(&p_image)))
}

fn check_unit(v: &Vec3, what: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > 1e-6 {
        return domain(format!("{what} is not unit length (|v| = {})", v.norm()));
    }
    Ok(())
}

/// Flips `z` so that it points into the same half-space as `z_ref`.
/// A zero dot product counts as "not aligned" and flips.
pub fn align_normal(z: &Vec3, z_ref: &Vec3) -> Result<Vec3> {
    check_unit(z, "normal")?;
    check_unit(z_ref, "reference normal")?;
    Ok(if z.dot(z_ref) > 0.0 { *z } else { -z })
}

/// Right-handed frame with the given z axis and x as close as possible to
/// `x_hint`: `y = z x x_hint / |z x x_hint|`, then `x = y x z`.
/// Returned rotation has columns `[x, y, z]`.
pub fn frame_from_zx(z: &Vec3, x_hint: &Vec3) -> Result<Rotation3<f64>> {
    let z = z
        .try_normalize(1e-12)
        .ok_or_else(|| Error::DegenerateFrame("zero-length z axis".into()))?;
    let hint_norm = x_hint.norm();
    if hint_norm < 1e-12 {
        return Err(Error::DegenerateFrame("zero-length x hint".into()));
    }
    let cross = z.cross(x_hint);
    // |z x h| = |h| sin(angle)
    if cross.norm() / hint_norm <= 1e-6_f64.sin() {
        return Err(Error::DegenerateFrame("x hint is parallel to z".into()));
    }
    let y = cross.normalize();
    let x = y.cross(&z).normalize();
    Ok(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z])))
}

/// A pose written as its axes and origin: `[x, y, z, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
    pub t: Vec3,
}

impl PoseFrame {
    pub fn from_rotation(rotation: &Rotation3<f64>, t: Vec3) -> Self {
        let m = rotation.matrix();
        Self {
            x: m.column(0).into_owned(),
            y: m.column(1).into_owned(),
            z: m.column(2).into_owned(),
            t,
        }
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self::from_rotation(t.rotation(), t.translation())
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[self.x, self.y, self.z]))
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::from_rotation(self.rotation(), self.t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("x", &self.x), ("y", &self.y), ("z", &self.z)] {
            if (v.norm() - 1.0).abs() > FRAME_TOL {
                return Err(Error::DegenerateFrame(format!("{name} axis not unit length")));
            }
        }
        if self.x.dot(&self.y).abs() > FRAME_TOL
            || self.y.dot(&self.z).abs() > FRAME_TOL
            || self.x.dot(&self.z).abs() > FRAME_TOL
        {
            return Err(Error::DegenerateFrame("axes not pairwise orthogonal".into()));
        }
        if (self.x.cross(&self.y) - self.z).amax() > FRAME_TOL {
            return Err(Error::DegenerateFrame("frame is not right-handed".into()));
        }
        if !self.t.iter().all(|c| c.is_finite()) {
            return Err(Error::DegenerateFrame("non-finite translation".into()));
        }
        Ok(())
    }

    /// Same frame rotated by `angle_rad` about `axis` through `pivot`.
    pub fn rotated_about(&self, axis: &Vec3, angle_rad: f64, pivot: &Vec3) -> PoseFrame {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle_rad);
        PoseFrame {
            x: r * self.x,
            y: r * self.y,
            z: r * self.z,
            t: pivot + r * (self.t - pivot),
        }
    }
}

/// `count` poses from `p0` to `pn` inclusive. Translation is interpolated
/// linearly; rotation along the constant-axis geodesic between the endpoint
/// orientations. Endpoints are returned verbatim.
pub fn interpolate_poses(p0: &PoseFrame, pn: &PoseFrame, count: usize) -> Result<Vec<PoseFrame>> {
    if count < 2 {
        return domain("pose interpolation needs at least 2 poses");
    }
    let r0 = p0.rotation();
    let relative = r0.inverse() * pn.rotation();
    let mut out = Vec::with_capacity(count);
    out.push(*p0);
    for k in 1..count - 1 {
        let s = k as f64 / (count - 1) as f64;
        let step = relative.powf(s);
        let t = p0.t + (pn.t - p0.t) * s;
        out.push(PoseFrame::from_rotation(&(r0 * step), t));
    }
    out.push(*pn);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -std::f64::consts::PI..std::f64::consts::PI,
            prop::array::uniform3(-500.0f64..500.0),
        )
            .prop_filter("non-zero axis", |(a, _, _)| Vec3::from(*a).norm() > 1e-3)
            .prop_map(|(a, ang, t)| RigidTransform::from_axis_angle(&Vec3::from(a), ang, Vec3::from(t)))
    }

    fn assert_transform_eq(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        let d = a.to_homogeneous() - b.to_homogeneous();
        assert!(d.amax() <= tol, "transforms differ by {}", d.amax());
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let t = RigidTransform::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.7, Vec3::new(4.0, -5.0, 6.0));
        assert_transform_eq(&compose(&t, &RigidTransform::identity()), &t, 0.0);
        assert_transform_eq(&compose(&t, &invert(&t)), &RigidTransform::identity(), 1e-9);
    }

    #[test]
    fn new_rejects_non_rotations() {
        let scaled = Matrix3::identity() * 1.01;
        assert!(RigidTransform::new(scaled, Vec3::zeros()).is_err());
        let reflection = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflection, Vec3::zeros()).is_err());
        assert!(RigidTransform::new(Matrix3::identity(), Vec3::zeros()).is_ok());
    }

    #[test]
    fn rpy_is_fixed_axis_xyz() {
        let t = RigidTransform::from_rpy_deg(90.0, 0.0, 90.0);
        // X first maps y -> z, then Z leaves z alone.
        let v = t.apply_vector(&Vec3::y());
        assert!((v - Vec3::z()).amax() < 1e-12);
        // x: untouched by X, then Z maps x -> y.
        let v = t.apply_vector(&Vec3::x());
        assert!((v - Vec3::y()).amax() < 1e-12);
    }

    #[test]
    fn pixel_to_image_examples() {
        let cal = ImageCalibration::default();
        assert_eq!(
            pixel_to_image_mm(&PixelCoord::new(0.0, 0.0), &cal).unwrap(),
            Vec3::zeros()
        );
        let p = pixel_to_image_mm(&PixelCoord::new(100.0, 200.0), &cal).unwrap();
        assert!((p - Vec3::new(15.436, 30.872, 0.0)).amax() < 1e-12);
        let cal2 = ImageCalibration {
            sx: 0.5,
            sy: 0.25,
            ..cal
        };
        assert_eq!(
            pixel_to_image_mm(&PixelCoord::new(1.0, 0.0), &cal2).unwrap(),
            Vec3::new(0.5, 0.0, 0.0)
        );
        assert!(pixel_to_image_mm(&PixelCoord::new(512.0, 0.0), &cal).is_err());
        assert!(pixel_to_image_mm(&PixelCoord::new(-1.0, 0.0), &cal).is_err());
    }

    #[test]
    fn pixel_to_base_examples() {
        let cal = ImageCalibration::default();
        let id = RigidTransform::identity();
        assert_eq!(
            pixel_to_base(&PixelCoord::new(0.0, 0.0), &cal, &id, &id).unwrap(),
            Vec3::zeros()
        );
        let shift = RigidTransform::from_translation(Vec3::new(10.0, 0.0, 0.0));
        let p = pixel_to_base(&PixelCoord::new(100.0, 200.0), &cal, &id, &shift).unwrap();
        assert!((p - Vec3::new(25.436, 30.872, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn align_normal_cases() {
        let up = Vec3::z();
        assert_eq!(align_normal(&up, &up).unwrap(), up);
        assert_eq!(align_normal(&-up, &up).unwrap(), up);
        assert_eq!(align_normal(&Vec3::x(), &up).unwrap(), -Vec3::x());
        assert!(align_normal(&(up * 2.0), &up).is_err());
    }

    #[test]
    fn frame_from_zx_cases() {
        let r = frame_from_zx(&Vec3::z(), &Vec3::x()).unwrap();
        let f = PoseFrame::from_rotation(&r, Vec3::zeros());
        assert!((f.y - Vec3::y()).amax() < 1e-15);

        let f = PoseFrame::from_rotation(
            &frame_from_zx(&Vec3::z(), &Vec3::new(1.0, 1.0, 0.0)).unwrap(),
            Vec3::zeros(),
        );
        // Gram-Schmidt by hand: x = h/|h| (already orthogonal to z), y = z x x.
        let x = Vec3::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0);
        let y = Vec3::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0);
        assert!((f.x - x).amax() < 1e-12);
        assert!((f.y - y).amax() < 1e-12);
        f.validate().unwrap();

        assert!(matches!(
            frame_from_zx(&Vec3::z(), &Vec3::z()),
            Err(Error::DegenerateFrame(_))
        ));
    }

    #[test]
    fn frame_from_zx_reorthogonalises_tilted_hint() {
        let z = Vec3::new(0.1, -0.2, 1.0).normalize();
        let f = PoseFrame::from_rotation(&frame_from_zx(&z, &Vec3::x()).unwrap(), Vec3::zeros());
        f.validate().unwrap();
        assert!((f.z - z).amax() < 1e-15);
        assert!(f.x.dot(&Vec3::x()) > 0.99);
    }

    #[test]
    fn interpolate_endpoints_and_translation() {
        let p0 = PoseFrame::from_transform(&RigidTransform::identity());
        let pn = PoseFrame::from_transform(&RigidTransform::from_translation(Vec3::new(10.0, 0.0, 0.0)));
        let two = interpolate_poses(&p0, &pn, 2).unwrap();
        assert_eq!(two, vec![p0, pn]);
        let three = interpolate_poses(&p0, &pn, 3).unwrap();
        assert!((three[1].t - Vec3::new(5.0, 0.0, 0.0)).amax() < 1e-12);
        assert!(interpolate_poses(&p0, &pn, 1).is_err());
    }

    #[test]
    fn interpolate_rotation_midpoint_halves_angle() {
        let p0 = PoseFrame::from_transform(&RigidTransform::identity());
        let pn = PoseFrame::from_transform(&RigidTransform::from_axis_angle(&Vec3::z(), FRAC_PI_2, Vec3::zeros()));
        let mid = interpolate_poses(&p0, &pn, 3).unwrap()[1];
        // Axis-angle halving: 45 deg about z.
        let expected = RigidTransform::from_axis_angle(&Vec3::z(), FRAC_PI_2 / 2.0, Vec3::zeros());
        let d = mid.to_transform().rotation_matrix() - expected.rotation_matrix();
        assert!(d.amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let lhs = compose(&compose(&a, &b), &c);
            let rhs = compose(&a, &compose(&b, &c));
            prop_assert!((lhs.to_homogeneous() - rhs.to_homogeneous()).amax() < 1e-9);
            let r = lhs.rotation_matrix();
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn pixel_chain_round_trips(
            ix in 0.0f64..511.0, iy in 0.0f64..511.0,
            a in arb_transform(), b in arb_transform(),
        ) {
            let cal = ImageCalibration::default();
            let p = pixel_to_base(&PixelCoord::new(ix, iy), &cal, &a, &b).unwrap();
            let back = compose(&b, &a).inverse().apply_point(&p);
            prop_assert!((back.x / cal.sx - ix).abs() < 1e-6);
            prop_assert!((back.y / cal.sy - iy).abs() < 1e-6);
        }

        #[test]
        fn pixel_chain_is_affine(
            a0 in 0.0f64..200.0, a1 in 0.0f64..200.0, b0 in 0.0f64..200.0, b1 in 0.0f64..200.0,
            t_u_e in arb_transform(), t_e_b in arb_transform(),
        ) {
            let cal = ImageCalibration::default();
            let f = |x: f64, y: f64| pixel_to_base(&PixelCoord::new(x, y), &cal, &t_u_e, &t_e_b).unwrap();
            let lhs = f(a0, a1) + f(b0, b1) - f(0.0, 0.0);
            prop_assert!((lhs - f(a0 + b0, a1 + b1)).amax() < 1e-9);
        }

        #[test]
        fn align_normal_is_idempotent(v in prop::array::uniform3(-1.0f64..1.0), r in prop::array::uniform3(-1.0f64..1.0)) {
            let v = Vec3::from(v);
            let r = Vec3::from(r);
            prop_assume!(v.norm() > 1e-3 && r.norm() > 1e-3);
            let (v, r) = (v.normalize(), r.normalize());
            let once = align_normal(&v, &r).unwrap();
            prop_assert_eq!(align_normal(&once, &r).unwrap(), once);
        }

        #[test]
        fn interpolated_frames_are_valid(a in arb_transform(), b in arb_transform(), n in 2usize..12) {
            let poses = interpolate_poses(&PoseFrame::from_transform(&a), &PoseFrame::from_transform(&b), n).unwrap();
            prop_assert_eq!(poses.len(), n);
            for p in &poses {
                prop_assert!(p.validate().is_ok());
            }
        }
    }
}
