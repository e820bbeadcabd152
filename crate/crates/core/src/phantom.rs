//! Parametric digital phantom: a heightfield skin surface, two compliant
//! vessel tubes and the three planning landmarks.
//!
//! The skin heightfield always lives in the phantom's own frame (+z out of
//! the skin); [`SkinSurface::frame`] places that frame in the robot base.
//! Vessels, landmarks and the major axis are stored in base coordinates and
//! are moved eagerly by [`PhantomModel::transformed`].

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{PoseFrame, RigidTransform};
use crate::{Vec2, Vec3};

/// Force at which cross sections have their undeformed area.
pub const DEFAULT_REFERENCE_FORCE: f64 = 5.0;
/// Lowest fraction of the undeformed area a compressed lumen keeps.
pub const MIN_AREA_FACTOR: f64 = 0.05;
/// Cuts flatter than this (|cos| between tube axis and plane normal) are ignored.
const MIN_CUT_COSINE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselLabel {
    Vein,
    Artery,
}

impl fmt::Display for VesselLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VesselLabel::Vein => f.write_str("vein"),
            VesselLabel::Artery => f.write_str("artery"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselTube {
    pub label: VesselLabel,
    pub centerline: Vec<Vec3>,
    /// Lumen radius at each centerline vertex.
    pub radii: Vec<f64>,
    /// Fractional area loss per Newton above the reference force.
    pub compliance: f64,
}

/// Closest point on a tube's centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlineProjection {
    pub point: Vec3,
    pub distance: f64,
    pub radius: f64,
    /// Unit tangent of the segment holding `point`.
    pub tangent: Vec3,
}

impl VesselTube {
    pub fn length(&self) -> f64 {
        self.centerline.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Area factor `clamp(1 - c (F - F_ref), 0.05, 1)`.
    pub fn area_factor(&self, force: f64, reference_force: f64) -> f64 {
        (1.0 - self.compliance * (force - reference_force)).clamp(MIN_AREA_FACTOR, 1.0)
    }

    pub fn project(&self, p: &Vec3) -> CenterlineProjection {
        let mut best: Option<CenterlineProjection> = None;
        for (i, w) in self.centerline.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len2 = seg.norm_squared();
            let t = ((p - w[0]).dot(&seg) / len2).clamp(0.0, 1.0);
            let q = w[0] + seg * t;
            let d = (p - q).norm();
            if best.is_none_or(|b| d < b.distance) {
                best = Some(CenterlineProjection {
                    point: q,
                    distance: d,
                    radius: self.radii[i] + (self.radii[i + 1] - self.radii[i]) * t,
                    tangent: seg / len2.sqrt(),
                });
            }
        }
        best.expect("tube has at least one segment")
    }

    /// Arc-length resampling at `spacing`, endpoints included.
    pub fn resample(&self, spacing: f64) -> Result<Vec<Vec3>> {
        if !(spacing > 0.0) {
            return domain("resampling spacing must be positive");
        }
        let total = self.length();
        let eps = 1e-9 * total.max(1.0);
        let mut out = vec![self.centerline[0]];
        let mut target = spacing;
        let mut walked = 0.0;
        for w in self.centerline.windows(2) {
            let seg_len = (w[1] - w[0]).norm();
            while target <= walked + seg_len + eps && target < total - eps {
                let t = ((target - walked) / seg_len).clamp(0.0, 1.0);
                out.push(w[0] + (w[1] - w[0]) * t);
                target += spacing;
            }
            walked += seg_len;
        }
        out.push(*self.centerline.last().unwrap());
        Ok(out)
    }

    fn transformed(&self, t: &RigidTransform) -> VesselTube {
        VesselTube {
            centerline: self.centerline.iter().map(|p| t.apply_point(p)).collect(),
            ..self.clone()
        }
    }
}

/// Skin heightfield over a regular x-y grid in the phantom frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinSurface {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major heights: `heights[iy * nx + ix]`.
    pub heights: Vec<f64>,
    /// Phantom frame expressed in the robot base.
    #[serde(default)]
    pub frame: RigidTransform,
}

impl SkinSurface {
    pub fn new(origin: [f64; 2], spacing: f64, nx: usize, ny: usize, heights: Vec<f64>) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return domain("grid spacing must be positive");
        }
        if nx < 2 || ny < 2 {
            return domain("heightfield needs at least 2x2 samples");
        }
        if heights.len() != nx * ny {
            return domain(format!("expected {} heights, got {}", nx * ny, heights.len()));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return domain("heightfield contains non-finite values");
        }
        Ok(Self {
            origin,
            spacing,
            nx,
            ny,
            heights,
            frame: RigidTransform::identity(),
        })
    }

    /// Builds a heightfield by sampling `f(x, y)` on the grid.
    pub fn from_fn(origin: [f64; 2], spacing: f64, nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut heights = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                heights.push(f(origin[0] + ix as f64 * spacing, origin[1] + iy as f64 * spacing));
            }
        }
        Self::new(origin, spacing, nx, ny, heights)
    }

    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + (self.nx - 1) as f64 * self.spacing,
                self.origin[1] + (self.ny - 1) as f64 * self.spacing,
            ],
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (lo, hi) = self.extent();
        x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1]
    }

    fn h(&self, ix: usize, iy: usize) -> f64 {
        self.heights[iy * self.nx + ix]
    }

    /// Central-difference gradient at a grid node (one-sided on the border).
    fn node_gradient(&self, ix: usize, iy: usize) -> (f64, f64) {
        let (x0, x1) = (ix.saturating_sub(1), (ix + 1).min(self.nx - 1));
        let (y0, y1) = (iy.saturating_sub(1), (iy + 1).min(self.ny - 1));
        let gx = (self.h(x1, iy) - self.h(x0, iy)) / ((x1 - x0) as f64 * self.spacing);
        let gy = (self.h(ix, y1) - self.h(ix, y0)) / ((y1 - y0) as f64 * self.spacing);
        (gx, gy)
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let fx = (x - self.origin[0]) / self.spacing;
        let fy = (y - self.origin[1]) / self.spacing;
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        (ix, iy, fx - ix as f64, fy - iy as f64)
    }

    /// Bilinear height at local `(x, y)`, `None` outside the footprint.
    pub fn height(&self, x: f64, y: f64) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        let (ix, iy, u, v) = self.cell(x, y);
        Some(
            self.h(ix, iy) * (1.0 - u) * (1.0 - v)
                + self.h(ix + 1, iy) * u * (1.0 - v)
                + self.h(ix, iy + 1) * (1.0 - u) * v
                + self.h(ix + 1, iy + 1) * u * v,
        )
    }

    /// Outward normal in the local frame, from bilinearly interpolated node gradients.
    pub fn local_normal(&self, x: f64, y: f64) -> Option<Vec3> {
        if !self.contains(x, y) {
            return None;
        }
        let (ix, iy, u, v) = self.cell(x, y);
        let corners = [
            (self.node_gradient(ix, iy), (1.0 - u) * (1.0 - v)),
            (self.node_gradient(ix + 1, iy), u * (1.0 - v)),
            (self.node_gradient(ix, iy + 1), (1.0 - u) * v),
            (self.node_gradient(ix + 1, iy + 1), u * v),
        ];
        let (gx, gy) = corners
            .iter()
            .fold((0.0, 0.0), |(ax, ay), ((gx, gy), w)| (ax + gx * w, ay + gy * w));
        Some(Vec3::new(-gx, -gy, 1.0).normalize())
    }

    /// Local coordinates of a base-frame point.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.frame.inverse().apply_point(p)
    }

    /// Whether a base-frame point lies strictly below the skin. Points outside
    /// the footprint never collide.
    pub fn is_below(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        self.height(l.x, l.y).is_some_and(|h| l.z < h)
    }
}

/// Planning landmarks: suprasternal notch, lateral clavicle, hyoid tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub sn: Vec3,
    pub lc: Vec3,
    pub ht: Vec3,
}

impl Landmarks {
    pub fn transformed(&self, t: &RigidTransform) -> Landmarks {
        Landmarks {
            sn: t.apply_point(&self.sn),
            lc: t.apply_point(&self.lc),
            ht: t.apply_point(&self.ht),
        }
    }

    pub fn as_array(&self) -> [Vec3; 3] {
        [self.sn, self.lc, self.ht]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomModel {
    pub surface: SkinSurface,
    vessels: [VesselTube; 2],
    pub landmarks: Landmarks,
    /// Unit direction of the neck's long axis, base frame.
    pub major_axis: Vec3,
    pub reference_force: f64,
    pub max_force: f64,
    pub vein_radius_range: [f64; 2],
}

/// One vessel crossing of an imaging plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSection {
    pub label: VesselLabel,
    /// Ellipse centre, base frame.
    pub center: Vec3,
    /// `[across, along]`: semi-axis perpendicular to the projected tube axis,
    /// then the semi-axis along it, after compression.
    pub semi_axes: [f64; 2],
    /// In-plane unit directions of the two semi-axes, base frame.
    pub axis_dirs: [Vec3; 2],
    /// Multiplier that was applied to the more vertical semi-axis.
    pub area_factor: f64,
    /// Deformed lumen area, mm^2.
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub heights: Vec<f64>,
}

/// On-disk scene description (JSON). Lengths mm, forces N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub surface: SurfaceSpec,
    pub major_axis: [f64; 3],
    #[serde(default = "default_reference_force")]
    pub reference_force: f64,
    #[serde(default = "default_max_force")]
    pub max_force: f64,
    #[serde(default = "default_vein_range")]
    pub vein_radius_range: [f64; 2],
    pub vessels: Vec<VesselTube>,
    pub landmarks: Landmarks,
}

fn default_reference_force() -> f64 {
    DEFAULT_REFERENCE_FORCE
}
fn default_max_force() -> f64 {
    10.0
}
fn default_vein_range() -> [f64; 2] {
    [3.24, 6.16]
}

pub const SCENE_VERSION: u32 = 1;

const DEFAULT_SCENE_JSON: &str = include_str!("../../../data/default_scene.json");

impl SceneFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The bundled default scene.
    pub fn default_scene() -> Self {
        Self::from_json(DEFAULT_SCENE_JSON).expect("bundled scene parses")
    }
}

/// Scenario placement of the phantom in the robot base frame plus per-run
/// perturbations of the scan path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    /// Roll, pitch, yaw in degrees (fixed axes X, then Y, then Z).
    #[serde(default)]
    pub phantom_rotation_deg: [f64; 3],
    #[serde(default = "default_phantom_translation")]
    pub phantom_translation: [f64; 3],
    /// Std-dev of extra Gaussian noise on each path endpoint (mm, per axis).
    #[serde(default)]
    pub path_noise_sigma: f64,
    /// `[dx, dy]` added to the scan path start, phantom x/y axes (mm).
    #[serde(default)]
    pub start_deviation: [f64; 2],
    #[serde(default)]
    pub end_deviation: [f64; 2],
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_phantom_translation() -> [f64; 3] {
    [450.0, 0.0, 0.0]
}

impl ScenarioConfig {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            phantom_rotation_deg: [0.0; 3],
            phantom_translation: default_phantom_translation(),
            path_noise_sigma: 0.0,
            start_deviation: [0.0; 2],
            end_deviation: [0.0; 2],
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .phantom_rotation_deg
            .iter()
            .chain(&self.phantom_translation)
            .chain(&self.start_deviation)
            .chain(&self.end_deviation)
            .all(|v| v.is_finite());
        if !finite {
            return domain(format!("scenario {}: non-finite value", self.id));
        }
        if !(self.path_noise_sigma >= 0.0) {
            return domain(format!("scenario {}: path noise sigma must be >= 0", self.id));
        }
        Ok(())
    }

    /// Phantom frame in the robot base.
    pub fn transform(&self) -> RigidTransform {
        let [r, p, y] = self.phantom_rotation_deg;
        let rot = RigidTransform::from_rpy_deg(r, p, y);
        RigidTransform::from_rotation(*rot.rotation(), Vec3::from(self.phantom_translation))
    }
}

impl PhantomModel {
    /// Builds a model enforcing every scene invariant.
    pub fn from_scene(scene: &SceneFile) -> Result<Self> {
        let model = Self::from_scene_unchecked(scene)?;
        let violations = model.violations();
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidScene(violations))
        }
    }

    /// Builds a model checking only what is needed to query it; semantic
    /// invariants are reported by [`PhantomModel::violations`].
    pub fn from_scene_unchecked(scene: &SceneFile) -> Result<Self> {
        let mut problems = Vec::new();
        if scene.version != SCENE_VERSION {
            problems.push(format!("unsupported scene version {}", scene.version));
        }
        let s = &scene.surface;
        let surface = match SkinSurface::new(s.origin, s.spacing, s.nx, s.ny, s.heights.clone()) {
            Ok(surface) => Some(surface),
            Err(e) => {
                problems.push(format!("surface: {e}"));
                None
            }
        };
        let veins: Vec<_> = scene.vessels.iter().filter(|v| v.label == VesselLabel::Vein).collect();
        let arteries: Vec<_> = scene
            .vessels
            .iter()
            .filter(|v| v.label == VesselLabel::Artery)
            .collect();
        if veins.len() != 1 || arteries.len() != 1 || scene.vessels.len() != 2 {
            problems.push(format!(
                "expected exactly one vein and one artery, found {} vein(s) and {} arter(y/ies)",
                veins.len(),
                arteries.len()
            ));
        }
        for v in &scene.vessels {
            if v.centerline.len() < 2 {
                problems.push(format!("{}: centerline needs at least 2 points", v.label));
            }
            if v.radii.len() != v.centerline.len() {
                problems.push(format!(
                    "{}: {} radii for {} centerline points",
                    v.label,
                    v.radii.len(),
                    v.centerline.len()
                ));
            }
            if v.centerline.windows(2).any(|w| (w[1] - w[0]).norm() == 0.0) {
                problems.push(format!("{}: consecutive centerline points coincide", v.label));
            }
            if v.centerline.iter().flatten().chain(&v.radii).any(|c| !c.is_finite()) || !v.compliance.is_finite() {
                problems.push(format!("{}: non-finite values", v.label));
            }
        }
        let axis = Vec3::from(scene.major_axis);
        if axis.norm() < 1e-9 {
            problems.push("major axis has zero length".into());
        }
        if !problems.is_empty() {
            return Err(Error::InvalidScene(problems));
        }
        Ok(Self {
            surface: surface.expect("checked above"),
            vessels: [veins[0].clone(), arteries[0].clone()],
            landmarks: scene.landmarks,
            major_axis: axis.normalize(),
            reference_force: scene.reference_force,
            max_force: scene.max_force,
            vein_radius_range: scene.vein_radius_range,
        })
    }

    pub fn default_scene() -> Self {
        Self::from_scene(&SceneFile::default_scene()).expect("bundled scene is valid")
    }

    pub fn to_scene(&self) -> SceneFile {
        let to_local = self.surface.frame.inverse();
        let local = self.transformed(&to_local);
        SceneFile {
            version: SCENE_VERSION,
            surface: SurfaceSpec {
                origin: local.surface.origin,
                spacing: local.surface.spacing,
                nx: local.surface.nx,
                ny: local.surface.ny,
                heights: local.surface.heights.clone(),
            },
            major_axis: local.major_axis.into(),
            reference_force: local.reference_force,
            max_force: local.max_force,
            vein_radius_range: local.vein_radius_range,
            vessels: local.vessels.to_vec(),
            landmarks: local.landmarks,
        }
    }

    /// Builds a model directly from parts (used for constructed test scenes).
    pub fn from_parts(
        surface: SkinSurface,
        vein: VesselTube,
        artery: VesselTube,
        landmarks: Landmarks,
        major_axis: Vec3,
    ) -> Self {
        Self {
            surface,
            vessels: [vein, artery],
            landmarks,
            major_axis: major_axis.normalize(),
            reference_force: DEFAULT_REFERENCE_FORCE,
            max_force: 10.0,
            vein_radius_range: default_vein_range(),
        }
    }

    pub fn vessels(&self) -> &[VesselTube; 2] {
        &self.vessels
    }

    pub fn vessel(&self, label: VesselLabel) -> &VesselTube {
        match label {
            VesselLabel::Vein => &self.vessels[0],
            VesselLabel::Artery => &self.vessels[1],
        }
    }

    pub fn vessel_mut(&mut self, label: VesselLabel) -> &mut VesselTube {
        match label {
            VesselLabel::Vein => &mut self.vessels[0],
            VesselLabel::Artery => &mut self.vessels[1],
        }
    }

    /// Every invariant violation, human readable. Empty means valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let to_local = self.surface.frame.inverse();
        let [lo, hi] = self.vein_radius_range;
        let vein = self.vessel(VesselLabel::Vein);
        let artery = self.vessel(VesselLabel::Artery);
        for (i, r) in vein.radii.iter().enumerate() {
            if *r < lo || *r > hi {
                out.push(format!("vein radius {r} mm at point {i} outside [{lo}, {hi}] mm"));
            }
        }
        for (i, r) in artery.radii.iter().enumerate() {
            if !(*r > 0.0) {
                out.push(format!("artery radius {r} mm at point {i} is not positive"));
            }
        }
        let span = self.max_force - self.reference_force;
        for tube in &self.vessels {
            let loss = tube.compliance * span;
            if !(0.0..1.0).contains(&loss) {
                out.push(format!(
                    "{} compliance {} /N gives area loss {loss} over [{}, {}] N (needs 0 <= loss < 1)",
                    tube.label, tube.compliance, self.reference_force, self.max_force
                ));
            }
        }
        if !(vein.compliance > artery.compliance) {
            out.push(format!(
                "vein compliance {} must exceed artery compliance {}",
                vein.compliance, artery.compliance
            ));
        }
        for tube in &self.vessels {
            for (i, (p, r)) in tube.centerline.iter().zip(&tube.radii).enumerate() {
                let l = to_local.apply_point(p);
                match self.surface.height(l.x, l.y) {
                    None => out.push(format!("{} point {i} lies outside the skin footprint", tube.label)),
                    Some(h) if l.z + r >= h => out.push(format!(
                        "{} point {i} reaches above the skin (top {:.3} mm, skin {:.3} mm)",
                        tube.label,
                        l.z + r,
                        h
                    )),
                    _ => {}
                }
            }
        }
        let tri = self.landmarks.as_array().map(|p| to_local.apply_point(&p));
        if !vein_crosses_triangle(
            &vein
                .centerline
                .iter()
                .map(|p| to_local.apply_point(p))
                .collect::<Vec<_>>(),
            &tri,
        ) {
            out.push("vein surface projection does not intersect the SN-LC-HT triangle".into());
        }
        if !(self.reference_force < self.max_force) {
            out.push("max force must exceed the reference force".into());
        }
        out
    }

    /// Rigidly moves everything by `t` (applied on the base side).
    pub fn transformed(&self, t: &RigidTransform) -> PhantomModel {
        let mut surface = self.surface.clone();
        surface.frame = t.compose(&self.surface.frame);
        PhantomModel {
            surface,
            vessels: [self.vessels[0].transformed(t), self.vessels[1].transformed(t)],
            landmarks: self.landmarks.transformed(t),
            major_axis: t.apply_vector(&self.major_axis),
            reference_force: self.reference_force,
            max_force: self.max_force,
            vein_radius_range: self.vein_radius_range,
        }
    }

    /// Local phantom x/y axes expressed in the base frame.
    pub fn surface_axes(&self) -> (Vec3, Vec3) {
        (
            self.surface.frame.apply_vector(&Vec3::x()),
            self.surface.frame.apply_vector(&Vec3::y()),
        )
    }
}

/// Whether a polyline's x-y projection enters a triangle's x-y projection.
pub(crate) fn vein_crosses_triangle(polyline: &[Vec3], tri: &[Vec3; 3]) -> bool {
    let t = tri.map(|p| Vec2::new(p.x, p.y));
    let inside = |q: Vec2| {
        let d = |a: Vec2, b: Vec2| (b - a).perp(&(q - a));
        let (d0, d1, d2) = (d(t[0], t[1]), d(t[1], t[2]), d(t[2], t[0]));
        (d0 > 0.0 && d1 > 0.0 && d2 > 0.0) || (d0 < 0.0 && d1 < 0.0 && d2 < 0.0)
    };
    polyline.windows(2).any(|w| {
        let (a, b) = (Vec2::new(w[0].x, w[0].y), Vec2::new(w[1].x, w[1].y));
        let n = (((b - a).norm() / 0.5).ceil() as usize).max(1);
        (0..=n).any(|k| inside(a + (b - a) * (k as f64 / n as f64)))
    })
}

/// Surface point and outward unit normal at local `xy`, both in base coordinates.
pub fn surface_query(m: &PhantomModel, xy: [f64; 2]) -> Result<(Vec3, Vec3)> {
    let s = &m.surface;
    let (h, n) = match (s.height(xy[0], xy[1]), s.local_normal(xy[0], xy[1])) {
        (Some(h), Some(n)) => (h, n),
        _ => return domain(format!("({}, {}) is outside the skin footprint", xy[0], xy[1])),
    };
    Ok((
        s.frame.apply_point(&Vec3::new(xy[0], xy[1], h)),
        s.frame.apply_vector(&n),
    ))
}

/// Drops a base-frame point onto the skin along the phantom's local z axis.
pub fn project_to_surface(m: &PhantomModel, p: &Vec3) -> Result<(Vec3, Vec3)> {
    let l = m.surface.to_local(p);
    surface_query(m, [l.x, l.y])
}

/// Intersects an imaging plane with both tubes.
///
/// `plane.z` is the plane normal and `plane.y` the image depth direction; the
/// compressed semi-axis is whichever of the two ellipse axes is closer to
/// `plane.y`.
pub fn cross_section(m: &PhantomModel, plane: &PoseFrame, force: f64) -> Result<Vec<CrossSection>> {
    if !(0.0..=20.0).contains(&force) {
        return domain(format!("force {force} N outside [0, 20] N"));
    }
    let n = plane.z;
    let mut out = Vec::new();
    for tube in &m.vessels {
        let factor = tube.area_factor(force, m.reference_force);
        for (i, w) in tube.centerline.windows(2).enumerate() {
            let s0 = n.dot(&(w[0] - plane.t));
            let s1 = n.dot(&(w[1] - plane.t));
            // Half-open test so a crossing exactly at a shared vertex is counted once.
            let crosses = (s0 <= 0.0 && s1 > 0.0) || (s0 > 0.0 && s1 <= 0.0);
            if !crosses {
                continue;
            }
            let t = s0 / (s0 - s1);
            let center = w[0] + (w[1] - w[0]) * t;
            let radius = tube.radii[i] + (tube.radii[i + 1] - tube.radii[i]) * t;
            let axis = (w[1] - w[0]).normalize();
            let cos = axis.dot(&n).abs();
            if cos < MIN_CUT_COSINE {
                continue;
            }
            let along = (axis - n * axis.dot(&n)).try_normalize(1e-12).unwrap_or(plane.x);
            let across = n.cross(&along);
            let mut semi = [radius, radius / cos];
            let dirs = [across, along];
            let vertical = if across.dot(&plane.y).abs() >= along.dot(&plane.y).abs() {
                0
            } else {
                1
            };
            semi[vertical] *= factor;
            let area = std::f64::consts::PI * semi[0] * semi[1];
            out.push(CrossSection {
                label: tube.label,
                center,
                semi_axes: semi,
                axis_dirs: dirs,
                area_factor: factor,
                area,
            });
        }
    }
    Ok(out)
}

/// Arc-length resampled ground-truth centerline.
pub fn ground_truth_centerline(m: &PhantomModel, label: VesselLabel, spacing: f64) -> Result<Vec<Vec3>> {
    m.vessel(label).resample(spacing)
}

/// Places the phantom in the robot base for a scenario.
pub fn pose_scenario(m: &PhantomModel, cfg: &ScenarioConfig) -> PhantomModel {
    m.transformed(&cfg.transform())
}
