//! Intra-operative planning: landmark acquisition, the SN-LC-HT scan region,
//! the fan of scan paths and their conversion into probe trajectories.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{align_normal, frame_from_zx, PoseFrame};
use crate::phantom::{project_to_surface, vein_crosses_triangle, Landmarks, PhantomModel, VesselLabel};
use crate::rng::seeded_rng;
use crate::Vec3;

/// Minimum triangle area for a usable landmark set (mm^2).
pub const MIN_REGION_AREA: f64 = 25.0;
/// Largest allowed gap between consecutive trajectory poses (mm).
pub const MAX_POSE_SPACING: f64 = 5.0;
pub const DEFAULT_INTERIOR_DIVISIONS: usize = 8;
pub const DEFAULT_POSE_COUNT: usize = 50;
pub const DEFAULT_CONTACT_FORCE: f64 = 5.0;
/// Per-axis sigma whose 3D mean error, sigma * sqrt(8/pi), is 13.88 mm.
pub const CALIBRATED_LANDMARK_SIGMA: f64 = 8.70;
const MAX_LANDMARK_RESAMPLES: usize = 10;

pub type LandmarkSet = Landmarks;

fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl Landmarks {
    pub fn area(&self) -> f64 {
        triangle_area(&self.sn, &self.lc, &self.ht)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.area() > MIN_REGION_AREA)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkNoiseModel {
    pub per_axis_sigma: f64,
    pub rng_seed: u64,
}

impl LandmarkNoiseModel {
    pub fn new(per_axis_sigma: f64, rng_seed: u64) -> Self {
        Self {
            per_axis_sigma,
            rng_seed,
        }
    }

    /// Mean 3D error of an isotropic Gaussian with this per-axis sigma.
    pub fn expected_mean_error(&self) -> f64 {
        self.per_axis_sigma * (8.0 / std::f64::consts::PI).sqrt()
    }
}

fn gaussian_offset<R: Rng>(rng: &mut R, normal: &Normal<f64>) -> Vec3 {
    Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
}

/// Ground-truth landmarks plus i.i.d. isotropic Gaussian offsets.
pub fn sample_landmarks(m: &PhantomModel, noise: &LandmarkNoiseModel) -> Result<Landmarks> {
    if !(noise.per_axis_sigma >= 0.0) || !noise.per_axis_sigma.is_finite() {
        return domain("landmark sigma must be finite and >= 0");
    }
    let truth = m.landmarks;
    if noise.per_axis_sigma == 0.0 {
        return if truth.is_degenerate() {
            Err(Error::DegenerateRegion("ground-truth landmarks are collinear".into()))
        } else {
            Ok(truth)
        };
    }
    let normal = Normal::new(0.0, noise.per_axis_sigma).expect("sigma checked");
    let mut rng = seeded_rng(noise.rng_seed);
    for _ in 0..=MAX_LANDMARK_RESAMPLES {
        let set = Landmarks {
            sn: truth.sn + gaussian_offset(&mut rng, &normal),
            lc: truth.lc + gaussian_offset(&mut rng, &normal),
            ht: truth.ht + gaussian_offset(&mut rng, &normal),
        };
        if !set.is_degenerate() {
            return Ok(set);
        }
    }
    Err(Error::DegenerateRegion(format!(
        "landmark draws stayed collinear after {MAX_LANDMARK_RESAMPLES} resamples"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRegion {
    pub vertices: [Vec3; 3],
}

impl ScanRegion {
    pub fn area(&self) -> f64 {
        let [a, b, c] = &self.vertices;
        triangle_area(a, b, c)
    }
}

pub fn build_scan_region(l: &Landmarks) -> Result<ScanRegion> {
    if l.is_degenerate() {
        return Err(Error::DegenerateRegion(format!(
            "landmark triangle area {:.3} mm^2 is below {MIN_REGION_AREA} mm^2",
            l.area()
        )));
    }
    Ok(ScanRegion {
        vertices: [l.sn, l.lc, l.ht],
    })
}

/// Whether the vein's surface projection enters the scan triangle, both taken
/// in the phantom's local x-y plane.
pub fn region_covers_vein(m: &PhantomModel, region: &ScanRegion) -> bool {
    let to_local = m.surface.frame.inverse();
    let tri = region.vertices.map(|v| to_local.apply_point(&v));
    let vein: Vec<Vec3> = m
        .vessel(VesselLabel::Vein)
        .centerline
        .iter()
        .map(|p| to_local.apply_point(p))
        .collect();
    vein_crosses_triangle(&vein, &tri)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPath {
    pub start: Vec3,
    pub end: Vec3,
    pub index: usize,
}

impl ScanPath {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }
}

/// Paths from SN, `interior_divisions` equally spaced points on SN-LC, and LC,
/// all ending at HT. Ordered from SN to LC.
pub fn generate_scan_paths(l: &Landmarks, interior_divisions: usize) -> Result<Vec<ScanPath>> {
    build_scan_region(l)?;
    let n = interior_divisions + 1;
    Ok((0..=n)
        .map(|i| {
            let start = match i {
                0 => l.sn,
                i if i == n => l.lc,
                i => l.sn + (l.lc - l.sn) * (i as f64 / n as f64),
            };
            ScanPath {
                start,
                end: l.ht,
                index: i,
            }
        })
        .collect())
}

/// Path whose start is nearest the SN-LC midpoint; ties go to the lower index.
pub fn select_initial_path(paths: &[ScanPath]) -> Result<ScanPath> {
    let (first, last) = match (paths.first(), paths.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return domain("no scan paths to choose from"),
    };
    let mid = (first.start + last.start) * 0.5;
    let mut best = *first;
    let mut best_d = (first.start - mid).norm();
    for p in &paths[1..] {
        let d = (p.start - mid).norm();
        if d < best_d - 1e-9 {
            best = *p;
            best_d = d;
        }
    }
    Ok(best)
}

/// Moves the path endpoints by explicit deviations plus optional Gaussian
/// noise, both expressed along the phantom's local x/y axes.
pub fn perturb_path<R: Rng>(
    m: &PhantomModel,
    path: &ScanPath,
    start_deviation: [f64; 2],
    end_deviation: [f64; 2],
    sigma: f64,
    rng: &mut R,
) -> Result<ScanPath> {
    if !(sigma >= 0.0) {
        return domain("path noise sigma must be >= 0");
    }
    let (ax, ay) = m.surface_axes();
    let mut jitter = || -> [f64; 2] {
        if sigma == 0.0 {
            [0.0, 0.0]
        } else {
            let n = Normal::new(0.0, sigma).expect("sigma checked");
            [n.sample(rng), n.sample(rng)]
        }
    };
    let js = jitter();
    let je = jitter();
    let start = path.start + ax * (start_deviation[0] + js[0]) + ay * (start_deviation[1] + js[1]);
    let end = path.end + ax * (end_deviation[0] + je[0]) + ay * (end_deviation[1] + je[1]);
    if (end - start).norm() == 0.0 {
        return domain("perturbed path collapsed to a point");
    }
    Ok(ScanPath {
        start,
        end,
        index: path.index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<PoseFrame>,
    pub contact_force: f64,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.poses.len() < 2 {
            return domain("trajectory needs at least 2 poses");
        }
        for p in &self.poses {
            p.validate()?;
        }
        if let Some(gap) = self
            .poses
            .windows(2)
            .map(|w| (w[1].t - w[0].t).norm())
            .find(|g| *g > MAX_POSE_SPACING)
        {
            return domain(format!(
                "consecutive poses {gap:.3} mm apart (max {MAX_POSE_SPACING} mm)"
            ));
        }
        Ok(())
    }
}

/// Probe pose resting on the skin at the surface point below `p`.
///
/// The probe z axis points into the tissue (against the outward normal,
/// fixed with `align_normal` against base -Z) and x follows the phantom's
/// major axis.
pub fn probe_pose_at(m: &PhantomModel, p: &Vec3) -> Result<PoseFrame> {
    let (point, normal) = project_to_surface(m, p)?;
    let z = align_normal(&(-normal), &-Vec3::z())?;
    let rot = frame_from_zx(&z, &m.major_axis)?;
    Ok(PoseFrame::from_rotation(&rot, point))
}

/// Samples `pose_count` probe poses along the path's surface projection.
pub fn path_to_trajectory(m: &PhantomModel, path: &ScanPath, pose_count: usize) -> Result<Trajectory> {
    if pose_count < 2 {
        return domain("trajectory needs at least 2 poses");
    }
    let poses = (0..pose_count)
        .map(|k| {
            let s = k as f64 / (pose_count - 1) as f64;
            probe_pose_at(m, &(path.start + (path.end - path.start) * s))
        })
        .collect::<Result<Vec<_>>>()?;
    let traj = Trajectory {
        poses,
        contact_force: DEFAULT_CONTACT_FORCE,
    };
    traj.validate()?;
    Ok(traj)
}
