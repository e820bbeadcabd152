//! Virtual ultrasound probe.
//!
//! The probe does not render B-mode pixels; it emits what an ideal vessel
//! segmentation would: one centroid and area per visible lumen. The image
//! plane is taken from `T_E^B * T_U^E`, lumens are found by intersecting that
//! plane with the phantom tubes, and centres are mapped back to pixels with
//! the inverse of the calibrated pixel chain.

mod log;

pub use log::{read_binary, write_binary, SCAN_LOG_MAGIC, SCAN_LOG_VERSION};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{ImageCalibration, PixelCoord, PoseFrame, RigidTransform};
use crate::phantom::{cross_section, PhantomModel, VesselLabel};
use crate::planning::Trajectory;
use crate::rng::{derive_seed, seeded_rng};
use crate::Vec3;

/// Most observations a single frame can carry.
pub const MAX_OBSERVATIONS: usize = 4;
pub const DEFAULT_SWEEP_STEPS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VesselObservation {
    pub centroid_px: PixelCoord,
    pub area_px2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UltrasoundFrame {
    pub index: u32,
    pub probe_pose: PoseFrame,
    pub force: f64,
    pub observations: Vec<VesselObservation>,
}

impl UltrasoundFrame {
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Pose-stamped frames from one scan, together with the calibration needed to
/// lift pixels back into the base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub calibration: ImageCalibration,
    pub t_u_e: RigidTransform,
    pub frames: Vec<UltrasoundFrame>,
}

impl ScanRecord {
    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        if self.frames.windows(2).any(|w| w[1].index <= w[0].index) {
            return domain("frame indices must be strictly increasing");
        }
        for f in &self.frames {
            if f.observations.len() > MAX_OBSERVATIONS {
                return domain(format!("frame {} has {} observations", f.index, f.observations.len()));
            }
            if !(f.force >= 0.0) {
                return domain(format!("frame {} has negative force", f.index));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ScanRecord = serde_json::from_str(text)?;
        rec.validate()?;
        Ok(rec)
    }
}

/// Optional segmentation noise. Zero by default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationNoise {
    /// Std-dev of centroid jitter, pixels per axis.
    #[serde(default)]
    pub centroid_sigma_px: f64,
    /// Std-dev of multiplicative area jitter (fraction).
    #[serde(default)]
    pub area_jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ObservationNoise {
    pub fn is_zero(&self) -> bool {
        self.centroid_sigma_px == 0.0 && self.area_jitter == 0.0
    }
}

/// Imaging configuration: pixel calibration, the calibrated image-to-flange
/// transform, and optionally an unmodelled extrinsic error that the imager
/// applies but downstream consumers do not know about.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub calibration: ImageCalibration,
    /// Calibrated `T_U^E`, stored in every [`ScanRecord`].
    pub t_u_e: RigidTransform,
    /// True imaging extrinsic is `t_u_e * extrinsic_error`.
    #[serde(default)]
    pub extrinsic_error: RigidTransform,
    #[serde(default)]
    pub noise: ObservationNoise,
}

/// Image `x` along the probe's `y`, image `y` (depth) along the probe's `z`,
/// origin at the top-left corner of a window centred on the contact point.
pub fn default_t_u_e(cal: &ImageCalibration) -> RigidTransform {
    let rot = nalgebra::Matrix3::from_columns(&[Vec3::y(), Vec3::z(), Vec3::x()]);
    RigidTransform::new(rot, Vec3::new(0.0, -cal.width_mm() / 2.0, 0.0)).expect("permutation is a rotation")
}

impl Default for Probe {
    fn default() -> Self {
        Self::ideal(ImageCalibration::default())
    }
}

/// One observation together with the tube that produced it (test oracle use).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledObservation {
    pub observation: VesselObservation,
    pub label: VesselLabel,
    pub center: Vec3,
}

impl Probe {
    pub fn ideal(calibration: ImageCalibration) -> Self {
        Self {
            calibration,
            t_u_e: default_t_u_e(&calibration),
            extrinsic_error: RigidTransform::identity(),
            noise: ObservationNoise::default(),
        }
    }

    pub fn with_noise(mut self, noise: ObservationNoise) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_extrinsic_error(mut self, error: RigidTransform) -> Self {
        self.extrinsic_error = error;
        self
    }

    fn imaging_t_u_e(&self) -> RigidTransform {
        self.t_u_e.compose(&self.extrinsic_error)
    }

    /// Image plane in the base frame for a probe pose.
    pub fn image_plane(&self, pose: &PoseFrame) -> PoseFrame {
        PoseFrame::from_transform(&pose.to_transform().compose(&self.imaging_t_u_e()))
    }

    /// Frame with ground-truth labels kept alongside each observation.
    pub fn acquire_labeled(
        &self,
        m: &PhantomModel,
        pose: &PoseFrame,
        force: f64,
        index: u32,
    ) -> Result<(UltrasoundFrame, Vec<LabeledObservation>)> {
        self.calibration.validate()?;
        pose.validate()?;
        if !(force >= 0.0) {
            return domain("contact force must be >= 0");
        }
        let plane = self.image_plane(pose);
        let to_image = plane.to_transform().inverse();
        let cal = &self.calibration;
        let mut rng =
            (!self.noise.is_zero()).then(|| seeded_rng(derive_seed(self.noise.seed, &[index as u64, force.to_bits()])));
        let mut labeled = Vec::new();
        for cut in cross_section(m, &plane, force)? {
            let q = to_image.apply_point(&cut.center);
            let mut px = cal.mm_to_pixel(q.x, q.y);
            let mut area = cut.area / cal.pixel_area();
            if let Some(rng) = rng.as_mut() {
                if self.noise.centroid_sigma_px > 0.0 {
                    let n = Normal::new(0.0, self.noise.centroid_sigma_px).expect("sigma > 0");
                    px.ix += n.sample(rng);
                    px.iy += n.sample(rng);
                }
                if self.noise.area_jitter > 0.0 {
                    let n = Normal::new(0.0, self.noise.area_jitter).expect("sigma > 0");
                    area *= (1.0 + n.sample(rng)).max(0.05);
                }
            }
            // Segmentation reports whole-pixel centroids.
            let px = PixelCoord::new(px.ix.round(), px.iy.round());
            if cal.contains(&px) && area > 0.0 {
                labeled.push(LabeledObservation {
                    observation: VesselObservation {
                        centroid_px: px,
                        area_px2: area,
                    },
                    label: cut.label,
                    center: cut.center,
                });
            }
        }
        if labeled.len() > MAX_OBSERVATIONS {
            labeled.sort_by(|a, b| b.observation.area_px2.total_cmp(&a.observation.area_px2));
            labeled.truncate(MAX_OBSERVATIONS);
        }
        let frame = UltrasoundFrame {
            index,
            probe_pose: *pose,
            force,
            observations: labeled.iter().map(|l| l.observation).collect(),
        };
        Ok((frame, labeled))
    }

    pub fn acquire(&self, m: &PhantomModel, pose: &PoseFrame, force: f64, index: u32) -> Result<UltrasoundFrame> {
        Ok(self.acquire_labeled(m, pose, force, index)?.0)
    }
}

/// Noise-free frame through the given calibration.
pub fn acquire_frame(
    m: &PhantomModel,
    pose: &PoseFrame,
    force: f64,
    cal: &ImageCalibration,
    t_u_e: &RigidTransform,
) -> Result<UltrasoundFrame> {
    let probe = Probe {
        calibration: *cal,
        t_u_e: *t_u_e,
        extrinsic_error: RigidTransform::identity(),
        noise: ObservationNoise::default(),
    };
    probe.acquire(m, pose, force, 0)
}

/// One frame per trajectory pose at the trajectory's contact force.
pub fn execute_scan(m: &PhantomModel, traj: &Trajectory, probe: &Probe) -> Result<ScanRecord> {
    traj.validate()?;
    let frames = traj
        .poses
        .iter()
        .enumerate()
        .map(|(i, pose)| probe.acquire(m, pose, traj.contact_force, i as u32))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanRecord {
        calibration: probe.calibration,
        t_u_e: probe.t_u_e,
        frames,
    })
}

/// Forces of a triangular sweep: `steps` samples up, `steps - 1` back down.
pub fn sweep_forces(f_low: f64, f_high: f64, steps: usize) -> Result<Vec<f64>> {
    if !(f_low < f_high) || !(f_low >= 0.0) || !f_high.is_finite() {
        return domain(format!("invalid force range [{f_low}, {f_high}] N"));
    }
    if steps < 3 {
        return domain("compression sweep needs at least 3 steps");
    }
    let up: Vec<f64> = (0..steps)
        .map(|i| f_low + (f_high - f_low) * i as f64 / (steps - 1) as f64)
        .collect();
    let down = up.iter().rev().skip(1).copied();
    Ok(up.iter().copied().chain(down).collect())
}

/// Holds `pose` and ramps the contact force `f_low -> f_high -> f_low`.
pub fn compression_sweep(
    m: &PhantomModel,
    pose: &PoseFrame,
    f_low: f64,
    f_high: f64,
    steps: usize,
    probe: &Probe,
) -> Result<Vec<UltrasoundFrame>> {
    sweep_forces(f_low, f_high, steps)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| probe.acquire(m, pose, f, i as u32))
        .collect()
}
