//! Needle insertion: remote-center-of-motion kinematics, the collision pivot
//! search, and the proportional advancement controller.
//!
//! The mechanism is rigidly mounted on the probe. Its RCM frame shares the
//! probe's axes: `x` runs along the vessel (in-plane, horizontal), `y` is the
//! normal of the sagittal insertion plane, `z` points into the tissue. The
//! needle direction for a command `theta` is
//! `sin(theta + offset) x + cos(theta + offset) z`.

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{PoseFrame, RigidTransform};
use crate::phantom::{PhantomModel, VesselTube};
use crate::rng::seeded_rng;
use crate::{Vec2, Vec3};

/// Angle of the needle at `theta = 0`, measured from the RCM depth axis.
pub const DEFAULT_THETA_OFFSET: f64 = 18.21;
pub const DEFAULT_NEEDLE_LENGTH: f64 = 150.0;
pub const DEFAULT_PIVOT_STEP: f64 = 5.0;
pub const DEFAULT_MAX_PIVOT: f64 = 90.0;
/// Spacing of collision samples on the mechanism box faces (mm).
const COLLISION_SAMPLE_SPACING: f64 = 4.0;

/// Mechanism parameters and its mounting relative to the probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MechanismConfig {
    pub theta_offset: f64,
    pub needle_length: f64,
    pub max_pivot: f64,
    pub pivot_step: f64,
    /// Lateral tip deflection per squared millimetre of depth.
    pub bending: f64,
    /// RCM position in the probe frame.
    pub rcm_offset: Vec3,
    /// Axis-aligned bounding box of the mechanism in the probe frame.
    pub collision_box: [Vec3; 2],
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self {
            theta_offset: DEFAULT_THETA_OFFSET,
            needle_length: DEFAULT_NEEDLE_LENGTH,
            max_pivot: DEFAULT_MAX_PIVOT,
            pivot_step: DEFAULT_PIVOT_STEP,
            bending: 0.0,
            rcm_offset: Vec3::new(-45.0, 0.0, -12.0),
            collision_box: [Vec3::new(-70.0, -20.0, -120.0), Vec3::new(10.0, 20.0, -8.0)],
        }
    }
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.needle_length > 0.0) {
            return domain("needle length must be positive");
        }
        if !(self.pivot_step > 0.0 && self.pivot_step <= self.max_pivot) {
            return domain("pivot step must satisfy 0 < step <= max pivot");
        }
        let [lo, hi] = self.collision_box;
        if (0..3).any(|i| !(lo[i] < hi[i])) {
            return domain("collision box is empty");
        }
        Ok(())
    }

    /// Base-frame samples on the faces of the collision box for a probe pose.
    pub fn collision_samples(&self, probe_pose: &PoseFrame) -> Vec<Vec3> {
        let [lo, hi] = self.collision_box;
        let t = probe_pose.to_transform();
        let ticks = |a: f64, b: f64| {
            let n = ((b - a) / COLLISION_SAMPLE_SPACING).ceil().max(1.0) as usize;
            (0..=n).map(move |i| a + (b - a) * i as f64 / n as f64)
        };
        let mut out = Vec::new();
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for face in [lo[axis], hi[axis]] {
                for a in ticks(lo[u], hi[u]) {
                    for b in ticks(lo[v], hi[v]) {
                        let mut p = Vec3::zeros();
                        p[axis] = face;
                        p[u] = a;
                        p[v] = b;
                        out.push(t.apply_point(&p));
                    }
                }
            }
        }
        out
    }

    pub fn collides(&self, probe_pose: &PoseFrame, m: &PhantomModel) -> bool {
        self.collision_samples(probe_pose).iter().any(|p| m.surface.is_below(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleMechanism {
    pub rcm_pose: RigidTransform,
    pub theta_offset: f64,
    pub needle_length: f64,
    pub max_pivot: f64,
    pub pivot_step: f64,
    pub bending: f64,
}

/// Command for the mechanism: needle angle and insertion depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionParams {
    pub theta: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleState {
    pub theta_cmd: f64,
    pub depth: f64,
    pub tip: Vec3,
}

impl NeedleMechanism {
    pub fn new(rcm_pose: RigidTransform) -> Self {
        let c = MechanismConfig::default();
        Self {
            rcm_pose,
            theta_offset: c.theta_offset,
            needle_length: c.needle_length,
            max_pivot: c.max_pivot,
            pivot_step: c.pivot_step,
            bending: c.bending,
        }
    }

    /// Mechanism attached to a probe at `probe_pose`.
    pub fn mounted(probe_pose: &PoseFrame, cfg: &MechanismConfig) -> Result<Self> {
        cfg.validate()?;
        let t = probe_pose.to_transform();
        Ok(Self {
            rcm_pose: RigidTransform::from_rotation(*t.rotation(), t.apply_point(&cfg.rcm_offset)),
            theta_offset: cfg.theta_offset,
            needle_length: cfg.needle_length,
            max_pivot: cfg.max_pivot,
            pivot_step: cfg.pivot_step,
            bending: cfg.bending,
        })
    }

    pub fn rcm(&self) -> Vec3 {
        self.rcm_pose.translation()
    }

    fn axis(&self, i: usize) -> Vec3 {
        self.rcm_pose.rotation_matrix().column(i).into_owned()
    }

    /// `(horizontal, depth)` coordinates in the insertion plane.
    pub fn plane_coords(&self, p: &Vec3) -> Vec2 {
        let r = p - self.rcm();
        Vec2::new(r.dot(&self.axis(0)), r.dot(&self.axis(2)))
    }

    /// In-plane components of a direction.
    pub fn plane_vector(&self, v: &Vec3) -> Vec2 {
        Vec2::new(v.dot(&self.axis(0)), v.dot(&self.axis(2)))
    }

    /// Distance of a point from the insertion plane.
    pub fn out_of_plane(&self, p: &Vec3) -> f64 {
        (p - self.rcm()).dot(&self.axis(1))
    }

    fn plane_angle(&self, theta: f64) -> f64 {
        (theta + self.theta_offset).to_radians()
    }

    pub fn direction(&self, theta: f64) -> Vec3 {
        let phi = self.plane_angle(theta);
        self.axis(0) * phi.sin() + self.axis(2) * phi.cos()
    }

    /// In-plane unit vector perpendicular to the shaft, pointing deeper.
    fn deflection_direction(&self, theta: f64) -> Vec3 {
        let phi = self.plane_angle(theta);
        -self.axis(0) * phi.cos() + self.axis(2) * phi.sin()
    }

    pub fn tip_at(&self, theta: f64, depth: f64) -> Vec3 {
        self.rcm() + self.direction(theta) * depth + self.deflection_direction(theta) * (self.bending * depth * depth)
    }

    pub fn state(&self, theta: f64, depth: f64) -> NeedleState {
        NeedleState {
            theta_cmd: theta,
            depth,
            tip: self.tip_at(theta, depth),
        }
    }
}

/// Needle angle and straight-line depth that reach `vein_center`:
/// `theta = atan2(h, v) - offset`, `d = |p_VC - p_RCM|`.
pub fn compute_insertion_params(mech: &NeedleMechanism, vein_center: &Vec3) -> Result<InsertionParams> {
    let q = mech.plane_coords(vein_center);
    if !(q.y > 0.0) {
        return Err(Error::NeedleGeometry(format!(
            "target lies {:.3} mm above the remote center of motion",
            -q.y
        )));
    }
    let d = (vein_center - mech.rcm()).norm();
    if d > mech.needle_length {
        return Err(Error::Unreachable {
            distance: d,
            needle_length: mech.needle_length,
        });
    }
    Ok(InsertionParams {
        theta: q.x.atan2(q.y).to_degrees() - mech.theta_offset,
        depth: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotResult {
    pub pose: PoseFrame,
    pub pivot_deg: f64,
    pub steps: usize,
}

/// Rotates the probe about its contact point in the transverse plane, one
/// `pivot_step` at a time, until the mechanism clears the skin.
pub fn check_collision_and_pivot(
    cfg: &MechanismConfig,
    probe_pose: &PoseFrame,
    m: &PhantomModel,
) -> Result<PivotResult> {
    cfg.validate()?;
    probe_pose.validate()?;
    let max_steps = (cfg.max_pivot / cfg.pivot_step + 1e-9).floor() as usize;
    let mut pose = *probe_pose;
    for steps in 0..=max_steps {
        if !cfg.collides(&pose, m) {
            return Ok(PivotResult {
                pose,
                pivot_deg: steps as f64 * cfg.pivot_step,
                steps,
            });
        }
        if steps == max_steps {
            break;
        }
        pose = pose.rotated_about(&probe_pose.x, cfg.pivot_step.to_radians(), &probe_pose.t);
    }
    Err(Error::NoClearPose {
        attempts: max_steps,
        max_pivot_deg: cfg.max_pivot,
    })
}

/// Vein centerline as seen in the sagittal image: a line in insertion-plane
/// coordinates with a unit normal pointing deeper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SagittalLine {
    pub point: Vec2,
    pub direction: Vec2,
}

impl SagittalLine {
    pub fn new(point: Vec2, direction: Vec2) -> Result<Self> {
        let direction = direction
            .try_normalize(1e-9)
            .ok_or_else(|| Error::NeedleGeometry("centerline is perpendicular to the insertion plane".into()))?;
        Ok(Self { point, direction })
    }

    /// Line through a 3D point with a 3D tangent, projected into the plane.
    pub fn from_3d(mech: &NeedleMechanism, point: &Vec3, tangent: &Vec3) -> Result<Self> {
        Self::new(mech.plane_coords(point), mech.plane_vector(tangent))
    }

    /// Local line of a vessel tube around its point closest to `near`.
    pub fn from_tube(mech: &NeedleMechanism, tube: &VesselTube, near: &Vec3) -> Result<Self> {
        let proj = tube.project(near);
        Self::from_3d(mech, &proj.point, &proj.tangent)
    }

    pub fn normal(&self) -> Vec2 {
        let n = Vec2::new(-self.direction.y, self.direction.x);
        if n.y < 0.0 {
            -n
        } else {
            n
        }
    }

    /// Positive below the line.
    pub fn signed_distance(&self, q: &Vec2) -> f64 {
        (q - self.point).dot(&self.normal())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub gain: f64,
    pub stop_threshold: f64,
    pub step_size: f64,
    pub max_steps: usize,
    /// Std-dev of in-plane tip observation noise (mm per axis).
    pub tip_observation_noise: f64,
    /// Allowed travel past the planned depth before aborting.
    pub overshoot_margin: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gain: 0.5,
            stop_threshold: 1.0,
            step_size: 2.0,
            max_steps: 200,
            tip_observation_noise: 0.0,
            overshoot_margin: 5.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.stop_threshold > 0.0 && self.step_size > 0.0) {
            return domain("gain, stop threshold and step size must be positive");
        }
        if !(self.tip_observation_noise >= 0.0 && self.overshoot_margin >= 0.0) {
            return domain("noise and overshoot margin must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub depth: f64,
    pub tip: Vec3,
    /// True perpendicular tip distance to the sagittal centerline.
    pub distance: f64,
    /// Signed distance as observed by the controller.
    pub observed_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerRun {
    pub state: NeedleState,
    pub trace: Vec<TraceStep>,
}

impl ControllerRun {
    pub fn final_distance(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |s| s.distance)
    }

    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

pub fn trace_csv(trace: &[TraceStep]) -> String {
    let mut out = String::from("step,depth,tip_x,tip_y,tip_z,distance\n");
    for s in trace {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.step, s.depth, s.tip.x, s.tip.y, s.tip.z, s.distance
        )
        .unwrap();
    }
    out
}

/// Advances the needle at a fixed angle, sizing each step from the observed
/// tip-to-centerline error: `delta = clamp(-gain * e / (u . n), +-step_size)`,
/// where `u . n` converts depth travel into change of `e`.
pub fn advance_closed_loop(
    mech: &NeedleMechanism,
    params: &InsertionParams,
    line: &SagittalLine,
    cfg: &ControllerConfig,
    rng_seed: u64,
) -> Result<ControllerRun> {
    cfg.validate()?;
    if !(params.depth > 0.0 && params.depth <= mech.needle_length) {
        return domain(format!(
            "planned depth {} mm outside (0, {}]",
            params.depth, mech.needle_length
        ));
    }
    let theta = params.theta;
    let gain_den = mech.plane_vector(&mech.direction(theta)).dot(&line.normal());
    let limit = (params.depth + cfg.overshoot_margin).min(mech.needle_length);
    let noise =
        (cfg.tip_observation_noise > 0.0).then(|| Normal::new(0.0, cfg.tip_observation_noise).expect("sigma > 0"));
    let mut rng = seeded_rng(rng_seed);
    let mut depth = 0.0f64;
    let mut trace = Vec::new();
    for step in 0..=cfg.max_steps {
        let tip = mech.tip_at(theta, depth);
        let q = mech.plane_coords(&tip);
        let e_true = line.signed_distance(&q);
        let observed = match &noise {
            Some(n) => q + Vec2::new(n.sample(&mut rng), n.sample(&mut rng)),
            None => q,
        };
        let e = line.signed_distance(&observed);
        trace.push(TraceStep {
            step,
            depth,
            tip,
            distance: e_true.abs(),
            observed_error: e,
        });
        if e.abs() <= cfg.stop_threshold && depth >= 0.8 * params.depth {
            return Ok(ControllerRun {
                state: NeedleState {
                    theta_cmd: theta,
                    depth,
                    tip,
                },
                trace,
            });
        }
        if step == cfg.max_steps {
            break;
        }
        let delta = if e.abs() <= cfg.stop_threshold {
            cfg.step_size
        } else if gain_den.abs() < 1e-6 {
            return Err(Error::NeedleGeometry("needle runs parallel to the centerline".into()));
        } else {
            (-cfg.gain * e / gain_den).clamp(-cfg.step_size, cfg.step_size)
        };
        if depth + delta > limit {
            return Err(Error::Overshoot {
                depth: depth + delta,
                limit,
            });
        }
        depth = (depth + delta).max(0.0);
    }
    Err(Error::ConvergenceFailure {
        steps: cfg.max_steps,
        distance: trace.last().map_or(f64::NAN, |s| s.distance),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetingOutcome {
    pub center_point_error: f64,
    pub center_line_error: f64,
    pub inside_vein: bool,
}

/// Tip error against the targeted vein centre and the true vein centerline.
pub fn targeting_outcome(state: &NeedleState, vein_center: &Vec3, vein: &VesselTube) -> TargetingOutcome {
    let proj = vein.project(&state.tip);
    TargetingOutcome {
        center_point_error: (state.tip - vein_center).norm(),
        center_line_error: proj.distance,
        inside_vein: proj.distance < proj.radius,
    }
}
