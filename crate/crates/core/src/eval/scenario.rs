//! End-to-end scenario runner.
//!
//! One run: place the phantom, plan and execute a scan, pick the insertion
//! pose, classify the vessels with a compression sweep, centre the probe on
//! the vein, check the mechanism for collisions, reconstruct and score the
//! centerlines, then drive the needle and score the tip.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{icp_align, knn_centerline_error, CenterlineErrorStats, IcpOptions};
use crate::error::{Error, Result};
use crate::geometry::{pixel_to_base, PixelCoord, PoseFrame, RigidTransform};
use crate::needle::{
    advance_closed_loop, check_collision_and_pivot, compute_insertion_params, targeting_outcome, ControllerConfig,
    InsertionParams, MechanismConfig, NeedleMechanism, SagittalLine, TargetingOutcome, TraceStep,
};
use crate::perception::{
    classify_vein_artery, locate_vein_in_frame, reconstruct_centerlines, select_insertion_pose,
    ReconstructedCenterline, VeinReference, DEFAULT_AMBIGUITY_THRESHOLD,
};
use crate::phantom::{ground_truth_centerline, pose_scenario, PhantomModel, ScenarioConfig, VesselLabel};
use crate::planning::{
    generate_scan_paths, path_to_trajectory, perturb_path, probe_pose_at, sample_landmarks, select_initial_path,
    LandmarkNoiseModel, CALIBRATED_LANDMARK_SIGMA, DEFAULT_INTERIOR_DIVISIONS, DEFAULT_POSE_COUNT,
};
use crate::rng::{derive_seed, label_seed, seeded_rng};
use crate::ultrasound::{compression_sweep, execute_scan, ObservationNoise, Probe, UltrasoundFrame};
use crate::Vec3;

const CENTERING_ITERATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSettings {
    pub landmark_sigma: f64,
    pub observation_centroid_sigma_px: f64,
    pub observation_area_jitter: f64,
    pub tip_sigma: f64,
    pub needle_bending: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            landmark_sigma: CALIBRATED_LANDMARK_SIGMA,
            observation_centroid_sigma_px: 0.0,
            observation_area_jitter: 0.0,
            tip_sigma: 0.0,
            needle_bending: 0.0,
        }
    }
}

impl NoiseSettings {
    pub fn noise_free() -> Self {
        Self {
            landmark_sigma: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub f_low: f64,
    pub f_high: f64,
    pub steps: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            f_low: 5.0,
            f_high: 10.0,
            steps: crate::ultrasound::DEFAULT_SWEEP_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub noise: NoiseSettings,
    pub interior_divisions: usize,
    pub pose_count: usize,
    pub sweep: SweepConfig,
    pub ambiguity_threshold: f64,
    pub mechanism: MechanismConfig,
    pub controller: ControllerConfig,
    pub icp: IcpOptions,
    pub knn_k: usize,
    pub ground_truth_spacing: f64,
    /// Unmodelled translation of the imaging plane, image frame (mm).
    pub calibration_bias: Vec3,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            noise: NoiseSettings::default(),
            interior_divisions: DEFAULT_INTERIOR_DIVISIONS,
            pose_count: DEFAULT_POSE_COUNT,
            sweep: SweepConfig::default(),
            ambiguity_threshold: DEFAULT_AMBIGUITY_THRESHOLD,
            mechanism: MechanismConfig::default(),
            controller: ControllerConfig::default(),
            icp: IcpOptions::default(),
            knn_k: 1,
            ground_truth_spacing: 1.0,
            calibration_bias: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSeeds {
    pub scenario: u64,
    pub landmarks: u64,
    pub path: u64,
    pub observation: u64,
    pub clustering: u64,
    pub controller: u64,
}

impl ScenarioSeeds {
    fn derive(scenario: u64) -> Self {
        let s = |k| derive_seed(scenario, &[k]);
        Self {
            scenario,
            landmarks: s(1),
            path: s(2),
            observation: s(3),
            clustering: s(4),
            controller: s(5),
        }
    }
}

/// Seed of one scenario: master seed mixed with the scenario id and its own
/// `rng_seed`.
pub fn scenario_seed(master_seed: u64, cfg: &ScenarioConfig) -> u64 {
    derive_seed(master_seed, &[label_seed(&cfg.id), cfg.rng_seed])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineReport {
    pub vein: CenterlineErrorStats,
    pub artery: Option<CenterlineErrorStats>,
    /// Mean over the pooled vein and artery distances.
    pub combined_mean: f64,
}

impl CenterlineReport {
    fn new(vein: CenterlineErrorStats, artery: Option<CenterlineErrorStats>) -> Self {
        let pooled: Vec<f64> = vein
            .distances
            .iter()
            .chain(artery.iter().flat_map(|a| a.distances.iter()))
            .copied()
            .collect();
        Self {
            combined_mean: pooled.iter().sum::<f64>() / pooled.len() as f64,
            vein,
            artery,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: String,
    /// `"ok"` or `"failed"`.
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub seeds: ScenarioSeeds,
    /// Mean distance of the sampled landmarks from the true ones (mm).
    pub landmark_error: Option<f64>,
    pub insertion_pose_index: Option<usize>,
    pub vein_deformation: Option<f64>,
    pub artery_deformation: Option<f64>,
    pub centering_shift: Option<f64>,
    pub pivot_applied: Option<f64>,
    /// Errors before ICP.
    pub raw: Option<CenterlineReport>,
    /// Errors after aligning the reconstruction onto the ground truth.
    pub aligned: Option<CenterlineReport>,
    pub icp_rms: Option<f64>,
    pub insertion: Option<InsertionParams>,
    pub controller_steps: Option<usize>,
    pub final_distance: Option<f64>,
    pub targeting: Option<TargetingOutcome>,
}

impl ScenarioReport {
    fn new(id: &str, seeds: ScenarioSeeds) -> Self {
        Self {
            id: id.to_string(),
            status: "failed".into(),
            failed_stage: None,
            error: None,
            seeds,
            landmark_error: None,
            insertion_pose_index: None,
            vein_deformation: None,
            artery_deformation: None,
            centering_shift: None,
            pivot_applied: None,
            raw: None,
            aligned: None,
            icp_rms: None,
            insertion: None,
            controller_steps: None,
            final_distance: None,
            targeting: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }

    pub fn inside_vein(&self) -> bool {
        self.targeting.is_some_and(|t| t.inside_vein)
    }
}

/// Intermediate products kept for export.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioArtifacts {
    pub vein: Option<ReconstructedCenterline>,
    pub artery: Option<ReconstructedCenterline>,
    pub trace: Vec<TraceStep>,
}

struct Failure {
    stage: &'static str,
    error: Error,
}

trait Stage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, Failure>;
}

impl<T> Stage<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

pub fn run_scenario(
    scene: &PhantomModel,
    cfg: &ScenarioConfig,
    pipeline: &PipelineConfig,
    master_seed: u64,
) -> ScenarioReport {
    run_scenario_detailed(scene, cfg, pipeline, master_seed).0
}

pub fn run_scenario_detailed(
    scene: &PhantomModel,
    cfg: &ScenarioConfig,
    pipeline: &PipelineConfig,
    master_seed: u64,
) -> (ScenarioReport, ScenarioArtifacts) {
    let seeds = ScenarioSeeds::derive(scenario_seed(master_seed, cfg));
    let mut report = ScenarioReport::new(&cfg.id, seeds);
    let mut artifacts = ScenarioArtifacts::default();
    match pipeline_run(scene, cfg, pipeline, &mut report, &mut artifacts) {
        Ok(()) => report.status = "ok".into(),
        Err(f) => {
            report.failed_stage = Some(f.stage.to_string());
            report.error = Some(f.error.to_string());
        }
    }
    (report, artifacts)
}

/// Lateral image offset (mm, along image x) of the vein from the image centre.
fn lateral_offset(probe: &Probe, px: &PixelCoord) -> f64 {
    (px.ix - probe.calibration.width as f64 / 2.0) * probe.calibration.sx
}

/// Slides the probe sideways along its y axis until the vein sits under the
/// image centre line.
fn centre_on_vein(
    m: &PhantomModel,
    probe: &Probe,
    start: &PoseFrame,
    start_px: PixelCoord,
    force: f64,
) -> Result<(PoseFrame, f64)> {
    let mut pose = *start;
    let mut px = start_px;
    let mut shift = 0.0;
    for _ in 0..CENTERING_ITERATIONS {
        let dy = lateral_offset(probe, &px);
        if dy.abs() < probe.calibration.sx / 2.0 {
            break;
        }
        let expected = PixelCoord::new(px.ix - dy / probe.calibration.sx, px.iy);
        pose = probe_pose_at(m, &(pose.t + pose.y * dy))?;
        shift += dy;
        let frame = probe.acquire(m, &pose, force, 0)?;
        px = locate_vein_in_frame(&frame, &expected)?.0.centroid_px;
    }
    Ok((pose, shift))
}

fn locate_vein_center(probe: &Probe, frame: &UltrasoundFrame, reference: &PixelCoord) -> Result<(PixelCoord, Vec3)> {
    let vein = locate_vein_in_frame(frame, reference)?.0.centroid_px;
    let p = pixel_to_base(
        &vein,
        &probe.calibration,
        &probe.t_u_e,
        &frame.probe_pose.to_transform(),
    )?;
    Ok((vein, p))
}

fn pipeline_run(
    scene: &PhantomModel,
    cfg: &ScenarioConfig,
    pipe: &PipelineConfig,
    report: &mut ScenarioReport,
    artifacts: &mut ScenarioArtifacts,
) -> std::result::Result<(), Failure> {
    let seeds = report.seeds;
    cfg.validate().at("placement")?;
    let m = pose_scenario(scene, cfg);

    let landmarks =
        sample_landmarks(&m, &LandmarkNoiseModel::new(pipe.noise.landmark_sigma, seeds.landmarks)).at("landmarks")?;
    let truth = m.landmarks.as_array();
    report.landmark_error = Some(
        landmarks
            .as_array()
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / 3.0,
    );

    let paths = generate_scan_paths(&landmarks, pipe.interior_divisions).at("planning")?;
    let initial = select_initial_path(&paths).at("planning")?;
    let mut rng = seeded_rng(seeds.path);
    let path = perturb_path(
        &m,
        &initial,
        cfg.start_deviation,
        cfg.end_deviation,
        cfg.path_noise_sigma,
        &mut rng,
    )
    .at("planning")?;
    let traj = path_to_trajectory(&m, &path, pipe.pose_count).at("trajectory")?;

    let probe = Probe::default()
        .with_extrinsic_error(RigidTransform::from_translation(pipe.calibration_bias))
        .with_noise(ObservationNoise {
            centroid_sigma_px: pipe.noise.observation_centroid_sigma_px,
            area_jitter: pipe.noise.observation_area_jitter,
            seed: seeds.observation,
        });
    let rec = execute_scan(&m, &traj, &probe).at("scan")?;

    let plan = select_insertion_pose(&rec).at("insertion_pose")?;
    report.insertion_pose_index = Some(plan.pose_index);

    let sweep_probe = probe.with_noise(ObservationNoise {
        seed: derive_seed(seeds.observation, &[1]),
        ..probe.noise
    });
    let sw = &pipe.sweep;
    let sweep =
        compression_sweep(&m, &plan.insertion_pose, sw.f_low, sw.f_high, sw.steps, &sweep_probe).at("compression")?;
    let class = classify_vein_artery(&sweep, seeds.clustering, pipe.ambiguity_threshold).at("classification")?;
    report.vein_deformation = Some(class.vein_deformation());
    report.artery_deformation = Some(class.artery_deformation());

    let force = traj.contact_force;
    let (pose, shift) =
        centre_on_vein(&m, &sweep_probe, &plan.insertion_pose, class.vein_reference_px, force).at("centering")?;
    report.centering_shift = Some(shift);

    let pivot = check_collision_and_pivot(&pipe.mechanism, &pose, &m).at("pivot")?;
    report.pivot_applied = Some(pivot.pivot_deg);
    let pose = pivot.pose;

    let frame = sweep_probe.acquire(&m, &pose, force, 1).at("target")?;
    let centre_px = PixelCoord::new(sweep_probe.calibration.width as f64 / 2.0, class.vein_reference_px.iy);
    let (_, vein_center) = locate_vein_center(&sweep_probe, &frame, &centre_px).at("target")?;

    let reference = VeinReference {
        frame_index: plan.pose_index,
        centroid_px: class.vein_reference_px,
    };
    let (vein, artery) = reconstruct_centerlines(&rec, &reference).at("reconstruction")?;

    let spacing = pipe.ground_truth_spacing;
    let gt_vein = ground_truth_centerline(&m, VesselLabel::Vein, spacing).at("evaluation")?;
    let gt_artery = ground_truth_centerline(&m, VesselLabel::Artery, spacing).at("evaluation")?;
    let stats = |v: &[Vec3], a: &[Vec3]| -> Result<CenterlineReport> {
        let vs = knn_centerline_error(v, &gt_vein, pipe.knn_k)?;
        let as_ = if a.is_empty() {
            None
        } else {
            Some(knn_centerline_error(a, &gt_artery, pipe.knn_k)?)
        };
        Ok(CenterlineReport::new(vs, as_))
    };
    report.raw = Some(stats(&vein.points, &artery.points).at("evaluation")?);
    let source: Vec<Vec3> = vein.points.iter().chain(&artery.points).copied().collect();
    let target: Vec<Vec3> = gt_vein.iter().chain(&gt_artery).copied().collect();
    let icp = icp_align(&source, &target, &pipe.icp).at("evaluation")?;
    report.icp_rms = Some(icp.rms);
    let apply = |pts: &[Vec3]| pts.iter().map(|p| icp.transform.apply_point(p)).collect::<Vec<_>>();
    report.aligned = Some(stats(&apply(&vein.points), &apply(&artery.points)).at("evaluation")?);
    artifacts.vein = Some(vein);
    artifacts.artery = Some(artery);

    let mech_cfg = MechanismConfig {
        bending: pipe.noise.needle_bending,
        ..pipe.mechanism
    };
    let mech = NeedleMechanism::mounted(&pose, &mech_cfg).at("insertion_params")?;
    let params = compute_insertion_params(&mech, &vein_center).at("insertion_params")?;
    report.insertion = Some(params);
    let tube = m.vessel(VesselLabel::Vein);
    let line = SagittalLine::from_tube(&mech, tube, &vein_center).at("insertion_params")?;
    let ctrl = ControllerConfig {
        tip_observation_noise: pipe.noise.tip_sigma,
        ..pipe.controller
    };
    let run = advance_closed_loop(&mech, &params, &line, &ctrl, seeds.controller).at("controller")?;
    report.controller_steps = Some(run.trace.len() - 1);
    report.final_distance = Some(run.final_distance());
    report.targeting = Some(targeting_outcome(&run.state, &vein_center, tube));
    artifacts.trace = run.trace;
    Ok(())
}

pub fn summary_csv_header() -> &'static str {
    "id,status,failed_stage,vein_mean,vein_max,vein_sd,artery_mean,artery_max,artery_sd,combined_mean,\
raw_vein_mean,raw_artery_mean,center_point_error,center_line_error,inside_vein,pivot_deg,final_distance"
}

/// One CSV row per report, ICP-aligned errors first.
pub fn summary_csv(reports: &[ScenarioReport]) -> String {
    let mut out = String::from(summary_csv_header());
    out.push('\n');
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
    for r in reports {
        let a = r.aligned.as_ref();
        let art = a.and_then(|c| c.artery.as_ref());
        let t = r.targeting.as_ref();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            r.status,
            r.failed_stage.as_deref().unwrap_or(""),
            f(a.map(|c| c.vein.mean)),
            f(a.map(|c| c.vein.max)),
            f(a.map(|c| c.vein.std_dev)),
            f(art.map(|s| s.mean)),
            f(art.map(|s| s.max)),
            f(art.map(|s| s.std_dev)),
            f(a.map(|c| c.combined_mean)),
            f(r.raw.as_ref().map(|c| c.vein.mean)),
            f(r.raw.as_ref().and_then(|c| c.artery.as_ref()).map(|s| s.mean)),
            f(t.map(|t| t.center_point_error)),
            f(t.map(|t| t.center_line_error)),
            t.map_or(String::new(), |t| t.inside_vein.to_string()),
            f(r.pivot_applied),
            f(r.final_distance),
        )
        .unwrap();
    }
    out
}
