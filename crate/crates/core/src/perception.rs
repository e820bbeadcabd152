//! Scan interpretation: insertion-pose selection, compression-based vein/artery
//! classification, and centerline reconstruction from pose-stamped frames.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_to_base, PixelCoord, PoseFrame};
use crate::phantom::VesselLabel;
use crate::rng::seeded_rng;
use crate::ultrasound::{ScanRecord, UltrasoundFrame, VesselObservation};
use crate::{Vec2, Vec3};

pub const KMEANS_MAX_ITERATIONS: usize = 100;
/// Smallest deformation gap that still separates vein from artery.
pub const DEFAULT_AMBIGUITY_THRESHOLD: f64 = 0.05;

/// Best frame for insertion: the one with the largest combined area of its
/// two largest lumens. Labels are not known at this point, so the two
/// centroids are stored by decreasing area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlan {
    pub pose_index: usize,
    pub insertion_pose: PoseFrame,
    pub score: f64,
    pub centroids_px: Vec<PixelCoord>,
}

impl InsertionPlan {
    /// `(vein, artery)` centroids once a vein reference is known.
    pub fn labeled_centroids(&self, vein_reference: &PixelCoord) -> (PixelCoord, Option<PixelCoord>) {
        let vein = nearest_index(self.centroids_px.iter(), vein_reference).expect("plan has a centroid");
        let artery = self
            .centroids_px
            .iter()
            .enumerate()
            .find(|(i, _)| *i != vein)
            .map(|(_, p)| *p);
        (self.centroids_px[vein], artery)
    }
}

/// Sum of the two largest areas, or the single area.
pub fn frame_score(frame: &UltrasoundFrame) -> f64 {
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for o in &frame.observations {
        if o.area_px2 > a {
            b = a;
            a = o.area_px2;
        } else if o.area_px2 > b {
            b = o.area_px2;
        }
    }
    a + b
}

pub fn select_insertion_pose(rec: &ScanRecord) -> Result<InsertionPlan> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in rec.frames.iter().enumerate() {
        if f.is_empty() {
            continue;
        }
        let s = frame_score(f);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, score) = best.ok_or_else(|| Error::NoVessel("every frame of the scan is empty".into()))?;
    let frame = &rec.frames[i];
    let mut obs: Vec<&VesselObservation> = frame.observations.iter().collect();
    obs.sort_by(|a, b| b.area_px2.total_cmp(&a.area_px2));
    Ok(InsertionPlan {
        pose_index: i,
        insertion_pose: frame.probe_pose,
        score,
        centroids_px: obs.iter().take(2).map(|o| o.centroid_px).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub centers: [PixelCoord; 2],
    /// Cluster (0 or 1) of each input point.
    pub membership: Vec<usize>,
    /// Within-cluster sum of squares after initialisation and each update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn sum_of_squares(points: &[Vec2], centers: &[Vec2; 2], membership: &[usize]) -> f64 {
    points
        .iter()
        .zip(membership)
        .map(|(p, &c)| (p - centers[c]).norm_squared())
        .sum()
}

fn assign(points: &[Vec2], centers: &[Vec2; 2]) -> Vec<usize> {
    points
        .iter()
        .map(|p| usize::from((p - centers[1]).norm_squared() < (p - centers[0]).norm_squared()))
        .collect()
}

fn farthest_from(points: &[Vec2], from: &Vec2) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if (p - from).norm_squared() > (points[best] - from).norm_squared() {
            best = i;
        }
    }
    best
}

/// Two-means with farthest-pair initialisation: a seeded start point, the
/// point farthest from it (`a`), then the point farthest from `a` (`b`).
pub fn kmeans_2(points: &[PixelCoord], seed: u64) -> Result<ClusterAssignment> {
    if points.len() < 2 {
        return Err(Error::DegenerateCluster("need at least 2 points".into()));
    }
    let pts: Vec<Vec2> = points.iter().map(PixelCoord::to_vec2).collect();
    let start = seeded_rng(seed).random_range(0..pts.len());
    let a = farthest_from(&pts, &pts[start]);
    let b = farthest_from(&pts, &pts[a]);
    if pts[a] == pts[b] {
        return Err(Error::DegenerateCluster("all points are identical".into()));
    }
    let mut centers = [pts[a], pts[b]];
    let mut membership = assign(&pts, &centers);
    let mut trace = vec![sum_of_squares(&pts, &centers, &membership)];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        for (k, c) in centers.iter_mut().enumerate() {
            let (sum, n) = pts
                .iter()
                .zip(&membership)
                .filter(|(_, &m)| m == k)
                .fold((Vec2::zeros(), 0usize), |(s, n), (p, _)| (s + p, n + 1));
            if n > 0 {
                *c = sum / n as f64;
            }
        }
        let next = assign(&pts, &centers);
        trace.push(sum_of_squares(&pts, &centers, &next));
        if next == membership {
            break;
        }
        membership = next;
    }
    Ok(ClusterAssignment {
        centers: centers.map(|c| PixelCoord::new(c.x, c.y)),
        membership,
        objective_trace: trace,
        iterations,
    })
}

/// Outcome of the compression sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselClassification {
    pub clusters: ClusterAssignment,
    pub vein_cluster: usize,
    /// Per-cluster area over the sweep (largest member per frame, frames
    /// without a member skipped).
    pub area_series: [Vec<f64>; 2],
    /// `(max - min) / max` of each area series.
    pub deformation: [f64; 2],
    pub vein_reference_px: PixelCoord,
    pub artery_reference_px: PixelCoord,
}

impl VesselClassification {
    pub fn vein_deformation(&self) -> f64 {
        self.deformation[self.vein_cluster]
    }

    pub fn artery_deformation(&self) -> f64 {
        self.deformation[1 - self.vein_cluster]
    }
}

fn relative_span(series: &[f64]) -> f64 {
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    if series.is_empty() || max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

pub fn classify_vein_artery(sweep: &[UltrasoundFrame], seed: u64, threshold: f64) -> Result<VesselClassification> {
    if sweep.len() < 3 {
        return Err(Error::Domain("compression sweep needs at least 3 frames".into()));
    }
    if let Some(f) = sweep.iter().find(|f| f.is_empty()) {
        return Err(Error::NoVessel(format!("sweep frame {} has no observation", f.index)));
    }
    let mut owner = Vec::new();
    let mut points = Vec::new();
    for (fi, f) in sweep.iter().enumerate() {
        for o in &f.observations {
            owner.push((fi, o.area_px2));
            points.push(o.centroid_px);
        }
    }
    let clusters = kmeans_2(&points, seed)?;
    let mut per_frame = vec![[None::<f64>; 2]; sweep.len()];
    let mut mean = [Vec2::zeros(); 2];
    let mut count = [0usize; 2];
    for ((&(fi, area), &k), p) in owner.iter().zip(&clusters.membership).zip(&points) {
        let slot = &mut per_frame[fi][k];
        *slot = Some(slot.map_or(area, |a| a.max(area)));
        mean[k] += p.to_vec2();
        count[k] += 1;
    }
    let area_series: [Vec<f64>; 2] = [0, 1].map(|k| per_frame.iter().filter_map(|f| f[k]).collect());
    let deformation = [relative_span(&area_series[0]), relative_span(&area_series[1])];
    if (deformation[0] - deformation[1]).abs() < threshold {
        return Err(Error::AmbiguousClassification {
            first: deformation[0],
            second: deformation[1],
        });
    }
    let vein_cluster = usize::from(deformation[1] > deformation[0]);
    let centroid = |k: usize| {
        let m = mean[k] / count[k].max(1) as f64;
        PixelCoord::new(m.x, m.y)
    };
    Ok(VesselClassification {
        vein_reference_px: centroid(vein_cluster),
        artery_reference_px: centroid(1 - vein_cluster),
        clusters,
        vein_cluster,
        area_series,
        deformation,
    })
}

fn nearest_index<'a>(mut points: impl Iterator<Item = &'a PixelCoord>, target: &PixelCoord) -> Option<usize> {
    let first = points.next()?;
    let mut best = (0, first.distance(target));
    for (i, p) in points.enumerate() {
        let d = p.distance(target);
        if d < best.1 {
            best = (i + 1, d);
        }
    }
    Some(best.0)
}

/// Vein = observation closest to the reference (ties to the lower index);
/// artery = largest of the rest.
pub fn locate_vein_in_frame(
    frame: &UltrasoundFrame,
    reference_px: &PixelCoord,
) -> Result<(VesselObservation, Option<VesselObservation>)> {
    let vi = nearest_index(frame.observations.iter().map(|o| &o.centroid_px), reference_px)
        .ok_or_else(|| Error::NoVessel(format!("frame {} is empty", frame.index)))?;
    let artery = frame
        .observations
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != vi)
        .map(|(_, o)| *o)
        .reduce(|a, b| if b.area_px2 > a.area_px2 { b } else { a });
    Ok((frame.observations[vi], artery))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedCenterline {
    pub label: VesselLabel,
    pub points: Vec<Vec3>,
}

impl ReconstructedCenterline {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z,label\n");
        for p in &self.points {
            writeln!(out, "{:.6},{:.6},{:.6},{}", p.x, p.y, p.z, self.label).unwrap();
        }
        out
    }
}

/// Where the vein was seen last: a frame of the record and the centroid
/// identified in it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VeinReference {
    pub frame_index: usize,
    pub centroid_px: PixelCoord,
}

#[derive(Debug, Clone, Copy, Default)]
struct FrameLabels {
    vein: Option<PixelCoord>,
    artery: Option<PixelCoord>,
}

/// Labels one frame against running vein/artery references. A lone
/// observation is only taken as the vein if it is closer to the vein
/// reference than to the artery reference.
fn label_frame(frame: &UltrasoundFrame, vein_ref: &PixelCoord, artery_ref: Option<&PixelCoord>) -> FrameLabels {
    let Ok((vein, artery)) = locate_vein_in_frame(frame, vein_ref) else {
        return FrameLabels::default();
    };
    if artery.is_none() {
        if let Some(a) = artery_ref {
            if vein.centroid_px.distance(a) < vein.centroid_px.distance(vein_ref) {
                return FrameLabels {
                    vein: None,
                    artery: Some(vein.centroid_px),
                };
            }
        }
    }
    FrameLabels {
        vein: Some(vein.centroid_px),
        artery: artery.map(|a| a.centroid_px),
    }
}

/// Lifts vein and artery centroids of every frame into the base frame.
///
/// Labelling starts at the reference frame and walks outward in both
/// directions, each frame using the centroids identified in its neighbour as
/// the new references, so slow drift of the vessels across the image along
/// the scan is followed.
pub fn reconstruct_centerlines(
    rec: &ScanRecord,
    reference: &VeinReference,
) -> Result<(ReconstructedCenterline, ReconstructedCenterline)> {
    let n = rec.frames.len();
    if reference.frame_index >= n {
        return Err(Error::ReconstructionFailed(format!(
            "reference frame {} outside a {n}-frame record",
            reference.frame_index
        )));
    }
    let mut labels = vec![FrameLabels::default(); n];
    let anchor = label_frame(&rec.frames[reference.frame_index], &reference.centroid_px, None);
    labels[reference.frame_index] = anchor;
    for dir in [1isize, -1] {
        let mut vein_ref = anchor.vein.unwrap_or(reference.centroid_px);
        let mut artery_ref = anchor.artery;
        let mut i = reference.frame_index as isize + dir;
        while (0..n as isize).contains(&i) {
            let l = label_frame(&rec.frames[i as usize], &vein_ref, artery_ref.as_ref());
            vein_ref = l.vein.unwrap_or(vein_ref);
            artery_ref = l.artery.or(artery_ref);
            labels[i as usize] = l;
            i += dir;
        }
    }
    let mut vein = Vec::new();
    let mut artery = Vec::new();
    for (f, l) in rec.frames.iter().zip(&labels) {
        let t_e_b = f.probe_pose.to_transform();
        let lift = |p: &PixelCoord| pixel_to_base(p, &rec.calibration, &rec.t_u_e, &t_e_b);
        if let Some(p) = &l.vein {
            vein.push(lift(p)?);
        }
        if let Some(p) = &l.artery {
            artery.push(lift(p)?);
        }
    }
    if vein.len() < 2 {
        return Err(Error::ReconstructionFailed(format!(
            "only {} frame(s) with a vein observation",
            vein.len()
        )));
    }
    Ok((
        ReconstructedCenterline {
            label: VesselLabel::Vein,
            points: vein,
        },
        ReconstructedCenterline {
            label: VesselLabel::Artery,
            points: artery,
        },
    ))
}
