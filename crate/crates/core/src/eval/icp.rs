//! Point-to-point ICP with a closed-form (SVD) rigid fit.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::nn::PointIndex;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpOptions {
    pub max_iter: usize,
    /// Stop once the RMS improves by less than this (mm).
    pub tol: f64,
    /// Fraction of worst correspondences dropped from each fit.
    pub trim_fraction: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-9,
            trim_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    /// Maps source points onto the target.
    pub transform: RigidTransform,
    pub rms: f64,
    /// RMS before the first update and after each iteration.
    pub rms_trace: Vec<f64>,
    pub iterations: usize,
}

/// Whether every point lies within `tol` of one line.
pub fn is_collinear(points: &[Vec3], tol: f64) -> bool {
    let Some(a) = points.first() else { return true };
    let Some(b) = points
        .iter()
        .max_by(|p, q| (*p - a).norm_squared().total_cmp(&(*q - a).norm_squared()))
    else {
        return true;
    };
    let Some(dir) = (b - a).try_normalize(1e-12) else {
        return true;
    };
    points.iter().all(|p| (p - a - dir * (p - a).dot(&dir)).norm() <= tol)
}

/// Least-squares rotation and translation taking `src[i]` to `dst[i]`.
pub fn fit_rigid(src: &[Vec3], dst: &[Vec3]) -> RigidTransform {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let h: Matrix3<f64> = src.iter().zip(dst).map(|(s, d)| (s - cs) * (d - cd).transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    let mut rot = nalgebra::Rotation3::from_matrix_unchecked(r);
    rot.renormalize();
    RigidTransform::from_rotation(rot, cd - rot * cs)
}

fn correspondences(src: &[Vec3], index: &PointIndex) -> Vec<(usize, f64)> {
    src.iter()
        .map(|p| index.nearest(p).expect("target not empty"))
        .collect()
}

fn rms(pairs: &[(usize, f64)]) -> f64 {
    (pairs.iter().map(|(_, d)| d * d).sum::<f64>() / pairs.len() as f64).sqrt()
}

pub fn icp_align(source: &[Vec3], target: &[Vec3], opts: &IcpOptions) -> Result<IcpResult> {
    if source.len() < 3 || target.len() < 3 {
        return Err(Error::Alignment("ICP needs at least 3 points in each set".into()));
    }
    if is_collinear(source, 1e-9) && is_collinear(target, 1e-9) {
        return Err(Error::Alignment("both point sets are collinear".into()));
    }
    if !(0.0..1.0).contains(&opts.trim_fraction) {
        return Err(Error::Alignment("trim fraction must be in [0, 1)".into()));
    }
    let index = PointIndex::new(target);
    let mut total = RigidTransform::identity();
    let mut moved = source.to_vec();
    let mut pairs = correspondences(&moved, &index);
    let mut trace = vec![rms(&pairs)];
    let keep = ((source.len() as f64) * (1.0 - opts.trim_fraction)).ceil().max(3.0) as usize;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let mut order: Vec<usize> = (0..moved.len()).collect();
        if keep < moved.len() {
            order.sort_by(|&a, &b| pairs[a].1.total_cmp(&pairs[b].1).then(a.cmp(&b)));
            order.truncate(keep);
        }
        let src: Vec<Vec3> = order.iter().map(|&i| moved[i]).collect();
        let dst: Vec<Vec3> = order.iter().map(|&i| *index.point(pairs[i].0)).collect();
        let step = fit_rigid(&src, &dst);
        total = step.compose(&total);
        moved = source.iter().map(|p| total.apply_point(p)).collect();
        pairs = correspondences(&moved, &index);
        iterations += 1;
        let r = rms(&pairs);
        let prev = *trace.last().unwrap();
        trace.push(r);
        if (prev - r).abs() < opts.tol {
            break;
        }
    }
    Ok(IcpResult {
        transform: total,
        rms: *trace.last().unwrap(),
        rms_trace: trace,
        iterations,
    })
}
