//! Evaluation: ICP alignment, nearest-neighbour centerline errors and the
//! end-to-end scenario runner.

mod icp;
mod nn;
mod scenario;

pub use icp::{fit_rigid, icp_align, is_collinear, IcpOptions, IcpResult};
pub use nn::PointIndex;
pub use scenario::{
    run_scenario, run_scenario_detailed, scenario_seed, summary_csv, summary_csv_header, NoiseSettings, PipelineConfig,
    ScenarioArtifacts, ScenarioReport, ScenarioSeeds, SweepConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineErrorStats {
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub distances: Vec<f64>,
}

impl CenterlineErrorStats {
    pub fn from_distances(distances: Vec<f64>) -> Result<Self> {
        if distances.is_empty() {
            return domain("no distances to summarise");
        }
        let n = distances.len() as f64;
        let mean = distances.iter().sum::<f64>() / n;
        let max = distances.iter().copied().fold(0.0, f64::max);
        let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            max,
            std_dev: var.sqrt(),
            distances,
        })
    }
}

/// Mean distance from each reconstructed point to its `k` nearest
/// ground-truth points (`k = 1`: plain nearest-point distance).
pub fn knn_centerline_error(reconstructed: &[Vec3], ground_truth: &[Vec3], k: usize) -> Result<CenterlineErrorStats> {
    if reconstructed.is_empty() || ground_truth.is_empty() {
        return domain("kNN error needs non-empty point sets");
    }
    if k == 0 {
        return domain("k must be at least 1");
    }
    let index = PointIndex::new(ground_truth);
    let distances = reconstructed
        .iter()
        .map(|p| {
            let nn = index.k_nearest(p, k);
            nn.iter().map(|(_, d)| d).sum::<f64>() / nn.len() as f64
        })
        .collect();
    CenterlineErrorStats::from_distances(distances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use proptest::prelude::*;

    fn line(n: usize, offset: Vec3) -> Vec<Vec3> {
        (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0) + offset).collect()
    }

    #[test]
    fn subset_and_shift() {
        let gt = line(50, Vec3::zeros());
        let s = knn_centerline_error(&gt[10..20], &gt, 1).unwrap();
        assert_eq!((s.mean, s.max, s.std_dev), (0.0, 0.0, 0.0));
        let shifted = line(50, Vec3::new(0.0, 2.0, 0.0));
        let s = knn_centerline_error(&shifted[1..49], &gt, 1).unwrap();
        assert!((s.mean - 2.0).abs() < 1e-12 && (s.max - 2.0).abs() < 1e-12 && s.std_dev < 1e-12);
        assert!(knn_centerline_error(&[], &gt, 1).is_err());
        assert!(knn_centerline_error(&gt, &[], 1).is_err());
    }

    #[test]
    fn population_sd() {
        let s = CenterlineErrorStats::from_distances(vec![1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.max, s.std_dev), (2.0, 3.0, 1.0));
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_rigid_invariant(
            rec in prop::collection::vec(prop::array::uniform3(-30.0f64..30.0), 1..40),
            gt in prop::collection::vec(prop::array::uniform3(-30.0f64..30.0), 1..60),
            rpy in prop::array::uniform3(-180.0f64..180.0),
            t in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let rec: Vec<Vec3> = rec.into_iter().map(Vec3::from).collect();
            let gt: Vec<Vec3> = gt.into_iter().map(Vec3::from).collect();
            let s = knn_centerline_error(&rec, &gt, 1).unwrap();
            for (p, d) in rec.iter().zip(&s.distances) {
                let b = gt.iter().map(|g| (p - g).norm()).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(*d, b);
            }
            prop_assert!(s.max >= s.mean && s.mean >= 0.0 && s.std_dev >= 0.0);
            let g = RigidTransform::from_rpy_deg(rpy[0], rpy[1], rpy[2]).compose(&RigidTransform::from_translation(Vec3::from(t)));
            let moved = knn_centerline_error(
                &rec.iter().map(|p| g.apply_point(p)).collect::<Vec<_>>(),
                &gt.iter().map(|p| g.apply_point(p)).collect::<Vec<_>>(),
                1,
            ).unwrap();
            for (a, b) in s.distances.iter().zip(&moved.distances) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
