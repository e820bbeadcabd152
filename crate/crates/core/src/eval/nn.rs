//! Exact nearest-neighbour queries over a static 3D point set.
//!
//! Points are sorted by `x`; a query walks outward from its insertion position
//! in both directions and stops once the `x` gap alone exceeds the current
//! k-th best distance.

use crate::Vec3;

#[derive(Debug, Clone)]
pub struct PointIndex {
    /// `(x, original index)` sorted by x.
    order: Vec<(f64, usize)>,
    points: Vec<Vec3>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (p.x, i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self {
            order,
            points: points.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    /// Index and distance of the closest point; ties go to the lower index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.k_nearest(q, 1).into_iter().next()
    }

    /// Up to `k` closest points, nearest first, ties by index.
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        // Squared distances while searching.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let offer = |d2: f64, i: usize, best: &mut Vec<(f64, usize)>| {
            let pos = best.partition_point(|&(bd, bi)| bd < d2 || (bd == d2 && bi < i));
            if pos < k {
                best.insert(pos, (d2, i));
                best.truncate(k);
            }
        };
        let bound = |best: &Vec<(f64, usize)>| if best.len() < k { f64::INFINITY } else { best[k - 1].0 };
        let start = self.order.partition_point(|&(x, _)| x < q.x);
        let (mut lo, mut hi) = (start, start);
        loop {
            let dx_hi = self.order.get(hi).map(|&(x, _)| x - q.x);
            let dx_lo = lo.checked_sub(1).map(|j| q.x - self.order[j].0);
            let b = bound(&best);
            let hi_ok = dx_hi.is_some_and(|dx| dx * dx <= b);
            let lo_ok = dx_lo.is_some_and(|dx| dx * dx <= b);
            if !hi_ok && !lo_ok {
                break;
            }
            let take_hi = match (hi_ok, lo_ok) {
                (true, true) => dx_hi.unwrap() <= dx_lo.unwrap(),
                (h, _) => h,
            };
            let i = if take_hi {
                hi += 1;
                self.order[hi - 1].1
            } else {
                lo -= 1;
                self.order[lo].1
            };
            offer((self.points[i] - q).norm_squared(), i, &mut best);
        }
        best.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }
}
