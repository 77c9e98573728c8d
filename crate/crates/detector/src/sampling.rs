//! Index-producing steps of the point backbone: farthest point sampling,
//! ball grouping and three-nearest-neighbor interpolation weights.

use arcal_core::Point3;

#[inline]
fn dist2(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min subset of `points`, starting at `start`.
///
/// Ties go to the lowest index. Returned indices are distinct while
/// `m <= points.len()`; for larger `m` the full ordering is repeated
/// cyclically so the output always has length `m`.
pub fn farthest_point_sampling(points: &[Point3<f64>], m: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    assert!(n > 0, "farthest point sampling on an empty set");
    assert!(start < n, "start index {start} out of range for {n} points");
    let take = m.min(n);
    let mut out = Vec::with_capacity(m);
    if take == 0 {
        return out;
    }
    let mut min_d = vec![f64::INFINITY; n];
    let mut selected = vec![false; n];
    let mut last = start;
    out.push(last);
    selected[last] = true;
    while out.len() < take {
        let lp = points[last];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = dist2(&points[i], &lp);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        last = best;
        selected[last] = true;
        out.push(last);
    }
    for k in take..m {
        out.push(out[k % take]);
    }
    out
}

/// Neighborhood of one center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    /// Exactly `k` indices.
    pub indices: Vec<usize>,
    /// `false` when nothing was within the radius and the group holds the
    /// nearest point as a placeholder.
    pub valid: bool,
}

/// For each center, the first `k` points (in index order) within `radius`,
/// padded to `k` by repeating the first hit.
pub fn ball_query(points: &[Point3<f64>], centers: &[Point3<f64>], radius: f64, k: usize) -> Vec<Group> {
    assert!(radius > 0.0 && k >= 1, "ball query needs radius > 0 and k >= 1");
    assert!(!points.is_empty(), "ball query over an empty set");
    let r2 = radius * radius;
    centers
        .iter()
        .map(|c| {
            let mut indices = Vec::with_capacity(k);
            for (i, p) in points.iter().enumerate() {
                if dist2(p, c) <= r2 {
                    indices.push(i);
                    if indices.len() == k {
                        break;
                    }
                }
            }
            let valid = !indices.is_empty();
            if !valid {
                indices.push(nearest(points, c));
            }
            let first = indices[0];
            indices.resize(k, first);
            Group { indices, valid }
        })
        .collect()
}

fn nearest(points: &[Point3<f64>], c: &Point3<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Inverse-distance weights over the (up to) three nearest coarse points.
///
/// Unused slots (fewer than three coarse points) repeat the nearest index
/// with weight 0. A coincident coarse point takes the whole weight.
pub fn three_nn_weights(coarse: &[Point3<f64>], fine: &[Point3<f64>]) -> (Vec<[usize; 3]>, Vec<[f64; 3]>) {
    assert!(!coarse.is_empty(), "interpolation from an empty coarse set");
    let mut idx = Vec::with_capacity(fine.len());
    let mut wts = Vec::with_capacity(fine.len());
    for f in fine {
        // (squared distance, index), kept sorted ascending with index ties to the lower index
        let mut best = [(f64::INFINITY, usize::MAX); 3];
        for (i, c) in coarse.iter().enumerate() {
            let d = dist2(c, f);
            if d < best[2].0 {
                best[2] = (d, i);
                if best[2].0 < best[1].0 {
                    best.swap(1, 2);
                    if best[1].0 < best[0].0 {
                        best.swap(0, 1);
                    }
                }
            }
        }
        let found = coarse.len().min(3);
        let mut ix = [best[0].1; 3];
        let mut w = [0.0; 3];
        if best[0].0 == 0.0 {
            w[0] = 1.0;
        } else {
            let mut total = 0.0;
            for k in 0..found {
                ix[k] = best[k].1;
                w[k] = 1.0 / best[k].0.sqrt();
                total += w[k];
            }
            for wk in &mut w[..found] {
                *wk /= total;
            }
        }
        idx.push(ix);
        wts.push(w);
    }
    (idx, wts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    #[test]
    fn fps_square_corners() {
        let pts = [p(0.0, 0.0, 0.0), p(0.0, 1.0, 0.0), p(1.0, 0.0, 0.0), p(1.0, 1.0, 0.0)];
        assert_eq!(farthest_point_sampling(&pts, 2, 0), vec![0, 3]);
        let mut all = farthest_point_sampling(&pts, 4, 0);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_pads_cyclically() {
        let pts = [p(0.0, 0.0, 0.0), p(2.0, 0.0, 0.0)];
        assert_eq!(farthest_point_sampling(&pts, 5, 1), vec![1, 0, 1, 0, 1]);
    }

    #[test]
    fn fps_duplicates_stay_distinct() {
        let pts = [p(1.0, 1.0, 1.0); 4];
        assert_eq!(farthest_point_sampling(&pts, 3, 0), vec![0, 1, 2]);
    }

    #[test]
    fn ball_query_radius_is_closed_and_padded() {
        let pts = [p(0.0, 0.0, 0.0), p(1.0 + 1e-6, 0.0, 0.0), p(0.0, 0.5, 0.0), p(0.0, 0.0, 1.0)];
        let g = ball_query(&pts, &[p(0.0, 0.0, 0.0)], 1.0, 4);
        assert_eq!(g[0].indices, vec![0, 2, 3, 0]);
        assert!(g[0].valid);
        let far = ball_query(&pts, &[p(10.0, 0.0, 0.0)], 0.5, 2);
        assert_eq!(far[0].indices, vec![1, 1]);
        assert!(!far[0].valid);
    }

    #[test]
    fn interpolation_weights() {
        let coarse = [p(1.0, 0.0, 0.0), p(-2.0, 0.0, 0.0)];
        let (idx, w) = three_nn_weights(&coarse, &[p(0.0, 0.0, 0.0)]);
        assert_eq!(idx[0], [0, 1, 0]);
        assert!((w[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[0][1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(w[0][2], 0.0);

        let coarse = [p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 2.0, 0.0), p(5.0, 5.0, 5.0)];
        let (idx, w) = three_nn_weights(&coarse, &[p(1.0, 0.0, 0.0), p(0.2, 0.3, 0.1)]);
        assert_eq!((idx[0][0], w[0]), (1, [1.0, 0.0, 0.0]));
        assert!((w[1].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(idx[1], [0, 1, 2]);
    }
}
