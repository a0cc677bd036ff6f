//! Seeded k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::rng::seeded;

pub const KMEANS_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Array2<f32>,
    pub assignment: Vec<u32>,
}

/// Squared distances from every row of `x` to every centroid.
fn sq_distances(x: ArrayView2<f32>, x_norms: &[f32], c: &Array2<f32>) -> Array2<f32> {
    let c_norms: Vec<f32> = c.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut d = x.dot(&c.t());
    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (x_norms[i] - 2.0 * *v + c_norms[j]).max(0.0);
        }
    }
    d
}

fn argmin(row: ndarray::ArrayView1<f32>) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (j, &v) in row.iter().enumerate() {
        if v < best.1 {
            best = (j, v);
        }
    }
    best
}

/// Clusters the rows of `x` into `k` groups. Deterministic for a given seed.
/// Clusters left empty after an update are re-seeded with the point farthest
/// from its current centroid.
pub fn kmeans(x: ArrayView2<f32>, k: usize, iters: usize, seed: u64) -> KMeans {
    let n = x.nrows();
    assert!(k >= 1 && k <= n, "k-means needs 1 <= k <= n");
    let mut rng = seeded(seed);
    let norms: Vec<f32> = x.rows().into_iter().map(|r| r.dot(&r)).collect();

    // k-means++ seeding
    let mut centroids = Array2::<f32>::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut nearest: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(x.row(first)).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum())
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            let d: f64 = r.iter().zip(x.row(pick)).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
            nearest[i] = nearest[i].min(d);
        }
    }

    let mut assignment = vec![0u32; n];
    for it in 0..=iters {
        let d = sq_distances(x, &norms, &centroids);
        let mut changed = false;
        let mut dist = vec![0f32; n];
        for (i, row) in d.axis_iter(Axis(0)).enumerate() {
            let (j, v) = argmin(row);
            changed |= assignment[i] != j as u32;
            assignment[i] = j as u32;
            dist[i] = v;
        }
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a as usize] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n).max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a))).unwrap();
                centroids.row_mut(c).assign(&x.row(far));
                dist[far] = 0.0;
                counts[assignment[far] as usize] -= 1;
                assignment[far] = c as u32;
                counts[c] = 1;
                changed = true;
            }
        }
        if it == iters || (it > 0 && !changed) {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        for (i, r) in x.rows().into_iter().enumerate() {
            for (s, &v) in sums.row_mut(assignment[i] as usize).iter_mut().zip(r) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = (s * inv) as f32;
            }
        }
    }
    KMeans { centroids, assignment }
}
