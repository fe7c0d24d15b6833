//! Lloyd's k-means with k-means++ seeding and seeded restarts.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Independent k-means++ restarts; the run with the lowest objective wins.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            restarts: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansRun<F> {
    /// `k × d`, one mean per row.
    pub means: Array2<F>,
    pub objective: F,
    /// Objective after seeding, then after every Lloyd update.
    pub history: Vec<F>,
    pub iterations: usize,
}

/// Sum of squared distances from every point to its nearest mean.
pub fn objective<F: Scalar>(points: ArrayView2<'_, F>, means: ArrayView2<'_, F>) -> F {
    points
        .rows()
        .into_iter()
        .map(|p| nearest(p, means).1)
        .sum()
}

fn squared_distance<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> F {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// Nearest mean and its squared distance; ties resolve to the lowest index.
fn nearest<F: Scalar>(p: ArrayView1<'_, F>, means: ArrayView2<'_, F>) -> (usize, F) {
    let mut best = (0, F::infinity());
    for (j, m) in means.rows().into_iter().enumerate() {
        let d = squared_distance(p, m);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_rows<F: Scalar>(points: ArrayView2<'_, F>) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for (i, p) in points.rows().into_iter().enumerate() {
        if !keep.iter().any(|&j| points.row(j) == p) {
            keep.push(i);
        }
    }
    keep
}

fn seed_plus_plus<F: Scalar, R: Rng + ?Sized>(
    points: ArrayView2<'_, F>,
    k: usize,
    rng: &mut R,
) -> Array2<F> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| squared_distance(p, points.row(chosen[0])).as_f64())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if target < w {
                pick = Some(i);
                break;
            }
            target -= w;
        }
        // Rounding can run past the end; fall back to the last positive-weight point.
        let pick = pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("k < distinct"));
        chosen.push(pick);
        for (i, p) in points.rows().into_iter().enumerate() {
            let d = squared_distance(p, points.row(pick)).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    points.select(Axis(0), &chosen)
}

/// One seeded k-means++ initialization followed by Lloyd iterations until the
/// assignment reaches a fixpoint or `max_iter` updates have run.
///
/// Requires `1 <= k < distinct(points)`; [`kmeans`] handles the other cases.
pub fn lloyd<F: Scalar, R: Rng + ?Sized>(
    points: ArrayView2<'_, F>,
    k: usize,
    rng: &mut R,
    max_iter: usize,
) -> KMeansRun<F> {
    let (n, d) = points.dim();
    let mut means = seed_plus_plus(points, k, rng);
    let mut history = vec![objective(points, means.view())];
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..max_iter {
        let next: Vec<usize> = points
            .rows()
            .into_iter()
            .map(|p| nearest(p, means.view()).0)
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sums = Array2::<F>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (p, &c) in points.rows().into_iter().zip(&assignment) {
            let mut row = sums.row_mut(c);
            row += &p;
            counts[c] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            // Empty clusters keep their previous mean.
            if count > 0 {
                let mean = &sums.row(c) / F::lit(count as f64);
                means.row_mut(c).assign(&mean);
            }
        }
        iterations += 1;
        history.push(objective(points, means.view()));
    }
    let objective = *history.last().unwrap();
    KMeansRun {
        means,
        objective,
        history,
        iterations,
    }
}

/// Seed for restart `r` of a clustering seeded with `seed`.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(restart as u64)
}

/// Clusters the rows of `points` into `k` means.
///
/// When `k` is at least the number of distinct points, the distinct points are
/// returned in first-occurrence order, repeated cyclically up to `k` rows.
pub fn kmeans<F: Scalar>(
    points: ArrayView2<'_, F>,
    k: usize,
    seed: u64,
    params: KMeansParams,
) -> Result<KMeansRun<F>> {
    if points.nrows() == 0 {
        return Err(Error::Config("k-means needs at least one point".into()));
    }
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    let distinct = distinct_rows(points);
    if k >= distinct.len() {
        let idx: Vec<usize> = (0..k).map(|i| distinct[i % distinct.len()]).collect();
        let means = points.select(Axis(0), &idx);
        let obj = objective(points, means.view());
        return Ok(KMeansRun {
            means,
            objective: obj,
            history: vec![obj],
            iterations: 0,
        });
    }
    let mut best: Option<KMeansRun<F>> = None;
    for r in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, r));
        let run = lloyd(points, k, &mut rng, params.max_iter);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Centroid of all rows.
pub fn centroid<F: Scalar>(points: ArrayView2<'_, F>) -> Array1<F> {
    points.mean_axis(Axis(0)).expect("nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_cluster_is_centroid() {
        let pts = array![[0.0f64, 1.0], [2.0, 3.0], [4.0, -1.0]];
        let run = kmeans(pts.view(), 1, 3, KMeansParams::default()).unwrap();
        let c = centroid(pts.view());
        for (a, b) in run.means.row(0).iter().zip(c.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_points_pad() {
        let pts = array![[1.5f64, -2.0], [1.5, -2.0], [1.5, -2.0]];
        let run = kmeans(pts.view(), 2, 0, KMeansParams::default()).unwrap();
        assert_eq!(run.means, array![[1.5, -2.0], [1.5, -2.0]]);
        assert_eq!(run.objective, 0.0);
    }

    #[test]
    fn k_above_distinct_cycles_distinct_points() {
        let pts = array![[0.0f64], [1.0], [0.0]];
        let run = kmeans(pts.view(), 3, 0, KMeansParams::default()).unwrap();
        assert_eq!(run.means, array![[0.0], [1.0], [0.0]]);
    }

    #[test]
    fn rejects_empty_and_zero_k() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(kmeans(empty.view(), 1, 0, KMeansParams::default()).is_err());
        let pts = array![[0.0f64]];
        assert!(kmeans(pts.view(), 0, 0, KMeansParams::default()).is_err());
    }

    #[test]
    fn ties_go_to_lowest_mean() {
        let means = array![[0.0f64], [2.0]];
        assert_eq!(nearest(array![1.0f64].view(), means.view()).0, 0);
    }

    #[test]
    fn deterministic_for_seed() {
        let pts = array![[0.0f32, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.2], [9.0, 0.0]];
        let a = kmeans(pts.view(), 2, 11, KMeansParams::default()).unwrap();
        let b = kmeans(pts.view(), 2, 11, KMeansParams::default()).unwrap();
        assert_eq!(a.means, b.means);
    }
}
