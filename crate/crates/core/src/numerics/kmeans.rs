//! k-means++ seeding, Lloyd iterations and an optional capacity-balancing
//! pass that produces equal-size clusters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::{squared_distance, Matrix};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

/// Cluster labels for the rows of a data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// `None` marks a row left out by the balancing pass.
    pub labels: Vec<Option<usize>>,
    /// k×d; present for k-means results, empty (0×0) otherwise.
    pub centroids: Matrix,
    pub sizes: Vec<usize>,
    /// Within-cluster sum of squares over assigned rows.
    pub inertia: f64,
    /// Inertia after each Lloyd update of the winning restart.
    pub inertia_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Row indices per cluster, in row order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c].push(i);
            }
        }
        out
    }

    pub fn unassigned(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_none().then_some(i))
            .collect()
    }

    pub(crate) fn from_labels(labels: Vec<Option<usize>>, k: usize) -> Self {
        let mut sizes = vec![0; k];
        for c in labels.iter().flatten() {
            sizes[*c] += 1;
        }
        Self {
            labels,
            centroids: Matrix::zeros(0, 0),
            sizes,
            inertia: 0.0,
            inertia_trace: Vec::new(),
        }
    }
}

/// k-means++ clustering.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Independent seedings; the lowest-inertia run wins.
    pub restarts: usize,
    /// When set, every cluster ends with exactly this many members.
    pub capacity: Option<usize>,
}

impl KMeans {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            restarts: DEFAULT_RESTARTS,
            capacity: None,
        }
    }

    pub fn balanced(mut self, capacity: usize) -> Self {
        self.capacity = Some(capacity);
        self
    }

    pub fn restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts.max(1);
        self
    }

    pub fn fit(&self, data: &Matrix) -> Result<ClusterAssignment> {
        let n = data.rows();
        let k = self.k;
        if k == 0 {
            return Err(Error::BadConfig("k-means needs k >= 1".into()));
        }
        if k > n {
            return Err(Error::TooManyClusters { k, n });
        }
        if let Some(cap) = self.capacity {
            if cap == 0 || cap * k > n {
                return Err(Error::BadConfig(format!(
                    "capacity {cap} × {k} clusters does not fit {n} rows"
                )));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut best: Option<Run> = None;
        for _ in 0..self.restarts.max(1) {
            let centroids = seed_plus_plus(data, k, &mut rng);
            let run = lloyd(data, centroids, self.max_iter);
            if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
                best = Some(run);
            }
        }
        let best = best.expect("at least one restart");

        let labels = match self.capacity {
            Some(cap) => balance(data, &best.labels, &best.centroids, cap),
            None => best.labels.iter().map(|&l| Some(l)).collect(),
        };
        let centroids = means(data, &labels, k, &best.centroids);
        let mut out = ClusterAssignment::from_labels(labels, k);
        out.inertia = out
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|c| squared_distance(data.row(i), centroids.row(c))))
            .sum();
        out.centroids = centroids;
        out.inertia_trace = best.trace;
        Ok(out)
    }
}

/// Convenience wrapper: `capacity = Some(c)` selects balanced mode.
pub fn kmeans_pp(
    data: &Matrix,
    k: usize,
    seed: u64,
    capacity: Option<usize>,
) -> Result<ClusterAssignment> {
    let mut km = KMeans::new(k, seed);
    km.capacity = capacity;
    km.fit(data)
}

struct Run {
    labels: Vec<usize>,
    centroids: Matrix,
    inertia: f64,
    trace: Vec<f64>,
}

/// D² sampling. Falls back to the first unused row when every remaining
/// distance is zero (fewer distinct points than k).
fn seed_plus_plus(data: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = data.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| squared_distance(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` a hair below `target`.
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(data.row(i), data.row(next)));
        }
    }
    data.select_rows(&chosen)
}

fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(data: &Matrix, mut centroids: Matrix, max_iter: usize) -> Run {
    let n = data.rows();
    let k = centroids.rows();
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(data.row(i), &centroids).0).collect();
    let mut trace = Vec::new();
    let mut iter = 0;
    loop {
        reseed_empty(data, &mut labels, &centroids, k);
        let assigned: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
        centroids = means(data, &assigned, k, &centroids);
        let inertia: f64 = (0..n)
            .map(|i| squared_distance(data.row(i), centroids.row(labels[i])))
            .sum();
        trace.push(inertia);

        iter += 1;
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let x = data.row(i);
            let mut best = squared_distance(x, centroids.row(*label));
            for c in 0..k {
                let d = squared_distance(x, centroids.row(c));
                if d < best {
                    best = d;
                    *label = c;
                    changed = true;
                }
            }
        }
        if !changed || iter >= max_iter {
            if changed {
                // Labels moved after the last update; bring centroids in line.
                reseed_empty(data, &mut labels, &centroids, k);
                let assigned: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
                centroids = means(data, &assigned, k, &centroids);
                let inertia: f64 = (0..n)
                    .map(|i| squared_distance(data.row(i), centroids.row(labels[i])))
                    .sum();
                trace.push(inertia);
            }
            let inertia = *trace.last().unwrap();
            return Run {
                labels,
                centroids,
                inertia,
                trace,
            };
        }
    }
}

/// Moves the point farthest from its centroid into each empty cluster.
fn reseed_empty(data: &Matrix, labels: &mut [usize], centroids: &Matrix, k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .map(|i| (i, squared_distance(data.row(i), centroids.row(labels[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        match far {
            Some((i, _)) => labels[i] = empty,
            None => return,
        }
    }
}

/// Cluster means; clusters with no members keep their previous centroid.
fn means(data: &Matrix, labels: &[Option<usize>], k: usize, previous: &Matrix) -> Matrix {
    let d = data.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
        } else {
            let inv = counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|s| *s /= inv);
        }
    }
    sums
}

/// Capacity pass: each over-full cluster keeps its `capacity` closest
/// members; evicted rows go, closest pair first, to the nearest centroid that
/// still has room. Rows left once every cluster is full are unassigned.
fn balance(data: &Matrix, labels: &[usize], centroids: &Matrix, capacity: usize) -> Vec<Option<usize>> {
    let n = data.rows();
    let k = centroids.rows();
    let dist = |i: usize, c: usize| squared_distance(data.row(i), centroids.row(c));

    let mut out: Vec<Option<usize>> = vec![None; n];
    let mut fill = vec![0usize; k];
    let mut pool = Vec::new();
    for c in 0..k {
        let mut members: Vec<(usize, f64)> = (0..n)
            .filter(|&i| labels[i] == c)
            .map(|i| (i, dist(i, c)))
            .collect();
        members.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for (rank, (i, _)) in members.into_iter().enumerate() {
            if rank < capacity {
                out[i] = Some(c);
                fill[c] += 1;
            } else {
                pool.push(i);
            }
        }
    }

    let open: Vec<usize> = (0..k).filter(|&c| fill[c] < capacity).collect();
    let mut pairs: Vec<(f64, usize, usize)> = pool
        .iter()
        .flat_map(|&i| open.iter().map(move |&c| (i, c)))
        .map(|(i, c)| (dist(i, c), i, c))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, i, c) in pairs {
        if out[i].is_none() && fill[c] < capacity {
            out[i] = Some(c);
            fill[c] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(xs: &[f64]) -> Matrix {
        Matrix::from_vec(xs.len(), 1, xs.to_vec())
    }

    #[test]
    fn separates_two_pairs() {
        let data = column(&[0.0, 0.1, 10.0, 10.1]);
        let a = kmeans_pp(&data, 2, 1, None).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[2]);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let data = column(&[3.0, -1.0, 7.5, 2.0, 0.0]);
        let a = kmeans_pp(&data, 5, 4, None).unwrap();
        assert_eq!(a.inertia, 0.0);
        assert!(a.sizes.iter().all(|&s| s == 1));
    }

    #[test]
    fn too_many_clusters() {
        let data = column(&[1.0, 2.0]);
        assert!(matches!(
            kmeans_pp(&data, 3, 0, None),
            Err(Error::TooManyClusters { k: 3, n: 2 })
        ));
    }

    #[test]
    fn duplicate_points_never_leave_empty_clusters() {
        let data = column(&[1.0, 1.0, 1.0, 1.0, 5.0]);
        let a = kmeans_pp(&data, 3, 11, None).unwrap();
        assert!(a.sizes.iter().all(|&s| s > 0), "{:?}", a.sizes);
        assert_eq!(a.sizes.iter().sum::<usize>(), 5);
    }

    #[test]
    fn balanced_sizes_and_leftovers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..103)
            .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..5.0)])
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let a = KMeans::new(4, 8).balanced(25).fit(&data).unwrap();
        assert_eq!(a.sizes, vec![25; 4]);
        assert_eq!(a.unassigned().len(), 3);
    }

    #[test]
    fn balanced_capacity_overflow_rejected() {
        let data = column(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            KMeans::new(2, 0).balanced(2).fit(&data),
            Err(Error::BadConfig(_))
        ));
    }

    #[test]
    fn inertia_trace_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let a = KMeans::new(7, 2).restarts(1).fit(&data).unwrap();
        assert!(a.inertia_trace.len() > 1);
        for w in a.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
    }
}
