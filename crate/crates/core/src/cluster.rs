//! Correlation distances, PCA target dimension and minimax-linkage
//! hierarchical clustering with prototypes.
//!
//! For a cluster `C`, the minimax radius is
//! `r(C) = min_{x in C} max_{x' in C} d(x, x')` and the point attaining it is
//! the cluster's prototype. Two clusters `G`, `H` are linked at
//! `d(G, H) = r(G ∪ H)`. Agglomeration repeatedly merges the pair with the
//! smallest linkage. Merge heights never decrease, so the tree has no
//! inversions and cutting it at any number of clusters is well defined.
//!
//! Ties are broken deterministically: among pairs at equal linkage the pair
//! whose `(smaller, larger)` minimum-leaf indices are lexicographically
//! smallest merges first; among equally good prototypes the smallest
//! original index wins.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 - |corr(r1, r2)|` over jointly observed (finite) entries.
pub fn corr_distance(r1: ArrayView1<f64>, r2: ArrayView1<f64>) -> Result<f64> {
    if r1.len() != r2.len() {
        return Err(Error::domain("corr_distance: length mismatch"));
    }
    let pairs: Vec<(f64, f64)> = r1
        .iter()
        .zip(r2.iter())
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::InsufficientOverlap {
            needed: 3,
            got: pairs.len(),
        });
    }
    let m = pairs.len() as f64;
    let (ma, mb) = pairs
        .iter()
        .fold((0.0, 0.0), |(sa, sb), (a, b)| (sa + a, sb + b));
    let (ma, mb) = (ma / m, mb / m);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateSeries(
            "zero variance on the jointly observed entries".into(),
        ));
    }
    let corr = sab / (saa * sbb).sqrt();
    Ok((1.0 - corr.abs()).clamp(0.0, 1.0))
}

/// Symmetric matrix of pairwise distances in `[0, 1]` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates and wraps a row-major `n x n` matrix.
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::domain(format!("distance matrix needs {} entries, got {}", n * n, d.len())));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::domain(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::domain(format!("distance d[{i}][{j}] = {v} outside [0, 1]")));
                }
                if v != d[j * n + i] {
                    return Err(Error::domain(format!("asymmetric distances at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, d })
    }

    /// Evaluates `f(i, j)` on the upper triangle (in parallel) and mirrors
    /// it. Results are clamped to `[0, 1]`.
    pub fn from_fn<F>(n: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Result<f64> + Sync,
    {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        let vals = pairs
            .par_iter()
            .map(|&(i, j)| f(i, j).map(|v| v.clamp(0.0, 1.0)))
            .collect::<Result<Vec<f64>>>()?;
        let mut d = vec![0.0; n * n];
        for (&(i, j), v) in pairs.iter().zip(vals) {
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
        Ok(DistanceMatrix { n, d })
    }

    /// Correlation distances between the columns of `x` (rows are dates,
    /// `NaN` marks missing entries).
    pub fn from_columns(x: ArrayView2<f64>) -> Result<Self> {
        Self::from_fn(x.ncols(), |i, j| corr_distance(x.column(i), x.column(j)))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Sub-matrix on the given points, in the given order.
    pub fn subset(&self, idx: &[usize]) -> DistanceMatrix {
        let m = idx.len();
        let mut d = Vec::with_capacity(m * m);
        for &i in idx {
            for &j in idx {
                d.push(self.get(i, j));
            }
        }
        DistanceMatrix { n: m, d }
    }
}

/// Minimax radius of `members` and its prototype (smallest index on ties).
pub fn minimax_radius(d: &DistanceMatrix, members: &[usize]) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for &x in members {
        let r = members.iter().map(|&y| d.get(x, y)).fold(0.0, f64::max);
        if r < best.0 || (r == best.0 && x < best.1) {
            best = (r, x);
        }
    }
    best
}

/// Number of principal components needed to explain at least `threshold`
/// of the total variance of the columns of `x`.
///
/// Columns are centered internally. Missing entries (`NaN`) are handled by
/// pairwise-complete covariances; tiny negative eigenvalues that this can
/// produce are treated as zero.
pub fn pca_dim(x: ArrayView2<f64>, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::domain(format!("PCA threshold must lie in (0, 1], got {threshold}")));
    }
    let p = x.ncols();
    if p < 2 {
        return Err(Error::domain("pca_dim needs at least two columns"));
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let c = pairwise_cov(x.column(i), x.column(j));
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSeries("all columns have zero variance".into()));
    }
    // Relative slack so that exactly-tied spectra (e.g. 8 of 10 equal
    // eigenvalues at threshold 0.8) are not lost to round-off.
    let target = threshold * total * (1.0 - 1e-10);
    let mut cum = 0.0;
    for (k, v) in eig.iter().enumerate() {
        cum += v;
        if cum >= target {
            return Ok(k + 1);
        }
    }
    Ok(p)
}

fn pairwise_cov(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b.iter())
        .filter(|(u, v)| u.is_finite() && v.is_finite())
        .map(|(u, v)| (*u, *v))
        .collect();
    if pairs.len() < 2 {
        return 0.0;
    }
    let m = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / m;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / m;
    pairs.iter().map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / (m - 1.0)
}

/// One agglomeration step. Leaves are nodes `0..n`; the `i`-th merge creates
/// node `n + i`. `left` is the child containing the smaller leaf index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub prototype: usize,
}

/// Merge tree from minimax-linkage clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

/// A cluster obtained by cutting a dendrogram.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    /// Sorted leaf indices.
    pub members: Vec<usize>,
    pub prototype: usize,
}

impl Dendrogram {
    /// Leaves under `node`, sorted.
    pub fn members(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v < self.n_leaves {
                out.push(v);
            } else {
                let m = &self.merges[v - self.n_leaves];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out.sort_unstable();
        out
    }

    /// Splits the leaves into exactly `k` clusters by undoing the last
    /// `k - 1` merges. Clusters are ordered by their smallest member.
    pub fn cut(&self, k: usize) -> Result<Vec<Cluster>> {
        let n = self.n_leaves;
        if k == 0 || k > n {
            return Err(Error::domain(format!("cut needs 1 <= k <= {n}, got {k}")));
        }
        // Roots after applying the first n - k merges.
        let applied = n - k;
        let mut is_root = vec![true; n + applied];
        for m in &self.merges[..applied] {
            is_root[m.left] = false;
            is_root[m.right] = false;
        }
        let mut clusters: Vec<Cluster> = (0..n + applied)
            .filter(|&v| is_root[v])
            .map(|v| Cluster {
                members: self.members(v),
                prototype: if v < n { v } else { self.merges[v - n].prototype },
            })
            .collect();
        clusters.sort_by_key(|c| c.members[0]);
        Ok(clusters)
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }
}

#[derive(Clone, Copy)]
struct Link {
    height: f64,
    prototype: usize,
}

/// Sort key of a candidate merge.
#[derive(Clone, Copy, PartialEq)]
struct PairKey {
    height: f64,
    lo: usize,
    hi: usize,
}

impl PairKey {
    fn cmp(&self, other: &PairKey) -> Ordering {
        self.height
            .total_cmp(&other.height)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

struct Agglomeration {
    n: usize,
    active: Vec<bool>,
    members: Vec<Vec<usize>>,
    node: Vec<usize>,
    min_leaf: Vec<usize>,
    /// `dmax[x * n + s]`: distance from point `x` to the farthest member of
    /// the cluster in slot `s`.
    dmax: Vec<f64>,
    link: Vec<Link>,
    /// Best partner of each active slot.
    nearest: Vec<Option<usize>>,
}

impl Agglomeration {
    fn new(d: &DistanceMatrix) -> Self {
        let n = d.len();
        let mut link = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                link.push(Link {
                    height: d.get(a, b),
                    prototype: a.min(b),
                });
            }
        }
        let mut s = Agglomeration {
            n,
            active: vec![true; n],
            members: (0..n).map(|i| vec![i]).collect(),
            node: (0..n).collect(),
            min_leaf: (0..n).collect(),
            dmax: d.d.clone(),
            link,
            nearest: vec![None; n],
        };
        for a in 0..n {
            s.refresh_nearest(a);
        }
        s
    }

    fn key(&self, a: usize, b: usize) -> PairKey {
        let (la, lb) = (self.min_leaf[a], self.min_leaf[b]);
        PairKey {
            height: self.link[a * self.n + b].height,
            lo: la.min(lb),
            hi: la.max(lb),
        }
    }

    fn refresh_nearest(&mut self, a: usize) {
        let mut best: Option<(PairKey, usize)> = None;
        for b in 0..self.n {
            if b == a || !self.active[b] {
                continue;
            }
            let k = self.key(a, b);
            if best.map_or(true, |(bk, _)| k.cmp(&bk) == Ordering::Less) {
                best = Some((k, b));
            }
        }
        self.nearest[a] = best.map(|(_, b)| b);
    }

    /// `r(C_a ∪ C_b)` and its prototype from the cached farthest distances.
    fn linkage(&self, a: usize, b: usize) -> Link {
        let n = self.n;
        let mut best = Link {
            height: f64::INFINITY,
            prototype: usize::MAX,
        };
        for &x in self.members[a].iter().chain(&self.members[b]) {
            let r = self.dmax[x * n + a].max(self.dmax[x * n + b]);
            if r < best.height || (r == best.height && x < best.prototype) {
                best = Link {
                    height: r,
                    prototype: x,
                };
            }
        }
        best
    }

    fn step(&mut self, index: usize) -> Merge {
        let n = self.n;
        let mut best: Option<(PairKey, usize, usize)> = None;
        for a in 0..n {
            if !self.active[a] {
                continue;
            }
            if let Some(b) = self.nearest[a] {
                let k = self.key(a, b);
                if best.map_or(true, |(bk, _, _)| k.cmp(&bk) == Ordering::Less) {
                    best = Some((k, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two active clusters");
        let (keep, gone) = if self.min_leaf[a] < self.min_leaf[b] { (a, b) } else { (b, a) };
        let l = self.link[keep * n + gone];
        let merge = Merge {
            left: self.node[keep],
            right: self.node[gone],
            height: l.height,
            prototype: l.prototype,
        };

        let moved = std::mem::take(&mut self.members[gone]);
        self.members[keep].extend(moved);
        self.node[keep] = n + index;
        self.active[gone] = false;
        for x in 0..n {
            let v = self.dmax[x * n + gone];
            let cell = &mut self.dmax[x * n + keep];
            if v > *cell {
                *cell = v;
            }
        }
        for c in 0..n {
            if c != keep && self.active[c] {
                let l = self.linkage(keep, c);
                self.link[keep * n + c] = l;
                self.link[c * n + keep] = l;
            }
        }
        for s in 0..n {
            if !self.active[s] {
                continue;
            }
            match self.nearest[s] {
                _ if s == keep => self.refresh_nearest(s),
                Some(t) if t == keep || t == gone => self.refresh_nearest(s),
                Some(t) => {
                    if self.key(s, keep).cmp(&self.key(s, t)) == Ordering::Less {
                        self.nearest[s] = Some(keep);
                    }
                }
                None => self.refresh_nearest(s),
            }
        }
        merge
    }
}

/// Agglomerative clustering with minimax linkage.
pub fn minimax_cluster(d: &DistanceMatrix) -> Result<Dendrogram> {
    let n = d.len();
    if n < 2 {
        return Err(Error::domain("minimax_cluster needs at least two points"));
    }
    let mut state = Agglomeration::new(d);
    let merges = (0..n - 1).map(|i| state.step(i)).collect();
    Ok(Dendrogram {
        n_leaves: n,
        merges,
    })
}
