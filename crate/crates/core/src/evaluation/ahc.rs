use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::NORM_FLOOR;
use crate::real::Real;

const SYMMETRY_TOL: f64 = 1e-6;

/// Symmetric pairwise similarities in [-1, 1] with a unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Array2<f64>);

impl SimilarityMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        let (n, c) = m.dim();
        if n != c {
            return Err(Error::invalid(format!("similarity matrix is {n}x{c}")));
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::invalid(format!("diagonal entry {i} is {}", m[(i, i)])));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if !(v.abs() <= 1.0 + SYMMETRY_TOL) || (v - m[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!("entry ({i}, {j}) = {v} is out of range or asymmetric")));
                }
            }
        }
        Ok(Self(m))
    }

    /// Cosine similarities between the rows of `embeddings`.
    pub fn cosine<F: Real>(embeddings: ArrayView2<'_, F>) -> Result<Self> {
        let e = embeddings.mapv(|v| v.as_f64());
        let mut unit = e.clone();
        for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm < NORM_FLOOR {
                return Err(Error::invalid(format!("embedding {i} has zero norm")));
            }
            row /= norm;
        }
        let mut s = unit.dot(&unit.t()).mapv(|v| v.clamp(-1.0, 1.0));
        for i in 0..s.nrows() {
            s[(i, i)] = 1.0;
            for j in 0..i {
                s[(i, j)] = s[(j, i)];
            }
        }
        Ok(Self(s))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Average-linkage agglomerative clustering down to `k` clusters.
///
/// Clusters are identified by their smallest item; the pair with the highest
/// mean pairwise similarity merges first, ties going to the lowest `(i, j)`.
/// Labels are `0..k` in order of each cluster's smallest item.
pub fn ahc_cluster(sim: &SimilarityMatrix, k: usize) -> Result<Vec<usize>> {
    let n = sim.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} items")));
    }
    // sums[i][j]: total similarity between clusters i and j (ids = smallest item)
    let mut sums = sim.as_array().clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let avg = |sums: &Array2<f64>, size: &[usize], i: usize, j: usize| sums[(i, j)] / (size[i] * size[j]) as f64;
    // best partner j > i for every active i
    let best_of = |sums: &Array2<f64>, size: &[usize], active: &[bool], i: usize| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in i + 1..n {
            if active[j] {
                let a = avg(sums, size, i, j);
                if best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
        }
        best
    };
    let mut cache: Vec<Option<(usize, f64)>> = (0..n).map(|i| best_of(&sums, &size, &active, i)).collect();
    for _ in 0..n - k {
        let mut pick: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if let (true, Some((j, a))) = (active[i], cache[i]) {
                if pick.is_none_or(|(_, _, b)| a > b) {
                    pick = Some((i, j, a));
                }
            }
        }
        let (a, b, _) = pick.expect("more than k clusters remain");
        active[b] = false;
        size[a] += size[b];
        for c in 0..n {
            if active[c] && c != a {
                let v = sums[(a, c)] + sums[(b, c)];
                sums[(a, c)] = v;
                sums[(c, a)] = v;
            }
        }
        for o in owner.iter_mut().filter(|o| **o == b) {
            *o = a;
        }
        cache[b] = None;
        cache[a] = best_of(&sums, &size, &active, a);
        for c in 0..a {
            if !active[c] {
                continue;
            }
            match cache[c] {
                Some((j, _)) if j == a || j == b => cache[c] = best_of(&sums, &size, &active, c),
                Some((j, best)) => {
                    let v = avg(&sums, &size, c, a);
                    if v > best || (v == best && a < j) {
                        cache[c] = Some((a, v));
                    }
                }
                None => cache[c] = best_of(&sums, &size, &active, c),
            }
        }
        for c in a + 1..b {
            if active[c] && cache[c].is_some_and(|(j, _)| j == b) {
                cache[c] = best_of(&sums, &size, &active, c);
            }
        }
    }
    let mut label_of = vec![usize::MAX; n];
    let mut next = 0;
    Ok(owner
        .iter()
        .map(|&o| {
            if label_of[o] == usize::MAX {
                label_of[o] = next;
                next += 1;
            }
            label_of[o]
        })
        .collect())
}
