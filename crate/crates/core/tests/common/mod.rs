//! Independent reference implementations used by the acceptance suite. Each
//! one is written for obviousness, not speed.

#![allow(dead_code)]

use std::collections::BTreeSet;

/// EER by sweeping every candidate threshold and counting errors from
/// scratch at each one. Thresholds are the unique scores plus one above the
/// maximum; the crossing of FAR and FRR between adjacent thresholds is
/// located by linear interpolation.
pub fn eer_sweep(scores: &[(f64, bool)]) -> f64 {
    let nt = scores.iter().filter(|s| s.1).count() as f64;
    let nn = scores.iter().filter(|s| !s.1).count() as f64;
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let top = *thresholds.last().unwrap();
    thresholds.push(top + 1.0);
    let rates = |t: f64| {
        // accept when score >= t
        let fa = scores.iter().filter(|s| !s.1 && s.0 >= t).count() as f64 / nn;
        let fr = scores.iter().filter(|s| s.1 && s.0 < t).count() as f64 / nt;
        (fa, fr)
    };
    let curve: Vec<(f64, f64)> = thresholds.iter().map(|&t| rates(t)).collect();
    for w in curve.windows(2) {
        let (fa0, fr0) = w[0];
        let (fa1, fr1) = w[1];
        let d0 = fa0 - fr0;
        let d1 = fa1 - fr1;
        if d0 == 0.0 {
            return fa0;
        }
        if d0 > 0.0 && d1 <= 0.0 {
            let a = d0 / (d0 - d1);
            return fa0 + a * (fa1 - fa0);
        }
    }
    curve[0].0
}

/// A timeline as `(start_frame, end_frame, speaker)` on a 10 ms grid.
pub type FrameTimeline = Vec<(usize, usize, usize)>;

fn active(t: &FrameTimeline, f: usize) -> BTreeSet<usize> {
    t.iter().filter(|s| s.0 <= f && f < s.1).map(|s| s.2).collect()
}

/// Every injective partial map from `hyp` labels into `ref` labels.
fn mappings(hyp: &[usize], refs: &[usize]) -> Vec<Vec<(usize, usize)>> {
    if hyp.is_empty() {
        return vec![vec![]];
    }
    let (h, rest) = (hyp[0], &hyp[1..]);
    let mut out = Vec::new();
    for m in mappings(rest, refs) {
        out.push(m.clone());
        for &r in refs {
            if !m.iter().any(|p| p.1 == r) {
                let mut mm = m.clone();
                mm.push((h, r));
                out.push(mm);
            }
        }
    }
    out
}

/// DER in [0, inf) by frame counting under the best label mapping, with
/// only frames where some speaker of `scope` talks in the reference scored
/// when `scope` is given.
pub fn der_frames(reference: &FrameTimeline, hyp: &FrameTimeline, scope: Option<&BTreeSet<usize>>) -> f64 {
    let end = reference.iter().chain(hyp).map(|s| s.1).max().unwrap_or(0);
    let frames: Vec<(BTreeSet<usize>, BTreeSet<usize>)> = (0..end)
        .map(|f| (active(reference, f), active(hyp, f)))
        .filter(|(r, _)| scope.is_none_or(|s| r.iter().any(|x| s.contains(x))))
        .collect();
    let refs: Vec<usize> = reference.iter().map(|s| s.2).collect::<BTreeSet<_>>().into_iter().collect();
    let hyps: Vec<usize> = hyp.iter().map(|s| s.2).collect::<BTreeSet<_>>().into_iter().collect();
    let total: usize = frames.iter().map(|(r, _)| r.len()).sum();
    // correct time for every (hyp, ref) label pair, then every mapping
    let mut co = std::collections::BTreeMap::new();
    let mut worst = 0usize;
    for (r, h) in &frames {
        worst += r.len().max(h.len());
        for &hh in h {
            for &rr in r {
                *co.entry((hh, rr)).or_insert(0usize) += 1;
            }
        }
    }
    let mut best = f64::INFINITY;
    for m in mappings(&hyps, &refs) {
        let correct: usize = m.iter().map(|p| co.get(p).copied().unwrap_or(0)).sum();
        best = best.min((worst - correct) as f64);
    }
    best / total as f64
}

/// Average-linkage AHC by direct simulation: every step recomputes every
/// cluster-pair mean from the item similarities.
pub fn ahc_reference(sim: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = sim.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let mut s = 0.0;
                for &a in &clusters[i] {
                    for &b in &clusters[j] {
                        s += sim[a][b];
                    }
                }
                let avg = s / (clusters[i].len() * clusters[j].len()) as f64;
                if best.is_none_or(|b| avg > b.2) {
                    best = Some((i, j, avg));
                }
            }
        }
        let (i, j, _) = best.unwrap();
        let moved = clusters.remove(j);
        clusters[i].extend(moved);
        clusters[i].sort();
    }
    // clusters stay ordered by smallest item throughout
    let mut labels = vec![0; n];
    for (c, items) in clusters.iter().enumerate() {
        for &x in items {
            labels[x] = c;
        }
    }
    labels
}

/// True when two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Frames of `len` samples fitting in `n` samples at hop `hop`.
pub fn frames_brute(n: usize, len: usize, hop: usize) -> usize {
    let mut count = 0;
    let mut start = 0;
    while start + len <= n {
        count += 1;
        start += hop;
    }
    count
}

/// Cross entropy straight from the definition.
pub fn ce_reference(logits: &[f64], label: usize) -> f64 {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[label].exp() / z).ln()
}
