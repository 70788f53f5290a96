use std::collections::BTreeSet;

use ndarray::Array2;
use serde::Serialize;

use super::timeline::Timeline;
use crate::error::{Error, Result};

/// Which reference time is scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scope<'a> {
    All,
    /// Only instants where at least one of these speakers is talking in the
    /// reference.
    Unseen(&'a BTreeSet<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DerMode {
    All,
    Unseen,
}

impl Scope<'_> {
    pub fn mode(&self) -> DerMode {
        match self {
            Scope::All => DerMode::All,
            Scope::Unseen(_) => DerMode::Unseen,
        }
    }
}

/// Forgiveness rules; the defaults score everything.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DerConfig {
    /// Seconds ignored on either side of every reference boundary.
    pub collar: f64,
    /// Ignore instants where two or more reference speakers overlap.
    pub skip_overlap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerBreakdown {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub total_scored_time: f64,
    pub der: f64,
    pub mode: DerMode,
}

impl DerBreakdown {
    /// Pools several recordings by summing times.
    pub fn pooled(parts: &[DerBreakdown]) -> Result<DerBreakdown> {
        let first = parts.first().ok_or_else(|| Error::invalid("no recordings to pool"))?;
        if parts.iter().any(|p| p.mode != first.mode) {
            return Err(Error::invalid("cannot pool different DER modes"));
        }
        let sum = |f: fn(&DerBreakdown) -> f64| parts.iter().map(f).sum::<f64>();
        let (miss, fa, conf, total) = (sum(|p| p.miss), sum(|p| p.false_alarm), sum(|p| p.confusion), sum(|p| p.total_scored_time));
        Ok(DerBreakdown {
            miss,
            false_alarm: fa,
            confusion: conf,
            total_scored_time: total,
            der: (miss + fa + conf) / total,
            mode: first.mode,
        })
    }
}

/// Diarization error rate under the optimal one-to-one mapping between
/// reference and hypothesis speakers, computed exactly on the elementary
/// intervals between all segment boundaries.
pub fn compute_der(reference: &Timeline, hypothesis: &Timeline, scope: Scope<'_>, config: &DerConfig) -> Result<DerBreakdown> {
    if reference.rec_id != hypothesis.rec_id {
        return Err(Error::invalid(format!(
            "reference is {:?} but hypothesis is {:?}",
            reference.rec_id, hypothesis.rec_id
        )));
    }
    if !(config.collar >= 0.0) {
        return Err(Error::invalid("collar must be >= 0"));
    }
    let ref_spk: Vec<&str> = reference.speakers().into_iter().collect();
    let hyp_spk: Vec<&str> = hypothesis.speakers().into_iter().collect();
    let ref_idx = |s: &str| ref_spk.binary_search(&s).expect("known speaker");
    let hyp_idx = |s: &str| hyp_spk.binary_search(&s).expect("known speaker");
    let unseen: Vec<bool> = ref_spk
        .iter()
        .map(|s| matches!(scope, Scope::Unseen(set) if set.contains(*s)))
        .collect();

    let mut cuts: Vec<f64> = Vec::new();
    let mut ref_bounds: Vec<f64> = Vec::new();
    for s in reference.segments() {
        ref_bounds.extend([s.start, s.end]);
    }
    cuts.extend(&ref_bounds);
    for s in hypothesis.segments() {
        cuts.extend([s.start, s.end]);
    }
    if config.collar > 0.0 {
        for &b in &ref_bounds {
            cuts.extend([(b - config.collar).max(0.0), b + config.collar]);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    ref_bounds.sort_by(f64::total_cmp);

    let mut overlap = Array2::<f64>::zeros((ref_spk.len(), hyp_spk.len()));
    let (mut miss, mut fa, mut paired, mut total) = (0.0, 0.0, 0.0, 0.0);
    let (mut r_lo, mut h_lo) = (0usize, 0usize);
    let mut active_r = Vec::new();
    let mut active_h = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = b - a;
        if d <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        if config.collar > 0.0 {
            let k = ref_bounds.partition_point(|&x| x < mid);
            let near = |i: usize| ref_bounds.get(i).is_some_and(|&x| (x - mid).abs() < config.collar);
            if near(k) || (k > 0 && near(k - 1)) {
                continue;
            }
        }
        // segments are sorted by start; drop leading ones that have ended
        while r_lo < reference.segments().len() && reference.segments()[r_lo].end <= a {
            r_lo += 1;
        }
        while h_lo < hypothesis.segments().len() && hypothesis.segments()[h_lo].end <= a {
            h_lo += 1;
        }
        active_r.clear();
        active_h.clear();
        for s in reference.segments()[r_lo..].iter().take_while(|s| s.start < b) {
            if s.start <= mid && mid < s.end {
                active_r.push(ref_idx(&s.speaker));
            }
        }
        for s in hypothesis.segments()[h_lo..].iter().take_while(|s| s.start < b) {
            if s.start <= mid && mid < s.end {
                active_h.push(hyp_idx(&s.speaker));
            }
        }
        if config.skip_overlap && active_r.len() >= 2 {
            continue;
        }
        if matches!(scope, Scope::Unseen(_)) && !active_r.iter().any(|&r| unseen[r]) {
            continue;
        }
        let (nr, nh) = (active_r.len() as f64, active_h.len() as f64);
        total += d * nr;
        miss += d * (nr - nh).max(0.0);
        fa += d * (nh - nr).max(0.0);
        paired += d * nr.min(nh);
        for &r in &active_r {
            for &h in &active_h {
                overlap[(r, h)] += d;
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::data(format!("{}: no scored reference speech", reference.rec_id)));
    }
    let (_, correct) = optimal_mapping(&overlap);
    let confusion = (paired - correct).max(0.0);
    Ok(DerBreakdown {
        miss,
        false_alarm: fa,
        confusion,
        total_scored_time: total,
        der: (miss + fa + confusion) / total,
        mode: scope.mode(),
    })
}

/// Exhaustive search up to this many speakers per side.
const EXHAUSTIVE_LIMIT: usize = 8;

/// One-to-one assignment of rows to columns maximising the summed weight.
/// Returns the column for each row (if any) and the total.
pub fn optimal_mapping(weights: &Array2<f64>) -> (Vec<Option<usize>>, f64) {
    let (n, m) = weights.dim();
    if n == 0 || m == 0 {
        return (vec![None; n], 0.0);
    }
    if n.max(m) <= EXHAUSTIVE_LIMIT {
        exhaustive(weights)
    } else if n <= m {
        hungarian(weights)
    } else {
        let (cols, total) = hungarian(&weights.t().to_owned());
        let mut rows = vec![None; n];
        for (c, r) in cols.into_iter().enumerate() {
            if let Some(r) = r {
                rows[r] = Some(c);
            }
        }
        (rows, total)
    }
}

fn exhaustive(w: &Array2<f64>) -> (Vec<Option<usize>>, f64) {
    fn go(w: &Array2<f64>, row: usize, used: &mut [bool], cur: &mut Vec<Option<usize>>, acc: f64, best: &mut (Vec<Option<usize>>, f64)) {
        if row == w.nrows() {
            if acc > best.1 {
                *best = (cur.clone(), acc);
            }
            return;
        }
        cur.push(None);
        go(w, row + 1, used, cur, acc, best);
        cur.pop();
        for c in 0..w.ncols() {
            if !used[c] {
                used[c] = true;
                cur.push(Some(c));
                go(w, row + 1, used, cur, acc + w[(row, c)], best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut best = (vec![None; w.nrows()], 0.0);
    go(w, 0, &mut vec![false; w.ncols()], &mut Vec::new(), 0.0, &mut best);
    best
}

/// Shortest-augmenting-path Hungarian algorithm for `n <= m`, maximising.
fn hungarian(w: &Array2<f64>) -> (Vec<Option<usize>>, f64) {
    let (n, m) = w.dim();
    let cost = |i: usize, j: usize| -w[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![None; n];
    let mut total = 0.0;
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = Some(j - 1);
            total += w[(p[j] - 1, j - 1)];
        }
    }
    (rows, total)
}

#[cfg(test)]
pub(crate) fn tests_hungarian(w: &Array2<f64>) -> (Vec<Option<usize>>, f64) {
    hungarian(w)
}
