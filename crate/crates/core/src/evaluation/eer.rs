use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Equal error rate over `(score, is_target)` pairs.
///
/// Operating points sit at every unique score plus one above the maximum;
/// FRR(t) counts targets below t and FAR(t) nontargets at or above t. The
/// EER interpolates linearly between the two points where FAR - FRR changes
/// sign. When every score is identical the crossing lies between the
/// all-accept and all-reject points.
pub fn compute_eer(scores: &[(f64, bool)]) -> Result<EerResult> {
    let n_target = scores.iter().filter(|s| s.1).count();
    let n_nontarget = scores.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::invalid("EER needs at least one target and one nontarget score"));
    }
    if let Some(s) = scores.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {}", s.0)));
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // (threshold, far, frr) at each unique score, walking upwards
    let mut points = Vec::new();
    let (mut tgt_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push((
            t,
            (n_nontarget - non_below) as f64 / n_nontarget as f64,
            tgt_below as f64 / n_target as f64,
        ));
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tgt_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push((sorted[sorted.len() - 1].0.next_up(), 0.0, 1.0));
    let k = points
        .iter()
        .position(|&(_, far, frr)| far - frr <= 0.0)
        .expect("the last point always has FAR < FRR");
    let (t1, far1, frr1) = points[k];
    let d1 = far1 - frr1;
    if d1 == 0.0 || k == 0 {
        return Ok(EerResult { eer: far1, threshold: t1, n_target, n_nontarget });
    }
    let (t0, far0, frr0) = points[k - 1];
    let d0 = far0 - frr0;
    let a = d0 / (d0 - d1);
    Ok(EerResult {
        eer: far0 + a * (far1 - far0),
        threshold: t0 + a * (t1 - t0),
        n_target,
        n_nontarget,
    })
}
