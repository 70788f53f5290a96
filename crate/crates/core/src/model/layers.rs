//! Forward and backward primitives: TDNN splicing, statistics pooling,
//! Leaky ReLU, and the two head types.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::real::Real;

pub const VARIANCE_FLOOR: f64 = 1e-10;
pub const NORM_FLOOR: f64 = 1e-8;

/// Concatenates `h[t + c - c_min]` over the context offsets `c` for every
/// valid output frame `t`.
pub(crate) fn splice<F: Real>(h: ArrayView2<'_, F>, context: &[i32]) -> Array2<F> {
    let (t_in, d) = h.dim();
    let c0 = context[0];
    let span = (context[context.len() - 1] - c0) as usize;
    let t_out = t_in - span;
    if context.len() == 1 {
        return h.to_owned();
    }
    let mut out = Array2::zeros((t_out, d * context.len()));
    for (j, &c) in context.iter().enumerate() {
        let off = (c - c0) as usize;
        out.slice_mut(s![.., j * d..(j + 1) * d])
            .assign(&h.slice(s![off..off + t_out, ..]));
    }
    out
}

/// Adjoint of [`splice`].
pub(crate) fn unsplice<F: Real>(ds: ArrayView2<'_, F>, context: &[i32], t_in: usize) -> Array2<F> {
    let d = ds.ncols() / context.len();
    let t_out = ds.nrows();
    let c0 = context[0];
    let mut dh = Array2::zeros((t_in, d));
    for (j, &c) in context.iter().enumerate() {
        let off = (c - c0) as usize;
        let mut dst = dh.slice_mut(s![off..off + t_out, ..]);
        dst += &ds.slice(s![.., j * d..(j + 1) * d]);
    }
    dh
}

pub(crate) fn leaky_relu<F: Real>(z: &Array2<F>, slope: F) -> Array2<F> {
    z.mapv(|v| if v > F::zero() { v } else { v * slope })
}

/// `dz = dh * lrelu'(z)`, in place on `dh`.
pub(crate) fn leaky_relu_backward<F: Real>(dh: &mut Array2<F>, z: &Array2<F>, slope: F) {
    Zip::from(dh).and(z).for_each(|g, &v| {
        if v <= F::zero() {
            *g *= slope;
        }
    });
}

pub(crate) fn affine<F: Real>(x: ArrayView2<'_, F>, w: &Array2<F>, b: Option<&Array2<F>>) -> Array2<F> {
    let mut y = x.dot(w);
    if let Some(b) = b {
        y += &b.row(0);
    }
    y
}

/// Sums in sorted order so the result does not depend on input order.
fn order_free_sum<F: Real>(values: &mut [F]) -> F {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    values.iter().fold(F::zero(), |acc, &v| acc + v)
}

/// Per-dimension mean followed by per-dimension population standard
/// deviation (variance floored at 1e-10).
pub fn stats_pool<F: Real>(frames: ArrayView2<'_, F>) -> Result<Array1<F>> {
    Ok(stats_pool_parts(frames)?.0)
}

pub(crate) fn stats_pool_parts<F: Real>(frames: ArrayView2<'_, F>) -> Result<(Array1<F>, Vec<bool>)> {
    let (t, d) = frames.dim();
    if t == 0 {
        return Err(Error::invalid("statistics pooling over zero frames"));
    }
    let n = F::lit(t as f64);
    let mut scratch = Vec::with_capacity(t);
    let mut mean = Array1::zeros(d);
    let mut var = Array1::zeros(d);
    for (k, col) in frames.columns().into_iter().enumerate() {
        scratch.clear();
        scratch.extend(col.iter().copied());
        let m = order_free_sum(&mut scratch) / n;
        scratch.clear();
        scratch.extend(col.iter().map(|&v| (v - m) * (v - m)));
        mean[k] = m;
        var[k] = order_free_sum(&mut scratch) / n;
    }
    let floor = F::lit(VARIANCE_FLOOR);
    let active: Vec<bool> = var.iter().map(|&v| v > floor).collect();
    let std = var.mapv(|v| v.max(floor).sqrt());
    let mut out = Array1::zeros(2 * d);
    out.slice_mut(s![..d]).assign(&mean);
    out.slice_mut(s![d..]).assign(&std);
    Ok((out, active))
}

/// Gradient of [`stats_pool`] with respect to its input frames.
pub(crate) fn stats_pool_backward<F: Real>(
    frames: ArrayView2<'_, F>,
    pooled: ArrayView1<'_, F>,
    active: &[bool],
    d_pooled: ArrayView1<'_, F>,
) -> Array2<F> {
    let (t, d) = frames.dim();
    let n = F::lit(t as f64);
    let mean = pooled.slice(s![..d]);
    let std = pooled.slice(s![d..]);
    let d_mean = d_pooled.slice(s![..d]);
    let d_std = d_pooled.slice(s![d..]);
    let mut coef = Array1::zeros(d);
    for k in 0..d {
        if active[k] {
            coef[k] = d_std[k] / (n * std[k]);
        }
    }
    let base = d_mean.mapv(|g| g / n);
    let mut out = &frames - &mean;
    out *= &coef;
    out += &base;
    out
}

/// Rows of `x` divided by `max(||row||, 1e-8)`; also returns the used norms.
pub(crate) fn normalize_rows<F: Real>(x: ArrayView2<'_, F>) -> (Array2<F>, Array1<F>) {
    let floor = F::lit(NORM_FLOOR);
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(floor));
    let mut out = x.to_owned();
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    (out, norms)
}

/// Backward of [`normalize_rows`] given the normalised rows `u` and norms.
pub(crate) fn normalize_rows_backward<F: Real>(
    u: ArrayView2<'_, F>,
    norms: ArrayView1<'_, F>,
    du: ArrayView2<'_, F>,
) -> Array2<F> {
    let floor = F::lit(NORM_FLOOR);
    let mut dx = du.to_owned();
    for ((mut g, ur), &n) in dx.rows_mut().into_iter().zip(u.rows()).zip(norms.iter()) {
        if n > floor {
            let proj = ur.dot(&g);
            Zip::from(&mut g).and(&ur).for_each(|gi, &ui| *gi = (*gi - ui * proj) / n);
        } else {
            g.mapv_inplace(|v| v / n);
        }
    }
    dx
}

/// `logits = A3(lrelu(A2(lrelu(A1(emb)))))` for each embedding row.
pub fn mlp_head_forward<F: Real>(
    weights: [&Array2<F>; 3],
    biases: [&Array2<F>; 3],
    emb: ArrayView2<'_, F>,
    slope: F,
) -> Result<Array2<F>> {
    if emb.ncols() != weights[0].nrows() {
        return Err(Error::invalid(format!(
            "embedding dim {} does not match head input {}",
            emb.ncols(),
            weights[0].nrows()
        )));
    }
    let h1 = leaky_relu(&affine(emb, weights[0], Some(biases[0])), slope);
    let h2 = leaky_relu(&affine(h1.view(), weights[1], Some(biases[1])), slope);
    Ok(affine(h2.view(), weights[2], Some(biases[2])))
}

/// Cosine between each embedding row and each class column of `weight`
/// (`emb_dim x n_classes`), both normalised with a 1e-8 norm floor.
pub fn cosine_matrix<F: Real>(weight: &Array2<F>, emb: ArrayView2<'_, F>) -> Result<Array2<F>> {
    if emb.ncols() != weight.nrows() {
        return Err(Error::invalid(format!(
            "embedding dim {} does not match head input {}",
            emb.ncols(),
            weight.nrows()
        )));
    }
    let (e_hat, _) = normalize_rows(emb);
    let (w_hat, _) = normalize_rows(weight.t());
    let cos = e_hat.dot(&w_hat.t());
    Ok(cos.mapv(|c| c.max(-F::one()).min(F::one())))
}

/// `s * (cos_j - m [j == label])`; rows without a label get no margin
/// (inference form).
pub fn cosface_logits<F: Real>(
    weight: &Array2<F>,
    emb: ArrayView2<'_, F>,
    labels: Option<&[Option<usize>]>,
    margin: F,
    scale: F,
) -> Result<Array2<F>> {
    let cos = cosine_matrix(weight, emb)?;
    apply_margin(cos, labels, margin, scale)
}

pub(crate) fn apply_margin<F: Real>(
    mut cos: Array2<F>,
    labels: Option<&[Option<usize>]>,
    margin: F,
    scale: F,
) -> Result<Array2<F>> {
    let k = cos.ncols();
    if let Some(labels) = labels {
        if labels.len() != cos.nrows() {
            return Err(Error::invalid("label count does not match batch size"));
        }
        for (i, l) in labels.iter().enumerate() {
            if let Some(y) = *l {
                if y >= k {
                    return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
                }
                cos[(i, y)] -= margin;
            }
        }
    }
    cos *= scale;
    Ok(cos)
}
