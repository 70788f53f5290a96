use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams, LAST_LINEAR};
use crate::real::Real;

/// Which parameters an update may touch, one flag per parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask(Vec<bool>);

impl TrainableMask {
    pub fn all<F: Real>(params: &ModelParams<F>) -> Self {
        Self(vec![true; params.len()])
    }

    /// Everything outside the extractor.
    pub fn heads_only<F: Real>(params: &ModelParams<F>) -> Self {
        Self(params.iter().map(|p| !p.is_extractor()).collect())
    }

    /// Heads plus the embedding affine.
    pub fn heads_and_last_linear<F: Real>(params: &ModelParams<F>) -> Self {
        Self(params.iter().map(|p| !p.is_extractor() || p.group == LAST_LINEAR).collect())
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.0[index]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Momentum SGD: `v <- momentum * v - lr * g; theta <- theta + v` on the
/// masked-in parameters. Nothing is modified if any gradient is non-finite.
pub fn sgd_step<F: Real>(
    params: &mut ModelParams<F>,
    velocity: &mut ModelParams<F>,
    grads: &Gradients<F>,
    lr: F,
    momentum: F,
    mask: &TrainableMask,
) -> Result<()> {
    if !params.same_layout(velocity) || !params.same_layout(grads) || mask.len() != params.len() {
        return Err(Error::invalid("parameter, velocity, gradient and mask layouts differ"));
    }
    if let Some(p) = grads.iter().enumerate().find(|(i, p)| mask.is_trainable(*i) && !p.value.iter().all(|v| v.is_finite())) {
        return Err(Error::Numerical(format!("non-finite gradient for {}", p.1.tag())));
    }
    for i in 0..params.len() {
        if !mask.is_trainable(i) {
            continue;
        }
        let v = velocity.value_mut(i);
        ndarray::Zip::from(&mut *v)
            .and(grads.value(i))
            .for_each(|v, &g| *v = momentum * *v - lr * g);
        *params.value_mut(i) += &*velocity.value(i);
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<F: Real>(grads: &mut Gradients<F>, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(F::lit(max_norm / norm));
    }
    norm
}
