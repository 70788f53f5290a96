use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::config::{HeadKind, ModelConfig, TaskHeadSpec};
use super::layers::{
    affine, apply_margin, cosine_matrix, leaky_relu, leaky_relu_backward, normalize_rows,
    normalize_rows_backward, splice, stats_pool_backward, stats_pool_parts, unsplice,
};
use super::params::{Gradients, ModelParams, EXTRACTOR, LAST_LINEAR};
use crate::error::{Error, Result};
use crate::real::Real;

/// Utterance-level speaker representation taken at the embedding affine
/// output, before any nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<F>(pub Array1<F>);

impl<F: Real> Embedding<F> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn view(&self) -> ArrayView1<'_, F> {
        self.0.view()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.as_f64()).collect()
    }
}

#[derive(Debug, Clone)]
enum HeadLayout {
    /// Weight indices of the three affines; biases follow each weight.
    Mlp([usize; 3]),
    CosFace(usize),
}

#[derive(Debug, Clone)]
struct Layout {
    frames: Vec<usize>,
    last: usize,
    heads: Vec<HeadLayout>,
}

/// Intermediate values of one utterance's extractor pass.
pub(crate) struct ExtractorCache<F> {
    spliced: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
    last_out: Array2<F>,
    pooled: Array1<F>,
    pool_active: Vec<bool>,
    pub(crate) embedding: Array1<F>,
}

/// Head activations kept for the backward pass.
pub(crate) enum HeadCache<F> {
    Mlp {
        z1: Array2<F>,
        h1: Array2<F>,
        z2: Array2<F>,
        h2: Array2<F>,
    },
    CosFace {
        e_hat: Array2<F>,
        e_norm: Array1<F>,
        w_hat: Array2<F>,
        w_norm: Array1<F>,
        cos: Array2<F>,
    },
}

/// Number of fixed partitions the batch is split into for gradient
/// accumulation. Independent of the thread count so sums are reproducible.
const GRAD_PARTITIONS: usize = 8;

#[derive(Debug, Clone)]
pub struct SpeakerNet<F> {
    config: ModelConfig,
    params: ModelParams<F>,
    layout: Layout,
}

fn head_group(task: &str, layer: &str) -> String {
    format!("{task}/{layer}")
}

fn build_params<F: Real>(config: &ModelConfig, seed: u64) -> (ModelParams<F>, Layout) {
    let ex = &config.extractor;
    let mut p = ModelParams::new();
    let mut frames = Vec::new();
    let mut din = ex.input_dim;
    for (i, l) in ex.frame_layers.iter().enumerate() {
        let fan_in = din * l.context.len();
        frames.push(p.push_affine(EXTRACTOR, &format!("extractor/frame{i}"), fan_in, l.dim, true, seed));
        din = l.dim;
    }
    let last = p.push_affine(EXTRACTOR, LAST_LINEAR, ex.pooled_dim(), ex.embedding_dim, true, seed);
    let mut heads = Vec::new();
    for h in &config.heads {
        heads.push(push_head(&mut p, h, ex.embedding_dim, seed));
    }
    (p, Layout { frames, last, heads })
}

fn push_head<F: Real>(p: &mut ModelParams<F>, h: &TaskHeadSpec, emb_dim: usize, seed: u64) -> HeadLayout {
    let t = h.task_name.as_str();
    match h.kind {
        HeadKind::MlpCe => {
            let hd = h.hidden_dim;
            HeadLayout::Mlp([
                p.push_affine(t, &head_group(t, "hidden0"), emb_dim, hd, true, seed),
                p.push_affine(t, &head_group(t, "hidden1"), hd, hd, true, seed),
                p.push_affine(t, &head_group(t, "output"), hd, h.n_classes, true, seed),
            ])
        }
        HeadKind::CosFace => {
            HeadLayout::CosFace(p.push_affine(t, &head_group(t, "cosface"), emb_dim, h.n_classes, false, seed))
        }
    }
}

impl<F: Real> SpeakerNet<F> {
    /// Freshly initialised network. Each layer group is seeded independently
    /// from `seed` and its tag.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build_params(&config, seed);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Wraps existing parameters, checking they match the layout `config`
    /// implies.
    pub fn from_params(config: ModelConfig, params: ModelParams<F>) -> Result<Self> {
        config.validate()?;
        let (template, layout) = build_params::<F>(&config, 0);
        if !template.same_layout(&params) {
            return Err(Error::data("parameter layout does not match the model config"));
        }
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<F> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<F> {
        self.params
    }

    pub fn cast<G: Real>(&self) -> SpeakerNet<G> {
        SpeakerNet {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn min_frames(&self) -> usize {
        self.config.extractor.min_frames()
    }

    pub fn num_heads(&self) -> usize {
        self.config.heads.len()
    }

    pub fn head_index(&self, task: &str) -> Option<usize> {
        self.config.heads.iter().position(|h| h.task_name == task)
    }

    fn slope(&self) -> F {
        F::lit(self.config.extractor.leaky_slope)
    }

    fn check_input(&self, x: ArrayView2<'_, F>) -> Result<()> {
        let ex = &self.config.extractor;
        if x.ncols() != ex.input_dim {
            return Err(Error::invalid(format!(
                "feature dim {} does not match model input_dim {}",
                x.ncols(),
                ex.input_dim
            )));
        }
        if x.nrows() < ex.min_frames() {
            return Err(Error::invalid(format!(
                "{} frames is below the minimum context of {} frames",
                x.nrows(),
                ex.min_frames()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_extractor(&self, x: ArrayView2<'_, F>) -> Result<ExtractorCache<F>> {
        self.check_input(x)?;
        let slope = self.slope();
        let mut h = x.to_owned();
        let n = self.layout.frames.len();
        let mut spliced = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        for (l, layer) in self.config.extractor.frame_layers.iter().enumerate() {
            let wi = self.layout.frames[l];
            let sp = splice(h.view(), &layer.context);
            let z = affine(sp.view(), self.params.value(wi), Some(self.params.value(wi + 1)));
            h = leaky_relu(&z, slope);
            spliced.push(sp);
            pre.push(z);
        }
        let (pooled, pool_active) = stats_pool_parts(h.view())?;
        let li = self.layout.last;
        let embedding = pooled.dot(self.params.value(li)) + &self.params.value(li + 1).row(0);
        Ok(ExtractorCache {
            spliced,
            pre,
            last_out: h,
            pooled,
            pool_active,
            embedding,
        })
    }

    /// Accumulates extractor gradients for one utterance into `grads`.
    pub(crate) fn backward_extractor(
        &self,
        cache: &ExtractorCache<F>,
        d_emb: ArrayView1<'_, F>,
        grads: &mut Gradients<F>,
    ) {
        let slope = self.slope();
        let li = self.layout.last;
        {
            let outer = cache
                .pooled
                .view()
                .insert_axis(Axis(1))
                .dot(&d_emb.insert_axis(Axis(0)));
            *grads.value_mut(li) += &outer;
            grads.value_mut(li + 1).row_mut(0).scaled_add(F::one(), &d_emb);
        }
        let d_pooled = self.params.value(li).dot(&d_emb);
        let mut dh = stats_pool_backward(
            cache.last_out.view(),
            cache.pooled.view(),
            &cache.pool_active,
            d_pooled.view(),
        );
        let layers = &self.config.extractor.frame_layers;
        for l in (0..layers.len()).rev() {
            let wi = self.layout.frames[l];
            leaky_relu_backward(&mut dh, &cache.pre[l], slope);
            let dz = dh;
            *grads.value_mut(wi) += &cache.spliced[l].t().dot(&dz);
            grads.value_mut(wi + 1).row_mut(0).scaled_add(F::one(), &dz.sum_axis(Axis(0)));
            if l == 0 {
                break;
            }
            let ds = dz.dot(&self.params.value(wi).t());
            dh = unsplice(ds.view(), &layers[l].context, cache.pre[l - 1].nrows());
        }
    }

    pub fn extract_embedding(&self, features: ArrayView2<'_, F>) -> Result<Embedding<F>> {
        Ok(Embedding(self.forward_extractor(features)?.embedding))
    }

    /// One embedding row per utterance.
    pub fn embed_batch(&self, features: &[ArrayView2<'_, F>]) -> Result<Array2<F>> {
        let rows: Vec<Array1<F>> = features
            .par_iter()
            .map(|x| self.extract_embedding(*x).map(|e| e.0))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.config.extractor.embedding_dim));
        for (mut dst, r) in out.rows_mut().into_iter().zip(&rows) {
            dst.assign(r);
        }
        Ok(out)
    }

    /// Head logits for a batch of embedding rows. With `labels`, cosface
    /// heads apply the training margin to labelled rows.
    pub fn head_logits(
        &self,
        head: usize,
        emb: ArrayView2<'_, F>,
        labels: Option<&[Option<usize>]>,
    ) -> Result<Array2<F>> {
        Ok(self.forward_head(head, emb, labels)?.0)
    }

    pub(crate) fn forward_head(
        &self,
        head: usize,
        emb: ArrayView2<'_, F>,
        labels: Option<&[Option<usize>]>,
    ) -> Result<(Array2<F>, HeadCache<F>)> {
        let spec = &self.config.heads[head];
        let slope = self.slope();
        match self.layout.heads[head] {
            HeadLayout::Mlp(w) => {
                let p = &self.params;
                let z1 = affine(emb, p.value(w[0]), Some(p.value(w[0] + 1)));
                let h1 = leaky_relu(&z1, slope);
                let z2 = affine(h1.view(), p.value(w[1]), Some(p.value(w[1] + 1)));
                let h2 = leaky_relu(&z2, slope);
                let logits = affine(h2.view(), p.value(w[2]), Some(p.value(w[2] + 1)));
                Ok((logits, HeadCache::Mlp { z1, h1, z2, h2 }))
            }
            HeadLayout::CosFace(w) => {
                let weight = self.params.value(w);
                // validates dims
                cosine_matrix(weight, emb)?;
                let (e_hat, e_norm) = normalize_rows(emb);
                let (w_hat, w_norm) = normalize_rows(weight.t());
                let cos = e_hat.dot(&w_hat.t());
                let logits = apply_margin(
                    cos.clone(),
                    labels,
                    F::lit(spec.margin),
                    F::lit(spec.scale),
                )?;
                Ok((
                    logits,
                    HeadCache::CosFace {
                        e_hat,
                        e_norm,
                        w_hat,
                        w_norm,
                        cos,
                    },
                ))
            }
        }
    }

    /// Backward through a head given `d_logits`; accumulates head parameter
    /// gradients and returns the gradient with respect to the embeddings.
    pub(crate) fn backward_head(
        &self,
        head: usize,
        emb: ArrayView2<'_, F>,
        cache: &HeadCache<F>,
        d_logits: ArrayView2<'_, F>,
        grads: &mut Gradients<F>,
    ) -> Array2<F> {
        let slope = self.slope();
        match (&self.layout.heads[head], cache) {
            (HeadLayout::Mlp(w), HeadCache::Mlp { z1, h1, z2, h2 }) => {
                let p = &self.params;
                *grads.value_mut(w[2]) += &h2.t().dot(&d_logits);
                grads.value_mut(w[2] + 1).row_mut(0).scaled_add(F::one(), &d_logits.sum_axis(Axis(0)));
                let mut d2 = d_logits.dot(&p.value(w[2]).t());
                leaky_relu_backward(&mut d2, z2, slope);
                *grads.value_mut(w[1]) += &h1.t().dot(&d2);
                grads.value_mut(w[1] + 1).row_mut(0).scaled_add(F::one(), &d2.sum_axis(Axis(0)));
                let mut d1 = d2.dot(&p.value(w[1]).t());
                leaky_relu_backward(&mut d1, z1, slope);
                *grads.value_mut(w[0]) += &emb.t().dot(&d1);
                grads.value_mut(w[0] + 1).row_mut(0).scaled_add(F::one(), &d1.sum_axis(Axis(0)));
                d1.dot(&p.value(w[0]).t())
            }
            (
                HeadLayout::CosFace(w),
                HeadCache::CosFace {
                    e_hat,
                    e_norm,
                    w_hat,
                    w_norm,
                    ..
                },
            ) => {
                let scale = F::lit(self.config.heads[head].scale);
                let d_cos = d_logits.mapv(|g| g * scale);
                let d_e_hat = d_cos.dot(w_hat);
                let d_w_hat = d_cos.t().dot(e_hat);
                let d_w = normalize_rows_backward(w_hat.view(), w_norm.view(), d_w_hat.view());
                *grads.value_mut(*w) += &d_w.t();
                normalize_rows_backward(e_hat.view(), e_norm.view(), d_e_hat.view())
            }
            _ => unreachable!("head cache does not match layout"),
        }
    }

    /// Runs the extractor on every utterance, returning embeddings and caches.
    pub(crate) fn forward_batch(
        &self,
        features: &[ArrayView2<'_, F>],
    ) -> Result<(Array2<F>, Vec<ExtractorCache<F>>)> {
        let caches: Vec<ExtractorCache<F>> = features
            .par_iter()
            .map(|x| self.forward_extractor(*x))
            .collect::<Result<_>>()?;
        let mut emb = Array2::zeros((caches.len(), self.config.extractor.embedding_dim));
        for (mut row, c) in emb.rows_mut().into_iter().zip(&caches) {
            row.assign(&c.embedding);
        }
        Ok((emb, caches))
    }

    /// Backpropagates `d_emb` (one row per utterance) into the extractor.
    /// The batch is split into fixed partitions whose partial sums are added
    /// in order, so the result is independent of scheduling.
    pub(crate) fn backward_batch(
        &self,
        caches: &[ExtractorCache<F>],
        d_emb: ArrayView2<'_, F>,
        grads: &mut Gradients<F>,
    ) {
        let n = caches.len();
        if n == 0 {
            return;
        }
        let chunk = n.div_ceil(GRAD_PARTITIONS);
        let partials: Vec<Gradients<F>> = (0..n)
            .step_by(chunk)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let mut g = self.params.zeros_like();
                for i in start..(start + chunk).min(n) {
                    self.backward_extractor(&caches[i], d_emb.row(i), &mut g);
                }
                g
            })
            .collect();
        for p in &partials {
            grads.add_assign(p);
        }
    }

    /// Sign of every Leaky ReLU pre-activation and every variance-floor test
    /// for the given inputs. Two parameter settings with the same signature
    /// lie in the same differentiable region.
    pub fn activation_signature(&self, features: &[ArrayView2<'_, F>]) -> Result<Vec<bool>> {
        let (emb, caches) = self.forward_batch(features)?;
        let mut sig = Vec::new();
        for c in &caches {
            for z in &c.pre {
                sig.extend(z.iter().map(|&v| v > F::zero()));
            }
            sig.extend(c.pool_active.iter().copied());
        }
        for h in 0..self.num_heads() {
            if let (_, HeadCache::Mlp { z1, z2, .. }) = self.forward_head(h, emb.view(), None)? {
                sig.extend(z1.iter().chain(z2.iter()).map(|&v| v > F::zero()));
            }
        }
        Ok(sig)
    }

    /// Parameter indices of the embedding affine.
    pub fn last_linear_indices(&self) -> [usize; 2] {
        [self.layout.last, self.layout.last + 1]
    }

    /// Mean and standard deviation statistics feeding the embedding affine.
    pub fn pooled_statistics(&self, features: ArrayView2<'_, F>) -> Result<Array1<F>> {
        Ok(self.forward_extractor(features)?.pooled)
    }

    /// Drops all heads and attaches freshly initialised ones, keeping every
    /// extractor parameter.
    pub fn with_new_heads(&self, heads: Vec<TaskHeadSpec>, seed: u64) -> Result<Self> {
        let config = ModelConfig {
            extractor: self.config.extractor.clone(),
            heads,
        };
        let mut net = Self::new(config, seed)?;
        net.params
            .copy_owner_from(&self.params, EXTRACTOR)
            .map_err(Error::Data)?;
        Ok(net)
    }
}
