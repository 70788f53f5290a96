//! Tagged parameter storage shared by the network, the optimiser, and
//! checkpoints.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;

pub const EXTRACTOR: &str = "extractor";
pub const LAST_LINEAR: &str = "extractor/last_linear";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
        }
    }
}

/// One learnable tensor. Biases are stored as `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    /// Owning component: `"extractor"` or a task name.
    pub owner: String,
    /// Layer group, e.g. `"extractor/frame2"` or `"speaker/output"`.
    pub group: String,
    pub kind: ParamKind,
    pub value: Array2<F>,
}

impl<F> Param<F> {
    /// Unique key, `"<group>/<weight|bias>"`.
    pub fn tag(&self) -> String {
        format!("{}/{}", self.group, self.kind.as_str())
    }

    pub fn is_extractor(&self) -> bool {
        self.owner == EXTRACTOR
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    params: Vec<Param<F>>,
}

/// Gradients share the parameter layout.
pub type Gradients<F> = ModelParams<F>;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Each layer group draws from its own stream, so adding or removing heads
/// never perturbs the initial values of other layers.
pub(crate) fn group_rng(seed: u64, group: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(group));
    rng
}

impl<F: Real> ModelParams<F> {
    pub(crate) fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Appends an affine layer `fan_in x fan_out`: weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero. Returns the weight index.
    pub(crate) fn push_affine(
        &mut self,
        owner: &str,
        group: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        seed: u64,
    ) -> usize {
        let mut rng = group_rng(seed, group);
        // unit-variance uniform, scaled by 1/sqrt(fan_in)
        let bound = 3f64.sqrt() / (fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            F::lit(rng.random_range(-bound..bound))
        });
        let idx = self.params.len();
        self.params.push(Param {
            owner: owner.to_string(),
            group: group.to_string(),
            kind: ParamKind::Weight,
            value: w,
        });
        if bias {
            self.params.push(Param {
                owner: owner.to_string(),
                group: group.to_string(),
                kind: ParamKind::Bias,
                value: Array2::zeros((1, fan_out)),
            });
        }
        idx
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    owner: p.owner.clone(),
                    group: p.group.clone(),
                    kind: p.kind,
                    value: Array2::zeros(p.value.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    owner: p.owner.clone(),
                    group: p.group.clone(),
                    kind: p.kind,
                    value: p.value.mapv(|v| G::lit(v.as_f64())),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<F>> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Param<F> {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param<F> {
        &mut self.params[index]
    }

    pub fn value(&self, index: usize) -> &Array2<F> {
        &self.params[index].value
    }

    pub(crate) fn value_mut(&mut self, index: usize) -> &mut Array2<F> {
        &mut self.params[index].value
    }

    pub fn find(&self, tag: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.tag() == tag)
    }

    pub fn tags(&self) -> Vec<String> {
        self.params.iter().map(Param::tag).collect()
    }

    /// Distinct layer groups in storage order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if out.last() != Some(&p.group) {
                out.push(p.group.clone());
            }
        }
        out
    }

    pub fn same_layout<G>(&self, other: &ModelParams<G>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.group == b.group && a.kind == b.kind && a.value.dim() == b.value.dim()
            })
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value += &b.value;
        }
    }

    pub fn scale(&mut self, k: F) {
        for p in &mut self.params {
            p.value.mapv_inplace(|v| v * k);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Replaces every parameter owned by `owner` with the same-tagged value
    /// from `src`. Tags missing from `src` or with mismatched shapes are
    /// reported.
    pub fn copy_owner_from(&mut self, src: &ModelParams<F>, owner: &str) -> Result<(), String> {
        for p in self.params.iter_mut().filter(|p| p.owner == owner) {
            let tag = p.tag();
            let s = src
                .find(&tag)
                .ok_or_else(|| format!("source has no parameter {tag:?}"))?;
            if s.value.dim() != p.value.dim() {
                return Err(format!(
                    "shape mismatch for {tag:?}: {:?} vs {:?}",
                    s.value.dim(),
                    p.value.dim()
                ));
            }
            p.value.assign(&s.value);
        }
        Ok(())
    }
}
