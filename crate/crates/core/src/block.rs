//! Single-head transformer block with adapter slots on every weight.
//!
//! ```text
//! q, k, v = x Wq, x Wk, x Wv
//! a   = softmax(q kᵀ / √d) v
//! h   = x + a Wo
//! out = h + silu(h Wd) Wu          silu(z) = z · σ(z)
//! ```
//!
//! `Wq, Wk, Wv, Wo` are `d×d`, `Wd` is `d×f` and `Wu` is `f×d`. Each weight
//! is frozen, adapted (HUT or LoRA), or replaced by a merged dense layer.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{Adapter, MergedLayer, Method, WeightAdapter};
use crate::error::{HutError, Result};
use crate::hut::HutAdapterState;
use crate::lora::LoraAdapterState;
use crate::tensor::{gaussian_with, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeightTarget {
    Wq,
    Wk,
    Wv,
    Wo,
    Wd,
    Wu,
}

impl WeightTarget {
    pub const ALL: [WeightTarget; 6] = [
        WeightTarget::Wq,
        WeightTarget::Wk,
        WeightTarget::Wv,
        WeightTarget::Wo,
        WeightTarget::Wd,
        WeightTarget::Wu,
    ];

    pub const ATTENTION: [WeightTarget; 4] = [
        WeightTarget::Wq,
        WeightTarget::Wk,
        WeightTarget::Wv,
        WeightTarget::Wo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightTarget::Wq => "Wq",
            WeightTarget::Wk => "Wk",
            WeightTarget::Wv => "Wv",
            WeightTarget::Wo => "Wo",
            WeightTarget::Wd => "Wd",
            WeightTarget::Wu => "Wu",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for WeightTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightTarget {
    type Err = HutError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let key = t
            .strip_prefix('W')
            .or_else(|| t.strip_prefix('w'))
            .unwrap_or(t)
            .trim_start_matches('_')
            .to_ascii_lowercase();
        match key.as_str() {
            "q" => Ok(WeightTarget::Wq),
            "k" => Ok(WeightTarget::Wk),
            "v" => Ok(WeightTarget::Wv),
            "o" => Ok(WeightTarget::Wo),
            "d" => Ok(WeightTarget::Wd),
            "u" => Ok(WeightTarget::Wu),
            _ => Err(HutError::InvalidArgument(format!(
                "unknown weight target '{s}', expected one of Wq,Wk,Wv,Wo,Wd,Wu"
            ))),
        }
    }
}

/// Parses a comma-separated target list (`"Wq,Wv"`), returning the set in
/// canonical order.
pub fn parse_targets(s: &str) -> Result<Vec<WeightTarget>> {
    let mut out = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(WeightTarget::from_str)
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(HutError::InvalidArgument("target list is empty".into()));
    }
    Ok(out)
}

pub fn format_targets(targets: &[WeightTarget]) -> String {
    targets
        .iter()
        .map(|t| t.name())
        .collect::<Vec<_>>()
        .join("+")
}

/// How to initialise an adapter when attaching it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterSpec {
    pub method: Method,
    pub rank: usize,
    /// HUT only: std of the Gaussian noise added to the all-ones `M_A`, `M_B`.
    pub noise_std: f64,
    /// LoRA only.
    pub lora_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Frozen(DenseMatrix),
    Adapted(Adapter),
    Merged(MergedLayer),
}

impl Slot {
    fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Slot::Frozen(w) => x.matmul(w),
            Slot::Adapted(a) => a.forward(x),
            Slot::Merged(m) => m.forward(x),
        }
    }

    fn backward(
        &self,
        x: &DenseMatrix,
        upstream: &DenseMatrix,
    ) -> Result<(Option<Vec<DenseMatrix>>, DenseMatrix)> {
        match self {
            Slot::Frozen(w) => Ok((None, upstream.matmul(&w.transpose())?)),
            Slot::Merged(m) => Ok((None, upstream.matmul(&m.weight.transpose())?)),
            Slot::Adapted(a) => {
                let (g, dx) = a.backward(x, upstream)?;
                Ok((Some(g.0), dx))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBlock {
    model_dim: usize,
    ffn_dim: usize,
    slots: [Slot; 6],
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    x: DenseMatrix,
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    probs: DenseMatrix,
    attn: DenseMatrix,
    hidden: DenseMatrix,
    pre_act: DenseMatrix,
    act: DenseMatrix,
    pub output: DenseMatrix,
}

impl BlockCache {
    pub fn attention_probs(&self) -> &DenseMatrix {
        &self.probs
    }
}

/// Adapter gradients, one entry per adapted target in canonical order.
#[derive(Debug, Clone)]
pub struct BlockGrads(pub Vec<(WeightTarget, Vec<DenseMatrix>)>);

impl BlockGrads {
    pub fn flatten(self) -> Vec<DenseMatrix> {
        self.0.into_iter().flat_map(|(_, g)| g).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

fn softmax_rows(s: &DenseMatrix) -> DenseMatrix {
    let mut out = s.clone();
    let cols = s.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

impl ToyBlock {
    pub fn from_weights(model_dim: usize, ffn_dim: usize, weights: [DenseMatrix; 6]) -> Result<Self> {
        for t in WeightTarget::ALL {
            let expected = Self::shape_of(model_dim, ffn_dim, t);
            if weights[t.index()].shape() != expected {
                return Err(HutError::Shape {
                    op: t.name(),
                    left: weights[t.index()].shape(),
                    right: expected,
                });
            }
        }
        Ok(ToyBlock {
            model_dim,
            ffn_dim,
            slots: weights.map(Slot::Frozen),
        })
    }

    /// Random block with `N(0, 1/fan_in)` weights.
    pub fn random(model_dim: usize, ffn_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(6);
        for t in WeightTarget::ALL {
            let (rows, cols) = Self::shape_of(model_dim, ffn_dim, t);
            weights.push(gaussian_with(rows, cols, 0.0, 1.0 / (rows as f64).sqrt(), &mut rng)?);
        }
        let weights: [DenseMatrix; 6] = weights.try_into().expect("six weights");
        Self::from_weights(model_dim, ffn_dim, weights)
    }

    fn shape_of(d: usize, f: usize, t: WeightTarget) -> (usize, usize) {
        match t {
            WeightTarget::Wd => (d, f),
            WeightTarget::Wu => (f, d),
            _ => (d, d),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_dim
    }

    pub fn slot(&self, target: WeightTarget) -> &Slot {
        &self.slots[target.index()]
    }

    /// The frozen pretrained weight behind a target (for merged slots, the
    /// merged weight).
    pub fn base_weight(&self, target: WeightTarget) -> &DenseMatrix {
        match &self.slots[target.index()] {
            Slot::Frozen(w) => w,
            Slot::Adapted(a) => a.base_weight(),
            Slot::Merged(m) => &m.weight,
        }
    }

    pub fn adapter(&self, target: WeightTarget) -> Option<&Adapter> {
        match &self.slots[target.index()] {
            Slot::Adapted(a) => Some(a),
            _ => None,
        }
    }

    pub fn adapter_mut(&mut self, target: WeightTarget) -> Option<&mut Adapter> {
        match &mut self.slots[target.index()] {
            Slot::Adapted(a) => Some(a),
            _ => None,
        }
    }

    pub fn adapted_targets(&self) -> Vec<WeightTarget> {
        WeightTarget::ALL
            .into_iter()
            .filter(|t| self.adapter(*t).is_some())
            .collect()
    }

    /// Attaches a fresh adapter to a frozen slot.
    pub fn attach(&mut self, target: WeightTarget, spec: &AdapterSpec) -> Result<()> {
        let slot = &mut self.slots[target.index()];
        let w0 = match slot {
            Slot::Frozen(w) => w.clone(),
            _ => {
                return Err(HutError::InvalidArgument(format!(
                    "{target} already carries an adapter or merged layer"
                )))
            }
        };
        let (d, k) = w0.shape();
        if spec.rank == 0 || spec.rank > d.min(k) {
            return Err(HutError::Rank {
                rank: spec.rank,
                rows: d,
                cols: k,
                target: Some(target.name()),
            });
        }
        let seed = spec.seed.wrapping_add(target.index() as u64);
        let adapter = match spec.method {
            Method::Hut => Adapter::Hut(HutAdapterState::init(w0, spec.rank, spec.noise_std, seed)?),
            Method::Lora => {
                Adapter::Lora(LoraAdapterState::init(w0, spec.rank, spec.lora_scale, seed)?)
            }
        };
        *slot = Slot::Adapted(adapter);
        Ok(())
    }

    pub fn attach_all(&mut self, targets: &[WeightTarget], spec: &AdapterSpec) -> Result<()> {
        if targets.is_empty() {
            return Err(HutError::InvalidArgument("no targets to adapt".into()));
        }
        for &t in targets {
            self.attach(t, spec)?;
        }
        Ok(())
    }

    /// Installs an existing adapter, e.g. one restored from a checkpoint.
    pub fn set_adapter(&mut self, target: WeightTarget, adapter: Adapter) -> Result<()> {
        let expected = self.base_weight(target);
        if adapter.base_weight() != expected {
            return Err(HutError::InvalidArgument(format!(
                "adapter for {target} does not wrap this block's base weight"
            )));
        }
        self.slots[target.index()] = Slot::Adapted(adapter);
        Ok(())
    }

    /// Drops every adapter, restoring the frozen weights.
    pub fn detach_all(&mut self) {
        for slot in &mut self.slots {
            if let Slot::Adapted(a) = slot {
                *slot = Slot::Frozen(a.base_weight().clone());
            }
        }
    }

    /// Replaces every adapter by its merged dense layer.
    pub fn merge_all(&mut self) -> Result<()> {
        for slot in &mut self.slots {
            if let Slot::Adapted(a) = slot {
                *slot = Slot::Merged(a.merge()?);
            }
        }
        Ok(())
    }

    pub fn num_trainable(&self) -> usize {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Adapted(a) => a.num_trainable(),
                _ => 0,
            })
            .sum()
    }

    /// Trainable tensors of all adapters in canonical target order.
    pub fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.slots
            .iter_mut()
            .flat_map(|s| match s {
                Slot::Adapted(a) => a.params_mut(),
                _ => Vec::new(),
            })
            .collect()
    }

    /// `(name, tensor)` pairs such as `("Wq.MA", ...)`.
    pub fn named_params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        for t in WeightTarget::ALL {
            if let Some(a) = self.adapter(t) {
                for (n, p) in a.params() {
                    out.push((format!("{t}.{n}"), p));
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &DenseMatrix) -> Result<BlockCache> {
        if x.cols() != self.model_dim {
            return Err(HutError::Shape {
                op: "block forward",
                left: x.shape(),
                right: (x.rows(), self.model_dim),
            });
        }
        let slot = |t: WeightTarget| &self.slots[t.index()];
        let q = slot(WeightTarget::Wq).forward(x)?;
        let k = slot(WeightTarget::Wk).forward(x)?;
        let v = slot(WeightTarget::Wv).forward(x)?;
        let scores = q
            .matmul(&k.transpose())?
            .scale(1.0 / (self.model_dim as f64).sqrt());
        let probs = softmax_rows(&scores);
        let attn = probs.matmul(&v)?;
        let hidden = x.add(&slot(WeightTarget::Wo).forward(&attn)?)?;
        let pre_act = slot(WeightTarget::Wd).forward(&hidden)?;
        let act = pre_act.map(silu);
        let output = hidden.add(&slot(WeightTarget::Wu).forward(&act)?)?;
        Ok(BlockCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            attn,
            hidden,
            pre_act,
            act,
            output,
        })
    }

    /// Gradients of every adapter parameter given `upstream = ∂L/∂output`.
    pub fn backward(&self, cache: &BlockCache, upstream: &DenseMatrix) -> Result<BlockGrads> {
        let slot = |t: WeightTarget| &self.slots[t.index()];
        let mut grads: [Option<Vec<DenseMatrix>>; 6] = Default::default();

        let (g, d_act) = slot(WeightTarget::Wu).backward(&cache.act, upstream)?;
        grads[WeightTarget::Wu.index()] = g;
        let d_pre = DenseMatrix::from_fn(d_act.rows(), d_act.cols(), |i, j| {
            d_act.get(i, j) * silu_grad(cache.pre_act.get(i, j))
        });
        let (g, d_hidden_ffn) = slot(WeightTarget::Wd).backward(&cache.hidden, &d_pre)?;
        grads[WeightTarget::Wd.index()] = g;
        let d_hidden = upstream.add(&d_hidden_ffn)?;

        let (g, d_attn) = slot(WeightTarget::Wo).backward(&cache.attn, &d_hidden)?;
        grads[WeightTarget::Wo.index()] = g;

        let d_probs = d_attn.matmul(&cache.v.transpose())?;
        let d_v = cache.probs.transpose().matmul(&d_attn)?;
        let inv_sqrt_d = 1.0 / (self.model_dim as f64).sqrt();
        let n = cache.probs.rows();
        let mut d_scores = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let p = cache.probs.row(i);
            let dp = d_probs.row(i);
            let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
            for j in 0..n {
                d_scores.set(i, j, p[j] * (dp[j] - dot) * inv_sqrt_d);
            }
        }
        let d_q = d_scores.matmul(&cache.k)?;
        let d_k = d_scores.transpose().matmul(&cache.q)?;

        for (t, dy) in [
            (WeightTarget::Wq, &d_q),
            (WeightTarget::Wk, &d_k),
            (WeightTarget::Wv, &d_v),
        ] {
            if let Slot::Adapted(_) = slot(t) {
                let (g, _) = slot(t).backward(&cache.x, dy)?;
                grads[t.index()] = g;
            }
        }

        Ok(BlockGrads(
            WeightTarget::ALL
                .into_iter()
                .filter_map(|t| grads[t.index()].take().map(|g| (t, g)))
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, contraction, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use crate::tensor::{relative_error, seeded_fill, Fill};

    fn input(rows: usize, d: usize, seed: u64) -> DenseMatrix {
        seeded_fill(rows, d, Fill::Gaussian { mean: 0.0, std: 1.0 }, seed).unwrap()
    }

    fn spec(method: Method, rank: usize, noise: f64) -> AdapterSpec {
        AdapterSpec {
            method,
            rank,
            noise_std: noise,
            lora_scale: 1.0,
            seed: 5,
        }
    }

    #[test]
    fn parse_target_lists() {
        assert_eq!(
            parse_targets("Wv, q").unwrap(),
            vec![WeightTarget::Wq, WeightTarget::Wv]
        );
        assert_eq!(parse_targets("W_o").unwrap(), vec![WeightTarget::Wo]);
        assert!(parse_targets("Wx").is_err());
        assert!(parse_targets("").is_err());
    }

    #[test]
    fn identity_adapters_match_frozen() {
        let base = ToyBlock::random(8, 32, 1).unwrap();
        let mut adapted = base.clone();
        adapted
            .attach_all(&WeightTarget::ALL, &spec(Method::Hut, 2, 0.0))
            .unwrap();
        let x = input(5, 8, 2);
        let a = base.forward(&x).unwrap();
        let b = adapted.forward(&x).unwrap();
        assert!(relative_error(&b, &a) <= 1e-12);
    }

    #[test]
    fn single_position_attention_is_one() {
        let block = ToyBlock::random(6, 24, 3).unwrap();
        let cache = block.forward_cached(&input(1, 6, 4)).unwrap();
        assert_eq!(cache.attention_probs(), &DenseMatrix::ones(1, 1));
    }

    #[test]
    fn rank_error_names_target() {
        let mut block = ToyBlock::random(4, 16, 0).unwrap();
        let err = block.attach(WeightTarget::Wv, &spec(Method::Hut, 5, 0.0)).unwrap_err();
        assert!(err.to_string().contains("Wv"), "{err}");
    }

    #[test]
    fn double_attach_rejected() {
        let mut block = ToyBlock::random(4, 16, 0).unwrap();
        block.attach(WeightTarget::Wq, &spec(Method::Lora, 2, 0.0)).unwrap();
        assert!(block.attach(WeightTarget::Wq, &spec(Method::Hut, 2, 0.0)).is_err());
    }

    #[test]
    fn input_shape_checked() {
        let block = ToyBlock::random(4, 16, 0).unwrap();
        assert!(block.forward(&input(3, 5, 0)).is_err());
    }

    fn block_gradcheck(method: Method) {
        let mut block = ToyBlock::random(6, 12, 10).unwrap();
        block.attach_all(&WeightTarget::ALL, &spec(method, 2, 0.3)).unwrap();
        // Move LoRA off its W_B = 0 start so every path carries gradient.
        for p in block.params_mut() {
            let noise = input(p.rows(), p.cols(), p.len() as u64);
            *p = p.add(&noise.scale(0.2)).unwrap();
        }
        let x = input(4, 6, 11);
        let up = input(4, 6, 12);
        let cache = block.forward_cached(&x).unwrap();
        let analytic = block.backward(&cache, &up).unwrap().flatten();
        let report = check_gradients(
            &block,
            |b: &mut ToyBlock| b.params_mut(),
            |b| contraction(&up, &b.forward(&x).unwrap()),
            &analytic,
            DEFAULT_STEP,
        );
        assert!(report.passes(DEFAULT_TOLERANCE), "{method}: {report:?}");
    }

    #[test]
    fn block_gradients_hut() {
        block_gradcheck(Method::Hut);
    }

    #[test]
    fn block_gradients_lora() {
        block_gradcheck(Method::Lora);
    }

    #[test]
    fn merged_block_matches() {
        let mut block = ToyBlock::random(8, 32, 20).unwrap();
        block
            .attach_all(&[WeightTarget::Wq, WeightTarget::Wv, WeightTarget::Wu], &spec(Method::Hut, 3, 0.2))
            .unwrap();
        for p in block.params_mut() {
            let noise = input(p.rows(), p.cols(), 7 + p.len() as u64);
            *p = p.add(&noise.scale(0.1)).unwrap();
        }
        let x = input(5, 8, 21);
        let train = block.forward(&x).unwrap();
        let mut merged = block.clone();
        merged.merge_all().unwrap();
        assert!(merged.adapted_targets().is_empty());
        assert!(relative_error(&merged.forward(&x).unwrap(), &train) <= 1e-9);
    }

    #[test]
    fn detach_restores_base() {
        let base = ToyBlock::random(4, 16, 30).unwrap();
        let mut b = base.clone();
        b.attach_all(&[WeightTarget::Wk], &spec(Method::Lora, 2, 0.0)).unwrap();
        assert_eq!(b.num_trainable(), 4 * 2 + 2 * 4);
        b.detach_all();
        assert_eq!(b, base);
    }
}
