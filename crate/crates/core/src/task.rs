//! Synthetic fine-tuning tasks built around a perturbed teacher block.
//!
//! A random block plays the pretrained model. The teacher is a copy whose
//! selected weights are perturbed by a rank-1 elementwise modulation
//! `(u vᵀ) ⊙ W` plus an optional additive low-rank term; the gap between
//! the two is what an adapter has to close.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::{ToyBlock, WeightTarget};
use crate::error::{HutError, Result};
use crate::tensor::{gaussian_with, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Match the teacher's output sequence, scored by MSE.
    Regression,
    /// Predict the teacher's per-token argmax class under a fixed readout,
    /// trained with cross-entropy and scored by accuracy.
    TokenClassification,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Regression => "regression",
            TaskKind::TokenClassification => "classification",
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Regression => "eval_mse",
            TaskKind::TokenClassification => "eval_accuracy",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = HutError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" | "linear-teacher" | "teacher" => Ok(TaskKind::Regression),
            "classification" | "token-classification" => Ok(TaskKind::TokenClassification),
            other => Err(HutError::InvalidArgument(format!(
                "unknown task kind '{other}', expected regression or classification"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
    pub model_dim: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    pub perturb_targets: Vec<WeightTarget>,
    /// Std of the modulation vectors `u`, `v` around one.
    pub modulation_std: f64,
    /// Scale of the additive rank-2 term relative to the weight scale.
    pub additive_std: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::Regression,
            seed: 0,
            train_size: 32,
            eval_size: 16,
            model_dim: 32,
            seq_len: 8,
            num_classes: 4,
            perturb_targets: vec![WeightTarget::Wq, WeightTarget::Wv],
            modulation_std: 0.5,
            additive_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Values(DenseMatrix),
    Classes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DenseMatrix,
    pub target: Target,
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub pretrained: ToyBlock,
    pub teacher: ToyBlock,
    /// `d × classes` readout for the classification task.
    pub readout: Option<DenseMatrix>,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

fn perturb(w: &DenseMatrix, spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<DenseMatrix> {
    let (d, k) = w.shape();
    let u = gaussian_with(d, 1, 1.0, spec.modulation_std, rng)?;
    let v = gaussian_with(1, k, 1.0, spec.modulation_std, rng)?;
    let mut out = DenseMatrix::outer(&u, &v)?.hadamard(w)?;
    if spec.additive_std > 0.0 {
        let p = gaussian_with(d, 2, 0.0, 1.0, rng)?;
        let q = gaussian_with(2, k, 0.0, 1.0, rng)?;
        let delta = p.matmul(&q)?.scale(spec.additive_std / (2.0 * d as f64).sqrt());
        out = out.add(&delta)?;
    }
    Ok(out)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

impl SyntheticTask {
    pub fn generate(spec: TaskSpec) -> Result<Self> {
        if spec.model_dim == 0 || spec.seq_len == 0 || spec.train_size == 0 || spec.eval_size == 0 {
            return Err(HutError::InvalidArgument(
                "task dimensions and split sizes must be positive".into(),
            ));
        }
        if spec.kind == TaskKind::TokenClassification && spec.num_classes < 2 {
            return Err(HutError::InvalidArgument("need at least two classes".into()));
        }
        if !(spec.modulation_std >= 0.0 && spec.additive_std >= 0.0) {
            return Err(HutError::InvalidArgument("perturbation scales must be >= 0".into()));
        }
        let d = spec.model_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let block_seed = spec.seed ^ 0x9e37_79b9_7f4a_7c15;
        let pretrained = ToyBlock::random(d, 4 * d, block_seed)?;

        let mut teacher_weights: Vec<DenseMatrix> = WeightTarget::ALL
            .iter()
            .map(|&t| pretrained.base_weight(t).clone())
            .collect();
        for &t in &spec.perturb_targets {
            let i = WeightTarget::ALL.iter().position(|&x| x == t).expect("known target");
            teacher_weights[i] = perturb(&teacher_weights[i], &spec, &mut rng)?;
        }
        let teacher = ToyBlock::from_weights(
            d,
            4 * d,
            teacher_weights.try_into().expect("six weights"),
        )?;

        let readout = match spec.kind {
            TaskKind::Regression => None,
            TaskKind::TokenClassification => Some(gaussian_with(
                d,
                spec.num_classes,
                0.0,
                1.0 / (d as f64).sqrt(),
                &mut rng,
            )?),
        };

        let make = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Sample>> {
            (0..n)
                .map(|_| {
                    let x = gaussian_with(spec.seq_len, d, 0.0, 1.0, rng)?;
                    let y = teacher.forward(&x)?;
                    let target = match &readout {
                        None => Target::Values(y),
                        Some(r) => {
                            let logits = y.matmul(r)?;
                            Target::Classes((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
                        }
                    };
                    Ok(Sample { x, target })
                })
                .collect()
        };
        let train = make(spec.train_size, &mut rng)?;
        let eval = make(spec.eval_size, &mut rng)?;

        Ok(SyntheticTask {
            spec,
            pretrained,
            teacher,
            readout,
            train,
            eval,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let a = SyntheticTask::generate(TaskSpec::default()).unwrap();
        let b = SyntheticTask::generate(TaskSpec::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
        assert_eq!(a.teacher, b.teacher);
        let c = SyntheticTask::generate(TaskSpec {
            seed: 1,
            ..TaskSpec::default()
        })
        .unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn splits_are_disjoint() {
        let t = SyntheticTask::generate(TaskSpec::default()).unwrap();
        assert_eq!(t.train.len(), 32);
        assert_eq!(t.eval.len(), 16);
        for e in &t.eval {
            assert!(t.train.iter().all(|s| s.x != e.x));
        }
    }

    #[test]
    fn only_listed_weights_perturbed() {
        let t = SyntheticTask::generate(TaskSpec {
            model_dim: 8,
            ..TaskSpec::default()
        })
        .unwrap();
        for w in WeightTarget::ALL {
            let same = t.teacher.base_weight(w) == t.pretrained.base_weight(w);
            assert_eq!(same, !t.spec.perturb_targets.contains(&w), "{w}");
        }
    }

    #[test]
    fn classification_labels_in_range() {
        let t = SyntheticTask::generate(TaskSpec {
            kind: TaskKind::TokenClassification,
            model_dim: 8,
            num_classes: 3,
            ..TaskSpec::default()
        })
        .unwrap();
        for s in t.train.iter().chain(&t.eval) {
            match &s.target {
                Target::Classes(c) => {
                    assert_eq!(c.len(), 8);
                    assert!(c.iter().all(|&l| l < 3));
                }
                Target::Values(_) => panic!("expected classes"),
            }
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("regression".parse::<TaskKind>().unwrap(), TaskKind::Regression);
        assert!("gan".parse::<TaskKind>().is_err());
    }
}
