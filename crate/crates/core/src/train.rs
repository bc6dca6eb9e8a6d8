//! Adapter fine-tuning on a [`SyntheticTask`].

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::Method;
use crate::block::{AdapterSpec, ToyBlock, WeightTarget};
use crate::error::{HutError, Result};
use crate::optim::{AdamWConfig, AdamWState};
use crate::task::{argmax, Sample, SyntheticTask, Target, TaskKind};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub method: Method,
    pub targets: Vec<WeightTarget>,
    pub rank: usize,
    pub steps: usize,
    /// Samples per step; `0` or anything `>=` the training set means full batch.
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub noise_std: f64,
    pub lora_scale: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            method: Method::Hut,
            targets: vec![WeightTarget::Wq, WeightTarget::Wv],
            rank: 8,
            steps: 500,
            batch_size: 0,
            optimizer: AdamWConfig::default(),
            noise_std: 0.01,
            lora_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: FinetuneConfig,
    /// Full training-set loss before every step, followed by the final loss;
    /// `steps + 1` entries.
    pub loss_trace: Vec<f64>,
    pub eval_metric: f64,
    pub metric_name: &'static str,
    pub trainable_params: usize,
    pub block: ToyBlock,
    pub optimizer: AdamWState,
}

impl TrainRun {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace is never empty")
    }
}

fn sample_loss(
    block: &ToyBlock,
    readout: Option<&DenseMatrix>,
    sample: &Sample,
    want_grad: bool,
) -> Result<(f64, usize, Option<DenseMatrix>, Option<crate::block::BlockCache>)> {
    let cache = block.forward_cached(&sample.x)?;
    let out = &cache.output;
    match (&sample.target, readout) {
        (Target::Values(y), _) => {
            let diff = out.sub(y)?;
            let sse: f64 = diff.data().iter().map(|v| v * v).sum();
            let grad = want_grad.then(|| diff.scale(2.0));
            Ok((sse, diff.len(), grad, want_grad.then_some(cache)))
        }
        (Target::Classes(labels), Some(r)) => {
            let logits = out.matmul(r)?;
            let mut nll = 0.0;
            let mut d_logits = DenseMatrix::zeros(logits.rows(), logits.cols());
            for (i, &label) in labels.iter().enumerate() {
                let row = logits.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                nll += lse - row[label];
                for (j, &v) in row.iter().enumerate() {
                    let p = (v - lse).exp();
                    d_logits.set(i, j, p - if j == label { 1.0 } else { 0.0 });
                }
            }
            let grad = if want_grad {
                Some(d_logits.matmul(&r.transpose())?)
            } else {
                None
            };
            Ok((nll, labels.len(), grad, want_grad.then_some(cache)))
        }
        (Target::Classes(_), None) => Err(HutError::InvalidArgument(
            "classification sample without a readout".into(),
        )),
    }
}

/// Mean loss over `samples` and, optionally, its gradient for every adapter
/// parameter (in [`ToyBlock::params_mut`] order).
pub fn batch_loss(
    block: &ToyBlock,
    task: &SyntheticTask,
    samples: &[&Sample],
    want_grad: bool,
) -> Result<(f64, Option<Vec<DenseMatrix>>)> {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut grads: Option<Vec<DenseMatrix>> = None;
    for s in samples {
        let (loss, n, upstream, cache) = sample_loss(block, task.readout.as_ref(), s, want_grad)?;
        total += loss;
        count += n;
        if let (Some(up), Some(cache)) = (upstream, cache) {
            let g = block.backward(&cache, &up)?.flatten();
            grads = Some(match grads {
                None => g,
                Some(acc) => acc
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| a.add(b))
                    .collect::<Result<_>>()?,
            });
        }
    }
    let norm = 1.0 / count as f64;
    let grads = grads.map(|g| g.into_iter().map(|m| m.map(|v| v * norm)).collect());
    Ok((total * norm, grads))
}

/// Eval-set metric: MSE for regression, token accuracy for classification.
pub fn evaluate(block: &ToyBlock, task: &SyntheticTask) -> Result<f64> {
    match task.spec.kind {
        TaskKind::Regression => {
            let refs: Vec<&Sample> = task.eval.iter().collect();
            Ok(batch_loss(block, task, &refs, false)?.0)
        }
        TaskKind::TokenClassification => {
            let readout = task
                .readout
                .as_ref()
                .ok_or_else(|| HutError::InvalidArgument("missing readout".into()))?;
            let (mut hits, mut total) = (0usize, 0usize);
            for s in &task.eval {
                let logits = block.forward(&s.x)?.matmul(readout)?;
                if let Target::Classes(labels) = &s.target {
                    for (i, &l) in labels.iter().enumerate() {
                        hits += usize::from(argmax(logits.row(i)) == l);
                        total += 1;
                    }
                }
            }
            Ok(hits as f64 / total as f64)
        }
    }
}

/// Attaches adapters to a copy of `base` and trains only their parameters
/// with AdamW. Deterministic for a fixed config.
pub fn finetune(base: &ToyBlock, task: &SyntheticTask, config: &FinetuneConfig) -> Result<TrainRun> {
    if config.targets.is_empty() {
        return Err(HutError::InvalidArgument("targets must not be empty".into()));
    }
    let mut block = base.clone();
    block.attach_all(
        &config.targets,
        &AdapterSpec {
            method: config.method,
            rank: config.rank,
            noise_std: config.noise_std,
            lora_scale: config.lora_scale,
            seed: config.seed,
        },
    )?;
    train_attached(block, task, config)
}

/// Trains an already-adapted block.
pub fn train_attached(
    mut block: ToyBlock,
    task: &SyntheticTask,
    config: &FinetuneConfig,
) -> Result<TrainRun> {
    let mut opt = AdamWState::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let full: Vec<&Sample> = task.train.iter().collect();
    let batch = if config.batch_size == 0 || config.batch_size >= full.len() {
        full.len()
    } else {
        config.batch_size
    };
    let mut order: Vec<usize> = (0..full.len()).collect();
    let mut cursor = full.len();

    let mut trace = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        let grads = if batch == full.len() {
            let (loss, g) = batch_loss(&block, task, &full, true)?;
            trace.push(loss);
            g
        } else {
            trace.push(batch_loss(&block, task, &full, false)?.0);
            if cursor + batch > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let picked: Vec<&Sample> = order[cursor..cursor + batch].iter().map(|&i| full[i]).collect();
            cursor += batch;
            batch_loss(&block, task, &picked, true)?.1
        };
        let grads = grads.expect("gradients requested");
        opt.step(block.params_mut(), &grads)?;
    }
    trace.push(batch_loss(&block, task, &full, false)?.0);

    Ok(TrainRun {
        config: config.clone(),
        loss_trace: trace,
        eval_metric: evaluate(&block, task)?,
        metric_name: task.spec.kind.metric_name(),
        trainable_params: block.num_trainable(),
        block,
        optimizer: opt,
    })
}

pub const LOSS_CSV_HEADER: &str = "step,train_loss";

pub fn write_loss_csv<W: Write>(mut out: W, trace: &[f64]) -> std::io::Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use crate::task::TaskSpec;

    fn small_task(kind: TaskKind) -> SyntheticTask {
        SyntheticTask::generate(TaskSpec {
            kind,
            model_dim: 6,
            seq_len: 3,
            train_size: 4,
            eval_size: 3,
            ..TaskSpec::default()
        })
        .unwrap()
    }

    fn loss_gradcheck(kind: TaskKind, method: Method) {
        let task = small_task(kind);
        let mut block = task.pretrained.clone();
        block
            .attach_all(
                &[WeightTarget::Wq, WeightTarget::Wv, WeightTarget::Wd],
                &AdapterSpec {
                    method,
                    rank: 2,
                    noise_std: 0.3,
                    lora_scale: 1.0,
                    seed: 1,
                },
            )
            .unwrap();
        for p in block.params_mut() {
            *p = p.map(|v| v + 0.05);
        }
        let samples: Vec<&Sample> = task.train.iter().collect();
        let (_, grads) = batch_loss(&block, &task, &samples, true).unwrap();
        let report = check_gradients(
            &block,
            |b: &mut ToyBlock| b.params_mut(),
            |b| batch_loss(b, &task, &samples, false).unwrap().0,
            &grads.unwrap(),
            DEFAULT_STEP,
        );
        assert!(report.passes(DEFAULT_TOLERANCE), "{kind} {method}: {report:?}");
    }

    #[test]
    fn regression_loss_gradients() {
        loss_gradcheck(TaskKind::Regression, Method::Hut);
        loss_gradcheck(TaskKind::Regression, Method::Lora);
    }

    #[test]
    fn classification_loss_gradients() {
        loss_gradcheck(TaskKind::TokenClassification, Method::Hut);
        loss_gradcheck(TaskKind::TokenClassification, Method::Lora);
    }

    #[test]
    fn zero_lr_constant_trace() {
        let task = small_task(TaskKind::Regression);
        let cfg = FinetuneConfig {
            steps: 5,
            rank: 2,
            optimizer: AdamWConfig {
                lr: 0.0,
                ..AdamWConfig::default()
            },
            ..FinetuneConfig::default()
        };
        let run = finetune(&task.pretrained, &task, &cfg).unwrap();
        assert_eq!(run.loss_trace.len(), 6);
        assert!(run.loss_trace.iter().all(|&l| l == run.loss_trace[0]));
    }

    #[test]
    fn same_seed_same_trace_with_minibatches() {
        let task = small_task(TaskKind::TokenClassification);
        let cfg = FinetuneConfig {
            steps: 6,
            rank: 2,
            batch_size: 3,
            ..FinetuneConfig::default()
        };
        let a = finetune(&task.pretrained, &task, &cfg).unwrap();
        let b = finetune(&task.pretrained, &task, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.eval_metric, b.eval_metric);
    }

    #[test]
    fn empty_targets_rejected() {
        let task = small_task(TaskKind::Regression);
        let cfg = FinetuneConfig {
            targets: vec![],
            ..FinetuneConfig::default()
        };
        assert!(finetune(&task.pretrained, &task, &cfg).is_err());
    }

    #[test]
    fn rank_error_names_target() {
        let task = small_task(TaskKind::Regression);
        let cfg = FinetuneConfig {
            targets: vec![WeightTarget::Wo],
            rank: 7,
            ..FinetuneConfig::default()
        };
        let err = finetune(&task.pretrained, &task, &cfg).unwrap_err();
        assert!(err.to_string().contains("Wo"), "{err}");
    }
}
