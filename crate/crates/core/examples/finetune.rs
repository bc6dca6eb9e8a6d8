//! Fine-tune HUT and LoRA adapters on {Wq, Wv} of a toy block against a
//! perturbed teacher, and compare with the frozen model.
//!
//! ```bash
//! cargo run --release -p hut --example finetune -- [steps] [lr]
//! ```

use hut::block::WeightTarget;
use hut::optim::AdamWConfig;
use hut::task::{SyntheticTask, TaskSpec};
use hut::train::{evaluate, finetune, FinetuneConfig};
use hut::Method;

fn main() -> hut::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(500);
    let lr: f64 = args.next().map(|s| s.parse().expect("lr")).unwrap_or(1e-2);

    let task = SyntheticTask::generate(TaskSpec::default())?;
    let frozen = evaluate(&task.pretrained, &task)?;
    println!("frozen block eval mse: {frozen:.6}");

    for method in [Method::Hut, Method::Lora] {
        let cfg = FinetuneConfig {
            method,
            targets: vec![WeightTarget::Wq, WeightTarget::Wv],
            rank: 8,
            steps,
            optimizer: AdamWConfig {
                lr,
                ..AdamWConfig::default()
            },
            ..FinetuneConfig::default()
        };
        let run = finetune(&task.pretrained, &task, &cfg)?;
        println!(
            "{method:>4}: params={:5} train loss {:.6} -> {:.6} (ratio {:.4}), eval mse {:.6}",
            run.trainable_params,
            run.initial_loss(),
            run.final_loss(),
            run.final_loss() / run.initial_loss(),
            run.eval_metric
        );
    }
    Ok(())
}
