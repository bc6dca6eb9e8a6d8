//! Rank sweep on the token-classification task.
//!
//! ```bash
//! cargo run --release -p hut --example sweep_rank -- [steps] [jobs]
//! ```

use hut::config::RANK_SWEEP_MODEL_DIM;
use hut::sweep::{sweep_rank, write_sweep_csv, RANK_SWEEP_RANKS, RANK_SWEEP_SETS};
use hut::task::{SyntheticTask, TaskKind, TaskSpec};
use hut::train::FinetuneConfig;

fn main() -> hut::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse().expect("steps")).unwrap_or(100);
    let jobs = args.next().map(|s| s.parse().expect("jobs")).unwrap_or(1);

    let task = SyntheticTask::generate(TaskSpec {
        kind: TaskKind::TokenClassification,
        model_dim: RANK_SWEEP_MODEL_DIM,
        ..TaskSpec::default()
    })?;
    let cfg = FinetuneConfig {
        steps,
        ..FinetuneConfig::default()
    };
    let rows = sweep_rank(&task, &cfg, &RANK_SWEEP_SETS, &RANK_SWEEP_RANKS, jobs)?;
    write_sweep_csv(std::io::stdout().lock(), task.spec.kind.metric_name(), &rows).expect("stdout");
    Ok(())
}
