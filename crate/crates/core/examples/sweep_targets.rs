//! Budget-matched ablation over which attention weights get an adapter.
//!
//! ```bash
//! cargo run --release -p hut --example sweep_targets -- [steps] [jobs]
//! ```

use hut::sweep::{sweep_targets, write_sweep_csv};
use hut::task::{SyntheticTask, TaskSpec};
use hut::train::FinetuneConfig;

fn main() -> hut::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse().expect("steps")).unwrap_or(200);
    let jobs = args.next().map(|s| s.parse().expect("jobs")).unwrap_or(1);

    let task = SyntheticTask::generate(TaskSpec::default())?;
    let cfg = FinetuneConfig {
        steps,
        ..FinetuneConfig::default()
    };
    let rows = sweep_targets(&task, &cfg, jobs)?;
    write_sweep_csv(std::io::stdout().lock(), task.spec.kind.metric_name(), &rows).expect("stdout");
    Ok(())
}
