//! Save trained adapters to a checkpoint, load them back and rebuild the
//! block.

use hut::block::WeightTarget;
use hut::checkpoint::Checkpoint;
use hut::task::{SyntheticTask, TaskSpec};
use hut::tensor::relative_error;
use hut::train::{finetune, FinetuneConfig};

fn main() -> hut::Result<()> {
    let task = SyntheticTask::generate(TaskSpec::default())?;
    let run = finetune(
        &task.pretrained,
        &task,
        &FinetuneConfig {
            steps: 50,
            ..FinetuneConfig::default()
        },
    )?;

    let mut ckpt = Checkpoint::new(0, vec![("steps".into(), "50".into())]);
    ckpt.push_block_adapters(&run.block);
    let path = std::env::temp_dir().join("hut-example.hutckpt");
    ckpt.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!("{} tensors, {} bytes", loaded.tensors.len(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    println!("bitwise equal: {}", loaded == ckpt);

    let mut block = task.pretrained.clone();
    for (t, a) in loaded.adapters()? {
        block.set_adapter(t, a)?;
    }
    let x = &task.eval[0].x;
    let err = relative_error(&block.forward(x)?, &run.block.forward(x)?);
    println!("restored block rel err {err:.3e}, adapted {:?}", block.adapted_targets());
    assert!(block.adapter(WeightTarget::Wq).is_some());
    let _ = std::fs::remove_file(&path);
    Ok(())
}
