//! Fold trained HUT and LoRA adapters into one dense weight and bias, and
//! check the merged layer reproduces the training-form output.

use hut::tensor::{gaussian_with, relative_error};
use hut::validate::{random_hut_state, random_lora_state};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hut::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d, k, r) = (5, 12, 9, 3);
    let x = gaussian_with(n, d, 0.0, 1.0, &mut rng)?;

    let hut = random_hut_state(&mut rng, d, k, r)?;
    let merged = hut.merge();
    println!("HUT  {d}x{k} r={r}: merged weight {:?}, bias {:?}", merged.weight.shape(), merged.bias.shape());
    println!("  merged vs training   rel err {:.3e}", relative_error(&merged.forward(&x)?, &hut.forward(&x)?));
    println!("  reduced vs training  rel err {:.3e}", relative_error(&hut.forward_reduced(&x)?, &hut.forward(&x)?));

    let lora = random_lora_state(&mut rng, d, k, r)?;
    let merged = lora.merge();
    println!("LoRA {d}x{k} r={r}:");
    println!("  merged vs training   rel err {:.3e}", relative_error(&merged.forward(&x)?, &lora.forward(&x)?));
    Ok(())
}
