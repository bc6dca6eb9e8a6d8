//! Where HUT's forward pass becomes cheaper than LoRA's, for square weights.

use hut::flops::{delta_flops, flops_hut, flops_lora};

fn main() -> hut::Result<()> {
    println!("{:>6} {:>4} {:>14} {:>14} {:>12}", "d", "r", "HUT", "LoRA", "LoRA-HUT");
    for d in [4, 16, 256, 1024] {
        for r in [1, 2, 4] {
            println!(
                "{d:>6} {r:>4} {:>14} {:>14} {:>12}",
                flops_hut(1, d, d, r)?,
                flops_lora(1, d, d, r)?,
                delta_flops(d, r)
            );
        }
    }
    Ok(())
}
