//! Compare the hand-written HUT and LoRA backward passes against central
//! finite differences on one random instance each.

use hut::gradcheck::{check_gradients, contraction, DEFAULT_STEP, DEFAULT_TOLERANCE};
use hut::hut::HutAdapterState;
use hut::lora::LoraAdapterState;
use hut::tensor::gaussian_with;
use hut::validate::{random_hut_state, random_lora_state};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hut::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, k, r) = (4, 7, 5, 2);
    let x = gaussian_with(n, d, 0.0, 1.0, &mut rng)?;
    let up = gaussian_with(n, k, 0.0, 1.0, &mut rng)?;

    let hut = random_hut_state(&mut rng, d, k, r)?;
    let g = hut.backward(&x, &up)?.into_vec();
    let rep = check_gradients(
        &hut,
        |s: &mut HutAdapterState| vec![&mut s.ma, &mut s.mb, &mut s.gamma, &mut s.beta],
        |s| contraction(&up, &s.forward(&x).expect("shapes")),
        &g,
        DEFAULT_STEP,
    );
    println!(
        "HUT : {} entries, max rel err {:.3e} ({})",
        rep.entries,
        rep.max_rel_error,
        if rep.passes(DEFAULT_TOLERANCE) { "ok" } else { "FAIL" }
    );

    let lora = random_lora_state(&mut rng, d, k, r)?;
    let g = lora.backward(&x, &up)?;
    let rep = check_gradients(
        &lora,
        |s: &mut LoraAdapterState| vec![&mut s.wa, &mut s.wb],
        |s| contraction(&up, &s.forward(&x).expect("shapes")),
        &[g.d_wa, g.d_wb],
        DEFAULT_STEP,
    );
    println!(
        "LoRA: {} entries, max rel err {:.3e} ({})",
        rep.entries,
        rep.max_rel_error,
        if rep.passes(DEFAULT_TOLERANCE) { "ok" } else { "FAIL" }
    );
    Ok(())
}
