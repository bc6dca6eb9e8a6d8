//! Self-check suite behind `hut validate`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapter::{Adapter, WeightAdapter};
use crate::block::{AdapterSpec, ToyBlock, WeightTarget};
use crate::error::Result;
use crate::flops::{delta_flops, flops_hut, flops_lora, measure_forward_flops, measure_merged_flops};
use crate::gradcheck::{check_gradients, contraction, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::hut::HutAdapterState;
use crate::lora::LoraAdapterState;
use crate::tensor::{gaussian_with, relative_error};
use crate::Method;

pub type FlopsFormula = fn(usize, usize, usize, usize) -> Result<u64>;

pub const MERGE_TOLERANCE: f64 = 1e-10;
pub const BLOCK_IDENTITY_TOLERANCE: f64 = 1e-12;
pub const BLOCK_MERGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub seed: u64,
    pub merge_instances: usize,
    pub grad_instances: usize,
    pub hut_formula: FlopsFormula,
    pub lora_formula: FlopsFormula,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 0,
            merge_instances: 100,
            grad_instances: 20,
            hut_formula: flops_hut,
            lora_formula: flops_lora,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub properties: Vec<PropertyResult>,
    /// `(d, r, delta_flops)` rows.
    pub delta_table: Vec<(usize, usize, i128)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.properties.iter().filter(|p| !p.passed).map(|p| p.name).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for p in &self.properties {
            let _ = writeln!(s, "{:<4}  {:<22} {}", if p.passed { "PASS" } else { "FAIL" }, p.name, p.detail);
        }
        let _ = writeln!(s, "\ndelta_flops(d, r) = FLOPs_LoRA - FLOPs_HUT (d = k)");
        let _ = writeln!(s, "{:>6} {:>4} {:>14} sign", "d", "r", "delta");
        for (d, r, v) in &self.delta_table {
            let sign = match v.signum() {
                1 => "+ (HUT cheaper)",
                0 => "0 (tie)",
                _ => "- (LoRA cheaper)",
            };
            let _ = writeln!(s, "{d:>6} {r:>4} {v:>14} {sign}");
        }
        s
    }
}

/// Random HUT state with perturbed means, `γ` around one and a nonzero `β`.
pub fn random_hut_state(rng: &mut ChaCha8Rng, d: usize, k: usize, r: usize) -> Result<HutAdapterState> {
    HutAdapterState::from_parts(
        gaussian_with(d, k, 0.0, 1.0, rng)?,
        gaussian_with(d, r, 1.0, 0.5, rng)?,
        gaussian_with(r, k, 1.0, 0.5, rng)?,
        gaussian_with(1, k, 1.0, 0.3, rng)?,
        gaussian_with(1, k, 0.0, 0.5, rng)?,
    )
}

/// Random LoRA state with both factors nonzero.
pub fn random_lora_state(rng: &mut ChaCha8Rng, d: usize, k: usize, r: usize) -> Result<LoraAdapterState> {
    let scale = rng.gen_range(1.0..4.0);
    LoraAdapterState::from_parts(
        gaussian_with(d, k, 0.0, 1.0, rng)?,
        gaussian_with(d, r, 0.0, 0.5, rng)?,
        gaussian_with(r, k, 0.0, 0.5, rng)?,
        scale,
    )
}

fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    let d = rng.gen_range(3..=16);
    let k = rng.gen_range(3..=16);
    let r = rng.gen_range(1..=4usize).min(d.min(k));
    let n = rng.gen_range(1..=6);
    (n, d, k, r)
}

pub fn check_merge_equivalence(opts: &ValidateOptions) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for _ in 0..opts.merge_instances {
        let (n, d, k, r) = random_dims(&mut rng);
        let x = gaussian_with(n, d, 0.0, 1.0, &mut rng)?;
        let hut = random_hut_state(&mut rng, d, k, r)?;
        let train = hut.forward(&x)?;
        worst = worst
            .max(relative_error(&hut.merge().forward(&x)?, &train))
            .max(relative_error(&hut.forward_reduced(&x)?, &train));
        let lora = random_lora_state(&mut rng, d, k, r)?;
        worst = worst.max(relative_error(&lora.merge().forward(&x)?, &lora.forward(&x)?));
    }
    Ok(PropertyResult {
        name: "merge-equivalence",
        passed: worst <= MERGE_TOLERANCE,
        detail: format!(
            "max rel err {worst:.2e} <= {MERGE_TOLERANCE:.0e} over {} HUT + {} LoRA states",
            opts.merge_instances, opts.merge_instances
        ),
    })
}

pub fn check_hut_gradients(opts: &ValidateOptions) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x68757467);
    let mut worst = 0.0f64;
    let mut entries = 0;
    for _ in 0..opts.grad_instances {
        let (n, d, k, r) = random_dims(&mut rng);
        let x = gaussian_with(n, d, 0.0, 1.0, &mut rng)?;
        let up = gaussian_with(n, k, 0.0, 1.0, &mut rng)?;
        let state = random_hut_state(&mut rng, d, k, r)?;
        let analytic = state.backward(&x, &up)?.into_vec();
        let rep = check_gradients(
            &state,
            |s: &mut HutAdapterState| vec![&mut s.ma, &mut s.mb, &mut s.gamma, &mut s.beta],
            |s| contraction(&up, &s.forward(&x).expect("shapes")),
            &analytic,
            DEFAULT_STEP,
        );
        worst = worst.max(rep.max_rel_error);
        entries += rep.entries;
    }
    Ok(PropertyResult {
        name: "hut-gradients",
        passed: worst <= DEFAULT_TOLERANCE,
        detail: format!("max rel err {worst:.2e} <= {DEFAULT_TOLERANCE:.0e} over {entries} entries"),
    })
}

pub fn check_lora_gradients(opts: &ValidateOptions) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6c6f7261);
    let mut worst = 0.0f64;
    let mut entries = 0;
    for _ in 0..opts.grad_instances {
        let (n, d, k, r) = random_dims(&mut rng);
        let x = gaussian_with(n, d, 0.0, 1.0, &mut rng)?;
        let up = gaussian_with(n, k, 0.0, 1.0, &mut rng)?;
        let state = random_lora_state(&mut rng, d, k, r)?;
        let g = state.backward(&x, &up)?;
        let rep = check_gradients(
            &state,
            |s: &mut LoraAdapterState| vec![&mut s.wa, &mut s.wb],
            |s| contraction(&up, &s.forward(&x).expect("shapes")),
            &[g.d_wa, g.d_wb],
            DEFAULT_STEP,
        );
        worst = worst.max(rep.max_rel_error);
        entries += rep.entries;
    }
    Ok(PropertyResult {
        name: "lora-gradients",
        passed: worst <= DEFAULT_TOLERANCE,
        detail: format!("max rel err {worst:.2e} <= {DEFAULT_TOLERANCE:.0e} over {entries} entries"),
    })
}

/// `(N, d, k, r)` grid used by the FLOPs checks; 60 configurations.
pub fn flops_grid() -> Vec<(usize, usize, usize, usize)> {
    let mut grid = Vec::new();
    for n in [1, 3, 8] {
        for (d, k) in [(4, 4), (8, 8), (16, 12), (12, 16), (32, 32)] {
            for r in [1, 2, 4, 8] {
                if r <= d.min(k) {
                    grid.push((n, d, k, r));
                }
            }
        }
    }
    grid
}

pub fn check_flops_exactness(opts: &ValidateOptions) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x666c6f70);
    let grid = flops_grid();
    let mut mismatches = Vec::new();
    for &(n, d, k, r) in &grid {
        let x = gaussian_with(n, d, 0.0, 1.0, &mut rng)?;
        let hut = Adapter::Hut(random_hut_state(&mut rng, d, k, r)?);
        let lora = Adapter::Lora(random_lora_state(&mut rng, d, k, r)?);
        let h = measure_forward_flops(&hut, &x)?;
        if h.measured != (opts.hut_formula)(n, d, k, r)? {
            mismatches.push(format!("HUT N={n} d={d} k={k} r={r}"));
        }
        let l = measure_forward_flops(&lora, &x)?;
        if l.measured != (opts.lora_formula)(n, d, k, r)? {
            mismatches.push(format!("LoRA N={n} d={d} k={k} r={r}"));
        }
        let m = measure_merged_flops(&WeightAdapter::merge(&hut)?, &x, r)?;
        if !m.exact() {
            mismatches.push(format!("Merged N={n} d={d} k={k}"));
        }
    }
    Ok(PropertyResult {
        name: "flops-exactness",
        passed: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            format!("measured == closed form on {} configurations x 3 methods", grid.len())
        } else {
            format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
        },
    })
}

pub fn check_crossover() -> PropertyResult {
    let mut bad = Vec::new();
    let mut d = 8;
    let mut cells = 0;
    while d <= 1024 {
        for r in 2..=(d / 4).min(64) {
            cells += 1;
            if delta_flops(d, r) <= 0 {
                bad.push((d, r));
            }
        }
        if delta_flops(d, 1) >= 0 {
            bad.push((d, 1));
        }
        d *= 2;
    }
    if delta_flops(4, 1) >= 0 {
        bad.push((4, 1));
    }
    PropertyResult {
        name: "crossover-sign",
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("HUT cheaper for r >= 2 on {cells} (d, r) cells, LoRA cheaper at r = 1")
        } else {
            format!("wrong sign at {bad:?}")
        },
    }
}

pub fn check_block_identity(opts: &ValidateOptions) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x626c6b);
    let base = ToyBlock::random(16, 64, opts.seed)?;
    let x = gaussian_with(6, 16, 0.0, 1.0, &mut rng)?;
    let frozen = base.forward(&x)?;

    let mut identity = base.clone();
    identity.attach_all(
        &WeightTarget::ALL,
        &AdapterSpec {
            method: Method::Hut,
            rank: 4,
            noise_std: 0.0,
            lora_scale: 1.0,
            seed: opts.seed,
        },
    )?;
    let id_err = relative_error(&identity.forward(&x)?, &frozen);

    let mut noisy = base.clone();
    noisy.attach_all(
        &WeightTarget::ALL,
        &AdapterSpec {
            method: Method::Hut,
            rank: 4,
            noise_std: 0.2,
            lora_scale: 1.0,
            seed: opts.seed,
        },
    )?;
    let train = noisy.forward(&x)?;
    noisy.merge_all()?;
    let merge_err = relative_error(&noisy.forward(&x)?, &train);

    Ok(PropertyResult {
        name: "block-identity-merge",
        passed: id_err <= BLOCK_IDENTITY_TOLERANCE && merge_err <= BLOCK_MERGE_TOLERANCE,
        detail: format!(
            "identity rel err {id_err:.2e} <= {BLOCK_IDENTITY_TOLERANCE:.0e}, merged block rel err {merge_err:.2e} <= {BLOCK_MERGE_TOLERANCE:.0e}"
        ),
    })
}

pub fn delta_table() -> Vec<(usize, usize, i128)> {
    let mut rows = Vec::new();
    for d in [4, 8, 16, 64, 1024] {
        for r in [1, 2, 4, 8] {
            rows.push((d, r, delta_flops(d, r)));
        }
    }
    rows
}

pub fn run_validation(opts: &ValidateOptions) -> Result<ValidationReport> {
    Ok(ValidationReport {
        properties: vec![
            check_merge_equivalence(opts)?,
            check_hut_gradients(opts)?,
            check_lora_gradients(opts)?,
            check_flops_exactness(opts)?,
            check_crossover(),
            check_block_identity(opts)?,
        ],
        delta_table: delta_table(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_at_least_50_configs() {
        assert!(flops_grid().len() >= 50);
        assert!(flops_grid().contains(&(1, 4, 4, 2)));
    }

    #[test]
    fn pristine_suite_passes() {
        let report = run_validation(&ValidateOptions {
            merge_instances: 20,
            grad_instances: 4,
            ..ValidateOptions::default()
        })
        .unwrap();
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.delta_table.len(), 20);
    }

    #[test]
    fn injected_counting_bug_is_named() {
        fn off_by_rk(n: usize, d: usize, k: usize, r: usize) -> Result<u64> {
            Ok(flops_hut(n, d, k, r)? - (r * k) as u64)
        }
        let opts = ValidateOptions {
            hut_formula: off_by_rk,
            ..ValidateOptions::default()
        };
        let p = check_flops_exactness(&opts).unwrap();
        assert!(!p.passed);
        assert_eq!(p.name, "flops-exactness");
    }
}
