use hut::adapter::WeightAdapter;
use hut::flops::{delta_flops, flops_hut, flops_lora};
use hut::hut::HutAdapterState;
use hut::sweep::adapter_param_count;
use hut::tensor::{gaussian_with, relative_error, DenseMatrix, FlopScope};
use hut::validate::{random_hut_state, random_lora_state};
use hut::Method;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (1usize..6, 3usize..17, 3usize..17, 1usize..5, any::<u64>()).prop_map(|(n, d, k, r, s)| (n, d, k, r.min(d.min(k)), s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_and_hadamard_counts(d in 1usize..12, r in 1usize..12, k in 1usize..12, seed: u64) {
        let mut g = rng(seed);
        let a = gaussian_with(d, r, 0.0, 1.0, &mut g).unwrap();
        let b = gaussian_with(r, k, 0.0, 1.0, &mut g).unwrap();
        let c = gaussian_with(d, k, 0.0, 1.0, &mut g).unwrap();
        let scope = FlopScope::begin().unwrap();
        let ab = a.matmul(&b).unwrap();
        prop_assert_eq!(scope.count(), ((2 * r - 1) * d * k) as u64);
        ab.hadamard(&c).unwrap();
        prop_assert_eq!(scope.count(), ((2 * r - 1) * d * k + d * k) as u64);
    }

    #[test]
    fn identity_and_ones_are_exact(d in 1usize..10, k in 1usize..10, seed: u64) {
        let a = gaussian_with(d, k, 0.0, 1.0, &mut rng(seed)).unwrap();
        prop_assert_eq!(&DenseMatrix::identity(d).matmul(&a).unwrap(), &a);
        prop_assert_eq!(&a.matmul(&DenseMatrix::identity(k)).unwrap(), &a);
        prop_assert_eq!(&a.hadamard(&DenseMatrix::ones(d, k)).unwrap(), &a);
        let b = gaussian_with(d, k, 0.0, 1.0, &mut rng(seed ^ 1)).unwrap();
        prop_assert_eq!(a.hadamard(&b).unwrap(), b.hadamard(&a).unwrap());
    }

    #[test]
    fn decomposition_is_proportional_to_w0((_, d, k, r, seed) in dims()) {
        let s = random_hut_state(&mut rng(seed), d, k, r).unwrap();
        let (ma, mb) = s.means();
        let outer = DenseMatrix::outer(&ma, &mb).unwrap();
        let expected = outer.sub(&DenseMatrix::ones(d, k)).unwrap().hadamard(s.w0()).unwrap();
        let delta = s.compute_w_new().sub(s.w0()).unwrap();
        prop_assert!(relative_error(&delta, &expected) <= 1e-14);
    }

    #[test]
    fn zeros_in_w0_stay_zero((_, d, k, r, seed) in dims(), zero_every in 2usize..5) {
        let mut g = rng(seed);
        let mut w0 = gaussian_with(d, k, 0.0, 1.0, &mut g).unwrap();
        for (i, v) in w0.data_mut().iter_mut().enumerate() {
            if i % zero_every == 0 {
                *v = 0.0;
            }
        }
        let s = HutAdapterState::from_parts(
            w0.clone(),
            gaussian_with(d, r, 1.0, 2.0, &mut g).unwrap(),
            gaussian_with(r, k, 1.0, 2.0, &mut g).unwrap(),
            DenseMatrix::ones(1, k),
            DenseMatrix::zeros(1, k),
        ).unwrap();
        let w = s.compute_w_new();
        for (a, b) in w0.data().iter().zip(w.data()) {
            if *a == 0.0 {
                prop_assert_eq!(*b, 0.0);
            }
        }
    }

    #[test]
    fn modulation_ratio_is_rank_one((_, d, k, r, seed) in dims()) {
        let s = random_hut_state(&mut rng(seed), d, k, r).unwrap();
        let w = s.compute_w_new();
        let ratio = DenseMatrix::from_fn(d, k, |i, j| w.get(i, j) / s.w0().get(i, j));
        for i in 0..d - 1 {
            for j in 0..k - 1 {
                let minor = ratio.get(i, j) * ratio.get(i + 1, j + 1) - ratio.get(i, j + 1) * ratio.get(i + 1, j);
                prop_assert!(minor.abs() <= 1e-9, "minor {minor}");
            }
        }
    }

    #[test]
    fn rank_one_matches_constant_higher_rank((n, d, k, _, seed) in dims(), wide in 2usize..6) {
        let mut g = rng(seed);
        let wide = wide.min(d.min(k));
        let s1 = random_hut_state(&mut g, d, k, 1).unwrap();
        let x = gaussian_with(n, d, 0.0, 1.0, &mut g).unwrap();
        let ma = DenseMatrix::from_fn(d, wide, |i, _| s1.ma.get(i, 0));
        let mb = DenseMatrix::from_fn(wide, k, |_, j| s1.mb.get(0, j));
        let sr = HutAdapterState::from_parts(s1.w0().clone(), ma, mb, s1.gamma.clone(), s1.beta.clone()).unwrap();
        prop_assert!(relative_error(&sr.forward(&x).unwrap(), &s1.forward(&x).unwrap()) <= 1e-14);
    }

    #[test]
    fn lora_increment_is_linear_in_x((n, d, k, r, seed) in dims(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut g = rng(seed);
        let s = random_lora_state(&mut g, d, k, r).unwrap();
        let x1 = gaussian_with(n, d, 0.0, 1.0, &mut g).unwrap();
        let x2 = gaussian_with(n, d, 0.0, 1.0, &mut g).unwrap();
        let delta = |x: &DenseMatrix| s.forward(x).unwrap().sub(&x.matmul(s.base_weight()).unwrap()).unwrap();
        let mixed = x1.scale(a).add(&x2.scale(b)).unwrap();
        let expected = delta(&x1).scale(a).add(&delta(&x2).scale(b)).unwrap();
        prop_assert!(relative_error(&delta(&mixed), &expected) <= 1e-10);
    }

    #[test]
    fn param_counts_match_enumerated_state((_, d, k, r, seed) in dims()) {
        let h = random_hut_state(&mut rng(seed), d, k, r).unwrap();
        let l = random_lora_state(&mut rng(seed), d, k, r).unwrap();
        prop_assert_eq!(h.num_trainable(), adapter_param_count(Method::Hut, d, k, r));
        prop_assert_eq!(h.num_trainable(), d * r + r * k + 2 * k);
        prop_assert_eq!(l.num_trainable(), d * r + r * k);
    }

    #[test]
    fn delta_is_difference_for_any_n(n in 1usize..50, d in 1usize..200, r in 1usize..20) {
        let lhs = flops_lora(n, d, d, r).unwrap() as i128 - flops_hut(n, d, d, r).unwrap() as i128;
        prop_assert_eq!(delta_flops(d, r), lhs);
    }
}

#[test]
fn implicit_ones_match_explicit_products() {
    let mut g = rng(11);
    let ma = gaussian_with(5, 3, 0.0, 1.0, &mut g).unwrap();
    let mb = gaussian_with(3, 5, 0.0, 1.0, &mut g).unwrap();
    let k = 4;
    let via_ones = ma.matmul(&DenseMatrix::ones(3, k)).unwrap().scale(1.0 / 3.0);
    let mean = ma.row_mean();
    for i in 0..5 {
        for j in 0..k {
            assert!((via_ones.get(i, j) - mean.get(i, 0)).abs() <= 1e-15);
        }
    }
    let via_ones = DenseMatrix::ones(k, 3).matmul(&mb).unwrap().scale(1.0 / 3.0);
    let mean = mb.col_mean();
    for i in 0..k {
        for j in 0..5 {
            assert!((via_ones.get(i, j) - mean.get(0, j)).abs() <= 1e-15);
        }
    }
}

#[test]
fn nested_scope_is_rejected() {
    let _outer = FlopScope::begin().unwrap();
    assert!(FlopScope::begin().is_err());
}
