//! Executors against the unscheduled bound operators, counters against the
//! closed-form cost functions.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tverify_core::relax::{compose_elementwise, exp_lines, propagate_affine, relu_lines, tanh_lines, LinePair};
use tverify_core::{concretize, input_bounds, ElementwiseLinearRelaxation, LinearBounds, Norm, PerturbationSpec, Tensor};
use tverify_machine::*;

fn random_bounds(rng: &mut ChaCha8Rng, shape: Vec<usize>, norm: Norm, eps: f64) -> (LinearBounds<f64>, PerturbationSpec) {
    let n: usize = shape.iter().product();
    let x = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let spec = PerturbationSpec::new(norm, eps, n).unwrap();
    let b = input_bounds(&x, &spec).unwrap();
    // mix the identity rows so bounds have dense, distinct sides
    let w = Tensor::from_fn(vec![x.last_dim(), x.last_dim()], |_| rng.random_range(-1.0..1.0));
    (propagate_affine(&b, &w, None).unwrap(), spec)
}

fn pick(rng: &mut ChaCha8Rng, options: &[u64]) -> u64 {
    options[rng.random_range(0..options.len())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gemm_matches_affine_and_halves_traffic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let meta = HardwareMeta::a100_like();
        let (rows, k, m) = (rng.random_range(1..4), rng.random_range(1..12), rng.random_range(1..12));
        let (x, _) = random_bounds(&mut rng, vec![rows, k], Norm::Linf, 0.1);
        let w = Tensor::from_fn(vec![m, k], |_| rng.random_range(-1.0..1.0));
        let b = Tensor::from_fn(vec![m], |_| rng.random_range(-1.0..1.0));
        let (rm, rn) = (pick(&mut rng, &[1, 2]), pick(&mut rng, &[1, 2, 4]));
        let g = GemmSchedule::new(rm * pick(&mut rng, &[2, 4, 8]), rn * pick(&mut rng, &[2, 4]), pick(&mut rng, &[1, 3, 8]), rm, rn);
        let want = propagate_affine(&x, &w, Some(&b)).unwrap();
        let (fused, fr) = run_gemm(&g, &meta, &w, Some(&b), &x).unwrap();
        let (naive, nr) = run_gemm_naive(&g, &meta, &w, Some(&b), &x).unwrap();
        for y in [&fused, &naive] {
            prop_assert!(y.lb().max_abs_diff(want.lb()) <= 1e-9);
            prop_assert!(y.ub().max_abs_diff(want.ub()) <= 1e-9);
            prop_assert!(y.lw().max_abs_diff(want.lw()) <= 1e-9);
            prop_assert!(y.uw().max_abs_diff(want.uw()) <= 1e-9);
        }
        let wl = gemm_workload(&w, true, &x).unwrap();
        prop_assert_eq!(&fr, &gemm_cost(&g, &wl, &meta, 8).unwrap());
        prop_assert_eq!(&nr, &naive_gemm_cost(&g, &wl, &meta, 8).unwrap());
        prop_assert_eq!(2 * fr.weight_loads(), nr.weight_loads());
        prop_assert_eq!(2 * fr.bound_loads(), nr.bound_loads());
    }

    #[test]
    fn reduction_matches_sequential_sum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let meta = HardwareMeta::v100_like();
        let rows = rng.random_range(1..6);
        let n = rng.random_range(1..300);
        let x = Tensor::from_fn(vec![rows, n], |_| rng.random_range(-2.0..2.0));
        let sq = |v: f64| v * v;
        let want: Vec<f64> = x.data().chunks(n).map(|r| r.iter().map(|&v| sq(v)).sum()).collect();
        let mut modes = vec![ReductionMode::Sequential, ReductionMode::Hybrid];
        if n == 32 {
            modes.push(ReductionMode::Parallel32);
        }
        for mode in modes {
            let (y, r) = run_reduction(mode, &meta, &x, sq).unwrap();
            for (a, b) in y.data().iter().zip(&want) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
            prop_assert_eq!(&r, &reduction_cost(mode, rows as u64, n as u64, &meta, 8).unwrap());
        }
        let (y, r) = run_reduction_naive(&meta, &x, sq, Combine::Sum).unwrap();
        for (a, b) in y.data().iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        prop_assert_eq!(&r, &naive_reduction_cost(rows as u64, n as u64, &meta));
    }

    #[test]
    fn elementwise_matches_compose(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let meta = HardwareMeta::a100_like();
        let norm = [Norm::Linf, Norm::L2, Norm::L1][rng.random_range(0..3)];
        let shape = vec![rng.random_range(1..4), rng.random_range(1..8)];
        let eps = rng.random_range(0.0..0.5);
        let (x, spec) = random_bounds(&mut rng, shape, norm, eps);
        let t = pick(&mut rng, &[32, 64, 128, 256]);
        let lines: [fn(f64, f64) -> LinePair<f64>; 3] = [relu_lines, tanh_lines, exp_lines];
        let producer = lines[rng.random_range(0..3)];
        let c = concretize(&x, &spec);
        let want = compose_elementwise(&x, &ElementwiseLinearRelaxation::from_intervals(&c, producer)).unwrap();
        let (y, r) = run_elementwise(t, &meta, &x, &spec, producer).unwrap();
        let (yn, rn) = run_elementwise_naive(&meta, &x, &spec, producer).unwrap();
        for got in [&y, &yn] {
            prop_assert!(got.lb().max_abs_diff(want.lb()) <= 1e-9);
            prop_assert!(got.ub().max_abs_diff(want.ub()) <= 1e-9);
            prop_assert!(got.lw().max_abs_diff(want.lw()) <= 1e-9);
            prop_assert!(got.uw().max_abs_diff(want.uw()) <= 1e-9);
        }
        let (neurons, dim) = (x.neurons() as u64, x.dim() as u64);
        prop_assert_eq!(&r, &elementwise_cost(t, neurons, dim, &meta, 8));
        prop_assert_eq!(&rn, &naive_elementwise_cost(neurons, dim, &meta));
        prop_assert_eq!(r.bound_loads(), 2 * neurons * (dim + 1));
    }

    #[test]
    fn scalar_vector_matches_double_loop(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let meta = HardwareMeta::a100_like();
        let (m, n) = (rng.random_range(1..8), rng.random_range(1..200));
        let s = Tensor::from_fn(vec![m], |_| rng.random_range(-2.0..2.0));
        let x = Tensor::from_fn(vec![m, n], |_| rng.random_range(-2.0..2.0));
        let t = pick(&mut rng, &[1, 2, 4]);
        let (y, r) = run_scalar_vector(t, &meta, &s, &x, |v| v * v).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = s.data()[i] * s.data()[i] * x.data()[i * n + j];
                prop_assert!((y.data()[i * n + j] - want).abs() <= 1e-12);
            }
        }
        prop_assert_eq!(r.operand(operand::SCALARS), m as u64);
        prop_assert_eq!(r.shared_accesses, if t > 1 { m as u64 * t } else { 0 });
        prop_assert_eq!(&r, &scalar_vector_cost(t, m as u64, n as u64, &meta, 8));
    }

    #[test]
    fn hybrid_never_slower_than_sequential(n in 32u64..100_000) {
        prop_assert!(
            reduction_iterations(ReductionMode::Hybrid, n).unwrap()
                <= reduction_iterations(ReductionMode::Sequential, n).unwrap()
        );
    }
}

#[test]
fn iteration_formulas_exact() {
    assert_eq!(reduction_iterations(ReductionMode::Parallel32, 32).unwrap(), 5);
    for k in [1, 2, 4, 32] {
        assert_eq!(reduction_iterations(ReductionMode::Hybrid, 32 * k).unwrap(), k + 5);
        assert_eq!(naive_chunked_iterations(32 * k), 6 * k);
    }
    for n in [1, 7, 32, 1000] {
        assert_eq!(reduction_iterations(ReductionMode::Sequential, n).unwrap(), n);
    }
}

#[test]
fn gemm_8x8x8_random_problem() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let meta = HardwareMeta::a100_like();
    let (x, _) = random_bounds(&mut rng, vec![1, 8], Norm::L2, 0.2);
    let w = Tensor::from_fn(vec![8, 8], |_| rng.random_range(-1.0..1.0));
    let want = propagate_affine(&x, &w, None).unwrap();
    let (y, r) = run_gemm(&GemmSchedule::new(8, 8, 8, 1, 1), &meta, &w, None, &x).unwrap();
    assert!(y.lw().max_abs_diff(want.lw()) <= 1e-9 && y.uw().max_abs_diff(want.uw()) <= 1e-9);
    assert_eq!(r.weight_loads(), 64);
    // k = 8 inputs, n = 9 columns (bias and 8 perturbation weights) per side
    assert_eq!(r.bound_loads(), 2 * 8 * 9);
}

#[test]
fn reports_are_deterministic() {
    let meta = HardwareMeta::v100_like();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, spec) = random_bounds(&mut rng, vec![3, 6], Norm::Linf, 0.05);
    let w = Tensor::from_fn(vec![5, 6], |_| rng.random_range(-1.0..1.0));
    let g = GemmSchedule::new(4, 4, 2, 2, 2);
    let a = run_gemm(&g, &meta, &w, None, &x).unwrap();
    let b = run_gemm(&g, &meta, &w, None, &x).unwrap();
    assert_eq!(a, b);
    let a = run_elementwise(64, &meta, &x, &spec, tanh_lines).unwrap();
    let b = run_elementwise(64, &meta, &x, &spec, tanh_lines).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shipped_metafiles_load_from_disk() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("metafiles");
    assert_eq!(HardwareMeta::load(dir.join("a100-like.json")).unwrap(), HardwareMeta::a100_like());
    assert_eq!(HardwareMeta::load(dir.join("v100-like.json")).unwrap(), HardwareMeta::v100_like());
    let tmp = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(tmp.path(), "{\"warp_size\": 32}").unwrap();
    let err = HardwareMeta::load(tmp.path()).unwrap_err().to_string();
    assert!(err.contains(&tmp.path().display().to_string()));
}
