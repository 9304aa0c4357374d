//! Fusion passes on random graphs: semantics, idempotence and legality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tverify_core::graph::{
    can_fuse, fuse_all, fuse_cross_layer, fuse_double_bound, fuse_weight_pairing, NodeId, OpCategory, OpKind,
};
use tverify_core::{evaluate, input_bounds, Norm, PerturbationSpec, Tensor, VerGraph};

fn random_graph(rng: &mut ChaCha8Rng) -> (VerGraph<f64>, Tensor<f64>) {
    let rows = rng.random_range(1..=3);
    let n = rng.random_range(2..=5);
    let mut g = VerGraph::new();
    let x = g.input("x", vec![rows, n]).unwrap();
    let mut live: Vec<NodeId> = vec![x];
    let steps = rng.random_range(3..=10);
    for s in 0..steps {
        let cur = *live.last().unwrap();
        let name = format!("n{s}");
        let weight = |rng: &mut ChaCha8Rng, o: usize, i: usize| {
            Tensor::from_fn(vec![o, i], |_| rng.random_range(-0.8..0.8))
        };
        let id = match rng.random_range(0..10) {
            0..=2 => {
                let w = weight(rng, n, n);
                let b = rng.random_bool(0.5).then(|| Tensor::from_fn(vec![n], |k| k as f64 * 0.1));
                g.projection(&name, cur, w, b).unwrap()
            }
            3 => g.add(&name, OpKind::Relu, vec![cur]).unwrap(),
            4 => g.add(&name, OpKind::Tanh, vec![cur]).unwrap(),
            5 => {
                let other = live[rng.random_range(0..live.len())];
                g.add(&name, OpKind::Add, vec![cur, other]).unwrap()
            }
            6 => g.add(&name, OpKind::Scale { factor: rng.random_range(-2.0..2.0) }, vec![cur]).unwrap(),
            7 => {
                let other = live[rng.random_range(0..live.len())];
                g.add(&name, OpKind::Mul, vec![cur, other]).unwrap()
            }
            8 => g.add(&name, OpKind::Softmax, vec![cur]).unwrap(),
            _ => {
                let e = g.add(format!("{name}.exp"), OpKind::Exp, vec![cur]).unwrap();
                g.add(&name, OpKind::Recip, vec![e]).unwrap()
            }
        };
        live.push(id);
    }
    let out = *live.last().unwrap();
    g.set_outputs(vec![out]).unwrap();
    let x = Tensor::from_fn(vec![rows, n], |_| rng.random_range(-1.0..1.0));
    (g, x)
}

fn max_gap(a: &tverify_core::LinearBounds<f64>, b: &tverify_core::LinearBounds<f64>) -> f64 {
    [
        a.lb().max_abs_diff(b.lb()),
        a.ub().max_abs_diff(b.ub()),
        a.lw().max_abs_diff(b.lw()),
        a.uw().max_abs_diff(b.uw()),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[test]
fn fused_graphs_agree_with_unfused_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (g, x) = random_graph(&mut rng);
        let spec = PerturbationSpec::new(Norm::Linf, 0.05, x.len()).unwrap();
        let inputs = [input_bounds(&x, &spec).unwrap()];
        let base = evaluate(&g, &inputs, &spec).unwrap();
        for f in [fuse_weight_pairing(&g), fuse_double_bound(&g), fuse_cross_layer(&g), fuse_all(&g)] {
            let got = evaluate(&f, &inputs, &spec).unwrap();
            assert!(max_gap(&base, &got) <= 1e-9);
        }
    }
}

#[test]
fn passes_are_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (g, _) = random_graph(&mut rng);
        for pass in [fuse_weight_pairing, fuse_double_bound, fuse_cross_layer, fuse_all] {
            let once = pass(&g);
            assert_eq!(pass(&once), once);
        }
    }
}

#[test]
fn groups_never_put_reduction_after_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (g, _) = random_graph(&mut rng);
        let f = fuse_all(&g);
        let mut covered = vec![0; f.len()];
        for group in f.fusion_groups() {
            let mut seen_dense = false;
            for &m in group {
                covered[m] += 1;
                let c = f.categorize(m);
                assert!(!(seen_dense && c == OpCategory::InputReductionCompute));
                seen_dense |= c == OpCategory::DenseComputation;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }
}

#[test]
fn legality_table() {
    use OpCategory::*;
    let cases = [
        (DenseComputation, StrictElementwise, true),
        (DenseComputation, InputReductionCompute, false),
        (DenseComputation, DenseComputation, false),
        (InputReductionCompute, StrictElementwise, true),
        (InputReductionCompute, InputReductionCompute, false),
        (InputReductionCompute, DenseComputation, false),
        (StrictElementwise, StrictElementwise, true),
        (StrictElementwise, InputReductionCompute, false),
        (StrictElementwise, DenseComputation, false),
    ];
    for (p, c, want) in cases {
        assert_eq!(can_fuse(p, c), want, "{p:?} -> {c:?}");
    }
}

#[test]
fn multi_consumer_edges_block_fusion() {
    let mut g = VerGraph::<f64>::new();
    let x = g.input("x", vec![3]).unwrap();
    let w = g.weight("w", Tensor::from_fn(vec![3, 3], |k| k as f64)).unwrap();
    let a = g.add("a", OpKind::Affine, vec![w, x]).unwrap();
    let s1 = g.add("s1", OpKind::Scale { factor: 2.0 }, vec![a]).unwrap();
    let s2 = g.add("s2", OpKind::Scale { factor: 3.0 }, vec![a]).unwrap();
    let y = g.add("y", OpKind::Add, vec![s1, s2]).unwrap();
    g.set_outputs(vec![y]).unwrap();
    let of = fuse_cross_layer(&g).group_of();
    assert_ne!(of[a], of[s1]);
    assert_ne!(of[a], of[s2]);
    assert_eq!(of[s1], of[y]);
}
