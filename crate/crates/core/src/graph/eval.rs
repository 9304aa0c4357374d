//! Graph evaluation over linear bounds.

use super::{NodeId, OpKind, VerGraph};
use crate::bounds::{concretize, BoundSide, LinearBounds, LinearForm, PerturbationSpec};
use crate::error::{Error, Result};
use crate::relax::{
    compose_elementwise, propagate_affine, propagate_dot_product, propagate_matmul, propagate_mul,
    propagate_softmax, relax_exp, relax_recip, Activation,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

enum Value<S> {
    Weight(Tensor<S>),
    Form(LinearForm<S>),
    Bounds(LinearBounds<S>),
}

fn axpy<S: Scalar>(out: &mut [S], a: S, x: &[S]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// `y[.., j] = sum_i w[j, i] x[.., i]` for one linear form, in `i` order.
fn form_matmul<S: Scalar>(x: &LinearForm<S>, w: &Tensor<S>) -> LinearForm<S> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let rows = x.neurons() / in_dim;
    let d = x.dim();
    let mut bias = Vec::with_capacity(rows * out_dim);
    let mut weights = vec![S::zero(); rows * out_dim * d];
    for r in 0..rows {
        for j in 0..out_dim {
            let o = r * out_dim + j;
            let mut b = S::zero();
            let row = &mut weights[o * d..(o + 1) * d];
            for (i, &wv) in w.row(j).iter().enumerate() {
                b += wv * x.bias.data()[r * in_dim + i];
                axpy(row, wv, x.row(r * in_dim + i));
            }
            bias.push(b);
        }
    }
    let mut shape = x.neuron_shape().to_vec();
    *shape.last_mut().unwrap() = out_dim;
    LinearForm::from_raw(shape, d, bias, weights)
}

/// Sign-split product read from one weight: nonnegative entries multiply
/// `pos_src`, negative entries `neg_src`; the two partial sums are added last.
fn split_form<S: Scalar>(pos_src: &LinearForm<S>, neg_src: &LinearForm<S>, w: &Tensor<S>) -> LinearForm<S> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let rows = pos_src.neurons() / in_dim;
    let d = pos_src.dim();
    let mut bias = Vec::with_capacity(rows * out_dim);
    let mut weights = Vec::with_capacity(rows * out_dim * d);
    let mut pos = vec![S::zero(); d];
    let mut neg = vec![S::zero(); d];
    for r in 0..rows {
        for j in 0..out_dim {
            pos.iter_mut().chain(neg.iter_mut()).for_each(|v| *v = S::zero());
            let (mut pb, mut nb) = (S::zero(), S::zero());
            for (i, &wv) in w.row(j).iter().enumerate() {
                let n = r * in_dim + i;
                if wv >= S::zero() {
                    pb += wv * pos_src.bias.data()[n];
                    axpy(&mut pos, wv, pos_src.row(n));
                } else {
                    nb += wv * neg_src.bias.data()[n];
                    axpy(&mut neg, wv, neg_src.row(n));
                }
            }
            bias.push(pb + nb);
            weights.extend(pos.iter().zip(&neg).map(|(&p, &q)| p + q));
        }
    }
    let mut shape = pos_src.neuron_shape().to_vec();
    *shape.last_mut().unwrap() = out_dim;
    LinearForm::from_raw(shape, d, bias, weights)
}

fn with_bias<S: Scalar>(b: LinearBounds<S>, bias: Option<&Tensor<S>>) -> Result<LinearBounds<S>> {
    match bias {
        Some(t) => b.shift(t),
        None => Ok(b),
    }
}

fn split_heads_index(pre: usize, len: usize, heads: usize, hd: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(pre * len * heads * hd);
    for t in 0..pre {
        for h in 0..heads {
            for l in 0..len {
                for k in 0..hd {
                    index.push((t * len + l) * heads * hd + h * hd + k);
                }
            }
        }
    }
    index
}

fn merge_heads_index(pre: usize, len: usize, heads: usize, hd: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(pre * len * heads * hd);
    for t in 0..pre {
        for l in 0..len {
            for h in 0..heads {
                for k in 0..hd {
                    index.push(((t * heads + h) * len + l) * hd + k);
                }
            }
        }
    }
    index
}

fn mean_pool<S: Scalar>(x: &LinearBounds<S>) -> LinearBounds<S> {
    let ns = x.neuron_shape();
    let (len, e) = (ns[ns.len() - 2], ns[ns.len() - 1]);
    let pre: usize = ns[..ns.len() - 2].iter().product();
    let d = x.dim();
    let n = S::lit(len as f64);
    let pool = |f: &LinearForm<S>| {
        let mut bias = Vec::with_capacity(pre * e);
        let mut weights = Vec::with_capacity(pre * e * d);
        let mut acc = vec![S::zero(); d];
        for t in 0..pre {
            for c in 0..e {
                acc.iter_mut().for_each(|v| *v = S::zero());
                let mut b = S::zero();
                for l in 0..len {
                    let i = (t * len + l) * e + c;
                    b += f.bias.data()[i];
                    axpy(&mut acc, S::one(), f.row(i));
                }
                bias.push(b / n);
                weights.extend(acc.iter().map(|&v| v / n));
            }
        }
        let mut shape = ns[..ns.len() - 2].to_vec();
        shape.push(e);
        LinearForm::from_raw(shape, d, bias, weights)
    };
    LinearBounds {
        lower: pool(&x.lower),
        upper: pool(&x.upper),
    }
}

fn eval_node<S: Scalar>(kind: &OpKind<S>, args: &[&Value<S>], spec: &PerturbationSpec) -> Result<Value<S>> {
    let weight = |k: usize| match args[k] {
        Value::Weight(w) => w,
        _ => unreachable!("shape inference admits only weights here"),
    };
    let form = |k: usize| match args[k] {
        Value::Form(f) => f,
        _ => unreachable!("shape inference admits only forms here"),
    };
    let bounds = |k: usize| match args[k] {
        Value::Bounds(b) => b,
        _ => unreachable!("shape inference admits only bounds here"),
    };
    let opt_weight = |k: usize| args.get(k).map(|_| weight(k));
    let activation = |a: Activation| -> Result<Value<S>> {
        let x = bounds(0);
        let r = a.relax(&concretize(x, spec));
        Ok(Value::Bounds(compose_elementwise(x, &r)?))
    };
    Ok(match kind {
        OpKind::Input { .. } => unreachable!("inputs are bound before evaluation"),
        OpKind::Weight { value } => Value::Weight(value.clone()),
        OpKind::SplitPos => Value::Weight(weight(0).map(|v| v.max(S::zero()))),
        OpKind::SplitNeg => Value::Weight(weight(0).map(|v| v.min(S::zero()))),
        OpKind::MatMulHalf { side } => Value::Form(form_matmul(bounds(1).side(*side), weight(0))),
        OpKind::FormAdd => Value::Form(form(0).add(form(1))?),
        OpKind::Pack => {
            let b = LinearBounds::from_forms(form(0).clone(), form(1).clone())?;
            Value::Bounds(with_bias(b, opt_weight(2))?)
        }
        OpKind::SideGemm { side } => {
            let x = bounds(1);
            Value::Form(match side {
                BoundSide::Upper => split_form(&x.upper, &x.lower, weight(0)),
                BoundSide::Lower => split_form(&x.lower, &x.upper, weight(0)),
            })
        }
        OpKind::SplitAffine => {
            let (wp, wn, x) = (weight(0), weight(1), bounds(2));
            let lower = form_matmul(&x.lower, wp).add(&form_matmul(&x.upper, wn))?;
            let upper = form_matmul(&x.upper, wp).add(&form_matmul(&x.lower, wn))?;
            Value::Bounds(with_bias(LinearBounds { lower, upper }, opt_weight(3))?)
        }
        OpKind::Affine => Value::Bounds(propagate_affine(bounds(1), weight(0), opt_weight(2))?),
        OpKind::Relu => activation(Activation::Relu)?,
        OpKind::Tanh => activation(Activation::Tanh)?,
        OpKind::Silu => activation(Activation::Silu)?,
        OpKind::Exp => {
            let x = bounds(0);
            Value::Bounds(compose_elementwise(x, &relax_exp(&concretize(x, spec)))?)
        }
        OpKind::Recip => {
            let x = bounds(0);
            Value::Bounds(compose_elementwise(x, &relax_recip(&concretize(x, spec))?)?)
        }
        OpKind::Add => Value::Bounds(bounds(0).add(bounds(1))?),
        OpKind::Scale { factor } => Value::Bounds(bounds(0).scale(S::lit(*factor))),
        OpKind::Mul => Value::Bounds(propagate_mul(bounds(0), bounds(1), spec)?),
        OpKind::MatMulBilinear { transpose_b: true } => {
            Value::Bounds(propagate_dot_product(bounds(0), bounds(1), spec)?)
        }
        OpKind::MatMulBilinear { transpose_b: false } => {
            Value::Bounds(propagate_matmul(bounds(0), bounds(1), spec)?)
        }
        OpKind::Softmax => Value::Bounds(propagate_softmax(bounds(0), spec)?),
        OpKind::SplitHeads { heads } => {
            let x = bounds(0);
            let ns = x.neuron_shape();
            let (len, e) = (ns[ns.len() - 2], ns[ns.len() - 1]);
            let pre: usize = ns[..ns.len() - 2].iter().product();
            let hd = e / heads;
            let mut shape = ns[..ns.len() - 2].to_vec();
            shape.extend([*heads, len, hd]);
            Value::Bounds(x.gather(shape, &split_heads_index(pre, len, *heads, hd)))
        }
        OpKind::MergeHeads => {
            let x = bounds(0);
            let ns = x.neuron_shape();
            let (heads, len, hd) = (ns[ns.len() - 3], ns[ns.len() - 2], ns[ns.len() - 1]);
            let pre: usize = ns[..ns.len() - 3].iter().product();
            let mut shape = ns[..ns.len() - 3].to_vec();
            shape.extend([len, heads * hd]);
            Value::Bounds(x.gather(shape, &merge_heads_index(pre, len, heads, hd)))
        }
        OpKind::MeanPool => Value::Bounds(mean_pool(bounds(0))),
    })
}

/// Fusion groups in an order where every group runs after the groups it
/// reads from; ties go to the smallest first member.
fn group_order<S: Scalar>(g: &VerGraph<S>) -> Vec<usize> {
    let of = g.group_of();
    let k = g.fusion_groups.len();
    let mut indegree = vec![0usize; k];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (id, node) in g.nodes.iter().enumerate() {
        for &p in &node.inputs {
            if of[p] != of[id] {
                succ[of[p]].push(of[id]);
                indegree[of[id]] += 1;
            }
        }
    }
    let mut ready: std::collections::BTreeSet<(NodeId, usize)> = (0..k)
        .filter(|&i| indegree[i] == 0)
        .map(|i| (g.fusion_groups[i][0], i))
        .collect();
    let mut order = Vec::with_capacity(k);
    while let Some(first) = ready.pop_first() {
        let gi = first.1;
        order.push(gi);
        for &s in &succ[gi] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.insert((g.fusion_groups[s][0], s));
            }
        }
    }
    order
}

/// Evaluates the graph with `inputs` bound to the input nodes in order and
/// returns the bounds of every output. Fusion groups run in dependency
/// order; values are dropped once their last consumer has run.
pub fn evaluate_all<S: Scalar>(
    g: &VerGraph<S>,
    inputs: &[LinearBounds<S>],
    spec: &PerturbationSpec,
) -> Result<Vec<LinearBounds<S>>> {
    let shapes = g.shapes()?;
    let input_ids = g.input_ids();
    if input_ids.len() != inputs.len() {
        return Err(Error::Graph(format!(
            "graph has {} inputs, {} were bound",
            input_ids.len(),
            inputs.len()
        )));
    }
    let mut values: Vec<Option<Value<S>>> = (0..g.len()).map(|_| None).collect();
    for (&id, b) in input_ids.iter().zip(inputs) {
        if b.neuron_shape() != shapes[id].dims() || b.dim() != spec.dim {
            return Err(Error::Graph(format!(
                "input {:?} expects neurons {:?} over {} dimensions, got {:?} over {}",
                g.nodes[id].name,
                shapes[id].dims(),
                spec.dim,
                b.neuron_shape(),
                b.dim()
            )));
        }
        values[id] = Some(Value::Bounds(b.clone()));
    }
    let mut remaining = g.consumer_counts();
    for gi in group_order(g) {
        for &id in &g.fusion_groups[gi] {
            let node = &g.nodes[id];
            if !matches!(node.kind, OpKind::Input { .. }) {
                let args: Vec<&Value<S>> = node
                    .inputs
                    .iter()
                    .map(|&i| values[i].as_ref().expect("producers run first"))
                    .collect();
                let v = eval_node(&node.kind, &args, spec)
                    .map_err(|e| Error::Graph(format!("evaluating {:?}: {e}", node.name)))?;
                values[id] = Some(v);
            }
            for &i in &node.inputs {
                remaining[i] -= 1;
                if remaining[i] == 0 {
                    values[i] = None;
                }
            }
        }
    }
    g.outputs
        .iter()
        .map(|&o| match values[o].take() {
            Some(Value::Bounds(b)) => Ok(b),
            Some(_) => Err(Error::Graph(format!("output {:?} is not a bound tensor", g.nodes[o].name))),
            None => Err(Error::Graph(format!("output {:?} listed twice", g.nodes[o].name))),
        })
        .collect()
}

/// Evaluates a single-output graph.
pub fn evaluate<S: Scalar>(g: &VerGraph<S>, inputs: &[LinearBounds<S>], spec: &PerturbationSpec) -> Result<LinearBounds<S>> {
    if g.outputs.len() != 1 {
        return Err(Error::Graph(format!("expected one output, graph has {}", g.outputs.len())));
    }
    Ok(evaluate_all(g, inputs, spec)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{input_bounds, Norm};
    use crate::graph::{fuse_all, fuse_double_bound, fuse_weight_pairing};

    fn t(shape: Vec<usize>, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(shape, f)
    }

    #[test]
    fn single_affine_node_matches_direct_call() {
        let w = t(vec![3, 4], |k| (k as f64 * 1.3).sin());
        let b = t(vec![3], |k| k as f64 - 1.0);
        let mut g = VerGraph::new();
        let x = g.input("x", vec![2, 4]).unwrap();
        let wi = g.weight("w", w.clone()).unwrap();
        let bi = g.weight("b", b.clone()).unwrap();
        let y = g.add("y", OpKind::Affine, vec![wi, x, bi]).unwrap();
        g.set_outputs(vec![y]).unwrap();
        let spec = PerturbationSpec::new(Norm::Linf, 0.1, 8).unwrap();
        let xin = input_bounds(&t(vec![2, 4], |k| k as f64 * 0.1), &spec).unwrap();
        let got = evaluate(&g, std::slice::from_ref(&xin), &spec).unwrap();
        assert_eq!(got, propagate_affine(&xin, &w, Some(&b)).unwrap());
    }

    #[test]
    fn every_projection_form_agrees_exactly() {
        let mut g = VerGraph::new();
        let x = g.input("x", vec![3, 5]).unwrap();
        let r = g.add("r", OpKind::Tanh, vec![x]).unwrap();
        let y = g
            .projection("p", r, t(vec![4, 5], |k| (k as f64 * 0.71).cos()), Some(t(vec![4], |k| k as f64)))
            .unwrap();
        g.set_outputs(vec![y]).unwrap();
        let spec = PerturbationSpec::new(Norm::L2, 0.3, 15).unwrap();
        let xin = input_bounds(&t(vec![3, 5], |k| (k as f64).sin()), &spec).unwrap();
        let base = evaluate(&g, std::slice::from_ref(&xin), &spec).unwrap();
        for h in [fuse_weight_pairing(&g), fuse_double_bound(&g), fuse_all(&g)] {
            assert_eq!(evaluate(&h, std::slice::from_ref(&xin), &spec).unwrap(), base);
        }
    }

    #[test]
    fn head_split_and_merge_are_inverse() {
        let mut g = VerGraph::new();
        let x = g.input("x", vec![1, 3, 4]).unwrap();
        let h = g.add("h", OpKind::SplitHeads { heads: 2 }, vec![x]).unwrap();
        let m = g.add("m", OpKind::MergeHeads, vec![h]).unwrap();
        g.set_outputs(vec![m]).unwrap();
        let spec = PerturbationSpec::new(Norm::Linf, 0.1, 12).unwrap();
        let xin = input_bounds(&t(vec![1, 3, 4], |k| k as f64), &spec).unwrap();
        assert_eq!(evaluate(&g, std::slice::from_ref(&xin), &spec).unwrap(), xin);
    }

    #[test]
    fn input_binding_is_checked() {
        let mut g = VerGraph::<f64>::new();
        let x = g.input("x", vec![2]).unwrap();
        g.set_outputs(vec![x]).unwrap();
        let spec = PerturbationSpec::new(Norm::Linf, 0.1, 3).unwrap();
        let xin = input_bounds(&t(vec![3], |_| 0.0), &spec).unwrap();
        assert!(evaluate(&g, &[xin], &spec).is_err());
        assert!(evaluate(&g, &[], &spec).is_err());
    }
}
