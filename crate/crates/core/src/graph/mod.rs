//! Verification computation graph.
//!
//! Nodes are stored in topological order: every input id is smaller than the
//! id of the node consuming it. Three kinds of values flow along edges:
//! constant weights, single linear forms (one bound side) and full linear
//! bounds.

mod eval;
mod fuse;
mod json;

pub use json::GRAPH_FORMAT;

pub use eval::{evaluate, evaluate_all};
pub use fuse::{can_fuse, fuse_all, fuse_cross_layer, fuse_double_bound, fuse_weight_pairing};

use crate::bounds::BoundSide;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Fusion-relevant operator category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpCategory {
    /// Reduces or concretizes its input before computing (activations,
    /// softmax, products of two bounded tensors, pooling).
    InputReductionCompute,
    /// Pure per-element arithmetic or data movement.
    StrictElementwise,
    /// Matrix products.
    DenseComputation,
}

impl OpCategory {
    pub fn name(self) -> &'static str {
        match self {
            OpCategory::InputReductionCompute => "input_reduction_compute",
            OpCategory::StrictElementwise => "strict_elementwise",
            OpCategory::DenseComputation => "dense_computation",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind<S> {
    /// Bounded graph input, bound positionally at evaluation.
    Input { shape: Vec<usize> },
    /// Constant parameter.
    Weight { value: Tensor<S> },
    /// `max(w, 0)` of a weight.
    SplitPos,
    /// `min(w, 0)` of a weight.
    SplitNeg,
    /// `(part, x)`: `part . x.side` along the last axis, one linear form.
    MatMulHalf { side: BoundSide },
    /// Sum of two linear forms.
    FormAdd,
    /// `(lower, upper[, bias])` forms to bounds.
    Pack,
    /// `(w, x)`: one output side of the sign-split product, reading `w` once.
    SideGemm { side: BoundSide },
    /// `(w_pos, w_neg, x[, bias])`: both sides in one pass over `x`.
    SplitAffine,
    /// `(w, x[, bias])`: both sides, `w` and `x` each read once.
    Affine,
    Relu,
    Tanh,
    Silu,
    Exp,
    Recip,
    Add,
    Scale { factor: f64 },
    /// Elementwise product of two bounded tensors.
    Mul,
    /// `a [.., m, k] x b [.., k, n]`, or `a b^T` when `transpose_b`.
    MatMulBilinear { transpose_b: bool },
    /// Over the last axis.
    Softmax,
    /// `[.., len, heads*hd] -> [.., heads, len, hd]`.
    SplitHeads { heads: usize },
    /// `[.., heads, len, hd] -> [.., len, heads*hd]`.
    MergeHeads,
    /// Mean over the second-to-last axis.
    MeanPool,
}

/// Every operator kind by its serialized name.
pub const KINDS: &[(&str, OpCategory)] = &[
    ("input", OpCategory::StrictElementwise),
    ("weight", OpCategory::StrictElementwise),
    ("split_pos", OpCategory::StrictElementwise),
    ("split_neg", OpCategory::StrictElementwise),
    ("matmul_half", OpCategory::DenseComputation),
    ("form_add", OpCategory::StrictElementwise),
    ("pack", OpCategory::StrictElementwise),
    ("side_gemm", OpCategory::DenseComputation),
    ("split_affine", OpCategory::DenseComputation),
    ("affine", OpCategory::DenseComputation),
    ("relu", OpCategory::InputReductionCompute),
    ("tanh", OpCategory::InputReductionCompute),
    ("silu", OpCategory::InputReductionCompute),
    ("exp", OpCategory::InputReductionCompute),
    ("recip", OpCategory::InputReductionCompute),
    ("add", OpCategory::StrictElementwise),
    ("scale", OpCategory::StrictElementwise),
    ("mul", OpCategory::InputReductionCompute),
    ("matmul_bilinear", OpCategory::DenseComputation),
    ("softmax", OpCategory::InputReductionCompute),
    ("split_heads", OpCategory::StrictElementwise),
    ("merge_heads", OpCategory::StrictElementwise),
    ("mean_pool", OpCategory::InputReductionCompute),
];

/// Category of a serialized operator kind.
pub fn categorize_kind(name: &str) -> Result<OpCategory> {
    KINDS
        .iter()
        .find(|(k, _)| *k == name)
        .map(|&(_, c)| c)
        .ok_or_else(|| Error::UnknownOp(name.to_string()))
}

impl<S> OpKind<S> {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input { .. } => "input",
            OpKind::Weight { .. } => "weight",
            OpKind::SplitPos => "split_pos",
            OpKind::SplitNeg => "split_neg",
            OpKind::MatMulHalf { .. } => "matmul_half",
            OpKind::FormAdd => "form_add",
            OpKind::Pack => "pack",
            OpKind::SideGemm { .. } => "side_gemm",
            OpKind::SplitAffine => "split_affine",
            OpKind::Affine => "affine",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Silu => "silu",
            OpKind::Exp => "exp",
            OpKind::Recip => "recip",
            OpKind::Add => "add",
            OpKind::Scale { .. } => "scale",
            OpKind::Mul => "mul",
            OpKind::MatMulBilinear { .. } => "matmul_bilinear",
            OpKind::Softmax => "softmax",
            OpKind::SplitHeads { .. } => "split_heads",
            OpKind::MergeHeads => "merge_heads",
            OpKind::MeanPool => "mean_pool",
        }
    }

    pub fn category(&self) -> OpCategory {
        categorize_kind(self.name()).expect("every kind is listed in KINDS")
    }

    /// Graph entry points, never fused with anything.
    pub fn is_source(&self) -> bool {
        matches!(self, OpKind::Input { .. } | OpKind::Weight { .. })
    }

    /// Accepted input counts.
    fn arity(&self) -> (usize, usize) {
        match self {
            OpKind::Input { .. } | OpKind::Weight { .. } => (0, 0),
            OpKind::Pack | OpKind::Affine => (2, 3),
            OpKind::SplitAffine => (3, 4),
            OpKind::MatMulHalf { .. }
            | OpKind::FormAdd
            | OpKind::SideGemm { .. }
            | OpKind::Add
            | OpKind::Mul
            | OpKind::MatMulBilinear { .. } => (2, 2),
            _ => (1, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node<S> {
    pub name: String,
    pub kind: OpKind<S>,
    pub inputs: Vec<NodeId>,
}

/// Shape of the value a node produces. Form and bound shapes are neuron
/// shapes; the perturbation dimension is fixed at evaluation time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValueShape {
    Weight(Vec<usize>),
    Form(Vec<usize>),
    Bounds(Vec<usize>),
}

impl ValueShape {
    pub fn dims(&self) -> &[usize] {
        match self {
            ValueShape::Weight(s) | ValueShape::Form(s) | ValueShape::Bounds(s) => s,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerGraph<S> {
    nodes: Vec<Node<S>>,
    outputs: Vec<NodeId>,
    fusion_groups: Vec<Vec<NodeId>>,
}

impl<S: Scalar> Default for VerGraph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn graph_err(msg: impl Into<String>) -> Error {
    Error::Graph(msg.into())
}

impl<S: Scalar> VerGraph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            outputs: Vec::new(),
            fusion_groups: Vec::new(),
        }
    }

    /// Appends a node. Inputs must already exist, which keeps the graph
    /// acyclic and topologically ordered. Output shapes are checked.
    pub fn add(&mut self, name: impl Into<String>, kind: OpKind<S>, inputs: Vec<NodeId>) -> Result<NodeId> {
        let name = name.into();
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(graph_err(format!("duplicate node name {name:?}")));
        }
        let id = self.nodes.len();
        if let Some(&bad) = inputs.iter().find(|&&i| i >= id) {
            return Err(graph_err(format!("node {name:?} reads undefined node {bad}")));
        }
        let (lo, hi) = kind.arity();
        if inputs.len() < lo || inputs.len() > hi {
            return Err(graph_err(format!(
                "{} node {name:?} takes {lo}..={hi} inputs, got {}",
                kind.name(),
                inputs.len()
            )));
        }
        self.nodes.push(Node { name, kind, inputs });
        self.fusion_groups.push(vec![id]);
        if let Err(e) = self.shapes() {
            self.nodes.pop();
            self.fusion_groups.pop();
            return Err(e);
        }
        Ok(id)
    }

    pub fn input(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<NodeId> {
        self.add(name, OpKind::Input { shape }, vec![])
    }

    pub fn weight(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<NodeId> {
        self.add(name, OpKind::Weight { value }, vec![])
    }

    /// Affine layer `x -> w x + b` in the unfused form: the weight is split by
    /// sign and each half multiplies each input side separately, four GEMMs
    /// whose partial forms are summed per output side.
    pub fn projection(&mut self, prefix: &str, x: NodeId, w: Tensor<S>, b: Option<Tensor<S>>) -> Result<NodeId> {
        let w = self.weight(format!("{prefix}.w"), w)?;
        let b = match b {
            Some(b) => Some(self.weight(format!("{prefix}.b"), b)?),
            None => None,
        };
        self.projection_from(prefix, x, w, b)
    }

    /// [`Self::projection`] over existing weight nodes.
    pub fn projection_from(&mut self, prefix: &str, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        use BoundSide::{Lower, Upper};
        let wp = self.add(format!("{prefix}.w_pos"), OpKind::SplitPos, vec![w])?;
        let wn = self.add(format!("{prefix}.w_neg"), OpKind::SplitNeg, vec![w])?;
        let half = |g: &mut Self, tag: &str, part, side| {
            g.add(format!("{prefix}.{tag}"), OpKind::MatMulHalf { side }, vec![part, x])
        };
        let pos_up = half(self, "pos_up", wp, Upper)?;
        let neg_lo = half(self, "neg_lo", wn, Lower)?;
        let pos_lo = half(self, "pos_lo", wp, Lower)?;
        let neg_up = half(self, "neg_up", wn, Upper)?;
        let upper = self.add(format!("{prefix}.upper"), OpKind::FormAdd, vec![pos_up, neg_lo])?;
        let lower = self.add(format!("{prefix}.lower"), OpKind::FormAdd, vec![pos_lo, neg_up])?;
        let mut inputs = vec![lower, upper];
        inputs.extend(b);
        self.add(prefix.to_string(), OpKind::Pack, inputs)
    }

    pub fn set_outputs(&mut self, outputs: Vec<NodeId>) -> Result<()> {
        if let Some(&bad) = outputs.iter().find(|&&o| o >= self.nodes.len()) {
            return Err(graph_err(format!("output {bad} does not exist")));
        }
        self.outputs = outputs;
        Ok(())
    }

    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node<S> {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn fusion_groups(&self) -> &[Vec<NodeId>] {
        &self.fusion_groups
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Input node ids in binding order.
    pub fn input_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].kind, OpKind::Input { .. }))
            .collect()
    }

    pub fn categorize(&self, id: NodeId) -> OpCategory {
        self.nodes[id].kind.category()
    }

    /// Consumer edges per node; a graph output counts as one more consumer.
    pub fn consumer_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.nodes.len()];
        for n in &self.nodes {
            for &i in &n.inputs {
                counts[i] += 1;
            }
        }
        for &o in &self.outputs {
            counts[o] += 1;
        }
        counts
    }

    /// Fusion group index of every node.
    pub fn group_of(&self) -> Vec<usize> {
        let mut of = vec![usize::MAX; self.nodes.len()];
        for (g, members) in self.fusion_groups.iter().enumerate() {
            for &m in members {
                of[m] = g;
            }
        }
        of
    }

    /// Replaces the fusion partition after checking it covers every node
    /// exactly once and each group is ordered by id.
    pub fn set_fusion_groups(&mut self, groups: Vec<Vec<NodeId>>) -> Result<()> {
        let mut seen = vec![false; self.nodes.len()];
        for g in &groups {
            if g.is_empty() || g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(graph_err("fusion groups must be non-empty and ascending"));
            }
            for &m in g {
                if m >= seen.len() || seen[m] {
                    return Err(graph_err(format!("node {m} is missing or in two fusion groups")));
                }
                seen[m] = true;
            }
        }
        if let Some(miss) = seen.iter().position(|&s| !s) {
            return Err(graph_err(format!("node {miss} belongs to no fusion group")));
        }
        self.fusion_groups = groups;
        Ok(())
    }

    fn reset_groups(&mut self) {
        self.fusion_groups = (0..self.nodes.len()).map(|i| vec![i]).collect();
    }

    /// Output shape of every node.
    pub fn shapes(&self) -> Result<Vec<ValueShape>> {
        let mut out: Vec<ValueShape> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let s = infer(n, &out).map_err(|e| graph_err(format!("node {:?}: {e}", n.name)))?;
            out.push(s);
        }
        Ok(out)
    }

    /// Drops nodes that reach no output (inputs always stay) and compacts ids.
    fn prune(&mut self) {
        let n = self.nodes.len();
        let mut live = vec![false; n];
        for &o in &self.outputs {
            live[o] = true;
        }
        for i in (0..n).rev() {
            if matches!(self.nodes[i].kind, OpKind::Input { .. }) {
                live[i] = true;
            }
            if live[i] {
                for &j in &self.nodes[i].inputs {
                    live[j] = true;
                }
            }
        }
        let mut remap = vec![usize::MAX; n];
        let mut kept = Vec::with_capacity(n);
        for (i, node) in std::mem::take(&mut self.nodes).into_iter().enumerate() {
            if live[i] {
                remap[i] = kept.len();
                kept.push(node);
            }
        }
        for node in &mut kept {
            for i in &mut node.inputs {
                *i = remap[*i];
            }
        }
        self.nodes = kept;
        for o in &mut self.outputs {
            *o = remap[*o];
        }
        self.reset_groups();
    }
}

fn expect_weight(s: &ValueShape) -> std::result::Result<&[usize], String> {
    match s {
        ValueShape::Weight(d) => Ok(d),
        other => Err(format!("expected a weight, got {other:?}")),
    }
}

fn expect_form(s: &ValueShape) -> std::result::Result<&[usize], String> {
    match s {
        ValueShape::Form(d) => Ok(d),
        other => Err(format!("expected a linear form, got {other:?}")),
    }
}

fn expect_bounds(s: &ValueShape) -> std::result::Result<&[usize], String> {
    match s {
        ValueShape::Bounds(d) => Ok(d),
        other => Err(format!("expected bounds, got {other:?}")),
    }
}

/// `[out, in]` weight applied to `[.., in]` neurons.
fn gemm_shape(w: &[usize], x: &[usize]) -> std::result::Result<Vec<usize>, String> {
    match (w, x.last()) {
        ([out, inn], Some(last)) if inn == last => {
            let mut s = x.to_vec();
            *s.last_mut().unwrap() = *out;
            Ok(s)
        }
        _ => Err(format!("weight {w:?} does not apply to {x:?}")),
    }
}

fn bias_ok(b: Option<&ValueShape>, out: &[usize]) -> std::result::Result<(), String> {
    match b {
        None => Ok(()),
        Some(b) => {
            let d = expect_weight(b)?;
            if d == [*out.last().unwrap_or(&0)] {
                Ok(())
            } else {
                Err(format!("bias {d:?} does not match output {out:?}"))
            }
        }
    }
}

fn infer<S: Scalar>(n: &Node<S>, shapes: &[ValueShape]) -> std::result::Result<ValueShape, String> {
    let arg = |k: usize| &shapes[n.inputs[k]];
    Ok(match &n.kind {
        OpKind::Input { shape } => ValueShape::Bounds(shape.clone()),
        OpKind::Weight { value } => ValueShape::Weight(value.shape().to_vec()),
        OpKind::SplitPos | OpKind::SplitNeg => ValueShape::Weight(expect_weight(arg(0))?.to_vec()),
        OpKind::MatMulHalf { .. } | OpKind::SideGemm { .. } => {
            ValueShape::Form(gemm_shape(expect_weight(arg(0))?, expect_bounds(arg(1))?)?)
        }
        OpKind::FormAdd => {
            let (a, b) = (expect_form(arg(0))?, expect_form(arg(1))?);
            if a != b {
                return Err(format!("{a:?} + {b:?}"));
            }
            ValueShape::Form(a.to_vec())
        }
        OpKind::Pack => {
            let (a, b) = (expect_form(arg(0))?, expect_form(arg(1))?);
            if a != b {
                return Err(format!("lower {a:?} vs upper {b:?}"));
            }
            bias_ok(n.inputs.get(2).map(|&i| &shapes[i]), a)?;
            ValueShape::Bounds(a.to_vec())
        }
        OpKind::SplitAffine => {
            let (p, q) = (expect_weight(arg(0))?, expect_weight(arg(1))?);
            if p != q {
                return Err(format!("weight halves {p:?} vs {q:?}"));
            }
            let out = gemm_shape(p, expect_bounds(arg(2))?)?;
            bias_ok(n.inputs.get(3).map(|&i| &shapes[i]), &out)?;
            ValueShape::Bounds(out)
        }
        OpKind::Affine => {
            let out = gemm_shape(expect_weight(arg(0))?, expect_bounds(arg(1))?)?;
            bias_ok(n.inputs.get(2).map(|&i| &shapes[i]), &out)?;
            ValueShape::Bounds(out)
        }
        OpKind::Relu
        | OpKind::Tanh
        | OpKind::Silu
        | OpKind::Exp
        | OpKind::Recip
        | OpKind::Scale { .. }
        | OpKind::Softmax => {
            let a = expect_bounds(arg(0))?;
            if a.is_empty() && matches!(n.kind, OpKind::Softmax) {
                return Err("softmax of a scalar".into());
            }
            ValueShape::Bounds(a.to_vec())
        }
        OpKind::Add | OpKind::Mul => {
            let (a, b) = (expect_bounds(arg(0))?, expect_bounds(arg(1))?);
            if a != b {
                return Err(format!("{a:?} vs {b:?}"));
            }
            ValueShape::Bounds(a.to_vec())
        }
        OpKind::MatMulBilinear { transpose_b } => {
            let (a, b) = (expect_bounds(arg(0))?, expect_bounds(arg(1))?);
            let (ra, rb) = (a.len(), b.len());
            if ra < 2 || ra != rb || a[..ra - 2] != b[..rb - 2] {
                return Err(format!("{a:?} x {b:?}"));
            }
            let (bk, bn) = if *transpose_b { (b[rb - 1], b[rb - 2]) } else { (b[rb - 2], b[rb - 1]) };
            if a[ra - 1] != bk {
                return Err(format!("{a:?} x {b:?} (transpose_b = {transpose_b})"));
            }
            let mut s = a[..ra - 1].to_vec();
            s.push(bn);
            ValueShape::Bounds(s)
        }
        OpKind::SplitHeads { heads } => {
            let a = expect_bounds(arg(0))?;
            match a {
                [pre @ .., len, e] if *heads > 0 && e % heads == 0 => {
                    let mut s = pre.to_vec();
                    s.extend([*heads, *len, e / heads]);
                    ValueShape::Bounds(s)
                }
                _ => return Err(format!("cannot split {a:?} into {heads} heads")),
            }
        }
        OpKind::MergeHeads => {
            let a = expect_bounds(arg(0))?;
            match a {
                [pre @ .., h, len, hd] => {
                    let mut s = pre.to_vec();
                    s.extend([*len, h * hd]);
                    ValueShape::Bounds(s)
                }
                _ => return Err(format!("cannot merge heads of {a:?}")),
            }
        }
        OpKind::MeanPool => {
            let a = expect_bounds(arg(0))?;
            match a {
                [pre @ .., len, e] if *len > 0 => {
                    let mut s = pre.to_vec();
                    s.push(*e);
                    ValueShape::Bounds(s)
                }
                _ => return Err(format!("cannot pool {a:?}")),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor<f64> {
        Tensor::from_fn(vec![n, n], |k| if k / n == k % n { 1.0 } else { 0.0 })
    }

    #[test]
    fn categorize_examples() {
        assert_eq!(categorize_kind("relu").unwrap(), OpCategory::InputReductionCompute);
        assert_eq!(categorize_kind("add").unwrap(), OpCategory::StrictElementwise);
        assert_eq!(categorize_kind("affine").unwrap(), OpCategory::DenseComputation);
        assert_eq!(categorize_kind("matmul_bilinear").unwrap(), OpCategory::DenseComputation);
        assert!(matches!(categorize_kind("conv2d"), Err(Error::UnknownOp(_))));
    }

    #[test]
    fn kind_table_covers_every_variant() {
        let kinds: Vec<OpKind<f64>> = vec![
            OpKind::Input { shape: vec![1] },
            OpKind::Weight { value: eye(1) },
            OpKind::SplitPos,
            OpKind::SplitNeg,
            OpKind::MatMulHalf { side: BoundSide::Lower },
            OpKind::FormAdd,
            OpKind::Pack,
            OpKind::SideGemm { side: BoundSide::Upper },
            OpKind::SplitAffine,
            OpKind::Affine,
            OpKind::Relu,
            OpKind::Tanh,
            OpKind::Silu,
            OpKind::Exp,
            OpKind::Recip,
            OpKind::Add,
            OpKind::Scale { factor: 1.0 },
            OpKind::Mul,
            OpKind::MatMulBilinear { transpose_b: true },
            OpKind::Softmax,
            OpKind::SplitHeads { heads: 1 },
            OpKind::MergeHeads,
            OpKind::MeanPool,
        ];
        assert_eq!(kinds.len(), KINDS.len());
        for k in &kinds {
            k.category();
        }
    }

    #[test]
    fn builder_rejects_bad_edges() {
        let mut g = VerGraph::<f64>::new();
        let x = g.input("x", vec![2, 3]).unwrap();
        assert!(g.add("r", OpKind::Relu, vec![5]).is_err());
        assert!(g.add("x", OpKind::Relu, vec![x]).is_err());
        assert!(g.add("a", OpKind::Add, vec![x]).is_err());
        let w = g.weight("w", eye(2)).unwrap();
        assert!(g.add("bad", OpKind::Affine, vec![w, x]).is_err());
        assert_eq!(g.len(), 2);
        let p = g.projection("p", x, eye(3), None).unwrap();
        assert_eq!(g.shapes().unwrap()[p], ValueShape::Bounds(vec![2, 3]));
    }

    #[test]
    fn attention_shapes() {
        let mut g = VerGraph::<f64>::new();
        let x = g.input("x", vec![1, 4, 6]).unwrap();
        let h = g.add("h", OpKind::SplitHeads { heads: 2 }, vec![x]).unwrap();
        let s = g.add("s", OpKind::MatMulBilinear { transpose_b: true }, vec![h, h]).unwrap();
        let o = g.add("o", OpKind::MatMulBilinear { transpose_b: false }, vec![s, h]).unwrap();
        let m = g.add("m", OpKind::MergeHeads, vec![o]).unwrap();
        let p = g.add("p", OpKind::MeanPool, vec![m]).unwrap();
        let shapes = g.shapes().unwrap();
        assert_eq!(shapes[h].dims(), &[1, 2, 4, 3]);
        assert_eq!(shapes[s].dims(), &[1, 2, 4, 4]);
        assert_eq!(shapes[m].dims(), &[1, 4, 6]);
        assert_eq!(shapes[p].dims(), &[1, 6]);
    }
}
