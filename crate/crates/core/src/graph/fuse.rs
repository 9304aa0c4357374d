//! Graph rewrites: weight pairing, double-bound fusion and cross-layer
//! grouping.

use super::{NodeId, OpCategory, OpKind, VerGraph};
use crate::bounds::BoundSide;
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Pos,
    Neg,
}

/// A `MatMulHalf` node: which sign half, the split node, the weight, the
/// bounded input and the side read.
#[derive(Clone, Copy)]
struct Half {
    part: Part,
    split: NodeId,
    weight: NodeId,
    x: NodeId,
    side: BoundSide,
}

fn split_of<S>(g: &VerGraph<S>, id: NodeId) -> Option<(Part, NodeId)> {
    let n = &g.nodes[id];
    match n.kind {
        OpKind::SplitPos => Some((Part::Pos, n.inputs[0])),
        OpKind::SplitNeg => Some((Part::Neg, n.inputs[0])),
        _ => None,
    }
}

fn half<S>(g: &VerGraph<S>, id: NodeId) -> Option<Half> {
    let n = &g.nodes[id];
    let OpKind::MatMulHalf { side } = n.kind else {
        return None;
    };
    let (part, weight) = split_of(g, n.inputs[0])?;
    Some(Half {
        part,
        split: n.inputs[0],
        weight,
        x: n.inputs[1],
        side,
    })
}

/// `FormAdd` of the positive half on one side and the negative half on the
/// other side of the same weight and input, which is one output side of the
/// sign-split product. Returns `(pos, neg, output side)`.
fn paired_halves<S>(g: &VerGraph<S>, id: NodeId) -> Option<(Half, Half, BoundSide)> {
    let n = &g.nodes[id];
    if !matches!(n.kind, OpKind::FormAdd) {
        return None;
    }
    let (a, b) = (half(g, n.inputs[0])?, half(g, n.inputs[1])?);
    let (pos, neg) = match (a.part, b.part) {
        (Part::Pos, Part::Neg) => (a, b),
        (Part::Neg, Part::Pos) => (b, a),
        _ => return None,
    };
    (pos.weight == neg.weight && pos.x == neg.x && neg.side == pos.side.flip()).then_some((pos, neg, pos.side))
}

/// Rewrites every sign-split product that loads `W_pos` and `W_neg`
/// separately into a node reading `W` once and splitting it on the fly,
/// using `W_pos + W_neg = W`. Graphs without the pattern come back unchanged.
pub fn fuse_weight_pairing<S: Scalar>(g: &VerGraph<S>) -> VerGraph<S> {
    let mut out = g.clone();
    let mut changed = false;
    for id in 0..out.nodes.len() {
        match out.nodes[id].kind {
            OpKind::FormAdd => {
                if let Some((pos, _, side)) = paired_halves(&out, id) {
                    let node = &mut out.nodes[id];
                    node.kind = OpKind::SideGemm { side };
                    node.inputs = vec![pos.weight, pos.x];
                    changed = true;
                }
            }
            OpKind::SplitAffine => {
                let ins = out.nodes[id].inputs.clone();
                if let (Some((Part::Pos, wp)), Some((Part::Neg, wn))) = (split_of(&out, ins[0]), split_of(&out, ins[1])) {
                    if wp == wn {
                        let node = &mut out.nodes[id];
                        node.kind = OpKind::Affine;
                        node.inputs = [wp, ins[2]].into_iter().chain(ins.get(3).copied()).collect();
                        changed = true;
                    }
                }
            }
            _ => {}
        }
    }
    if changed {
        out.prune();
    }
    out
}

/// Rewrites lower/upper computations that read the same bounded input into
/// one node producing both sides, so the input bounds are loaded once.
pub fn fuse_double_bound<S: Scalar>(g: &VerGraph<S>) -> VerGraph<S> {
    let mut out = g.clone();
    let mut changed = false;
    for id in 0..out.nodes.len() {
        if !matches!(out.nodes[id].kind, OpKind::Pack) {
            continue;
        }
        let ins = out.nodes[id].inputs.clone();
        let bias = ins.get(2).copied();
        let (lo, up) = (&out.nodes[ins[0]], &out.nodes[ins[1]]);
        let rewrite = match (&lo.kind, &up.kind) {
            (OpKind::SideGemm { side: BoundSide::Lower }, OpKind::SideGemm { side: BoundSide::Upper })
                if lo.inputs == up.inputs =>
            {
                Some((OpKind::Affine, lo.inputs.clone()))
            }
            (OpKind::FormAdd, OpKind::FormAdd) => {
                match (paired_halves(&out, ins[0]), paired_halves(&out, ins[1])) {
                    (Some((lp, ln, BoundSide::Lower)), Some((up_p, up_n, BoundSide::Upper)))
                        if lp.split == up_p.split && ln.split == up_n.split && lp.x == up_p.x =>
                    {
                        Some((OpKind::SplitAffine, vec![lp.split, ln.split, lp.x]))
                    }
                    _ => None,
                }
            }
            _ => None,
        };
        if let Some((kind, mut inputs)) = rewrite {
            inputs.extend(bias);
            let node = &mut out.nodes[id];
            node.kind = kind;
            node.inputs = inputs;
            changed = true;
        }
    }
    if changed {
        out.prune();
    }
    out
}

/// Whether a producer may share a kernel with its consumer. Only strict
/// elementwise consumers are absorbed; dense and input-reduction operators
/// always start a new kernel.
pub fn can_fuse(producer: OpCategory, consumer: OpCategory) -> bool {
    use OpCategory::*;
    match (producer, consumer) {
        (DenseComputation | InputReductionCompute | StrictElementwise, StrictElementwise) => true,
        (_, DenseComputation | InputReductionCompute) => false,
    }
}

/// Greedy grouping in topological order. A node joins the group of its
/// first producer that feeds nothing else and whose category pair may fuse.
/// Sources stay alone.
pub fn fuse_cross_layer<S: Scalar>(g: &VerGraph<S>) -> VerGraph<S> {
    let n = g.nodes.len();
    let consumers = g.consumer_counts();
    let mut group_of: Vec<usize> = vec![usize::MAX; n];
    let mut groups: Vec<Vec<NodeId>> = Vec::new();
    for id in 0..n {
        let node = &g.nodes[id];
        let joined = if node.kind.is_source() {
            None
        } else {
            node.inputs.iter().copied().find(|&p| {
                let pk = &g.nodes[p].kind;
                !pk.is_source() && consumers[p] == 1 && can_fuse(pk.category(), node.kind.category())
            })
        };
        match joined {
            Some(p) => {
                group_of[id] = group_of[p];
                groups[group_of[p]].push(id);
            }
            None => {
                group_of[id] = groups.len();
                groups.push(vec![id]);
            }
        }
    }
    let mut out = g.clone();
    out.fusion_groups = groups;
    out
}

/// All three passes: weight pairing, double-bound fusion, then grouping.
pub fn fuse_all<S: Scalar>(g: &VerGraph<S>) -> VerGraph<S> {
    fuse_cross_layer(&fuse_weight_pairing(&fuse_double_bound(g)))
}
