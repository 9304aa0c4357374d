//! JSON import and export, format `tverify-graph/v1`.

use serde_json::{json, Map, Value as Json};

use super::{NodeId, OpKind, VerGraph};
use crate::bounds::BoundSide;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GRAPH_FORMAT: &str = "tverify-graph/v1";

fn err(msg: impl Into<String>) -> Error {
    Error::Graph(msg.into())
}

fn side_name(side: BoundSide) -> &'static str {
    match side {
        BoundSide::Lower => "lower",
        BoundSide::Upper => "upper",
    }
}

fn attrs<S: Scalar>(kind: &OpKind<S>) -> Json {
    match kind {
        OpKind::Input { shape } => json!({ "shape": shape }),
        OpKind::Weight { value } => json!({
            "shape": value.shape(),
            "data": value.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
        }),
        OpKind::MatMulHalf { side } | OpKind::SideGemm { side } => json!({ "side": side_name(*side) }),
        OpKind::Scale { factor } => json!({ "factor": factor }),
        OpKind::MatMulBilinear { transpose_b } => json!({ "transpose_b": transpose_b }),
        OpKind::SplitHeads { heads } => json!({ "heads": heads }),
        _ => json!({}),
    }
}

fn get<'a>(a: &'a Map<String, Json>, key: &str, node: &str) -> Result<&'a Json> {
    a.get(key).ok_or_else(|| err(format!("node {node:?} lacks attribute {key:?}")))
}

fn shape_attr(a: &Map<String, Json>, node: &str) -> Result<Vec<usize>> {
    serde_json::from_value(get(a, "shape", node)?.clone()).map_err(|e| err(format!("node {node:?}: shape: {e}")))
}

fn parse_kind<S: Scalar>(kind: &str, a: &Map<String, Json>, node: &str) -> Result<OpKind<S>> {
    let side = || -> Result<BoundSide> {
        match get(a, "side", node)?.as_str() {
            Some("lower") => Ok(BoundSide::Lower),
            Some("upper") => Ok(BoundSide::Upper),
            other => Err(err(format!("node {node:?}: bad side {other:?}"))),
        }
    };
    Ok(match kind {
        "input" => OpKind::Input {
            shape: shape_attr(a, node)?,
        },
        "weight" => {
            let data: Vec<f64> = serde_json::from_value(get(a, "data", node)?.clone())
                .map_err(|e| err(format!("node {node:?}: data: {e}")))?;
            OpKind::Weight {
                value: Tensor::from_f64(shape_attr(a, node)?, &data).map_err(|e| err(format!("node {node:?}: {e}")))?,
            }
        }
        "split_pos" => OpKind::SplitPos,
        "split_neg" => OpKind::SplitNeg,
        "matmul_half" => OpKind::MatMulHalf { side: side()? },
        "form_add" => OpKind::FormAdd,
        "pack" => OpKind::Pack,
        "side_gemm" => OpKind::SideGemm { side: side()? },
        "split_affine" => OpKind::SplitAffine,
        "affine" => OpKind::Affine,
        "relu" => OpKind::Relu,
        "tanh" => OpKind::Tanh,
        "silu" => OpKind::Silu,
        "exp" => OpKind::Exp,
        "recip" => OpKind::Recip,
        "add" => OpKind::Add,
        "scale" => OpKind::Scale {
            factor: get(a, "factor", node)?
                .as_f64()
                .filter(|f| f.is_finite())
                .ok_or_else(|| err(format!("node {node:?}: factor must be a finite number")))?,
        },
        "mul" => OpKind::Mul,
        "matmul_bilinear" => OpKind::MatMulBilinear {
            transpose_b: a.get("transpose_b").and_then(Json::as_bool).unwrap_or(false),
        },
        "softmax" => OpKind::Softmax,
        "split_heads" => OpKind::SplitHeads {
            heads: get(a, "heads", node)?
                .as_u64()
                .ok_or_else(|| err(format!("node {node:?}: heads must be a positive integer")))? as usize,
        },
        "merge_heads" => OpKind::MergeHeads,
        "mean_pool" => OpKind::MeanPool,
        other => return Err(Error::UnknownOp(other.to_string())),
    })
}

impl<S: Scalar> VerGraph<S> {
    pub fn to_json(&self) -> Json {
        let name = |i: NodeId| self.nodes[i].name.clone();
        json!({
            "format": GRAPH_FORMAT,
            "nodes": self.nodes.iter().map(|n| json!({
                "name": n.name,
                "kind": n.kind.name(),
                "attrs": attrs(&n.kind),
                "inputs": n.inputs.iter().map(|&i| name(i)).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "outputs": self.outputs.iter().map(|&i| name(i)).collect::<Vec<_>>(),
            "fusion_groups": self.fusion_groups.iter()
                .map(|g| g.iter().map(|&i| name(i)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        })
    }

    /// Parses a graph. Nodes must be listed so that every input is defined
    /// before it is used. Missing `fusion_groups` means one group per node.
    pub fn from_json(doc: &Json) -> Result<Self> {
        if doc.get("format").and_then(Json::as_str) != Some(GRAPH_FORMAT) {
            return Err(err(format!("expected format {GRAPH_FORMAT:?}")));
        }
        let nodes = doc
            .get("nodes")
            .and_then(Json::as_array)
            .ok_or_else(|| err("missing node list"))?;
        let mut g = VerGraph::new();
        let empty = Map::new();
        for n in nodes {
            let name = n
                .get("name")
                .and_then(Json::as_str)
                .ok_or_else(|| err("node without a name"))?;
            let kind = n
                .get("kind")
                .and_then(Json::as_str)
                .ok_or_else(|| err(format!("node {name:?} has no kind")))?;
            let a = n.get("attrs").and_then(Json::as_object).unwrap_or(&empty);
            let inputs = n
                .get("inputs")
                .and_then(Json::as_array)
                .map(|v| v.as_slice())
                .unwrap_or(&[])
                .iter()
                .map(|i| {
                    let iname = i.as_str().ok_or_else(|| err(format!("node {name:?}: input names are strings")))?;
                    g.find(iname)
                        .ok_or_else(|| err(format!("node {name:?} reads {iname:?} before it is defined")))
                })
                .collect::<Result<Vec<_>>>()?;
            g.add(name, parse_kind(kind, a, name)?, inputs)?;
        }
        let names = |v: &Json, what: &str| -> Result<Vec<NodeId>> {
            v.as_array()
                .ok_or_else(|| err(format!("{what} must be a list")))?
                .iter()
                .map(|s| {
                    s.as_str()
                        .and_then(|s| g.find(s))
                        .ok_or_else(|| err(format!("{what} names unknown node {s}")))
                })
                .collect()
        };
        let outputs = names(doc.get("outputs").unwrap_or(&Json::Null), "outputs")?;
        let groups = match doc.get("fusion_groups") {
            Some(v) => Some(
                v.as_array()
                    .ok_or_else(|| err("fusion_groups must be a list"))?
                    .iter()
                    .map(|grp| names(grp, "fusion group"))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        g.set_outputs(outputs)?;
        if let Some(groups) = groups {
            g.set_fusion_groups(groups)?;
        }
        Ok(g)
    }
}
