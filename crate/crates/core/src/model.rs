//! Transformer encoder classifier: configuration, weights, file formats,
//! verification-graph construction and the exact forward pass.
//!
//! Block structure per layer, without layer normalization:
//! `x + attn(x)` followed by `r + W2 act(W1 r + b1) + b2`, then a mean over
//! the sequence and a linear classifier. Attention scores are scaled by
//! `1/sqrt(head_dim)`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

use crate::error::{Error, Result};
use crate::graph::{OpKind, VerGraph};
use crate::relax::Activation;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MODEL_FORMAT: &str = "tverify-model/v1";
pub const EMBEDDING_FORMAT: &str = "tverify-embedding/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub length: usize,
    pub batch_size: usize,
    pub activation: Activation,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 1,
            num_heads: 4,
            embed_dim: 128,
            ffn_dim: 128,
            length: 16,
            batch_size: 1,
            activation: Activation::Relu,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(format!("invalid configuration: {m}")));
        if !(1..=6).contains(&self.num_layers) {
            return bad(format!("num_layers {} outside 1..=6", self.num_layers));
        }
        if self.num_heads == 0 || self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!("embed_dim {} is not divisible into {} heads", self.embed_dim, self.num_heads));
        }
        if self.ffn_dim == 0 || self.length == 0 || self.batch_size == 0 || self.num_classes == 0 {
            return bad("ffn_dim, length, batch_size and num_classes must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Shape of one input: `[batch, length, embed_dim]`.
    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch_size, self.length, self.embed_dim]
    }

    pub fn input_len(&self) -> usize {
        self.batch_size * self.length * self.embed_dim
    }

    /// Scalar parameters: per layer `4E^2 + 4E` for attention and
    /// `2EF + F + E` for the feed-forward block, plus `CE + C`.
    pub fn param_count(&self) -> usize {
        let (e, f, c) = (self.embed_dim, self.ffn_dim, self.num_classes);
        self.num_layers * (4 * e * e + 4 * e + 2 * e * f + f + e) + c * e + c
    }

    /// Nodes emitted by [`TransformerSpec::build_graph`]. Each layer has six
    /// 11-node projections and 11 attention and residual nodes; the input,
    /// the pooling node and the classifier projection add 13.
    pub fn graph_node_count(&self) -> usize {
        77 * self.num_layers + 13
    }
}

/// Weights are `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<S> {
    pub wq: Tensor<S>,
    pub bq: Tensor<S>,
    pub wk: Tensor<S>,
    pub bk: Tensor<S>,
    pub wv: Tensor<S>,
    pub bv: Tensor<S>,
    pub wo: Tensor<S>,
    pub bo: Tensor<S>,
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

const LAYER_TENSORS: [&str; 12] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "w1", "b1", "w2", "b2"];

impl<S: Scalar> LayerWeights<S> {
    fn tensors(&self) -> [&Tensor<S>; 12] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.w1, &self.b1,
            &self.w2, &self.b2,
        ]
    }

    fn from_tensors(mut t: Vec<Tensor<S>>) -> Self {
        let mut next = || t.remove(0);
        Self {
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        }
    }

    fn expected_shapes(c: &ModelConfig) -> [Vec<usize>; 12] {
        let (e, f) = (c.embed_dim, c.ffn_dim);
        [
            vec![e, e],
            vec![e],
            vec![e, e],
            vec![e],
            vec![e, e],
            vec![e],
            vec![e, e],
            vec![e],
            vec![f, e],
            vec![f],
            vec![e, f],
            vec![e],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerSpec<S> {
    pub config: ModelConfig,
    pub layers: Vec<LayerWeights<S>>,
    pub classifier_w: Tensor<S>,
    pub classifier_b: Tensor<S>,
}

fn affine_rows<S: Scalar>(x: &[S], rows: usize, w: &Tensor<S>, b: &Tensor<S>) -> Vec<S> {
    let (out, inn) = (w.shape()[0], w.shape()[1]);
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        let xr = &x[r * inn..(r + 1) * inn];
        for j in 0..out {
            let mut acc = S::zero();
            for (&a, &wv) in xr.iter().zip(w.row(j)) {
                acc += a * wv;
            }
            y.push(acc + b.data()[j]);
        }
    }
    y
}

impl<S: Scalar> TransformerSpec<S> {
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.layers.len() != c.num_layers {
            return Err(Error::Model(format!(
                "configuration declares {} layers, {} given",
                c.num_layers,
                self.layers.len()
            )));
        }
        let expected = LayerWeights::<S>::expected_shapes(c);
        for (l, layer) in self.layers.iter().enumerate() {
            for ((t, want), name) in layer.tensors().iter().zip(&expected).zip(LAYER_TENSORS) {
                if t.shape() != want.as_slice() {
                    return Err(Error::Model(format!(
                        "layers[{l}].{name} has shape {:?}, expected {want:?}",
                        t.shape()
                    )));
                }
            }
        }
        if self.classifier_w.shape() != [c.num_classes, c.embed_dim] || self.classifier_b.shape() != [c.num_classes] {
            return Err(Error::Model(format!(
                "classifier shapes {:?}/{:?} do not match {} classes over {} features",
                self.classifier_w.shape(),
                self.classifier_b.shape(),
                c.num_classes,
                c.embed_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .map(Tensor::len)
            .sum::<usize>()
            + self.classifier_w.len()
            + self.classifier_b.len()
    }

    pub fn cast<T: Scalar>(&self) -> TransformerSpec<T> {
        TransformerSpec {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights::from_tensors(l.tensors().iter().map(|t| t.cast()).collect()))
                .collect(),
            classifier_w: self.classifier_w.cast(),
            classifier_b: self.classifier_b.cast(),
        }
    }

    pub fn attention_scale(&self) -> f64 {
        1.0 / (self.config.head_dim() as f64).sqrt()
    }

    /// Exact logits `[batch, classes]` for an input `[batch, length, embed]`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let c = &self.config;
        if x.shape() != c.input_shape().as_slice() {
            return Err(Error::Model(format!(
                "input shape {:?} does not match {:?}",
                x.shape(),
                c.input_shape()
            )));
        }
        let (len, e, heads, hd) = (c.length, c.embed_dim, c.num_heads, c.head_dim());
        let scale = S::lit(self.attention_scale());
        let mut logits = Vec::with_capacity(c.batch_size * c.num_classes);
        for sample in x.data().chunks(len * e) {
            let mut h = sample.to_vec();
            for layer in &self.layers {
                let q = affine_rows(&h, len, &layer.wq, &layer.bq);
                let k = affine_rows(&h, len, &layer.wk, &layer.bk);
                let v = affine_rows(&h, len, &layer.wv, &layer.bv);
                let mut attn = vec![S::zero(); len * e];
                let mut p = vec![S::zero(); len];
                for head in 0..heads {
                    let off = head * hd;
                    for i in 0..len {
                        for j in 0..len {
                            let mut s = S::zero();
                            for t in 0..hd {
                                s += q[i * e + off + t] * k[j * e + off + t];
                            }
                            p[j] = s * scale;
                        }
                        let m = p.iter().copied().fold(S::neg_infinity(), S::max);
                        p.iter_mut().for_each(|v| *v = (*v - m).exp());
                        let z: S = p.iter().copied().sum();
                        for t in 0..hd {
                            let mut acc = S::zero();
                            for j in 0..len {
                                acc += p[j] / z * v[j * e + off + t];
                            }
                            attn[i * e + off + t] = acc;
                        }
                    }
                }
                let o = affine_rows(&attn, len, &layer.wo, &layer.bo);
                let r1: Vec<S> = h.iter().zip(&o).map(|(&a, &b)| a + b).collect();
                let f1: Vec<S> = affine_rows(&r1, len, &layer.w1, &layer.b1)
                    .into_iter()
                    .map(|v| c.activation.eval(v))
                    .collect();
                let f2 = affine_rows(&f1, len, &layer.w2, &layer.b2);
                h = r1.iter().zip(&f2).map(|(&a, &b)| a + b).collect();
            }
            let n = S::lit(len as f64);
            let pooled: Vec<S> = (0..e)
                .map(|col| (0..len).map(|l| h[l * e + col]).fold(S::zero(), |a, b| a + b) / n)
                .collect();
            logits.extend(affine_rows(&pooled, 1, &self.classifier_w, &self.classifier_b));
        }
        Tensor::new(vec![c.batch_size, c.num_classes], logits)
    }

    /// Verification graph in its unfused form: every projection is the
    /// sign-split four-GEMM pattern. Its output is the `[batch, classes]`
    /// logits bound.
    pub fn build_graph(&self) -> Result<VerGraph<S>> {
        self.validate()?;
        let c = &self.config;
        let mut g = VerGraph::new();
        let mut x = g.input("x", c.input_shape())?;
        for (l, w) in self.layers.iter().enumerate() {
            let p = format!("layer{l}");
            let proj = |g: &mut VerGraph<S>, tag: &str, x, wt: &Tensor<S>, bt: &Tensor<S>| {
                g.projection(&format!("{p}.{tag}"), x, wt.clone(), Some(bt.clone()))
            };
            let q = proj(&mut g, "q", x, &w.wq, &w.bq)?;
            let k = proj(&mut g, "k", x, &w.wk, &w.bk)?;
            let v = proj(&mut g, "v", x, &w.wv, &w.bv)?;
            let split = OpKind::SplitHeads { heads: c.num_heads };
            let qh = g.add(format!("{p}.q_heads"), split.clone(), vec![q])?;
            let kh = g.add(format!("{p}.k_heads"), split.clone(), vec![k])?;
            let vh = g.add(format!("{p}.v_heads"), split, vec![v])?;
            let s = g.add(format!("{p}.scores"), OpKind::MatMulBilinear { transpose_b: true }, vec![qh, kh])?;
            let s = g.add(
                format!("{p}.scaled"),
                OpKind::Scale {
                    factor: self.attention_scale(),
                },
                vec![s],
            )?;
            let a = g.add(format!("{p}.probs"), OpKind::Softmax, vec![s])?;
            let o = g.add(format!("{p}.context"), OpKind::MatMulBilinear { transpose_b: false }, vec![a, vh])?;
            let m = g.add(format!("{p}.merged"), OpKind::MergeHeads, vec![o])?;
            let o = proj(&mut g, "o", m, &w.wo, &w.bo)?;
            let r1 = g.add(format!("{p}.residual1"), OpKind::Add, vec![x, o])?;
            let f1 = proj(&mut g, "ffn1", r1, &w.w1, &w.b1)?;
            let act = match c.activation {
                Activation::Relu => OpKind::Relu,
                Activation::Tanh => OpKind::Tanh,
                Activation::Silu => OpKind::Silu,
            };
            let f1 = g.add(format!("{p}.act"), act, vec![f1])?;
            let f2 = proj(&mut g, "ffn2", f1, &w.w2, &w.b2)?;
            x = g.add(format!("{p}.residual2"), OpKind::Add, vec![r1, f2])?;
        }
        let pooled = g.add("pool", OpKind::MeanPool, vec![x])?;
        let logits = g.projection(
            "classifier",
            pooled,
            self.classifier_w.clone(),
            Some(self.classifier_b.clone()),
        )?;
        g.set_outputs(vec![logits])?;
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// Synthetic models

fn f32_uniform(rng: &mut impl Rng, a: f64) -> f64 {
    rng.random_range(-a..a) as f32 as f64
}

/// Seeded model with weights and biases uniform in `±0.5/sqrt(fan_in)` and
/// an input uniform in `(-1, 1)`, all exactly representable in `f32`.
pub fn gen_synthetic(seed: u64, config: &ModelConfig) -> Result<(TransformerSpec<f64>, Tensor<f64>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensor = |shape: &[usize], fan_in: usize| {
        let a = 0.5 / (fan_in as f64).sqrt();
        Tensor::from_fn(shape.to_vec(), |_| f32_uniform(&mut rng, a))
    };
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        let shapes = LayerWeights::<f64>::expected_shapes(config);
        let ts = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                // bias fan-in is the fan-in of the matrix right before it
                let fan_in = if i % 2 == 0 { s[1] } else { shapes[i - 1][1] };
                tensor(s, fan_in)
            })
            .collect();
        layers.push(LayerWeights::from_tensors(ts));
    }
    let e = config.embed_dim;
    let classifier_w = tensor(&[config.num_classes, e], e);
    let classifier_b = tensor(&[config.num_classes], e);
    let input = Tensor::from_fn(config.input_shape(), |_| f32_uniform(&mut rng, 1.0));
    Ok((
        TransformerSpec {
            config: *config,
            layers,
            classifier_w,
            classifier_b,
        },
        input,
    ))
}

// ---------------------------------------------------------------------------
// Files

/// How tensors are written by [`save_model`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorStorage {
    /// Values inline in the JSON manifest.
    Inline,
    /// Little-endian `f32` values in a sibling file with this name.
    Blob(String),
}

fn model_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Model(format!("{}: {msg}", path.display()))
}

/// Reads tensors referenced by a manifest, caching each blob file.
struct BlobReader {
    dir: PathBuf,
    cache: Vec<(String, Vec<u8>)>,
}

impl BlobReader {
    fn bytes(&mut self, name: &str) -> std::result::Result<&[u8], String> {
        if let Some(i) = self.cache.iter().position(|(n, _)| n == name) {
            return Ok(&self.cache[i].1);
        }
        let data = fs::read(self.dir.join(name)).map_err(|e| format!("blob {name:?}: {e}"))?;
        self.cache.push((name.to_string(), data));
        Ok(&self.cache.last().unwrap().1)
    }

    fn tensor<S: Scalar>(&mut self, v: &Json, what: &str) -> std::result::Result<Tensor<S>, String> {
        let obj = v.as_object().ok_or_else(|| format!("{what}: expected an object"))?;
        let shape: Vec<usize> = serde_json::from_value(obj.get("shape").cloned().unwrap_or(Json::Null))
            .map_err(|e| format!("{what}: shape: {e}"))?;
        let n: usize = shape.iter().product();
        let values: Vec<f64> = if let Some(data) = obj.get("data") {
            serde_json::from_value(data.clone()).map_err(|e| format!("{what}: data: {e}"))?
        } else if let Some(blob) = obj.get("blob").and_then(Json::as_str) {
            let offset = obj.get("offset").and_then(Json::as_u64).unwrap_or(0) as usize;
            let bytes = self.bytes(blob)?;
            let end = offset + 4 * n;
            if end > bytes.len() {
                return Err(format!(
                    "{what}: blob {blob:?} is truncated ({} bytes, need {end})",
                    bytes.len()
                ));
            }
            bytes[offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect()
        } else {
            return Err(format!("{what}: needs \"data\" or \"blob\""));
        };
        Tensor::from_f64(shape, &values).map_err(|e| format!("{what}: {e}"))
    }
}

fn load_json(path: &Path) -> Result<Json> {
    let text = fs::read_to_string(path).map_err(|e| model_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| model_err(path, e))
}

fn check_format(doc: &Json, want: &str, path: &Path) -> Result<()> {
    match doc.get("format").and_then(Json::as_str) {
        Some(f) if f == want => Ok(()),
        other => Err(model_err(path, format!("expected format {want:?}, found {other:?}"))),
    }
}

pub fn load_model<S: Scalar>(path: impl AsRef<Path>) -> Result<TransformerSpec<S>> {
    let path = path.as_ref();
    let doc = load_json(path)?;
    check_format(&doc, MODEL_FORMAT, path)?;
    let config: ModelConfig = serde_json::from_value(doc.get("config").cloned().unwrap_or(Json::Null))
        .map_err(|e| model_err(path, format!("config: {e}")))?;
    let mut reader = BlobReader {
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        cache: Vec::new(),
    };
    let layer_docs = doc
        .get("layers")
        .and_then(Json::as_array)
        .ok_or_else(|| model_err(path, "missing layer list"))?;
    let mut layers = Vec::with_capacity(layer_docs.len());
    for (l, ld) in layer_docs.iter().enumerate() {
        let ts = LAYER_TENSORS
            .iter()
            .map(|name| {
                let what = format!("layers[{l}].{name}");
                reader.tensor(ld.get(*name).unwrap_or(&Json::Null), &what)
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| model_err(path, e))?;
        layers.push(LayerWeights::from_tensors(ts));
    }
    let cls = doc.get("classifier").cloned().unwrap_or(Json::Null);
    let classifier_w = reader
        .tensor(cls.get("weight").unwrap_or(&Json::Null), "classifier.weight")
        .map_err(|e| model_err(path, e))?;
    let classifier_b = reader
        .tensor(cls.get("bias").unwrap_or(&Json::Null), "classifier.bias")
        .map_err(|e| model_err(path, e))?;
    let spec = TransformerSpec {
        config,
        layers,
        classifier_w,
        classifier_b,
    };
    spec.validate().map_err(|e| model_err(path, e))?;
    Ok(spec)
}

/// Collects tensors for writing, appending blob bytes as it goes.
struct BlobWriter {
    storage: TensorStorage,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn tensor<S: Scalar>(&mut self, t: &Tensor<S>) -> Json {
        match &self.storage {
            TensorStorage::Inline => json!({
                "shape": t.shape(),
                "data": t.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            }),
            TensorStorage::Blob(name) => {
                let offset = self.bytes.len();
                for v in t.data() {
                    self.bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                }
                json!({ "shape": t.shape(), "blob": name, "offset": offset })
            }
        }
    }

    fn finish(self, dir: &Path) -> Result<()> {
        if let TensorStorage::Blob(name) = &self.storage {
            let p = dir.join(name);
            fs::write(&p, &self.bytes).map_err(|e| model_err(&p, e))?;
        }
        Ok(())
    }
}

/// Writes a manifest (and blob file, if requested). Blob storage rounds
/// values to `f32`.
pub fn save_model<S: Scalar>(spec: &TransformerSpec<S>, path: impl AsRef<Path>, storage: TensorStorage) -> Result<()> {
    let path = path.as_ref();
    spec.validate()?;
    let mut w = BlobWriter {
        storage,
        bytes: Vec::new(),
    };
    let layers: Vec<Json> = spec
        .layers
        .iter()
        .map(|l| {
            let mut m = Map::new();
            for (name, t) in LAYER_TENSORS.iter().zip(l.tensors()) {
                m.insert(name.to_string(), w.tensor(t));
            }
            Json::Object(m)
        })
        .collect();
    let doc = json!({
        "format": MODEL_FORMAT,
        "config": spec.config,
        "layers": layers,
        "classifier": { "weight": w.tensor(&spec.classifier_w), "bias": w.tensor(&spec.classifier_b) },
    });
    w.finish(path.parent().unwrap_or(Path::new(".")))?;
    let text = serde_json::to_string_pretty(&doc).map_err(|e| model_err(path, e))?;
    fs::write(path, text).map_err(|e| model_err(path, e))
}

/// One input sample: an embedding tensor `[batch, length, dim]` and an
/// optional ground-truth class.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<S> {
    pub data: Tensor<S>,
    pub label: Option<usize>,
}

pub fn load_embedding<S: Scalar>(path: impl AsRef<Path>) -> Result<Embedding<S>> {
    let path = path.as_ref();
    let doc = load_json(path)?;
    check_format(&doc, EMBEDDING_FORMAT, path)?;
    let dim = |k: &str| doc.get(k).and_then(Json::as_u64).map(|v| v as usize);
    let (Some(length), Some(d)) = (dim("length"), dim("dim")) else {
        return Err(model_err(path, "embedding header needs length and dim"));
    };
    let batch = dim("batch").unwrap_or(1);
    let mut obj = doc.as_object().cloned().unwrap_or_default();
    obj.insert("shape".into(), json!([batch, length, d]));
    let mut reader = BlobReader {
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        cache: Vec::new(),
    };
    let data = reader
        .tensor(&Json::Object(obj), "embedding")
        .map_err(|e| model_err(path, e))?;
    let label = doc.get("label").and_then(Json::as_u64).map(|v| v as usize);
    Ok(Embedding { data, label })
}

pub fn save_embedding<S: Scalar>(e: &Embedding<S>, path: impl AsRef<Path>, storage: TensorStorage) -> Result<()> {
    let path = path.as_ref();
    let [batch, length, dim] = e.data.shape()[..] else {
        return Err(model_err(path, "embedding must be [batch, length, dim]"));
    };
    let mut w = BlobWriter {
        storage,
        bytes: Vec::new(),
    };
    let Json::Object(mut obj) = w.tensor(&e.data) else {
        unreachable!("tensor records are objects")
    };
    obj.remove("shape");
    obj.insert("format".into(), json!(EMBEDDING_FORMAT));
    obj.insert("batch".into(), json!(batch));
    obj.insert("length".into(), json!(length));
    obj.insert("dim".into(), json!(dim));
    if let Some(l) = e.label {
        obj.insert("label".into(), json!(l));
    }
    w.finish(path.parent().unwrap_or(Path::new(".")))?;
    let text = serde_json::to_string_pretty(&Json::Object(obj)).map_err(|e| model_err(path, e))?;
    fs::write(path, text).map_err(|e| model_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            num_heads: 2,
            embed_dim: 8,
            ffn_dim: 16,
            length: 4,
            batch_size: 1,
            activation: Activation::Relu,
            num_classes: 3,
        }
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        assert!(ModelConfig { num_heads: 3, ..small() }.validate().is_err());
        assert!(ModelConfig { num_layers: 7, ..small() }.validate().is_err());
        assert!(ModelConfig { num_layers: 0, ..small() }.validate().is_err());
    }

    #[test]
    fn synthetic_is_seeded() {
        let (a, xa) = gen_synthetic(7, &small()).unwrap();
        let (b, xb) = gen_synthetic(7, &small()).unwrap();
        let (c, _) = gen_synthetic(8, &small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(xa, xb);
        assert_ne!(a, c);
        assert_eq!(a.param_count(), small().param_count());
        let bound = 0.5 / 8f64.sqrt();
        assert!(a.layers[0].wq.data().iter().all(|v| v.abs() <= bound));
        let bound = 0.5 / 16f64.sqrt();
        assert!(a.layers[0].w2.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn graph_node_count_matches_formula() {
        for layers in 1..=3 {
            let cfg = ModelConfig { num_layers: layers, ..small() };
            let (m, _) = gen_synthetic(1, &cfg).unwrap();
            assert_eq!(m.build_graph().unwrap().len(), cfg.graph_node_count());
        }
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let (m, _) = gen_synthetic(1, &small()).unwrap();
        assert!(m.forward(&Tensor::zeros(vec![1, 3, 8])).is_err());
    }

    #[test]
    fn file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (m, x) = gen_synthetic(3, &small()).unwrap();
        for storage in [TensorStorage::Inline, TensorStorage::Blob("weights.bin".into())] {
            let p = dir.path().join("model.json");
            save_model(&m, &p, storage.clone()).unwrap();
            assert_eq!(load_model::<f64>(&p).unwrap(), m);
            let e = Embedding { data: x.clone(), label: Some(2) };
            let p = dir.path().join("input.json");
            let storage = match storage {
                TensorStorage::Blob(_) => TensorStorage::Blob("input.bin".into()),
                s => s,
            };
            save_embedding(&e, &p, storage).unwrap();
            assert_eq!(load_embedding::<f64>(&p).unwrap(), e);
        }
    }

    #[test]
    fn load_errors_name_their_cause() {
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = gen_synthetic(3, &small()).unwrap();
        let p = dir.path().join("model.json");
        save_model(&m, &p, TensorStorage::Blob("w.bin".into())).unwrap();
        let blob = dir.path().join("w.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        let e = load_model::<f64>(&p).unwrap_err().to_string();
        assert!(e.contains("w.bin") && e.contains("truncated"), "{e}");
        fs::remove_file(&blob).unwrap();
        let e = load_model::<f64>(&p).unwrap_err().to_string();
        assert!(e.contains("w.bin"), "{e}");

        let mut doc: Json = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        doc["layers"][0]["wq"] = json!({"shape": [8, 7], "data": vec![0.0; 56]});
        fs::write(&blob, &bytes).unwrap();
        fs::write(&p, doc.to_string()).unwrap();
        let e = load_model::<f64>(&p).unwrap_err().to_string();
        assert!(e.contains("layers[0].wq"), "{e}");
    }
}
