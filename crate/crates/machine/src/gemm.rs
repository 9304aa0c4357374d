//! Tiled bound GEMM: the fused kernel loads `W` once and splits signs in
//! registers while accumulating both output bounds in one pass; the
//! baseline reads the pre-split halves in separate kernels.

use tverify_core::{LinearBounds, LinearForm, Scalar, Tensor};

use crate::cost::{operand, stream_kernel, CostReport};
use crate::error::{shape_err, Result};
use crate::meta::HardwareMeta;
use crate::schedule::{words, GemmSchedule, Schedule, Workload, BASE_REGISTERS};

/// Operands and outputs of one tiled kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GemmKernel<'a> {
    pub weights: &'a [&'a str],
    pub bounds: &'a [&'a str],
    pub outputs: u64,
}

/// `W` once, both bounds, both outputs.
pub const FUSED: GemmKernel<'static> = GemmKernel {
    weights: &[operand::W],
    bounds: &[operand::X_LOWER, operand::X_UPPER],
    outputs: 2,
};

/// `W_pos` against both bounds, writing two partial outputs.
pub const POS_HALF: GemmKernel<'static> = GemmKernel {
    weights: &[operand::W_POS],
    bounds: &[operand::X_LOWER, operand::X_UPPER],
    outputs: 2,
};

/// `W_neg` against both bounds, writing two partial outputs.
pub const NEG_HALF: GemmKernel<'static> = GemmKernel {
    weights: &[operand::W_NEG],
    bounds: &[operand::X_LOWER, operand::X_UPPER],
    outputs: 2,
};

/// Closed-form counters of a tiled kernel over weight `[m, k]` and bounds
/// `[k, n]`. Re-fetches of a tile by other blocks are served on chip, so
/// global loads count each element once and every staging write counts as
/// a shared access.
pub fn gemm_kernel_cost(
    g: &GemmSchedule,
    (m, n, k): (u64, u64, u64),
    kernel: GemmKernel<'_>,
    meta: &HardwareMeta,
    elem_bytes: u64,
) -> CostReport {
    let nw = kernel.weights.len() as u64;
    let nb = kernel.bounds.len() as u64;
    let (bm, bn, kt) = (m.div_ceil(g.tile_m), n.div_ceil(g.tile_n), k.div_ceil(g.tile_k));
    let blocks = bm * bn;
    let mut r = CostReport::default();
    for w in kernel.weights {
        r.load(w, m * k);
    }
    for b in kernel.bounds {
        r.load(b, k * n);
    }
    r.store(kernel.outputs * m * n);
    r.shared_accesses =
        nw * m * k * bn + nb * k * n * bm + blocks * g.threads_per_block * k * (nw * g.reg_tile_m + nb * g.reg_tile_n);
    r.estimated_shared_bytes = (nw * g.tile_m * g.tile_k + nb * g.tile_k * g.tile_n) * elem_bytes;
    r.estimated_registers = BASE_REGISTERS + 2 * kernel.outputs * words(elem_bytes) * g.reg_tile_m * g.reg_tile_n;
    r.reduction_iterations = meta.waves(blocks, g.threads_per_block, r.estimated_shared_bytes) * kt;
    r.finish(meta)
}

fn gemm_dims(workload: &Workload) -> Result<(u64, u64, u64, bool)> {
    match *workload {
        Workload::Gemm { m, n, k, bias } => Ok((m, n, k, bias)),
        other => Err(shape_err(format!("GEMM cost of a {} workload", other.pattern()))),
    }
}

/// Counters of [`run_gemm`] without running it.
pub fn gemm_cost(g: &GemmSchedule, workload: &Workload, meta: &HardwareMeta, elem_bytes: u64) -> Result<CostReport> {
    let (m, n, k, bias) = gemm_dims(workload)?;
    let mut r = gemm_kernel_cost(g, (m, n, k), FUSED, meta, elem_bytes);
    if bias {
        r.load(operand::BIAS, m);
    }
    Ok(r.finish(meta))
}

/// Counters of [`run_gemm_naive`]: one kernel per sign half, then an add
/// kernel combining the partials and the bias.
pub fn naive_gemm_cost(g: &GemmSchedule, workload: &Workload, meta: &HardwareMeta, elem_bytes: u64) -> Result<CostReport> {
    let (m, n, k, bias) = gemm_dims(workload)?;
    let pos = gemm_kernel_cost(g, (m, n, k), POS_HALF, meta, elem_bytes);
    let neg = gemm_kernel_cost(g, (m, n, k), NEG_HALF, meta, elem_bytes);
    let add = stream_kernel(
        &[(operand::PARTIALS, 4 * m * n), (operand::BIAS, if bias { m } else { 0 })],
        2 * m * n,
        meta,
    );
    Ok(CostReport::sum([&pos, &neg, &add], meta))
}

/// Workload of multiplying `w [out, in]` into bounds over `[.., in]`.
pub fn gemm_workload<S: Scalar>(w: &Tensor<S>, bias: bool, x: &LinearBounds<S>) -> Result<Workload> {
    let [m, k] = w.shape()[..] else {
        return Err(shape_err(format!("weight of shape {:?}", w.shape())));
    };
    let ns = x.neuron_shape();
    if ns.last() != Some(&k) {
        return Err(shape_err(format!("bounds {ns:?} vs weight {:?}", w.shape())));
    }
    let rows = x.neurons() / k;
    Ok(Workload::Gemm {
        m: m as u64,
        n: (rows * (x.dim() + 1)) as u64,
        k: k as u64,
        bias,
    })
}

/// Lays one bound side out as the `[in, rows * (dim + 1)]` GEMM operand:
/// column `r * (dim + 1)` holds the bias, the next `dim` the weights.
fn to_matrix<S: Scalar>(f: &LinearForm<S>, k: usize) -> Vec<S> {
    let d = f.dim();
    let rows = f.neurons() / k;
    let n = rows * (d + 1);
    let mut out = vec![S::zero(); k * n];
    for r in 0..rows {
        for i in 0..k {
            let src = r * k + i;
            let dst = &mut out[i * n + r * (d + 1)..i * n + (r + 1) * (d + 1)];
            dst[0] = f.bias.data()[src];
            dst[1..].copy_from_slice(f.row(src));
        }
    }
    out
}

fn from_matrix<S: Scalar>(y: &[S], m: usize, neuron_shape: Vec<usize>, d: usize) -> Result<LinearForm<S>> {
    let n = y.len() / m;
    let rows = n / (d + 1);
    let mut bias = Vec::with_capacity(rows * m);
    let mut weights = Vec::with_capacity(rows * m * d);
    for r in 0..rows {
        for j in 0..m {
            let src = &y[j * n + r * (d + 1)..j * n + (r + 1) * (d + 1)];
            bias.push(src[0]);
            weights.extend_from_slice(&src[1..]);
        }
    }
    let mut wshape = neuron_shape.clone();
    wshape.push(d);
    Ok(LinearForm::new(Tensor::new(neuron_shape, bias)?, Tensor::new(wshape, weights)?)?)
}

/// Register-stage update of one output element.
trait Micro<S> {
    const ACCS: usize;
    fn step(w: S, xl: S, xu: S, acc: &mut [S]);
}

/// Accumulators `[pos_up, neg_up, pos_lo, neg_lo]`; the sign split happens
/// on the register copy of `W`.
struct Fused;

impl<S: Scalar> Micro<S> for Fused {
    const ACCS: usize = 4;
    #[inline(always)]
    fn step(w: S, xl: S, xu: S, acc: &mut [S]) {
        if w >= S::zero() {
            acc[0] += w * xu;
            acc[2] += w * xl;
        } else {
            acc[1] += w * xl;
            acc[3] += w * xu;
        }
    }
}

/// `W_pos` partials `[up, lo]`.
struct PosHalf;

impl<S: Scalar> Micro<S> for PosHalf {
    const ACCS: usize = 2;
    #[inline(always)]
    fn step(w: S, xl: S, xu: S, acc: &mut [S]) {
        acc[0] += w * xu;
        acc[1] += w * xl;
    }
}

/// `W_neg` partials `[up, lo]`.
struct NegHalf;

impl<S: Scalar> Micro<S> for NegHalf {
    const ACCS: usize = 2;
    #[inline(always)]
    fn step(w: S, xl: S, xu: S, acc: &mut [S]) {
        acc[0] += w * xl;
        acc[1] += w * xu;
    }
}

struct Operands<'a, S> {
    w: &'a [S],
    w_name: &'static str,
    xl: &'a [S],
    xu: &'a [S],
    m: usize,
    n: usize,
    k: usize,
}

/// Block/shared/register emulation of one tiled kernel. Returns the
/// accumulators `[m, n, ACCS]`; counters go to `r` (stores excluded).
fn tiled<S: Scalar, M: Micro<S>>(g: &GemmSchedule, ops: &Operands<'_, S>, r: &mut CostReport) -> (Vec<S>, u64) {
    let (tm, tn, tk) = (g.tile_m as usize, g.tile_n as usize, g.tile_k as usize);
    let (rm, rn) = (g.reg_tile_m as usize, g.reg_tile_n as usize);
    let (m, n, k) = (ops.m, ops.n, ops.k);
    let a = M::ACCS;
    let mut out = vec![S::zero(); m * n * a];
    let mut ws = vec![S::zero(); tm * tk];
    let mut xls = vec![S::zero(); tk * tn];
    let mut xus = vec![S::zero(); tk * tn];
    let mut acc = vec![S::zero(); tm * tn * a];
    let mut barriers = 0;
    for bi in (0..m).step_by(tm) {
        let mh = tm.min(m - bi);
        for bj in (0..n).step_by(tn) {
            let nw = tn.min(n - bj);
            acc.fill(S::zero());
            barriers = 0;
            for kk in (0..k).step_by(tk) {
                let kd = tk.min(k - kk);
                // stage: global (first touch) or on-chip re-fetch into shared
                ws.fill(S::zero());
                for row in 0..mh {
                    let src = (bi + row) * k + kk;
                    ws[row * tk..row * tk + kd].copy_from_slice(&ops.w[src..src + kd]);
                }
                if bj == 0 {
                    r.load(ops.w_name, (mh * kd) as u64);
                }
                xls.fill(S::zero());
                xus.fill(S::zero());
                for q in 0..kd {
                    let src = (kk + q) * n + bj;
                    xls[q * tn..q * tn + nw].copy_from_slice(&ops.xl[src..src + nw]);
                    xus[q * tn..q * tn + nw].copy_from_slice(&ops.xu[src..src + nw]);
                }
                if bi == 0 {
                    r.load(operand::X_LOWER, (kd * nw) as u64);
                    r.load(operand::X_UPPER, (kd * nw) as u64);
                }
                r.shared_accesses += (mh * kd + 2 * kd * nw) as u64;
                barriers += 1;
                // register stage: each thread owns an rm x rn micro-tile
                for ti in 0..tm / rm {
                    for tj in 0..tn / rn {
                        r.shared_accesses += (kd * (rm + 2 * rn)) as u64;
                        for q in 0..kd {
                            let xl_row = &xls[q * tn + tj * rn..q * tn + (tj + 1) * rn];
                            let xu_row = &xus[q * tn + tj * rn..q * tn + (tj + 1) * rn];
                            for da in 0..rm {
                                let row = ti * rm + da;
                                let wv = ws[row * tk + q];
                                let base = (row * tn + tj * rn) * a;
                                for db in 0..rn {
                                    M::step(wv, xl_row[db], xu_row[db], &mut acc[base + db * a..base + (db + 1) * a]);
                                }
                            }
                        }
                    }
                }
            }
            for row in 0..mh {
                let dst = ((bi + row) * n + bj) * a;
                out[dst..dst + nw * a].copy_from_slice(&acc[row * tn * a..(row * tn + nw) * a]);
            }
        }
    }
    (out, barriers)
}

fn prepare<'a, S: Scalar>(
    g: &GemmSchedule,
    meta: &HardwareMeta,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    x: &LinearBounds<S>,
) -> Result<(Workload, Vec<S>, Vec<S>)> {
    let workload = gemm_workload(w, bias.is_some(), x)?;
    if let Some(b) = bias {
        if b.shape() != [w.shape()[0]] {
            return Err(shape_err(format!("bias {:?} for weight {:?}", b.shape(), w.shape())));
        }
    }
    Schedule::Gemm(*g).check(&workload, meta, S::BYTES as u64)?;
    let k = w.shape()[1];
    Ok((workload, to_matrix(&x.lower, k), to_matrix(&x.upper, k)))
}

fn finish_kernel(g: &GemmSchedule, m: u64, n: u64, barriers: u64, outputs: u64, elem: u64, meta: &HardwareMeta, r: &mut CostReport) {
    let blocks = m.div_ceil(g.tile_m) * n.div_ceil(g.tile_n);
    r.estimated_shared_bytes = (g.tile_m * g.tile_k + 2 * g.tile_k * g.tile_n) * elem;
    r.estimated_registers = BASE_REGISTERS + 2 * outputs * words(elem) * g.reg_tile_m * g.reg_tile_n;
    r.reduction_iterations = meta.waves(blocks, g.threads_per_block, r.estimated_shared_bytes) * barriers;
}

fn out_shape<S: Scalar>(x: &LinearBounds<S>, m: usize) -> Vec<usize> {
    let mut s = x.neuron_shape().to_vec();
    *s.last_mut().unwrap() = m;
    s
}

/// Fused bound GEMM `y = w x (+ bias)`, numerically identical to
/// `propagate_affine`.
pub fn run_gemm<S: Scalar>(
    g: &GemmSchedule,
    meta: &HardwareMeta,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    x: &LinearBounds<S>,
) -> Result<(LinearBounds<S>, CostReport)> {
    let (workload, xl, xu) = prepare(g, meta, w, bias, x)?;
    let Workload::Gemm { m, n, k, .. } = workload else { unreachable!() };
    let (mu, nu) = (m as usize, n as usize);
    let ops = Operands {
        w: w.data(),
        w_name: operand::W,
        xl: &xl,
        xu: &xu,
        m: mu,
        n: nu,
        k: k as usize,
    };
    let mut r = CostReport::default();
    let (acc, barriers) = tiled::<S, Fused>(g, &ops, &mut r);
    // epilogue: combine sign halves, add the bias to the bias column
    let d = x.dim();
    let mut yl = vec![S::zero(); mu * nu];
    let mut yu = vec![S::zero(); mu * nu];
    if bias.is_some() {
        r.load(operand::BIAS, m);
    }
    for j in 0..mu {
        for c in 0..nu {
            let a = &acc[(j * nu + c) * 4..(j * nu + c) * 4 + 4];
            let (mut up, mut lo) = (a[0] + a[1], a[2] + a[3]);
            if let Some(b) = bias.filter(|_| c % (d + 1) == 0) {
                up = up + b.data()[j];
                lo = lo + b.data()[j];
            }
            yu[j * nu + c] = up;
            yl[j * nu + c] = lo;
        }
    }
    r.store(2 * m * n);
    finish_kernel(g, m, n, barriers, 2, S::BYTES as u64, meta, &mut r);
    let shape = out_shape(x, mu);
    let lower = from_matrix(&yl, mu, shape.clone(), d)?;
    let upper = from_matrix(&yu, mu, shape, d)?;
    Ok((LinearBounds::from_forms(lower, upper)?, r.finish(meta)))
}

/// Baseline: `W_pos` and `W_neg` kernels each read both input bounds and
/// write partial bounds; an add kernel combines them.
pub fn run_gemm_naive<S: Scalar>(
    g: &GemmSchedule,
    meta: &HardwareMeta,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    x: &LinearBounds<S>,
) -> Result<(LinearBounds<S>, CostReport)> {
    let (workload, xl, xu) = prepare(g, meta, w, bias, x)?;
    let Workload::Gemm { m, n, k, .. } = workload else { unreachable!() };
    let (mu, nu) = (m as usize, n as usize);
    // the sign split is a one-off transform of a constant weight
    let w_pos: Vec<S> = w.data().iter().map(|v| v.max(S::zero())).collect();
    let w_neg: Vec<S> = w.data().iter().map(|v| v.min(S::zero())).collect();
    let mut ops = Operands {
        w: &w_pos,
        w_name: operand::W_POS,
        xl: &xl,
        xu: &xu,
        m: mu,
        n: nu,
        k: k as usize,
    };
    let elem = S::BYTES as u64;
    let mut pos_r = CostReport::default();
    let (pos, barriers) = tiled::<S, PosHalf>(g, &ops, &mut pos_r);
    pos_r.store(2 * m * n);
    finish_kernel(g, m, n, barriers, 2, elem, meta, &mut pos_r);
    ops.w = &w_neg;
    ops.w_name = operand::W_NEG;
    let mut neg_r = CostReport::default();
    let (neg, barriers) = tiled::<S, NegHalf>(g, &ops, &mut neg_r);
    neg_r.store(2 * m * n);
    finish_kernel(g, m, n, barriers, 2, elem, meta, &mut neg_r);

    let d = x.dim();
    let mut yl = vec![S::zero(); mu * nu];
    let mut yu = vec![S::zero(); mu * nu];
    for j in 0..mu {
        for c in 0..nu {
            let e = j * nu + c;
            let (mut up, mut lo) = (pos[2 * e] + neg[2 * e], pos[2 * e + 1] + neg[2 * e + 1]);
            if let Some(b) = bias.filter(|_| c % (d + 1) == 0) {
                up = up + b.data()[j];
                lo = lo + b.data()[j];
            }
            yu[e] = up;
            yl[e] = lo;
        }
    }
    let add_r = stream_kernel(
        &[(operand::PARTIALS, 4 * m * n), (operand::BIAS, if bias.is_some() { m } else { 0 })],
        2 * m * n,
        meta,
    );
    let shape = out_shape(x, mu);
    let lower = from_matrix(&yl, mu, shape.clone(), d)?;
    let upper = from_matrix(&yu, mu, shape, d)?;
    let report = CostReport::sum([&pos_r.finish(meta), &neg_r.finish(meta), &add_r], meta);
    Ok((LinearBounds::from_forms(lower, upper)?, report))
}
