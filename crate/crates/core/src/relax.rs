//! Bound propagation rules for the verified operators and exact point
//! evaluation of the same operators.

use crate::bounds::{concretize, ConcreteBounds, LinearBounds, LinearForm, PerturbationSpec};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line<S> {
    pub slope: S,
    pub intercept: S,
}

impl<S: Scalar> Line<S> {
    pub fn new(slope: S, intercept: S) -> Self {
        Self { slope, intercept }
    }

    pub fn at(&self, x: S) -> S {
        self.slope * x + self.intercept
    }

    pub fn constant(c: S) -> Self {
        Self::new(S::zero(), c)
    }

    /// Tangent of `f` at `x0` given `f(x0)` and `f'(x0)`.
    pub fn tangent(x0: S, fx: S, dfx: S) -> Self {
        Self::new(dfx, fx - dfx * x0)
    }

    /// Line through `(x0, y0)` and `(x1, y1)`, `x0 < x1`.
    pub fn chord(x0: S, y0: S, x1: S, y1: S) -> Self {
        let slope = (y1 - y0) / (x1 - x0);
        Self::new(slope, y0 - slope * x0)
    }
}

/// Sound lower and upper lines of a scalar function on one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinePair<S> {
    pub lower: Line<S>,
    pub upper: Line<S>,
}

/// Per-neuron lines `a_low*x + b_low <= f(x) <= a_up*x + b_up` on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementwiseLinearRelaxation<S> {
    pub a_low: Tensor<S>,
    pub b_low: Tensor<S>,
    pub a_up: Tensor<S>,
    pub b_up: Tensor<S>,
}

impl<S: Scalar> ElementwiseLinearRelaxation<S> {
    /// Builds a relaxation by applying `lines` to every neuron's interval.
    /// This is the single entry point new activation functions plug into.
    pub fn from_intervals(c: &ConcreteBounds<S>, mut lines: impl FnMut(S, S) -> LinePair<S>) -> Self {
        let n = c.len();
        let (mut a_low, mut b_low, mut a_up, mut b_up) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for (&lo, &hi) in c.lo.data().iter().zip(c.hi.data()) {
            let p = lines(lo, hi);
            a_low.push(p.lower.slope);
            b_low.push(p.lower.intercept);
            a_up.push(p.upper.slope);
            b_up.push(p.upper.intercept);
        }
        let shape = c.shape().to_vec();
        Self {
            a_low: Tensor::from_parts(shape.clone(), a_low),
            b_low: Tensor::from_parts(shape.clone(), b_low),
            a_up: Tensor::from_parts(shape.clone(), a_up),
            b_up: Tensor::from_parts(shape, b_up),
        }
    }

    pub fn identity(shape: Vec<usize>) -> Self {
        Self {
            a_low: Tensor::filled(shape.clone(), S::one()),
            b_low: Tensor::zeros(shape.clone()),
            a_up: Tensor::filled(shape.clone(), S::one()),
            b_up: Tensor::zeros(shape),
        }
    }

    pub fn len(&self) -> usize {
        self.a_low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_low.is_empty()
    }

    pub fn pair(&self, i: usize) -> LinePair<S> {
        LinePair {
            lower: Line::new(self.a_low.data()[i], self.b_low.data()[i]),
            upper: Line::new(self.a_up.data()[i], self.b_up.data()[i]),
        }
    }
}

// ---------------------------------------------------------------------------
// Scalar functions

pub fn relu<S: Scalar>(x: S) -> S {
    x.max(S::zero())
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

fn tanh_grad<S: Scalar>(x: S) -> S {
    let t = x.tanh();
    S::one() - t * t
}

/// Bisection budget of the tangent-point searches.
pub const TANGENT_TOLERANCE: f64 = 1e-6;
pub const TANGENT_MAX_ITERS: usize = 60;

// ---------------------------------------------------------------------------
// Line producers

pub fn relu_lines<S: Scalar>(lo: S, hi: S) -> LinePair<S> {
    let zero = Line::constant(S::zero());
    let ident = Line::new(S::one(), S::zero());
    if lo >= S::zero() {
        LinePair { lower: ident, upper: ident }
    } else if hi <= S::zero() {
        LinePair { lower: zero, upper: zero }
    } else {
        let s = hi / (hi - lo);
        let upper = Line::new(s, -s * lo);
        // Zero slope is tighter when the negative side dominates; ties keep slope 1.
        let lower = if lo.abs() > hi.abs() { zero } else { ident };
        LinePair { lower, upper }
    }
}

/// Result of a tangent-point search: the point and `g(point)`, where the
/// tangent's overshoot at the anchor is `g >= 0`.
#[derive(Clone, Copy, Debug)]
pub struct TangentSearch<S> {
    pub point: S,
    pub residual: S,
    pub iterations: usize,
}

/// For `lo < 0 < hi`: the tangent point `d` in `[0, hi]` whose tangent passes
/// through `(lo, tanh lo)`. Returns `None` when even the tangent at `hi`
/// stays below that anchor. The search keeps the side where the tangent
/// overshoots the anchor, so the returned line is always sound.
pub fn tanh_upper_tangent_point<S: Scalar>(lo: S, hi: S) -> Option<TangentSearch<S>> {
    let anchor = lo.tanh();
    let g = |d: S| d.tanh() + tanh_grad(d) * (lo - d) - anchor;
    let ghi = g(hi);
    if ghi < S::zero() {
        return None;
    }
    let tol = S::lit(TANGENT_TOLERANCE);
    let (mut a, mut b) = (S::zero(), hi);
    let mut gb = ghi;
    let mut iterations = 0;
    while iterations < TANGENT_MAX_ITERS && gb >= tol && b - a > S::epsilon() * hi.max(S::one()) {
        let m = (a + b) / S::lit(2.0);
        let gm = g(m);
        if gm >= S::zero() {
            b = m;
            gb = gm;
        } else {
            a = m;
        }
        iterations += 1;
    }
    Some(TangentSearch {
        point: b,
        residual: gb,
        iterations,
    })
}

fn tanh_upper_mixed<S: Scalar>(lo: S, hi: S) -> Line<S> {
    match tanh_upper_tangent_point(lo, hi) {
        Some(t) => Line::tangent(t.point, t.point.tanh(), tanh_grad(t.point)),
        None => Line::chord(lo, lo.tanh(), hi, hi.tanh()),
    }
}

pub fn tanh_lines<S: Scalar>(lo: S, hi: S) -> LinePair<S> {
    if lo == hi {
        let t = Line::tangent(lo, lo.tanh(), tanh_grad(lo));
        return LinePair { lower: t, upper: t };
    }
    let two = S::lit(2.0);
    if lo >= S::zero() {
        let m = (lo + hi) / two;
        LinePair {
            lower: Line::chord(lo, lo.tanh(), hi, hi.tanh()),
            upper: Line::tangent(m, m.tanh(), tanh_grad(m)),
        }
    } else if hi <= S::zero() {
        let m = (lo + hi) / two;
        LinePair {
            lower: Line::tangent(m, m.tanh(), tanh_grad(m)),
            upper: Line::chord(lo, lo.tanh(), hi, hi.tanh()),
        }
    } else {
        let upper = tanh_upper_mixed(lo, hi);
        // Odd symmetry: tanh(x) = -tanh(-x) mirrors the upper construction.
        let mirrored = tanh_upper_mixed(-hi, -lo);
        LinePair {
            lower: Line::new(mirrored.slope, -mirrored.intercept),
            upper,
        }
    }
}

pub fn exp_lines<S: Scalar>(lo: S, hi: S) -> LinePair<S> {
    let m = (lo + hi) / S::lit(2.0);
    let em = m.exp();
    let tangent = Line::tangent(m, em, em);
    if lo == hi {
        return LinePair { lower: tangent, upper: tangent };
    }
    LinePair {
        lower: tangent,
        upper: Line::chord(lo, lo.exp(), hi, hi.exp()),
    }
}

/// Lines for `1/x` on a positive interval.
pub fn recip_lines<S: Scalar>(lo: S, hi: S) -> LinePair<S> {
    let m = (lo + hi) / S::lit(2.0);
    let tangent = Line::tangent(m, m.recip(), -(m * m).recip());
    if lo == hi {
        return LinePair { lower: tangent, upper: tangent };
    }
    LinePair {
        lower: tangent,
        upper: Line::new(-(lo * hi).recip(), lo.recip() + hi.recip()),
    }
}

/// Inflection points of SiLU: it is convex on `(-SILU_CONVEX, SILU_CONVEX)`.
pub const SILU_CONVEX: f64 = 2.399_357_280_515_467;
const SILU_ARGMIN: f64 = -1.278_464_542_761_074;

pub fn silu_lines<S: Scalar>(lo: S, hi: S) -> LinePair<S> {
    let bound = S::lit(SILU_CONVEX);
    if lo > -bound && hi < bound {
        let m = (lo + hi) / S::lit(2.0);
        let sm = sigmoid(m);
        let tangent = Line::tangent(m, m * sm, sm * (S::one() + m * (S::one() - sm)));
        if lo == hi {
            return LinePair { lower: tangent, upper: tangent };
        }
        return LinePair {
            lower: tangent,
            upper: Line::chord(lo, silu(lo), hi, silu(hi)),
        };
    }
    // Outside the convex window fall back to constant bounds. SiLU decreases
    // then increases, so the maximum sits at an endpoint.
    let argmin = S::lit(SILU_ARGMIN);
    let min = if lo <= argmin && argmin <= hi {
        silu(argmin)
    } else {
        silu(lo).min(silu(hi))
    };
    let slack = S::lit(1e-12);
    LinePair {
        lower: Line::constant(min - slack),
        upper: Line::constant(silu(lo).max(silu(hi)) + slack),
    }
}

// ---------------------------------------------------------------------------
// Relaxations over concretized bounds

pub fn relax_relu<S: Scalar>(c: &ConcreteBounds<S>) -> ElementwiseLinearRelaxation<S> {
    ElementwiseLinearRelaxation::from_intervals(c, relu_lines)
}

pub fn relax_tanh<S: Scalar>(c: &ConcreteBounds<S>) -> ElementwiseLinearRelaxation<S> {
    ElementwiseLinearRelaxation::from_intervals(c, tanh_lines)
}

pub fn relax_exp<S: Scalar>(c: &ConcreteBounds<S>) -> ElementwiseLinearRelaxation<S> {
    ElementwiseLinearRelaxation::from_intervals(c, exp_lines)
}

pub fn relax_silu<S: Scalar>(c: &ConcreteBounds<S>) -> ElementwiseLinearRelaxation<S> {
    ElementwiseLinearRelaxation::from_intervals(c, silu_lines)
}

pub fn relax_recip<S: Scalar>(c: &ConcreteBounds<S>) -> Result<ElementwiseLinearRelaxation<S>> {
    if let Some(&lo) = c.lo.data().iter().find(|&&l| l <= S::zero()) {
        return Err(Error::RecipDomain { lo: lo.as_f64() });
    }
    Ok(ElementwiseLinearRelaxation::from_intervals(c, recip_lines))
}

/// Elementwise activations known to the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Silu,
}

impl Activation {
    pub fn eval<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => relu(x),
            Activation::Tanh => x.tanh(),
            Activation::Silu => silu(x),
        }
    }

    pub fn relax<S: Scalar>(self, c: &ConcreteBounds<S>) -> ElementwiseLinearRelaxation<S> {
        match self {
            Activation::Relu => relax_relu(c),
            Activation::Tanh => relax_tanh(c),
            Activation::Silu => relax_silu(c),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "silu" => Some(Activation::Silu),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Propagation

fn axpy<S: Scalar>(out: &mut [S], a: S, x: &[S]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Pushes linear bounds through per-neuron lines. Each side picks the input
/// side matching the sign of its slope.
pub fn compose_elementwise<S: Scalar>(
    x: &LinearBounds<S>,
    r: &ElementwiseLinearRelaxation<S>,
) -> Result<LinearBounds<S>> {
    if r.a_low.shape() != x.neuron_shape() {
        return Err(shape_err(
            "compose_elementwise",
            format!("bounds {:?} vs relaxation {:?}", x.neuron_shape(), r.a_low.shape()),
        ));
    }
    let n = x.neurons();
    let d = x.dim();
    let mut lb = Vec::with_capacity(n);
    let mut ub = Vec::with_capacity(n);
    let mut lw = vec![S::zero(); n * d];
    let mut uw = vec![S::zero(); n * d];
    for i in 0..n {
        let p = r.pair(i);
        let lo_src = pick_side(x, p.lower.slope >= S::zero(), false);
        let up_src = pick_side(x, p.upper.slope >= S::zero(), true);
        lb.push(p.lower.slope * lo_src.bias.data()[i] + p.lower.intercept);
        ub.push(p.upper.slope * up_src.bias.data()[i] + p.upper.intercept);
        axpy(&mut lw[i * d..(i + 1) * d], p.lower.slope, lo_src.row(i));
        axpy(&mut uw[i * d..(i + 1) * d], p.upper.slope, up_src.row(i));
    }
    let shape = x.neuron_shape().to_vec();
    Ok(LinearBounds {
        lower: LinearForm::from_raw(shape.clone(), d, lb, lw),
        upper: LinearForm::from_raw(shape, d, ub, uw),
    })
}

/// Affine layer `y[.., j] = sum_i w[j, i] x[.., i] + bias[j]` over the last
/// neuron axis, splitting weights by sign so the upper bound reads the
/// input's upper side for `w >= 0` and its lower side for `w < 0`.
pub fn propagate_affine<S: Scalar>(
    x: &LinearBounds<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<LinearBounds<S>> {
    let [out_dim, in_dim] = w.shape()[..] else {
        return Err(shape_err("propagate_affine", format!("weight rank {} != 2", w.rank())));
    };
    let ns = x.neuron_shape();
    if ns.last().copied().unwrap_or(1) != in_dim || ns.is_empty() {
        return Err(shape_err(
            "propagate_affine",
            format!("bounds {ns:?} vs weight {:?}", w.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [out_dim] {
            return Err(shape_err("propagate_affine", format!("bias {:?}", b.shape())));
        }
    }
    let rows = x.neurons() / in_dim;
    let d = x.dim();
    let width = d + 1;
    let mut out_shape = ns.to_vec();
    *out_shape.last_mut().unwrap() = out_dim;

    let mut lb = Vec::with_capacity(rows * out_dim);
    let mut ub = Vec::with_capacity(rows * out_dim);
    let mut lw = Vec::with_capacity(rows * out_dim * d);
    let mut uw = Vec::with_capacity(rows * out_dim * d);
    // accumulators: [pos_up, neg_up, pos_lo, neg_lo], bias in slot 0
    let mut acc = vec![S::zero(); 4 * width];
    for r in 0..rows {
        for j in 0..out_dim {
            acc.iter_mut().for_each(|v| *v = S::zero());
            let (pos_up, rest) = acc.split_at_mut(width);
            let (neg_up, rest) = rest.split_at_mut(width);
            let (pos_lo, neg_lo) = rest.split_at_mut(width);
            for i in 0..in_dim {
                let wv = w.data()[j * in_dim + i];
                let n = r * in_dim + i;
                let (xu_b, xu_w) = (x.upper.bias.data()[n], x.upper.row(n));
                let (xl_b, xl_w) = (x.lower.bias.data()[n], x.lower.row(n));
                if wv >= S::zero() {
                    pos_up[0] += wv * xu_b;
                    axpy(&mut pos_up[1..], wv, xu_w);
                    pos_lo[0] += wv * xl_b;
                    axpy(&mut pos_lo[1..], wv, xl_w);
                } else {
                    neg_up[0] += wv * xl_b;
                    axpy(&mut neg_up[1..], wv, xl_w);
                    neg_lo[0] += wv * xu_b;
                    axpy(&mut neg_lo[1..], wv, xu_w);
                }
            }
            let bj = bias.map(|b| b.data()[j]);
            let finish = |p: S, q: S| match bj {
                Some(b) => (p + q) + b,
                None => p + q,
            };
            ub.push(finish(pos_up[0], neg_up[0]));
            lb.push(finish(pos_lo[0], neg_lo[0]));
            uw.extend(pos_up[1..].iter().zip(&neg_up[1..]).map(|(&p, &q)| p + q));
            lw.extend(pos_lo[1..].iter().zip(&neg_lo[1..]).map(|(&p, &q)| p + q));
        }
    }
    Ok(LinearBounds {
        lower: LinearForm::from_raw(out_shape.clone(), d, lb, lw),
        upper: LinearForm::from_raw(out_shape, d, ub, uw),
    })
}

/// Plane `z = ax*x + ay*y + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane<S> {
    pub ax: S,
    pub ay: S,
    pub c: S,
}

impl<S: Scalar> Plane<S> {
    pub fn at(&self, x: S, y: S) -> S {
        self.ax * x + self.ay * y + self.c
    }
}

/// McCormick planes bounding `z = x*y` on `[lx,ux] x [ly,uy]`:
/// `z >= ly*x + lx*y - lx*ly` and `z <= uy*x + lx*y - lx*uy`.
pub fn mccormick<S: Scalar>(lx: S, _ux: S, ly: S, uy: S) -> (Plane<S>, Plane<S>) {
    (
        Plane { ax: ly, ay: lx, c: -(lx * ly) },
        Plane { ax: uy, ay: lx, c: -(lx * uy) },
    )
}

/// Per-product McCormick planes over paired boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearRelaxation<S> {
    pub lower: Vec<Plane<S>>,
    pub upper: Vec<Plane<S>>,
}

pub fn relax_bilinear<S: Scalar>(cx: &ConcreteBounds<S>, cy: &ConcreteBounds<S>) -> Result<BilinearRelaxation<S>> {
    if cx.shape() != cy.shape() {
        return Err(shape_err("relax_bilinear", "box shapes differ"));
    }
    let (lower, upper) = (0..cx.len())
        .map(|i| mccormick(cx.lo.data()[i], cx.hi.data()[i], cy.lo.data()[i], cy.hi.data()[i]))
        .unzip();
    Ok(BilinearRelaxation { lower, upper })
}

/// Side of `b` feeding a coefficient: positive keeps the side, negative swaps it.
fn pick_side<S>(b: &LinearBounds<S>, nonneg: bool, upper: bool) -> &LinearForm<S> {
    if nonneg == upper {
        &b.upper
    } else {
        &b.lower
    }
}

/// Accumulates `plane` composed with the operands' linear bounds into
/// `(bias, row)`. `upper` selects which plane side is being built.
#[allow(clippy::too_many_arguments)]
fn add_plane<S: Scalar>(
    bias: &mut S,
    row: &mut [S],
    plane: Plane<S>,
    upper: bool,
    x: &LinearBounds<S>,
    xi: usize,
    y: &LinearBounds<S>,
    yi: usize,
) {
    let xs = pick_side(x, plane.ax >= S::zero(), upper);
    let ys = pick_side(y, plane.ay >= S::zero(), upper);
    // term bias summed first so point boxes reproduce x*y exactly
    *bias += plane.ax * xs.bias.data()[xi] + plane.ay * ys.bias.data()[yi] + plane.c;
    axpy(row, plane.ax, xs.row(xi));
    axpy(row, plane.ay, ys.row(yi));
}

/// Elementwise product of two bounded tensors given enclosing boxes.
pub fn propagate_mul_with_boxes<S: Scalar>(
    x: &LinearBounds<S>,
    y: &LinearBounds<S>,
    bx: &ConcreteBounds<S>,
    by: &ConcreteBounds<S>,
) -> Result<LinearBounds<S>> {
    if x.neuron_shape() != y.neuron_shape() || bx.shape() != x.neuron_shape() || by.shape() != y.neuron_shape() {
        return Err(shape_err(
            "propagate_mul",
            format!("{:?} vs {:?}", x.neuron_shape(), y.neuron_shape()),
        ));
    }
    let n = x.neurons();
    let d = x.dim();
    let mut lb = vec![S::zero(); n];
    let mut ub = vec![S::zero(); n];
    let mut lw = vec![S::zero(); n * d];
    let mut uw = vec![S::zero(); n * d];
    for i in 0..n {
        let (pl, pu) = mccormick(bx.lo.data()[i], bx.hi.data()[i], by.lo.data()[i], by.hi.data()[i]);
        add_plane(&mut lb[i], &mut lw[i * d..(i + 1) * d], pl, false, x, i, y, i);
        add_plane(&mut ub[i], &mut uw[i * d..(i + 1) * d], pu, true, x, i, y, i);
    }
    let shape = x.neuron_shape().to_vec();
    Ok(LinearBounds {
        lower: LinearForm::from_raw(shape.clone(), d, lb, lw),
        upper: LinearForm::from_raw(shape, d, ub, uw),
    })
}

pub fn propagate_mul<S: Scalar>(x: &LinearBounds<S>, y: &LinearBounds<S>, spec: &PerturbationSpec) -> Result<LinearBounds<S>> {
    propagate_mul_with_boxes(x, y, &concretize(x, spec), &concretize(y, spec))
}

fn split_batch(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape {
        [.., r, c] => Some((shape[..shape.len() - 2].iter().product(), *r, *c)),
        _ => None,
    }
}

/// Product `a [.., m, k] x b [.., k, n]` of two bounded tensors, one
/// McCormick term per contraction index.
pub fn propagate_matmul_with_boxes<S: Scalar>(
    a: &LinearBounds<S>,
    b: &LinearBounds<S>,
    ba: &ConcreteBounds<S>,
    bb: &ConcreteBounds<S>,
) -> Result<LinearBounds<S>> {
    let (sa, sb) = (a.neuron_shape(), b.neuron_shape());
    let (Some((batch, m, k)), Some((batch_b, k2, n))) = (split_batch(sa), split_batch(sb)) else {
        return Err(shape_err("propagate_matmul", "operands need rank >= 2"));
    };
    if batch != batch_b || k != k2 || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
        return Err(shape_err("propagate_matmul", format!("{sa:?} x {sb:?}")));
    }
    let d = a.dim();
    let total = batch * m * n;
    let mut lb = vec![S::zero(); total];
    let mut ub = vec![S::zero(); total];
    let mut lw = vec![S::zero(); total * d];
    let mut uw = vec![S::zero(); total * d];
    for t in 0..batch {
        for i in 0..m {
            for j in 0..n {
                let o = (t * m + i) * n + j;
                let mut lbias = S::zero();
                let mut ubias = S::zero();
                for p in 0..k {
                    let xi = (t * m + i) * k + p;
                    let yi = (t * k + p) * n + j;
                    let (pl, pu) = mccormick(ba.lo.data()[xi], ba.hi.data()[xi], bb.lo.data()[yi], bb.hi.data()[yi]);
                    let mut tl = S::zero();
                    let mut tu = S::zero();
                    add_plane(&mut tl, &mut lw[o * d..(o + 1) * d], pl, false, a, xi, b, yi);
                    add_plane(&mut tu, &mut uw[o * d..(o + 1) * d], pu, true, a, xi, b, yi);
                    lbias += tl;
                    ubias += tu;
                }
                lb[o] = lbias;
                ub[o] = ubias;
            }
        }
    }
    let mut shape = sa[..sa.len() - 2].to_vec();
    shape.extend([m, n]);
    Ok(LinearBounds {
        lower: LinearForm::from_raw(shape.clone(), d, lb, lw),
        upper: LinearForm::from_raw(shape, d, ub, uw),
    })
}

pub fn propagate_matmul<S: Scalar>(a: &LinearBounds<S>, b: &LinearBounds<S>, spec: &PerturbationSpec) -> Result<LinearBounds<S>> {
    propagate_matmul_with_boxes(a, b, &concretize(a, spec), &concretize(b, spec))
}

fn transpose_last2<S: Scalar>(x: &LinearBounds<S>) -> Result<LinearBounds<S>> {
    let ns = x.neuron_shape();
    let Some((batch, r, c)) = split_batch(ns) else {
        return Err(shape_err("transpose", format!("neuron shape {ns:?}")));
    };
    let mut index = Vec::with_capacity(batch * r * c);
    for t in 0..batch {
        for j in 0..c {
            for i in 0..r {
                index.push((t * r + i) * c + j);
            }
        }
    }
    let mut shape = ns[..ns.len() - 2].to_vec();
    shape.extend([c, r]);
    Ok(x.gather(shape, &index))
}

/// Pairwise similarity `q k^T` of `[.., len, dim]` operands.
pub fn propagate_dot_product<S: Scalar>(q: &LinearBounds<S>, k: &LinearBounds<S>, spec: &PerturbationSpec) -> Result<LinearBounds<S>> {
    if q.neuron_shape() != k.neuron_shape() {
        return Err(shape_err(
            "propagate_dot_product",
            format!("{:?} vs {:?}", q.neuron_shape(), k.neuron_shape()),
        ));
    }
    propagate_matmul(q, &transpose_last2(k)?, spec)
}

fn interval_image<S: Scalar>(c: &ConcreteBounds<S>, f: impl Fn(S) -> S) -> ConcreteBounds<S> {
    ConcreteBounds {
        lo: c.lo.map(&f),
        hi: c.hi.map(&f),
    }
}

/// Softmax over the last axis, bounded through `exp -> sum -> 1/x -> mul`.
/// Intermediate boxes are intersected with plain interval images, which
/// keeps the reciprocal's domain positive.
pub fn propagate_softmax<S: Scalar>(x: &LinearBounds<S>, spec: &PerturbationSpec) -> Result<LinearBounds<S>> {
    let ns = x.neuron_shape().to_vec();
    let n = *ns.last().ok_or_else(|| shape_err("propagate_softmax", "scalar input"))?;
    let rows = x.neurons() / n;
    let cx = concretize(x, spec);
    let e = compose_elementwise(x, &relax_exp(&cx))?;
    let box_e = concretize(&e, spec).intersect(&interval_image(&cx, S::exp))?;

    let ones = Tensor::filled(vec![1, n], S::one());
    let s = propagate_affine(&e, &ones, None)?;
    let sum_of = |t: &Tensor<S>| -> Tensor<S> {
        let mut shape = ns.clone();
        *shape.last_mut().unwrap() = 1;
        Tensor::from_fn(shape, |r| t.data()[r * n..(r + 1) * n].iter().copied().sum())
    };
    let box_sum = ConcreteBounds {
        lo: sum_of(&box_e.lo),
        hi: sum_of(&box_e.hi),
    };
    let mut box_s = concretize(&s, spec).intersect(&box_sum)?;
    // exp over- or underflow leaves no usable denominator box; such rows
    // fall back to the probability range [0, 1].
    let degenerate: Vec<bool> = (0..rows)
        .map(|r| !(box_s.lo.data()[r] > S::zero() && box_s.hi.data()[r].is_finite()))
        .collect();
    for r in (0..rows).filter(|&r| degenerate[r]) {
        box_s.lo.data_mut()[r] = S::one();
        box_s.hi.data_mut()[r] = S::one();
    }
    let r = compose_elementwise(&s, &relax_recip(&box_s)?)?;
    let box_r = concretize(&r, spec).intersect(&ConcreteBounds {
        lo: box_s.hi.map(S::recip),
        hi: box_s.lo.map(S::recip),
    })?;

    let index: Vec<usize> = (0..rows * n).map(|i| i / n).collect();
    let r_b = r.gather(ns.clone(), &index);
    let box_rb = ConcreteBounds {
        lo: Tensor::from_fn(ns.clone(), |i| box_r.lo.data()[index[i]]),
        hi: Tensor::from_fn(ns.clone(), |i| box_r.hi.data()[index[i]]),
    };
    let mut out = propagate_mul_with_boxes(&e, &r_b, &box_e, &box_rb)?;
    let d = out.dim();
    for i in (0..rows * n).filter(|&i| degenerate[i / n]) {
        for (form, value) in [(&mut out.lower, S::zero()), (&mut out.upper, S::one())] {
            form.bias.data_mut()[i] = value;
            form.weights.data_mut()[i * d..(i + 1) * d].fill(S::zero());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Exact evaluation

/// Operator descriptor for exact evaluation.
#[derive(Clone, Copy, Debug)]
pub enum PointOp<'a, S> {
    Relu,
    Tanh,
    Silu,
    Exp,
    Recip,
    Affine { weight: &'a Tensor<S>, bias: Option<&'a Tensor<S>> },
    Add,
    Scale(S),
    Mul,
    /// `a [.., m, k] x b [.., k, n]`
    MatMul,
    /// `q k^T` over `[.., len, dim]` operands
    DotProduct,
    /// over the last axis
    Softmax,
}

fn batched_matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, transpose_b: bool) -> Result<Tensor<S>> {
    let (Some((batch, m, k)), Some((batch_b, br, bc))) = (split_batch(a.shape()), split_batch(b.shape())) else {
        return Err(shape_err("matmul", "operands need rank >= 2"));
    };
    let (k2, n) = if transpose_b { (bc, br) } else { (br, bc) };
    if batch != batch_b || k != k2 {
        return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![S::zero(); batch * m * n];
    for t in 0..batch {
        for i in 0..m {
            for j in 0..n {
                let mut acc = S::zero();
                for p in 0..k {
                    let bv = if transpose_b {
                        b.data()[(t * br + j) * bc + p]
                    } else {
                        b.data()[(t * br + p) * bc + j]
                    };
                    acc += a.data()[(t * m + i) * k + p] * bv;
                }
                out[(t * m + i) * n + j] = acc;
            }
        }
    }
    let mut shape = a.shape()[..a.rank() - 2].to_vec();
    shape.extend([m, n]);
    Ok(Tensor::from_parts(shape, out))
}

/// Exact output of `op` on point inputs.
pub fn forward<S: Scalar>(op: PointOp<'_, S>, inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let arity = match op {
        PointOp::Add | PointOp::Mul | PointOp::MatMul | PointOp::DotProduct => 2,
        _ => 1,
    };
    if inputs.len() != arity {
        return Err(shape_err("forward", format!("expected {arity} inputs, got {}", inputs.len())));
    }
    let x = inputs[0];
    Ok(match op {
        PointOp::Relu => x.map(relu),
        PointOp::Tanh => x.map(S::tanh),
        PointOp::Silu => x.map(silu),
        PointOp::Exp => x.map(S::exp),
        PointOp::Recip => x.map(S::recip),
        PointOp::Scale(c) => x.map(|v| v * c),
        PointOp::Add => x.zip_map(inputs[1], |a, b| a + b)?,
        PointOp::Mul => x.zip_map(inputs[1], |a, b| a * b)?,
        PointOp::Affine { weight, bias } => {
            let [out_dim, in_dim] = weight.shape()[..] else {
                return Err(shape_err("forward", "affine weight must be rank 2"));
            };
            if x.last_dim() != in_dim || x.rank() == 0 {
                return Err(shape_err("forward", format!("input {:?} vs weight {:?}", x.shape(), weight.shape())));
            }
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = out_dim;
            Tensor::from_fn(shape, |o| {
                let (r, j) = (o / out_dim, o % out_dim);
                let acc = x.data()[r * in_dim..(r + 1) * in_dim]
                    .iter()
                    .zip(weight.row(j))
                    .fold(S::zero(), |acc, (&a, &w)| acc + a * w);
                match bias {
                    Some(b) => acc + b.data()[j],
                    None => acc,
                }
            })
        }
        PointOp::MatMul => batched_matmul(x, inputs[1], false)?,
        PointOp::DotProduct => batched_matmul(x, inputs[1], true)?,
        PointOp::Softmax => {
            let n = x.last_dim();
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(n) {
                let m = row.iter().copied().fold(S::neg_infinity(), S::max);
                row.iter_mut().for_each(|v| *v = (*v - m).exp());
                let s: S = row.iter().copied().sum();
                row.iter_mut().for_each(|v| *v = *v / s);
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{input_bounds, Norm};

    fn cb(lo: &[f64], hi: &[f64]) -> ConcreteBounds<f64> {
        ConcreteBounds::from_f64(lo, hi).unwrap()
    }

    fn t(shape: Vec<usize>, d: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, d).unwrap()
    }

    fn grid_sound(f: impl Fn(f64) -> f64, lo: f64, hi: f64, p: LinePair<f64>) {
        for k in 0..=1000 {
            let x = lo + (hi - lo) * k as f64 / 1000.0;
            let y = f(x);
            assert!(p.lower.at(x) <= y + 1e-9, "lower at {x}: {} > {y}", p.lower.at(x));
            assert!(p.upper.at(x) + 1e-9 >= y, "upper at {x}: {} < {y}", p.upper.at(x));
        }
    }

    #[test]
    fn forward_examples() {
        let x = t(vec![2], &[-1.0, 2.0]);
        assert_eq!(forward(PointOp::Relu, &[&x]).unwrap().data(), &[0.0, 2.0]);
        let z = t(vec![1], &[0.0]);
        assert_eq!(forward(PointOp::Tanh, &[&z]).unwrap().data(), &[0.0]);
        let eye = t(vec![1, 3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let g = forward(PointOp::DotProduct, &[&eye, &eye]).unwrap();
        assert_eq!(g, eye);
        let q = t(vec![2, 2], &[1., 2., 3., 4.]);
        let g = forward(PointOp::DotProduct, &[&q, &q]).unwrap();
        assert_eq!(g.data(), &[5., 11., 11., 25.]);
        assert!(forward(PointOp::Add, &[&x]).is_err());
    }

    #[test]
    fn affine_interval_example_matches_corner_enumeration() {
        let w = t(vec![1, 2], &[2.0, -3.0]);
        let x = LinearBounds::interval(&t(vec![2], &[0.0, 0.0]), &t(vec![2], &[1.0, 1.0]), 1).unwrap();
        let y = propagate_affine(&x, &w, None).unwrap();
        // corners (0,0),(0,1),(1,0),(1,1) give 0,-3,2,-1
        assert_eq!(y.ub().data(), &[2.0]);
        assert_eq!(y.lb().data(), &[-3.0]);
    }

    #[test]
    fn affine_nonnegative_weights_keep_sides() {
        let w = t(vec![2, 2], &[1.0, 2.0, 0.5, 0.0]);
        let x = LinearBounds::interval(&t(vec![2], &[-1.0, 1.0]), &t(vec![2], &[3.0, 5.0]), 1).unwrap();
        let y = propagate_affine(&x, &w, Some(&t(vec![2], &[1.0, 0.0]))).unwrap();
        assert_eq!(y.ub().data(), &[3.0 + 10.0 + 1.0, 1.5]);
        assert_eq!(y.lb().data(), &[-1.0 + 2.0 + 1.0, -0.5]);
    }

    #[test]
    fn affine_shape_errors() {
        let x = LinearBounds::constant(&t(vec![3], &[1., 2., 3.]), 1);
        assert!(propagate_affine(&x, &t(vec![2, 2], &[1.; 4]), None).is_err());
        assert!(propagate_affine(&x, &t(vec![2, 3], &[1.; 6]), Some(&t(vec![3], &[0.; 3]))).is_err());
    }

    #[test]
    fn relu_cases() {
        let r = relax_relu(&cb(&[2.0], &[3.0]));
        assert_eq!((r.a_low.data()[0], r.b_low.data()[0], r.a_up.data()[0], r.b_up.data()[0]), (1.0, 0.0, 1.0, 0.0));
        let r = relax_relu(&cb(&[-3.0], &[-1.0]));
        assert!(r.a_low.data().iter().chain(r.a_up.data()).chain(r.b_low.data()).chain(r.b_up.data()).all(|&v| v == 0.0));
        let r = relax_relu(&cb(&[-1.0], &[1.0]));
        assert_eq!((r.a_up.data()[0], r.b_up.data()[0]), (0.5, 0.5));
        assert_eq!((r.a_low.data()[0], r.b_low.data()[0]), (1.0, 0.0));
        grid_sound(relu, -1.0, 1.0, r.pair(0));
        let r = relax_relu(&cb(&[-2.0], &[1.0]));
        assert_eq!(r.a_low.data()[0], 0.0);
    }

    #[test]
    fn tanh_point_interval_is_tangent() {
        let r = relax_tanh(&cb(&[0.0], &[0.0]));
        assert_eq!(r.pair(0).lower, Line::new(1.0, 0.0));
        assert_eq!(r.pair(0).upper, Line::new(1.0, 0.0));
    }

    #[test]
    fn tanh_positive_interval_lower_is_chord() {
        let p = tanh_lines(1.0, 2.0);
        let chord = Line::chord(1.0, 1f64.tanh(), 2.0, 2f64.tanh());
        assert_eq!(p.lower, chord);
        grid_sound(f64::tanh, 1.0, 2.0, p);
    }

    #[test]
    fn tanh_symmetric_interval_is_symmetric() {
        let p = tanh_lines(-2.0, 2.0);
        assert_eq!(p.lower.slope, p.upper.slope);
        assert_eq!(p.lower.intercept, -p.upper.intercept);
        assert!(p.lower.slope >= 0.0);
        grid_sound(f64::tanh, -2.0, 2.0, p);
    }

    #[test]
    fn tanh_tangent_search_residual() {
        for &(lo, hi) in &[(-2.0, 2.0), (-0.1, 3.0), (-5.0, 0.5), (-1.0, 1e-3), (-3.0, 10.0)] {
            if let Some(s) = tanh_upper_tangent_point::<f64>(lo, hi) {
                assert!(s.residual >= 0.0 && s.residual < 1e-6, "{lo},{hi}: {}", s.residual);
                assert!(s.iterations <= TANGENT_MAX_ITERS);
                assert!((0.0..=hi).contains(&s.point));
            }
            grid_sound(f64::tanh, lo, hi, tanh_lines(lo, hi));
        }
    }

    #[test]
    fn exp_and_recip_examples() {
        let p = exp_lines(0.0, 0.0);
        assert_eq!(p.lower, Line::new(1.0, 1.0));
        let p = exp_lines(0.0, 1.0);
        assert!((p.upper.slope - (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert_eq!(p.upper.intercept, 1.0);
        grid_sound(f64::exp, 0.0, 1.0, p);
        let p = recip_lines(1.0, 2.0);
        assert_eq!(p.upper, Line::new(-0.5, 1.5));
        assert!(p.lower.slope < 0.0);
        grid_sound(|x| 1.0 / x, 1.0, 2.0, p);
        assert!(matches!(relax_recip(&cb(&[0.0], &[1.0])), Err(Error::RecipDomain { .. })));
    }

    #[test]
    fn silu_lines_are_sound() {
        for &(lo, hi) in &[(-1.0, 1.0), (-4.0, -2.0), (-3.0, 3.0), (0.5, 6.0), (-8.0, 8.0), (1.0, 1.0)] {
            grid_sound(silu, lo, hi, silu_lines(lo, hi));
        }
    }

    #[test]
    fn compose_identity_and_sign_rules() {
        let x = LinearBounds::new(
            t(vec![1, 2], &[1.0, -1.0]),
            t(vec![1], &[0.0]),
            t(vec![1, 2], &[2.0, 3.0]),
            t(vec![1], &[1.0]),
        )
        .unwrap();
        let id = ElementwiseLinearRelaxation::identity(vec![1]);
        assert_eq!(compose_elementwise(&x, &id).unwrap(), x);

        let r = ElementwiseLinearRelaxation {
            a_low: t(vec![1], &[0.0]),
            b_low: t(vec![1], &[0.0]),
            a_up: t(vec![1], &[-0.5]),
            b_up: t(vec![1], &[0.0]),
        };
        let y = compose_elementwise(&x, &r).unwrap();
        assert_eq!(y.uw().data(), &[-0.5, 0.5]);

        let iv = LinearBounds::interval(&t(vec![1], &[-1.0]), &t(vec![1], &[1.0]), 1).unwrap();
        let r = relax_relu(&cb(&[-1.0], &[1.0]));
        let y = compose_elementwise(&iv, &r).unwrap();
        assert_eq!(y.ub().data(), &[1.0]);
        assert!(compose_elementwise(&x, &ElementwiseLinearRelaxation::identity(vec![2])).is_err());
    }

    #[test]
    fn mccormick_unit_box() {
        let r = relax_bilinear(&cb(&[0.0], &[1.0]), &cb(&[0.0], &[1.0])).unwrap();
        assert_eq!(r.lower[0], Plane { ax: 0.0, ay: 0.0, c: -0.0 });
        assert_eq!(r.upper[0], Plane { ax: 1.0, ay: 0.0, c: -0.0 });
        for i in 0..=32 {
            for j in 0..=32 {
                let (x, y) = (i as f64 / 32.0, j as f64 / 32.0);
                assert!(r.lower[0].at(x, y) <= x * y + 1e-12);
                assert!(r.upper[0].at(x, y) + 1e-12 >= x * y);
            }
        }
    }

    #[test]
    fn dot_product_collapses_on_point_boxes() {
        let q = t(vec![2, 3], &[0.5, -1.0, 2.0, 1.5, 0.25, -0.75]);
        let k = t(vec![2, 3], &[1.0, 2.0, -0.5, 0.0, 1.0, 3.0]);
        let spec = PerturbationSpec::new(Norm::Linf, 0.0, 1).unwrap();
        let y = propagate_dot_product(&LinearBounds::constant(&q, 1), &LinearBounds::constant(&k, 1), &spec).unwrap();
        let exact = forward(PointOp::DotProduct, &[&q, &k]).unwrap();
        assert_eq!(y.lb(), &exact);
        assert_eq!(y.ub(), &exact);
        assert_eq!(y.neuron_shape(), &[2, 2]);
    }

    #[test]
    fn softmax_zero_radius_and_uniform() {
        let x = t(vec![1, 4], &[0.3, 0.3, 0.3, 0.3]);
        let spec = PerturbationSpec::new(Norm::Linf, 0.0, 4).unwrap();
        let b = input_bounds(&x, &spec).unwrap();
        let y = propagate_softmax(&b, &spec).unwrap();
        let c = concretize(&y, &spec);
        for i in 0..4 {
            assert!((c.lo.data()[i] - 0.25).abs() < 1e-12);
            assert!((c.hi.data()[i] - 0.25).abs() < 1e-12);
        }
        let x = t(vec![2, 3], &[0.1, -2.0, 1.3, 0.7, 0.0, -0.4]);
        let spec = PerturbationSpec::new(Norm::L2, 0.0, 6).unwrap();
        let y = propagate_softmax(&input_bounds(&x, &spec).unwrap(), &spec).unwrap();
        let c = concretize(&y, &spec);
        let exact = forward(PointOp::Softmax, &[&x]).unwrap();
        assert!(c.lo.max_abs_diff(&exact) < 1e-6);
        assert!(c.hi.max_abs_diff(&exact) < 1e-6);
    }
    #[test]
    fn softmax_rows_without_denominator_box_fall_back_to_unit_range() {
        // row 0 sees radius-1e4 inputs, so exp underflows; row 1 is fixed
        let x = t(vec![2, 2], &[0.0, 1.0, 0.5, -0.5]);
        let spec = PerturbationSpec::new(Norm::Linf, 1e4, 4).unwrap();
        let mut b = input_bounds(&x, &spec).unwrap();
        for form in [&mut b.lower, &mut b.upper] {
            form.weights.data_mut()[8..].fill(0.0);
        }
        let c = concretize(&propagate_softmax(&b, &spec).unwrap(), &spec);
        assert_eq!(&c.lo.data()[..2], &[0.0, 0.0]);
        assert_eq!(&c.hi.data()[..2], &[1.0, 1.0]);
        let exact = forward(PointOp::Softmax, &[&x]).unwrap();
        for i in 2..4 {
            assert!((c.lo.data()[i] - exact.data()[i]).abs() < 1e-9);
            assert!((c.hi.data()[i] - exact.data()[i]).abs() < 1e-9);
        }
    }
}
