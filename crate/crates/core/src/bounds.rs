//! Perturbation balls, linear bounds over the perturbation vector and their
//! concretization to scalar intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Norm order of the perturbation ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    /// Dual norm order: dual(inf) = 1, dual(2) = 2, dual(1) = inf.
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::Linf,
            Norm::L2 => Norm::L2,
            Norm::Linf => Norm::L1,
        }
    }

    pub fn apply<S: Scalar>(self, v: &[S]) -> S {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|&x| x * x).sum::<S>().sqrt(),
            Norm::Linf => v.iter().map(|x| x.abs()).fold(S::zero(), S::max),
        }
    }

    pub fn parse(s: &str) -> Option<Norm> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Some(Norm::L1),
            "l2" | "2" => Some(Norm::L2),
            "linf" | "inf" | "l_inf" => Some(Norm::Linf),
            _ => None,
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

/// The epsilon-ball `{ delta : ||delta||_p <= epsilon }` over a flattened
/// input of `dim` elements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub norm: Norm,
    pub epsilon: f64,
    pub dim: usize,
}

impl PerturbationSpec {
    pub fn new(norm: Norm, epsilon: f64, dim: usize) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Perturbation(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if dim == 0 {
            return Err(Error::Perturbation("dimension must be >= 1".into()));
        }
        Ok(Self { norm, epsilon, dim })
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        Self::new(self.norm, epsilon, self.dim)
    }

    /// Draws a perturbation inside the ball. Half of the draws land on the
    /// boundary (box corners, sphere surface, cross-polytope faces), where
    /// relaxation violations would show up first.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let eps = self.epsilon;
        let on_boundary = rng.random_bool(0.5);
        match self.norm {
            Norm::Linf => (0..d)
                .map(|_| {
                    if on_boundary {
                        if rng.random_bool(0.5) { eps } else { -eps }
                    } else {
                        rng.random_range(-1.0..=1.0) * eps
                    }
                })
                .collect(),
            Norm::L2 => {
                let g: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
                let n = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = if on_boundary {
                    eps
                } else {
                    eps * rng.random::<f64>().powf(1.0 / d as f64)
                };
                g.into_iter().map(|x| x / n * r).collect()
            }
            Norm::L1 => {
                // Uniform on the simplex via normalized exponentials, random signs.
                let e: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let s: f64 = e.iter().sum::<f64>().max(f64::MIN_POSITIVE);
                let r = if on_boundary {
                    eps
                } else {
                    eps * rng.random::<f64>().powf(1.0 / d as f64)
                };
                e.into_iter()
                    .map(|x| {
                        let v = x / s * r;
                        if rng.random_bool(0.5) { v } else { -v }
                    })
                    .collect()
            }
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One side of a linear bound: `bias[i] + weights[i] . delta` per neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearForm<S> {
    pub bias: Tensor<S>,
    pub weights: Tensor<S>,
}

impl<S: Scalar> LinearForm<S> {
    pub fn new(bias: Tensor<S>, weights: Tensor<S>) -> Result<Self> {
        let mut expect = bias.shape().to_vec();
        expect.push(weights.last_dim());
        if weights.shape() != expect.as_slice() || weights.rank() == 0 {
            return Err(shape_err(
                "linear form",
                format!("bias {:?} vs weights {:?}", bias.shape(), weights.shape()),
            ));
        }
        Ok(Self { bias, weights })
    }

    pub fn neuron_shape(&self) -> &[usize] {
        self.bias.shape()
    }

    pub fn neurons(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.last_dim()
    }

    pub fn row(&self, i: usize) -> &[S] {
        let d = self.dim();
        &self.weights.data()[i * d..(i + 1) * d]
    }

    /// Value of every neuron's line at the given perturbation.
    pub fn eval(&self, delta: &[S]) -> Vec<S> {
        (0..self.neurons())
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(delta)
                    .fold(self.bias.data()[i], |acc, (&w, &x)| acc + w * x)
            })
            .collect()
    }

    pub fn zeros(neuron_shape: Vec<usize>, dim: usize) -> Self {
        let mut ws = neuron_shape.clone();
        ws.push(dim);
        Self {
            bias: Tensor::zeros(neuron_shape),
            weights: Tensor::zeros(ws),
        }
    }

    pub(crate) fn from_raw(neuron_shape: Vec<usize>, dim: usize, bias: Vec<S>, weights: Vec<S>) -> Self {
        let mut ws = neuron_shape.clone();
        ws.push(dim);
        Self {
            bias: Tensor::from_parts(neuron_shape, bias),
            weights: Tensor::from_parts(ws, weights),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            bias: self.bias.zip_map(&other.bias, |a, b| a + b)?,
            weights: self.weights.zip_map(&other.weights, |a, b| a + b)?,
        })
    }

    pub fn scale(&self, c: S) -> Self {
        Self {
            bias: self.bias.map(|v| v * c),
            weights: self.weights.map(|v| v * c),
        }
    }

    /// Adds a per-neuron constant (broadcast over leading axes when `shift`
    /// matches the last neuron axis).
    pub fn shift(&self, shift: &Tensor<S>) -> Result<Self> {
        let n = self.neurons();
        let m = shift.len();
        if m == 0 || n % m != 0 || (m != n && m != self.bias.last_dim()) {
            return Err(shape_err(
                "shift",
                format!("bias {:?} vs shift {:?}", self.bias.shape(), shift.shape()),
            ));
        }
        let s = shift.data();
        let bias = Tensor::from_fn(self.bias.shape().to_vec(), |i| self.bias.data()[i] + s[i % m]);
        Ok(Self {
            bias,
            weights: self.weights.clone(),
        })
    }

    /// New neuron `i` is old neuron `index[i]`.
    pub fn gather(&self, neuron_shape: Vec<usize>, index: &[usize]) -> Self {
        let d = self.dim();
        let bias: Vec<S> = index.iter().map(|&j| self.bias.data()[j]).collect();
        let mut weights = Vec::with_capacity(index.len() * d);
        for &j in index {
            weights.extend_from_slice(self.row(j));
        }
        Self::from_raw(neuron_shape, d, bias, weights)
    }
}

/// Per-neuron linear lower and upper bounds over the perturbation vector:
/// `lb + lw . delta <= value <= ub + uw . delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBounds<S> {
    pub lower: LinearForm<S>,
    pub upper: LinearForm<S>,
}

impl<S: Scalar> LinearBounds<S> {
    pub fn new(lw: Tensor<S>, lb: Tensor<S>, uw: Tensor<S>, ub: Tensor<S>) -> Result<Self> {
        Self::from_forms(LinearForm::new(lb, lw)?, LinearForm::new(ub, uw)?)
    }

    pub fn from_forms(lower: LinearForm<S>, upper: LinearForm<S>) -> Result<Self> {
        if lower.weights.shape() != upper.weights.shape() {
            return Err(shape_err(
                "linear bounds",
                format!("lw {:?} vs uw {:?}", lower.weights.shape(), upper.weights.shape()),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// Bounds of a perturbation-independent value.
    pub fn constant(value: &Tensor<S>, dim: usize) -> Self {
        let mut ws = value.shape().to_vec();
        ws.push(dim);
        let form = LinearForm {
            bias: value.clone(),
            weights: Tensor::zeros(ws),
        };
        Self {
            lower: form.clone(),
            upper: form,
        }
    }

    /// Bounds with zero weights and independent interval biases.
    pub fn interval(lo: &Tensor<S>, hi: &Tensor<S>, dim: usize) -> Result<Self> {
        if lo.shape() != hi.shape() {
            return Err(shape_err("interval", "lo/hi shapes differ"));
        }
        let mut ws = lo.shape().to_vec();
        ws.push(dim);
        Ok(Self {
            lower: LinearForm {
                bias: lo.clone(),
                weights: Tensor::zeros(ws.clone()),
            },
            upper: LinearForm {
                bias: hi.clone(),
                weights: Tensor::zeros(ws),
            },
        })
    }

    pub fn lw(&self) -> &Tensor<S> {
        &self.lower.weights
    }
    pub fn lb(&self) -> &Tensor<S> {
        &self.lower.bias
    }
    pub fn uw(&self) -> &Tensor<S> {
        &self.upper.weights
    }
    pub fn ub(&self) -> &Tensor<S> {
        &self.upper.bias
    }

    pub fn neuron_shape(&self) -> &[usize] {
        self.lower.neuron_shape()
    }

    pub fn neurons(&self) -> usize {
        self.lower.neurons()
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn side(&self, side: BoundSide) -> &LinearForm<S> {
        match side {
            BoundSide::Lower => &self.lower,
            BoundSide::Upper => &self.upper,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            lower: self.lower.add(&other.lower)?,
            upper: self.upper.add(&other.upper)?,
        })
    }

    /// Multiplication by a constant; a negative factor swaps the sides.
    pub fn scale(&self, c: S) -> Self {
        if c >= S::zero() {
            Self {
                lower: self.lower.scale(c),
                upper: self.upper.scale(c),
            }
        } else {
            Self {
                lower: self.upper.scale(c),
                upper: self.lower.scale(c),
            }
        }
    }

    pub fn shift(&self, shift: &Tensor<S>) -> Result<Self> {
        Ok(Self {
            lower: self.lower.shift(shift)?,
            upper: self.upper.shift(shift)?,
        })
    }

    pub fn gather(&self, neuron_shape: Vec<usize>, index: &[usize]) -> Self {
        Self {
            lower: self.lower.gather(neuron_shape.clone(), index),
            upper: self.upper.gather(neuron_shape, index),
        }
    }

    pub fn reshape(&self, neuron_shape: Vec<usize>) -> Result<Self> {
        if neuron_shape.iter().product::<usize>() != self.neurons() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.neuron_shape(), neuron_shape),
            ));
        }
        let index: Vec<usize> = (0..self.neurons()).collect();
        Ok(self.gather(neuron_shape, &index))
    }

    /// Transpose of a rank-2 neuron layout.
    pub fn transpose(&self) -> Result<Self> {
        let [r, c] = self.neuron_shape()[..] else {
            return Err(shape_err("transpose", format!("neuron shape {:?}", self.neuron_shape())));
        };
        let index: Vec<usize> = (0..r * c).map(|k| (k % r) * c + k / r).collect();
        Ok(self.gather(vec![c, r], &index))
    }

    pub fn cast<T: Scalar>(&self) -> LinearBounds<T> {
        let f = |form: &LinearForm<S>| LinearForm {
            bias: form.bias.cast(),
            weights: form.weights.cast(),
        };
        LinearBounds {
            lower: f(&self.lower),
            upper: f(&self.upper),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Lower,
    Upper,
}

impl BoundSide {
    pub fn flip(self) -> Self {
        match self {
            BoundSide::Lower => BoundSide::Upper,
            BoundSide::Upper => BoundSide::Lower,
        }
    }
}

/// Scalar interval per neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcreteBounds<S> {
    pub lo: Tensor<S>,
    pub hi: Tensor<S>,
}

impl<S: Scalar> ConcreteBounds<S> {
    pub fn new(lo: Tensor<S>, hi: Tensor<S>) -> Result<Self> {
        if lo.shape() != hi.shape() {
            return Err(shape_err("concrete bounds", "lo/hi shapes differ"));
        }
        if let Some(i) = lo.data().iter().zip(hi.data()).position(|(l, h)| l > h) {
            return Err(shape_err("concrete bounds", format!("lo > hi at {i}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn from_f64(lo: &[f64], hi: &[f64]) -> Result<Self> {
        Self::new(
            Tensor::from_f64(vec![lo.len()], lo)?,
            Tensor::from_f64(vec![hi.len()], hi)?,
        )
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.lo.shape()
    }

    /// Elementwise intersection with another enclosure of the same values.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        let lo = self.lo.zip_map(&other.lo, S::max)?;
        let hi = self.hi.zip_map(&other.hi, S::min)?;
        // Both sides enclose the same values; an inverted pair only comes from rounding.
        let (lo, hi): (Vec<S>, Vec<S>) = lo
            .data()
            .iter()
            .zip(hi.data())
            .map(|(&l, &h)| if l <= h { (l, h) } else { (h, l) })
            .unzip();
        let shape = self.lo.shape().to_vec();
        Ok(Self {
            lo: Tensor::from_parts(shape.clone(), lo),
            hi: Tensor::from_parts(shape, hi),
        })
    }
}

/// Input neurons: `lb = ub = x`, weight rows one-hot at the neuron's own index.
pub fn input_bounds<S: Scalar>(x: &Tensor<S>, spec: &PerturbationSpec) -> Result<LinearBounds<S>> {
    let d = spec.dim;
    if x.len() != d {
        return Err(shape_err(
            "input_bounds",
            format!("input has {} elements, perturbation dimension is {d}", x.len()),
        ));
    }
    let mut eye = vec![S::zero(); d * d];
    for i in 0..d {
        eye[i * d + i] = S::one();
    }
    let form = LinearForm::from_raw(x.shape().to_vec(), d, x.data().to_vec(), eye);
    Ok(LinearBounds {
        lower: form.clone(),
        upper: form,
    })
}

/// `lo = lb - eps * ||lw||_q`, `hi = ub + eps * ||uw||_q` with `q` the dual of
/// the perturbation norm, the exact extremum of a line over the ball.
pub fn concretize<S: Scalar>(b: &LinearBounds<S>, spec: &PerturbationSpec) -> ConcreteBounds<S> {
    let q = spec.norm.dual();
    let eps = S::lit(spec.epsilon);
    let n = b.neurons();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for i in 0..n {
        let l = b.lower.bias.data()[i] - eps * q.apply(b.lower.row(i));
        let h = b.upper.bias.data()[i] + eps * q.apply(b.upper.row(i));
        // Widening both ends keeps the enclosure sound if rounding crossed them.
        if l <= h {
            lo.push(l);
            hi.push(h);
        } else {
            lo.push(h);
            hi.push(l);
        }
    }
    let shape = b.neuron_shape().to_vec();
    ConcreteBounds {
        lo: Tensor::from_parts(shape.clone(), lo),
        hi: Tensor::from_parts(shape, hi),
    }
}

/// `true` iff the true class's lower bound beats every other class's upper
/// bound by more than `margin`.
pub fn check_robust<S: Scalar>(pred: &ConcreteBounds<S>, true_class: usize, margin: S) -> Result<bool> {
    let classes = pred.len();
    if true_class >= classes {
        return Err(Error::ClassOutOfRange {
            index: true_class,
            classes,
        });
    }
    let lo = pred.lo.data()[true_class];
    Ok(pred
        .hi
        .data()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != true_class)
        .all(|(_, &h)| lo > h + margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(norm: Norm, eps: f64, dim: usize) -> PerturbationSpec {
        PerturbationSpec::new(norm, eps, dim).unwrap()
    }

    #[test]
    fn input_bounds_single_element() {
        let x = Tensor::<f64>::from_f64(vec![1], &[0.5]).unwrap();
        let b = input_bounds(&x, &spec(Norm::Linf, 0.1, 1)).unwrap();
        assert_eq!(b.lb().data(), &[0.5]);
        assert_eq!(b.ub().data(), &[0.5]);
        assert_eq!(b.lw().data(), &[1.0]);
        assert_eq!(b.uw().data(), &[1.0]);
        assert_eq!(b.lw().shape(), &[1, 1]);
    }

    #[test]
    fn input_bounds_identity_rows() {
        let x = Tensor::<f64>::from_f64(vec![2], &[1.0, 2.0]).unwrap();
        let b = input_bounds(&x, &spec(Norm::Linf, 0.1, 2)).unwrap();
        assert_eq!(b.lw().data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(b.uw(), b.lw());
    }

    #[test]
    fn input_bounds_dimension_mismatch() {
        let x = Tensor::<f64>::from_f64(vec![3], &[1.0, 2.0, 3.0]).unwrap();
        assert!(input_bounds(&x, &spec(Norm::L2, 0.1, 2)).is_err());
    }

    #[test]
    fn input_bounds_hold_with_equality_under_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::from_f64(vec![2, 3], &[0.1, -0.2, 0.3, 1.0, 2.0, -3.0]).unwrap();
        let s = spec(Norm::Linf, 0.2, 6);
        let b = input_bounds(&x, &s).unwrap();
        for _ in 0..100 {
            let delta = s.sample(&mut rng);
            let lower = b.lower.eval(&delta);
            let upper = b.upper.eval(&delta);
            for i in 0..6 {
                let v = x.data()[i] + delta[i];
                assert_eq!(lower[i], v);
                assert_eq!(upper[i], v);
            }
        }
    }

    #[test]
    fn zero_radius_concretizes_to_bias() {
        let lw = Tensor::<f64>::from_f64(vec![2, 2], &[1.0, -2.0, 3.0, 0.5]).unwrap();
        let lb = Tensor::<f64>::from_f64(vec![2], &[0.5, -1.0]).unwrap();
        let b = LinearBounds::new(lw.clone(), lb.clone(), lw, lb.clone()).unwrap();
        let c = concretize(&b, &spec(Norm::L2, 0.0, 2));
        assert_eq!(c.lo, lb);
        assert_eq!(c.hi, lb);
    }

    #[test]
    fn linf_concretization_matches_corner_minimum() {
        // min of [1,-2].delta over the 0.1-box is -0.3, so lo = 0.5 - 0.3.
        let lw = Tensor::<f64>::from_f64(vec![1, 2], &[1.0, -2.0]).unwrap();
        let lb = Tensor::<f64>::from_f64(vec![1], &[0.5]).unwrap();
        let b = LinearBounds::new(lw.clone(), lb.clone(), lw, lb).unwrap();
        let c = concretize(&b, &spec(Norm::Linf, 0.1, 2));
        assert!((c.lo.data()[0] - 0.2).abs() < 1e-15);
        assert!((c.hi.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_concretization_cauchy_schwarz_case() {
        let lw = Tensor::<f64>::from_f64(vec![1, 2], &[3.0, 4.0]).unwrap();
        let lb = Tensor::<f64>::from_f64(vec![1], &[1.0]).unwrap();
        let b = LinearBounds::new(lw.clone(), lb.clone(), lw, lb).unwrap();
        let c = concretize(&b, &spec(Norm::L2, 1.0, 2));
        assert_eq!(c.lo.data()[0], -4.0);
        assert_eq!(c.hi.data()[0], 6.0);
    }

    #[test]
    fn l1_concretization_uses_max_abs() {
        let lw = Tensor::<f64>::from_f64(vec![1, 3], &[3.0, -4.0, 1.0]).unwrap();
        let lb = Tensor::<f64>::from_f64(vec![1], &[0.0]).unwrap();
        let b = LinearBounds::new(lw.clone(), lb.clone(), lw, lb).unwrap();
        let c = concretize(&b, &spec(Norm::L1, 0.5, 3));
        assert_eq!(c.lo.data()[0], -2.0);
    }

    #[test]
    fn robustness_check_cases() {
        let c = ConcreteBounds::from_f64(&[0.4, 0.1], &[0.9, 0.39]).unwrap();
        assert!(check_robust(&c, 0, 0.0).unwrap());
        let c = ConcreteBounds::from_f64(&[0.4, 0.1], &[0.9, 0.4]).unwrap();
        assert!(!check_robust(&c, 0, 0.0).unwrap());
        let c = ConcreteBounds::from_f64(&[1.0, 0.0], &[2.0, 0.5]).unwrap();
        assert!(!check_robust(&c, 0, 0.6).unwrap());
        assert!(check_robust(&c, 0, 0.4).unwrap());
        assert_eq!(
            check_robust(&c, 2, 0.0),
            Err(Error::ClassOutOfRange { index: 2, classes: 2 })
        );
    }

    #[test]
    fn perturbation_spec_validation() {
        assert!(PerturbationSpec::new(Norm::L2, -0.1, 3).is_err());
        assert!(PerturbationSpec::new(Norm::L2, 0.1, 0).is_err());
        assert_eq!(Norm::Linf.dual(), Norm::L1);
        assert_eq!(Norm::L2.dual(), Norm::L2);
        assert_eq!(Norm::L1.dual(), Norm::Linf);
    }

    #[test]
    fn samples_stay_inside_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            let s = spec(norm, 0.3, 7);
            for _ in 0..500 {
                let d = s.sample(&mut rng);
                assert!(norm.apply(&d) <= 0.3 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn transpose_gathers_neurons() {
        let x = Tensor::<f64>::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = LinearBounds::constant(&x, 1);
        let t = b.transpose().unwrap();
        assert_eq!(t.neuron_shape(), &[3, 2]);
        assert_eq!(t.lb().data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn negative_scale_swaps_sides() {
        let lo = Tensor::<f64>::from_f64(vec![1], &[-1.0]).unwrap();
        let hi = Tensor::<f64>::from_f64(vec![1], &[2.0]).unwrap();
        let b = LinearBounds::interval(&lo, &hi, 1).unwrap().scale(-2.0);
        assert_eq!(b.lb().data(), &[-4.0]);
        assert_eq!(b.ub().data(), &[2.0]);
    }
}
