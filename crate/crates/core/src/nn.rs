//! Small hand-differentiated building blocks shared by the attention stage
//! and the toy network.

use rand::Rng;

pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Derivative of [`leaky_relu`]; the kink at 0 takes the negative slope.
#[inline]
pub fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Anything holding named real-valued parameter tensors. Visit order is
/// stable and defines the flattening used by optimizers and checkpoints.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    /// Overwrites all values from a flat slice in visit order.
    fn unflatten(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |_, v| {
            v.copy_from_slice(&flat[off..off + v.len()]);
            off += v.len();
        });
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, v| v.fill(value));
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _, _| out.push(n.to_string()));
        out
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Weights and biases drawn from U(-1/sqrt(n_in), 1/sqrt(n_in)).
    pub fn init(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut d = Self::zeros(n_in, n_out);
        for w in d.weight.iter_mut().chain(d.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        d
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_in, self.n_out)
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.n_in..(o + 1) * self.n_in];
            *yo = self.bias[o] + dot(row, x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_out];
        self.forward(x, &mut y);
        y
    }

    /// Accumulates `dL/dW`, `dL/db` into `grad` and, when given, adds
    /// `dL/dx` into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            axpy(g, x, &mut grad.weight[o * self.n_in..(o + 1) * self.n_in]);
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &self.weight[o * self.n_in..(o + 1) * self.n_in], dx);
                }
            }
        }
    }

    pub fn visit_named(&self, name: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{name}.weight"), &[self.n_out, self.n_in], &self.weight);
        f(&format!("{name}.bias"), &[self.n_out], &self.bias);
    }

    pub fn visit_named_mut(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{name}.weight"), &mut self.weight);
        f(&format!("{name}.bias"), &mut self.bias);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Denominator floor for gradient checks. Central differences with a 1e-6
/// step carry roughly 1e-10 of rounding noise, so entries smaller than this
/// are compared on an absolute scale of `tolerance * GRAD_CHECK_FLOOR`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Largest relative discrepancy between an analytic and a numerical
/// gradient, `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leaky_relu_kink_uses_negative_slope() {
        assert_eq!(leaky_relu(0.0), 0.0);
        assert_eq!(leaky_relu_grad(0.0), LEAKY_SLOPE);
        assert_eq!(leaky_relu(-2.0), -0.02);
        assert_eq!(leaky_relu_grad(3.0), 1.0);
    }

    #[test]
    fn sigmoid_is_stable_in_both_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Dense::init(5, 4, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).cos()).collect();
        let dy: Vec<f64> = (0..4).map(|i| (i as f64 * 1.3).sin()).collect();
        let mut grad = layer.zeros_like();
        let mut dx = vec![0.0; 5];
        layer.backward(&x, &dy, &mut grad, Some(&mut dx));
        let loss = |l: &Dense, x: &[f64]| dot(&l.apply(x), &dy);
        let h = 1e-6;
        for i in 0..layer.weight.len() {
            let (mut a, mut b) = (layer.clone(), layer.clone());
            a.weight[i] += h;
            b.weight[i] -= h;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!((fd - grad.weight[i]).abs() < 1e-8);
        }
        for i in 0..5 {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&layer, &a) - loss(&layer, &b)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-8);
        }
        assert_eq!(grad.bias, dy);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::init(16, 8, &mut rng);
        assert!(d.weight.iter().chain(&d.bias).all(|w| w.abs() < 0.25));
    }
}
