//! Audio-guided visual attention.
//!
//! For a visual vector `v` (length k) and an audio vector `a` (length n) at
//! the same time step:
//!
//! ```text
//! a' = W_a  lrelu(U_a a + b_ua) + b_wa          (d)
//! v' = W_v  lrelu(U_v v + b_uv) + b_wv          (d)
//! g  = sigmoid(W_av tanh(a' + v') + b_wav)       (k)
//! ```
//!
//! `g` is a vector of attention weights in (0, 1)^k and the stage output is
//! the gated visual vector `v * g`.

use rand::Rng;
use thiserror::Error;

use crate::nn::{leaky_relu, leaky_relu_grad, sigmoid, Dense, Parameterized};

/// Default shared projection width.
pub const DEFAULT_ATT_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cache does not match parameters or upstream gradient")]
    StaleCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub u_a: Dense,
    pub u_v: Dense,
    pub w_a: Dense,
    pub w_v: Dense,
    pub w_av: Dense,
}

impl AttentionParams {
    pub fn zeros(n: usize, k: usize, d: usize) -> Self {
        Self {
            u_a: Dense::zeros(n, n),
            u_v: Dense::zeros(k, k),
            w_a: Dense::zeros(n, d),
            w_v: Dense::zeros(k, d),
            w_av: Dense::zeros(d, k),
        }
    }

    pub fn init(n: usize, k: usize, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            u_a: Dense::init(n, n, rng),
            u_v: Dense::init(k, k, rng),
            w_a: Dense::init(n, d, rng),
            w_v: Dense::init(k, d, rng),
            w_av: Dense::init(d, k, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.audio_dim(), self.visual_dim(), self.shared_dim())
    }

    pub fn audio_dim(&self) -> usize {
        self.u_a.n_in
    }

    pub fn visual_dim(&self) -> usize {
        self.u_v.n_in
    }

    pub fn shared_dim(&self) -> usize {
        self.w_a.n_out
    }

    pub fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.u_a.visit_named(&format!("{prefix}.u_a"), f);
        self.u_v.visit_named(&format!("{prefix}.u_v"), f);
        self.w_a.visit_named(&format!("{prefix}.w_a"), f);
        self.w_v.visit_named(&format!("{prefix}.w_v"), f);
        self.w_av.visit_named(&format!("{prefix}.w_av"), f);
    }

    pub fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.u_a.visit_named_mut(&format!("{prefix}.u_a"), f);
        self.u_v.visit_named_mut(&format!("{prefix}.u_v"), f);
        self.w_a.visit_named_mut(&format!("{prefix}.w_a"), f);
        self.w_v.visit_named_mut(&format!("{prefix}.w_v"), f);
        self.w_av.visit_named_mut(&format!("{prefix}.w_av"), f);
    }
}

impl Parameterized for AttentionParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.visit_named("att", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_named_mut("att", f);
    }
}

/// Intermediates of one forward call.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    audio: Vec<f64>,
    visual: Vec<f64>,
    ua_pre: Vec<f64>,
    ua: Vec<f64>,
    uv_pre: Vec<f64>,
    uv: Vec<f64>,
    shared: Vec<f64>,
    gate: Vec<f64>,
}

impl AttentionCache {
    pub fn gate(&self) -> &[f64] {
        &self.gate
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGrad {
    pub params: AttentionParams,
    pub d_audio: Vec<f64>,
    pub d_visual: Vec<f64>,
}

/// Computes the attention weights for one time step.
pub fn att_forward(
    visual: &[f64],
    audio: &[f64],
    p: &AttentionParams,
) -> Result<(Vec<f64>, AttentionCache), AttentionError> {
    if visual.len() != p.visual_dim() || audio.len() != p.audio_dim() {
        return Err(AttentionError::ShapeMismatch(format!(
            "visual {} / audio {} vs params k={} n={}",
            visual.len(),
            audio.len(),
            p.visual_dim(),
            p.audio_dim()
        )));
    }
    let ua_pre = p.u_a.apply(audio);
    let ua: Vec<f64> = ua_pre.iter().map(|&x| leaky_relu(x)).collect();
    let uv_pre = p.u_v.apply(visual);
    let uv: Vec<f64> = uv_pre.iter().map(|&x| leaky_relu(x)).collect();
    let a_proj = p.w_a.apply(&ua);
    let v_proj = p.w_v.apply(&uv);
    let shared: Vec<f64> = a_proj.iter().zip(&v_proj).map(|(a, v)| (a + v).tanh()).collect();
    let gate: Vec<f64> = p.w_av.apply(&shared).into_iter().map(sigmoid).collect();
    let cache = AttentionCache {
        audio: audio.to_vec(),
        visual: visual.to_vec(),
        ua_pre,
        ua,
        uv_pre,
        uv,
        shared,
        gate: gate.clone(),
    };
    Ok((gate, cache))
}

/// Elementwise product of the visual vector with its attention weights.
pub fn apply_gate(visual: &[f64], gate: &[f64]) -> Result<Vec<f64>, AttentionError> {
    if visual.len() != gate.len() {
        return Err(AttentionError::ShapeMismatch(format!(
            "visual {} vs gate {}",
            visual.len(),
            gate.len()
        )));
    }
    Ok(visual.iter().zip(gate).map(|(v, g)| v * g).collect())
}

/// Gradients of the gated output `v * g` given `d_out = dL/d(v * g)`.
pub fn att_backward(
    d_out: &[f64],
    cache: &AttentionCache,
    p: &AttentionParams,
) -> Result<AttentionGrad, AttentionError> {
    let mut grad = AttentionGrad {
        params: p.zeros_like(),
        d_audio: vec![0.0; p.audio_dim()],
        d_visual: vec![0.0; p.visual_dim()],
    };
    att_backward_accumulate(
        d_out,
        cache,
        p,
        &mut grad.params,
        &mut grad.d_audio,
        &mut grad.d_visual,
    )?;
    Ok(grad)
}

/// Like [`att_backward`] but adds into caller-owned buffers, for use over
/// sequences with shared parameters.
pub fn att_backward_accumulate(
    d_out: &[f64],
    cache: &AttentionCache,
    p: &AttentionParams,
    grad: &mut AttentionParams,
    d_audio: &mut [f64],
    d_visual: &mut [f64],
) -> Result<(), AttentionError> {
    let (n, k, d) = (p.audio_dim(), p.visual_dim(), p.shared_dim());
    if d_out.len() != k
        || cache.visual.len() != k
        || cache.audio.len() != n
        || cache.shared.len() != d
        || d_audio.len() != n
        || d_visual.len() != k
    {
        return Err(AttentionError::StaleCache);
    }
    // output = v * g
    let mut dz = vec![0.0; k];
    for i in 0..k {
        let g = cache.gate[i];
        d_visual[i] += d_out[i] * g;
        dz[i] = d_out[i] * cache.visual[i] * g * (1.0 - g);
    }
    let mut d_shared = vec![0.0; d];
    p.w_av.backward(&cache.shared, &dz, &mut grad.w_av, Some(&mut d_shared));
    for (ds, s) in d_shared.iter_mut().zip(&cache.shared) {
        *ds *= 1.0 - s * s;
    }

    let mut d_ua = vec![0.0; n];
    p.w_a.backward(&cache.ua, &d_shared, &mut grad.w_a, Some(&mut d_ua));
    for (g, x) in d_ua.iter_mut().zip(&cache.ua_pre) {
        *g *= leaky_relu_grad(*x);
    }
    p.u_a.backward(&cache.audio, &d_ua, &mut grad.u_a, Some(d_audio));

    let mut d_uv = vec![0.0; k];
    p.w_v.backward(&cache.uv, &d_shared, &mut grad.w_v, Some(&mut d_uv));
    for (g, x) in d_uv.iter_mut().zip(&cache.uv_pre) {
        *g *= leaky_relu_grad(*x);
    }
    p.u_v.backward(&cache.visual, &d_uv, &mut grad.u_v, Some(d_visual));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{max_relative_error, GRAD_CHECK_FLOOR};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_params() -> AttentionParams {
        let mut p = AttentionParams::zeros(2, 2, 2);
        p.u_a.weight = vec![1.0, -0.5, 0.25, 2.0];
        p.u_a.bias = vec![0.1, -0.2];
        p.u_v.weight = vec![-1.0, 0.5, 0.0, 1.5];
        p.u_v.bias = vec![0.0, 0.3];
        p.w_a.weight = vec![0.5, 0.5, -0.25, 1.0];
        p.w_a.bias = vec![0.0, 0.1];
        p.w_v.weight = vec![1.0, 0.0, 0.5, -0.5];
        p.w_v.bias = vec![-0.1, 0.0];
        p.w_av.weight = vec![2.0, -1.0, 0.5, 0.5];
        p.w_av.bias = vec![0.0, -0.3];
        p
    }

    #[test]
    fn zero_everything_gives_half() {
        let p = AttentionParams::zeros(3, 49, 4);
        let (g, _) = att_forward(&[0.0; 49], &[0.0; 3], &p).unwrap();
        assert!(g.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn hand_computed_instance() {
        // scalar evaluation done by hand:
        //   U_a a + b = (1*0.6 - 0.5*-0.4 + 0.1, 0.25*0.6 + 2*-0.4 - 0.2) = (0.9, -0.85)
        //   lrelu -> (0.9, -0.0085); W_a -> (0.44575, -0.1335)
        //   U_v v + b = (-1*0.8 + 0.5*0.2, 1.5*0.2 + 0.3) = (-0.7, 0.6)
        //   lrelu -> (-0.007, 0.6); W_v -> (-0.107, -0.3035)
        //   tanh(0.33875), tanh(-0.437); W_av + b; sigmoid
        let p = hand_params();
        let (g, _) = att_forward(&[0.8, 0.2], &[0.6, -0.4], &p).unwrap();
        let (h0, h1) = (0.33875f64.tanh(), (-0.437f64).tanh());
        let z0 = 2.0 * h0 - h1;
        let z1 = 0.5 * h0 + 0.5 * h1 - 0.3;
        let expect = [1.0 / (1.0 + (-z0).exp()), 1.0 / (1.0 + (-z1).exp())];
        // values frozen from a 30-digit mpmath run of the same arithmetic
        let frozen = [0.743_430_680_045_338_1, 0.415_227_374_323_312_5];
        for i in 0..2 {
            assert!((g[i] - expect[i]).abs() < 1e-15);
            assert!((g[i] - frozen[i]).abs() < 1e-15, "{}", g[i]);
        }
    }

    #[test]
    fn gate_examples() {
        let v = [0.3, -1.2, 4.0];
        assert_eq!(apply_gate(&v, &[1.0; 3]).unwrap(), v.to_vec());
        assert_eq!(apply_gate(&v, &[0.0; 3]).unwrap(), vec![0.0, -0.0, 0.0]);
        assert_eq!(apply_gate(&v, &[0.5, 0.25, 2.0]).unwrap(), vec![0.15, -0.3, 8.0]);
        assert!(apply_gate(&v, &[1.0; 2]).is_err());
    }

    #[test]
    fn shape_errors() {
        let p = AttentionParams::zeros(3, 4, 2);
        assert!(matches!(
            att_forward(&[0.0; 4], &[0.0; 2], &p),
            Err(AttentionError::ShapeMismatch(_))
        ));
        let (_, cache) = att_forward(&[0.0; 4], &[0.0; 3], &p).unwrap();
        assert_eq!(att_backward(&[0.0; 3], &cache, &p).unwrap_err(), AttentionError::StaleCache);
        let other = AttentionParams::zeros(3, 4, 5);
        assert_eq!(att_backward(&[0.0; 4], &cache, &other).unwrap_err(), AttentionError::StaleCache);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::init(5, 6, 4, &mut rng);
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = att_forward(&v, &a, &p).unwrap();
        let g = att_backward(&[0.0; 6], &cache, &p).unwrap();
        assert!(g.params.flatten().iter().all(|&x| x == 0.0));
        assert!(g.d_audio.iter().chain(&g.d_visual).all(|&x| x == 0.0));
    }

    #[test]
    fn kink_inputs_take_negative_slope() {
        // U_a a + b is exactly 0 in every component; the gradient w.r.t. a must
        // then be scaled by the negative slope, as a left-sided derivative.
        let mut p = AttentionParams::zeros(1, 1, 1);
        p.u_a.weight = vec![1.0];
        p.w_a.weight = vec![1.0];
        p.w_av.weight = vec![1.0];
        let (_, cache) = att_forward(&[1.0], &[0.0], &p).unwrap();
        let g = att_backward(&[1.0], &cache, &p).unwrap();
        let gate_slope = 0.5 * 0.5; // sigmoid'(0) with visual = 1
        assert!((g.d_audio[0] - gate_slope * crate::nn::LEAKY_SLOPE).abs() < 1e-15);
        let h = 1e-7;
        let out = |a: f64| att_forward(&[1.0], &[a], &p).unwrap().0[0];
        let left = (out(0.0) - out(-h)) / h;
        assert!((left - g.d_audio[0]).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = AttentionParams::init(8, 8, 8, &mut rng);
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &AttentionParams, v: &[f64], a: &[f64]| -> f64 {
            let (g, _) = att_forward(v, a, p).unwrap();
            apply_gate(v, &g).unwrap().iter().zip(&up).map(|(x, y)| x * y).sum()
        };
        let (_, cache) = att_forward(&v, &a, &p).unwrap();
        let grad = att_backward(&up, &cache, &p).unwrap();
        let flat = p.flatten();
        let h = 1e-6;
        let mut numeric = Vec::with_capacity(flat.len());
        for i in 0..flat.len() {
            let mut q = p.clone();
            let mut x = flat.clone();
            x[i] += h;
            q.unflatten(&x);
            let plus = loss(&q, &v, &a);
            x[i] -= 2.0 * h;
            q.unflatten(&x);
            numeric.push((plus - loss(&q, &v, &a)) / (2.0 * h));
        }
        let err = max_relative_error(&grad.params.flatten(), &numeric, GRAD_CHECK_FLOOR);
        assert!(err < 1e-5, "{err}");
    }
}
