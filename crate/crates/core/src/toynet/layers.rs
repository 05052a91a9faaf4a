//! Convolution layers of the toy network.

use rand::Rng;

use crate::nn::{axpy, dot};

/// 3x3 "same" convolution over a `channels x time x freq` volume with zero
/// padding. Weights are laid out `[out][in][dt][df]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Index range of `t` such that `t + shift` stays inside `0..len`.
#[inline]
fn valid(len: usize, shift: isize) -> std::ops::Range<usize> {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift.max(0)).max(0) as usize;
    lo.min(hi)..hi
}

impl Conv3x3 {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            weight: vec![0.0; c_out * c_in * 9],
            bias: vec![0.0; c_out],
        }
    }

    pub fn init(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((c_in * 9) as f64).sqrt();
        let mut c = Self::zeros(c_in, c_out);
        for w in c.weight.iter_mut().chain(c.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        c
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.c_in, self.c_out)
    }

    #[inline]
    fn w(&self, o: usize, i: usize, kt: usize, kf: usize) -> f64 {
        self.weight[((o * self.c_in + i) * 3 + kt) * 3 + kf]
    }

    pub fn forward(&self, x: &[f64], t_len: usize, f_len: usize) -> Vec<f64> {
        let plane = t_len * f_len;
        debug_assert_eq!(x.len(), self.c_in * plane);
        let mut y = vec![0.0; self.c_out * plane];
        for o in 0..self.c_out {
            let yo = &mut y[o * plane..(o + 1) * plane];
            yo.fill(self.bias[o]);
            for i in 0..self.c_in {
                let xi = &x[i * plane..(i + 1) * plane];
                for kt in 0..3 {
                    let dt = kt as isize - 1;
                    for t in valid(t_len, dt) {
                        let src = (t as isize + dt) as usize * f_len;
                        let xrow = &xi[src..src + f_len];
                        let yrow = &mut yo[t * f_len..(t + 1) * f_len];
                        for kf in 0..3 {
                            let df = kf as isize - 1;
                            let r = valid(f_len, df);
                            let w = self.w(o, i, kt, kf);
                            let (a, b) = ((r.start as isize + df) as usize, (r.end as isize + df) as usize);
                            axpy(w, &xrow[a..b], &mut yrow[r]);
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad`; when `dx` is given, adds
    /// the input gradient into it.
    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        t_len: usize,
        f_len: usize,
        grad: &mut Conv3x3,
        mut dx: Option<&mut [f64]>,
    ) {
        let plane = t_len * f_len;
        for o in 0..self.c_out {
            let dyo = &dy[o * plane..(o + 1) * plane];
            grad.bias[o] += dyo.iter().sum::<f64>();
            for i in 0..self.c_in {
                let xi = &x[i * plane..(i + 1) * plane];
                for kt in 0..3 {
                    let dt = kt as isize - 1;
                    for kf in 0..3 {
                        let df = kf as isize - 1;
                        let r = valid(f_len, df);
                        let (a, b) = ((r.start as isize + df) as usize, (r.end as isize + df) as usize);
                        let widx = ((o * self.c_in + i) * 3 + kt) * 3 + kf;
                        let w = self.weight[widx];
                        let mut acc = 0.0;
                        for t in valid(t_len, dt) {
                            let src = (t as isize + dt) as usize * f_len;
                            let dyrow = &dyo[t * f_len..(t + 1) * f_len];
                            acc += dot(&dyrow[r.clone()], &xi[src + a..src + b]);
                            if let Some(dx) = dx.as_deref_mut() {
                                let dxi = &mut dx[i * plane..(i + 1) * plane];
                                axpy(w, &dyrow[r.clone()], &mut dxi[src + a..src + b]);
                            }
                        }
                        grad.weight[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Averages adjacent frequency bins: `c x T x F -> c x T x F/2`.
pub fn freq_pool2(x: &[f64], rows: usize, f_len: usize) -> Vec<f64> {
    let half = f_len / 2;
    let mut out = vec![0.0; rows * half];
    for r in 0..rows {
        let src = &x[r * f_len..(r + 1) * f_len];
        for (j, o) in out[r * half..(r + 1) * half].iter_mut().enumerate() {
            *o = 0.5 * (src[2 * j] + src[2 * j + 1]);
        }
    }
    out
}

pub fn freq_pool2_backward(dout: &[f64], rows: usize, f_len: usize) -> Vec<f64> {
    let half = f_len / 2;
    let mut dx = vec![0.0; rows * f_len];
    for r in 0..rows {
        for j in 0..half {
            let g = 0.5 * dout[r * half + j];
            dx[r * f_len + 2 * j] = g;
            dx[r * f_len + 2 * j + 1] = g;
        }
    }
    dx
}

/// Dilated temporal convolution over a time-major `T x n_in` sequence with
/// kernel 3 and zero padding. Weights are laid out `[tap][out][in]`; tap `j`
/// reads frame `t + (j - 1) * dilation`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConv {
    pub n_in: usize,
    pub n_out: usize,
    pub dilation: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TemporalConv {
    pub fn zeros(n_in: usize, n_out: usize, dilation: usize) -> Self {
        Self {
            n_in,
            n_out,
            dilation,
            weight: vec![0.0; 3 * n_out * n_in],
            bias: vec![0.0; n_out],
        }
    }

    pub fn init(n_in: usize, n_out: usize, dilation: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((3 * n_in) as f64).sqrt();
        let mut c = Self::zeros(n_in, n_out, dilation);
        for w in c.weight.iter_mut().chain(c.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        c
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_in, self.n_out, self.dilation)
    }

    fn row(&self, tap: usize, o: usize) -> &[f64] {
        let off = (tap * self.n_out + o) * self.n_in;
        &self.weight[off..off + self.n_in]
    }

    fn source(&self, t: usize, tap: usize, t_len: usize) -> Option<usize> {
        let s = t as isize + (tap as isize - 1) * self.dilation as isize;
        (0..t_len as isize).contains(&s).then_some(s as usize)
    }

    pub fn forward(&self, x: &[f64], t_len: usize) -> Vec<f64> {
        let mut y = vec![0.0; t_len * self.n_out];
        for t in 0..t_len {
            let yt = &mut y[t * self.n_out..(t + 1) * self.n_out];
            yt.copy_from_slice(&self.bias);
            for tap in 0..3 {
                if let Some(s) = self.source(t, tap, t_len) {
                    let xs = &x[s * self.n_in..(s + 1) * self.n_in];
                    for (o, yo) in yt.iter_mut().enumerate() {
                        *yo += dot(self.row(tap, o), xs);
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], t_len: usize, grad: &mut TemporalConv) -> Vec<f64> {
        let mut dx = vec![0.0; t_len * self.n_in];
        for t in 0..t_len {
            let dyt = &dy[t * self.n_out..(t + 1) * self.n_out];
            axpy(1.0, dyt, &mut grad.bias);
            for tap in 0..3 {
                let Some(s) = self.source(t, tap, t_len) else { continue };
                let xs = &x[s * self.n_in..(s + 1) * self.n_in];
                for (o, &g) in dyt.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let off = (tap * self.n_out + o) * self.n_in;
                    axpy(g, xs, &mut grad.weight[off..off + self.n_in]);
                    axpy(g, &self.weight[off..off + self.n_in], &mut dx[s * self.n_in..(s + 1) * self.n_in]);
                }
            }
        }
        dx
    }
}
