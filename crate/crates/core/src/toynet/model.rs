use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{freq_pool2, freq_pool2_backward, Conv3x3, TemporalConv};
use super::{InputNorm, ToyNetConfig, ToyNetError, N_STAGES};
use crate::attention::{att_backward_accumulate, att_forward, AttentionCache, AttentionParams};
use crate::codec::{decode, FrameEvents, ModelFrameOutput};
use crate::features::{pool_video_rate, pool_video_rate_backward, PooledSeq, AUDIO_CHANNELS, FRAMES_PER_VIDEO_FRAME};
use crate::losses::{sce_masked_mse, sed_bce, total_loss, LossBreakdown, LossWeights};
use crate::nn::{leaky_relu, leaky_relu_grad, sigmoid, Dense, Parameterized};

/// All trainable tensors of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetParams {
    pub conv: Vec<Conv3x3>,
    pub att: Vec<AttentionParams>,
    pub context: TemporalConv,
    pub sed_hidden: Dense,
    pub sed_out: Dense,
    pub sce_hidden: Dense,
    pub sce_out: Dense,
}

impl ToyNetParams {
    pub fn init(cfg: &ToyNetConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let conv = (0..N_STAGES)
            .map(|s| Conv3x3::init(cfg.stage_in_channels(s), cfg.widths[s], &mut rng))
            .collect();
        let att = (0..N_STAGES)
            .map(|s| AttentionParams::init(cfg.embedding_dim(s), cfg.visual_dim, cfg.att_dim, &mut rng))
            .collect();
        let context = TemporalConv::init(cfg.fused_dim(), cfg.context_width, cfg.context_dilation, &mut rng);
        let c = cfg.n_classes;
        Self {
            conv,
            att,
            context,
            sed_hidden: Dense::init(cfg.context_width, cfg.head_hidden, &mut rng),
            sed_out: Dense::init(cfg.head_hidden, c, &mut rng),
            sce_hidden: Dense::init(cfg.context_width, cfg.head_hidden, &mut rng),
            sce_out: Dense::init(cfg.head_hidden, 3 * c, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv: self.conv.iter().map(Conv3x3::zeros_like).collect(),
            att: self.att.iter().map(AttentionParams::zeros_like).collect(),
            context: self.context.zeros_like(),
            sed_hidden: self.sed_hidden.zeros_like(),
            sed_out: self.sed_out.zeros_like(),
            sce_hidden: self.sce_hidden.zeros_like(),
            sce_out: self.sce_out.zeros_like(),
        }
    }
}

impl Parameterized for ToyNetParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (s, c) in self.conv.iter().enumerate() {
            f(&format!("stage{s}.conv.weight"), &[c.c_out, c.c_in, 3, 3], &c.weight);
            f(&format!("stage{s}.conv.bias"), &[c.c_out], &c.bias);
        }
        for (s, a) in self.att.iter().enumerate() {
            a.visit_named(&format!("stage{s}.att"), f);
        }
        let t = &self.context;
        f("context.weight", &[3, t.n_out, t.n_in], &t.weight);
        f("context.bias", &[t.n_out], &t.bias);
        self.sed_hidden.visit_named("sed.hidden", f);
        self.sed_out.visit_named("sed.out", f);
        self.sce_hidden.visit_named("sce.hidden", f);
        self.sce_out.visit_named("sce.out", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (s, c) in self.conv.iter_mut().enumerate() {
            f(&format!("stage{s}.conv.weight"), &mut c.weight);
            f(&format!("stage{s}.conv.bias"), &mut c.bias);
        }
        for (s, a) in self.att.iter_mut().enumerate() {
            a.visit_named_mut(&format!("stage{s}.att"), f);
        }
        f("context.weight", &mut self.context.weight);
        f("context.bias", &mut self.context.bias);
        self.sed_hidden.visit_named_mut("sed.hidden", f);
        self.sed_out.visit_named_mut("sed.out", f);
        self.sce_hidden.visit_named_mut("sce.hidden", f);
        self.sce_out.visit_named_mut("sce.out", f);
    }
}

/// One training clip: audio stack `7 x T x M`, visual features `T/5 x k`,
/// and video-rate targets (`T/5 x C` activity, `T/5 x C x 3` coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub audio: Vec<f64>,
    pub n_frames: usize,
    pub visual: Vec<f64>,
    pub activity: Vec<f64>,
    pub coords: Vec<f64>,
}

impl Sample {
    pub fn video_frames(&self) -> usize {
        self.n_frames / FRAMES_PER_VIDEO_FRAME
    }
}

/// Network outputs at the video rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub n_frames: usize,
    pub n_classes: usize,
    /// `F x C` activity probabilities.
    pub sed: Vec<f64>,
    /// `F x C x 3` coordinates.
    pub sce: Vec<f64>,
}

impl Prediction {
    pub fn frames(&self) -> Vec<ModelFrameOutput> {
        let c = self.n_classes;
        (0..self.n_frames)
            .map(|u| ModelFrameOutput {
                sed: self.sed[u * c..(u + 1) * c].to_vec(),
                sce: self.sce[u * 3 * c..(u + 1) * 3 * c].to_vec(),
            })
            .collect()
    }
}

struct StageTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    pooled: PooledSeq,
    att: Vec<AttentionCache>,
}

struct Trace {
    t_len: usize,
    stages: Vec<StageTrace>,
    fused: Vec<f64>,
    ctx_pre: Vec<f64>,
    ctx: Vec<f64>,
    sed_pre: Vec<f64>,
    sed_hidden: Vec<f64>,
    sce_pre: Vec<f64>,
    sce_hidden: Vec<f64>,
    out: Prediction,
}

/// `c x T x F` planes to a time-major `T x (c F)` sequence.
fn to_time_major(x: &[f64], c: usize, t_len: usize, f: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        for t in 0..t_len {
            let src = (ci * t_len + t) * f;
            let dst = t * c * f + ci * f;
            out[dst..dst + f].copy_from_slice(&x[src..src + f]);
        }
    }
    out
}

fn from_time_major(x: &[f64], c: usize, t_len: usize, f: usize, out: &mut [f64]) {
    for ci in 0..c {
        for t in 0..t_len {
            let dst = (ci * t_len + t) * f;
            let src = t * c * f + ci * f;
            for (o, v) in out[dst..dst + f].iter_mut().zip(&x[src..src + f]) {
                *o += v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub cfg: ToyNetConfig,
    pub params: ToyNetParams,
    pub norm: InputNorm,
}

impl ToyNet {
    pub fn new(cfg: ToyNetConfig) -> Result<Self, ToyNetError> {
        cfg.validate()?;
        let params = ToyNetParams::init(&cfg);
        Ok(Self {
            cfg,
            params,
            norm: InputNorm::identity(AUDIO_CHANNELS),
        })
    }

    /// Zeroes both output layers, so activity outputs start at 0.5 and
    /// coordinates at the origin.
    pub fn zero_heads(&mut self) {
        for d in [&mut self.params.sed_out, &mut self.params.sce_out] {
            d.weight.fill(0.0);
            d.bias.fill(0.0);
        }
    }

    /// Decoded events of every frame with at least one active class.
    pub fn predict_events(&self, s: &Sample, threshold: f64) -> Result<Vec<FrameEvents>, ToyNetError> {
        let mut out = Vec::new();
        for (u, f) in self.predict(&s.audio, s.n_frames, &s.visual)?.iter().enumerate() {
            let ev = decode(f, u, threshold)?;
            if !ev.is_empty() {
                out.push(ev);
            }
        }
        Ok(out)
    }

    fn check(&self, audio: &[f64], t_len: usize, visual: &[f64]) -> Result<(), ToyNetError> {
        let m = self.cfg.n_mels;
        if t_len == 0 || t_len % FRAMES_PER_VIDEO_FRAME != 0 {
            return Err(ToyNetError::ShapeMismatch(format!(
                "{t_len} frames is not a positive multiple of {FRAMES_PER_VIDEO_FRAME}"
            )));
        }
        if audio.len() != AUDIO_CHANNELS * t_len * m {
            return Err(ToyNetError::ShapeMismatch(format!(
                "audio has {} values, expected {AUDIO_CHANNELS} x {t_len} x {m}",
                audio.len()
            )));
        }
        let u = t_len / FRAMES_PER_VIDEO_FRAME;
        if visual.len() != u * self.cfg.visual_dim {
            return Err(ToyNetError::ShapeMismatch(format!(
                "visual has {} values, expected {u} x {}",
                visual.len(),
                self.cfg.visual_dim
            )));
        }
        Ok(())
    }

    /// Runs the network on one clip with `t_len` audio frames.
    pub fn forward(&self, audio: &[f64], t_len: usize, visual: &[f64]) -> Result<Prediction, ToyNetError> {
        Ok(self.trace(audio, t_len, visual)?.out)
    }

    pub fn predict(&self, audio: &[f64], t_len: usize, visual: &[f64]) -> Result<Vec<ModelFrameOutput>, ToyNetError> {
        Ok(self.forward(audio, t_len, visual)?.frames())
    }

    fn trace(&self, audio: &[f64], t_len: usize, visual: &[f64]) -> Result<Trace, ToyNetError> {
        self.check(audio, t_len, visual)?;
        let cfg = &self.cfg;
        let p = &self.params;
        let n_video = t_len / FRAMES_PER_VIDEO_FRAME;
        let k = cfg.visual_dim;

        let mut x = self.norm.apply(audio);
        let mut v = visual.to_vec();
        let mut stages = Vec::with_capacity(N_STAGES);
        for s in 0..N_STAGES {
            let f_in = cfg.stage_freqs(s);
            let c_out = cfg.widths[s];
            let pre = p.conv[s].forward(&x, t_len, f_in);
            let act: Vec<f64> = pre.iter().map(|&y| leaky_relu(y)).collect();
            let out = freq_pool2(&act, c_out * t_len, f_in);
            let n = cfg.embedding_dim(s);
            let pooled = pool_video_rate(&to_time_major(&out, c_out, t_len, f_in / 2), t_len, n)?;
            let mut caches = Vec::new();
            if cfg.attention {
                caches.reserve(n_video);
                for u in 0..n_video {
                    let vu = &mut v[u * k..(u + 1) * k];
                    let (gate, cache) = att_forward(vu, &pooled.values[u * n..(u + 1) * n], &p.att[s])?;
                    for (vi, g) in vu.iter_mut().zip(&gate) {
                        *vi *= g;
                    }
                    caches.push(cache);
                }
            }
            stages.push(StageTrace {
                input: std::mem::replace(&mut x, out),
                pre,
                pooled,
                att: caches,
            });
        }

        let n_last = cfg.embedding_dim(N_STAGES - 1);
        let m = cfg.fused_dim();
        let last = &stages[N_STAGES - 1].pooled.values;
        let mut fused = Vec::with_capacity(n_video * m);
        for u in 0..n_video {
            fused.extend_from_slice(&last[u * n_last..(u + 1) * n_last]);
            fused.extend_from_slice(&v[u * k..(u + 1) * k]);
        }
        let ctx_pre = p.context.forward(&fused, n_video);
        let ctx: Vec<f64> = ctx_pre.iter().map(|&y| leaky_relu(y)).collect();

        let (cw, hh, c) = (cfg.context_width, cfg.head_hidden, cfg.n_classes);
        let mut sed_pre = vec![0.0; n_video * hh];
        let mut sce_pre = vec![0.0; n_video * hh];
        let mut sed = vec![0.0; n_video * c];
        let mut sce = vec![0.0; n_video * 3 * c];
        for u in 0..n_video {
            let cu = &ctx[u * cw..(u + 1) * cw];
            p.sed_hidden.forward(cu, &mut sed_pre[u * hh..(u + 1) * hh]);
            p.sce_hidden.forward(cu, &mut sce_pre[u * hh..(u + 1) * hh]);
        }
        let sed_hidden: Vec<f64> = sed_pre.iter().map(|&y| leaky_relu(y)).collect();
        let sce_hidden: Vec<f64> = sce_pre.iter().map(|&y| leaky_relu(y)).collect();
        for u in 0..n_video {
            p.sed_out.forward(&sed_hidden[u * hh..(u + 1) * hh], &mut sed[u * c..(u + 1) * c]);
            p.sce_out.forward(&sce_hidden[u * hh..(u + 1) * hh], &mut sce[u * 3 * c..(u + 1) * 3 * c]);
        }
        sed.iter_mut().for_each(|z| *z = sigmoid(*z));

        Ok(Trace {
            t_len,
            stages,
            fused,
            ctx_pre,
            ctx,
            sed_pre,
            sed_hidden,
            sce_pre,
            sce_hidden,
            out: Prediction {
                n_frames: n_video,
                n_classes: c,
                sed,
                sce,
            },
        })
    }

    /// Parameter gradients given `d_sed` (w.r.t. activity probabilities) and
    /// `d_sce` (w.r.t. coordinates).
    fn backward(&self, tr: &Trace, d_sed: &[f64], d_sce: &[f64]) -> Result<ToyNetParams, ToyNetError> {
        let cfg = &self.cfg;
        let p = &self.params;
        let mut g = p.zeros_like();
        let n_video = tr.out.n_frames;
        let (cw, hh, c, k) = (cfg.context_width, cfg.head_hidden, cfg.n_classes, cfg.visual_dim);

        let mut d_ctx = vec![0.0; n_video * cw];
        let mut dh = vec![0.0; hh];
        for u in 0..n_video {
            let cu = &tr.ctx[u * cw..(u + 1) * cw];
            let dcu = &mut d_ctx[u * cw..(u + 1) * cw];

            let dz: Vec<f64> = (0..c)
                .map(|j| {
                    let y = tr.out.sed[u * c + j];
                    d_sed[u * c + j] * y * (1.0 - y)
                })
                .collect();
            let h = u * hh..(u + 1) * hh;
            dh.fill(0.0);
            p.sed_out.backward(&tr.sed_hidden[h.clone()], &dz, &mut g.sed_out, Some(&mut dh));
            for (d, &x) in dh.iter_mut().zip(&tr.sed_pre[h.clone()]) {
                *d *= leaky_relu_grad(x);
            }
            p.sed_hidden.backward(cu, &dh, &mut g.sed_hidden, Some(&mut *dcu));

            dh.fill(0.0);
            let dz = &d_sce[u * 3 * c..(u + 1) * 3 * c];
            p.sce_out.backward(&tr.sce_hidden[h.clone()], dz, &mut g.sce_out, Some(&mut dh));
            for (d, &x) in dh.iter_mut().zip(&tr.sce_pre[h]) {
                *d *= leaky_relu_grad(x);
            }
            p.sce_hidden.backward(cu, &dh, &mut g.sce_hidden, Some(dcu));
        }
        for (d, &x) in d_ctx.iter_mut().zip(&tr.ctx_pre) {
            *d *= leaky_relu_grad(x);
        }
        let d_fused = p.context.backward(&tr.fused, &d_ctx, n_video, &mut g.context);

        let m = cfg.fused_dim();
        let n_last = cfg.embedding_dim(N_STAGES - 1);
        let mut d_pooled_last = vec![0.0; n_video * n_last];
        let mut d_v = vec![0.0; n_video * k];
        for u in 0..n_video {
            let row = &d_fused[u * m..(u + 1) * m];
            d_pooled_last[u * n_last..(u + 1) * n_last].copy_from_slice(&row[..n_last]);
            d_v[u * k..(u + 1) * k].copy_from_slice(&row[n_last..]);
        }

        let t_len = tr.t_len;
        let mut d_next: Option<Vec<f64>> = None;
        for s in (0..N_STAGES).rev() {
            let st = &tr.stages[s];
            let n = cfg.embedding_dim(s);
            let mut d_pooled = if s == N_STAGES - 1 {
                std::mem::take(&mut d_pooled_last)
            } else {
                vec![0.0; n_video * n]
            };
            if cfg.attention {
                let mut d_v_prev = vec![0.0; n_video * k];
                for u in 0..n_video {
                    att_backward_accumulate(
                        &d_v[u * k..(u + 1) * k],
                        &st.att[u],
                        &p.att[s],
                        &mut g.att[s],
                        &mut d_pooled[u * n..(u + 1) * n],
                        &mut d_v_prev[u * k..(u + 1) * k],
                    )?;
                }
                d_v = d_v_prev;
            }
            let mut d_emb = vec![0.0; t_len * n];
            pool_video_rate_backward(&st.pooled, &d_pooled, &mut d_emb);

            let f_in = cfg.stage_freqs(s);
            let c_out = cfg.widths[s];
            let mut d_out = d_next.take().unwrap_or_else(|| vec![0.0; c_out * t_len * f_in / 2]);
            from_time_major(&d_emb, c_out, t_len, f_in / 2, &mut d_out);
            let mut dy = freq_pool2_backward(&d_out, c_out * t_len, f_in);
            for (d, &x) in dy.iter_mut().zip(&st.pre) {
                *d *= leaky_relu_grad(x);
            }
            if s > 0 {
                let mut dx = vec![0.0; st.input.len()];
                p.conv[s].backward(&st.input, &dy, t_len, f_in, &mut g.conv[s], Some(&mut dx));
                d_next = Some(dx);
            } else {
                p.conv[s].backward(&st.input, &dy, t_len, f_in, &mut g.conv[s], None);
            }
        }
        Ok(g)
    }

    /// Loss over a batch of clips, normalized by the total number of
    /// (frame, class) cells, and its gradient w.r.t. every parameter.
    /// Clips are processed in parallel; gradients are summed in batch order.
    pub fn loss_and_grad(
        &self,
        batch: &[&Sample],
        weights: LossWeights,
    ) -> Result<(LossBreakdown, ToyNetParams), ToyNetError> {
        use rayon::prelude::*;
        let total_frames: usize = batch.iter().map(|s| s.video_frames()).sum();
        if total_frames == 0 {
            return Err(ToyNetError::ShapeMismatch("empty batch".into()));
        }
        let parts: Vec<_> = batch
            .par_iter()
            .map(|s| self.clip_loss_and_grad(s, weights, s.video_frames() as f64 / total_frames as f64))
            .collect();
        let mut sed_loss = 0.0;
        let mut sce_loss = 0.0;
        let mut grad: Option<ToyNetParams> = None;
        for part in parts {
            let (l1, l2, g) = part?;
            sed_loss += l1;
            sce_loss += l2;
            match grad.as_mut() {
                None => grad = Some(g),
                Some(acc) => add_params(acc, &g),
            }
        }
        Ok((total_loss(sed_loss, sce_loss, weights), grad.expect("nonempty batch")))
    }

    fn clip_loss_and_grad(
        &self,
        s: &Sample,
        weights: LossWeights,
        share: f64,
    ) -> Result<(f64, f64, ToyNetParams), ToyNetError> {
        let tr = self.trace(&s.audio, s.n_frames, &s.visual)?;
        let (u, c) = (tr.out.n_frames, tr.out.n_classes);
        let (l1, mut d_sed) = sed_bce(&tr.out.sed, &s.activity, u, c)?;
        let (l2, mut d_sce) = sce_masked_mse(&tr.out.sce, &s.coords, &s.activity, u, c)?;
        d_sed.iter_mut().for_each(|d| *d *= weights.sed * share);
        d_sce.iter_mut().for_each(|d| *d *= weights.sce * share);
        let g = self.backward(&tr, &d_sed, &d_sce)?;
        Ok((l1 * share, l2 * share, g))
    }

    /// Loss only, for finite-difference checks and evaluation.
    pub fn loss(&self, batch: &[&Sample], weights: LossWeights) -> Result<LossBreakdown, ToyNetError> {
        let total_frames: usize = batch.iter().map(|s| s.video_frames()).sum();
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for s in batch {
            let out = self.forward(&s.audio, s.n_frames, &s.visual)?;
            let share = s.video_frames() as f64 / total_frames as f64;
            l1 += sed_bce(&out.sed, &s.activity, out.n_frames, out.n_classes)?.0 * share;
            l2 += sce_masked_mse(&out.sce, &s.coords, &s.activity, out.n_frames, out.n_classes)?.0 * share;
        }
        Ok(total_loss(l1, l2, weights))
    }
}

fn add_params(acc: &mut ToyNetParams, g: &ToyNetParams) {
    let flat = g.flatten();
    let mut off = 0;
    acc.visit_mut(&mut |_, v| {
        let n = v.len();
        for (a, b) in v.iter_mut().zip(&flat[off..off + n]) {
            *a += b;
        }
        off += n;
    });
}

/// Checkpoints hold the trainable tensors plus the input standardization.
impl Parameterized for ToyNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.params.visit(f);
        f("norm.mean", &[self.norm.mean.len()], &self.norm.mean);
        f("norm.std", &[self.norm.std.len()], &self.norm.std);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.params.visit_mut(f);
        f("norm.mean", &mut self.norm.mean);
        f("norm.std", &mut self.norm.std);
    }
}
