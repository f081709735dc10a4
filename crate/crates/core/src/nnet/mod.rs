//! Spatiotemporal sequence classifier with hand-derived gradients.
//!
//! Each visit's profile is standardized per point, passed through a circular
//! 1-D convolution (ReLU) and a linear map to a feature vector. Consecutive
//! feature vectors are mixed by a convolution across the visit axis (tanh),
//! and the mixed sequence is read by a gated recurrent cell. The final hidden
//! state feeds up to three two-class heads and two projection heads.
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] maps tensors to
//! offsets so that optimizers and checkpoints treat them uniformly.

mod loss;
mod objective;
mod optim;

pub use loss::{
    cce_from_logits, loss_bce, loss_cce, loss_ntxent, loss_smoothed_cce, ntxent_with_grad, softmax2,
    PROB_FLOOR,
};
pub use objective::{
    contrastive_objective, noisepu_objective, regcon_objective, supervised_objective, Branches, LossParts,
    RegconWeights, SupervisedLoss,
};
pub use optim::{joint_loss_noisepu, joint_loss_regcon, sgd_step, LrSchedule, OptState};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::sequences::SequenceObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Pu,
    Noise,
    Main,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Pu, Head::Noise, Head::Main];

    fn index(self) -> usize {
        match self {
            Head::Pu => 0,
            Head::Noise => 1,
            Head::Main => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Head::Pu => "pu",
            Head::Noise => "noise",
            Head::Main => "main",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pu" => Ok(Head::Pu),
            "noise" => Ok(Head::Noise),
            "main" => Ok(Head::Main),
            _ => Err(format!("unknown head `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Projection {
    Phi,
    Psi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Single forget gate shared between reset and update (minimal gated unit).
    GatedSimple,
    FullLstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::GatedSimple => 2,
            CellKind::FullLstm => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub profile_len: usize,
    pub tau: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub feature_dim: usize,
    pub temporal_kernel: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub proj_dim: usize,
    pub heads: Vec<Head>,
    pub cell: CellKind,
    /// Feed each visit's deviation from the window mean as a second input
    /// channel next to the standardized profile.
    pub deviation_channel: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            profile_len: 64,
            tau: 5,
            conv_channels: 8,
            conv_kernel: 7,
            feature_dim: 32,
            temporal_kernel: 3,
            hidden_dim: 32,
            n_classes: 2,
            proj_dim: 16,
            heads: Head::ALL.to_vec(),
            cell: CellKind::GatedSimple,
            deviation_channel: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("profile_len", self.profile_len),
            ("tau", self.tau),
            ("conv_channels", self.conv_channels),
            ("conv_kernel", self.conv_kernel),
            ("feature_dim", self.feature_dim),
            ("temporal_kernel", self.temporal_kernel),
            ("hidden_dim", self.hidden_dim),
            ("proj_dim", self.proj_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("model.{name}"), "must be >= 1"));
            }
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::config("model.conv_kernel", "must be odd"));
        }
        if self.tau < self.temporal_kernel {
            return Err(Error::config("model.temporal_kernel", "must not exceed tau"));
        }
        if self.n_classes != 2 {
            return Err(Error::config("model.n_classes", "only 2 classes are supported"));
        }
        if self.heads.is_empty() {
            return Err(Error::config("model.heads", "at least one head is required"));
        }
        Ok(())
    }

    pub fn has_head(&self, head: Head) -> bool {
        self.heads.contains(&head)
    }

    pub fn input_channels(&self) -> usize {
        1 + usize::from(self.deviation_channel)
    }

    /// Number of steps the recurrent cell runs for.
    pub fn steps(&self) -> usize {
        self.tau - self.temporal_kernel + 1
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub conv_w: usize,
    pub conv_b: usize,
    pub lin_w: usize,
    pub lin_b: usize,
    pub tmp_w: usize,
    pub tmp_b: usize,
    pub cell_w: usize,
    pub cell_u: usize,
    pub cell_b: usize,
    heads: [Option<usize>; 3],
    pub phi_w: usize,
    pub phi_b: usize,
    pub psi_w: usize,
    pub psi_b: usize,
    pub total: usize,
    segments: Vec<Segment>,
}

/// One named tensor: offset, length and fan-in (None for biases).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub fan_in: Option<usize>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let (c, k, p, f) = (cfg.conv_channels, cfg.conv_kernel, cfg.profile_len, cfg.feature_dim);
        let (kt, z, d) = (cfg.temporal_kernel, cfg.hidden_dim, cfg.proj_dim);
        let g = cfg.cell.gates();
        let mut segments = Vec::new();
        let mut off = 0usize;
        let mut push = |name: &str, len: usize, fan_in: Option<usize>| {
            segments.push(Segment { name: name.to_string(), offset: off, len, fan_in });
            off += len;
            off - len
        };
        let ci = cfg.input_channels();
        let conv_w = push("conv.weight", c * ci * k, Some(ci * k));
        let conv_b = push("conv.bias", c, None);
        let lin_w = push("linear.weight", f * c * p, Some(c * p));
        let lin_b = push("linear.bias", f, None);
        let tmp_w = push("temporal.weight", f * kt * f, Some(kt * f));
        let tmp_b = push("temporal.bias", f, None);
        let cell_w = push("cell.input_weight", g * z * f, Some(f));
        let cell_u = push("cell.hidden_weight", g * z * z, Some(z));
        let cell_b = push("cell.bias", g * z, None);
        let mut heads = [None; 3];
        for h in Head::ALL {
            if cfg.has_head(h) {
                let w = push(&format!("head.{}.weight", h.as_str()), 2 * z, Some(z));
                push(&format!("head.{}.bias", h.as_str()), 2, None);
                heads[h.index()] = Some(w);
            }
        }
        let phi_w = push("proj.phi.weight", d * z, Some(z));
        let phi_b = push("proj.phi.bias", d, None);
        let psi_w = push("proj.psi.weight", d * z, Some(z));
        let psi_b = push("proj.psi.bias", d, None);
        Layout {
            conv_w,
            conv_b,
            lin_w,
            lin_b,
            tmp_w,
            tmp_b,
            cell_w,
            cell_u,
            cell_b,
            heads,
            phi_w,
            phi_b,
            psi_w,
            psi_b,
            total: off,
            segments,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn head(&self, head: Head) -> Option<usize> {
        self.heads[head.index()]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub values: Vec<f64>,
    /// Per-point input standardization, fitted on training data.
    pub input_mean: Vec<f64>,
    pub input_sd: Vec<f64>,
    /// Per-point scale of within-window deviations.
    pub deviation_sd: Vec<f64>,
    #[serde(skip)]
    layout: Option<Layout>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.values == other.values
            && self.input_mean == other.input_mean
            && self.input_sd == other.input_sd
            && self.deviation_sd == other.deviation_sd
    }
}

/// Uniform fan-in initialization, zero biases, identity standardization.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut values = vec![0.0; layout.total];
    let mut rng = rng::stream(cfg.init_seed, &[tag::INIT]);
    for seg in layout.segments() {
        if let Some(fan_in) = seg.fan_in {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[seg.offset..seg.offset + seg.len] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
    Ok(ModelParams {
        config: cfg.clone(),
        values,
        input_mean: vec![0.0; cfg.profile_len],
        input_sd: vec![1.0; cfg.profile_len],
        deviation_sd: vec![1.0; cfg.profile_len],
        layout: Some(layout),
    })
}

/// Per-point mean over the visits of a window.
fn window_means(o: &SequenceObservation) -> Vec<f64> {
    let mut m = vec![0.0; o.profile_len];
    for r in 0..o.tau {
        for (a, v) in m.iter_mut().zip(o.row(r)) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= o.tau as f64);
    m
}

/// Smallest standard deviation used for standardization.
const SD_FLOOR: f64 = 1e-6;

impl ModelParams {
    pub fn layout(&self) -> std::borrow::Cow<'_, Layout> {
        match &self.layout {
            Some(l) => std::borrow::Cow::Borrowed(l),
            None => std::borrow::Cow::Owned(Layout::new(&self.config)),
        }
    }

    /// Rebuild the cached layout, e.g. after deserialization.
    pub fn relayout(&mut self) -> Result<()> {
        self.config.validate()?;
        let l = Layout::new(&self.config);
        if l.total != self.values.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", l.total),
                found: format!("{}", self.values.len()),
            });
        }
        let p = self.config.profile_len;
        if self.input_mean.len() != p || self.input_sd.len() != p || self.deviation_sd.len() != p {
            return Err(Error::Shape {
                expected: format!("{p} standardization entries"),
                found: format!("{}/{}/{}", self.input_mean.len(), self.input_sd.len(), self.deviation_sd.len()),
            });
        }
        self.layout = Some(l);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Fit per-point mean and sd over every visit row of `observations`, and
    /// the pooled within-window sd of each point.
    pub fn fit_standardization(&mut self, observations: &[SequenceObservation]) {
        let p = self.config.profile_len;
        let mut sum = vec![0.0; p];
        let mut n = 0usize;
        for o in observations {
            for r in 0..o.tau {
                for (s, v) in sum.iter_mut().zip(o.row(r)) {
                    *s += v;
                }
                n += 1;
            }
        }
        if n < 2 {
            return;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut ss = vec![0.0; p];
        for o in observations {
            for r in 0..o.tau {
                for ((s, v), m) in ss.iter_mut().zip(o.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        self.input_sd = ss.iter().map(|s| (s / (n - 1) as f64).sqrt().max(SD_FLOOR)).collect();
        self.input_mean = mean;
        let mut dev = vec![0.0; p];
        let mut dof = 0usize;
        for o in observations {
            let wm = window_means(o);
            for r in 0..o.tau {
                for ((s, v), m) in dev.iter_mut().zip(o.row(r)).zip(&wm) {
                    *s += (v - m) * (v - m);
                }
            }
            dof += o.tau - 1;
        }
        if dof > 0 {
            self.deviation_sd = dev.iter().map(|s| (s / dof as f64).sqrt().max(SD_FLOOR)).collect();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    xs: Vec<f64>,
    act1: Vec<f64>,
    feat: Vec<f64>,
    mixed: Vec<f64>,
    hs: Vec<f64>,
    cs: Vec<f64>,
    gates: Vec<f64>,
    /// Final recurrent hidden state.
    pub latent: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[r] += sum_c w[r, c] * x[c]`
fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = [0.0; 4];
        let mut rc = row.chunks_exact(4);
        let mut xc = x[..cols].chunks_exact(4);
        for (a, b) in rc.by_ref().zip(xc.by_ref()) {
            for i in 0..4 {
                acc[i] += a[i] * b[i];
            }
        }
        let mut tail = 0.0;
        for (a, b) in rc.remainder().iter().zip(xc.remainder()) {
            tail += a * b;
        }
        *o += (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
    }
}

/// `dx[c] += sum_r w[r, c] * dy[r]`
fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += a * g;
        }
    }
}

/// `dw[r, c] += dy[r] * x[c]`
fn outer_acc(dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

/// `out[i] = x[(i + len - half) % len]` for `i < out.len()`.
fn circular_pad(x: &[f64], half: usize, out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = x[(i + n - half) % n];
    }
}

/// Upstream gradients arriving at the heads of one observation.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    pub heads: Vec<(Head, [f64; 2])>,
    pub projections: Vec<(Projection, Vec<f64>)>,
}

impl ModelParams {
    fn check_obs(&self, obs: &SequenceObservation) -> Result<()> {
        let cfg = &self.config;
        if obs.tau != cfg.tau || obs.profile_len != cfg.profile_len {
            return Err(Error::Shape {
                expected: format!("{}x{}", cfg.tau, cfg.profile_len),
                found: format!("{}x{}", obs.tau, obs.profile_len),
            });
        }
        if obs.inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input of observation {}", obs.key())));
        }
        Ok(())
    }

    /// Encoder forward pass up to the latent state.
    pub fn encode(&self, obs: &SequenceObservation) -> Result<Trace> {
        self.check_obs(obs)?;
        let cfg = &self.config;
        let l = self.layout();
        let w = &self.values;
        let (tau, p, c, k, f) = (cfg.tau, cfg.profile_len, cfg.conv_channels, cfg.conv_kernel, cfg.feature_dim);
        let (kt, z, g) = (cfg.temporal_kernel, cfg.hidden_dim, cfg.cell.gates());
        let half = k / 2;

        // Input planes per visit: standardized profile, then the optional
        // scaled deviation from the window mean.
        let ci = cfg.input_channels();
        let mut xs = vec![0.0; tau * ci * p];
        let wm = window_means(obs);
        for t in 0..tau {
            for q in 0..p {
                let v = obs.inputs[t * p + q];
                xs[t * ci * p + q] = (v - self.input_mean[q]) / self.input_sd[q];
                if ci == 2 {
                    xs[(t * ci + 1) * p + q] = (v - wm[q]) / self.deviation_sd[q];
                }
            }
        }

        let mut act1 = vec![0.0; tau * c * p];
        let mut xpad = vec![0.0; ci * (p + k - 1)];
        let pw = p + k - 1;
        for t in 0..tau {
            for i in 0..ci {
                circular_pad(&xs[(t * ci + i) * p..(t * ci + i + 1) * p], half, &mut xpad[i * pw..(i + 1) * pw]);
            }
            for ch in 0..c {
                let b = w[l.conv_b + ch];
                let out = &mut act1[(t * c + ch) * p..(t * c + ch + 1) * p];
                out.iter_mut().for_each(|o| *o = b);
                for i in 0..ci {
                    let kw = &w[l.conv_w + (ch * ci + i) * k..l.conv_w + (ch * ci + i + 1) * k];
                    let xp = &xpad[i * pw..(i + 1) * pw];
                    for (q, o) in out.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (kv, xv) in kw.iter().zip(&xp[q..q + k]) {
                            acc += kv * xv;
                        }
                        *o += acc;
                    }
                }
                out.iter_mut().for_each(|o| *o = o.max(0.0));
            }
        }

        let mut feat = vec![0.0; tau * f];
        for t in 0..tau {
            let out = &mut feat[t * f..(t + 1) * f];
            out.copy_from_slice(&w[l.lin_b..l.lin_b + f]);
            matvec_acc(&w[l.lin_w..l.lin_w + f * c * p], c * p, &act1[t * c * p..(t + 1) * c * p], out);
        }

        let steps = cfg.steps();
        let mut mixed = vec![0.0; steps * f];
        for s in 0..steps {
            let out = &mut mixed[s * f..(s + 1) * f];
            out.copy_from_slice(&w[l.tmp_b..l.tmp_b + f]);
            matvec_acc(&w[l.tmp_w..l.tmp_w + f * kt * f], kt * f, &feat[s * f..(s + kt) * f], out);
            for v in out.iter_mut() {
                *v = v.tanh();
            }
        }

        let cw = &w[l.cell_w..l.cell_w + g * z * f];
        let cu = &w[l.cell_u..l.cell_u + g * z * z];
        let cb = &w[l.cell_b..l.cell_b + g * z];
        let mut hs = vec![0.0; (steps + 1) * z];
        let mut cs = vec![0.0; (steps + 1) * z];
        let mut gates = vec![0.0; steps * g * z];
        for s in 0..steps {
            let u = &mixed[s * f..(s + 1) * f];
            let (h_prev, h_rest) = hs.split_at_mut((s + 1) * z);
            let h_prev = &h_prev[s * z..];
            let h_next = &mut h_rest[..z];
            let gs = &mut gates[s * g * z..(s + 1) * g * z];
            match cfg.cell {
                CellKind::GatedSimple => {
                    let mut a_f = cb[..z].to_vec();
                    matvec_acc(&cw[..z * f], f, u, &mut a_f);
                    matvec_acc(&cu[..z * z], z, h_prev, &mut a_f);
                    let fg: Vec<f64> = a_f.iter().map(|&a| sigmoid(a)).collect();
                    let reset: Vec<f64> = fg.iter().zip(h_prev).map(|(a, b)| a * b).collect();
                    let mut a_h = cb[z..2 * z].to_vec();
                    matvec_acc(&cw[z * f..2 * z * f], f, u, &mut a_h);
                    matvec_acc(&cu[z * z..2 * z * z], z, &reset, &mut a_h);
                    for i in 0..z {
                        let cand = a_h[i].tanh();
                        gs[i] = fg[i];
                        gs[z + i] = cand;
                        h_next[i] = (1.0 - fg[i]) * h_prev[i] + fg[i] * cand;
                    }
                }
                CellKind::FullLstm => {
                    let mut a = cb.to_vec();
                    matvec_acc(cw, f, u, &mut a);
                    matvec_acc(cu, z, h_prev, &mut a);
                    for i in 0..z {
                        let ig = sigmoid(a[i]);
                        let fg = sigmoid(a[z + i]);
                        let cand = a[2 * z + i].tanh();
                        let og = sigmoid(a[3 * z + i]);
                        gs[i] = ig;
                        gs[z + i] = fg;
                        gs[2 * z + i] = cand;
                        gs[3 * z + i] = og;
                        let cell = fg * cs[s * z + i] + ig * cand;
                        cs[(s + 1) * z + i] = cell;
                        h_next[i] = og * cell.tanh();
                    }
                }
            }
        }
        let latent = hs[steps * z..].to_vec();
        if latent.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent of observation {}", obs.key())));
        }
        Ok(Trace { xs, act1, feat, mixed, hs, cs, gates, latent })
    }

    pub fn head_logits(&self, head: Head, latent: &[f64]) -> Result<[f64; 2]> {
        let l = self.layout();
        let off = l
            .head(head)
            .ok_or_else(|| Error::config("model.heads", format!("head `{}` is not enabled", head.as_str())))?;
        let z = self.config.hidden_dim;
        let mut out = [self.values[off + 2 * z], self.values[off + 2 * z + 1]];
        matvec_acc(&self.values[off..off + 2 * z], z, latent, &mut out);
        Ok(out)
    }

    pub fn project(&self, which: Projection, latent: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let (wo, bo) = match which {
            Projection::Phi => (l.phi_w, l.phi_b),
            Projection::Psi => (l.psi_w, l.psi_b),
        };
        let (z, d) = (self.config.hidden_dim, self.config.proj_dim);
        let mut out = self.values[bo..bo + d].to_vec();
        matvec_acc(&self.values[wo..wo + d * z], z, latent, &mut out);
        out
    }

    /// Class probabilities of one head.
    pub fn probabilities(&self, obs: &SequenceObservation, head: Head) -> Result<[f64; 2]> {
        let tr = self.encode(obs)?;
        Ok(softmax2(self.head_logits(head, &tr.latent)?))
    }

    /// Accumulate parameter gradients of one observation into `grad` and
    /// optionally return the gradient with respect to the raw inputs.
    pub fn backward(
        &self,
        trace: &Trace,
        upstream: &Upstream,
        grad: &mut [f64],
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        let cfg = &self.config;
        let l = self.layout();
        let w = &self.values;
        let (tau, p, c, k, f) = (cfg.tau, cfg.profile_len, cfg.conv_channels, cfg.conv_kernel, cfg.feature_dim);
        let (kt, z, g, d) = (cfg.temporal_kernel, cfg.hidden_dim, cfg.cell.gates(), cfg.proj_dim);
        let half = k / 2;
        let steps = cfg.steps();

        let mut dh = vec![0.0; z];
        for (head, dl) in &upstream.heads {
            let off = l
                .head(*head)
                .ok_or_else(|| Error::config("model.heads", format!("head `{}` is not enabled", head.as_str())))?;
            outer_acc(&mut grad[off..off + 2 * z], z, dl, &trace.latent);
            grad[off + 2 * z] += dl[0];
            grad[off + 2 * z + 1] += dl[1];
            matvec_t_acc(&w[off..off + 2 * z], z, dl, &mut dh);
        }
        for (which, dp) in &upstream.projections {
            let (wo, bo) = match which {
                Projection::Phi => (l.phi_w, l.phi_b),
                Projection::Psi => (l.psi_w, l.psi_b),
            };
            outer_acc(&mut grad[wo..wo + d * z], z, dp, &trace.latent);
            for (gb, v) in grad[bo..bo + d].iter_mut().zip(dp) {
                *gb += v;
            }
            matvec_t_acc(&w[wo..wo + d * z], z, dp, &mut dh);
        }

        let mut dmixed = vec![0.0; steps * f];
        let mut dc = vec![0.0; z];
        for s in (0..steps).rev() {
            let u = &trace.mixed[s * f..(s + 1) * f];
            let h_prev = &trace.hs[s * z..(s + 1) * z];
            let gs = &trace.gates[s * g * z..(s + 1) * g * z];
            let du = &mut dmixed[s * f..(s + 1) * f];
            let mut dh_prev = vec![0.0; z];
            match cfg.cell {
                CellKind::GatedSimple => {
                    let (fg, cand) = (&gs[..z], &gs[z..2 * z]);
                    let mut da_h = vec![0.0; z];
                    let mut df = vec![0.0; z];
                    for i in 0..z {
                        da_h[i] = dh[i] * fg[i] * (1.0 - cand[i] * cand[i]);
                        df[i] = dh[i] * (cand[i] - h_prev[i]);
                        dh_prev[i] = dh[i] * (1.0 - fg[i]);
                    }
                    let reset: Vec<f64> = fg.iter().zip(h_prev).map(|(a, b)| a * b).collect();
                    outer_acc(&mut grad[l.cell_w + z * f..l.cell_w + 2 * z * f], f, &da_h, u);
                    outer_acc(&mut grad[l.cell_u + z * z..l.cell_u + 2 * z * z], z, &da_h, &reset);
                    for i in 0..z {
                        grad[l.cell_b + z + i] += da_h[i];
                    }
                    matvec_t_acc(&w[l.cell_w + z * f..l.cell_w + 2 * z * f], f, &da_h, du);
                    let mut dreset = vec![0.0; z];
                    matvec_t_acc(&w[l.cell_u + z * z..l.cell_u + 2 * z * z], z, &da_h, &mut dreset);
                    let mut da_f = vec![0.0; z];
                    for i in 0..z {
                        dh_prev[i] += dreset[i] * fg[i];
                        df[i] += dreset[i] * h_prev[i];
                        da_f[i] = df[i] * fg[i] * (1.0 - fg[i]);
                    }
                    outer_acc(&mut grad[l.cell_w..l.cell_w + z * f], f, &da_f, u);
                    outer_acc(&mut grad[l.cell_u..l.cell_u + z * z], z, &da_f, h_prev);
                    for i in 0..z {
                        grad[l.cell_b + i] += da_f[i];
                    }
                    matvec_t_acc(&w[l.cell_w..l.cell_w + z * f], f, &da_f, du);
                    matvec_t_acc(&w[l.cell_u..l.cell_u + z * z], z, &da_f, &mut dh_prev);
                }
                CellKind::FullLstm => {
                    let c_prev = &trace.cs[s * z..(s + 1) * z];
                    let c_next = &trace.cs[(s + 1) * z..(s + 2) * z];
                    let mut da = vec![0.0; g * z];
                    let mut dc_prev = vec![0.0; z];
                    for i in 0..z {
                        let (ig, fg, cand, og) = (gs[i], gs[z + i], gs[2 * z + i], gs[3 * z + i]);
                        let tc = c_next[i].tanh();
                        let dcell = dc[i] + dh[i] * og * (1.0 - tc * tc);
                        da[i] = dcell * cand * ig * (1.0 - ig);
                        da[z + i] = dcell * c_prev[i] * fg * (1.0 - fg);
                        da[2 * z + i] = dcell * ig * (1.0 - cand * cand);
                        da[3 * z + i] = dh[i] * tc * og * (1.0 - og);
                        dc_prev[i] = dcell * fg;
                    }
                    outer_acc(&mut grad[l.cell_w..l.cell_w + g * z * f], f, &da, u);
                    outer_acc(&mut grad[l.cell_u..l.cell_u + g * z * z], z, &da, h_prev);
                    for i in 0..g * z {
                        grad[l.cell_b + i] += da[i];
                    }
                    matvec_t_acc(&w[l.cell_w..l.cell_w + g * z * f], f, &da, du);
                    matvec_t_acc(&w[l.cell_u..l.cell_u + g * z * z], z, &da, &mut dh_prev);
                    dc = dc_prev;
                }
            }
            dh = dh_prev;
        }

        let mut dfeat = vec![0.0; tau * f];
        for s in 0..steps {
            let m = &trace.mixed[s * f..(s + 1) * f];
            let dpre: Vec<f64> = dmixed[s * f..(s + 1) * f]
                .iter()
                .zip(m)
                .map(|(dv, mv)| dv * (1.0 - mv * mv))
                .collect();
            outer_acc(&mut grad[l.tmp_w..l.tmp_w + f * kt * f], kt * f, &dpre, &trace.feat[s * f..(s + kt) * f]);
            for (gb, v) in grad[l.tmp_b..l.tmp_b + f].iter_mut().zip(&dpre) {
                *gb += v;
            }
            matvec_t_acc(&w[l.tmp_w..l.tmp_w + f * kt * f], kt * f, &dpre, &mut dfeat[s * f..(s + kt) * f]);
        }

        let ci = cfg.input_channels();
        let pw = p + k - 1;
        let mut dxs = if want_input { vec![0.0; tau * ci * p] } else { Vec::new() };
        let mut dact = vec![0.0; c * p];
        let mut xpad = vec![0.0; ci * pw];
        let mut dpad = vec![0.0; ci * pw];
        for t in 0..tau {
            let df = &dfeat[t * f..(t + 1) * f];
            let act = &trace.act1[t * c * p..(t + 1) * c * p];
            outer_acc(&mut grad[l.lin_w..l.lin_w + f * c * p], c * p, df, act);
            for (gb, v) in grad[l.lin_b..l.lin_b + f].iter_mut().zip(df) {
                *gb += v;
            }
            dact.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&w[l.lin_w..l.lin_w + f * c * p], c * p, df, &mut dact);
            for i in 0..ci {
                circular_pad(&trace.xs[(t * ci + i) * p..(t * ci + i + 1) * p], half, &mut xpad[i * pw..(i + 1) * pw]);
            }
            dpad.iter_mut().for_each(|v| *v = 0.0);
            for ch in 0..c {
                let mut gw = vec![0.0; ci * k];
                let mut gb = 0.0;
                for q in 0..p {
                    let idx = ch * p + q;
                    if act[idx] <= 0.0 {
                        continue;
                    }
                    let dpre = dact[idx];
                    gb += dpre;
                    for i in 0..ci {
                        let xp = &xpad[i * pw + q..i * pw + q + k];
                        for (g, xv) in gw[i * k..(i + 1) * k].iter_mut().zip(xp) {
                            *g += dpre * xv;
                        }
                        if want_input {
                            let kw = &w[l.conv_w + (ch * ci + i) * k..l.conv_w + (ch * ci + i + 1) * k];
                            for (dv, kv) in dpad[i * pw + q..i * pw + q + k].iter_mut().zip(kw) {
                                *dv += kv * dpre;
                            }
                        }
                    }
                }
                grad[l.conv_b + ch] += gb;
                for (g, v) in grad[l.conv_w + ch * ci * k..l.conv_w + (ch + 1) * ci * k].iter_mut().zip(&gw) {
                    *g += v;
                }
            }
            if want_input {
                for i in 0..ci {
                    for (j, v) in dpad[i * pw..(i + 1) * pw].iter().enumerate() {
                        dxs[(t * ci + i) * p + (j + p - half) % p] += v;
                    }
                }
            }
        }
        if !want_input {
            return Ok(None);
        }
        let mut dx = vec![0.0; tau * p];
        for t in 0..tau {
            for q in 0..p {
                dx[t * p + q] = dxs[t * ci * p + q] / self.input_sd[q];
            }
        }
        if ci == 2 {
            // d/dx of (x_t - mean_s x_s) / sd is (g_t - mean_s g_s) / sd.
            for q in 0..p {
                let gm = (0..tau).map(|t| dxs[(t * ci + 1) * p + q]).sum::<f64>() / tau as f64;
                for t in 0..tau {
                    dx[t * p + q] += (dxs[(t * ci + 1) * p + q] - gm) / self.deviation_sd[q];
                }
            }
        }
        let dxs = dx;
        if dxs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input gradient".into()));
        }
        Ok(Some(dxs))
    }

    /// Gradient of a head's class-1 probability with respect to the inputs.
    pub fn score_input_gradient(&self, obs: &SequenceObservation, head: Head) -> Result<Vec<f64>> {
        let tr = self.encode(obs)?;
        let pr = softmax2(self.head_logits(head, &tr.latent)?);
        let s = pr[0] * pr[1];
        let up = Upstream { heads: vec![(head, [-s, s])], projections: vec![] };
        let mut scratch = vec![0.0; self.values.len()];
        Ok(self.backward(&tr, &up, &mut scratch, true)?.expect("input gradient requested"))
    }
}
