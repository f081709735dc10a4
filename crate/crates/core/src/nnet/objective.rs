//! Batch objectives with parameter gradients.
//!
//! Per-observation work runs in parallel; gradients are reduced in batch
//! order so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{cce_from_logits, ntxent_with_grad, softmax2, PROB_FLOOR};
use super::{Head, ModelParams, Projection, Trace, Upstream};
use crate::error::{Error, Result};
use crate::sequences::SequenceObservation;

/// Total loss and its weighted components.
///
/// Noise-PU: `[pu, noise, 0]`. RegCon: `[cce, smoothed cce, contrastive]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub components: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branches {
    pub pu: bool,
    pub noise: bool,
}

impl Branches {
    pub const BOTH: Branches = Branches { pu: true, noise: true };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegconWeights {
    pub alpha: f64,
    pub beta: f64,
    pub smoothing: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupervisedLoss {
    /// Binary cross-entropy on the class-1 probability.
    Bce,
    /// Categorical cross-entropy with label smoothing `mu` (0 = plain).
    Cce(f64),
}

fn encode_all(params: &ModelParams, obs: &[&SequenceObservation]) -> Result<Vec<Trace>> {
    obs.par_iter().map(|o| params.encode(o)).collect()
}

/// Observations whose gradients are accumulated into one buffer. Fixed so
/// the summation order does not depend on the thread count.
const CHUNK: usize = 16;

fn reduce(params: &ModelParams, traces: &[Trace], ups: &[Upstream]) -> Result<Vec<f64>> {
    let n = params.values.len();
    let parts: Vec<Option<Vec<f64>>> = traces
        .par_chunks(CHUNK)
        .zip(ups.par_chunks(CHUNK))
        .map(|(trs, us)| {
            let mut g: Option<Vec<f64>> = None;
            for (tr, up) in trs.iter().zip(us) {
                let zero = up.heads.iter().all(|(_, d)| d[0] == 0.0 && d[1] == 0.0)
                    && up.projections.iter().all(|(_, d)| d.iter().all(|v| *v == 0.0));
                if zero {
                    continue;
                }
                params.backward(tr, up, g.get_or_insert_with(|| vec![0.0; n]), false)?;
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; n];
    for g in parts.into_iter().flatten() {
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    Ok(total)
}

fn label(o: &SequenceObservation, head: Head) -> Result<u8> {
    o.label_for(head)
        .ok_or_else(|| Error::Input(format!("observation {} has no label for head `{}`", o.key(), head.as_str())))
}

fn bce_from_logits(logits: [f64; 2], y: u8) -> (f64, [f64; 2]) {
    let p = softmax2(logits);
    let q = p[1].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let clamped = p[1] != q;
    let (loss, dq) = if y == 1 { (-q.ln(), -1.0 / q) } else { (-(1.0 - q).ln(), 1.0 / (1.0 - q)) };
    if clamped {
        return (loss, [0.0, 0.0]);
    }
    let s = p[0] * p[1];
    (loss, [-dq * s, dq * s])
}

fn check_finite(parts: &LossParts) -> Result<()> {
    if parts.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss {}", parts.total)))
    }
}

/// Mean single-head loss over `obs`, with the head's own labels.
pub fn supervised_objective(
    params: &ModelParams,
    obs: &[&SequenceObservation],
    head: Head,
    kind: SupervisedLoss,
    want_grad: bool,
) -> Result<(LossParts, Vec<f64>)> {
    if obs.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let traces = encode_all(params, obs)?;
    let scale = 1.0 / obs.len() as f64;
    let mut loss = 0.0;
    let mut ups = Vec::with_capacity(obs.len());
    for (o, tr) in obs.iter().zip(&traces) {
        let logits = params.head_logits(head, &tr.latent)?;
        let y = label(o, head)?;
        let (l, d) = match kind {
            SupervisedLoss::Bce => bce_from_logits(logits, y),
            SupervisedLoss::Cce(mu) => cce_from_logits(logits, y, mu),
        };
        loss += l;
        ups.push(Upstream { heads: vec![(head, [d[0] * scale, d[1] * scale])], projections: vec![] });
    }
    let parts = LossParts { total: loss * scale, components: [loss * scale, 0.0, 0.0] };
    check_finite(&parts)?;
    let grad = if want_grad { reduce(params, &traces, &ups)? } else { Vec::new() };
    Ok((parts, grad))
}

/// NT-Xent between the first projection of `a` and the second of `b`.
pub fn contrastive_objective(
    params: &ModelParams,
    a: &[&SequenceObservation],
    b: &[&SequenceObservation],
    temperature: f64,
    want_grad: bool,
) -> Result<(LossParts, Vec<f64>)> {
    let ta = encode_all(params, a)?;
    let tb = encode_all(params, b)?;
    let pa: Vec<Vec<f64>> = ta.iter().map(|t| params.project(Projection::Phi, &t.latent)).collect();
    let pb: Vec<Vec<f64>> = tb.iter().map(|t| params.project(Projection::Psi, &t.latent)).collect();
    let (l, ga, gb) = ntxent_with_grad(&pa, &pb, temperature)?;
    let parts = LossParts { total: l, components: [0.0, 0.0, l] };
    check_finite(&parts)?;
    if !want_grad {
        return Ok((parts, Vec::new()));
    }
    let mut traces = ta;
    traces.extend(tb);
    let ups: Vec<Upstream> = ga
        .into_iter()
        .map(|g| Upstream { heads: vec![], projections: vec![(Projection::Phi, g)] })
        .chain(gb.into_iter().map(|g| Upstream { heads: vec![], projections: vec![(Projection::Psi, g)] }))
        .collect();
    Ok((parts, reduce(params, &traces, &ups)?))
}

/// `L_pu + alpha * L_noise`, each a mean cross-entropy over its own batch.
/// A disabled branch is skipped entirely.
pub fn noisepu_objective(
    params: &ModelParams,
    pu: &[&SequenceObservation],
    noise: &[&SequenceObservation],
    alpha: f64,
    branches: Branches,
    want_grad: bool,
) -> Result<(LossParts, Vec<f64>)> {
    let mut traces = Vec::new();
    let mut ups = Vec::new();
    let mut comp = [0.0; 3];
    let mut run = |batch: &[&SequenceObservation], head: Head, weight: f64, slot: usize| -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Input(format!("empty {} batch", head.as_str())));
        }
        let tr = encode_all(params, batch)?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (o, t) in batch.iter().zip(&tr) {
            let (l, d) = cce_from_logits(params.head_logits(head, &t.latent)?, label(o, head)?, 0.0);
            total += l;
            let s = weight * scale;
            ups.push(Upstream { heads: vec![(head, [d[0] * s, d[1] * s])], projections: vec![] });
        }
        comp[slot] = total * scale;
        traces.extend(tr);
        Ok(())
    };
    if branches.pu {
        run(pu, Head::Pu, 1.0, 0)?;
    }
    if branches.noise {
        run(noise, Head::Noise, alpha, 1)?;
    }
    if !branches.pu && !branches.noise {
        return Err(Error::config("branches", "at least one branch must be enabled"));
    }
    let parts = LossParts { total: super::joint_loss_noisepu(comp[0], comp[1], alpha), components: comp };
    check_finite(&parts)?;
    let grad = if want_grad { reduce(params, &traces, &ups)? } else { Vec::new() };
    Ok((parts, grad))
}

/// `CCE(originals) + alpha * smoothed CCE(twins) + beta * NT-Xent`, all on
/// the main head and external labels. With no twins only the first term is
/// evaluated.
pub fn regcon_objective(
    params: &ModelParams,
    originals: &[&SequenceObservation],
    twins: &[&SequenceObservation],
    w: RegconWeights,
    want_grad: bool,
) -> Result<(LossParts, Vec<f64>)> {
    if originals.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    if !twins.is_empty() && twins.len() != originals.len() {
        return Err(Error::Shape {
            expected: format!("{} twins", originals.len()),
            found: format!("{}", twins.len()),
        });
    }
    let n = originals.len();
    let scale = 1.0 / n as f64;
    let to = encode_all(params, originals)?;
    let mut ups = Vec::with_capacity(2 * n);
    let mut cce = 0.0;
    for (o, t) in originals.iter().zip(&to) {
        let (l, d) = cce_from_logits(params.head_logits(Head::Main, &t.latent)?, label(o, Head::Main)?, 0.0);
        cce += l;
        ups.push(Upstream { heads: vec![(Head::Main, [d[0] * scale, d[1] * scale])], projections: vec![] });
    }
    cce *= scale;
    let mut traces = to;
    let (mut smooth, mut contrast) = (0.0, 0.0);
    if !twins.is_empty() {
        let tt = encode_all(params, twins)?;
        for (o, t) in twins.iter().zip(&tt) {
            let (l, d) = cce_from_logits(params.head_logits(Head::Main, &t.latent)?, label(o, Head::Main)?, w.smoothing);
            smooth += l;
            let s = w.alpha * scale;
            ups.push(Upstream { heads: vec![(Head::Main, [d[0] * s, d[1] * s])], projections: vec![] });
        }
        smooth *= scale;
        let pa: Vec<Vec<f64>> = traces.iter().map(|t| params.project(Projection::Phi, &t.latent)).collect();
        let pb: Vec<Vec<f64>> = tt.iter().map(|t| params.project(Projection::Psi, &t.latent)).collect();
        let (l, ga, gb) = ntxent_with_grad(&pa, &pb, w.temperature)?;
        contrast = l;
        for (up, g) in ups.iter_mut().take(n).zip(ga) {
            up.projections.push((Projection::Phi, g.into_iter().map(|v| v * w.beta).collect()));
        }
        for (up, g) in ups.iter_mut().skip(n).zip(gb) {
            up.projections.push((Projection::Psi, g.into_iter().map(|v| v * w.beta).collect()));
        }
        traces.extend(tt);
    }
    let parts = LossParts {
        total: super::joint_loss_regcon(cce, smooth, contrast, w.alpha, w.beta),
        components: [cce, smooth, contrast],
    };
    check_finite(&parts)?;
    let grad = if want_grad { reduce(params, &traces, &ups)? } else { Vec::new() };
    Ok((parts, grad))
}
