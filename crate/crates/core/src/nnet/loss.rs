//! Cross-entropy family and NT-Xent, on probabilities and on logits.

use crate::error::{Error, Result};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Added to row norms in the contrastive loss.
const NORM_EPS: f64 = 1e-12;

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn clamped_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Mean binary cross-entropy of positive-class probabilities.
pub fn loss_bce(p: &[f64], y: &[u8]) -> f64 {
    let n = p.len().max(1) as f64;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Mean categorical cross-entropy of class-probability rows.
pub fn loss_cce(p: &[[f64; 2]], y: &[u8]) -> f64 {
    let n = p.len().max(1) as f64;
    p.iter().zip(y).map(|(p, &y)| -clamped_ln(p[y as usize])).sum::<f64>() / n
}

fn smoothed_target(y: u8, mu: f64) -> [f64; 2] {
    let mut t = [mu / 2.0; 2];
    t[y as usize] += 1.0 - mu;
    t
}

/// Cross-entropy against targets `(1 - mu) * onehot + mu / 2`.
pub fn loss_smoothed_cce(p: &[[f64; 2]], y: &[u8], mu: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::config("smoothing", "must lie in [0, 1)"));
    }
    let n = p.len().max(1) as f64;
    Ok(p.iter()
        .zip(y)
        .map(|(p, &y)| {
            let t = smoothed_target(y, mu);
            -(t[0] * clamped_ln(p[0]) + t[1] * clamped_ln(p[1]))
        })
        .sum::<f64>()
        / n)
}

/// Smoothed cross-entropy of one logit pair and its gradient. The gradient
/// flows through the clamp: a clamped probability contributes nothing.
pub fn cce_from_logits(logits: [f64; 2], y: u8, mu: f64) -> (f64, [f64; 2]) {
    let p = softmax2(logits);
    let t = smoothed_target(y, mu);
    let loss = -(t[0] * clamped_ln(p[0]) + t[1] * clamped_ln(p[1]));
    let mut dp = [0.0; 2];
    for i in 0..2 {
        if p[i] >= PROB_FLOOR && t[i] != 0.0 {
            dp[i] = -t[i] / p[i];
        }
    }
    let mut dz = [0.0; 2];
    for (j, d) in dz.iter_mut().enumerate() {
        for i in 0..2 {
            let jac = p[i] * (f64::from(u8::from(i == j)) - p[j]);
            *d += dp[i] * jac;
        }
    }
    (loss, dz)
}

fn stack(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).flat_map(|(x, y)| [x.clone(), y.clone()]).collect()
}

/// NT-Xent over rows stacked as (a_0, b_0, a_1, b_1, ...), each row's
/// positive being its partner.
pub fn loss_ntxent(a: &[Vec<f64>], b: &[Vec<f64>], temperature: f64) -> Result<f64> {
    Ok(ntxent_with_grad(a, b, temperature)?.0)
}

pub type NtxentGrad = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

pub fn ntxent_with_grad(a: &[Vec<f64>], b: &[Vec<f64>], temperature: f64) -> Result<NtxentGrad> {
    if !(temperature > 0.0) {
        return Err(Error::config("temperature", "must be > 0"));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape {
            expected: "two equal, non-empty projection sets".into(),
            found: format!("{} and {}", a.len(), b.len()),
        });
    }
    let rows = stack(a, b);
    let m = rows.len();
    let raw_norm: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let units: Vec<Vec<f64>> = rows
        .iter()
        .zip(&raw_norm)
        .map(|(r, n)| r.iter().map(|v| v / (n + NORM_EPS)).collect())
        .collect();
    let mut sim = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            sim[i * m + j] = units[i].iter().zip(&units[j]).map(|(x, y)| x * y).sum::<f64>() / temperature;
        }
    }
    let partner = |i: usize| i ^ 1;
    let scale = 1.0 / m as f64;
    let mut loss = 0.0;
    // coef[i][j]: derivative of the loss with respect to sim[i][j] as a
    // function of anchor i.
    let mut coef = vec![0.0; m * m];
    for i in 0..m {
        let mx = (0..m).filter(|&j| j != i).map(|j| sim[i * m + j]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..m).filter(|&j| j != i).map(|j| (sim[i * m + j] - mx).exp()).sum();
        let lse = mx + denom.ln();
        loss += lse - sim[i * m + partner(i)];
        for j in (0..m).filter(|&j| j != i) {
            let w = (sim[i * m + j] - mx).exp() / denom;
            coef[i * m + j] = scale * (w - f64::from(u8::from(j == partner(i))));
        }
    }
    loss *= scale;
    let d = rows[0].len();
    let mut grads = Vec::with_capacity(m);
    for i in 0..m {
        let mut du = vec![0.0; d];
        for j in (0..m).filter(|&j| j != i) {
            let c = (coef[i * m + j] + coef[j * m + i]) / temperature;
            for (g, u) in du.iter_mut().zip(&units[j]) {
                *g += c * u;
            }
        }
        let n = raw_norm[i] + NORM_EPS;
        let dot: f64 = du.iter().zip(&rows[i]).map(|(g, r)| g * r).sum();
        let dr: Vec<f64> = if raw_norm[i] > 0.0 {
            du.iter()
                .zip(&rows[i])
                .map(|(g, r)| g / n - dot * r / (n * n * raw_norm[i]))
                .collect()
        } else {
            du.iter().map(|g| g / n).collect()
        };
        grads.push(dr);
    }
    let mut ga = Vec::with_capacity(a.len());
    let mut gb = Vec::with_capacity(b.len());
    for (i, g) in grads.into_iter().enumerate() {
        if i % 2 == 0 {
            ga.push(g);
        } else {
            gb.push(g);
        }
    }
    Ok((loss, ga, gb))
}
