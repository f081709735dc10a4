//! ROC analysis, matched-specificity thresholds, paired tests and
//! confusion metrics.

mod report;

pub use report::{
    compare_pair, evaluate_scheme, render_markdown, render_roc_svg, render_scores_csv, write_report, EvalReport,
    PairComparison, SchemeResult, ScoredObs, REPORT_SCHEMA,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Discordant-pair count below which McNemar uses the exact binomial test.
pub const MCNEMAR_EXACT_BELOW: u64 = 25;

fn psi(x: f64, y: f64) -> f64 {
    if x > y {
        1.0
    } else if x == y {
        0.5
    } else {
        0.0
    }
}

fn nonempty(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Input("both classes need at least one score".into()));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("score".into()));
    }
    Ok(())
}

/// Mann-Whitney estimate of P(pos > neg) + P(pos = neg) / 2.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    nonempty(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN"));
    // Midranks, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum_pos - m * (m + 1.0) / 2.0) / (m * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucCi {
    pub auc: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub variance: f64,
    pub method: CiMethod,
    /// Variance is zero, so the interval has zero width.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    DeLong,
    Wilson,
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// AUC with a DeLong variance and a normal interval clipped to [0, 1].
pub fn delong_ci(pos: &[f64], neg: &[f64], level: f64) -> Result<AucCi> {
    nonempty(pos, neg)?;
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::Input("DeLong variance needs two scores per class".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config("level", "must lie in (0, 1)"));
    }
    let v10: Vec<f64> = pos.iter().map(|&x| neg.iter().map(|&y| psi(x, y)).sum::<f64>() / neg.len() as f64).collect();
    let v01: Vec<f64> = neg.iter().map(|&y| pos.iter().map(|&x| psi(x, y)).sum::<f64>() / pos.len() as f64).collect();
    let a = v10.iter().sum::<f64>() / pos.len() as f64;
    let variance = sample_var(&v10) / pos.len() as f64 + sample_var(&v01) / neg.len() as f64;
    let z = normal_quantile(0.5 + level / 2.0);
    let half = z * variance.max(0.0).sqrt();
    Ok(AucCi {
        auc: a,
        lo: (a - half).max(0.0),
        hi: (a + half).min(1.0),
        level,
        variance,
        method: CiMethod::DeLong,
        degenerate: variance <= 0.0,
    })
}

/// Smallest threshold whose specificity (negatives scoring below it) meets
/// `target`, under the rule "positive iff score >= threshold". The threshold
/// sits midway between the last included negative and the next distinct
/// score, or at +inf when every negative must be included.
pub fn threshold_for_specificity(neg: &[f64], target: f64) -> Result<f64> {
    if neg.is_empty() {
        return Err(Error::Input("no negative scores".into()));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::config("target_specificity", "must lie in (0, 1]"));
    }
    let mut s = neg.to_vec();
    if s.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("score".into()));
    }
    s.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = s.len();
    let k = ((target * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let v = s[k - 1];
    match s.iter().find(|&&x| x > v) {
        Some(&next) => Ok(v + (next - v) / 2.0),
        None => Ok(f64::INFINITY),
    }
}

pub fn specificity_at(neg: &[f64], threshold: f64) -> f64 {
    neg.iter().filter(|&&s| s < threshold).count() as f64 / neg.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRatio {
    pub hits: usize,
    pub n: usize,
    pub ratio: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

pub fn wilson_interval(hits: usize, n: usize, level: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = normal_quantile(0.5 + level / 2.0);
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Fraction of `scores` at or above `threshold`, with a Wilson interval.
pub fn hit_ratio(scores: &[f64], threshold: f64, level: f64) -> Result<HitRatio> {
    if scores.is_empty() {
        return Err(Error::Input("empty evaluation group".into()));
    }
    let hits = scores.iter().filter(|&&s| s >= threshold).count();
    let (lo, hi) = wilson_interval(hits, scores.len(), level);
    Ok(HitRatio { hits, n: scores.len(), ratio: hits as f64 / scores.len() as f64, lo, hi, level })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// Positive under the first method only.
    pub b: u64,
    /// Positive under the second method only.
    pub c: u64,
    pub chi2: f64,
    pub p: f64,
    pub exact: bool,
    /// No discordant pairs; chi2 = 0 and p = 1 by convention.
    pub degenerate: bool,
}

fn binom_cdf_half(k: u64, n: u64) -> f64 {
    // P(X <= k), X ~ Bin(n, 1/2), summed in log space.
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    (0..=k)
        .map(|i| (statrs::function::factorial::ln_binomial(n, i) + ln_half_n).exp())
        .sum()
}

pub fn chi2_1df_sf(x: f64) -> f64 {
    statrs::function::erf::erfc((x / 2.0).sqrt())
}

pub fn mcnemar(a: &[bool], b: &[bool]) -> Result<McNemar> {
    if a.len() != b.len() {
        return Err(Error::Shape { expected: format!("{} decisions", a.len()), found: format!("{}", b.len()) });
    }
    let bb = a.iter().zip(b).filter(|(x, y)| **x && !**y).count() as u64;
    let cc = a.iter().zip(b).filter(|(x, y)| !**x && **y).count() as u64;
    Ok(mcnemar_counts(bb, cc))
}

pub fn mcnemar_counts(b: u64, c: u64) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar { b, c, chi2: 0.0, p: 1.0, exact: true, degenerate: true };
    }
    let d = (b as f64 - c as f64).abs() - 1.0;
    let chi2 = d.max(0.0).powi(2) / n as f64;
    let exact = n < MCNEMAR_EXACT_BELOW;
    let p = if exact { (2.0 * binom_cdf_half(b.min(c), n)).min(1.0) } else { chi2_1df_sf(chi2) };
    McNemar { b, c, chi2, p, exact, degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub mcc: f64,
    /// A factor of the MCC denominator is zero; `mcc` is reported as 0.
    pub mcc_degenerate: bool,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn confusion_metrics(decisions: &[bool], truth: &[bool]) -> Result<Confusion> {
    if decisions.len() != truth.len() {
        return Err(Error::Shape { expected: format!("{} labels", decisions.len()), found: format!("{}", truth.len()) });
    }
    let mut c = [0usize; 4];
    for (&d, &t) in decisions.iter().zip(truth) {
        c[match (d, t) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        }] += 1;
    }
    let [tp, fp, fn_, tn] = c;
    let sensitivity = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + sensitivity > 0.0 { 2.0 * precision * sensitivity / (precision + sensitivity) } else { 0.0 };
    let factors = [(tp + fp) as f64, (tp + fn_) as f64, (tn + fp) as f64, (tn + fn_) as f64];
    let mcc_degenerate = factors.iter().any(|&f| f == 0.0);
    let mcc = if mcc_degenerate {
        0.0
    } else {
        (tp as f64 * tn as f64 - fp as f64 * fn_ as f64) / factors.iter().product::<f64>().sqrt()
    };
    Ok(Confusion {
        tp,
        fp,
        fn_,
        tn,
        sensitivity,
        specificity: ratio(tn, tn + fp),
        accuracy: ratio(tp + tn, decisions.len()),
        precision,
        f1,
        mcc,
        mcc_degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Welch {
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance t-test with Satterthwaite degrees of freedom.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<Welch> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input("each group needs at least two values".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (sample_var(a) / a.len() as f64, sample_var(b) / b.len() as f64);
    let se2 = qa + qb;
    let (t, df, p) = if se2 <= 0.0 {
        if ma == mb {
            (0.0, (a.len() + b.len() - 2) as f64, 1.0)
        } else {
            ((ma - mb).signum() * f64::MAX, (a.len() + b.len() - 2) as f64, 0.0)
        }
    } else {
        let t = (ma - mb) / se2.sqrt();
        let df = se2 * se2 / (qa * qa / (a.len() - 1) as f64 + qb * qb / (b.len() - 1) as f64);
        (t, df, beta_reg(df / 2.0, 0.5, df / (df + t * t)))
    };
    Ok(Welch { mean_a: ma, mean_b: mb, n_a: a.len(), n_b: b.len(), t, df, p })
}

/// Welch comparison of per-window slopes between predicted-progressing
/// (`a`) and predicted-stable (`b`) windows.
pub fn group_slope_comparison(decisions: &[bool], slopes: &[f64]) -> Result<Welch> {
    if decisions.len() != slopes.len() {
        return Err(Error::Shape { expected: format!("{} slopes", decisions.len()), found: format!("{}", slopes.len()) });
    }
    let a: Vec<f64> = slopes.iter().zip(decisions).filter(|(_, &d)| d).map(|(s, _)| *s).collect();
    let b: Vec<f64> = slopes.iter().zip(decisions).filter(|(_, &d)| !d).map(|(s, _)| *s).collect();
    welch_test(&a, &b)
}

/// ROC points (false positive rate, true positive rate) from the strictest
/// threshold to the loosest.
pub fn roc_points(pos: &[f64], neg: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    all.sort_by(|a, b| b.partial_cmp(a).expect("no NaN"));
    all.dedup();
    let mut out = vec![(0.0, 0.0)];
    for th in all {
        let tpr = pos.iter().filter(|&&s| s >= th).count() as f64 / pos.len() as f64;
        let fpr = neg.iter().filter(|&&s| s >= th).count() as f64 / neg.len() as f64;
        out.push((fpr, tpr));
    }
    out
}
