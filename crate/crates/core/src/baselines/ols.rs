use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Significance level of the trend test.
pub const OLS_ALPHA: f64 = 0.05;

/// Bound applied to the ranking score of degenerate fits.
const SCORE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// um/year
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t_stat: f64,
    pub p_two_sided: f64,
    pub n: usize,
    pub residual_var: f64,
    /// Residual variance is zero; `p_two_sided` is 0 for a non-zero slope
    /// and 1 otherwise.
    pub degenerate: bool,
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
fn t_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

pub fn ols_fit(times: &[f64], values: &[f64]) -> Result<OlsFit> {
    let n = times.len();
    if n != values.len() {
        return Err(Error::Shape { expected: format!("{n} values"), found: format!("{}", values.len()) });
    }
    if n < 3 {
        return Err(Error::Input(format!("trend needs at least 3 points, got {n}")));
    }
    if times.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trend input".into()));
    }
    let nf = n as f64;
    let tbar = times.iter().sum::<f64>() / nf;
    let vbar = values.iter().sum::<f64>() / nf;
    let sxx: f64 = times.iter().map(|t| (t - tbar) * (t - tbar)).sum();
    if sxx <= 0.0 {
        return Err(Error::Input("trend times have zero variance".into()));
    }
    let sxy: f64 = times.iter().zip(values).map(|(t, v)| (t - tbar) * (v - vbar)).sum();
    let slope = sxy / sxx;
    let intercept = vbar - slope * tbar;
    let ssr: f64 = times
        .iter()
        .zip(values)
        .map(|(t, v)| {
            let r = v - (intercept + slope * t);
            r * r
        })
        .sum();
    let df = nf - 2.0;
    let residual_var = ssr / df;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let degenerate = residual_var.sqrt() <= 64.0 * f64::EPSILON * scale;
    let (slope_se, t_stat, p) = if degenerate {
        let moving = slope.abs() > 64.0 * f64::EPSILON * scale;
        let t = if moving { slope.signum() * f64::INFINITY } else { 0.0 };
        (0.0, t, if moving { 0.0 } else { 1.0 })
    } else {
        let se = (residual_var / sxx).sqrt();
        let t = slope / se;
        (se, t, t_two_sided(t, df))
    };
    Ok(OlsFit { slope, intercept, slope_se, t_stat, p_two_sided: p, n, residual_var, degenerate })
}

/// Significant negative slope at [`OLS_ALPHA`].
pub fn ols_progression(times: &[f64], global_means: &[f64]) -> Result<bool> {
    let fit = ols_fit(times, global_means)?;
    Ok(fit.slope < 0.0 && fit.p_two_sided < OLS_ALPHA)
}

/// Ranking score for threshold matching: the negated t statistic, bounded
/// so degenerate fits stay finite. Larger means stronger decline.
pub fn ols_score(fit: &OlsFit) -> f64 {
    (-fit.t_stat).clamp(-SCORE_LIMIT, SCORE_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    /// Normal equations [n, St; St, Stt] [b0; b1] = [Sv; Stv] solved by
    /// Cramer's rule.
    fn normal_equations(t: &[f64], v: &[f64]) -> (f64, f64) {
        let n = t.len() as f64;
        let st: f64 = t.iter().sum();
        let stt: f64 = t.iter().map(|x| x * x).sum();
        let sv: f64 = v.iter().sum();
        let stv: f64 = t.iter().zip(v).map(|(a, b)| a * b).sum();
        let det = n * stt - st * st;
        ((sv * stt - st * stv) / det, (n * stv - st * sv) / det)
    }

    /// Student t survival by Simpson integration of the density.
    fn t_sf_quadrature(t: f64, df: f64) -> f64 {
        let c = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |x: f64| (c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let n = 200_000;
        let h = t.abs() / n as f64;
        let mut s = pdf(0.0) + pdf(t.abs());
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
        }
        0.5 - s * h / 3.0
    }

    #[test]
    fn exact_line_is_degenerate() {
        let f = ols_fit(&[0.0, 1.0, 2.0, 3.0, 4.0], &[100.0, 99.0, 98.0, 97.0, 96.0]).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.intercept - 100.0).abs() < 1e-12);
        assert!(f.degenerate);
        assert_eq!(f.p_two_sided, 0.0);
        assert!(ols_progression(&[0.0, 1.0, 2.0, 3.0, 4.0], &[100.0, 99.0, 98.0, 97.0, 96.0]).unwrap());
    }

    #[test]
    fn constant_series() {
        let f = ols_fit(&[0.0, 1.0, 2.0, 3.0], &[80.0; 4]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.p_two_sided, 1.0);
        assert!(f.degenerate);
        assert!(!ols_progression(&[0.0, 1.0, 2.0, 3.0], &[80.0; 4]).unwrap());
    }

    #[test]
    fn errors() {
        assert!(ols_fit(&[0.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(ols_fit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn fixture_against_normal_equations() {
        let t = [0.0, 0.9, 2.1, 3.0, 4.2];
        let v = [95.1, 94.7, 93.2, 93.5, 91.8];
        let f = ols_fit(&t, &v).unwrap();
        let (b0, b1) = normal_equations(&t, &v);
        assert!((f.slope - b1).abs() < 1e-10);
        assert!((f.intercept - b0).abs() < 1e-10);
        // Values recorded from the oracle above, to 10 decimals.
        assert!((b1 - (-0.7529858849)).abs() < 1e-10, "{b1}");
        assert!((b0 - 95.1960912052).abs() < 1e-10, "{b0}");
        let resid: f64 = t.iter().zip(&v).map(|(a, b)| (b - b0 - b1 * a).powi(2)).sum();
        let tbar = t.iter().sum::<f64>() / 5.0;
        let sxx: f64 = t.iter().map(|a| (a - tbar).powi(2)).sum();
        let tt = b1 / (resid / 3.0 / sxx).sqrt();
        assert!((f.t_stat - tt).abs() < 1e-10);
        let p = 2.0 * t_sf_quadrature(tt, 3.0);
        assert!((f.p_two_sided - p).abs() < 1e-9, "{} vs {p}", f.p_two_sided);
    }

    #[test]
    fn random_instances_match_oracle() {
        let mut r = rng::stream(11, &[]);
        for _ in 0..200 {
            let n = r.random_range(3..12);
            let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.6 + r.random_range(0.0..0.3)).collect();
            let v: Vec<f64> = (0..n).map(|_| r.random_range(60.0..100.0)).collect();
            let f = ols_fit(&t, &v).unwrap();
            let (b0, b1) = normal_equations(&t, &v);
            assert!((f.slope - b1).abs() < 1e-10);
            assert!((f.intercept - b0).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_and_time_scale_invariance() {
        let t = [0.0, 0.9, 2.1, 3.0, 4.2];
        let v = [95.1, 94.7, 93.2, 93.5, 91.8];
        let f = ols_fit(&t, &v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + 7.0).collect();
        let g = ols_fit(&t, &shifted).unwrap();
        assert!((g.slope - f.slope).abs() < 1e-12);
        assert!((g.intercept - f.intercept - 7.0).abs() < 1e-12);
        let scaled: Vec<f64> = t.iter().map(|x| x * 12.0).collect();
        let h = ols_fit(&scaled, &v).unwrap();
        assert!((h.slope * 12.0 - f.slope).abs() < 1e-12);
        assert!((h.t_stat - f.t_stat).abs() < 1e-9);
        assert!((h.p_two_sided - f.p_two_sided).abs() < 1e-12);
    }

    #[test]
    fn false_flag_rate_on_stable_series() {
        let mut r = rng::stream(12, &[]);
        let noise = Normal::new(0.0, 4.0).unwrap();
        let n = 10_000;
        let t = [0.0, 0.6, 1.2, 1.8, 2.4];
        let flagged = (0..n)
            .filter(|_| {
                let v: Vec<f64> = t.iter().map(|_| 90.0 + noise.sample(&mut r)).collect();
                ols_progression(&t, &v).unwrap()
            })
            .count();
        let rate = flagged as f64 / n as f64;
        assert!((rate - 0.025).abs() < 0.006, "{rate}");
    }
}
