//! `evalreport/1`: JSON, Markdown, per-observation CSV and an ROC SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    confusion_metrics, delong_ci, group_slope_comparison, hit_ratio, mcnemar, roc_points, specificity_at,
    threshold_for_specificity, AucCi, Confusion, HitRatio, McNemar, Welch,
};
use crate::error::{Error, Result};
use crate::textio;

pub const REPORT_SCHEMA: &str = "evalreport/1";

/// Thresholds may be +inf; JSON carries that as the string "inf".
mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else if *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Text("-inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredObs {
    pub key: String,
    pub score: f64,
    pub decision: bool,
    pub truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub name: String,
    pub auc: AucCi,
    pub target_specificity: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub achieved_specificity: f64,
    /// Hit ratio among truly progressing observations.
    pub hit_ratio: HitRatio,
    pub confusion: Confusion,
    pub slope_comparison: Option<Welch>,
    /// Decisions of the method's own rule, when it has one.
    pub native_rule: Option<Confusion>,
    pub observations: Vec<ScoredObs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub first: String,
    pub second: String,
    /// McNemar on hits among truly progressing observations.
    pub mcnemar: McNemar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub truth_source: String,
    pub target_specificity: f64,
    pub level: f64,
    pub n_observations: usize,
    pub n_progressing: usize,
    pub schemes: Vec<SchemeResult>,
    pub comparisons: Vec<PairComparison>,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(truth_source: &str, target_specificity: f64, level: f64) -> Self {
        EvalReport {
            schema: REPORT_SCHEMA.to_string(),
            truth_source: truth_source.to_string(),
            target_specificity,
            level,
            n_observations: 0,
            n_progressing: 0,
            schemes: Vec::new(),
            comparisons: Vec::new(),
            seeds: Vec::new(),
            config_hash: String::new(),
            config: serde_json::Value::Null,
            notes: vec![
                "AUC interval: DeLong.".into(),
                "Hit-ratio interval: Wilson.".into(),
                "Group slope comparison: Welch t-test on per-window slopes, clustering ignored.".into(),
                "McNemar: continuity corrected, exact binomial below 25 discordant pairs.".into(),
            ],
        }
    }

    pub fn scheme(&self, name: &str) -> Option<&SchemeResult> {
        self.schemes.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| Error::Input(format!("bad report: {e}")))?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Input(format!("report schema `{}`, expected `{REPORT_SCHEMA}`", r.schema)));
        }
        Ok(r)
    }
}

/// Score one method: matched-specificity threshold from the truly
/// non-progressing observations, hit ratio on the progressing ones.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_scheme(
    name: &str,
    keys: &[String],
    scores: &[f64],
    truth: &[bool],
    target_specificity: f64,
    level: f64,
    slopes: Option<&[f64]>,
    native: Option<&[bool]>,
) -> Result<SchemeResult> {
    if keys.len() != scores.len() || scores.len() != truth.len() {
        return Err(Error::Shape { expected: format!("{} scores and labels", keys.len()), found: format!("{}/{}", scores.len(), truth.len()) });
    }
    let pos: Vec<f64> = scores.iter().zip(truth).filter(|(_, &t)| t).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(truth).filter(|(_, &t)| !t).map(|(s, _)| *s).collect();
    let auc = delong_ci(&pos, &neg, level)?;
    let threshold = threshold_for_specificity(&neg, target_specificity)?;
    let decisions: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let slope_comparison = match slopes {
        Some(s) => group_slope_comparison(&decisions, s).ok(),
        None => None,
    };
    let native_rule = match native {
        Some(d) => Some(confusion_metrics(d, truth)?),
        None => None,
    };
    Ok(SchemeResult {
        name: name.to_string(),
        auc,
        target_specificity,
        threshold,
        achieved_specificity: specificity_at(&neg, threshold),
        hit_ratio: hit_ratio(&pos, threshold, level)?,
        confusion: confusion_metrics(&decisions, truth)?,
        slope_comparison,
        native_rule,
        observations: keys
            .iter()
            .zip(scores)
            .zip(&decisions)
            .zip(truth)
            .map(|(((k, &s), &d), &t)| ScoredObs { key: k.clone(), score: s, decision: d, truth: t })
            .collect(),
    })
}

pub fn compare_pair(a: &SchemeResult, b: &SchemeResult) -> Result<PairComparison> {
    if a.observations.len() != b.observations.len()
        || a.observations.iter().zip(&b.observations).any(|(x, y)| x.key != y.key)
    {
        return Err(Error::Input(format!("schemes `{}` and `{}` scored different observations", a.name, b.name)));
    }
    let hits = |s: &SchemeResult| -> Vec<bool> { s.observations.iter().filter(|o| o.truth).map(|o| o.decision).collect() };
    Ok(PairComparison { first: a.name.clone(), second: b.name.clone(), mcnemar: mcnemar(&hits(a), &hits(b))? })
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

fn threshold_text(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "inf".into()
    }
}

pub fn render_markdown(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Progression detection report\n");
    let _ = writeln!(
        s,
        "Truth: {}. Observations: {} ({} progressing). Target specificity: {}. Interval level: {}.\n",
        r.truth_source, r.n_observations, r.n_progressing, r.target_specificity, r.level
    );
    let pct = (r.level * 100.0).round();
    let _ = writeln!(s, "| Method | AUROC ({pct}% CI) | Specificity | Hit ratio ({pct}% CI) | Threshold |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for m in &r.schemes {
        let _ = writeln!(
            s,
            "| {} | {} ({}, {}) | {} | {} ({}, {}) | {} |",
            m.name,
            f3(m.auc.auc),
            f3(m.auc.lo),
            f3(m.auc.hi),
            f3(m.achieved_specificity),
            f3(m.hit_ratio.ratio),
            f3(m.hit_ratio.lo),
            f3(m.hit_ratio.hi),
            threshold_text(m.threshold)
        );
    }
    let _ = writeln!(s, "\n## Classification at matched specificity\n");
    let _ = writeln!(s, "| Method | TP | FP | FN | TN | Sensitivity | Specificity | Accuracy | Precision | F1 | MCC |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|");
    for m in &r.schemes {
        let c = &m.confusion;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {}{} |",
            m.name,
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            f3(c.sensitivity),
            f3(c.specificity),
            f3(c.accuracy),
            f3(c.precision),
            f3(c.f1),
            f3(c.mcc),
            if c.mcc_degenerate { "*" } else { "" }
        );
    }
    let natives: Vec<_> = r.schemes.iter().filter_map(|m| m.native_rule.map(|c| (&m.name, c))).collect();
    if !natives.is_empty() {
        let _ = writeln!(s, "\n## Native decision rules\n");
        let _ = writeln!(s, "| Method | Sensitivity | Specificity | Accuracy |");
        let _ = writeln!(s, "|---|---|---|---|");
        for (name, c) in natives {
            let _ = writeln!(s, "| {} | {} | {} | {} |", name, f3(c.sensitivity), f3(c.specificity), f3(c.accuracy));
        }
    }
    if !r.comparisons.is_empty() {
        let _ = writeln!(s, "\n## Paired hit comparison (McNemar)\n");
        let _ = writeln!(s, "| First | Second | b | c | chi2 | p | exact |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for c in &r.comparisons {
            let m = &c.mcnemar;
            let _ = writeln!(s, "| {} | {} | {} | {} | {} | {:.4} | {} |", c.first, c.second, m.b, m.c, f3(m.chi2), m.p, m.exact);
        }
    }
    let slopes: Vec<_> = r.schemes.iter().filter_map(|m| m.slope_comparison.map(|w| (&m.name, w))).collect();
    if !slopes.is_empty() {
        let _ = writeln!(s, "\n## Global slope by predicted group (um/year)\n");
        let _ = writeln!(s, "| Method | Progressing (n) | Stable (n) | Welch t | p |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for (name, w) in slopes {
            let _ = writeln!(
                s,
                "| {} | {} ({}) | {} ({}) | {} | {:.4} |",
                name,
                f3(w.mean_a),
                w.n_a,
                f3(w.mean_b),
                w.n_b,
                f3(w.t),
                w.p
            );
        }
    }
    let _ = writeln!(s, "\n## Notes\n");
    for n in &r.notes {
        let _ = writeln!(s, "- {n}");
    }
    let _ = writeln!(s, "\nConfig hash: `{}`", r.config_hash);
    s
}

pub fn render_scores_csv(r: &EvalReport) -> String {
    let mut s = String::from("key,truth");
    for m in &r.schemes {
        let _ = write!(s, ",{0}_score,{0}_decision", m.name);
    }
    s.push('\n');
    let n = r.schemes.first().map_or(0, |m| m.observations.len());
    for i in 0..n {
        let first = &r.schemes[0].observations[i];
        let _ = write!(s, "{},{}", first.key, u8::from(first.truth));
        for m in &r.schemes {
            let o = &m.observations[i];
            let _ = write!(s, ",{},{}", o.score, u8::from(o.decision));
        }
        s.push('\n');
    }
    s
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

pub fn render_roc_svg(r: &EvalReport) -> String {
    let (w, h) = (640.0, 480.0);
    let (left, right, top, bottom) = (60.0, 200.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x = |fpr: f64| left + fpr * pw;
    let y = |tpr: f64| top + (1.0 - tpr) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="480" viewBox="0 0 640 480">"#);
    let _ = writeln!(s, "<!-- config-hash: {} -->", r.config_hash);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="640" height="480" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999999" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{v:.1}</text>"#, x(v), h - bottom + 16.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.1}</text>"#, left - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">False positive rate</text>"#, left + pw / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">True positive rate</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, m) in r.schemes.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pos: Vec<f64> = m.observations.iter().filter(|o| o.truth).map(|o| o.score).collect();
        let neg: Vec<f64> = m.observations.iter().filter(|o| !o.truth).map(|o| o.score).collect();
        let mut pts = String::new();
        for (fpr, tpr) in roc_points(&pos, &neg) {
            let _ = write!(pts, "{:.2},{:.2} ", x(fpr), y(tpr));
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.trim_end());
        let ly = top + 20.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{} (AUC {:.3})</text>"#,
            lx + 26.0,
            ly + 4.0,
            xml_escape(&m.name),
            m.auc.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write `report.json`, `report.md`, `scores.csv` and `roc.svg`.
pub fn write_report(r: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = [
        ("report.json", r.to_json()),
        ("report.md", render_markdown(r)),
        ("scores.csv", render_scores_csv(r)),
        ("roc.svg", render_roc_svg(r)),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        textio::write_file(&p, &body)?;
        out.push(p);
    }
    Ok(out)
}
