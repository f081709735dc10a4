use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequences::SequenceObservation;
use crate::simcohort::EyeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpaConfig {
    pub variability_multiplier: f64,
    pub points_required: usize,
    pub consecutive_for_possible: usize,
    pub consecutive_for_likely: usize,
    pub max_events: usize,
    /// Single-test measurement sd, um.
    pub test_retest_sd: f64,
}

impl Default for GpaConfig {
    fn default() -> Self {
        GpaConfig {
            variability_multiplier: 1.96,
            points_required: 3,
            consecutive_for_possible: 2,
            consecutive_for_likely: 3,
            max_events: 3,
            test_retest_sd: 4.0,
        }
    }
}

impl GpaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.consecutive_for_possible < 1 || self.consecutive_for_likely < self.consecutive_for_possible {
            return Err(Error::config("gpa.consecutive_for_likely", "need likely >= possible >= 1"));
        }
        if self.points_required == 0 {
            return Err(Error::config("gpa.points_required", "must be >= 1"));
        }
        if !(self.test_retest_sd > 0.0) || !(self.variability_multiplier > 0.0) {
            return Err(Error::config("gpa.test_retest_sd", "sd and multiplier must be > 0"));
        }
        Ok(())
    }

    /// Loss (um) beyond which a point is flagged: the limit for a single
    /// test compared against the mean of two baseline tests.
    pub fn flag_limit(&self) -> f64 {
        self.variability_multiplier * self.test_retest_sd * 1.5f64.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    None,
    Empty,
    Half,
    Solid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GpaClass {
    Stable,
    Possible,
    Likely,
}

impl GpaClass {
    pub fn as_str(self) -> &'static str {
        match self {
            GpaClass::Stable => "stable",
            GpaClass::Possible => "possible",
            GpaClass::Likely => "likely",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUp {
    /// Index into the input series.
    pub index: usize,
    /// Which baseline pair this follow-up was compared against.
    pub segment: usize,
    pub marks: Vec<Mark>,
    pub class: GpaClass,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpaResult {
    pub followups: Vec<FollowUp>,
    /// Dates (years) of likely events.
    pub event_times: Vec<f64>,
    /// Baseline index pair of every segment.
    pub baselines: Vec<(usize, usize)>,
}

impl GpaResult {
    pub fn first_event(&self) -> Option<f64> {
        self.event_times.first().copied()
    }
}

fn mark_for(run: usize, cfg: &GpaConfig) -> Mark {
    if run == 0 {
        Mark::None
    } else if run >= cfg.consecutive_for_likely {
        Mark::Solid
    } else if run >= cfg.consecutive_for_possible {
        Mark::Half
    } else {
        Mark::Empty
    }
}

/// Pointwise event analysis of a series of profiles.
///
/// The first two tests form the baseline. A likely event is dated at the
/// first of the consecutive tests that confirmed it; the baseline then moves
/// to that test and its successor and analysis resumes after them.
pub fn gpa_classify(times: &[f64], profiles: &[Vec<f64>], cfg: &GpaConfig) -> Result<GpaResult> {
    cfg.validate()?;
    if times.len() != profiles.len() {
        return Err(Error::Shape { expected: format!("{} profiles", times.len()), found: format!("{}", profiles.len()) });
    }
    if profiles.len() < 3 {
        return Err(Error::Input("event analysis needs two baseline tests and a follow-up".into()));
    }
    let p = profiles[0].len();
    if profiles.iter().any(|v| v.len() != p) {
        return Err(Error::Shape { expected: format!("profiles of length {p}"), found: "ragged profiles".into() });
    }
    let limit = cfg.flag_limit();
    let mut result = GpaResult { followups: Vec::new(), event_times: Vec::new(), baselines: Vec::new() };
    let mut base_pair = (0usize, 1usize);
    let mut next = 2usize;
    'segments: loop {
        result.baselines.push(base_pair);
        let segment = result.baselines.len() - 1;
        let base: Vec<f64> = (0..p)
            .map(|q| 0.5 * (profiles[base_pair.0][q] + profiles[base_pair.1][q]))
            .collect();
        let mut run = vec![0usize; p];
        for i in next..profiles.len() {
            let mut flagged = 0;
            for q in 0..p {
                if base[q] - profiles[i][q] > limit {
                    run[q] += 1;
                    flagged += 1;
                } else {
                    run[q] = 0;
                }
            }
            let marks: Vec<Mark> = run.iter().map(|&r| mark_for(r, cfg)).collect();
            let n_likely = run.iter().filter(|&&r| r >= cfg.consecutive_for_likely).count();
            let n_possible = run.iter().filter(|&&r| r >= cfg.consecutive_for_possible).count();
            let class = if n_likely >= cfg.points_required {
                GpaClass::Likely
            } else if n_possible >= cfg.points_required {
                GpaClass::Possible
            } else {
                GpaClass::Stable
            };
            result.followups.push(FollowUp { index: i, segment, marks, class, flagged });
            if class == GpaClass::Likely && result.event_times.len() < cfg.max_events {
                let first = i + 1 - cfg.consecutive_for_likely;
                result.event_times.push(times[first]);
                if result.event_times.len() < cfg.max_events && first + 1 < i {
                    base_pair = (first, first + 1);
                    next = first + 2;
                    continue 'segments;
                }
            }
        }
        break;
    }
    Ok(result)
}

/// 1 iff a likely event date falls after the window's first visit and at or
/// before its last.
pub fn gpa_label_windows(result: &GpaResult, windows: &[SequenceObservation]) -> Vec<u8> {
    windows
        .iter()
        .map(|w| {
            let first = w.times[0];
            let last = w.times[w.tau - 1];
            u8::from(result.event_times.iter().any(|&e| e > first && e <= last))
        })
        .collect()
}

/// Run the event analysis on an eye's usable visits and attach external
/// labels to that eye's windows.
pub fn gpa_label_eye_windows(
    eye: &EyeSeries,
    windows: &mut [SequenceObservation],
    require_quality: bool,
    cfg: &GpaConfig,
) -> Result<GpaResult> {
    let usable: Vec<_> = eye.visits.iter().filter(|v| !require_quality || v.quality_ok).collect();
    let times: Vec<f64> = usable.iter().map(|v| v.t).collect();
    let profiles: Vec<Vec<f64>> = usable.iter().map(|v| v.profile.clone()).collect();
    let result = gpa_classify(&times, &profiles, cfg)?;
    let labels = gpa_label_windows(&result, windows);
    for (w, y) in windows.iter_mut().zip(labels) {
        w.external_label = Some(y);
    }
    Ok(result)
}

pub fn gpa_followups_csv(result: &GpaResult) -> String {
    let mut out = String::from("followup_index,segment,classification,flagged_points\n");
    for f in &result.followups {
        let _ = writeln!(out, "{},{},{},{}", f.index, f.segment, f.class.as_str(), f.flagged);
    }
    out
}

pub fn gpa_events_json(result: &GpaResult) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "event_times": result.event_times,
        "baselines": result.baselines,
    }))
    .expect("event list serializes")
}
