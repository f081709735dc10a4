//! Synthetic longitudinal cohorts with known ground truth.
//!
//! Each eye is a series of thickness profiles (one `P`-point vector per
//! visit). The thickness law is piecewise linear in time:
//!
//! ```text
//! profile_p(t) = baseline_p - a*t - 1{progressing} * r * max(0, t - t0) * mask_p + noise
//! ```
//!
//! where `a` is the eye's aging slope, `r` its additional progression slope,
//! `t0` the onset and `mask` a localized sector bump. Values are clamped at
//! 1 um and stored on a 1e-4 um grid, the resolution of the cohort file.

mod io;

pub use io::{cohort_from_disk, cohort_from_str, cohort_to_disk, cohort_to_string, COHORT_FORMAT};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};

/// Thickness floor, um.
pub const THICKNESS_FLOOR: f64 = 1.0;

/// Storage resolution of profile values, um.
pub const PROFILE_RESOLUTION: f64 = 1e-4;
const STEPS_PER_UM: f64 = 1e4;

pub(crate) fn quantize(v: f64) -> f64 {
    (v * STEPS_PER_UM).round() / STEPS_PER_UM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub n_glaucoma_subjects: usize,
    pub n_healthy_subjects: usize,
    pub eyes_per_subject: usize,
    pub visits_min: usize,
    pub visits_max: usize,
    /// Years between visits.
    pub visit_interval_mean: f64,
    pub visit_interval_sd: f64,
    pub profile_len: usize,
    pub baseline_mean_healthy: f64,
    pub baseline_sd_healthy: f64,
    pub baseline_mean_glaucoma: f64,
    pub baseline_sd_glaucoma: f64,
    /// Decline magnitude, um/year (positive means thinning).
    pub aging_slope_mean: f64,
    pub aging_slope_sd: f64,
    /// Additional decline inside the sector once progression starts.
    pub progression_slope_mean: f64,
    pub progression_slope_sd: f64,
    pub fraction_progressing: f64,
    pub onset_earliest: f64,
    pub onset_latest: f64,
    pub sector_width_fraction: f64,
    /// Test-retest noise per point, um.
    pub noise_sd: f64,
    pub quality_fail_prob: f64,
    pub age_at_baseline_mean: f64,
    pub age_at_baseline_sd: f64,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            n_glaucoma_subjects: 300,
            n_healthy_subjects: 40,
            eyes_per_subject: 2,
            visits_min: 5,
            visits_max: 10,
            visit_interval_mean: 0.6,
            visit_interval_sd: 0.2,
            profile_len: 64,
            baseline_mean_healthy: 96.2,
            baseline_sd_healthy: 10.1,
            baseline_mean_glaucoma: 79.4,
            baseline_sd_glaucoma: 15.5,
            aging_slope_mean: 0.51,
            aging_slope_sd: 0.5,
            progression_slope_mean: 2.0,
            progression_slope_sd: 1.0,
            fraction_progressing: 0.25,
            onset_earliest: 0.0,
            onset_latest: 2.0,
            sector_width_fraction: 0.25,
            noise_sd: 4.0,
            quality_fail_prob: 0.02,
            age_at_baseline_mean: 65.6,
            age_at_baseline_sd: 10.5,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    /// Check the invariants for a given window length `tau`.
    pub fn validate(&self, tau: usize) -> Result<()> {
        let nonneg = [
            ("visit_interval_sd", self.visit_interval_sd),
            ("baseline_sd_healthy", self.baseline_sd_healthy),
            ("baseline_sd_glaucoma", self.baseline_sd_glaucoma),
            ("aging_slope_sd", self.aging_slope_sd),
            ("progression_slope_sd", self.progression_slope_sd),
            ("noise_sd", self.noise_sd),
            ("age_at_baseline_sd", self.age_at_baseline_sd),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        if self.profile_len < 8 {
            return Err(Error::config("profile_len", "must be >= 8"));
        }
        if !(1..=2).contains(&self.eyes_per_subject) {
            return Err(Error::config("eyes_per_subject", "must be 1 or 2"));
        }
        if self.visits_min < tau {
            return Err(Error::config(
                "visits_min",
                format!("must be >= window length {tau}"),
            ));
        }
        if self.visits_max < self.visits_min {
            return Err(Error::config("visits_max", "must be >= visits_min"));
        }
        if !(self.visit_interval_mean.is_finite() && self.visit_interval_mean > 0.0) {
            return Err(Error::config("visit_interval_mean", "must be > 0"));
        }
        for (name, p) in [
            ("fraction_progressing", self.fraction_progressing),
            ("quality_fail_prob", self.quality_fail_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if !(self.sector_width_fraction > 0.0 && self.sector_width_fraction <= 1.0) {
            return Err(Error::config("sector_width_fraction", "must lie in (0, 1]"));
        }
        if !(self.onset_latest >= self.onset_earliest) || !self.onset_earliest.is_finite() {
            return Err(Error::config("onset_latest", "must be >= onset_earliest"));
        }
        for (name, v) in [
            ("baseline_mean_healthy", self.baseline_mean_healthy),
            ("baseline_mean_glaucoma", self.baseline_mean_glaucoma),
            ("aging_slope_mean", self.aging_slope_mean),
            ("progression_slope_mean", self.progression_slope_mean),
            ("age_at_baseline_mean", self.age_at_baseline_mean),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Healthy,
    Glaucoma,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Healthy => "healthy",
            Group::Glaucoma => "glaucoma",
        }
    }
}

impl std::str::FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "healthy" => Ok(Group::Healthy),
            "glaucoma" => Ok(Group::Glaucoma),
            _ => Err(format!("unknown group `{s}`")),
        }
    }
}

/// Latent simulator parameters of one eye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeTruth {
    pub is_progressing: bool,
    /// Global mean of the noise-free baseline profile, um.
    pub baseline_mean: f64,
    /// Years since baseline; `None` for non-progressing eyes.
    pub onset_t: Option<f64>,
    pub aging_slope: f64,
    pub progression_slope: f64,
    pub sector_center: usize,
    pub sector_mask: Vec<f64>,
}

impl EyeTruth {
    /// Noise-free thickness at time `t` for profile point `p`.
    pub fn expected_thickness(&self, baseline: &[f64], t: f64, p: usize) -> f64 {
        let mut v = baseline[p] - self.aging_slope * t;
        if let (true, Some(t0)) = (self.is_progressing, self.onset_t) {
            v -= self.progression_slope * (t - t0).max(0.0) * self.sector_mask[p];
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    /// Years since baseline.
    pub t: f64,
    pub age: f64,
    pub profile: Vec<f64>,
    pub global_mean: f64,
    pub quality_ok: bool,
}

impl VisitRecord {
    pub fn new(t: f64, age: f64, profile: Vec<f64>, quality_ok: bool) -> Self {
        let global_mean = mean(&profile);
        VisitRecord {
            t,
            age,
            profile,
            global_mean,
            quality_ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EyeSeries {
    pub subject_id: u32,
    pub eye_id: u8,
    pub group: Group,
    pub truth: EyeTruth,
    pub visits: Vec<VisitRecord>,
}

impl EyeSeries {
    pub fn profile_len(&self) -> usize {
        self.visits.first().map_or(0, |v| v.profile.len())
    }

    /// Visit ordering and shape checks.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let p = self.profile_len();
        for w in self.visits.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(format!(
                    "subject {} eye {}: visit times not strictly increasing ({} then {})",
                    self.subject_id, self.eye_id, w[0].t, w[1].t
                ));
            }
        }
        if let Some(v) = self.visits.iter().find(|v| v.profile.len() != p) {
            return Err(format!(
                "subject {} eye {}: profile length {} differs from {}",
                self.subject_id,
                self.eye_id,
                v.profile.len(),
                p
            ));
        }
        if self.visits.first().is_some_and(|v| v.t < 0.0) {
            return Err(format!("subject {} eye {}: negative visit time", self.subject_id, self.eye_id));
        }
        if self.group == Group::Healthy && self.truth.is_progressing {
            return Err(format!(
                "subject {} eye {}: healthy eye marked progressing",
                self.subject_id, self.eye_id
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: SimulatorConfig,
    pub eyes: Vec<EyeSeries>,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Smooth stand-in for the double-hump thickness profile around the disc.
pub fn profile_template(len: usize, global_mean: f64) -> Result<Vec<f64>> {
    if len < 8 {
        return Err(Error::Input(format!("profile length {len} < 8")));
    }
    if !(global_mean > 0.0 && global_mean.is_finite()) {
        return Err(Error::Input(format!(
            "template global mean must be positive, got {global_mean}"
        )));
    }
    let n = len as f64;
    Ok((0..len)
        .map(|p| {
            global_mean * (1.0 + 0.35 * (4.0 * std::f64::consts::PI * p as f64 / n).sin())
        })
        .collect())
}

/// Circular raised-cosine bump centred at `center`.
///
/// The half-width is `h = floor(ceil(width_fraction * len) / 2)`; indices at
/// circular distance `d <= h` get `0.5 * (1 + cos(pi * d / (h + 1)))`, all
/// others are zero.
pub fn sector_mask(len: usize, center: usize, width_fraction: f64) -> Result<Vec<f64>> {
    if !(width_fraction > 0.0 && width_fraction <= 1.0) {
        return Err(Error::Input(format!(
            "sector width fraction must lie in (0, 1], got {width_fraction}"
        )));
    }
    if len == 0 || center >= len {
        return Err(Error::Input(format!("sector center {center} outside [0, {len})")));
    }
    let support = (width_fraction * len as f64).ceil() as usize;
    let half = support / 2;
    let denom = (half + 1) as f64;
    Ok((0..len)
        .map(|i| {
            let raw = i.abs_diff(center);
            let d = raw.min(len - raw);
            if d <= half {
                0.5 * (1.0 + (std::f64::consts::PI * d as f64 / denom).cos())
            } else {
                0.0
            }
        })
        .collect())
}

fn draw_normal(rng: &mut Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("validated sd").sample(rng)
}

/// Normal draw truncated below at `floor` by rejection.
fn draw_truncated(rng: &mut Rng, mean: f64, sd: f64, floor: f64) -> f64 {
    if sd == 0.0 {
        return mean.max(floor);
    }
    if mean + 8.0 * sd < floor {
        // Rejection would practically never accept.
        return floor;
    }
    loop {
        let v = draw_normal(rng, mean, sd);
        if v >= floor {
            return v;
        }
    }
}

fn generate_eye(cfg: &SimulatorConfig, subject_id: u32, eye_id: u8, group: Group, age0: f64) -> EyeSeries {
    let mut rng = rng::stream(cfg.seed, &[tag::EYE, subject_id as u64, eye_id as u64]);
    let len = cfg.profile_len;

    let n_visits = rng.random_range(cfg.visits_min..=cfg.visits_max);
    let mut times = Vec::with_capacity(n_visits);
    let mut t = 0.0;
    for i in 0..n_visits {
        if i > 0 {
            t += draw_truncated(&mut rng, cfg.visit_interval_mean, cfg.visit_interval_sd, 0.1);
        }
        times.push(t);
    }

    let (bmean, bsd) = match group {
        Group::Healthy => (cfg.baseline_mean_healthy, cfg.baseline_sd_healthy),
        Group::Glaucoma => (cfg.baseline_mean_glaucoma, cfg.baseline_sd_glaucoma),
    };
    let global_baseline = draw_normal(&mut rng, bmean, bsd).max(THICKNESS_FLOOR);
    let baseline = profile_template(len, global_baseline).expect("validated template");
    let aging_slope = draw_normal(&mut rng, cfg.aging_slope_mean, cfg.aging_slope_sd);

    // Draws below are made for every eye so the stream layout does not depend
    // on group membership.
    let progress_draw: f64 = rng.random();
    let rate = draw_normal(&mut rng, cfg.progression_slope_mean, cfg.progression_slope_sd).max(0.0);
    let onset = if cfg.onset_latest > cfg.onset_earliest {
        rng.random_range(cfg.onset_earliest..cfg.onset_latest)
    } else {
        cfg.onset_earliest
    };
    let sector_center = rng.random_range(0..len);

    let is_progressing = group == Group::Glaucoma && progress_draw < cfg.fraction_progressing;
    let truth = EyeTruth {
        is_progressing,
        baseline_mean: global_baseline,
        onset_t: is_progressing.then_some(onset),
        aging_slope,
        progression_slope: if is_progressing { rate } else { 0.0 },
        sector_center,
        sector_mask: sector_mask(len, sector_center, cfg.sector_width_fraction)
            .expect("validated width"),
    };

    let noise = (cfg.noise_sd > 0.0).then(|| Normal::new(0.0, cfg.noise_sd).expect("validated sd"));
    let visits = times
        .iter()
        .map(|&t| {
            let profile: Vec<f64> = (0..len)
                .map(|p| {
                    let eps = noise.map_or(0.0, |n| n.sample(&mut rng));
                    quantize((truth.expected_thickness(&baseline, t, p) + eps).max(THICKNESS_FLOOR))
                })
                .collect();
            let quality_ok = rng.random::<f64>() >= cfg.quality_fail_prob;
            VisitRecord::new(t, age0 + t, profile, quality_ok)
        })
        .collect();

    EyeSeries {
        subject_id,
        eye_id,
        group,
        truth,
        visits,
    }
}

/// Generate a cohort. Glaucoma subjects get ids `0..n_glaucoma`, healthy
/// subjects follow. Output is identical for any thread count.
pub fn generate_cohort(cfg: &SimulatorConfig) -> Result<Cohort> {
    cfg.validate(2)?;
    let n_subjects = cfg.n_glaucoma_subjects + cfg.n_healthy_subjects;
    let eyes: Vec<EyeSeries> = (0..n_subjects as u32)
        .into_par_iter()
        .flat_map_iter(|sid| {
            let group = if (sid as usize) < cfg.n_glaucoma_subjects {
                Group::Glaucoma
            } else {
                Group::Healthy
            };
            let mut srng = rng::stream(cfg.seed, &[tag::SUBJECT, sid as u64]);
            let age0 = draw_normal(&mut srng, cfg.age_at_baseline_mean, cfg.age_at_baseline_sd);
            (0..cfg.eyes_per_subject as u8).map(move |eid| generate_eye(cfg, sid, eid, group, age0))
        })
        .collect();
    Ok(Cohort {
        config: cfg.clone(),
        eyes,
    })
}
