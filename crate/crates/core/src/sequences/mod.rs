//! Windowed observations, subject-level splits and pseudo-labelling
//! transforms (scrambling, selective shuffling, augmentation, adversarial
//! perturbation).

mod adversarial;
mod io;

pub use adversarial::adversarial_perturb;
pub use io::{seqset_from_disk, seqset_from_str, seqset_to_disk, seqset_to_string, SEQSET_FORMAT};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};
use crate::simcohort::{Cohort, Group};

static TRUTH_READS: AtomicUsize = AtomicUsize::new(0);

/// Number of times simulator truth has been read through
/// [`SequenceObservation::truth_progressing`] in this process.
pub fn truth_reads() -> usize {
    TRUTH_READS.load(Ordering::SeqCst)
}

/// One `tau`-visit window of an eye.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceObservation {
    pub subject_id: u32,
    pub eye_id: u8,
    pub group: Group,
    pub window_index: usize,
    pub tau: usize,
    pub profile_len: usize,
    /// Row-major `tau x profile_len` thickness values, um.
    pub inputs: Vec<f64>,
    pub times: Vec<f64>,
    /// 0 = healthy, 1 = unlabeled.
    pub pu_label: u8,
    /// 1 = original order, 0 = scrambled.
    pub noise_label: u8,
    pub external_label: Option<u8>,
    /// Row `r` holds source row `permutation[r]`.
    pub permutation: Vec<usize>,
    truth_progressing: bool,
}

impl SequenceObservation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        subject_id: u32,
        eye_id: u8,
        group: Group,
        window_index: usize,
        rows: Vec<Vec<f64>>,
        times: Vec<f64>,
        truth_progressing: bool,
    ) -> Result<Self> {
        let tau = rows.len();
        let profile_len = rows.first().map_or(0, Vec::len);
        if tau == 0 || profile_len == 0 || rows.iter().any(|r| r.len() != profile_len) {
            return Err(Error::Shape {
                expected: "non-empty rows of equal length".into(),
                found: format!("{tau} rows"),
            });
        }
        if times.len() != tau {
            return Err(Error::Shape {
                expected: format!("{tau} times"),
                found: format!("{}", times.len()),
            });
        }
        Ok(SequenceObservation {
            subject_id,
            eye_id,
            group,
            window_index,
            tau,
            profile_len,
            inputs: rows.concat(),
            times,
            pu_label: u8::from(group == Group::Glaucoma),
            noise_label: 1,
            external_label: None,
            permutation: (0..tau).collect(),
            truth_progressing,
        })
    }

    /// Simulator ground truth. Every call is counted so that training code
    /// paths can be audited for leakage.
    pub fn truth_progressing(&self) -> bool {
        TRUTH_READS.fetch_add(1, Ordering::SeqCst);
        self.truth_progressing
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.inputs[r * self.profile_len..(r + 1) * self.profile_len]
    }

    /// Mean thickness of each visit in the window.
    pub fn global_means(&self) -> Vec<f64> {
        (0..self.tau)
            .map(|r| self.row(r).iter().sum::<f64>() / self.profile_len as f64)
            .collect()
    }

    pub fn is_original(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, &p)| i == p)
    }

    /// Label used by the given head's cross-entropy.
    pub fn label_for(&self, head: crate::nnet::Head) -> Option<u8> {
        use crate::nnet::Head;
        match head {
            Head::Pu => Some(self.pu_label),
            Head::Noise => Some(self.noise_label),
            Head::Main => self.external_label,
        }
    }

    /// Stable key used in score files.
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.subject_id, self.eye_id, self.window_index)
    }

    fn permuted(&self, perm: &[usize]) -> SequenceObservation {
        let mut out = self.clone();
        for (r, &src) in perm.iter().enumerate() {
            out.inputs[r * self.profile_len..(r + 1) * self.profile_len]
                .copy_from_slice(self.row(src));
        }
        out.permutation = perm.iter().map(|&src| self.permutation[src]).collect();
        out.noise_label = 0;
        out
    }
}

/// Sliding windows of `tau` consecutive usable visits.
///
/// A window is truly progressing when its eye progresses and the onset
/// precedes the window's last visit, i.e. the progression term is active
/// somewhere inside the window.
pub fn build_windows(cohort: &Cohort, tau: usize, require_quality: bool) -> Vec<SequenceObservation> {
    let mut out = Vec::new();
    if tau < 2 {
        return out;
    }
    for eye in &cohort.eyes {
        let usable: Vec<_> = eye
            .visits
            .iter()
            .filter(|v| !require_quality || v.quality_ok)
            .collect();
        if usable.len() < tau {
            continue;
        }
        for (w, win) in usable.windows(tau).enumerate() {
            let last_t = win[tau - 1].t;
            let truth = eye.truth.is_progressing && eye.truth.onset_t.is_some_and(|t0| last_t > t0);
            let rows = win.iter().map(|v| v.profile.clone()).collect();
            let times = win.iter().map(|v| v.t).collect();
            out.push(
                SequenceObservation::new(eye.subject_id, eye.eye_id, eye.group, w, rows, times, truth)
                    .expect("cohort visits share a profile length"),
            );
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub subjects: BTreeMap<u32, Partition>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitAssignment {
    pub fn partition_of(&self, subject_id: u32) -> Option<Partition> {
        self.subjects.get(&subject_id).copied()
    }

    pub fn count(&self, part: Partition) -> usize {
        self.subjects.values().filter(|&&p| p == part).count()
    }

    /// Split observations into (train, validation, test), preserving order.
    pub fn apply(
        &self,
        observations: &[SequenceObservation],
    ) -> (Vec<SequenceObservation>, Vec<SequenceObservation>, Vec<SequenceObservation>) {
        let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
        for o in observations {
            match self.partition_of(o.subject_id) {
                Some(Partition::Train) => tr.push(o.clone()),
                Some(Partition::Validation) => va.push(o.clone()),
                Some(Partition::Test) => te.push(o.clone()),
                None => {}
            }
        }
        (tr, va, te)
    }
}

/// Largest-remainder quotas; ties go to the later partition.
fn quotas(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut q = [0usize; 3];
    for i in 0..3 {
        q[i] = raw[i].floor() as usize;
    }
    let mut left = n - q.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(b.cmp(&a))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        q[i] += 1;
        left -= 1;
    }
    q
}

/// Subject-level partition by shuffled quota assignment.
pub fn subject_split(
    observations: &[SequenceObservation],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::config("split", "ratios must be positive"));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("split", "ratios must sum to 1"));
    }
    let subjects: BTreeSet<u32> = observations.iter().map(|o| o.subject_id).collect();
    if subjects.len() < 3 {
        return Err(Error::Input(format!(
            "{} subjects cannot fill 3 partitions",
            subjects.len()
        )));
    }
    let mut order: Vec<u32> = subjects.into_iter().collect();
    let mut rng = rng::stream(seed, &[tag::SPLIT]);
    order.shuffle(&mut rng);
    let q = quotas(order.len(), ratios);
    let parts = [Partition::Train, Partition::Validation, Partition::Test];
    let mut map = BTreeMap::new();
    let mut it = order.into_iter();
    for (part, &n) in parts.iter().zip(q.iter()) {
        for sid in it.by_ref().take(n) {
            map.insert(sid, *part);
        }
    }
    Ok(SplitAssignment {
        subjects: map,
        ratios,
        seed,
    })
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

fn random_non_identity(tau: usize, rng: &mut Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..tau).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Permute the rows of an original observation with a permutation drawn
/// uniformly from the `tau! - 1` non-identity permutations. Times are kept in
/// their original order.
pub fn scramble(obs: &SequenceObservation, rng: &mut Rng) -> Result<SequenceObservation> {
    if obs.tau < 2 {
        return Err(Error::Input(format!("cannot scramble a window of length {}", obs.tau)));
    }
    if !obs.is_original() {
        return Err(Error::Input("scramble expects an original (unpermuted) observation".into()));
    }
    let perm = random_non_identity(obs.tau, rng);
    Ok(obs.permuted(&perm))
}

/// Each original (pseudo-label 1) followed by `k` scrambled copies
/// (pseudo-label 0). Copies use pairwise distinct permutations whenever
/// `tau! - 1 >= k`.
pub fn make_noise_dataset(
    originals: &[SequenceObservation],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<SequenceObservation>> {
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    let mut out = Vec::with_capacity(originals.len() * (k + 1));
    for obs in originals {
        out.push(obs.clone());
        let distinct = factorial(obs.tau).saturating_sub(1) >= k;
        let mut used: Vec<Vec<usize>> = Vec::with_capacity(k);
        while used.len() < k {
            let s = scramble(obs, rng)?;
            if distinct && used.contains(&s.permutation) {
                continue;
            }
            used.push(s.permutation.clone());
            out.push(s);
        }
    }
    Ok(out)
}

/// Class-conditional shuffling: progressing-labelled windows are shuffled
/// with probability `p`, non-progressing ones with `1 - p`. Shuffled outputs
/// are relabelled 0.
pub fn selective_shuffle(
    labeled: &[SequenceObservation],
    p: f64,
    rng: &mut Rng,
) -> Result<Vec<SequenceObservation>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config("p", "must lie in [0, 1]"));
    }
    labeled.iter().map(|o| selective_shuffle_one(o, p, rng)).collect()
}

pub fn selective_shuffle_one(obs: &SequenceObservation, p: f64, rng: &mut Rng) -> Result<SequenceObservation> {
    let y = obs.external_label.ok_or_else(|| {
        Error::Input(format!("observation {} has no external label", obs.key()))
    })?;
    let u: f64 = rng.random();
    let shuffle = (y == 1 && u < p) || (y == 0 && u < 1.0 - p);
    if !shuffle {
        return Ok(obs.clone());
    }
    let mut s = scramble(obs, rng)?;
    s.external_label = Some(0);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Per-point Gaussian jitter sd, um.
    pub jitter_sd: f64,
    /// Global scale drawn log-uniformly from [1 - scale, 1 + scale].
    pub scale: f64,
    /// Circular shift drawn uniformly from [-max_shift, max_shift].
    pub max_shift: usize,
    /// Longest dropped arc as a fraction of the profile.
    pub dropout_fraction: f64,
    pub dropout_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            jitter_sd: 0.5,
            scale: 0.05,
            max_shift: 2,
            dropout_fraction: 0.1,
            dropout_prob: 0.3,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            jitter_sd: 0.0,
            scale: 0.0,
            max_shift: 0,
            dropout_fraction: 0.0,
            dropout_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sd >= 0.0) {
            return Err(Error::config("augment.jitter_sd", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.scale) {
            return Err(Error::config("augment.scale", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.dropout_fraction) {
            return Err(Error::config("augment.dropout_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::config("augment.dropout_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Jitter, global scale, circular shift and arc dropout, in that order.
/// Scale, shift and the dropped arc are shared by every visit of the window.
pub fn augment(obs: &SequenceObservation, cfg: &AugmentConfig, rng: &mut Rng) -> SequenceObservation {
    let mut out = obs.clone();
    let len = obs.profile_len;
    if cfg.jitter_sd > 0.0 {
        let n = Normal::new(0.0, cfg.jitter_sd).expect("validated jitter");
        for v in out.inputs.iter_mut() {
            *v += n.sample(rng);
        }
    }
    if cfg.scale > 0.0 {
        let lo = (1.0 - cfg.scale).ln();
        let hi = (1.0 + cfg.scale).ln();
        let factor = rng.random_range(lo..hi).exp();
        for v in out.inputs.iter_mut() {
            *v *= factor;
        }
    }
    if cfg.max_shift > 0 {
        let m = cfg.max_shift as i64;
        let shift = rng.random_range(-m..=m).rem_euclid(len as i64) as usize;
        if shift != 0 {
            for r in 0..obs.tau {
                out.inputs[r * len..(r + 1) * len].rotate_right(shift);
            }
        }
    }
    let max_arc = (cfg.dropout_fraction * len as f64).floor() as usize;
    if cfg.dropout_prob > 0.0 && max_arc > 0 && rng.random::<f64>() < cfg.dropout_prob {
        let arc = rng.random_range(1..=max_arc);
        let start = rng.random_range(0..len);
        for r in 0..obs.tau {
            for j in 0..arc {
                out.inputs[r * len + (start + j) % len] = 0.0;
            }
        }
    }
    out
}
