//! `simcohort/1` text format.
//!
//! ```text
//! simcohort/1
//! config {"n_glaucoma_subjects":300,...}
//! eyes <count>
//! eye <subject_id> <eye_id> <healthy|glaucoma> <n_visits>
//! visit <t> <age> <ok|fail> <p_0>,<p_1>,...     (4 decimal places)
//! ...
//! truth-begin <count>
//! truth <subject_id> <eye_id> <0|1> <baseline_mean> <onset|-> <aging_slope> <progression_slope> <sector_center> <mask,...>
//! ...
//! truth-end <sha256 of the truth lines>
//! ```
//!
//! Visit records carry observable data only; all latent quantities live in
//! the truth section so readers of the observable part can be audited.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textio::{self, Lines};

use super::{Cohort, EyeSeries, EyeTruth, Group, SimulatorConfig, VisitRecord};

pub const COHORT_FORMAT: &str = "simcohort/1";

fn truth_line(eye: &EyeSeries) -> String {
    let t = &eye.truth;
    let mut s = format!(
        "truth {} {} {} {} {} {} {} {} ",
        eye.subject_id,
        eye.eye_id,
        u8::from(t.is_progressing),
        t.baseline_mean,
        t.onset_t.map_or_else(|| "-".to_string(), |v| v.to_string()),
        t.aging_slope,
        t.progression_slope,
        t.sector_center,
    );
    textio::join_f64(&mut s, &t.sector_mask);
    s
}

pub fn cohort_to_string(cohort: &Cohort) -> String {
    let mut out = String::new();
    out.push_str(COHORT_FORMAT);
    out.push('\n');
    let cfg = serde_json::to_string(&cohort.config).expect("config serializes");
    let _ = writeln!(out, "config {cfg}");
    let _ = writeln!(out, "eyes {}", cohort.eyes.len());
    for eye in &cohort.eyes {
        let _ = writeln!(
            out,
            "eye {} {} {} {}",
            eye.subject_id,
            eye.eye_id,
            eye.group.as_str(),
            eye.visits.len()
        );
        for v in &eye.visits {
            let _ = write!(
                out,
                "visit {} {} {} ",
                v.t,
                v.age,
                if v.quality_ok { "ok" } else { "fail" }
            );
            textio::join_fixed(&mut out, &v.profile, 4);
            out.push('\n');
        }
    }
    let truth: Vec<String> = cohort.eyes.iter().map(truth_line).collect();
    let body = truth.join("\n");
    let _ = writeln!(out, "truth-begin {}", truth.len());
    for line in &truth {
        out.push_str(line);
        out.push('\n');
    }
    let _ = writeln!(out, "truth-end {}", textio::sha256_hex(body.as_bytes()));
    out
}

pub fn cohort_to_disk(cohort: &Cohort, path: &Path) -> Result<()> {
    textio::write_file(path, &cohort_to_string(cohort))
}

pub fn cohort_from_disk(path: &Path) -> Result<Cohort> {
    let text = textio::read_file(path)?;
    cohort_from_str(path, &text)
}

pub fn cohort_from_str(path: &Path, text: &str) -> Result<Cohort> {
    let mut lines = Lines::new(path, text);
    lines.expect_version(COHORT_FORMAT)?;

    let cfg_line = lines.next_line()?;
    let cfg_json = cfg_line
        .strip_prefix("config ")
        .ok_or_else(|| lines.err("expected `config` record"))?;
    let config: SimulatorConfig =
        serde_json::from_str(cfg_json).map_err(|e| lines.err(format!("bad config: {e}")))?;

    let f = lines.expect_record("eyes")?;
    let n_eyes = lines.parse_usize(lines.field(&f, 0, "eye count")?, "eye count")?;

    let mut observed = Vec::with_capacity(n_eyes);
    for _ in 0..n_eyes {
        let f = lines.expect_record("eye")?;
        let subject_id = lines.parse_usize(lines.field(&f, 0, "subject id")?, "subject id")? as u32;
        let eye_id = lines.parse_usize(lines.field(&f, 1, "eye id")?, "eye id")? as u8;
        let group: Group = lines
            .field(&f, 2, "group")?
            .parse()
            .map_err(|e: String| lines.err(e))?;
        let n_visits = lines.parse_usize(lines.field(&f, 3, "visit count")?, "visit count")?;
        let mut visits = Vec::with_capacity(n_visits);
        for _ in 0..n_visits {
            let f = lines.expect_record("visit")?;
            let t = lines.parse_f64(lines.field(&f, 0, "t")?, "visit time")?;
            let age = lines.parse_f64(lines.field(&f, 1, "age")?, "age")?;
            let quality_ok = match lines.field(&f, 2, "quality")? {
                "ok" => true,
                "fail" => false,
                other => return Err(lines.err(format!("bad quality flag `{other}`"))),
            };
            let profile = lines.parse_list(lines.field(&f, 3, "profile")?, "thickness")?;
            if let Some(prev) = visits.last().map(|v: &VisitRecord| v.t) {
                if !(t > prev) {
                    return Err(lines.err(format!(
                        "visit times out of order for subject {subject_id} eye {eye_id}: {prev} then {t}"
                    )));
                }
            }
            if let Some(first) = visits.first().map(|v: &VisitRecord| v.profile.len()) {
                if profile.len() != first {
                    return Err(lines.err("profile length differs between visits"));
                }
            }
            visits.push(VisitRecord::new(t, age, profile, quality_ok));
        }
        observed.push((subject_id, eye_id, group, visits));
    }

    let f = lines.expect_record("truth-begin")?;
    let n_truth = lines.parse_usize(lines.field(&f, 0, "truth count")?, "truth count")?;
    if n_truth != n_eyes {
        return Err(lines.err(format!("truth count {n_truth} != eye count {n_eyes}")));
    }
    let mut truth_lines = Vec::with_capacity(n_truth);
    let mut eyes = Vec::with_capacity(n_eyes);
    for (subject_id, eye_id, group, visits) in observed {
        let line = lines.next_line()?;
        truth_lines.push(line);
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.first() != Some(&"truth") {
            return Err(lines.err("expected `truth` record"));
        }
        let f = &f[1..];
        let sid = lines.parse_usize(lines.field(f, 0, "subject id")?, "subject id")? as u32;
        let eid = lines.parse_usize(lines.field(f, 1, "eye id")?, "eye id")? as u8;
        if (sid, eid) != (subject_id, eye_id) {
            return Err(lines.err(format!(
                "truth record for ({sid}, {eid}) does not match eye ({subject_id}, {eye_id})"
            )));
        }
        let is_progressing = match lines.field(f, 2, "progressing flag")? {
            "0" => false,
            "1" => true,
            other => return Err(lines.err(format!("bad progressing flag `{other}`"))),
        };
        let baseline_mean = lines.parse_f64(lines.field(f, 3, "baseline mean")?, "baseline mean")?;
        let onset_t = match lines.field(f, 4, "onset")? {
            "-" => None,
            s => Some(lines.parse_f64(s, "onset")?),
        };
        let aging_slope = lines.parse_f64(lines.field(f, 5, "aging slope")?, "aging slope")?;
        let progression_slope =
            lines.parse_f64(lines.field(f, 6, "progression slope")?, "progression slope")?;
        let sector_center = lines.parse_usize(lines.field(f, 7, "sector center")?, "sector center")?;
        let sector_mask = lines.parse_list(lines.field(f, 8, "sector mask")?, "mask value")?;
        let eye = EyeSeries {
            subject_id,
            eye_id,
            group,
            truth: EyeTruth {
                is_progressing,
                baseline_mean,
                onset_t,
                aging_slope,
                progression_slope,
                sector_center,
                sector_mask,
            },
            visits,
        };
        eye.validate().map_err(|m| lines.err(m))?;
        eyes.push(eye);
    }
    let f = lines.expect_record("truth-end")?;
    let stored = lines.field(&f, 0, "checksum")?;
    let actual = textio::sha256_hex(truth_lines.join("\n").as_bytes());
    if stored != actual {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            section: "truth".into(),
        });
    }
    Ok(Cohort { config, eyes })
}
