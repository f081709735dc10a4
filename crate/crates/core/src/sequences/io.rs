//! `seqset/1` text format.
//!
//! ```text
//! seqset/1
//! observations <count>
//! obs <subject_id> <eye_id> <group> <window_index> <tau> <profile_len> <pu> <noise> <perm,...>
//! times <t,...>
//! row <v,...>            (tau lines)
//! ...
//! labels-begin <count>
//! label <index> <truth 0|1> <external 0|1|->
//! ...
//! labels-end <sha256 of the label lines>
//! ```
//!
//! Simulator truth and external labels sit in the trailing section only.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simcohort::Group;
use crate::textio::{self, Lines};

use super::SequenceObservation;

pub const SEQSET_FORMAT: &str = "seqset/1";

pub fn seqset_to_string(observations: &[SequenceObservation]) -> String {
    let mut out = String::new();
    out.push_str(SEQSET_FORMAT);
    out.push('\n');
    let _ = writeln!(out, "observations {}", observations.len());
    for o in observations {
        let perm: Vec<String> = o.permutation.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "obs {} {} {} {} {} {} {} {} {}",
            o.subject_id,
            o.eye_id,
            o.group.as_str(),
            o.window_index,
            o.tau,
            o.profile_len,
            o.pu_label,
            o.noise_label,
            perm.join(",")
        );
        out.push_str("times ");
        textio::join_f64(&mut out, &o.times);
        out.push('\n');
        for r in 0..o.tau {
            out.push_str("row ");
            textio::join_f64(&mut out, o.row(r));
            out.push('\n');
        }
    }
    let labels: Vec<String> = observations
        .iter()
        .enumerate()
        .map(|(i, o)| {
            format!(
                "label {} {} {}",
                i,
                u8::from(o.truth_progressing),
                o.external_label.map_or_else(|| "-".to_string(), |y| y.to_string())
            )
        })
        .collect();
    let _ = writeln!(out, "labels-begin {}", labels.len());
    for l in &labels {
        out.push_str(l);
        out.push('\n');
    }
    let _ = writeln!(out, "labels-end {}", textio::sha256_hex(labels.join("\n").as_bytes()));
    out
}

pub fn seqset_to_disk(observations: &[SequenceObservation], path: &Path) -> Result<()> {
    textio::write_file(path, &seqset_to_string(observations))
}

pub fn seqset_from_disk(path: &Path) -> Result<Vec<SequenceObservation>> {
    let text = textio::read_file(path)?;
    seqset_from_str(path, &text)
}

fn parse_label(lines: &Lines, s: &str, what: &str) -> Result<u8> {
    match s {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(lines.err(format!("bad {what} `{s}`"))),
    }
}

pub fn seqset_from_str(path: &Path, text: &str) -> Result<Vec<SequenceObservation>> {
    let mut lines = Lines::new(path, text);
    lines.expect_version(SEQSET_FORMAT)?;
    let f = lines.expect_record("observations")?;
    let n = lines.parse_usize(lines.field(&f, 0, "count")?, "count")?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let f = lines.expect_record("obs")?;
        let subject_id = lines.parse_usize(lines.field(&f, 0, "subject id")?, "subject id")? as u32;
        let eye_id = lines.parse_usize(lines.field(&f, 1, "eye id")?, "eye id")? as u8;
        let group: Group = lines
            .field(&f, 2, "group")?
            .parse()
            .map_err(|e: String| lines.err(e))?;
        let window_index = lines.parse_usize(lines.field(&f, 3, "window")?, "window")?;
        let tau = lines.parse_usize(lines.field(&f, 4, "tau")?, "tau")?;
        let len = lines.parse_usize(lines.field(&f, 5, "profile length")?, "profile length")?;
        let pu = parse_label(&lines, lines.field(&f, 6, "pu label")?, "pu label")?;
        let noise = parse_label(&lines, lines.field(&f, 7, "noise label")?, "noise label")?;
        let perm: Vec<usize> = lines
            .field(&f, 8, "permutation")?
            .split(',')
            .map(|s| lines.parse_usize(s, "permutation"))
            .collect::<Result<_>>()?;
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if sorted != (0..tau).collect::<Vec<_>>() {
            return Err(lines.err("permutation is not a permutation of 0..tau"));
        }
        let f = lines.expect_record("times")?;
        let times = lines.parse_list(lines.field(&f, 0, "times")?, "time")?;
        let mut rows = Vec::with_capacity(tau);
        for _ in 0..tau {
            let f = lines.expect_record("row")?;
            let row = lines.parse_list(lines.field(&f, 0, "row")?, "value")?;
            if row.len() != len {
                return Err(lines.err(format!("row has {} values, expected {len}", row.len())));
            }
            rows.push(row);
        }
        let mut o = SequenceObservation::new(subject_id, eye_id, group, window_index, rows, times, false)
            .map_err(|e| lines.err(e.to_string()))?;
        o.pu_label = pu;
        o.noise_label = noise;
        o.permutation = perm;
        out.push(o);
    }
    let f = lines.expect_record("labels-begin")?;
    let m = lines.parse_usize(lines.field(&f, 0, "label count")?, "label count")?;
    if m != n {
        return Err(lines.err(format!("{m} labels for {n} observations")));
    }
    let mut label_lines = Vec::with_capacity(m);
    for i in 0..m {
        let line = lines.next_line()?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.first() != Some(&"label") || f.len() != 4 {
            return Err(lines.err("expected `label` record"));
        }
        if lines.parse_usize(f[1], "label index")? != i {
            return Err(lines.err("label indices out of order"));
        }
        out[i].truth_progressing = parse_label(&lines, f[2], "truth")? == 1;
        out[i].external_label = match f[3] {
            "-" => None,
            s => Some(parse_label(&lines, s, "external label")?),
        };
        label_lines.push(line);
    }
    let f = lines.expect_record("labels-end")?;
    let digest = lines.field(&f, 0, "checksum")?;
    if digest != textio::sha256_hex(label_lines.join("\n").as_bytes()) {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            section: "labels".into(),
        });
    }
    Ok(out)
}
