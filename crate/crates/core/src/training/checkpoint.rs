//! `ckpt/1` container.
//!
//! ```text
//! ckpt/1
//! state <json>
//! sha256 <digest of the json>
//! ```
//!
//! Floats use shortest round-trip formatting, so a load reproduces the saved
//! state exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::textio;

use super::TrainerState;

pub const CKPT_FORMAT: &str = "ckpt/1";

pub fn checkpoint_to_string(state: &TrainerState) -> String {
    let json = serde_json::to_string(state).expect("trainer state serializes");
    format!("{CKPT_FORMAT}\nstate {json}\nsha256 {}\n", textio::sha256_hex(json.as_bytes()))
}

pub fn checkpoint_save(state: &TrainerState, path: &Path) -> Result<()> {
    textio::write_file(path, &checkpoint_to_string(state))
}

pub fn checkpoint_load(path: &Path) -> Result<TrainerState> {
    checkpoint_from_str(&textio::read_file(path)?, path)
}

pub fn checkpoint_from_str(text: &str, path: &Path) -> Result<TrainerState> {
    let mut lines = text.lines();
    let version = lines.next().unwrap_or("").trim();
    if version != CKPT_FORMAT {
        return Err(Error::Version { path: path.into(), expected: CKPT_FORMAT.into(), found: version.into() });
    }
    let json = lines
        .next()
        .and_then(|l| l.strip_prefix("state "))
        .ok_or_else(|| Error::parse(path, 2, "expected `state <json>`"))?;
    let digest = lines
        .next()
        .and_then(|l| l.strip_prefix("sha256 "))
        .ok_or_else(|| Error::Checksum { path: path.into(), section: "trailer".into() })?;
    if digest.trim() != textio::sha256_hex(json.as_bytes()) {
        return Err(Error::Checksum { path: path.into(), section: "state".into() });
    }
    let mut state: TrainerState =
        serde_json::from_str(json).map_err(|e| Error::parse(path, 2, format!("bad state: {e}")))?;
    state.params.relayout()?;
    if let Some(b) = state.best.as_mut() {
        b.relayout()?;
    }
    if state.opt.velocity.len() != state.params.param_count() {
        return Err(Error::Shape {
            expected: format!("{} optimizer buffers", state.params.param_count()),
            found: format!("{}", state.opt.velocity.len()),
        });
    }
    Ok(state)
}
