use crate::error::{Error, Result};
use crate::nnet::{cce_from_logits, Head, ModelParams, Upstream};

use super::SequenceObservation;

/// One signed-gradient step of size `eps` (um) that increases the head's
/// cross-entropy at the observation's current label.
pub fn adversarial_perturb(
    params: &ModelParams,
    obs: &SequenceObservation,
    head: Head,
    eps: f64,
) -> Result<SequenceObservation> {
    if !(eps >= 0.0) {
        return Err(Error::config("adversarial_eps", "must be >= 0"));
    }
    if eps == 0.0 {
        return Ok(obs.clone());
    }
    let y = obs
        .label_for(head)
        .ok_or_else(|| Error::Input(format!("observation {} has no label for head `{}`", obs.key(), head.as_str())))?;
    let trace = params.encode(obs)?;
    let (_, dl) = cce_from_logits(params.head_logits(head, &trace.latent)?, y, 0.0);
    let up = Upstream { heads: vec![(head, dl)], projections: vec![] };
    let mut scratch = vec![0.0; params.values.len()];
    let dx = params.backward(&trace, &up, &mut scratch, true)?.expect("input gradient requested");
    let mut out = obs.clone();
    for (x, g) in out.inputs.iter_mut().zip(&dx) {
        if *g > 0.0 {
            *x += eps;
        } else if *g < 0.0 {
            *x -= eps;
        }
    }
    Ok(out)
}
