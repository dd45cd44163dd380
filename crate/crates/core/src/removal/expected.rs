use super::game::expected_label;
use super::{StaticBaseline, ValueFunction};
use crate::error::{Error, Result};
use crate::interactions::InteractionMatrix;
use crate::rng;

/// Background strings drawn as static baselines for an expected kind.
pub fn draw_backgrounds(vf: &ValueFunction, x: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    let kind = vf.baseline.kind;
    let label = expected_label(kind)
        .ok_or_else(|| Error::Baseline(format!("{} is not an expected baseline", kind.name())))?;
    vf.validate()?;
    let bg = vf.background.expect("validated");
    let mut r = rng::stream(seed, rng::task_id(&[rng::label_id("expected"), rng::label_id(kind.name())]));
    bg.draw_strings(x.len(), Some(label), vf.baseline.length_match, vf.baseline.samples, &mut r)
}

/// Mean of `method` over static baselines drawn from the background class.
pub fn expected_attribution<F>(vf: &ValueFunction, x: &[usize], seed: u64, method: F) -> Result<InteractionMatrix>
where
    F: Fn(&StaticBaseline) -> Result<InteractionMatrix>,
{
    let draws = draw_backgrounds(vf, x, seed)?;
    let matrices = draws
        .into_iter()
        .map(|d| method(&StaticBaseline::Tokens(d)))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = InteractionMatrix::mean(&matrices)?;
    mean.baseline = Some(vf.baseline.kind);
    Ok(mean)
}
