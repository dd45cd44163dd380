//! Two-phase set detection and attribution against a static baseline.
//!
//! Phase one scores every pair by its non-additivity
//! `ω_ij = |v({i,j}) − v({i}) − v({j}) + v(∅)|`; the strongest pairs are
//! merged into sets. Phase two scores each set `I` by `v(I) − v(∅)`.

use super::{Coalitions, InteractionMatrix, Method, MethodConfig};
use crate::error::{Error, Result};

/// Detected sets and the matrix they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub strengths: Vec<f64>,
    pub sets: Vec<Vec<usize>>,
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

pub fn archipelago<C: Coalitions>(g: &C, cfg: &MethodConfig) -> Result<InteractionMatrix> {
    Ok(archipelago_with(g, cfg)?.0)
}

/// [`archipelago`] plus the detection it was built from.
pub fn archipelago_with<C: Coalitions>(g: &C, cfg: &MethodConfig) -> Result<(InteractionMatrix, Detection)> {
    cfg.validate()?;
    let n = g.n();
    if n < 2 {
        return Err(Error::Invalid(format!("archipelago needs at least 2 positions, got {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut masks: Vec<u32> = vec![0];
    masks.extend((0..n).map(|i| 1u32 << i));
    masks.extend(pairs.iter().map(|&(i, j)| 1u32 << i | 1 << j));
    let v = g.values(&masks)?;
    let empty = v[0];
    let single = &v[1..=n];
    let omega: Vec<f64> = pairs
        .iter()
        .zip(&v[n + 1..])
        .map(|(&(i, j), &vij)| (vij - single[i] - single[j] + empty).abs())
        .collect();

    let keep = (cfg.archipelago_threshold * pairs.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| omega[b].total_cmp(&omega[a]).then(a.cmp(&b)));
    let mut parent: Vec<usize> = (0..n).collect();
    for &p in order.iter().take(keep).filter(|&&p| omega[p] > 0.0) {
        let (a, b) = (find(&mut parent, pairs[p].0), find(&mut parent, pairs[p].1));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut root_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        root_of[i] = r;
    }
    for r in 0..n {
        let members: Vec<usize> = (0..n).filter(|&i| root_of[i] == r).collect();
        if members.len() >= 2 {
            sets.push(members);
        }
    }

    let set_masks: Vec<u32> = sets.iter().map(|s| s.iter().fold(0u32, |m, &i| m | 1 << i)).collect();
    let set_scores: Vec<f64> = g.values(&set_masks)?.into_iter().map(|x| x - empty).collect();
    let floor = set_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 0.0 };
    let span = floor.abs().max(1.0);
    let omega_max = omega.iter().copied().fold(0.0, f64::max);

    let mut scores = vec![0.0; n * n];
    for (&(i, j), &w) in pairs.iter().zip(&omega) {
        let r = if omega_max > 0.0 { w / omega_max } else { 0.0 };
        let s = match sets.iter().position(|s| s.contains(&i) && s.contains(&j)) {
            Some(k) => set_scores[k],
            // Below every set, ordered by detection strength.
            None => floor - span * (2.0 - r) / 2.0,
        };
        scores[i * n + j] = s;
        scores[j * n + i] = s;
    }
    let matrix = InteractionMatrix::new(n, scores, Method::Archipelago, None)?;
    Ok((matrix, Detection { strengths: omega, sets }))
}
