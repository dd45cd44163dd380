//! Group ablation and the two Shapley-style pair indices.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;

use super::{Coalitions, InteractionMatrix, Method, MethodConfig};
use crate::error::{Error, Result};
use crate::removal::full_mask;
use crate::rng;

/// `Γ_ij = v(N) − v(N \ {i, j})`, diagonal `v(N) − v(N \ {i})`.
pub fn group_ablation<C: Coalitions>(g: &C) -> Result<InteractionMatrix> {
    let n = g.n();
    if n < 2 {
        return Err(Error::Invalid(format!("group ablation needs at least 2 positions, got {n}")));
    }
    let full = full_mask(n);
    let mut masks = vec![full];
    for i in 0..n {
        for j in i..n {
            masks.push(full & !(1 << i) & !(1 << j));
        }
    }
    let v: HashMap<u32, f64> = masks.iter().copied().zip(g.values(&masks)?).collect();
    let mut scores = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            scores[i * n + j] = v[&full] - v[&(full & !(1 << i) & !(1 << j))];
        }
    }
    InteractionMatrix::new(n, scores, Method::GroupAblation, None)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Index {
    Sii,
    Stii,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// Kernel weight of a subset of size `s` not containing the pair.
fn weights(index: Index, n: usize) -> Vec<f64> {
    (0..=n.saturating_sub(2))
        .map(|s| match index {
            Index::Sii => 1.0 / ((n - 1) as f64 * binomial(n - 2, s)),
            Index::Stii => 2.0 / n as f64 / binomial(n - 1, s),
        })
        .collect()
}

fn exact_pair(n: usize, i: usize, j: usize, w: &[f64], v: impl Fn(u32) -> f64) -> f64 {
    let (bi, bj) = (1u32 << i, 1u32 << j);
    let rest = full_mask(n) & !bi & !bj;
    let mut acc = 0.0;
    let mut s = rest;
    loop {
        let delta = v(s | bi | bj) - v(s | bi) - v(s | bj) + v(s);
        acc += w[s.count_ones() as usize] * delta;
        if s == 0 {
            break;
        }
        s = (s - 1) & rest;
    }
    acc
}

fn check_pair(n: usize, i: usize, j: usize) -> Result<()> {
    if i == j || i >= n || j >= n {
        return Err(Error::Invalid(format!("pair ({i}, {j}) is not two distinct positions of {n}")));
    }
    Ok(())
}

fn lookup<C: Coalitions>(g: &C, masks: HashSet<u32>) -> Result<HashMap<u32, f64>> {
    let mut masks: Vec<u32> = masks.into_iter().collect();
    masks.sort_unstable();
    let values = g.values(&masks)?;
    Ok(masks.into_iter().zip(values).collect())
}

fn permutations(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, rng::task_id(&[rng::label_id("permutations")]));
    (0..k)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut r);
            p
        })
        .collect()
}

/// `pred[i]` = mask of positions before `i` in the permutation.
fn predecessors(perm: &[usize]) -> Vec<u32> {
    let mut pred = vec![0u32; perm.len()];
    let mut before = 0u32;
    for &p in perm {
        pred[p] = before;
        before |= 1 << p;
    }
    pred
}

/// The coalition each pair is differenced at under one permutation.
fn sampled_coalition(index: Index, pred: &[u32], i: usize, j: usize) -> u32 {
    let bj = 1u32 << j;
    match index {
        // Both orientations are unbiased; the caller averages them.
        Index::Sii => pred[i] & !bj,
        Index::Stii => {
            if pred[i] & bj != 0 {
                pred[j]
            } else {
                pred[i]
            }
        }
    }
}

fn sampled_pairs(index: Index, g: &impl Coalitions, pairs: &[(usize, usize)], seed: u64, k: usize) -> Result<Vec<f64>> {
    let n = g.n();
    let preds: Vec<Vec<u32>> = permutations(n, k, seed).iter().map(|p| predecessors(p)).collect();
    let orientations: &[bool] = if index == Index::Sii { &[false, true] } else { &[false] };
    let mut coalitions = Vec::with_capacity(pairs.len() * k * orientations.len());
    for pred in &preds {
        for &(i, j) in pairs {
            for &flip in orientations {
                let (a, b) = if flip { (j, i) } else { (i, j) };
                coalitions.push(sampled_coalition(index, pred, a, b));
            }
        }
    }
    let mut needed = HashSet::new();
    let per_perm = pairs.len() * orientations.len();
    for (t, &s) in coalitions.iter().enumerate() {
        let (i, j) = pairs[(t % per_perm) / orientations.len()];
        needed.extend([s, s | 1 << i, s | 1 << j, s | 1 << i | 1 << j]);
    }
    let v = lookup(g, needed)?;
    let mut acc = vec![0.0; pairs.len()];
    for (t, &s) in coalitions.iter().enumerate() {
        let p = (t % per_perm) / orientations.len();
        let (bi, bj) = (1u32 << pairs[p].0, 1u32 << pairs[p].1);
        acc[p] += v[&(s | bi | bj)] - v[&(s | bi)] - v[&(s | bj)] + v[&s];
    }
    let draws = (k * orientations.len()) as f64;
    Ok(acc.into_iter().map(|a| a / draws).collect())
}

fn pair_index<C: Coalitions>(index: Index, g: &C, i: usize, j: usize, seed: u64, cfg: &MethodConfig) -> Result<f64> {
    let n = g.n();
    check_pair(n, i, j)?;
    if cfg.exact_for(n)? {
        let (bi, bj) = (1u32 << i, 1u32 << j);
        let rest = full_mask(n) & !bi & !bj;
        let mut needed = HashSet::new();
        let mut s = rest;
        loop {
            needed.extend([s, s | bi, s | bj, s | bi | bj]);
            if s == 0 {
                break;
            }
            s = (s - 1) & rest;
        }
        let v = lookup(g, needed)?;
        Ok(exact_pair(n, i, j, &weights(index, n), |m| v[&m]))
    } else {
        Ok(sampled_pairs(index, g, &[(i, j)], seed, cfg.permutations)?[0])
    }
}

fn matrix<C: Coalitions>(index: Index, g: &C, seed: u64, cfg: &MethodConfig) -> Result<InteractionMatrix> {
    let n = g.n();
    if n < 2 {
        return Err(Error::Invalid(format!("pair indices need at least 2 positions, got {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let (scores, singles): (Vec<f64>, Option<Vec<f64>>) = if cfg.exact_for(n)? {
        let table = g.table()?;
        let w = weights(index, n);
        let scores = pairs.iter().map(|&(i, j)| exact_pair(n, i, j, &w, |m| table[m as usize])).collect();
        let singles = (0..n).map(|i| table[1 << i] - table[0]).collect();
        (scores, Some(singles))
    } else {
        (sampled_pairs(index, g, &pairs, seed, cfg.permutations)?, None)
    };
    let mut m = vec![0.0; n * n];
    for (&(i, j), &s) in pairs.iter().zip(&scores) {
        m[i * n + j] = s;
        m[j * n + i] = s;
    }
    if index == Index::Stii {
        let singles = match singles {
            Some(s) => s,
            None => {
                let masks: Vec<u32> = std::iter::once(0).chain((0..n).map(|i| 1 << i)).collect();
                let v = g.values(&masks)?;
                v[1..].iter().map(|x| x - v[0]).collect()
            }
        };
        for (i, s) in singles.into_iter().enumerate() {
            m[i * n + i] = s;
        }
    }
    let method = if index == Index::Sii { Method::Sii } else { Method::Stii };
    InteractionMatrix::new(n, m, method, None)
}

/// Shapley interaction index of the pair `(i, j)`.
pub fn sii<C: Coalitions>(g: &C, i: usize, j: usize, seed: u64, cfg: &MethodConfig) -> Result<f64> {
    pair_index(Index::Sii, g, i, j, seed, cfg)
}

/// Pairwise Shapley-Taylor index of `(i, j)`.
pub fn stii<C: Coalitions>(g: &C, i: usize, j: usize, seed: u64, cfg: &MethodConfig) -> Result<f64> {
    cfg.validate()?;
    pair_index(Index::Stii, g, i, j, seed, cfg)
}

/// All pairs; the diagonal is left at zero and flagged undefined.
pub fn sii_matrix<C: Coalitions>(g: &C, seed: u64, cfg: &MethodConfig) -> Result<InteractionMatrix> {
    matrix(Index::Sii, g, seed, cfg)
}

/// All pairs, with the singleton terms `v({i}) − v(∅)` on the diagonal.
pub fn stii_matrix<C: Coalitions>(g: &C, seed: u64, cfg: &MethodConfig) -> Result<InteractionMatrix> {
    cfg.validate()?;
    matrix(Index::Stii, g, seed, cfg)
}
