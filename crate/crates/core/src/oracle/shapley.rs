use crate::error::Result;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|t| t as f64).product()
}

fn subsets_without(n: usize, i: usize, j: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .map(|m| (0..n).filter(|&p| m >> p & 1 == 1).collect::<Vec<_>>())
        .filter(|s| !s.contains(&i) && !s.contains(&j))
        .collect()
}

fn with(s: &[usize], extra: &[usize]) -> Vec<usize> {
    let mut out = s.to_vec();
    out.extend_from_slice(extra);
    out.sort_unstable();
    out
}

/// Second-order discrete derivative of `v` at `s` in directions `i`, `j`.
fn delta(v: &impl Fn(&[usize]) -> f64, s: &[usize], i: usize, j: usize) -> f64 {
    v(&with(s, &[i, j])) - v(&with(s, &[i])) - v(&with(s, &[j])) + v(s)
}

/// Shapley interaction index of `(i, j)` by its defining subset sum.
pub fn sii_bruteforce(v: impl Fn(&[usize]) -> f64, n: usize, i: usize, j: usize) -> f64 {
    subsets_without(n, i, j)
        .iter()
        .map(|s| factorial(s.len()) * factorial(n - s.len() - 2) / factorial(n - 1) * delta(&v, s, i, j))
        .sum()
}

/// Pairwise Shapley-Taylor index of `(i, j)` by its defining subset sum.
pub fn stii_bruteforce(v: impl Fn(&[usize]) -> f64, n: usize, i: usize, j: usize) -> f64 {
    let choose = |a: usize, b: usize| factorial(a) / (factorial(b) * factorial(a - b));
    subsets_without(n, i, j)
        .iter()
        .map(|s| 2.0 / n as f64 / choose(n - 1, s.len()) * delta(&v, s, i, j))
        .sum()
}

/// Pairwise Shapley-Taylor index as the average over all `n!` orderings of
/// the discrete derivative at the elements preceding the pair.
pub fn stii_over_orderings(v: impl Fn(&[usize]) -> f64, n: usize, i: usize, j: usize) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let first = p.iter().position(|&q| q == i || q == j).expect("pair present");
        let mut before = p[..first].to_vec();
        before.sort_unstable();
        total += delta(&v, &before, i, j);
        count += 1;
    });
    total / count as f64
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for t in k..p.len() {
        p.swap(k, t);
        permute(p, k + 1, visit);
        p.swap(k, t);
    }
}

/// Integrated gradients per row of an `N×d` input, summed over columns:
/// a midpoint rule in `α` along the straight path.
pub fn integrated_gradients(
    grad: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    baseline: &[f64],
    d: usize,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; x.len()];
    for k in 0..steps {
        let a = (k as f64 + 0.5) / steps as f64;
        let p: Vec<f64> = baseline.iter().zip(x).map(|(b, v)| b + a * (v - b)).collect();
        for (o, g) in acc.iter_mut().zip(grad(&p)?) {
            *o += g / steps as f64;
        }
    }
    Ok(acc
        .chunks(d)
        .zip(x.chunks(d).zip(baseline.chunks(d)))
        .map(|(g, (xv, bv))| g.iter().zip(xv.iter().zip(bv)).map(|(g, (a, b))| g * (a - b)).sum())
        .collect())
}
