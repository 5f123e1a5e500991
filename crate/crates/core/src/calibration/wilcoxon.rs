use statrs::distribution::{ContinuousCDF, Normal};

/// Largest sample size handled by exact enumeration.
const EXACT_MAX_N: usize = 25;

/// Mid-ranks of `|d|` and the tie-group sizes.
fn abs_ranks(d: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = d.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[idx[j + 1]].abs() == d[idx[i]].abs() {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mid;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

fn statistic(d: &[f64], ranks: &[f64]) -> f64 {
    d.iter().zip(ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum()
}

/// Exact `P(V ≤ v)` for the signed-rank statistic with ranks `1..n`.
fn exact_cdf(n: usize, v: f64) -> f64 {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    for r in 1..=n {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let upto = v.floor();
    let hits: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as f64) <= upto)
        .map(|(_, c)| c)
        .sum();
    (hits / 2f64.powi(n as i32)).min(1.0)
}

fn nonzero(d: &[f64]) -> Vec<f64> {
    d.iter().copied().filter(|v| *v != 0.0).collect()
}

/// Exact one-sided p-value (alternative: differences tend to be negative).
/// Zeros are dropped; ties among `|d|` use mid-ranks.
pub fn wilcoxon_exact_less(d: &[f64]) -> f64 {
    let d = nonzero(d);
    if d.is_empty() {
        return 1.0;
    }
    let (ranks, _) = abs_ranks(&d);
    exact_cdf(d.len(), statistic(&d, &ranks))
}

/// Normal approximation with tie and continuity correction.
pub fn wilcoxon_normal_less(d: &[f64]) -> f64 {
    let d = nonzero(d);
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let (ranks, ties) = abs_ranks(&d);
    let v = statistic(&d, &ranks);
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (v - mean + 0.5) / var.sqrt();
    Normal::standard().cdf(z).clamp(0.0, 1.0)
}

/// One-sided signed-rank p-value: exact for at most 25 non-zero differences
/// without ties, normal approximation otherwise.
pub fn wilcoxon_signed_rank_one_sided(d: &[f64]) -> f64 {
    let nz = nonzero(d);
    if nz.is_empty() {
        return 1.0;
    }
    let (_, ties) = abs_ranks(&nz);
    if nz.len() <= EXACT_MAX_N && ties.iter().all(|&t| t == 1) {
        wilcoxon_exact_less(&nz)
    } else {
        wilcoxon_normal_less(&nz)
    }
}
