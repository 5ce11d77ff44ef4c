//! Order statistics and the two-sample rank-sum test.

use serde::{Deserialize, Serialize};
use libm::erfc;

/// Linear-interpolation quantile of sorted data, `p` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn sorted(data: &[f64]) -> Vec<f64> {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(data: &[f64]) -> f64 {
    quantile_sorted(&sorted(data), 0.5)
}

/// Lower quartile, median and upper quartile.
pub fn quartiles(data: &[f64]) -> [f64; 3] {
    let s = sorted(data);
    [
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSum {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    pub z: f64,
    /// Two-sided p-value from the normal approximation.
    pub p_value: f64,
}

/// Wilcoxon rank-sum (Mann-Whitney U) test with tie and continuity
/// corrections.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> RankSum {
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    assert!(n1 > 0.0 && n2 > 0.0, "rank-sum test needs two non-empty samples");
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let n = pooled.len();
    let mut rank_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_a += pooled[i..=j].iter().filter(|p| p.1).count() as f64 * avg_rank;
        i = j + 1;
    }

    let u = rank_a - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    if var <= 0.0 {
        return RankSum { u, z: 0.0, p_value: 1.0 };
    }
    let diff = u - mean;
    let corrected = (diff.abs() - 0.5).max(0.0) * diff.signum();
    let z = corrected / var.sqrt();
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    RankSum { u, z, p_value }
}
