//! Evaluation: word error rate with a deterministic S/D/I decomposition,
//! and the two-sample Wilcoxon rank-sum W statistic for the 5-run tables.

use crate::{Error, Result};

/// Word error rate with its edit-operation breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
    /// 100 * (S + D + I) / N; may exceed 100.
    pub wer: f64,
}

/// Minimal edit distance between reference and hypothesis with unit costs.
///
/// Among equal-cost alignments the backtrace prefers
/// match > substitution > deletion > insertion, which fixes the S/D/I
/// decomposition.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty reference".into()));
    }
    let n = reference.len();
    let m = hypothesis.len();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = if reference[i - 1].as_ref() == hypothesis[j - 1].as_ref() { 0 } else { 1 };
            d[i][j] = (d[i - 1][j - 1] + sub_cost)
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }

    let (mut i, mut j) = (n, m);
    let (mut subs, mut dels, mut ins) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && reference[i - 1].as_ref() == hypothesis[j - 1].as_ref() && d[i][j] == d[i - 1][j - 1]
        {
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            subs += 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            dels += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    debug_assert_eq!(subs + dels + ins, d[n][m]);
    Ok(WerBreakdown {
        substitutions: subs,
        deletions: dels,
        insertions: ins,
        reference_length: n,
        wer: 100.0 * (subs + dels + ins) as f64 / n as f64,
    })
}

/// Result of the rank-sum test: W is the smaller of the two pooled rank
/// sums (half-integral under ties).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSumResult {
    pub w: f64,
    pub n1: usize,
    pub n2: usize,
    pub significant: bool,
}

/// Lower critical value for two independent samples of size 5 at
/// alpha = 0.05, two-tailed.
pub const RANK_SUM_CRITICAL_5_5: f64 = 17.0;

/// Wilcoxon rank-sum W with average ranks for ties. Significance uses the
/// strict reading `W < critical` and is only defined for 5/5 samples.
pub fn wilcoxon_w_with_critical(a: &[f64], b: &[f64], critical: f64) -> Result<RankSumResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in sample".into()));
    }
    let n1 = a.len();
    let n2 = b.len();
    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0))
        .chain(b.iter().map(|&v| (v, 1)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());

    let mut rank_sum = [0.0f64; 2];
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks are 1-based; tied values share the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for k in i..j {
            rank_sum[pooled[k].1] += avg_rank;
        }
        i = j;
    }
    let w = rank_sum[0].min(rank_sum[1]);
    Ok(RankSumResult {
        w,
        n1,
        n2,
        significant: n1 == 5 && n2 == 5 && w < critical,
    })
}

/// [`wilcoxon_w_with_critical`] at the tabulated 5/5 critical value 17.
pub fn wilcoxon_w(a: &[f64], b: &[f64]) -> Result<RankSumResult> {
    wilcoxon_w_with_critical(a, b, RANK_SUM_CRITICAL_5_5)
}
