//! External clustering evaluation: contingency table, NMI, ARI,
//! Hungarian-matched clustering accuracy, and strict top-1 accuracy.

use crate::error::{CoreError, Result};

/// Class-by-cluster co-occurrence counts with marginals.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_marginals: Vec<u64>,
    pub col_marginals: Vec<u64>,
    pub n: u64,
}

fn compact(labels: &[u32]) -> (Vec<usize>, usize) {
    let mut uniq: Vec<u32> = labels.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let dense: Vec<usize> = labels
        .iter()
        .map(|l| uniq.binary_search(l).unwrap())
        .collect();
    (dense, uniq.len())
}

fn check_lengths(y_true: &[u32], y_pred: &[u32]) -> Result<()> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(CoreError::InvalidParameter {
            name: "labels",
            reason: format!(
                "label lengths {} and {} must match and be nonzero",
                y_true.len(),
                y_pred.len()
            ),
        });
    }
    Ok(())
}

/// Count matrix `counts[i][j] = |{t : y_true[t]=i, y_pred[t]=j}|` with labels
/// compacted to dense ranges.
pub fn contingency(y_true: &[u32], y_pred: &[u32]) -> Result<ContingencyTable> {
    check_lengths(y_true, y_pred)?;
    let (ti, r) = compact(y_true);
    let (pi, c) = compact(y_pred);
    let mut counts = vec![vec![0u64; c]; r];
    for (a, b) in ti.iter().zip(&pi) {
        counts[*a][*b] += 1;
    }
    let row_marginals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let mut col_marginals = vec![0u64; c];
    for row in &counts {
        for (m, v) in col_marginals.iter_mut().zip(row) {
            *m += v;
        }
    }
    Ok(ContingencyTable {
        counts,
        row_marginals,
        col_marginals,
        n: y_true.len() as u64,
    })
}

fn entropy(marginals: &[u64], n: f64) -> f64 {
    marginals
        .iter()
        .filter(|&&m| m > 0)
        .map(|&m| {
            let p = m as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two label
/// entropies. Two constant labelings score 1; exactly one constant scores 0.
pub fn nmi(y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    let table = contingency(y_true, y_pred)?;
    let n = table.n as f64;
    let h_true = entropy(&table.row_marginals, n);
    let h_pred = entropy(&table.col_marginals, n);
    if h_true == 0.0 && h_pred == 0.0 {
        return Ok(1.0);
    }
    if h_true == 0.0 || h_pred == 0.0 {
        return Ok(0.0);
    }
    // identical partitions up to relabeling: exactly one nonzero per row and
    // per column; MI equals both entropies there, so answer 1 exactly
    let rows_single = table
        .counts
        .iter()
        .all(|row| row.iter().filter(|&&c| c > 0).count() == 1);
    let cols_single = (0..table.col_marginals.len())
        .all(|j| table.counts.iter().filter(|row| row[j] > 0).count() == 1);
    if rows_single && cols_single {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            let pi = table.row_marginals[i] as f64 / n;
            let pj = table.col_marginals[j] as f64 / n;
            mi += pij * (pij / (pi * pj)).ln();
        }
    }
    Ok((mi / (0.5 * (h_true + h_pred))).clamp(0.0, 1.0))
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index over pair counts. A degenerate denominator (both
/// partitions trivial in the same direction) scores 1 when the partitions
/// coincide and 0 otherwise.
pub fn ari(y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    let table = contingency(y_true, y_pred)?;
    let index: f64 = table
        .counts
        .iter()
        .flat_map(|row| row.iter().map(|&c| comb2(c)))
        .sum();
    let sum_rows: f64 = table.row_marginals.iter().map(|&m| comb2(m)).sum();
    let sum_cols: f64 = table.col_marginals.iter().map(|&m| comb2(m)).sum();
    let total = comb2(table.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    // identical partitions: every co-clustered pair agrees in both, which is
    // exactly index == both marginal pair sums; return 1 before the division
    // can introduce an ulp of rounding
    if index == sum_rows && index == sum_cols {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions are all-singletons or both one-cluster
        return Ok(if index == expected && sum_rows == sum_cols {
            1.0
        } else {
            0.0
        });
    }
    Ok((index - expected) / denom)
}

/// Exact minimum-cost assignment over a square cost matrix (potentials
/// method, O(n^3)); returns the column matched to each row.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] >= 1 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

pub const MAX_ACCURACY_CLUSTERS: usize = 64;

/// Best-case accuracy after optimally matching predicted clusters to true
/// classes (linear assignment on the zero-padded square contingency table).
pub fn clustering_accuracy(y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    let table = contingency(y_true, y_pred)?;
    let (r, c) = (table.counts.len(), table.col_marginals.len());
    if c > MAX_ACCURACY_CLUSTERS {
        return Err(CoreError::InvalidParameter {
            name: "y_pred",
            reason: format!("{c} predicted clusters exceed the limit {MAX_ACCURACY_CLUSTERS}"),
        });
    }
    let side = r.max(c);
    // maximize matched counts == minimize negated counts on a square pad
    let cost: Vec<Vec<f64>> = (0..side)
        .map(|i| {
            (0..side)
                .map(|j| {
                    if i < r && j < c {
                        -(table.counts[i][j] as f64)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let assignment = hungarian_min(&cost);
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < r && j < c)
        .map(|(i, &j)| table.counts[i][j])
        .sum();
    Ok(matched as f64 / table.n as f64)
}

/// Strict fraction of exact matches; no matching step.
pub fn top1_accuracy(y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    let hits = y_true
        .iter()
        .zip(y_pred)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / y_true.len() as f64)
}
