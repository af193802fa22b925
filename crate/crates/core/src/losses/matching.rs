//! Optimal bipartite matching between predicted queries and ground-truth
//! elements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::nn::LayoutPrediction;

/// Weights of the matching cost and of the matching-based reconstruction
/// loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub class: f64,
    pub bbox_l1: f64,
    pub giou: f64,
    /// Cross-entropy weight of queries assigned to no-object.
    pub no_object: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            class: 1.0,
            bbox_l1: 5.0,
            giou: 2.0,
            no_object: 0.1,
        }
    }
}

impl MatchWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.class, self.bbox_l1, self.giou, self.no_object];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("match weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Query-to-ground-truth pairs, sorted by query index. Queries absent from
/// `pairs` are assigned to no-object.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl Assignment {
    pub fn gt_for_query(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|(q, _)| *q == query).map(|(_, g)| *g)
    }

    pub fn validate(&self, n_queries: usize, n_gt: usize) -> Result<()> {
        let mut q_seen = vec![false; n_queries];
        let mut g_seen = vec![false; n_gt];
        for &(q, g) in &self.pairs {
            if q >= n_queries || g >= n_gt || q_seen[q] || g_seen[g] {
                return Err(Error::InvalidInput(format!("assignment pair ({q}, {g}) is out of range or repeated")));
            }
            q_seen[q] = true;
            g_seen[g] = true;
        }
        if g_seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("assignment leaves a ground-truth element unmatched".into()));
        }
        Ok(())
    }
}

/// Minimum-cost assignment of every row to a distinct column of a
/// `rows × cols` matrix with `rows <= cols`. Returns the column per row.
///
/// Shortest augmenting paths with dual potentials, O(rows² · cols).
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    if n > m {
        return Err(Error::InvalidInput(format!("{n} rows cannot be matched into {m} columns")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix entry".into()));
    }

    // 1-based: column 0 is a virtual start holding the row being inserted.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            col_of_row[row_of[j] - 1] = j - 1;
        }
    }
    Ok(col_of_row)
}

/// Pairwise matching cost indexed `[gt][query]`.
pub fn matching_cost_matrix(pred: &LayoutPrediction, gt: &Layout, w: &MatchWeights) -> Result<Vec<Vec<f64>>> {
    pred.validate()?;
    Ok(gt
        .elements
        .iter()
        .map(|e| {
            pred.class_probs
                .iter()
                .zip(&pred.boxes)
                .map(|(probs, b)| {
                    -w.class * probs[e.category.index()] + w.bbox_l1 * b.l1(&e.bbox) + w.giou * (1.0 - b.giou(&e.bbox))
                })
                .collect()
        })
        .collect())
}

pub fn hungarian_match(pred: &LayoutPrediction, gt: &Layout, w: &MatchWeights) -> Result<Assignment> {
    if pred.n_queries() < gt.len() {
        return Err(Error::InvalidInput(format!(
            "{} queries cannot cover {} ground-truth elements",
            pred.n_queries(),
            gt.len()
        )));
    }
    let cost = matching_cost_matrix(pred, gt, w)?;
    let cols = solve_assignment(&cost)?;
    let total = cols.iter().enumerate().map(|(g, &q)| cost[g][q]).sum();
    let mut pairs: Vec<(usize, usize)> = cols.into_iter().enumerate().map(|(g, q)| (q, g)).collect();
    pairs.sort_unstable();
    Ok(Assignment { pairs, cost: total })
}
