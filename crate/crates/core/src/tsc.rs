//! Temporal similarity clustering: exact change-point segmentation of a
//! frame similarity matrix.
//!
//! A segment `[a, b]` (inclusive frame indices) costs its within-segment
//! kernel scatter
//!
//! ```text
//! V(a, b) = sum_{i=a..=b} S[i][i] - (1 / (b - a + 1)) * sum_{i,j=a..=b} S[i][j]
//! ```
//!
//! which the [`PrefixTable`] answers in O(1). [`optimal_change_points`] finds
//! the segmentation with exactly `m` change points that minimizes the total
//! scatter by dynamic programming; [`brute_force_change_points`] enumerates
//! every candidate and serves as its oracle. Both break cost ties toward the
//! lexicographically smallest change-point list and sum segment costs in the
//! same order, so their results agree bit for bit.

use std::fmt;

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

/// Largest matrix [`brute_force_change_points`] accepts.
pub const BRUTE_FORCE_MAX_FRAMES: usize = 20;

/// Summed-area table over a similarity matrix plus cumulative diagonal sums.
#[derive(Clone, Debug)]
pub struct PrefixTable {
    n: usize,
    /// `(n+1) x (n+1)`, `sums[i][j] = sum_{a<i, b<j} S[a][b]`
    sums: Vec<f64>,
    /// `diag[i] = sum_{a<i} S[a][a]`
    diag: Vec<f64>,
}

impl PrefixTable {
    pub fn new(s: &SimilarityMatrix) -> Self {
        let n = s.len();
        let w = n + 1;
        let mut sums = vec![0.0; w * w];
        let mut diag = vec![0.0; w];
        let values = s.values();
        for i in 0..n {
            let mut row_acc = 0.0;
            for j in 0..n {
                row_acc += values[[i, j]];
                sums[(i + 1) * w + (j + 1)] = sums[i * w + (j + 1)] + row_acc;
            }
            diag[i + 1] = diag[i] + values[[i, i]];
        }
        Self { n, sums, diag }
    }

    /// Number of frames of the underlying matrix.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `P[i][j]`, the sum over the top-left `i x j` block.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sums[i * (self.n + 1) + j]
    }

    /// Sum of `S[r][c]` over rows `r0..r1` and columns `c0..c1` (half-open).
    pub fn rect_sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        debug_assert!(r0 <= r1 && r1 <= self.n && c0 <= c1 && c1 <= self.n);
        self.get(r1, c1) - self.get(r0, c1) - self.get(r1, c0) + self.get(r0, c0)
    }

    /// Sum over the square block `[a, b] x [a, b]` (inclusive).
    pub fn block_sum(&self, a: usize, b: usize) -> f64 {
        self.rect_sum(a, b + 1, a, b + 1)
    }

    /// Sum of `S[i][i]` for `i` in `[a, b]` (inclusive).
    pub fn diag_sum(&self, a: usize, b: usize) -> f64 {
        self.diag[b + 1] - self.diag[a]
    }

    /// Scatter of `[a, b]` without bounds checks.
    #[inline]
    fn cost(&self, a: usize, b: usize) -> f64 {
        self.diag_sum(a, b) - self.block_sum(a, b) / (b - a + 1) as f64
    }
}

pub fn build_prefix_table(s: &SimilarityMatrix) -> PrefixTable {
    PrefixTable::new(s)
}

/// Within-segment scatter `V(a, b)` of the inclusive frame range `[a, b]`.
pub fn segment_cost(table: &PrefixTable, a: usize, b: usize) -> Result<f64> {
    if a > b || b >= table.len() {
        return Err(Error::invalid(format!(
            "segment [{a}, {b}] outside 0 <= a <= b < {}",
            table.len()
        )));
    }
    Ok(table.cost(a, b))
}

/// A partition of `[0, l)` into `m + 1` half-open segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    /// Strictly increasing first frames of segments 2..=m+1, each in `(0, l)`.
    pub change_points: Vec<usize>,
    pub total_cost: f64,
    pub segment_costs: Vec<f64>,
    /// Number of frames `l`.
    pub len: usize,
}

impl Segmentation {
    pub fn m(&self) -> usize {
        self.change_points.len()
    }

    /// Half-open `[start, end)` frame ranges of each segment.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut bounds = Vec::with_capacity(self.change_points.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.change_points);
        bounds.push(self.len);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Builds a segmentation from explicit change points, costing each segment.
    pub fn from_change_points(table: &PrefixTable, change_points: Vec<usize>) -> Result<Self> {
        let l = table.len();
        let increasing = change_points.windows(2).all(|w| w[0] < w[1]);
        let in_range = change_points.iter().all(|&c| 0 < c && c < l);
        if !increasing || !in_range {
            return Err(Error::invalid(format!(
                "change points {change_points:?} must be strictly increasing within (0, {l})"
            )));
        }
        let mut seg = Self {
            change_points,
            total_cost: 0.0,
            segment_costs: Vec::new(),
            len: l,
        };
        seg.segment_costs = seg.segments().iter().map(|&(a, b)| table.cost(a, b - 1)).collect();
        seg.total_cost = right_fold(&seg.segment_costs);
        Ok(seg)
    }
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cps: Vec<String> = self.change_points.iter().map(|c| c.to_string()).collect();
        write!(f, "m={} cost={} cps={}", self.m(), self.total_cost, cps.join(","))
    }
}

/// `c0 + (c1 + (... + c_last))`, the summation order the DP produces.
fn right_fold(costs: &[f64]) -> f64 {
    costs.iter().rev().fold(None, |acc, &c| Some(acc.map_or(c, |a| c + a))).unwrap_or(0.0)
}

fn check_m(l: usize, m: usize) -> Result<()> {
    if m >= l {
        return Err(Error::invalid(format!(
            "m = {m} change points impossible for {l} frames (need m <= {})",
            l.saturating_sub(1)
        )));
    }
    Ok(())
}

/// Exact minimum-scatter segmentation of `s` with exactly `m` change points.
///
/// Runs a suffix dynamic program `F[k][i]` = best cost of splitting frames
/// `[i, l)` into `k + 1` segments, in `O(m l^2)` time, then walks forward
/// choosing the smallest feasible change point at each step, which yields the
/// lexicographically smallest optimal change-point list.
pub fn optimal_change_points(s: &SimilarityMatrix, m: usize) -> Result<Segmentation> {
    let table = PrefixTable::new(s);
    optimal_change_points_with(&table, m)
}

/// [`optimal_change_points`] on a prebuilt table.
#[allow(clippy::needless_range_loop)]
pub fn optimal_change_points_with(table: &PrefixTable, m: usize) -> Result<Segmentation> {
    let l = table.len();
    check_m(l, m)?;

    // best[k][i], valid for i <= l - (k + 1)
    let mut best = vec![vec![f64::INFINITY; l]; m + 1];
    for (i, slot) in best[0].iter_mut().enumerate() {
        *slot = table.cost(i, l - 1);
    }
    for k in 1..=m {
        let (done, rest) = best.split_at_mut(k);
        let prev = &done[k - 1];
        let cur = &mut rest[0];
        for i in 0..l - k {
            let mut v = f64::INFINITY;
            // first segment [i, t), remaining k segments on [t, l)
            for t in i + 1..=l - k {
                let c = table.cost(i, t - 1) + prev[t];
                if c < v {
                    v = c;
                }
            }
            cur[i] = v;
        }
    }

    let mut change_points = Vec::with_capacity(m);
    let mut start = 0;
    for k in (1..=m).rev() {
        let target = best[k][start];
        let next = (start + 1..=l - k)
            .find(|&t| table.cost(start, t - 1) + best[k - 1][t] == target)
            .expect("optimal value is attained by some split");
        change_points.push(next);
        start = next;
    }
    let seg = Segmentation::from_change_points(table, change_points)?;
    debug_assert_eq!(seg.total_cost, best[m][0]);
    Ok(seg)
}

/// Exhaustive search over all `C(l - 1, m)` change-point sets.
///
/// Test oracle for [`optimal_change_points`]; refuses matrices larger than
/// [`BRUTE_FORCE_MAX_FRAMES`].
pub fn brute_force_change_points(s: &SimilarityMatrix, m: usize) -> Result<Segmentation> {
    let l = s.len();
    check_m(l, m)?;
    if l > BRUTE_FORCE_MAX_FRAMES {
        return Err(Error::TooLarge(format!(
            "l = {l} exceeds the exhaustive-search limit of {BRUTE_FORCE_MAX_FRAMES} frames"
        )));
    }
    let table = PrefixTable::new(s);

    // Lexicographic enumeration of m-subsets of 1..l; strict improvement keeps
    // the first (smallest) optimum.
    let mut cps: Vec<usize> = (1..=m).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut bounds = Vec::with_capacity(m + 2);
        bounds.push(0);
        bounds.extend_from_slice(&cps);
        bounds.push(l);
        let costs: Vec<f64> = bounds.windows(2).map(|w| table.cost(w[0], w[1] - 1)).collect();
        let total = right_fold(&costs);
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, cps.clone()));
        }

        // advance to the next combination
        let mut i = m;
        loop {
            if i == 0 {
                let (_, cps) = best.expect("at least one candidate");
                return Segmentation::from_change_points(&table, cps);
            }
            i -= 1;
            // largest value position i may take
            if cps[i] < l - m + i {
                cps[i] += 1;
                for j in i + 1..m {
                    cps[j] = cps[j - 1] + 1;
                }
                break;
            }
        }
    }
}
