//! Multi-scale proposals from change-point segmentations, and boundary-aware
//! refinement of video-level features with proposal-level features.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;
use crate::tsc::{optimal_change_points_with, PrefixTable, Segmentation};

/// Default weight of the proposal-level mean added to video-level rows.
pub const DEFAULT_BLEND_ALPHA: f64 = 0.5;
/// Default number of top-scored proposals used for refinement.
pub const DEFAULT_TOP_K: usize = 10;

/// A class-agnostic candidate interval `[start, end)` in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub score: f64,
    /// Change-point count of the segmentation that produced it.
    pub source_m: usize,
}

/// Video-level features `F_v` sampled every `stride_seconds`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub stride_seconds: f64,
    pub rows: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, stride_seconds: f64, rows: Array2<f64>) -> Result<Self> {
        if !(stride_seconds.is_finite() && stride_seconds > 0.0) {
            return Err(Error::invalid(format!("stride must be > 0, got {stride_seconds}")));
        }
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::invalid("feature sequence must be non-empty"));
        }
        if let Some(row) = rows
            .rows()
            .into_iter()
            .position(|r| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite { row });
        }
        Ok(Self {
            video_id: video_id.into(),
            stride_seconds,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

/// Mean similarity over the block `[a, b] x [a, b]` (inclusive).
pub fn score_proposal(s: &SimilarityMatrix, a: usize, b: usize) -> Result<f64> {
    if a > b || b >= s.len() {
        return Err(Error::invalid(format!(
            "segment [{a}, {b}] outside 0 <= a <= b < {}",
            s.len()
        )));
    }
    let table = PrefixTable::new(s);
    Ok(block_mean(&table, a, b))
}

fn block_mean(table: &PrefixTable, a: usize, b: usize) -> f64 {
    let n = (b - a + 1) as f64;
    (table.block_sum(a, b) / (n * n)).clamp(-1.0, 1.0)
}

/// Sorts by descending score; ties by start, end, then source `m`.
pub fn sort_proposals(proposals: &mut [Proposal]) {
    proposals.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(x.start.total_cmp(&y.start))
            .then(x.end.total_cmp(&y.end))
            .then(x.source_m.cmp(&y.source_m))
    });
}

/// Turns precomputed segmentations into a deduplicated, score-sorted proposal set.
///
/// Segment `[a, b)` becomes the interval `[a T, b T)`. When several
/// segmentations produce the same interval only the highest-scored copy is
/// kept (the smallest `m` on a score tie).
pub fn proposals_from_segmentations(
    s: &SimilarityMatrix,
    segmentations: &[Segmentation],
) -> Result<Vec<Proposal>> {
    let table = PrefixTable::new(s);
    let t = s.interval_seconds;
    let mut by_span: BTreeMap<(usize, usize), Proposal> = BTreeMap::new();
    for seg in segmentations {
        if seg.len != s.len() {
            return Err(Error::invalid(format!(
                "segmentation over {} frames does not match {}-frame matrix",
                seg.len,
                s.len()
            )));
        }
        for (a, b) in seg.segments() {
            let p = Proposal {
                video_id: s.video_id.clone(),
                start: a as f64 * t,
                end: b as f64 * t,
                score: block_mean(&table, a, b - 1),
                source_m: seg.m(),
            };
            let keep = match by_span.get(&(a, b)) {
                None => true,
                Some(q) => p.score > q.score || (p.score == q.score && p.source_m < q.source_m),
            };
            if keep {
                by_span.insert((a, b), p);
            }
        }
    }
    let mut out: Vec<Proposal> = by_span.into_values().collect();
    sort_proposals(&mut out);
    Ok(out)
}

/// Segments `s` once per change-point count in `m_values` and pools the
/// resulting segments into one proposal set.
pub fn generate_proposals(s: &SimilarityMatrix, m_values: &BTreeSet<usize>) -> Result<Vec<Proposal>> {
    if m_values.is_empty() {
        return Err(Error::invalid("m_values must not be empty"));
    }
    let table = PrefixTable::new(s);
    let segs = m_values
        .iter()
        .map(|&m| optimal_change_points_with(&table, m))
        .collect::<Result<Vec<_>>>()?;
    proposals_from_segmentations(s, &segs)
}

/// Feature row holding time `t`: `floor(t / stride)` clamped to `[0, len - 1]`.
pub fn map_time_to_feature_index(t: f64, stride_seconds: f64, len: usize) -> usize {
    let idx = crate::frames::index_of_time(t, stride_seconds, len);
    if t > len as f64 * stride_seconds + stride_seconds {
        log::warn!(
            "time {t}s lies more than one stride past the last feature row ({len} rows at {stride_seconds}s)"
        );
    }
    idx
}

/// Proposal-level features: rows `map(start) ..= map(end)` of `fv`.
pub fn truncate_features(fv: &FeatureSequence, p: &Proposal) -> Result<FeatureSequence> {
    let (a, b) = proposal_rows(fv, p)?;
    FeatureSequence::new(
        fv.video_id.clone(),
        fv.stride_seconds,
        fv.rows.slice(ndarray::s![a..=b, ..]).to_owned(),
    )
}

fn proposal_rows(fv: &FeatureSequence, p: &Proposal) -> Result<(usize, usize)> {
    if !(p.start.is_finite() && p.end.is_finite() && 0.0 <= p.start && p.start < p.end) {
        return Err(Error::invalid(format!("invalid proposal [{}, {}]", p.start, p.end)));
    }
    let a = map_time_to_feature_index(p.start, fv.stride_seconds, fv.len());
    let b = map_time_to_feature_index(p.end, fv.stride_seconds, fv.len());
    if a > b {
        return Err(Error::invalid(format!(
            "proposal [{}, {}] maps to empty row range {a}..={b}",
            p.start, p.end
        )));
    }
    Ok((a, b))
}

/// Adds `alpha` times the temporal mean of each top-`top_k` proposal's
/// features to every video-level row inside that proposal.
///
/// Means are taken over the original `fv`, so the result does not depend on
/// the order in which overlapping proposals are applied. Rows outside all
/// selected proposals are returned unchanged.
pub fn refine_features(
    fv: &FeatureSequence,
    proposals: &[Proposal],
    top_k: usize,
    alpha: f64,
) -> Result<FeatureSequence> {
    let mut ranked: Vec<Proposal> = proposals.iter().filter(|p| p.video_id == fv.video_id).cloned().collect();
    sort_proposals(&mut ranked);
    let mut out = fv.rows.clone();
    for p in ranked.iter().take(top_k) {
        let (a, b) = proposal_rows(fv, p)?;
        let mean: Array1<f64> = fv
            .rows
            .slice(ndarray::s![a..=b, ..])
            .mean_axis(Axis(0))
            .expect("at least one row");
        let delta = mean * alpha;
        for mut row in out.slice_mut(ndarray::s![a..=b, ..]).rows_mut() {
            row += &delta;
        }
    }
    FeatureSequence::new(fv.video_id.clone(), fv.stride_seconds, out)
}

/// Renders `<video_id> <t_s> <t_e> <score> <source_m>` lines in the given order.
pub fn render_proposals(proposals: &[Proposal]) -> String {
    let mut out = String::new();
    for p in proposals {
        let _ = writeln!(
            out,
            "{} {} {} {:.9} {}",
            p.video_id, p.start, p.end, p.score, p.source_m
        );
    }
    out
}

pub fn parse_proposals(text: &str, source: &str) -> Result<Vec<Proposal>> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(err(idx + 1, "expected `<video_id> <t_s> <t_e> <score> <source_m>`".into()));
        }
        let num = |i: usize| -> Result<f64> {
            toks[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(idx + 1, format!("bad number `{}`", toks[i])))
        };
        let (start, end, score) = (num(1)?, num(2)?, num(3)?);
        if !(0.0 <= start && start < end) {
            return Err(err(idx + 1, format!("invalid interval [{start}, {end}]")));
        }
        let source_m = toks[4]
            .parse()
            .map_err(|_| err(idx + 1, format!("bad change-point count `{}`", toks[4])))?;
        out.push(Proposal {
            video_id: toks[0].to_string(),
            start,
            end,
            score,
            source_m,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn block_diag4() -> SimilarityMatrix {
        SimilarityMatrix::new(
            "v",
            1.0,
            array![
                [1.0, 1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 1.0],
                [0.0, 0.0, 1.0, 1.0],
            ],
        )
        .unwrap()
    }

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    fn prop(start: f64, end: f64, score: f64) -> Proposal {
        Proposal {
            video_id: "v".into(),
            start,
            end,
            score,
            source_m: 0,
        }
    }

    #[test]
    fn whole_video_for_zero_change_points() {
        let s = SimilarityMatrix::new("v", 0.5, Array2::eye(6)).unwrap();
        let p = generate_proposals(&s, &set(&[0])).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].start, p[0].end), (0.0, 3.0));
    }

    #[test]
    fn block_diagonal_split() {
        let p = generate_proposals(&block_diag4(), &set(&[1])).unwrap();
        let spans: Vec<(f64, f64)> = p.iter().map(|p| (p.start, p.end)).collect();
        assert_eq!(spans, vec![(0.0, 2.0), (2.0, 4.0)]);
        assert!(p.iter().all(|p| p.score == 1.0 && p.source_m == 1));
    }

    #[test]
    fn empty_m_values_rejected() {
        assert!(generate_proposals(&block_diag4(), &BTreeSet::new()).is_err());
        assert!(generate_proposals(&block_diag4(), &set(&[4])).is_err());
    }

    #[test]
    fn duplicates_are_merged() {
        // l = 6: m=1 and m=2 give at most 2 + 3 proposals
        let s = SimilarityMatrix::new("v", 1.0, Array2::eye(6)).unwrap();
        let p = generate_proposals(&s, &set(&[1, 2])).unwrap();
        assert!(p.len() <= 5);
        let mut spans: Vec<(u64, u64)> = p.iter().map(|p| (p.start as u64, p.end as u64)).collect();
        spans.sort();
        spans.dedup();
        assert_eq!(spans.len(), p.len());
    }

    #[test]
    fn score_examples() {
        let ones = SimilarityMatrix::new("v", 1.0, Array2::ones((5, 5))).unwrap();
        assert_eq!(score_proposal(&ones, 1, 3).unwrap(), 1.0);
        assert_eq!(score_proposal(&block_diag4(), 2, 2).unwrap(), 1.0);
        assert_eq!(score_proposal(&block_diag4(), 0, 3).unwrap(), 0.5);
        assert!(score_proposal(&block_diag4(), 3, 4).is_err());
    }

    #[test]
    fn time_to_index_examples() {
        assert_eq!(map_time_to_feature_index(2.5, 0.5, 100), 5);
        assert_eq!(map_time_to_feature_index(0.0, 0.3, 7), 0);
        assert_eq!(map_time_to_feature_index(9.99, 1.0, 10), 9);
        assert_eq!(map_time_to_feature_index(25.0, 1.0, 10), 9);
    }

    fn fv10() -> FeatureSequence {
        FeatureSequence::new("v", 1.0, Array2::from_shape_fn((10, 2), |(i, j)| (i * 10 + j) as f64)).unwrap()
    }

    #[test]
    fn truncate_examples() {
        let fv = fv10();
        let fp = truncate_features(&fv, &prop(3.0, 6.0, 1.0)).unwrap();
        assert_eq!(fp.len(), 4);
        assert_eq!(fp.rows.row(0), fv.rows.row(3));
        assert_eq!(fp.rows.row(3), fv.rows.row(6));
        let whole = truncate_features(&fv, &prop(0.0, 10.0, 1.0)).unwrap();
        assert_eq!(whole, fv);
        assert!(truncate_features(&fv, &prop(4.0, 4.0, 1.0)).is_err());
    }

    #[test]
    fn truncations_of_a_row_partition_rebuild_the_sequence() {
        let fv = fv10();
        // closed pieces covering every row timestamp exactly once
        let pieces = [(0.0, 2.0), (3.0, 3.5), (4.0, 8.0), (9.0, 9.5)];
        let parts: Vec<Array2<f64>> = pieces
            .iter()
            .map(|&(a, b)| truncate_features(&fv, &prop(a, b, 1.0)).unwrap().rows)
            .collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let rebuilt = ndarray::concatenate(Axis(0), &views).unwrap();
        assert_eq!(rebuilt, fv.rows);
    }

    #[test]
    fn refine_identity_cases() {
        let fv = fv10();
        let props = vec![prop(2.0, 5.0, 0.9)];
        assert_eq!(refine_features(&fv, &props, 0, 0.5).unwrap(), fv);
        assert_eq!(refine_features(&fv, &[], 10, 0.5).unwrap(), fv);
    }

    #[test]
    fn refine_constant_rows_double() {
        let fv = FeatureSequence::new("v", 1.0, Array2::from_elem((6, 3), 1.5)).unwrap();
        let out = refine_features(&fv, &[prop(0.0, 6.0, 1.0)], 1, 1.0).unwrap();
        assert!(out.rows.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn refine_leaves_outside_rows_untouched() {
        let fv = fv10();
        let props = vec![prop(2.0, 4.0, 0.9), prop(6.0, 7.0, 0.8), prop(0.0, 10.0, 0.1)];
        let out = refine_features(&fv, &props, 2, 0.5).unwrap();
        assert_eq!(out.rows.dim(), fv.rows.dim());
        for i in [0, 1, 5, 8, 9] {
            assert_eq!(out.rows.row(i), fv.rows.row(i));
        }
        // rows 2..=4 get half the mean of rows 2..=4
        let expect = &fv.rows.row(3) + &(fv.rows.row(3).to_owned() * 0.5);
        assert_eq!(out.rows.row(3), expect);
    }

    #[test]
    fn proposal_file_roundtrip() {
        let ps = vec![prop(0.0, 2.0, 0.987654321), prop(2.0, 4.5, -0.25)];
        let text = render_proposals(&ps);
        assert_eq!(text.lines().next().unwrap(), "v 0 2 0.987654321 0");
        assert_eq!(parse_proposals(&text, "mem").unwrap(), ps);
        assert!(parse_proposals("v 3 2 0.5 1\n", "mem").is_err());
    }
}
