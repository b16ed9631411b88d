//! Temporal-IoU metrics: proposal recall, detection mAP and boundary error.
//!
//! Matching is greedy everywhere: predictions are visited in descending score
//! order and each takes the still-unmatched ground-truth instance it overlaps
//! most, provided that overlap reaches the tIoU threshold. A ground-truth
//! instance is matched at most once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::frames::VideoAnnotation;
use crate::proposal::Proposal;

/// `0.3, 0.4, ..., 0.7`
pub const THUMOS_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
/// `0.5, 0.55, ..., 0.95`
pub const ACTIVITYNET_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// A classified, scored temporal detection.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub label: String,
    pub score: f64,
}

fn check_interval(a: (f64, f64)) -> Result<()> {
    if !(a.0.is_finite() && a.1.is_finite() && a.0 < a.1) {
        return Err(Error::invalid(format!("invalid interval [{}, {}]", a.0, a.1)));
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("tIoU threshold must lie in (0, 1], got {threshold}")));
    }
    Ok(())
}

/// Intersection over union of two `(start, end)` intervals.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    check_interval(a)?;
    check_interval(b)?;
    Ok(iou_unchecked(a, b))
}

fn iou_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.1.max(b.1) - a.0.min(b.0);
    (inter / union).min(1.0)
}

/// Greedy matching of score-sorted predictions against one video's ground truth.
/// Returns, per prediction, the matched ground-truth index.
fn greedy_match(preds: &[(f64, f64)], gts: &[(f64, f64)], threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|&p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = iou_unchecked(p, gt);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            best.map(|(g, _)| {
                taken[g] = true;
                g
            })
        })
        .collect()
}

fn by_score_desc(a: f64, b: f64) -> std::cmp::Ordering {
    b.total_cmp(&a)
}

/// Score-sorted proposals of each video, truncated to `top_n`.
fn ranked_proposals(proposals: &[Proposal], top_n: usize) -> BTreeMap<&str, Vec<&Proposal>> {
    let mut per_video: BTreeMap<&str, Vec<&Proposal>> = BTreeMap::new();
    for p in proposals {
        per_video.entry(p.video_id.as_str()).or_default().push(p);
    }
    for list in per_video.values_mut() {
        list.sort_by(|x, y| {
            by_score_desc(x.score, y.score)
                .then(x.start.total_cmp(&y.start))
                .then(x.end.total_cmp(&y.end))
        });
        list.truncate(top_n);
    }
    per_video
}

/// video -> spans
type SpansByVideo<'a> = BTreeMap<&'a str, Vec<(f64, f64)>>;

fn gt_spans(ann: &VideoAnnotation) -> Vec<(f64, f64)> {
    ann.instances.iter().map(|i| (i.start, i.end)).collect()
}

fn check_proposals(proposals: &[Proposal]) -> Result<()> {
    for p in proposals {
        check_interval((p.start, p.end))?;
        if !p.score.is_finite() {
            return Err(Error::invalid(format!("proposal score {} is not finite", p.score)));
        }
    }
    Ok(())
}

/// Fraction of ground-truth instances matched by one of the `top_n`
/// best-scored proposals of their video at tIoU `>= threshold`.
pub fn average_recall(
    proposals: &[Proposal],
    gt: &[VideoAnnotation],
    threshold: f64,
    top_n: usize,
) -> Result<f64> {
    check_threshold(threshold)?;
    if top_n == 0 {
        return Err(Error::invalid("top_n must be >= 1"));
    }
    check_proposals(proposals)?;
    let total: usize = gt.iter().map(|a| a.instances.len()).sum();
    if total == 0 {
        return Err(Error::NoGroundTruth);
    }
    let ranked = ranked_proposals(proposals, top_n);
    let mut matched = 0;
    for ann in gt {
        let Some(list) = ranked.get(ann.video_id.as_str()) else {
            continue;
        };
        let spans: Vec<(f64, f64)> = list.iter().map(|p| (p.start, p.end)).collect();
        matched += greedy_match(&spans, &gt_spans(ann), threshold)
            .iter()
            .filter(|m| m.is_some())
            .count();
    }
    Ok(matched as f64 / total as f64)
}

/// Per-class average precision at one tIoU threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ApReport {
    pub threshold: f64,
    pub per_class: BTreeMap<String, f64>,
    /// Mean over classes with at least one ground-truth instance; 0 when there are none.
    pub mean_ap: f64,
    /// Classes that have detections but no ground truth; excluded from the mean.
    pub classes_without_gt: Vec<String>,
}

/// Area under the all-point interpolated precision/recall curve of a ranked
/// list of hit flags.
fn all_point_ap(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // precision envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

/// Per-class AP (all-point interpolation) and their mean at one tIoU threshold.
pub fn detection_average_precision(
    dets: &[Detection],
    gt: &[VideoAnnotation],
    threshold: f64,
) -> Result<ApReport> {
    check_threshold(threshold)?;
    for d in dets {
        check_interval((d.start, d.end))?;
        if !d.score.is_finite() {
            return Err(Error::invalid(format!("detection score {} is not finite", d.score)));
        }
    }

    let mut gt_by_class: BTreeMap<&str, SpansByVideo> = BTreeMap::new();
    for ann in gt {
        for inst in &ann.instances {
            gt_by_class
                .entry(inst.label.as_str())
                .or_default()
                .entry(ann.video_id.as_str())
                .or_default()
                .push((inst.start, inst.end));
        }
    }
    let det_classes: BTreeSet<&str> = dets.iter().map(|d| d.label.as_str()).collect();
    let classes_without_gt: Vec<String> = det_classes
        .iter()
        .filter(|c| !gt_by_class.contains_key(*c))
        .map(|c| c.to_string())
        .collect();

    let mut per_class = BTreeMap::new();
    for (class, videos) in &gt_by_class {
        let mut class_dets: Vec<&Detection> = dets.iter().filter(|d| d.label == *class).collect();
        class_dets.sort_by(|x, y| {
            by_score_desc(x.score, y.score)
                .then(x.video_id.cmp(&y.video_id))
                .then(x.start.total_cmp(&y.start))
                .then(x.end.total_cmp(&y.end))
        });
        let mut taken: BTreeMap<&str, Vec<bool>> =
            videos.iter().map(|(v, spans)| (*v, vec![false; spans.len()])).collect();
        let hits: Vec<bool> = class_dets
            .iter()
            .map(|d| {
                let (Some(spans), Some(used)) = (videos.get(d.video_id.as_str()), taken.get_mut(d.video_id.as_str()))
                else {
                    return false;
                };
                let mut best: Option<(usize, f64)> = None;
                for (g, &span) in spans.iter().enumerate() {
                    if used[g] {
                        continue;
                    }
                    let iou = iou_unchecked((d.start, d.end), span);
                    if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
                match best {
                    Some((g, _)) => {
                        used[g] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        let num_gt: usize = videos.values().map(Vec::len).sum();
        per_class.insert(class.to_string(), all_point_ap(&hits, num_gt));
    }
    let mean_ap = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(ApReport {
        threshold,
        per_class,
        mean_ap,
        classes_without_gt,
    })
}

/// A metric evaluated over a grid of tIoU thresholds and averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Row label, e.g. `mAP` or `AR@10`.
    pub metric: String,
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub average: f64,
    pub num_gt: usize,
    pub num_predictions: usize,
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold list must not be empty"));
    }
    thresholds.iter().try_for_each(|&t| check_threshold(t))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Detection mAP at every threshold and its arithmetic mean.
pub fn evaluate_detections(
    dets: &[Detection],
    gt: &[VideoAnnotation],
    thresholds: &[f64],
) -> Result<EvalReport> {
    check_thresholds(thresholds)?;
    let values = thresholds
        .iter()
        .map(|&t| detection_average_precision(dets, gt, t).map(|r| r.mean_ap))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        metric: "mAP".into(),
        average: mean(&values),
        thresholds: thresholds.to_vec(),
        values,
        num_gt: gt.iter().map(|a| a.instances.len()).sum(),
        num_predictions: dets.len(),
    })
}

/// Proposal recall at `top_n` for every threshold and its arithmetic mean.
pub fn evaluate_proposals(
    proposals: &[Proposal],
    gt: &[VideoAnnotation],
    thresholds: &[f64],
    top_n: usize,
) -> Result<EvalReport> {
    check_thresholds(thresholds)?;
    let values = thresholds
        .iter()
        .map(|&t| average_recall(proposals, gt, t, top_n))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        metric: format!("AR@{top_n}"),
        average: mean(&values),
        thresholds: thresholds.to_vec(),
        values,
        num_gt: gt.iter().map(|a| a.instances.len()).sum(),
        num_predictions: proposals.len(),
    })
}

/// Treats proposals as detections of a single class, for class-agnostic mAP.
pub fn proposals_as_detections(proposals: &[Proposal], label: &str) -> Vec<Detection> {
    proposals
        .iter()
        .map(|p| Detection {
            video_id: p.video_id.clone(),
            start: p.start,
            end: p.end,
            label: label.to_string(),
            score: p.score,
        })
        .collect()
}

/// Copies of `gt` with every label replaced by `label`.
pub fn relabel_ground_truth(gt: &[VideoAnnotation], label: &str) -> Vec<VideoAnnotation> {
    gt.iter()
        .map(|a| {
            let mut a = a.clone();
            for inst in &mut a.instances {
                inst.label = label.to_string();
            }
            a
        })
        .collect()
}

/// Mean absolute start and end offsets of matched proposal/ground-truth pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryError {
    pub mean_start: f64,
    pub mean_end: f64,
    pub matches: usize,
}

/// Boundary offsets over proposals matched at `threshold`; `None` when nothing matches.
pub fn boundary_error(
    proposals: &[Proposal],
    gt: &[VideoAnnotation],
    threshold: f64,
) -> Result<Option<BoundaryError>> {
    check_threshold(threshold)?;
    check_proposals(proposals)?;
    let ranked = ranked_proposals(proposals, usize::MAX);
    let (mut ds, mut de, mut n) = (0.0, 0.0, 0usize);
    for ann in gt {
        let Some(list) = ranked.get(ann.video_id.as_str()) else {
            continue;
        };
        let spans: Vec<(f64, f64)> = list.iter().map(|p| (p.start, p.end)).collect();
        let gts = gt_spans(ann);
        for (p, m) in spans.iter().zip(greedy_match(&spans, &gts, threshold)) {
            if let Some(g) = m {
                ds += (p.0 - gts[g].0).abs();
                de += (p.1 - gts[g].1).abs();
                n += 1;
            }
        }
    }
    Ok((n > 0).then(|| BoundaryError {
        mean_start: ds / n as f64,
        mean_end: de / n as f64,
        matches: n,
    }))
}

/// Renders reports as a table with one column per threshold and `Avg.` last,
/// values in percent. All reports must share the same thresholds.
pub fn render_table(rows: &[(String, EvalReport)]) -> Result<String> {
    let Some((_, first)) = rows.first() else {
        return Ok(String::new());
    };
    if rows.iter().any(|(_, r)| r.thresholds != first.thresholds) {
        return Err(Error::invalid("reports use different threshold grids"));
    }
    let name_width = rows
        .iter()
        .map(|(n, r)| n.len() + r.metric.len() + 3)
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<name_width$}", "Method");
    for t in &first.thresholds {
        let _ = write!(out, " {:>7}", format!("{t}"));
    }
    let _ = writeln!(out, " {:>7}", "Avg.");
    for (name, r) in rows {
        let _ = write!(out, "{:<name_width$}", format!("{name} ({})", r.metric));
        for v in &r.values {
            let _ = write!(out, " {:>7.2}", v * 100.0);
        }
        let _ = writeln!(out, " {:>7.2}", r.average * 100.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::ActionInstance;

    fn ann(id: &str, spans: &[(f64, f64, &str)]) -> VideoAnnotation {
        VideoAnnotation::new(
            id,
            100.0,
            spans.iter().map(|&(s, e, l)| ActionInstance::new(s, e, l)).collect(),
        )
        .unwrap()
    }

    fn prop(id: &str, s: f64, e: f64, score: f64) -> Proposal {
        Proposal {
            video_id: id.into(),
            start: s,
            end: e,
            score,
            source_m: 1,
        }
    }

    fn det(id: &str, s: f64, e: f64, label: &str, score: f64) -> Detection {
        Detection {
            video_id: id.into(),
            start: s,
            end: e,
            label: label.into(),
            score,
        }
    }

    #[test]
    fn iou_examples() {
        assert!((temporal_iou((2.0, 6.0), (4.0, 8.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(temporal_iou((0.0, 1.0), (0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(temporal_iou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert_eq!(temporal_iou((0.0, 1.0), (1.0, 3.0)).unwrap(), 0.0);
        assert!(temporal_iou((1.0, 1.0), (0.0, 2.0)).is_err());
    }

    #[test]
    fn recall_examples() {
        let gt = vec![ann("a", &[(4.0, 8.0, "x"), (10.0, 12.0, "x")])];
        let exact = vec![prop("a", 4.0, 8.0, 0.9), prop("a", 10.0, 12.0, 0.8)];
        for t in [0.1, 0.5, 1.0] {
            assert_eq!(average_recall(&exact, &gt, t, 10).unwrap(), 1.0);
        }
        assert_eq!(average_recall(&[], &gt, 0.5, 10).unwrap(), 0.0);
        let gt = vec![ann("a", &[(4.0, 8.0, "x")])];
        assert_eq!(average_recall(&[prop("a", 2.0, 6.0, 1.0)], &gt, 0.5, 10).unwrap(), 0.0);
    }

    #[test]
    fn recall_errors() {
        let p = vec![prop("a", 0.0, 1.0, 1.0)];
        assert!(matches!(average_recall(&p, &[ann("a", &[])], 0.5, 1), Err(Error::NoGroundTruth)));
        let gt = vec![ann("a", &[(0.0, 1.0, "x")])];
        assert!(average_recall(&p, &gt, 0.0, 1).is_err());
        assert!(average_recall(&p, &gt, 0.5, 0).is_err());
    }

    #[test]
    fn one_proposal_matches_one_gt() {
        let gt = vec![ann("a", &[(0.0, 4.0, "x"), (4.0, 8.0, "x")])];
        let p = vec![prop("a", 0.0, 8.0, 1.0)];
        assert_eq!(average_recall(&p, &gt, 0.5, 10).unwrap(), 0.5);
    }

    #[test]
    fn ap_examples() {
        let gt = vec![ann("a", &[(0.0, 10.0, "x")])];
        let r = detection_average_precision(&[det("a", 0.0, 9.0, "x", 0.9)], &gt, 0.5).unwrap();
        assert_eq!(r.mean_ap, 1.0);
        let r = detection_average_precision(&[det("a", 8.0, 20.0, "x", 0.9)], &gt, 0.5).unwrap();
        assert_eq!(r.mean_ap, 0.0);
        let two = [det("a", 50.0, 60.0, "x", 0.9), det("a", 0.0, 10.0, "x", 0.5)];
        let r = detection_average_precision(&two, &gt, 0.5).unwrap();
        assert_eq!(r.per_class["x"], 0.5);
    }

    #[test]
    fn ap_reports_classes_without_gt() {
        let gt = vec![ann("a", &[(0.0, 10.0, "x")])];
        let dets = [det("a", 0.0, 10.0, "x", 0.9), det("a", 0.0, 10.0, "y", 0.8)];
        let r = detection_average_precision(&dets, &gt, 0.5).unwrap();
        assert_eq!(r.classes_without_gt, vec!["y".to_string()]);
        assert_eq!(r.mean_ap, 1.0);
        // wrong video never matches
        let r = detection_average_precision(&[det("b", 0.0, 10.0, "x", 0.9)], &gt, 0.5).unwrap();
        assert_eq!(r.mean_ap, 0.0);
    }

    #[test]
    fn all_point_ap_hand_curves() {
        assert_eq!(all_point_ap(&[false, true], 1), 0.5);
        // TP FP TP with 2 gt: recall .5 @ p1, recall 1 @ p 2/3
        assert!((all_point_ap(&[true, false, true], 2) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        // one gt missed entirely
        assert_eq!(all_point_ap(&[true], 2), 0.5);
    }

    #[test]
    fn threshold_reports() {
        let gt = vec![ann("a", &[(0.0, 10.0, "x"), (20.0, 30.0, "y")])];
        let dets = [det("a", 0.0, 10.0, "x", 0.9), det("a", 20.0, 30.0, "y", 0.9)];
        let r = evaluate_detections(&dets, &gt, &THUMOS_THRESHOLDS).unwrap();
        assert!(r.values.iter().all(|&v| v == 1.0));
        assert_eq!(r.average, 1.0);
        let r = evaluate_detections(&[det("a", 0.0, 8.0, "x", 0.9)], &gt, &[0.5]).unwrap();
        assert_eq!(r.average, r.values[0]);
        assert!(evaluate_detections(&dets, &gt, &[]).is_err());
    }

    #[test]
    fn boundary_error_examples() {
        let gt = vec![ann("a", &[(4.0, 8.0, "x")])];
        let exact = boundary_error(&[prop("a", 4.0, 8.0, 1.0)], &gt, 0.5).unwrap().unwrap();
        assert_eq!((exact.mean_start, exact.mean_end), (0.0, 0.0));
        let off = boundary_error(&[prop("a", 3.0, 8.0, 1.0)], &gt, 0.5).unwrap().unwrap();
        assert_eq!((off.mean_start, off.mean_end, off.matches), (1.0, 0.0, 1));
        assert_eq!(boundary_error(&[prop("a", 20.0, 30.0, 1.0)], &gt, 0.5).unwrap(), None);
    }

    #[test]
    fn table_layout() {
        let gt = vec![ann("a", &[(0.0, 10.0, "x")])];
        let r = evaluate_proposals(&[prop("a", 0.0, 10.0, 1.0)], &gt, &THUMOS_THRESHOLDS, 10).unwrap();
        let table = render_table(&[("bapg".into(), r)]).unwrap();
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        assert!(header.ends_with("Avg."));
        assert!(header.contains("0.3") && header.contains("0.7"));
        assert!(lines.next().unwrap().starts_with("bapg (AR@10)"));
    }
}
