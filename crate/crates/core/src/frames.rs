//! Per-video domain types: sampled frame features, frame embeddings and
//! ground-truth action annotations.
//!
//! Frames are sampled at the start of each interval, so frame `i` carries the
//! timestamp `i * interval_seconds` and a video of duration `D` holds
//! `ceil(D / T)` frames.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Relative slack used when a ratio of two durations should be an integer.
const GRID_EPS: f64 = 1e-9;

/// Unit-norm tolerance for embedding rows.
pub const UNIT_NORM_TOL: f64 = 1e-6;

fn check_interval(interval_seconds: f64) -> Result<()> {
    if !(interval_seconds.is_finite() && interval_seconds > 0.0) {
        return Err(Error::invalid(format!(
            "interval must be finite and > 0, got {interval_seconds}"
        )));
    }
    Ok(())
}

fn check_finite_rows(values: &Array2<f64>) -> Result<()> {
    for (row, r) in values.rows().into_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row });
        }
    }
    Ok(())
}

/// Number of frames `ceil(duration / interval)` sampled from a video.
///
/// Ratios within `1e-9` of an integer are snapped to it so that e.g.
/// `frame_count(1.1, 0.1)` is 11 and not 12.
pub fn frame_count(duration_seconds: f64, interval_seconds: f64) -> Result<usize> {
    check_interval(interval_seconds)?;
    if !(duration_seconds.is_finite() && duration_seconds > 0.0) {
        return Err(Error::invalid(format!(
            "duration must be finite and > 0, got {duration_seconds}"
        )));
    }
    let ratio = duration_seconds / interval_seconds;
    let nearest = ratio.round();
    let n = if (ratio - nearest).abs() <= GRID_EPS * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    Ok(n.max(1.0) as usize)
}

/// Timestamps `0, T, 2T, ...` of every multiple of `T` strictly below `duration`.
pub fn uniform_sample_times(duration_seconds: f64, interval_seconds: f64) -> Result<Vec<f64>> {
    let n = frame_count(duration_seconds, interval_seconds)?;
    Ok((0..n).map(|i| i as f64 * interval_seconds).collect())
}

/// Frame index holding time `t`: `floor(t / T)` clamped to `[0, len - 1]`.
pub fn index_of_time(t: f64, interval_seconds: f64, len: usize) -> usize {
    debug_assert!(len > 0);
    let raw = (t / interval_seconds + GRID_EPS).floor();
    if raw <= 0.0 || raw.is_nan() {
        0
    } else {
        (raw as usize).min(len.saturating_sub(1))
    }
}

/// Raw per-frame feature vectors for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    pub interval_seconds: f64,
    /// `l x d`; row `i` is the frame sampled at `i * interval_seconds`.
    pub features: Array2<f64>,
}

impl FrameFeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        interval_seconds: f64,
        features: Array2<f64>,
    ) -> Result<Self> {
        check_interval(interval_seconds)?;
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::invalid(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                features.nrows(),
                features.ncols()
            )));
        }
        check_finite_rows(&features)?;
        Ok(Self {
            video_id: video_id.into(),
            interval_seconds,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        i as f64 * self.interval_seconds
    }

    pub fn frame(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }
}

/// Encoder outputs for every frame of a video; each row has unit L2 norm.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub video_id: String,
    pub interval_seconds: f64,
    pub embeddings: Array2<f64>,
}

impl EmbeddingSequence {
    pub fn new(
        video_id: impl Into<String>,
        interval_seconds: f64,
        embeddings: Array2<f64>,
    ) -> Result<Self> {
        check_interval(interval_seconds)?;
        if embeddings.nrows() == 0 || embeddings.ncols() == 0 {
            return Err(Error::invalid("embedding matrix must be non-empty"));
        }
        check_finite_rows(&embeddings)?;
        for (row, r) in embeddings.rows().into_iter().enumerate() {
            let norm = r.dot(&r).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "embedding row {row} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            interval_seconds,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }
}

/// One ground-truth action `[start, end]` with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionInstance {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl ActionInstance {
    pub fn new(start: f64, end: f64, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }
}

/// Ground-truth actions of one video, sorted by start and non-overlapping.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub duration_seconds: f64,
    pub instances: Vec<ActionInstance>,
}

impl VideoAnnotation {
    /// Validates and sorts `instances`. Instances may touch (`end == next start`)
    /// but may not overlap.
    pub fn new(
        video_id: impl Into<String>,
        duration_seconds: f64,
        mut instances: Vec<ActionInstance>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if !(duration_seconds.is_finite() && duration_seconds > 0.0) {
            return Err(Error::invalid(format!(
                "video {video_id}: duration must be finite and > 0, got {duration_seconds}"
            )));
        }
        for inst in &instances {
            let ok = inst.start.is_finite()
                && inst.end.is_finite()
                && 0.0 <= inst.start
                && inst.start < inst.end
                && inst.end <= duration_seconds;
            if !ok {
                return Err(Error::invalid(format!(
                    "video {video_id}: instance [{}, {}] outside 0 <= start < end <= {duration_seconds}",
                    inst.start, inst.end
                )));
            }
            if inst.label.is_empty() || inst.label.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "video {video_id}: label {:?} must be a non-empty token without whitespace",
                    inst.label
                )));
            }
        }
        instances.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        for pair in instances.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::invalid(format!(
                    "video {video_id}: instances [{}, {}] and [{}, {}] overlap",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                )));
            }
        }
        Ok(Self {
            video_id,
            duration_seconds,
            instances,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sample_times_examples() {
        assert_eq!(uniform_sample_times(5.0, 1.0).unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let t = uniform_sample_times(0.95, 0.1).unwrap();
        assert_eq!(t.len(), 10);
        assert!((t[9] - 0.9).abs() < 1e-12);
        assert_eq!(uniform_sample_times(3.5, 1.0).unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn sample_times_snap_to_grid() {
        assert_eq!(frame_count(1.1, 0.1).unwrap(), 11);
        assert_eq!(frame_count(0.7, 0.1).unwrap(), 7);
        assert_eq!(frame_count(0.05, 0.1).unwrap(), 1);
    }

    #[test]
    fn sample_times_reject_non_positive() {
        assert!(uniform_sample_times(0.0, 1.0).is_err());
        assert!(uniform_sample_times(1.0, 0.0).is_err());
        assert!(uniform_sample_times(-1.0, 1.0).is_err());
        assert!(uniform_sample_times(1.0, f64::NAN).is_err());
    }

    #[test]
    fn index_of_time_clamps() {
        assert_eq!(index_of_time(0.0, 1.0, 4), 0);
        assert_eq!(index_of_time(2.999, 1.0, 4), 2);
        assert_eq!(index_of_time(0.3, 0.1, 10), 3);
        assert_eq!(index_of_time(42.0, 1.0, 4), 3);
        assert_eq!(index_of_time(-1.0, 1.0, 4), 0);
    }

    #[test]
    fn features_reject_non_finite() {
        let err = FrameFeatureSequence::new("v", 1.0, array![[1.0, 2.0], [f64::NAN, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1 }));
    }

    #[test]
    fn embeddings_require_unit_rows() {
        assert!(EmbeddingSequence::new("v", 1.0, array![[0.6, 0.8], [1.0, 0.0]]).is_ok());
        assert!(EmbeddingSequence::new("v", 1.0, array![[0.6, 0.9]]).is_err());
    }

    #[test]
    fn annotation_sorts_and_rejects_overlap() {
        let ann = VideoAnnotation::new(
            "v",
            10.0,
            vec![ActionInstance::new(5.0, 6.0, "b"), ActionInstance::new(1.0, 5.0, "a")],
        )
        .unwrap();
        assert_eq!(ann.instances[0].label, "a");

        let err = VideoAnnotation::new(
            "v",
            10.0,
            vec![ActionInstance::new(1.0, 5.0, "a"), ActionInstance::new(4.0, 6.0, "b")],
        );
        assert!(err.is_err());
        assert!(VideoAnnotation::new("v", 10.0, vec![ActionInstance::new(3.0, 11.0, "a")]).is_err());
        assert!(VideoAnnotation::new("v", 10.0, vec![ActionInstance::new(3.0, 3.0, "a")]).is_err());
        assert!(VideoAnnotation::new("v", 10.0, vec![ActionInstance::new(3.0, 4.0, "two words")]).is_err());
    }
}
