//! Positive / hard-negative / easy-negative frame pools and triplet drawing.
//!
//! Frames inside an annotated action `[t_s, t_e]` (closed) are positives of
//! that action. Background frames no further than the hard window from an
//! action boundary are its hard negatives; a frame within reach of two
//! actions goes to the nearer boundary, ties to the earlier action. All other
//! frames are easy negatives.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::format::parse_header;
use crate::frames::{frame_count, VideoAnnotation};

/// Default half-width, in seconds, of the hard-negative zone around each action.
pub const DEFAULT_HARD_WINDOW_SECONDS: f64 = 3.0;

/// Slack, in units of the sampling interval, for timestamp comparisons.
const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolWarning {
    /// The instance is shorter than one sampling interval and holds no frame.
    EmptyPositives { instance: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePools {
    pub video_id: String,
    /// Frame indices of each instance, one list per annotated action.
    pub positives: Vec<Vec<usize>>,
    /// Hard negatives of each instance, aligned with `positives`.
    pub hard_negatives: Vec<Vec<usize>>,
    pub easy_negatives: Vec<usize>,
    pub warnings: Vec<PoolWarning>,
}

impl SamplePools {
    pub fn num_instances(&self) -> usize {
        self.positives.len()
    }

    /// Whether `instance` has enough frames to draw a triplet from.
    pub fn is_trainable(&self, instance: usize) -> bool {
        self.positives.get(instance).is_some_and(|p| p.len() >= 2)
            && self.hard_negatives.get(instance).is_some_and(|h| !h.is_empty())
    }

    pub fn trainable_instances(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_instances()).filter(|&i| self.is_trainable(i))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub video_id: String,
    pub anchor: usize,
    pub positive: usize,
    pub hard_negative: usize,
}

/// Splits the `l` frames of an annotated video into sample pools.
pub fn label_clips(
    ann: &VideoAnnotation,
    l: usize,
    interval_seconds: f64,
    hard_window_seconds: f64,
) -> Result<SamplePools> {
    let expected = frame_count(ann.duration_seconds, interval_seconds)?;
    if l != expected {
        return Err(Error::invalid(format!(
            "video {}: {l} frames given, duration {} at interval {interval_seconds} implies {expected}",
            ann.video_id, ann.duration_seconds
        )));
    }
    if hard_window_seconds.is_nan() || hard_window_seconds < 0.0 {
        return Err(Error::invalid(format!(
            "hard window must be >= 0, got {hard_window_seconds}"
        )));
    }

    let eps = TIME_EPS * interval_seconds;
    let n = ann.instances.len();
    let mut positives = vec![Vec::new(); n];
    let mut hard_negatives = vec![Vec::new(); n];
    let mut easy_negatives = Vec::new();

    for frame in 0..l {
        let t = frame as f64 * interval_seconds;
        if let Some(k) = ann
            .instances
            .iter()
            .position(|inst| t >= inst.start - eps && t <= inst.end + eps)
        {
            positives[k].push(frame);
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, inst) in ann.instances.iter().enumerate() {
            let dist = if t < inst.start { inst.start - t } else { t - inst.end };
            if dist <= hard_window_seconds + eps && best.is_none_or(|(_, d)| dist < d - eps) {
                best = Some((k, dist));
            }
        }
        match best {
            Some((k, _)) => hard_negatives[k].push(frame),
            None => easy_negatives.push(frame),
        }
    }

    let warnings = positives
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_empty())
        .map(|(instance, _)| PoolWarning::EmptyPositives { instance })
        .collect();

    Ok(SamplePools {
        video_id: ann.video_id.clone(),
        positives,
        hard_negatives,
        easy_negatives,
        warnings,
    })
}

/// Draws `(anchor, positive)` uniformly without replacement from the
/// instance's positives and a hard negative uniformly from its hard pool.
pub fn draw_triplet<R: Rng + ?Sized>(
    pools: &SamplePools,
    instance: usize,
    rng: &mut R,
) -> Result<Triplet> {
    let insufficient = |reason: String| Error::InsufficientPool {
        video_id: pools.video_id.clone(),
        instance,
        reason,
    };
    let (pos, hard) = match (pools.positives.get(instance), pools.hard_negatives.get(instance)) {
        (Some(p), Some(h)) => (p, h),
        _ => {
            return Err(insufficient(format!(
                "no such instance ({} annotated)",
                pools.num_instances()
            )))
        }
    };
    if pos.len() < 2 {
        return Err(insufficient(format!("{} positive frames, need 2", pos.len())));
    }
    if hard.is_empty() {
        return Err(insufficient("no hard-negative frames".into()));
    }
    let a = rng.random_range(0..pos.len());
    let mut p = rng.random_range(0..pos.len() - 1);
    if p >= a {
        p += 1;
    }
    let h = rng.random_range(0..hard.len());
    Ok(Triplet {
        video_id: pools.video_id.clone(),
        anchor: pos[a],
        positive: pos[p],
        hard_negative: hard[h],
    })
}

/// Renders pools as `<video_id> <instance_idx> <kind> <frames...>` lines.
/// Easy negatives belong to no instance and use `-` as the index.
pub fn render_pools(pools: &[SamplePools]) -> String {
    let mut out = String::new();
    let join = |v: &[usize]| v.iter().map(|i| format!(" {i}")).collect::<String>();
    for p in pools {
        for (k, pos) in p.positives.iter().enumerate() {
            let _ = writeln!(out, "{} {k} pos{}", p.video_id, join(pos));
            let _ = writeln!(out, "{} {k} hard{}", p.video_id, join(&p.hard_negatives[k]));
        }
        let _ = writeln!(out, "{} - easy{}", p.video_id, join(&p.easy_negatives));
    }
    out
}

/// Parses the output of [`render_pools`]. Pool warnings are recomputed from
/// empty positive lists.
pub fn parse_pools(text: &str, source: &str) -> Result<Vec<SamplePools>> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut out: Vec<SamplePools> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || parse_header(line).is_some() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(err(lineno, "expected `<video_id> <instance> <kind> <frames...>`".into()));
        }
        let frames = toks[3..]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| err(lineno, format!("bad frame index `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if out.last().is_none_or(|p| p.video_id != toks[0]) {
            if out.iter().any(|p| p.video_id == toks[0]) {
                return Err(err(lineno, format!("video {} is not contiguous", toks[0])));
            }
            out.push(SamplePools {
                video_id: toks[0].to_string(),
                positives: Vec::new(),
                hard_negatives: Vec::new(),
                easy_negatives: Vec::new(),
                warnings: Vec::new(),
            });
        }
        let pools = out.last_mut().expect("pushed above");
        match toks[2] {
            "easy" => pools.easy_negatives = frames,
            kind @ ("pos" | "hard") => {
                let k: usize = toks[1]
                    .parse()
                    .map_err(|_| err(lineno, format!("bad instance index `{}`", toks[1])))?;
                let list = if kind == "pos" {
                    &mut pools.positives
                } else {
                    &mut pools.hard_negatives
                };
                if k != list.len() {
                    return Err(err(lineno, format!("instance {k} out of order")));
                }
                list.push(frames);
            }
            other => return Err(err(lineno, format!("unknown pool kind `{other}`"))),
        }
    }
    for p in &mut out {
        if p.positives.len() != p.hard_negatives.len() {
            return Err(err(0, format!("video {}: pos/hard pool counts differ", p.video_id)));
        }
        p.warnings = p
            .positives
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_empty())
            .map(|(instance, _)| PoolWarning::EmptyPositives { instance })
            .collect();
    }
    Ok(out)
}
