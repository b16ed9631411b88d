//! Synthetic videos with planted actions flanked by hard-negative phases.
//!
//! Every frame is `concat(background, semantic) + noise`. The background part
//! is one vector per video and dominates the norm, so raw cosine similarity
//! barely tells frame species apart. The weak semantic part is zero on
//! background frames, a per-class prototype on action frames and a per-instance
//! hard vector, orthogonal to every class prototype, on the warm-up and
//! cool-down frames around each action.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::format::{render_annotations, render_matrix, write_atomic, MatrixFile};
use crate::frames::{ActionInstance, FrameFeatureSequence, VideoAnnotation};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_videos: usize,
    /// Inclusive, seconds.
    pub duration_range: (f64, f64),
    pub interval_seconds: f64,
    /// Inclusive.
    pub actions_range: (usize, usize),
    pub action_len_range: (f64, f64),
    /// Length of each of the two hard phases around an action.
    pub hard_len_range: (f64, f64),
    pub background_dim: usize,
    pub semantic_dim: usize,
    pub background_scale: f64,
    pub semantic_scale: f64,
    pub noise_scale: f64,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 50,
            duration_range: (60.0, 120.0),
            interval_seconds: 1.0,
            actions_range: (1, 3),
            action_len_range: (5.0, 15.0),
            hard_len_range: (2.0, 4.0),
            background_dim: 32,
            semantic_dim: 8,
            background_scale: 1.0,
            semantic_scale: 0.3,
            noise_scale: 0.05,
            num_classes: 5,
            seed: 0,
        }
    }
}

/// Frame-count range covered by a seconds range on the grid `interval`.
fn frames_in(range: (f64, f64), interval: f64) -> (usize, usize) {
    let snap = |x: f64| {
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            r
        } else {
            x
        }
    };
    let lo = snap(range.0 / interval).ceil().max(1.0) as usize;
    let hi = snap(range.1 / interval).floor() as usize;
    (lo, hi)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.interval_seconds;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::invalid(format!("interval must be finite and > 0, got {t}")));
        }
        for (name, (lo, hi)) in [
            ("duration_range", self.duration_range),
            ("action_len_range", self.action_len_range),
            ("hard_len_range", self.hard_len_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(Error::invalid(format!("{name} must satisfy 0 < lo <= hi, got {lo}..{hi}")));
            }
            let (flo, fhi) = frames_in((lo, hi), t);
            if flo > fhi {
                return Err(Error::invalid(format!(
                    "{name} {lo}..{hi} contains no whole number of {t}s frames"
                )));
            }
        }
        if self.actions_range.0 > self.actions_range.1 {
            return Err(Error::invalid(format!(
                "actions_range must satisfy lo <= hi, got {}..{}",
                self.actions_range.0, self.actions_range.1
            )));
        }
        if self.background_dim == 0 || self.semantic_dim == 0 {
            return Err(Error::invalid("background_dim and semantic_dim must be >= 1"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be >= 1"));
        }
        let (b, s, n) = (self.background_scale, self.semantic_scale, self.noise_scale);
        if !(b.is_finite() && b > s && s > n && n > 0.0) {
            return Err(Error::invalid(format!(
                "scales must satisfy background > semantic > noise > 0, got {b}, {s}, {n}"
            )));
        }
        let min_frames = frames_in(self.duration_range, t).0;
        let need = self.actions_range.1 * self.min_block_frames();
        if need > min_frames {
            return Err(Error::Placement(format!(
                "{} actions need at least {need} frames but a video may have only {min_frames}",
                self.actions_range.1
            )));
        }
        Ok(())
    }

    fn min_block_frames(&self) -> usize {
        let t = self.interval_seconds;
        frames_in(self.action_len_range, t).0 + 2 * frames_in(self.hard_len_range, t).0
    }
}

/// Directions hard vectors are kept orthogonal to: every class prototype when
/// the semantic space leaves room for it, otherwise none and each hard vector
/// is only made orthogonal to its own action's prototype.
fn hard_basis(cfg: &SynthConfig, prototypes: &[Array1<f64>]) -> Vec<Array1<f64>> {
    if prototypes.len() < cfg.semantic_dim {
        orthonormal_basis(prototypes)
    } else {
        Vec::new()
    }
}

/// Seed of video `index` under dataset seed `seed`.
pub fn video_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn video_id(index: usize) -> String {
    format!("video_{index:04}")
}

fn gaussian<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Array1<f64> {
    let dist = Normal::new(0.0, scale).expect("scale validated as finite and > 0");
    Array1::from_iter((0..n).map(|_| dist.sample(rng)))
}

fn class_prototypes(cfg: &SynthConfig) -> Vec<Array1<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(cfg.seed, u64::MAX));
    (0..cfg.num_classes)
        .map(|_| gaussian(cfg.semantic_dim, cfg.semantic_scale, &mut rng))
        .collect()
}

/// Orthonormal basis of the span of `vectors` (Gram-Schmidt).
fn orthonormal_basis(vectors: &[Array1<f64>]) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for v in vectors {
        let mut r = v.clone();
        for b in &basis {
            r = &r - &(b * r.dot(b));
        }
        let n = r.dot(&r).sqrt();
        if n > 1e-12 * v.dot(v).sqrt().max(f64::MIN_POSITIVE) {
            basis.push(r / n);
        }
    }
    basis
}

/// `v` with its components inside the span of `basis` removed, rescaled to
/// its original norm. Left unchanged when nothing remains.
fn orthogonal_to(v: Array1<f64>, basis: &[Array1<f64>]) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    let mut r = v.clone();
    for b in basis {
        r = &r - &(b * r.dot(b));
    }
    let rn = r.dot(&r).sqrt();
    if rn <= 1e-9 * norm {
        return v;
    }
    r * (norm / rn)
}

/// One generated video.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub seed: u64,
    pub features: FrameFeatureSequence,
    pub annotation: VideoAnnotation,
}

fn draw_in<R: Rng + ?Sized>(lo: usize, hi: usize, rng: &mut R) -> usize {
    rng.random_range(lo..=hi)
}

/// Generates video `video_index`; depends only on `(cfg, video_index)`.
pub fn generate_video(cfg: &SynthConfig, video_index: usize) -> Result<SynthVideo> {
    cfg.validate()?;
    let prototypes = class_prototypes(cfg);
    generate_with(cfg, &prototypes, &hard_basis(cfg, &prototypes), video_index)
}

fn generate_with(
    cfg: &SynthConfig,
    prototypes: &[Array1<f64>],
    basis: &[Array1<f64>],
    video_index: usize,
) -> Result<SynthVideo> {
    let t = cfg.interval_seconds;
    let seed = video_seed(cfg.seed, video_index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (lmin, lmax) = frames_in(cfg.duration_range, t);
    let len = draw_in(lmin, lmax, &mut rng);
    let n_actions = draw_in(cfg.actions_range.0, cfg.actions_range.1, &mut rng);
    let (amin, amax) = frames_in(cfg.action_len_range, t);
    let (hmin, hmax) = frames_in(cfg.hard_len_range, t);
    let min_block = amin + 2 * hmin;
    if n_actions * min_block > len {
        return Err(Error::Placement(format!(
            "{n_actions} actions need {} frames, video has {len}",
            n_actions * min_block
        )));
    }

    // (pre, action, post) lengths, each block capped so later ones still fit
    let mut blocks = Vec::with_capacity(n_actions);
    let mut budget = len;
    for k in 0..n_actions {
        let reserve = (n_actions - k - 1) * min_block;
        let mut room = budget - reserve - min_block;
        let pre = draw_in(hmin, hmin + room.min(hmax - hmin), &mut rng);
        room -= pre - hmin;
        let act = draw_in(amin, amin + room.min(amax - amin), &mut rng);
        room -= act - amin;
        let post = draw_in(hmin, hmin + room.min(hmax - hmin), &mut rng);
        budget -= pre + act + post;
        blocks.push((pre, act, post));
    }
    let free = budget;
    let mut cuts: Vec<usize> = (0..n_actions).map(|_| draw_in(0, free, &mut rng)).collect();
    cuts.sort_unstable();

    let d = cfg.background_dim + cfg.semantic_dim;
    let background = gaussian(cfg.background_dim, cfg.background_scale, &mut rng);
    let mut semantic = Array2::<f64>::zeros((len, cfg.semantic_dim));
    let mut instances = Vec::with_capacity(n_actions);
    let mut cursor = 0;
    let mut prev_cut = 0;
    for (&(pre, act, post), &cut) in blocks.iter().zip(&cuts) {
        cursor += cut - prev_cut;
        prev_cut = cut;
        let class = rng.random_range(0..cfg.num_classes);
        let proto = &prototypes[class];
        let own;
        let against = if basis.is_empty() {
            own = orthonormal_basis(std::slice::from_ref(proto));
            &own[..]
        } else {
            basis
        };
        let hard = orthogonal_to(gaussian(cfg.semantic_dim, cfg.semantic_scale, &mut rng), against);
        let start = cursor + pre;
        let end = start + act;
        for i in cursor..start {
            semantic.row_mut(i).assign(&hard);
        }
        for i in start..end {
            semantic.row_mut(i).assign(proto);
        }
        for i in end..end + post {
            semantic.row_mut(i).assign(&hard);
        }
        instances.push(ActionInstance::new(start as f64 * t, end as f64 * t, format!("class_{class}")));
        cursor = end + post;
    }

    let noise = Normal::new(0.0, cfg.noise_scale).expect("noise scale validated");
    let mut features = Array2::<f64>::zeros((len, d));
    for i in 0..len {
        let mut row = features.row_mut(i);
        row.slice_mut(s![..cfg.background_dim]).assign(&background);
        row.slice_mut(s![cfg.background_dim..]).assign(&semantic.row(i));
        row.mapv_inplace(|v| v + noise.sample(&mut rng));
    }

    let id = video_id(video_index);
    Ok(SynthVideo {
        seed,
        features: FrameFeatureSequence::new(id.clone(), t, features)?,
        annotation: VideoAnnotation::new(id, len as f64 * t, instances)?,
    })
}

/// Generates all `cfg.num_videos` videos in index order.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<SynthVideo>> {
    cfg.validate()?;
    let prototypes = class_prototypes(cfg);
    let basis = hard_basis(cfg, &prototypes);
    (0..cfg.num_videos)
        .map(|i| generate_with(cfg, &prototypes, &basis, i))
        .collect()
}

/// One line per video: `<video_id> <seed> <num_frames> <num_actions>`.
pub fn render_manifest(videos: &[SynthVideo]) -> String {
    let mut out = String::new();
    for v in videos {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            v.features.video_id,
            v.seed,
            v.features.len(),
            v.annotation.instances.len()
        );
    }
    out
}

/// Writes `features/<id>.feat`, `annotations/<id>.ann` and `manifest.txt` under `dir`.
pub fn write_dataset(dir: &Path, videos: &[SynthVideo]) -> Result<()> {
    for v in videos {
        let id = &v.features.video_id;
        let feat = MatrixFile {
            video_id: id.clone(),
            interval_seconds: v.features.interval_seconds,
            values: v.features.features.clone(),
        };
        write_atomic(&dir.join("features").join(format!("{id}.feat")), render_matrix(&feat).as_bytes())?;
        write_atomic(
            &dir.join("annotations").join(format!("{id}.ann")),
            render_annotations(std::slice::from_ref(&v.annotation)).as_bytes(),
        )?;
    }
    write_atomic(&dir.join("manifest.txt"), render_manifest(videos).as_bytes())
}
