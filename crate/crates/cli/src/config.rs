//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Unknown and repeated keys are errors.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use bapg::eval::THUMOS_THRESHOLDS;
use bapg::proposal::{DEFAULT_BLEND_ALPHA, DEFAULT_TOP_K};
use bapg::sample_pool::DEFAULT_HARD_WINDOW_SECONDS;
use bapg::{SynthConfig, TrainConfig};

#[derive(Debug, thiserror::Error)]
#[error("{}key `{key}`: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub key: String,
    /// 1-based line in the config file; `None` for overrides.
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Dataset directory; relative paths resolve against the output directory.
    pub data_dir: PathBuf,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    /// Leading share of videos (sorted by id) used for training; the rest are evaluated.
    pub train_fraction: f64,
    pub m_values: BTreeSet<usize>,
    pub hard_window_seconds: f64,
    pub thresholds: Vec<f64>,
    /// Proposals per video counted by recall.
    pub top_n: usize,
    /// Proposals blended into the features by `refine`.
    pub top_k: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            train_fraction: 0.8,
            m_values: [2, 4, 6, 8].into_iter().collect(),
            hard_window_seconds: DEFAULT_HARD_WINDOW_SECONDS,
            thresholds: THUMOS_THRESHOLDS.to_vec(),
            top_n: 10,
            top_k: DEFAULT_TOP_K,
            alpha: DEFAULT_BLEND_ALPHA,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("expected {what}, got `{value}`"))
}

fn positive(value: &str) -> Result<f64, String> {
    let v: f64 = parse(value, "a number")?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {value}"))
    }
}

fn non_negative(value: &str) -> Result<f64, String> {
    let v: f64 = parse(value, "a number")?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be >= 0, got {value}"))
    }
}

fn at_least(value: &str, min: usize) -> Result<usize, String> {
    let v: usize = parse(value, "a non-negative integer")?;
    if v >= min {
        Ok(v)
    } else {
        Err(format!("must be >= {min}, got {v}"))
    }
}

fn list<T: FromStr>(value: &str, what: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(|part| parse(part.trim(), what))
        .collect()
}

const KEYS: &[&str] = &[
    "data_dir",
    "seed",
    "num_videos",
    "duration_min",
    "duration_max",
    "interval",
    "actions_min",
    "actions_max",
    "action_len_min",
    "action_len_max",
    "hard_len_min",
    "hard_len_max",
    "background_dim",
    "semantic_dim",
    "background_scale",
    "semantic_scale",
    "noise_scale",
    "num_classes",
    "learning_rate",
    "epochs",
    "batch_size",
    "margin",
    "loss_mode",
    "weight_decay",
    "hidden_dim",
    "embed_dim",
    "triplets_per_instance",
    "train_fraction",
    "m_values",
    "hard_window_seconds",
    "thresholds",
    "top_n",
    "top_k",
    "alpha",
];

impl PipelineConfig {
    /// Sets one key from its textual value, checking the key's own range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let s = &mut self.synth;
        let t = &mut self.train;
        match key {
            "data_dir" => {
                if value.is_empty() {
                    return Err("must not be empty".into());
                }
                self.data_dir = PathBuf::from(value);
            }
            "seed" => self.seed = parse(value, "an unsigned integer")?,
            "num_videos" => s.num_videos = at_least(value, 0)?,
            "duration_min" => s.duration_range.0 = positive(value)?,
            "duration_max" => s.duration_range.1 = positive(value)?,
            "interval" => s.interval_seconds = positive(value)?,
            "actions_min" => s.actions_range.0 = at_least(value, 0)?,
            "actions_max" => s.actions_range.1 = at_least(value, 0)?,
            "action_len_min" => s.action_len_range.0 = positive(value)?,
            "action_len_max" => s.action_len_range.1 = positive(value)?,
            "hard_len_min" => s.hard_len_range.0 = positive(value)?,
            "hard_len_max" => s.hard_len_range.1 = positive(value)?,
            "background_dim" => s.background_dim = at_least(value, 1)?,
            "semantic_dim" => s.semantic_dim = at_least(value, 1)?,
            "background_scale" => s.background_scale = positive(value)?,
            "semantic_scale" => s.semantic_scale = positive(value)?,
            "noise_scale" => s.noise_scale = positive(value)?,
            "num_classes" => s.num_classes = at_least(value, 1)?,
            "learning_rate" => t.learning_rate = non_negative(value)?,
            "epochs" => t.epochs = at_least(value, 1)?,
            "batch_size" => t.batch_size = at_least(value, 1)?,
            "margin" => t.margin = non_negative(value)?,
            "loss_mode" => t.loss_mode = value.parse().map_err(|_| format!("expected `standard` or `literal`, got `{value}`"))?,
            "weight_decay" => t.weight_decay = non_negative(value)?,
            "hidden_dim" => t.hidden_dim = at_least(value, 1)?,
            "embed_dim" => t.embed_dim = at_least(value, 1)?,
            "triplets_per_instance" => t.triplets_per_instance = at_least(value, 1)?,
            "train_fraction" => {
                let v = positive(value)?;
                if v > 1.0 {
                    return Err(format!("must lie in (0, 1], got {value}"));
                }
                self.train_fraction = v;
            }
            "m_values" => {
                let set: BTreeSet<usize> = list(value, "a non-negative integer")?.into_iter().collect();
                if set.is_empty() {
                    return Err("must not be empty".into());
                }
                self.m_values = set;
            }
            "hard_window_seconds" => self.hard_window_seconds = non_negative(value)?,
            "thresholds" => {
                let ts: Vec<f64> = list(value, "a number")?;
                if let Some(bad) = ts.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
                    return Err(format!("every threshold must lie in (0, 1], got {bad}"));
                }
                self.thresholds = ts;
            }
            "top_n" => self.top_n = at_least(value, 1)?,
            "top_k" => self.top_k = at_least(value, 0)?,
            "alpha" => {
                let v: f64 = parse(value, "a number")?;
                if !v.is_finite() {
                    return Err(format!("must be finite, got {value}"));
                }
                self.alpha = v;
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Cross-key checks that no single key can decide.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |key: &str, message: String| ConfigError {
            key: key.into(),
            line: None,
            message,
        };
        self.synth.validate().map_err(|e| err("synthetic", e.to_string()))?;
        self.train.validate().map_err(|e| err("training", e.to_string()))?;
        Ok(())
    }

    /// Propagates the global seed into the stage configs.
    fn apply_seed(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
    }

    /// Canonical rendering of every key, used for hashing and provenance.
    pub fn render(&self) -> String {
        let s = &self.synth;
        let t = &self.train;
        let join = |v: Vec<String>| v.join(",");
        let rows: Vec<(&str, String)> = vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("num_videos", s.num_videos.to_string()),
            ("duration_min", s.duration_range.0.to_string()),
            ("duration_max", s.duration_range.1.to_string()),
            ("interval", s.interval_seconds.to_string()),
            ("actions_min", s.actions_range.0.to_string()),
            ("actions_max", s.actions_range.1.to_string()),
            ("action_len_min", s.action_len_range.0.to_string()),
            ("action_len_max", s.action_len_range.1.to_string()),
            ("hard_len_min", s.hard_len_range.0.to_string()),
            ("hard_len_max", s.hard_len_range.1.to_string()),
            ("background_dim", s.background_dim.to_string()),
            ("semantic_dim", s.semantic_dim.to_string()),
            ("background_scale", s.background_scale.to_string()),
            ("semantic_scale", s.semantic_scale.to_string()),
            ("noise_scale", s.noise_scale.to_string()),
            ("num_classes", s.num_classes.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("margin", t.margin.to_string()),
            ("loss_mode", t.loss_mode.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("hidden_dim", t.hidden_dim.to_string()),
            ("embed_dim", t.embed_dim.to_string()),
            ("triplets_per_instance", t.triplets_per_instance.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("m_values", join(self.m_values.iter().map(usize::to_string).collect())),
            ("hard_window_seconds", self.hard_window_seconds.to_string()),
            ("thresholds", join(self.thresholds.iter().map(f64::to_string).collect())),
            ("top_n", self.top_n.to_string()),
            ("top_k", self.top_k.to_string()),
            ("alpha", self.alpha.to_string()),
        ];
        debug_assert_eq!(rows.len(), KEYS.len());
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parses config text and applies `overrides` (`key=value`) on top.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError {
                key: trimmed.into(),
                line: Some(line),
                message: "expected `key = value`".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(ConfigError {
                key: key.into(),
                line: Some(line),
                message: format!("duplicate key, first set on line {first}"),
            });
        }
        cfg.set(key, value).map_err(|message| ConfigError {
            key: key.into(),
            line: Some(line),
            message,
        })?;
    }
    for o in overrides {
        let Some((key, value)) = o.split_once('=') else {
            return Err(ConfigError {
                key: o.clone(),
                line: None,
                message: "override must look like `key=value`".into(),
            });
        };
        let key = key.trim();
        cfg.set(key, value.trim()).map_err(|message| ConfigError {
            key: key.into(),
            line: None,
            message,
        })?;
    }
    cfg.apply_seed();
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("", &[]).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let cfg = parse_config("# just a comment\n\n", &[]).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn m_values_list() {
        let cfg = parse_config("m_values = 2,3,4", &[]).unwrap();
        assert_eq!(cfg.m_values, [2, 3, 4].into_iter().collect());
        let cfg = parse_config("m_values = 4, 2 ,2", &[]).unwrap();
        assert_eq!(cfg.m_values, [2, 4].into_iter().collect());
    }

    #[test]
    fn negative_margin_names_key_and_line() {
        let err = parse_config("epochs = 3\nmargin = -1\n", &[]).unwrap_err();
        assert_eq!(err.key, "margin");
        assert_eq!(err.line, Some(2));
        assert!(err.to_string().contains("margin"));
        assert!(err.to_string().contains(">= 0"));
    }

    #[test]
    fn rejects_unknown_duplicate_and_mistyped() {
        let e = parse_config("bogus = 1", &[]).unwrap_err();
        assert_eq!((e.key.as_str(), e.line), ("bogus", Some(1)));
        let e = parse_config("epochs = 3\n\nepochs = 4", &[]).unwrap_err();
        assert_eq!((e.key.as_str(), e.line), ("epochs", Some(3)));
        let e = parse_config("epochs = many", &[]).unwrap_err();
        assert!(e.message.contains("integer"));
        let e = parse_config("no equals sign", &[]).unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(parse_config("m_values = ", &[]).is_err());
        assert!(parse_config("thresholds = 0.5,1.5", &[]).is_err());
        assert!(parse_config("loss_mode = cubic", &[]).is_err());
    }

    #[test]
    fn overrides_win_and_seed_propagates() {
        let cfg = parse_config("epochs = 3", &["epochs=7".into(), "seed = 9".into()]).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!((cfg.synth.seed, cfg.train.seed), (9, 9));
        let e = parse_config("", &["nonsense".into()]).unwrap_err();
        assert_eq!(e.line, None);
    }

    #[test]
    fn cross_key_validation() {
        let e = parse_config("semantic_scale = 5", &[]).unwrap_err();
        assert_eq!(e.key, "synthetic");
    }

    #[test]
    fn render_round_trips() {
        let cfg = parse_config("m_values = 0,3\nloss_mode = literal\nalpha = 0.25\nseed = 4", &[]).unwrap();
        assert_eq!(parse_config(&cfg.render(), &[]).unwrap(), cfg);
        assert_eq!(cfg.render().lines().count(), KEYS.len());
    }
}
