//! Frame encoder trained with a hard-negative triplet margin loss.
//!
//! The encoder is a one-hidden-layer map
//! `x = normalize(W2 tanh(W1 raw + b1) + b2)`. Similarities between encoded
//! frames are cosines, and the loss of a triplet (anchor, positive, hard
//! negative) is one of
//!
//! * standard: `max(margin + s_an - s_ap, 0)`
//! * literal:  `max(s_an - margin, 0) - s_ap`
//!
//! Gradients are computed analytically through the cosine, the hidden layer
//! and the input layer. The hinge has subgradient 0 at its kink.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::{fmt_exact, parse_header};
use crate::frames::{EmbeddingSequence, FrameFeatureSequence};
use crate::sample_pool::{draw_triplet, SamplePools};

/// Added to the output norm before normalizing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossMode {
    /// `max(s_an - margin, 0) - s_ap`, exactly as the loss is usually printed.
    Literal,
    /// `max(margin + s_an - s_ap, 0)`.
    #[default]
    Standard,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::Standard => "standard",
        })
    }
}

impl FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "standard" => Ok(Self::Standard),
            other => Err(format!("unknown loss mode `{other}` (expected literal or standard)")),
        }
    }
}

/// Weights of the encoder; also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `h x d`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `e x h`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl EncoderParams {
    pub fn zeros(d: usize, h: usize, e: usize) -> Self {
        Self {
            w1: Array2::zeros((h, d)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((e, h)),
            b2: Array1::zeros(e),
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(d: usize, h: usize, e: usize, rng: &mut R) -> Self {
        let s1 = 1.0 / (d as f64).sqrt();
        let s2 = 1.0 / (h as f64).sqrt();
        let mut u = |s: f64| rng.random_range(-s..=s);
        let w1 = Array2::from_shape_simple_fn((h, d), || u(s1));
        let b1 = Array1::from_shape_simple_fn(h, || u(s1));
        let w2 = Array2::from_shape_simple_fn((e, h), || u(s2));
        let b2 = Array1::from_shape_simple_fn(e, || u(s2));
        Self { w1, b1, w2, b2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Checks shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let (h, e) = (self.hidden_dim(), self.embed_dim());
        if self.input_dim() == 0 || h == 0 || e == 0 {
            return Err(Error::invalid("encoder dimensions must be >= 1"));
        }
        if self.b1.len() != h || self.w2.ncols() != h || self.b2.len() != e {
            return Err(Error::invalid("encoder parameter shapes are inconsistent"));
        }
        if self.values().any(|v| !v.is_finite()) {
            return Err(Error::invalid("encoder parameters contain non-finite values"));
        }
        Ok(())
    }

    /// All coordinates in `W1, b1, W2, b2` order, row-major.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    /// `self += alpha * other`
    fn add_scaled(&mut self, alpha: f64, other: &Self) {
        self.w1.scaled_add(alpha, &other.w1);
        self.b1.scaled_add(alpha, &other.b1);
        self.w2.scaled_add(alpha, &other.w2);
        self.b2.scaled_add(alpha, &other.b2);
    }
}

struct Forward {
    hidden: Array1<f64>,
    out: Array1<f64>,
    norm: f64,
}

fn forward(params: &EncoderParams, raw: ArrayView1<'_, f64>) -> Result<Forward> {
    if raw.len() != params.input_dim() {
        return Err(Error::invalid(format!(
            "input has {} features, encoder expects {}",
            raw.len(),
            params.input_dim()
        )));
    }
    let hidden = (params.w1.dot(&raw) + &params.b1).mapv_into(f64::tanh);
    let out = params.w2.dot(&hidden) + &params.b2;
    let norm = out.dot(&out).sqrt();
    Ok(Forward { hidden, out, norm })
}

/// Encodes one raw frame into a unit-norm embedding.
pub fn encode(raw: ArrayView1<'_, f64>, params: &EncoderParams) -> Result<Array1<f64>> {
    let f = forward(params, raw)?;
    Ok(f.out / (f.norm + NORM_EPS))
}

/// Encodes every frame of a sequence.
pub fn embed_sequence(seq: &FrameFeatureSequence, params: &EncoderParams) -> Result<EmbeddingSequence> {
    let mut out = Array2::zeros((seq.len(), params.embed_dim()));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let x = encode(seq.frame(i), params)?;
        if x.dot(&x) == 0.0 {
            return Err(Error::Degenerate(format!(
                "video {}: frame {i} encodes to the zero vector",
                seq.video_id
            )));
        }
        row.assign(&x);
    }
    EmbeddingSequence::new(seq.video_id.clone(), seq.interval_seconds, out)
}

fn check_similarity(name: &str, s: f64) -> Result<()> {
    if !(s.is_finite() && (-1.0 - 1e-9..=1.0 + 1e-9).contains(&s)) {
        return Err(Error::invalid(format!("{name} = {s} outside [-1, 1]")));
    }
    Ok(())
}

/// Loss of one triplet given its anchor-positive and anchor-negative similarities.
pub fn triplet_loss(s_ap: f64, s_an: f64, margin: f64, mode: LossMode) -> Result<f64> {
    check_similarity("s_ap", s_ap)?;
    check_similarity("s_an", s_an)?;
    Ok(match mode {
        LossMode::Standard => (margin + s_an - s_ap).max(0.0),
        LossMode::Literal => (s_an - margin).max(0.0) - s_ap,
    })
}

/// `(dL/ds_ap, dL/ds_an)`, zero on the flat side of the hinge and at its kink.
fn loss_slopes(s_ap: f64, s_an: f64, margin: f64, mode: LossMode) -> (f64, f64) {
    match mode {
        LossMode::Standard => {
            if margin + s_an - s_ap > 0.0 {
                (-1.0, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        LossMode::Literal => (-1.0, if s_an - margin > 0.0 { 1.0 } else { 0.0 }),
    }
}

/// Raw feature vectors of one training triplet.
#[derive(Clone, Copy, Debug)]
pub struct TripletInputs<'a> {
    pub anchor: ArrayView1<'a, f64>,
    pub positive: ArrayView1<'a, f64>,
    pub negative: ArrayView1<'a, f64>,
}

#[derive(Clone, Debug)]
pub struct LossGradient {
    pub loss: f64,
    pub s_ap: f64,
    pub s_an: f64,
    pub grad: EncoderParams,
}

/// Cosine of two output vectors and its gradient with respect to each.
fn cosine_with_grads(a: &Forward, b: &Forward) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    if a.norm == 0.0 || b.norm == 0.0 {
        return Err(Error::Degenerate("encoder output has zero norm".into()));
    }
    let inv = 1.0 / (a.norm * b.norm);
    let s = a.out.dot(&b.out) * inv;
    let ga = &b.out * inv - &a.out * (s / (a.norm * a.norm));
    let gb = &a.out * inv - &b.out * (s / (b.norm * b.norm));
    Ok((s, ga, gb))
}

/// Backpropagates `d_out` (gradient at the encoder output) into `grad`.
fn backprop(
    params: &EncoderParams,
    raw: ArrayView1<'_, f64>,
    fwd: &Forward,
    d_out: &Array1<f64>,
    grad: &mut EncoderParams,
) {
    let d_out_col = d_out.view().insert_axis(Axis(1));
    grad.w2 += &d_out_col.dot(&fwd.hidden.view().insert_axis(Axis(0)));
    grad.b2 += d_out;
    let d_hidden = params.w2.t().dot(d_out);
    let d_pre = d_hidden * fwd.hidden.mapv(|a| 1.0 - a * a);
    grad.w1 += &d_pre.view().insert_axis(Axis(1)).dot(&raw.insert_axis(Axis(0)));
    grad.b1 += &d_pre;
}

/// Loss of one triplet and its gradient with respect to every encoder parameter.
pub fn loss_gradients(
    inputs: TripletInputs<'_>,
    params: &EncoderParams,
    margin: f64,
    mode: LossMode,
) -> Result<LossGradient> {
    let fa = forward(params, inputs.anchor)?;
    let fp = forward(params, inputs.positive)?;
    let fn_ = forward(params, inputs.negative)?;
    let (s_ap, ga_p, gp) = cosine_with_grads(&fa, &fp)?;
    let (s_an, ga_n, gn) = cosine_with_grads(&fa, &fn_)?;
    let loss = triplet_loss(s_ap, s_an, margin, mode)?;
    let (k_ap, k_an) = loss_slopes(s_ap, s_an, margin, mode);

    let mut grad = EncoderParams::zeros(params.input_dim(), params.hidden_dim(), params.embed_dim());
    if k_ap != 0.0 || k_an != 0.0 {
        let d_anchor = ga_p * k_ap + ga_n * k_an;
        backprop(params, inputs.anchor, &fa, &d_anchor, &mut grad);
        if k_ap != 0.0 {
            backprop(params, inputs.positive, &fp, &(gp * k_ap), &mut grad);
        }
        if k_an != 0.0 {
            backprop(params, inputs.negative, &fn_, &(gn * k_an), &mut grad);
        }
    }
    Ok(LossGradient {
        loss,
        s_ap,
        s_an,
        grad,
    })
}

/// Optimizer and model settings for [`train_encoder`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Triplets drawn from each trainable instance per epoch.
    pub triplets_per_instance: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 32,
            margin: 1.0,
            loss_mode: LossMode::Standard,
            seed: 0,
            weight_decay: 4e-4,
            hidden_dim: 32,
            embed_dim: 16,
            triplets_per_instance: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::invalid(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("hidden_dim and embed_dim must be >= 1"));
        }
        if self.triplets_per_instance == 0 {
            return Err(Error::invalid("triplets_per_instance must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Mean triplet loss of each epoch, in epoch order.
    pub loss_trace: Vec<f64>,
}

/// Trains an encoder with mini-batch gradient descent and weight decay.
///
/// Every epoch visits each trainable instance `triplets_per_instance` times in
/// a shuffled order and draws a fresh triplet per visit. The whole run is a
/// deterministic function of the data and `cfg.seed`.
pub fn train_encoder(
    dataset: &[(FrameFeatureSequence, SamplePools)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(v, (_, pools))| pools.trainable_instances().map(move |k| (v, k)))
        .collect();
    if jobs.is_empty() {
        return Err(Error::NoTrainableTriplets);
    }
    let d = dataset[jobs[0].0].0.dim();
    for (seq, pools) in dataset {
        if seq.dim() != d {
            return Err(Error::invalid(format!(
                "video {} has {} features, expected {d}",
                seq.video_id,
                seq.dim()
            )));
        }
        if seq.video_id != pools.video_id {
            return Err(Error::invalid(format!(
                "features for {} paired with pools for {}",
                seq.video_id, pools.video_id
            )));
        }
        let out_of_range = pools
            .positives
            .iter()
            .chain(&pools.hard_negatives)
            .flatten()
            .any(|&i| i >= seq.len());
        if out_of_range {
            return Err(Error::invalid(format!(
                "video {}: pool index beyond {} frames",
                seq.video_id,
                seq.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = EncoderParams::init(d, cfg.hidden_dim, cfg.embed_dim, &mut rng);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<(usize, usize)> = jobs
        .iter()
        .flat_map(|&j| std::iter::repeat_n(j, cfg.triplets_per_instance))
        .collect();

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = EncoderParams::zeros(d, cfg.hidden_dim, cfg.embed_dim);
            for &(v, k) in batch {
                let (seq, pools) = &dataset[v];
                let t = draw_triplet(pools, k, &mut rng)?;
                let inputs = TripletInputs {
                    anchor: seq.frame(t.anchor),
                    positive: seq.frame(t.positive),
                    negative: seq.frame(t.hard_negative),
                };
                let lg = loss_gradients(inputs, &params, cfg.margin, cfg.loss_mode)?;
                epoch_loss += lg.loss;
                grad.add_scaled(1.0, &lg.grad);
            }
            let step = cfg.learning_rate / batch.len() as f64;
            let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
            if cfg.learning_rate != 0.0 {
                params.values_mut().for_each(|p| *p *= decay);
                params.add_scaled(-step, &grad);
            }
        }
        loss_trace.push(epoch_loss / order.len() as f64);
    }
    Ok(TrainOutcome { params, loss_trace })
}

/// Renders parameters as a `# d= h= e=` header followed by `W1`, `b1`, `W2`,
/// `b2` sections of row-major values.
pub fn render_params(params: &EncoderParams) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# d={} h={} e={}",
        params.input_dim(),
        params.hidden_dim(),
        params.embed_dim()
    );
    let line = |v: ArrayView1<'_, f64>| v.iter().map(|&x| fmt_exact(x)).collect::<Vec<_>>().join(" ");
    out.push_str("W1\n");
    for row in params.w1.rows() {
        out.push_str(&line(row));
        out.push('\n');
    }
    let _ = writeln!(out, "b1\n{}", line(params.b1.view()));
    out.push_str("W2\n");
    for row in params.w2.rows() {
        out.push_str(&line(row));
        out.push('\n');
    }
    let _ = writeln!(out, "b2\n{}", line(params.b2.view()));
    out
}

pub fn parse_params(text: &str, source: &str) -> Result<EncoderParams> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let header = parse_header(header).ok_or_else(|| err(hl, "malformed header".into()))?;
    let dim = |k: &str| -> Result<usize> {
        header
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(hl, format!("header missing `{k}`")))
    };
    let (d, h, e) = (dim("d")?, dim("h")?, dim("e")?);
    let mut params = EncoderParams::zeros(d, h, e);

    let sections: [(&str, usize, usize); 4] = [("W1", h, d), ("b1", 1, h), ("W2", e, h), ("b2", 1, e)];
    let mut flat: Vec<f64> = Vec::with_capacity(params.num_params());
    for (name, rows, cols) in sections {
        let (ml, marker) = lines
            .next()
            .ok_or_else(|| err(0, format!("missing section {name}")))?;
        if marker != name {
            return Err(err(ml, format!("expected section `{name}`, found `{marker}`")));
        }
        for _ in 0..rows {
            let (rl, row) = lines
                .next()
                .ok_or_else(|| err(ml, format!("section {name} truncated")))?;
            let vals = row
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(rl, format!("bad number `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != cols {
                return Err(err(rl, format!("expected {cols} values, found {}", vals.len())));
            }
            flat.extend(vals);
        }
    }
    if let Some((l, _)) = lines.next() {
        return Err(err(l, "trailing content".into()));
    }
    for (slot, v) in params.values_mut().zip(flat) {
        *slot = v;
    }
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn encode_normalizes_constant_output() {
        let mut p = EncoderParams::zeros(3, 4, 2);
        p.b2 = array![3.0, 4.0];
        let x = encode(array![1.0, -2.0, 0.5].view(), &p).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-12 && (x[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn encode_rejects_dimension_mismatch() {
        let p = EncoderParams::zeros(3, 4, 2);
        assert!(encode(array![1.0, 2.0].view(), &p).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = EncoderParams::init(6, 8, 4, &mut rng);
        for _ in 0..100 {
            let raw = Array1::from_shape_simple_fn(6, || rng.random_range(-3.0..3.0));
            let a = encode(raw.view(), &p).unwrap();
            let b = encode(raw.view(), &p).unwrap();
            assert_eq!(a, b);
            assert!((a.dot(&a).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_examples() {
        let l = triplet_loss(0.5, 0.9, 1.0, LossMode::Literal).unwrap();
        assert!((l + 0.5).abs() < 1e-15);
        assert_eq!(triplet_loss(1.0, -1.0, 1.0, LossMode::Standard).unwrap(), 0.0);
        assert_eq!(triplet_loss(0.0, 0.0, 1.0, LossMode::Standard).unwrap(), 1.0);
        assert!(triplet_loss(1.5, 0.0, 1.0, LossMode::Standard).is_err());
    }

    #[test]
    fn loss_mode_parses() {
        assert_eq!("literal".parse::<LossMode>().unwrap(), LossMode::Literal);
        assert_eq!(LossMode::Standard.to_string(), "standard");
        assert!("hinge".parse::<LossMode>().is_err());
    }

    #[test]
    fn params_text_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = EncoderParams::init(5, 3, 2, &mut rng);
        let text = render_params(&p);
        assert!(text.starts_with("# d=5 h=3 e=2\nW1\n"));
        assert_eq!(parse_params(&text, "mem").unwrap(), p);
        let broken = text.replace("b1\n", "bias\n");
        assert!(parse_params(&broken, "mem").is_err());
    }

    #[test]
    fn train_config_validation() {
        let bad = TrainConfig {
            margin: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn train_without_triplets_fails() {
        let seq = FrameFeatureSequence::new("v", 1.0, Array2::ones((4, 2))).unwrap();
        let pools = SamplePools {
            video_id: "v".into(),
            positives: vec![vec![1]],
            hard_negatives: vec![vec![0]],
            easy_negatives: vec![2, 3],
            warnings: vec![],
        };
        let err = train_encoder(&[(seq, pools)], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoTrainableTriplets));
    }
}
