//! Pipeline stages. Each reads the artifacts of earlier stages from the output
//! directory, writes its own atomically and leaves a `<stage>.provenance`
//! record naming the config hash, the seed and the hash of every file read
//! and written.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bapg::contrastive::{parse_params, render_params};
use bapg::eval::{
    boundary_error, evaluate_detections, evaluate_proposals, proposals_as_detections, relabel_ground_truth,
    render_table,
};
use bapg::format::{fmt_exact, read_annotations, read_matrix, read_text, write_atomic, write_matrix, MatrixFile};
use bapg::proposal::{parse_proposals, proposals_from_segmentations, render_proposals};
use bapg::sample_pool::{parse_pools, render_pools};
use bapg::synthetic::{generate_dataset, write_dataset};
use bapg::{
    build_similarity_matrix, embed_sequence, label_clips, optimal_change_points, refine_features, train_encoder,
    EmbeddingSequence, FeatureSequence, FrameFeatureSequence, PrefixTable, Proposal, Segmentation, SimilarityMatrix,
    VideoAnnotation,
};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const STAGES: [&str; 9] = ["synth", "pools", "train", "embed", "simmat", "segment", "propose", "refine", "eval"];

/// tIoU at which boundary errors are reported.
pub const BOUNDARY_TIOU: f64 = 0.5;

pub const POOLS: &str = "pools.txt";
pub const SPLIT: &str = "split.txt";
pub const ENCODER: &str = "encoder.txt";
pub const LOSS_TRACE: &str = "loss_trace.txt";
pub const SEGMENTS: &str = "segments.txt";
pub const PROPOSALS: &str = "proposals.txt";
pub const REPORT: &str = "report.txt";

pub struct Context {
    pub out: PathBuf,
    pub cfg: PipelineConfig,
    /// Extra proposal files for `eval`; empty means `proposals.txt`.
    pub proposal_files: Vec<PathBuf>,
}

#[derive(Default)]
struct Record {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Record {
    fn read(&mut self, path: PathBuf) -> PathBuf {
        self.inputs.push(path.clone());
        path
    }

    fn write(&mut self, path: PathBuf, contents: &str) -> CliResult<()> {
        write_atomic(&path, contents.as_bytes())?;
        self.outputs.push(path);
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|source| io_error(path, source))?;
    Ok(sha256_hex(&bytes))
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    if source.kind() == std::io::ErrorKind::NotFound {
        CliError::MissingArtifact { path: path.to_path_buf() }
    } else {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl Context {
    fn data_dir(&self) -> PathBuf {
        self.out.join(&self.cfg.data_dir)
    }

    fn features_path(&self, id: &str) -> PathBuf {
        self.data_dir().join("features").join(format!("{id}.feat"))
    }

    fn annotation_path(&self, id: &str) -> PathBuf {
        self.data_dir().join("annotations").join(format!("{id}.ann"))
    }

    fn embedding_path(&self, id: &str) -> PathBuf {
        self.out.join("embeddings").join(format!("{id}.emb"))
    }

    fn simmat_path(&self, id: &str) -> PathBuf {
        self.out.join("simmat").join(format!("{id}.sim"))
    }

    fn refined_path(&self, id: &str) -> PathBuf {
        self.out.join("refined").join(format!("{id}.feat"))
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.out).unwrap_or(path).display().to_string()
    }

    /// Video ids with a feature file, sorted.
    fn video_ids(&self) -> CliResult<Vec<String>> {
        let dir = self.data_dir().join("features");
        let entries = std::fs::read_dir(&dir).map_err(|e| io_error(&dir, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| io_error(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "feat") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn read_features(&self, rec: &mut Record, id: &str) -> CliResult<FrameFeatureSequence> {
        let m = read_matrix(&rec.read(self.features_path(id)))?;
        check_id(id, &m.video_id)?;
        Ok(FrameFeatureSequence::new(m.video_id, m.interval_seconds, m.values)?)
    }

    fn read_annotation(&self, rec: &mut Record, id: &str) -> CliResult<VideoAnnotation> {
        let path = rec.read(self.annotation_path(id));
        read_annotations(&path)?
            .into_iter()
            .find(|a| a.video_id == id)
            .ok_or_else(|| CliError::Validation(format!("{} has no annotation for {id}", path.display())))
    }

    fn read_similarity(&self, rec: &mut Record, id: &str) -> CliResult<SimilarityMatrix> {
        let m = read_matrix(&rec.read(self.simmat_path(id)))?;
        check_id(id, &m.video_id)?;
        Ok(SimilarityMatrix::new(m.video_id, m.interval_seconds, m.values)?)
    }

    fn read_split(&self, rec: &mut Record) -> CliResult<BTreeMap<String, bool>> {
        let path = rec.read(self.out.join(SPLIT));
        let text = read_text(&path)?;
        let mut split = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let bad = || CliError::Validation(format!("{}:{}: expected `<video_id> train|test`", path.display(), i + 1));
            let (id, kind) = line.split_once(' ').ok_or_else(bad)?;
            let is_train = match kind {
                "train" => true,
                "test" => false,
                _ => return Err(bad()),
            };
            split.insert(id.to_string(), is_train);
        }
        Ok(split)
    }

    fn write_provenance(&self, stage: &str, rec: &Record) -> CliResult<()> {
        let config = self.cfg.render();
        let mut out = String::new();
        let _ = writeln!(out, "stage = {stage}");
        let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "seed = {}", self.cfg.seed);
        let _ = writeln!(out, "config_sha256 = {}", sha256_hex(config.as_bytes()));
        let mut inputs: Vec<&PathBuf> = rec.inputs.iter().collect();
        inputs.sort();
        inputs.dedup();
        for p in inputs {
            let _ = writeln!(out, "input {} {}", self.rel(p), file_sha256(p)?);
        }
        for p in &rec.outputs {
            let _ = writeln!(out, "output {} {}", self.rel(p), file_sha256(p)?);
        }
        out.push_str("[config]\n");
        out.push_str(&config);
        write_atomic(&self.out.join(format!("{stage}.provenance")), out.as_bytes())?;
        Ok(())
    }
}

fn check_id(expected: &str, found: &str) -> CliResult<()> {
    if expected != found {
        return Err(CliError::Validation(format!("file for {expected} declares video {found}")));
    }
    Ok(())
}

/// Runs one named stage, or all of them for `pipeline`.
pub fn run_subcommand(name: &str, ctx: &Context) -> CliResult<()> {
    if name == "pipeline" {
        for stage in STAGES {
            run_subcommand(stage, ctx)?;
        }
        return Ok(());
    }
    let mut rec = Record::default();
    match name {
        "synth" => synth(ctx, &mut rec)?,
        "pools" => pools(ctx, &mut rec)?,
        "train" => train(ctx, &mut rec)?,
        "embed" => embed(ctx, &mut rec)?,
        "simmat" => simmat(ctx, &mut rec)?,
        "segment" => segment(ctx, &mut rec)?,
        "propose" => propose(ctx, &mut rec)?,
        "refine" => refine(ctx, &mut rec)?,
        "eval" => eval(ctx, &mut rec)?,
        other => return Err(CliError::UnknownSubcommand(other.to_string())),
    }
    log::info!("{name}: read {} files, wrote {}", rec.inputs.len(), rec.outputs.len());
    ctx.write_provenance(name, &rec)
}

fn synth(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    let videos = generate_dataset(&ctx.cfg.synth)?;
    let dir = ctx.data_dir();
    write_dataset(&dir, &videos)?;
    for v in &videos {
        rec.outputs.push(ctx.features_path(&v.features.video_id));
        rec.outputs.push(ctx.annotation_path(&v.features.video_id));
    }
    rec.outputs.push(dir.join("manifest.txt"));
    Ok(())
}

fn pools(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    let mut all = Vec::new();
    for id in ctx.video_ids()? {
        let seq = ctx.read_features(rec, &id)?;
        let ann = ctx.read_annotation(rec, &id)?;
        let pools = label_clips(&ann, seq.len(), seq.interval_seconds, ctx.cfg.hard_window_seconds)?;
        for w in &pools.warnings {
            log::warn!("{id}: {w:?}");
        }
        all.push(pools);
    }
    rec.write(ctx.out.join(POOLS), &render_pools(&all))
}

/// Leading `fraction` of `ids` for training, at least one.
fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).floor() as usize).clamp(1.min(n), n)
}

fn train(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    let ids = ctx.video_ids()?;
    let n_train = train_count(ids.len(), ctx.cfg.train_fraction);
    let path = rec.read(ctx.out.join(POOLS));
    let pools = parse_pools(&read_text(&path)?, &path.display().to_string())?;
    let by_id: BTreeMap<&str, _> = pools.iter().map(|p| (p.video_id.as_str(), p)).collect();
    let mut data = Vec::new();
    for id in &ids[..n_train] {
        let p = by_id
            .get(id.as_str())
            .ok_or_else(|| CliError::Validation(format!("{} has no pools for {id}", path.display())))?;
        data.push((ctx.read_features(rec, id)?, (*p).clone()));
    }
    let outcome = train_encoder(&data, &ctx.cfg.train)?;

    let mut split = String::new();
    for (i, id) in ids.iter().enumerate() {
        let _ = writeln!(split, "{id} {}", if i < n_train { "train" } else { "test" });
    }
    let mut trace = String::new();
    for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
        let _ = writeln!(trace, "{} {}", epoch + 1, fmt_exact(*loss));
    }
    rec.write(ctx.out.join(SPLIT), &split)?;
    rec.write(ctx.out.join(ENCODER), &render_params(&outcome.params))?;
    rec.write(ctx.out.join(LOSS_TRACE), &trace)
}

fn embed(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    let path = rec.read(ctx.out.join(ENCODER));
    let params = parse_params(&read_text(&path)?, &path.display().to_string())?;
    for id in ctx.video_ids()? {
        let seq = ctx.read_features(rec, &id)?;
        let emb = embed_sequence(&seq, &params)?;
        let file = MatrixFile {
            video_id: emb.video_id,
            interval_seconds: emb.interval_seconds,
            values: emb.embeddings,
        };
        let out = ctx.embedding_path(&id);
        write_matrix(&out, &file)?;
        rec.outputs.push(out);
    }
    Ok(())
}

fn simmat(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    for id in ctx.video_ids()? {
        let m = read_matrix(&rec.read(ctx.embedding_path(&id)))?;
        check_id(&id, &m.video_id)?;
        let s = build_similarity_matrix(&EmbeddingSequence::new(m.video_id, m.interval_seconds, m.values)?)?;
        let file = MatrixFile {
            video_id: s.video_id.clone(),
            interval_seconds: s.interval_seconds,
            values: s.values().clone(),
        };
        let out = ctx.simmat_path(&id);
        write_matrix(&out, &file)?;
        rec.outputs.push(out);
    }
    Ok(())
}

fn segment(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    let mut text = String::new();
    for id in ctx.video_ids()? {
        let s = ctx.read_similarity(rec, &id)?;
        for &m in &ctx.cfg.m_values {
            let seg = optimal_change_points(&s, m)?;
            let _ = writeln!(text, "{id} {seg}");
        }
    }
    rec.write(ctx.out.join(SEGMENTS), &text)
}

/// `<video_id> m=<m> cost=<c> cps=<a,b,...>` lines, grouped by video.
fn parse_segments(text: &str, source: &Path) -> CliResult<BTreeMap<String, Vec<Vec<usize>>>> {
    let mut out: BTreeMap<String, Vec<Vec<usize>>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |what: &str| CliError::Validation(format!("{}:{}: {what}", source.display(), i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, m, _cost, cps] = fields[..] else {
            return Err(bad("expected `<video_id> m=<m> cost=<c> cps=<list>`"));
        };
        let m: usize = m
            .strip_prefix("m=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad `m=` field"))?;
        let cps = cps.strip_prefix("cps=").ok_or_else(|| bad("bad `cps=` field"))?;
        let cps: Vec<usize> = if cps.is_empty() {
            Vec::new()
        } else {
            cps.split(',')
                .map(|c| c.parse().map_err(|_| bad("bad change point")))
                .collect::<CliResult<_>>()?
        };
        if cps.len() != m {
            return Err(bad("change-point count differs from m"));
        }
        out.entry(id.to_string()).or_default().push(cps);
    }
    Ok(out)
}

fn propose(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    let path = rec.read(ctx.out.join(SEGMENTS));
    let segments = parse_segments(&read_text(&path)?, &path)?;
    let mut all: Vec<Proposal> = Vec::new();
    for id in ctx.video_ids()? {
        let s = ctx.read_similarity(rec, &id)?;
        let cps_lists = segments
            .get(&id)
            .ok_or_else(|| CliError::Validation(format!("{} has no segmentation for {id}", path.display())))?;
        let table = PrefixTable::new(&s);
        let segs = cps_lists
            .iter()
            .map(|cps| Segmentation::from_change_points(&table, cps.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        all.extend(proposals_from_segmentations(&s, &segs)?);
    }
    rec.write(ctx.out.join(PROPOSALS), &render_proposals(&all))
}

fn read_proposals(rec: &mut Record, path: PathBuf) -> CliResult<Vec<Proposal>> {
    let path = rec.read(path);
    Ok(parse_proposals(&read_text(&path)?, &path.display().to_string())?)
}

fn refine(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    let proposals = read_proposals(rec, ctx.out.join(PROPOSALS))?;
    for id in ctx.video_ids()? {
        let seq = ctx.read_features(rec, &id)?;
        let fv = FeatureSequence::new(id.clone(), seq.interval_seconds, seq.features)?;
        let refined = refine_features(&fv, &proposals, ctx.cfg.top_k, ctx.cfg.alpha)?;
        let file = MatrixFile {
            video_id: refined.video_id,
            interval_seconds: refined.stride_seconds,
            values: refined.rows,
        };
        let out = ctx.refined_path(&id);
        write_matrix(&out, &file)?;
        rec.outputs.push(out);
    }
    Ok(())
}

fn eval(ctx: &Context, rec: &mut Record) -> CliResult<()> {
    let split = ctx.read_split(rec)?;
    let held_out: BTreeSet<&str> = split.iter().filter(|(_, &train)| !train).map(|(id, _)| id.as_str()).collect();
    // with no held-out videos every video is evaluated
    let eval_ids: Vec<&str> = if held_out.is_empty() {
        split.keys().map(String::as_str).collect()
    } else {
        held_out.into_iter().collect()
    };
    let gt = eval_ids
        .iter()
        .map(|id| ctx.read_annotation(rec, id))
        .collect::<CliResult<Vec<_>>>()?;
    let agnostic_gt = relabel_ground_truth(&gt, "action");

    let files = if ctx.proposal_files.is_empty() {
        vec![ctx.out.join(PROPOSALS)]
    } else {
        ctx.proposal_files.clone()
    };
    let mut rows = Vec::new();
    let mut boundaries = String::new();
    for file in &files {
        let label = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "proposals".into());
        let proposals: Vec<Proposal> = read_proposals(rec, file.clone())?
            .into_iter()
            .filter(|p| eval_ids.contains(&p.video_id.as_str()))
            .collect();
        let recall = evaluate_proposals(&proposals, &gt, &ctx.cfg.thresholds, ctx.cfg.top_n)?;
        let ap = evaluate_detections(&proposals_as_detections(&proposals, "action"), &agnostic_gt, &ctx.cfg.thresholds)?;
        let _ = match boundary_error(&proposals, &gt, BOUNDARY_TIOU)? {
            Some(b) => writeln!(
                boundaries,
                "boundary_error {label} tiou={BOUNDARY_TIOU} start={:.4} end={:.4} mean={:.4} matches={}",
                b.mean_start,
                b.mean_end,
                (b.mean_start + b.mean_end) / 2.0,
                b.matches
            ),
            None => writeln!(boundaries, "boundary_error {label} tiou={BOUNDARY_TIOU} matches=0"),
        };
        rows.push((label.clone(), recall));
        rows.push((label, ap));
    }

    let instances: usize = gt.iter().map(|a| a.instances.len()).sum();
    let mut report = format!("# videos={} instances={instances} top_n={}\n", gt.len(), ctx.cfg.top_n);
    report.push_str(&render_table(&rows)?);
    report.push_str(&boundaries);
    rec.write(ctx.out.join(REPORT), &report)
}
