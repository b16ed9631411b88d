//! Line-oriented text formats for feature matrices and annotations.
//!
//! Feature, embedding and similarity files share one layout:
//!
//! ```text
//! # video=<id> frames=<l> dim=<d> interval=<T>
//! <d space-separated values>      (l lines)
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly. Annotation files hold one or more videos:
//!
//! ```text
//! # video=<id> duration=<seconds>
//! <id> <t_s> <t_e> <label>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::frames::{ActionInstance, VideoAnnotation};

/// A matrix tagged with the header fields shared by feature-like files.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub video_id: String,
    pub interval_seconds: f64,
    pub values: Array2<f64>,
}

/// Formats a float so that parsing it back yields the same bits.
pub fn fmt_exact(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses the `key=value` tokens of a `#` header line.
pub fn parse_header(line: &str) -> Option<BTreeMap<String, String>> {
    let rest = line.trim().strip_prefix('#')?;
    let mut out = BTreeMap::new();
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        out.insert(k.to_string(), v.to_string());
    }
    Some(out)
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

fn header_field<T: std::str::FromStr>(
    header: &BTreeMap<String, String>,
    key: &str,
    source: &str,
    line: usize,
) -> Result<T> {
    let raw = header
        .get(key)
        .ok_or_else(|| parse_err(source, line, format!("header missing `{key}`")))?;
    raw.parse()
        .map_err(|_| parse_err(source, line, format!("bad value for `{key}`: {raw}")))
}

pub fn render_matrix(file: &MatrixFile) -> String {
    let (rows, cols) = file.values.dim();
    let mut out = String::with_capacity(rows * cols * 25 + 64);
    let _ = writeln!(
        out,
        "# video={} frames={rows} dim={cols} interval={}",
        file.video_id, file.interval_seconds
    );
    for row in file.values.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_exact(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses a feature-like matrix file. `source` names the input in error messages.
pub fn parse_matrix(text: &str, source: &str) -> Result<MatrixFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(source, 1, "empty file"))?;
    let header = parse_header(header).ok_or_else(|| parse_err(source, hline + 1, "malformed header"))?;
    let video_id: String = header_field(&header, "video", source, hline + 1)?;
    let frames: usize = header_field(&header, "frames", source, hline + 1)?;
    let dim: usize = header_field(&header, "dim", source, hline + 1)?;
    let interval_seconds: f64 = header_field(&header, "interval", source, hline + 1)?;

    let mut data = Vec::with_capacity(frames * dim);
    let mut seen = 0;
    for (idx, line) in lines {
        if seen == frames {
            return Err(parse_err(source, idx + 1, format!("more than {frames} rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(source, idx + 1, format!("bad number `{tok}`")))?;
            data.push(v);
        }
        if data.len() - before != dim {
            return Err(parse_err(
                source,
                idx + 1,
                format!("expected {dim} values, found {}", data.len() - before),
            ));
        }
        seen += 1;
    }
    if seen != frames {
        return Err(parse_err(source, hline + 1, format!("expected {frames} rows, found {seen}")));
    }
    let values = Array2::from_shape_vec((frames, dim), data)
        .map_err(|e| parse_err(source, hline + 1, e.to_string()))?;
    Ok(MatrixFile {
        video_id,
        interval_seconds,
        values,
    })
}

pub fn render_annotations(anns: &[VideoAnnotation]) -> String {
    let mut out = String::new();
    for ann in anns {
        let _ = writeln!(out, "# video={} duration={}", ann.video_id, ann.duration_seconds);
        for inst in &ann.instances {
            let _ = writeln!(out, "{} {} {} {}", ann.video_id, inst.start, inst.end, inst.label);
        }
    }
    out
}

/// Parses an annotation file holding any number of videos, in file order.
pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<VideoAnnotation>> {
    // (id, duration, instances, header line)
    let mut videos: Vec<(String, f64, Vec<ActionInstance>, usize)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            let header =
                parse_header(trimmed).ok_or_else(|| parse_err(source, lineno, "malformed header"))?;
            let id: String = header_field(&header, "video", source, lineno)?;
            let duration: f64 = header_field(&header, "duration", source, lineno)?;
            if videos.iter().any(|v| v.0 == id) {
                return Err(parse_err(source, lineno, format!("duplicate header for video {id}")));
            }
            videos.push((id, duration, Vec::new(), lineno));
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(
                source,
                lineno,
                "expected `<video_id> <t_s> <t_e> <label>`",
            ));
        }
        let start: f64 = toks[1]
            .parse()
            .map_err(|_| parse_err(source, lineno, format!("bad start `{}`", toks[1])))?;
        let end: f64 = toks[2]
            .parse()
            .map_err(|_| parse_err(source, lineno, format!("bad end `{}`", toks[2])))?;
        let video = videos
            .iter_mut()
            .find(|v| v.0 == toks[0])
            .ok_or_else(|| parse_err(source, lineno, format!("no header for video {}", toks[0])))?;
        video.2.push(ActionInstance::new(start, end, toks[3]));
    }
    videos
        .into_iter()
        .map(|(id, duration, instances, lineno)| {
            VideoAnnotation::new(id, duration, instances).map_err(|e| parse_err(source, lineno, e.to_string()))
        })
        .collect()
}

/// Writes `contents` to `path` through a temporary sibling file and a rename,
/// so readers never observe a half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    parse_matrix(&read_text(path)?, &path.display().to_string())
}

pub fn write_matrix(path: &Path, file: &MatrixFile) -> Result<()> {
    write_atomic(path, render_matrix(file).as_bytes())
}

pub fn read_annotations(path: &Path) -> Result<Vec<VideoAnnotation>> {
    parse_annotations(&read_text(path)?, &path.display().to_string())
}

pub fn write_annotations(path: &Path, anns: &[VideoAnnotation]) -> Result<()> {
    write_atomic(path, render_annotations(anns).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn matrix_header_layout() {
        let f = MatrixFile {
            video_id: "vid_1".into(),
            interval_seconds: 0.5,
            values: array![[1.0, -2.5], [0.125, 3.0]],
        };
        let text = render_matrix(&f);
        assert!(text.starts_with("# video=vid_1 frames=2 dim=2 interval=0.5\n"));
        assert_eq!(parse_matrix(&text, "mem").unwrap(), f);
    }

    #[test]
    fn matrix_rejects_wrong_row_width() {
        let text = "# video=v frames=2 dim=2 interval=1\n1 2\n3\n";
        let err = parse_matrix(text, "f.txt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn matrix_rejects_missing_rows() {
        let text = "# video=v frames=3 dim=1 interval=1\n1\n2\n";
        assert!(parse_matrix(text, "f").is_err());
        let text = "# video=v frames=1 dim=1 interval=1\n1\n2\n";
        assert!(parse_matrix(text, "f").is_err());
        assert!(parse_matrix("# video=v dim=1 interval=1\n1\n", "f").is_err());
    }

    #[test]
    fn annotations_multi_video() {
        let text = "# video=a duration=10\na 1 3 jump\na 5 6 run\n# video=b duration=4\n";
        let anns = parse_annotations(text, "mem").unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!(anns[0].instances.len(), 2);
        assert_eq!(anns[1].instances.len(), 0);
        assert_eq!(parse_annotations(&render_annotations(&anns), "mem").unwrap(), anns);
    }

    #[test]
    fn annotations_reject_overlap_and_orphans() {
        let text = "# video=a duration=10\na 1 5 x\na 4 6 y\n";
        assert!(parse_annotations(text, "mem").is_err());
        assert!(parse_annotations("a 1 2 x\n", "mem").is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn matrix_roundtrip_is_exact(
            rows in 1usize..5,
            vals in prop::collection::vec(-1e6f64..1e6, 15),
            interval in 0.01f64..5.0,
        ) {
            let cols = 3;
            let values = Array2::from_shape_fn((rows, cols), |(i, j)| vals[(i * cols + j) % vals.len()]);
            let f = MatrixFile { video_id: "v".into(), interval_seconds: interval, values };
            let back = parse_matrix(&render_matrix(&f), "mem").unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
