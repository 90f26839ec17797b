//! On-disk formats.
//!
//! Feature binary (`<id>.feat`), little-endian:
//!
//! ```text
//! magic            8 bytes   "TNFEAT\0\0"
//! format version   u32       1
//! id length        u32
//! id               UTF-8 bytes
//! frames (N)       u64
//! fps              f64
//! unit_len_frames  u32
//! units (U)        u64       must equal ceil(N / unit_len_frames)
//! dim (D)          u64
//! features         U x D f32, row-major
//! ```
//!
//! Annotation text: a `# tripnet-annotations v1` header line, then one
//! record per line: `<video id> <start secs> <end secs>\t<query text>`.
//! Lines starting with `#` are comments. Seconds convert to frames as
//! `round(secs * fps)`; an end past the video is clipped to its length.
//!
//! Dataset directory: `annotations.txt` plus `features/<id>.feat`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{tokenize, Annotation, Dataset, FeatureVideo};
use crate::env::Window;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"TNFEAT\0\0";
pub const FEATURE_VERSION: u32 = 1;
pub const ANNOTATION_MAGIC: &str = "# tripnet-annotations v1";

pub fn write_features(video: &FeatureVideo) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + video.raw_features().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(video.id.len() as u32).to_le_bytes());
    out.extend_from_slice(video.id.as_bytes());
    out.extend_from_slice(&(video.frames as u64).to_le_bytes());
    out.extend_from_slice(&video.fps.to_le_bytes());
    out.extend_from_slice(&(video.unit_len as u32).to_le_bytes());
    out.extend_from_slice(&(video.num_units() as u64).to_le_bytes());
    out.extend_from_slice(&(video.dim() as u64).to_le_bytes());
    for v in video.raw_features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureVideo> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Data("feature file truncated".into()))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != FEATURE_MAGIC {
        return Err(Error::Data("not a feature file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::Data(format!("unsupported feature format version {version}")));
    }
    let id_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let id = std::str::from_utf8(take(id_len)?)
        .map_err(|_| Error::Data("video id is not UTF-8".into()))?
        .to_string();
    let frames = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let fps = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let unit_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let units = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if unit_len == 0 || units != frames.div_ceil(unit_len) {
        return Err(Error::Data(format!(
            "video {id}: {units} units inconsistent with {frames} frames at unit length {unit_len}"
        )));
    }
    let n = units
        .checked_mul(dim)
        .ok_or_else(|| Error::Data("feature matrix too large".into()))?;
    let raw = take(n.checked_mul(4).ok_or_else(|| Error::Data("feature matrix too large".into()))?)?;
    let features = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if pos != bytes.len() {
        return Err(Error::Data(format!("video {id}: trailing bytes in feature file")));
    }
    FeatureVideo::new(id, frames, fps, unit_len, dim, features)
}

pub fn write_annotations(annotations: &[Annotation]) -> String {
    let mut s = format!("{ANNOTATION_MAGIC}\n");
    for a in annotations {
        writeln!(s, "{} {:?} {:?}\t{}", a.video_id, a.start_secs, a.end_secs, a.text).unwrap();
    }
    s
}

/// Parses annotation text; `source` only labels diagnostics.
pub fn parse_annotations(
    text: &str,
    source: &Path,
    videos: &BTreeMap<String, FeatureVideo>,
) -> Result<Vec<Annotation>> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    match lines.peek() {
        None => return Ok(out),
        Some((_, l)) if l.trim_end() == ANNOTATION_MAGIC => {
            lines.next();
        }
        Some(_) => return Err(bad(1, format!("missing header {ANNOTATION_MAGIC:?}"))),
    }
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, query) = line
            .split_once('\t')
            .ok_or_else(|| bad(n, "expected a tab before the query text".into()))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let [vid, start, end] = fields[..] else {
            return Err(bad(n, format!("expected `<video> <start> <end>`, got {head:?}")));
        };
        let secs = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| bad(n, format!("bad time {s:?}")))
        };
        let (start_secs, end_secs) = (secs(start)?, secs(end)?);
        if end_secs <= start_secs {
            return Err(bad(n, format!("end {end_secs} is not after start {start_secs}")));
        }
        let video = videos
            .get(vid)
            .ok_or_else(|| bad(n, format!("annotation references unknown video {vid:?}")))?;
        let s = (start_secs * video.fps).round() as usize;
        let e = ((end_secs * video.fps).round() as usize).min(video.frames);
        let gt = Window::new(s, e).map_err(|_| {
            bad(
                n,
                format!("interval [{start_secs}, {end_secs}) s is empty in frames of video {vid}"),
            )
        })?;
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return Err(bad(n, "query has no tokens".into()));
        }
        out.push(Annotation {
            video_id: vid.to_string(),
            text: query.to_string(),
            tokens,
            start_secs,
            end_secs,
            gt,
        });
    }
    Ok(out)
}

pub fn load_annotations(path: &Path, videos: &BTreeMap<String, FeatureVideo>) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path, videos)
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    for v in dataset.videos.values() {
        let p = feat_dir.join(format!("{}.feat", v.id));
        std::fs::write(&p, write_features(v)).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("annotations.txt");
    std::fs::write(&p, write_annotations(&dataset.annotations)).map_err(|e| Error::io(&p, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let feat_dir = dir.join("features");
    let entries = std::fs::read_dir(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "feat"))
        .collect();
    paths.sort();
    let mut videos = BTreeMap::new();
    for p in paths {
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let v = read_features(&bytes).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
        if videos.contains_key(&v.id) {
            return Err(Error::Data(format!("duplicate video id {:?}", v.id)));
        }
        videos.insert(v.id.clone(), v);
    }
    let annotations = load_annotations(&dir.join("annotations.txt"), &videos)?;
    let ds = Dataset { videos, annotations };
    ds.validate()?;
    Ok(ds)
}
