//! Videos, annotations, vocabularies and dataset splits.

mod format;
mod synthetic;

pub use format::{
    load_annotations, load_dataset, parse_annotations, read_features, save_dataset, write_annotations,
    write_features, ANNOTATION_MAGIC, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synthetic::{generate_synthetic, query_direction, token_direction, SyntheticSpec};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Timeline, Window};
use crate::error::{Error, Result};

/// Per-unit feature vectors standing in for video frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVideo {
    pub id: String,
    pub frames: usize,
    pub fps: f64,
    pub unit_len: usize,
    dim: usize,
    /// `units x dim`, row-major.
    features: Vec<f32>,
}

impl FeatureVideo {
    pub fn new(id: impl Into<String>, frames: usize, fps: f64, unit_len: usize, dim: usize, features: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if frames == 0 || unit_len == 0 || dim == 0 {
            return Err(Error::Data(format!("video {id}: frames, unit length and dim must be positive")));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Data(format!("video {id}: bad fps {fps}")));
        }
        let units = frames.div_ceil(unit_len);
        if features.len() != units * dim {
            return Err(Error::Data(format!(
                "video {id}: expected {units}x{dim} features, got {} values",
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("video {id}: non-finite feature in unit {}", i / dim)));
        }
        Ok(Self {
            id,
            frames,
            fps,
            unit_len,
            dim,
            features,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_units(&self) -> usize {
        self.frames.div_ceil(self.unit_len)
    }

    pub fn unit(&self, u: usize) -> &[f32] {
        &self.features[u * self.dim..(u + 1) * self.dim]
    }

    pub fn raw_features(&self) -> &[f32] {
        &self.features
    }

    pub fn timeline(&self) -> Timeline {
        Timeline {
            frames: self.frames,
            fps: self.fps,
            unit_len: self.unit_len,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames as f64 / self.fps
    }
}

/// A query sentence grounded to a frame interval of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub video_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub start_secs: f64,
    pub end_secs: f64,
    pub gt: Window,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token ids with `0` reserved for unknown words.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;
const VOCAB_MAGIC: &str = "# tripnet-vocab v1";

impl Vocab {
    /// Builds a vocabulary from the given annotations; ids follow sorted
    /// token order so they are stable for a fixed split.
    pub fn build<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> Self {
        let set: BTreeSet<&str> = annotations
            .into_iter()
            .flat_map(|a| a.tokens.iter().map(String::as_str))
            .collect();
        Self::from_tokens(set.into_iter().map(str::to_string))
    }

    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(words.into_iter().filter(|w| w != UNK));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{VOCAB_MAGIC}\n");
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(VOCAB_MAGIC) {
            return Err(Error::Data("vocabulary file lacks header".into()));
        }
        let mut words = lines.map(str::to_string);
        if words.next().as_deref() != Some(UNK) {
            return Err(Error::Data("vocabulary must start with <unk>".into()));
        }
        Ok(Self::from_tokens(words))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Videos plus their annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub videos: BTreeMap<String, FeatureVideo>,
    pub annotations: Vec<Annotation>,
}

impl Dataset {
    pub fn video(&self, id: &str) -> Result<&FeatureVideo> {
        self.videos
            .get(id)
            .ok_or_else(|| Error::Data(format!("unknown video {id:?}")))
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.values().next().map(FeatureVideo::dim)
    }

    /// Checks every annotation against its video.
    pub fn validate(&self) -> Result<()> {
        let dims: BTreeSet<usize> = self.videos.values().map(FeatureVideo::dim).collect();
        if dims.len() > 1 {
            return Err(Error::Data(format!("mixed feature dimensions {dims:?}")));
        }
        for a in &self.annotations {
            let v = self.video(&a.video_id)?;
            if a.gt.end() > v.frames {
                return Err(Error::Data(format!(
                    "annotation {:?} ends at frame {} beyond video length {}",
                    a.text,
                    a.gt.end(),
                    v.frames
                )));
            }
        }
        Ok(())
    }

    /// Subset holding only the given annotations (videos shared).
    pub fn with_annotations(&self, annotations: Vec<Annotation>) -> Self {
        let ids: BTreeSet<&str> = annotations.iter().map(|a| a.video_id.as_str()).collect();
        let videos = self
            .videos
            .iter()
            .filter(|(k, _)| ids.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self { videos, annotations }
    }
}

/// `round(mean(gt length))`, at least one frame.
pub fn mean_clip_length(train: &[Annotation]) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::Data("cannot take mean clip length of no annotations".into()));
    }
    let total: usize = train.iter().map(|a| a.gt.len()).sum();
    Ok(((total as f64 / train.len() as f64).round() as usize).max(1))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Annotation>,
    pub val: Vec<Annotation>,
    pub test: Vec<Annotation>,
}

/// Seeded shuffle of videos, then a cut by the given fractions. All
/// annotations of a video land in the same split.
pub fn split_fractional(annotations: &[Annotation], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut ids: Vec<&str> = annotations
        .iter()
        .map(|a| a.video_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let wanted = fractions.iter().filter(|&&f| f > 0.0).count();
    if ids.len() < wanted {
        return Err(Error::Data(format!(
            "{} videos cannot fill {wanted} non-empty splits",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = split_counts(ids.len(), fractions);
    let mut which: HashMap<&str, usize> = HashMap::new();
    let mut pos = 0;
    for (k, &c) in counts.iter().enumerate() {
        for id in &ids[pos..pos + c] {
            which.insert(id, k);
        }
        pos += c;
    }
    let mut out = Split::default();
    for a in annotations {
        match which[a.video_id.as_str()] {
            0 => out.train.push(a.clone()),
            1 => out.val.push(a.clone()),
            _ => out.test.push(a.clone()),
        }
    }
    Ok(out)
}

/// Largest-remainder apportionment; every non-zero fraction gets a video.
fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = exact[k].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[k] > 0.0 {
            counts[k] += 1;
            left -= 1;
        }
    }
    for k in 0..3 {
        if fractions[k] > 0.0 && counts[k] == 0 {
            let donor = (0..3).max_by_key(|&i| counts[i]).unwrap();
            counts[donor] -= 1;
            counts[k] += 1;
        }
    }
    counts
}
