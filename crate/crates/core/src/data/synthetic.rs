//! Planted-clip synthetic videos.
//!
//! Each video is Gaussian background noise. One interval (the target) has
//! its features shifted along a direction determined by the query tokens;
//! optional distractor intervals are shifted along the direction of some
//! other query, so finding the target requires reading the query.
//!
//! A token's direction is a small set of channels picked by hashing the
//! token string; a query's direction is the normalized sum over its
//! tokens. Directions are non-negative, like post-ReLU conv activations.
//! Queries come from a fixed pool, so the same query recurs across videos
//! at unrelated positions.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Annotation, Dataset, FeatureVideo};
use crate::env::Window;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub frames: usize,
    pub fps: f64,
    pub dim: usize,
    pub vocab_size: usize,
    pub clip_mean: usize,
    /// Clip lengths are uniform in `clip_mean ± clip_jitter`.
    pub clip_jitter: usize,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub query_len: usize,
    /// Number of distinct queries clips draw from; 0 draws a fresh query
    /// for every clip.
    pub query_pool: usize,
    pub channels_per_token: usize,
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_videos: 200,
            frames: 200,
            fps: 24.0,
            dim: 16,
            vocab_size: 32,
            clip_mean: 40,
            clip_jitter: 8,
            signal_strength: 1.0,
            noise_scale: 0.5,
            query_len: 3,
            query_pool: 16,
            channels_per_token: 2,
            distractors: 1,
            seed: 7,
        }
    }
}

/// Largest cosine allowed between a distractor and the target direction.
const MAX_DISTRACTOR_COS: f64 = 0.5;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_videos == 0 || self.frames == 0 || self.dim == 0 {
            return fail("num_videos, frames and dim must be positive".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        if self.clip_mean == 0 || self.clip_mean >= self.frames {
            return fail(format!("clip_mean {} must be in [1, frames)", self.clip_mean));
        }
        if self.clip_jitter >= self.clip_mean || self.clip_mean + self.clip_jitter > self.frames {
            return fail(format!("clip_jitter {} too large", self.clip_jitter));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return fail("signal_strength must be non-negative".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail("noise_scale must be non-negative".into());
        }
        if self.query_len == 0 || self.query_len > self.vocab_size {
            return fail(format!("query_len {} must be in [1, vocab_size]", self.query_len));
        }
        if self.channels_per_token == 0 || self.channels_per_token > self.dim {
            return fail(format!("channels_per_token {} must be in [1, dim]", self.channels_per_token));
        }
        Ok(())
    }

    pub fn token(i: usize) -> String {
        format!("w{i:02}")
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unit-free direction of one token: ones on hashed channels.
pub fn token_direction(token: &str, dim: usize, channels: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token));
    let mut v = vec![0.0; dim];
    for c in sample(&mut rng, dim, channels.min(dim)) {
        v[c] = 1.0;
    }
    v
}

/// Normalized sum of token directions.
pub fn query_direction(tokens: &[String], dim: usize, channels: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for t in tokens {
        for (a, b) in v.iter_mut().zip(token_direction(t, dim, channels)) {
            *a += b;
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn fresh_query(spec: &SyntheticSpec, rng: &mut impl Rng) -> Vec<String> {
    sample(rng, spec.vocab_size, spec.query_len)
        .into_iter()
        .map(SyntheticSpec::token)
        .collect()
}

fn draw_query(spec: &SyntheticSpec, pool: &[Vec<String>], rng: &mut impl Rng) -> Vec<String> {
    if pool.is_empty() {
        fresh_query(spec, rng)
    } else {
        pool[rng.random_range(0..pool.len())].clone()
    }
}

fn clip_len(spec: &SyntheticSpec, rng: &mut impl Rng) -> usize {
    let j = spec.clip_jitter as i64;
    let d = if j == 0 { 0 } else { rng.random_range(-j..=j) };
    (spec.clip_mean as i64 + d) as usize
}

/// Starts for a clip of length `len` that keep at least `gap` frames away
/// from every interval in `taken`.
fn free_starts(frames: usize, len: usize, gap: usize, taken: &[Window]) -> Vec<usize> {
    (0..=frames - len)
        .filter(|&s| {
            taken
                .iter()
                .all(|w| s + len + gap <= w.start() || s >= w.end() + gap)
        })
        .collect()
}

/// Generates `spec.num_videos` videos with one annotation each. Output is a
/// pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut videos = BTreeMap::new();
    let mut annotations = Vec::with_capacity(spec.num_videos);
    let d = spec.dim;
    let pool: Vec<Vec<String>> = (0..spec.query_pool).map(|_| fresh_query(spec, &mut rng)).collect();
    for vi in 0..spec.num_videos {
        let id = format!("syn{vi:04}");
        let tokens = draw_query(spec, &pool, &mut rng);
        let dir = query_direction(&tokens, d, spec.channels_per_token);
        let len = clip_len(spec, &mut rng);
        let start = rng.random_range(0..=spec.frames - len);
        let gt = Window::new(start, start + len)?;

        let mut planted = vec![(gt, dir.clone())];
        let mut taken = vec![gt];
        for _ in 0..spec.distractors {
            let other = (0..100)
                .map(|_| draw_query(spec, &pool, &mut rng))
                .map(|q| query_direction(&q, d, spec.channels_per_token))
                .find(|v| v.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() <= MAX_DISTRACTOR_COS);
            let dlen = clip_len(spec, &mut rng);
            let starts = free_starts(spec.frames, dlen, spec.clip_mean, &taken);
            match (other, starts.is_empty()) {
                (Some(v), false) => {
                    let s = starts[rng.random_range(0..starts.len())];
                    let w = Window::new(s, s + dlen)?;
                    taken.push(w);
                    planted.push((w, v));
                }
                _ => log::debug!("{id}: no room for a distractor"),
            }
        }

        let mut feats = Vec::with_capacity(spec.frames * d);
        for f in 0..spec.frames {
            let mut row: Vec<f64> = (0..d)
                .map(|_| spec.noise_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for (w, v) in &planted {
                if f >= w.start() && f < w.end() {
                    for (r, x) in row.iter_mut().zip(v) {
                        *r += spec.signal_strength * x;
                    }
                }
            }
            feats.extend(row.into_iter().map(|x| x as f32));
        }
        let video = FeatureVideo::new(id.clone(), spec.frames, spec.fps, 1, d, feats)?;
        annotations.push(Annotation {
            video_id: id.clone(),
            text: tokens.join(" "),
            tokens,
            start_secs: gt.start() as f64 / spec.fps,
            end_secs: gt.end() as f64 / spec.fps,
            gt,
        });
        videos.insert(id, video);
    }
    Ok(Dataset { videos, annotations })
}
