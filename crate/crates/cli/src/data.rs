//! Synthetic moving-shape videos with deterministic captions.
//!
//! On-disk layout of a dataset directory, all integers little-endian:
//!
//! ```text
//! header.bin
//!   magic        8 bytes  "MAMSDATA"
//!   version      u32      1
//!   n_videos     u32
//!   frames       u32
//!   height       u32
//!   width        u32
//!   vocab_len    u32
//!   vocab_len times: u32 byte length, UTF-8 word (word id = position)
//!   n_videos times:  u8 dynamics (0 = low, 1 = high)
//! v{id:05}.frames
//!   frames * height * width bytes, pixel intensity 0..=255,
//!   frame-major then row-major
//! v{id:05}.caption
//!   u32 count, then count u32 word ids (no begin/end tokens)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mams::numerics::RngState;
use mams::VideoClip;
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"MAMSDATA";
const VERSION: u32 = 1;
const DATA_TAG: u64 = 0xda7a;

pub const SPECIAL_WORDS: [&str; 3] = ["<pad>", "<cls>", "<end>"];
pub const COLORS: [(&str, u8); 3] = [("white", 255), ("silver", 180), ("gray", 110)];
pub const SHAPES: [&str; 3] = ["square", "circle", "triangle"];
pub const DIRECTIONS: [&str; 4] = ["left", "right", "up", "down"];

const GLYPH: usize = 5;
const GLYPHS: [[u8; GLYPH]; 3] = [
    [0b11111, 0b11111, 0b11111, 0b11111, 0b11111],
    [0b01110, 0b11111, 0b11111, 0b11111, 0b01110],
    [0b00100, 0b00100, 0b01110, 0b01110, 0b11111],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Low,
    High,
}

/// One motion segment: `None` stays still, `Some(d)` moves one pixel per
/// frame in direction `d` (index into [`DIRECTIONS`]).
pub type Motion = Option<usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub color: usize,
    pub shape: usize,
    pub first: Motion,
    /// Frame of the mid-video change and the motion after it.
    pub event: Option<(usize, Motion)>,
    /// Frames `[start, end)` in which the shape is drawn.
    pub visible: (usize, usize),
    /// Top-left glyph position at the first visible frame.
    pub origin: (i64, i64),
}

impl Scene {
    pub fn dynamics(&self) -> Dynamics {
        if self.event.is_some() {
            Dynamics::High
        } else {
            Dynamics::Low
        }
    }

    fn motion_at(&self, frame: usize) -> Motion {
        match self.event {
            Some((k, m)) if frame >= k => m,
            _ => self.first,
        }
    }

    /// Glyph position at `frame` (meaningful inside the visible range).
    pub fn position(&self, frame: usize) -> (i64, i64) {
        let (mut r, mut c) = self.origin;
        for f in self.visible.0..frame {
            let (dr, dc) = step(self.motion_at(f));
            r += dr;
            c += dc;
        }
        (r, c)
    }

    /// Caption words: `a <color> <shape> <verb> <direction> [then <verb> <direction>]`.
    pub fn caption(&self) -> Vec<&'static str> {
        let mut words = vec!["a", COLORS[self.color].0, SHAPES[self.shape]];
        push_motion(&mut words, self.first);
        if let Some((_, m)) = self.event {
            words.push("then");
            push_motion(&mut words, m);
        }
        words
    }

    pub fn render(&self, frames: usize, height: usize, width: usize) -> Vec<u8> {
        let mut px = vec![0u8; frames * height * width];
        let level = COLORS[self.color].1;
        for f in self.visible.0..self.visible.1.min(frames) {
            let (r0, c0) = self.position(f);
            for (dr, bits) in GLYPHS[self.shape].iter().enumerate() {
                for dc in 0..GLYPH {
                    if bits >> (GLYPH - 1 - dc) & 1 == 0 {
                        continue;
                    }
                    let (r, c) = (r0 + dr as i64, c0 + dc as i64);
                    if r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width {
                        px[(f * height + r as usize) * width + c as usize] = level;
                    }
                }
            }
        }
        px
    }
}

fn step(m: Motion) -> (i64, i64) {
    match m {
        None => (0, 0),
        Some(0) => (0, -1),
        Some(1) => (0, 1),
        Some(2) => (-1, 0),
        Some(_) => (1, 0),
    }
}

fn push_motion(words: &mut Vec<&'static str>, m: Motion) {
    match m {
        None => words.extend(["stays", "still"]),
        Some(d) => words.extend(["moves", DIRECTIONS[d]]),
    }
}

/// Generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideoSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Visible frames of a low-dynamics shape.
    pub low_window: usize,
    /// Earliest and latest event frame of a high-dynamics shape.
    pub event_range: (usize, usize),
    /// Background pixels are uniform in `0..=noise`.
    pub noise: u8,
}

impl Default for SyntheticVideoSpec {
    fn default() -> Self {
        Self {
            frames: 16,
            height: 16,
            width: 16,
            low_window: 4,
            event_range: (5, 10),
            noise: 0,
        }
    }
}

impl SyntheticVideoSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.height >= GLYPH + 2 && self.width >= GLYPH + 2, "frames too small for the glyphs");
        ensure!(self.low_window >= 2 && self.low_window <= self.frames, "low_window out of range");
        let (lo, hi) = self.event_range;
        ensure!(lo >= 1 && lo <= hi && hi < self.frames, "event_range out of range");
        let excursion = hi.max(self.frames - 1 - lo).max(self.low_window - 1);
        ensure!(
            excursion + GLYPH <= self.height.min(self.width),
            "shapes would leave the frame"
        );
        Ok(())
    }

    /// Random scene of the given dynamics level.
    pub fn sample_scene(&self, dynamics: Dynamics, rng: &mut RngState) -> Scene {
        let color = rng.below(COLORS.len());
        let shape = rng.below(SHAPES.len());
        let motion = |rng: &mut RngState| -> Motion {
            let k = rng.below(DIRECTIONS.len() + 1);
            (k < DIRECTIONS.len()).then_some(k)
        };
        let first = motion(rng);
        let (visible, event) = match dynamics {
            Dynamics::Low => {
                let start = rng.below(self.frames - self.low_window + 1);
                ((start, start + self.low_window), None)
            }
            Dynamics::High => {
                let (lo, hi) = self.event_range;
                let k = lo + rng.below(hi - lo + 1);
                let mut second = motion(rng);
                while second == first {
                    second = motion(rng);
                }
                ((0, self.frames), Some((k, second)))
            }
        };
        let mut scene = Scene {
            color,
            shape,
            first,
            event,
            visible,
            origin: (0, 0),
        };
        // Place the path so the glyph stays fully inside every frame.
        let path: Vec<(i64, i64)> = (visible.0..visible.1).map(|f| scene.position(f)).collect();
        let span = |sel: fn(&(i64, i64)) -> i64, size: usize| {
            let lo = path.iter().map(sel).min().unwrap_or(0);
            let hi = path.iter().map(sel).max().unwrap_or(0);
            let room = size as i64 - GLYPH as i64 - (hi - lo);
            (lo, room)
        };
        let (rlo, rroom) = span(|p| p.0, self.height);
        let (clo, croom) = span(|p| p.1, self.width);
        let r = rng.below(rroom as usize + 1) as i64 - rlo;
        let c = rng.below(croom as usize + 1) as i64 - clo;
        scene.origin = (r, c);
        scene
    }
}

/// Word list; the id of a word is its position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut words: Vec<String> = SPECIAL_WORDS.iter().map(|s| s.to_string()).collect();
        words.push("a".into());
        words.extend(COLORS.iter().map(|c| c.0.to_string()));
        words.extend(SHAPES.iter().map(|s| s.to_string()));
        words.extend(["moves", "stays", "then", "still"].map(String::from));
        words.extend(DIRECTIONS.iter().map(|s| s.to_string()));
        Self { words }
    }
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        ensure!(
            words.len() >= SPECIAL_WORDS.len()
                && words.iter().zip(SPECIAL_WORDS).all(|(w, s)| w == s),
            "vocabulary must start with {SPECIAL_WORDS:?}"
        );
        Ok(Self { words })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| self.id(w).with_context(|| format!("word {w:?} not in vocabulary")))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.words.get(i).map_or("<unk>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: usize,
    pub dynamics: Dynamics,
    /// `frames * height * width` intensities.
    pub pixels: Vec<u8>,
    pub caption: Vec<usize>,
}

impl Video {
    /// Intensities scaled so that byte 255 maps to `scale`.
    pub fn clip(&self, frames: usize, height: usize, width: usize, scale: f64) -> Result<VideoClip> {
        let px = self.pixels.iter().map(|&b| f64::from(b) / 255.0 * scale).collect();
        Ok(VideoClip::new(frames, height, width, px)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub vocab: Vocabulary,
    pub videos: Vec<Video>,
}

impl Dataset {
    /// `n` videos, exactly `round(n * high_fraction)` of them high-dynamics.
    pub fn generate(spec: &SyntheticVideoSpec, n: usize, high_fraction: f64, seed: u64) -> Result<Self> {
        ensure!(n >= 1, "need at least one video");
        ensure!((0.0..=1.0).contains(&high_fraction), "high_fraction must lie in [0, 1]");
        spec.validate()?;
        let n_high = (n as f64 * high_fraction).round() as usize;
        let mut labels: Vec<Dynamics> = (0..n)
            .map(|i| if i < n_high { Dynamics::High } else { Dynamics::Low })
            .collect();
        RngState::derive(seed, &[DATA_TAG, u64::MAX]).shuffle(&mut labels);
        let vocab = Vocabulary::default();
        let videos = labels
            .into_iter()
            .enumerate()
            .map(|(id, dynamics)| {
                let mut rng = RngState::derive(seed, &[DATA_TAG, id as u64]);
                let scene = spec.sample_scene(dynamics, &mut rng);
                let mut pixels = scene.render(spec.frames, spec.height, spec.width);
                if spec.noise > 0 {
                    for p in pixels.iter_mut().filter(|p| **p == 0) {
                        *p = rng.below(spec.noise as usize + 1) as u8;
                    }
                }
                Ok(Video {
                    id,
                    dynamics,
                    pixels,
                    caption: vocab.encode(&scene.caption())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            frames: spec.frames,
            height: spec.height,
            width: spec.width,
            vocab,
            videos,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn count(&self, dynamics: Dynamics) -> usize {
        self.videos.iter().filter(|v| v.dynamics == dynamics).count()
    }

    pub fn clip(&self, index: usize, scale: f64) -> Result<VideoClip> {
        self.videos[index].clip(self.frames, self.height, self.width, scale)
    }

    /// Longest caption in words.
    pub fn max_caption_len(&self) -> usize {
        self.videos.iter().map(|v| v.caption.len()).max().unwrap_or(0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut h = Vec::new();
        h.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.videos.len() as u32,
            self.frames as u32,
            self.height as u32,
            self.width as u32,
            self.vocab.len() as u32,
        ] {
            h.extend_from_slice(&v.to_le_bytes());
        }
        for w in self.vocab.words() {
            h.extend_from_slice(&(w.len() as u32).to_le_bytes());
            h.extend_from_slice(w.as_bytes());
        }
        h.extend(self.videos.iter().map(|v| u8::from(v.dynamics == Dynamics::High)));
        fs::write(dir.join("header.bin"), h)?;
        for v in &self.videos {
            fs::write(dir.join(format!("v{:05}.frames", v.id)), &v.pixels)?;
            let mut c = Vec::with_capacity(4 * (v.caption.len() + 1));
            c.extend_from_slice(&(v.caption.len() as u32).to_le_bytes());
            for &id in &v.caption {
                c.extend_from_slice(&(id as u32).to_le_bytes());
            }
            let mut f = fs::File::create(dir.join(format!("v{:05}.caption", v.id)))?;
            f.write_all(&c)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bytes = fs::read(dir.join("header.bin"))
            .with_context(|| format!("reading header in {}", dir.display()))?;
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        ensure!(&magic == MAGIC, "{} is not a dataset header", dir.display());
        let u32s = |r: &mut &[u8]| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).context("truncated header")?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = u32s(&mut r)?;
        ensure!(version == VERSION as usize, "unsupported dataset version {version}");
        let n = u32s(&mut r)?;
        let frames = u32s(&mut r)?;
        let height = u32s(&mut r)?;
        let width = u32s(&mut r)?;
        let vlen = u32s(&mut r)?;
        let mut words = Vec::with_capacity(vlen);
        for _ in 0..vlen {
            let len = u32s(&mut r)?;
            ensure!(r.len() >= len, "truncated vocabulary");
            words.push(String::from_utf8(r[..len].to_vec()).context("vocabulary is not UTF-8")?);
            r = &r[len..];
        }
        ensure!(r.len() == n, "expected {n} dynamics labels, found {}", r.len());
        let labels = r.to_vec();
        let vocab = Vocabulary::from_words(words)?;
        let mut videos = Vec::with_capacity(n);
        for (id, &label) in labels.iter().enumerate() {
            let dynamics = match label {
                0 => Dynamics::Low,
                1 => Dynamics::High,
                other => bail!("video {id}: bad dynamics label {other}"),
            };
            let pixels = fs::read(dir.join(format!("v{id:05}.frames")))?;
            ensure!(pixels.len() == frames * height * width, "video {id}: wrong frame buffer size");
            let cb = fs::read(dir.join(format!("v{id:05}.caption")))?;
            ensure!(cb.len() >= 4, "video {id}: truncated caption");
            let count = u32::from_le_bytes(cb[..4].try_into().expect("4 bytes")) as usize;
            ensure!(cb.len() == 4 + 4 * count, "video {id}: caption length mismatch");
            let caption: Vec<usize> = cb[4..]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
                .collect();
            ensure!(caption.iter().all(|&w| w < vocab.len()), "video {id}: word id out of range");
            videos.push(Video {
                id,
                dynamics,
                pixels,
                caption,
            });
        }
        Ok(Self {
            frames,
            height,
            width,
            vocab,
            videos,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_stratification() {
        let d = Dataset::generate(&SyntheticVideoSpec::default(), 200, 0.5, 7).unwrap();
        assert_eq!(d.count(Dynamics::High), 100);
        assert_eq!(d.count(Dynamics::Low), 100);
    }

    #[test]
    fn grammar_follows_dynamics() {
        let d = Dataset::generate(&SyntheticVideoSpec::default(), 60, 0.5, 1).unwrap();
        let then = d.vocab.id("then").unwrap();
        for v in &d.videos {
            let words = d.vocab.decode(&v.caption);
            assert_eq!(v.caption.contains(&then), v.dynamics == Dynamics::High, "{words}");
            assert_eq!(v.caption[0], d.vocab.id("a").unwrap());
            let expect = if v.dynamics == Dynamics::High { 8 } else { 5 };
            assert_eq!(v.caption.len(), expect, "{words}");
        }
    }

    #[test]
    fn shapes_stay_inside_and_low_dynamics_is_windowed() {
        let spec = SyntheticVideoSpec::default();
        let mut rng = RngState::new(3);
        for i in 0..500 {
            let dyn_ = if i % 2 == 0 { Dynamics::Low } else { Dynamics::High };
            let s = spec.sample_scene(dyn_, &mut rng);
            let px = s.render(spec.frames, spec.height, spec.width);
            let area: usize = GLYPHS[s.shape].iter().map(|b| b.count_ones() as usize).sum();
            for f in 0..spec.frames {
                let lit = px[f * 256..(f + 1) * 256].iter().filter(|&&p| p > 0).count();
                let shown = f >= s.visible.0 && f < s.visible.1;
                assert_eq!(lit, if shown { area } else { 0 }, "scene {s:?} frame {f}");
            }
        }
    }

    #[test]
    fn motion_matches_caption() {
        let scene = Scene {
            color: 0,
            shape: 0,
            first: Some(1),
            event: Some((3, Some(3))),
            visible: (0, 6),
            origin: (2, 2),
        };
        assert_eq!(scene.position(3), (2, 5));
        assert_eq!(scene.position(5), (4, 5));
        assert_eq!(
            scene.caption(),
            vec!["a", "white", "square", "moves", "right", "then", "moves", "down"]
        );
    }

    #[test]
    fn round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let a = Dataset::generate(&SyntheticVideoSpec::default(), 12, 0.5, 9).unwrap();
        a.save(&dir.path().join("a")).unwrap();
        a.save(&dir.path().join("b")).unwrap();
        let back = Dataset::load(&dir.path().join("a")).unwrap();
        assert_eq!(back, a);
        for name in ["header.bin", "v00003.frames", "v00011.caption"] {
            let x = fs::read(dir.path().join("a").join(name)).unwrap();
            let y = fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(x, y);
        }
    }
}
