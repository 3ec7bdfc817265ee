//! Contrast-threshold event simulation from intensity frames, and a
//! synthetic person re-identification corpus small enough for desk-scale
//! training.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{self, Event, EventStream, GrayImage, Micros, Polarity};

/// Offset inside the log transform so that black pixels stay finite.
pub const LOG_EPS: f64 = 1e-3;
pub const DEFAULT_CONTRAST: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<GrayImage>,
    pub timestamps: Vec<Micros>,
    pub camera: usize,
    pub identity: usize,
}

impl FrameSequence {
    pub fn new(
        frames: Vec<GrayImage>,
        timestamps: Vec<Micros>,
        camera: usize,
        identity: usize,
    ) -> Result<Self> {
        if frames.len() != timestamps.len() {
            return Err(Error::invalid(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "frame timestamps must be strictly increasing",
            ));
        }
        if let Some(first) = frames.first() {
            let dims = (first.height(), first.width());
            if frames.iter().any(|f| (f.height(), f.width()) != dims) {
                return Err(Error::invalid("all frames must share one geometry"));
            }
        }
        Ok(Self {
            frames,
            timestamps,
            camera,
            identity,
        })
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, GrayImage::height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, GrayImage::width)
    }

    /// Frame shown at `t`, if one has exactly that timestamp.
    pub fn frame_at(&self, t: Micros) -> Option<&GrayImage> {
        self.timestamps
            .binary_search(&t)
            .ok()
            .map(|i| &self.frames[i])
    }
}

/// Simulate events with contrast threshold `contrast` on `log(I + LOG_EPS)`.
pub fn simulate_events(seq: &FrameSequence, contrast: f64) -> Result<EventStream> {
    let logs: Vec<Vec<f64>> = seq
        .frames
        .iter()
        .map(|f| f.pixels().iter().map(|v| (v + LOG_EPS).ln()).collect())
        .collect();
    simulate_log_frames(seq.width(), seq.height(), &logs, &seq.timestamps, contrast)
}

/// Event generation on precomputed log-intensity frames.
///
/// Each pixel keeps a reference level, initialised from the first frame.
/// Whenever the linearly interpolated log intensity moves a full `contrast`
/// away from the reference, an event fires at the interpolated crossing time
/// and the reference steps by `contrast` towards the signal.
pub fn simulate_log_frames(
    width: usize,
    height: usize,
    log_frames: &[Vec<f64>],
    timestamps: &[Micros],
    contrast: f64,
) -> Result<EventStream> {
    if !(contrast > 0.0 && contrast.is_finite()) {
        return Err(Error::invalid(format!(
            "contrast threshold must be positive, got {contrast}"
        )));
    }
    if log_frames.len() != timestamps.len() {
        return Err(Error::invalid("log frames and timestamps differ in length"));
    }
    if log_frames.iter().any(|f| f.len() != width * height) {
        return Err(Error::invalid("log frame does not match sensor geometry"));
    }
    if log_frames.len() < 2 {
        return Ok(EventStream::empty(width.max(1), height.max(1)));
    }

    let mut events = Vec::new();
    for pix in 0..width * height {
        let (x, y) = ((pix % width) as u32, (pix / width) as u32);
        let base = log_frames[0][pix];
        // Reference level is base + steps * contrast.
        let mut steps: i64 = 0;
        for k in 1..log_frames.len() {
            let (la, lb) = (log_frames[k - 1][pix], log_frames[k][pix]);
            let (ta, tb) = (timestamps[k - 1], timestamps[k]);
            if lb == la {
                continue;
            }
            let crossing_time = |level: f64| -> Micros {
                let frac = (level - la) / (lb - la);
                ta + (frac * (tb - ta) as f64).round() as Micros
            };
            if lb > la {
                loop {
                    let level = base + (steps + 1) as f64 * contrast;
                    if level > lb {
                        break;
                    }
                    steps += 1;
                    events.push(Event::new(crossing_time(level), x, y, Polarity::Positive));
                }
            } else {
                loop {
                    let level = base + (steps - 1) as f64 * contrast;
                    if level < lb {
                        break;
                    }
                    steps -= 1;
                    events.push(Event::new(crossing_time(level), x, y, Polarity::Negative));
                }
            }
        }
    }
    events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
    Ok(EventStream::from_parts_unchecked(width, height, events))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub num_ids: usize,
    /// Identities held out for testing; defaults to half of `num_ids`.
    pub num_test_ids: Option<usize>,
    pub cameras: usize,
    pub frames_per_seq: usize,
    pub height: usize,
    pub width: usize,
    pub frame_interval_us: Micros,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_ids: 24,
            num_test_ids: Some(8),
            cameras: 2,
            frames_per_seq: 37,
            height: 48,
            width: 64,
            frame_interval_us: 10_000,
            seed: 7,
        }
    }
}

pub const SPRITE_HEIGHT: usize = 32;
pub const SPRITE_WIDTH: usize = 16;
const BOB_AMPLITUDE: f64 = 1.0;
const MIN_APPEARANCE_DISTANCE: f64 = 0.6;
const MAX_REDRAWS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub train: Vec<FrameSequence>,
    pub test: Vec<FrameSequence>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub cameras: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl ToyCorpus {
    pub fn sequences(&self) -> impl Iterator<Item = (&'static str, &FrameSequence)> {
        self.train
            .iter()
            .map(|s| ("train", s))
            .chain(self.test.iter().map(|s| ("test", s)))
    }
}

/// Per-identity appearance: a coarse head/torso/legs figure with a torso
/// texture.
#[derive(Debug, Clone, Copy)]
struct Appearance {
    head: f64,
    torso: f64,
    torso_alt: f64,
    pattern: u8,
    period: usize,
    legs: f64,
}

impl Appearance {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let torso: f64 = rng.random_range(0.05..0.95);
        // Keep the torso texture visible: its two tones differ by at least 0.3.
        let torso_alt = loop {
            let v: f64 = rng.random_range(0.05..0.95);
            if (v - torso).abs() >= 0.3 {
                break v;
            }
        };
        Self {
            head: rng.random_range(0.55..0.85),
            torso,
            torso_alt,
            pattern: rng.random_range(0..4),
            period: rng.random_range(2..6),
            legs: rng.random_range(0.05..0.95),
        }
    }

    /// Dissimilarity of two appearances: tone differences plus penalties for
    /// a different torso pattern or stripe period.
    fn distance(&self, other: &Appearance) -> f64 {
        (self.head - other.head).abs()
            + (self.torso - other.torso).abs()
            + (self.torso_alt - other.torso_alt).abs()
            + (self.legs - other.legs).abs()
            + if self.pattern == other.pattern {
                0.0
            } else {
                0.5
            }
            + 0.1 * (self.period as f64 - other.period as f64).abs()
    }

    /// Intensity at sprite coordinate (u, v), or `None` when transparent.
    fn texel(&self, u: usize, v: usize) -> Option<f64> {
        let (w, h) = (SPRITE_WIDTH, SPRITE_HEIGHT);
        let head_rows = h / 4;
        let torso_rows = head_rows + (h * 3) / 8;
        if v < head_rows {
            (u >= w / 4 && u < w - w / 4).then_some(self.head)
        } else if v < torso_rows {
            let (a, b) = (self.torso, self.torso_alt);
            let p = self.period;
            Some(match self.pattern {
                0 => {
                    if ((u + v) / p) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
                1 => {
                    if ((v - head_rows) / p) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
                2 => {
                    if (u / p) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
                _ => {
                    if ((u / p) + ((v - head_rows) / p)) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
            })
        } else {
            (u != w / 2 && u != w / 2 - 1 && u >= 1 && u < w - 1).then_some(self.legs)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CameraView {
    bg_base: f64,
    bg_slope_x: f64,
    bg_slope_y: f64,
    gain: f64,
}

#[derive(Debug, Clone, Copy)]
struct Trajectory {
    x_start: f64,
    velocity: f64,
    y_base: f64,
    /// Vertical gait bob: amplitude in pixels, period in frames, phase.
    bob: f64,
    bob_period: f64,
    bob_phase: f64,
}

impl Trajectory {
    fn position(&self, k: usize) -> (f64, f64) {
        let angle = std::f64::consts::TAU * k as f64 / self.bob_period + self.bob_phase;
        (
            self.x_start + self.velocity * k as f64,
            self.y_base + self.bob * angle.sin(),
        )
    }
}

/// Generate a seeded toy corpus. Every identity appears once per camera;
/// the last `num_test_ids` identities form the test split.
pub fn generate_toy_corpus(cfg: &CorpusConfig) -> Result<ToyCorpus> {
    if cfg.num_ids < 4 {
        return Err(Error::invalid("toy corpus needs at least 4 identities"));
    }
    if cfg.cameras < 2 {
        return Err(Error::invalid("toy corpus needs at least 2 cameras"));
    }
    if cfg.frames_per_seq < 2 {
        return Err(Error::invalid("sequences need at least 2 frames"));
    }
    if cfg.frame_interval_us == 0 {
        return Err(Error::invalid("frame interval must be positive"));
    }
    if cfg.height < SPRITE_HEIGHT + 6 || cfg.width < SPRITE_WIDTH + 8 {
        return Err(Error::invalid(format!(
            "geometry {}x{} too small for a {}x{} sprite",
            cfg.width, cfg.height, SPRITE_WIDTH, SPRITE_HEIGHT
        )));
    }
    let num_test = cfg.num_test_ids.unwrap_or(cfg.num_ids / 2);
    if num_test == 0 || num_test >= cfg.num_ids {
        return Err(Error::invalid(
            "test split must hold between 1 and num_ids - 1 identities",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cams: Vec<CameraView> = (0..cfg.cameras)
        .map(|c| CameraView {
            bg_base: rng.random_range(0.4..0.5),
            bg_slope_x: rng.random_range(-0.15..0.15),
            bg_slope_y: rng.random_range(-0.1..0.1),
            gain: if c % 2 == 0 {
                1.0
            } else {
                rng.random_range(0.8..0.95)
            },
        })
        .collect();
    let mut looks: Vec<Appearance> = Vec::with_capacity(cfg.num_ids);
    while looks.len() < cfg.num_ids {
        // Redraw look-alikes a bounded number of times.
        let mut look = Appearance::sample(&mut rng);
        for _ in 0..MAX_REDRAWS {
            if looks
                .iter()
                .all(|o| o.distance(&look) >= MIN_APPEARANCE_DISTANCE)
            {
                break;
            }
            look = Appearance::sample(&mut rng);
        }
        looks.push(look);
    }

    let span = (cfg.frames_per_seq - 1) as f64;
    let room = (cfg.width - SPRITE_WIDTH) as f64;
    let num_train = cfg.num_ids - num_test;
    let mut corpus = ToyCorpus {
        train: Vec::new(),
        test: Vec::new(),
        train_ids: (0..num_train).collect(),
        test_ids: (num_train..cfg.num_ids).collect(),
        cameras: (0..cfg.cameras).collect(),
        height: cfg.height,
        width: cfg.width,
    };
    for (id, look) in looks.iter().enumerate() {
        for (cam_idx, cam) in cams.iter().enumerate() {
            let speed = rng.random_range(0.8..1.6f64).min(room * 0.9 / span);
            let travel = speed * span;
            let offset = rng.random_range(0.0..(room - travel).max(0.0) + f64::EPSILON);
            let (x_start, velocity) = if cam_idx % 2 == 0 {
                (offset, speed)
            } else {
                (offset + travel, -speed)
            };
            let bob = BOB_AMPLITUDE;
            let traj = Trajectory {
                x_start,
                velocity,
                y_base: rng
                    .random_range(1.0 + bob..(cfg.height - SPRITE_HEIGHT) as f64 - 1.0 - bob),
                bob,
                bob_period: rng.random_range(6.0..10.0),
                bob_phase: rng.random_range(0.0..std::f64::consts::TAU),
            };
            let frames = (0..cfg.frames_per_seq)
                .map(|k| {
                    let (x, y) = traj.position(k);
                    render_frame(cfg, cam, look, x, y)
                })
                .collect::<Result<Vec<_>>>()?;
            let timestamps = (0..cfg.frames_per_seq as u64)
                .map(|k| k * cfg.frame_interval_us)
                .collect();
            let seq = FrameSequence::new(frames, timestamps, cam_idx, id)?;
            if id < num_train {
                corpus.train.push(seq);
            } else {
                corpus.test.push(seq);
            }
        }
    }
    Ok(corpus)
}

fn render_frame(
    cfg: &CorpusConfig,
    cam: &CameraView,
    look: &Appearance,
    x_left: f64,
    y_top: f64,
) -> Result<GrayImage> {
    let (h, w) = (cfg.height, cfg.width);
    let background = |x: usize, y: usize| {
        cam.bg_base
            + cam.bg_slope_x * (x as f64 / w as f64 - 0.5)
            + cam.bg_slope_y * (y as f64 / h as f64 - 0.5)
    };
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let bg = background(x, y);
            // Bilinear resampling of the sprite composited over the background.
            let (u, v) = (x as f64 - x_left, y as f64 - y_top);
            let (u0, v0) = (u.floor(), v.floor());
            let (fu, fv) = (u - u0, v - v0);
            let texel = |ui: f64, vi: f64| -> f64 {
                if ui < 0.0 || vi < 0.0 || ui >= SPRITE_WIDTH as f64 || vi >= SPRITE_HEIGHT as f64 {
                    bg
                } else {
                    look.texel(ui as usize, vi as usize).unwrap_or(bg)
                }
            };
            let value = (1.0 - fv) * ((1.0 - fu) * texel(u0, v0) + fu * texel(u0 + 1.0, v0))
                + fv * ((1.0 - fu) * texel(u0, v0 + 1.0) + fu * texel(u0 + 1.0, v0 + 1.0));
            let lit = (cam.gain * value).clamp(0.0, 1.0);
            // Quantise to 8 bits so frames survive the graymap format exactly.
            pixels.push((lit * 255.0).round() / 255.0);
        }
    }
    GrayImage::new(h, w, pixels)
}

fn sequence_dir(root: &Path, split: &str, seq: &FrameSequence) -> PathBuf {
    root.join(split)
        .join(seq.identity.to_string())
        .join(seq.camera.to_string())
        .join("0")
}

const MANIFEST: &str = "manifest.txt";

/// Write the corpus as `<split>/<id>/<cam>/<seq>/frame_%04d.pgm` plus
/// `timestamps.txt` per sequence and a top-level manifest.
pub fn write_corpus(corpus: &ToyCorpus, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# evanon toy corpus");
    let _ = writeln!(manifest, "height = {}", corpus.height);
    let _ = writeln!(manifest, "width = {}", corpus.width);
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let _ = writeln!(manifest, "cameras = {}", join(&corpus.cameras));
    let _ = writeln!(manifest, "train = {}", join(&corpus.train_ids));
    let _ = writeln!(manifest, "test = {}", join(&corpus.test_ids));
    for (split, seq) in corpus.sequences() {
        let dir = sequence_dir(root, split, seq);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, frame) in seq.frames.iter().enumerate() {
            event::write_gray(frame, dir.join(format!("frame_{k:04}.pgm")))?;
        }
        let ts: String = seq.timestamps.iter().map(|t| format!("{t}\n")).collect();
        let ts_path = dir.join("timestamps.txt");
        fs::write(&ts_path, ts).map_err(|e| Error::io(&ts_path, e))?;
        let _ = writeln!(
            manifest,
            "sequence = {split} {} {} 0",
            seq.identity, seq.camera
        );
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn read_corpus(root: impl AsRef<Path>) -> Result<ToyCorpus> {
    let root = root.as_ref();
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.clone(),
        line,
        msg,
    };
    let ids = |line: usize, v: &str| -> Result<Vec<usize>> {
        v.split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| err(line, format!("bad integer `{s}`")))
            })
            .collect()
    };
    let mut corpus = ToyCorpus {
        train: Vec::new(),
        test: Vec::new(),
        train_ids: Vec::new(),
        test_ids: Vec::new(),
        cameras: Vec::new(),
        height: 0,
        width: 0,
    };
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(lineno, format!("expected `key = value`, got `{line}`")))?;
        match key {
            "height" => corpus.height = ids(lineno, value)?.first().copied().unwrap_or(0),
            "width" => corpus.width = ids(lineno, value)?.first().copied().unwrap_or(0),
            "cameras" => corpus.cameras = ids(lineno, value)?,
            "train" => corpus.train_ids = ids(lineno, value)?,
            "test" => corpus.test_ids = ids(lineno, value)?,
            "sequence" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [split, id, cam, _seq] = parts.as_slice() else {
                    return Err(err(lineno, format!("bad sequence entry `{value}`")));
                };
                let identity: usize = id
                    .parse()
                    .map_err(|_| err(lineno, format!("bad id `{id}`")))?;
                let camera: usize = cam
                    .parse()
                    .map_err(|_| err(lineno, format!("bad camera `{cam}`")))?;
                let seq = read_sequence(root, split, identity, camera)?;
                match *split {
                    "train" => corpus.train.push(seq),
                    "test" => corpus.test.push(seq),
                    other => return Err(err(lineno, format!("unknown split `{other}`"))),
                }
            }
            other => return Err(err(lineno, format!("unknown manifest key `{other}`"))),
        }
    }
    Ok(corpus)
}

fn read_sequence(
    root: &Path,
    split: &str,
    identity: usize,
    camera: usize,
) -> Result<FrameSequence> {
    let dir = root
        .join(split)
        .join(identity.to_string())
        .join(camera.to_string())
        .join("0");
    let ts_path = dir.join("timestamps.txt");
    let text = fs::read_to_string(&ts_path).map_err(|e| Error::io(&ts_path, e))?;
    let timestamps = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<Micros>().map_err(|_| Error::Parse {
                path: ts_path.clone(),
                line: i + 1,
                msg: format!("bad timestamp `{l}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = (0..timestamps.len())
        .map(|k| event::read_gray(dir.join(format!("frame_{k:04}.pgm"))))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, timestamps, camera, identity)
}

/// Path of the simulated event file for a sequence inside a corpus tree.
pub fn events_path(root: impl AsRef<Path>, split: &str, seq: &FrameSequence) -> PathBuf {
    sequence_dir(root.as_ref(), split, seq).join("events.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel(levels: &[f64], times: &[Micros], c: f64) -> EventStream {
        let logs: Vec<Vec<f64>> = levels.iter().map(|&l| vec![l]).collect();
        simulate_log_frames(1, 1, &logs, times, c).unwrap()
    }

    #[test]
    fn linear_ramp_crosses_two_levels() {
        let s = single_pixel(&[0.0, 0.5], &[0, 10_000], 0.2);
        let ts: Vec<_> = s.events().iter().map(|e| (e.t, e.p)).collect();
        assert_eq!(
            ts,
            vec![(4_000, Polarity::Positive), (8_000, Polarity::Positive)]
        );
    }

    #[test]
    fn mirrored_ramp_flips_polarity() {
        let up = single_pixel(&[0.0, 0.5, 0.1], &[0, 10_000, 20_000], 0.2);
        let down = single_pixel(&[0.0, -0.5, -0.1], &[0, 10_000, 20_000], 0.2);
        assert_eq!(up.len(), down.len());
        for (a, b) in up.events().iter().zip(down.events()) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.p, b.p.flipped());
        }
    }

    #[test]
    fn constant_frames_are_silent() {
        let img = GrayImage::filled(4, 5, 0.4).unwrap();
        let seq =
            FrameSequence::new(vec![img.clone(), img.clone(), img], vec![0, 5, 10], 0, 0).unwrap();
        assert!(simulate_events(&seq, 0.2).unwrap().is_empty());
    }

    #[test]
    fn single_frame_gives_empty_stream() {
        let img = GrayImage::filled(4, 5, 0.4).unwrap();
        let seq = FrameSequence::new(vec![img], vec![0], 0, 0).unwrap();
        assert!(simulate_events(&seq, 0.2).unwrap().is_empty());
    }

    #[test]
    fn intensity_frames_use_log_transform() {
        // Exact log levels -1.0 -> -0.5 mirror the 0 -> 0.5 ramp.
        let a = GrayImage::new(1, 1, vec![(-1.0f64).exp() - LOG_EPS]).unwrap();
        let b = GrayImage::new(1, 1, vec![(-0.5f64).exp() - LOG_EPS]).unwrap();
        let seq = FrameSequence::new(vec![a, b], vec![0, 10_000], 0, 0).unwrap();
        let s = simulate_events(&seq, 0.2).unwrap();
        let ts: Vec<_> = s.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![4_000, 8_000]);
    }

    #[test]
    fn rejects_non_positive_threshold() {
        assert!(simulate_log_frames(1, 1, &[vec![0.0], vec![1.0]], &[0, 1], 0.0).is_err());
    }

    #[test]
    fn corpus_is_deterministic_and_split() {
        let cfg = CorpusConfig {
            num_ids: 16,
            num_test_ids: None,
            seed: 7,
            frames_per_seq: 5,
            ..CorpusConfig::default()
        };
        let a = generate_toy_corpus(&cfg).unwrap();
        let b = generate_toy_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len() + a.test.len(), 32);
        assert!(a.train_ids.iter().all(|id| !a.test_ids.contains(id)));
        assert!(a.train.iter().all(|s| a.train_ids.contains(&s.identity)));
        assert!(a.test.iter().all(|s| a.test_ids.contains(&s.identity)));
        let other = generate_toy_corpus(&CorpusConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn corpus_rejects_bad_geometry_and_sizes() {
        let base = CorpusConfig::default();
        assert!(generate_toy_corpus(&CorpusConfig {
            height: 30,
            ..base.clone()
        })
        .is_err());
        assert!(generate_toy_corpus(&CorpusConfig {
            num_ids: 3,
            num_test_ids: None,
            ..base.clone()
        })
        .is_err());
        assert!(generate_toy_corpus(&CorpusConfig {
            cameras: 1,
            ..base.clone()
        })
        .is_err());
    }

    #[test]
    fn smallest_accepted_geometry_generates() {
        let base = CorpusConfig {
            num_ids: 4,
            num_test_ids: Some(2),
            frames_per_seq: 3,
            ..CorpusConfig::default()
        };
        for (height, width) in [
            (SPRITE_HEIGHT + 6, SPRITE_WIDTH + 8),
            (SPRITE_HEIGHT + 5, 64),
        ] {
            let cfg = CorpusConfig {
                height,
                width,
                ..base.clone()
            };
            assert_eq!(
                generate_toy_corpus(&cfg).is_ok(),
                height >= SPRITE_HEIGHT + 6
            );
        }
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let cfg = CorpusConfig {
            num_ids: 4,
            num_test_ids: None,
            frames_per_seq: 3,
            ..CorpusConfig::default()
        };
        let corpus = generate_toy_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        assert!(dir.path().join("train/0/1/0/frame_0002.pgm").exists());
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back, corpus);
    }
}
