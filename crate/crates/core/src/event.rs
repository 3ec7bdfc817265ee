//! Event-stream data model, temporal windowing, voxel-grid encoding and the
//! on-disk event / graymap formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Timestamps are integer microseconds.
pub type Micros = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Negative => Polarity::Positive,
            Polarity::Positive => Polarity::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: Micros,
    pub x: u32,
    pub y: u32,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: Micros, x: u32, y: u32, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

/// A time-ordered stream of events from a `width` x `height` sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidStream(format!(
                "sensor geometry must be non-empty, got {width}x{height}"
            )));
        }
        let stream = Self {
            width,
            height,
            events,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Callers guarantee the stream invariants.
    pub(crate) fn from_parts_unchecked(width: usize, height: usize, events: Vec<Event>) -> Self {
        debug_assert!(Self {
            width,
            height,
            events: events.clone()
        }
        .validate()
        .is_ok());
        Self {
            width,
            height,
            events,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.x as usize >= self.width || e.y as usize >= self.height {
                return Err(Error::InvalidStream(format!(
                    "event {i} at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, self.width, self.height
                )));
            }
            if e.t < last {
                return Err(Error::InvalidStream(format!(
                    "event {i} has timestamp {} before previous {last}",
                    e.t
                )));
            }
            last = e.t;
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn net_polarity(&self) -> i64 {
        self.events.iter().map(|e| e.p.sign() as i64).sum()
    }
}

/// `bins` x `height` x `width` spatiotemporal histogram of one time window.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    bins: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    pub t0: Micros,
    pub duration: Micros,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        Self {
            bins,
            height,
            width,
            data: vec![0.0; bins * height * width],
            t0: 0,
            duration: 0,
        }
    }

    pub fn from_data(bins: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("voxel grid needs at least one bin"));
        }
        if data.len() != bins * height * width {
            return Err(Error::Shape {
                op: "VoxelGrid::from_data",
                expected: vec![bins, height, width],
                actual: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "voxel grid contains non-finite values".into(),
            ));
        }
        Ok(Self {
            bins,
            height,
            width,
            data,
            t0: 0,
            duration: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.bins, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f64 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn bin(&self, b: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[b * plane..(b + 1) * plane]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Bilinear temporal weights of an event at `t` over `bins` bins.
///
/// Returns `(lower_bin, lower_weight, upper_weight)`; the upper bin is
/// `lower_bin + 1` and only exists when `lower_bin + 1 < bins`.
pub fn temporal_weights(t: Micros, t0: Micros, duration: Micros, bins: usize) -> (usize, f64, f64) {
    let t_star = (bins - 1) as f64 * (t - t0) as f64 / duration as f64;
    let lower = (t_star.floor() as usize).min(bins - 1);
    let frac = t_star - lower as f64;
    (lower, 1.0 - frac, frac)
}

/// Accumulate every event with `t0 <= t <= t0 + duration` into a voxel grid,
/// splitting its polarity across the two nearest temporal bins.
pub fn build_voxel_grid(
    stream: &EventStream,
    t0: Micros,
    duration: Micros,
    bins: usize,
) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    if duration == 0 {
        return Err(Error::invalid("window duration must be positive"));
    }
    stream.validate()?;
    let (h, w) = (stream.height(), stream.width());
    let mut grid = VoxelGrid::zeros(bins, h, w);
    grid.t0 = t0;
    grid.duration = duration;
    let end = t0.saturating_add(duration);
    for e in stream.events().iter().filter(|e| e.t >= t0 && e.t <= end) {
        let (lower, w_lo, w_hi) = temporal_weights(e.t, t0, duration, bins);
        let p = e.p.sign() as f64;
        let pix = e.y as usize * w + e.x as usize;
        grid.data[lower * h * w + pix] += p * w_lo;
        if lower + 1 < bins && w_hi > 0.0 {
            grid.data[(lower + 1) * h * w + pix] += p * w_hi;
        }
    }
    Ok(grid)
}

/// Scale by the maximum absolute value so all values fall in [-1, 1].
pub fn normalize_voxel(grid: &VoxelGrid) -> VoxelGrid {
    let max_abs = grid.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = grid.clone();
    if max_abs > 0.0 {
        out.data.iter_mut().for_each(|v| *v /= max_abs);
    }
    out
}

/// Split a stream into contiguous windows of `duration` starting at the first
/// event. Windows are half-open except the last, which is closed.
pub fn window_partition(
    stream: &EventStream,
    duration: Micros,
) -> Result<Vec<(Micros, EventStream)>> {
    if duration == 0 {
        return Err(Error::invalid("window duration must be positive"));
    }
    let events = stream.events();
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Ok(Vec::new());
    };
    let (start, end) = (first.t, last.t);
    let count = ((end - start) / duration + 1) as usize;
    // The closed final window absorbs an event landing exactly on its end.
    let count = if count > 1 && (end - start) % duration == 0 {
        count - 1
    } else {
        count
    };
    let mut windows: Vec<(Micros, Vec<Event>)> = (0..count)
        .map(|k| (start + k as u64 * duration, Vec::new()))
        .collect();
    for e in events {
        let k = (((e.t - start) / duration) as usize).min(count - 1);
        windows[k].1.push(*e);
    }
    Ok(windows
        .into_iter()
        .map(|(t0, evs)| {
            (
                t0,
                EventStream::from_parts_unchecked(stream.width(), stream.height(), evs),
            )
        })
        .collect())
}

/// `count` fixed windows `[start + k*duration, start + (k+1)*duration)`, the
/// last one closed. Events outside the covered span are dropped.
pub fn fixed_windows(
    stream: &EventStream,
    start: Micros,
    duration: Micros,
    count: usize,
) -> Result<Vec<EventStream>> {
    if duration == 0 || count == 0 {
        return Err(Error::invalid(
            "fixed windows need positive duration and count",
        ));
    }
    let end = start + duration * count as u64;
    let mut out = vec![Vec::new(); count];
    for e in stream
        .events()
        .iter()
        .filter(|e| e.t >= start && e.t <= end)
    {
        let k = (((e.t - start) / duration) as usize).min(count - 1);
        out[k].push(*e);
    }
    Ok(out
        .into_iter()
        .map(|evs| EventStream::from_parts_unchecked(stream.width(), stream.height(), evs))
        .collect())
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_events(stream)).map_err(|e| Error::io(path, e))
}

pub fn format_events(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 + stream.len() * 16);
    let _ = writeln!(out, "# {} {}", stream.width(), stream.height());
    for e in stream.events() {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p.sign());
    }
    out
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_events(&text, path)
}

pub fn parse_events(text: &str, path: &Path) -> Result<EventStream> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "missing `# <W> <H>` header".into()))?;
    let dims: Vec<&str> = header
        .strip_prefix('#')
        .map(|h| h.split_whitespace().collect())
        .unwrap_or_default();
    let (width, height) = match dims.as_slice() {
        [w, h] => match (w.parse::<usize>(), h.parse::<usize>()) {
            (Ok(w), Ok(h)) if w > 0 && h > 0 => (w, h),
            _ => return Err(err(1, format!("bad sensor geometry in header `{header}`"))),
        },
        _ => return Err(err(1, format!("expected `# <W> <H>`, got `{header}`"))),
    };

    let mut events = Vec::new();
    let mut last_t = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [t, x, y, p] = fields.as_slice() else {
            return Err(err(lineno, format!("expected `t,x,y,p`, got `{line}`")));
        };
        let t: Micros = t
            .parse()
            .map_err(|_| err(lineno, format!("bad timestamp `{t}`")))?;
        let x: u32 = x.parse().map_err(|_| err(lineno, format!("bad x `{x}`")))?;
        let y: u32 = y.parse().map_err(|_| err(lineno, format!("bad y `{y}`")))?;
        let p = p
            .parse::<i64>()
            .ok()
            .and_then(Polarity::from_sign)
            .ok_or_else(|| err(lineno, format!("polarity must be -1 or 1, got `{p}`")))?;
        if x as usize >= width || y as usize >= height {
            return Err(err(
                lineno,
                format!("coordinate ({x}, {y}) outside {width}x{height} sensor"),
            ));
        }
        if t < last_t {
            return Err(err(lineno, format!("timestamp {t} precedes {last_t}")));
        }
        last_t = t;
        events.push(Event::new(t, x, y, p));
    }
    Ok(EventStream::from_parts_unchecked(width, height, events))
}

/// Grayscale intensity image with pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape {
                op: "GrayImage::new",
                expected: vec![height, width],
                actual: vec![pixels.len()],
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Clamps every pixel into [0, 1]; non-finite values become 0.
    pub fn from_clamped(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        let pixels = pixels
            .into_iter()
            .map(|v| {
                if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Sum over bins, then min-max normalise. A constant map renders as zeros.
pub fn render_voxel(grid: &VoxelGrid) -> GrayImage {
    let plane = grid.height * grid.width;
    let mut acc = vec![0.0; plane];
    for b in 0..grid.bins {
        for (a, v) in acc.iter_mut().zip(grid.bin(b)) {
            *a += v;
        }
    }
    min_max_image(grid.height, grid.width, acc)
}

pub(crate) fn min_max_image(height: usize, width: usize, mut values: Vec<f64>) -> GrayImage {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() || hi <= lo {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    }
    GrayImage {
        height,
        width,
        pixels: values,
    }
}

pub fn write_gray(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image
        .pixels
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let mut out = Vec::with_capacity(bytes.len() + 16);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &bytes,
            image.width as u32,
            image.height as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let pixels = img
        .into_raw()
        .into_iter()
        .map(|b| b as f64 / 255.0)
        .collect();
    GrayImage::new(h as usize, w as usize, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: Micros, x: u32, y: u32, p: i64) -> Event {
        Event::new(t, x, y, Polarity::from_sign(p).unwrap())
    }

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(4, 3, events).unwrap()
    }

    #[test]
    fn empty_stream_gives_zero_grid() {
        let g = build_voxel_grid(&EventStream::empty(4, 3), 0, 40_000, 5).unwrap();
        assert_eq!(g.shape(), [5, 3, 4]);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn midpoint_event_lands_in_centre_bin() {
        let s = stream(vec![ev(20_000, 1, 2, 1)]);
        let g = build_voxel_grid(&s, 0, 40_000, 5).unwrap();
        assert_eq!(g.get(2, 2, 1), 1.0);
        assert_eq!(g.sum(), 1.0);
        assert_eq!(g.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn five_eighths_event_splits_evenly() {
        let s = stream(vec![ev(25_000, 0, 0, 1)]);
        let g = build_voxel_grid(&s, 0, 40_000, 5).unwrap();
        assert_eq!(g.get(2, 0, 0), 0.5);
        assert_eq!(g.get(3, 0, 0), 0.5);
    }

    #[test]
    fn events_outside_window_are_ignored() {
        let s = stream(vec![ev(5, 0, 0, 1), ev(10, 0, 0, 1), ev(60, 1, 1, -1)]);
        let g = build_voxel_grid(&s, 10, 40, 3).unwrap();
        assert_eq!(g.sum(), 1.0);
        assert_eq!(g.t0, 10);
        assert_eq!(g.duration, 40);
    }

    #[test]
    fn opposite_polarities_cancel() {
        let s = stream(vec![ev(7, 2, 1, 1), ev(7, 2, 1, -1)]);
        let g = build_voxel_grid(&s, 0, 40, 5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_degenerate_configuration() {
        let s = EventStream::empty(4, 3);
        assert!(build_voxel_grid(&s, 0, 40, 0).is_err());
        assert!(build_voxel_grid(&s, 0, 0, 5).is_err());
    }

    #[test]
    fn single_bin_takes_full_weight() {
        let s = stream(vec![ev(13, 0, 0, -1)]);
        let g = build_voxel_grid(&s, 0, 40, 1).unwrap();
        assert_eq!(g.get(0, 0, 0), -1.0);
    }

    #[test]
    fn invalid_streams_are_rejected() {
        assert!(EventStream::new(4, 3, vec![ev(0, 4, 0, 1)]).is_err());
        assert!(EventStream::new(4, 3, vec![ev(5, 0, 0, 1), ev(4, 0, 0, 1)]).is_err());
    }

    #[test]
    fn normalize_scales_by_max_abs() {
        let g = VoxelGrid::from_data(1, 1, 2, vec![-2.0, 1.0]).unwrap();
        let n = normalize_voxel(&g);
        assert_eq!(n.data(), &[-1.0, 0.5]);
        assert_eq!(normalize_voxel(&n), n);
        let z = VoxelGrid::zeros(2, 2, 2);
        assert_eq!(normalize_voxel(&z), z);
    }

    #[test]
    fn partition_half_open_with_closed_tail() {
        let s = stream(vec![
            ev(0, 0, 0, 1),
            ev(10, 0, 0, 1),
            ev(40, 0, 0, 1),
            ev(41, 0, 0, 1),
        ]);
        let w = window_partition(&s, 40).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].0, 0);
        assert_eq!(
            w[0].1.events().iter().map(|e| e.t).collect::<Vec<_>>(),
            vec![0, 10]
        );
        assert_eq!(w[1].0, 40);
        assert_eq!(
            w[1].1.events().iter().map(|e| e.t).collect::<Vec<_>>(),
            vec![40, 41]
        );
    }

    #[test]
    fn partition_final_window_is_closed() {
        let s = stream(vec![ev(0, 0, 0, 1), ev(40, 0, 0, 1)]);
        let w = window_partition(&s, 40).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].1.len(), 2);
    }

    #[test]
    fn partition_trivial_cases() {
        assert!(window_partition(&EventStream::empty(4, 3), 40)
            .unwrap()
            .is_empty());
        let one = stream(vec![ev(123, 1, 1, -1)]);
        let w = window_partition(&one, 40).unwrap();
        assert_eq!(w, vec![(123, one.clone())]);
        let s = stream(vec![ev(0, 0, 0, 1), ev(10, 1, 0, -1)]);
        assert_eq!(window_partition(&s, 1000).unwrap(), vec![(0, s.clone())]);
    }

    #[test]
    fn event_file_errors_name_the_line() {
        let p = Path::new("mem.csv");
        let e = parse_events("# 4 3\n0,1,1,1\n5,4,0,1\n", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_events("# 4 3\n5,1,1,1\n4,0,0,1\n", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_events("# 4 3\n5,1,1,0\n", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_events("# 4 3\n5;1;1;1\n", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let s = parse_events("# 4 3\n", p).unwrap();
        assert!(s.is_empty());
        assert_eq!((s.width(), s.height()), (4, 3));
    }

    #[test]
    fn event_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ev.csv");
        let s = stream(vec![ev(0, 0, 0, 1), ev(3, 3, 2, -1), ev(3, 1, 1, 1)]);
        write_events(&s, &path).unwrap();
        assert_eq!(read_events(&path).unwrap(), s);
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "# 4 3\n0,0,0,1\n3,3,2,-1\n3,1,1,1\n"
        );
    }

    #[test]
    fn render_voxel_degenerate_and_spike() {
        let z = render_voxel(&VoxelGrid::zeros(5, 3, 4));
        assert!(z.pixels().iter().all(|&v| v == 0.0));
        let mut g = VoxelGrid::zeros(2, 3, 4);
        g.data_mut()[12 + 5] = 0.7;
        let img = render_voxel(&g);
        assert_eq!(img.get(1, 1), 1.0);
        assert_eq!(img.pixels().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn gray_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let pixels: Vec<f64> = (0..35).map(|i| (i as f64 * 0.0291).fract()).collect();
        let img = GrayImage::new(5, 7, pixels).unwrap();
        write_gray(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..2], b"P5");
        let back = read_gray(&path).unwrap();
        assert_eq!((back.height(), back.width()), (5, 7));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn gray_image_rejects_out_of_range() {
        assert!(GrayImage::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.0]).is_err());
    }
}
