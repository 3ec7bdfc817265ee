//! Event-encryption baselines: keyed chaotic position scrambling with
//! polarity flipping, and keyed event discarding. Both act on a
//! key-selected fraction of the events.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream};

const BURN_IN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncryptionKey {
    /// Initial state of the logistic map, in (0, 1).
    pub x0: f64,
    /// Logistic map parameter, in the chaotic regime (3.57, 4].
    pub r: f64,
    /// Seed of the partial-encryption event selection.
    pub selection_seed: u64,
}

impl Default for EncryptionKey {
    fn default() -> Self {
        Self {
            x0: 0.3141592653589793,
            r: 3.99,
            selection_seed: 0,
        }
    }
}

impl EncryptionKey {
    pub fn validate(&self) -> Result<()> {
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return Err(Error::invalid(format!(
                "x0 must lie in (0, 1), got {}",
                self.x0
            )));
        }
        if !(self.r > 3.57 && self.r <= 4.0) {
            return Err(Error::invalid(format!(
                "r must lie in (3.57, 4], got {}",
                self.r
            )));
        }
        Ok(())
    }
}

/// Keyed bijection on the `width * height` pixel indices: the argsort of a
/// logistic-map orbit. `perm[i]` is the destination of pixel `i`.
pub fn keyed_permutation(width: usize, height: usize, key: &EncryptionKey) -> Result<Vec<usize>> {
    key.validate()?;
    let n = width * height;
    let mut x = key.x0;
    for _ in 0..BURN_IN {
        x = key.r * x * (1.0 - x);
    }
    let orbit: Vec<f64> = (0..n)
        .map(|_| {
            x = key.r * x * (1.0 - x);
            x
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| orbit[a].total_cmp(&orbit[b]).then(a.cmp(&b)));
    Ok(order)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "encryption ratio must lie in [0, 1], got {ratio}"
        )))
    }
}

/// Number of events touched at `ratio`.
pub fn selected_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// Key-determined subset of `round(ratio * n)` event indices, as a mask.
fn selection_mask(n: usize, ratio: f64, key: &EncryptionKey) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(key.selection_seed));
    let mut mask = vec![false; n];
    for &i in &idx[..selected_count(n, ratio)] {
        mask[i] = true;
    }
    mask
}

fn remap(
    stream: &EventStream,
    key: &EncryptionKey,
    ratio: f64,
    inverse: bool,
) -> Result<EventStream> {
    check_ratio(ratio)?;
    let (w, h) = (stream.width(), stream.height());
    let perm = keyed_permutation(w, h, key)?;
    let map = if inverse {
        invert_permutation(&perm)
    } else {
        perm
    };
    let mask = selection_mask(stream.len(), ratio, key);
    let events = stream
        .events()
        .iter()
        .zip(&mask)
        .map(|(e, &sel)| {
            if !sel {
                return *e;
            }
            let dest = map[e.y as usize * w + e.x as usize];
            Event::new(e.t, (dest % w) as u32, (dest / w) as u32, e.p.flipped())
        })
        .collect();
    Ok(EventStream::from_parts_unchecked(w, h, events))
}

/// Move a keyed `ratio` of the events through the chaotic permutation and
/// flip their polarity. Timestamps are untouched.
pub fn scramble_events(
    stream: &EventStream,
    key: &EncryptionKey,
    ratio: f64,
) -> Result<EventStream> {
    remap(stream, key, ratio, false)
}

/// Exact inverse of [`scramble_events`] under the same key and ratio.
pub fn descramble_events(
    stream: &EventStream,
    key: &EncryptionKey,
    ratio: f64,
) -> Result<EventStream> {
    remap(stream, key, ratio, true)
}

/// Drop a keyed `ratio` of the events, preserving the order of the rest.
pub fn discard_events(
    stream: &EventStream,
    key: &EncryptionKey,
    ratio: f64,
) -> Result<EventStream> {
    check_ratio(ratio)?;
    let mask = selection_mask(stream.len(), ratio, key);
    let events = stream
        .events()
        .iter()
        .zip(&mask)
        .filter(|(_, &sel)| !sel)
        .map(|(e, _)| *e)
        .collect();
    Ok(EventStream::from_parts_unchecked(
        stream.width(),
        stream.height(),
        events,
    ))
}
