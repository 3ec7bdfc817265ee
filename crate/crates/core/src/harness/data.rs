use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffnet::Tensor;
use crate::error::{Error, Result};
use crate::event::{
    build_voxel_grid, fixed_windows, normalize_voxel, EventStream, GrayImage, Micros, VoxelGrid,
};
use crate::simulator::{simulate_events, FrameSequence};

/// Identity, camera and source sequence of a retrieval item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemMeta {
    pub identity: usize,
    pub camera: usize,
    pub sequence: usize,
}

/// One training or evaluation window.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Normalised voxel grid of the window.
    pub voxel: VoxelGrid,
    /// Frame at the end of the window.
    pub frame: GrayImage,
    pub identity: usize,
    /// Position of `identity` in the dataset's identity list.
    pub label: usize,
    pub camera: usize,
    /// Index of the source sequence.
    pub sequence: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub identities: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.identities.len()
    }

    pub fn voxels(&self) -> Vec<&VoxelGrid> {
        self.samples.iter().map(|s| &s.voxel).collect()
    }

    pub fn frames(&self) -> Vec<&GrayImage> {
        self.samples.iter().map(|s| &s.frame).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn meta(&self, i: usize) -> ItemMeta {
        let s = &self.samples[i];
        ItemMeta {
            identity: s.identity,
            camera: s.camera,
            sequence: s.sequence,
        }
    }

    /// Samples taken by `camera`.
    pub fn camera_indices(&self, camera: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.samples[i].camera == camera)
            .collect()
    }
}

/// Latest frame at or before `t`.
fn frame_until(seq: &FrameSequence, t: Micros) -> Option<&GrayImage> {
    let idx = seq.timestamps.partition_point(|&ts| ts <= t);
    idx.checked_sub(1).map(|i| &seq.frames[i])
}

/// Simulate events for every sequence and cut them into consecutive
/// windows of `window_us` from the first frame; each window becomes a
/// normalised `bins`-bin voxel grid paired with the frame at its end.
pub fn build_dataset(
    sequences: &[FrameSequence],
    contrast: f64,
    window_us: Micros,
    bins: usize,
) -> Result<Dataset> {
    let streams = sequences
        .iter()
        .map(|seq| simulate_events(seq, contrast))
        .collect::<Result<Vec<_>>>()?;
    build_dataset_from_streams(sequences, &streams, window_us, bins)
}

/// [`build_dataset`] over precomputed event streams, one per sequence.
pub fn build_dataset_from_streams(
    sequences: &[FrameSequence],
    streams: &[EventStream],
    window_us: Micros,
    bins: usize,
) -> Result<Dataset> {
    if sequences.len() != streams.len() {
        return Err(Error::invalid(format!(
            "{} sequences but {} event streams",
            sequences.len(),
            streams.len()
        )));
    }
    if window_us == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    let mut identities: Vec<usize> = sequences.iter().map(|s| s.identity).collect();
    identities.sort_unstable();
    identities.dedup();
    let mut samples = Vec::new();
    for (seq_idx, (seq, stream)) in sequences.iter().zip(streams).enumerate() {
        let (Some(&start), Some(&end)) = (seq.timestamps.first(), seq.timestamps.last()) else {
            continue;
        };
        if (stream.width(), stream.height()) != (seq.width(), seq.height()) {
            return Err(Error::invalid(format!(
                "event stream {seq_idx} does not match its frame geometry"
            )));
        }
        let count = ((end - start) / window_us) as usize;
        if count == 0 {
            continue;
        }
        let windows = fixed_windows(stream, start, window_us, count)?;
        for (k, w) in windows.iter().enumerate() {
            let t0 = start + k as u64 * window_us;
            let frame =
                frame_until(seq, t0 + window_us).expect("window ends after the first frame");
            samples.push(Sample {
                voxel: normalize_voxel(&build_voxel_grid(w, t0, window_us, bins)?),
                frame: frame.clone(),
                identity: seq.identity,
                label: identities
                    .binary_search(&seq.identity)
                    .expect("identity listed"),
                camera: seq.camera,
                sequence: seq_idx,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::invalid("no sequence spans a full window"));
    }
    Ok(Dataset {
        samples,
        identities,
    })
}

/// One epoch of identity-balanced batches: identities are shuffled and
/// grouped `ids_per_batch` at a time (a trailing single identity joins the
/// previous group), and each identity contributes `samples_per_id` samples,
/// drawn without replacement while it has enough.
pub fn identity_batches(
    labels: &[usize],
    ids_per_batch: usize,
    samples_per_id: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_label = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_label[l].push(i);
    }
    let mut labels: Vec<usize> = (0..by_label.len())
        .filter(|&l| !by_label[l].is_empty())
        .collect();
    labels.shuffle(rng);
    let mut groups: Vec<Vec<usize>> = labels
        .chunks(ids_per_batch.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 2) {
        let tail = groups.pop().unwrap_or_default();
        groups.last_mut().expect("at least one group").extend(tail);
    }
    groups
        .into_iter()
        .map(|group| {
            let mut batch = Vec::with_capacity(group.len() * samples_per_id);
            for l in group {
                let pool = &by_label[l];
                let mut order = pool.clone();
                order.shuffle(rng);
                for k in 0..samples_per_id {
                    if k < order.len() {
                        batch.push(order[k]);
                    } else {
                        batch.push(pool[rng.random_range(0..pool.len())]);
                    }
                }
            }
            batch
        })
        .collect()
}

/// One epoch of shuffled plain batches of at most `batch_size` samples.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Random label-preserving transforms applied per sample during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Augment {
    #[default]
    Off,
    /// Horizontal mirror with probability 1/2.
    Mirror,
    /// Mirror, plus time reversal with probability 1/2: bins in reverse
    /// order with flipped polarity.
    MirrorReverse,
}

impl Augment {
    /// The same transforms minus time reversal, for single-plane inputs.
    pub fn spatial(self) -> Self {
        match self {
            Augment::MirrorReverse => Augment::Mirror,
            a => a,
        }
    }
}

fn mirror_sample(data: &mut [f64], w: usize) {
    for row in data.chunks_mut(w) {
        row.reverse();
    }
}

fn reverse_sample(data: &mut [f64], plane: usize) {
    let bins = data.len() / plane;
    for b in 0..bins / 2 {
        let (lo, hi) = data.split_at_mut((bins - 1 - b) * plane);
        lo[b * plane..][..plane].swap_with_slice(&mut hi[..plane]);
    }
    for v in data.iter_mut() {
        *v = -*v;
    }
}

/// Augment a batch `x` (n, c, h, w) in place. `paired` (n, c', h, w), if
/// given, receives the same mirrors so targets stay aligned.
pub fn augment_batch(
    x: &mut Tensor,
    mut paired: Option<&mut Tensor>,
    aug: Augment,
    rng: &mut impl Rng,
) -> Result<()> {
    if aug == Augment::Off {
        return Ok(());
    }
    let (n, c, h, w) = x.dims4("augment_batch")?;
    if let Some(p) = paired.as_deref() {
        let (pn, _, ph, pw) = p.dims4("augment_batch")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Shape {
                op: "augment_batch",
                expected: vec![n, 0, h, w],
                actual: p.shape().to_vec(),
            });
        }
    }
    let vol = c * h * w;
    for i in 0..n {
        if rng.random_bool(0.5) {
            mirror_sample(&mut x.data_mut()[i * vol..][..vol], w);
            if let Some(p) = paired.as_deref_mut() {
                let pvol = p.len() / n;
                mirror_sample(&mut p.data_mut()[i * pvol..][..pvol], w);
            }
        }
        if aug == Augment::MirrorReverse && rng.random_bool(0.5) {
            reverse_sample(&mut x.data_mut()[i * vol..][..vol], h * w);
        }
    }
    Ok(())
}
