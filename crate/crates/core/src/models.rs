//! The four networks of the pipeline: anonymizer, reconstruction attacker,
//! re-identification embedder and inversion attacker.

use std::path::Path;

use rand::Rng;

use crate::diffnet::checkpoint;
use crate::diffnet::loss::l2_normalize_rows;
use crate::diffnet::{Network, Tensor};
use crate::error::{Error, Result};
use crate::event::{min_max_image, GrayImage, VoxelGrid};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Channel widths of the networks. Kernel size 3 and stride 1 for the
/// anonymizer and inverter are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub bins: usize,
    pub anonymizer_widths: [usize; 3],
    pub attacker_width: usize,
    pub reid_width: usize,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bins: 5,
            anonymizer_widths: [16, 32, 16],
            attacker_width: 16,
            reid_width: 16,
            embedding_dim: 64,
        }
    }
}

impl ModelConfig {
    /// Narrow widths that keep full joint training within minutes on one core.
    pub fn toy() -> Self {
        Self {
            bins: 5,
            anonymizer_widths: [8, 8, 8],
            attacker_width: 8,
            reid_width: 16,
            embedding_dim: 64,
        }
    }
}

/// Stack voxel grids of identical shape into an (n, bins, h, w) tensor.
pub fn voxels_to_tensor(grids: &[&VoxelGrid]) -> Result<Tensor> {
    let first = grids
        .first()
        .ok_or_else(|| Error::invalid("empty voxel batch"))?;
    let shape = first.shape();
    if let Some(bad) = grids.iter().find(|g| g.shape() != shape) {
        return Err(Error::Shape {
            op: "voxels_to_tensor",
            expected: shape.to_vec(),
            actual: bad.shape().to_vec(),
        });
    }
    let data: Vec<&[f64]> = grids.iter().map(|g| g.data()).collect();
    Tensor::stack(&data, &shape)
}

pub fn images_to_tensor(images: &[&GrayImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("empty image batch"))?;
    let shape = [1, first.height(), first.width()];
    let data: Vec<&[f64]> = images.iter().map(|g| g.pixels()).collect();
    Tensor::stack(&data, &shape)
}

fn tensor_to_voxels(t: &Tensor) -> Result<Vec<VoxelGrid>> {
    let (n, b, h, w) = t.dims4("tensor_to_voxels")?;
    (0..n)
        .map(|i| VoxelGrid::from_data(b, h, w, t.data()[i * b * h * w..][..b * h * w].to_vec()))
        .collect()
}

fn tensor_to_images(t: &Tensor) -> Result<Vec<GrayImage>> {
    let (n, c, h, w) = t.dims4("tensor_to_images")?;
    if c != 1 {
        return Err(Error::Shape {
            op: "tensor_to_images",
            expected: vec![n, 1, h, w],
            actual: t.shape().to_vec(),
        });
    }
    (0..n)
        .map(|i| GrayImage::from_clamped(h, w, t.data()[i * h * w..][..h * w].to_vec()))
        .collect()
}

fn shape_preserving(name: &str, bins: usize, widths: [usize; 3], rng: &mut impl Rng) -> Network {
    Network::new(name)
        .conv3x3(bins, widths[0], 1, rng)
        .leaky_relu(LEAKY_SLOPE)
        .conv3x3(widths[0], widths[1], 1, rng)
        .leaky_relu(LEAKY_SLOPE)
        .conv3x3(widths[1], widths[2], 1, rng)
        .leaky_relu(LEAKY_SLOPE)
        .conv3x3(widths[2], bins, 1, rng)
}

/// Four 3x3 stride-1 convolutions mapping a voxel grid to an anonymized
/// voxel grid of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizerNet {
    pub net: Network,
}

impl AnonymizerNet {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self {
            net: shape_preserving("anonymizer", cfg.bins, cfg.anonymizer_widths, rng),
        }
    }

    pub fn anonymize(&self, grid: &VoxelGrid) -> Result<VoxelGrid> {
        self.anonymize_batch(&[grid]).map(|mut v| v.remove(0))
    }

    pub fn anonymize_batch(&self, grids: &[&VoxelGrid]) -> Result<Vec<VoxelGrid>> {
        let out = self.net.forward(&voxels_to_tensor(grids)?)?;
        let mut grids_out = tensor_to_voxels(&out)?;
        for (o, i) in grids_out.iter_mut().zip(grids) {
            o.t0 = i.t0;
            o.duration = i.duration;
        }
        Ok(grids_out)
    }
}

/// Inversion attacker: same family as the anonymizer.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterNet {
    pub net: Network,
}

impl InverterNet {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self {
            net: shape_preserving("inverter", cfg.bins, cfg.anonymizer_widths, rng),
        }
    }

    pub fn invert_batch(&self, grids: &[&VoxelGrid]) -> Result<Vec<VoxelGrid>> {
        tensor_to_voxels(&self.net.forward(&voxels_to_tensor(grids)?)?)
    }
}

/// Convolutional encoder-decoder from a voxel grid to a gray image; the
/// sigmoid output keeps reconstructions in [0, 1]. Height and width must
/// be even.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerNet {
    pub net: Network,
}

impl AttackerNet {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let w = cfg.attacker_width;
        let net = Network::new("attacker")
            .conv3x3(cfg.bins, w, 1, rng)
            .leaky_relu(LEAKY_SLOPE)
            .conv3x3(w, 2 * w, 2, rng)
            .leaky_relu(LEAKY_SLOPE)
            .conv3x3(2 * w, 2 * w, 1, rng)
            .leaky_relu(LEAKY_SLOPE)
            .upsample2x()
            .conv3x3(2 * w, w, 1, rng)
            .leaky_relu(LEAKY_SLOPE)
            .conv3x3(w, 1, 1, rng)
            .sigmoid();
        Self { net }
    }

    pub fn freeze(&mut self) {
        self.net.set_trainable(false);
    }

    pub fn is_frozen(&self) -> bool {
        self.net.is_frozen()
    }

    pub fn reconstruct(&self, grid: &VoxelGrid) -> Result<GrayImage> {
        self.reconstruct_batch(&[grid]).map(|mut v| v.remove(0))
    }

    pub fn reconstruct_batch(&self, grids: &[&VoxelGrid]) -> Result<Vec<GrayImage>> {
        tensor_to_images(&self.net.forward(&voxels_to_tensor(grids)?)?)
    }
}

/// Non-learned attacker: integrate polarity over bins, take magnitudes and
/// min-max normalise, giving an edge map of the moving scene.
pub fn integrate_reconstruct(grid: &VoxelGrid) -> GrayImage {
    let plane = grid.height() * grid.width();
    let mut acc = vec![0.0; plane];
    for b in 0..grid.bins() {
        for (a, v) in acc.iter_mut().zip(grid.bin(b)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|v| *v = v.abs());
    min_max_image(grid.height(), grid.width(), acc)
}

/// Strided conv stack, global average pooling, an embedding layer and a
/// classifier over the training identities. The embedding is the input of
/// the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReIdNet {
    pub net: Network,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl ReIdNet {
    pub fn new(
        in_channels: usize,
        cfg: &ModelConfig,
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = cfg.reid_width;
        let net = Network::new("reid")
            .conv3x3(in_channels, w, 2, rng)
            .leaky_relu(LEAKY_SLOPE)
            .conv3x3(w, 2 * w, 2, rng)
            .leaky_relu(LEAKY_SLOPE)
            .conv3x3(2 * w, 4 * w, 2, rng)
            .leaky_relu(LEAKY_SLOPE)
            .conv3x3(4 * w, 4 * w, 1, rng)
            .leaky_relu(LEAKY_SLOPE)
            .global_avg_pool()
            .linear(4 * w, cfg.embedding_dim, rng)
            .linear(cfg.embedding_dim, num_classes, rng);
        Self {
            net,
            embedding_dim: cfg.embedding_dim,
            num_classes,
        }
    }

    /// Index of the embedding activation in the forward tape.
    pub fn embedding_index(&self) -> usize {
        self.net.layers().len() - 1
    }

    /// Raw (unnormalised) embeddings, one row per sample.
    pub fn embed_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward_prefix(x, self.embedding_index())
    }

    pub fn embed(&self, grid: &VoxelGrid) -> Result<Vec<f64>> {
        Ok(self.embed_tensor(&voxels_to_tensor(&[grid])?)?.into_data())
    }

    pub fn embed_normalized(&self, x: &Tensor) -> Result<Tensor> {
        l2_normalize_rows(&self.embed_tensor(x)?)
    }

    pub fn classify(&self, grid: &VoxelGrid) -> Result<Vec<f64>> {
        Ok(self.net.forward(&voxels_to_tensor(&[grid])?)?.into_data())
    }
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    checkpoint::save_network(net, path)
}

pub fn load_model(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    checkpoint::load_network(net, path)
}
