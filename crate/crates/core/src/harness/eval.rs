use std::collections::BTreeSet;

use super::config::TrainConfig;
use super::data::{Dataset, ItemMeta};
use super::train::train_reid;
use crate::diffnet::Tensor;
use crate::error::{Error, Result};
use crate::event::{GrayImage, VoxelGrid};
use crate::metrics::{psnr, ssim, SsimConfig};
use crate::models::{AnonymizerNet, AttackerNet, ModelConfig, ReIdNet};

/// CMC ranks reported by evaluations.
pub const MAX_RANK: usize = 10;

const EVAL_BATCH: usize = 32;
const STD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageQuality {
    pub ssim: f64,
    pub psnr: f64,
    pub count: usize,
}

/// Mean SSIM and PSNR of `images` against `targets`.
pub fn image_quality(
    images: &[GrayImage],
    targets: &[&GrayImage],
    cfg: &SsimConfig,
) -> Result<ImageQuality> {
    if images.len() != targets.len() || images.is_empty() {
        return Err(Error::invalid(
            "image quality needs equally many, non-zero images and targets",
        ));
    }
    let (mut s, mut p) = (0.0, 0.0);
    for (img, target) in images.iter().zip(targets) {
        s += ssim(img, target, cfg)?;
        p += psnr(img, target, 1.0)?;
    }
    let n = images.len() as f64;
    Ok(ImageQuality {
        ssim: s / n,
        psnr: p / n,
        count: images.len(),
    })
}

/// Attacker reconstructions of `voxels`, optionally passed through the
/// anonymizer first.
pub fn reconstruct_all(
    an: Option<&AnonymizerNet>,
    rec: &AttackerNet,
    voxels: &[&VoxelGrid],
) -> Result<Vec<GrayImage>> {
    let mut out = Vec::with_capacity(voxels.len());
    for chunk in voxels.chunks(EVAL_BATCH) {
        match an {
            Some(an) => {
                let hidden = an.anonymize_batch(chunk)?;
                out.extend(rec.reconstruct_batch(&hidden.iter().collect::<Vec<_>>())?);
            }
            None => out.extend(rec.reconstruct_batch(chunk)?),
        }
    }
    Ok(out)
}

/// Reconstruction quality over every window of `data`, on the raw path or
/// (with `an`) the anonymized path.
pub fn evaluate_image_quality(
    an: Option<&AnonymizerNet>,
    rec: &AttackerNet,
    data: &Dataset,
    cfg: &SsimConfig,
) -> Result<ImageQuality> {
    let images = reconstruct_all(an, rec, &data.voxels())?;
    image_quality(&images, &data.frames(), cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankMetrics {
    /// `cmc[k - 1]` is the rank-k hit rate.
    pub cmc: Vec<f64>,
    pub map: f64,
    /// Queries with at least one valid match.
    pub queries: usize,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// CMC and mAP of a retrieval. Each query ranks the gallery by Euclidean
/// distance (ties broken by gallery order), skipping items from its own
/// camera and sequence. Queries without any match are not counted.
pub fn rank_metrics(
    query: &[Vec<f64>],
    query_meta: &[ItemMeta],
    gallery: &[Vec<f64>],
    gallery_meta: &[ItemMeta],
    max_rank: usize,
) -> Result<RankMetrics> {
    if query.len() != query_meta.len() || gallery.len() != gallery_meta.len() {
        return Err(Error::invalid("one metadata entry per embedding required"));
    }
    let mut hits = vec![0usize; max_rank];
    let mut ap_sum = 0.0;
    let mut counted = 0usize;
    for (q, qm) in query.iter().zip(query_meta) {
        let mut ranked: Vec<(f64, usize)> = gallery
            .iter()
            .zip(gallery_meta)
            .enumerate()
            .filter(|(_, (_, gm))| !(gm.camera == qm.camera && gm.sequence == qm.sequence))
            .map(|(j, (g, _))| (euclidean(q, g), j))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let relevant: Vec<usize> = ranked
            .iter()
            .enumerate()
            .filter(|(_, (_, j))| gallery_meta[*j].identity == qm.identity)
            .map(|(pos, _)| pos)
            .collect();
        let Some(&first) = relevant.first() else {
            continue;
        };
        counted += 1;
        for h in hits.iter_mut().skip(first) {
            *h += 1;
        }
        let ap: f64 = relevant
            .iter()
            .enumerate()
            .map(|(found, &pos)| (found + 1) as f64 / (pos + 1) as f64)
            .sum();
        ap_sum += ap / relevant.len() as f64;
    }
    if counted == 0 {
        return Err(Error::invalid("no query has a match in the gallery"));
    }
    Ok(RankMetrics {
        cmc: hits.iter().map(|&h| h as f64 / counted as f64).collect(),
        map: ap_sum / counted as f64,
        queries: counted,
    })
}

/// Inputs of one side of a retrieval, with their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub name: String,
    /// Per-sample shape (channels, height, width).
    pub shape: [usize; 3],
    pub inputs: Vec<Vec<f64>>,
    pub meta: Vec<ItemMeta>,
}

impl EvalSet {
    pub fn from_voxels(name: &str, grids: &[&VoxelGrid], meta: Vec<ItemMeta>) -> Result<Self> {
        let shape = grids
            .first()
            .ok_or_else(|| Error::invalid("empty evaluation set"))?
            .shape();
        Ok(Self {
            name: name.to_string(),
            shape,
            inputs: grids.iter().map(|g| g.data().to_vec()).collect(),
            meta,
        })
    }

    /// Images enter the embedder standardised to zero mean and unit
    /// variance each.
    pub fn from_images(name: &str, images: &[&GrayImage], meta: Vec<ItemMeta>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("empty evaluation set"))?;
        Ok(Self {
            name: name.to_string(),
            shape: [1, first.height(), first.width()],
            inputs: images.iter().map(|g| standardize(g.pixels())).collect(),
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Chance rank-1 rate when this set is the gallery.
    pub fn chance(&self) -> f64 {
        let ids: BTreeSet<usize> = self.meta.iter().map(|m| m.identity).collect();
        1.0 / ids.len().max(1) as f64
    }

    /// Union of two sets over the same sample shape.
    pub fn concat(&self, other: &EvalSet, name: &str) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "EvalSet::concat",
                expected: self.shape.to_vec(),
                actual: other.shape.to_vec(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            shape: self.shape,
            inputs: self.inputs.iter().chain(&other.inputs).cloned().collect(),
            meta: self.meta.iter().chain(&other.meta).copied().collect(),
        })
    }
}

/// L2-normalised embeddings of every input; all-zero embeddings stay zero.
pub fn embed_all(reid: &ReIdNet, set: &EvalSet) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.inputs.chunks(EVAL_BATCH) {
        let rows: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
        let emb = reid.embed_tensor(&Tensor::stack(&rows, &set.shape)?)?;
        for row in emb.data().chunks(reid.embedding_dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            out.push(row.iter().map(|v| v * scale).collect());
        }
    }
    Ok(out)
}

/// Retrieval quality of one query/gallery pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub query: String,
    pub gallery: String,
    pub cmc: Vec<f64>,
    pub map: f64,
    pub chance: f64,
    pub queries: usize,
    /// Reconstruction quality of the gallery path, when it has one.
    pub quality: Option<ImageQuality>,
}

impl EvalReport {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[(k.max(1) - 1).min(self.cmc.len() - 1)]
    }
}

/// Embed both sets with `reid` and score the retrieval.
pub fn evaluate_reid(reid: &ReIdNet, query: &EvalSet, gallery: &EvalSet) -> Result<EvalReport> {
    let q = embed_all(reid, query)?;
    let g = embed_all(reid, gallery)?;
    let m = rank_metrics(&q, &query.meta, &g, &gallery.meta, MAX_RANK)?;
    Ok(EvalReport {
        query: query.name.clone(),
        gallery: gallery.name.clone(),
        cmc: m.cmc,
        map: m.map,
        chance: gallery.chance(),
        queries: m.queries,
        quality: None,
    })
}

/// Per-sample standardisation; constant inputs map to zeros.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = if var > STD_EPS * STD_EPS {
        1.0 / var.sqrt()
    } else {
        0.0
    };
    values.iter().map(|v| (v - mean) * inv).collect()
}

/// Train an image-domain retrieval embedder (the ReId architecture on
/// one gray channel) on the attacker's training images.
pub fn train_image_embedder(
    train: &EvalSet,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ReIdNet, Vec<f64>)> {
    let ids: Vec<usize> = train
        .meta
        .iter()
        .map(|m| m.identity)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels: Vec<usize> = train
        .meta
        .iter()
        .map(|m| ids.binary_search(&m.identity).expect("identity listed"))
        .collect();
    let rows: Vec<&[f64]> = train.inputs.iter().map(Vec::as_slice).collect();
    train_reid(&rows, train.shape, &labels, ids.len(), model, cfg)
}

/// Retrieval attack: train a fresh image embedder on `train`, then score
/// every query/gallery pairing with it.
pub fn retrieval_attack(
    train: &EvalSet,
    pairings: &[(&EvalSet, &EvalSet)],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ReIdNet, Vec<EvalReport>)> {
    let (embedder, _) = train_image_embedder(train, model, cfg)?;
    let reports = pairings
        .iter()
        .map(|(q, g)| evaluate_reid(&embedder, q, g))
        .collect::<Result<Vec<_>>>()?;
    Ok((embedder, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(identity: usize, camera: usize, sequence: usize) -> ItemMeta {
        ItemMeta {
            identity,
            camera,
            sequence,
        }
    }

    #[test]
    fn standardize_moments() {
        let z = standardize(&[1.0, 2.0, 3.0, 4.0]);
        let mean = z.iter().sum::<f64>() / 4.0;
        let var = z.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-12);
        assert_eq!(standardize(&[0.5; 6]), vec![0.0; 6]);
    }

    #[test]
    fn separated_embeddings_are_perfect() {
        let q = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let g = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let m = rank_metrics(
            &q,
            &[meta(0, 0, 0), meta(1, 0, 1)],
            &g,
            &[meta(1, 1, 2), meta(0, 1, 3)],
            5,
        )
        .unwrap();
        assert_eq!(m.cmc, vec![1.0; 5]);
        assert_eq!(m.map, 1.0);
    }

    #[test]
    fn single_match_at_rank_two() {
        let q = vec![vec![0.0, 0.0]];
        let g = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let gm = [meta(5, 1, 1), meta(0, 1, 2), meta(6, 1, 3)];
        let m = rank_metrics(&q, &[meta(0, 0, 0)], &g, &gm, 5).unwrap();
        assert_eq!(m.cmc[0], 0.0);
        assert_eq!(m.cmc[4], 1.0);
        assert_eq!(m.map, 0.5);
    }

    #[test]
    fn same_camera_same_sequence_is_excluded() {
        // Query equals gallery; the self-match must not count.
        let e = vec![vec![0.0], vec![0.1], vec![5.0]];
        let mm = [meta(0, 0, 0), meta(1, 0, 1), meta(0, 1, 2)];
        let m = rank_metrics(&e, &mm, &e, &mm, 3).unwrap();
        // Identity 1 has no other sample, so only two queries count.
        assert_eq!(m.queries, 2);
        assert_eq!(m.cmc, vec![0.0, 1.0, 1.0]);
        assert_eq!(m.map, 0.5);
    }

    #[test]
    fn no_match_is_an_error() {
        let e = vec![vec![0.0]];
        assert!(rank_metrics(&e, &[meta(0, 0, 0)], &e, &[meta(1, 1, 1)], 1).is_err());
    }

    #[test]
    fn quality_is_a_plain_average() {
        let a = GrayImage::filled(16, 16, 0.5).unwrap();
        let b = GrayImage::filled(16, 16, 0.6).unwrap();
        let c = GrayImage::filled(16, 16, 0.8).unwrap();
        let q = image_quality(&[b.clone(), c.clone()], &[&a, &a], &SsimConfig::default()).unwrap();
        let cfg = SsimConfig::default();
        let s = (ssim(&b, &a, &cfg).unwrap() + ssim(&c, &a, &cfg).unwrap()) / 2.0;
        let p = (psnr(&b, &a, 1.0).unwrap() + psnr(&c, &a, 1.0).unwrap()) / 2.0;
        assert_eq!(q.ssim, s);
        assert_eq!(q.psnr, p);
    }

    #[test]
    fn chance_counts_distinct_gallery_ids() {
        let set = EvalSet {
            name: "g".into(),
            shape: [1, 1, 1],
            inputs: vec![vec![0.0]; 4],
            meta: vec![meta(0, 1, 0), meta(0, 1, 1), meta(3, 1, 2), meta(4, 1, 3)],
        };
        assert_eq!(set.chance(), 1.0 / 3.0);
    }
}
