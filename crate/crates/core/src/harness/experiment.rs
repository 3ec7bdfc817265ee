//! The end-to-end privacy experiment on a toy corpus: attacker
//! pretraining, joint anonymization (with an α = 0 ablation), a raw-voxel
//! ReId baseline, the retrieval attack and the inversion attack.

use super::config::TrainConfig;
use super::data::{build_dataset, Augment, Dataset};
use super::eval::{
    evaluate_image_quality, evaluate_reid, image_quality, reconstruct_all, retrieval_attack,
    EvalReport, EvalSet, ImageQuality,
};
use super::report::Report;
use super::train::{train_attacker, train_inverter, train_joint, train_reid, LossBreakdown};
use crate::diffnet::OptimConfig;
use crate::error::Result;
use crate::event::{GrayImage, VoxelGrid};
use crate::metrics::SsimConfig;
use crate::models::{AnonymizerNet, AttackerNet, InverterNet, ModelConfig, ReIdNet};
use crate::simulator::ToyCorpus;

/// Query camera of every retrieval; the gallery comes from the others.
pub const QUERY_CAMERA: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub ssim: SsimConfig,
    pub attacker: TrainConfig,
    pub joint: TrainConfig,
    /// Raw-voxel ReId baseline and the retrieval embedder.
    pub reid: TrainConfig,
    pub inversion: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper(7)
    }
}

impl ExperimentConfig {
    /// Paper schedule and loss weights for every stage.
    pub fn paper(seed: u64) -> Self {
        Self::with_stages(
            ModelConfig::default(),
            std::array::from_fn(|_| TrainConfig::default()),
            seed,
        )
    }

    /// Narrow networks and a shortened, faster schedule that fits the
    /// whole experiment into a few minutes on one core.
    pub fn toy(seed: u64) -> Self {
        let stage = |lr: f64, epochs: usize| TrainConfig {
            optim: OptimConfig {
                learning_rate: lr,
                ..OptimConfig::default()
            },
            epochs,
            ..TrainConfig::default()
        };
        Self::with_stages(
            ModelConfig::toy(),
            [
                stage(0.02, 20),
                TrainConfig {
                    optim: OptimConfig {
                        clip_norm: 5.0,
                        ..stage(0.01, 30).optim
                    },
                    ..stage(0.01, 30)
                },
                TrainConfig {
                    augment: Augment::Mirror,
                    ..stage(0.01, 200)
                },
                stage(0.02, 20),
            ],
            seed,
        )
    }

    /// Stages in order attacker, joint, ReId, inversion; each gets its own
    /// seed derived from `seed`.
    fn with_stages(model: ModelConfig, stages: [TrainConfig; 4], seed: u64) -> Self {
        let [attacker, joint, reid, inversion] = stages;
        let stage = |cfg: TrainConfig, k: u64| TrainConfig {
            seed: seed.wrapping_mul(1000).wrapping_add(k),
            ..cfg
        };
        Self {
            model,
            ssim: SsimConfig::default(),
            attacker: stage(attacker, 1),
            joint: stage(joint, 2),
            reid: stage(reid, 3),
            inversion: stage(inversion, 4),
        }
    }

    /// Same configuration with the structure term switched off.
    pub fn ablation(&self) -> TrainConfig {
        TrainConfig {
            alpha: 0.0,
            ..self.joint.clone()
        }
    }
}

/// Every measured quantity of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub raw_quality: ImageQuality,
    pub anon_quality: ImageQuality,
    /// ReId on raw voxels with a network trained on raw voxels.
    pub reid_raw: EvalReport,
    /// ReId on anonymized voxels with the jointly trained network.
    pub reid_anon: EvalReport,
    /// Same as `reid_anon`, trained without the structure term.
    pub reid_ablation: EvalReport,
    /// Retrieval pairings: RGB vs raw-event reconstructions, raw-event vs
    /// anonymized reconstructions, RGB vs anonymized reconstructions.
    pub retrieval: Vec<EvalReport>,
    /// RGB vs reconstructions of inverted anonymized voxels.
    pub inversion: EvalReport,
    pub attacker_curve: Vec<f64>,
    pub joint_log: Vec<LossBreakdown>,
    pub ablation_log: Vec<LossBreakdown>,
    pub reid_curve: Vec<f64>,
    pub inversion_curve: Vec<f64>,
}

impl ExperimentOutcome {
    pub fn no_privacy(&self) -> &EvalReport {
        &self.retrieval[0]
    }

    pub fn privacy(&self) -> &EvalReport {
        &self.retrieval[2]
    }

    pub fn to_report(&self) -> Result<Report> {
        let mut r = Report::new();
        for (name, q) in [
            ("quality.raw", &self.raw_quality),
            ("quality.anonymized", &self.anon_quality),
        ] {
            r.set(&format!("{name}.ssim"), q.ssim)?;
            r.set(&format!("{name}.psnr"), q.psnr)?;
            r.set(&format!("{name}.windows"), q.count)?;
        }
        r.push_eval("reid.raw", &self.reid_raw)?;
        r.push_eval("reid.anonymized", &self.reid_anon)?;
        r.push_eval("reid.ablation", &self.reid_ablation)?;
        for (name, rep) in [
            "retrieval.rgb_event",
            "retrieval.event_anon",
            "retrieval.rgb_anon",
        ]
        .iter()
        .zip(&self.retrieval)
        {
            r.push_eval(name, rep)?;
        }
        r.push_eval("retrieval.rgb_inverted", &self.inversion)?;
        r.push_curve("curve.attacker", &self.attacker_curve)?;
        r.push_losses("curve.joint", &self.joint_log)?;
        r.push_losses("curve.ablation", &self.ablation_log)?;
        r.push_curve("curve.reid", &self.reid_curve)?;
        r.push_curve("curve.inversion", &self.inversion_curve)?;
        Ok(r)
    }
}

fn split_cameras(data: &Dataset) -> (Vec<usize>, Vec<usize>) {
    (0..data.len()).partition(|&i| data.samples[i].camera == QUERY_CAMERA)
}

fn pick<'a, T>(items: &[&'a T], idx: &[usize]) -> Vec<&'a T> {
    idx.iter().map(|&i| items[i]).collect()
}

fn image_set(name: &str, data: &Dataset, images: &[&GrayImage], idx: &[usize]) -> Result<EvalSet> {
    EvalSet::from_images(
        name,
        &pick(images, idx),
        idx.iter().map(|&i| data.meta(i)).collect(),
    )
}

fn voxel_set(name: &str, data: &Dataset, voxels: &[&VoxelGrid], idx: &[usize]) -> Result<EvalSet> {
    EvalSet::from_voxels(
        name,
        &pick(voxels, idx),
        idx.iter().map(|&i| data.meta(i)).collect(),
    )
}

/// Windowed datasets of both corpus splits.
pub fn corpus_datasets(corpus: &ToyCorpus, cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    Ok((
        build_dataset(&corpus.train, cfg.contrast, cfg.window_us, cfg.bins)?,
        build_dataset(&corpus.test, cfg.contrast, cfg.window_us, cfg.bins)?,
    ))
}

/// Cross-camera query and gallery sets of `voxels` (one per test sample).
fn voxel_pair(name: &str, test: &Dataset, voxels: &[&VoxelGrid]) -> Result<(EvalSet, EvalSet)> {
    let (q_idx, g_idx) = split_cameras(test);
    Ok((
        voxel_set(name, test, voxels, &q_idx)?,
        voxel_set(name, test, voxels, &g_idx)?,
    ))
}

/// Train a ReId network on raw training voxels and evaluate it on raw test
/// voxels.
pub fn raw_reid_baseline(
    train: &Dataset,
    test: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ReIdNet, Vec<f64>, EvalReport)> {
    let rows: Vec<&[f64]> = train.samples.iter().map(|s| s.voxel.data()).collect();
    let shape = train.samples[0].voxel.shape();
    let (net, curve) = train_reid(
        &rows,
        shape,
        &train.labels(),
        train.num_classes(),
        model,
        cfg,
    )?;
    let (q, g) = voxel_pair("raw-event", test, &test.voxels())?;
    let report = evaluate_reid(&net, &q, &g)?;
    Ok((net, curve, report))
}

/// ReId of anonymized test voxels with a jointly trained pair.
pub fn anonymized_reid(test: &Dataset, an: &AnonymizerNet, reid: &ReIdNet) -> Result<EvalReport> {
    let hidden = an.anonymize_batch(&test.voxels())?;
    let hidden: Vec<&VoxelGrid> = hidden.iter().collect();
    let (q, g) = voxel_pair("anonymized-event", test, &hidden)?;
    evaluate_reid(reid, &q, &g)
}

/// The retrieval attacker's training material: RGB frames and
/// reconstructions of raw events from the training split.
pub fn attack_training_set(train: &Dataset, rec: &AttackerNet) -> Result<EvalSet> {
    let all: Vec<usize> = (0..train.len()).collect();
    let recon = reconstruct_all(None, rec, &train.voxels())?;
    image_set("rgb", train, &train.frames(), &all)?.concat(
        &image_set("event", train, &recon.iter().collect::<Vec<_>>(), &all)?,
        "attack-train",
    )
}

fn gallery_quality(
    test: &Dataset,
    recon: &[&GrayImage],
    g_idx: &[usize],
    ssim: &SsimConfig,
) -> Result<ImageQuality> {
    let frames = test.frames();
    let picked: Vec<GrayImage> = g_idx.iter().map(|&i| recon[i].clone()).collect();
    image_quality(&picked, &pick(&frames, g_idx), ssim)
}

/// Retrieval attack with a freshly trained image embedder over the
/// pairings RGB vs raw-event reconstructions, raw-event vs anonymized
/// reconstructions and RGB vs anonymized reconstructions.
pub fn retrieval_stage(
    train: &Dataset,
    test: &Dataset,
    rec: &AttackerNet,
    an: &AnonymizerNet,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ssim: &SsimConfig,
) -> Result<(ReIdNet, Vec<EvalReport>)> {
    let (q_idx, g_idx) = split_cameras(test);
    let voxels = test.voxels();
    let raw = reconstruct_all(None, rec, &voxels)?;
    let anon = reconstruct_all(Some(an), rec, &voxels)?;
    let raw: Vec<&GrayImage> = raw.iter().collect();
    let anon: Vec<&GrayImage> = anon.iter().collect();
    let q_rgb = image_set("rgb", test, &test.frames(), &q_idx)?;
    let q_event = image_set("event", test, &raw, &q_idx)?;
    let g_event = image_set("event", test, &raw, &g_idx)?;
    let g_anon = image_set("anonymized-event", test, &anon, &g_idx)?;
    let (embedder, mut reports) = retrieval_attack(
        &attack_training_set(train, rec)?,
        &[(&q_rgb, &g_event), (&q_event, &g_anon), (&q_rgb, &g_anon)],
        model,
        cfg,
    )?;
    reports[0].quality = Some(gallery_quality(test, &raw, &g_idx, ssim)?);
    let anon_quality = gallery_quality(test, &anon, &g_idx, ssim)?;
    reports[1].quality = Some(anon_quality);
    reports[2].quality = Some(anon_quality);
    Ok((embedder, reports))
}

/// Inversion attack: train `E_inv` against the frozen attacker, then
/// retrieve RGB queries among reconstructions of inverted anonymized test
/// voxels with `embedder`.
pub fn inversion_stage(
    train: &Dataset,
    test: &Dataset,
    an: &AnonymizerNet,
    rec: &mut AttackerNet,
    embedder: &ReIdNet,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ssim: &SsimConfig,
) -> Result<(InverterNet, Vec<f64>, EvalReport)> {
    let (inv, curve) = train_inverter(train, an, rec, model, cfg, ssim)?;
    let (q_idx, g_idx) = split_cameras(test);
    let hidden = an.anonymize_batch(&test.voxels())?;
    let restored = inv.invert_batch(&hidden.iter().collect::<Vec<_>>())?;
    let recon = reconstruct_all(None, rec, &restored.iter().collect::<Vec<_>>())?;
    let recon: Vec<&GrayImage> = recon.iter().collect();
    let q_rgb = image_set("rgb", test, &test.frames(), &q_idx)?;
    let g_inv = image_set("inverted-event", test, &recon, &g_idx)?;
    let mut report = evaluate_reid(embedder, &q_rgb, &g_inv)?;
    report.quality = Some(gallery_quality(test, &recon, &g_idx, ssim)?);
    Ok((inv, curve, report))
}

pub fn run_experiment(corpus: &ToyCorpus, cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (train, test) = corpus_datasets(corpus, &cfg.joint)?;
    let (ssim, model) = (&cfg.ssim, &cfg.model);

    let (mut rec, attacker_curve) = train_attacker(&train, model, &cfg.attacker, ssim)?;
    let (reid_raw_net, reid_curve, reid_raw) = raw_reid_baseline(&train, &test, model, &cfg.reid)?;
    let joint = train_joint(
        &train,
        &mut rec,
        Some(&reid_raw_net),
        model,
        &cfg.joint,
        ssim,
        None,
    )?;
    let ablation = train_joint(
        &train,
        &mut rec,
        Some(&reid_raw_net),
        model,
        &cfg.ablation(),
        ssim,
        None,
    )?;
    let an = &joint.anonymizer;

    let raw_quality = evaluate_image_quality(None, &rec, &test, ssim)?;
    let anon_quality = evaluate_image_quality(Some(an), &rec, &test, ssim)?;
    let reid_anon = anonymized_reid(&test, an, &joint.reid)?;
    let reid_ablation = anonymized_reid(&test, &ablation.anonymizer, &ablation.reid)?;

    let (embedder, retrieval) = retrieval_stage(&train, &test, &rec, an, model, &cfg.reid, ssim)?;
    let (_, inversion_curve, inversion) = inversion_stage(
        &train,
        &test,
        an,
        &mut rec,
        &embedder,
        model,
        &cfg.inversion,
        ssim,
    )?;

    Ok(ExperimentOutcome {
        raw_quality,
        anon_quality,
        reid_raw,
        reid_anon,
        reid_ablation,
        retrieval,
        inversion,
        attacker_curve,
        joint_log: joint.log,
        ablation_log: ablation.log,
        reid_curve,
        inversion_curve,
    })
}
