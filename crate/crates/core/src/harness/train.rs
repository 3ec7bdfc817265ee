use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{augment_batch, identity_batches, shuffled_batches, Dataset};
use crate::diffnet::loss::{batch_hard_triplet, softmax_cross_entropy};
use crate::diffnet::{sgd_step, Tensor};
use crate::error::{Error, Result};
use crate::event::{GrayImage, VoxelGrid};
use crate::metrics::{ssim_loss_rec_raw, ssim_loss_struct_raw, ssim_plane, SsimConfig};
use crate::models::{save_model, AnonymizerNet, AttackerNet, InverterNet, ModelConfig, ReIdNet};

/// Per-step loss terms of joint training.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_struct: f64,
    pub l_rec: f64,
    pub l_reid: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn new(l_struct: f64, l_rec: f64, l_reid: f64, cfg: &TrainConfig) -> Self {
        Self {
            l_struct,
            l_rec,
            l_reid,
            l_total: cfg.alpha * l_struct + cfg.beta * l_rec + cfg.gamma * l_reid,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_struct, self.l_rec, self.l_reid, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }

    fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            l_struct: sum(|b| b.l_struct),
            l_rec: sum(|b| b.l_rec),
            l_reid: sum(|b| b.l_reid),
            l_total: sum(|b| b.l_total),
        }
    }
}

fn push_bools(sig: &mut Vec<u64>, bits: impl IntoIterator<Item = bool>) {
    sig.extend(bits.into_iter().map(u64::from));
}

pub fn gather_voxels(voxels: &[&VoxelGrid], idx: &[usize]) -> Result<Tensor> {
    let picked: Vec<&VoxelGrid> = idx.iter().map(|&i| voxels[i]).collect();
    crate::models::voxels_to_tensor(&picked)
}

pub fn gather_images(images: &[&GrayImage], idx: &[usize]) -> Result<Tensor> {
    let picked: Vec<&GrayImage> = idx.iter().map(|&i| images[i]).collect();
    crate::models::images_to_tensor(&picked)
}

fn check_loss(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what} loss")))
    }
}

/// Identity loss terms of one batch.
#[derive(Debug, Clone)]
pub struct ReIdLoss {
    pub cross_entropy: f64,
    pub triplet: f64,
    /// Gradient w.r.t. the network input, when backpropagated.
    pub input_grad: Option<Tensor>,
    pub signature: Vec<u64>,
}

impl ReIdLoss {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.triplet
    }
}

/// Cross-entropy on the logits plus batch-hard triplet on the embeddings.
/// With `backprop`, gradients scaled by `weight` accumulate into `reid`.
pub fn reid_loss(
    reid: &mut ReIdNet,
    x: &Tensor,
    labels: &[usize],
    margin: f64,
    weight: f64,
    backprop: bool,
) -> Result<ReIdLoss> {
    let (logits, tape) = reid.net.forward_with_tape(x)?;
    let emb_idx = reid.embedding_index();
    let ce = softmax_cross_entropy(&logits, labels)?;
    let tri = batch_hard_triplet(tape.activation(emb_idx), labels, margin)?;
    let mut signature = Vec::new();
    push_bools(&mut signature, tape.kink_signature(&reid.net));
    signature.extend(tri.selections.iter().map(|&s| s as u64));
    let input_grad = if backprop {
        let mut g_logits = ce.grad;
        g_logits.scale(weight);
        let mut g_emb = tri.grad;
        g_emb.scale(weight);
        Some(
            reid.net
                .backward_with(&tape, &g_logits, &[(emb_idx, &g_emb)])?,
        )
    } else {
        None
    };
    Ok(ReIdLoss {
        cross_entropy: ce.loss,
        triplet: tri.loss,
        input_grad,
        signature,
    })
}

/// Mean `1 - SSIM` of predicted images `pred` (n, 1, h, w) against
/// `target`, with its gradient w.r.t. `pred` scaled by `weight`.
pub fn image_loss(
    pred: &Tensor,
    target: &Tensor,
    ssim: &SsimConfig,
    weight: f64,
) -> Result<(f64, Tensor)> {
    let (n, _, h, w) = pred.dims4("image_loss")?;
    if target.shape() != pred.shape() {
        return Err(Error::Shape {
            op: "image_loss",
            expected: pred.shape().to_vec(),
            actual: target.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for i in 0..n {
        let (s, g) = ssim_plane(
            &pred.data()[i * plane..][..plane],
            &target.data()[i * plane..][..plane],
            h,
            w,
            ssim,
            true,
        )?;
        loss += 1.0 - s;
        for (o, v) in grad.data_mut()[i * plane..][..plane]
            .iter_mut()
            .zip(g.expect("gradient requested"))
        {
            *o = -weight * v / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Joint anonymization objective on one batch: raw voxels `x`, frames
/// `frames` and identity labels. With `backprop`, the weighted total's
/// gradients accumulate into the anonymizer and the ReId network; the
/// attacker is traversed but never updated.
pub fn joint_objective(
    an: &mut AnonymizerNet,
    rec: &mut AttackerNet,
    reid: &mut ReIdNet,
    x: &Tensor,
    frames: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    ssim: &SsimConfig,
    backprop: bool,
) -> Result<(LossBreakdown, Vec<u64>)> {
    let (n, b, h, w) = x.dims4("joint_objective")?;
    let (xhat, an_tape) = an.net.forward_with_tape(x)?;
    let mut signature = Vec::new();
    push_bools(&mut signature, an_tape.kink_signature(&an.net));

    let vol = b * h * w;
    let mut g_xhat = Tensor::zeros(xhat.shape());
    let mut l_struct = 0.0;
    for i in 0..n {
        let r = ssim_loss_struct_raw(
            &xhat.data()[i * vol..][..vol],
            &x.data()[i * vol..][..vol],
            b,
            h,
            w,
            ssim,
        )?;
        l_struct += r.value;
        signature.push(u64::from(r.clamped));
        for (o, v) in g_xhat.data_mut()[i * vol..][..vol].iter_mut().zip(&r.grad) {
            *o = cfg.alpha * v / n as f64;
        }
    }
    l_struct /= n as f64;

    let (img, rec_tape) = rec.net.forward_with_tape(&xhat)?;
    push_bools(&mut signature, rec_tape.kink_signature(&rec.net));
    let plane = h * w;
    let mut g_img = Tensor::zeros(img.shape());
    let mut l_rec = 0.0;
    for i in 0..n {
        let r = ssim_loss_rec_raw(
            &img.data()[i * plane..][..plane],
            &frames.data()[i * plane..][..plane],
            h,
            w,
            ssim,
        )?;
        l_rec += r.value;
        signature.push(u64::from(r.clamped));
        for (o, v) in g_img.data_mut()[i * plane..][..plane]
            .iter_mut()
            .zip(&r.grad)
        {
            *o = cfg.beta * v / n as f64;
        }
    }
    l_rec /= n as f64;

    let rl = reid_loss(reid, &xhat, labels, cfg.margin, cfg.gamma, backprop)?;
    signature.extend(&rl.signature);
    let breakdown = LossBreakdown::new(l_struct, l_rec, rl.total(), cfg);

    if backprop {
        g_xhat.add_assign(&rec.net.backward(&rec_tape, &g_img)?);
        g_xhat.add_assign(rl.input_grad.as_ref().expect("backprop requested"));
        an.net.backward(&an_tape, &g_xhat)?;
    }
    Ok((breakdown, signature))
}

/// One optimizer step of joint training on a batch. The attacker must be
/// frozen.
pub fn joint_step(
    an: &mut AnonymizerNet,
    rec: &mut AttackerNet,
    reid: &mut ReIdNet,
    x: &Tensor,
    frames: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    ssim: &SsimConfig,
) -> Result<LossBreakdown> {
    if !rec.is_frozen() {
        return Err(Error::invalid("joint training requires a frozen attacker"));
    }
    an.net.zero_grad();
    reid.net.zero_grad();
    let (loss, _) = joint_objective(an, rec, reid, x, frames, labels, cfg, ssim, true)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite joint loss {loss:?}")));
    }
    sgd_step(
        an.net.params_mut().iter_mut().chain(reid.net.params_mut()),
        &cfg.optim,
    );
    Ok(loss)
}

/// Pretrain the reconstruction attacker on raw (voxel, frame) pairs by
/// minimising `1 - SSIM`, then freeze it. Returns per-epoch mean losses.
pub fn train_attacker(
    data: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ssim: &SsimConfig,
) -> Result<(AttackerNet, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rec = AttackerNet::new(model, &mut rng);
    let (voxels, frames) = (data.voxels(), data.frames());
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut losses = Vec::new();
        for idx in shuffled_batches(data.len(), cfg.batch_size(), &mut rng) {
            let x = gather_voxels(&voxels, &idx)?;
            let target = gather_images(&frames, &idx)?;
            rec.net.zero_grad();
            let (pred, tape) = rec.net.forward_with_tape(&x)?;
            let (loss, g) = image_loss(&pred, &target, ssim, 1.0)?;
            check_loss("attacker", loss)?;
            rec.net.backward(&tape, &g)?;
            sgd_step(rec.net.params_mut(), &cfg.optim);
            losses.push(loss);
        }
        curve.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    rec.freeze();
    Ok((rec, curve))
}

/// Result of joint anonymization training.
#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub anonymizer: AnonymizerNet,
    pub reid: ReIdNet,
    /// Per-epoch mean loss terms.
    pub log: Vec<LossBreakdown>,
}

pub const CHECKPOINT_EVERY: usize = 10;

/// Jointly train a fresh anonymizer and a ReId network against the frozen
/// attacker. The ReId network starts from `init_reid` when given, else
/// from scratch. With `checkpoints`, both networks are saved there every
/// [`CHECKPOINT_EVERY`] epochs and at the end.
pub fn train_joint(
    data: &Dataset,
    rec: &mut AttackerNet,
    init_reid: Option<&ReIdNet>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ssim: &SsimConfig,
    checkpoints: Option<&Path>,
) -> Result<JointOutcome> {
    cfg.validate()?;
    if !rec.is_frozen() {
        return Err(Error::invalid("joint training requires a frozen attacker"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut an = AnonymizerNet::new(model, &mut rng);
    let mut reid = ReIdNet::new(model.bins, model, data.num_classes(), &mut rng);
    if let Some(init) = init_reid {
        if init.net.params().len() != reid.net.params().len()
            || init
                .net
                .params()
                .iter()
                .zip(reid.net.params())
                .any(|(a, b)| a.value.shape() != b.value.shape())
        {
            return Err(Error::invalid(
                "initial ReId network does not match the model configuration",
            ));
        }
        reid = init.clone();
        for p in reid.net.params_mut() {
            p.momentum.fill(0.0);
        }
    }
    let (voxels, frames, labels) = (data.voxels(), data.frames(), data.labels());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut steps = Vec::new();
        for idx in identity_batches(&labels, cfg.ids_per_batch, cfg.samples_per_id, &mut rng) {
            let mut x = gather_voxels(&voxels, &idx)?;
            let mut target = gather_images(&frames, &idx)?;
            augment_batch(&mut x, Some(&mut target), cfg.augment.spatial(), &mut rng)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            steps.push(joint_step(
                &mut an, rec, &mut reid, &x, &target, &y, cfg, ssim,
            )?);
        }
        log.push(LossBreakdown::mean(&steps));
        if let Some(dir) = checkpoints {
            if epoch % CHECKPOINT_EVERY == 0 || epoch == cfg.epochs {
                save_model(&an.net, dir.join("anonymizer.eann"))?;
                save_model(&reid.net, dir.join("reid.eann"))?;
            }
        }
    }
    Ok(JointOutcome {
        anonymizer: an,
        reid,
        log,
    })
}

/// Train a ReId network alone on `inputs` (one sample per entry, each of
/// shape `sample_shape`) with cross-entropy plus triplet loss. Time
/// reversal is skipped for single-channel inputs. Returns the
/// network and its per-epoch mean losses.
pub fn train_reid(
    inputs: &[&[f64]],
    sample_shape: [usize; 3],
    labels: &[usize],
    num_classes: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ReIdNet, Vec<f64>)> {
    cfg.validate()?;
    if inputs.len() != labels.len() {
        return Err(Error::invalid("one label per input required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reid = ReIdNet::new(sample_shape[0], model, num_classes, &mut rng);
    let augment = if sample_shape[0] > 1 {
        cfg.augment
    } else {
        cfg.augment.spatial()
    };
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut losses = Vec::new();
        for idx in identity_batches(labels, cfg.ids_per_batch, cfg.samples_per_id, &mut rng) {
            let picked: Vec<&[f64]> = idx.iter().map(|&i| inputs[i]).collect();
            let mut x = Tensor::stack(&picked, &sample_shape)?;
            augment_batch(&mut x, None, augment, &mut rng)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            reid.net.zero_grad();
            let loss = reid_loss(&mut reid, &x, &y, cfg.margin, 1.0, true)?;
            check_loss("reid", loss.total())?;
            sgd_step(reid.net.params_mut(), &cfg.optim);
            losses.push(loss.total());
        }
        curve.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok((reid, curve))
}

/// Inversion attack training: learn `E_inv` so that the frozen attacker's
/// reconstruction of `E_inv(E_an(x))` matches the frames. The anonymizer
/// is only evaluated. Returns the inverter and per-epoch mean losses.
pub fn train_inverter(
    data: &Dataset,
    an: &AnonymizerNet,
    rec: &mut AttackerNet,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ssim: &SsimConfig,
) -> Result<(InverterNet, Vec<f64>)> {
    cfg.validate()?;
    if !rec.is_frozen() {
        return Err(Error::invalid(
            "inversion training requires a frozen attacker",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut inv = InverterNet::new(model, &mut rng);
    let anonymized = an.anonymize_batch(&data.voxels())?;
    let hidden: Vec<&VoxelGrid> = anonymized.iter().collect();
    let frames = data.frames();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut losses = Vec::new();
        for idx in shuffled_batches(data.len(), cfg.batch_size(), &mut rng) {
            let x = gather_voxels(&hidden, &idx)?;
            let target = gather_images(&frames, &idx)?;
            inv.net.zero_grad();
            let (restored, inv_tape) = inv.net.forward_with_tape(&x)?;
            let (pred, rec_tape) = rec.net.forward_with_tape(&restored)?;
            let (loss, g) = image_loss(&pred, &target, ssim, 1.0)?;
            check_loss("inversion", loss)?;
            let g_restored = rec.net.backward(&rec_tape, &g)?;
            inv.net.backward(&inv_tape, &g_restored)?;
            sgd_step(inv.net.params_mut(), &cfg.optim);
            losses.push(loss);
        }
        curve.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok((inv, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::build_dataset;
    use crate::simulator::{generate_toy_corpus, CorpusConfig};

    fn tiny() -> (Dataset, ModelConfig) {
        let corpus = generate_toy_corpus(&CorpusConfig {
            num_ids: 5,
            num_test_ids: Some(2),
            ..Default::default()
        })
        .unwrap();
        let model = ModelConfig {
            anonymizer_widths: [4, 4, 4],
            attacker_width: 4,
            reid_width: 4,
            embedding_dim: 8,
            ..ModelConfig::toy()
        };
        (build_dataset(&corpus.train, 0.2, 40_000, 5).unwrap(), model)
    }

    fn batch(data: &Dataset) -> (Tensor, Tensor, Vec<usize>) {
        let idx: Vec<usize> = (0..data.len()).step_by(2).collect();
        (
            gather_voxels(&data.voxels(), &idx).unwrap(),
            gather_images(&data.frames(), &idx).unwrap(),
            idx.iter().map(|&i| data.samples[i].label).collect(),
        )
    }

    fn nets(model: &ModelConfig, classes: usize) -> (AnonymizerNet, AttackerNet, ReIdNet) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let an = AnonymizerNet::new(model, &mut rng);
        let mut rec = AttackerNet::new(model, &mut rng);
        rec.freeze();
        let reid = ReIdNet::new(model.bins, model, classes, &mut rng);
        (an, rec, reid)
    }

    #[test]
    fn joint_step_respects_weights_and_freeze() {
        let (data, model) = tiny();
        let (x, frames, y) = batch(&data);
        let (mut an, mut rec, mut reid) = nets(&model, data.num_classes());
        let before = rec.clone();
        let cfg = TrainConfig {
            alpha: 0.5,
            beta: 2.0,
            gamma: 1.5,
            ..Default::default()
        };
        let loss = joint_step(
            &mut an,
            &mut rec,
            &mut reid,
            &x,
            &frames,
            &y,
            &cfg,
            &SsimConfig::default(),
        )
        .unwrap();
        let expect = 0.5 * loss.l_struct + 2.0 * loss.l_rec + 1.5 * loss.l_reid;
        assert!((loss.l_total - expect).abs() <= 1e-12);
        assert!(loss.is_finite());
        assert_eq!(rec, before);
    }

    #[test]
    fn unfrozen_attacker_is_refused() {
        let (data, model) = tiny();
        let (x, frames, y) = batch(&data);
        let (mut an, mut rec, mut reid) = nets(&model, data.num_classes());
        rec.net.set_trainable(true);
        let err = joint_step(
            &mut an,
            &mut rec,
            &mut reid,
            &x,
            &frames,
            &y,
            &TrainConfig::default(),
            &SsimConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_image_weights_reduce_to_reid_training() {
        let (data, model) = tiny();
        let (x, frames, y) = batch(&data);
        let (an0, mut rec, reid0) = nets(&model, data.num_classes());
        let ssim = SsimConfig::default();
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            ..Default::default()
        };
        let (mut an_a, mut reid_a) = (an0.clone(), reid0.clone());
        joint_step(
            &mut an_a,
            &mut rec,
            &mut reid_a,
            &x,
            &frames,
            &y,
            &cfg,
            &ssim,
        )
        .unwrap();

        // The same update computed from the identity loss alone.
        let (mut an_b, mut reid_b) = (an0.clone(), reid0.clone());
        an_b.net.zero_grad();
        reid_b.net.zero_grad();
        let (xhat, tape) = an_b.net.forward_with_tape(&x).unwrap();
        let rl = reid_loss(&mut reid_b, &xhat, &y, cfg.margin, 1.0, true).unwrap();
        an_b.net
            .backward(&tape, rl.input_grad.as_ref().unwrap())
            .unwrap();
        sgd_step(
            an_b.net
                .params_mut()
                .iter_mut()
                .chain(reid_b.net.params_mut()),
            &cfg.optim,
        );

        assert_eq!(an_a, an_b);
        assert_eq!(reid_a, reid_b);
        assert_ne!(an_a, an0);
    }

    #[test]
    fn attacker_training_improves_and_freezes() {
        let (data, model) = tiny();
        let cfg = TrainConfig {
            epochs: 4,
            optim: crate::diffnet::OptimConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            ..Default::default()
        };
        let (rec, curve) = train_attacker(&data, &model, &cfg, &SsimConfig::default()).unwrap();
        assert!(rec.is_frozen());
        assert_eq!(curve.len(), 4);
        assert!(curve[3] < curve[0], "{curve:?}");
    }

    #[test]
    fn joint_training_is_deterministic() {
        let (data, model) = tiny();
        let (_, mut rec, _) = nets(&model, data.num_classes());
        let cfg = TrainConfig {
            epochs: 2,
            ids_per_batch: 3,
            samples_per_id: 2,
            ..Default::default()
        };
        let ssim = SsimConfig::default();
        let a = train_joint(&data, &mut rec, None, &model, &cfg, &ssim, None).unwrap();
        let b = train_joint(&data, &mut rec, None, &model, &cfg, &ssim, None).unwrap();
        assert_eq!(a.anonymizer, b.anonymizer);
        assert_eq!(a.reid, b.reid);
        assert!(a.log.iter().all(LossBreakdown::is_finite));
    }

    #[test]
    fn inversion_leaves_anonymizer_untouched() {
        let (data, model) = tiny();
        let (an, mut rec, _) = nets(&model, data.num_classes());
        let before = an.clone();
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let (_, curve) =
            train_inverter(&data, &an, &mut rec, &model, &cfg, &SsimConfig::default()).unwrap();
        assert_eq!(an, before);
        assert_eq!(curve.len(), 2);
    }
}
