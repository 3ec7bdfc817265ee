//! Finite-difference gradient checks of every differentiable operation and
//! of each network through its training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffnet::gradcheck::{grad_check_sampled, ClosureObjective, DEFAULT_STEP};
use crate::diffnet::layers::{
    conv2d_backward, conv2d_forward, global_avg_pool, global_avg_pool_backward, leaky_relu,
    leaky_relu_backward, linear, linear_backward, sigmoid, sigmoid_backward, upsample2x,
    upsample2x_backward,
};
use crate::diffnet::loss::{batch_hard_triplet, softmax_cross_entropy};
use crate::diffnet::{ConvSpec, GradCheckReport, Network, Objective, Parameter, Probe, Tensor};
use crate::error::Result;
use crate::harness::config::TrainConfig;
use crate::harness::train::{image_loss, joint_objective, reid_loss};
use crate::metrics::{ssim_loss_rec_raw, ssim_loss_struct_raw, ssim_plane, SsimConfig};
use crate::models::{AnonymizerNet, AttackerNet, InverterNet, ModelConfig, ReIdNet, LEAKY_SLOPE};

/// Tolerance on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Tolerance for composites that pass through SSIM.
pub const SSIM_TOLERANCE: f64 = 1e-3;

const HEIGHT: usize = 16;
const WIDTH: usize = 16;
const BATCH: usize = 4;

#[derive(Debug, Clone)]
pub struct CheckCase {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CheckCase {
    pub fn passes(&self) -> bool {
        self.report.checked() > 0 && self.report.passes(self.tolerance)
    }
}

/// Objective over whole networks, driven by a closure.
struct NetsObjective<F> {
    nets: Vec<Network>,
    f: F,
}

impl<F> Objective for NetsObjective<F>
where
    F: FnMut(&mut [Network], bool) -> Result<Probe>,
{
    fn evaluate(&mut self, backprop: bool) -> Result<Probe> {
        (self.f)(&mut self.nets, backprop)
    }

    fn num_params(&self) -> usize {
        self.nets.iter().map(|n| n.params().len()).sum()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut Parameter {
        for net in &mut self.nets {
            let len = net.params().len();
            if index < len {
                return &mut net.params_mut()[index];
            }
            index -= len;
        }
        panic!("parameter index out of range")
    }
}

fn take(net: &mut Network) -> Network {
    std::mem::replace(net, Network::new(""))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
        .expect("shape matches")
}

fn param(name: &str, t: Tensor) -> Parameter {
    Parameter::new(name, t)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn add_grad(p: &mut Parameter, g: &Tensor) {
    p.grad.add_assign(g);
}

/// `P` identities with `K` samples each.
fn labels(ids: usize, per_id: usize) -> Vec<usize> {
    (0..ids)
        .flat_map(|i| std::iter::repeat_n(i, per_id))
        .collect()
}

fn sign_signature(x: &Tensor) -> Vec<u64> {
    x.data().iter().map(|&v| u64::from(v > 0.0)).collect()
}

/// A frame-like target and a voxel batch whose reconstructions overlap it.
fn toy_batch(bins: usize, rng: &mut impl Rng) -> (Tensor, Tensor) {
    let x = uniform(&[BATCH, bins, HEIGHT, WIDTH], -1.0, 1.0, rng);
    let frames = uniform(&[BATCH, 1, HEIGHT, WIDTH], 0.1, 0.9, rng);
    (x, frames)
}

fn run(
    name: &'static str,
    tolerance: f64,
    obj: &mut impl Objective,
    per_param: usize,
    rng: &mut impl Rng,
) -> Result<CheckCase> {
    let report = grad_check_sampled(obj, DEFAULT_STEP, per_param, rng)?;
    Ok(CheckCase {
        name,
        tolerance,
        report,
    })
}

fn conv_case(
    name: &'static str,
    stride: usize,
    rng: &mut ChaCha8Rng,
    per_param: usize,
) -> Result<CheckCase> {
    let spec = ConvSpec {
        in_channels: 3,
        out_channels: 4,
        kernel: 3,
        stride,
        pad: 1,
    };
    let (ho, wo) = spec.output_size(7, 6).expect("valid geometry");
    let probe = uniform(&[2, 4, ho, wo], -1.0, 1.0, rng);
    let mut obj = ClosureObjective {
        params: vec![
            param("input", uniform(&[2, 3, 7, 6], -1.0, 1.0, rng)),
            param("weight", uniform(&[4, 3, 3, 3], -1.0, 1.0, rng)),
            param("bias", uniform(&[4], -1.0, 1.0, rng)),
        ],
        f: move |ps: &mut [Parameter], backprop: bool| {
            let out = conv2d_forward(&ps[0].value, &ps[1].value, &ps[2].value, &spec)?;
            if backprop {
                let [x, w, b] = ps else { unreachable!() };
                let gi = conv2d_backward(
                    &x.value,
                    &w.value,
                    &spec,
                    &probe,
                    Some(&mut w.grad),
                    Some(&mut b.grad),
                    true,
                )?;
                add_grad(x, &gi.expect("input gradient requested"));
            }
            Ok(Probe::smooth(dot(&out, &probe)))
        },
    };
    run(name, TOLERANCE, &mut obj, per_param, rng)
}

fn linear_case(rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let probe = uniform(&[3, 4], -1.0, 1.0, rng);
    let mut obj = ClosureObjective {
        params: vec![
            param("input", uniform(&[3, 5], -1.0, 1.0, rng)),
            param("weight", uniform(&[4, 5], -1.0, 1.0, rng)),
            param("bias", uniform(&[4], -1.0, 1.0, rng)),
        ],
        f: move |ps: &mut [Parameter], backprop: bool| {
            let out = linear(&ps[0].value, &ps[1].value, &ps[2].value)?;
            if backprop {
                let [x, w, b] = ps else { unreachable!() };
                let gi = linear_backward(
                    &x.value,
                    &w.value,
                    &probe,
                    Some(&mut w.grad),
                    Some(&mut b.grad),
                )?;
                add_grad(x, &gi);
            }
            Ok(Probe::smooth(dot(&out, &probe)))
        },
    };
    run("linear", TOLERANCE, &mut obj, per_param, rng)
}

/// An input-only operation `f` with backward `df`, probed linearly.
fn unary_case(
    name: &'static str,
    input: Tensor,
    out_shape: &[usize],
    f: impl Fn(&Tensor) -> Result<Tensor>,
    df: impl Fn(&Tensor, &Tensor) -> Tensor,
    kinks: fn(&Tensor) -> Vec<u64>,
    rng: &mut ChaCha8Rng,
    per_param: usize,
) -> Result<CheckCase> {
    let probe = uniform(out_shape, -1.0, 1.0, rng);
    let mut obj = ClosureObjective {
        params: vec![param("input", input)],
        f: move |ps: &mut [Parameter], backprop: bool| {
            let out = f(&ps[0].value)?;
            if backprop {
                let g = df(&ps[0].value, &probe);
                add_grad(&mut ps[0], &g);
            }
            Ok(Probe {
                loss: dot(&out, &probe),
                signature: kinks(&ps[0].value),
            })
        },
    };
    run(name, TOLERANCE, &mut obj, per_param, rng)
}

fn cross_entropy_case(rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let y = vec![0, 2, 1, 2, 3];
    let mut obj = ClosureObjective {
        params: vec![param("logits", uniform(&[5, 4], -3.0, 3.0, rng))],
        f: move |ps: &mut [Parameter], backprop: bool| {
            let l = softmax_cross_entropy(&ps[0].value, &y)?;
            if backprop {
                add_grad(&mut ps[0], &l.grad);
            }
            Ok(Probe::smooth(l.loss))
        },
    };
    run("softmax_cross_entropy", TOLERANCE, &mut obj, per_param, rng)
}

fn triplet_case(rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let y = labels(3, 3);
    let mut obj = ClosureObjective {
        params: vec![param("embeddings", uniform(&[9, 6], -1.0, 1.0, rng))],
        f: move |ps: &mut [Parameter], backprop: bool| {
            let l = batch_hard_triplet(&ps[0].value, &y, 0.3)?;
            if backprop {
                add_grad(&mut ps[0], &l.grad);
            }
            Ok(Probe {
                loss: l.loss,
                signature: l.selections.iter().map(|&s| s as u64).collect(),
            })
        },
    };
    run("batch_hard_triplet", TOLERANCE, &mut obj, per_param, rng)
}

fn ssim_case(rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let target = uniform(&[HEIGHT, WIDTH], 0.0, 1.0, rng);
    let mut pred = target.clone();
    pred.add_assign(&uniform(&[HEIGHT, WIDTH], -0.2, 0.2, rng));
    let cfg = SsimConfig::default();
    let mut obj = ClosureObjective {
        params: vec![param("pred", pred)],
        f: move |ps: &mut [Parameter], backprop: bool| {
            let (s, g) = ssim_plane(
                ps[0].value.data(),
                target.data(),
                HEIGHT,
                WIDTH,
                &cfg,
                backprop,
            )?;
            if let Some(g) = g {
                ps[0]
                    .grad
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, v)| *d += v);
            }
            Ok(Probe::smooth(s))
        },
    };
    run("ssim", SSIM_TOLERANCE, &mut obj, per_param, rng)
}

fn ssim_rec_case(rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let target = uniform(&[HEIGHT, WIDTH], 0.0, 1.0, rng);
    let mut pred = target.clone();
    pred.add_assign(&uniform(&[HEIGHT, WIDTH], -0.3, 0.3, rng));
    let cfg = SsimConfig::default();
    let mut obj = ClosureObjective {
        params: vec![param("pred", pred)],
        f: move |ps: &mut [Parameter], backprop: bool| {
            let r = ssim_loss_rec_raw(ps[0].value.data(), target.data(), HEIGHT, WIDTH, &cfg)?;
            if backprop {
                ps[0]
                    .grad
                    .data_mut()
                    .iter_mut()
                    .zip(&r.grad)
                    .for_each(|(d, v)| *d += v);
            }
            Ok(Probe {
                loss: r.value,
                signature: vec![u64::from(r.clamped)],
            })
        },
    };
    run("ssim_loss_rec", SSIM_TOLERANCE, &mut obj, per_param, rng)
}

fn ssim_struct_case(rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let bins = 3;
    let x = uniform(&[bins, HEIGHT, WIDTH], -1.0, 1.0, rng);
    let mut xhat = x.clone();
    xhat.add_assign(&uniform(&[bins, HEIGHT, WIDTH], -0.3, 0.3, rng));
    let cfg = SsimConfig::default();
    let mut obj = ClosureObjective {
        params: vec![param("xhat", xhat)],
        f: move |ps: &mut [Parameter], backprop: bool| {
            let r = ssim_loss_struct_raw(ps[0].value.data(), x.data(), bins, HEIGHT, WIDTH, &cfg)?;
            if backprop {
                ps[0]
                    .grad
                    .data_mut()
                    .iter_mut()
                    .zip(&r.grad)
                    .for_each(|(d, v)| *d += v);
            }
            Ok(Probe {
                loss: r.value,
                signature: vec![u64::from(r.clamped)],
            })
        },
    };
    run("ssim_loss_struct", SSIM_TOLERANCE, &mut obj, per_param, rng)
}

fn bool_signature(bits: Vec<bool>) -> Vec<u64> {
    bits.into_iter().map(u64::from).collect()
}

fn anonymizer_case(
    model: &ModelConfig,
    rng: &mut ChaCha8Rng,
    per_param: usize,
) -> Result<CheckCase> {
    let an = AnonymizerNet::new(model, rng);
    let (x, _) = toy_batch(model.bins, rng);
    let ssim = SsimConfig::default();
    let (bins, vol) = (model.bins, model.bins * HEIGHT * WIDTH);
    let mut obj = NetsObjective {
        nets: vec![an.net],
        f: move |nets: &mut [Network], backprop: bool| {
            let (xhat, tape) = nets[0].forward_with_tape(&x)?;
            let mut signature = bool_signature(tape.kink_signature(&nets[0]));
            let mut g = Tensor::zeros(xhat.shape());
            let mut loss = 0.0;
            for i in 0..BATCH {
                let r = ssim_loss_struct_raw(
                    &xhat.data()[i * vol..][..vol],
                    &x.data()[i * vol..][..vol],
                    bins,
                    HEIGHT,
                    WIDTH,
                    &ssim,
                )?;
                loss += r.value / BATCH as f64;
                signature.push(u64::from(r.clamped));
                for (o, v) in g.data_mut()[i * vol..][..vol].iter_mut().zip(&r.grad) {
                    *o = v / BATCH as f64;
                }
            }
            if backprop {
                nets[0].backward(&tape, &g)?;
            }
            Ok(Probe { loss, signature })
        },
    };
    run(
        "anonymizer/l_struct",
        SSIM_TOLERANCE,
        &mut obj,
        per_param,
        rng,
    )
}

fn attacker_case(model: &ModelConfig, rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let rec = AttackerNet::new(model, rng);
    let (x, frames) = toy_batch(model.bins, rng);
    let ssim = SsimConfig::default();
    let mut obj = NetsObjective {
        nets: vec![rec.net],
        f: move |nets: &mut [Network], backprop: bool| {
            let (pred, tape) = nets[0].forward_with_tape(&x)?;
            let (loss, g) = image_loss(&pred, &frames, &ssim, 1.0)?;
            if backprop {
                nets[0].backward(&tape, &g)?;
            }
            Ok(Probe {
                loss,
                signature: bool_signature(tape.kink_signature(&nets[0])),
            })
        },
    };
    run("attacker/1-ssim", SSIM_TOLERANCE, &mut obj, per_param, rng)
}

fn reid_case(model: &ModelConfig, rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let y = labels(2, BATCH / 2);
    let reid = ReIdNet::new(model.bins, model, 3, rng);
    let (x, _) = toy_batch(model.bins, rng);
    let (dim, classes) = (reid.embedding_dim, reid.num_classes);
    let mut obj = NetsObjective {
        nets: vec![reid.net],
        f: move |nets: &mut [Network], backprop: bool| {
            let mut r = ReIdNet {
                net: take(&mut nets[0]),
                embedding_dim: dim,
                num_classes: classes,
            };
            let l = reid_loss(&mut r, &x, &y, 0.3, 1.0, backprop);
            nets[0] = r.net;
            let l = l?;
            Ok(Probe {
                loss: l.total(),
                signature: l.signature,
            })
        },
    };
    run("reid/ce+triplet", TOLERANCE, &mut obj, per_param, rng)
}

fn inverter_case(model: &ModelConfig, rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let inv = InverterNet::new(model, rng);
    let mut rec = AttackerNet::new(model, rng);
    rec.freeze();
    let (x, frames) = toy_batch(model.bins, rng);
    let ssim = SsimConfig::default();
    let mut obj = NetsObjective {
        nets: vec![inv.net, rec.net],
        f: move |nets: &mut [Network], backprop: bool| {
            let (restored, inv_tape) = nets[0].forward_with_tape(&x)?;
            let (pred, rec_tape) = nets[1].forward_with_tape(&restored)?;
            let (loss, g) = image_loss(&pred, &frames, &ssim, 1.0)?;
            let mut signature = bool_signature(inv_tape.kink_signature(&nets[0]));
            signature.extend(bool_signature(rec_tape.kink_signature(&nets[1])));
            if backprop {
                let g_restored = nets[1].backward(&rec_tape, &g)?;
                nets[0].backward(&inv_tape, &g_restored)?;
            }
            Ok(Probe { loss, signature })
        },
    };
    run(
        "inverter/frozen-attacker/1-ssim",
        SSIM_TOLERANCE,
        &mut obj,
        per_param,
        rng,
    )
}

fn joint_case(model: &ModelConfig, rng: &mut ChaCha8Rng, per_param: usize) -> Result<CheckCase> {
    let y = labels(2, BATCH / 2);
    let an = AnonymizerNet::new(model, rng);
    let mut rec = AttackerNet::new(model, rng);
    rec.freeze();
    let reid = ReIdNet::new(model.bins, model, 3, rng);
    let (x, frames) = toy_batch(model.bins, rng);
    let (dim, classes) = (reid.embedding_dim, reid.num_classes);
    let cfg = TrainConfig::default();
    let ssim = SsimConfig::default();
    let mut obj = NetsObjective {
        nets: vec![an.net, rec.net, reid.net],
        f: move |nets: &mut [Network], backprop: bool| {
            let mut an = AnonymizerNet {
                net: take(&mut nets[0]),
            };
            let mut rec = AttackerNet {
                net: take(&mut nets[1]),
            };
            let mut reid = ReIdNet {
                net: take(&mut nets[2]),
                embedding_dim: dim,
                num_classes: classes,
            };
            let out = joint_objective(
                &mut an, &mut rec, &mut reid, &x, &frames, &y, &cfg, &ssim, backprop,
            );
            nets[0] = an.net;
            nets[1] = rec.net;
            nets[2] = reid.net;
            let (loss, signature) = out?;
            Ok(Probe {
                loss: loss.l_total,
                signature,
            })
        },
    };
    run("joint/l_total", SSIM_TOLERANCE, &mut obj, per_param, rng)
}

/// Run every check once under `seed`, sampling at most `per_param`
/// elements of each parameter tensor.
pub fn run_suite(model: &ModelConfig, seed: u64, per_param: usize) -> Result<Vec<CheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let x4 = |rng: &mut ChaCha8Rng| uniform(&[2, 3, 4, 6], -1.0, 1.0, rng);
    let mut cases = vec![
        conv_case("conv2d/stride1", 1, rng, per_param)?,
        conv_case("conv2d/stride2", 2, rng, per_param)?,
        linear_case(rng, per_param)?,
    ];
    let input = x4(rng);
    cases.push(unary_case(
        "leaky_relu",
        input,
        &[2, 3, 4, 6],
        |x| Ok(leaky_relu(x, LEAKY_SLOPE)),
        |x, g| leaky_relu_backward(x, LEAKY_SLOPE, g),
        sign_signature,
        rng,
        per_param,
    )?);
    let input = x4(rng);
    cases.push(unary_case(
        "sigmoid",
        input,
        &[2, 3, 4, 6],
        |x| Ok(sigmoid(x)),
        sigmoid_backward,
        |_| Vec::new(),
        rng,
        per_param,
    )?);
    let input = x4(rng);
    cases.push(unary_case(
        "global_avg_pool",
        input,
        &[2, 3],
        global_avg_pool,
        |x, g| global_avg_pool_backward(x.shape(), g),
        |_| Vec::new(),
        rng,
        per_param,
    )?);
    let input = x4(rng);
    cases.push(unary_case(
        "upsample2x",
        input,
        &[2, 3, 8, 12],
        upsample2x,
        |x, g| upsample2x_backward(x.shape(), g),
        |_| Vec::new(),
        rng,
        per_param,
    )?);
    cases.push(cross_entropy_case(rng, per_param)?);
    cases.push(triplet_case(rng, per_param)?);
    cases.push(ssim_case(rng, per_param)?);
    cases.push(ssim_rec_case(rng, per_param)?);
    cases.push(ssim_struct_case(rng, per_param)?);
    cases.push(anonymizer_case(model, rng, per_param)?);
    cases.push(attacker_case(model, rng, per_param)?);
    cases.push(reid_case(model, rng, per_param)?);
    cases.push(inverter_case(model, rng, per_param)?);
    cases.push(joint_case(model, rng, per_param)?);
    Ok(cases)
}
