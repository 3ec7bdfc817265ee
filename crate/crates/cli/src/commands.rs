//! Subcommand implementations. Every command writes
//! `<reports>/<command>.report` (plus CSV tables) and
//! `<reports>/<command>.resolved-config`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use evanon::baselines::{descramble_events, discard_events, scramble_events};
use evanon::event::{read_events, write_events, EventStream};
use evanon::gradsuite::run_suite;
use evanon::harness::eval::evaluate_image_quality;
use evanon::harness::experiment::{
    anonymized_reid, inversion_stage, raw_reid_baseline, retrieval_stage,
};
use evanon::harness::{
    build_dataset_from_streams, emit_report, train_attacker, train_joint, Dataset, Report,
};
use evanon::models::{load_model, save_model, AnonymizerNet, AttackerNet, ReIdNet};
use evanon::simulator::{
    events_path, generate_toy_corpus, read_corpus, simulate_events, write_corpus, ToyCorpus,
};
use evanon::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{EncryptMode, RunConfig};

pub const ATTACKER: &str = "attacker.eann";
pub const ANONYMIZER: &str = "anonymizer.eann";
pub const REID: &str = "reid.eann";
pub const INVERTER: &str = "inverter.eann";

/// A failed run: process exit code plus a one-line diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<Report, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        message: format!("io error on {}: {e}", path.display()),
    }
}

/// Write the report and the resolved configuration of a finished command.
pub fn finish(cfg: &RunConfig, command: &str, report: &Report) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.reports).map_err(|e| io_failure(&cfg.reports, e))?;
    emit_report(report, cfg.reports.join(format!("{command}.report")))?;
    let path = cfg.reports.join(format!("{command}.resolved-config"));
    fs::write(&path, cfg.echo(command)).map_err(|e| io_failure(&path, e))
}

fn rng(cfg: &RunConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed)
}

fn checkpoint(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.checkpoints.join(name)
}

fn ensure_checkpoint_dir(cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.checkpoints).map_err(|e| io_failure(&cfg.checkpoints, e))
}

/// Corpus plus train and test datasets built from the stored event files.
fn load_data(cfg: &RunConfig) -> Result<(ToyCorpus, Dataset, Dataset), Failure> {
    let corpus = read_corpus(&cfg.corpus)?;
    let build =
        |split: &str, seqs: &[evanon::simulator::FrameSequence]| -> Result<Dataset, Failure> {
            let streams = seqs
                .iter()
                .map(|s| read_events(events_path(&cfg.corpus, split, s)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(build_dataset_from_streams(
                seqs,
                &streams,
                cfg.train.window_us,
                cfg.train.bins,
            )?)
        };
    let train = build("train", &corpus.train)?;
    let test = build("test", &corpus.test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Failure {
            code: 2,
            message: "corpus yields no event windows".into(),
        });
    }
    Ok((corpus, train, test))
}

fn load_attacker(cfg: &RunConfig) -> Result<AttackerNet, Failure> {
    let mut rec = AttackerNet::new(&cfg.model_config(), &mut rng(cfg));
    load_model(&mut rec.net, checkpoint(cfg, ATTACKER))?;
    rec.freeze();
    Ok(rec)
}

fn load_anonymizer(cfg: &RunConfig) -> Result<AnonymizerNet, Failure> {
    let mut an = AnonymizerNet::new(&cfg.model_config(), &mut rng(cfg));
    load_model(&mut an.net, checkpoint(cfg, ANONYMIZER))?;
    Ok(an)
}

fn load_reid(cfg: &RunConfig, num_classes: usize) -> Result<ReIdNet, Failure> {
    let model = cfg.model_config();
    let mut reid = ReIdNet::new(model.bins, &model, num_classes, &mut rng(cfg));
    load_model(&mut reid.net, checkpoint(cfg, REID))?;
    Ok(reid)
}

pub fn gen_dataset(cfg: &RunConfig) -> Outcome {
    let corpus = generate_toy_corpus(&cfg.corpus_config())?;
    write_corpus(&corpus, &cfg.corpus)?;
    let mut r = Report::new();
    r.set("corpus", cfg.corpus.display())?;
    r.set("train.sequences", corpus.train.len())?;
    r.set("test.sequences", corpus.test.len())?;
    r.set("train.ids", corpus.train_ids.len())?;
    r.set("test.ids", corpus.test_ids.len())?;
    r.set("cameras", corpus.cameras.len())?;
    Ok(r)
}

pub fn simulate(cfg: &RunConfig) -> Outcome {
    let corpus = read_corpus(&cfg.corpus)?;
    let mut r = Report::new();
    let mut totals = [0usize; 2];
    for (split, seq) in corpus.sequences() {
        let stream = simulate_events(seq, cfg.train.contrast)?;
        write_events(&stream, events_path(&cfg.corpus, split, seq))?;
        totals[usize::from(split == "test")] += stream.len();
    }
    r.set("contrast", cfg.train.contrast)?;
    r.set("train.events", totals[0])?;
    r.set("test.events", totals[1])?;
    Ok(r)
}

pub fn train_attacker_cmd(cfg: &RunConfig) -> Outcome {
    let (_, train, test) = load_data(cfg)?;
    let model = cfg.model_config();
    let (rec, curve) = train_attacker(&train, &model, &cfg.train_config(), &cfg.ssim)?;
    ensure_checkpoint_dir(cfg)?;
    save_model(&rec.net, checkpoint(cfg, ATTACKER))?;
    let q = evaluate_image_quality(None, &rec, &test, &cfg.ssim)?;
    let mut r = Report::new();
    r.set("test.ssim", q.ssim)?;
    r.set("test.psnr", q.psnr)?;
    r.set("test.windows", q.count)?;
    r.push_curve("curve.attacker", &curve)?;
    Ok(r)
}

pub fn train_joint_cmd(cfg: &RunConfig) -> Outcome {
    let (_, train, test) = load_data(cfg)?;
    let model = cfg.model_config();
    let mut rec = load_attacker(cfg)?;
    let mut r = Report::new();
    let init = if cfg.reid_pretrain_epochs > 0 {
        let pre = evanon::harness::TrainConfig {
            epochs: cfg.reid_pretrain_epochs,
            ..cfg.train_config()
        };
        let (net, curve, report) = raw_reid_baseline(&train, &test, &model, &pre)?;
        r.push_eval("reid.raw", &report)?;
        r.push_curve("curve.reid_pretrain", &curve)?;
        Some(net)
    } else {
        None
    };
    ensure_checkpoint_dir(cfg)?;
    let joint = train_joint(
        &train,
        &mut rec,
        init.as_ref(),
        &model,
        &cfg.train_config(),
        &cfg.ssim,
        Some(&cfg.checkpoints),
    )?;
    save_model(&joint.anonymizer.net, checkpoint(cfg, ANONYMIZER))?;
    save_model(&joint.reid.net, checkpoint(cfg, REID))?;
    let q = evaluate_image_quality(Some(&joint.anonymizer), &rec, &test, &cfg.ssim)?;
    r.set("quality.anonymized.ssim", q.ssim)?;
    r.set("quality.anonymized.psnr", q.psnr)?;
    r.push_eval(
        "reid.anonymized",
        &anonymized_reid(&test, &joint.anonymizer, &joint.reid)?,
    )?;
    r.push_losses("curve.joint", &joint.log)?;
    Ok(r)
}

pub fn encrypt_baseline(cfg: &RunConfig) -> Outcome {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Failure::usage("encrypt-baseline needs --input"))?;
    let output = cfg
        .output
        .as_ref()
        .ok_or_else(|| Failure::usage("encrypt-baseline needs --output"))?;
    let stream = read_events(input)?;
    let out: EventStream = match cfg.mode {
        EncryptMode::Scramble => scramble_events(&stream, &cfg.key, cfg.ratio)?,
        EncryptMode::Descramble => descramble_events(&stream, &cfg.key, cfg.ratio)?,
        EncryptMode::Discard => discard_events(&stream, &cfg.key, cfg.ratio)?,
    };
    write_events(&out, output)?;
    let mut r = Report::new();
    r.set("mode", cfg.get("mode"))?;
    r.set("ratio", cfg.ratio)?;
    r.set("events.in", stream.len())?;
    r.set("events.out", out.len())?;
    Ok(r)
}

pub fn eval(cfg: &RunConfig) -> Outcome {
    let (_, train, test) = load_data(cfg)?;
    let model = cfg.model_config();
    let rec = load_attacker(cfg)?;
    let an = load_anonymizer(cfg)?;
    let reid = load_reid(cfg, train.num_classes())?;
    let tc = cfg.train_config();
    let mut r = Report::new();
    for (name, anonymizer) in [("quality.raw", None), ("quality.anonymized", Some(&an))] {
        let q = evaluate_image_quality(anonymizer, &rec, &test, &cfg.ssim)?;
        r.set(&format!("{name}.ssim"), q.ssim)?;
        r.set(&format!("{name}.psnr"), q.psnr)?;
        r.set(&format!("{name}.windows"), q.count)?;
    }
    let (_, _, raw) = raw_reid_baseline(&train, &test, &model, &tc)?;
    r.push_eval("reid.raw", &raw)?;
    r.push_eval("reid.anonymized", &anonymized_reid(&test, &an, &reid)?)?;
    let (_, reports) = retrieval_stage(&train, &test, &rec, &an, &model, &tc, &cfg.ssim)?;
    for (name, rep) in [
        "retrieval.rgb_event",
        "retrieval.event_anon",
        "retrieval.rgb_anon",
    ]
    .iter()
    .zip(&reports)
    {
        r.push_eval(name, rep)?;
    }
    Ok(r)
}

pub fn invert_attack(cfg: &RunConfig) -> Outcome {
    let (_, train, test) = load_data(cfg)?;
    let model = cfg.model_config();
    let mut rec = load_attacker(cfg)?;
    let an = load_anonymizer(cfg)?;
    let tc = cfg.train_config();
    let (embedder, _) = retrieval_stage(&train, &test, &rec, &an, &model, &tc, &cfg.ssim)?;
    let (inv, curve, report) = inversion_stage(
        &train, &test, &an, &mut rec, &embedder, &model, &tc, &cfg.ssim,
    )?;
    ensure_checkpoint_dir(cfg)?;
    save_model(&inv.net, checkpoint(cfg, INVERTER))?;
    let mut r = Report::new();
    r.push_eval("retrieval.rgb_inverted", &report)?;
    r.push_curve("curve.inversion", &curve)?;
    Ok(r)
}

pub fn gradcheck(cfg: &RunConfig) -> Outcome {
    let model = cfg.model_config();
    let mut r = Report::new();
    let mut worst: Vec<(&'static str, f64, f64)> = Vec::new();
    let mut failed = Vec::new();
    for k in 0..cfg.gradcheck_seeds as u64 {
        let seed = cfg.seed.wrapping_add(k);
        for (i, case) in run_suite(&model, seed, cfg.gradcheck_samples)?
            .iter()
            .enumerate()
        {
            let err = case.report.max_rel_error();
            if worst.len() <= i {
                worst.push((case.name, case.tolerance, err));
            } else {
                worst[i].2 = worst[i].2.max(err);
            }
            if !case.passes() {
                failed.push(format!("{}@{seed}", case.name));
            }
        }
    }
    r.set("seeds", cfg.gradcheck_seeds)?;
    r.set("samples_per_param", cfg.gradcheck_samples)?;
    for (name, tol, err) in &worst {
        let key = name.replace(['+', ' '], "_");
        r.set(&format!("case.{key}.max_rel_error"), err)?;
        r.set(&format!("case.{key}.tolerance"), tol)?;
    }
    r.set("failures", failed.len())?;
    if failed.is_empty() {
        Ok(r)
    } else {
        finish(cfg, "gradcheck", &r)?;
        Err(Failure {
            code: 3,
            message: format!("gradient check failed: {}", failed.join(", ")),
        })
    }
}
