//! Generators, brute-force oracles and the seeded property checks shared by
//! the integration tests and the acceptance target.
#![allow(dead_code)]

use evanon::baselines::{descramble_events, scramble_events, EncryptionKey};
use evanon::event::{build_voxel_grid, temporal_weights, Event, EventStream, Micros, Polarity};
use evanon::harness::{rank_metrics, ItemMeta, RankMetrics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_stream(rng: &mut impl Rng, max_events: usize) -> EventStream {
    let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
    let n = rng.random_range(0..=max_events);
    let mut t: Micros = rng.random_range(0..1_000);
    let events = (0..n)
        .map(|_| {
            t += rng.random_range(0..50);
            let p = if rng.random_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            Event::new(
                t,
                rng.random_range(0..w as u32),
                rng.random_range(0..h as u32),
                p,
            )
        })
        .collect();
    EventStream::new(w, h, events).unwrap()
}

pub fn random_key(rng: &mut impl Rng) -> EncryptionKey {
    EncryptionKey {
        x0: rng.random_range(0.01..0.99),
        r: rng.random_range(3.6..=4.0),
        selection_seed: rng.random(),
    }
}

/// Voxel grid sum equals net polarity, and every event's temporal weights
/// sum to one.
pub fn check_conservation(stream: &EventStream, bins: usize) -> Result<(), String> {
    let events = stream.events();
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Ok(());
    };
    let duration = (last.t - first.t).max(1);
    let grid = build_voxel_grid(stream, first.t, duration, bins).map_err(|e| e.to_string())?;
    let net: i64 = events.iter().map(|e| e.p.sign() as i64).sum();
    if (grid.sum() - net as f64).abs() > 1e-9 {
        return Err(format!("grid sum {} vs net polarity {net}", grid.sum()));
    }
    for e in events {
        let (lower, lo, hi) = temporal_weights(e.t, first.t, duration, bins);
        let total = lo + if lower + 1 < bins { hi } else { 0.0 };
        if lower >= bins || (total - 1.0).abs() > 1e-12 {
            return Err(format!("weights of t={} sum to {total}", e.t));
        }
    }
    Ok(())
}

pub fn check_round_trip(
    stream: &EventStream,
    key: &EncryptionKey,
    ratio: f64,
) -> Result<(), String> {
    let enc = scramble_events(stream, key, ratio).map_err(|e| e.to_string())?;
    let dec = descramble_events(&enc, key, ratio).map_err(|e| e.to_string())?;
    if &dec != stream {
        return Err("descramble(scramble(s)) differs from s".into());
    }
    Ok(())
}

/// Count of events scrambling changes at `ratio`.
pub fn modified_count(stream: &EventStream, key: &EncryptionKey, ratio: f64) -> usize {
    let enc = scramble_events(stream, key, ratio).unwrap();
    enc.events()
        .iter()
        .zip(stream.events())
        .filter(|(a, b)| a != b)
        .count()
}

/// Small-integer embeddings so that distance ties are common.
pub fn random_retrieval(
    rng: &mut impl Rng,
    max_items: usize,
) -> (Vec<Vec<f64>>, Vec<ItemMeta>, Vec<Vec<f64>>, Vec<ItemMeta>) {
    let dim = rng.random_range(1..4);
    let ids = rng.random_range(1..6);
    let item = |rng: &mut dyn rand::RngCore| {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2..=2) as f64).collect();
        let m = ItemMeta {
            identity: rng.random_range(0..ids),
            camera: rng.random_range(0..2),
            sequence: rng.random_range(0..2),
        };
        (v, m)
    };
    let nq = rng.random_range(1..=10);
    let ng = rng.random_range(1..=max_items);
    let (q, qm): (Vec<_>, Vec<_>) = (0..nq).map(|_| item(rng)).unzip();
    let (g, gm): (Vec<_>, Vec<_>) = (0..ng).map(|_| item(rng)).unzip();
    (q, qm, g, gm)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Brute force: the rank of each relevant item is one plus the number of
/// valid items ahead of it (closer, or equally close and earlier).
pub fn oracle_metrics(
    q: &[Vec<f64>],
    qm: &[ItemMeta],
    g: &[Vec<f64>],
    gm: &[ItemMeta],
    max_rank: usize,
) -> Option<RankMetrics> {
    let mut hits = vec![0usize; max_rank];
    let (mut ap_sum, mut counted) = (0.0, 0usize);
    for (qv, qmeta) in q.iter().zip(qm) {
        let valid: Vec<usize> = (0..g.len())
            .filter(|&j| !(gm[j].camera == qmeta.camera && gm[j].sequence == qmeta.sequence))
            .collect();
        let mut ranks: Vec<usize> = valid
            .iter()
            .filter(|&&i| gm[i].identity == qmeta.identity)
            .map(|&i| {
                let di = distance(qv, &g[i]);
                1 + valid
                    .iter()
                    .filter(|&&j| {
                        let dj = distance(qv, &g[j]);
                        dj < di || (dj == di && j < i)
                    })
                    .count()
            })
            .collect();
        if ranks.is_empty() {
            continue;
        }
        ranks.sort_unstable();
        counted += 1;
        for (k, h) in hits.iter_mut().enumerate() {
            if ranks[0] <= k + 1 {
                *h += 1;
            }
        }
        let ap: f64 = ranks
            .iter()
            .enumerate()
            .map(|(m, &r)| (m + 1) as f64 / r as f64)
            .sum();
        ap_sum += ap / ranks.len() as f64;
    }
    (counted > 0).then(|| RankMetrics {
        cmc: hits.iter().map(|&h| h as f64 / counted as f64).collect(),
        map: ap_sum / counted as f64,
        queries: counted,
    })
}

pub fn check_oracle(
    q: &[Vec<f64>],
    qm: &[ItemMeta],
    g: &[Vec<f64>],
    gm: &[ItemMeta],
) -> Result<(), String> {
    let max_rank = g.len().max(1);
    let got = rank_metrics(q, qm, g, gm, max_rank).ok();
    let want = oracle_metrics(q, qm, g, gm, max_rank);
    if got != want {
        return Err(format!("rank_metrics {got:?} vs oracle {want:?}"));
    }
    Ok(())
}

/// Conservation over `count` seeded random streams.
pub fn conservation_suite(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let stream = random_stream(&mut rng, 200);
        let bins = rng.random_range(1..10);
        check_conservation(&stream, bins).map_err(|e| format!("stream {i}: {e}"))?;
    }
    Ok(())
}

/// Round trips over `count` seeded triples plus the exact 75% count.
pub fn encryption_suite(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let stream = random_stream(&mut rng, 300);
        let key = random_key(&mut rng);
        let ratio = rng.random_range(0.0..=1.0);
        check_round_trip(&stream, &key, ratio).map_err(|e| format!("triple {i}: {e}"))?;
        let want = (0.75 * stream.len() as f64).round() as usize;
        let got = modified_count(&stream, &key, 0.75);
        if got != want {
            return Err(format!(
                "triple {i}: 75% modified {got} of {}, want {want}",
                stream.len()
            ));
        }
    }
    Ok(())
}

pub fn oracle_suite(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let (q, qm, g, gm) = random_retrieval(&mut rng, 50);
        check_oracle(&q, &qm, &g, &gm).map_err(|e| format!("instance {i}: {e}"))?;
    }
    Ok(())
}

fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> evanon::event::GrayImage {
    let pixels = (0..h * w).map(|_| rng.random_range(0.0..=1.0)).collect();
    evanon::event::GrayImage::new(h, w, pixels).unwrap()
}

/// Identity, symmetry, the constant-image value and PSNR at MSE 0.01.
pub fn quality_suite(count: usize, seed: u64) -> Result<(), String> {
    use evanon::event::GrayImage;
    use evanon::metrics::{psnr_from_mse, ssim, SsimConfig};
    let cfg = SsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let (h, w) = (rng.random_range(11..24), rng.random_range(11..24));
        let (a, b) = (random_image(&mut rng, h, w), random_image(&mut rng, h, w));
        let self_sim = ssim(&a, &a, &cfg).map_err(|e| e.to_string())?;
        if (self_sim - 1.0).abs() > 1e-12 {
            return Err(format!("image {i}: ssim(x, x) = {self_sim}"));
        }
        let (ab, ba) = (ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
        if (ab - ba).abs() > 1e-12 {
            return Err(format!("image {i}: ssim asymmetric {ab} vs {ba}"));
        }
    }
    let zero = GrayImage::filled(16, 16, 0.0).unwrap();
    let one = GrayImage::filled(16, 16, 1.0).unwrap();
    // Luminance term (2*0*1 + C1) / (0 + 1 + C1) with C1 = 1e-4; the
    // contrast-structure term is C2 / C2.
    let want = 1e-4 / 1.0001;
    let got = ssim(&zero, &one, &cfg).unwrap();
    if (got - want).abs() > 1e-9 {
        return Err(format!("constant ssim {got}, want {want}"));
    }
    let p = psnr_from_mse(0.01, 1.0);
    if p != 20.0 {
        return Err(format!("psnr(mse 0.01) = {p}"));
    }
    Ok(())
}

/// Finite-difference checks of every op and composite over `seeds` seeds.
/// Returns the worst relative error per case.
pub fn gradient_suite(seeds: u64, per_param: usize) -> Result<Vec<(&'static str, f64)>, String> {
    use evanon::gradsuite::run_suite;
    use evanon::models::ModelConfig;
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..seeds {
        for model in [ModelConfig::toy(), ModelConfig::default()] {
            let cases = run_suite(&model, seed, per_param).map_err(|e| e.to_string())?;
            for (i, case) in cases.iter().enumerate() {
                let err = case.report.max_rel_error();
                if !case.passes() {
                    return Err(format!(
                        "seed {seed} {}: error {err:e} vs tolerance {:e}",
                        case.name, case.tolerance
                    ));
                }
                match worst.get_mut(i) {
                    Some(w) => w.1 = w.1.max(err),
                    None => worst.push((case.name, err)),
                }
            }
        }
    }
    Ok(worst)
}
