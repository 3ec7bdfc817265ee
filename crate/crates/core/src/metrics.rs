//! Differentiable SSIM (Gaussian-windowed, valid windows only) and PSNR.

use crate::error::{Error, Result};
use crate::event::{GrayImage, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self::with_range(1.0)
    }
}

impl SsimConfig {
    /// 11x11 Gaussian window, sigma 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2.
    pub fn with_range(dynamic_range: f64) -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            c1: (0.01 * dynamic_range).powi(2),
            c2: (0.03 * dynamic_range).powi(2),
            dynamic_range,
        }
    }

    pub fn with_window(self, window: usize) -> Self {
        Self { window, ..self }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::invalid(format!(
                "SSIM window must be odd, got {}",
                self.window
            )));
        }
        if self.window > height.min(width) {
            return Err(Error::invalid(format!(
                "SSIM window {} exceeds image size {height}x{width}",
                self.window
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.sigma > 0.0) {
            return Err(Error::invalid("SSIM constants must be positive"));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|k| (-((k as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        g.into_iter().map(|v| v / total).collect()
    }
}

/// Separable valid-mode Gaussian filter and its adjoint.
struct GaussFilter {
    kernel: Vec<f64>,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl GaussFilter {
    fn new(cfg: &SsimConfig, h: usize, w: usize) -> Self {
        let k = cfg.window;
        Self {
            kernel: cfg.kernel(),
            h,
            w,
            ho: h - k + 1,
            wo: w - k + 1,
        }
    }

    fn apply(&self, img: &[f64]) -> Vec<f64> {
        let (g, h, w, ho, wo) = (&self.kernel, self.h, self.w, self.ho, self.wo);
        let mut tmp = vec![0.0; h * wo];
        for y in 0..h {
            let row = &img[y * w..][..w];
            let trow = &mut tmp[y * wo..][..wo];
            for (k, gk) in g.iter().enumerate() {
                for (t, v) in trow.iter_mut().zip(&row[k..]) {
                    *t += gk * v;
                }
            }
        }
        let mut out = vec![0.0; ho * wo];
        for y in 0..ho {
            let orow = &mut out[y * wo..][..wo];
            for (k, gk) in g.iter().enumerate() {
                for (o, v) in orow.iter_mut().zip(&tmp[(y + k) * wo..][..wo]) {
                    *o += gk * v;
                }
            }
        }
        out
    }

    fn adjoint(&self, dout: &[f64]) -> Vec<f64> {
        let (g, h, w, ho, wo) = (&self.kernel, self.h, self.w, self.ho, self.wo);
        let mut dtmp = vec![0.0; h * wo];
        for y in 0..ho {
            let drow = &dout[y * wo..][..wo];
            for (k, gk) in g.iter().enumerate() {
                for (t, d) in dtmp[(y + k) * wo..][..wo].iter_mut().zip(drow) {
                    *t += gk * d;
                }
            }
        }
        let mut dimg = vec![0.0; h * w];
        for y in 0..h {
            let trow = &dtmp[y * wo..][..wo];
            let irow = &mut dimg[y * w..][..w];
            for (k, gk) in g.iter().enumerate() {
                for (i, t) in irow[k..].iter_mut().zip(trow) {
                    *i += gk * t;
                }
            }
        }
        dimg
    }
}

/// Mean SSIM of one plane, and optionally its gradient w.r.t. `a`.
pub fn ssim_plane(
    a: &[f64],
    b: &[f64],
    height: usize,
    width: usize,
    cfg: &SsimConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    cfg.validate(height, width)?;
    if a.len() != height * width || b.len() != height * width {
        return Err(Error::Shape {
            op: "ssim",
            expected: vec![height, width],
            actual: vec![a.len(), b.len()],
        });
    }
    let f = GaussFilter::new(cfg, height, width);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = f.apply(a);
    let mu_b = f.apply(b);
    let m_aa = f.apply(&prod(a, a));
    let m_bb = f.apply(&prod(b, b));
    let m_ab = f.apply(&prod(a, b));
    let m = mu_a.len() as f64;
    let (c1, c2) = (cfg.c1, cfg.c2);

    let mut total = 0.0;
    let mut d_mu = want_grad.then(|| vec![0.0; mu_a.len()]);
    let mut d_aa = want_grad.then(|| vec![0.0; mu_a.len()]);
    let mut d_ab = want_grad.then(|| vec![0.0; mu_a.len()]);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = m_aa[i] - ma * ma;
        let var_b = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let a1 = 2.0 * ma * mb + c1;
        let a2 = 2.0 * cov + c2;
        let b1 = ma * ma + mb * mb + c1;
        let b2 = var_a + var_b + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if let (Some(dm), Some(daa), Some(dab)) = (d_mu.as_mut(), d_aa.as_mut(), d_ab.as_mut()) {
            let ds_dmu = 2.0 * mb * a2 / (b1 * b2) - s * 2.0 * ma / b1;
            let ds_dvar = -s / b2;
            let ds_dcov = 2.0 * a1 / (b1 * b2);
            dm[i] = (ds_dmu - 2.0 * ma * ds_dvar - mb * ds_dcov) / m;
            daa[i] = ds_dvar / m;
            dab[i] = ds_dcov / m;
        }
    }
    let value = total / m;
    let grad = match (d_mu, d_aa, d_ab) {
        (Some(dm), Some(daa), Some(dab)) => {
            let gm = f.adjoint(&dm);
            let gaa = f.adjoint(&daa);
            let gab = f.adjoint(&dab);
            Some(
                (0..a.len())
                    .map(|i| gm[i] + 2.0 * a[i] * gaa[i] + b[i] * gab[i])
                    .collect(),
            )
        }
        _ => None,
    };
    Ok((value, grad))
}

/// Per-channel SSIM averaged over `channels` stacked planes.
pub fn ssim_channels(
    a: &[f64],
    b: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    cfg: &SsimConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let plane = height * width;
    if channels == 0 || a.len() != channels * plane || b.len() != channels * plane {
        return Err(Error::Shape {
            op: "ssim_channels",
            expected: vec![channels, height, width],
            actual: vec![a.len(), b.len()],
        });
    }
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Vec::with_capacity(a.len()));
    for c in 0..channels {
        let (v, g) = ssim_plane(
            &a[c * plane..][..plane],
            &b[c * plane..][..plane],
            height,
            width,
            cfg,
            want_grad,
        )?;
        total += v;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.extend(g.into_iter().map(|x| x / channels as f64));
        }
    }
    Ok((total / channels as f64, grad))
}

pub fn ssim(a: &GrayImage, b: &GrayImage, cfg: &SsimConfig) -> Result<f64> {
    check_same(a, b)?;
    Ok(ssim_plane(a.pixels(), b.pixels(), a.height(), a.width(), cfg, false)?.0)
}

fn check_same(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape {
            op: "ssim",
            expected: vec![a.height(), a.width()],
            actual: vec![b.height(), b.width()],
        });
    }
    Ok(())
}

/// Loss value and gradient w.r.t. the first argument.
#[derive(Debug, Clone)]
pub struct ScalarGrad {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Whether the clamp was active (gradient cut to zero).
    pub clamped: bool,
}

/// Reconstruction-quality loss `clamp(SSIM(pred, target), 0, 1)` on raw
/// image planes; minimised to degrade reconstructions.
pub fn ssim_loss_rec_raw(
    pred: &[f64],
    target: &[f64],
    height: usize,
    width: usize,
    cfg: &SsimConfig,
) -> Result<ScalarGrad> {
    let (s, g) = ssim_plane(pred, target, height, width, cfg, true)?;
    let g = g.expect("gradient requested");
    Ok(clamp_unit(s, g))
}

fn clamp_unit(s: f64, g: Vec<f64>) -> ScalarGrad {
    if s < 0.0 {
        ScalarGrad {
            value: 0.0,
            grad: vec![0.0; g.len()],
            clamped: true,
        }
    } else if s > 1.0 {
        ScalarGrad {
            value: 1.0,
            grad: vec![0.0; g.len()],
            clamped: true,
        }
    } else {
        ScalarGrad {
            value: s,
            grad: g,
            clamped: false,
        }
    }
}

pub fn ssim_loss_rec(pred: &GrayImage, target: &GrayImage, cfg: &SsimConfig) -> Result<f64> {
    check_same(pred, target)?;
    Ok(ssim_loss_rec_raw(
        pred.pixels(),
        target.pixels(),
        pred.height(),
        pred.width(),
        cfg,
    )?
    .value)
}

/// Structure-preservation loss `1 - clamp(SSIM(xhat, x), 0, 1)` on voxel
/// data laid out as (bins, h, w). Values are mapped from [-1, 1] to [0, 1]
/// and every bin is treated as a channel.
pub fn ssim_loss_struct_raw(
    xhat: &[f64],
    x: &[f64],
    bins: usize,
    height: usize,
    width: usize,
    cfg: &SsimConfig,
) -> Result<ScalarGrad> {
    let shift = |v: &[f64]| -> Vec<f64> { v.iter().map(|t| 0.5 * (t + 1.0)).collect() };
    let (s, g) = ssim_channels(&shift(xhat), &shift(x), bins, height, width, cfg, true)?;
    let clamped = clamp_unit(s, g.expect("gradient requested"));
    Ok(ScalarGrad {
        value: 1.0 - clamped.value,
        grad: clamped.grad.into_iter().map(|v| -0.5 * v).collect(),
        clamped: clamped.clamped,
    })
}

pub fn ssim_loss_struct(xhat: &VoxelGrid, x: &VoxelGrid, cfg: &SsimConfig) -> Result<f64> {
    if xhat.shape() != x.shape() {
        return Err(Error::Shape {
            op: "ssim_loss_struct",
            expected: x.shape().to_vec(),
            actual: xhat.shape().to_vec(),
        });
    }
    Ok(ssim_loss_struct_raw(xhat.data(), x.data(), x.bins(), x.height(), x.width(), cfg)?.value)
}

pub const PSNR_CAP_DB: f64 = 100.0;

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &GrayImage, b: &GrayImage, max_value: f64) -> Result<f64> {
    check_same(a, b)?;
    let n = a.pixels().len() as f64;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse, max_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GrayImage {
        GrayImage::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_image(&mut rng, 16, 16);
        assert!((ssim(&a, &a, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn black_versus_white() {
        let a = GrayImage::filled(16, 16, 0.0).unwrap();
        let b = GrayImage::filled(16, 16, 1.0).unwrap();
        let s = ssim(&a, &b, &SsimConfig::default()).unwrap();
        assert!((s - 1e-4 / 1.0001).abs() < 1e-9, "{s}");
        assert!((ssim_loss_rec(&a, &b, &SsimConfig::default()).unwrap() - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn anticorrelated_checkerboards_clamp_to_zero() {
        let board = |phase: usize| {
            GrayImage::new(
                16,
                16,
                (0..256)
                    .map(|i| ((i / 16 + i % 16 + phase) % 2) as f64)
                    .collect(),
            )
            .unwrap()
        };
        let cfg = SsimConfig::default();
        let raw = ssim(&board(0), &board(1), &cfg).unwrap();
        assert!(raw < 0.0, "{raw}");
        assert_eq!(ssim_loss_rec(&board(0), &board(1), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (
            random_image(&mut rng, 20, 17),
            random_image(&mut rng, 20, 17),
        );
        let cfg = SsimConfig::default();
        assert!((ssim(&a, &b, &cfg).unwrap() - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_formula() {
        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
        let a = GrayImage::filled(4, 4, 0.5).unwrap();
        let b = GrayImage::filled(4, 4, 0.6).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn struct_loss_zero_for_identical_and_high_for_blank() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..2 * 16 * 16)
            .map(|_| {
                if rng.random::<f64>() < 0.2 {
                    rng.random_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let x = VoxelGrid::from_data(2, 16, 16, data).unwrap();
        let cfg = SsimConfig::default();
        assert!(ssim_loss_struct(&x, &x, &cfg).unwrap().abs() < 1e-12);
        let blank = VoxelGrid::zeros(2, 16, 16);
        let l = ssim_loss_struct(&blank, &x, &cfg).unwrap();
        assert!(l > 0.5, "{l}");
    }

    #[test]
    fn window_must_fit() {
        let a = GrayImage::filled(8, 8, 0.2).unwrap();
        assert!(ssim(&a, &a, &SsimConfig::default()).is_err());
        assert!(ssim(&a, &a, &SsimConfig::default().with_window(7)).is_ok());
        assert!(ssim(&a, &a, &SsimConfig::default().with_window(6)).is_err());
    }

    #[test]
    fn noise_degrades_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base: Vec<f64> = (0..32 * 32)
            .map(|i| 0.3 + 0.4 * ((i % 32) as f64 / 31.0))
            .collect();
        let noise: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let img = GrayImage::new(32, 32, base.clone()).unwrap();
        let cfg = SsimConfig::default();
        let mut last = (f64::INFINITY, f64::INFINITY);
        for amp in [0.0, 0.02, 0.05, 0.1, 0.2] {
            let noisy = GrayImage::from_clamped(
                32,
                32,
                base.iter().zip(&noise).map(|(b, n)| b + amp * n).collect(),
            )
            .unwrap();
            let cur = (
                ssim(&img, &noisy, &cfg).unwrap(),
                psnr(&img, &noisy, 1.0).unwrap(),
            );
            assert!(cur.0 <= last.0 && cur.1 <= last.1, "{cur:?} after {last:?}");
            last = cur;
        }
    }
}
