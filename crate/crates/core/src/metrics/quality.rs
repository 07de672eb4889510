//! PSNR, SSIM and pixel-domain VIF on single planes.

use ndarray::{s, Array2, Zip};

use super::filter::{filter_valid, gaussian_1d};
use crate::error::{Error, Result};

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::input(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(Error::input("metric inputs are empty"));
    }
    Ok(())
}

pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
        / a.len() as f64)
}

/// `10·log10(peak²/MSE)` in dB; `f64::INFINITY` when the inputs are identical.
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(Error::input(format!("peak {peak} must be positive")));
    }
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Mean SSIM over all fully overlapped Gaussian windows.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    ssim_with(a, b, peak, SsimParams::default())
}

pub fn ssim_with(a: &Array2<f64>, b: &Array2<f64>, peak: f64, p: SsimParams) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = a.dim();
    if h < p.window || w < p.window {
        return Err(Error::input(format!(
            "{h}x{w} image smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let c1 = (p.k1 * peak).powi(2);
    let c2 = (p.k2 * peak).powi(2);
    let k = gaussian_1d(p.window, p.sigma);
    let mu_a = filter_valid(a, &k);
    let mu_b = filter_valid(b, &k);
    let aa = filter_valid(&(a * a), &k);
    let bb = filter_valid(&(b * b), &k);
    let ab = filter_valid(&(a * b), &k);
    let mut total = 0.0;
    Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .for_each(|&ma, &mb, &saa, &sbb, &sab| {
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        });
    Ok(total / mu_a.len() as f64)
}

/// Noise variance of the visual channel, for samples on the 0–255 scale.
pub const VIF_NOISE_VAR: f64 = 2.0;
const VIF_SCALES: usize = 4;
const VIF_EPS: f64 = 1e-10;

fn vif_window(scale: usize) -> usize {
    (1 << (VIF_SCALES - scale + 1)) + 1
}

/// Smallest square side accepted by [`vif`].
pub fn vif_min_size() -> usize {
    (1..)
        .find(|&n| vif_scale_sizes(n).is_some())
        .expect("some size works")
}

fn vif_scale_sizes(mut n: usize) -> Option<Vec<usize>> {
    let mut sizes = Vec::new();
    for scale in 1..=VIF_SCALES {
        let win = vif_window(scale);
        if scale > 1 {
            n = (n + 1).checked_sub(win)?.div_ceil(2);
        }
        if n < win {
            return None;
        }
        sizes.push(n);
    }
    Some(sizes)
}

/// Multi-scale pixel-domain visual information fidelity of `dist` w.r.t. `reference`.
///
/// Samples are expected on the 0–255 scale (the noise variance assumes it).
/// Four scales with Gaussian windows of 17, 9, 5 and 3 taps (σ = N/5); between
/// scales the images are low-passed and decimated by two. A reference with
/// no structure at any scale gives 1 when the images are equal and 0 otherwise.
pub fn vif(reference: &Array2<f64>, dist: &Array2<f64>) -> Result<f64> {
    check_shapes(reference, dist)?;
    let (h, w) = reference.dim();
    if vif_scale_sizes(h).is_none() || vif_scale_sizes(w).is_none() {
        return Err(Error::input(format!(
            "{h}x{w} image below the VIF minimum of {0}x{0}",
            vif_min_size()
        )));
    }
    let mut r = reference.clone();
    let mut d = dist.clone();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=VIF_SCALES {
        let n = vif_window(scale);
        let k = gaussian_1d(n, n as f64 / 5.0);
        if scale > 1 {
            r = filter_valid(&r, &k).slice(s![..;2, ..;2]).to_owned();
            d = filter_valid(&d, &k).slice(s![..;2, ..;2]).to_owned();
        }
        let mu1 = filter_valid(&r, &k);
        let mu2 = filter_valid(&d, &k);
        let s11 = filter_valid(&(&r * &r), &k);
        let s22 = filter_valid(&(&d * &d), &k);
        let s12 = filter_valid(&(&r * &d), &k);
        Zip::from(&mu1)
            .and(&mu2)
            .and(&s11)
            .and(&s22)
            .and(&s12)
            .for_each(|&m1, &m2, &e11, &e22, &e12| {
                let mut sigma1 = (e11 - m1 * m1).max(0.0);
                let sigma2 = (e22 - m2 * m2).max(0.0);
                let sigma12 = e12 - m1 * m2;
                let mut g = sigma12 / (sigma1 + VIF_EPS);
                let mut sv = sigma2 - g * sigma12;
                if sigma1 < VIF_EPS {
                    g = 0.0;
                    sv = sigma2;
                    sigma1 = 0.0;
                }
                if sigma2 < VIF_EPS {
                    g = 0.0;
                    sv = 0.0;
                }
                if g < 0.0 {
                    sv = sigma2;
                    g = 0.0;
                }
                if sv <= VIF_EPS {
                    sv = VIF_EPS;
                }
                num += (1.0 + g * g * sigma1 / (sv + VIF_NOISE_VAR)).log10();
                den += (1.0 + sigma1 / VIF_NOISE_VAR).log10();
            });
    }
    if den == 0.0 {
        return Ok(if reference == dist { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}
