use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Input(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / n)
}

/// `10·log10(1/mse)` for unit dynamic range; `mse = 0` maps to [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode Gaussian filter over one channel.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-window SSIM (11×11, σ = 1.5, unit dynamic range), averaged over
/// all valid window positions and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let (h, w, ch) = (a.height, a.width, a.channels);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        let pa: Vec<f64> = (0..h * w).map(|i| a.data[i * ch + c] as f64).collect();
        let pb: Vec<f64> = (0..h * w).map(|i| b.data[i * ch + c] as f64).collect();
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let mu_a = filter(&pa, h, w, &taps);
        let mu_b = filter(&pb, h, w, &taps);
        let e_aa = filter(&prod(&pa, &pa), h, w, &taps);
        let e_bb = filter(&prod(&pb, &pb), h, w, &taps);
        let e_ab = filter(&prod(&pa, &pb), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(seed: u64) -> Image {
        let mut r = crate::rng::stream(seed, 1);
        let v = crate::rng::normal_vec(&mut r, 16 * 16 * 3);
        Image::new(16, 16, 3, v.into_iter().map(|x| (0.5 + 0.2 * x).clamp(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn psnr_formula() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let a = Image::filled(4, 4, &[0.5]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(4, 4, &[0.6]);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise_image(1);
        let b = noise_image(2);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..1.0).contains(&s));
    }

    #[test]
    fn shape_errors() {
        let a = Image::filled(16, 16, &[0.5]);
        let b = Image::filled(16, 15, &[0.5]);
        assert!(matches!(ssim(&a, &b), Err(Error::Input(_))));
        assert!(matches!(psnr(&a, &b), Err(Error::Input(_))));
        let tiny = Image::filled(8, 8, &[0.5]);
        assert!(ssim(&tiny, &tiny).is_err());
    }
}
