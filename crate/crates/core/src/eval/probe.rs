//! Gel-status probe: softmax regression on colour statistics of the frame
//! corners and the whole image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

const CORNER: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelProbe {
    pub classes: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    /// `classes × features`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

pub fn probe_features(img: &Image) -> Vec<f64> {
    let c = img.channels;
    let k = CORNER.min(img.height).min(img.width);
    let mut f = Vec::with_capacity(5 * c);
    let corners = [(0, 0), (0, img.width - k), (img.height - k, 0), (img.height - k, img.width - k)];
    for (y0, x0) in corners {
        for ch in 0..c {
            let mut s = 0.0;
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    s += img.get(y, x, ch) as f64;
                }
            }
            f.push(s / (k * k) as f64);
        }
    }
    f.extend(img.mean_color());
    f
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl GelProbe {
    /// Full-batch gradient descent on the cross-entropy.
    pub fn train(images: &[&Image], labels: &[usize], classes: usize, epochs: usize, lr: f64) -> Result<Self> {
        if images.is_empty() || images.len() != labels.len() || classes == 0 {
            return Err(Error::Data("probe needs labelled images".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::index("gel label", l, classes));
        }
        let feats: Vec<Vec<f64>> = images.iter().map(|i| probe_features(i)).collect();
        let d = feats[0].len();
        let n = feats.len() as f64;
        let mut mean = vec![0.0; d];
        for f in &feats {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for f in &feats {
            for j in 0..d {
                std[j] += (f[j] - mean[j]).powi(2) / n;
            }
        }
        let std: Vec<f64> = std.into_iter().map(|v| v.sqrt().max(1e-6)).collect();
        let mut probe = Self {
            classes,
            mean,
            std,
            weights: vec![0.0; classes * d],
            bias: vec![0.0; classes],
        };
        let xs: Vec<Vec<f64>> = feats.iter().map(|f| probe.standardize(f)).collect();
        for _ in 0..epochs {
            let mut gw = vec![0.0; classes * d];
            let mut gb = vec![0.0; classes];
            for (x, &y) in xs.iter().zip(labels) {
                let mut p = probe.logits(x);
                softmax(&mut p);
                for k in 0..classes {
                    let g = p[k] - (k == y) as u8 as f64;
                    gb[k] += g / n;
                    for j in 0..d {
                        gw[k * d + j] += g * x[j] / n;
                    }
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= lr * g;
            }
            for (b, g) in probe.bias.iter_mut().zip(&gb) {
                *b -= lr * g;
            }
        }
        Ok(probe)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..self.classes)
            .map(|k| self.bias[k] + (0..d).map(|j| self.weights[k * d + j] * x[j]).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, img: &Image) -> usize {
        let z = self.logits(&self.standardize(&probe_features(img)));
        z.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Fraction of images classified as their label.
    pub fn accuracy(&self, images: &[&Image], labels: &[usize]) -> f64 {
        if images.is_empty() {
            return 0.0;
        }
        let hits = images.iter().zip(labels).filter(|(i, &l)| self.predict(i) == l).count();
        hits as f64 / images.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_flat_colours() {
        let a = Image::filled(16, 16, &[0.2, 0.3, 0.4]);
        let b = Image::filled(16, 16, &[0.6, 0.3, 0.1]);
        let probe = GelProbe::train(&[&a, &b], &[0, 1], 2, 200, 0.5).unwrap();
        assert_eq!(probe.predict(&a), 0);
        assert_eq!(probe.predict(&b), 1);
        assert_eq!(probe.accuracy(&[&a, &b], &[0, 1]), 1.0);
        assert!(GelProbe::train(&[&a], &[3], 2, 1, 0.1).is_err());
    }
}
