use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum pairwise L2 distance between gel backgrounds.
pub const MIN_BACKGROUND_DISTANCE: f32 = 0.2;

/// Sensor-level appearance of one gel status: resting color, illumination
/// direction and a color-mixing tint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelStyle {
    pub background: [f32; 3],
    pub light_dir: [f32; 2],
    /// Row-stochastic-or-less, non-negative; maps `[0,1]^3` into itself.
    pub tint: [[f32; 3]; 3],
    /// Per-channel response to the directional shading term.
    pub shading: [f32; 3],
}

impl GelStyle {
    pub fn apply_tint(&self, rgb: [f32; 3]) -> [f32; 3] {
        let mut out = [0.0f32; 3];
        for (o, row) in out.iter_mut().zip(&self.tint) {
            *o = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
        }
        out
    }

    /// Color of an untouched gel as it appears in a rendered frame.
    pub fn rendered_background(&self) -> [f32; 3] {
        let t = self.apply_tint(self.background);
        [t[0].clamp(0.0, 1.0), t[1].clamp(0.0, 1.0), t[2].clamp(0.0, 1.0)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelPalette {
    pub gels: Vec<GelStyle>,
}

impl GelPalette {
    /// Evenly spaced hues at fixed saturation and value. Fails when `gel_count`
    /// is so large that neighbouring backgrounds become indistinguishable.
    pub fn new(gel_count: usize) -> Result<Self> {
        if gel_count == 0 {
            return Err(Error::Config("gel count must be at least 1".into()));
        }
        let gels = (0..gel_count)
            .map(|g| {
                let hue = (g as f32 / gel_count as f32 + 0.6).fract();
                let background = hsv_to_rgb(hue, 0.5, 0.58);
                let angle = std::f32::consts::TAU * g as f32 / gel_count as f32 + 0.4;
                let mut tint = [[0.0f32; 3]; 3];
                for (r, row) in tint.iter_mut().enumerate() {
                    row[r] = 0.9;
                    row[(r + 1 + g % 2) % 3] = 0.06;
                }
                let base = [0.9f32, 0.55, 0.3];
                let shading = [base[g % 3], base[(g + 1) % 3], base[(g + 2) % 3]];
                GelStyle {
                    background,
                    light_dir: [angle.cos(), angle.sin()],
                    tint,
                    shading,
                }
            })
            .collect();
        let palette = Self { gels };
        palette.validate()?;
        Ok(palette)
    }

    pub fn len(&self) -> usize {
        self.gels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gels.is_empty()
    }

    pub fn get(&self, gel_id: usize) -> Result<&GelStyle> {
        self.gels
            .get(gel_id)
            .ok_or_else(|| Error::index("gel_id", gel_id, self.gels.len()))
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.gels.iter().enumerate() {
            let n = (a.light_dir[0].powi(2) + a.light_dir[1].powi(2)).sqrt();
            if (n - 1.0).abs() > 1e-4 {
                return Err(Error::Config(format!("gel {i}: light direction is not unit length")));
            }
            if a.tint.iter().flatten().any(|&v| v < 0.0) || a.tint.iter().any(|r| r.iter().sum::<f32>() > 1.0 + 1e-6) {
                return Err(Error::Config(format!("gel {i}: tint must be non-negative with row sums <= 1")));
            }
            for (j, b) in self.gels.iter().enumerate().skip(i + 1) {
                let d = l2(a.background, b.background);
                if d < MIN_BACKGROUND_DISTANCE {
                    return Err(Error::Config(format!(
                        "gels {i} and {j} have background distance {d:.3} < {MIN_BACKGROUND_DISTANCE}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn l2(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f32>().sqrt()
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_palettes_are_distinguishable() {
        for g in 1..=6 {
            let p = GelPalette::new(g).unwrap();
            assert_eq!(p.len(), g);
            for a in &p.gels {
                for b in &p.gels {
                    if a != b {
                        assert!(l2(a.background, b.background) >= MIN_BACKGROUND_DISTANCE);
                    }
                }
            }
        }
    }

    #[test]
    fn too_many_gels_is_rejected() {
        assert!(matches!(GelPalette::new(40), Err(Error::Config(_))));
        assert!(matches!(GelPalette::new(0), Err(Error::Config(_))));
    }

    #[test]
    fn tint_keeps_unit_cube() {
        let p = GelPalette::new(3).unwrap();
        for gel in &p.gels {
            for corner in 0..8u32 {
                let rgb = [(corner & 1) as f32, ((corner >> 1) & 1) as f32, ((corner >> 2) & 1) as f32];
                for v in gel.apply_tint(rgb) {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
