//! Procedural tactile frames.
//!
//! A frame is `clamp(tint_gel(height * texture + shading + background) + noise)`:
//! the contact footprint (shape mask) is filled with a procedural texture
//! field, lit from the gel's light direction, and composited over the gel's
//! resting color. All randomness is derived from the four request arguments.

use std::f32::consts::{PI, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::palette::{GelPalette, GelStyle};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

/// Contact footprint geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Stripes,
    Cross,
    PentagonTiling,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Circle,
        ShapeKind::Stripes,
        ShapeKind::Cross,
        ShapeKind::PentagonTiling,
    ];

    /// Object phrase used as the tactile-shape caption.
    pub fn caption(self) -> &'static str {
        match self {
            ShapeKind::Circle => "a round button",
            ShapeKind::Stripes => "a ribbed seam",
            ShapeKind::Cross => "a cross screw head",
            ShapeKind::PentagonTiling => "a basketball surface",
        }
    }
}

/// Surface texture family, keyed by the texture word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Smooth,
    Rough,
    Bumpy,
    Knitted,
}

impl TextureKind {
    pub const ALL: [TextureKind; 4] = [
        TextureKind::Smooth,
        TextureKind::Rough,
        TextureKind::Bumpy,
        TextureKind::Knitted,
    ];

    pub fn word(self) -> &'static str {
        match self {
            TextureKind::Smooth => "smooth",
            TextureKind::Rough => "rough",
            TextureKind::Bumpy => "bumpy",
            TextureKind::Knitted => "knitted",
        }
    }
}

/// One labeled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileSample {
    pub image: Image,
    pub texture_caption: String,
    pub shape_caption: String,
    pub gel_id: usize,
    pub contact: bool,
}

impl TactileSample {
    pub fn validate(&self, gel_count: usize) -> Result<()> {
        if self.gel_id >= gel_count {
            return Err(Error::index("gel_id", self.gel_id, gel_count));
        }
        if self.image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        if !self.contact && (!self.texture_caption.is_empty() || !self.shape_caption.is_empty()) {
            return Err(Error::Data("non-contact frames carry empty captions".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    pub image_size: usize,
    pub palette: GelPalette,
    pub textures: Vec<TextureKind>,
    pub shapes: Vec<ShapeKind>,
    pub noise_std: f32,
}

/// Normalized radius of the region a contact footprint may occupy. Pixels
/// outside it (in particular the frame border) only ever show the gel.
pub const CONTACT_RADIUS: f32 = 0.72;

impl SyntheticGenerator {
    pub fn new(image_size: usize, gel_count: usize) -> Result<Self> {
        if image_size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        Ok(Self {
            image_size,
            palette: GelPalette::new(gel_count)?,
            textures: TextureKind::ALL.to_vec(),
            shapes: ShapeKind::ALL.to_vec(),
            noise_std: 0.012,
        })
    }

    pub fn gel_count(&self) -> usize {
        self.palette.len()
    }

    /// Render one frame. `shape_id = None` requests a non-contact frame (the
    /// bare gel); `texture_id` is still range-checked but unused in that case.
    pub fn generate_sample(
        &self,
        texture_id: usize,
        shape_id: Option<usize>,
        gel_id: usize,
        seed: u64,
    ) -> Result<TactileSample> {
        if self.image_size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        let texture = *self
            .textures
            .get(texture_id)
            .ok_or_else(|| Error::index("texture_id", texture_id, self.textures.len()))?;
        let shape = match shape_id {
            Some(s) => Some(
                *self
                    .shapes
                    .get(s)
                    .ok_or_else(|| Error::index("shape_id", s, self.shapes.len()))?,
            ),
            None => None,
        };
        let gel = self.palette.get(gel_id)?;

        let n = self.image_size;
        let height = match shape {
            Some(shape) => {
                let key = [seed, texture_id as u64, shape_id.map_or(u64::MAX, |s| s as u64)];
                let mut geo = rng::stream(rng::mix(&key), 1);
                let mask = shape_mask(shape, n, &mut geo);
                let field = texture_field(texture, n, &mut geo);
                mask.iter()
                    .zip(&field)
                    .map(|(m, f)| m * (0.25 + 0.75 * f))
                    .collect::<Vec<f32>>()
            }
            None => vec![0.0; n * n],
        };

        let mut sensor = rng::stream(
            rng::mix(&[seed, texture_id as u64, shape_id.map_or(u64::MAX, |s| s as u64), gel_id as u64]),
            2,
        );
        let noise = rng::normal_vec(&mut sensor, n * n * 3);
        let image = composite(gel, &height, n, &noise, self.noise_std);

        let (texture_caption, shape_caption) = match shape {
            Some(s) => (texture.word().to_string(), s.caption().to_string()),
            None => (String::new(), String::new()),
        };
        Ok(TactileSample {
            image,
            texture_caption,
            shape_caption,
            gel_id,
            contact: shape.is_some(),
        })
    }
}

fn composite(gel: &GelStyle, height: &[f32], n: usize, noise: &[f32], noise_std: f32) -> Image {
    let mut img = Image::filled(n, n, &[0.0, 0.0, 0.0]);
    let h = |y: isize, x: isize| -> f32 {
        let yy = y.clamp(0, n as isize - 1) as usize;
        let xx = x.clamp(0, n as isize - 1) as usize;
        height[yy * n + xx]
    };
    for y in 0..n {
        for x in 0..n {
            let (yi, xi) = (y as isize, x as isize);
            let gx = 0.5 * (h(yi, xi + 1) - h(yi, xi - 1));
            let gy = 0.5 * (h(yi + 1, xi) - h(yi - 1, xi));
            let shade = gx * gel.light_dir[0] + gy * gel.light_dir[1];
            let v = height[y * n + x];
            let mut rgb = [0.0f32; 3];
            for c in 0..3 {
                rgb[c] = gel.background[c] + 0.32 * v + 0.9 * shade * gel.shading[c];
            }
            let tinted = gel.apply_tint(rgb);
            for c in 0..3 {
                let noisy = tinted[c] + noise_std * noise[(y * n + x) * 3 + c];
                img.set(y, x, c, noisy);
            }
        }
    }
    img.quantize8()
}

/// Normalized pixel-center coordinates in `[-1, 1]`.
fn coords(n: usize) -> impl Iterator<Item = (usize, f32, f32)> {
    (0..n * n).map(move |i| {
        let (y, x) = (i / n, i % n);
        let u = (x as f32 + 0.5) / n as f32 * 2.0 - 1.0;
        let v = (y as f32 + 0.5) / n as f32 * 2.0 - 1.0;
        (i, u, v)
    })
}

/// Soft step of width ~one pixel so edges are anti-aliased.
fn edge(signed_dist: f32, n: usize) -> f32 {
    let px = 2.0 / n as f32;
    (0.5 - signed_dist / px).clamp(0.0, 1.0)
}

fn shape_mask(shape: ShapeKind, n: usize, rng: &mut rng::Rng) -> Vec<f32> {
    let cx = rng.random_range(-0.06f32..0.06);
    let cy = rng.random_range(-0.06f32..0.06);
    let rot = rng.random_range(-0.25f32..0.25);
    let scale = rng.random_range(0.92f32..1.05);
    let (sr, cr) = rot.sin_cos();
    let mut mask = vec![0.0f32; n * n];
    for (i, u, v) in coords(n) {
        let (du, dv) = (u - cx, v - cy);
        let (ru, rv) = (cr * du + sr * dv, -sr * du + cr * dv);
        let r = (du * du + dv * dv).sqrt();
        let inside_region = edge(r - CONTACT_RADIUS, n);
        let m = match shape {
            ShapeKind::Circle => edge(r - 0.5 * scale, n),
            ShapeKind::Stripes => {
                let s = (PI * 2.6 * ru / scale).sin();
                let band = edge(-s * 0.25, n);
                band * edge(r - 0.66 * scale, n)
            }
            ShapeKind::Cross => {
                let bar = |a: f32, b: f32| edge((a.abs() - 0.17 * scale).max(b.abs() - 0.6 * scale), n);
                bar(ru, rv).max(bar(rv, ru))
            }
            ShapeKind::PentagonTiling => {
                let outer = pentagon_dist(ru, rv, 0.64 * scale);
                let inner = pentagon_dist(-ru, -rv, 0.26 * scale);
                let ring = edge(outer, n) * edge(-(outer + 0.14), n);
                ring.max(edge(inner, n))
            }
        };
        mask[i] = m * inside_region;
    }
    mask
}

/// Signed distance-like value to a regular pentagon of circumradius `radius`.
fn pentagon_dist(u: f32, v: f32, radius: f32) -> f32 {
    let apothem = radius * (PI / 5.0).cos();
    (0..5)
        .map(|k| {
            let a = (2 * k + 1) as f32 * PI / 5.0 - PI / 2.0;
            u * a.cos() + v * a.sin()
        })
        .fold(f32::NEG_INFINITY, f32::max)
        - apothem
}

/// Smoothly interpolated lattice noise in `[-1, 1]` at `freq` cells per side.
fn value_noise(n: usize, freq: usize, rng: &mut rng::Rng) -> Vec<f32> {
    let lattice: Vec<f32> = (0..(freq + 1) * (freq + 1))
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let at = |i: usize, j: usize| lattice[j * (freq + 1) + i];
    let fade = |t: f32| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let mut out = vec![0.0f32; n * n];
    for (idx, u, v) in coords(n) {
        let fx = (u * 0.5 + 0.5) * freq as f32;
        let fy = (v * 0.5 + 0.5) * freq as f32;
        let (ix, iy) = ((fx as usize).min(freq - 1), (fy as usize).min(freq - 1));
        let (tx, ty) = (fade(fx - ix as f32), fade(fy - iy as f32));
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        out[idx] = top * (1.0 - ty) + bottom * ty;
    }
    out
}

/// Texture height field in `[0, 1]`.
fn texture_field(texture: TextureKind, n: usize, rng: &mut rng::Rng) -> Vec<f32> {
    match texture {
        TextureKind::Smooth => value_noise(n, 2, rng)
            .into_iter()
            .map(|v| 0.55 + 0.12 * v)
            .collect(),
        TextureKind::Rough => {
            let hi = value_noise(n, 12, rng);
            let mid = value_noise(n, 6, rng);
            hi.iter()
                .zip(&mid)
                .map(|(a, b)| (0.5 + 0.4 * a + 0.15 * b).clamp(0.0, 1.0))
                .collect()
        }
        TextureKind::Bumpy => value_noise(n, 5, rng)
            .into_iter()
            .map(|v| {
                let t = ((v + 0.1) * 4.0).clamp(-1.0, 1.0);
                0.5 + 0.5 * t
            })
            .collect(),
        TextureKind::Knitted => {
            let phase = rng.random_range(0.0f32..TAU);
            let jitter = value_noise(n, 4, rng);
            coords(n)
                .map(|(i, u, v)| {
                    let a = (TAU * 3.5 * (u + v) + phase).sin();
                    let b = (TAU * 3.5 * (u - v) + phase).sin();
                    (0.5 + 0.22 * (a + b) + 0.08 * jitter[i]).clamp(0.0, 1.0)
                })
                .collect()
        }
    }
}
