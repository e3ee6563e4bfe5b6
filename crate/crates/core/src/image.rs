//! Dense `H×W×C` float images in `[0, 1]`.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image (`data[(y * width + x) * channels + c]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, color: &[f32]) -> Self {
        let channels = color.len();
        let mut data = Vec::with_capacity(height * width * channels);
        for _ in 0..height * width {
            data.extend_from_slice(color);
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn clamp01(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Round every value to the nearest multiple of 1/255, which makes the
    /// image exactly representable as an 8-bit PPM.
    pub fn quantize8(mut self) -> Self {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        self
    }

    pub fn to_bytes8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(height, width, channels, data)
    }

    pub fn mean_color(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v as f64;
            }
        }
        let n = (self.height * self.width).max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }

    /// `(H, W, C)` tensor.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, self.channels), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stack into a `(B, H, W, C)` tensor.
    pub fn stack(images: &[&Image], device: &Device, dtype: DType) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Input("cannot stack zero images".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if !img.same_shape(first) {
                return Err(Error::Shape("images in a batch must share a shape".into()));
            }
            data.extend_from_slice(&img.data);
        }
        let t = Tensor::from_vec(
            data,
            (images.len(), first.height, first.width, first.channels),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Split a `(B, H, W, C)` tensor back into images.
    pub fn unstack(batch: &Tensor) -> Result<Vec<Image>> {
        let (b, h, w, c) = batch.dims4()?;
        let flat: Vec<f32> = batch.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let per = h * w * c;
        (0..b)
            .map(|i| Image::new(h, w, c, flat[i * per..(i + 1) * per].to_vec()))
            .collect()
    }
}
