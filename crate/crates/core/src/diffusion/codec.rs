//! Pluggable latent codec. Two pixel-space codecs are built in; any other codec
//! must pass a reconstruction PSNR gate before it is used.

use candle_core::Tensor;

use crate::error::{Error, Result};

pub const MIN_CODEC_PSNR: f64 = 25.0;

pub trait Codec: Send + Sync {
    fn name(&self) -> &str;
    fn latent_channels(&self, image_channels: usize) -> usize;
    fn encode(&self, images: &Tensor) -> Result<Tensor>;
    fn decode(&self, latents: &Tensor) -> Result<Tensor>;
    /// Range the sampler clips predicted clean latents to.
    fn latent_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn name(&self) -> &str {
        "identity"
    }

    fn latent_channels(&self, image_channels: usize) -> usize {
        image_channels
    }

    fn encode(&self, images: &Tensor) -> Result<Tensor> {
        Ok(images.clone())
    }

    fn decode(&self, latents: &Tensor) -> Result<Tensor> {
        Ok(latents.clone())
    }
}

/// Pixels rescaled to `[-1, 1]` so the data carries unit-scale signal against
/// unit-variance noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelCodec;

impl Codec for PixelCodec {
    fn name(&self) -> &str {
        "pixel"
    }

    fn latent_channels(&self, image_channels: usize) -> usize {
        image_channels
    }

    fn encode(&self, images: &Tensor) -> Result<Tensor> {
        Ok(images.affine(2.0, -1.0)?)
    }

    fn decode(&self, latents: &Tensor) -> Result<Tensor> {
        Ok(latents.affine(0.5, 0.5)?)
    }

    fn latent_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
}

pub fn codec_by_name(name: &str) -> Result<Box<dyn Codec>> {
    match name {
        "identity" => Ok(Box::new(IdentityCodec)),
        "pixel" => Ok(Box::new(PixelCodec)),
        other => Err(Error::Config(format!("unknown codec {other:?}"))),
    }
}

/// Head channels for a codec: noise plus variance per latent channel.
pub fn head_channels(latent_channels: usize) -> usize {
    2 * latent_channels
}

/// Reject a codec whose round trip on `images` (`(B,H,W,C)` in `[0,1]`) is
/// below [`MIN_CODEC_PSNR`]. Returns the measured PSNR.
pub fn check_codec(codec: &dyn Codec, images: &Tensor) -> Result<f64> {
    let back = codec.decode(&codec.encode(images)?)?.clamp(0.0, 1.0)?;
    let mse = (back - images)?.sqr()?.mean_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    let psnr = crate::eval::metrics::psnr_from_mse(mse);
    if psnr < MIN_CODEC_PSNR {
        return Err(Error::Config(format!(
            "codec {} reconstructs at {psnr:.2} dB, below {MIN_CODEC_PSNR} dB",
            codec.name()
        )));
    }
    Ok(psnr)
}

/// A checkpoint trained with one codec cannot be sampled with another.
pub fn ensure_codec_matches(checkpoint_codec: &str, requested: &str) -> Result<()> {
    if checkpoint_codec != requested {
        return Err(Error::Config(format!(
            "checkpoint was trained with codec {checkpoint_codec:?}, got {requested:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn identity_round_trip_is_exact() {
        let x = Tensor::rand(0f32, 1.0, (2, 4, 4, 3), &Device::Cpu).unwrap();
        let c = IdentityCodec;
        let y = c.decode(&c.encode(&x).unwrap()).unwrap();
        assert_eq!(
            x.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            y.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        assert_eq!(check_codec(&c, &x).unwrap(), crate::eval::metrics::PSNR_CAP);
    }

    #[test]
    fn pixel_codec_is_centred_and_invertible() {
        let x = Tensor::new(&[[[[0f32, 0.5, 1.0]]]], &Device::Cpu).unwrap();
        let c = PixelCodec;
        let z = c.encode(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
        assert!(check_codec(&c, &x).unwrap() >= MIN_CODEC_PSNR);
        assert_eq!(codec_by_name("pixel").unwrap().latent_range(), (-1.0, 1.0));
    }

    #[test]
    fn channel_doubling() {
        assert_eq!(head_channels(4), 8);
        assert_eq!(head_channels(IdentityCodec.latent_channels(3)), 6);
    }

    struct Lossy;
    impl Codec for Lossy {
        fn name(&self) -> &str {
            "lossy"
        }
        fn latent_channels(&self, c: usize) -> usize {
            c
        }
        fn encode(&self, x: &Tensor) -> Result<Tensor> {
            Ok((x * 0.0)?)
        }
        fn decode(&self, x: &Tensor) -> Result<Tensor> {
            Ok(x.clone())
        }
    }

    #[test]
    fn gate_and_mismatch() {
        let x = Tensor::rand(0f32, 1.0, (1, 4, 4, 3), &Device::Cpu).unwrap();
        assert!(matches!(check_codec(&Lossy, &x), Err(Error::Config(_))));
        assert!(ensure_codec_matches("identity", "lossy").is_err());
        assert!(codec_by_name("vae").is_err());
    }
}
