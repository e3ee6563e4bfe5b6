use candle_core::{Tensor, D};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Row-wise L2 normalisation of a `(B, d)` matrix.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?.maximum(1e-12)?;
    Ok(x.broadcast_div(&norm)?)
}

/// Symmetric contrastive loss: tactile→text plus text→tactile cross-entropy
/// over `S_ij = ê_tac,i · ê_tex,j / τ`, positives on the diagonal.
pub fn info_nce_loss(tac: &Tensor, tex: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let (b, d) = tac.dims2()?;
    let (b2, d2) = tex.dims2()?;
    if b != b2 || d != d2 || b == 0 {
        return Err(Error::Shape(format!("tactile {b}x{d} vs text {b2}x{d2}")));
    }
    let s = (l2_normalize(tac)?.matmul(&l2_normalize(tex)?.t()?)? / tau)?;
    let eye = Tensor::eye(b, s.dtype(), s.device())?;
    let row = candle_nn::ops::log_softmax(&s, 1)?;
    let col = candle_nn::ops::log_softmax(&s, 0)?;
    let l_tac = (row * &eye)?.sum_all()?.neg()?;
    let l_tex = (col * &eye)?.sum_all()?.neg()?;
    Ok(((l_tac + l_tex)? / b as f64)?)
}

/// Cosine similarity; zero-norm vectors are an error.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Score(format!("embedding lengths {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Score("zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn single_pair_is_zero() {
        let a = Tensor::new(&[[0.3f64, -1.0, 2.0]], &Device::Cpu).unwrap();
        let b = Tensor::new(&[[1.0f64, 0.5, 0.0]], &Device::Cpu).unwrap();
        assert_eq!(info_nce_loss(&a, &b, 0.07).unwrap().to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn orthonormal_pairs() {
        let e = Tensor::eye(2, DType::F64, &Device::Cpu).unwrap();
        let l = info_nce_loss(&e, &e, 1.0).unwrap().to_scalar::<f64>().unwrap();
        let expect = 2.0 * (1.0 + (-1f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn bad_temperature() {
        let e = Tensor::eye(2, DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(info_nce_loss(&e, &e, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn cosine_properties() {
        assert!((cosine(&[1., 2.], &[1., 2.]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1., 0.], &[0., 3.]).unwrap(), 0.0);
        let a = cosine(&[1., 2., 3.], &[-1., 0.5, 2.]).unwrap();
        let b = cosine(&[3., 6., 9.], &[-1., 0.5, 2.]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert_eq!(a, cosine(&[-1., 0.5, 2.], &[1., 2., 3.]).unwrap());
        assert!(cosine(&[0., 0.], &[1., 1.]).is_err());
    }
}
