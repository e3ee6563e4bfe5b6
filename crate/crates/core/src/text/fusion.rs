//! Time-adaptive fusion of object-level text and sensor-level gel prompts.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample condition before fusion.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    /// `l × d_c` object-level rows.
    pub c_obj: Tensor,
    /// `n_gs × d_c` gel prompt rows, absent when gel conditioning is off.
    pub c_sen: Option<Tensor>,
    /// `1 × d_c` learned null condition.
    pub null_embedding: Tensor,
    pub theta_t: usize,
    pub gel_id: usize,
}

impl ConditionBundle {
    pub fn cond_dim(&self) -> usize {
        self.null_embedding.dims().last().copied().unwrap_or(0)
    }

    pub fn obj_len(&self) -> usize {
        self.c_obj.dims().first().copied().unwrap_or(0)
    }

    pub fn sen_len(&self) -> usize {
        self.c_sen.as_ref().map(|s| s.dims()[0]).unwrap_or(0)
    }

    pub fn validate(&self, n_gs: Option<usize>) -> Result<()> {
        let d = self.cond_dim();
        let (_, od) = self.c_obj.dims2()?;
        let (nr, nd) = self.null_embedding.dims2()?;
        if nr != 1 || od != d || nd != d {
            return Err(Error::Shape(format!(
                "condition rows disagree on d_c: obj {od}, null {nr}x{nd}"
            )));
        }
        if let Some(s) = &self.c_sen {
            let (n, sd) = s.dims2()?;
            if sd != d {
                return Err(Error::Shape(format!("c_sen has d_c {sd}, expected {d}")));
            }
            if let Some(expected) = n_gs {
                if n != expected {
                    return Err(Error::Shape(format!("c_sen has {n} rows, expected n_gs={expected}")));
                }
            }
        }
        for (name, t) in [("c_obj", Some(&self.c_obj)), ("c_sen", self.c_sen.as_ref()), ("null", Some(&self.null_embedding))] {
            if let Some(t) = t {
                if t.elem_count() > 0 && !all_finite(t)? {
                    return Err(Error::Input(format!("{name} has non-finite values")));
                }
            }
        }
        Ok(())
    }

    /// Whether the gel rows are part of the condition at step `t`.
    pub fn includes_sensor(&self, t: usize) -> bool {
        self.c_sen.is_some() && t >= self.theta_t
    }
}

fn all_finite(t: &Tensor) -> Result<bool> {
    let v = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    Ok(v.iter().all(|x| x.is_finite()))
}

/// `[c_sen; c_obj]` when `t ≥ θ_t`, `c_obj` otherwise.
pub fn fuse_conditions(bundle: &ConditionBundle, t: usize, num_timesteps: usize) -> Result<Tensor> {
    if t > num_timesteps {
        return Err(Error::index("t", t, num_timesteps + 1));
    }
    match &bundle.c_sen {
        Some(sen) if t >= bundle.theta_t => Ok(Tensor::cat(&[sen, &bundle.c_obj], 0)?),
        _ => Ok(bundle.c_obj.clone()),
    }
}

/// Condition for the unconditional branch: the single null row.
pub fn fuse_null(bundle: &ConditionBundle) -> Tensor {
    bundle.null_embedding.clone()
}

/// Where the θ_t branch is honoured. When off for a phase the gel rows are
/// always included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaGate {
    pub theta_t: usize,
    pub in_training: bool,
    pub in_sampling: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Sample,
}

impl ThetaGate {
    pub fn new(theta_t: usize) -> Self {
        Self {
            theta_t,
            in_training: true,
            in_sampling: true,
        }
    }

    pub fn effective(&self, phase: Phase) -> usize {
        let on = match phase {
            Phase::Train => self.in_training,
            Phase::Sample => self.in_sampling,
        };
        if on {
            self.theta_t
        } else {
            0
        }
    }
}

/// A batch of fused conditions laid out as `[null | sensor slot | object rows]`
/// per sample, with masks selecting the rows each block attends to.
#[derive(Debug, Clone)]
pub struct CondBatch {
    /// `(B, M, d_c)`.
    pub rows: Tensor,
    /// `(B, M)` active rows for blocks that receive gel prompts.
    pub with_sen: Tensor,
    /// `(B, M)` active rows for the remaining blocks.
    pub obj_only: Tensor,
    pub with_sen_len: Vec<usize>,
    pub obj_only_len: Vec<usize>,
}

impl CondBatch {
    /// Fuse each bundle at its own timestep. `drop[i]` replaces sample `i`'s
    /// condition by the null row.
    pub fn from_bundles(bundles: &[ConditionBundle], t: &[usize], drop: &[bool], num_timesteps: usize) -> Result<Self> {
        if bundles.is_empty() || bundles.len() != t.len() || bundles.len() != drop.len() {
            return Err(Error::Shape(format!(
                "{} bundles, {} timesteps, {} drop flags",
                bundles.len(),
                t.len(),
                drop.len()
            )));
        }
        let d = bundles[0].cond_dim();
        for b in bundles {
            b.validate(None)?;
            if b.cond_dim() != d {
                return Err(Error::Shape(format!("mixed d_c {} and {d} in one batch", b.cond_dim())));
            }
        }
        for &ti in t {
            if ti > num_timesteps {
                return Err(Error::index("t", ti, num_timesteps + 1));
            }
        }
        let n_sen = bundles.iter().map(|b| b.sen_len()).max().unwrap_or(0);
        let n_obj = bundles.iter().map(|b| b.obj_len()).max().unwrap_or(0);
        let m = 1 + n_sen + n_obj;
        let device = bundles[0].null_embedding.device().clone();
        let dtype = bundles[0].null_embedding.dtype();

        let mut per_sample = Vec::with_capacity(bundles.len());
        let mut with_sen = Vec::with_capacity(bundles.len() * m);
        let mut obj_only = Vec::with_capacity(bundles.len() * m);
        let (mut ws_len, mut oo_len) = (Vec::new(), Vec::new());
        for ((b, &ti), &dropped) in bundles.iter().zip(t).zip(drop) {
            let mut parts = vec![b.null_embedding.clone()];
            let sl = b.sen_len();
            if let Some(s) = &b.c_sen {
                parts.push(s.clone());
            }
            if n_sen > sl {
                parts.push(Tensor::zeros((n_sen - sl, d), dtype, &device)?);
            }
            let ol = b.obj_len();
            if ol > 0 {
                parts.push(b.c_obj.clone());
            }
            if n_obj > ol {
                parts.push(Tensor::zeros((n_obj - ol, d), dtype, &device)?);
            }
            per_sample.push(Tensor::cat(&parts, 0)?);

            let sen_on = !dropped && b.includes_sensor(ti);
            let row = |i: usize, with_gel: bool| -> f32 {
                if dropped {
                    return (i == 0) as u8 as f32;
                }
                if i == 0 {
                    0.0
                } else if i <= n_sen {
                    (with_gel && sen_on && i <= sl) as u8 as f32
                } else {
                    (i - 1 - n_sen < ol) as u8 as f32
                }
            };
            with_sen.extend((0..m).map(|i| row(i, true)));
            obj_only.extend((0..m).map(|i| row(i, false)));
            if dropped {
                ws_len.push(1);
                oo_len.push(1);
            } else {
                ws_len.push(ol + if sen_on { sl } else { 0 });
                oo_len.push(ol);
            }
        }
        let b = bundles.len();
        Ok(Self {
            rows: Tensor::stack(&per_sample, 0)?,
            with_sen: Tensor::from_vec(with_sen, (b, m), &device)?.to_dtype(dtype)?,
            obj_only: Tensor::from_vec(obj_only, (b, m), &device)?.to_dtype(dtype)?,
            with_sen_len: ws_len,
            obj_only_len: oo_len,
        })
    }

    /// Same layout with every sample dropped to the null row.
    pub fn to_null(&self) -> Result<Self> {
        let (b, m) = self.with_sen.dims2()?;
        let mut mask = vec![0f32; b * m];
        for i in 0..b {
            mask[i * m] = 1.0;
        }
        let mask = Tensor::from_vec(mask, (b, m), self.rows.device())?.to_dtype(self.rows.dtype())?;
        Ok(Self {
            rows: self.rows.clone(),
            with_sen: mask.clone(),
            obj_only: mask,
            with_sen_len: vec![1; b],
            obj_only_len: vec![1; b],
        })
    }

    /// Stack batches along the sample axis, padding rows to a common length.
    pub fn concat(parts: &[&CondBatch]) -> Result<Self> {
        let m = parts.iter().map(|p| p.rows.dim(1)).collect::<candle_core::Result<Vec<_>>>()?;
        let m_max = m.iter().copied().max().unwrap_or(0);
        let pad = |t: &Tensor, extra: usize| -> Result<Tensor> {
            if extra == 0 {
                return Ok(t.clone());
            }
            let mut dims = t.dims().to_vec();
            dims[1] = extra;
            Ok(Tensor::cat(&[t, &Tensor::zeros(dims, t.dtype(), t.device())?], 1)?)
        };
        let mut rows = Vec::new();
        let mut ws = Vec::new();
        let mut oo = Vec::new();
        let (mut wl, mut ol) = (Vec::new(), Vec::new());
        for (p, &mi) in parts.iter().zip(&m) {
            rows.push(pad(&p.rows, m_max - mi)?);
            ws.push(pad(&p.with_sen, m_max - mi)?);
            oo.push(pad(&p.obj_only, m_max - mi)?);
            wl.extend(&p.with_sen_len);
            ol.extend(&p.obj_only_len);
        }
        Ok(Self {
            rows: Tensor::cat(&rows, 0)?,
            with_sen: Tensor::cat(&ws, 0)?,
            obj_only: Tensor::cat(&oo, 0)?,
            with_sen_len: wl,
            obj_only_len: ol,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.rows.dims()[0]
    }

    pub fn cond_dim(&self) -> usize {
        self.rows.dims()[2]
    }

    pub fn mask(&self, receives_gel: bool) -> &Tensor {
        if receives_gel {
            &self.with_sen
        } else {
            &self.obj_only
        }
    }

    /// The rows sample `i` actually attends to in a block, in layout order.
    pub fn active_rows(&self, i: usize, receives_gel: bool) -> Result<Tensor> {
        let mask = self.mask(receives_gel).get(i)?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        let idx: Vec<u32> = mask.iter().enumerate().filter(|(_, &v)| v > 0.5).map(|(j, _)| j as u32).collect();
        let rows = self.rows.get(i)?;
        if idx.is_empty() {
            return Ok(rows.narrow(0, 0, 0)?);
        }
        let idx = Tensor::from_vec(idx.clone(), idx.len(), rows.device())?;
        Ok(rows.index_select(&idx, 0)?)
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Ok(Self {
            rows: self.rows.to_dtype(dtype)?,
            with_sen: self.with_sen.to_dtype(dtype)?,
            obj_only: self.obj_only.to_dtype(dtype)?,
            with_sen_len: self.with_sen_len.clone(),
            obj_only_len: self.obj_only_len.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn bundle(l: usize, n_gs: usize, theta: usize) -> ConditionBundle {
        let dev = Device::Cpu;
        let obj: Vec<f32> = (0..l * 3).map(|i| i as f32 + 1.0).collect();
        let sen: Vec<f32> = (0..n_gs * 3).map(|i| -(i as f32) - 1.0).collect();
        ConditionBundle {
            c_obj: Tensor::from_vec(obj, (l, 3), &dev).unwrap(),
            c_sen: (n_gs > 0).then(|| Tensor::from_vec(sen, (n_gs, 3), &dev).unwrap()),
            null_embedding: Tensor::new(&[[0.5f32, 0.5, 0.5]], &dev).unwrap(),
            theta_t: theta,
            gel_id: 0,
        }
    }

    fn rows(t: &Tensor) -> Vec<Vec<f32>> {
        t.to_vec2::<f32>().unwrap()
    }

    #[test]
    fn branch_at_theta() {
        let b = bundle(10, 4, 600);
        let hi = fuse_conditions(&b, 800, 1000).unwrap();
        assert_eq!(hi.dims(), &[14, 3]);
        assert_eq!(rows(&hi.narrow(0, 0, 4).unwrap()), rows(b.c_sen.as_ref().unwrap()));
        let lo = fuse_conditions(&b, 599, 1000).unwrap();
        assert_eq!(rows(&lo), rows(&b.c_obj));
        let b0 = bundle(10, 4, 0);
        assert_eq!(fuse_conditions(&b0, 0, 1000).unwrap().dims()[0], 14);
        assert!(fuse_conditions(&b, 1001, 1000).is_err());
        assert_eq!(fuse_null(&b).dims(), &[1, 3]);
    }

    #[test]
    fn batch_masks_reproduce_single_fusion() {
        let bs = vec![bundle(10, 4, 600), bundle(6, 4, 600), bundle(3, 4, 600)];
        let t = [800, 100, 700];
        let cb = CondBatch::from_bundles(&bs, &t, &[false, false, true], 1000).unwrap();
        for i in 0..2 {
            let expect = fuse_conditions(&bs[i], t[i], 1000).unwrap();
            assert_eq!(rows(&cb.active_rows(i, true).unwrap()), rows(&expect));
            assert_eq!(rows(&cb.active_rows(i, false).unwrap()), rows(&bs[i].c_obj));
        }
        assert_eq!(rows(&cb.active_rows(2, true).unwrap()), rows(&fuse_null(&bs[2])));
        assert_eq!(cb.with_sen_len, vec![14, 6, 1]);
        assert_eq!(cb.obj_only_len, vec![10, 6, 1]);
    }

    #[test]
    fn gate_switches() {
        let g = ThetaGate {
            theta_t: 600,
            in_training: false,
            in_sampling: true,
        };
        assert_eq!(g.effective(Phase::Train), 0);
        assert_eq!(g.effective(Phase::Sample), 600);
    }

    #[test]
    fn validation_catches_dim_mismatch_and_nan() {
        let mut b = bundle(2, 2, 0);
        b.c_sen = Some(Tensor::zeros((2, 4), DType::F32, &Device::Cpu).unwrap());
        assert!(matches!(b.validate(None), Err(Error::Shape(_))));
        let mut b = bundle(2, 2, 0);
        b.c_obj = Tensor::new(&[[f32::NAN, 0., 0.]], &Device::Cpu).unwrap();
        assert!(b.validate(Some(2)).is_err());
    }
}
