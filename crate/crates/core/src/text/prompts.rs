use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};

/// Learnable sensor-level prompts: `n_gs` embedding rows per gel status.
///
/// Each gel owns a separate parameter tensor, so a loss that only involves
/// gel `i` produces no gradient entry at all for the other gels.
#[derive(Debug, Clone)]
pub struct GelPromptBank {
    prompts: Vec<Tensor>,
    n_gs: usize,
    dim: usize,
}

pub fn prompt_param_name(gel_id: usize) -> String {
    format!("gel_prompts.{gel_id}")
}

impl GelPromptBank {
    pub fn new(store: &mut ParamStore, gel_count: usize, n_gs: usize, dim: usize) -> Result<Self> {
        if n_gs == 0 || gel_count == 0 {
            return Err(Error::Config("gel prompt bank needs at least one gel and one token".into()));
        }
        let prompts = (0..gel_count)
            .map(|g| store.param(&prompt_param_name(g), &[n_gs, dim], Init::Normal(1.0)))
            .collect::<Result<_>>()?;
        Ok(Self { prompts, n_gs, dim })
    }

    pub fn gel_count(&self) -> usize {
        self.prompts.len()
    }

    pub fn n_gs(&self) -> usize {
        self.n_gs
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `n_gs × d` prompt rows for one gel.
    pub fn prompt(&self, gel_id: usize) -> Result<Tensor> {
        self.prompts
            .get(gel_id)
            .cloned()
            .ok_or_else(|| Error::index("gel_id", gel_id, self.prompts.len()))
    }
}
