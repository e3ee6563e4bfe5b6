use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PREFIX: &str = "the touch of ";
const JOIN: &str = " is ";

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// `"the touch of <shape> is <texture>"`, lowercased with collapsed whitespace.
pub fn build_caption(shape_caption: &str, texture_caption: &str) -> Result<String> {
    let (s, t) = (normalize(shape_caption), normalize(texture_caption));
    if s.is_empty() || t.is_empty() {
        return Err(Error::Caption(format!(
            "both shape and texture are required (shape={shape_caption:?}, texture={texture_caption:?})"
        )));
    }
    Ok(format!("{PREFIX}{s}{JOIN}{t}"))
}

/// Inverse of [`build_caption`] when the texture phrase does not contain " is ".
pub fn parse_caption(caption: &str) -> Option<(String, String)> {
    let rest = caption.strip_prefix(PREFIX)?;
    let (shape, texture) = rest.rsplit_once(JOIN)?;
    Some((shape.to_string(), texture.to_string()))
}

/// Which object-level facts and whether the gel status enter the condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionToggles {
    pub texture: bool,
    pub shape: bool,
    pub gel: bool,
}

impl Default for ConditionToggles {
    fn default() -> Self {
        Self {
            texture: true,
            shape: true,
            gel: true,
        }
    }
}

impl ConditionToggles {
    pub const TEXTURE_ONLY: Self = Self {
        texture: true,
        shape: false,
        gel: false,
    };
    pub const TEXTURE_SHAPE: Self = Self {
        texture: true,
        shape: true,
        gel: false,
    };
    pub const ALL: Self = Self {
        texture: true,
        shape: true,
        gel: true,
    };

    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.texture {
            s.push('t');
        }
        if self.shape {
            s.push('s');
        }
        if self.gel {
            s.push('g');
        }
        if s.is_empty() {
            s.push_str("none");
        }
        s
    }

    /// Object-level caption under these toggles. With both facts on this is
    /// exactly [`build_caption`].
    pub fn caption(&self, shape_caption: &str, texture_caption: &str) -> Result<String> {
        match (self.shape, self.texture) {
            (true, true) => build_caption(shape_caption, texture_caption),
            (false, true) => {
                let t = normalize(texture_caption);
                if t.is_empty() {
                    return Err(Error::Caption("texture caption is empty".into()));
                }
                Ok(format!("the touch is {t}"))
            }
            (true, false) => {
                let s = normalize(shape_caption);
                if s.is_empty() {
                    return Err(Error::Caption("shape caption is empty".into()));
                }
                Ok(format!("{PREFIX}{s}"))
            }
            (false, false) => Ok(String::new()),
        }
    }
}
