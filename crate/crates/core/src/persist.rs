//! JSON container for fitted models.
//!
//! Floats are written in shortest round-trip form, so a saved model reloads
//! bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpca::{EkpcaModel, NystromModel};
use crate::scalar::Scalar;

pub const FORMAT_TAG: &str = "nykpca-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[serde(bound = "T: Scalar")]
pub enum Model<T> {
    Ekpca(EkpcaModel<T>),
    Nystrom(NystromModel<T>),
}

impl<T> From<EkpcaModel<T>> for Model<T> {
    fn from(m: EkpcaModel<T>) -> Self {
        Model::Ekpca(m)
    }
}

impl<T> From<NystromModel<T>> for Model<T> {
    fn from(m: NystromModel<T>) -> Self {
        Model::Nystrom(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Container<T> {
    format: String,
    version: u32,
    scalar: String,
    model: Model<T>,
}

fn scalar_name<T: 'static>() -> &'static str {
    std::any::type_name::<T>()
}

pub fn to_json<T: Scalar>(model: &Model<T>) -> Result<String> {
    let c = Container {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        scalar: scalar_name::<T>().to_string(),
        model: model.clone(),
    };
    serde_json::to_string(&c).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_json<T: Scalar>(text: &str) -> Result<Model<T>> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
        scalar: String,
    }
    let h: Header = serde_json::from_str(text).map_err(|e| Error::Format(format!("model header: {e}")))?;
    if h.format != FORMAT_TAG {
        return Err(Error::Format(format!("not a model file (format tag {:?})", h.format)));
    }
    if h.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model version {}", h.version)));
    }
    if h.scalar != scalar_name::<T>() {
        return Err(Error::Format(format!("model stores {} values, expected {}", h.scalar, scalar_name::<T>())));
    }
    let c: Container<T> = serde_json::from_str(text).map_err(|e| Error::Format(format!("model body: {e}")))?;
    Ok(c.model)
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, to_json(model)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    from_json(&text)
}
