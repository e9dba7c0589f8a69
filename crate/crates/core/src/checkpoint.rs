//! Weights on disk: one STG1 file per parameter plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, InitOptions, ModelDims, StagParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub d: usize,
    pub d_k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub variant: Architecture,
    /// Parameter names in file order; each lives in `<name>.stg`.
    pub params: Vec<String>,
}

impl Manifest {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            channels: self.channels,
            d: self.d,
            d_k: self.d_k,
            n: self.n,
            t: self.t,
            num_classes: self.num_classes,
        }
    }
}

pub fn save_checkpoint(dir: &Path, params: &StagParams, arch: Architecture) -> Result<()> {
    fs::create_dir_all(dir)?;
    let dims = params.dims;
    let named = params.named();
    for (name, p) in &named {
        p.value.save(dir.join(format!("{name}.stg")))?;
    }
    let manifest = Manifest {
        d: dims.d,
        d_k: dims.d_k,
        n: dims.n,
        t: dims.t,
        num_classes: dims.num_classes,
        channels: dims.channels,
        variant: arch,
        params: named.iter().map(|(n, _)| n.to_string()).collect(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(StagParams, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut params = StagParams::init(manifest.dims(), 0, InitOptions::default())?;
    let expected: Vec<&str> = params.named().iter().map(|(n, _)| *n).collect();
    if manifest.params.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "checkpoint parameters {:?} do not match the model",
            manifest.params
        )));
    }
    let values = manifest
        .params
        .iter()
        .map(|n| Ok((n.clone(), Tensor::load(dir.join(format!("{n}.stg")))?)))
        .collect::<Result<Vec<_>>>()?;
    params.load_values(&values)?;
    Ok((params, manifest))
}
