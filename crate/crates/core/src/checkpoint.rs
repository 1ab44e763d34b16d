//! Network checkpoints: `params.mrt` (concatenated MRT1 records) plus `manifest.json`.

use crate::error::{Error, Result};
use crate::network::{Network, NetworkDescriptor};
use crate::tensor::{read_mrt1, write_mrt1, DType, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const PARAMS_FILE: &str = "params.mrt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset of the record inside `params.mrt`.
    pub offset: usize,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub descriptor: NetworkDescriptor,
    pub tensors: Vec<TensorEntry>,
}

/// Serialize every parameter value in registration order. Output is byte-deterministic.
pub fn save(net: &Network, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for p in net.params() {
        let offset = blob.len();
        write_mrt1(&p.value, &mut blob)?;
        tensors.push(TensorEntry {
            name: p.name.clone(),
            offset,
            shape: p.value.shape().to_vec(),
            dtype: p.value.dtype(),
        });
    }
    let manifest = Manifest { descriptor: net.descriptor().clone(), tensors };
    fs::write(dir.join(PARAMS_FILE), blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Copy `values` into `net` by name; every parameter must be present with a matching shape.
pub fn assign(net: &mut Network, values: &[(String, Tensor)]) -> Result<()> {
    let lookup: std::collections::HashMap<&str, &Tensor> = values.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for p in net.params_mut() {
        let t = lookup
            .get(p.name.as_str())
            .ok_or_else(|| Error::config(format!("tensors.{}", p.name), "missing from checkpoint"))?;
        if t.shape() != p.value.shape() {
            return Err(Error::config(
                format!("tensors.{}", p.name),
                format!("checkpoint shape {:?} does not match network shape {:?}", t.shape(), p.value.shape()),
            ));
        }
        p.value = (*t).clone();
    }
    Ok(())
}

/// Rebuild the network from the stored descriptor and fill in the saved values.
pub fn load(dir: &Path) -> Result<Network> {
    let manifest = read_manifest(dir)?;
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    let values = manifest
        .tensors
        .iter()
        .map(|e| {
            let bytes = blob
                .get(e.offset..)
                .ok_or_else(|| Error::data(format!("offset for `{}` is past the end of {PARAMS_FILE}", e.name)))?;
            let t = read_mrt1(bytes)?;
            if t.shape() != e.shape.as_slice() || t.dtype() != e.dtype {
                return Err(Error::data(format!("record for `{}` disagrees with the manifest", e.name)));
            }
            Ok((e.name.clone(), t))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut net = Network::build(&manifest.descriptor, 0)?;
    assign(&mut net, &values)?;
    if values.len() != net.params().len() {
        return Err(Error::config("tensors", "checkpoint holds parameters the network does not have"));
    }
    Ok(net)
}
