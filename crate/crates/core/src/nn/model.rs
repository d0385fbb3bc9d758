use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{ConvParams, NetParams};
use super::spec::NetSpec;
use crate::error::{Error, Result};
use crate::image::{read_blobs, write_blobs, TensorBlob};

/// A network description together with its trained weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    pub spec: NetSpec,
    pub params: NetParams<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    blobs: Vec<BlobEntry>,
    format: String,
    spec: NetSpec,
}

/// Sidecar manifest path: `<params path>.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl SegNet {
    /// Write weights as a `GBT1` blob sequence (weight then bias per layer)
    /// plus a JSON manifest with alphabetically ordered keys.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut blobs = Vec::new();
        let mut entries = Vec::new();
        for c in self.params.convs() {
            let wdims = vec![c.out_channels, c.in_channels, c.kernel, c.kernel];
            entries.push(BlobEntry {
                name: format!("{}.weight", c.name),
                shape: wdims.clone(),
            });
            blobs.push(TensorBlob::new(wdims, c.weight.clone())?);
            entries.push(BlobEntry {
                name: format!("{}.bias", c.name),
                shape: vec![c.out_channels],
            });
            blobs.push(TensorBlob::new(vec![c.out_channels], c.bias.clone())?);
        }
        write_blobs(&blobs, path)?;
        let manifest = Manifest {
            blobs: entries,
            format: "GBT1".into(),
            spec: self.spec.clone(),
        };
        let value = serde_json::to_value(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        let mpath = manifest_path(path);
        std::fs::write(&mpath, text).map_err(|e| Error::io(mpath, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mpath = manifest_path(path);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
        manifest.spec.validate()?;
        let blobs = read_blobs(path)?;
        let shapes = manifest.spec.conv_shapes();
        if blobs.len() != 2 * shapes.len() {
            return Err(Error::Format(format!(
                "expected {} blobs, found {}",
                2 * shapes.len(),
                blobs.len()
            )));
        }
        let mut convs = Vec::with_capacity(shapes.len());
        for ((name, o, i, k), pair) in shapes.iter().zip(blobs.chunks(2)) {
            if pair[0].dims() != [*o, *i, *k, *k] || pair[1].dims() != [*o] {
                return Err(Error::Format(format!("blob shapes for {name} do not match manifest")));
            }
            convs.push(ConvParams {
                name: name.clone(),
                out_channels: *o,
                in_channels: *i,
                kernel: *k,
                weight: pair[0].payload().to_vec(),
                bias: pair[1].payload().to_vec(),
            });
        }
        let params = NetParams::from_convs(&manifest.spec, convs)?;
        Ok(Self {
            spec: manifest.spec,
            params,
        })
    }
}
