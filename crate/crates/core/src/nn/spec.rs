use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a dropout layer sits in the toy architecture: after the ReLU of
/// the named layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutSite {
    Conv1,
    Conv2,
    Conv3,
    Conv4,
    Conv5,
    /// Between the two 1x1 "fully connected" layers.
    Fc6,
}

impl DropoutSite {
    pub const ALL: [DropoutSite; 6] = [
        DropoutSite::Conv1,
        DropoutSite::Conv2,
        DropoutSite::Conv3,
        DropoutSite::Conv4,
        DropoutSite::Conv5,
        DropoutSite::Fc6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DropoutSite::Conv1 => "conv1",
            DropoutSite::Conv2 => "conv2",
            DropoutSite::Conv3 => "conv3",
            DropoutSite::Conv4 => "conv4",
            DropoutSite::Conv5 => "conv5",
            DropoutSite::Fc6 => "fc6",
        }
    }
}

impl fmt::Display for DropoutSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DropoutSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DropoutSite::ALL
            .into_iter()
            .find(|d| d.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown dropout site `{s}`")))
    }
}

/// Parse a comma-separated site list such as `fc6,conv5,conv4`.
pub fn parse_sites(s: &str) -> Result<BTreeSet<DropoutSite>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(DropoutSite::from_str)
        .collect()
}

pub fn format_sites(sites: &BTreeSet<DropoutSite>) -> String {
    sites.iter().rev().map(|s| s.name()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Conv {
        name: String,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    Dropout {
        ratio: f64,
        site: DropoutSite,
    },
    /// Bilinear resize back to the network's input resolution; `factor` is
    /// the nominal ratio for inputs divisible by it.
    Upsample {
        factor: usize,
    },
}

/// Conv weight shape as `(name, out, in, kernel)`.
pub type ConvShape = (String, usize, usize, usize);

/// Per-channel affine normalization applied to the network input:
/// `(x - mean[c]) / std[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Standard deviations below this are clamped.
const MIN_STD: f64 = 1e-3;

impl InputNorm {
    /// Channel statistics pooled over every pixel of `images`.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a crate::image::ImageBuffer>) -> Result<Self> {
        let mut sums: Vec<(f64, f64, f64)> = Vec::new();
        for img in images {
            if sums.is_empty() {
                sums = vec![(0.0, 0.0, 0.0); img.channels()];
            } else if sums.len() != img.channels() {
                return Err(Error::invalid("images disagree on channel count"));
            }
            for (c, acc) in sums.iter_mut().enumerate() {
                for &v in img.channel(c) {
                    acc.0 += 1.0;
                    acc.1 += v as f64;
                    acc.2 += (v as f64) * (v as f64);
                }
            }
        }
        if sums.is_empty() || sums[0].0 == 0.0 {
            return Err(Error::invalid("no pixels to fit input normalization"));
        }
        let (mean, std) = sums
            .iter()
            .map(|&(n, s, q)| {
                let m = s / n;
                ((m) as f32, ((q / n - m * m).max(0.0).sqrt().max(MIN_STD)) as f32)
            })
            .unzip();
        Ok(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_channels: usize,
    pub output_channels: usize,
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_norm: Option<InputNorm>,
}

/// Channel widths of conv1..conv5 and fc6 in the toy architecture.
pub type Widths = [usize; 6];

pub const DEFAULT_WIDTHS: Widths = [16, 32, 32, 64, 64, 64];

impl NetSpec {
    /// Five 3x3 convs (two with stride 2), two 1x1 layers standing in for
    /// the fully connected pair, then a bilinear upsample to input size.
    pub fn toy(
        input_channels: usize,
        output_channels: usize,
        widths: Widths,
        dropout_ratio: f64,
        sites: &BTreeSet<DropoutSite>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let convs = [
            ("conv1", widths[0], 3, 1, 1, DropoutSite::Conv1),
            ("conv2", widths[1], 3, 2, 1, DropoutSite::Conv2),
            ("conv3", widths[2], 3, 1, 1, DropoutSite::Conv3),
            ("conv4", widths[3], 3, 2, 1, DropoutSite::Conv4),
            ("conv5", widths[4], 3, 1, 1, DropoutSite::Conv5),
            ("fc6", widths[5], 1, 1, 0, DropoutSite::Fc6),
        ];
        for (name, out, k, s, p, site) in convs {
            layers.push(Layer::Conv {
                name: name.into(),
                out_channels: out,
                kernel: k,
                stride: s,
                pad: p,
            });
            layers.push(Layer::Relu);
            if sites.contains(&site) {
                layers.push(Layer::Dropout {
                    ratio: dropout_ratio,
                    site,
                });
            }
        }
        layers.push(Layer::Conv {
            name: "fc7".into(),
            out_channels: output_channels,
            kernel: 1,
            stride: 1,
            pad: 0,
        });
        layers.push(Layer::Upsample { factor: 4 });
        let spec = Self {
            input_channels,
            output_channels,
            layers,
            input_norm: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::invalid("net channel counts must be >= 1"));
        }
        let mut ch = self.input_channels;
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => {
                    if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return Err(Error::invalid("conv extents must be >= 1"));
                    }
                    ch = *out_channels;
                }
                Layer::Dropout { ratio, .. } => {
                    if !(0.0..1.0).contains(ratio) {
                        return Err(Error::invalid(format!("dropout ratio {ratio} outside [0, 1)")));
                    }
                }
                Layer::Relu | Layer::Upsample { .. } => {}
            }
        }
        if let Some(norm) = &self.input_norm {
            if norm.mean.len() != self.input_channels
                || norm.std.len() != self.input_channels
                || norm.std.iter().any(|s| !(*s > 0.0))
            {
                return Err(Error::invalid("input normalization must give a positive std per input channel"));
            }
        }
        if ch != self.output_channels {
            return Err(Error::invalid(format!(
                "last conv emits {ch} channels, spec declares {}",
                self.output_channels
            )));
        }
        Ok(())
    }

    pub fn conv_shapes(&self) -> Vec<ConvShape> {
        let mut ch = self.input_channels;
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::Conv {
                name,
                out_channels,
                kernel,
                ..
            } = layer
            {
                out.push((name.clone(), *out_channels, ch, *kernel));
                ch = *out_channels;
            }
        }
        out
    }

    /// Index of the first dropout layer; everything before it is
    /// deterministic and can be shared across Monte-Carlo passes.
    pub fn deterministic_prefix(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::Dropout { .. }))
            .unwrap_or(self.layers.len())
    }

    pub fn dropout_sites(&self) -> BTreeSet<DropoutSite> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dropout { site, .. } => Some(*site),
                _ => None,
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|(_, o, i, k)| o * i * k * k + o)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_layout() {
        let sites: BTreeSet<_> = [DropoutSite::Conv3, DropoutSite::Conv4, DropoutSite::Conv5].into();
        let spec = NetSpec::toy(3, 2, DEFAULT_WIDTHS, 0.4, &sites).unwrap();
        let shapes = spec.conv_shapes();
        assert_eq!(shapes.len(), 7);
        assert_eq!(shapes[0], ("conv1".to_string(), 16, 3, 3));
        assert_eq!(shapes[6], ("fc7".to_string(), 2, 64, 1));
        assert_eq!(spec.dropout_sites(), sites);
        // conv1 relu conv2 relu conv3 relu | dropout ...
        assert_eq!(spec.deterministic_prefix(), 6);
        assert!(matches!(spec.layers.last(), Some(Layer::Upsample { factor: 4 })));
    }

    #[test]
    fn rejects_bad_ratio() {
        let sites: BTreeSet<_> = [DropoutSite::Fc6].into();
        assert!(NetSpec::toy(3, 1, DEFAULT_WIDTHS, 1.0, &sites).is_err());
    }

    #[test]
    fn site_parsing() {
        let s = parse_sites("fc6, conv5,conv4").unwrap();
        assert_eq!(format_sites(&s), "fc6,conv5,conv4");
        assert!(parse_sites("fc7").is_err());
    }
}
