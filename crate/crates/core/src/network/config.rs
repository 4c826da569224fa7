use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::layers::conv_output_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride 1, no padding.
    pub fn valid(out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel,
            stride: 1,
            padding: 0,
        }
    }
}

/// Architecture description: conv (+ReLU) stages with optional 2×2 pools,
/// then dense layers (ReLU between them) and a 2-way softmax.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_hw: (usize, usize),
    pub convs: Vec<ConvSpec>,
    /// 0-based indices of convs followed by a max pool.
    pub pool_after: BTreeSet<usize>,
    pub fc_dims: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_channels: 1,
            input_hw: (120, 120),
            convs: vec![
                ConvSpec::valid(50, 11),
                ConvSpec::valid(120, 5),
                ConvSpec::valid(120, 3),
            ],
            pool_after: [0, 1].into_iter().collect(),
            fc_dims: vec![10, 2],
        }
    }
}

/// One entry of the shape trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    /// Per-sample shape (no batch axis).
    pub dims: Vec<usize>,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{} {}", self.name, parts.join("×"))
    }
}

impl NetworkConfig {
    /// A small architecture for fast tests: 12×12 input, convs (2,3),(3,3),
    /// pool after conv0, fc [4,2].
    pub fn tiny() -> Self {
        NetworkConfig {
            input_channels: 1,
            input_hw: (12, 12),
            convs: vec![ConvSpec::valid(2, 3), ConvSpec::valid(3, 3)],
            pool_after: [0].into_iter().collect(),
            fc_dims: vec![4, 2],
        }
    }

    /// The 64×64 desk-scale variant: convs (8,7),(16,5),(16,3), pools after conv0/conv1, fc [10,2].
    pub fn reduced() -> Self {
        NetworkConfig {
            input_channels: 1,
            input_hw: (64, 64),
            convs: vec![
                ConvSpec::valid(8, 7),
                ConvSpec::valid(16, 5),
                ConvSpec::valid(16, 3),
            ],
            pool_after: [0, 1].into_iter().collect(),
            fc_dims: vec![10, 2],
        }
    }

    /// Validates the stack and returns the per-sample shape after every stage.
    pub fn shape_trace(&self) -> Result<Vec<Stage>> {
        let (h, w) = self.input_hw;
        if self.input_channels == 0 || h == 0 || w == 0 {
            return Err(Error::Config("input extents must be positive".into()));
        }
        if self.convs.is_empty() {
            return Err(Error::Config("at least one conv layer is required".into()));
        }
        if let Some(&bad) = self.pool_after.iter().find(|&&i| i >= self.convs.len()) {
            return Err(Error::Config(format!(
                "pool_after index {bad} has no matching conv (have {})",
                self.convs.len()
            )));
        }
        match self.fc_dims.last() {
            Some(2) => {}
            _ => {
                return Err(Error::Config(format!(
                    "final fc width must be 2, got fc = {:?}",
                    self.fc_dims
                )))
            }
        }

        let mut trace = vec![Stage {
            name: "input".into(),
            dims: vec![self.input_channels, h, w],
        }];
        let (mut c, mut h, mut w) = (self.input_channels, h, w);
        for (i, spec) in self.convs.iter().enumerate() {
            if spec.out_channels == 0 || spec.stride == 0 {
                return Err(Error::LayerConfig {
                    layer: i,
                    message: "conv channels and stride must be positive".into(),
                });
            }
            let oh = conv_output_extent(h, spec.kernel, spec.stride, spec.padding);
            let ow = conv_output_extent(w, spec.kernel, spec.stride, spec.padding);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return Err(Error::LayerConfig {
                    layer: i,
                    message: format!(
                        "{0}×{0} kernel does not fit a {h}×{w} input",
                        spec.kernel
                    ),
                });
            };
            (c, h, w) = (spec.out_channels, oh, ow);
            trace.push(Stage {
                name: format!("conv{i}"),
                dims: vec![c, h, w],
            });
            if self.pool_after.contains(&i) {
                if h < 2 || w < 2 {
                    return Err(Error::LayerConfig {
                        layer: i,
                        message: format!("{h}×{w} map is too small for 2×2 pooling"),
                    });
                }
                (h, w) = (h / 2, w / 2);
                trace.push(Stage {
                    name: format!("pool{i}"),
                    dims: vec![c, h, w],
                });
            }
        }
        trace.push(Stage {
            name: "flatten".into(),
            dims: vec![c * h * w],
        });
        for (j, &d) in self.fc_dims.iter().enumerate() {
            if d == 0 {
                return Err(Error::LayerConfig {
                    layer: self.convs.len() + j,
                    message: "fc width must be positive".into(),
                });
            }
            trace.push(Stage {
                name: format!("fc{j}"),
                dims: vec![d],
            });
        }
        trace.push(Stage {
            name: "softmax".into(),
            dims: vec![2],
        });
        Ok(trace)
    }

    pub fn flat_dim(&self) -> Result<usize> {
        let trace = self.shape_trace()?;
        Ok(trace
            .iter()
            .find(|s| s.name == "flatten")
            .map(|s| s.dims[0])
            .expect("trace always has a flatten stage"))
    }

    /// `key = value` lines, prefixed with `network.`.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let join = |v: Vec<String>| v.join(",");
        vec![
            ("network.input".into(), format!("{}x{}", self.input_hw.0, self.input_hw.1)),
            ("network.input_channels".into(), self.input_channels.to_string()),
            (
                "network.conv".into(),
                join(self.convs.iter().map(|c| format!("{}x{}", c.out_channels, c.kernel)).collect()),
            ),
            (
                "network.stride".into(),
                join(self.convs.iter().map(|c| c.stride.to_string()).collect()),
            ),
            (
                "network.padding".into(),
                join(self.convs.iter().map(|c| c.padding.to_string()).collect()),
            ),
            (
                "network.pool_after".into(),
                join(self.pool_after.iter().map(|i| i.to_string()).collect()),
            ),
            (
                "network.fc".into(),
                join(self.fc_dims.iter().map(|d| d.to_string()).collect()),
            ),
        ]
    }

    /// Builds a config from `network.*` keys, using defaults for absent keys.
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = NetworkConfig::default();
        let get = |k: &str| map.get(&format!("network.{k}")).map(|s| s.trim());
        if let Some(v) = get("input") {
            cfg.input_hw = parse_pair(v, "network.input")?;
        }
        if let Some(v) = get("input_channels") {
            cfg.input_channels = parse_usize(v, "network.input_channels")?;
        }
        if let Some(v) = get("conv") {
            cfg.convs = v
                .split(',')
                .map(|p| {
                    let (c, k) = parse_pair(p, "network.conv")?;
                    Ok(ConvSpec::valid(c, k))
                })
                .collect::<Result<_>>()?;
        }
        for (key, set) in [
            ("stride", (|c: &mut ConvSpec, v| c.stride = v) as fn(&mut ConvSpec, usize)),
            ("padding", |c: &mut ConvSpec, v| c.padding = v),
        ] {
            if let Some(v) = get(key) {
                let vals = parse_list(v, &format!("network.{key}"))?;
                let n = cfg.convs.len();
                match vals.len() {
                    1 => cfg.convs.iter_mut().for_each(|c| set(c, vals[0])),
                    len if len == n => {
                        cfg.convs.iter_mut().zip(&vals).for_each(|(c, &x)| set(c, x))
                    }
                    len => {
                        return Err(Error::Config(format!(
                            "network.{key} has {len} entries for {n} conv layers"
                        )))
                    }
                }
            }
        }
        if let Some(v) = get("pool_after") {
            cfg.pool_after = parse_list(v, "network.pool_after")?.into_iter().collect();
        }
        if let Some(v) = get("fc") {
            cfg.fc_dims = parse_list(v, "network.fc")?;
        }
        Ok(cfg)
    }
}

fn parse_usize(s: &str, key: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: '{s}' is not a non-negative integer")))
}

fn parse_list(s: &str, key: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| parse_usize(p, key)).collect()
}

fn parse_pair(s: &str, key: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .trim()
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("{key}: expected AxB, got '{s}'")))?;
    Ok((parse_usize(a, key)?, parse_usize(b, key)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(trace: &[Stage]) -> Vec<Vec<usize>> {
        trace.iter().map(|s| s.dims.clone()).collect()
    }

    #[test]
    fn default_shape_trace() {
        let trace = NetworkConfig::default().shape_trace().unwrap();
        assert_eq!(
            dims(&trace),
            vec![
                vec![1, 120, 120],
                vec![50, 110, 110],
                vec![50, 55, 55],
                vec![120, 51, 51],
                vec![120, 25, 25],
                vec![120, 23, 23],
                vec![63480],
                vec![10],
                vec![2],
                vec![2],
            ]
        );
    }

    #[test]
    fn oversized_kernel_names_layer() {
        let mut cfg = NetworkConfig::default();
        cfg.convs[0].kernel = 121;
        assert!(matches!(
            cfg.shape_trace(),
            Err(Error::LayerConfig { layer: 0, .. })
        ));
    }

    #[test]
    fn final_width_must_be_two() {
        let mut cfg = NetworkConfig::tiny();
        cfg.fc_dims = vec![4, 3];
        assert!(matches!(cfg.shape_trace(), Err(Error::Config(_))));
        cfg.fc_dims = vec![2];
        assert!(cfg.shape_trace().is_ok());
    }

    #[test]
    fn kv_round_trip() {
        for cfg in [NetworkConfig::default(), NetworkConfig::tiny(), NetworkConfig::reduced()] {
            let map: BTreeMap<_, _> = cfg.to_kv().into_iter().collect();
            assert_eq!(NetworkConfig::from_kv(&map).unwrap(), cfg);
        }
    }

    #[test]
    fn kv_rejects_bad_stride_count() {
        let mut map: BTreeMap<String, String> = NetworkConfig::default().to_kv().into_iter().collect();
        map.insert("network.stride".into(), "1,2".into());
        assert!(matches!(NetworkConfig::from_kv(&map), Err(Error::Config(_))));
    }
}
