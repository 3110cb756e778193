//! Static inventory of every parameterized layer a config produces.
//!
//! Parameter initialization, counting, FLOP estimation and checkpoint
//! validation all walk this one list, so they cannot drift apart.

use serde::Serialize;

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LayerKind {
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
    },
    /// Channel-wise layer norm with gain and shift vectors.
    Norm { channels: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    fn conv(name: impl Into<String>, c_in: usize, c_out: usize, kernel: usize, dilation: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                dilation,
            },
        }
    }

    fn norm(name: impl Into<String>, channels: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Norm { channels },
        }
    }

    /// `(parameter name, shape)` pairs in registration order.
    pub fn params(&self) -> Vec<(String, [usize; 4])> {
        match self.kind {
            LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                ..
            } => vec![
                (format!("{}.weight", self.name), [c_out, c_in, kernel, kernel]),
                (format!("{}.bias", self.name), [1, c_out, 1, 1]),
            ],
            LayerKind::Norm { channels } => vec![
                (format!("{}.gain", self.name), [1, channels, 1, 1]),
                (format!("{}.shift", self.name), [1, channels, 1, 1]),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Multiply-accumulates per output pixel; zero for norms.
    pub fn macs_per_pixel(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                ..
            } => c_in * c_out * kernel * kernel,
            LayerKind::Norm { .. } => 0,
        }
    }
}

pub(crate) fn block_prefix(block: usize) -> String {
    format!("blocks.{block}")
}

/// Layers of one enhancement block (empty when both flags are off).
pub(crate) fn feb_layers(cfg: &ModelConfig, block: usize) -> Vec<LayerSpec> {
    if cfg.feb_outputs() == 0 {
        return Vec::new();
    }
    let p = format!("{}.feb", block_prefix(block));
    let c = cfg.channels;
    let mut v = vec![LayerSpec::norm(format!("{p}.norm"), c)];
    for (i, &d) in cfg.dilations.iter().enumerate() {
        v.push(LayerSpec::conv(format!("{p}.branches.{i}.reduce"), c, cfg.branch_width, 1, 1));
        v.push(LayerSpec::conv(
            format!("{p}.branches.{i}.dilated"),
            cfg.branch_width,
            cfg.branch_width,
            3,
            d,
        ));
    }
    v.push(LayerSpec::conv(
        format!("{p}.coeff"),
        cfg.branch_width * cfg.dilations.len(),
        cfg.coeff_channels(),
        1,
        1,
    ));
    v.push(LayerSpec::conv(format!("{p}.fuse"), cfg.feb_outputs() * c, c, 1, 1));
    v
}

pub(crate) fn erb_layers(cfg: &ModelConfig, block: usize) -> Vec<LayerSpec> {
    let p = format!("{}.erb", block_prefix(block));
    let (c, h) = (cfg.channels, cfg.erb_hidden);
    let mut v = vec![
        LayerSpec::norm(format!("{p}.norm"), c),
        LayerSpec::conv(format!("{p}.reduce"), c, h, 1, 1),
    ];
    for j in 0..cfg.erb_depth {
        v.push(LayerSpec::conv(format!("{p}.convs.{j}"), h, h, 3, 1));
    }
    v.push(LayerSpec::conv(format!("{p}.expand"), h, c, 1, 1));
    v
}

/// Every layer of the network in parameter registration order.
pub fn layers(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let c = cfg.channels;
    let mut v = vec![LayerSpec::conv("shallow", 3, c, 3, 1)];
    for b in 0..cfg.num_blocks {
        v.extend(feb_layers(cfg, b));
        v.extend(erb_layers(cfg, b));
    }
    v.push(LayerSpec::conv("fusion", cfg.num_groups() * c, c, 1, 1));
    v.push(LayerSpec::conv("head.pointwise", c, c, 1, 1));
    v.push(LayerSpec::conv("head.conv", c, 3 * cfg.scale * cfg.scale, 3, 1));
    v
}
