use serde::{Deserialize, Serialize};
use sqzt_core::fock::CholeskyFactor;
use sqzt_core::homodyne::PARAMS_LABEL_LEN;

use crate::error::{Error, Result};

/// One entry of the convolutional trunk. Channel counts are the unscaled
/// values; [`CnnConfig::width_scale`] is applied when the model is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StageSpec {
    Conv {
        name: String,
        kernel: usize,
        channels: usize,
        stride: usize,
        relu: bool,
    },
    /// `convs` stride-1 ReLU convolutions. With dense wiring the block input
    /// is concatenated channel-wise onto the last convolution's output.
    Block {
        name: String,
        kernel: usize,
        channels: usize,
        convs: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// `(r/r_max, cos θ_s, sin θ_s, n_th/n_max)`.
    Characteristic,
    /// Packed Cholesky factor at truncation `m`.
    Reconstruction { m: usize },
}

impl HeadKind {
    pub fn output_len(&self) -> usize {
        match *self {
            HeadKind::Characteristic => PARAMS_LABEL_LEN,
            HeadKind::Reconstruction { m } => CholeskyFactor::packed_len(m),
        }
    }
}

/// Fully connected head: `hidden` ReLU layers then a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub hidden: Vec<usize>,
}

impl HeadSpec {
    pub fn characteristic() -> Self {
        Self {
            kind: HeadKind::Characteristic,
            hidden: vec![128],
        }
    }

    pub fn reconstruction(m: usize) -> Self {
        Self {
            kind: HeadKind::Reconstruction { m },
            hidden: vec![256],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub input_len: usize,
    /// Feed `(value, phase)` as two channels instead of values alone.
    pub two_channel: bool,
    /// Quadrature values are multiplied by this before entering the trunk.
    #[serde(default = "default_input_scale")]
    pub input_scale: f64,
    pub width_scale: f64,
    pub dense: bool,
    pub stages: Vec<StageSpec>,
    pub head: HeadSpec,
}

fn default_input_scale() -> f64 {
    0.25
}

fn conv(name: &str, kernel: usize, channels: usize, stride: usize, relu: bool) -> StageSpec {
    StageSpec::Conv {
        name: name.into(),
        kernel,
        channels,
        stride,
        relu,
    }
}

fn block(name: &str, kernel: usize, channels: usize) -> StageSpec {
    StageSpec::Block {
        name: name.into(),
        kernel,
        channels,
        convs: 2,
    }
}

impl CnnConfig {
    /// The 17-layer trunk: stem, five two-layer blocks separated by three
    /// stride-4 linear transitions, and three stride-2 tail layers.
    pub fn table1(input_len: usize, width_scale: f64, head: HeadSpec) -> Self {
        Self {
            input_len,
            two_channel: false,
            input_scale: default_input_scale(),
            width_scale,
            dense: true,
            stages: vec![
                conv("stem", 4, 96, 1, true),
                block("block_a", 4, 96),
                conv("transition_1", 1, 48, 4, false),
                block("block_b1", 4, 64),
                block("block_b2", 4, 64),
                conv("transition_2", 1, 64, 4, false),
                block("block_c1", 4, 128),
                block("block_c2", 4, 128),
                conv("transition_3", 1, 96, 4, false),
                conv("tail_1", 4, 96, 2, true),
                conv("tail_2", 2, 128, 2, true),
                conv("tail_3", 2, 48, 2, true),
            ],
            head,
        }
    }

    /// Width 0.25 on 1024-point scans.
    pub fn desk(head: HeadSpec) -> Self {
        Self::table1(1024, 0.25, head)
    }

    /// Small trunk exercising every layer type, for double-precision
    /// gradient checks.
    pub fn tiny(head: HeadKind) -> Self {
        Self {
            input_len: 64,
            two_channel: false,
            input_scale: 1.0,
            width_scale: 1.0,
            dense: true,
            stages: vec![
                conv("stem", 3, 4, 1, true),
                block("block_a", 3, 4),
                conv("transition_1", 1, 3, 2, false),
                block("block_b", 4, 3),
                conv("transition_2", 1, 4, 4, false),
                conv("tail", 2, 5, 2, true),
            ],
            head: HeadSpec {
                kind: head,
                hidden: vec![6],
            },
        }
    }

    pub fn input_channels(&self) -> usize {
        if self.two_channel {
            2
        } else {
            1
        }
    }

    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 {
            return Err(Error::Config("input_len must be positive".into()));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Config(format!("input_scale {}", self.input_scale)));
        }
        if !(self.width_scale.is_finite() && self.width_scale > 0.0) {
            return Err(Error::Config(format!("width_scale {}", self.width_scale)));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("no trunk stages".into()));
        }
        let mut len = self.input_len;
        for stage in &self.stages {
            match stage {
                StageSpec::Conv {
                    name,
                    kernel,
                    channels,
                    stride,
                    ..
                } => {
                    if *kernel == 0 || *channels == 0 || *stride == 0 {
                        return Err(Error::Config(format!("{name}: zero kernel, channels or stride")));
                    }
                    if len % stride != 0 {
                        return Err(Error::Config(format!(
                            "{name}: stride {stride} does not divide length {len}"
                        )));
                    }
                    len /= stride;
                }
                StageSpec::Block {
                    name,
                    kernel,
                    channels,
                    convs,
                } => {
                    if *kernel == 0 || *channels == 0 || *convs == 0 {
                        return Err(Error::Config(format!("{name}: zero kernel, channels or convs")));
                    }
                }
            }
        }
        if let HeadKind::Reconstruction { m } = self.head.kind {
            if m == 0 {
                return Err(Error::Config("reconstruction head needs m >= 1".into()));
            }
        }
        if self.head.hidden.contains(&0) {
            return Err(Error::Config("zero-width hidden layer".into()));
        }
        Ok(())
    }
}
