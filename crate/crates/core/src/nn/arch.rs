use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;
pub const INPUT_SHAPE: (usize, usize, usize) = (3, 64, 64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchId {
    #[serde(rename = "tinyA")]
    TinyA,
    #[serde(rename = "tinyB")]
    TinyB,
    #[serde(rename = "tinyC")]
    TinyC,
}

impl ArchId {
    pub const ALL: [ArchId; 3] = [ArchId::TinyA, ArchId::TinyB, ArchId::TinyC];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchId::TinyA => "tinyA",
            ArchId::TinyB => "tinyB",
            ArchId::TinyC => "tinyC",
        }
    }

    pub fn descriptor(self) -> ArchDescriptor {
        use LayerSpec::*;
        let layers = match self {
            // Two 3x3 convolutions and a dense head.
            ArchId::TinyA => vec![
                Conv { in_ch: 3, out_ch: 8, kernel: 3, stride: 2 },
                Relu,
                Conv { in_ch: 8, out_ch: 16, kernel: 3, stride: 1 },
                Relu,
                MaxPool { size: 8 },
                Dense { inputs: 16 * 4 * 4, outputs: NUM_CLASSES },
            ],
            // Three strided 5x5 convolutions and global average pooling.
            ArchId::TinyB => vec![
                Conv { in_ch: 3, out_ch: 8, kernel: 5, stride: 2 },
                Relu,
                MaxPool { size: 2 },
                Conv { in_ch: 8, out_ch: 16, kernel: 5, stride: 1 },
                Relu,
                MaxPool { size: 2 },
                Conv { in_ch: 16, out_ch: 32, kernel: 5, stride: 1 },
                Relu,
                GlobalAvgPool,
                Dense { inputs: 32, outputs: NUM_CLASSES },
            ],
            // One 7x7 convolution and a two-layer dense head.
            ArchId::TinyC => vec![
                Conv { in_ch: 3, out_ch: 8, kernel: 7, stride: 2 },
                Relu,
                MaxPool { size: 4 },
                Dense { inputs: 8 * 8 * 8, outputs: 32 },
                Relu,
                Dense { inputs: 32, outputs: NUM_CLASSES },
            ],
        };
        ArchDescriptor { id: self, layers }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}` (expected tinyA, tinyB or tinyC)")))
    }
}

/// One layer. Convolutions use "same" zero padding of `kernel / 2`; pooling
/// uses non-overlapping `size x size` windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize },
    Relu,
    MaxPool { size: usize },
    GlobalAvgPool,
    Dense { inputs: usize, outputs: usize },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv { in_ch, out_ch, kernel, .. } => out_ch * in_ch * kernel * kernel + out_ch,
            LayerSpec::Dense { inputs, outputs } => outputs * inputs + outputs,
            _ => 0,
        }
    }

    /// Output shape for an input of shape `(c, h, w)`.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            LayerSpec::Conv { in_ch, out_ch, kernel, stride } => {
                if c != in_ch || kernel % 2 == 0 || stride == 0 {
                    return bad(format!("conv expects {in_ch} channels with odd kernel, got {c}"));
                }
                let pad = kernel / 2;
                Ok((out_ch, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1))
            }
            LayerSpec::Relu => Ok((c, h, w)),
            LayerSpec::MaxPool { size } => {
                if size == 0 || h % size != 0 || w % size != 0 {
                    return bad(format!("pool {size} does not tile {h}x{w}"));
                }
                Ok((c, h / size, w / size))
            }
            LayerSpec::GlobalAvgPool => Ok((c, 1, 1)),
            LayerSpec::Dense { inputs, outputs } => {
                if c * h * w != inputs {
                    return bad(format!("dense expects {inputs} inputs, got {}", c * h * w));
                }
                Ok((outputs, 1, 1))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub id: ArchId,
    pub layers: Vec<LayerSpec>,
}

impl ArchDescriptor {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Shapes of every activation, input first.
    pub fn shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes = vec![INPUT_SHAPE];
        for layer in &self.layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        if *shapes.last().unwrap() != (NUM_CLASSES, 1, 1) {
            return Err(Error::Config(format!("{} does not end in {NUM_CLASSES} outputs", self.id)));
        }
        Ok(shapes)
    }
}
