//! Backbone configurations and the cost accounting used to build default cost tables.

use serde::{Deserialize, Serialize};

use super::{Choice, OpCost};
use crate::error::{Error, Result};

/// Fixed macro-architecture that the searchable blocks plug into.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub name: String,
    pub bytes_per_element: f64,
    /// Multiplier on activation traffic. Each conv layer reads its input and
    /// writes its output; real kernels touch those tensors more than once.
    pub activation_traffic: f64,
    pub input_channels: u32,
    pub stages: Vec<BackboneStage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneStage {
    pub channels: u32,
    /// Output feature-map side length.
    pub resolution: u32,
    pub blocks: usize,
}

/// Shape of one searchable block position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockShape {
    pub resolution: u32,
    pub in_channels: u32,
    pub out_channels: u32,
}

impl Backbone {
    pub fn from_json(s: &str) -> Result<Self> {
        let b: Backbone = serde_json::from_str(s)?;
        if b.stages.is_empty() || b.bytes_per_element <= 0.0 || b.activation_traffic <= 0.0 {
            return Err(Error::InvalidSpace(format!("backbone {} is degenerate", b.name)));
        }
        Ok(b)
    }

    pub(crate) fn mbv2_default() -> Self {
        Self::from_json(include_str!("../../data/mbv2_backbone.json")).expect("shipped backbone")
    }

    pub(crate) fn fbnet_default() -> Self {
        Self::from_json(include_str!("../../data/fbnet_backbone.json")).expect("shipped backbone")
    }

    pub(crate) fn cell_default() -> Self {
        Self::from_json(include_str!("../../data/cell_backbone.json")).expect("shipped backbone")
    }

    /// Per-block shapes in network order. Channel count changes at the first
    /// block of each stage.
    pub fn block_shapes(&self) -> Vec<BlockShape> {
        let mut shapes = Vec::new();
        let mut c_in = self.input_channels;
        for stage in &self.stages {
            for _ in 0..stage.blocks {
                shapes.push(BlockShape {
                    resolution: stage.resolution,
                    in_channels: c_in,
                    out_channels: stage.channels,
                });
                c_in = stage.channels;
            }
        }
        shapes
    }

    /// Inverted-residual block: 1x1 expand, kxk depthwise, 1x1 project.
    ///
    /// FLOPs = 2*H*W*e*C_in*(C_in/g + k^2 + C_out/g) and
    /// bytes = bpe*(params + traffic*activations) with activations counted as
    /// the input and output of each of the three layers.
    pub fn inverted_residual(&self, shape: BlockShape, kernel: u32, expansion: u32, groups: u32) -> OpCost {
        let hw = f64::from(shape.resolution).powi(2);
        let c_in = f64::from(shape.in_channels);
        let c_out = f64::from(shape.out_channels);
        let mid = f64::from(expansion) * c_in;
        let k2 = f64::from(kernel).powi(2);
        let g = f64::from(groups.max(1));

        let flops = 2.0 * hw * mid * (c_in / g + k2 + c_out / g);
        let params = c_in * mid / g + mid * k2 + mid * c_out / g;
        let activations = hw * (c_in + 4.0 * mid + c_out);
        OpCost {
            flops,
            bytes: self.bytes_per_element * (params + self.activation_traffic * activations),
        }
    }

    /// Identity copy of a block's input. Used for positions that carry a
    /// skip candidate.
    pub fn identity(&self, shape: BlockShape) -> OpCost {
        let elems = f64::from(shape.resolution).powi(2) * f64::from(shape.in_channels);
        OpCost {
            flops: elems,
            bytes: self.bytes_per_element * self.activation_traffic * 2.0 * elems,
        }
    }

    /// Cost of one cell-edge operator, summed over every stacked cell.
    pub fn cell_op(&self, op: &str) -> Result<OpCost> {
        let mut total = OpCost { flops: 0.0, bytes: 0.0 };
        for stage in &self.stages {
            let hw = f64::from(stage.resolution).powi(2);
            let c = f64::from(stage.channels);
            let elems = hw * c;
            let io = self.activation_traffic * 2.0 * elems;
            let (flops, elements_moved) = match op {
                "none" => (elems, elems),
                "skip_connect" => (elems, io),
                "nor_conv_1x1" => (2.0 * hw * c * c, c * c + io),
                "nor_conv_3x3" => (2.0 * hw * c * c * 9.0, 9.0 * c * c + io),
                "avg_pool_3x3" => (9.0 * elems, io),
                other => return Err(Error::InvalidSpace(format!("unknown cell operator {other}"))),
            };
            let n = stage.blocks as f64;
            total.flops += n * flops;
            total.bytes += n * self.bytes_per_element * elements_moved;
        }
        Ok(total)
    }

    /// Builds a `[position][choice]` cost table for layer-wise spaces.
    pub(crate) fn layerwise_table(&self, choices: &[Choice]) -> Result<Vec<Vec<OpCost>>> {
        self.block_shapes()
            .into_iter()
            .map(|shape| {
                choices
                    .iter()
                    .map(|c| match (c.kernel, c.expansion) {
                        (Some(k), Some(e)) => Ok(self.inverted_residual(shape, k, e, c.groups.unwrap_or(1))),
                        _ if c.is_skip() => Ok(self.identity(shape)),
                        _ => Err(Error::InvalidSpace(format!("choice {} has no kernel/expansion", c.label))),
                    })
                    .collect()
            })
            .collect()
    }
}
