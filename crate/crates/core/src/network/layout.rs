use serde::{Deserialize, Serialize};

use super::NetworkSpec;
use crate::error::{Error, Result};

/// Where one dense layer's parameters live in the flat weight vector.
///
/// Weights are stored row-major as a `fan_in × fan_out` block (row = input
/// neuron, column = output neuron), followed by the `fan_out` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> Option<std::ops::Range<usize>> {
        self.bias_offset.map(|b| b..b + self.fan_out)
    }
}

/// A single coordinate of the flat weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Weight {
        layer: usize,
        input: usize,
        output: usize,
    },
    Bias {
        layer: usize,
        output: usize,
    },
}

/// Bijection between flat weight vectors and per-layer matrices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightLayout {
    layers: Vec<LayerSlot>,
    total: usize,
}

impl WeightLayout {
    pub fn new(spec: &NetworkSpec) -> Self {
        let dims = spec.layer_dims();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight_offset = offset;
            offset += fan_in * fan_out;
            let bias_offset = if spec.use_bias {
                let b = offset;
                offset += fan_out;
                Some(b)
            } else {
                None
            };
            layers.push(LayerSlot {
                fan_in,
                fan_out,
                weight_offset,
                bias_offset,
            });
        }
        Self {
            layers,
            total: offset,
        }
    }

    /// Total parameter count `d`.
    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn locate(&self, index: usize) -> Result<Param> {
        for (l, slot) in self.layers.iter().enumerate() {
            if slot.weight_range().contains(&index) {
                let r = index - slot.weight_offset;
                return Ok(Param::Weight {
                    layer: l,
                    input: r / slot.fan_out,
                    output: r % slot.fan_out,
                });
            }
            if let Some(br) = slot.bias_range() {
                if br.contains(&index) {
                    return Ok(Param::Bias {
                        layer: l,
                        output: index - br.start,
                    });
                }
            }
        }
        Err(Error::contract(format!(
            "index {index} outside weight vector of length {}",
            self.total
        )))
    }

    pub fn index_of(&self, param: Param) -> Result<usize> {
        let bad = || Error::contract(format!("parameter {param:?} not in layout"));
        match param {
            Param::Weight {
                layer,
                input,
                output,
            } => {
                let s = self.layers.get(layer).ok_or_else(bad)?;
                if input >= s.fan_in || output >= s.fan_out {
                    return Err(bad());
                }
                Ok(s.weight_offset + input * s.fan_out + output)
            }
            Param::Bias { layer, output } => {
                let s = self.layers.get(layer).ok_or_else(bad)?;
                match s.bias_offset {
                    Some(b) if output < s.fan_out => Ok(b + output),
                    _ => Err(bad()),
                }
            }
        }
    }

    /// Fails unless `len` equals the parameter count.
    pub fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.total {
            return Err(Error::contract(format!(
                "{what} has length {len}, layout expects {}",
                self.total
            )));
        }
        Ok(())
    }
}
