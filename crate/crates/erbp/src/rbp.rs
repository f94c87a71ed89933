//! Fixed-weight comparison baselines: differentiator-rectifier (DR) units and
//! their early/mid fusion into feed-forward classifiers.
//!
//! A DR unit computes |x - y| for one pair of corresponding input neurons.
//! Its weights are constants; the optimiser never touches them.

use crate::autodiff::{NodeId, Tape};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Bank of DR units over all token pairs of an `n`-token, `m`-dimensional input.
#[derive(Debug, Clone)]
pub struct DrBank {
    pub n: usize,
    pub m: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl DrBank {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n < 2 || m < 1 {
            return Err(Error::Config(format!(
                "DR bank needs n >= 2 tokens and m >= 1 dimensions, got n={n} m={m}"
            )));
        }
        let pairs = (0..n)
            .flat_map(|i1| ((i1 + 1)..n).map(move |i2| (i1, i2)))
            .collect();
        Ok(DrBank { n, m, pairs })
    }

    pub fn input_width(&self) -> usize {
        self.n * self.m
    }

    pub fn output_width(&self) -> usize {
        self.pairs.len() * self.m
    }

    /// |x[i1·m+j] - x[i2·m+j]| for every pair and dimension. Gradients flow
    /// into `x`; there are no trainable weights here by construction.
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let got = tape.value(x).len();
        if got != self.input_width() {
            return Err(Error::dims("DR bank input", &[got], &[self.input_width()]));
        }
        let mut parts = Vec::with_capacity(self.pairs.len());
        for &(i1, i2) in &self.pairs {
            let a = tape.slice(x, i1 * self.m, self.m)?;
            let b = tape.slice(x, i2 * self.m, self.m)?;
            let d = tape.sub(a, b)?;
            parts.push(tape.abs(d));
        }
        tape.concat(&parts)
    }
}

/// Where DR outputs join the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Concatenated with the input neurons.
    Early,
    /// Concatenated with the first hidden layer's activations.
    Mid,
}

/// Widths of a fused model, for wiring the trainable layers around the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionWiring {
    pub mode: FusionMode,
    /// Width of the vector entering the first trainable layer.
    pub first_layer_input: usize,
    /// Width of the vector entering the layer after the first.
    pub second_layer_input: usize,
}

/// Computes the concatenation widths for a DR bank fused into a network whose
/// first trainable hidden layer has `base_hidden` units.
pub fn fuse(mode: FusionMode, base_hidden: usize, bank: &DrBank) -> FusionWiring {
    match mode {
        FusionMode::Early => FusionWiring {
            mode,
            first_layer_input: bank.input_width() + bank.output_width(),
            second_layer_input: base_hidden,
        },
        FusionMode::Mid => FusionWiring {
            mode,
            first_layer_input: bank.input_width(),
            second_layer_input: base_hidden + bank.output_width(),
        },
    }
}
