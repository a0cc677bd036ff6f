use serde::{Deserialize, Serialize};

use super::EncoderError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub gcn_out: usize,
    /// (input, hidden, output) widths of the projection head; input must equal `gcn_out`.
    pub proj_dims: (usize, usize, usize),
    pub dropout: f64,
    pub num_intents: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_dim: crate::graph::FEATURE_DIM,
            hidden: 512,
            heads: 4,
            gcn_out: 64,
            proj_dims: (64, 128, 32),
            dropout: 0.1,
            num_intents: 6,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::Config(m));
        if self.in_dim == 0 || self.hidden == 0 || self.heads == 0 || self.gcn_out == 0 {
            return bad("all layer widths must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!("hidden width {} is not divisible by {} heads", self.hidden, self.heads));
        }
        let (pi, ph, po) = self.proj_dims;
        if pi != self.gcn_out {
            return bad(format!("projection input {pi} must equal GCN output {}", self.gcn_out));
        }
        if ph == 0 || po == 0 {
            return bad("projection widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.num_intents == 0 {
            return bad("num_intents must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Width of the pooled graph embedding (mean ⊕ max).
    pub fn embedding_dim(&self) -> usize {
        2 * self.gcn_out
    }
}
