//! Code encoders producing the `[CLS]` representation.

mod dense;
mod graph;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use dense::DenseEncoder;
pub use graph::{default_device, EncoderConfig, EncoderSize, GraphCodeEncoder};

/// Which pretrained family the encoder follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Tokens plus data-flow nodes with graph-guided attention.
    GraphCodeBert,
    /// Tokens only.
    CodeBert,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::GraphCodeBert => "graphcodebert",
            EncoderKind::CodeBert => "codebert",
        }
    }

    pub fn uses_dataflow(self) -> bool {
        self == EncoderKind::GraphCodeBert
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphcodebert" | "graphcodebert-base" | "microsoft/graphcodebert-base" => {
                Ok(EncoderKind::GraphCodeBert)
            }
            "codebert" | "codebert-base" | "microsoft/codebert-base" => Ok(EncoderKind::CodeBert),
            _ => Err(Error::InvalidArgument(format!("unknown encoder kind {s:?}"))),
        }
    }
}

/// A trainable map from inputs to fixed-width representations.
///
/// `forward_train` keeps whatever it needs so that the following
/// `apply_gradient` can backpropagate the gradient of the loss with respect
/// to its output and take one optimizer step.
pub trait Encoder<T: Scalar> {
    type Input: Sync;
    type Snapshot: Clone;

    fn hidden_size(&self) -> usize;

    /// Inference mode: no dropout, no state.
    fn embed(&self, inputs: &[&Self::Input]) -> Result<Array2<T>>;

    fn forward_train(&mut self, inputs: &[&Self::Input], seed: u64) -> Result<Array2<T>>;

    fn apply_gradient(&mut self, grad: &Array2<T>, lr: f64) -> Result<()>;

    fn snapshot(&self) -> Result<Self::Snapshot>;

    fn restore(&mut self, snapshot: &Self::Snapshot) -> Result<()>;

    /// Embeds in chunks of `batch`.
    fn embed_all(&self, inputs: &[&Self::Input], batch: usize) -> Result<Array2<T>> {
        let mut out = Array2::zeros((0, self.hidden_size()));
        for chunk in inputs.chunks(batch.max(1)) {
            let h = self.embed(chunk)?;
            out.append(ndarray::Axis(0), h.view())
                .map_err(|e| Error::Shape(e.to_string()))?;
        }
        Ok(out)
    }
}
