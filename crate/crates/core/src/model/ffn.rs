// SPDX-License-Identifier: MIT OR Apache-2.0

//! Feed-forward block and its per-neuron decomposition.
//!
//! Neuron `i` is row `i` of the input (and gate) projection together with
//! column `i` of the output projection. The block output is
//! `Σ_i a_i · W_out[:, i] + b_out`, with the bias added once.

use serde::{Deserialize, Serialize};

use super::config::{ActivationFn, FfnVariant};
use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnParams {
    /// `[d_ff × d]`
    pub w_in: Matrix,
    pub b_in: Vec<f32>,
    /// `[d_ff × d]`, gated variant only
    pub w_gate: Option<Matrix>,
    pub b_gate: Option<Vec<f32>>,
    /// `[d × d_ff]`
    pub w_out: Matrix,
    pub b_out: Vec<f32>,
    pub activation_fn: ActivationFn,
}

/// Result of one feed-forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnOutput {
    pub y: Vec<f32>,
    pub activations: Vec<f32>,
}

impl FfnParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(d: usize, d_ff: usize, variant: FfnVariant, activation_fn: ActivationFn) -> Self {
        let gated = variant == FfnVariant::Gated;
        Self {
            w_in: Matrix::zeros(d_ff, d),
            b_in: vec![0.0; d_ff],
            w_gate: gated.then(|| Matrix::zeros(d_ff, d)),
            b_gate: gated.then(|| vec![0.0; d_ff]),
            w_out: Matrix::zeros(d, d_ff),
            b_out: vec![0.0; d],
            activation_fn,
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_in.cols()
    }

    pub fn d_ff(&self) -> usize {
        self.w_in.rows()
    }

    pub fn variant(&self) -> FfnVariant {
        if self.w_gate.is_some() {
            FfnVariant::Gated
        } else {
            FfnVariant::Vanilla
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d_ff, d) = self.w_in.shape();
        let bad = |what: &str| Err(Error::Config(format!("ffn {what}")));
        if self.b_in.len() != d_ff {
            return bad("b_in length does not match d_ff");
        }
        match (&self.w_gate, &self.b_gate) {
            (Some(g), Some(bg)) => {
                if g.shape() != (d_ff, d) || bg.len() != d_ff {
                    return bad("gate projection shape mismatch");
                }
            }
            (None, None) => {}
            _ => return bad("gate weight and gate bias must be both present or both absent"),
        }
        if self.w_out.shape() != (d, d_ff) {
            return bad("w_out must be [d × d_ff]");
        }
        if self.b_out.len() != d {
            return bad("b_out length does not match d");
        }
        let finite = self.w_in.is_finite()
            && self.w_out.is_finite()
            && self.w_gate.as_ref().is_none_or(Matrix::is_finite)
            && [&self.b_in, &self.b_out]
                .into_iter()
                .chain(self.b_gate.as_ref())
                .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return bad("parameters contain non-finite values");
        }
        Ok(())
    }

    /// Intermediate activations `FFN_in(x)`.
    pub fn activations(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.d_ff()];
        self.activations_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn activations_into(&self, x: &[f32], out: &mut [f32]) {
        let sigma = self.activation_fn;
        match (&self.w_gate, &self.b_gate) {
            (Some(wg), Some(bg)) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let up = dot(self.w_in.row(i), x) + f64::from(self.b_in[i]);
                    let gate = dot(wg.row(i), x) + f64::from(bg[i]);
                    *o = (sigma.apply(gate) * up) as f32;
                }
            }
            _ => {
                for (i, o) in out.iter_mut().enumerate() {
                    let pre = dot(self.w_in.row(i), x) + f64::from(self.b_in[i]);
                    *o = sigma.apply(pre) as f32;
                }
            }
        }
    }

    /// `W_out · a + b_out`.
    pub fn project(&self, activations: &[f32]) -> Vec<f32> {
        let mut y = self.w_out.matvec(activations);
        for (v, b) in y.iter_mut().zip(&self.b_out) {
            *v = (f64::from(*v) + f64::from(*b)) as f32;
        }
        y
    }

    pub fn forward(&self, x: &[f32]) -> Result<FfnOutput> {
        let activations = self.activations(x)?;
        let y = self.project(&activations);
        Ok(FfnOutput { y, activations })
    }

    /// Per-neuron output vectors `a_i · W_out[:, i]`, bias excluded.
    pub fn neuron_contributions(&self, x: &[f32]) -> Result<Vec<Vec<f32>>> {
        let a = self.activations(x)?;
        Ok(a
            .iter()
            .enumerate()
            .map(|(i, &ai)| {
                (0..self.d_model())
                    .map(|r| (f64::from(ai) * f64::from(self.w_out.get(r, i))) as f32)
                    .collect()
            })
            .collect())
    }

    /// `‖W_out[:, i]‖₂` for every neuron.
    pub fn output_column_norms(&self) -> Vec<f32> {
        self.w_out.column_norms()
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.d_model() {
            return Err(Error::Config(format!(
                "ffn input has length {}, expected {}",
                x.len(),
                self.d_model()
            )));
        }
        Ok(())
    }
}

/// Evaluates one feed-forward block, naming `layer` in any numeric error.
pub fn ffn_forward(x: &[f32], params: &FfnParams, layer: usize) -> Result<FfnOutput> {
    let out = params.forward(x)?;
    if let Some(i) = out.activations.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer,
            detail: format!("activation of neuron {i}"),
        });
    }
    if out.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer,
            detail: "ffn output".into(),
        });
    }
    Ok(out)
}
