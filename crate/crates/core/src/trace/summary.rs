// SPDX-License-Identifier: MIT OR Apache-2.0

use super::instance::InstanceRecord;
use crate::error::{Error, Result};
use crate::model::ActivationRecord;

/// Mean absolute activation per `(layer, neuron)` over the prompt tokens,
/// laid out `[layer][neuron]`.
pub fn summarize_instance(record: &InstanceRecord, activations: &ActivationRecord) -> Result<Vec<f32>> {
    let l = record.prompt_tokens.len();
    if activations.n_tokens() != l {
        return Err(Error::Dimension(format!(
            "instance `{}` has {l} prompt tokens but the activation record covers {}",
            record.id,
            activations.n_tokens()
        )));
    }
    if l == 0 {
        return Err(Error::Input(format!("instance `{}` has an empty prompt", record.id)));
    }
    let (n_layers, d_ff) = (activations.n_layers(), activations.d_ff());
    let mut acc = vec![0.0f64; n_layers * d_ff];
    for t in 0..l {
        for layer in 0..n_layers {
            let row = &mut acc[layer * d_ff..(layer + 1) * d_ff];
            for (a, v) in row.iter_mut().zip(activations.get(t, layer)) {
                *a += f64::from(v.abs());
            }
        }
    }
    Ok(acc.into_iter().map(|s| (s / l as f64) as f32).collect())
}
