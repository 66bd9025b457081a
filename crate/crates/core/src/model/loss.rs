// SPDX-License-Identifier: MIT OR Apache-2.0

//! Response-token cross-entropy and perplexity.
//!
//! Loss is the mean next-token cross-entropy over response tokens, each
//! conditioned on the full prompt and preceding response. Corpus-level
//! aggregates pool token counts (token-mean, not instance-mean) and are
//! reduced in corpus order so they are independent of thread count.

use rayon::prelude::*;

use super::mask::MaskSpec;
use super::transformer::{cross_entropy, ReferenceModel};
use crate::error::{Error, Result};
use crate::trace::{Functionality, InstanceRecord, N_FUNCTIONALITIES};

/// Summed negative log-likelihood over a number of tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllSum {
    pub total: f64,
    pub tokens: usize,
}

impl NllSum {
    pub fn add(&mut self, other: NllSum) {
        self.total += other.total;
        self.tokens += other.tokens;
    }

    /// Mean loss, `None` when no tokens were pooled.
    pub fn mean(&self) -> Option<f64> {
        (self.tokens > 0).then(|| self.total / self.tokens as f64)
    }

    pub fn perplexity(&self) -> Option<f64> {
        self.mean().map(f64::exp)
    }
}

/// Summed response-token NLL of one instance.
pub fn response_nll(
    model: &ReferenceModel,
    instance: &InstanceRecord,
    mask: Option<&MaskSpec>,
) -> Result<NllSum> {
    if instance.response_tokens.is_empty() {
        return Err(Error::Input(format!(
            "instance `{}` has no response tokens",
            instance.id
        )));
    }
    if instance.prompt_tokens.is_empty() {
        return Err(Error::Input(format!(
            "instance `{}` has no prompt tokens",
            instance.id
        )));
    }
    let p = instance.prompt_tokens.len();
    let mut seq = Vec::with_capacity(p + instance.response_tokens.len());
    seq.extend_from_slice(&instance.prompt_tokens);
    seq.extend_from_slice(&instance.response_tokens);
    // position p-1+j predicts response token j; the final position predicts nothing
    seq.pop();
    let logits = model.logits_from(&seq, mask, p - 1)?;
    let total = logits
        .iter()
        .zip(&instance.response_tokens)
        .map(|(l, &t)| cross_entropy(l, t))
        .sum();
    Ok(NllSum {
        total,
        tokens: instance.response_tokens.len(),
    })
}

/// Mean response-token cross-entropy for one instance; `exp` of it is the
/// instance perplexity.
pub fn response_loss(
    model: &ReferenceModel,
    instance: &InstanceRecord,
    mask: Option<&MaskSpec>,
) -> Result<f64> {
    let nll = response_nll(model, instance, mask)?;
    Ok(nll.total / nll.tokens as f64)
}

/// Pooled response loss over a corpus, overall and per functionality.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusLoss {
    pub overall: NllSum,
    pub per_functionality: [NllSum; N_FUNCTIONALITIES],
}

impl CorpusLoss {
    pub fn mean(&self) -> Option<f64> {
        self.overall.mean()
    }

    pub fn functionality(&self, f: Functionality) -> NllSum {
        self.per_functionality[f.index()]
    }
}

/// Evaluates every instance in parallel and reduces in corpus order.
pub fn corpus_loss(
    model: &ReferenceModel,
    corpus: &[InstanceRecord],
    mask: Option<&MaskSpec>,
) -> Result<CorpusLoss> {
    if corpus.is_empty() {
        return Err(Error::Input("corpus is empty".into()));
    }
    let per_instance: Vec<NllSum> = corpus
        .par_iter()
        .map(|inst| response_nll(model, inst, mask))
        .collect::<Result<_>>()?;
    let mut out = CorpusLoss::default();
    for (inst, nll) in corpus.iter().zip(per_instance) {
        out.overall.add(nll);
        for f in inst.labels.iter() {
            out.per_functionality[f.index()].add(nll);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FfnVariant, ModelConfig};
    use crate::sparsity::IndicatorKind;
    use crate::tensor::Matrix;
    use crate::trace::LabelSet;

    fn instance(prompt: Vec<u32>, response: Vec<u32>) -> InstanceRecord {
        InstanceRecord {
            id: "t".into(),
            prompt_tokens: prompt,
            response_tokens: response,
            labels: LabelSet::single(Functionality::Math),
        }
    }

    fn uniform_model(vocab: usize) -> ReferenceModel {
        let cfg = ModelConfig::new(1, 8, 4, vocab, 2, FfnVariant::Gated, 1);
        let m = ReferenceModel::random(cfg.clone()).unwrap();
        ReferenceModel::from_parts(
            cfg,
            m.embed().clone(),
            m.layers().to_vec(),
            m.final_norm().to_vec(),
            Matrix::zeros(vocab, 8),
        )
        .unwrap()
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let m = uniform_model(13);
        let loss = response_loss(&m, &instance(vec![1, 2], vec![3, 4, 5]), None).unwrap();
        assert_eq!(loss, 13f64.ln());
    }

    #[test]
    fn empty_response_is_rejected() {
        let m = uniform_model(5);
        assert!(matches!(
            response_loss(&m, &instance(vec![1], vec![]), None),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_fraction_mask_is_bitwise_identical() {
        let m = ReferenceModel::random(ModelConfig::new(2, 8, 6, 11, 2, FfnVariant::Gated, 9)).unwrap();
        let inst = instance(vec![1, 2, 3], vec![4, 5, 6, 7]);
        let a = response_loss(&m, &inst, None).unwrap();
        let b = response_loss(&m, &inst, Some(&MaskSpec::lowest(0.0, IndicatorKind::OutputMagnitude)))
            .unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn matches_scalar_softmax_oracle() {
        let m = ReferenceModel::random(ModelConfig::new(2, 8, 6, 11, 2, FfnVariant::Vanilla, 4)).unwrap();
        let inst = instance(vec![3, 1], vec![7, 2, 9]);
        let full: Vec<u32> = vec![3, 1, 7, 2, 9];
        let out = m.forward(&full, None).unwrap();
        let mut total = 0.0f64;
        for j in 0..3 {
            let logits = &out.logits[1 + j];
            let target = full[2 + j] as usize;
            let z: f64 = logits.iter().map(|&v| (v as f64).exp()).sum();
            total += -((logits[target] as f64).exp() / z).ln();
        }
        let loss = response_loss(&m, &inst, None).unwrap();
        assert!((loss - total / 3.0).abs() < 1e-6);
    }

    #[test]
    fn corpus_loss_pools_tokens() {
        let m = ReferenceModel::random(ModelConfig::new(1, 8, 6, 11, 2, FfnVariant::Vanilla, 4)).unwrap();
        let a = instance(vec![1], vec![2]);
        let mut b = instance(vec![3, 4], vec![5, 6, 7]);
        b.labels = LabelSet::single(Functionality::Coding);
        let cl = corpus_loss(&m, &[a.clone(), b.clone()], None).unwrap();
        let na = response_nll(&m, &a, None).unwrap();
        let nb = response_nll(&m, &b, None).unwrap();
        assert_eq!(cl.overall.tokens, 4);
        assert!((cl.mean().unwrap() - (na.total + nb.total) / 4.0).abs() < 1e-12);
        assert_eq!(cl.functionality(Functionality::Coding), nb);
        assert_eq!(cl.functionality(Functionality::Writing).mean(), None);
        assert!(corpus_loss(&m, &[], None).is_err());
    }
}
