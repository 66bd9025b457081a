// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference models with planted functionality-specialised neurons, and the
//! synthetic corpus that exercises them.
//!
//! Layout of a planted model:
//!
//! * Vocabulary: token `f·m + j` is the `j`-th marker token of
//!   functionality `f` (`m` markers per functionality); the remaining ids are
//!   background tokens.
//! * Residual channels `0..7` carry functionality markers and channels
//!   `7..14` the planted-neuron outputs; the rest is the free subspace.
//!   Attention and unplanted neurons neither read nor write the reserved
//!   channels, so every unplanted neuron sees the same input distribution
//!   whatever the prompt's functionality.
//! * Planted neurons of functionality `f` key on marker channel `f` and
//!   write to output channel `7 + f`, which the unembedding rows of `f`'s
//!   marker tokens read.
//! * Unplanted neurons are either bigram memories (key = one background
//!   token's embedding, value = its successor's unembedding direction) or
//!   "loud" neurons that fire strongly everywhere but have tiny output
//!   columns.
//!
//! The corpus grammar: prompts are background tokens with a few marker
//! tokens of the instance's functionality; responses alternate runs of
//! marker tokens with successor chains over background tokens.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{FfnVariant, ModelConfig};
use super::transformer::ReferenceModel;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::trace::{
    Functionality, FunctionalityTaxonomy, InstanceRecord, ManifestRow, N_FUNCTIONALITIES,
};

/// Reserved residual channels: markers then planted outputs.
pub const RESERVED_CHANNELS: usize = 2 * N_FUNCTIONALITIES;
/// Smallest free subspace a planted model accepts.
pub const MIN_FREE_CHANNELS: usize = 8;
/// Smallest background vocabulary a planted model accepts.
pub const MIN_BACKGROUND_TOKENS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantGroup {
    pub functionality: Functionality,
    /// Planted neuron indices, one list per layer.
    pub neurons: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub groups: Vec<PlantGroup>,
    pub markers_per_group: usize,
}

impl PlantSpec {
    pub const DEFAULT_MARKERS: usize = 4;

    pub fn empty() -> Self {
        Self {
            groups: Vec::new(),
            markers_per_group: Self::DEFAULT_MARKERS,
        }
    }

    /// `per_layer` planted neurons for each functionality in every layer, at
    /// seeded random disjoint positions.
    pub fn uniform(
        config: &ModelConfig,
        functionalities: &[Functionality],
        per_layer: usize,
        seed: u64,
    ) -> Result<Self> {
        let needed = per_layer * functionalities.len();
        if needed > config.d_ff {
            return Err(Error::Plant(format!(
                "{needed} planted neurons per layer exceed d_ff {}",
                config.d_ff
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x504C_414E_5453_4554);
        let mut groups: Vec<PlantGroup> = functionalities
            .iter()
            .map(|&f| PlantGroup {
                functionality: f,
                neurons: Vec::with_capacity(config.n_layers),
            })
            .collect();
        for _ in 0..config.n_layers {
            let mut idx: Vec<usize> = (0..config.d_ff).collect();
            idx.shuffle(&mut rng);
            for (g, chunk) in groups.iter_mut().zip(idx.chunks(per_layer.max(1))) {
                let mut layer: Vec<usize> = chunk.iter().copied().take(per_layer).collect();
                layer.sort_unstable();
                g.neurons.push(layer);
            }
            if per_layer == 0 {
                groups.iter_mut().for_each(|g| g.neurons.push(Vec::new()));
            }
        }
        let plant = Self {
            groups,
            markers_per_group: Self::DEFAULT_MARKERS,
        };
        plant.validate(config)?;
        Ok(plant)
    }

    pub fn is_empty(&self) -> bool {
        self.groups.iter().all(|g| g.neurons.iter().all(Vec::is_empty))
    }

    pub fn group(&self, f: Functionality) -> Option<&PlantGroup> {
        self.groups.iter().find(|g| g.functionality == f)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let mut seen_f = [false; N_FUNCTIONALITIES];
        for g in &self.groups {
            if std::mem::replace(&mut seen_f[g.functionality.index()], true) {
                return Err(Error::Plant(format!("functionality `{}` planted twice", g.functionality)));
            }
            if g.neurons.len() != config.n_layers {
                return Err(Error::Plant(format!(
                    "group `{}` lists {} layers, model has {}",
                    g.functionality,
                    g.neurons.len(),
                    config.n_layers
                )));
            }
        }
        for layer in 0..config.n_layers {
            let mut owner: Vec<Option<Functionality>> = vec![None; config.d_ff];
            let mut total = 0usize;
            for g in &self.groups {
                for &n in &g.neurons[layer] {
                    if n >= config.d_ff {
                        return Err(Error::Plant(format!(
                            "neuron {n} in layer {layer} exceeds d_ff {}",
                            config.d_ff
                        )));
                    }
                    if let Some(prev) = owner[n].replace(g.functionality) {
                        return Err(Error::Plant(format!(
                            "neuron {n} in layer {layer} is planted for both `{prev}` and `{}`",
                            g.functionality
                        )));
                    }
                    total += 1;
                }
            }
            if total > config.d_ff {
                return Err(Error::Plant(format!(
                    "layer {layer} plants {total} neurons, more than d_ff {}",
                    config.d_ff
                )));
            }
        }
        if self.is_empty() {
            return Ok(());
        }
        if self.markers_per_group == 0 {
            return Err(Error::Plant("markers_per_group must be at least 1".into()));
        }
        if config.d_model < RESERVED_CHANNELS + MIN_FREE_CHANNELS {
            return Err(Error::Plant(format!(
                "d_model {} leaves fewer than {MIN_FREE_CHANNELS} free channels",
                config.d_model
            )));
        }
        if config.vocab_size < N_FUNCTIONALITIES * self.markers_per_group + MIN_BACKGROUND_TOKENS {
            return Err(Error::Plant(format!(
                "vocab_size {} is too small for {} marker tokens per functionality",
                config.vocab_size, self.markers_per_group
            )));
        }
        Ok(())
    }
}

/// Construction constants for planted models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTuning {
    /// Marker-channel value of marker tokens, in units of `√d`.
    pub marker_strength: f64,
    /// Norm of background embeddings, in units of `√d`.
    pub embed_scale: f64,
    pub planted_gain: f64,
    pub planted_threshold: f64,
    pub planted_out: f64,
    /// Free-subspace noise on planted input rows, shared across groups.
    pub planted_noise: f64,
    pub memory_gain: f64,
    pub memory_threshold: f64,
    /// Log-normal median and spread of bigram-memory output norms.
    pub memory_out: f64,
    pub memory_out_spread: f64,
    pub loud_fraction: f64,
    pub loud_bias: f64,
    pub loud_gain: f64,
    pub loud_out: f64,
    pub attention_gain: f64,
    pub unembed_scale: f64,
    /// Unembedding weight of the planted output channel.
    pub marker_logit: f64,
}

impl Default for PlantTuning {
    fn default() -> Self {
        Self {
            marker_strength: 4.0,
            embed_scale: 1.0,
            planted_gain: 1.0,
            planted_threshold: 4.0,
            planted_out: 0.25,
            planted_noise: 0.05,
            memory_gain: 1.0,
            memory_threshold: 4.0,
            memory_out: 0.3,
            memory_out_spread: 0.5,
            loud_fraction: 0.25,
            loud_bias: 8.0,
            loud_gain: 1.0,
            loud_out: 0.02,
            attention_gain: 0.3,
            unembed_scale: 1.2,
            marker_logit: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronRole {
    Planted(Functionality),
    /// Bigram memory keyed on a background token.
    Memory(u32),
    Loud,
}

/// Everything needed to generate a corpus for a planted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantLayout {
    pub plant: PlantSpec,
    pub vocab_size: usize,
    pub markers_per_group: usize,
    /// `successor[b - first_background]` is the token following background
    /// token `b` in response chains.
    pub successor: Vec<u32>,
    pub roles: Vec<Vec<NeuronRole>>,
    pub tuning: PlantTuning,
}

impl PlantLayout {
    pub fn first_background(&self) -> u32 {
        (N_FUNCTIONALITIES * self.markers_per_group) as u32
    }

    pub fn n_background(&self) -> usize {
        self.vocab_size - self.first_background() as usize
    }

    pub fn marker_token(&self, f: Functionality, j: usize) -> u32 {
        (f.index() * self.markers_per_group + j) as u32
    }

    pub fn is_marker_of(&self, token: u32, f: Functionality) -> bool {
        token / self.markers_per_group as u32 == f.index() as u32 && token < self.first_background()
    }

    pub fn successor_of(&self, background: u32) -> u32 {
        self.successor[(background - self.first_background()) as usize]
    }
}

#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub model: ReferenceModel,
    /// `None` for an empty plant.
    pub layout: Option<PlantLayout>,
}

pub fn build_planted_model(config: ModelConfig, plant: &PlantSpec, seed: u64) -> Result<PlantedModel> {
    build_planted_model_with(config, plant, seed, &PlantTuning::default())
}

/// Builds a deterministic reference model; an empty plant yields the plain
/// seeded random model.
pub fn build_planted_model_with(
    mut config: ModelConfig,
    plant: &PlantSpec,
    seed: u64,
    tuning: &PlantTuning,
) -> Result<PlantedModel> {
    config.seed = seed;
    config.validate()?;
    plant.validate(&config)?;
    let base = ReferenceModel::random(config.clone())?;
    if plant.is_empty() {
        return Ok(PlantedModel {
            model: base,
            layout: None,
        });
    }

    let (d, d_ff, v) = (config.d_model, config.d_ff, config.vocab_size);
    let m = plant.markers_per_group;
    let first_bg = N_FUNCTIONALITIES * m;
    let n_bg = v - first_bg;
    let sqrt_d = (d as f64).sqrt();
    let free = RESERVED_CHANNELS..d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9D2C_5680_1B87_3A4F);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");

    let unit_free = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let mut v = vec![0.0f64; d];
        for c in free.clone() {
            v[c] = gauss.sample(rng);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| (x / n) as f32).collect()
    };

    // embeddings
    let marker_bases: Vec<Vec<f32>> = (0..m).map(|_| unit_free(&mut rng)).collect();
    let mut embed = Matrix::zeros(v, d);
    for f in 0..N_FUNCTIONALITIES {
        for (j, basis) in marker_bases.iter().enumerate() {
            let row = embed.row_mut(f * m + j);
            for (x, b) in row.iter_mut().zip(basis) {
                *x = (0.5 * tuning.embed_scale * sqrt_d * f64::from(*b)) as f32;
            }
            row[f] = (tuning.marker_strength * sqrt_d) as f32;
        }
    }
    let mut bg_dirs = Vec::with_capacity(n_bg);
    for b in 0..n_bg {
        let dir = unit_free(&mut rng);
        for (x, u) in embed.row_mut(first_bg + b).iter_mut().zip(&dir) {
            *x = (tuning.embed_scale * sqrt_d * f64::from(*u)) as f32;
        }
        bg_dirs.push(dir);
    }

    // unembedding
    let unembed_bases: Vec<Vec<f32>> = (0..m).map(|_| unit_free(&mut rng)).collect();
    let mut unembed = Matrix::zeros(v, d);
    for f in 0..N_FUNCTIONALITIES {
        for (j, basis) in unembed_bases.iter().enumerate() {
            let row = unembed.row_mut(f * m + j);
            for (x, b) in row.iter_mut().zip(basis) {
                *x = (0.3 * tuning.unembed_scale * f64::from(*b)) as f32;
            }
            row[N_FUNCTIONALITIES + f] = tuning.marker_logit as f32;
        }
    }
    let mut out_dirs = Vec::with_capacity(n_bg);
    for b in 0..n_bg {
        let dir = unit_free(&mut rng);
        for (x, u) in unembed.row_mut(first_bg + b).iter_mut().zip(&dir) {
            *x = (tuning.unembed_scale * f64::from(*u)) as f32;
        }
        out_dirs.push(dir);
    }

    let mut successor: Vec<u32> = (first_bg as u32..v as u32).collect();
    successor.shuffle(&mut rng);

    let mut layers = base.layers().to_vec();
    let mut roles = Vec::with_capacity(config.n_layers);
    let gated = config.ffn_variant == FfnVariant::Gated;
    let inv_sqrt_d = 1.0 / sqrt_d;

    // one noise row per within-group rank, shared by all groups
    let max_group = plant
        .groups
        .iter()
        .flat_map(|g| g.neurons.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let planted_noise: Vec<Vec<f32>> = (0..max_group).map(|_| unit_free(&mut rng)).collect();

    for (li, layer) in layers.iter_mut().enumerate() {
        // attention ignores reserved channels
        for w in [&mut layer.attn.wq, &mut layer.attn.wk, &mut layer.attn.wv] {
            for r in 0..d {
                for c in 0..RESERVED_CHANNELS {
                    w.set(r, c, 0.0);
                }
            }
        }
        for r in 0..d {
            for c in 0..d {
                let val = if r < RESERVED_CHANNELS {
                    0.0
                } else {
                    f64::from(layer.attn.wo.get(r, c)) * tuning.attention_gain / 0.5
                };
                layer.attn.wo.set(r, c, val as f32);
            }
        }

        let mut role: Vec<Option<NeuronRole>> = vec![None; d_ff];
        for g in &plant.groups {
            for &n in &g.neurons[li] {
                role[n] = Some(NeuronRole::Planted(g.functionality));
            }
        }
        let mut unplanted: Vec<usize> = (0..d_ff).filter(|&n| role[n].is_none()).collect();
        unplanted.shuffle(&mut rng);
        let n_loud = ((tuning.loud_fraction * d_ff as f64).round() as usize).min(unplanted.len());
        for &n in &unplanted[..n_loud] {
            role[n] = Some(NeuronRole::Loud);
        }
        let mut bg_order: Vec<u32> = (first_bg as u32..v as u32).collect();
        bg_order.shuffle(&mut rng);
        for (k, &n) in unplanted[n_loud..].iter().enumerate() {
            role[n] = Some(NeuronRole::Memory(bg_order[k % n_bg]));
        }
        let role: Vec<NeuronRole> = role.into_iter().map(|r| r.expect("every neuron assigned")).collect();

        let ffn = &mut layer.ffn;
        ffn.b_out.iter_mut().for_each(|b| *b = 0.0);
        let mut rank_in_group = [0usize; N_FUNCTIONALITIES];
        for (n, r) in role.iter().enumerate() {
            // key direction, key gain, threshold, output column
            let (key, gain, threshold, out): (Vec<f32>, f64, f64, Vec<f32>) = match *r {
                NeuronRole::Planted(f) => {
                    let rank = rank_in_group[f.index()];
                    rank_in_group[f.index()] += 1;
                    let mut key: Vec<f32> = planted_noise[rank]
                        .iter()
                        .map(|x| (f64::from(*x) * tuning.planted_noise) as f32)
                        .collect();
                    key[f.index()] = 1.0;
                    let mut out = vec![0.0f32; d];
                    out[N_FUNCTIONALITIES + f.index()] = tuning.planted_out as f32;
                    (key, tuning.planted_gain, tuning.planted_threshold, out)
                }
                NeuronRole::Memory(tok) => {
                    let b = (tok as usize) - first_bg;
                    let succ = (successor[b] as usize) - first_bg;
                    let jitter = (0.3 * gauss.sample(&mut rng)).exp();
                    let scale = tuning.memory_out
                        * (tuning.memory_out_spread * gauss.sample(&mut rng)).exp();
                    let out = out_dirs[succ].iter().map(|x| (f64::from(*x) * scale) as f32).collect();
                    (bg_dirs[b].clone(), tuning.memory_gain * jitter, tuning.memory_threshold * jitter, out)
                }
                NeuronRole::Loud => {
                    let key = unit_free(&mut rng);
                    let out_dir = unit_free(&mut rng);
                    let scale = tuning.loud_out * rng.random_range(0.5..1.5);
                    let out = out_dir.iter().map(|x| (f64::from(*x) * scale) as f32).collect();
                    (key, tuning.loud_gain, -tuning.loud_bias, out)
                }
            };
            let key_row: Vec<f32> = key.iter().map(|x| (f64::from(*x) * gain) as f32).collect();
            if gated {
                let (wg, bg) = (
                    ffn.w_gate.as_mut().expect("gated"),
                    ffn.b_gate.as_mut().expect("gated"),
                );
                wg.row_mut(n).copy_from_slice(&key_row);
                bg[n] = -threshold as f32;
                match r {
                    NeuronRole::Loud => {
                        ffn.w_in.row_mut(n).iter_mut().for_each(|x| *x = 0.0);
                        ffn.b_in[n] = 1.0;
                    }
                    _ => {
                        for (x, k) in ffn.w_in.row_mut(n).iter_mut().zip(&key) {
                            *x = (f64::from(*k) * inv_sqrt_d) as f32;
                        }
                        ffn.b_in[n] = 0.0;
                    }
                }
            } else {
                ffn.w_in.row_mut(n).copy_from_slice(&key_row);
                ffn.b_in[n] = -threshold as f32;
            }
            for (row, o) in out.iter().enumerate() {
                ffn.w_out.set(row, n, *o);
            }
        }
        roles.push(role);
    }

    let model = ReferenceModel::from_parts(config, embed, layers, vec![1.0; d], unembed)?;
    Ok(PlantedModel {
        model,
        layout: Some(PlantLayout {
            plant: plant.clone(),
            vocab_size: v,
            markers_per_group: m,
            successor,
            roles,
            tuning: tuning.clone(),
        }),
    })
}

/// Lengths and mixing of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusShape {
    pub prompt_len: (usize, usize),
    pub markers_in_prompt: (usize, usize),
    pub response_len: usize,
    pub marker_run: (usize, usize),
    pub chain_run: (usize, usize),
}

impl Default for CorpusShape {
    fn default() -> Self {
        Self {
            prompt_len: (12, 16),
            markers_in_prompt: (2, 4),
            response_len: 12,
            marker_run: (2, 3),
            chain_run: (2, 4),
        }
    }
}

/// `per_functionality` instances for each of the seven functionalities.
pub fn planted_corpus(layout: &PlantLayout, per_functionality: usize, seed: u64) -> Vec<InstanceRecord> {
    planted_corpus_with(layout, per_functionality, seed, &CorpusShape::default())
}

pub fn planted_corpus_with(
    layout: &PlantLayout,
    per_functionality: usize,
    seed: u64,
    shape: &CorpusShape,
) -> Vec<InstanceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x434F_5250_5553_0001);
    let first_bg = layout.first_background();
    let v = layout.vocab_size as u32;
    let m = layout.markers_per_group;
    let mut out = Vec::with_capacity(per_functionality * N_FUNCTIONALITIES);
    for f in Functionality::ALL {
        for i in 0..per_functionality {
            let plen = rng.random_range(shape.prompt_len.0..=shape.prompt_len.1);
            let mut prompt: Vec<u32> = (0..plen).map(|_| rng.random_range(first_bg..v)).collect();
            let n_markers = rng
                .random_range(shape.markers_in_prompt.0..=shape.markers_in_prompt.1)
                .min(plen);
            for pos in rand::seq::index::sample(&mut rng, plen, n_markers) {
                prompt[pos] = layout.marker_token(f, rng.random_range(0..m));
            }
            let mut response = Vec::with_capacity(shape.response_len);
            let mut marker_turn = true;
            while response.len() < shape.response_len {
                if marker_turn {
                    let run = rng.random_range(shape.marker_run.0..=shape.marker_run.1);
                    for _ in 0..run {
                        response.push(layout.marker_token(f, rng.random_range(0..m)));
                    }
                } else {
                    let run = rng.random_range(shape.chain_run.0..=shape.chain_run.1);
                    let mut tok = rng.random_range(first_bg..v);
                    for _ in 0..run {
                        response.push(tok);
                        tok = layout.successor_of(tok);
                    }
                }
                marker_turn = !marker_turn;
            }
            response.truncate(shape.response_len);
            out.push(InstanceRecord::new(format!("{}-{i:04}", f.name()), prompt, response, f));
        }
    }
    out
}

/// Manifest rows for a synthetic corpus, with whitespace-separated token ids
/// as text and each functionality's canonical raw label.
pub fn corpus_manifest_rows(corpus: &[InstanceRecord]) -> Vec<ManifestRow> {
    let ids = |t: &[u32]| t.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
    corpus
        .iter()
        .map(|r| ManifestRow {
            id: r.id.clone(),
            prompt: ids(&r.prompt_tokens),
            response: ids(&r.response_tokens),
            labels: r
                .labels
                .iter()
                .map(|f| FunctionalityTaxonomy::canonical_label(f).to_string())
                .collect(),
        })
        .collect()
}
