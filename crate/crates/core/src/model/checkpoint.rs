// SPDX-License-Identifier: MIT OR Apache-2.0

//! `NAMD1` model checkpoints.
//!
//! Little-endian: magic `b"NAMD1"`, `u32` format version, the serialized
//! [`ModelConfig`] (`u32` n_layers, d_model, d_ff, vocab_size, n_heads, `u8`
//! ffn variant, `u8` activation, `u64` seed), then every tensor as row-major
//! `f32` in declaration order: embedding; per layer attention norm, wq, wk,
//! wv, wo, ffn norm, w_in, b_in, [w_gate, b_gate], w_out, b_out; final norm;
//! unembedding.

use std::path::Path;

use super::config::{ActivationFn, FfnVariant, ModelConfig};
use super::ffn::FfnParams;
use super::transformer::{AttentionParams, LayerParams, ReferenceModel};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MODEL_MAGIC: &[u8; 5] = b"NAMD1";
pub const MODEL_VERSION: u32 = 1;

impl ReferenceModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.config();
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        for v in [c.n_layers, c.d_model, c.d_ff, c.vocab_size, c.n_heads] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(match c.ffn_variant {
            FfnVariant::Vanilla => 0,
            FfnVariant::Gated => 1,
        });
        out.push(match c.activation {
            ActivationFn::Relu => 0,
            ActivationFn::Gelu => 1,
            ActivationFn::Silu => 2,
        });
        out.extend_from_slice(&c.seed.to_le_bytes());

        let mut put = |v: &[f32]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        put(self.embed().as_slice());
        for l in self.layers() {
            put(&l.attn_norm);
            put(l.attn.wq.as_slice());
            put(l.attn.wk.as_slice());
            put(l.attn.wv.as_slice());
            put(l.attn.wo.as_slice());
            put(&l.ffn_norm);
            put(l.ffn.w_in.as_slice());
            put(&l.ffn.b_in);
            if let (Some(g), Some(bg)) = (&l.ffn.w_gate, &l.ffn.b_gate) {
                put(g.as_slice());
                put(bg);
            }
            put(l.ffn.w_out.as_slice());
            put(&l.ffn.b_out);
        }
        put(self.final_norm());
        put(self.unembed().as_slice());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(5)?;
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(MODEL_MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: MODEL_VERSION,
            });
        }
        let n_layers = r.u32()? as usize;
        let d_model = r.u32()? as usize;
        let d_ff = r.u32()? as usize;
        let vocab_size = r.u32()? as usize;
        let n_heads = r.u32()? as usize;
        let ffn_variant = match r.u8()? {
            0 => FfnVariant::Vanilla,
            1 => FfnVariant::Gated,
            v => return Err(Error::Config(format!("unknown ffn variant code {v}"))),
        };
        let activation = match r.u8()? {
            0 => ActivationFn::Relu,
            1 => ActivationFn::Gelu,
            2 => ActivationFn::Silu,
            v => return Err(Error::Config(format!("unknown activation code {v}"))),
        };
        let seed = r.u64()?;
        let config = ModelConfig {
            n_layers,
            d_model,
            d_ff,
            vocab_size,
            n_heads,
            ffn_variant,
            activation,
            seed,
        };
        config.validate()?;

        let gated = ffn_variant == FfnVariant::Gated;
        let (d, v) = (d_model, vocab_size);
        let per_layer = 2 * d + 4 * d * d + d_ff * d + d_ff + d * d_ff + d
            + if gated { d_ff * d + d_ff } else { 0 };
        let expected = r.pos as u64 + 4 * (2 * v * d + d + n_layers * per_layer) as u64;
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len() as u64,
            });
        }
        if (bytes.len() as u64) > expected {
            return Err(Error::Dimension(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() as u64 - expected
            )));
        }

        let embed = r.matrix(v, d)?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let attn_norm = r.vec(d)?;
            let attn = AttentionParams {
                wq: r.matrix(d, d)?,
                wk: r.matrix(d, d)?,
                wv: r.matrix(d, d)?,
                wo: r.matrix(d, d)?,
            };
            let ffn_norm = r.vec(d)?;
            let w_in = r.matrix(d_ff, d)?;
            let b_in = r.vec(d_ff)?;
            let (w_gate, b_gate) = if gated {
                (Some(r.matrix(d_ff, d)?), Some(r.vec(d_ff)?))
            } else {
                (None, None)
            };
            let ffn = FfnParams {
                w_in,
                b_in,
                w_gate,
                b_gate,
                w_out: r.matrix(d, d_ff)?,
                b_out: r.vec(d)?,
                activation_fn: activation,
            };
            layers.push(LayerParams {
                attn_norm,
                attn,
                ffn_norm,
                ffn,
            });
        }
        let final_norm = r.vec(d)?;
        let unembed = r.matrix(v, d)?;
        for n in [&final_norm]
            .into_iter()
            .chain(layers.iter().flat_map(|l| [&l.attn_norm, &l.ffn_norm]))
        {
            if n.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("norm weights".into()));
            }
        }
        ReferenceModel::from_parts(config, embed, layers, final_norm, unembed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn vec(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let data = self.vec(rows * cols)?;
        Ok(Matrix::from_vec(rows, cols, data).expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_variants() {
        for variant in [FfnVariant::Vanilla, FfnVariant::Gated] {
            let m = ReferenceModel::random(ModelConfig::new(2, 8, 5, 9, 2, variant, 3)).unwrap();
            let bytes = m.to_bytes();
            let back = ReferenceModel::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back.output_column_norms(1), m.output_column_norms(1));
        }
    }

    #[test]
    fn header_errors_are_distinct() {
        let m = ReferenceModel::random(ModelConfig::new(1, 4, 3, 5, 2, FfnVariant::Gated, 0)).unwrap();
        let bytes = m.to_bytes();
        let mut bad = bytes.clone();
        bad[4] = b'2';
        assert!(matches!(ReferenceModel::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[5] = 2;
        assert!(matches!(ReferenceModel::from_bytes(&bad), Err(Error::UnsupportedVersion { .. })));
        assert!(matches!(
            ReferenceModel::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }
}
