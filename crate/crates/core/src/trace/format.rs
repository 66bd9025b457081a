// SPDX-License-Identifier: MIT OR Apache-2.0

//! `NTRC1` activation-trace files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic            b"NTRC1"
//! version          u32   (= 1)
//! n_layers         u32
//! d_ff             u32
//! n_instances      u32
//! has_per_token    u8    (0 or 1)
//! provenance       u32 length + UTF-8 bytes
//! instance table   n_instances × { u32 id length, id bytes, u8 label bits, u32 prompt tokens }
//! summary          f32 [instance][layer][neuron]
//! per-token        optional; per instance f32 [token][layer][neuron] of |a|
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::instance::InstanceRecord;
use super::summary::summarize_instance;
use super::taxonomy::{Functionality, LabelSet, N_FUNCTIONALITIES};
use crate::error::{Error, Result};
use crate::model::ActivationRecord;

pub const TRACE_MAGIC: &[u8; 5] = b"NTRC1";
pub const TRACE_VERSION: u32 = 1;

/// Tolerance for recomputing summaries from the per-token block.
pub const PER_TOKEN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u32,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Free-form tag naming the model or checkpoint that produced the trace.
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceInstance {
    pub id: String,
    pub labels: LabelSet,
    pub n_prompt_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    header: TraceHeader,
    instances: Vec<TraceInstance>,
    summary: Vec<f32>,
    per_token: Option<Vec<f32>>,
    /// Start of each instance inside `per_token`, in floats.
    per_token_offsets: Vec<usize>,
}

impl ActivationTrace {
    pub fn new(
        header: TraceHeader,
        instances: Vec<TraceInstance>,
        summary: Vec<f32>,
        per_token: Option<Vec<f32>>,
    ) -> Result<Self> {
        let stride = header.n_layers * header.d_ff;
        let mut per_token_offsets = Vec::with_capacity(instances.len());
        let mut off = 0usize;
        for inst in &instances {
            per_token_offsets.push(off);
            off += inst.n_prompt_tokens * stride;
        }
        let trace = Self {
            header,
            instances,
            summary,
            per_token,
            per_token_offsets,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn n_layers(&self) -> usize {
        self.header.n_layers
    }

    pub fn d_ff(&self) -> usize {
        self.header.d_ff
    }

    pub fn instances(&self) -> &[TraceInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn has_per_token(&self) -> bool {
        self.per_token.is_some()
    }

    /// The whole `[instance][layer][neuron]` summary block.
    pub fn summary_block(&self) -> &[f32] {
        &self.summary
    }

    /// Mean |a| of every neuron in one layer for one instance.
    pub fn summary(&self, instance: usize, layer: usize) -> &[f32] {
        let d_ff = self.header.d_ff;
        let start = (instance * self.header.n_layers + layer) * d_ff;
        &self.summary[start..start + d_ff]
    }

    /// `|a|` at one prompt token, when the per-token block is present.
    pub fn per_token(&self, instance: usize, token: usize, layer: usize) -> Option<&[f32]> {
        let block = self.per_token.as_ref()?;
        let d_ff = self.header.d_ff;
        let start =
            self.per_token_offsets[instance] + (token * self.header.n_layers + layer) * d_ff;
        Some(&block[start..start + d_ff])
    }

    /// Per-instance label sets in trace order.
    pub fn labels(&self) -> Vec<LabelSet> {
        self.instances.iter().map(|i| i.labels).collect()
    }

    /// Instances per functionality.
    pub fn label_counts(&self) -> [usize; N_FUNCTIONALITIES] {
        let mut counts = [0; N_FUNCTIONALITIES];
        for inst in &self.instances {
            for f in inst.labels.iter() {
                counts[f.index()] += 1;
            }
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.version != TRACE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: h.version,
                supported: TRACE_VERSION,
            });
        }
        if h.n_layers == 0 || h.d_ff == 0 {
            return Err(Error::Dimension("n_layers and d_ff must be nonzero".into()));
        }
        let stride = h.n_layers * h.d_ff;
        if self.summary.len() != self.instances.len() * stride {
            return Err(Error::Dimension(format!(
                "summary holds {} values, expected {} instances × {} layers × {} neurons",
                self.summary.len(),
                self.instances.len(),
                h.n_layers,
                h.d_ff
            )));
        }
        for inst in &self.instances {
            if inst.n_prompt_tokens == 0 {
                return Err(Error::Dimension(format!("instance `{}` has no prompt tokens", inst.id)));
            }
            if inst.labels.exclusive().is_none() {
                return Err(Error::Labels {
                    id: inst.id.clone(),
                    bits: inst.labels.bits(),
                });
            }
        }
        check_values(&self.summary, "summary block")?;
        if let Some(block) = &self.per_token {
            let expected: usize = self.instances.iter().map(|i| i.n_prompt_tokens * stride).sum();
            if block.len() != expected {
                return Err(Error::Dimension(format!(
                    "per-token block holds {} values, expected {expected}",
                    block.len()
                )));
            }
            check_values(block, "per-token block")?;
            self.check_per_token_consistency()?;
        }
        Ok(())
    }

    fn check_per_token_consistency(&self) -> Result<()> {
        let (n_layers, d_ff) = (self.header.n_layers, self.header.d_ff);
        for (i, inst) in self.instances.iter().enumerate() {
            for layer in 0..n_layers {
                let mut acc = vec![0.0f64; d_ff];
                for t in 0..inst.n_prompt_tokens {
                    let row = self.per_token(i, t, layer).expect("per-token present");
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += f64::from(*v);
                    }
                }
                for (n, (a, s)) in acc.iter().zip(self.summary(i, layer)).enumerate() {
                    let mean = a / inst.n_prompt_tokens as f64;
                    let s = f64::from(*s);
                    if (mean - s).abs() > PER_TOKEN_TOLERANCE * s.abs().max(1.0) {
                        return Err(Error::InvalidValue(format!(
                            "instance `{}` layer {layer} neuron {n}: per-token mean {mean} \
                             disagrees with summary {s}",
                            inst.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(
            64 + self.summary.len() * 4 + self.per_token.as_ref().map_or(0, |p| p.len() * 4),
        );
        out.extend_from_slice(TRACE_MAGIC);
        for v in [h.version, h.n_layers as u32, h.d_ff as u32, self.instances.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(self.per_token.is_some()));
        out.extend_from_slice(&(h.provenance.len() as u32).to_le_bytes());
        out.extend_from_slice(h.provenance.as_bytes());
        for inst in &self.instances {
            out.extend_from_slice(&(inst.id.len() as u32).to_le_bytes());
            out.extend_from_slice(inst.id.as_bytes());
            out.push(inst.labels.bits());
            out.extend_from_slice(&(inst.n_prompt_tokens as u32).to_le_bytes());
        }
        for v in &self.summary {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(block) = &self.per_token {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(TRACE_MAGIC.len())?;
        if magic != TRACE_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(TRACE_MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32()?;
        if version != TRACE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: TRACE_VERSION,
            });
        }
        let n_layers = r.u32()? as usize;
        let d_ff = r.u32()? as usize;
        let n_instances = r.u32()? as usize;
        let has_per_token = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Dimension(format!("has_per_token flag is {other}"))),
        };
        let provenance = r.string()?;
        if n_layers == 0 || d_ff == 0 {
            return Err(Error::Dimension("n_layers and d_ff must be nonzero".into()));
        }
        let mut instances = Vec::with_capacity(n_instances.min(1 << 20));
        for _ in 0..n_instances {
            let id = r.string()?;
            let bits = r.u8()?;
            let labels = LabelSet::from_bits(bits).ok_or_else(|| Error::Labels {
                id: id.clone(),
                bits,
            })?;
            let n_prompt_tokens = r.u32()? as usize;
            instances.push(TraceInstance {
                id,
                labels,
                n_prompt_tokens,
            });
        }
        let stride = n_layers as u64 * d_ff as u64;
        let summary_len = n_instances as u64 * stride;
        let per_token_len: u64 = if has_per_token {
            instances.iter().map(|i| i.n_prompt_tokens as u64 * stride).sum()
        } else {
            0
        };
        let expected = r.pos as u64 + 4 * (summary_len + per_token_len);
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(Error::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(Error::Dimension(format!(
                "{} trailing bytes after the declared blocks",
                actual - expected
            )));
        }
        let summary = r.f32s(summary_len as usize)?;
        let per_token = if has_per_token {
            Some(r.f32s(per_token_len as usize)?)
        } else {
            None
        };
        Self::new(
            TraceHeader {
                version,
                n_layers,
                d_ff,
                provenance,
            },
            instances,
            summary,
            per_token,
        )
    }
}

fn check_values(values: &[f32], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} at index {i}")));
    }
    if let Some(i) = values.iter().position(|v| *v < 0.0) {
        return Err(Error::InvalidValue(format!("{what} has a negative value at index {i}")));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Dimension("string is not UTF-8".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n * 4)?;
        Ok(b
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn write_trace(trace: &ActivationTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    trace.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&trace.to_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<ActivationTrace> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ActivationTrace::from_bytes(&bytes)
}

/// Accumulates instances into a trace.
#[derive(Debug)]
pub struct TraceBuilder {
    header: TraceHeader,
    keep_per_token: bool,
    instances: Vec<TraceInstance>,
    summary: Vec<f32>,
    per_token: Vec<f32>,
}

impl TraceBuilder {
    pub fn new(n_layers: usize, d_ff: usize, provenance: impl Into<String>, keep_per_token: bool) -> Self {
        Self {
            header: TraceHeader {
                version: TRACE_VERSION,
                n_layers,
                d_ff,
                provenance: provenance.into(),
            },
            keep_per_token,
            instances: Vec::new(),
            summary: Vec::new(),
            per_token: Vec::new(),
        }
    }

    /// Adds one instance from prompt-only activations.
    pub fn push(&mut self, record: &InstanceRecord, activations: &ActivationRecord) -> Result<()> {
        if activations.n_layers() != self.header.n_layers || activations.d_ff() != self.header.d_ff {
            return Err(Error::Dimension(format!(
                "activation record is {} × {}, trace is {} × {}",
                activations.n_layers(),
                activations.d_ff(),
                self.header.n_layers,
                self.header.d_ff
            )));
        }
        let summary = summarize_instance(record, activations)?;
        if record.labels.exclusive().is_none() {
            return Err(Error::Labels {
                id: record.id.clone(),
                bits: record.labels.bits(),
            });
        }
        self.summary.extend_from_slice(&summary);
        if self.keep_per_token {
            self.per_token.extend(activations.as_slice().iter().map(|v| v.abs()));
        }
        self.instances.push(TraceInstance {
            id: record.id.clone(),
            labels: record.labels,
            n_prompt_tokens: record.prompt_tokens.len(),
        });
        Ok(())
    }

    pub fn finish(self) -> Result<ActivationTrace> {
        let per_token = self.keep_per_token.then_some(self.per_token);
        ActivationTrace::new(self.header, self.instances, self.summary, per_token)
    }
}

/// Trace instances carrying `f`.
pub fn instances_with(trace: &ActivationTrace, f: Functionality) -> usize {
    trace.instances().iter().filter(|i| i.labels.contains(f)).count()
}
