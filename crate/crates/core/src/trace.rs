//! Activation traces and the SGKT interchange format.
//!
//! Layout (all integers little-endian, all reals `f32` little-endian):
//!
//! ```text
//! 0..4    magic "SGKT"
//! 4..6    version (u16) = 1
//! 6..8    flags (u16): bit0 hidden present, bit1 label present, bit2 tokenization present
//! 8..12   layer count (u32)
//! per layer:
//!         layer_index, T, H, d (u32 each; d = 0 when the layer has no hidden matrix)
//!         attention  H*T*T  in [head][row][col] order
//!         signal     T
//!         hidden     T*d    row-major, only when d > 0
//! label       u8 (flag bit1)
//! tokenization u32 count, then per token u32 byte length + UTF-8 bytes (flag bit2)
//! ```
//!
//! `model_id` and `prompt_id` are not part of the binary payload; they travel
//! in the JSON [`Manifest`] that accompanies a batch of files.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGKT";
pub const VERSION: u16 = 1;
pub const FILE_HEADER_LEN: usize = 12;
pub const LAYER_HEADER_LEN: usize = 16;

const FLAG_HIDDEN: u16 = 1 << 0;
const FLAG_LABEL: u16 = 1 << 1;
const FLAG_TOKENIZATION: u16 = 1 << 2;
const KNOWN_FLAGS: u16 = FLAG_HIDDEN | FLAG_LABEL | FLAG_TOKENIZATION;

/// Tolerance on per-head attention row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Row-major `T x d` matrix of token representations.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden {
    pub dim: usize,
    pub data: Vec<f32>,
}

/// One layer of captured activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub layer_index: u32,
    pub tokens: usize,
    pub heads: usize,
    /// Post-softmax attention, `[head][row][col]`.
    pub attention: Vec<f32>,
    /// Per-token scalar signal (residual-stream norm by default).
    pub signal: Vec<f32>,
    pub hidden: Option<Hidden>,
}

impl LayerRecord {
    /// Attention of head `h` as a row-major `T x T` slice.
    pub fn head(&self, h: usize) -> &[f32] {
        let n = self.tokens * self.tokens;
        &self.attention[h * n..(h + 1) * n]
    }

    pub fn attention_at(&self, h: usize, row: usize, col: usize) -> f32 {
        self.attention[(h * self.tokens + row) * self.tokens + col]
    }

    /// Shape and finiteness checks shared by every consumer; row-stochasticity
    /// is checked separately by [`LayerRecord::validate`].
    pub(crate) fn check_shape(&self) -> Result<()> {
        let l = self.layer_index;
        if self.heads == 0 {
            return Err(Error::Validation(format!("layer {l}: zero heads")));
        }
        if self.attention.len() != self.heads * self.tokens * self.tokens {
            return Err(Error::Validation(format!(
                "layer {l}: attention has {} entries, expected H*T*T = {}",
                self.attention.len(),
                self.heads * self.tokens * self.tokens
            )));
        }
        if self.signal.len() != self.tokens {
            return Err(Error::Validation(format!(
                "layer {l}: signal has {} entries, expected T = {}",
                self.signal.len(),
                self.tokens
            )));
        }
        if let Some(hidden) = &self.hidden {
            if hidden.dim == 0 || hidden.data.len() != self.tokens * hidden.dim {
                return Err(Error::Validation(format!(
                    "layer {l}: hidden matrix has {} entries, expected T*d = {}",
                    hidden.data.len(),
                    self.tokens * hidden.dim
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        let l = self.layer_index;
        let t = self.tokens;
        for h in 0..self.heads {
            let head = self.head(h);
            for row in 0..t {
                let mut sum = 0.0f64;
                for (col, &v) in head[row * t..(row + 1) * t].iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Validation(format!(
                            "layer {l}, head {h}, row {row}, col {col}: non-finite attention {v}"
                        )));
                    }
                    if v < 0.0 {
                        return Err(Error::Validation(format!(
                            "layer {l}, head {h}, row {row}, col {col}: negative attention {v}"
                        )));
                    }
                    sum += f64::from(v);
                }
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::Validation(format!(
                        "layer {l}, head {h}, row {row}: attention row sums to {sum:.6}, expected 1"
                    )));
                }
            }
        }
        if let Some(i) = self.signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "layer {l}: non-finite signal at token {i}"
            )));
        }
        if let Some(hidden) = &self.hidden {
            if let Some(i) = hidden.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "layer {l}: non-finite hidden entry at flat index {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer activations for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub model_id: String,
    pub prompt_id: String,
    pub layers: Vec<LayerRecord>,
    /// Ground truth, `true` = supported (Y = 1).
    pub label: Option<bool>,
    pub tokenization: Option<Vec<String>>,
}

impl ActivationTrace {
    pub fn tokens(&self) -> usize {
        self.layers.first().map_or(0, |l| l.tokens)
    }

    pub fn layer(&self, index: u32) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.layer_index == index)
    }

    pub fn layer_indices(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.layer_index).collect()
    }

    pub fn with_ids(mut self, model_id: impl Into<String>, prompt_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self.prompt_id = prompt_id.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return Err(Error::Validation("trace has no layers".into()));
        };
        let t = first.tokens;
        if t < 2 {
            return Err(Error::Validation(format!(
                "trace has T = {t} tokens, need at least 2"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for layer in &self.layers {
            if layer.tokens != t {
                return Err(Error::Validation(format!(
                    "layer {} has T = {}, first layer has T = {t}",
                    layer.layer_index, layer.tokens
                )));
            }
            if !seen.insert(layer.layer_index) {
                return Err(Error::Validation(format!(
                    "duplicate layer index {}",
                    layer.layer_index
                )));
            }
            layer.validate()?;
        }
        Ok(())
    }

    /// Exact SGKT byte length of this trace.
    pub fn encoded_len(&self) -> usize {
        let mut n = FILE_HEADER_LEN;
        for l in &self.layers {
            let d = l.hidden.as_ref().map_or(0, |h| h.dim);
            n += LAYER_HEADER_LEN + 4 * (l.heads * l.tokens * l.tokens + l.tokens + l.tokens * d);
        }
        if self.label.is_some() {
            n += 1;
        }
        if let Some(tokens) = &self.tokenization {
            n += 4 + tokens.iter().map(|s| 4 + s.len()).sum::<usize>();
        }
        n
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} = {v} exceeds u32")))
}

/// Serializes a validated trace; returns the number of bytes written.
pub fn write_trace<W: Write>(trace: &ActivationTrace, mut sink: W) -> Result<usize> {
    trace.validate()?;
    let mut buf = Vec::with_capacity(trace.encoded_len());
    let mut flags = 0u16;
    if trace.layers.iter().any(|l| l.hidden.is_some()) {
        flags |= FLAG_HIDDEN;
    }
    if trace.label.is_some() {
        flags |= FLAG_LABEL;
    }
    if trace.tokenization.is_some() {
        flags |= FLAG_TOKENIZATION;
    }
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&to_u32(trace.layers.len(), "layer count")?.to_le_bytes());
    for l in &trace.layers {
        let d = l.hidden.as_ref().map_or(0, |h| h.dim);
        for v in [
            l.layer_index,
            to_u32(l.tokens, "T")?,
            to_u32(l.heads, "H")?,
            to_u32(d, "d")?,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in l.attention.iter().chain(&l.signal) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(h) = &l.hidden {
            for v in &h.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if let Some(label) = trace.label {
        buf.push(u8::from(label));
    }
    if let Some(tokens) = &trace.tokenization {
        buf.extend_from_slice(&to_u32(tokens.len(), "token count")?.to_le_bytes());
        for tok in tokens {
            buf.extend_from_slice(&to_u32(tok.len(), "token byte length")?.to_le_bytes());
            buf.extend_from_slice(tok.as_bytes());
        }
    }
    debug_assert_eq!(buf.len(), trace.encoded_len());
    sink.write_all(&buf)?;
    Ok(buf.len())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated {
            expected: usize::MAX,
            actual: self.bytes.len(),
        })?;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("payload of {n} floats overflows")))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses and validates an SGKT payload held in memory.
pub fn decode_trace(bytes: &[u8]) -> Result<ActivationTrace> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"SGKT\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let flags = cur.u16()?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#06x}")));
    }
    let n_layers = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(4096));
    for _ in 0..n_layers {
        let layer_index = cur.u32()?;
        let tokens = cur.u32()? as usize;
        let heads = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        if dim > 0 && flags & FLAG_HIDDEN == 0 {
            return Err(Error::Format(format!(
                "layer {layer_index} declares hidden dim {dim} but the hidden flag is clear"
            )));
        }
        let n_attn = heads
            .checked_mul(tokens)
            .and_then(|v| v.checked_mul(tokens))
            .ok_or_else(|| Error::Format("attention size overflows".into()))?;
        let attention = cur.f32s(n_attn)?;
        let signal = cur.f32s(tokens)?;
        let hidden = if dim > 0 {
            let n = tokens
                .checked_mul(dim)
                .ok_or_else(|| Error::Format("hidden size overflows".into()))?;
            Some(Hidden {
                dim,
                data: cur.f32s(n)?,
            })
        } else {
            None
        };
        layers.push(LayerRecord {
            layer_index,
            tokens,
            heads,
            attention,
            signal,
            hidden,
        });
    }
    let label = if flags & FLAG_LABEL != 0 {
        match cur.take(1)?[0] {
            0 => Some(false),
            1 => Some(true),
            other => return Err(Error::Validation(format!("label byte {other} is not 0 or 1"))),
        }
    } else {
        None
    };
    let tokenization = if flags & FLAG_TOKENIZATION != 0 {
        let count = cur.u32()? as usize;
        let mut tokens = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let len = cur.u32()? as usize;
            let raw = cur.take(len)?;
            let tok = std::str::from_utf8(raw)
                .map_err(|e| Error::Format(format!("token {i} is not UTF-8: {e}")))?;
            tokens.push(tok.to_owned());
        }
        Some(tokens)
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - cur.pos
        )));
    }
    let trace = ActivationTrace {
        model_id: String::new(),
        prompt_id: String::new(),
        layers,
        label,
        tokenization,
    };
    trace.validate()?;
    Ok(trace)
}

/// Reads a complete SGKT stream. The returned trace has empty ids; attach
/// them from the manifest with [`ActivationTrace::with_ids`].
pub fn read_trace<R: Read>(mut source: R) -> Result<ActivationTrace> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_trace(&bytes)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<ActivationTrace> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(decode_trace(&bytes)?.with_ids("unknown", stem))
}

pub fn write_trace_file(trace: &ActivationTrace, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let tmp = path.with_extension("sgkt.tmp");
    let n = {
        let mut file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        let n = write_trace(trace, &mut file)?;
        file.flush()?;
        n
    };
    std::fs::rename(&tmp, path)?;
    Ok(n)
}

/// One file in a batch manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub prompt_id: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctx_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Retrieval batch for file-backed retriever fixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
}

impl ManifestEntry {
    pub fn new(prompt_id: impl Into<String>, file: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            file: file.into(),
            label: None,
            question_id: None,
            ctx_id: None,
            context: None,
            batch: None,
        }
    }
}

/// JSON sidecar naming the model and the files of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_id: String,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut ids = std::collections::BTreeSet::new();
        for e in &manifest.files {
            if !ids.insert(e.prompt_id.as_str()) {
                return Err(Error::Validation(format!(
                    "manifest lists prompt id '{}' twice",
                    e.prompt_id
                )));
            }
            if matches!(e.label, Some(l) if l > 1) {
                return Err(Error::Validation(format!(
                    "manifest entry '{}' has label outside {{0, 1}}",
                    e.prompt_id
                )));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads every trace listed, resolving files relative to `base_dir` and
    /// attaching ids (and the manifest label when the file carries none).
    pub fn load_traces(&self, base_dir: &Path) -> Result<Vec<ActivationTrace>> {
        self.files
            .iter()
            .map(|e| self.load_entry(base_dir, e))
            .collect()
    }

    pub fn load_entry(&self, base_dir: &Path, entry: &ManifestEntry) -> Result<ActivationTrace> {
        let path: PathBuf = base_dir.join(&entry.file);
        let mut trace = read_trace(std::io::BufReader::new(std::fs::File::open(&path)?))?
            .with_ids(self.model_id.clone(), entry.prompt_id.clone());
        if trace.label.is_none() {
            trace.label = entry.label.map(|l| l == 1);
        }
        Ok(trace)
    }
}

/// Writes traces as `<prompt_id>.sgkt` plus `manifest.json` into `dir`.
pub fn write_batch(dir: &Path, model_id: &str, traces: &[ActivationTrace]) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(traces.len());
    for t in traces {
        let file = format!("{}.sgkt", t.prompt_id);
        write_trace_file(t, dir.join(&file))?;
        let mut entry = ManifestEntry::new(t.prompt_id.clone(), file);
        entry.label = t.label.map(u8::from);
        files.push(entry);
    }
    let manifest = Manifest {
        model_id: model_id.to_owned(),
        files,
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
