//! `PPEM` embedding banks: per-example, per-layer, per-word `f32` vectors.
//!
//! Word vectors are stored after subtoken averaging, so nothing here needs
//! a tokenizer. All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PPEM"
//! 4       1     version (1)
//! 5       1     flags: bit 0 = layer 0 (embedding output) present,
//!                      bit 1 = question block present; other bits zero
//! 6       2     reserved, zero
//! 8       4     u32 L, transformer layers (layer 0 not counted)
//! 12      4     u32 d, vector dimension
//! 16      4     u32 N, example count
//! 20      4     u32 T, model tag length in bytes
//! 24      T     model tag, UTF-8
//! ..      4     u32 M, metadata length in bytes
//! ..      M     metadata, UTF-8 JSON object of string values
//! index, N entries in payload order:
//!         4     u32 I, example id length in bytes
//!         I     example id, UTF-8
//!         4     u32 Q, question words (0 unless bit 1 is set)
//!         4     u32 P, paragraph words
//!         8     u64 absolute byte offset of this example's payload
//! payload, per example, immediately after the index and contiguous:
//!         S * (Q + P) * d f32 values, S = L + (1 if layer 0 present)
//!         ordered [layer][word][dim]; question words precede paragraph
//!         words; layer 0 (when present) comes first
//! ```
//!
//! The file ends exactly at the end of the last payload.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Cursor, Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

pub use crate::corpus::Side;
use crate::corpus::Span;

pub const MAGIC: &[u8; 4] = b"PPEM";
pub const VERSION: u8 = 1;
pub const FLAG_LAYER0: u8 = 0b01;
pub const FLAG_QUESTION_BLOCK: u8 = 0b10;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("not a PPEM file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported PPEM version {found} (expected {VERSION})")]
    VersionMismatch { found: u8 },
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("corrupt bank: {0}")]
    Corrupt(String),
    #[error("non-finite value in example {0}")]
    NonFinite(String),
    #[error("duplicate example id {0}")]
    DuplicateExample(String),
    #[error("unknown example id {0}")]
    UnknownExample(String),
    #[error("layer {layer} out of range {min}..={max}")]
    LayerOutOfRange {
        layer: usize,
        min: usize,
        max: usize,
    },
    #[error("word index {index} out of range for {side} block of {len} words")]
    IndexOutOfRange {
        side: Side,
        index: usize,
        len: usize,
    },
    #[error("empty span")]
    EmptySpan,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub id: String,
    pub question_len: usize,
    pub paragraph_len: usize,
    /// `[stored_layer][question words ++ paragraph words][dim]`
    pub data: Vec<f32>,
}

impl BankEntry {
    pub fn word_count(&self) -> usize {
        self.question_len + self.paragraph_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    pub model_tag: String,
    num_layers: usize,
    dim: usize,
    has_layer0: bool,
    has_question_block: bool,
    pub metadata: BTreeMap<String, String>,
    entries: Vec<BankEntry>,
    index: HashMap<String, usize>,
}

impl EmbeddingBank {
    pub fn new(
        model_tag: impl Into<String>,
        num_layers: usize,
        dim: usize,
        has_layer0: bool,
        has_question_block: bool,
    ) -> Self {
        Self {
            model_tag: model_tag.into(),
            num_layers,
            dim,
            has_layer0,
            has_question_block,
            metadata: BTreeMap::new(),
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Transformer layers, not counting layer 0.
    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_layer0(&self) -> bool {
        self.has_layer0
    }

    pub fn has_question_block(&self) -> bool {
        self.has_question_block
    }

    pub fn stored_layers(&self) -> usize {
        self.num_layers + usize::from(self.has_layer0)
    }

    /// Valid layer indices: `1..=L`, or `0..=L` with layer 0 present.
    pub fn layers(&self) -> RangeInclusive<usize> {
        let first = if self.has_layer0 { 0 } else { 1 };
        first..=self.num_layers
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn entry(&self, id: &str) -> Result<&BankEntry, BankError> {
        self.index
            .get(id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| BankError::UnknownExample(id.to_string()))
    }

    /// Appends an example. `data` must hold `stored_layers * words * d`
    /// finite values.
    pub fn push(
        &mut self,
        id: impl Into<String>,
        question_len: usize,
        paragraph_len: usize,
        data: Vec<f32>,
    ) -> Result<(), BankError> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(BankError::DuplicateExample(id));
        }
        if question_len > 0 && !self.has_question_block {
            return Err(BankError::DimMismatch(format!(
                "example {id} has {question_len} question words but the bank has no question block"
            )));
        }
        let expected = self.stored_layers() * (question_len + paragraph_len) * self.dim;
        if data.len() != expected {
            return Err(BankError::DimMismatch(format!(
                "example {id}: expected {expected} floats, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(BankError::NonFinite(id));
        }
        self.index.insert(id.clone(), self.entries.len());
        self.entries.push(BankEntry {
            id,
            question_len,
            paragraph_len,
            data,
        });
        Ok(())
    }

    fn stored_layer(&self, layer: usize) -> Result<usize, BankError> {
        let range = self.layers();
        if !range.contains(&layer) {
            return Err(BankError::LayerOutOfRange {
                layer,
                min: *range.start(),
                max: *range.end(),
            });
        }
        Ok(if self.has_layer0 { layer } else { layer - 1 })
    }

    fn offset(
        &self,
        entry: &BankEntry,
        layer: usize,
        side: Side,
        index: usize,
    ) -> Result<usize, BankError> {
        let stored = self.stored_layer(layer)?;
        let (len, base) = match side {
            Side::Question => (entry.question_len, 0),
            Side::Paragraph => (entry.paragraph_len, entry.question_len),
        };
        if index >= len {
            return Err(BankError::IndexOutOfRange { side, index, len });
        }
        Ok((stored * entry.word_count() + base + index) * self.dim)
    }

    /// The stored vector, unmodified.
    pub fn word_vector(
        &self,
        id: &str,
        layer: usize,
        side: Side,
        index: usize,
    ) -> Result<&[f32], BankError> {
        let entry = self.entry(id)?;
        let off = self.offset(entry, layer, side, index)?;
        Ok(&entry.data[off..off + self.dim])
    }

    pub fn word_vector_mut(
        &mut self,
        id: &str,
        layer: usize,
        side: Side,
        index: usize,
    ) -> Result<&mut [f32], BankError> {
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| BankError::UnknownExample(id.to_string()))?;
        let off = self.offset(&self.entries[i], layer, side, index)?;
        let dim = self.dim;
        Ok(&mut self.entries[i].data[off..off + dim])
    }

    /// Mean of the word vectors in `span`, accumulated in `f64`. A
    /// single-word span yields the stored vector exactly.
    pub fn span_vector(
        &self,
        id: &str,
        layer: usize,
        side: Side,
        span: Span,
    ) -> Result<Vec<f64>, BankError> {
        if span.is_empty() {
            return Err(BankError::EmptySpan);
        }
        let mut acc = vec![0.0f64; self.dim];
        for i in span.indices() {
            for (a, &v) in acc.iter_mut().zip(self.word_vector(id, layer, side, i)?) {
                *a += f64::from(v);
            }
        }
        if span.len() > 1 {
            let n = span.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Ok(acc)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), BankError> {
        let mut flags = 0u8;
        if self.has_layer0 {
            flags |= FLAG_LAYER0;
        }
        if self.has_question_block {
            flags |= FLAG_QUESTION_BLOCK;
        }
        let metadata = serde_json::to_string(&self.metadata).expect("string map serializes");

        let mut header = Vec::new();
        header.write_all(MAGIC)?;
        header.write_u8(VERSION)?;
        header.write_u8(flags)?;
        header.write_u16::<LittleEndian>(0)?;
        header.write_u32::<LittleEndian>(to_u32(self.num_layers, "layer count")?)?;
        header.write_u32::<LittleEndian>(to_u32(self.dim, "dim")?)?;
        header.write_u32::<LittleEndian>(to_u32(self.entries.len(), "example count")?)?;
        write_str(&mut header, &self.model_tag)?;
        write_str(&mut header, &metadata)?;

        let index_len: usize = self.entries.iter().map(|e| 4 + e.id.len() + 16).sum();
        let mut offset = (header.len() + index_len) as u64;
        for e in &self.entries {
            write_str(&mut header, &e.id)?;
            header.write_u32::<LittleEndian>(to_u32(e.question_len, "question length")?)?;
            header.write_u32::<LittleEndian>(to_u32(e.paragraph_len, "paragraph length")?)?;
            header.write_u64::<LittleEndian>(offset)?;
            offset += 4 * e.data.len() as u64;
        }
        w.write_all(&header)?;
        for e in &self.entries {
            let mut payload = Vec::with_capacity(4 * e.data.len());
            for v in &e.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&payload)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BankError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(BankError::BadMagic);
        }
        let version = r.read_u8().map_err(|_| truncated("version"))?;
        if version != VERSION {
            return Err(BankError::VersionMismatch { found: version });
        }
        let flags = r.read_u8().map_err(|_| truncated("flags"))?;
        if flags & !(FLAG_LAYER0 | FLAG_QUESTION_BLOCK) != 0 {
            return Err(BankError::Corrupt(format!(
                "unknown flag bits {flags:#04x}"
            )));
        }
        let _reserved = r
            .read_u16::<LittleEndian>()
            .map_err(|_| truncated("header"))?;
        let num_layers = read_u32(&mut r, "layer count")?;
        let dim = read_u32(&mut r, "dim")?;
        let count = read_u32(&mut r, "example count")?;
        let model_tag = read_str(&mut r, "model tag")?;
        let metadata_text = read_str(&mut r, "metadata")?;
        let metadata: BTreeMap<String, String> = serde_json::from_str(&metadata_text)
            .map_err(|e| BankError::Corrupt(format!("metadata: {e}")))?;

        let mut bank = EmbeddingBank::new(
            model_tag,
            num_layers,
            dim,
            flags & FLAG_LAYER0 != 0,
            flags & FLAG_QUESTION_BLOCK != 0,
        );
        bank.metadata = metadata;

        let mut index = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = read_str(&mut r, "example id")?;
            let q = read_u32(&mut r, "question length")?;
            let p = read_u32(&mut r, "paragraph length")?;
            let off = r
                .read_u64::<LittleEndian>()
                .map_err(|_| truncated("index"))?;
            index.push((id, q, p, off));
        }
        let mut expected_offset = r.position();
        for (id, q, p, off) in index {
            if off != expected_offset {
                return Err(BankError::Corrupt(format!(
                    "example {id}: payload offset {off}, expected {expected_offset}"
                )));
            }
            let floats = bank
                .stored_layers()
                .checked_mul(q + p)
                .and_then(|n| n.checked_mul(dim))
                .ok_or_else(|| {
                    BankError::DimMismatch(format!("example {id}: payload size overflows"))
                })?;
            let byte_len = floats as u64 * 4;
            let start = off as usize;
            if (bytes.len() as u64) < off + byte_len {
                return Err(truncated(&format!("payload of example {id}")));
            }
            let data: Vec<f32> = bytes[start..start + floats * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            bank.push(id, q, p, data)?;
            expected_offset = off + byte_len;
        }
        if expected_offset != bytes.len() as u64 {
            return Err(BankError::Corrupt(format!(
                "{} trailing bytes after last payload",
                bytes.len() as u64 - expected_offset
            )));
        }
        Ok(bank)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, BankError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub fn write_bank(bank: &EmbeddingBank, path: impl AsRef<Path>) -> Result<(), BankError> {
    let file = fs::File::create(path)?;
    bank.write_to(std::io::BufWriter::new(file))
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<EmbeddingBank, BankError> {
    EmbeddingBank::from_bytes(&fs::read(path)?)
}

fn truncated(what: &str) -> BankError {
    BankError::TruncatedFile(format!("ended inside {what}"))
}

fn to_u32(v: usize, what: &str) -> Result<u32, BankError> {
    u32::try_from(v).map_err(|_| BankError::DimMismatch(format!("{what} {v} exceeds u32")))
}

fn read_exact(r: &mut Cursor<&[u8]>, buf: &mut [u8], what: &str) -> Result<(), BankError> {
    r.read_exact(buf).map_err(|_| truncated(what))
}

fn read_u32(r: &mut Cursor<&[u8]>, what: &str) -> Result<usize, BankError> {
    r.read_u32::<LittleEndian>()
        .map(|v| v as usize)
        .map_err(|_| truncated(what))
}

fn read_str(r: &mut Cursor<&[u8]>, what: &str) -> Result<String, BankError> {
    let len = read_u32(r, what)?;
    let remaining = r.get_ref().len() as u64 - r.position();
    if len as u64 > remaining {
        return Err(truncated(what));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| BankError::Corrupt(format!("{what} is not UTF-8")))
}

fn write_str(w: &mut Vec<u8>, s: &str) -> Result<(), BankError> {
    w.write_u32::<LittleEndian>(to_u32(s.len(), "string length")?)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}
