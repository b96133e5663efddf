use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MEMB";
pub const EMBEDDING_VERSION: u32 = 1;

/// Sentence vectors keyed by sentence id, stored as 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    encoder: String,
    d: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingFile {
    pub fn new(encoder: impl Into<String>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("embedding width must be positive"));
        }
        Ok(Self { encoder: encoder.into(), d, ids: Vec::new(), data: Vec::new(), index: HashMap::new() })
    }

    pub fn encoder(&self) -> &str {
        &self.encoder
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn push(&mut self, id: impl Into<String>, row: &[f32]) -> Result<()> {
        let id = id.into();
        if row.len() != self.d {
            return Err(Error::shape("embedding row", format!("{} has width {}, expected {}", id, row.len(), self.d)));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding row"));
        }
        if self.index.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Promotes a 64-bit vector to storage precision.
    pub fn push_f64(&mut self, id: impl Into<String>, row: &[f64]) -> Result<()> {
        let r: Vec<f32> = row.iter().map(|&v| v as f32).collect();
        self.push(id, &r)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| &self.data[i * self.d..(i + 1) * self.d])
    }

    pub fn get_f64(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id).map(|r| r.iter().map(|&v| f64::from(v)).collect())
    }

    /// Every id in `wanted` that has no row, in input order.
    pub fn missing<'a, I: IntoIterator<Item = &'a str>>(&self, wanted: I) -> Vec<String> {
        wanted.into_iter().filter(|id| !self.index.contains_key(*id)).map(str::to_string).collect()
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&u32::try_from(self.d).map_err(|_| Error::invalid("width too large"))?.to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        write_str(w, &self.encoder)?;
        for (i, id) in self.ids.iter().enumerate() {
            write_str(w, id)?;
            for v in &self.data[i * self.d..(i + 1) * self.d] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("embedding file too short".into()))?;
        if &magic != EMBEDDING_MAGIC {
            return Err(Error::Format(format!("bad embedding magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != EMBEDDING_VERSION {
            return Err(Error::Format(format!("unsupported embedding version {version}")));
        }
        let d = read_u32(r)? as usize;
        let mut count = [0u8; 8];
        r.read_exact(&mut count).map_err(truncated)?;
        let count = u64::from_le_bytes(count);
        let encoder = read_str(r)?;
        let mut out = Self::new(encoder, d).map_err(|_| Error::Format("zero embedding width".into()))?;
        let mut row = vec![0f32; d];
        let mut bytes = vec![0u8; 4 * d];
        for _ in 0..count {
            let id = read_str(r)?;
            r.read_exact(&mut bytes).map_err(truncated)?;
            for (v, b) in row.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
            out.push(id, &row).map_err(|e| Error::Format(e.to_string()))?;
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after the last embedding row".into()));
        }
        Ok(out)
    }
}

fn truncated(_: std::io::Error) -> Error {
    Error::Format("embedding file truncated".into())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::invalid("string too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Format(format!("string length {len} is implausible")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|e| Error::Format(e.to_string()))
}
