use crate::error::{Error, Result};
use bytemuck::{Pod, Zeroable};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const RELATION_MAGIC: &[u8; 8] = b"OLAPREL1";
const HEADER_BYTES: u64 = 16;

/// A join row: 32-bit key, 32-bit payload, packed into 8 bytes.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Pod, Zeroable)]
pub struct Tuple {
    pub key: u32,
    pub payload: u32,
}

impl Tuple {
    pub const fn new(key: u32, payload: u32) -> Self {
        Tuple { key, payload }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Relation {
    tuples: Vec<Tuple>,
}

impl Relation {
    pub fn new(tuples: Vec<Tuple>) -> Self {
        Relation { tuples }
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn tuples_mut(&mut self) -> &mut [Tuple] {
        &mut self.tuples
    }

    pub fn cardinality(&self) -> u64 {
        self.tuples.len() as u64
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tuple> {
        self.tuples.iter()
    }

    pub fn into_tuples(self) -> Vec<Tuple> {
        self.tuples
    }
}

impl From<Vec<Tuple>> for Relation {
    fn from(tuples: Vec<Tuple>) -> Self {
        Relation { tuples }
    }
}

impl FromIterator<Tuple> for Relation {
    fn from_iter<I: IntoIterator<Item = Tuple>>(iter: I) -> Self {
        Relation {
            tuples: iter.into_iter().collect(),
        }
    }
}

/// Writes `OLAPREL1`, the little-endian u64 cardinality, then each tuple as
/// little-endian key and payload.
pub fn write_relation(path: impl AsRef<Path>, rel: &Relation) -> Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    w.write_all(RELATION_MAGIC)?;
    w.write_all(&rel.cardinality().to_le_bytes())?;
    for t in rel.iter() {
        w.write_all(&t.key.to_le_bytes())?;
        w.write_all(&t.payload.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_relation(path: impl AsRef<Path>) -> Result<Relation> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut r = BufReader::with_capacity(1 << 20, file);

    if file_len < HEADER_BYTES {
        return Err(Error::Format(format!(
            "relation file has {file_len} bytes, shorter than the {HEADER_BYTES}-byte header"
        )));
    }
    let mut header = [0u8; HEADER_BYTES as usize];
    r.read_exact(&mut header)?;
    if &header[..8] != RELATION_MAGIC {
        return Err(Error::Format("bad relation magic".into()));
    }
    let cardinality = u64::from_le_bytes(header[8..].try_into().unwrap());
    let expected = cardinality
        .checked_mul(8)
        .and_then(|b| b.checked_add(HEADER_BYTES))
        .ok_or_else(|| Error::Format("cardinality overflows file size".into()))?;
    if file_len != expected {
        return Err(Error::Format(format!(
            "relation header declares {cardinality} tuples ({expected} bytes) but file has {file_len} bytes"
        )));
    }

    let mut tuples = Vec::with_capacity(cardinality as usize);
    let mut chunk = vec![0u8; 8 * 8192];
    let mut remaining = cardinality as usize;
    while remaining > 0 {
        let n = remaining.min(8192);
        let bytes = &mut chunk[..n * 8];
        r.read_exact(bytes)?;
        tuples.extend(bytes.chunks_exact(8).map(|b| Tuple {
            key: u32::from_le_bytes(b[..4].try_into().unwrap()),
            payload: u32::from_le_bytes(b[4..].try_into().unwrap()),
        }));
        remaining -= n;
    }
    Ok(Relation { tuples })
}
