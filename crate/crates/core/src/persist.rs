//! Binary snapshot container for [`ArchiveState`].
//!
//! Layout: 8-byte magic, u64 LE header length, JSON header, state JSON,
//! then every tensor as row-major f32 LE. The header carries a sha256 of
//! everything after it, so truncation and bit flips are caught on load.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{ArchiveState, EngineError};
use crate::genome::{GenomeId, Lineage, Matrix, ModelGenome};

const MAGIC: &[u8; 8] = b"ACDCSNP1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GenomeEntry {
    id: GenomeId,
    generation_born: u64,
    lineage: Option<Lineage>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    checksum: String,
    state_len: u64,
    data_len: u64,
    base: GenomeEntry,
    genomes: Vec<GenomeEntry>,
}

fn corrupt(msg: impl Into<String>) -> EngineError {
    EngineError::CorruptSnapshot(msg.into())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_genome(g: &ModelGenome, data: &mut Vec<u8>) -> GenomeEntry {
    let tensors = g
        .tensors
        .iter()
        .map(|(name, m)| {
            let offset = data.len() as u64;
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    data.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
                }
            }
            TensorEntry {
                name: name.clone(),
                rows: m.nrows(),
                cols: m.ncols(),
                offset,
            }
        })
        .collect();
    GenomeEntry {
        id: g.id,
        generation_born: g.generation_born,
        lineage: g.lineage.clone(),
        tensors,
    }
}

fn read_genome(e: &GenomeEntry, data: &[u8]) -> Result<ModelGenome, EngineError> {
    let mut tensors = BTreeMap::new();
    for t in &e.tensors {
        let len = t
            .rows
            .checked_mul(t.cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt("tensor shape overflows"))?;
        let start = usize::try_from(t.offset).map_err(|_| corrupt("tensor offset overflows"))?;
        let bytes = start
            .checked_add(len)
            .and_then(|end| data.get(start..end))
            .ok_or_else(|| corrupt(format!("tensor {}/{} out of bounds", e.id, t.name)))?;
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.insert(t.name.clone(), Matrix::from_row_slice(t.rows, t.cols, &values));
    }
    let mut g = ModelGenome::new(e.id, tensors);
    g.generation_born = e.generation_born;
    g.lineage = e.lineage.clone();
    Ok(g)
}

/// Serializes a state. Output is a pure function of the state.
pub fn encode(state: &ArchiveState) -> Vec<u8> {
    let state_json = serde_json::to_vec(state).expect("state serializes");
    let mut data = Vec::new();
    let base = write_genome(&state.base, &mut data);
    let genomes = state.genomes.values().map(|g| write_genome(g, &mut data)).collect();
    let mut hasher = Sha256::new();
    hasher.update(&state_json);
    hasher.update(&data);
    let header = Header {
        version: VERSION,
        checksum: hex(&hasher.finalize()),
        state_len: state_json.len() as u64,
        data_len: data.len() as u64,
        base,
        genomes,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header_json.len() + state_json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&state_json);
    out.extend_from_slice(&data);
    out
}

pub fn decode(bytes: &[u8]) -> Result<ArchiveState, EngineError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic bytes"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.version != VERSION {
        return Err(corrupt(format!("unsupported version {}", header.version)));
    }
    let body = &bytes[header_end..];
    if (body.len() as u64) != header.state_len.saturating_add(header.data_len) {
        return Err(corrupt(format!(
            "body is {} bytes, header declares {}",
            body.len(),
            header.state_len.saturating_add(header.data_len)
        )));
    }
    if hex(&Sha256::digest(body)) != header.checksum {
        return Err(corrupt("checksum mismatch"));
    }
    let (state_json, data) = body.split_at(header.state_len as usize);
    let mut state: ArchiveState =
        serde_json::from_slice(state_json).map_err(|e| corrupt(format!("state: {e}")))?;
    state.base = read_genome(&header.base, data)?;
    for e in &header.genomes {
        let g = read_genome(e, data)?;
        if state.genomes.insert(g.id, g).is_some() {
            return Err(corrupt(format!("duplicate genome {}", e.id)));
        }
    }
    Ok(state)
}

/// Writes atomically: a temporary sibling file is renamed over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    let io = |e: std::io::Error| EngineError::Io(format!("{}: {e}", path.display()));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(tmp, path).map_err(io)
}

pub fn save(state: &ArchiveState, path: &Path) -> Result<(), EngineError> {
    write_atomic(path, &encode(state))
}

pub fn load(path: &Path) -> Result<ArchiveState, EngineError> {
    let bytes = fs::read(path).map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
