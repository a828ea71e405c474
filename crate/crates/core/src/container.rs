//! Binary container used for checkpoints and feature dumps:
//! `magic | u64 header_len | JSON header | u64 count | count x f32 (LE)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PACLAB\x00\x01";

pub fn write_container<H: Serialize>(path: &Path, header: &H, payload: &[f32]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = serde_json::to_vec(header)?;
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    w.write_all(&(payload.len() as u64).to_le_bytes()).map_err(io)?;
    let mut bytes = Vec::with_capacity(payload.len() * 4);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_container<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{} is not a paclab container", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let header_len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(io)?;
    let header: H = serde_json::from_slice(&header)?;
    r.read_exact(&mut len).map_err(io)?;
    let count = u64::from_le_bytes(len) as usize;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(io)?;
    let payload = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, payload))
}
