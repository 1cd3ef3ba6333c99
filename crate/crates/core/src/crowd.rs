//! `.crowd` descriptor files.
//!
//! 20-byte header: magic `CRWD`, version (u8), dtype (u8, 1 = f32 LE),
//! stage code (u8), one reserved byte, dim (u32 LE), count (u32 LE), four
//! reserved bytes. Then `count` records of `id_len (u16 LE)`, UTF-8 id,
//! `dim` f32 LE values.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::aggregation::{Descriptor, Stage};
use crate::error::{CrowError, Result};

pub const MAGIC: &[u8; 4] = b"CRWD";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 20;

/// Writes descriptors that share one dim and one stage.
pub fn write_descriptors<W: Write>(descriptors: &[Descriptor], mut out: W) -> Result<()> {
    let dim = descriptors.first().map_or(0, Descriptor::dim);
    let stage = descriptors.first().map_or(Stage::Final, |d| d.stage);
    for d in descriptors {
        if d.dim() != dim {
            return Err(CrowError::Dimension {
                axis: "descriptor dim",
                expected: dim,
                actual: d.dim(),
            });
        }
        if d.stage != stage {
            return Err(CrowError::Precondition(format!(
                "mixed stages in one descriptor file ({stage:?} and {:?})",
                d.stage
            )));
        }
    }
    let dim32 = u32::try_from(dim).map_err(|_| CrowError::Data("dim exceeds u32".into()))?;
    let count32 = u32::try_from(descriptors.len())
        .map_err(|_| CrowError::Data("count exceeds u32".into()))?;

    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4] = VERSION;
    header[5] = DTYPE_F32;
    header[6] = stage.code();
    header[8..12].copy_from_slice(&dim32.to_le_bytes());
    header[12..16].copy_from_slice(&count32.to_le_bytes());
    out.write_all(&header)?;

    let mut rec = Vec::with_capacity(2 + 64 + dim * 4);
    for d in descriptors {
        let id_len = u16::try_from(d.id.len()).map_err(|_| {
            CrowError::Data(format!(
                "id longer than 65535 bytes: {}...",
                d.id.chars().take(32).collect::<String>()
            ))
        })?;
        rec.clear();
        rec.extend_from_slice(&id_len.to_le_bytes());
        rec.extend_from_slice(d.id.as_bytes());
        for v in &d.values {
            rec.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.write_all(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_descriptors<R: Read>(mut input: R) -> Result<Vec<Descriptor>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(CrowError::Format(
            "file shorter than the 20-byte header".into(),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(CrowError::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != VERSION {
        return Err(CrowError::Format(format!(
            "unsupported version {}",
            bytes[4]
        )));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(CrowError::Format(format!(
            "unsupported dtype code {}",
            bytes[5]
        )));
    }
    let stage = Stage::from_code(bytes[6])
        .ok_or_else(|| CrowError::Format(format!("unknown stage code {}", bytes[6])))?;
    if bytes[7] != 0 || bytes[16..20].iter().any(|&b| b != 0) {
        return Err(CrowError::Format(
            "reserved header bytes are not zero".into(),
        ));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;

    let body = &bytes[HEADER_LEN..];
    let mut at = 0usize;
    let truncated = |at: usize, need: usize| CrowError::Truncated {
        expected: (at + need) as u64,
        found: body.len() as u64,
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if body.len() < at + 2 {
            return Err(truncated(at, 2));
        }
        let id_len = u16::from_le_bytes([body[at], body[at + 1]]) as usize;
        at += 2;
        if body.len() < at + id_len + dim * 4 {
            return Err(truncated(at, id_len + dim * 4));
        }
        let id = std::str::from_utf8(&body[at..at + id_len])
            .map_err(|e| CrowError::Data(format!("descriptor id is not UTF-8: {e}")))?
            .to_string();
        at += id_len;
        let values: Vec<f64> = body[at..at + dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        at += dim * 4;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CrowError::Data(format!(
                "non-finite value in descriptor '{id}'"
            )));
        }
        out.push(Descriptor::new(id, values, stage));
    }
    if at != body.len() {
        return Err(CrowError::Format(format!(
            "{} unexpected trailing bytes",
            body.len() - at
        )));
    }
    Ok(out)
}

pub fn load_descriptors(path: &Path) -> Result<Vec<Descriptor>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CrowError::MissingFile(path.to_path_buf()),
        _ => CrowError::Io(e),
    })?;
    read_descriptors(BufReader::new(file))
}

pub fn save_descriptors(path: &Path, descriptors: &[Descriptor]) -> Result<()> {
    write_descriptors(descriptors, BufWriter::new(File::create(path)?))
}

/// Returns the first duplicated id, if any.
pub fn find_duplicate_id(descriptors: &[Descriptor]) -> Option<&str> {
    let mut seen = HashSet::new();
    descriptors
        .iter()
        .find(|d| !seen.insert(d.id.as_str()))
        .map(|d| d.id.as_str())
}
