//! `.crowt` tensor files and corpus manifests.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `CRWT`                  |
//! | 4      | 1    | version (1)                   |
//! | 5      | 1    | dtype (1 = f32 LE)            |
//! | 6      | 2    | reserved, zero                |
//! | 8      | 4    | K                             |
//! | 12     | 4    | W                             |
//! | 16     | 4    | H                             |
//! | 20     | 4KWH | activations, channel-major    |
//! | end-1  | 1    | flags (bit 0: non-negative)   |

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{CrowError, Result};
use crate::tensor::{FeatureTensor, DEFAULT_MAX_ELEMENTS};

pub const MAGIC: &[u8; 4] = b"CRWT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 20;
pub const FLAG_NONNEG: u8 = 0b0000_0001;

/// Name of the sidecar manifest inside a corpus directory.
pub const MANIFEST_NAME: &str = "manifest.tsv";

pub fn read_tensor<R: Read>(stream: R) -> Result<FeatureTensor> {
    read_tensor_with_limit(stream, DEFAULT_MAX_ELEMENTS)
}

pub fn read_tensor_with_limit<R: Read>(
    mut stream: R,
    max_elements: usize,
) -> Result<FeatureTensor> {
    let mut header = [0u8; HEADER_LEN];
    stream.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            CrowError::Format("file shorter than the 20-byte header".into())
        }
        _ => CrowError::Io(e),
    })?;
    if &header[0..4] != MAGIC {
        return Err(CrowError::Format(format!("bad magic {:?}", &header[0..4])));
    }
    if header[4] != VERSION {
        return Err(CrowError::Format(format!(
            "unsupported version {}",
            header[4]
        )));
    }
    if header[5] != DTYPE_F32 {
        return Err(CrowError::Format(format!(
            "unsupported dtype code {}",
            header[5]
        )));
    }
    if header[6] != 0 || header[7] != 0 {
        return Err(CrowError::Format(
            "reserved header bytes are not zero".into(),
        ));
    }
    let k = u32_at(&header, 8) as usize;
    let w = u32_at(&header, 12) as usize;
    let h = u32_at(&header, 16) as usize;
    let count = k
        .checked_mul(w)
        .and_then(|n| n.checked_mul(h))
        .filter(|&n| n <= max_elements)
        .ok_or_else(|| {
            CrowError::Data(format!(
                "declared shape {k}x{w}x{h} exceeds the element limit"
            ))
        })?;

    let mut rest = Vec::with_capacity(count * 4 + 1);
    stream.read_to_end(&mut rest)?;
    let expected = count as u64 * 4 + 1;
    if (rest.len() as u64) < expected {
        return Err(CrowError::Truncated {
            expected,
            found: rest.len() as u64,
        });
    }
    if rest.len() as u64 > expected {
        return Err(CrowError::Format(format!(
            "{} unexpected trailing bytes",
            rest.len() as u64 - expected
        )));
    }
    let flags = rest[count * 4];
    if flags & !FLAG_NONNEG != 0 {
        return Err(CrowError::Format(format!("unknown flag bits {flags:#04x}")));
    }
    let data: Vec<f32> = rest[..count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let tensor = FeatureTensor::with_limit("", k, w, h, data, max_elements)?;
    if flags & FLAG_NONNEG != 0 && !tensor.is_nonneg() {
        return Err(CrowError::Data(
            "file claims non-negative activations but contains negative values".into(),
        ));
    }
    Ok(tensor)
}

pub fn write_tensor<W: Write>(t: &FeatureTensor, mut stream: W) -> Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4] = VERSION;
    header[5] = DTYPE_F32;
    header[8..12].copy_from_slice(&dim_u32(t.channels())?.to_le_bytes());
    header[12..16].copy_from_slice(&dim_u32(t.width())?.to_le_bytes());
    header[16..20].copy_from_slice(&dim_u32(t.height())?.to_le_bytes());
    stream.write_all(&header)?;
    let mut payload = Vec::with_capacity(t.data().len() * 4 + 1);
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    payload.push(if t.is_nonneg() { FLAG_NONNEG } else { 0 });
    stream.write_all(&payload)?;
    stream.flush()?;
    Ok(())
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| CrowError::Data(format!("dimension {v} does not fit in u32")))
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

/// Reads a tensor file, using `id` as the tensor's identifier.
pub fn load_tensor(path: &Path, id: impl Into<String>) -> Result<FeatureTensor> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CrowError::MissingFile(path.to_path_buf()),
        _ => CrowError::Io(e),
    })?;
    let mut t = read_tensor(BufReader::new(file))?;
    t.set_id(id);
    Ok(t)
}

pub fn save_tensor(path: &Path, t: &FeatureTensor) -> Result<()> {
    write_tensor(t, BufWriter::new(File::create(path)?))
}

/// One manifest line: an image id and a path relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
}

pub fn parse_manifest(text: &str, origin: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, path) = line.split_once('\t').ok_or_else(|| CrowError::Parse {
            location: format!("{origin}:{}", n + 1),
            message: "expected '<image-id>\\t<relative-path>'".into(),
        })?;
        out.push(ManifestEntry {
            id: id.to_string(),
            path: PathBuf::from(path),
        });
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut out: W) -> Result<()> {
    for e in entries {
        writeln!(out, "{}\t{}", e.id, e.path.display())?;
    }
    Ok(())
}

/// Lists the tensors of a corpus directory. Uses `manifest.tsv` when present,
/// otherwise every `*.crowt` file in name order with the file stem as id.
pub fn corpus_entries(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let manifest = dir.join(MANIFEST_NAME);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest)?;
        return parse_manifest(&text, &manifest.display().to_string());
    }
    if !dir.is_dir() {
        return Err(CrowError::MissingFile(dir.to_path_buf()));
    }
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "crowt") {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let rel = PathBuf::from(path.file_name().unwrap_or_default());
            entries.push(ManifestEntry { id, path: rel });
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}
