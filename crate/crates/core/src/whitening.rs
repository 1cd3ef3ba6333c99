//! PCA whitening learned on a separate descriptor set.
//!
//! A model centres a descriptor on the training mean, projects it onto the
//! leading eigenvectors of the training covariance and rescales each
//! component by `1/sqrt(lambda + delta)`.

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use sha2::{Digest, Sha256};

use crate::aggregation::{normalize_in_place, Descriptor, Stage};
use crate::error::{CrowError, Result};
use crate::norm::NormOrder;

pub const MAGIC: &[u8; 4] = b"CRWW";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 16;

pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningParams {
    /// Number of retained components, K'.
    pub output_dim: usize,
    /// Eigenvalue floor as a fraction of the largest eigenvalue.
    pub relative_floor: f64,
    /// Free-form description of how the training descriptors were produced;
    /// folded into the fingerprint.
    pub provenance: String,
}

impl WhiteningParams {
    pub fn new(output_dim: usize) -> Self {
        Self {
            output_dim,
            relative_floor: DEFAULT_RELATIVE_FLOOR,
            provenance: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    input_dim: usize,
    mean: Vec<f64>,
    /// `K' x K`, row-major; rows are eigenvectors.
    projection: Vec<f64>,
    scales: Vec<f64>,
    floor: f64,
    fingerprint: [u8; 32],
}

impl WhiteningModel {
    pub fn from_parts(
        mean: Vec<f64>,
        projection: Vec<f64>,
        scales: Vec<f64>,
        floor: f64,
        fingerprint: [u8; 32],
    ) -> Result<Self> {
        let k = mean.len();
        let kp = scales.len();
        if k == 0 || kp == 0 || kp > k {
            return Err(CrowError::Parameter(format!(
                "invalid whitening dims: input {k}, output {kp}"
            )));
        }
        if projection.len() != k * kp {
            return Err(CrowError::Dimension {
                axis: "projection size",
                expected: k * kp,
                actual: projection.len(),
            });
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&mean) && finite(&projection) && finite(&scales) && floor.is_finite()) {
            return Err(CrowError::Data(
                "whitening parameters must be finite".into(),
            ));
        }
        Ok(Self {
            input_dim: k,
            mean,
            projection,
            scales,
            floor,
            fingerprint,
        })
    }

    /// Pass-through model: zero mean, identity projection, unit scales.
    pub fn identity(dim: usize) -> Self {
        let mut projection = vec![0.0; dim * dim];
        for i in 0..dim {
            projection[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            mean: vec![0.0; dim],
            projection,
            scales: vec![1.0; dim],
            floor: 0.0,
            fingerprint: [0; 32],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.scales.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_row(&self, r: usize) -> &[f64] {
        &self.projection[r * self.input_dim..(r + 1) * self.input_dim]
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Absolute eigenvalue floor `delta`.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Retained eigenvalues recovered from the scales.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.scales
            .iter()
            .map(|s| (1.0 / (s * s) - self.floor).max(0.0))
            .collect()
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    /// `scales * (P (x - mean))` on a raw slice.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        (0..self.output_dim())
            .map(|r| {
                let dot: f64 = self
                    .projection_row(r)
                    .iter()
                    .zip(&centred)
                    .map(|(p, c)| p * c)
                    .sum();
                dot * self.scales[r]
            })
            .collect()
    }
}

/// Learns a whitening model from normalized descriptors. Zero-flagged
/// descriptors are skipped.
pub fn fit_whitening(
    descriptors: &[Descriptor],
    params: &WhiteningParams,
) -> Result<WhiteningModel> {
    if !(params.relative_floor > 0.0 && params.relative_floor.is_finite()) {
        return Err(CrowError::Parameter(
            "eigenvalue floor must be positive".into(),
        ));
    }
    let usable: Vec<&Descriptor> = descriptors.iter().filter(|d| !d.zero).collect();
    if usable.len() < descriptors.len() {
        warn!(
            "skipping {} zero descriptors in whitening fit",
            descriptors.len() - usable.len()
        );
    }
    if let Some(d) = usable.iter().find(|d| d.stage != Stage::Normalized) {
        return Err(CrowError::Precondition(format!(
            "whitening is fit on normalized descriptors; '{}' is {:?}",
            d.id, d.stage
        )));
    }
    let n = usable.len();
    if n < 2 {
        return Err(CrowError::Data(format!(
            "whitening needs at least 2 non-zero descriptors, got {n}"
        )));
    }
    let k = usable[0].dim();
    if let Some(d) = usable.iter().find(|d| d.dim() != k) {
        return Err(CrowError::Dimension {
            axis: "descriptor dim",
            expected: k,
            actual: d.dim(),
        });
    }
    let kp = params.output_dim;
    let bound = k.min(n - 1);
    if kp == 0 || kp > bound {
        return Err(CrowError::Parameter(format!(
            "output dim {kp} must be in 1..={bound} (min of input dim {k} and N-1 = {})",
            n - 1
        )));
    }

    let mut mean = vec![0.0f64; k];
    for d in &usable {
        for (m, v) in mean.iter_mut().zip(&d.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centred = DMatrix::from_fn(n, k, |r, c| usable[r].values[c] - mean[c]);
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    if lambda_max <= 0.0 {
        return Err(CrowError::Data(
            "training descriptors have zero variance".into(),
        ));
    }
    let floor = params.relative_floor * lambda_max;

    let mut projection = Vec::with_capacity(kp * k);
    let mut scales = Vec::with_capacity(kp);
    for &idx in order.iter().take(kp) {
        let col = eig.eigenvectors.column(idx);
        let mut pivot = 0;
        for c in 1..k {
            if col[c].abs() > col[pivot].abs() {
                pivot = c;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        projection.extend(col.iter().map(|v| v * sign));
        let lambda = eig.eigenvalues[idx].max(0.0);
        scales.push(1.0 / (lambda + floor).sqrt());
    }

    let fingerprint = training_fingerprint(&usable, kp, &params.provenance);
    WhiteningModel::from_parts(mean, projection, scales, floor, fingerprint)
}

/// Order-independent digest of the training set and fit settings.
fn training_fingerprint(
    descriptors: &[&Descriptor],
    output_dim: usize,
    provenance: &str,
) -> [u8; 32] {
    let mut items: Vec<[u8; 32]> = descriptors
        .iter()
        .map(|d| {
            let mut h = Sha256::new();
            h.update((d.id.len() as u64).to_le_bytes());
            h.update(d.id.as_bytes());
            for v in &d.values {
                h.update(v.to_le_bytes());
            }
            h.finalize().into()
        })
        .collect();
    items.sort_unstable();
    let mut h = Sha256::new();
    h.update(provenance.as_bytes());
    h.update([0]);
    h.update((output_dim as u64).to_le_bytes());
    for item in &items {
        h.update(item);
    }
    h.finalize().into()
}

/// Centres, projects and rescales a normalized descriptor. A zero-flagged
/// input stays zero.
pub fn apply_whitening(d: &Descriptor, m: &WhiteningModel) -> Result<Descriptor> {
    if d.dim() != m.input_dim() {
        return Err(CrowError::Dimension {
            axis: "whitening input dim",
            expected: m.input_dim(),
            actual: d.dim(),
        });
    }
    if d.stage != Stage::Normalized {
        return Err(CrowError::Precondition(format!(
            "whitening expects a normalized descriptor, got {:?}",
            d.stage
        )));
    }
    let values = if d.zero {
        vec![0.0; m.output_dim()]
    } else {
        m.transform(&d.values)
    };
    Ok(Descriptor {
        id: d.id.clone(),
        values,
        stage: Stage::Whitened,
        zero: d.zero,
    })
}

/// Final normalization; zero vectors stay zero and flagged.
pub fn finalize(d: &Descriptor, order: NormOrder) -> Descriptor {
    let mut values = d.values.clone();
    let ok = !d.zero && normalize_in_place(&mut values, order);
    if !ok {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    Descriptor {
        id: d.id.clone(),
        values,
        stage: Stage::Final,
        zero: !ok,
    }
}

pub fn write_model<W: Write>(m: &WhiteningModel, mut out: W) -> Result<()> {
    let k = u32::try_from(m.input_dim())
        .map_err(|_| CrowError::Data("input dim exceeds u32".into()))?;
    let kp = u32::try_from(m.output_dim())
        .map_err(|_| CrowError::Data("output dim exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(
        HEADER_LEN + 4 * (m.mean.len() + m.projection.len() + m.scales.len()) + 40,
    );
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[VERSION, DTYPE_F32, 0, 0]);
    buf.extend_from_slice(&k.to_le_bytes());
    buf.extend_from_slice(&kp.to_le_bytes());
    for v in m.mean.iter().chain(&m.projection).chain(&m.scales) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&m.floor.to_le_bytes());
    buf.extend_from_slice(&m.fingerprint);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<WhiteningModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(CrowError::Format(
            "file shorter than the 16-byte header".into(),
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
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let kp = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let floats = k
        .checked_mul(kp)
        .and_then(|p| p.checked_add(k + kp))
        .ok_or_else(|| CrowError::Data("declared whitening dims overflow".into()))?;
    let expected = HEADER_LEN as u64 + floats as u64 * 4 + 8 + 32;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(CrowError::Truncated {
            expected: expected - HEADER_LEN as u64,
            found: found - HEADER_LEN as u64,
        });
    }
    if found > expected {
        return Err(CrowError::Format(format!(
            "{} unexpected trailing bytes",
            found - expected
        )));
    }
    let mut at = HEADER_LEN;
    let mut take = |count: usize| -> Vec<f64> {
        let v = bytes[at..at + count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        at += count * 4;
        v
    };
    let mean = take(k);
    let projection = take(k * kp);
    let scales = take(kp);
    let floor = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(&bytes[at + 8..at + 40]);
    WhiteningModel::from_parts(mean, projection, scales, floor, fingerprint)
}
