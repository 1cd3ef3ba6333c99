//! Non-parametric spatial and channel weights.
//!
//! Spatial weights come from the channel-summed response map, normalized and
//! power-scaled. Channel weights are an IDF-style boost for channels that
//! are rarely non-zero.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{CrowError, Result};
use crate::norm::NormOrder;
use crate::tensor::FeatureTensor;

/// Activations at or below this magnitude count as zero when measuring sparsity.
pub const ZERO_THRESHOLD: f32 = 1e-12;

pub const DEFAULT_EPSILON: f64 = 1e-6;

pub const DEFAULT_CENTERING_SIGMA: f64 = 1.0 / 3.0;

/// Per-location weights `alpha[i, j]`, stored `i`-major like a channel map.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeightMap {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl SpatialWeightMap {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CrowError::Parameter(
                "weight map dimensions must be positive".into(),
            ));
        }
        if weights.len() != width * height {
            return Err(CrowError::Dimension {
                axis: "weight map length",
                expected: width * height,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CrowError::Data(
                "spatial weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            weights,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.height + j]
    }

    /// Location indices ordered by descending weight, ties by position.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.weights.len()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        idx
    }

    /// Writes the map as a 16-bit binary PGM scaled so the maximum weight is 65535.
    /// Image columns are `i`, rows are `j`.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let max = self.weights.iter().copied().fold(0.0, f64::max);
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.weights.len() * 2);
        for j in 0..self.height {
            for i in 0..self.width {
                let v = if max > 0.0 {
                    (self.get(i, j) / max * 65535.0).round() as u16
                } else {
                    0
                };
                buf.extend_from_slice(&v.to_be_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }
}

/// Norm order `a` and power `b` for the spatial response map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialNormSpec {
    pub order: NormOrder,
    pub power: f64,
}

impl Default for SpatialNormSpec {
    fn default() -> Self {
        Self {
            order: NormOrder::L2,
            power: 2.0,
        }
    }
}

/// Per-channel weights, with the sparsities they were derived from when applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights {
    pub weights: Vec<f64>,
    pub sparsities: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
}

impl ChannelWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Spatial weights from the aggregated channel response.
///
/// `S'[i,j] = sum_k X[k,i,j]`, then `S[i,j] = (S'[i,j] / ||S'||_a)^(1/b)`.
/// An all-zero tensor gives the all-zero map.
pub fn spatial_weights(t: &FeatureTensor, spec: &SpatialNormSpec) -> Result<SpatialWeightMap> {
    if !(spec.power > 0.0 && spec.power.is_finite()) {
        return Err(CrowError::Parameter(format!(
            "spatial power must be positive, got {}",
            spec.power
        )));
    }
    t.require_nonneg()?;
    let area = t.area();
    let mut summed = vec![0.0f64; area];
    for map in t.channel_iter() {
        for (acc, &v) in summed.iter_mut().zip(map) {
            *acc += v as f64;
        }
    }
    let denom = spec.order.norm(summed.iter().copied());
    let inv_b = 1.0 / spec.power;
    let weights = if denom > 0.0 {
        summed.iter().map(|&s| (s / denom).powf(inv_b)).collect()
    } else {
        vec![0.0; area]
    };
    SpatialWeightMap::new(t.width(), t.height(), weights)
}

/// Fraction of locations where each channel is strictly positive.
pub fn channel_occupancy(t: &FeatureTensor) -> Vec<f64> {
    let area = t.area() as f64;
    t.channel_iter()
        .map(|map| map.iter().filter(|&&v| v > ZERO_THRESHOLD).count() as f64 / area)
        .collect()
}

/// Per-channel sparsity `1 - Q_k`.
pub fn channel_sparsities(t: &FeatureTensor) -> Vec<f64> {
    channel_occupancy(t).into_iter().map(|q| 1.0 - q).collect()
}

/// Sparsity-sensitive channel weights:
/// `I_k = ln((K*eps + sum_h Q_h) / (eps + Q_k))`.
pub fn channel_weights(t: &FeatureTensor, epsilon: f64) -> Result<ChannelWeights> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(CrowError::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let occupancy = channel_occupancy(t);
    let k = occupancy.len() as f64;
    let total: f64 = occupancy.iter().sum();
    let numerator = k * epsilon + total;
    let weights = occupancy
        .iter()
        .map(|&q| (numerator / (epsilon + q)).ln())
        .collect();
    Ok(ChannelWeights {
        weights,
        sparsities: Some(occupancy.iter().map(|q| 1.0 - q).collect()),
        epsilon: Some(epsilon),
    })
}

pub fn uniform_spatial(width: usize, height: usize) -> Result<SpatialWeightMap> {
    SpatialWeightMap::new(width, height, vec![1.0; width * height])
}

pub fn uniform_channel(channels: usize) -> ChannelWeights {
    ChannelWeights {
        weights: vec![1.0; channels],
        sparsities: None,
        epsilon: None,
    }
}

/// Isotropic Gaussian prior centred on the map with peak 1 and
/// standard deviation `sigma_fraction * min(W, H)`.
pub fn centering_prior(
    width: usize,
    height: usize,
    sigma_fraction: f64,
) -> Result<SpatialWeightMap> {
    if !(sigma_fraction > 0.0 && sigma_fraction.is_finite()) {
        return Err(CrowError::Parameter(format!(
            "sigma fraction must be positive, got {sigma_fraction}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(CrowError::Parameter(
            "weight map dimensions must be positive".into(),
        ));
    }
    let sigma = sigma_fraction * width.min(height) as f64;
    let two_var = 2.0 * sigma * sigma;
    let ci = (width as f64 - 1.0) / 2.0;
    let cj = (height as f64 - 1.0) / 2.0;
    let mut weights = Vec::with_capacity(width * height);
    for i in 0..width {
        for j in 0..height {
            let di = i as f64 - ci;
            let dj = j as f64 - cj;
            weights.push((-(di * di + dj * dj) / two_var).exp());
        }
    }
    SpatialWeightMap::new(width, height, weights)
}
