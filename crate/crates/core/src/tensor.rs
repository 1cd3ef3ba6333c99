//! Feature tensors and spatially-local pooling.
//!
//! A [`FeatureTensor`] is the `K x W x H` activation block of one image,
//! stored channel-major: element `(k, i, j)` lives at `k*W*H + i*H + j`.
//! Channel maps are therefore contiguous slices of length `W*H`.

use crate::error::{CrowError, Result};

/// Default upper bound on `K*W*H` accepted by constructors and readers.
pub const DEFAULT_MAX_ELEMENTS: usize = 1 << 28;

/// Activation block for a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    id: String,
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
    nonneg: bool,
}

impl FeatureTensor {
    /// Builds a tensor, checking shape and finiteness.
    pub fn new(
        id: impl Into<String>,
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::with_limit(id, channels, width, height, data, DEFAULT_MAX_ELEMENTS)
    }

    pub fn with_limit(
        id: impl Into<String>,
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f32>,
        max_elements: usize,
    ) -> Result<Self> {
        let expected = checked_volume(channels, width, height, max_elements)?;
        if data.len() != expected {
            return Err(CrowError::Dimension {
                axis: "data length",
                expected,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CrowError::Data(format!(
                "non-finite activation at flat index {pos}"
            )));
        }
        let nonneg = data.iter().all(|&v| v >= 0.0);
        Ok(Self {
            id: id.into(),
            channels,
            width,
            height,
            data,
            nonneg,
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(
        id: impl Into<String>,
        channels: usize,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let n = checked_volume(channels, width, height, DEFAULT_MAX_ELEMENTS)?;
        Self::new(id, channels, width, height, vec![0.0; n])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of spatial locations, `W*H`.
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// True when every activation is `>= 0`, as expected for ReLU outputs.
    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.width + i) * self.height + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f32 {
        self.data[self.index(k, i, j)]
    }

    /// Channel map `k` as a row-major `W x H` slice (`i` outer, `j` inner).
    pub fn channel(&self, k: usize) -> &[f32] {
        let area = self.area();
        &self.data[k * area..(k + 1) * area]
    }

    pub fn channel_iter(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.area())
    }

    /// Channel responses at location `(i, j)`.
    pub fn fiber(&self, i: usize, j: usize) -> Vec<f32> {
        (0..self.channels).map(|k| self.get(k, i, j)).collect()
    }

    /// Returns an error if any activation is negative.
    pub fn require_nonneg(&self) -> Result<()> {
        if self.nonneg {
            return Ok(());
        }
        let pos = self.data.iter().position(|&v| v < 0.0).unwrap_or(0);
        Err(CrowError::Precondition(format!(
            "tensor '{}' has a negative activation at flat index {pos}",
            self.id
        )))
    }

    /// Same tensor with channels reordered so that output channel `c` is input channel `perm[c]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.channels {
            return Err(CrowError::Dimension {
                axis: "channel permutation",
                expected: self.channels,
                actual: perm.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &src in perm {
            if src >= self.channels {
                return Err(CrowError::Parameter(format!(
                    "permutation entry {src} out of range"
                )));
            }
            data.extend_from_slice(self.channel(src));
        }
        Self::new(
            self.id.clone(),
            self.channels,
            self.width,
            self.height,
            data,
        )
    }

    /// Multiplies every activation by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let data = self.data.iter().map(|v| v * factor).collect();
        Self::new(
            self.id.clone(),
            self.channels,
            self.width,
            self.height,
            data,
        )
    }
}

fn checked_volume(
    channels: usize,
    width: usize,
    height: usize,
    max_elements: usize,
) -> Result<usize> {
    if channels == 0 || width == 0 || height == 0 {
        return Err(CrowError::Data(format!(
            "tensor dimensions must be positive, got {channels}x{width}x{height}"
        )));
    }
    let n = channels
        .checked_mul(width)
        .and_then(|n| n.checked_mul(height))
        .ok_or_else(|| CrowError::Data("tensor volume overflows".into()))?;
    if n > max_elements {
        return Err(CrowError::Data(format!(
            "tensor volume {n} exceeds the limit of {max_elements} elements"
        )));
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Sum,
    None,
}

/// Spatially-local pooling: window `w x h`, stride `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolingSpec {
    pub window_w: usize,
    pub window_h: usize,
    pub stride: usize,
    pub kind: PoolKind,
}

impl PoolingSpec {
    pub const NONE: PoolingSpec = PoolingSpec {
        window_w: 1,
        window_h: 1,
        stride: 1,
        kind: PoolKind::None,
    };

    pub fn max(window_w: usize, window_h: usize, stride: usize) -> Self {
        Self {
            window_w,
            window_h,
            stride,
            kind: PoolKind::Max,
        }
    }

    pub fn sum(window_w: usize, window_h: usize, stride: usize) -> Self {
        Self {
            window_w,
            window_h,
            stride,
            kind: PoolKind::Sum,
        }
    }

    /// Output spatial dims for an input of `width x height`.
    pub fn output_dims(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        if self.kind == PoolKind::None {
            return Ok((width, height));
        }
        if self.window_w == 0 || self.window_h == 0 || self.stride == 0 {
            return Err(CrowError::Parameter(
                "pooling window and stride must be positive".into(),
            ));
        }
        if self.window_w > width {
            return Err(CrowError::Dimension {
                axis: "pooling window width",
                expected: width,
                actual: self.window_w,
            });
        }
        if self.window_h > height {
            return Err(CrowError::Dimension {
                axis: "pooling window height",
                expected: height,
                actual: self.window_h,
            });
        }
        Ok((
            (width - self.window_w) / self.stride + 1,
            (height - self.window_h) / self.stride + 1,
        ))
    }
}

/// Max- or sum-pools each channel over local windows. Windows overhanging
/// the right or bottom edge are dropped.
pub fn local_pool(t: &FeatureTensor, spec: &PoolingSpec) -> Result<FeatureTensor> {
    if spec.kind == PoolKind::None {
        return Ok(t.clone());
    }
    let (out_w, out_h) = spec.output_dims(t.width, t.height)?;
    let mut out = Vec::with_capacity(t.channels * out_w * out_h);
    for k in 0..t.channels {
        let map = t.channel(k);
        for oi in 0..out_w {
            for oj in 0..out_h {
                let i0 = oi * spec.stride;
                let j0 = oj * spec.stride;
                let rows = (i0..i0 + spec.window_w)
                    .map(|i| &map[i * t.height + j0..i * t.height + j0 + spec.window_h]);
                let v = match spec.kind {
                    PoolKind::Max => rows
                        .flat_map(|r| r.iter().copied())
                        .fold(f32::NEG_INFINITY, f32::max),
                    PoolKind::Sum => {
                        rows.flat_map(|r| r.iter()).map(|&v| v as f64).sum::<f64>() as f32
                    }
                    PoolKind::None => unreachable!(),
                };
                out.push(v);
            }
        }
    }
    FeatureTensor::new(t.id.clone(), t.channels, out_w, out_h, out)
}
