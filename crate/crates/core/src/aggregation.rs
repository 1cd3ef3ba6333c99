//! Cross-dimensional weighting, per-channel sum aggregation and the full
//! aggregation pipeline (pool, weight, sum, normalize, whiten, normalize).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CrowError, Result};
use crate::norm::NormOrder;
use crate::tensor::{local_pool, FeatureTensor, PoolingSpec};
use crate::weighting::{
    centering_prior, channel_weights, spatial_weights, uniform_channel, uniform_spatial,
    ChannelWeights, SpatialNormSpec, SpatialWeightMap, DEFAULT_CENTERING_SIGMA, DEFAULT_EPSILON,
};
use crate::whitening::{apply_whitening, finalize, WhiteningModel};

/// Processing stage a descriptor has reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Normalized,
    Whitened,
    Final,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Raw => 0,
            Stage::Normalized => 1,
            Stage::Whitened => 2,
            Stage::Final => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Stage::Raw,
            1 => Stage::Normalized,
            2 => Stage::Whitened,
            3 => Stage::Final,
            _ => return None,
        })
    }
}

/// Aggregated image vector. `zero` marks descriptors with no energy
/// (e.g. blank images); they are skipped by whitening fits and indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub id: String,
    pub values: Vec<f64>,
    pub stage: Stage,
    pub zero: bool,
}

impl Descriptor {
    pub fn new(id: impl Into<String>, values: Vec<f64>, stage: Stage) -> Self {
        let zero = values.iter().all(|&v| v == 0.0);
        Self {
            id: id.into(),
            values,
            stage,
            zero,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &Descriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        NormOrder::L2.norm(self.values.iter().copied())
    }
}

/// Divides `values` by their `order`-norm in place. Returns false (leaving
/// the values untouched) when the norm is zero.
pub(crate) fn normalize_in_place(values: &mut [f64], order: NormOrder) -> bool {
    let n = order.norm(values.iter().copied());
    if n > 0.0 && n.is_finite() {
        values.iter_mut().for_each(|v| *v /= n);
        true
    } else {
        false
    }
}

/// `X'[k,i,j] = alpha[i,j] * beta[k] * X[k,i,j]`.
pub fn weight_tensor(
    t: &FeatureTensor,
    alpha: &SpatialWeightMap,
    beta: &ChannelWeights,
) -> Result<FeatureTensor> {
    if alpha.width() != t.width() {
        return Err(CrowError::Dimension {
            axis: "width",
            expected: t.width(),
            actual: alpha.width(),
        });
    }
    if alpha.height() != t.height() {
        return Err(CrowError::Dimension {
            axis: "height",
            expected: t.height(),
            actual: alpha.height(),
        });
    }
    if beta.len() != t.channels() {
        return Err(CrowError::Dimension {
            axis: "channels",
            expected: t.channels(),
            actual: beta.len(),
        });
    }
    let mut out = Vec::with_capacity(t.data().len());
    for (map, &b) in t.channel_iter().zip(&beta.weights) {
        out.extend(
            map.iter()
                .zip(alpha.weights())
                .map(|(&x, &a)| (a * b * x as f64) as f32),
        );
    }
    FeatureTensor::new(t.id(), t.channels(), t.width(), t.height(), out)
}

/// `f_k = sum_{i,j} X[k,i,j]`, summed `i` outer, `j` inner, in double precision.
pub fn sum_aggregate(t: &FeatureTensor) -> Descriptor {
    let values = t
        .channel_iter()
        .map(|map| map.iter().map(|&v| v as f64).sum())
        .collect();
    Descriptor::new(t.id(), values, Stage::Raw)
}

/// Signed power transform `sign(v)|v|^power` followed by division by the
/// `order`-norm.
pub fn pnorm(d: &Descriptor, order: NormOrder, power: f64) -> Result<Descriptor> {
    if d.stage != Stage::Raw {
        return Err(CrowError::Precondition(format!(
            "pnorm expects a raw descriptor, got {:?}",
            d.stage
        )));
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(CrowError::Parameter(format!(
            "power must be positive, got {power}"
        )));
    }
    let mut values: Vec<f64> = if power == 1.0 {
        d.values.clone()
    } else {
        d.values
            .iter()
            .map(|&v| v.signum() * v.abs().powf(power))
            .collect()
    };
    let ok = normalize_in_place(&mut values, order);
    if !ok {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(Descriptor {
        id: d.id.clone(),
        values,
        stage: Stage::Normalized,
        zero: !ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialScheme {
    Uniform,
    Crow,
    Centering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelScheme {
    Uniform,
    Crow,
}

/// Layer the tensors were extracted from. `pool5` outputs are already
/// max-pooled; `conv5` outputs get a 2x2 stride-2 max pool first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceLayer {
    Pool5,
    Conv5,
}

impl SourceLayer {
    pub fn pooling(self) -> PoolingSpec {
        match self {
            SourceLayer::Pool5 => PoolingSpec::NONE,
            SourceLayer::Conv5 => PoolingSpec::max(2, 2, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub pooling: PoolingSpec,
    pub spatial: SpatialScheme,
    pub channel: ChannelScheme,
    pub spatial_norm: SpatialNormSpec,
    pub epsilon: f64,
    pub centering_sigma: f64,
    pub initial_norm: NormOrder,
    pub initial_power: f64,
    pub final_norm: NormOrder,
    /// Expected whitened dimensionality. `None` accepts whatever the model produces.
    pub output_dim: Option<usize>,
}

impl PipelineConfig {
    fn base(pooling: PoolingSpec, spatial: SpatialScheme, channel: ChannelScheme) -> Self {
        Self {
            pooling,
            spatial,
            channel,
            spatial_norm: SpatialNormSpec::default(),
            epsilon: DEFAULT_EPSILON,
            centering_sigma: DEFAULT_CENTERING_SIGMA,
            initial_norm: NormOrder::L2,
            initial_power: 1.0,
            final_norm: NormOrder::L2,
            output_dim: None,
        }
    }

    /// Spatial and sparsity-sensitive channel weighting.
    pub fn crow(layer: SourceLayer) -> Self {
        Self::base(layer.pooling(), SpatialScheme::Crow, ChannelScheme::Crow)
    }

    /// Uniform weighting: plain sum pooling.
    pub fn ucrow(layer: SourceLayer) -> Self {
        Self::base(
            layer.pooling(),
            SpatialScheme::Uniform,
            ChannelScheme::Uniform,
        )
    }

    /// Approximate SPoC: no local pooling, Gaussian centering prior, uniform channels.
    pub fn spoc_approx() -> Self {
        Self::base(
            PoolingSpec::NONE,
            SpatialScheme::Centering,
            ChannelScheme::Uniform,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CrowError::Parameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.initial_power > 0.0 && self.initial_power.is_finite()) {
            return Err(CrowError::Parameter(
                "initial power must be positive".into(),
            ));
        }
        if !(self.spatial_norm.power > 0.0 && self.spatial_norm.power.is_finite()) {
            return Err(CrowError::Parameter(
                "spatial power must be positive".into(),
            ));
        }
        if !(self.centering_sigma > 0.0 && self.centering_sigma.is_finite()) {
            return Err(CrowError::Parameter(
                "centering sigma must be positive".into(),
            ));
        }
        if self.output_dim == Some(0) {
            return Err(CrowError::Parameter(
                "output dimension must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Spatial weights for a (pooled) tensor according to `cfg`.
pub fn spatial_stage(t: &FeatureTensor, cfg: &PipelineConfig) -> Result<SpatialWeightMap> {
    match cfg.spatial {
        SpatialScheme::Uniform => uniform_spatial(t.width(), t.height()),
        SpatialScheme::Crow => spatial_weights(t, &cfg.spatial_norm),
        SpatialScheme::Centering => centering_prior(t.width(), t.height(), cfg.centering_sigma),
    }
}

/// Channel weights for a (pooled) tensor according to `cfg`.
pub fn channel_stage(t: &FeatureTensor, cfg: &PipelineConfig) -> Result<ChannelWeights> {
    match cfg.channel {
        ChannelScheme::Uniform => Ok(uniform_channel(t.channels())),
        ChannelScheme::Crow => channel_weights(t, cfg.epsilon),
    }
}

/// Runs the aggregation pipeline on one tensor. Without a whitening model the
/// result stops at the normalized stage; with one it is whitened and
/// normalized again.
pub fn run_pipeline(
    t: &FeatureTensor,
    cfg: &PipelineConfig,
    model: Option<&WhiteningModel>,
) -> Result<Descriptor> {
    cfg.validate()?;
    if let Some(m) = model {
        if m.input_dim() != t.channels() {
            return Err(CrowError::Dimension {
                axis: "whitening input dim",
                expected: t.channels(),
                actual: m.input_dim(),
            });
        }
        if let Some(d) = cfg.output_dim {
            if d != m.output_dim() {
                return Err(CrowError::Dimension {
                    axis: "whitening output dim",
                    expected: d,
                    actual: m.output_dim(),
                });
            }
        }
    }
    let pooled = local_pool(t, &cfg.pooling)?;
    let alpha = spatial_stage(&pooled, cfg)?;
    let beta = channel_stage(&pooled, cfg)?;
    let weighted = weight_tensor(&pooled, &alpha, &beta)?;
    let raw = sum_aggregate(&weighted);
    let normalized = pnorm(&raw, cfg.initial_norm, cfg.initial_power)?;
    match model {
        None => Ok(normalized),
        Some(m) => {
            let whitened = apply_whitening(&normalized, m)?;
            Ok(finalize(&whitened, cfg.final_norm))
        }
    }
}

/// Aggregates a batch of tensors in parallel; output order follows input order.
pub fn aggregate_all(
    tensors: &[FeatureTensor],
    cfg: &PipelineConfig,
    model: Option<&WhiteningModel>,
) -> Result<Vec<Descriptor>> {
    tensors
        .par_iter()
        .map(|t| run_pipeline(t, cfg, model))
        .collect()
}
