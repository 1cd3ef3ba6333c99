//! `key = value` pipeline configuration files.
//!
//! ```text
//! # CroW on conv5_3 tensors, 256-d output
//! preset = crow
//! layer = conv5
//! output_dim = 256
//! ```
//!
//! `preset` (crow | ucrow | spoc) and `layer` (pool5 | conv5) choose the
//! starting point; any other key overrides one field. Values may be bare
//! or quoted.

use serde::Deserialize;

use crate::aggregation::{ChannelScheme, PipelineConfig, SourceLayer, SpatialScheme};
use crate::error::{CrowError, Result};
use crate::norm::NormOrder;
use crate::tensor::{PoolKind, PoolingSpec};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    layer: Option<SourceLayer>,
    pooling: Option<PoolKind>,
    pool_width: Option<usize>,
    pool_height: Option<usize>,
    pool_stride: Option<usize>,
    spatial: Option<SpatialScheme>,
    channel: Option<ChannelScheme>,
    spatial_norm: Option<NormOrder>,
    spatial_power: Option<f64>,
    epsilon: Option<f64>,
    centering_sigma: Option<f64>,
    initial_norm: Option<NormOrder>,
    initial_power: Option<f64>,
    final_norm: Option<NormOrder>,
    output_dim: Option<usize>,
}

/// Rewrites bare string values as TOML strings so `key = crow` parses.
fn quote_bare_values(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    for line in text.lines() {
        let content = line.split('#').next().unwrap_or("").trim();
        match content.split_once('=') {
            Some((key, value)) => {
                let value = value.trim();
                let is_literal = value.starts_with('"')
                    || value.starts_with('\'')
                    || (value.parse::<f64>().is_ok()
                        && value.starts_with(|c: char| c.is_ascii_digit() || "+-.".contains(c)))
                    || value == "true"
                    || value == "false";
                if is_literal {
                    out.push_str(&format!("{} = {}\n", key.trim(), value));
                } else {
                    out.push_str(&format!("{} = \"{}\"\n", key.trim(), value));
                }
            }
            None => {
                out.push_str(content);
                out.push('\n');
            }
        }
    }
    out
}

pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let raw: RawConfig =
        toml::from_str(&quote_bare_values(text)).map_err(|e| CrowError::Parse {
            location: "pipeline config".into(),
            message: e.message().to_string(),
        })?;
    let layer = raw.layer.unwrap_or(SourceLayer::Pool5);
    let mut cfg = match raw
        .preset
        .as_deref()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        None | Some("crow") => PipelineConfig::crow(layer),
        Some("ucrow") => PipelineConfig::ucrow(layer),
        Some("spoc") | Some("spoc-approx") => PipelineConfig::spoc_approx(),
        Some(other) => {
            return Err(CrowError::Parameter(format!("unknown preset '{other}'")));
        }
    };
    if let Some(kind) = raw.pooling {
        cfg.pooling = match kind {
            PoolKind::None => PoolingSpec::NONE,
            kind => PoolingSpec {
                window_w: raw.pool_width.unwrap_or(2),
                window_h: raw.pool_height.unwrap_or(2),
                stride: raw.pool_stride.unwrap_or(2),
                kind,
            },
        };
    } else if raw.pool_width.is_some() || raw.pool_height.is_some() || raw.pool_stride.is_some() {
        return Err(CrowError::Parameter(
            "pool_width/pool_height/pool_stride need an explicit 'pooling' kind".into(),
        ));
    }
    if let Some(v) = raw.spatial {
        cfg.spatial = v;
    }
    if let Some(v) = raw.channel {
        cfg.channel = v;
    }
    if let Some(v) = raw.spatial_norm {
        cfg.spatial_norm.order = v;
    }
    if let Some(v) = raw.spatial_power {
        cfg.spatial_norm.power = v;
    }
    if let Some(v) = raw.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = raw.centering_sigma {
        cfg.centering_sigma = v;
    }
    if let Some(v) = raw.initial_norm {
        cfg.initial_norm = v;
    }
    if let Some(v) = raw.initial_power {
        cfg.initial_power = v;
    }
    if let Some(v) = raw.final_norm {
        cfg.final_norm = v;
    }
    cfg.output_dim = raw.output_dim;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical one-line rendering of every field, used as provenance.
pub fn describe(cfg: &PipelineConfig) -> String {
    let kind = match cfg.pooling.kind {
        PoolKind::Max => "max",
        PoolKind::Sum => "sum",
        PoolKind::None => "none",
    };
    let spatial = match cfg.spatial {
        SpatialScheme::Uniform => "uniform",
        SpatialScheme::Crow => "crow",
        SpatialScheme::Centering => "centering",
    };
    let channel = match cfg.channel {
        ChannelScheme::Uniform => "uniform",
        ChannelScheme::Crow => "crow",
    };
    format!(
        "pooling={kind} pool={}x{}/{} spatial={spatial} channel={channel} spatial_norm={} spatial_power={} \
         epsilon={:e} centering_sigma={} initial_norm={} initial_power={} final_norm={} output_dim={}",
        cfg.pooling.window_w,
        cfg.pooling.window_h,
        cfg.pooling.stride,
        cfg.spatial_norm.order,
        cfg.spatial_norm.power,
        cfg.epsilon,
        cfg.centering_sigma,
        cfg.initial_norm,
        cfg.initial_power,
        cfg.final_norm,
        cfg.output_dim.map_or_else(|| "auto".to_string(), |d| d.to_string()),
    )
}
