use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CrowError;

/// Vector norm families used for spatial-map, descriptor and final normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "l1")]
    L1,
    #[default]
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "inf")]
    Inf,
    /// Generalized mean with exponent 0.5: `(sum |v|^0.5)^2`.
    #[serde(rename = "half")]
    Half,
}

impl NormOrder {
    /// Norm of `values`, accumulated in index order in double precision.
    pub fn norm(self, values: impl IntoIterator<Item = f64>) -> f64 {
        let it = values.into_iter().map(f64::abs);
        match self {
            NormOrder::L1 => it.sum(),
            NormOrder::L2 => it.map(|v| v * v).sum::<f64>().sqrt(),
            NormOrder::Inf => it.fold(0.0, f64::max),
            NormOrder::Half => {
                let s: f64 = it.map(f64::sqrt).sum();
                s * s
            }
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormOrder::L1 => "l1",
            NormOrder::L2 => "l2",
            NormOrder::Inf => "inf",
            NormOrder::Half => "half",
        })
    }
}

impl FromStr for NormOrder {
    type Err = CrowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(NormOrder::L1),
            "l2" | "2" => Ok(NormOrder::L2),
            "inf" | "linf" | "max" => Ok(NormOrder::Inf),
            "half" | "0.5" | "power-0.5" => Ok(NormOrder::Half),
            other => Err(CrowError::Parameter(format!(
                "unknown norm order '{other}'"
            ))),
        }
    }
}
