//! Tissue models: the nonlinear Maxwell model with a power-law spring and the
//! generalized biproper linear model, plus the integrator and simulators
//! they rely on.

pub mod maxwell;
pub mod ode;
pub mod poly;
pub mod tf;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use maxwell::{
    simulate_forward, simulate_forward_from, simulate_inverse, simulate_inverse_from, unstrained_length, MaxwellParams,
};
pub use ode::rk4_step;
pub use poly::poly_roots;
pub use tf::{
    invert_tf, invert_tf_with_report, simulate_discrete_tf, to_continuous, to_discrete, Domain, InversionReport,
    RationalTransferFunction,
};

use crate::error::{Error, Result};

/// A nonlinear model together with the operating point it was estimated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearModel {
    #[serde(flatten)]
    pub params: MaxwellParams,
    /// Initial force of the estimation data.
    #[serde(rename = "F0")]
    pub f0: f64,
    /// Unstrained length implied by `f0`.
    #[serde(rename = "L0")]
    pub l0: f64,
}

impl NonlinearModel {
    pub fn new(params: MaxwellParams, f0: f64) -> Result<Self> {
        let l0 = unstrained_length(&params, f0)?;
        Ok(Self { params, f0, l0 })
    }
}

/// Either model kind, as stored in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TissueModel {
    Nonlinear(NonlinearModel),
    Linear(RationalTransferFunction),
}

impl TissueModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TissueModel::Nonlinear(_) => "nonlinear",
            TissueModel::Linear(_) => "linear",
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_files_round_trip_exactly() {
        let m = NonlinearModel::new(
            MaxwellParams::new(10.123456789012345, 0.987654321098765, 0.0123456789, 5.4321).unwrap(),
            1.9876543210987654,
        )
        .unwrap();
        let text = serde_json::to_string(&TissueModel::Nonlinear(m)).unwrap();
        for key in ["\"k1\"", "\"k2\"", "\"c\"", "\"n\"", "\"F0\"", "\"L0\""] {
            assert!(text.contains(key), "{text}");
        }
        let back: TissueModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, TissueModel::Nonlinear(m));

        let tf = RationalTransferFunction::new(
            vec![0.1, 0.30000000000000004],
            vec![1.0, -0.7],
            Domain::Discrete { ts: 1e-4 },
        )
        .unwrap();
        let text = serde_json::to_string(&TissueModel::Linear(tf.clone())).unwrap();
        let back: TissueModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, TissueModel::Linear(tf));
    }
}
