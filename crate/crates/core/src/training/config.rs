use std::fmt;

use crate::data::AugmentPolicy;
use crate::error::{Error, Result};
use crate::nn::NormKind;
use crate::tensor::DType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd-momentum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            _ => Err(Error::invalid(format!("unknown optimizer '{s}' (expected adam or sgd-momentum)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters for both training phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the unlabeled alignment term; 0 disables it.
    pub alpha: f64,
    /// Weight of the class-conditional alignment term; 0 disables it.
    pub cond_weight: f64,
    pub projections: usize,
    pub temperature: f64,
    /// Weight of the contrastive term during pretraining; 0 disables it.
    pub supcon_weight: f64,
    pub augment: AugmentPolicy,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub batch_unlabeled: usize,
    pub pretrain_epochs: usize,
    pub transfer_epochs: usize,
    pub confidence: f64,
    pub normalize_target_ce: bool,
    pub norm: NormKind,
    pub embed_dim: usize,
    pub dtype: DType,
    /// Initialize both encoders with the same weights.
    pub tied_init: bool,
    /// Start the transfer phase from a copy of the source encoder.
    pub transfer_from_source: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 10.0,
            cond_weight: 10.0,
            projections: 50,
            temperature: 0.1,
            supcon_weight: 0.0,
            augment: AugmentPolicy::standard(),
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            batch_source: 64,
            batch_target: 64,
            batch_unlabeled: 64,
            pretrain_epochs: 30,
            transfer_epochs: 30,
            confidence: 0.8,
            normalize_target_ce: false,
            norm: NormKind::Instance,
            embed_dim: 64,
            dtype: DType::F32,
            tied_init: false,
            transfer_from_source: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("train config: {msg}")));
        for (name, v) in [
            ("alpha", self.alpha),
            ("cond_weight", self.cond_weight),
            ("supcon_weight", self.supcon_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.projections == 0 {
            return bad("projections must be >= 1".into());
        }
        for (name, b) in [
            ("batch_source", self.batch_source),
            ("batch_target", self.batch_target),
            ("batch_unlabeled", self.batch_unlabeled),
        ] {
            if b < 2 {
                return bad(format!("{name} must be >= 2, got {b}"));
            }
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return bad(format!("confidence must be in (0, 1], got {}", self.confidence));
        }
        if self.embed_dim < 2 {
            return bad(format!("embed_dim must be >= 2, got {}", self.embed_dim));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields() {
        let base = TrainConfig::default();
        for cfg in [
            TrainConfig { lr: 0.0, ..base.clone() },
            TrainConfig {
                batch_target: 1,
                ..base.clone()
            },
            TrainConfig {
                temperature: -1.0,
                ..base.clone()
            },
            TrainConfig {
                alpha: f64::NAN,
                ..base.clone()
            },
            TrainConfig {
                confidence: 1.5,
                ..base.clone()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn optimizer_names() {
        for k in [OptimizerKind::Adam, OptimizerKind::SgdMomentum] {
            assert_eq!(OptimizerKind::parse(k.as_str()).unwrap(), k);
        }
    }
}
