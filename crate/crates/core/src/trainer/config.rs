use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::compose::AugmentConfig;
use crate::error::{CladError, Result};
use crate::negdict::NegativeMode;
use crate::netcore::LossConfig;
use crate::synthgen::DatasetSpec;

/// Where positive-sample backgrounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DonorMode {
    /// Background-only renders of the training split, rebuilt every epoch.
    Bank,
    /// Other anchors of the same batch (bank fallback when none qualifies).
    InBatch,
}

/// Which cue the positive construction swaps out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveKind {
    Background,
    /// Foreground re-filled with another class's texture; the dictionary is
    /// then keyed by texture class.
    Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub lr_decayed: f64,
    /// First (0-based) epoch trained at `lr_decayed`.
    pub decay_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            lr_decayed: 1e-4,
            decay_epoch: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr_decayed
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub augment: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            init: 1,
            data: 2,
            augment: 3,
        }
    }
}

impl Seeds {
    /// The `k`-th replicate seed triple.
    pub fn offset(&self, k: u64) -> Seeds {
        Seeds {
            init: self.init + k,
            data: self.data + k,
            augment: self.augment + k,
        }
    }
}

/// Every knob of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub loss: LossConfig,
    /// Capacity of each dictionary store (also the negative count).
    pub queue_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub seeds: Seeds,
    pub donor_mode: DonorMode,
    pub negative_mode: NegativeMode,
    pub positive_kind: PositiveKind,
    pub augment: AugmentConfig,
    pub widths: [usize; 3],
    /// Dataset used when no directory is supplied; also supplies texture families.
    pub dataset: DatasetSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            loss: LossConfig::default(),
            queue_size: 32,
            batch_size: 64,
            epochs: 20,
            optimizer: OptimizerConfig::default(),
            seeds: Seeds::default(),
            donor_mode: DonorMode::Bank,
            negative_mode: NegativeMode::Keyed,
            positive_kind: PositiveKind::Background,
            augment: AugmentConfig::default(),
            widths: [16, 32, 64],
            dataset: DatasetSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.augment.validate()?;
        let bad = |m: String| Err(CladError::Config(m));
        if self.queue_size == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("queue_size, batch_size and epochs must be positive".into());
        }
        if self.optimizer.decay_epoch > self.epochs {
            return bad(format!(
                "decay epoch {} exceeds {} epochs",
                self.optimizer.decay_epoch, self.epochs
            ));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr_decayed > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        if self.widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Short hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string()
    }

    /// Parse JSON text, then apply `key.path=value` overrides.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = if text.trim().is_empty() {
            serde_json::to_value(RunConfig::default())?
        } else {
            serde_json::from_str(text)?
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Set `path.to.key=value` inside a JSON object; the value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CladError::Config(format!("override {assignment:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(CladError::Config(format!("empty key in override {assignment:?}")));
        }
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(CladError::Config(format!("override {assignment:?}: {key} is not inside an object")));
            }
        }
        let obj = node.as_object_mut().expect("object checked above");
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one key")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::LossVariant;

    #[test]
    fn defaults_validate_and_fingerprint_is_stable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.fingerprint(), RunConfig::default().fingerprint());
        let mut other = cfg.clone();
        other.loss.lambda = 2.0;
        assert_ne!(cfg.fingerprint(), other.fingerprint());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::from_json_with_overrides(
            r#"{"epochs": 3, "optimizer": {"decay_epoch": 2}}"#,
            &["loss.lambda=0.5".into(), "loss.variant=clad_plus".into(), "seeds.init=9".into()],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.loss.lambda, 0.5);
        assert_eq!(cfg.loss.variant, LossVariant::CladPlus);
        assert_eq!(cfg.seeds.init, 9);
        assert_eq!(cfg.seeds.data, 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RunConfig::from_json_with_overrides("{}", &["epochs=5".into()]).is_err()); // decay 10 > 5
        assert!(RunConfig::from_json_with_overrides("{}", &["bogus=1".into()]).is_err());
        assert!(RunConfig::from_json_with_overrides("{}", &["loss.tau=0".into()]).is_err());
        assert!(RunConfig::from_json_with_overrides("{}", &["novalue".into()]).is_err());
    }

    #[test]
    fn lr_schedule_steps_once() {
        let o = OptimizerConfig::default();
        assert_eq!(o.lr_at(0), 1e-3);
        assert_eq!(o.lr_at(9), 1e-3);
        assert_eq!(o.lr_at(10), 1e-4);
        assert_eq!(o.lr_at(19), 1e-4);
    }
}
