use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{accuracy, bg_gap_from_accuracies, corner_crop_drop, decision_consistency, feature_similarity};
use crate::error::{CladError, Result};
use crate::netcore::Classifier;
use crate::rng::{derive_seed, tag};
use crate::scalar::Scalar;
use crate::synthgen::{make_variant, read_dataset, Variant, VariantSet};
use crate::trainer::Seeds;

/// The five test variants built from one held-out split.
#[derive(Debug, Clone)]
pub struct EvalSuite {
    sets: Vec<VariantSet>,
}

impl EvalSuite {
    /// Derive every variant from an `Original` test split.
    pub fn from_original(test: &VariantSet, seed: u64) -> Result<Self> {
        let sets = Variant::ALL
            .iter()
            .map(|&v| match v {
                Variant::Original => Ok(test.clone()),
                _ => make_variant(test, v, derive_seed(seed, &[tag("eval-variants")])),
            })
            .collect::<Result<_>>()?;
        Ok(EvalSuite { sets })
    }

    /// Read `dir/<variant>/` for each variant.
    pub fn load(dir: &Path) -> Result<Self> {
        let sets: Vec<VariantSet> = Variant::ALL
            .iter()
            .map(|v| read_dataset(&dir.join(v.dir_name())))
            .collect::<Result<_>>()?;
        for (set, v) in sets.iter().zip(Variant::ALL) {
            if set.variant != v {
                return Err(CladError::Validation {
                    id: 0,
                    reason: format!("directory {} holds a {} set", v.dir_name(), set.variant),
                });
            }
        }
        Ok(EvalSuite { sets })
    }

    pub fn get(&self, v: Variant) -> &VariantSet {
        &self.sets[Variant::ALL.iter().position(|&x| x == v).expect("all variants present")]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantAccuracy {
    pub original: f64,
    pub only_fg: f64,
    pub only_bg_t: f64,
    pub mixed_same: f64,
    pub mixed_rand: f64,
}

impl VariantAccuracy {
    pub fn get(&self, v: Variant) -> f64 {
        match v {
            Variant::Original => self.original,
            Variant::OnlyFg => self.only_fg,
            Variant::OnlyBgT => self.only_bg_t,
            Variant::MixedSame => self.mixed_same,
            Variant::MixedRand => self.mixed_rand,
        }
    }

    fn get_mut(&mut self, v: Variant) -> &mut f64 {
        match v {
            Variant::Original => &mut self.original,
            Variant::OnlyFg => &mut self.only_fg,
            Variant::OnlyBgT => &mut self.only_bg_t,
            Variant::MixedSame => &mut self.mixed_same,
            Variant::MixedRand => &mut self.mixed_rand,
        }
    }
}

/// Everything measured for one model (or the mean over seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub fingerprint: String,
    pub seeds: Vec<Seeds>,
    pub accuracy: VariantAccuracy,
    pub bg_gap: f64,
    /// Mean cosine similarity of Original / MixedRand feature pairs.
    pub feature_similarity: f64,
    pub feature_similarity_excluded: usize,
    /// Fraction of Original / MixedRand pairs with the same prediction.
    pub decision_consistency: f64,
    /// Mean accuracy drop (points) over the five crops of the Original set.
    pub corner_crop_drop: f64,
}

impl MetricsReport {
    fn check(&self) -> Result<()> {
        let recomputed = bg_gap_from_accuracies(self.accuracy.mixed_same, self.accuracy.mixed_rand);
        if self.bg_gap != recomputed {
            return Err(CladError::Invariant(format!("bg_gap {} != {}", self.bg_gap, recomputed)));
        }
        if Variant::ALL.iter().any(|&v| !(0.0..=1.0).contains(&self.accuracy.get(v))) {
            return Err(CladError::Invariant("accuracy outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Seed mean; `bg_gap` is recomputed from the mean accuracies.
    pub fn mean(model: &str, fingerprint: &str, reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(CladError::UndefinedMetric("mean of zero reports".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mut acc = VariantAccuracy::default();
        for v in Variant::ALL {
            *acc.get_mut(v) = avg(&|r| r.accuracy.get(v));
        }
        let out = MetricsReport {
            model: model.to_string(),
            fingerprint: fingerprint.to_string(),
            seeds: reports.iter().flat_map(|r| r.seeds.clone()).collect(),
            accuracy: acc,
            bg_gap: bg_gap_from_accuracies(acc.mixed_same, acc.mixed_rand),
            feature_similarity: avg(&|r| r.feature_similarity),
            feature_similarity_excluded: reports.iter().map(|r| r.feature_similarity_excluded).sum(),
            decision_consistency: avg(&|r| r.decision_consistency),
            corner_crop_drop: avg(&|r| r.corner_crop_drop),
        };
        out.check()?;
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub const CSV_HEADER: &'static str = "model,variant,accuracy,bg_gap,feature_similarity,decision_consistency,corner_crop_drop";

    /// One row per variant, without the header.
    pub fn csv_rows(&self) -> String {
        Variant::ALL
            .iter()
            .map(|&v| {
                format!(
                    "{},{},{},{},{},{},{}\n",
                    self.model,
                    v.name(),
                    self.accuracy.get(v),
                    self.bg_gap,
                    self.feature_similarity,
                    self.decision_consistency,
                    self.corner_crop_drop
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        format!("# fingerprint: {}\n{}\n{}", self.fingerprint, Self::CSV_HEADER, self.csv_rows())
    }
}

/// Measure `model` on every variant of `suite`.
pub fn evaluate<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    suite: &EvalSuite,
    name: &str,
    fingerprint: &str,
    seeds: Option<Seeds>,
) -> Result<MetricsReport> {
    let mut acc = VariantAccuracy::default();
    for v in Variant::ALL {
        *acc.get_mut(v) = accuracy(model, suite.get(v))?;
    }
    let original = suite.get(Variant::Original);
    let rand = suite.get(Variant::MixedRand);
    let fs = feature_similarity(model, original, rand)?;
    let report = MetricsReport {
        model: name.to_string(),
        fingerprint: fingerprint.to_string(),
        seeds: seeds.into_iter().collect(),
        accuracy: acc,
        bg_gap: bg_gap_from_accuracies(acc.mixed_same, acc.mixed_rand),
        feature_similarity: fs.mean,
        feature_similarity_excluded: fs.excluded,
        decision_consistency: decision_consistency(model, original, rand)?,
        corner_crop_drop: corner_crop_drop(model, original)?.mean_drop,
    };
    report.check()?;
    Ok(report)
}
