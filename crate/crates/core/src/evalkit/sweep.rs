use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::MetricsReport;
use crate::error::{CladError, Result};
use crate::negdict::NegativeMode;
use crate::synthgen::Variant;
use crate::trainer::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    QueueSize,
    NegativeMode,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::QueueSize => "queue_size",
            SweepAxis::NegativeMode => "negative_mode",
        }
    }

    /// Set this axis of `cfg` to `value`.
    pub fn apply(self, cfg: &mut RunConfig, value: &str) -> Result<()> {
        let bad = || CladError::Config(format!("invalid {} value {value:?}", self.name()));
        match self {
            SweepAxis::Lambda => cfg.loss.lambda = value.trim().parse().map_err(|_| bad())?,
            SweepAxis::QueueSize => cfg.queue_size = value.trim().parse().map_err(|_| bad())?,
            SweepAxis::NegativeMode => {
                cfg.negative_mode = match value.trim() {
                    "keyed" => NegativeMode::Keyed,
                    "trivial" => NegativeMode::Trivial,
                    _ => return Err(bad()),
                }
            }
        }
        cfg.validate()
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = CladError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "queue_size" => Ok(SweepAxis::QueueSize),
            "negative_mode" => Ok(SweepAxis::NegativeMode),
            _ => Err(CladError::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// Seed-mean result for one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    /// `None` when any seed failed.
    pub report: Option<MetricsReport>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub fingerprint: String,
    pub seeds: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, value: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# fingerprint: {}\n# seeds: {}\n{},status,original,only_fg,only_bg_t,mixed_same,mixed_rand,bg_gap,feature_similarity,decision_consistency,corner_crop_drop\n",
            self.fingerprint, self.seeds, self.axis
        );
        for row in &self.rows {
            match &row.report {
                Some(r) => {
                    out.push_str(&format!("{},ok", row.value));
                    for v in Variant::ALL {
                        out.push_str(&format!(",{}", r.accuracy.get(v)));
                    }
                    out.push_str(&format!(
                        ",{},{},{},{}\n",
                        r.bg_gap, r.feature_similarity, r.decision_consistency, r.corner_crop_drop
                    ));
                }
                None => out.push_str(&format!("{},failed,,,,,,,,,\n", row.value)),
            }
        }
        out
    }
}

/// Train and evaluate every (value, seed) cell with `runner`; seed `k` uses
/// `base.seeds.offset(k)`. Failed cells mark their row failed.
pub fn ablation_sweep<F>(base: &RunConfig, axis: SweepAxis, values: &[String], seeds: usize, runner: F) -> Result<SweepTable>
where
    F: Fn(&RunConfig) -> Result<MetricsReport> + Sync,
{
    if values.is_empty() || seeds == 0 {
        return Err(CladError::Config("a sweep needs at least one value and one seed".into()));
    }
    let mut cells = Vec::new();
    for (vi, value) in values.iter().enumerate() {
        for k in 0..seeds {
            let mut cfg = base.clone();
            axis.apply(&mut cfg, value)?;
            cfg.seeds = base.seeds.offset(k as u64);
            cells.push((vi, cfg));
        }
    }
    let results: Vec<Result<MetricsReport>> = cells.par_iter().map(|(_, cfg)| runner(cfg)).collect();

    let mut rows = Vec::new();
    for (vi, value) in values.iter().enumerate() {
        let mut reports = Vec::new();
        let mut errors = Vec::new();
        for ((cell_vi, _), res) in cells.iter().zip(&results) {
            if *cell_vi != vi {
                continue;
            }
            match res {
                Ok(r) => reports.push(r.clone()),
                Err(e) => {
                    log::error!("sweep {axis}={value}: {e}");
                    errors.push(e.to_string());
                }
            }
        }
        let report = if errors.is_empty() {
            Some(MetricsReport::mean(&format!("{axis}={value}"), &base.fingerprint(), &reports)?)
        } else {
            None
        };
        rows.push(SweepRow {
            value: value.clone(),
            report,
            errors,
        });
    }
    Ok(SweepTable {
        axis,
        fingerprint: base.fingerprint(),
        seeds,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::VariantAccuracy;

    fn fake(cfg: &RunConfig) -> Result<MetricsReport> {
        if cfg.loss.lambda > 3.0 {
            return Err(CladError::numeric("fc.weight", "diverged"));
        }
        let r = 0.5 + 0.1 * cfg.loss.lambda + 0.01 * cfg.seeds.init as f64;
        let acc = VariantAccuracy {
            original: 0.9,
            only_fg: 0.5,
            only_bg_t: 0.2,
            mixed_same: 0.9,
            mixed_rand: r,
        };
        Ok(MetricsReport {
            model: "fake".into(),
            fingerprint: cfg.fingerprint(),
            seeds: vec![cfg.seeds],
            accuracy: acc,
            bg_gap: acc.mixed_same - acc.mixed_rand,
            feature_similarity: 0.8,
            feature_similarity_excluded: 0,
            decision_consistency: 0.7,
            corner_crop_drop: 1.0,
        })
    }

    #[test]
    fn rows_are_seed_means_and_failures_do_not_stop_the_sweep() {
        let values: Vec<String> = ["0", "1", "4"].iter().map(|s| s.to_string()).collect();
        let t = ablation_sweep(&RunConfig::default(), SweepAxis::Lambda, &values, 3, fake).unwrap();
        assert_eq!(t.rows.len(), 3);
        // seeds.init = 1, 2, 3 -> mean offset 0.02
        let r0 = t.row("0").unwrap().report.as_ref().unwrap();
        assert!((r0.accuracy.mixed_rand - 0.52).abs() < 1e-12);
        assert_eq!(r0.seeds.len(), 3);
        assert!(t.row("4").unwrap().report.is_none());
        assert_eq!(t.row("4").unwrap().errors.len(), 3);
        let csv = t.to_csv();
        assert!(csv.contains("\n4,failed"));
        assert!(csv.lines().nth(2).unwrap().starts_with("lambda,status"));
    }

    #[test]
    fn axis_values_are_validated() {
        assert!(SweepAxis::Lambda.apply(&mut RunConfig::default(), "-1").is_err());
        assert!(SweepAxis::NegativeMode.apply(&mut RunConfig::default(), "random").is_err());
        let mut cfg = RunConfig::default();
        SweepAxis::QueueSize.apply(&mut cfg, "8").unwrap();
        assert_eq!(cfg.queue_size, 8);
        assert!("speed".parse::<SweepAxis>().is_err());
    }
}
