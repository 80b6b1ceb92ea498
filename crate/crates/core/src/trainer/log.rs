use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Seeds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_class_loss: f64,
    pub mean_con_loss: f64,
    pub lr: f64,
    pub dict_occupancy: usize,
}

/// Counters used to check that each loss variant does what it claims.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instrumentation {
    pub batches: u64,
    pub positives_built: u64,
    pub positive_class_evaluations: u64,
    pub contrastive_evaluations: u64,
    pub dictionary_draws: u64,
    pub dictionary_enqueues: u64,
    pub warmup_anchors: u64,
    pub degenerate_anchors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub fingerprint: String,
    pub seeds: Seeds,
    pub epochs: Vec<EpochRecord>,
    pub counters: Instrumentation,
    /// Total dictionary occupancy after every batch.
    pub occupancy_trace: Vec<usize>,
}

impl TrainLog {
    pub fn new(cfg: &RunConfig) -> Self {
        TrainLog {
            fingerprint: cfg.fingerprint(),
            seeds: cfg.seeds,
            epochs: Vec::new(),
            counters: Instrumentation::default(),
            occupancy_trace: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let s = &self.seeds;
        let mut out = format!(
            "# fingerprint: {}\n# seeds: init={} data={} augment={}\nepoch,mean_class_loss,mean_con_loss,lr,dict_occupancy\n",
            self.fingerprint, s.init, s.data, s.augment
        );
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.mean_class_loss, r.mean_con_loss, r.lr, r.dict_occupancy
            ));
        }
        out
    }
}
