//! Background-keyed negative-sample dictionary.
//!
//! One FIFO store per background class. Generated positives are filed under
//! their background label; an anchor of class `k` draws every entry of store
//! `k`, i.e. images that share its background class but show another
//! foreground. Stored embeddings are detached snapshots.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{CladError, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub embedding: Vec<f64>,
    pub fg_label: usize,
    pub bg_label: usize,
    /// Insertion counter, assigned by the dictionary.
    pub step: u64,
}

impl FeatureEntry {
    pub fn new(embedding: Vec<f64>, fg_label: usize, bg_label: usize) -> Self {
        FeatureEntry {
            embedding,
            fg_label,
            bg_label,
            step: 0,
        }
    }
}

/// How negatives are selected for an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Every entry of the store keyed by the anchor's class.
    Keyed,
    /// Up to `capacity` entries sampled uniformly across all stores.
    Trivial,
}

#[derive(Debug, Clone, Serialize)]
pub struct NegativeDictionary {
    capacity: usize,
    stores: Vec<VecDeque<Arc<FeatureEntry>>>,
    next_step: u64,
}

impl NegativeDictionary {
    pub fn new(num_classes: usize, capacity: usize) -> Result<Self> {
        if num_classes < 2 || capacity == 0 {
            return Err(CladError::Config(format!(
                "dictionary needs >= 2 classes and positive capacity, got {num_classes} / {capacity}"
            )));
        }
        Ok(NegativeDictionary {
            capacity,
            stores: vec![VecDeque::with_capacity(capacity); num_classes],
            next_step: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.stores.len()
    }

    /// Entries of one store, oldest first.
    pub fn store(&self, class: usize) -> impl Iterator<Item = &FeatureEntry> {
        self.stores[class].iter().map(|e| e.as_ref())
    }

    pub fn occupancy(&self) -> Vec<usize> {
        self.stores.iter().map(VecDeque::len).collect()
    }

    pub fn total(&self) -> usize {
        self.stores.iter().map(VecDeque::len).sum()
    }

    /// File `entry` under its background label, evicting the oldest entry of a full store.
    pub fn enqueue(&mut self, mut entry: FeatureEntry) -> Result<()> {
        let c = self.stores.len();
        if entry.bg_label >= c || entry.fg_label >= c {
            return Err(CladError::Contract(format!(
                "entry labels fg={} bg={} out of range",
                entry.fg_label, entry.bg_label
            )));
        }
        if entry.fg_label == entry.bg_label {
            return Err(CladError::Contract(format!(
                "entry has coupled labels fg = bg = {}",
                entry.fg_label
            )));
        }
        if entry.embedding.iter().any(|v| !v.is_finite()) {
            return Err(CladError::Contract("entry embedding is not finite".into()));
        }
        entry.step = self.next_step;
        self.next_step += 1;
        let store = &mut self.stores[entry.bg_label];
        if store.len() == self.capacity {
            store.pop_front();
        }
        store.push_back(Arc::new(entry));
        Ok(())
    }

    /// Negatives for an anchor whose foreground class is `anchor_class`.
    pub fn draw(&self, anchor_class: usize, mode: NegativeMode, seed: u64) -> Result<Vec<Arc<FeatureEntry>>> {
        if anchor_class >= self.stores.len() {
            return Err(CladError::Contract(format!("anchor class {anchor_class} out of range")));
        }
        let drawn: Vec<Arc<FeatureEntry>> = match mode {
            NegativeMode::Keyed => self.stores[anchor_class].iter().cloned().collect(),
            NegativeMode::Trivial => {
                let total = self.total();
                let k = self.capacity.min(total);
                let mut rng = stream(seed, &[tag("trivial-draw")]);
                let mut picks = index::sample(&mut rng, total, k).into_vec();
                picks.sort_unstable();
                let flat: Vec<&Arc<FeatureEntry>> = self.stores.iter().flatten().collect();
                picks.into_iter().map(|i| Arc::clone(flat[i])).collect()
            }
        };
        if mode == NegativeMode::Keyed {
            debug_assert!(drawn
                .iter()
                .all(|e| e.bg_label == anchor_class && e.fg_label != anchor_class));
        }
        Ok(drawn)
    }

    /// Pretty JSON dump for inspection.
    pub fn dump_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
