//! Model-based check of the negative dictionary against a naive reference.

use std::collections::{HashSet, VecDeque};

use clad::negdict::{FeatureEntry, NegativeDictionary, NegativeMode};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Enqueue { fg: usize, bg: usize, value: f64 },
    Draw { class: usize, trivial: bool, seed: u64 },
}

const CLASSES: usize = 5;

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..CLASSES, 0..CLASSES, -1.0..1.0f64).prop_map(|(fg, bg, value)| Op::Enqueue { fg, bg, value }),
        1 => (0..CLASSES, any::<bool>(), any::<u64>()).prop_map(|(class, trivial, seed)| Op::Draw { class, trivial, seed }),
    ]
}

/// Stores of (step, fg, bg), oldest first.
struct Reference {
    capacity: usize,
    stores: Vec<VecDeque<(u64, usize, usize)>>,
    step: u64,
}

impl Reference {
    fn enqueue(&mut self, fg: usize, bg: usize) -> bool {
        if fg == bg {
            return false;
        }
        let store = &mut self.stores[bg];
        if store.len() == self.capacity {
            store.pop_front();
        }
        store.push_back((self.step, fg, bg));
        self.step += 1;
        true
    }
}

proptest! {
    // 25 cases x 4000 operations = 1e5 operations
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn dictionary_matches_reference(capacity in 1usize..40, ops in prop::collection::vec(op(), 4000)) {
        let mut dict = NegativeDictionary::new(CLASSES, capacity).unwrap();
        let mut reference = Reference { capacity, stores: vec![VecDeque::new(); CLASSES], step: 0 };
        for op in ops {
            match op {
                Op::Enqueue { fg, bg, value } => {
                    let accepted = dict.enqueue(FeatureEntry::new(vec![value, 1.0], fg, bg)).is_ok();
                    prop_assert_eq!(accepted, reference.enqueue(fg, bg));
                }
                Op::Draw { class, trivial, seed } => {
                    if trivial {
                        let drawn = dict.draw(class, NegativeMode::Trivial, seed).unwrap();
                        let total: usize = reference.stores.iter().map(VecDeque::len).sum();
                        prop_assert_eq!(drawn.len(), capacity.min(total));
                        let live: HashSet<u64> = reference.stores.iter().flatten().map(|e| e.0).collect();
                        let steps: HashSet<u64> = drawn.iter().map(|e| e.step).collect();
                        prop_assert_eq!(steps.len(), drawn.len(), "duplicate draws");
                        prop_assert!(steps.is_subset(&live));
                        prop_assert_eq!(dict.draw(class, NegativeMode::Trivial, seed).unwrap(), drawn);
                    } else {
                        let drawn = dict.draw(class, NegativeMode::Keyed, 0).unwrap();
                        let got: Vec<(u64, usize, usize)> = drawn.iter().map(|e| (e.step, e.fg_label, e.bg_label)).collect();
                        let want: Vec<(u64, usize, usize)> = reference.stores[class].iter().copied().collect();
                        prop_assert_eq!(got, want);
                        prop_assert!(drawn.iter().all(|e| e.bg_label == class && e.fg_label != class));
                    }
                }
            }
            let occupancy: Vec<usize> = reference.stores.iter().map(VecDeque::len).collect();
            prop_assert_eq!(dict.occupancy(), occupancy);
            prop_assert!(dict.occupancy().iter().all(|&n| n <= capacity));
        }
    }
}
