use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AccessEvent, Prefetcher};
use crate::features::{build_model_input, FeatureConfig, InputEncoder};
use crate::labeling::{bitmap_to_deltas, prefetch_addresses, LabelConfig};
use crate::model::Model;
use crate::throttle::{binarize, top_k};
use crate::trace::{AddressConfig, MemoryAccess};

/// How confidences become prefetch requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Threshold {
        threshold: f64,
        max_degree: Option<usize>,
    },
    TopK {
        k: usize,
    },
}

/// Runs the trained predictor on the recent trigger history.
#[derive(Debug, Clone)]
pub struct ModelPrefetcher {
    model: Model,
    encoder: InputEncoder,
    features: FeatureConfig,
    labels: LabelConfig,
    addr: AddressConfig,
    selection: Selection,
    history: VecDeque<MemoryAccess>,
    window: Vec<MemoryAccess>,
    idle: u64,
    failures: u64,
}

impl ModelPrefetcher {
    /// The encoder is frozen so that inference never grows a dictionary.
    pub fn new(
        model: Model,
        mut encoder: InputEncoder,
        features: FeatureConfig,
        labels: LabelConfig,
        addr: AddressConfig,
        selection: Selection,
    ) -> Self {
        encoder.freeze();
        Self {
            model,
            encoder,
            features,
            labels,
            addr,
            selection,
            history: VecDeque::new(),
            window: Vec::new(),
            idle: 0,
            failures: 0,
        }
    }

    fn need(&self) -> usize {
        self.features.history + self.encoder.extra_history()
    }

    /// Triggers whose inference failed (reported as no prefetch).
    pub fn failures(&self) -> u64 {
        self.failures
    }
}

impl Prefetcher for ModelPrefetcher {
    fn name(&self) -> &str {
        "model"
    }

    fn observe(&mut self, event: &AccessEvent) {
        self.history.push_front(event.access);
        self.history.truncate(self.need());
    }

    fn predict(&mut self, event: &AccessEvent, out: &mut Vec<u64>) {
        if self.history.len() < self.need() {
            self.idle += 1;
            return;
        }
        self.window.clear();
        self.window.extend(self.history.iter().copied());
        let input = match build_model_input(&self.window, &mut self.encoder, &self.features, &self.addr) {
            Ok(i) => i,
            Err(_) => {
                self.failures += 1;
                return;
            }
        };
        let conf = match self.model.forward(&input) {
            Ok(c) => c,
            Err(_) => {
                self.failures += 1;
                return;
            }
        };
        let bitmap = match self.selection {
            Selection::Threshold {
                threshold,
                max_degree,
            } => binarize(&conf, threshold, max_degree),
            Selection::TopK { k } => top_k(&conf, k),
        };
        let deltas = bitmap_to_deltas(&bitmap, &self.labels);
        out.extend(prefetch_addresses(event.block, &deltas, &self.addr));
    }

    fn idle_triggers(&self) -> u64 {
        self.idle
    }
}
