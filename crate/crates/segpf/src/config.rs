//! Experiment configuration (TOML). Every field has a default; the model
//! output width, history length and input width are derived from the
//! label, feature and input-mode sections so they cannot disagree.

use std::path::{Path, PathBuf};

use segpf_core::features::{
    FeatureConfig, InputEncoder, InputMode, OverflowPolicy, SegmentationConfig,
};
use segpf_core::labeling::LabelConfig;
use segpf_core::model::{ContextMode, ModelConfig, TrainConfig};
use segpf_core::sim::{SimConfig, Throughput};
use segpf_core::throttle::threshold_grid;
use segpf_core::trace::{AddressConfig, Pattern, PatternSpec, SplitRatios};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    /// Trace file to use instead of the generator.
    pub path: Option<PathBuf>,
    /// Generated trace length.
    pub length: usize,
    pub pattern: PatternSpec,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self {
            path: None,
            length: 20_000,
            pattern: PatternSpec::new(Pattern::Stride {
                stride: 3,
                start_block: 1 << 24,
                period: None,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub history: usize,
    pub hash_bits: u32,
    /// `as<bits>`, `delta` or `page_offset`.
    pub input: String,
    /// Dictionary size for the tokenized inputs.
    pub token_capacity: usize,
    pub overflow: OverflowPolicy,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            history: 9,
            hash_bits: 16,
            input: "as6".into(),
            token_capacity: 256,
            overflow: OverflowPolicy::MapToOov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub window: usize,
    pub bound: u32,
    /// Skip the accesses covered by the inference latency when labeling.
    pub distance: bool,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            window: 128,
            bound: 128,
            distance: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_mult: usize,
    pub context: ContextMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            dim: d.dim,
            heads: d.heads,
            layers: d.layers,
            ffn_mult: d.ffn_mult,
            context: d.context,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThrottleSection {
    pub grid_step: f64,
    pub max_degree: Option<usize>,
    /// Use the `k` most confident deltas instead of the tuned threshold.
    pub top_k: Option<usize>,
}

impl Default for ThrottleSection {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            max_degree: None,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub input_modes: Vec<String>,
    pub context_modes: Vec<ContextMode>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            input_modes: ["delta", "page_offset", "as1", "as4", "as6", "as8", "as12", "as16"]
                .map(String::from)
                .to_vec(),
            context_modes: vec![
                ContextMode::None,
                ContextMode::Pc,
                ContextMode::PageDistance,
                ContextMode::Both,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub latencies: Vec<u64>,
    pub throughputs: Vec<Throughput>,
    pub distance: Vec<bool>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            latencies: vec![0, 50, 100, 200],
            throughputs: vec![Throughput::Low, Throughput::High],
            distance: vec![true, false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub address: AddressConfig,
    pub trace: TraceSection,
    pub split: SplitRatios,
    pub features: FeatureSection,
    pub labels: LabelSection,
    pub model: ModelSection,
    /// `train.seed` is replaced by the top-level seed.
    pub train: TrainConfig,
    pub throttle: ThrottleSection,
    pub sim: SimConfig,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            address: AddressConfig::default(),
            trace: TraceSection::default(),
            split: SplitRatios::default(),
            features: FeatureSection::default(),
            labels: LabelSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            throttle: ThrottleSection::default(),
            sim: SimConfig::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

fn cfg_err(e: segpf_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative trace paths are relative to the config file
        if let (Some(p), Some(dir)) = (&cfg.trace.path, path.parent()) {
            if p.is_relative() {
                cfg.trace.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Cross-field validation, run before any stage.
    pub fn validate(&self) -> CliResult<()> {
        self.address.validate().map_err(cfg_err)?;
        self.split.validate().map_err(cfg_err)?;
        self.feature_config().validate().map_err(cfg_err)?;
        self.label_config(0).validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        threshold_grid(self.throttle.grid_step).map_err(cfg_err)?;
        self.sim.cache.validate(&self.address).map_err(cfg_err)?;
        if self.trace.path.is_none() {
            self.trace.pattern.validate().map_err(cfg_err)?;
            if self.trace.length < 3 {
                return Err(CliError::Config("trace.length must be at least 3".into()));
            }
        }
        if self.features.token_capacity == 0 {
            return Err(CliError::Config("features.token_capacity must be positive".into()));
        }
        if self.throttle.top_k == Some(0) || self.throttle.max_degree == Some(0) {
            return Err(CliError::Config("degree limits must be positive".into()));
        }
        let mut modes = vec![self.input_mode()?];
        for m in &self.eval.input_modes {
            modes.push(InputMode::parse(m).map_err(cfg_err)?);
        }
        for mode in modes {
            if let InputMode::Segments { bits } = mode {
                SegmentationConfig::new(bits)
                    .validate(&self.address)
                    .map_err(cfg_err)?;
            }
            self.model_config(mode, self.model.context)
                .validate()
                .map_err(cfg_err)?;
        }
        if self.sweep.latencies.is_empty()
            || self.sweep.throughputs.is_empty()
            || self.sweep.distance.is_empty()
        {
            return Err(CliError::Config("sweep axes must be non-empty".into()));
        }
        Ok(())
    }

    pub fn input_mode(&self) -> CliResult<InputMode> {
        InputMode::parse(&self.features.input).map_err(cfg_err)
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            history: self.features.history,
            hash_bits: self.features.hash_bits,
        }
    }

    pub fn label_config(&self, skip: usize) -> LabelConfig {
        LabelConfig {
            window: self.labels.window,
            bound: self.labels.bound,
            skip,
        }
    }

    pub fn encoder(&self, mode: InputMode) -> InputEncoder {
        InputEncoder::new(mode, self.features.token_capacity, self.features.overflow)
    }

    pub fn model_config(&self, mode: InputMode, context: ContextMode) -> ModelConfig {
        ModelConfig {
            dim: self.model.dim,
            heads: self.model.heads,
            layers: self.model.layers,
            outputs: self.label_config(0).bitmap_bits(),
            history: self.features.history,
            input_width: self.encoder(mode).row_width(&self.address),
            ffn_mult: self.model.ffn_mult,
            context,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_table() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.labels.bound, 128);
        assert_eq!(c.label_config(0).bitmap_bits(), 256);
        assert_eq!(c.features.history, 9);
        assert_eq!(c.labels.window, 128);
        assert_eq!((c.model.dim, c.model.heads, c.model.layers), (128, 4, 2));
        let m = c.model_config(c.input_mode().unwrap(), c.model.context);
        assert_eq!((m.outputs, m.history, m.input_width), (256, 9, 10));
    }

    #[test]
    fn parses_partial_toml() {
        let c = ExperimentConfig::from_toml(
            r#"
            seed = 7
            [trace]
            length = 500
            [trace.pattern]
            kind = "page_skip"
            deltas = [1, 70]
            start_block = 4096
            cycles_per_access = 10
            [model]
            dim = 16
            context = "pc"
            [sim.latency]
            cycles = 50
            throughput = "L"
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.trace.pattern.cycles_per_access, 10);
        assert_eq!(c.sim.latency.throughput, Throughput::Low);
        assert_eq!(c.model.context, ContextMode::Pc);
        assert_eq!(c.features.history, 9);
    }

    #[test]
    fn rejects_unknown_and_inconsistent_fields() {
        assert!(ExperimentConfig::from_toml("[model]\nwidth = 3\n").is_err());
        let c = ExperimentConfig::from_toml("[model]\ndim = 10\nheads = 4\n").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let c = ExperimentConfig::from_toml("[features]\ninput = \"as0\"\n").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_toml("[throttle]\ngrid_step = 1.5\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = a.clone().with_seed(1);
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
