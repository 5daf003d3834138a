//! In-memory experiment steps shared by the CLI stages and the tests.

use segpf_core::dataset::{build_samples, Sample};
use segpf_core::features::{InputEncoder, InputMode};
use segpf_core::labeling::distance_skip;
use segpf_core::model::{ContextMode, Model, TrainConfig, TrainOutcome};
use segpf_core::sim::{
    simulate, BestOffsetPrefetcher, LatencyModel, ModelPrefetcher, NextLinePrefetcher,
    NoPrefetcher, OraclePrefetcher, Prefetcher, Selection, SimConfig, SimReport,
    StridePrefetcher,
};
use segpf_core::throttle::{confidences, labels_of, micro_metrics, tune_model_threshold, ThresholdReport};
use segpf_core::trace::{generate_trace, mean_cycles_per_access, split_trace, MemoryAccess, TraceSplit};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::read_trace;

/// Reads the configured trace file or runs the generator.
pub fn load_trace(cfg: &ExperimentConfig) -> CliResult<Vec<MemoryAccess>> {
    match &cfg.trace.path {
        Some(p) => read_trace(p),
        None => Ok(generate_trace(
            &cfg.trace.pattern,
            cfg.trace.length,
            cfg.seed,
            &cfg.address,
        )?),
    }
}

pub fn split(cfg: &ExperimentConfig, trace: &[MemoryAccess]) -> CliResult<TraceSplit> {
    Ok(split_trace(trace.len(), cfg.split)?)
}

/// Label skip for distance prefetching at `latency_cycles`, from the
/// training split's access rate.
pub fn skip_for(trace: &[MemoryAccess], split: &TraceSplit, latency_cycles: u64) -> usize {
    let cpa = mean_cycles_per_access(&trace[split.train.clone()]);
    distance_skip(latency_cycles, cpa)
}

/// Encoded train/validation/test samples. The encoder dictionary is frozen
/// after the training split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mode: InputMode,
    pub skip: usize,
    pub encoder: InputEncoder,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn prepare(
    cfg: &ExperimentConfig,
    trace: &[MemoryAccess],
    split: &TraceSplit,
    mode: InputMode,
    skip: usize,
) -> CliResult<Prepared> {
    let features = cfg.feature_config();
    let labels = cfg.label_config(skip);
    let mut encoder = cfg.encoder(mode);
    let build = |range, enc: &mut InputEncoder| {
        build_samples(trace, range, enc, &features, &labels, &cfg.address)
    };
    let train = build(split.train.clone(), &mut encoder)?;
    encoder.freeze();
    let validation = build(split.validation.clone(), &mut encoder)?;
    let test = build(split.test.clone(), &mut encoder)?;
    if train.is_empty() || validation.is_empty() || test.is_empty() {
        return Err(CliError::Config(
            "a split is shorter than the history window".into(),
        ));
    }
    Ok(Prepared {
        mode,
        skip,
        encoder,
        train,
        validation,
        test,
    })
}

pub fn train_model(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    context: ContextMode,
) -> CliResult<TrainOutcome> {
    let model_cfg = cfg.model_config(prep.mode, context);
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    Ok(segpf_core::model::train(
        &model_cfg,
        &prep.train,
        &prep.validation,
        &train_cfg,
    )?)
}

pub fn tune(cfg: &ExperimentConfig, model: &Model, validation: &[Sample]) -> CliResult<ThresholdReport> {
    Ok(tune_model_threshold(
        model,
        validation,
        cfg.throttle.grid_step,
        cfg.throttle.max_degree,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_degree: f64,
    pub samples: usize,
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &Model,
    samples: &[Sample],
    threshold: f64,
) -> CliResult<TestMetrics> {
    let confs = confidences(model, samples)?;
    let (m, predicted) = micro_metrics(&confs, &labels_of(samples), threshold, cfg.throttle.max_degree);
    Ok(TestMetrics {
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        mean_degree: predicted as f64 / samples.len().max(1) as f64,
        samples: samples.len(),
    })
}

/// One trained and tuned predictor.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub threshold: ThresholdReport,
    pub test: TestMetrics,
    pub log: Vec<segpf_core::model::EpochLog>,
}

pub fn train_and_score(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    context: ContextMode,
) -> CliResult<Trained> {
    let out = train_model(cfg, prep, context)?;
    let threshold = tune(cfg, &out.model, &prep.validation)?;
    let test = evaluate(cfg, &out.model, &prep.test, threshold.optimal_threshold)?;
    Ok(Trained {
        model: out.model,
        threshold,
        test,
        log: out.log,
    })
}

pub fn selection(cfg: &ExperimentConfig, threshold: f64) -> Selection {
    match cfg.throttle.top_k {
        Some(k) => Selection::TopK { k },
        None => Selection::Threshold {
            threshold,
            max_degree: cfg.throttle.max_degree,
        },
    }
}

pub fn model_prefetcher(
    cfg: &ExperimentConfig,
    model: Model,
    encoder: InputEncoder,
    skip: usize,
    threshold: f64,
) -> ModelPrefetcher {
    ModelPrefetcher::new(
        model,
        encoder,
        cfg.feature_config(),
        cfg.label_config(skip),
        cfg.address,
        selection(cfg, threshold),
    )
}

/// Replays the test split through `prefetcher` at the given latency.
pub fn simulate_test<P: Prefetcher + ?Sized>(
    cfg: &ExperimentConfig,
    trace: &[MemoryAccess],
    split: &TraceSplit,
    prefetcher: &mut P,
    latency: LatencyModel,
) -> CliResult<SimReport> {
    let sim = SimConfig {
        latency,
        ..cfg.sim
    };
    Ok(simulate(&trace[split.test.clone()], prefetcher, &sim, &cfg.address)?)
}

/// Reference prefetchers compared against the model.
pub fn baseline_prefetchers(
    cfg: &ExperimentConfig,
    trace: &[MemoryAccess],
    split: &TraceSplit,
) -> Vec<Box<dyn Prefetcher + Send>> {
    let blocks: Vec<u64> = trace[split.test.clone()]
        .iter()
        .map(|a| cfg.address.block_address(a.vaddr))
        .collect();
    vec![
        Box::new(NoPrefetcher),
        Box::new(NextLinePrefetcher::new(1)),
        Box::new(StridePrefetcher::default()),
        Box::new(BestOffsetPrefetcher::default()),
        Box::new(OraclePrefetcher::new(blocks, cfg.labels.window)),
    ]
}
