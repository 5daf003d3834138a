//! Pipeline stages, run directories and manifests.
//!
//! Each stage writes into `<run_dir>/<stage>/` and finishes with a
//! `manifest.json` holding the config hash and the SHA-256 of every file
//! it read and wrote. A stage refuses to run when an upstream manifest is
//! missing (dependency error), was written under a different config
//! (staleness error), or no longer matches the files on disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use segpf_core::features::{InputEncoder, InputMode};
use segpf_core::model::{ContextMode, EpochLog, Model, TrainConfig};
use segpf_core::sim::{histogram_pairs, LatencyModel, Prefetcher, SimReport, Throughput};
use segpf_core::throttle::ThresholdReport;
use segpf_core::trace::{validate_trace, MemoryAccess, TraceSplit};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{
    file_sha256, read_checkpoint, read_dataset, read_json, read_trace, write_bytes,
    write_checkpoint, write_dataset, write_json, write_trace,
};
use crate::pipeline::{self, TestMetrics};
use crate::plot::{bar_chart, line_chart, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Gen,
    Preprocess,
    Train,
    Tune,
    Eval,
    Simulate,
    Sweep,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Gen,
        Stage::Preprocess,
        Stage::Train,
        Stage::Tune,
        Stage::Eval,
        Stage::Simulate,
        Stage::Sweep,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Tune => "tune",
            Stage::Eval => "eval",
            Stage::Simulate => "simulate",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    /// Run-relative path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// A validated config bound to its run directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
}

/// Inputs a stage has read so far.
#[derive(Default)]
struct Reads(BTreeMap<String, String>);

impl Run {
    /// Without `dir`, the run lives in `runs/<first 16 hex of the config hash>`.
    pub fn new(cfg: ExperimentConfig, dir: Option<PathBuf>) -> CliResult<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        let dir = dir.unwrap_or_else(|| PathBuf::from("runs").join(&hash[..16]));
        Ok(Self { cfg, hash, dir })
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.dir.join(stage.name())
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("manifest.json")
    }

    pub fn manifest(&self, stage: Stage) -> CliResult<Manifest> {
        read_json(&self.manifest_path(stage))
    }

    /// Upstream manifest, checked for presence and config hash.
    fn require(&self, stage: Stage, upstream: Stage) -> CliResult<Manifest> {
        let path = self.manifest_path(upstream);
        if !path.exists() {
            return Err(CliError::Dependency {
                stage: stage.name(),
                upstream: upstream.name(),
                artifact: path,
            });
        }
        let m = self.manifest(upstream)?;
        if m.config_hash != self.hash {
            return Err(CliError::Stale {
                artifact: path,
                expected: self.hash.clone(),
                found: m.config_hash,
            });
        }
        Ok(m)
    }

    /// Resolves an upstream file and checks it against its manifest.
    fn input(&self, reads: &mut Reads, upstream: &Manifest, name: &str) -> CliResult<PathBuf> {
        let rel = format!("{}/{name}", upstream.stage);
        let path = self.dir.join(&rel);
        let expected = upstream
            .outputs
            .get(&rel)
            .ok_or_else(|| CliError::format(&path, "not listed in the upstream manifest"))?;
        let actual = file_sha256(&path)?;
        if &actual != expected {
            return Err(CliError::Stale {
                artifact: path,
                expected: expected.clone(),
                found: actual,
            });
        }
        reads.0.insert(rel, actual);
        Ok(path)
    }

    fn finish(&self, stage: Stage, reads: Reads, outputs: &[PathBuf]) -> CliResult<Manifest> {
        let mut out = BTreeMap::new();
        for p in outputs {
            out.insert(self.rel(p), file_sha256(p)?);
        }
        let m = Manifest {
            stage: stage.name().into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.hash.clone(),
            inputs: reads.0,
            outputs: out,
        };
        write_json(&self.manifest_path(stage), &m)?;
        Ok(m)
    }

    fn write_config(&self) -> CliResult<()> {
        write_json(&self.dir.join("config.json"), &self.cfg)
    }

    pub fn run(&self, stage: Stage) -> CliResult<Manifest> {
        self.write_config()?;
        let dir = self.stage_dir(stage);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        match stage {
            Stage::Gen => self.gen(),
            Stage::Preprocess => self.preprocess(),
            Stage::Train => self.train(),
            Stage::Tune => self.tune(),
            Stage::Eval => self.eval(),
            Stage::Simulate => self.simulate(),
            Stage::Sweep => self.sweep(),
            Stage::Report => self.report(),
        }
    }

    pub fn run_all(&self) -> CliResult<Vec<Manifest>> {
        Stage::ALL.iter().map(|&s| self.run(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessMeta {
    pub input_mode: String,
    pub skip: usize,
    pub split: TraceSplit,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub test_samples: usize,
    pub truncated_test_samples: usize,
    pub dictionary_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub parameters: usize,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub input: String,
    pub context: ContextMode,
    pub threshold: f64,
    pub metrics: TestMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub test: TestMetrics,
    pub ablation: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub latency: u64,
    pub throughput: Throughput,
    pub distance: bool,
    pub skip: usize,
    pub report: SimReport,
}

fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,learning_rate\n");
    for l in log {
        let val = l.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", l.epoch, l.train_loss, val, l.learning_rate);
    }
    s
}

fn sim_row(r: &SimReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.coverage,
        r.accuracy,
        r.prefetches_issued,
        r.useful_prefetches,
        r.late_prefetches,
        r.useless_evicted,
        r.triggers,
        r.dropped_triggers,
        r.mean_degree
    )
}

const SIM_COLUMNS: &str =
    "coverage,accuracy,issued,useful,late,useless_evicted,triggers,dropped_triggers,mean_degree";

impl Run {
    fn gen(&self) -> CliResult<Manifest> {
        let mut reads = Reads::default();
        if let Some(p) = &self.cfg.trace.path {
            reads.0.insert(p.to_string_lossy().into_owned(), file_sha256(p)?);
        }
        let trace = pipeline::load_trace(&self.cfg)?;
        validate_trace(&trace)?;
        let out = self.stage_dir(Stage::Gen).join("trace.csv");
        write_trace(&out, &trace)?;
        self.finish(Stage::Gen, reads, &[out])
    }

    fn load_trace(&self, reads: &mut Reads, stage: Stage) -> CliResult<Vec<MemoryAccess>> {
        let gen = self.require(stage, Stage::Gen)?;
        read_trace(&self.input(reads, &gen, "trace.csv")?)
    }

    fn preprocess(&self) -> CliResult<Manifest> {
        let mut reads = Reads::default();
        let trace = self.load_trace(&mut reads, Stage::Preprocess)?;
        let split = pipeline::split(&self.cfg, &trace)?;
        let skip = if self.cfg.labels.distance {
            pipeline::skip_for(&trace, &split, self.cfg.sim.latency.cycles)
        } else {
            0
        };
        let mode = self.cfg.input_mode()?;
        let prep = pipeline::prepare(&self.cfg, &trace, &split, mode, skip)?;
        let dir = self.stage_dir(Stage::Preprocess);
        let mcfg = self.cfg.model_config(mode, self.cfg.model.context);
        let mut outs = Vec::new();
        for (name, samples) in [
            ("train.bin", &prep.train),
            ("validation.bin", &prep.validation),
            ("test.bin", &prep.test),
        ] {
            let p = dir.join(name);
            write_dataset(&p, samples, mcfg.history, mcfg.input_width, mcfg.outputs)?;
            outs.push(p);
        }
        let enc = dir.join("encoder.json");
        write_json(&enc, &prep.encoder)?;
        let meta = PreprocessMeta {
            input_mode: mode.label(),
            skip,
            split,
            train_samples: prep.train.len(),
            validation_samples: prep.validation.len(),
            test_samples: prep.test.len(),
            truncated_test_samples: prep.test.iter().filter(|s| s.truncated).count(),
            dictionary_size: prep.encoder.dictionary_size(),
        };
        let mp = dir.join("meta.json");
        write_json(&mp, &meta)?;
        outs.extend([enc, mp]);
        self.finish(Stage::Preprocess, reads, &outs)
    }

    fn meta(&self, reads: &mut Reads, stage: Stage) -> CliResult<(Manifest, PreprocessMeta)> {
        let m = self.require(stage, Stage::Preprocess)?;
        let meta = read_json(&self.input(reads, &m, "meta.json")?)?;
        Ok((m, meta))
    }

    fn train(&self) -> CliResult<Manifest> {
        let mut reads = Reads::default();
        let (pm, meta) = self.meta(&mut reads, Stage::Train)?;
        let train = read_dataset(&self.input(&mut reads, &pm, "train.bin")?)?;
        let validation = read_dataset(&self.input(&mut reads, &pm, "validation.bin")?)?;
        let mode = InputMode::parse(&meta.input_mode)?;
        let mcfg = self.cfg.model_config(mode, self.cfg.model.context);
        let tcfg = TrainConfig {
            seed: self.cfg.seed,
            ..self.cfg.train
        };
        let out = segpf_core::model::train(&mcfg, &train, &validation, &tcfg)?;
        let dir = self.stage_dir(Stage::Train);
        let ckpt = dir.join("model.ckpt");
        write_checkpoint(&ckpt, &out.model)?;
        let log = dir.join("log.csv");
        write_bytes(&log, log_csv(&out.log).as_bytes())?;
        let summary = dir.join("summary.json");
        write_json(
            &summary,
            &TrainSummary {
                best_epoch: out.best_epoch,
                epochs_run: out.log.len(),
                parameters: out.model.params.parameter_count(),
                best_val_loss: out.log.get(out.best_epoch).and_then(|l| l.val_loss),
            },
        )?;
        self.finish(Stage::Train, reads, &[ckpt, log, summary])
    }

    /// Loads the checkpoint and checks it against the current config.
    fn model(&self, reads: &mut Reads, stage: Stage, mode: InputMode) -> CliResult<Model> {
        let tm = self.require(stage, Stage::Train)?;
        let path = self.input(reads, &tm, "model.ckpt")?;
        let model = read_checkpoint(&path)?;
        if model.config != self.cfg.model_config(mode, self.cfg.model.context) {
            return Err(CliError::format(path, "checkpoint shape disagrees with the config"));
        }
        Ok(model)
    }

    fn tune(&self) -> CliResult<Manifest> {
        let mut reads = Reads::default();
        let (pm, meta) = self.meta(&mut reads, Stage::Tune)?;
        let model = self.model(&mut reads, Stage::Tune, InputMode::parse(&meta.input_mode)?)?;
        let validation = read_dataset(&self.input(&mut reads, &pm, "validation.bin")?)?;
        let report = pipeline::tune(&self.cfg, &model, &validation)?;
        let dir = self.stage_dir(Stage::Tune);
        let tp = dir.join("threshold.json");
        write_json(&tp, &report)?;
        let mut grid = String::from("threshold,precision,recall,f1\n");
        for g in &report.grid {
            let _ = writeln!(grid, "{},{},{},{}", g.threshold, g.precision, g.recall, g.f1);
        }
        let gp = dir.join("grid.csv");
        write_bytes(&gp, grid.as_bytes())?;
        self.finish(Stage::Tune, reads, &[tp, gp])
    }

    fn threshold(&self, reads: &mut Reads, stage: Stage) -> CliResult<ThresholdReport> {
        let m = self.require(stage, Stage::Tune)?;
        read_json(&self.input(reads, &m, "threshold.json")?)
    }

    fn eval(&self) -> CliResult<Manifest> {
        let mut reads = Reads::default();
        let (pm, meta) = self.meta(&mut reads, Stage::Eval)?;
        let mode = InputMode::parse(&meta.input_mode)?;
        let model = self.model(&mut reads, Stage::Eval, mode)?;
        let thr = self.threshold(&mut reads, Stage::Eval)?;
        let test = read_dataset(&self.input(&mut reads, &pm, "test.bin")?)?;
        let metrics = pipeline::evaluate(&self.cfg, &model, &test, thr.optimal_threshold)?;
        let trace = self.load_trace(&mut reads, Stage::Eval)?;

        let mut variants: Vec<(InputMode, ContextMode)> = Vec::new();
        for m in &self.cfg.eval.input_modes {
            variants.push((InputMode::parse(m)?, self.cfg.model.context));
        }
        for &c in &self.cfg.eval.context_modes {
            variants.push((mode, c));
        }
        let mut seen = Vec::new();
        variants.retain(|v| {
            let fresh = !seen.contains(v);
            seen.push(*v);
            fresh
        });
        let split = &meta.split;
        let ablation = variants
            .par_iter()
            .map(|&(m, c)| -> CliResult<AblationRow> {
                let prep = pipeline::prepare(&self.cfg, &trace, split, m, meta.skip)?;
                let t = pipeline::train_and_score(&self.cfg, &prep, c)?;
                Ok(AblationRow {
                    input: m.label(),
                    context: c,
                    threshold: t.threshold.optimal_threshold,
                    metrics: t.test,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;

        let dir = self.stage_dir(Stage::Eval);
        let rp = dir.join("metrics.json");
        write_json(
            &rp,
            &EvalReport {
                threshold: thr.optimal_threshold,
                test: metrics,
                ablation: ablation.clone(),
            },
        )?;
        let mut csv = String::from("input,context,threshold,precision,recall,f1,mean_degree\n");
        for r in &ablation {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.input,
                r.context.label(),
                r.threshold,
                r.metrics.precision,
                r.metrics.recall,
                r.metrics.f1,
                r.metrics.mean_degree
            );
        }
        let cp = dir.join("ablation.csv");
        write_bytes(&cp, csv.as_bytes())?;
        self.finish(Stage::Eval, reads, &[rp, cp])
    }

    fn simulate(&self) -> CliResult<Manifest> {
        let mut reads = Reads::default();
        let trace = self.load_trace(&mut reads, Stage::Simulate)?;
        let (pm, meta) = self.meta(&mut reads, Stage::Simulate)?;
        let mode = InputMode::parse(&meta.input_mode)?;
        let model = self.model(&mut reads, Stage::Simulate, mode)?;
        let thr = self.threshold(&mut reads, Stage::Simulate)?;
        let encoder: InputEncoder = read_json(&self.input(&mut reads, &pm, "encoder.json")?)?;

        let mut prefetchers: Vec<Box<dyn Prefetcher + Send>> = vec![Box::new(
            pipeline::model_prefetcher(&self.cfg, model, encoder, meta.skip, thr.optimal_threshold),
        )];
        prefetchers.extend(pipeline::baseline_prefetchers(&self.cfg, &trace, &meta.split));
        let latency = self.cfg.sim.latency;
        let reports = prefetchers
            .into_par_iter()
            .map(|mut p| pipeline::simulate_test(&self.cfg, &trace, &meta.split, p.as_mut(), latency))
            .collect::<CliResult<Vec<_>>>()?;

        let dir = self.stage_dir(Stage::Simulate);
        let rp = dir.join("reports.json");
        write_json(&rp, &reports)?;
        let mut csv = format!("prefetcher,{SIM_COLUMNS}\n");
        for r in &reports {
            let _ = writeln!(csv, "{},{}", r.prefetcher, sim_row(r));
        }
        let sp = dir.join("summary.csv");
        write_bytes(&sp, csv.as_bytes())?;
        let mut hist = String::from("degree,count\n");
        for (d, c) in histogram_pairs(&reports[0].degree_histogram) {
            let _ = writeln!(hist, "{d},{c}");
        }
        let hp = dir.join("degree_histogram.csv");
        write_bytes(&hp, hist.as_bytes())?;
        self.finish(Stage::Simulate, reads, &[rp, sp, hp])
    }

    fn sweep(&self) -> CliResult<Manifest> {
        let mut reads = Reads::default();
        let trace = self.load_trace(&mut reads, Stage::Sweep)?;
        let (pm, meta) = self.meta(&mut reads, Stage::Sweep)?;
        let mode = InputMode::parse(&meta.input_mode)?;
        let main_model = self.model(&mut reads, Stage::Sweep, mode)?;
        let thr = self.threshold(&mut reads, Stage::Sweep)?;
        let encoder: InputEncoder = read_json(&self.input(&mut reads, &pm, "encoder.json")?)?;
        let split = &meta.split;
        let sw = &self.cfg.sweep;

        let skip_of = |t: u64, d: bool| if d { pipeline::skip_for(&trace, split, t) } else { 0 };
        let mut skips: Vec<usize> = sw
            .distance
            .iter()
            .flat_map(|&d| sw.latencies.iter().map(move |&t| (t, d)))
            .map(|(t, d)| skip_of(t, d))
            .collect();
        skips.sort_unstable();
        skips.dedup();
        let models: BTreeMap<usize, (Model, InputEncoder, f64)> = skips
            .par_iter()
            .map(|&skip| -> CliResult<(usize, (Model, InputEncoder, f64))> {
                if skip == meta.skip {
                    return Ok((skip, (main_model.clone(), encoder.clone(), thr.optimal_threshold)));
                }
                let prep = pipeline::prepare(&self.cfg, &trace, split, mode, skip)?;
                let t = pipeline::train_and_score(&self.cfg, &prep, self.cfg.model.context)?;
                Ok((skip, (t.model, prep.encoder, t.threshold.optimal_threshold)))
            })
            .collect::<CliResult<_>>()?;

        let mut grid = Vec::new();
        for &d in &sw.distance {
            for &t in &sw.latencies {
                for &tp in &sw.throughputs {
                    grid.push((t, tp, d));
                }
            }
        }
        let points = grid
            .par_iter()
            .map(|&(t, tp, d)| -> CliResult<SweepPoint> {
                let skip = skip_of(t, d);
                let (model, enc, threshold) = models[&skip].clone();
                let mut pf = pipeline::model_prefetcher(&self.cfg, model, enc, skip, threshold);
                let latency = LatencyModel {
                    cycles: t,
                    throughput: tp,
                };
                let report = pipeline::simulate_test(&self.cfg, &trace, split, &mut pf, latency)?;
                Ok(SweepPoint {
                    latency: t,
                    throughput: tp,
                    distance: d,
                    skip,
                    report,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;

        let dir = self.stage_dir(Stage::Sweep);
        let mut outs = Vec::new();
        let mut csv = format!("latency,throughput,distance,skip,{SIM_COLUMNS}\n");
        for p in &points {
            let name = format!(
                "T{}_{}_{}.json",
                p.latency,
                p.throughput.tag(),
                if p.distance { "dist" } else { "nodist" }
            );
            let path = dir.join(name);
            write_json(&path, p)?;
            outs.push(path);
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                p.latency,
                p.throughput.tag(),
                p.distance,
                p.skip,
                sim_row(&p.report)
            );
        }
        let cp = dir.join("comparison.csv");
        write_bytes(&cp, csv.as_bytes())?;
        outs.push(cp);
        self.finish(Stage::Sweep, reads, &outs)
    }

    /// Upstream manifest if that stage has run.
    fn optional(&self, stage: Stage, upstream: Stage) -> CliResult<Option<Manifest>> {
        if self.manifest_path(upstream).exists() {
            self.require(stage, upstream).map(Some)
        } else {
            Ok(None)
        }
    }

    fn report(&self) -> CliResult<Manifest> {
        let mut reads = Reads::default();
        let thr = self.threshold(&mut reads, Stage::Report)?;
        let sm = self.require(Stage::Report, Stage::Simulate)?;
        let reports: Vec<SimReport> = read_json(&self.input(&mut reads, &sm, "reports.json")?)?;
        let eval = match self.optional(Stage::Report, Stage::Eval)? {
            Some(m) => Some(read_json::<EvalReport>(&self.input(&mut reads, &m, "metrics.json")?)?),
            None => None,
        };
        let sweep = match self.optional(Stage::Report, Stage::Sweep)? {
            Some(m) => {
                let mut pts = Vec::new();
                for name in m.outputs.keys().filter(|k| k.ends_with(".json")) {
                    let file = name.trim_start_matches("sweep/");
                    pts.push(read_json::<SweepPoint>(&self.input(&mut reads, &m, file)?)?);
                }
                Some(pts)
            }
            None => None,
        };

        let dir = self.stage_dir(Stage::Report);
        let mut outs = Vec::new();
        let mut emit = |name: &str, body: String| -> CliResult<()> {
            let p = dir.join(name);
            write_bytes(&p, body.as_bytes())?;
            outs.push(p);
            Ok(())
        };

        let f1: Vec<(f64, f64)> = thr.grid.iter().map(|g| (g.threshold, g.f1)).collect();
        let mut csv = String::from("threshold,f1\n");
        for (t, f) in &f1 {
            let _ = writeln!(csv, "{t},{f}");
        }
        emit("threshold_f1.csv", csv)?;
        emit(
            "threshold_f1.svg",
            line_chart(
                "Validation F1 by threshold",
                "threshold",
                "micro-F1",
                &[Series {
                    name: "F1".into(),
                    points: f1,
                }],
            ),
        )?;

        let model = &reports[0];
        let pairs = histogram_pairs(&model.degree_histogram);
        let mut csv = String::from("degree,count\n");
        for (d, c) in &pairs {
            let _ = writeln!(csv, "{d},{c}");
        }
        emit("degree_histogram.csv", csv)?;
        emit(
            "degree_histogram.svg",
            bar_chart(
                "Prefetch degree per trigger",
                "triggers",
                &pairs.iter().map(|(d, _)| d.to_string()).collect::<Vec<_>>(),
                &[("model".into(), pairs.iter().map(|(_, c)| *c as f64).collect())],
            ),
        )?;

        let mut csv = String::from("prefetcher,coverage,accuracy\n");
        for r in &reports {
            let _ = writeln!(csv, "{},{},{}", r.prefetcher, r.coverage, r.accuracy);
        }
        emit("coverage_accuracy.csv", csv)?;
        emit(
            "coverage_accuracy.svg",
            bar_chart(
                "Coverage and accuracy",
                "fraction",
                &reports.iter().map(|r| r.prefetcher.clone()).collect::<Vec<_>>(),
                &[
                    ("coverage".into(), reports.iter().map(|r| r.coverage).collect()),
                    ("accuracy".into(), reports.iter().map(|r| r.accuracy).collect()),
                ],
            ),
        )?;

        if let Some(points) = &sweep {
            let mut series = Vec::new();
            let mut csv = String::from("series,latency,coverage,accuracy\n");
            let mut keys: Vec<(Throughput, bool)> =
                points.iter().map(|p| (p.throughput, p.distance)).collect();
            keys.sort_by_key(|k| (k.0.tag(), !k.1));
            keys.dedup();
            for (tp, d) in keys {
                let name = format!("{} {}", tp.tag(), if d { "distance" } else { "no distance" });
                let mut pts: Vec<(f64, f64)> = Vec::new();
                for p in points.iter().filter(|p| p.throughput == tp && p.distance == d) {
                    pts.push((p.latency as f64, p.report.coverage));
                    let _ = writeln!(
                        csv,
                        "{name},{},{},{}",
                        p.latency, p.report.coverage, p.report.accuracy
                    );
                }
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                series.push(Series { name, points: pts });
            }
            emit("t_sweep.csv", csv)?;
            emit(
                "t_sweep.svg",
                line_chart("Coverage by inference latency", "T (cycles)", "coverage", &series),
            )?;
        }

        #[derive(Serialize)]
        struct Summary<'a> {
            config_hash: &'a str,
            threshold: &'a ThresholdReport,
            test: Option<&'a TestMetrics>,
            ablation: Option<&'a [AblationRow]>,
            simulation: &'a [SimReport],
            sweep: Option<Vec<(u64, &'static str, bool, f64, f64)>>,
        }
        let summary = Summary {
            config_hash: &self.hash,
            threshold: &thr,
            test: eval.as_ref().map(|e| &e.test),
            ablation: eval.as_ref().map(|e| e.ablation.as_slice()),
            simulation: &reports,
            sweep: sweep.as_ref().map(|pts| {
                pts.iter()
                    .map(|p| {
                        (
                            p.latency,
                            p.throughput.tag(),
                            p.distance,
                            p.report.coverage,
                            p.report.accuracy,
                        )
                    })
                    .collect()
            }),
        };
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        emit("summary.json", text)?;

        let mut md = format!(
            "# Run {}\n\nThreshold {:.2} (validation F1 {:.4}, mean degree {:.2})\n",
            &self.hash[..16],
            thr.optimal_threshold,
            thr.optimal_f1,
            thr.mean_degree
        );
        if let Some(e) = &eval {
            let _ = writeln!(
                md,
                "\nTest precision {:.4}, recall {:.4}, F1 {:.4}\n\n| input | context | F1 |\n|---|---|---|",
                e.test.precision, e.test.recall, e.test.f1
            );
            for r in &e.ablation {
                let _ = writeln!(md, "| {} | {} | {:.4} |", r.input, r.context.label(), r.metrics.f1);
            }
        }
        let _ = writeln!(md, "\n| prefetcher | coverage | accuracy |\n|---|---|---|");
        for r in &reports {
            let _ = writeln!(md, "| {} | {:.4} | {:.4} |", r.prefetcher, r.coverage, r.accuracy);
        }
        emit("summary.md", md)?;

        self.finish(Stage::Report, reads, &outs)
    }
}
