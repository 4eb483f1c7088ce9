//! Cross-validation, grid search and result tables.

mod folds;
pub mod manifest;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::load_tu_dataset;
use crate::error::{Error, Result};
use crate::labelling::Procedure;
use crate::models::train::{trace_csv, DEFAULT_BATCH};
use crate::models::{
    evaluate, train, CapsNetConfig, Classifier, LossMode, Model, Preset, TrainConfig,
};
use crate::nn::loss::DEFAULT_LAMBDA;
use crate::nn::routing::DEFAULT_ROUTING_ITERS;
use crate::nn::AdamConfig;
use crate::rng;
use crate::tensorizer::{default_width, load_or_build, CacheState, GraphTensor, TensorizeConfig, DEFAULT_K};

pub use folds::{kfold_split, training_indices};
pub use manifest::RunManifest;
pub use report::{emit_report, population_std};

/// The four PTC sub-datasets reported together as "PTC".
pub const PTC_PARTS: [&str; 4] = ["PTC_MM", "PTC_FM", "PTC_MR", "PTC_FR"];

const FOLD_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub labelling: Procedure,
    pub model: Classifier,
    pub preset: Preset,
    /// Number of receptive fields; the rounded average graph size if unset.
    pub w: Option<usize>,
    pub k: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub routing_iters: usize,
    pub loss_mode: LossMode,
    pub folds: usize,
    pub seed: u64,
    /// Randomly permute node ids before tensorization.
    pub permute: bool,
    /// Dataset the hyper-parameters were tuned on.
    pub tuned_on: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_preset("MUTAG", Preset::Paper)
    }
}

impl ExperimentConfig {
    pub fn for_preset(dataset: &str, preset: Preset) -> Self {
        Self {
            dataset: dataset.to_string(),
            labelling: Procedure::Betweenness,
            model: Classifier::Capsules,
            preset,
            w: None,
            k: DEFAULT_K,
            epochs: 30,
            base_lr: 0.001,
            lr_decay: 0.05,
            batch_size: DEFAULT_BATCH,
            lambda: DEFAULT_LAMBDA,
            alpha: 1.0,
            routing_iters: DEFAULT_ROUTING_ITERS,
            loss_mode: LossMode::Auto,
            folds: 10,
            seed: 1,
            permute: true,
            tuned_on: Some("MUTAG".to_string()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.k == 0 || self.w == Some(0) || self.batch_size == 0 {
            return Err(Error::Config("w, k and batch size must be positive".into()));
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} and decay {} must be positive",
                self.base_lr, self.lr_decay
            )));
        }
        if self.routing_iters == 0 {
            return Err(Error::Config("routing iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn caps_config(&self) -> CapsNetConfig {
        CapsNetConfig {
            routing_iters: self.routing_iters,
            lambda: self.lambda,
            alpha: self.alpha,
            loss_mode: self.loss_mode,
            ..CapsNetConfig::preset(self.preset)
        }
    }

    /// Row label such as "BC + Capsules".
    pub fn variant(&self) -> String {
        format!("{} + {}", self.labelling.display_name(), self.model.display_name())
    }

    /// Digest of every setting that influences a fold's outcome.
    pub fn key(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

/// Where inputs are read from and outputs written to.
#[derive(Debug, Clone)]
pub struct RunEnv {
    pub data_root: PathBuf,
    pub cache_dir: PathBuf,
    pub force_cache: bool,
    /// Per-fold files, traces and tables go here when set.
    pub out_dir: Option<PathBuf>,
}

impl RunEnv {
    pub fn new(data_root: impl Into<PathBuf>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            cache_dir: cache_dir.into(),
            force_cache: false,
            out_dir: None,
        }
    }

    fn sub(&self, name: &str) -> RunEnv {
        RunEnv {
            out_dir: self.out_dir.as_ref().map(|d| d.join(name)),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub train_seconds: f64,
    pub final_loss: f64,
    /// Config digest; a stored fold is only reused when it matches.
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: String,
    pub variant: String,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub train_seconds: Vec<f64>,
    pub train_seconds_mean: f64,
    pub train_seconds_std: f64,
    pub tensorize_seconds: f64,
    pub cache: String,
    pub config: ExperimentConfig,
    pub version: String,
    /// Sub-dataset results of a composite dataset.
    pub parts: Vec<ExperimentResult>,
}

impl ExperimentResult {
    fn from_folds(cfg: &ExperimentConfig, acc: Vec<f64>, secs: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&acc);
        let (tm, ts) = mean_std(&secs);
        Self {
            dataset: cfg.dataset.clone(),
            variant: cfg.variant(),
            fold_accuracies: acc,
            mean,
            std,
            train_seconds: secs,
            train_seconds_mean: tm,
            train_seconds_std: ts,
            tensorize_seconds: 0.0,
            cache: String::new(),
            config: cfg.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            parts: Vec::new(),
        }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (mean, population_std(xs))
}

/// K-fold cross-validation of one configuration.
///
/// `PTC` runs the four sub-datasets and averages them fold by fold.
pub fn run_cv(cfg: &ExperimentConfig, env: &RunEnv) -> Result<ExperimentResult> {
    run_cell(cfg, env, 0)
}

fn run_cell(cfg: &ExperimentConfig, env: &RunEnv, cell: u64) -> Result<ExperimentResult> {
    cfg.validate()?;
    if cfg.dataset.eq_ignore_ascii_case("PTC") {
        return run_composite(cfg, env, cell, &PTC_PARTS);
    }
    run_single(cfg, env, cell)
}

fn run_composite(cfg: &ExperimentConfig, env: &RunEnv, cell: u64, parts: &[&str]) -> Result<ExperimentResult> {
    let mut results = Vec::with_capacity(parts.len());
    for part in parts {
        let sub = ExperimentConfig {
            dataset: part.to_string(),
            ..cfg.clone()
        };
        results.push(run_single(&sub, &env.sub(part), cell)?);
    }
    let folds = cfg.folds;
    let avg = |f: &dyn Fn(&ExperimentResult) -> &Vec<f64>| -> Vec<f64> {
        (0..folds)
            .map(|i| results.iter().map(|r| f(r)[i]).sum::<f64>() / results.len() as f64)
            .collect()
    };
    let acc = avg(&|r| &r.fold_accuracies);
    let secs = avg(&|r| &r.train_seconds);
    let mut out = ExperimentResult::from_folds(cfg, acc, secs);
    out.tensorize_seconds = results.iter().map(|r| r.tensorize_seconds).sum();
    out.cache = results.iter().map(|r| r.cache.as_str()).collect::<Vec<_>>().join("/");
    out.parts = results;
    if let Some(dir) = &env.out_dir {
        write_tables(dir, &out, None)?;
    }
    Ok(out)
}

fn run_single(cfg: &ExperimentConfig, env: &RunEnv, cell: u64) -> Result<ExperimentResult> {
    let ds = load_tu_dataset(&env.data_root, &cfg.dataset)?;
    let tcfg = TensorizeConfig {
        w: cfg.w.unwrap_or_else(|| default_width(&ds)),
        k: cfg.k,
        procedure: cfg.labelling,
    };
    let t0 = Instant::now();
    fs::create_dir_all(&env.cache_dir).map_err(|e| Error::io(&env.cache_dir, e))?;
    let perm = cfg.permute.then_some(cfg.seed);
    let (set, state, path) = load_or_build(&env.cache_dir, &ds, tcfg, perm, env.force_cache)?;
    let tensorize_seconds = t0.elapsed().as_secs_f64();
    let cache = match state {
        CacheState::Warm => "warm",
        CacheState::Cold => "cold",
    };
    log::info!(
        "{}: {} tensors {:?} from {} cache {}",
        cfg.dataset,
        set.len(),
        set.geometry.shape(),
        cache,
        path.display()
    );
    let labels = set.labels();
    let folds = kfold_split(&labels, cfg.folds, rng::derive(cfg.seed, &[FOLD_STREAM]))?;
    let key = cfg.key();
    let fold_dir = env.out_dir.as_ref().map(|d| d.join("folds"));
    let trace_dir = env.out_dir.as_ref().map(|d| d.join("traces"));
    for d in fold_dir.iter().chain(&trace_dir) {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let caps = cfg.caps_config();
    let outcomes: Vec<FoldOutcome> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let stored = fold_dir.as_ref().map(|d| d.join(format!("fold_{f:02}.json")));
            if let Some(prev) = stored.as_ref().and_then(|p| read_fold(p, &key)) {
                log::info!("{}: fold {f} restored", cfg.dataset);
                return Ok(prev);
            }
            let train_idx = training_indices(&folds, f);
            let train_set: Vec<&GraphTensor> = train_idx.iter().map(|&i| &set.tensors[i]).collect();
            let test_set: Vec<&GraphTensor> = folds[f].iter().map(|&i| &set.tensors[i]).collect();
            let mut model = Model::build(
                cfg.model,
                set.geometry,
                ds.num_classes,
                cfg.preset,
                &caps,
                rng::derive(cfg.seed, &[INIT_STREAM, f as u64, cell]),
            )?;
            let tc = TrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                adam: AdamConfig::new(cfg.base_lr, cfg.lr_decay),
                seed: rng::derive(cfg.seed, &[TRAIN_STREAM, f as u64, cell]),
            };
            let out = train(&mut model, &train_set, &tc)?;
            let accuracy = evaluate(&model, &test_set)?;
            let outcome = FoldOutcome {
                fold: f,
                train_size: train_set.len(),
                test_size: test_set.len(),
                correct: (accuracy * test_set.len() as f64).round() as usize,
                accuracy,
                train_seconds: out.seconds,
                final_loss: out.trace.last().map_or(f64::NAN, |r| r.total),
                key: key.clone(),
            };
            log::info!(
                "{} {}: fold {f} accuracy {:.4} ({:.1}s)",
                cfg.dataset,
                cfg.variant(),
                accuracy,
                out.seconds
            );
            if let Some(d) = &trace_dir {
                let p = d.join(format!("fold_{f:02}.csv"));
                fs::write(&p, trace_csv(&out.trace)).map_err(|e| Error::io(&p, e))?;
            }
            if let Some(p) = &stored {
                let json = serde_json::to_string_pretty(&outcome).expect("fold serializes");
                fs::write(p, json).map_err(|e| Error::io(p, e))?;
            }
            Ok(outcome)
        })
        .collect::<Result<_>>()?;
    let acc = outcomes.iter().map(|o| o.accuracy).collect();
    let secs = outcomes.iter().map(|o| o.train_seconds).collect();
    let mut result = ExperimentResult::from_folds(cfg, acc, secs);
    result.tensorize_seconds = tensorize_seconds;
    result.cache = cache.to_string();
    if let Some(dir) = &env.out_dir {
        write_tables(dir, &result, Some(&outcomes))?;
    }
    Ok(result)
}

fn read_fold(path: &Path, key: &str) -> Option<FoldOutcome> {
    let text = fs::read_to_string(path).ok()?;
    let f: FoldOutcome = serde_json::from_str(&text).ok()?;
    (f.key == key).then_some(f)
}

/// Per-fold accuracies without timings, so reruns compare byte for byte.
pub fn folds_csv(result: &ExperimentResult, outcomes: Option<&[FoldOutcome]>) -> String {
    let mut s = String::from("fold,train_size,test_size,correct,accuracy\n");
    match outcomes {
        Some(os) => {
            for o in os {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    o.fold, o.train_size, o.test_size, o.correct, o.accuracy
                ));
            }
        }
        None => {
            for (i, a) in result.fold_accuracies.iter().enumerate() {
                s.push_str(&format!("{i},,,,{a}\n"));
            }
        }
    }
    s
}

fn timings_csv(result: &ExperimentResult) -> String {
    let mut s = String::from("fold,train_seconds\n");
    for (i, t) in result.train_seconds.iter().enumerate() {
        s.push_str(&format!("{i},{t:.3}\n"));
    }
    s.push_str(&format!("mean,{:.3}\nstd,{:.3}\n", result.train_seconds_mean, result.train_seconds_std));
    s.push_str(&format!("tensorize ({}),{:.3}\n", result.cache, result.tensorize_seconds));
    s
}

fn write_tables(dir: &Path, result: &ExperimentResult, outcomes: Option<&[FoldOutcome]>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("folds.csv", folds_csv(result, outcomes)),
        ("timings.csv", timings_csv(result)),
        ("result.json", serde_json::to_string_pretty(result).expect("result serializes")),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    emit_report(std::slice::from_ref(result), dir)
}

/// Hyper-parameter lists searched exhaustively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub epochs: Vec<usize>,
    pub base_lr: Vec<f64>,
    pub lr_decay: Vec<f64>,
}

impl Grid {
    /// The published search space.
    pub fn paper() -> Self {
        Self {
            epochs: vec![100, 150, 200],
            base_lr: vec![0.0005, 0.001, 0.005],
            lr_decay: vec![0.25, 0.4, 0.75, 1.5],
        }
    }

    /// Cells in order: epochs, then learning rate, then decay.
    pub fn cells(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for &e in &self.epochs {
            for &lr in &self.base_lr {
                for &d in &self.lr_decay {
                    out.push((e, lr, d));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub result: ExperimentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

/// Index of the best cell: highest mean, then fewer epochs, then lower
/// learning rate.
pub fn select_best(cells: &[GridCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let o = &cells[b];
                c.result.mean > o.result.mean
                    || (c.result.mean == o.result.mean
                        && (c.epochs, c.base_lr) < (o.epochs, o.base_lr))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

pub fn grid_search(base: &ExperimentConfig, grid: &Grid, env: &RunEnv) -> Result<GridResult> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Config("empty hyper-parameter grid".into()));
    }
    let mut out = Vec::with_capacity(cells.len());
    for (i, &(epochs, base_lr, lr_decay)) in cells.iter().enumerate() {
        let cfg = ExperimentConfig {
            epochs,
            base_lr,
            lr_decay,
            ..base.clone()
        };
        log::info!("grid cell {}/{}: epochs {epochs}, lr {base_lr}, decay {lr_decay}", i + 1, cells.len());
        let result = run_cell(&cfg, &env.sub(&format!("cell_{i:02}")), i as u64)?;
        out.push(GridCell {
            epochs,
            base_lr,
            lr_decay,
            result,
        });
    }
    let best = select_best(&out).expect("non-empty");
    let result = GridResult { cells: out, best };
    if let Some(dir) = &env.out_dir {
        let p = dir.join("grid.csv");
        fs::write(&p, grid_csv(&result)).map_err(|e| Error::io(&p, e))?;
        let b = result.best_cell();
        emit_report(std::slice::from_ref(&b.result), dir)?;
    }
    Ok(result)
}

pub fn grid_csv(g: &GridResult) -> String {
    let mut s = String::from("cell,epochs,base_lr,lr_decay,mean,std,train_seconds_mean,best\n");
    for (i, c) in g.cells.iter().enumerate() {
        s.push_str(&format!(
            "{i},{},{},{},{},{},{:.3},{}\n",
            c.epochs,
            c.base_lr,
            c.lr_decay,
            c.result.mean,
            c.result.std,
            c.result.train_seconds_mean,
            u8::from(i == g.best)
        ));
    }
    s
}
