//! Effective configuration: CLI flags over config file over defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use graphcaps::experiment::ExperimentConfig;
use graphcaps::labelling::Procedure;
use graphcaps::models::{Classifier, LossMode, Preset};
use graphcaps::{Error, Result};

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Dataset name (PTC expands to PTC_MM/FM/MR/FR).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Node ordering: bc, canonical (alias nauty) or bc-naive.
    #[arg(long)]
    pub labelling: Option<Procedure>,
    /// Break betweenness ties by node index instead of consistently.
    #[arg(long)]
    pub naive_ties: bool,
    /// capsules or cnn.
    #[arg(long)]
    pub model: Option<Classifier>,
    /// Architecture size: paper or small.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// TOML file with any experiment settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of receptive fields (default: average graph size).
    #[arg(long)]
    pub w: Option<usize>,
    /// Receptive field size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Margin-loss down-weighting of absent classes.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weight of the reconstruction term.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub routing_iters: Option<usize>,
    /// auto, margin_multiclass or binary_ce.
    #[arg(long)]
    pub loss_mode: Option<String>,
    /// Keep the original node ids.
    #[arg(long)]
    pub no_permute: bool,
    /// Dataset the hyper-parameters were tuned on.
    #[arg(long)]
    pub tuned_on: Option<String>,
}

fn parse_loss_mode(s: &str) -> Result<LossMode> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "auto" => Ok(LossMode::Auto),
        "margin" | "margin_multiclass" => Ok(LossMode::MarginMulticlass),
        "binary_ce" | "ce" => Ok(LossMode::BinaryCe),
        other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
    }
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl ExperimentArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => read_table(p)?,
            None => toml::Table::new(),
        };
        let preset = match (self.preset, file.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v
                .as_str()
                .ok_or_else(|| Error::Config("preset must be a string".into()))?
                .parse()?,
            (None, None) => Preset::Paper,
        };
        let dataset = self.dataset.clone().unwrap_or_else(|| "MUTAG".into());
        let defaults = ExperimentConfig::for_preset(&dataset, preset);
        let mut merged = toml::Table::try_from(&defaults)
            .map_err(|e| Error::Config(format!("default config: {e}")))?;
        for (k, v) in file {
            merged.insert(k, v);
        }
        let mut cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.preset = preset;
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        macro_rules! set {
            ($($field:ident <- $arg:ident),*) => {$(
                if let Some(v) = self.$arg.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(labelling <- labelling, model <- model, folds <- folds, seed <- seed,
             epochs <- epochs, base_lr <- lr, lr_decay <- lr_decay, batch_size <- batch_size,
             k <- k, lambda <- lambda, alpha <- alpha, routing_iters <- routing_iters);
        if self.w.is_some() {
            cfg.w = self.w;
        }
        if let Some(m) = &self.loss_mode {
            cfg.loss_mode = parse_loss_mode(m)?;
        }
        if self.tuned_on.is_some() {
            cfg.tuned_on = self.tuned_on.clone();
        }
        if self.no_permute {
            cfg.permute = false;
        }
        if self.naive_ties {
            match cfg.labelling {
                Procedure::Betweenness | Procedure::BetweennessNaive => {
                    cfg.labelling = Procedure::BetweennessNaive
                }
                Procedure::Canonical => {
                    return Err(Error::Config("--naive-ties applies to bc labelling only".into()))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
