mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphcaps::analysis::{
    cluster_distances, distances_csv, embeddings_csv, extract_embeddings, tsne, write_file,
    EmbeddingSource, TsneConfig,
};
use graphcaps::dataset::load_tu_dataset;
use graphcaps::experiment::manifest::dataset_checksums;
use graphcaps::experiment::{
    emit_report, grid_search, run_cv, ExperimentConfig, ExperimentResult, Grid, RunEnv,
    RunManifest,
};
use graphcaps::labelling::Procedure;
use graphcaps::models::{train, Model, TrainConfig};
use graphcaps::nn::AdamConfig;
use graphcaps::rng;
use graphcaps::selftest::run_selftest;
use graphcaps::tensorizer::{default_width, load_or_build, CacheState, GraphTensor, TensorizeConfig, DEFAULT_K};
use graphcaps::{Error, Result};

use config::ExperimentArgs;

#[derive(Parser)]
#[command(name = "graphcaps", version, about = "Graph classification with receptive-field tensors and capsule networks")]
struct Cli {
    /// Directory holding the TU-format datasets [default: $GRAPHCAPS_DATA or ./data]
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Tensor cache directory.
    #[arg(long, global = true, default_value = "cache")]
    cache_dir: PathBuf,
    /// Worker threads for folds and tensorization [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset into cached receptive-field tensors.
    Tensorize(TensorizeArgs),
    /// K-fold cross-validation of one configuration.
    Run(RunArgs),
    /// Exhaustive search over epochs, learning rate and decay.
    Grid(GridArgs),
    /// t-SNE of raw tensors or learned representations.
    Embed(EmbedArgs),
    /// Combine finished runs into one table.
    Report(ReportArgs),
    /// Run the built-in correctness suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct TensorizeArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "bc")]
    labelling: Procedure,
    #[arg(long)]
    naive_ties: bool,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Seed of the node-id permutation.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    no_permute: bool,
    /// Rebuild even if a cache file exists.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct Output {
    /// Parent directory of run directories.
    #[arg(long, default_value = "results")]
    results_dir: PathBuf,
    /// Run directory name [default: derived from the configuration]
    #[arg(long)]
    run_id: Option<String>,
    /// Discard an existing run directory and rebuild the tensor cache.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[command(flatten)]
    out: Output,
    /// Repeat the run recorded in this config.json.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[command(flatten)]
    out: Output,
    #[arg(long, value_delimiter = ',')]
    grid_epochs: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grid_lr: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    grid_decay: Option<Vec<f64>>,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[command(flatten)]
    out: Output,
    /// raw, cnn or caps.
    #[arg(long, default_value = "raw")]
    source: EmbeddingSource,
    #[arg(long, default_value_t = 10.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// t-SNE seed [default: the experiment seed]
    #[arg(long)]
    tsne_seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories containing result.json.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Where report.csv and report.txt are written.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn data_root(cli: &Cli) -> PathBuf {
    cli.data_root
        .clone()
        .or_else(|| std::env::var_os("GRAPHCAPS_DATA").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Tensorize(a) => tensorize(cli, a),
        Command::Run(a) => run(cli, a),
        Command::Grid(a) => grid(cli, a),
        Command::Embed(a) => embed(cli, a),
        Command::Report(a) => report(a),
        Command::Selftest(a) => Ok(selftest(a)),
    }
}

fn tensorize(cli: &Cli, a: &TensorizeArgs) -> Result<ExitCode> {
    let ds = load_tu_dataset(&data_root(cli), &a.dataset)?;
    let procedure = if a.naive_ties { Procedure::BetweennessNaive } else { a.labelling };
    let cfg = TensorizeConfig {
        w: a.w.unwrap_or_else(|| default_width(&ds)),
        k: a.k,
        procedure,
    };
    std::fs::create_dir_all(&cli.cache_dir).map_err(|e| Error::io(&cli.cache_dir, e))?;
    let perm = (!a.no_permute).then_some(a.seed);
    let (set, state, path) = load_or_build(&cli.cache_dir, &ds, cfg, perm, a.force)?;
    let state = match state {
        CacheState::Warm => "warm, nothing to do",
        CacheState::Cold => "written",
    };
    println!(
        "{}: {} tensors of {}x{}x{} ({state}) {}",
        ds.name,
        set.len(),
        set.geometry.w,
        set.geometry.k,
        set.geometry.channels(),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn default_run_id(prefix: &str, cfg: &ExperimentConfig) -> String {
    format!(
        "{prefix}{}-{}-{}-s{}-{}",
        cfg.dataset,
        cfg.labelling.short_name(),
        cfg.model,
        cfg.seed,
        &cfg.key()[..8]
    )
}

fn prepare_dir(out: &Output, id: String) -> Result<PathBuf> {
    let dir = out.results_dir.join(id);
    if out.force && dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    Ok(dir)
}

fn manifest(cli: &Cli, command: &str, cfg: &ExperimentConfig, extra: serde_json::Value) -> Result<RunManifest> {
    let mut config = serde_json::to_value(cfg).expect("config serializes");
    if let (Some(obj), serde_json::Value::Object(more)) = (config.as_object_mut(), extra) {
        obj.extend(more);
    }
    let mut m = RunManifest::new(command, std::env::args().collect(), config);
    m.seeds = BTreeMap::from([
        ("base".to_string(), cfg.seed),
        ("node_permutation".to_string(), cfg.seed),
        ("folds".to_string(), rng::derive(cfg.seed, &[1])),
    ]);
    m.dataset_checksums = dataset_checksums(&data_root(cli), &cfg.dataset)?;
    Ok(m)
}

fn env_for(cli: &Cli, out: &Output, dir: &Path) -> RunEnv {
    RunEnv {
        data_root: data_root(cli),
        cache_dir: cli.cache_dir.clone(),
        force_cache: out.force,
        out_dir: Some(dir.to_path_buf()),
    }
}

fn run(cli: &Cli, a: &RunArgs) -> Result<ExitCode> {
    let (cfg, prefix) = match &a.from_manifest {
        Some(p) => {
            let m = RunManifest::read(p)?;
            let cfg: ExperimentConfig = serde_json::from_value(m.config)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            (cfg, "replay-")
        }
        None => (a.exp.resolve()?, ""),
    };
    let id = a.out.run_id.clone().unwrap_or_else(|| default_run_id(prefix, &cfg));
    let dir = prepare_dir(&a.out, id)?;
    manifest(cli, "run", &cfg, serde_json::json!({}))?.write_new(&dir)?;
    let result = run_cv(&cfg, &env_for(cli, &a.out, &dir))?;
    print_result(&result, &dir);
    Ok(ExitCode::SUCCESS)
}

fn print_result(r: &ExperimentResult, dir: &Path) {
    println!(
        "{} on {}: {:.2} ± {:.2} % over {} folds ({:.1} s training per fold)",
        r.variant,
        r.dataset,
        100.0 * r.mean,
        100.0 * r.std,
        r.fold_accuracies.len(),
        r.train_seconds_mean
    );
    println!("results in {}", dir.display());
}

fn grid(cli: &Cli, a: &GridArgs) -> Result<ExitCode> {
    let cfg = a.exp.resolve()?;
    let paper = Grid::paper();
    let g = Grid {
        epochs: a.grid_epochs.clone().unwrap_or(paper.epochs),
        base_lr: a.grid_lr.clone().unwrap_or(paper.base_lr),
        lr_decay: a.grid_decay.clone().unwrap_or(paper.lr_decay),
    };
    let id = a.out.run_id.clone().unwrap_or_else(|| default_run_id("grid-", &cfg));
    let dir = prepare_dir(&a.out, id)?;
    let extra = serde_json::json!({ "grid": g });
    manifest(cli, "grid", &cfg, extra)?.write_new(&dir)?;
    let res = grid_search(&cfg, &g, &env_for(cli, &a.out, &dir))?;
    let b = res.best_cell();
    println!(
        "{} cells; best: epochs {}, lr {}, decay {}",
        res.cells.len(),
        b.epochs,
        b.base_lr,
        b.lr_decay
    );
    print_result(&b.result, &dir);
    Ok(ExitCode::SUCCESS)
}

fn embed(cli: &Cli, a: &EmbedArgs) -> Result<ExitCode> {
    let cfg = a.exp.resolve()?;
    let id = a
        .out
        .run_id
        .clone()
        .unwrap_or_else(|| default_run_id(&format!("embed-{}-", a.source), &cfg));
    let dir = prepare_dir(&a.out, id)?;
    let tsne_seed = a.tsne_seed.unwrap_or(cfg.seed);
    let extra = serde_json::json!({
        "source": a.source,
        "perplexity": a.perplexity,
        "tsne_iters": a.iters,
        "tsne_seed": tsne_seed,
    });
    manifest(cli, "embed", &cfg, extra)?.write_new(&dir)?;

    let root = data_root(cli);
    let ds = load_tu_dataset(&root, &cfg.dataset)?;
    let tcfg = TensorizeConfig {
        w: cfg.w.unwrap_or_else(|| default_width(&ds)),
        k: cfg.k,
        procedure: cfg.labelling,
    };
    std::fs::create_dir_all(&cli.cache_dir).map_err(|e| Error::io(&cli.cache_dir, e))?;
    let perm = cfg.permute.then_some(cfg.seed);
    let (set, _, _) = load_or_build(&cli.cache_dir, &ds, tcfg, perm, a.out.force)?;
    let refs: Vec<&GraphTensor> = set.tensors.iter().collect();
    let model = match a.source {
        EmbeddingSource::Raw => None,
        src => {
            let kind = match src {
                EmbeddingSource::Cnn => graphcaps::models::Classifier::Cnn,
                _ => graphcaps::models::Classifier::Capsules,
            };
            let mut m = Model::build(kind, set.geometry, ds.num_classes, cfg.preset, &cfg.caps_config(), rng::derive(cfg.seed, &[2]))?;
            let tc = TrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                adam: AdamConfig::new(cfg.base_lr, cfg.lr_decay),
                seed: rng::derive(cfg.seed, &[3]),
            };
            let out = train(&mut m, &refs, &tc)?;
            log::info!("trained {kind} in {:.1}s", out.seconds);
            Some(m)
        }
    };
    let emb = extract_embeddings(model.as_ref(), &refs, a.source)?;
    let tc = TsneConfig {
        iters: a.iters,
        ..TsneConfig::new(a.perplexity, tsne_seed)
    };
    let t = tsne(&emb.points, emb.dim, &tc)?;
    let dist = cluster_distances(&t.coords, 2, &emb.labels)?;
    write_file(&dir.join("embeddings.csv"), &embeddings_csv(&emb, &t.coords, 2))?;
    write_file(&dir.join("distances.csv"), &distances_csv(&[(a.source, dist.clone())]))?;
    let meta = serde_json::json!({
        "source": a.source,
        "points": emb.len(),
        "input_dim": emb.dim,
        "perplexity": a.perplexity,
        "iters": a.iters,
        "seed": tsne_seed,
        "kl_initial": t.kl_initial,
        "kl_final": t.kl_final,
        "distances": dist,
    });
    write_file(&dir.join("tsne.json"), &serde_json::to_string_pretty(&meta).expect("json"))?;
    println!(
        "{} embedding of {} ({} x {}): KL {:.4} -> {:.4}, intra {:.3}, inter {:.3}",
        a.source,
        ds.name,
        emb.len(),
        emb.dim,
        t.kl_initial,
        t.kl_final,
        dist.pooled_intra,
        dist.inter
    );
    println!("results in {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn report(a: &ReportArgs) -> Result<ExitCode> {
    let mut results = Vec::new();
    for run in &a.runs {
        let p = if run.is_dir() { run.join("result.json") } else { run.clone() };
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let r: ExperimentResult =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        results.push(r);
    }
    emit_report(&results, &a.out)?;
    print!("{}", std::fs::read_to_string(a.out.join("report.txt")).unwrap_or_default());
    Ok(ExitCode::SUCCESS)
}

fn selftest(a: &SelftestArgs) -> ExitCode {
    let reports = run_selftest(a.inject_fault.as_deref());
    let mut ok = true;
    for r in &reports {
        ok &= r.passed;
        println!(
            "{:<22} {}  {:>7.2}s  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    if ok {
        println!("all suites passed");
        ExitCode::SUCCESS
    } else {
        println!("selftest FAILED");
        ExitCode::from(1)
    }
}
