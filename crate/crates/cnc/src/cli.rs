//! Batch command-line interface.
//!
//! One binary, seven subcommands, one flat key-value configuration that
//! mirrors the generator, training, clustering, and harness knobs. Values
//! resolve in order: built-in defaults, then `--config <file>` lines, then
//! `--key value` flags, last writer wins. Unknown keys are rejected before
//! any work starts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::affinity::AffinityMatrix;
use crate::checkpoint;
use crate::cluster::{cluster, ClusterRule, ClusterStrategy};
use crate::data::{gen_planted, Dataset, PlantedSpec};
use crate::error::{Error, Result};
use crate::eval::{compare_cnc_vs_flat, evaluate, label_count_ablation};
use crate::net::SgdConfig;
use crate::pipeline::{model_affinity, run_cnc, train_flat, StageConfig};
use crate::report::{DatasetSummary, RunReport, StageReport};

const HELP: &str = "\
cnc - confusion-driven label clustering and coarse-to-fine classification

USAGE:
    cnc <command> [--config FILE] [--key value]...

COMMANDS:
    gen       generate a planted-hierarchy dataset into --out
    train     train the flat baseline on --dataset
    cnc       run the full clustering pipeline on --dataset
    cluster   cluster an affinity matrix (--affinity CSV, or
              --checkpoint plus --dataset to accumulate one)
    ablate    label-count ablation on --dataset, writes ablation.csv
    compare   paired flat-vs-pipeline comparison, writes compare.csv
    eval      evaluate --checkpoint on --dataset and print metrics

CONFIGURATION KEYS (defaults in parentheses):
  data generation
    tiers TEXT            branching factors, e.g. 4,4 (4,4)
    dim N                 feature dimension (16)
    per_class N           examples per class (50)
    inter_spread X        top-tier center scale (6.0)
    intra_spread X        per-tier shrink scale, < inter_spread (1.0)
    noise_sigma X         observation noise (2.0)
  training
    step1_epochs N        brief flat-training epochs (1)
    max_epochs N          fine-tuning epoch cap per stage (150)
    patience N            early-stop patience on validation loss (10)
    validation_fraction X held-out fraction in (0, 0.5] (0.1)
    learning_rate X       SGD step size (0.003)
    momentum X            SGD momentum in [0,1) (0.9)
    weight_decay X        L2 coefficient (0)
    batch_size N          minibatch size (32)
    extractor_dims TEXT   dense feature stack, e.g. 64,64 (64,64)
    hidden_ratio X        branch input:hidden ratio (4)
    levels N              clustering rounds (1)
  clustering rule
    strategy NAME         threshold_argmax | l1_agglomerative (threshold_argmax)
    trsd X|auto           merge threshold in (0,1); auto = 2/C (auto)
    tau X                 L1 merge distance in (0,2] (1.0)
    min_cluster_size N    fold clusters smaller than this (1)
    link_all_above BOOL   link every partner above trsd (false)
  harnesses
    counts TEXT           ablation label counts, e.g. 4,8,16 (4,8,16)
    seeds_per_point N     ablation seeds per count (5)
    compare_seeds N       paired comparison seeds (10)
    test_fraction X       held-out test fraction (0.25)
    jobs N                parallel harness workers (1)
  common
    seed N                master seed for every stochastic choice (0)
    out PATH              output directory (cnc_out)
    dataset PATH          dataset file, CNCD binary or CSV
    affinity PATH         affinity CSV for `cluster`
    checkpoint PATH       model checkpoint for `cluster`/`eval`
    config PATH           key-value file applied before flags

EXIT CODES: 0 success, 1 usage or config error, 2 I/O error, 3 numeric failure.
";

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub tiers: Vec<usize>,
    pub dim: usize,
    pub per_class: usize,
    pub inter_spread: f64,
    pub intra_spread: f64,
    pub noise_sigma: f64,

    pub step1_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub extractor_dims: Vec<usize>,
    pub hidden_ratio: f64,
    pub levels: usize,

    pub strategy: ClusterStrategy,
    pub trsd: Option<f64>,
    pub tau: f64,
    pub min_cluster_size: usize,
    pub link_all_above: bool,

    pub counts: Vec<usize>,
    pub seeds_per_point: usize,
    pub compare_seeds: usize,
    pub test_fraction: f64,
    pub jobs: usize,

    pub seed: u64,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub affinity: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for CliConfig {
    fn default() -> Self {
        let stage = StageConfig::default();
        let planted = PlantedSpec::default();
        CliConfig {
            tiers: planted.tiers,
            dim: planted.dim,
            per_class: planted.per_class,
            inter_spread: planted.inter_spread,
            intra_spread: planted.intra_spread,
            noise_sigma: planted.noise_sigma,
            step1_epochs: stage.step1_epochs,
            max_epochs: stage.max_epochs,
            patience: stage.patience,
            validation_fraction: stage.validation_fraction,
            learning_rate: stage.optimizer.learning_rate,
            momentum: stage.optimizer.momentum,
            weight_decay: stage.optimizer.weight_decay,
            batch_size: stage.optimizer.batch_size,
            extractor_dims: stage.extractor_dims,
            hidden_ratio: stage.hidden_ratio,
            levels: stage.levels,
            strategy: stage.rule.strategy,
            trsd: stage.rule.trsd,
            tau: stage.rule.tau,
            min_cluster_size: stage.rule.min_cluster_size,
            link_all_above: stage.rule.link_all_above,
            counts: vec![4, 8, 16],
            seeds_per_point: 5,
            compare_seeds: 10,
            test_fraction: 0.25,
            jobs: 1,
            seed: 0,
            out: PathBuf::from("cnc_out"),
            dataset: None,
            affinity: None,
            checkpoint: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|t| parse_num(key, t))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("key `{key}`: expected bool, got `{other}`"))),
    }
}

impl CliConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tiers" => self.tiers = parse_list(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "per_class" => self.per_class = parse_num(key, value)?,
            "inter_spread" => self.inter_spread = parse_num(key, value)?,
            "intra_spread" => self.intra_spread = parse_num(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_num(key, value)?,
            "step1_epochs" => self.step1_epochs = parse_num(key, value)?,
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "validation_fraction" => self.validation_fraction = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "extractor_dims" => self.extractor_dims = parse_list(key, value)?,
            "hidden_ratio" => self.hidden_ratio = parse_num(key, value)?,
            "levels" => self.levels = parse_num(key, value)?,
            "strategy" => {
                self.strategy = match value.trim() {
                    "threshold_argmax" => ClusterStrategy::ThresholdArgmax,
                    "l1_agglomerative" => ClusterStrategy::L1Agglomerative,
                    other => {
                        return Err(Error::Config(format!(
                            "key `strategy`: unknown strategy `{other}`"
                        )))
                    }
                }
            }
            "trsd" => {
                self.trsd = if value.trim() == "auto" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "tau" => self.tau = parse_num(key, value)?,
            "min_cluster_size" => self.min_cluster_size = parse_num(key, value)?,
            "link_all_above" => self.link_all_above = parse_bool(key, value)?,
            "counts" => self.counts = parse_list(key, value)?,
            "seeds_per_point" => self.seeds_per_point = parse_num(key, value)?,
            "compare_seeds" => self.compare_seeds = parse_num(key, value)?,
            "test_fraction" => self.test_fraction = parse_num(key, value)?,
            "jobs" => self.jobs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "dataset" => self.dataset = Some(PathBuf::from(value.trim())),
            "affinity" => self.affinity = Some(PathBuf::from(value.trim())),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value.trim())),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(
                    format!("{}:{}", path.display(), i + 1),
                    "expected `key = value`",
                )
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Defaults, then config files, then flags, in order.
    pub fn from_args(args: &[String]) -> Result<CliConfig> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{arg}`")))?;
            let value = args
                .get(i + 1)
                .ok_or_else(|| Error::Config(format!("key `{key}` is missing a value")))?;
            pairs.push((key.to_string(), value.clone()));
            i += 2;
        }

        let mut config = CliConfig::default();
        for (key, value) in pairs.iter().filter(|(k, _)| k == "config") {
            let _ = key;
            config.apply_file(Path::new(value))?;
        }
        for (key, value) in pairs.iter().filter(|(k, _)| k != "config") {
            config.apply(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn planted_spec(&self) -> PlantedSpec {
        PlantedSpec {
            tiers: self.tiers.clone(),
            dim: self.dim,
            per_class: self.per_class,
            inter_spread: self.inter_spread,
            intra_spread: self.intra_spread,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    pub fn stage_config(&self) -> StageConfig {
        StageConfig {
            step1_epochs: self.step1_epochs,
            max_epochs: self.max_epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            optimizer: SgdConfig {
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
                batch_size: self.batch_size,
                seed: self.seed,
            },
            rule: ClusterRule {
                strategy: self.strategy,
                trsd: self.trsd,
                tau: self.tau,
                min_cluster_size: self.min_cluster_size,
                link_all_above: self.link_all_above,
            },
            hidden_ratio: self.hidden_ratio,
            levels: self.levels,
            extractor_dims: self.extractor_dims.clone(),
        }
    }

    /// Everything is range-checked up front, before any command runs.
    pub fn validate(&self) -> Result<()> {
        self.planted_spec().validate()?;
        self.stage_config().validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 0.5], got {}",
                self.test_fraction
            )));
        }
        if self.seeds_per_point == 0 || self.compare_seeds == 0 {
            return Err(Error::Config(
                "seeds_per_point and compare_seeds must be at least 1".into(),
            ));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// Deterministic echo of every resolved value.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(s, "tiers = {}", list(&self.tiers));
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "per_class = {}", self.per_class);
        let _ = writeln!(s, "inter_spread = {}", self.inter_spread);
        let _ = writeln!(s, "intra_spread = {}", self.intra_spread);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "step1_epochs = {}", self.step1_epochs);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "validation_fraction = {}", self.validation_fraction);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "extractor_dims = {}", list(&self.extractor_dims));
        let _ = writeln!(s, "hidden_ratio = {}", self.hidden_ratio);
        let _ = writeln!(s, "levels = {}", self.levels);
        let _ = writeln!(
            s,
            "strategy = {}",
            match self.strategy {
                ClusterStrategy::ThresholdArgmax => "threshold_argmax",
                ClusterStrategy::L1Agglomerative => "l1_agglomerative",
            }
        );
        let _ = match self.trsd {
            Some(t) => writeln!(s, "trsd = {t}"),
            None => writeln!(s, "trsd = auto"),
        };
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "min_cluster_size = {}", self.min_cluster_size);
        let _ = writeln!(s, "link_all_above = {}", self.link_all_above);
        let _ = writeln!(s, "counts = {}", list(&self.counts));
        let _ = writeln!(s, "seeds_per_point = {}", self.seeds_per_point);
        let _ = writeln!(s, "compare_seeds = {}", self.compare_seeds);
        let _ = writeln!(s, "test_fraction = {}", self.test_fraction);
        let _ = writeln!(s, "jobs = {}", self.jobs);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs --dataset <path>".into()))
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

/// Parses arguments, dispatches, prints errors, and maps them to exit
/// codes. The binary is a thin wrapper over this.
pub fn run(args: &[String]) -> i32 {
    if args.is_empty() {
        eprint!("{HELP}");
        return 1;
    }
    if args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{HELP}");
        return 0;
    }
    let command = args[0].clone();
    match execute(&command, &args[1..]) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &str, rest: &[String]) -> Result<()> {
    let config = CliConfig::from_args(rest)?;
    match command {
        "gen" => cmd_gen(&config),
        "train" => cmd_train(&config),
        "cnc" => cmd_cnc(&config),
        "cluster" => cmd_cluster(&config),
        "ablate" => cmd_ablate(&config),
        "compare" => cmd_compare(&config),
        "eval" => cmd_eval(&config),
        other => Err(Error::Config(format!(
            "unknown command `{other}`; see --help"
        ))),
    }
}

/// Generates the planted dataset and writes binary, CSV, and the planted
/// hierarchy ground truth.
pub fn cmd_gen(config: &CliConfig) -> Result<()> {
    config.ensure_out()?;
    let dataset = gen_planted(&config.planted_spec())?;
    dataset.save_binary(&config.out.join("dataset.cncd"))?;
    dataset.save_csv(&config.out.join("dataset.csv"))?;
    if let Some(planted) = &dataset.planted {
        if !planted.is_empty() {
            fs::write(config.out.join("planted.hierarchy.txt"), planted.to_text())?;
        }
    }
    fs::write(config.out.join("config.echo"), config.echo())?;
    println!(
        "generated {} examples, {} classes, dim {} -> {}",
        dataset.len(),
        dataset.num_labels,
        dataset.dim(),
        config.out.display()
    );
    Ok(())
}

/// Trains the flat baseline until convergence and writes a run directory.
pub fn cmd_train(config: &CliConfig) -> Result<()> {
    config.ensure_out()?;
    let dataset = Dataset::load(config.dataset_path()?)?;
    let stage_config = config.stage_config();
    let (model, outcome) = train_flat(&stage_config, &dataset, None)?;
    let final_eval = evaluate(&model, &dataset)?;

    let report = RunReport {
        seed: config.seed,
        config: stage_config,
        dataset: DatasetSummary {
            examples: dataset.len(),
            dim: dataset.dim(),
            num_labels: dataset.num_labels,
        },
        stages: vec![StageReport {
            stage: 1,
            level: 0,
            epochs_run: outcome.epochs_run,
            best_epoch: outcome.best_epoch,
            param_count: model.param_count(),
            train_loss: outcome.train_curve(),
            val_loss: outcome.val_curve(),
            val_top1: outcome.val_top1_curve(),
            flags: Vec::new(),
        }],
        levels: Vec::new(),
        total_epochs: outcome.epochs_run,
        final_top1_error: final_eval.top1_error,
        final_param_count: model.param_count(),
        flags: Vec::new(),
        wall_clock_secs: 0.0,
    };
    fs::write(config.out.join("config.echo"), config.echo())?;
    report.save_json(&config.out.join("report.json"))?;
    report.save_metrics_csv(&config.out.join("metrics.csv"))?;
    checkpoint::save_model(&model, None, &config.out.join("checkpoint.stage1.cnc"))?;
    println!(
        "flat baseline: {} epochs, top-1 error {:.4} -> {}",
        outcome.epochs_run,
        final_eval.top1_error,
        config.out.display()
    );
    Ok(())
}

/// Runs the full pipeline and writes checkpoints, clusterings, report, and
/// metrics under the output directory.
pub fn cmd_cnc(config: &CliConfig) -> Result<()> {
    config.ensure_out()?;
    let dataset = Dataset::load(config.dataset_path()?)?;
    let run = run_cnc(&config.stage_config(), &dataset)?;

    fs::write(config.out.join("config.echo"), config.echo())?;
    for (t, level) in run.hierarchy.levels().iter().enumerate() {
        fs::write(
            config.out.join(format!("clustering.L{t}.txt")),
            level.to_text(),
        )?;
    }
    checkpoint::save_model(
        &run.stage1_model,
        None,
        &config.out.join("checkpoint.stage1.cnc"),
    )?;
    if !run.hierarchy.is_empty() {
        let last = run.hierarchy.levels().len() - 1;
        let flat = run.hierarchy.flatten_to_level(last)?;
        if let Some(stage2) = &run.last_stage2 {
            checkpoint::save_model(stage2, Some(&flat), &config.out.join("checkpoint.stage2.cnc"))?;
        }
        checkpoint::save_model(
            &run.final_model,
            Some(&flat),
            &config.out.join("checkpoint.stage3.cnc"),
        )?;
    }
    run.report.save_json(&config.out.join("report.json"))?;
    run.report.save_metrics_csv(&config.out.join("metrics.csv"))?;
    println!(
        "pipeline: {} level(s), {} total epochs, final top-1 error {:.4} -> {}",
        run.hierarchy.levels().len(),
        run.report.total_epochs,
        run.report.final_top1_error,
        config.out.display()
    );
    Ok(())
}

fn affinity_input(config: &CliConfig) -> Result<AffinityMatrix> {
    match (&config.affinity, &config.checkpoint) {
        (Some(path), _) => AffinityMatrix::load_csv(path),
        (None, Some(ckpt)) => {
            let dataset = Dataset::load(config.dataset_path()?)?;
            let (model, clustering) = checkpoint::load_model(ckpt)?;
            let view = match (model.stage(), clustering) {
                (2, Some(c)) => dataset.relabeled(&c)?,
                _ => dataset,
            };
            model_affinity(&model, &view)
        }
        (None, None) => Err(Error::Config(
            "cluster needs --affinity <csv> or --checkpoint <file> with --dataset".into(),
        )),
    }
}

/// Clusters an affinity matrix in isolation and writes `clustering.txt`.
pub fn cmd_cluster(config: &CliConfig) -> Result<()> {
    config.ensure_out()?;
    let affinity = affinity_input(config)?;
    let rule = config.stage_config().rule;
    let clustering = cluster(&affinity, &rule)?;
    fs::write(config.out.join("clustering.txt"), clustering.to_text())?;
    println!(
        "clustered {} labels into {} clusters -> {}",
        clustering.num_labels(),
        clustering.num_clusters(),
        config.out.join("clustering.txt").display()
    );
    Ok(())
}

/// Label-count ablation; writes `ablation.csv` (count, seed, top1).
pub fn cmd_ablate(config: &CliConfig) -> Result<()> {
    config.ensure_out()?;
    let dataset = Dataset::load(config.dataset_path()?)?;
    let result = label_count_ablation(
        &dataset,
        &config.counts,
        config.seeds_per_point,
        &config.stage_config(),
        config.test_fraction,
        config.jobs,
    )?;
    fs::write(config.out.join("ablation.csv"), result.to_csv())?;
    fs::write(config.out.join("config.echo"), config.echo())?;
    for (count, err) in result.label_counts.iter().zip(&result.errors) {
        println!("labels {count}: mean top-1 error {err:.4}");
    }
    println!("-> {}", config.out.join("ablation.csv").display());
    Ok(())
}

/// Paired comparison; writes `compare.csv` (seed, arm, top1, params).
pub fn cmd_compare(config: &CliConfig) -> Result<()> {
    config.ensure_out()?;
    let dataset = Dataset::load(config.dataset_path()?)?;
    let report = compare_cnc_vs_flat(
        &dataset,
        &config.stage_config(),
        config.compare_seeds,
        config.test_fraction,
        config.jobs,
    )?;
    fs::write(config.out.join("compare.csv"), report.to_csv())?;
    fs::write(config.out.join("config.echo"), config.echo())?;
    println!(
        "mean top-1 error: flat {:.4} vs pipeline {:.4} over {} seeds -> {}",
        report.mean_flat,
        report.mean_cnc,
        report.points.len(),
        config.out.join("compare.csv").display()
    );
    Ok(())
}

/// Evaluates a checkpoint on a dataset and prints the result. Stage-2
/// checkpoints relabel the dataset through their stored clustering.
pub fn cmd_eval(config: &CliConfig) -> Result<()> {
    let ckpt = config
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("eval needs --checkpoint <path>".into()))?;
    let dataset = Dataset::load(config.dataset_path()?)?;
    let (model, clustering) = checkpoint::load_model(ckpt)?;
    let view = match (model.stage(), clustering) {
        (2, Some(c)) => {
            println!(
                "stage-2 checkpoint: evaluating in its {}-cluster label space",
                c.num_clusters()
            );
            dataset.relabeled(&c)?
        }
        _ => dataset,
    };
    let eval = evaluate(&model, &view)?;
    println!("examples:    {}", eval.n);
    println!("top-1 error: {}", eval.top1_error);
    println!("parameters:  {}", model.param_count());
    for (class, err) in eval.per_class_error.iter().enumerate() {
        println!("class {class}: error {err:.4}");
    }
    if eval.confusion.rows() <= 20 {
        println!("confusion (rows = true label):");
        for r in 0..eval.confusion.rows() {
            let cells: Vec<String> = eval
                .confusion
                .row(r)
                .iter()
                .map(|v| format!("{:>5}", *v as usize))
                .collect();
            println!("  {}", cells.join(" "));
        }
    }
    Ok(())
}
