//! The three-step training procedure and its multi-level recursion.
//!
//! Step 1 trains a flat classifier briefly and accumulates affinity
//! statistics. Step 2 discards the flat head, relabels through the
//! clustering, and fine-tunes a fresh clustered head jointly with the
//! extractor until convergence. Step 3 discards the clustered head, builds
//! the masked branch ensemble over the original labels, and fine-tunes
//! from the step-2 extractor weights. Repeating the (cluster, step 2,
//! step 3) round on the clustered label space adds hierarchy levels.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{accumulate_affinity, AffinityMatrix};
use crate::cluster::{cluster, ClusterRule, Clustering, Hierarchy};
use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::eval::{argmax_lowest, evaluate};
use crate::heads::{build_step3_head, ClusteredHead, CncModel, FlatHead, Head};
use crate::net::{softmax, softmax_cross_entropy, FeatureExtractor, Optimizer, Parameterized, SgdConfig};
use crate::report::{DatasetSummary, LevelSummary, RunReport, StageReport};

/// Knobs for one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageConfig {
    pub step1_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub optimizer: SgdConfig,
    pub rule: ClusterRule,
    pub hidden_ratio: f64,
    pub levels: usize,
    pub extractor_dims: Vec<usize>,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            step1_epochs: 1,
            max_epochs: 150,
            patience: 10,
            validation_fraction: 0.1,
            optimizer: SgdConfig::default(),
            rule: ClusterRule::default(),
            hidden_ratio: 4.0,
            levels: 1,
            extractor_dims: vec![64, 64],
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step1_epochs < 1 {
            return Err(Error::Config("step1_epochs must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 0.5], got {}",
                self.validation_fraction
            )));
        }
        if !(self.hidden_ratio > 0.0) || !self.hidden_ratio.is_finite() {
            return Err(Error::Config("hidden_ratio must be positive".into()));
        }
        if self.levels < 1 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.extractor_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("extractor dims must be positive".into()));
        }
        self.optimizer.validate()?;
        self.rule.validate()
    }

    pub fn seed(&self) -> u64 {
        self.optimizer.seed
    }
}

/// splitmix64 finalizer; derives independent sub-seeds from (seed, salt).
pub(crate) fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// Salt layout: low byte tags the purpose, higher bytes the level.
const SALT_EXTRACTOR: u64 = 0x10;
const SALT_FLAT_HEAD: u64 = 0x11;
const SALT_SHUFFLE_S1: u64 = 0x12;

fn salt_stage(level: usize, tag: u64) -> u64 {
    ((level as u64) << 8) | tag
}

/// Per-epoch loss/metric record for one trained stage.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn train_curve(&self) -> Vec<f64> {
        self.history.iter().map(|m| m.train_loss).collect()
    }
    pub fn val_curve(&self) -> Vec<f64> {
        self.history.iter().map(|m| m.val_loss).collect()
    }
    pub fn val_top1_curve(&self) -> Vec<f64> {
        self.history.iter().map(|m| m.val_top1).collect()
    }
}

/// Epoch budget: a hard cap, optional patience-based early stopping on
/// validation loss, and best-weight restoration.
#[derive(Debug, Clone, Copy)]
pub struct TrainBudget {
    pub max_epochs: usize,
    pub patience: Option<usize>,
    pub restore_best: bool,
}

/// Validation loss must drop by at least this much to count as an
/// improvement for early stopping.
const MIN_IMPROVEMENT: f64 = 1e-4;

fn validation_metrics(model: &CncModel, val: &Dataset) -> Result<(f64, f64)> {
    let logits = model.logits(&val.features)?;
    let out = softmax_cross_entropy(&logits, &val.labels)?;
    let mut wrong = 0usize;
    for (b, &label) in val.labels.iter().enumerate() {
        if argmax_lowest(out.probs.row(b)) != label {
            wrong += 1;
        }
    }
    Ok((out.loss, wrong as f64 / val.len() as f64))
}

/// Mini-batch SGD with a seeded per-epoch shuffle. The shuffle stream is
/// keyed by (config seed, salt, epoch), so identical inputs replay the
/// identical batch sequence.
pub fn train_model(
    model: &mut CncModel,
    train: &Dataset,
    val: &Dataset,
    config: &SgdConfig,
    budget: TrainBudget,
    shuffle_salt: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.out_dim() != train.num_labels || model.out_dim() != val.num_labels {
        return Err(Error::Config(format!(
            "model outputs {} classes, data carries {}/{}",
            model.out_dim(),
            train.num_labels,
            val.num_labels
        )));
    }
    let n = train.len();
    let mut optimizer = Optimizer::new(config.clone(), model)?;
    let mut history = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<Vec<f64>> = None;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..budget.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, shuffle_salt));
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_acc = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            model.zero_grads();
            let (logits, cache) = model.forward_cached(&x)?;
            let out = softmax_cross_entropy(&logits, &y)?;
            model.backward(&cache, &out.grad)?;
            optimizer.step(model)?;
            loss_acc += out.loss * chunk.len() as f64;
        }
        let train_loss = loss_acc / n as f64;
        let (val_loss, val_top1) = validation_metrics(model, val)?;
        history.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_top1,
        });
        epochs_run = epoch + 1;

        if val_loss < best_loss - MIN_IMPROVEMENT {
            best_loss = val_loss;
            best_epoch = epoch;
            stale = 0;
            if budget.restore_best {
                best_params = Some(model.params_vec());
            }
        } else {
            stale += 1;
            if budget.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }

    if let Some(params) = best_params {
        model.set_params(&params)?;
    }
    Ok(TrainOutcome {
        epochs_run,
        best_epoch,
        history,
    })
}

/// Affinity of a trained model over a dataset, in evaluation mode.
pub fn model_affinity(model: &CncModel, dataset: &Dataset) -> Result<AffinityMatrix> {
    if model.out_dim() != dataset.num_labels {
        return Err(Error::Config(format!(
            "model outputs {} classes, dataset carries {}",
            model.out_dim(),
            dataset.num_labels
        )));
    }
    accumulate_affinity(
        |batch| Ok(softmax(&model.logits(batch)?)),
        &dataset.features,
        &dataset.labels,
        dataset.num_labels,
    )
}

#[derive(Debug)]
pub struct Step1Output {
    pub model: CncModel,
    pub affinity: AffinityMatrix,
    pub outcome: TrainOutcome,
    pub flags: Vec<String>,
}

/// Brief flat training (exactly `step1_epochs`, no early stop) followed by
/// affinity accumulation over the full dataset.
pub fn step1(config: &StageConfig, dataset: &Dataset) -> Result<Step1Output> {
    config.validate()?;
    let mut flags = Vec::new();
    let distinct = {
        let mut seen = vec![false; dataset.num_labels];
        for &l in &dataset.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        flags.push("degenerate dataset (single class)".into());
    }

    let seed = config.seed();
    let mut ext_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_EXTRACTOR));
    let extractor = FeatureExtractor::new(dataset.dim(), &config.extractor_dims, &mut ext_rng)?;
    let mut head_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_FLAT_HEAD));
    let head = FlatHead::new(extractor.output_dim(), dataset.num_labels, &mut head_rng);
    let mut model = CncModel::new(extractor, Head::Flat(head))?;

    let parts = split(dataset, config.validation_fraction, seed)?;
    let outcome = train_model(
        &mut model,
        &parts.train,
        &parts.validation,
        &config.optimizer,
        TrainBudget {
            max_epochs: config.step1_epochs,
            patience: None,
            restore_best: false,
        },
        SALT_SHUFFLE_S1,
    )?;

    let affinity = model_affinity(&model, dataset)?;
    Ok(Step1Output {
        model,
        affinity,
        outcome,
        flags,
    })
}

#[derive(Debug)]
pub struct StageResult {
    pub model: CncModel,
    pub outcome: TrainOutcome,
    pub flags: Vec<String>,
}

/// Discards the previous head, relabels targets through the clustering,
/// and fine-tunes extractor plus a fresh clustered head until convergence.
pub fn step2(
    model: CncModel,
    clustering: &Clustering,
    dataset: &Dataset,
    config: &StageConfig,
    level: usize,
) -> Result<StageResult> {
    config.validate()?;
    if clustering.num_labels() != dataset.num_labels {
        return Err(Error::Config(format!(
            "clustering covers {} labels, dataset carries {}",
            clustering.num_labels(),
            dataset.num_labels
        )));
    }
    let mut flags = Vec::new();
    if clustering.is_identity() {
        flags.push(format!("level {level}: degenerate clustering (no merges)"));
    }

    let seed = config.seed();
    let mut head_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, salt_stage(level, 0x21)));
    let head = ClusteredHead::new(model.extractor.output_dim(), clustering.num_clusters(), &mut head_rng);
    let mut model = CncModel::new(model.extractor, Head::Clustered(head))?;

    let parts = split(dataset, config.validation_fraction, seed)?;
    let train = parts.train.relabeled(clustering)?;
    let val = parts.validation.relabeled(clustering)?;
    let outcome = train_model(
        &mut model,
        &train,
        &val,
        &config.optimizer,
        TrainBudget {
            max_epochs: config.max_epochs,
            patience: Some(config.patience),
            restore_best: true,
        },
        salt_stage(level, 0x22),
    )?;
    Ok(StageResult {
        model,
        outcome,
        flags,
    })
}

/// Discards the clustered head, restores original labels as targets, and
/// fine-tunes the branch ensemble from the step-2 extractor weights.
pub fn step3(
    model: CncModel,
    clustering: &Clustering,
    dataset: &Dataset,
    config: &StageConfig,
    level: usize,
) -> Result<StageResult> {
    config.validate()?;
    if model.stage() != 2 {
        return Err(Error::Config(format!(
            "step 3 starts from a step-2 model, got stage {}",
            model.stage()
        )));
    }
    if clustering.num_labels() != dataset.num_labels {
        return Err(Error::Config(format!(
            "clustering covers {} labels, dataset carries {}",
            clustering.num_labels(),
            dataset.num_labels
        )));
    }
    let mut flags = Vec::new();
    if clustering.num_clusters() == 1 {
        flags.push(format!(
            "level {level}: single cluster; step 3 degenerates to a two-layer flat classifier"
        ));
    }

    let seed = config.seed();
    let mut head_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, salt_stage(level, 0x31)));
    let head = build_step3_head(
        clustering,
        model.extractor.output_dim(),
        config.hidden_ratio,
        &mut head_rng,
    )?;
    let mut model = CncModel::new(model.extractor, Head::Cnc(head))?;

    let parts = split(dataset, config.validation_fraction, seed)?;
    let outcome = train_model(
        &mut model,
        &parts.train,
        &parts.validation,
        &config.optimizer,
        TrainBudget {
            max_epochs: config.max_epochs,
            patience: Some(config.patience),
            restore_best: true,
        },
        salt_stage(level, 0x32),
    )?;
    Ok(StageResult {
        model,
        outcome,
        flags,
    })
}

/// Full pipeline output: the final model, every model worth checkpointing,
/// the discovered hierarchy, and the structured report.
#[derive(Debug)]
pub struct CncRun {
    pub final_model: CncModel,
    pub stage1_model: CncModel,
    pub last_stage2: Option<CncModel>,
    pub hierarchy: Hierarchy,
    pub report: RunReport,
}

fn stage_report(stage: u8, level: usize, outcome: &TrainOutcome, params: usize, flags: Vec<String>) -> StageReport {
    StageReport {
        stage,
        level,
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
        param_count: params,
        train_loss: outcome.train_curve(),
        val_loss: outcome.val_curve(),
        val_top1: outcome.val_top1_curve(),
        flags,
    }
}

/// Runs step 1 once, then `levels` rounds of (cluster, step 2, step 3).
/// Rounds past the first recompute affinity from the newest step-2 model
/// over the previous level's clustered labels. Recursion stops early when
/// a level produces no merges.
pub fn run_cnc(config: &StageConfig, dataset: &Dataset) -> Result<CncRun> {
    config.validate()?;
    let started = Instant::now();
    let mut flags = Vec::new();
    let mut stages = Vec::new();
    let mut levels = Vec::new();

    let s1 = step1(config, dataset)?;
    flags.extend(s1.flags.clone());
    stages.push(stage_report(1, 0, &s1.outcome, s1.model.param_count(), s1.flags));
    let stage1_model = s1.model.clone();

    let mut hierarchy = Hierarchy::new();
    let mut current = s1.model;
    let mut last_stage2: Option<CncModel> = None;
    let mut affinity = s1.affinity;
    let mut total_epochs = s1.outcome.epochs_run;

    for level in 0..config.levels {
        let clustering = cluster(&affinity, &config.rule)?;
        levels.push(LevelSummary {
            level,
            num_labels: clustering.num_labels(),
            num_clusters: clustering.num_clusters(),
        });
        if clustering.is_identity() {
            flags.push(format!(
                "level {level}: clustering yields no merges; recursion stopped"
            ));
            break;
        }
        hierarchy.push(clustering.clone())?;
        let flat = hierarchy.flatten_to_level(level)?;

        // Step 2 trains in the label space this level partitions.
        let view = if level == 0 {
            dataset.clone()
        } else {
            dataset.relabeled(&hierarchy.flatten_to_level(level - 1)?)?
        };
        let s2 = step2(current, &clustering, &view, config, level)?;
        flags.extend(s2.flags.clone());
        total_epochs += s2.outcome.epochs_run;
        stages.push(stage_report(2, level, &s2.outcome, s2.model.param_count(), s2.flags));

        let s3 = step3(s2.model.clone(), &flat, dataset, config, level)?;
        flags.extend(s3.flags.clone());
        total_epochs += s3.outcome.epochs_run;
        stages.push(stage_report(3, level, &s3.outcome, s3.model.param_count(), s3.flags));

        // Next round clusters the reduced label space using this round's
        // step-2 softmax.
        if level + 1 < config.levels {
            affinity = model_affinity(&s2.model, &dataset.relabeled(&flat)?)?;
        }
        last_stage2 = Some(s2.model);
        current = s3.model;
    }

    let final_eval = evaluate(&current, dataset)?;
    let report = RunReport {
        seed: config.seed(),
        config: config.clone(),
        dataset: DatasetSummary {
            examples: dataset.len(),
            dim: dataset.dim(),
            num_labels: dataset.num_labels,
        },
        stages,
        levels,
        total_epochs,
        final_top1_error: final_eval.top1_error,
        final_param_count: current.param_count(),
        flags,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(CncRun {
        final_model: current,
        stage1_model,
        last_stage2,
        hierarchy,
        report,
    })
}

/// Flat baseline: step-1 architecture trained to a budget. With
/// `exact_epochs` the run uses that many epochs (best weights restored);
/// otherwise it early-stops like the fine-tuning stages.
pub fn train_flat(
    config: &StageConfig,
    dataset: &Dataset,
    exact_epochs: Option<usize>,
) -> Result<(CncModel, TrainOutcome)> {
    config.validate()?;
    let seed = config.seed();
    let mut ext_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_EXTRACTOR));
    let extractor = FeatureExtractor::new(dataset.dim(), &config.extractor_dims, &mut ext_rng)?;
    let mut head_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_FLAT_HEAD));
    let head = FlatHead::new(extractor.output_dim(), dataset.num_labels, &mut head_rng);
    let mut model = CncModel::new(extractor, Head::Flat(head))?;

    let parts = split(dataset, config.validation_fraction, seed)?;
    let budget = match exact_epochs {
        Some(epochs) => TrainBudget {
            max_epochs: epochs,
            patience: None,
            restore_best: true,
        },
        None => TrainBudget {
            max_epochs: config.max_epochs,
            patience: Some(config.patience),
            restore_best: true,
        },
    };
    let outcome = train_model(
        &mut model,
        &parts.train,
        &parts.validation,
        &config.optimizer,
        budget,
        SALT_SHUFFLE_S1,
    )?;
    Ok((model, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_planted, PlantedSpec};
    use crate::matrix::Matrix;

    fn quick_config(seed: u64) -> StageConfig {
        StageConfig {
            max_epochs: 12,
            patience: 3,
            optimizer: SgdConfig {
                seed,
                ..SgdConfig::default()
            },
            extractor_dims: vec![24, 12],
            ..StageConfig::default()
        }
    }

    fn quick_planted(seed: u64) -> Dataset {
        gen_planted(&PlantedSpec {
            tiers: vec![2, 2],
            dim: 8,
            per_class: 30,
            inter_spread: 5.0,
            intra_spread: 1.0,
            noise_sigma: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn step1_affinity_rows_are_stochastic() {
        let ds = quick_planted(0);
        let out = step1(&quick_config(0), &ds).unwrap();
        assert_eq!(out.outcome.epochs_run, 1);
        for l in 0..ds.num_labels {
            assert!(!out.affinity.is_empty_row(l));
            let sum: f64 = out.affinity.row(l).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn untrained_zero_model_yields_uniform_affinity() {
        // Zero weights give all-equal logits, so softmax is uniform: the
        // injected-predictor path through the real affinity code.
        let ds = quick_planted(1);
        let extractor = FeatureExtractor::identity(ds.dim());
        let head = FlatHead {
            fc: crate::net::DenseLayer::zeros(ds.dim(), ds.num_labels),
        };
        let model = CncModel::new(extractor, Head::Flat(head)).unwrap();
        let a = model_affinity(&model, &ds).unwrap();
        let expected = 1.0 / ds.num_labels as f64;
        for l in 0..ds.num_labels {
            for &v in a.row(l) {
                assert!((v - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let ds = quick_planted(2);
        let config = quick_config(5);
        let (_, a) = train_flat(&config, &ds, None).unwrap();
        let (_, b) = train_flat(&config, &ds, None).unwrap();
        let la: Vec<f64> = a.history.iter().map(|m| m.train_loss).collect();
        let lb: Vec<f64> = b.history.iter().map(|m| m.train_loss).collect();
        assert_eq!(la, lb);
        let va: Vec<f64> = a.history.iter().map(|m| m.val_loss).collect();
        let vb: Vec<f64> = b.history.iter().map(|m| m.val_loss).collect();
        assert_eq!(va, vb);
    }

    #[test]
    fn one_step_descends_on_fixed_batch_at_tiny_lr() {
        let ds = quick_planted(3);
        let config = StageConfig {
            optimizer: SgdConfig {
                learning_rate: 1e-4,
                momentum: 0.0,
                batch_size: ds.len(),
                seed: 3,
                ..SgdConfig::default()
            },
            ..quick_config(3)
        };
        let mut ext_rng = ChaCha8Rng::seed_from_u64(mix_seed(3, SALT_EXTRACTOR));
        let extractor = FeatureExtractor::new(ds.dim(), &config.extractor_dims, &mut ext_rng).unwrap();
        let mut head_rng = ChaCha8Rng::seed_from_u64(mix_seed(3, SALT_FLAT_HEAD));
        let head = FlatHead::new(extractor.output_dim(), ds.num_labels, &mut head_rng);
        let mut model = CncModel::new(extractor, Head::Flat(head)).unwrap();

        let before = softmax_cross_entropy(&model.logits(&ds.features).unwrap(), &ds.labels)
            .unwrap()
            .loss;
        let mut optimizer = Optimizer::new(config.optimizer.clone(), &model).unwrap();
        model.zero_grads();
        let (logits, cache) = model.forward_cached(&ds.features).unwrap();
        let out = softmax_cross_entropy(&logits, &ds.labels).unwrap();
        model.backward(&cache, &out.grad).unwrap();
        optimizer.step(&mut model).unwrap();
        let after = softmax_cross_entropy(&model.logits(&ds.features).unwrap(), &ds.labels)
            .unwrap()
            .loss;
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn step2_replaces_head_and_keeps_dims() {
        let ds = quick_planted(4);
        let config = quick_config(4);
        let s1 = step1(&config, &ds).unwrap();
        let clustering = Clustering::from_assignment(&[0, 0, 1, 1]).unwrap();
        let s2 = step2(s1.model, &clustering, &ds, &config, 0).unwrap();
        assert_eq!(s2.model.stage(), 2);
        assert_eq!(s2.model.out_dim(), 2);
        assert!(s2.flags.is_empty());
    }

    #[test]
    fn singleton_clustering_is_flagged_degenerate() {
        let ds = quick_planted(5);
        let config = quick_config(5);
        let s1 = step1(&config, &ds).unwrap();
        let identity = Clustering::identity(ds.num_labels);
        let s2 = step2(s1.model, &identity, &ds, &config, 0).unwrap();
        assert!(s2.flags.iter().any(|f| f.contains("degenerate clustering")));
        assert_eq!(s2.model.out_dim(), ds.num_labels);
    }

    #[test]
    fn step3_requires_a_stage2_model_and_restores_original_labels() {
        let ds = quick_planted(6);
        let config = quick_config(6);
        let s1 = step1(&config, &ds).unwrap();
        let clustering = Clustering::from_assignment(&[0, 0, 1, 1]).unwrap();

        // Stage-1 model is rejected.
        let err = step3(s1.model.clone(), &clustering, &ds, &config, 0);
        assert!(matches!(err, Err(Error::Config(_))));

        let s2 = step2(s1.model, &clustering, &ds, &config, 0).unwrap();
        let s3 = step3(s2.model, &clustering, &ds, &config, 0).unwrap();
        assert_eq!(s3.model.stage(), 3);
        assert_eq!(s3.model.out_dim(), ds.num_labels);

        // Full softmax over combined logits stays a distribution.
        let logits = s3.model.logits(&ds.features).unwrap();
        let probs = softmax(&logits);
        for r in 0..probs.rows() {
            let sum: f64 = probs.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn step3_starts_from_step2_extractor_bit_identical() {
        let ds = quick_planted(7);
        let config = quick_config(7);
        let s1 = step1(&config, &ds).unwrap();
        let clustering = Clustering::from_assignment(&[0, 0, 1, 1]).unwrap();
        let s2 = step2(s1.model, &clustering, &ds, &config, 0).unwrap();
        let extractor_params = s2.model.extractor.params_vec();

        // Build the step-3 model without training to observe the handoff.
        let mut head_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed(), salt_stage(0, 0x31)));
        let head = build_step3_head(&clustering, s2.model.extractor.output_dim(), 4.0, &mut head_rng).unwrap();
        let model3 = CncModel::new(s2.model.extractor.clone(), Head::Cnc(head)).unwrap();
        assert_eq!(model3.extractor.params_vec(), extractor_params);
    }

    #[test]
    fn discarded_head_params_do_not_reappear() {
        let ds = quick_planted(8);
        let config = quick_config(8);
        let s1 = step1(&config, &ds).unwrap();
        let flat_params: Vec<u64> = s1.model.head.params_vec().iter().map(|f| f.to_bits()).collect();
        let clustering = Clustering::from_assignment(&[0, 0, 1, 1]).unwrap();
        let s2 = step2(s1.model, &clustering, &ds, &config, 0).unwrap();
        let clustered_params: Vec<u64> =
            s2.model.head.params_vec().iter().map(|f| f.to_bits()).collect();
        let s3 = step3(s2.model, &clustering, &ds, &config, 0).unwrap();
        let final_params: std::collections::HashSet<u64> =
            s3.model.params_vec().iter().map(|f| f.to_bits()).collect();
        // Nonzero discarded values never show up verbatim later.
        for &p in flat_params.iter().chain(&clustered_params) {
            if p != 0 {
                assert!(!final_params.contains(&p));
            }
        }
    }

    #[test]
    fn run_cnc_single_level_structure() {
        let ds = quick_planted(9);
        let config = quick_config(9);
        let run = run_cnc(&config, &ds).unwrap();
        assert_eq!(run.hierarchy.levels().len(), 1);
        assert_eq!(run.report.stages.len(), 3);
        assert_eq!(run.report.stages[0].stage, 1);
        assert_eq!(run.report.stages[1].stage, 2);
        assert_eq!(run.report.stages[2].stage, 3);
        assert_eq!(run.final_model.stage(), 3);
        assert!(run.report.total_epochs <= 1 + 2 * config.max_epochs);
        // Convergence bookkeeping present for fine-tuned stages.
        for s in &run.report.stages[1..] {
            assert!(s.epochs_run <= config.max_epochs);
            assert!(s.best_epoch < s.epochs_run);
        }
    }

    #[test]
    fn run_cnc_stops_when_no_merges() {
        // One giant blob: step-1 confusions are symmetric but clustering at
        // an unreachable threshold never merges.
        let ds = quick_planted(10);
        let mut config = quick_config(10);
        config.rule.trsd = Some(0.97);
        let run = run_cnc(&config, &ds).unwrap();
        assert!(run.hierarchy.is_empty());
        assert!(run
            .report
            .flags
            .iter()
            .any(|f| f.contains("no merges")));
        assert_eq!(run.final_model.stage(), 1);
    }

    #[test]
    fn identical_runs_produce_identical_reports() {
        let ds = quick_planted(11);
        let config = quick_config(11);
        let a = run_cnc(&config, &ds).unwrap();
        let b = run_cnc(&config, &ds).unwrap();
        assert_eq!(a.report.final_top1_error, b.report.final_top1_error);
        assert_eq!(a.report.total_epochs, b.report.total_epochs);
        for (sa, sb) in a.report.stages.iter().zip(&b.report.stages) {
            assert_eq!(sa.train_loss, sb.train_loss);
            assert_eq!(sa.val_loss, sb.val_loss);
        }
        assert_eq!(a.final_model.params_vec(), b.final_model.params_vec());
    }

    #[test]
    fn degenerate_single_class_dataset_is_reported() {
        let features = Matrix::from_vec(10, 2, vec![0.5; 20]).unwrap();
        let ds = Dataset::new(features, vec![0; 10], 1).unwrap();
        let out = step1(&quick_config(12), &ds).unwrap();
        assert!(out.flags.iter().any(|f| f.contains("single class")));
        assert_eq!(out.affinity.size(), 1);
        assert!(!out.affinity.is_empty_row(0));
    }
}
