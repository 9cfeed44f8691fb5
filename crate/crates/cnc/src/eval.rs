//! Metrics, confusion analysis, the label-count ablation, and the paired
//! baseline-versus-pipeline comparison.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::heads::CncModel;
use crate::matrix::Matrix;
use crate::pipeline::{mix_seed, run_cnc, train_flat, StageConfig};

/// Argmax with ties broken to the lowest label id, so results are stable
/// across platforms.
pub(crate) fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 error, per-class errors, and the C x C confusion matrix
/// (`confusion[true][predicted]`, counts).
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub top1_error: f64,
    pub per_class_error: Vec<f64>,
    pub confusion: Matrix,
    pub n: usize,
}

/// Runs the model over the dataset in evaluation mode. Order-independent:
/// each example's argmax is computed in isolation.
pub fn evaluate(model: &CncModel, dataset: &Dataset) -> Result<EvalResult> {
    let c = dataset.num_labels;
    if model.out_dim() != c {
        return Err(Error::Config(format!(
            "model predicts {} classes, dataset carries {c}",
            model.out_dim()
        )));
    }
    let mut confusion = Matrix::zeros(c, c);
    const CHUNK: usize = 256;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + CHUNK).min(dataset.len());
        let idx: Vec<usize> = (start..end).collect();
        let logits = model.logits(&dataset.features.select_rows(&idx))?;
        for (b, &example) in idx.iter().enumerate() {
            let predicted = argmax_lowest(logits.row(b));
            let truth = dataset.labels[example];
            confusion.set(truth, predicted, confusion.get(truth, predicted) + 1.0);
        }
        start = end;
    }

    let n = dataset.len();
    let mut correct = 0.0;
    let mut per_class_error = vec![0.0; c];
    for class in 0..c {
        let row_total: f64 = confusion.row(class).iter().sum();
        let hit = confusion.get(class, class);
        correct += hit;
        per_class_error[class] = if row_total > 0.0 {
            1.0 - hit / row_total
        } else {
            0.0
        };
    }
    Ok(EvalResult {
        top1_error: 1.0 - correct / n as f64,
        per_class_error,
        confusion,
        n,
    })
}

/// One measured point of the label-count ablation.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub count: usize,
    pub seed: u64,
    pub top1_error: f64,
}

/// Mean top-1 error per label count, plus the per-seed rows behind the
/// means.
#[derive(Debug, Clone)]
pub struct AblationResult {
    pub label_counts: Vec<usize>,
    pub errors: Vec<f64>,
    pub seeds_per_point: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("count,seed,top1\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.count, r.seed, r.top1_error));
        }
        out
    }
}

/// Runs `f` over `0..n`, optionally across threads, collecting results in
/// index order so parallelism never changes the output.
fn run_indexed<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().expect("worker poisoned the slot lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker poisoned the slot lock")
        .into_iter()
        .map(|slot| slot.expect("every index visited"))
        .collect()
}

/// For each count, draws that many labels uniformly (seeded), restricts
/// the dataset, trains a flat baseline, and records held-out top-1 error
/// averaged over `seeds_per_point` seeds.
pub fn label_count_ablation(
    base: &Dataset,
    counts: &[usize],
    seeds_per_point: usize,
    config: &StageConfig,
    test_fraction: f64,
    jobs: usize,
) -> Result<AblationResult> {
    if counts.is_empty() {
        return Err(Error::Config("no label counts given".into()));
    }
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("label counts must be strictly increasing".into()));
    }
    if counts.iter().any(|&m| m < 2 || m > base.num_labels) {
        return Err(Error::Config(format!(
            "label counts must lie in [2, {}]",
            base.num_labels
        )));
    }
    if seeds_per_point == 0 {
        return Err(Error::Config("seeds_per_point must be at least 1".into()));
    }
    config.validate()?;

    let points: Vec<(usize, u64)> = counts
        .iter()
        .flat_map(|&m| (0..seeds_per_point as u64).map(move |k| (m, config.seed() + k)))
        .collect();

    let rows: Vec<AblationRow> = run_indexed(points.len(), jobs, |i| {
        let (count, seed) = points[i];
        // Seeded uniform label draw: first `count` of a shuffled 0..C.
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x40 | (count as u64) << 8));
        let mut all: Vec<usize> = (0..base.num_labels).collect();
        for i in (1..all.len()).rev() {
            let j = rng.gen_range(0..=i);
            all.swap(i, j);
        }
        let mut chosen: Vec<usize> = all[..count].to_vec();
        chosen.sort_unstable();

        let restricted = base.restrict_labels(&chosen)?;
        let parts = split(&restricted, test_fraction, mix_seed(seed, 0x41))?;
        let mut point_config = config.clone();
        point_config.optimizer.seed = seed;
        let (model, _) = train_flat(&point_config, &parts.train, None)?;
        let eval = evaluate(&model, &parts.validation)?;
        Ok(AblationRow {
            count,
            seed,
            top1_error: eval.top1_error,
        })
    })?;

    let errors = counts
        .iter()
        .map(|&m| {
            let point: Vec<&AblationRow> = rows.iter().filter(|r| r.count == m).collect();
            point.iter().map(|r| r.top1_error).sum::<f64>() / point.len() as f64
        })
        .collect();
    Ok(AblationResult {
        label_counts: counts.to_vec(),
        errors,
        seeds_per_point,
        rows,
    })
}

/// One paired seed of the comparison run.
#[derive(Debug, Clone)]
pub struct ComparePoint {
    pub seed: u64,
    pub flat_top1: f64,
    pub cnc_top1: f64,
    pub flat_params: usize,
    pub cnc_params: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub points: Vec<ComparePoint>,
    pub mean_flat: f64,
    pub mean_cnc: f64,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,arm,top1,params\n");
        for p in &self.points {
            out.push_str(&format!("{},flat,{},{}\n", p.seed, p.flat_top1, p.flat_params));
            out.push_str(&format!("{},cnc,{},{}\n", p.seed, p.cnc_top1, p.cnc_params));
        }
        out
    }
}

/// Paired runs under an equal total-epoch budget: the full pipeline first,
/// then the flat baseline trained for exactly as many epochs as the
/// pipeline consumed, both arms sharing the seed and the train/test split.
pub fn compare_cnc_vs_flat(
    dataset: &Dataset,
    config: &StageConfig,
    num_seeds: usize,
    test_fraction: f64,
    jobs: usize,
) -> Result<CompareReport> {
    if num_seeds == 0 {
        return Err(Error::Config("num_seeds must be at least 1".into()));
    }
    config.validate()?;

    let points = run_indexed(num_seeds, jobs, |k| {
        let seed = config.seed() + k as u64;
        let parts = split(dataset, test_fraction, mix_seed(seed, 0x50))?;
        let train = &parts.train;
        let test = &parts.validation;

        let mut seeded = config.clone();
        seeded.optimizer.seed = seed;
        let cnc = run_cnc(&seeded, train)?;
        let cnc_eval = evaluate(&cnc.final_model, test)?;

        let (flat_model, _) = train_flat(&seeded, train, Some(cnc.report.total_epochs))?;
        let flat_eval = evaluate(&flat_model, test)?;

        Ok(ComparePoint {
            seed,
            flat_top1: flat_eval.top1_error,
            cnc_top1: cnc_eval.top1_error,
            flat_params: flat_model.param_count(),
            cnc_params: cnc.final_model.param_count(),
            flags: cnc.report.flags.clone(),
        })
    })?;

    let mean = |pick: fn(&ComparePoint) -> f64| {
        points.iter().map(pick).sum::<f64>() / points.len() as f64
    };
    Ok(CompareReport {
        mean_flat: mean(|p| p.flat_top1),
        mean_cnc: mean(|p| p.cnc_top1),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{FlatHead, Head};
    use crate::net::{DenseLayer, FeatureExtractor};

    fn identity_model(c: usize) -> CncModel {
        // Features are one-hot of the true label, weights identity: a
        // perfect predictor.
        CncModel::new(
            FeatureExtractor::identity(c),
            Head::Flat(FlatHead {
                fc: DenseLayer::from_parts(Matrix::identity(c), vec![0.0; c]).unwrap(),
            }),
        )
        .unwrap()
    }

    fn one_hot_dataset(labels: &[usize], c: usize) -> Dataset {
        let mut features = Matrix::zeros(labels.len(), c);
        for (i, &l) in labels.iter().enumerate() {
            features.set(i, l, 1.0);
        }
        Dataset::new(features, labels.to_vec(), c).unwrap()
    }

    #[test]
    fn perfect_predictor_has_zero_error_and_diagonal_confusion() {
        let ds = one_hot_dataset(&[0, 1, 2, 2, 1, 0, 2], 3);
        let eval = evaluate(&identity_model(3), &ds).unwrap();
        assert_eq!(eval.top1_error, 0.0);
        assert_eq!(eval.n, 7);
        for p in 0..3 {
            for q in 0..3 {
                let expected = if p == q {
                    ds.labels.iter().filter(|&&l| l == p).count() as f64
                } else {
                    0.0
                };
                assert_eq!(eval.confusion.get(p, q), expected);
            }
        }
        assert!(eval.per_class_error.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn constant_predictor_error_is_one_minus_one_over_c() {
        // Zero weights: every logit row ties, argmax picks label 0.
        let c = 4;
        let model = CncModel::new(
            FeatureExtractor::identity(c),
            Head::Flat(FlatHead {
                fc: DenseLayer::zeros(c, c),
            }),
        )
        .unwrap();
        let labels: Vec<usize> = (0..20).map(|i| i % c).collect();
        let ds = one_hot_dataset(&labels, c);
        let eval = evaluate(&model, &ds).unwrap();
        assert!((eval.top1_error - (1.0 - 1.0 / c as f64)).abs() < 1e-12);
    }

    #[test]
    fn hand_counted_confusion_fixture() {
        // Six predictions counted by hand: truths [0,0,1,1,2,2],
        // predictions [0,1,1,1,2,0].
        let truths = [0usize, 0, 1, 1, 2, 2];
        let preds = [0usize, 1, 1, 1, 2, 0];
        let c = 3;
        // Features one-hot of the *predicted* label + identity model.
        let mut features = Matrix::zeros(truths.len(), c);
        for (i, &p) in preds.iter().enumerate() {
            features.set(i, p, 1.0);
        }
        let ds = Dataset::new(features, truths.to_vec(), c).unwrap();
        let eval = evaluate(&identity_model(c), &ds).unwrap();

        let expected = [
            [1.0, 1.0, 0.0], // true 0: one right, one called 1
            [0.0, 2.0, 0.0], // true 1: both right
            [1.0, 0.0, 1.0], // true 2: one called 0, one right
        ];
        for p in 0..c {
            for q in 0..c {
                assert_eq!(eval.confusion.get(p, q), expected[p][q]);
            }
        }
        assert!((eval.top1_error - 2.0 / 6.0).abs() < 1e-12);
        let total: f64 = eval.confusion.as_slice().iter().sum();
        assert_eq!(total, 6.0);
    }

    #[test]
    fn evaluate_is_order_independent() {
        let labels: Vec<usize> = (0..300).map(|i| (i * 7) % 3).collect();
        let ds = one_hot_dataset(&labels, 3);
        let forward = evaluate(&identity_model(3), &ds).unwrap();
        let reversed_idx: Vec<usize> = (0..ds.len()).rev().collect();
        let reversed = ds.subset(&reversed_idx).unwrap();
        let backward = evaluate(&identity_model(3), &reversed).unwrap();
        assert_eq!(forward.top1_error, backward.top1_error);
        assert_eq!(
            forward.confusion.as_slice(),
            backward.confusion.as_slice()
        );
    }

    #[test]
    fn label_space_mismatch_is_a_config_error() {
        let ds = one_hot_dataset(&[0, 1], 2);
        let err = evaluate(&identity_model(3), &ds);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn argmax_tie_breaks_to_lowest_id() {
        assert_eq!(argmax_lowest(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax_lowest(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[0.0, -1.0]), 0);
    }

    #[test]
    fn ablation_rejects_bad_counts() {
        let ds = one_hot_dataset(&[0, 1, 2, 3, 0, 1, 2, 3], 4);
        let config = StageConfig::default();
        assert!(label_count_ablation(&ds, &[2, 2], 1, &config, 0.25, 1).is_err());
        assert!(label_count_ablation(&ds, &[2, 8], 1, &config, 0.25, 1).is_err());
        assert!(label_count_ablation(&ds, &[1, 2], 1, &config, 0.25, 1).is_err());
    }
}
