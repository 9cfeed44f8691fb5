// Scratch calibration harness; not part of the deliverable.

use cnc::cluster::cluster;
use cnc::data::{gen_planted, PlantedSpec};
use cnc::eval::compare_cnc_vs_flat;
use cnc::net::SgdConfig;
use cnc::pipeline::{step1, StageConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("recover");
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let momentum: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);

    match mode {
        "recover" => recover(lr, momentum, batch),
        "compare" => compare(lr, momentum, batch),
        "single" => single(),
        "ablate" => ablate(),
        "multilevel" => multilevel(),
        "mlaffinity" => mlaffinity(),
        _ => eprintln!("unknown mode {mode}"),
    }
}

fn config(seed: u64, lr: f64, momentum: f64, batch: usize) -> StageConfig {
    StageConfig {
        optimizer: SgdConfig {
            learning_rate: lr,
            momentum,
            batch_size: batch,
            seed,
            ..SgdConfig::default()
        },
        ..StageConfig::default()
    }
}

fn recover(lr: f64, momentum: f64, batch: usize) {
    let dims: Vec<usize> = std::env::var("DIMS")
        .unwrap_or_else(|_| "64,32".into())
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();
    let noise: f64 = std::env::var("NOISE").ok().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let intra: f64 = std::env::var("INTRA").ok().and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let inter: f64 = std::env::var("INTER").ok().and_then(|s| s.parse().ok()).unwrap_or(6.0);
    let mut hits = 0;
    let mut no_merge = 0;
    let mut wrong = Vec::new();
    let start = std::time::Instant::now();
    for seed in 0..20u64 {
        let ds = gen_planted(&PlantedSpec {
            seed,
            noise_sigma: noise,
            intra_spread: intra,
            inter_spread: inter,
            ..PlantedSpec::default()
        })
        .unwrap();
        let mut cfg = config(seed, lr, momentum, batch);
        cfg.extractor_dims = dims.clone();
        let s1 = match step1(&cfg, &ds) {
            Ok(s) => s,
            Err(e) => {
                println!("seed {seed}: step1 failed: {e}");
                continue;
            }
        };
        let clustering = cluster(&s1.affinity, &cfg.rule).unwrap();
        let planted = &ds.planted.as_ref().unwrap().levels()[0];
        if &clustering == planted {
            hits += 1;
        } else if clustering.is_identity() {
            no_merge += 1;
            wrong.push((seed, clustering.num_clusters()));
        } else {
            wrong.push((seed, clustering.num_clusters()));
        }
    }
    println!(
        "lr={lr} momentum={momentum} batch={batch}: exact {hits}/20, identity {no_merge}, wrong {wrong:?}, {:.1}s",
        start.elapsed().as_secs_f64()
    );
}

fn compare(lr: f64, momentum: f64, batch: usize) {
    let dims: Vec<usize> = std::env::var("DIMS")
        .unwrap_or_else(|_| "64,32".into())
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();
    let patience: usize = std::env::var("PATIENCE").ok().and_then(|s| s.parse().ok()).unwrap_or(5);
    let max_epochs: usize = std::env::var("MAXE").ok().and_then(|s| s.parse().ok()).unwrap_or(40);
    let noise: f64 = std::env::var("NOISE").ok().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let ds = gen_planted(&PlantedSpec { noise_sigma: noise, ..PlantedSpec::default() }).unwrap();
    let mut cfg = config(0, lr, momentum, batch);
    cfg.extractor_dims = dims;
    cfg.patience = patience;
    cfg.max_epochs = max_epochs;
    let start = std::time::Instant::now();
    match compare_cnc_vs_flat(&ds, &cfg, 10, 0.25, 1) {
        Ok(report) => {
            for p in &report.points {
                println!(
                    "seed {}: flat {:.4} ({} params) vs cnc {:.4} ({} params) {:?}",
                    p.seed, p.flat_top1, p.flat_params, p.cnc_top1, p.cnc_params, p.flags
                );
            }
            println!(
                "mean flat {:.4} vs mean cnc {:.4}  ({:.1}s)",
                report.mean_flat,
                report.mean_cnc,
                start.elapsed().as_secs_f64()
            );
        }
        Err(e) => println!("compare failed: {e}"),
    }
}

fn single() {
    // One pipeline run with stage diagnostics.
    let noise: f64 = std::env::var("NOISE").ok().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let patience: usize = std::env::var("PATIENCE").ok().and_then(|s| s.parse().ok()).unwrap_or(5);
    let max_epochs: usize = std::env::var("MAXE").ok().and_then(|s| s.parse().ok()).unwrap_or(40);
    let lr: f64 = std::env::var("LR").ok().and_then(|s| s.parse().ok()).unwrap_or(0.005);
    let ds = gen_planted(&PlantedSpec { noise_sigma: noise, ..PlantedSpec::default() }).unwrap();
    let ratio: f64 = std::env::var("RATIO").ok().and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let dims: Vec<usize> = std::env::var("DIMS")
        .unwrap_or_else(|_| "64,32".into())
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();
    let cfg = StageConfig {
        patience,
        max_epochs,
        hidden_ratio: ratio,
        extractor_dims: dims,
        optimizer: SgdConfig { learning_rate: lr, ..SgdConfig::default() },
        ..StageConfig::default()
    };
    let parts = cnc::data::split(&ds, 0.25, 1234).unwrap();
    let run = cnc::pipeline::run_cnc(&cfg, &parts.train).unwrap();
    for s in &run.report.stages {
        println!(
            "stage {} level {}: epochs {} best {} val_top1 {:?}",
            s.stage, s.level, s.epochs_run, s.best_epoch,
            s.val_top1.last()
        );
        if s.stage == 3 {
            for (e, ((tl, vl), vt)) in s.train_loss.iter().zip(&s.val_loss).zip(&s.val_top1).enumerate() {
                println!("  s3 epoch {e}: train {tl:.4} val {vl:.4} top1 {vt:.4}");
            }
        }
    }
    let test_eval = cnc::eval::evaluate(&run.final_model, &parts.validation).unwrap();
    println!("cnc test top1 {:.4} total epochs {}", test_eval.top1_error, run.report.total_epochs);
    let (flat, _) = cnc::pipeline::train_flat(&cfg, &parts.train, Some(run.report.total_epochs)).unwrap();
    let flat_eval = cnc::eval::evaluate(&flat, &parts.validation).unwrap();
    println!("flat test top1 {:.4}", flat_eval.top1_error);
}

fn ablate() {
    let ds = gen_planted(&PlantedSpec::default()).unwrap();
    let cfg = StageConfig {
        optimizer: SgdConfig { seed: 0, ..SgdConfig::default() },
        ..StageConfig::default()
    };
    let start = std::time::Instant::now();
    let result = cnc::eval::label_count_ablation(&ds, &[4, 8, 16], 5, &cfg, 0.25, 1).unwrap();
    for (count, err) in result.label_counts.iter().zip(&result.errors) {
        println!("count {count}: mean top1 {err:.4}");
    }
    println!("({:.1}s)", start.elapsed().as_secs_f64());
}

fn multilevel() {
    let trsd: f64 = std::env::var("TRSD").ok().and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let noise: f64 = std::env::var("NOISE").ok().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let intra: f64 = std::env::var("INTRA").ok().and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let inter: f64 = std::env::var("INTER").ok().and_then(|s| s.parse().ok()).unwrap_or(6.0);
    let auto = std::env::var("AUTO").is_ok();
    let mut both = 0;
    let mut level0_only = 0;
    let mut details = Vec::new();
    let start = std::time::Instant::now();
    for seed in 0..20u64 {
        let ds = gen_planted(&PlantedSpec {
            tiers: vec![2, 2, 4],
            noise_sigma: noise,
            intra_spread: intra,
            inter_spread: inter,
            seed,
            ..PlantedSpec::default()
        })
        .unwrap();
        let maxe: usize = std::env::var("MAXE").ok().and_then(|s| s.parse().ok()).unwrap_or(150);
        let patience: usize = std::env::var("PATIENCE").ok().and_then(|s| s.parse().ok()).unwrap_or(10);
        let mut cfg = StageConfig {
            levels: 2,
            max_epochs: maxe,
            patience,
            optimizer: SgdConfig { seed, ..SgdConfig::default() },
            ..StageConfig::default()
        };
        if !auto {
            cfg.rule.trsd = Some(trsd);
        }
        match cnc::pipeline::run_cnc(&cfg, &ds) {
            Ok(run) => {
                let planted = ds.planted.as_ref().unwrap();
                let lv = run.hierarchy.levels();
                let l0 = lv.first() == planted.levels().first();
                let l1 = lv.get(1) == planted.levels().get(1);
                if l0 && l1 {
                    both += 1;
                } else if l0 {
                    level0_only += 1;
                }
                details.push((seed, lv.len(), l0, l1));
            }
            Err(e) => println!("seed {seed}: {e}"),
        }
    }
    println!(
        "trsd={} noise={noise}: both tiers {both}/20, level0-only {level0_only}, details {details:?} ({:.1}s)",
        if auto { "auto".into() } else { trsd.to_string() },
        start.elapsed().as_secs_f64()
    );
}

fn mlaffinity() {
    // Inspect the affinity feeding level-1 clustering.
    let inter: f64 = std::env::var("INTER").ok().and_then(|s| s.parse().ok()).unwrap_or(12.0);
    let intra: f64 = std::env::var("INTRA").ok().and_then(|s| s.parse().ok()).unwrap_or(2.4);
    let noise: f64 = std::env::var("NOISE").ok().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let maxe: usize = std::env::var("MAXE").ok().and_then(|s| s.parse().ok()).unwrap_or(5);
    let ds = gen_planted(&PlantedSpec {
        tiers: vec![2, 2, 4],
        inter_spread: inter,
        intra_spread: intra,
        noise_sigma: noise,
        seed: 0,
        ..PlantedSpec::default()
    })
    .unwrap();
    let cfg = StageConfig {
        max_epochs: maxe,
        patience: maxe,
        rule: cnc::cluster::ClusterRule { trsd: Some(0.05), ..Default::default() },
        ..StageConfig::default()
    };
    let s1 = step1(&cfg, &ds).unwrap();
    let clustering = cluster(&s1.affinity, &cfg.rule).unwrap();
    println!("level0: K={} members {:?}", clustering.num_clusters(), clustering.members());
    let view = ds.relabeled(&clustering).unwrap();
    let s2 = cnc::pipeline::step2(s1.model, &clustering, &ds, &cfg, 0).unwrap();
    let affinity = cnc::pipeline::model_affinity(&s2.model, &view).unwrap();
    for l in 0..affinity.size() {
        let row: Vec<String> = affinity.row(l).iter().map(|v| format!("{v:.3}")).collect();
        println!("row {l}: {}", row.join(" "));
    }
}
