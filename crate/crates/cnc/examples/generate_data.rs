//! Generate a planted-hierarchy dataset and inspect its structure.
//!
//! ```bash
//! cargo run --release -p cnc --example generate_data
//! ```

use cnc::data::{gen_planted, split, PlantedSpec};

fn main() -> cnc::Result<()> {
    let spec = PlantedSpec {
        tiers: vec![4, 4],
        dim: 16,
        per_class: 50,
        seed: 42,
        ..PlantedSpec::default()
    };
    let dataset = gen_planted(&spec)?;
    println!(
        "{} examples, {} classes, {} features",
        dataset.len(),
        dataset.num_labels,
        dataset.dim()
    );

    let planted = dataset.planted.as_ref().expect("generated data is planted");
    for (t, level) in planted.levels().iter().enumerate() {
        println!(
            "planted level {t}: {} ids -> {} groups {:?}",
            level.num_labels(),
            level.num_clusters(),
            level.members()
        );
    }

    let parts = split(&dataset, 0.1, spec.seed)?;
    println!(
        "stratified split: {} train / {} validation",
        parts.train.len(),
        parts.validation.len()
    );

    let path = std::env::temp_dir().join("cnc_example_dataset.cncd");
    dataset.save_binary(&path)?;
    println!("saved binary dataset to {}", path.display());
    Ok(())
}
