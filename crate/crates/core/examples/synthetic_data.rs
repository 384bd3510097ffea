//! Generates the default synthetic cohort and writes it to a directory.

use decgan::data::{dataset_hash, generate_synthetic, load_dataset, save_dataset, save_ground_truth, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synthetic_data".into());
    let spec = SyntheticSpec::desk_default(7);
    let (ds, truth) = generate_synthetic(&spec)?;
    save_dataset(&ds, dir.as_ref(), true)?;
    save_ground_truth(&truth, dir.as_ref())?;

    let back = load_dataset(dir.as_ref())?;
    println!("{} subjects, {:?} (nodes, features), classes {:?}", back.len(), back.dims(), back.class_names());
    for (class, circuits) in &truth {
        println!("class {class} planted circuits {circuits:?}");
    }
    println!("sha256 {}", dataset_hash(dir.as_ref())?);
    Ok(())
}
