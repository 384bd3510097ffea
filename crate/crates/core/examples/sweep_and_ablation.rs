//! A small (t, k) grid and the three regularizer variants.

use decgan::data::{generate_synthetic, SyntheticSpec};
use decgan::trainer::{ablation, sweep_tk, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec {
        n_samples: 20,
        ..SyntheticSpec::desk_default(13)
    };
    let (ds, truth) = generate_synthetic(&spec)?;
    let cfg = TrainConfig {
        epochs: 2,
        folds: 2,
        seed: 13,
        ..TrainConfig::default()
    };
    for row in sweep_tk(&ds, Some(&truth), &cfg, &[1, 2], &[4, 5])?.rows {
        println!("t {} k {}: acc {:.3} recovery {:?}", row.t, row.k, row.acc, row.recovery);
    }
    for row in ablation(&ds, Some(&truth), &cfg)?.rows {
        println!("{}: acc {:.3} f1 {:.3}", row.variant, row.acc, row.f1);
    }
    Ok(())
}
