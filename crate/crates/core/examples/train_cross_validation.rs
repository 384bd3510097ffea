//! Five-fold cross-validation on a small synthetic cohort.

use decgan::data::{generate_synthetic, SyntheticSpec};
use decgan::trainer::{run_cv, write_cv_report, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).and_then(|e| e.parse().ok()).unwrap_or(5);
    let spec = SyntheticSpec {
        n_samples: 40,
        ..SyntheticSpec::desk_default(11)
    };
    let (ds, truth) = generate_synthetic(&spec)?;
    let cfg = TrainConfig {
        epochs,
        seed: 11,
        ..TrainConfig::default()
    };
    let report = run_cv(&ds, Some(&truth), &cfg, |fold, state| {
        let last = state.history.last().expect("trained");
        println!("fold {fold}: l_m {:.4} rmse {:.4}", last.l_m, last.rmse);
        Ok(())
    })?;
    for f in &report.folds {
        println!("fold {} acc {:.3} recovery {:?}", f.fold, f.evaluation.metrics.acc, f.evaluation.recovery);
    }
    println!("mean acc {:.3} auc {:?} recovery {:?}", report.mean.acc, report.mean.auc, report.mean.recovery);
    write_cv_report(&report, "cv_report".as_ref())?;
    Ok(())
}
