//! Runs the seed-averaged ablations and prints one line per arm.

use bgnn::ablation::{run_ablation, ABLATION_SEEDS, ARM_BLS, ARM_GATED, ARM_NO_RESAMPLING, ARM_PLAIN};
use bgnn::train::worker_count;

fn main() -> bgnn::Result<()> {
    let report = run_ablation(&ABLATION_SEEDS, worker_count(), |a| {
        println!(
            "seed {} {:14} mR@100 {:.3} tail {:.3} auc {:.3} baseline {:.3}",
            a.seed,
            a.arm,
            a.mean_recall,
            a.tail_mean_recall,
            a.auc_rce.unwrap_or(f64::NAN),
            a.auc_baseline.unwrap_or(f64::NAN)
        );
    })?;
    println!("tail mR@100: plain {:.4} gated {:.4}", report.tail(ARM_PLAIN), report.tail(ARM_GATED));
    println!("tail mR@100: no resampling {:.4} bls {:.4}", report.tail(ARM_NO_RESAMPLING), report.tail(ARM_BLS));
    println!("AUC: rce {:.4} baseline {:.4}", report.auc_rce(ARM_BLS), report.auc_baseline(ARM_BLS));
    println!("training {:.1}s", report.train_seconds);
    Ok(())
}
