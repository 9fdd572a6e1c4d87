//! Paired teacher/student experiment: does distillation help a 4x
//! narrower student on a phantom with a rare class? Takes tens of minutes
//! on one core.

use reco_kd::experiment::{run_paired, PairedSetup};
use reco_kd::Result;

fn main() -> Result<()> {
    let setup = PairedSetup::default();
    let start = std::time::Instant::now();
    let res = run_paired(&setup, |line| println!("[{:>5.0}s] {line}", start.elapsed().as_secs_f64()))?;
    println!(
        "median mDice: distilled {:.4}, plain {:.4}; median rare-class gain {:+.4}",
        res.median_distilled(),
        res.median_plain(),
        res.median_rare_gain()
    );
    Ok(())
}
