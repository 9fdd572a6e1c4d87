//! Finite-difference check of every distillation and task loss.

use reco_kd::gradcheck::{loss_suite, GradCheckOptions};
use reco_kd::{rng, Result};

fn main() -> Result<()> {
    let mut r = rng::stream(0, rng::GRADCHECK);
    for (term, report) in loss_suite(&mut r, GradCheckOptions::default())? {
        let worst = report.worst().map_or(String::new(), |w| format!(" at {}[{}]", w.param, w.index));
        println!("{term:8} {:5} coordinates, max rel err {:.2e}{worst}", report.checks.len(), report.max_rel_err());
    }
    Ok(())
}
