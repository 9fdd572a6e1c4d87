//! Parameter and FLOP counts of students derived from a teacher plan.

use reco_kd::model::{build_network, count_params_flops, derive_student_plan, NetworkPlan};
use reco_kd::Result;

fn main() -> Result<()> {
    let teacher = NetworkPlan::toy(1, 4);
    let input = [32, 32, 32];
    let base = count_params_flops(&teacher, input)?;
    println!("t  widths            params     flops        params/teacher");
    for t in 0..=3 {
        let plan = derive_student_plan(&teacher, t, teacher.c_min);
        let c = count_params_flops(&plan, input)?;
        assert_eq!(c.params as usize, build_network(&plan, 0)?.num_params());
        println!(
            "{t}  {:<16}  {:>9}  {:>11}  {:.4}",
            format!("{:?}", plan.widths()),
            c.params,
            c.flops,
            c.params as f64 / base.params as f64
        );
    }
    Ok(())
}
