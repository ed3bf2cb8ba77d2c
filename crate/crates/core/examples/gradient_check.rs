//! Finite-difference check of backpropagation through a small CNN.

use tgnet::cnn::build_preset;
use tgnet::numerics::{Rng, Tensor};
use tgnet::traffic_image::{Sample, TaskSpec};
use tgnet::training::grad_check;

fn main() -> tgnet::Result<()> {
    let task = TaskSpec::new(6, 2, 5)?;
    let mut rng = Rng::new(3);
    let sample = Sample {
        input: Tensor::rand_uniform(&task.input_shape(), 0.0, 1.0, &mut rng)?,
        target: Tensor::rand_uniform(&[task.output_dim()], 0.0, 1.0, &mut rng)?,
        day_label: "check".into(),
        start: 0,
    };
    for depth in 1..=4 {
        let mut net = build_preset(depth, &task, 64)?;
        net.initialize(&mut rng);
        let report = grad_check(&net, &sample, 1e-5, 1e-4)?;
        let worst = report.worst.expect("at least one parameter");
        println!(
            "depth {depth}: {} parameters checked, {} skipped at kinks, max relative error {:.2e} ({}), e.g. analytic {:.9} vs numeric {:.9}",
            report.checked,
            report.kinks,
            report.max_rel_error,
            if report.passed { "ok" } else { "MISMATCH" },
            worst.analytic,
            worst.numeric
        );
    }
    Ok(())
}
