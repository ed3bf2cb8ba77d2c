//! From GPS-style speed records to normalized training windows.

use tgnet::datagen::{emit_gps, generate_day, SyntheticNetworkConfig};
use tgnet::numerics::Rng;
use tgnet::traffic_image::{aggregate, build_matrix, impute, make_samples, normalize, DaySpan, TaskSpec};

fn main() -> tgnet::Result<()> {
    let cfg = SyntheticNetworkConfig { q: 12, days: 1, bottlenecks: vec![], ..Default::default() };
    let truth = generate_day(&cfg, 0)?;
    let records = emit_gps(&truth, cfg.day_start(0), 3, 2.0, &mut Rng::new(7));
    println!("{} records, first: {:?}", records.len(), records[0]);

    let agg = aggregate(&records, cfg.q, cfg.interval_minutes, DaySpan::full_day(cfg.day_start(0)))?;
    let gaps: usize = agg.series.iter().map(|s| s.missing_count()).sum();
    println!("aggregated {} sections, {gaps} empty intervals, {} rejected", agg.series.len(), agg.rejected.len());

    let order: Vec<usize> = (0..cfg.q).collect();
    let image = build_matrix(&impute(&agg.series)?, &order, &truth.day_label)?;
    let grid = normalize(&image, 80.0)?;
    println!("image {:?}, normalized range [{:.3}, {:.3}]", grid.shape(), grid.data().iter().copied().fold(1.0, f64::min), grid.max());

    for task_id in 1..=4 {
        let task = TaskSpec::preset(task_id, cfg.q)?;
        let samples = make_samples(&grid, &task, &image.day_label)?;
        println!(
            "task {task_id}: {} -> {} intervals, {} windows, input {:?}, target {:?}",
            task.t_in,
            task.t_out,
            samples.len(),
            samples[0].input.shape(),
            samples[0].target.shape()
        );
    }
    Ok(())
}
