//! Generate a synthetic ring network and summarize each day.

use tgnet::datagen::{generate, SyntheticNetworkConfig};

fn main() -> tgnet::Result<()> {
    let cfg = SyntheticNetworkConfig { days: 3, ..Default::default() };
    print!("{}", cfg.to_text());
    for day in generate(&cfg)? {
        let observed: Vec<f64> = day.grid.data().iter().copied().filter(|v| !v.is_nan()).collect();
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let slowest = observed.iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "{}: {}x{} cells, {} missing, mean {:.1} km/h, slowest {:.1} km/h",
            day.day_label,
            day.sections(),
            day.intervals(),
            day.missing_count(),
            mean,
            slowest
        );
    }
    Ok(())
}
