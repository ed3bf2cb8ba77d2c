//! Compare every model on one task of a small network and write the report.
//!
//! Usage: benchmark [OUT_DIR]

use tgnet::datagen::{generate, Bottleneck, SyntheticNetworkConfig};
use tgnet::evalbench::{run_benchmark, table_text, write_report, BenchConfig, Dataset};
use tgnet::models::ModelId;

fn main() -> tgnet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "bench-report".into());
    let cfg = SyntheticNetworkConfig {
        q: 12,
        days: 5,
        bottlenecks: vec![Bottleneck { section: 6, strength: 0.7 }],
        ..Default::default()
    };
    let data = Dataset::from_raw(&generate(&cfg)?, None)?;
    let mut config = BenchConfig {
        tasks: vec![1],
        models: vec![ModelId::Cnn(1), ModelId::Cnn(2), ModelId::Ols, ModelId::Knn, ModelId::Rf, ModelId::Mlp],
        ..Default::default()
    };
    config.settings.divisor = 16;
    config.settings.cnn.max_epochs = 8;
    config.settings.mlp.max_epochs = 8;
    config.settings.mlp_hidden = 64;
    let report = run_benchmark(&data, &config)?;
    print!("{}", table_text("MSE (km/h^2)", &report.results, 2, |r| r.mse_kmh2));
    print!("{}", table_text("accuracy", &report.results, 3, |r| r.accuracy));
    let written = write_report(std::path::Path::new(&out), &report)?;
    println!("wrote {} files under {out}", written.len());
    Ok(())
}
