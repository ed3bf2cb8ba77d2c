//! Train a narrow depth-2 CNN on a small synthetic network.

use tgnet::cnn::build_preset;
use tgnet::datagen::{generate, Bottleneck, SyntheticNetworkConfig};
use tgnet::evalbench::{Dataset, Split};
use tgnet::numerics::Rng;
use tgnet::traffic_image::TaskSpec;
use tgnet::training::{evaluate_mse, train, TrainConfig};

fn main() -> tgnet::Result<()> {
    let cfg = SyntheticNetworkConfig {
        q: 12,
        days: 5,
        bottlenecks: vec![Bottleneck { section: 6, strength: 0.6 }],
        ..Default::default()
    };
    let data = Dataset::from_raw(&generate(&cfg)?, None)?;
    let split = Split::default_for(cfg.days)?;
    let task = TaskSpec::preset(1, cfg.q)?;
    let fit_set = data.samples(&task, split.fit.clone())?;
    let val_set = data.samples(&task, split.validation.clone())?;
    let test_set = data.samples(&task, split.test.clone())?;

    let mut net = build_preset(2, &task, 16)?;
    net.initialize(&mut Rng::new(42));
    let config = TrainConfig { learning_rate: 0.05, max_epochs: 15, ..Default::default() };
    let (net, report) = train(net, &fit_set, &val_set, &config, data.v_max)?;

    print!("{}", report.to_csv());
    let v2 = data.v_max * data.v_max;
    println!(
        "best epoch {}, train {:.2} km/h^2, validation {:.2} km/h^2, test {:.2} km/h^2",
        report.best_epoch,
        report.final_train_mse_kmh2(),
        report.best_val_mse() * v2,
        evaluate_mse(&net, &test_set)? * v2
    );
    Ok(())
}
