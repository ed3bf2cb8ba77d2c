//! Fit the classical baselines per section and score them on held-out days.

use tgnet::baselines::Predictor;
use tgnet::datagen::{generate, Bottleneck, SyntheticNetworkConfig};
use tgnet::evalbench::{score, Dataset, Split};
use tgnet::models::{fit, FitSettings, ModelId};
use tgnet::traffic_image::TaskSpec;

fn main() -> tgnet::Result<()> {
    let cfg = SyntheticNetworkConfig {
        q: 16,
        days: 5,
        bottlenecks: vec![Bottleneck { section: 8, strength: 0.7 }],
        ..Default::default()
    };
    let data = Dataset::from_raw(&generate(&cfg)?, None)?;
    let split = Split::default_for(cfg.days)?;
    let task = TaskSpec::preset(1, cfg.q)?;
    let fit_set = data.samples(&task, split.fit.clone())?;
    let val_set = data.samples(&task, split.validation.clone())?;
    let test_set = data.samples(&task, split.test.clone())?;

    let mut settings = FitSettings::default();
    settings.mlp_hidden = 64;
    settings.mlp.max_epochs = 10;
    for id in [ModelId::Ols, ModelId::Knn, ModelId::Rf, ModelId::Mlp] {
        let started = std::time::Instant::now();
        let (model, _) = fit(id, &task, &fit_set, &val_set, data.v_max, &settings)?;
        let (mse, acc) = score(&model.predict_all(&test_set)?, &test_set, data.v_max)?;
        println!("{id:>4}: MSE {mse:7.2} km/h^2, accuracy {:.3}, {:.1}s", acc, started.elapsed().as_secs_f64());
    }
    Ok(())
}
