//! Save a fitted model, load it back and confirm identical forecasts.

use tgnet::baselines::Predictor;
use tgnet::datagen::{generate, SyntheticNetworkConfig};
use tgnet::evalbench::{Dataset, Split};
use tgnet::models::{fit, FitSettings, ModelId, TrainedModel};
use tgnet::traffic_image::TaskSpec;

fn main() -> tgnet::Result<()> {
    let cfg = SyntheticNetworkConfig { q: 10, days: 4, bottlenecks: vec![], ..Default::default() };
    let data = Dataset::from_raw(&generate(&cfg)?, None)?;
    let split = Split::default_for(cfg.days)?;
    let task = TaskSpec::preset(3, cfg.q)?;
    let fit_set = data.samples(&task, split.fit.clone())?;
    let val_set = data.samples(&task, split.validation.clone())?;
    let test_set = data.samples(&task, split.test.clone())?;

    let mut settings = FitSettings::default();
    settings.divisor = 32;
    settings.cnn.max_epochs = 2;
    let dir = std::env::temp_dir().join("tgnet-model-file");
    std::fs::create_dir_all(&dir)?;
    for id in [ModelId::Cnn(1), ModelId::Ols, ModelId::Knn, ModelId::Rf] {
        let (model, _) = fit(id, &task, &fit_set, &val_set, data.v_max, &settings)?;
        let path = dir.join(format!("{id}.tgnet"));
        model.save(&path)?;
        let loaded = TrainedModel::load(&path)?;
        let same = model
            .predict_all(&test_set)?
            .iter()
            .zip(loaded.predict_all(&test_set)?)
            .all(|(a, b)| a.data() == b.data());
        let size = std::fs::metadata(&path)?.len();
        println!("{id}: {} bytes, reloaded forecasts identical: {same}", size);
    }
    Ok(())
}
