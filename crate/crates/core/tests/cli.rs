use std::fs;
use std::path::Path;

use tgnet::cli::{run, EXIT_OK, EXIT_USAGE};
use tgnet::formats::{matrix_from_csv, parse_pgm};

fn tgnet(args: &[&str]) -> i32 {
    run(std::iter::once("tgnet").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "q = 6\ndays = 3\nbottlenecks = 3:0.6\nseed = 5\n";

#[test]
fn generate_convert_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("net.txt");
    fs::write(&cfg, SMALL).unwrap();
    let (gen, mats, model, pred) = (root.join("gen"), root.join("mats"), root.join("ols.tgnet"), root.join("pred"));

    assert_eq!(tgnet(&["generate", "--config", p(&cfg), "--out", p(&gen)]), EXIT_OK);
    assert_eq!(fs::read_dir(gen.join("records")).unwrap().count(), 3);
    let manifest = fs::read_to_string(gen.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=5"));
    assert!(manifest.lines().any(|l| l.starts_with("output ") && l.ends_with("2015-05-01.csv")));

    assert_eq!(tgnet(&["convert", "--in", p(&gen), "--out", p(&mats), "--vmax", "80"]), EXIT_OK);
    let text = fs::read_to_string(mats.join("2015-05-02.csv")).unwrap();
    let (grid, header) = matrix_from_csv(&text, Path::new("x")).unwrap();
    assert_eq!(grid.shape(), &[6, 720]);
    assert_eq!(header.v_max, 80.0);
    assert!(grid.all_finite());

    assert_eq!(tgnet(&["train", "--data", p(&mats), "--model", "ols", "--task", "1", "--out", p(&model)]), EXIT_OK);
    assert!(model.exists());
    assert_eq!(tgnet(&["predict", "--model", p(&model), "--data", p(&mats), "--out", p(&pred)]), EXIT_OK);
    let (pgrid, pheader) = matrix_from_csv(&fs::read_to_string(pred.join("2015-05-03.csv")).unwrap(), Path::new("y")).unwrap();
    assert_eq!(pgrid.shape(), &[6, (720 - 15 - 5 + 1) * 5]);
    assert_eq!(pheader.extra["t_out"], "5");

    let eval_out = root.join("eval.csv");
    assert_eq!(
        tgnet(&["evaluate", "--pred", p(&pred), "--truth", p(&gen.join("truth")), "--out", p(&eval_out)]),
        EXIT_OK
    );
    let eval = fs::read_to_string(&eval_out).unwrap();
    let all: Vec<&str> = eval.lines().last().unwrap().split(',').collect();
    assert_eq!(all[0], "all");
    let mse: f64 = all[2].parse().unwrap();
    assert!(mse > 0.0 && mse < 100.0, "mse {mse}");
    assert_eq!(eval.lines().count(), 1 + 3 + 1);
}

#[test]
fn render_writes_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("day.csv");
    fs::write(&csv, "# sections=2 intervals=2 interval_min=2 vmax=80 day=d1\n0,40\n80,20\n").unwrap();
    let out = dir.path().join("day.pgm");
    assert_eq!(tgnet(&["render", "--matrix", p(&csv), "--out", p(&out)]), EXIT_OK);
    let (w, h, pixels) = parse_pgm(&fs::read(&out).unwrap()).unwrap();
    assert_eq!((w, h), (2, 2));
    assert_eq!(pixels, vec![0, 128, 255, 64]);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.tgnet");
    assert_eq!(tgnet(&["train", "--data", "nowhere", "--task", "5", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(tgnet(&["train", "--data", p(dir.path()), "--model", "svm", "--task", "1", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(tgnet(&["render", "--matrix", p(&dir.path().join("absent.csv")), "--out", p(&out)]), EXIT_USAGE);
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "q = 4\nlanes = 3\n").unwrap();
    assert_eq!(tgnet(&["generate", "--config", p(&bad), "--out", p(dir.path())]), EXIT_USAGE);
    assert!(!out.exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("net.txt");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(tgnet(&["generate", "--config", p(&cfg), "--out", p(&a)]), EXIT_OK);
    assert_eq!(tgnet(&["--seed", "5", "generate", "--config", p(&cfg), "--out", p(&b)]), EXIT_OK);
    assert_eq!(tgnet(&["generate", "--seed", "6", "--config", p(&cfg), "--out", p(&c)]), EXIT_OK);
    let day = |d: &Path| fs::read(d.join("records/2015-05-01.csv")).unwrap();
    assert_eq!(day(&a), day(&b));
    assert_ne!(day(&a), day(&c));
}

#[test]
fn predicting_the_training_days_reproduces_the_final_train_mse() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("net.txt");
    fs::write(&cfg, SMALL).unwrap();
    let (gen, mats, model) = (root.join("gen"), root.join("mats"), root.join("cnn.tgnet"));
    assert_eq!(tgnet(&["generate", "--config", p(&cfg), "--out", p(&gen)]), EXIT_OK);
    assert_eq!(tgnet(&["convert", "--in", p(&gen), "--out", p(&mats)]), EXIT_OK);
    let args = ["train", "--data", p(&mats), "--model", "cnn-depth-2", "--task", "1", "--divisor", "32"];
    assert_eq!(tgnet(&[&args[..], &["--epochs", "2", "--out", p(&model)]].concat()), EXIT_OK);

    // Three days: the last one validates, the first two are fitted.
    let fitted = root.join("fitted");
    fs::create_dir_all(&fitted).unwrap();
    for day in ["2015-05-01.csv", "2015-05-02.csv"] {
        fs::copy(mats.join(day), fitted.join(day)).unwrap();
    }
    let (pred, eval) = (root.join("pred"), root.join("eval.csv"));
    assert_eq!(tgnet(&["predict", "--model", p(&model), "--data", p(&fitted), "--out", p(&pred)]), EXIT_OK);
    assert_eq!(tgnet(&["evaluate", "--pred", p(&pred), "--truth", p(&fitted), "--out", p(&eval)]), EXIT_OK);

    let eval = fs::read_to_string(eval).unwrap();
    let harness: f64 = eval.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    let manifest = fs::read_to_string(root.join("cnn.tgnet.manifest.txt")).unwrap();
    let trainer: f64 = manifest
        .lines()
        .find_map(|l| l.strip_prefix("final_train_mse_kmh2="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((harness - trainer).abs() <= 1e-9 * trainer, "{harness} vs {trainer}");
}
