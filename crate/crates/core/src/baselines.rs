//! Per-section statistical baselines and the fully connected network.
//!
//! OLS, KNN and the random forest see one section at a time: the features of
//! a row are that section's own last `t_in` speeds and the targets are its
//! next `t_out` speeds. They cannot use neighbouring sections. The MLP is a
//! plain [`Network`] over the whole image.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::cnn::{DenseLayer, Layer, Network};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::traffic_image::{Sample, TaskSpec};

pub const KNN_K: usize = 10;
pub const OLS_RIDGE: f64 = 1e-8;

/// Anything that maps a `[1, q, t_in]` input to a `q * t_out` forecast.
pub trait Predictor: Sync {
    fn predict_input(&self, input: &Tensor) -> Result<Tensor>;

    fn predict_all(&self, samples: &[Sample]) -> Result<Vec<Tensor>> {
        samples.par_iter().map(|s| self.predict_input(&s.input)).collect()
    }
}

impl Predictor for Network {
    fn predict_input(&self, input: &Tensor) -> Result<Tensor> {
        self.predict(input)
    }
}

/// Rows of one section: `features` is `rows x t_in`, `targets` is
/// `rows x t_out`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionDataset {
    pub t_in: usize,
    pub t_out: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl SectionDataset {
    pub fn new(t_in: usize, t_out: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if t_in == 0 || t_out == 0 || features.len() % t_in != 0 || targets.len() % t_out != 0 {
            return Err(Error::arg("feature and target widths must be positive and uniform"));
        }
        if features.len() / t_in != targets.len() / t_out {
            return Err(Error::arg(format!(
                "{} feature rows but {} target rows",
                features.len() / t_in,
                targets.len() / t_out
            )));
        }
        Ok(Self { t_in, t_out, features, targets })
    }

    /// Splits image samples into one dataset per section.
    pub fn from_samples(samples: &[Sample], task: &TaskSpec) -> Result<Vec<Self>> {
        let (q, t_in, t_out) = (task.q, task.t_in, task.t_out);
        let mut out: Vec<Self> = (0..q)
            .map(|_| Self {
                t_in,
                t_out,
                features: Vec::with_capacity(samples.len() * t_in),
                targets: Vec::with_capacity(samples.len() * t_out),
            })
            .collect();
        for s in samples {
            s.input.expect_shape(&task.input_shape())?;
            s.target.expect_shape(&[task.output_dim()])?;
            for (i, ds) in out.iter_mut().enumerate() {
                ds.features.extend_from_slice(&s.input.data()[i * t_in..(i + 1) * t_in]);
                ds.targets.extend_from_slice(&s.target.data()[i * t_out..(i + 1) * t_out]);
            }
        }
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.features.len() / self.t_in
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.t_in..(i + 1) * self.t_in]
    }

    pub fn target_row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.t_out..(i + 1) * self.t_out]
    }
}

/// Applies a per-section row predictor across a whole image input.
fn predict_sections(
    input: &Tensor,
    q: usize,
    t_in: usize,
    t_out: usize,
    f: impl Fn(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<Tensor> {
    input.expect_shape(&[1, q, t_in])?;
    let mut out = Vec::with_capacity(q * t_out);
    for s in 0..q {
        out.extend(f(s, &input.data()[s * t_in..(s + 1) * t_in])?);
    }
    Tensor::from_vec(&[q * t_out], out)
}

// ---------------------------------------------------------------- OLS

/// One linear head per output step and section. `weights[s]` is
/// `[t_out, t_in + 1]`, the last column holding the intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct OlsModel {
    pub task: TaskSpec,
    pub weights: Vec<Tensor>,
}

/// In-place Cholesky factor of a symmetric `n x n` matrix (lower triangle).
fn cholesky(a: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    Some(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Least squares on centred features with ridge `OLS_RIDGE` on the slopes.
pub fn ols_fit_section(ds: &SectionDataset, section: usize) -> Result<Tensor> {
    let (p, m, rows) = (ds.t_in, ds.t_out, ds.rows());
    if rows < p + 1 {
        return Err(Error::arg(format!(
            "section {section}: {rows} rows cannot determine {} coefficients",
            p + 1
        )));
    }
    let n = rows as f64;
    let mut mx = vec![0.0; p];
    let mut my = vec![0.0; m];
    for r in 0..rows {
        mx.iter_mut().zip(ds.feature_row(r)).for_each(|(a, x)| *a += x);
        my.iter_mut().zip(ds.target_row(r)).for_each(|(a, y)| *a += y);
    }
    mx.iter_mut().for_each(|v| *v /= n);
    my.iter_mut().for_each(|v| *v /= n);

    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p * m];
    let mut xc = vec![0.0; p];
    for r in 0..rows {
        xc.iter_mut()
            .zip(ds.feature_row(r).iter().zip(&mx))
            .for_each(|(c, (x, mu))| *c = x - mu);
        for i in 0..p {
            for j in 0..=i {
                xtx[i * p + j] += xc[i] * xc[j];
            }
            for (h, y) in ds.target_row(r).iter().enumerate() {
                xty[h * p + i] += xc[i] * (y - my[h]);
            }
        }
    }
    for i in 0..p {
        xtx[i * p + i] += OLS_RIDGE;
        for j in 0..i {
            xtx[j * p + i] = xtx[i * p + j];
        }
    }
    cholesky(&mut xtx, p).ok_or(Error::Degenerate { section })?;

    let mut w = vec![0.0; m * (p + 1)];
    for h in 0..m {
        let beta = &mut xty[h * p..(h + 1) * p];
        cholesky_solve(&xtx, p, beta);
        let row = &mut w[h * (p + 1)..(h + 1) * (p + 1)];
        row[..p].copy_from_slice(beta);
        row[p] = my[h] - beta.iter().zip(&mx).map(|(b, x)| b * x).sum::<f64>();
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate { section });
    }
    Tensor::from_vec(&[m, p + 1], w)
}

pub fn ols_fit(datasets: &[SectionDataset], task: &TaskSpec) -> Result<OlsModel> {
    check_sections(datasets, task)?;
    let weights = datasets
        .par_iter()
        .enumerate()
        .map(|(s, ds)| ols_fit_section(ds, s))
        .collect::<Result<_>>()?;
    Ok(OlsModel { task: *task, weights })
}

/// `weights` (`[t_out, t_in + 1]`) applied to one feature row.
pub fn ols_apply(weights: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = weights.shape()[1];
    weights
        .data()
        .chunks(cols)
        .map(|row| row[..cols - 1].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[cols - 1])
        .collect()
}

impl Predictor for OlsModel {
    fn predict_input(&self, input: &Tensor) -> Result<Tensor> {
        let t = &self.task;
        predict_sections(input, t.q, t.t_in, t.t_out, |s, x| Ok(ols_apply(&self.weights[s], x)))
    }
}

fn check_sections(datasets: &[SectionDataset], task: &TaskSpec) -> Result<()> {
    if datasets.len() != task.q || datasets.iter().any(|d| d.t_in != task.t_in || d.t_out != task.t_out) {
        return Err(Error::arg(format!(
            "expected {} section datasets of width {}->{}",
            task.q, task.t_in, task.t_out
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- KNN

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Indices of the `k` nearest rows by squared Euclidean distance, nearest
/// first, ties going to the lower index.
pub fn knn_neighbours(ds: &SectionDataset, query: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || ds.rows() < k {
        return Err(Error::arg(format!("k={k} needs at least {k} training rows, have {}", ds.rows())));
    }
    if query.len() != ds.t_in {
        return Err(Error::ShapeMismatch {
            expected: vec![ds.t_in],
            got: vec![query.len()],
        });
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (index, row) in ds.features.chunks(ds.t_in).enumerate() {
        let dist = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let c = Candidate { dist, index };
        if heap.len() < k {
            heap.push(c);
        } else if c < *heap.peek().unwrap() {
            heap.pop();
            heap.push(c);
        }
    }
    Ok(heap.into_sorted_vec().into_iter().map(|c| c.index).collect())
}

/// Mean target of the `k` nearest rows, summed nearest first.
pub fn knn_predict(ds: &SectionDataset, query: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; ds.t_out];
    for i in knn_neighbours(ds, query, k)? {
        sum.iter_mut().zip(ds.target_row(i)).for_each(|(a, y)| *a += y);
    }
    Ok(sum.into_iter().map(|v| v / k as f64).collect())
}

/// Lazy learner: the model is the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    pub task: TaskSpec,
    pub k: usize,
    pub datasets: Vec<SectionDataset>,
}

impl KnnModel {
    pub fn fit(datasets: Vec<SectionDataset>, task: &TaskSpec, k: usize) -> Result<Self> {
        check_sections(&datasets, task)?;
        if let Some(ds) = datasets.iter().find(|d| d.rows() < k) {
            return Err(Error::arg(format!("k={k} needs at least {k} training rows, have {}", ds.rows())));
        }
        Ok(Self { task: *task, k, datasets })
    }
}

impl Predictor for KnnModel {
    fn predict_input(&self, input: &Tensor) -> Result<Tensor> {
        let t = &self.task;
        predict_sections(input, t.q, t.t_in, t.t_out, |s, x| knn_predict(&self.datasets[s], x, self.k))
    }
}

// ---------------------------------------------------------------- forest

#[derive(Clone, Debug, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample: f64,
    /// Train each tree on a resample with replacement rather than all rows.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 10,
            max_depth: 12,
            min_leaf: 5,
            feature_subsample: 1.0 / 3.0,
            bootstrap: true,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 {
            return Err(Error::arg("n_trees and min_leaf must be >= 1"));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(Error::arg("feature_subsample must lie in (0, 1]"));
        }
        Ok(())
    }

    fn features_per_split(&self, t_in: usize) -> usize {
        ((t_in as f64 * self.feature_subsample).round() as usize).clamp(1, t_in)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Leaf(Vec<f64>),
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

struct TreeBuilder<'a> {
    ds: &'a SectionDataset,
    config: &'a ForestConfig,
    rng: Rng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    /// Running mean, exact when every row agrees.
    fn mean(&self, rows: &[usize]) -> Vec<f64> {
        let mut m = self.ds.target_row(rows[0]).to_vec();
        for (k, &r) in rows.iter().enumerate().skip(1) {
            for (a, y) in m.iter_mut().zip(self.ds.target_row(r)) {
                *a += (y - *a) / (k + 1) as f64;
            }
        }
        m
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        let split = if depth < self.config.max_depth && rows.len() >= 2 * self.config.min_leaf {
            self.best_split(rows)
        } else {
            None
        };
        match split {
            None => self.nodes[id] = Node::Leaf(self.mean(rows)),
            Some((feature, threshold)) => {
                let t_in = self.ds.t_in;
                let feats = &self.ds.features;
                rows.sort_by(|&a, &b| {
                    let (xa, xb) = (feats[a * t_in + feature] > threshold, feats[b * t_in + feature] > threshold);
                    xa.cmp(&xb)
                });
                let cut = rows.partition_point(|&r| feats[r * t_in + feature] <= threshold);
                let (l, r) = rows.split_at_mut(cut);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[id] = Node::Split { feature, threshold, left, right };
            }
        }
        id
    }

    /// Feature and threshold minimising the summed squared error of both
    /// children, among a random subset of features.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let (t_in, t_out, min_leaf) = (self.ds.t_in, self.ds.t_out, self.config.min_leaf);
        let n = rows.len();
        let mut candidates: Vec<usize> = (0..t_in).collect();
        self.rng.shuffle(&mut candidates);
        candidates.truncate(self.config.features_per_split(t_in));
        candidates.sort_unstable();

        let mut total = vec![0.0; t_out];
        let mut total_sq = 0.0;
        for &r in rows {
            for (a, y) in total.iter_mut().zip(self.ds.target_row(r)) {
                *a += y;
                total_sq += y * y;
            }
        }
        let sse = |sum: &[f64], sq: f64, k: f64| sq - sum.iter().map(|s| s * s).sum::<f64>() / k;
        let parent = sse(&total, total_sq, n as f64);
        let mut best: Option<(f64, usize, f64)> = None;

        let mut order = rows.to_vec();
        let mut left = vec![0.0; t_out];
        for &f in &candidates {
            let x = |r: usize| self.ds.features[r * t_in + f];
            order.sort_by(|&a, &b| x(a).total_cmp(&x(b)).then(a.cmp(&b)));
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut left_sq = 0.0;
            for i in 1..n {
                for (a, y) in left.iter_mut().zip(self.ds.target_row(order[i - 1])) {
                    *a += y;
                    left_sq += y * y;
                }
                let (lo, hi) = (x(order[i - 1]), x(order[i]));
                if i < min_leaf || n - i < min_leaf || lo == hi {
                    continue;
                }
                let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let score = sse(&left, left_sq, i as f64) + sse(&right, total_sq - left_sq, (n - i) as f64);
                if best.is_none_or(|(b, _, _)| score < b) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some((score, f, if mid < hi { mid } else { lo }));
                }
            }
        }
        best.filter(|(score, _, _)| *score < parent - 1e-12 * parent.abs().max(1e-300))
            .map(|(_, f, t)| (f, t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub t_out: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Running mean over trees, exact when every tree agrees.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut mean = self.trees[0].predict(x).to_vec();
        for (k, t) in self.trees.iter().enumerate().skip(1) {
            for (a, v) in mean.iter_mut().zip(t.predict(x)) {
                *a += (v - *a) / (k + 1) as f64;
            }
        }
        mean
    }
}

/// Fits one forest. Tree `i` draws from child stream `i` of `rng`.
pub fn forest_fit(ds: &SectionDataset, config: &ForestConfig, rng: &Rng) -> Result<Forest> {
    config.validate()?;
    let n = ds.rows();
    if n == 0 {
        return Err(Error::arg("forest needs at least one training row"));
    }
    let trees = (0..config.n_trees)
        .map(|i| {
            let mut tree_rng = rng.fork(i as u64);
            let mut rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| tree_rng.below(n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = TreeBuilder { ds, config, rng: tree_rng, nodes: Vec::new() };
            b.build(&mut rows, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { t_out: ds.t_out, trees })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    pub task: TaskSpec,
    pub forests: Vec<Forest>,
}

impl ForestModel {
    /// Section `s` uses child stream `s` of `config.seed`.
    pub fn fit(datasets: &[SectionDataset], task: &TaskSpec, config: &ForestConfig) -> Result<Self> {
        check_sections(datasets, task)?;
        let root = Rng::new(config.seed);
        let forests = datasets
            .par_iter()
            .enumerate()
            .map(|(s, ds)| forest_fit(ds, config, &root.fork(s as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { task: *task, forests })
    }
}

impl Predictor for ForestModel {
    fn predict_input(&self, input: &Tensor) -> Result<Tensor> {
        let t = &self.task;
        predict_sections(input, t.q, t.t_in, t.t_out, |s, x| Ok(self.forests[s].predict(x)))
    }
}

// ---------------------------------------------------------------- MLP

/// `Flatten -> (Dense(hidden) -> ReLU) x n_hidden -> Dense(q * t_out)` with
/// zero parameters.
pub fn mlp_build(q: usize, t_in: usize, t_out: usize, hidden: usize, n_hidden: usize) -> Result<Network> {
    if hidden == 0 {
        return Err(Error::arg("hidden_units must be >= 1"));
    }
    let mut layers = vec![Layer::Flatten];
    let mut width = q * t_in;
    for _ in 0..n_hidden {
        layers.push(Layer::Dense(DenseLayer::zeros(width, hidden)?));
        layers.push(Layer::Relu);
        width = hidden;
    }
    layers.push(Layer::Dense(DenseLayer::zeros(width, q * t_out)?));
    Network::new(&[1, q, t_in], layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::training::{mse, train, TrainConfig};
    use proptest::prelude::*;

    fn random_ds(rows: usize, t_in: usize, t_out: usize, rng: &mut Rng) -> SectionDataset {
        let f = (0..rows * t_in).map(|_| rng.uniform(0.0, 1.0)).collect();
        let t = (0..rows * t_out).map(|_| rng.uniform(0.0, 1.0)).collect();
        SectionDataset::new(t_in, t_out, f, t).unwrap()
    }

    fn planted(rows: usize, rng: &mut Rng) -> (SectionDataset, Vec<[f64; 4]>) {
        // Three features, two outputs, last entry is the intercept.
        let truth = vec![[0.5, -1.25, 2.0, 0.3], [-0.7, 0.1, 0.9, -1.1]];
        let mut f = Vec::new();
        let mut t = Vec::new();
        for _ in 0..rows {
            let x: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            for w in &truth {
                t.push(w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3]);
            }
            f.extend(x);
        }
        (SectionDataset::new(3, 2, f, t).unwrap(), truth)
    }

    fn train_mse(w: &Tensor, ds: &SectionDataset) -> f64 {
        let mut sum = 0.0;
        for r in 0..ds.rows() {
            let p = ols_apply(w, ds.feature_row(r));
            sum += p.iter().zip(ds.target_row(r)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        sum / ds.targets.len() as f64
    }

    #[test]
    fn from_samples_slices_each_section() {
        let task = TaskSpec::new(2, 1, 3).unwrap();
        let grid = Tensor::from_vec(&[3, 4], (0..12).map(f64::from).collect()).unwrap();
        let samples = crate::traffic_image::make_samples(&grid, &task, "d").unwrap();
        let ds = SectionDataset::from_samples(&samples, &task).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds[1].rows(), 2);
        assert_eq!(ds[1].feature_row(1), &[5.0, 6.0]);
        assert_eq!(ds[1].target_row(1), &[7.0]);
    }

    #[test]
    fn ols_recovers_planted_model() {
        let (ds, truth) = planted(60, &mut Rng::new(3));
        let w = ols_fit_section(&ds, 0).unwrap();
        for (h, row) in truth.iter().enumerate() {
            for j in 0..4 {
                let got = w.get(&[h, j]).unwrap();
                assert!((got - row[j]).abs() < 1e-6, "w[{h},{j}] = {got}");
            }
        }
    }

    #[test]
    fn ols_on_constant_series_is_its_mean() {
        let ds = SectionDataset::new(2, 1, vec![0.4; 20], vec![0.4; 10]).unwrap();
        let w = ols_fit_section(&ds, 0).unwrap();
        assert!(w.get(&[0, 0]).unwrap().abs() < 1e-6);
        assert!(w.get(&[0, 1]).unwrap().abs() < 1e-6);
        assert!((w.get(&[0, 2]).unwrap() - 0.4).abs() < 1e-6);
    }

    #[test]
    fn ols_rejects_underdetermined_data() {
        let ds = SectionDataset::new(2, 1, vec![0.1, 0.2], vec![0.3]).unwrap();
        let err = ols_fit_section(&ds, 7).unwrap_err().to_string();
        assert!(err.contains("section 7"), "{err}");
    }

    #[test]
    fn ols_names_a_degenerate_section() {
        let ds = SectionDataset::new(1, 1, vec![f64::NAN, 0.2, 0.3], vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(ols_fit_section(&ds, 4), Err(Error::Degenerate { section: 4 })));
    }

    #[test]
    fn ols_residuals_are_orthogonal_and_optimal() {
        let ds = random_ds(80, 4, 2, &mut Rng::new(9));
        let w = ols_fit_section(&ds, 0).unwrap();
        for h in 0..2 {
            for j in 0..=4 {
                let dot: f64 = (0..ds.rows())
                    .map(|r| {
                        let x = ds.feature_row(r);
                        let e = ds.target_row(r)[h] - ols_apply(&w, x)[h];
                        e * if j < 4 { x[j] } else { 1.0 }
                    })
                    .sum();
                assert!(dot.abs() < 1e-6, "residual . feature {j} = {dot}");
            }
        }
        let base = train_mse(&w, &ds);
        for i in 0..w.len() {
            for delta in [1e-3, -1e-3] {
                let mut moved = w.clone();
                moved.data_mut()[i] += delta;
                assert!(train_mse(&moved, &ds) >= base);
            }
        }
    }

    #[test]
    fn knn_exact_match_and_global_mean() {
        let ds = random_ds(30, 3, 2, &mut Rng::new(1));
        for r in 0..ds.rows() {
            assert_eq!(knn_predict(&ds, ds.feature_row(r), 1).unwrap(), ds.target_row(r));
        }
        let all = knn_predict(&ds, &[0.5, 0.5, 0.5], 30).unwrap();
        for h in 0..2 {
            let mean = (0..30).map(|r| ds.target_row(r)[h]).sum::<f64>() / 30.0;
            assert!((all[h] - mean).abs() < 1e-12);
        }
        assert!(knn_predict(&ds, &[0.0; 3], 31).is_err());
    }

    #[test]
    fn knn_ties_go_to_lower_index() {
        let ds = SectionDataset::new(1, 1, vec![1.0, -1.0, 1.0, 3.0], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(knn_neighbours(&ds, &[0.0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(knn_neighbours(&ds, &[1.0], 2).unwrap(), vec![0, 2]);
    }

    /// Sort every distance, keep the first k.
    fn knn_oracle(ds: &SectionDataset, query: &[f64], k: usize) -> Vec<f64> {
        let mut all: Vec<(f64, usize)> = (0..ds.rows())
            .map(|r| {
                let mut d = 0.0;
                for j in 0..ds.t_in {
                    let diff = ds.feature_row(r)[j] - query[j];
                    d += diff * diff;
                }
                (d, r)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut out = vec![0.0; ds.t_out];
        for &(_, r) in &all[..k] {
            for h in 0..ds.t_out {
                out[h] += ds.target_row(r)[h];
            }
        }
        out.iter().map(|v| v / k as f64).collect()
    }

    #[test]
    fn knn_matches_sort_oracle() {
        let mut rng = Rng::new(50);
        let ds = random_ds(50, 5, 3, &mut rng);
        for _ in 0..50 {
            let q: Vec<f64> = (0..5).map(|_| rng.uniform(0.0, 1.0)).collect();
            assert_eq!(knn_predict(&ds, &q, KNN_K).unwrap(), knn_oracle(&ds, &q, KNN_K));
        }
    }

    #[test]
    fn forest_on_one_distinct_row_predicts_it() {
        let ds = SectionDataset::new(2, 2, [0.3, 0.7].repeat(12), [0.1, 0.9].repeat(12)).unwrap();
        let f = forest_fit(&ds, &ForestConfig::default(), &Rng::new(0)).unwrap();
        assert_eq!(f.predict(&[0.3, 0.7]), vec![0.1, 0.9]);
        assert_eq!(f.predict(&[5.0, -1.0]), vec![0.1, 0.9]);
    }

    #[test]
    fn forest_stumps_predict_the_mean() {
        let ds = random_ds(40, 3, 1, &mut Rng::new(4));
        let mean = ds.targets.iter().sum::<f64>() / 40.0;
        let exact = ForestConfig { max_depth: 0, bootstrap: false, ..Default::default() };
        let f = forest_fit(&ds, &exact, &Rng::new(0)).unwrap();
        assert!((f.predict(&[0.2, 0.2, 0.2])[0] - mean).abs() < 1e-12);
        // With resampling each stump holds a bootstrap mean instead.
        let resampled = ForestConfig { max_depth: 0, ..Default::default() };
        let f = forest_fit(&ds, &resampled, &Rng::new(0)).unwrap();
        assert!((f.predict(&[0.2, 0.2, 0.2])[0] - mean).abs() < 0.1);
    }

    #[test]
    fn forest_learns_piecewise_constant_target() {
        let mut rng = Rng::new(8);
        let rows = 300;
        let f: Vec<f64> = (0..rows * 3).map(|_| rng.uniform(0.0, 1.0)).collect();
        let t: Vec<f64> = (0..rows)
            .map(|r| match f[r * 3 + 1] {
                x if x < 0.3 => 0.2,
                x if x < 0.7 => 0.9,
                _ => 0.5,
            })
            .collect();
        let ds = SectionDataset::new(3, 1, f, t).unwrap();
        let mean = ds.targets.iter().sum::<f64>() / rows as f64;
        let var = ds.targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / rows as f64;
        let config = ForestConfig { min_leaf: 1, max_depth: 20, bootstrap: false, ..Default::default() };
        let forest = forest_fit(&ds, &config, &Rng::new(1)).unwrap();
        let err = (0..rows)
            .map(|r| (forest.predict(ds.feature_row(r))[0] - ds.target_row(r)[0]).powi(2))
            .sum::<f64>()
            / rows as f64;
        assert!(err < 1e-3 * var, "mse {err} var {var}");
    }

    #[test]
    fn forest_is_deterministic() {
        let task = TaskSpec::new(4, 2, 3).unwrap();
        let mut rng = Rng::new(2);
        let ds: Vec<_> = (0..3).map(|_| random_ds(60, 4, 2, &mut rng)).collect();
        let a = ForestModel::fit(&ds, &task, &ForestConfig::default()).unwrap();
        let b = ForestModel::fit(&ds, &task, &ForestConfig::default()).unwrap();
        assert_eq!(a, b);
        let other = ForestModel::fit(&ds, &task, &ForestConfig { seed: 7, ..Default::default() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn mlp_layer_dims() {
        let net = mlp_build(236, 20, 5, 1000, 3).unwrap();
        let dims: Vec<(usize, usize)> = net
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some((d.in_dim(), d.out_dim())),
                _ => None,
            })
            .collect();
        assert_eq!(dims, vec![(4720, 1000), (1000, 1000), (1000, 1000), (1000, 1180)]);
        assert!(mlp_build(4, 2, 1, 0, 3).is_err());
    }

    #[test]
    fn zero_mlp_outputs_final_bias() {
        let mut net = mlp_build(3, 4, 2, 8, 3).unwrap();
        let last = net.params_mut().pop().unwrap();
        last.data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let x = Tensor::rand_uniform(&[1, 3, 4], 0.0, 1.0, &mut Rng::new(0)).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    }

    #[test]
    fn mlp_overfits_five_samples() {
        let task = TaskSpec::new(4, 2, 3).unwrap();
        let mut rng = Rng::new(11);
        let samples: Vec<Sample> = (0..5)
            .map(|i| Sample {
                input: Tensor::rand_uniform(&[1, 3, 4], 0.0, 1.0, &mut rng).unwrap(),
                target: Tensor::rand_uniform(&[6], 0.0, 1.0, &mut rng).unwrap(),
                day_label: "d".into(),
                start: i,
            })
            .collect();
        let mut net = mlp_build(task.q, task.t_in, task.t_out, 64, 3).unwrap();
        net.initialize(&mut Rng::new(1));
        let config = TrainConfig { batch_size: 5, max_epochs: 500, patience: 500, ..Default::default() };
        let (net, _) = train(net, &samples, &samples, &config, 1.0).unwrap();
        let worst = samples
            .iter()
            .map(|s| mse(&net.predict(&s.input).unwrap(), &s.target).unwrap())
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "mse {worst}");
    }

    #[test]
    fn section_models_follow_the_sample_schema() {
        let task = TaskSpec::new(3, 2, 4).unwrap();
        let mut rng = Rng::new(5);
        let grid = Tensor::rand_uniform(&[4, 40], 0.0, 1.0, &mut rng).unwrap();
        let samples = crate::traffic_image::make_samples(&grid, &task, "d").unwrap();
        let ds = SectionDataset::from_samples(&samples, &task).unwrap();
        let models: Vec<Box<dyn Predictor>> = vec![
            Box::new(ols_fit(&ds, &task).unwrap()),
            Box::new(KnnModel::fit(ds.clone(), &task, 1).unwrap()),
            Box::new(ForestModel::fit(&ds, &task, &ForestConfig::default()).unwrap()),
        ];
        for m in &models {
            let out = m.predict_all(&samples).unwrap();
            assert_eq!(out.len(), samples.len());
            assert!(out.iter().all(|t| t.shape() == [8]));
        }
        // Memorised windows come back exactly.
        let knn = models[1].predict_all(&samples).unwrap();
        for (p, s) in knn.iter().zip(&samples) {
            assert_eq!(p, &s.target);
        }
    }

    proptest! {
        #[test]
        fn knn_self_query_returns_own_target(seed in any::<u64>(), rows in 1usize..40) {
            let ds = random_ds(rows, 3, 2, &mut Rng::new(seed));
            for r in 0..rows {
                prop_assert_eq!(knn_predict(&ds, ds.feature_row(r), 1).unwrap(), ds.target_row(r).to_vec());
            }
        }

        #[test]
        fn knn_agrees_with_oracle(seed in any::<u64>(), rows in 10usize..60, k in 1usize..10) {
            let mut rng = Rng::new(seed);
            let ds = random_ds(rows, 4, 2, &mut rng);
            let q: Vec<f64> = (0..4).map(|_| rng.uniform(0.0, 1.0)).collect();
            prop_assert_eq!(knn_predict(&ds, &q, k).unwrap(), knn_oracle(&ds, &q, k));
        }
    }
}
