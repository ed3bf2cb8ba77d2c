//! Model identifiers, fitting, and the `TGNET1` model file.
//!
//! A model file is text up to the `end` line, then raw tensors:
//!
//! ```text
//! TGNET1
//! type=CNN1
//! <key>=<value>          (sorted by key)
//! tensors=<count>
//! end
//! per tensor: rank as u32 LE, each dim as u64 LE, values as f64 LE
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::baselines::{
    mlp_build, ols_fit, Forest, ForestConfig, ForestModel, KnnModel, Node, OlsModel, Predictor, SectionDataset,
    Tree, KNN_K,
};
use crate::cnn::{build_preset, Network};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::traffic_image::{Sample, TaskSpec};
use crate::training::{train, TrainConfig, TrainReport};

pub const MAGIC: &str = "TGNET1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelId {
    Cnn(usize),
    Ols,
    Knn,
    Rf,
    Mlp,
}

impl ModelId {
    pub const ALL: [ModelId; 8] = [
        ModelId::Cnn(1),
        ModelId::Cnn(2),
        ModelId::Cnn(3),
        ModelId::Cnn(4),
        ModelId::Ols,
        ModelId::Knn,
        ModelId::Rf,
        ModelId::Mlp,
    ];

    pub fn type_tag(&self) -> &'static str {
        match self {
            ModelId::Cnn(_) => "CNN1",
            ModelId::Ols => "OLS1",
            ModelId::Knn => "KNN1",
            ModelId::Rf => "RF1",
            ModelId::Mlp => "MLP1",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Cnn(d) => write!(f, "cnn-depth-{d}"),
            ModelId::Ols => f.write_str("ols"),
            ModelId::Knn => f.write_str("knn"),
            ModelId::Rf => f.write_str("rf"),
            ModelId::Mlp => f.write_str("mlp"),
        }
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id = match s.trim() {
            "ols" => ModelId::Ols,
            "knn" => ModelId::Knn,
            "rf" => ModelId::Rf,
            "mlp" => ModelId::Mlp,
            other => match other.strip_prefix("cnn-depth-").and_then(|d| d.parse().ok()) {
                Some(d @ 1..=4) => ModelId::Cnn(d),
                _ => {
                    return Err(Error::arg(format!(
                        "unknown model `{s}`; expected cnn-depth-1..4, ols, knn, rf or mlp"
                    )))
                }
            },
        };
        Ok(id)
    }
}

/// Hyperparameters for every model kind.
#[derive(Clone, Debug, PartialEq)]
pub struct FitSettings {
    pub divisor: usize,
    pub cnn: TrainConfig,
    pub mlp: TrainConfig,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub forest: ForestConfig,
    pub knn_k: usize,
    /// Seeds network initialisation.
    pub init_seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            divisor: 1,
            cnn: TrainConfig::default(),
            mlp: TrainConfig::default(),
            mlp_hidden: 1000,
            mlp_layers: 3,
            forest: ForestConfig::default(),
            knn_k: KNN_K,
            init_seed: 42,
        }
    }
}

impl FitSettings {
    /// Same settings with every random stream derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.cnn.seed = seed;
        self.mlp.seed = seed;
        self.forest.seed = seed;
        self.init_seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelBody {
    Network(Network),
    Ols(OlsModel),
    Knn(KnnModel),
    Forest(ForestModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub id: ModelId,
    pub task: TaskSpec,
    pub v_max: f64,
    /// Channel divisor for CNNs, 0 otherwise.
    pub divisor: usize,
    pub body: ModelBody,
}

impl Predictor for TrainedModel {
    fn predict_input(&self, input: &Tensor) -> Result<Tensor> {
        match &self.body {
            ModelBody::Network(n) => n.predict_input(input),
            ModelBody::Ols(m) => m.predict_input(input),
            ModelBody::Knn(m) => m.predict_input(input),
            ModelBody::Forest(m) => m.predict_input(input),
        }
    }
}

/// Trains or fits one model. Networks use `validation` for early stopping
/// and return their [`TrainReport`]; the other kinds ignore it.
pub fn fit(
    id: ModelId,
    task: &TaskSpec,
    train_set: &[Sample],
    validation: &[Sample],
    v_max: f64,
    settings: &FitSettings,
) -> Result<(TrainedModel, Option<TrainReport>)> {
    let wrap = |body, divisor| TrainedModel { id, task: *task, v_max, divisor, body };
    let network = |mut net: Network, config: &TrainConfig| -> Result<(Network, TrainReport)> {
        net.initialize(&mut Rng::new(settings.init_seed));
        train(net, train_set, validation, config, v_max)
    };
    Ok(match id {
        ModelId::Cnn(depth) => {
            let (net, report) = network(build_preset(depth, task, settings.divisor)?, &settings.cnn)?;
            (wrap(ModelBody::Network(net), settings.divisor), Some(report))
        }
        ModelId::Mlp => {
            let net = mlp_build(task.q, task.t_in, task.t_out, settings.mlp_hidden, settings.mlp_layers)?;
            let (net, report) = network(net, &settings.mlp)?;
            (wrap(ModelBody::Network(net), 0), Some(report))
        }
        ModelId::Ols => {
            let ds = SectionDataset::from_samples(train_set, task)?;
            (wrap(ModelBody::Ols(ols_fit(&ds, task)?), 0), None)
        }
        ModelId::Knn => {
            let ds = SectionDataset::from_samples(train_set, task)?;
            (wrap(ModelBody::Knn(KnnModel::fit(ds, task, settings.knn_k)?), 0), None)
        }
        ModelId::Rf => {
            let ds = SectionDataset::from_samples(train_set, task)?;
            (wrap(ModelBody::Forest(ForestModel::fit(&ds, task, &settings.forest)?), 0), None)
        }
    })
}

/// Tagged bundle of metadata and tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub tag: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut head = format!("{MAGIC}\ntype={}\n", self.tag);
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') || k == "type" || k == "tensors" {
                return Err(Error::Format(format!("unusable metadata `{k}={v}`")));
            }
            head.push_str(&format!("{k}={v}\n"));
        }
        head.push_str(&format!("tensors={}\nend\n", self.tensors.len()));
        let mut out = head.into_bytes();
        for t in &self.tensors {
            out.extend((t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Format(msg.to_string());
        let mut at = 0;
        let mut next_line = || -> Result<&str> {
            let end = bytes[at..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            let line = std::str::from_utf8(&bytes[at..at + end]).map_err(|_| bad("header is not UTF-8"))?;
            at += end + 1;
            Ok(line)
        };
        if next_line()? != MAGIC {
            return Err(bad("missing TGNET1 magic"));
        }
        let tag = next_line()?
            .strip_prefix("type=")
            .ok_or_else(|| bad("missing type tag"))?
            .to_string();
        let mut meta = BTreeMap::new();
        let count: usize = loop {
            let line = next_line()?;
            let (k, v) = line.split_once('=').ok_or_else(|| bad("header line is not key=value"))?;
            if k == "tensors" {
                break v.parse().map_err(|_| bad("bad tensor count"))?;
            }
            meta.insert(k.to_string(), v.to_string());
        };
        if next_line()? != "end" {
            return Err(bad("missing end of header"));
        }

        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated tensor data"))?;
            at += n;
            Ok(s)
        };
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            if rank == 0 || rank > 8 {
                return Err(bad("bad tensor rank"));
            }
            let shape = (0..rank)
                .map(|_| Ok(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("tensor too large"))?;
            let raw = take(len.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor::from_vec(&shape, data)?);
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        Ok(Self { tag, meta, tensors })
    }
}

fn meta_get<T: FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    meta.get(key)
        .ok_or_else(|| Error::Format(format!("missing `{key}`")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad `{key}`")))
}

fn load_params(net: &mut Network, tensors: Vec<Tensor>) -> Result<()> {
    let mut params = net.params_mut();
    if params.len() != tensors.len() {
        return Err(Error::Format(format!(
            "architecture has {} parameter tensors, file has {}",
            params.len(),
            tensors.len()
        )));
    }
    for (p, t) in params.iter_mut().zip(tensors) {
        t.expect_shape(p.shape())?;
        **p = t;
    }
    Ok(())
}

fn tree_to_tensor(tree: &Tree, t_out: usize) -> Result<Tensor> {
    let width = 5 + t_out;
    let mut data = Vec::with_capacity(tree.nodes.len() * width);
    for node in &tree.nodes {
        match node {
            Node::Leaf(v) => {
                data.extend([0.0; 5]);
                data.extend(v);
            }
            Node::Split { feature, threshold, left, right } => {
                data.extend([1.0, *feature as f64, *threshold, *left as f64, *right as f64]);
                data.extend(std::iter::repeat_n(0.0, t_out));
            }
        }
    }
    Tensor::from_vec(&[tree.nodes.len(), width], data)
}

fn tree_from_tensor(t: &Tensor, t_in: usize, t_out: usize) -> Result<Tree> {
    let width = 5 + t_out;
    if t.rank() != 2 || t.shape()[1] != width {
        return Err(Error::Format("bad tree tensor".into()));
    }
    let n = t.shape()[0];
    let index = |v: f64, limit: usize| -> Result<usize> {
        if v.fract() == 0.0 && v >= 0.0 && (v as usize) < limit {
            Ok(v as usize)
        } else {
            Err(Error::Format("bad tree index".into()))
        }
    };
    let nodes = t
        .data()
        .chunks(width)
        .enumerate()
        .map(|(i, row)| {
            Ok(if row[0] == 0.0 {
                Node::Leaf(row[5..].to_vec())
            } else {
                // Children always follow their parent.
                let (left, right) = (index(row[3], n)?, index(row[4], n)?);
                if left <= i || right <= i {
                    return Err(Error::Format("tree children must follow parents".into()));
                }
                Node::Split { feature: index(row[1], t_in)?, threshold: row[2], left, right }
            })
        })
        .collect::<Result<_>>()?;
    Ok(Tree { nodes })
}

impl TrainedModel {
    pub fn to_container(&self) -> Result<Container> {
        let t = &self.task;
        let mut meta = BTreeMap::new();
        meta.insert("preset".to_string(), self.id.to_string());
        meta.insert("q".to_string(), t.q.to_string());
        meta.insert("t_in".to_string(), t.t_in.to_string());
        meta.insert("t_out".to_string(), t.t_out.to_string());
        meta.insert("divisor".to_string(), self.divisor.to_string());
        meta.insert("vmax".to_string(), self.v_max.to_string());
        let tensors = match &self.body {
            ModelBody::Network(net) => {
                meta.insert("arch".to_string(), net.describe());
                net.params().into_iter().cloned().collect()
            }
            ModelBody::Ols(m) => m.weights.clone(),
            ModelBody::Knn(m) => {
                meta.insert("k".to_string(), m.k.to_string());
                let mut out = Vec::with_capacity(2 * m.datasets.len());
                for ds in &m.datasets {
                    out.push(Tensor::from_vec(&[ds.rows(), ds.t_in], ds.features.clone())?);
                    out.push(Tensor::from_vec(&[ds.rows(), ds.t_out], ds.targets.clone())?);
                }
                out
            }
            ModelBody::Forest(m) => {
                let n_trees = m.forests.first().map_or(0, |f| f.trees.len());
                meta.insert("n_trees".to_string(), n_trees.to_string());
                m.forests
                    .iter()
                    .flat_map(|f| f.trees.iter().map(|tree| tree_to_tensor(tree, t.t_out)))
                    .collect::<Result<_>>()?
            }
        };
        Ok(Container { tag: self.id.type_tag().to_string(), meta, tensors })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let id: ModelId = meta_get(&c.meta, "preset")?;
        if id.type_tag() != c.tag {
            return Err(Error::Format(format!("type tag {} does not match preset {id}", c.tag)));
        }
        let task = TaskSpec::new(meta_get(&c.meta, "t_in")?, meta_get(&c.meta, "t_out")?, meta_get(&c.meta, "q")?)?;
        let v_max: f64 = meta_get(&c.meta, "vmax")?;
        let divisor = meta_get(&c.meta, "divisor")?;
        let q = task.q;
        let body = match id {
            ModelId::Cnn(_) | ModelId::Mlp => {
                let arch: String = meta_get(&c.meta, "arch")?;
                let mut net = Network::from_description(&task.input_shape(), &arch)?;
                if net.output_dim() != task.output_dim() {
                    return Err(Error::Format("network output does not match the task".into()));
                }
                load_params(&mut net, c.tensors)?;
                ModelBody::Network(net)
            }
            ModelId::Ols => {
                if c.tensors.len() != q || c.tensors.iter().any(|w| w.shape() != [task.t_out, task.t_in + 1]) {
                    return Err(Error::Format("bad OLS weights".into()));
                }
                ModelBody::Ols(OlsModel { task, weights: c.tensors })
            }
            ModelId::Knn => {
                if c.tensors.len() != 2 * q {
                    return Err(Error::Format("bad KNN training set".into()));
                }
                let mut it = c.tensors.into_iter();
                let datasets = (0..q)
                    .map(|_| {
                        let (f, t) = (it.next().unwrap(), it.next().unwrap());
                        SectionDataset::new(task.t_in, task.t_out, f.into_data(), t.into_data())
                    })
                    .collect::<Result<Vec<_>>>()?;
                ModelBody::Knn(KnnModel::fit(datasets, &task, meta_get(&c.meta, "k")?)?)
            }
            ModelId::Rf => {
                let n_trees: usize = meta_get(&c.meta, "n_trees")?;
                if n_trees == 0 || c.tensors.len() != q * n_trees {
                    return Err(Error::Format("bad forest".into()));
                }
                let forests = c
                    .tensors
                    .chunks(n_trees)
                    .map(|chunk| {
                        Ok(Forest {
                            t_out: task.t_out,
                            trees: chunk
                                .iter()
                                .map(|t| tree_from_tensor(t, task.t_in, task.t_out))
                                .collect::<Result<_>>()?,
                        })
                    })
                    .collect::<Result<_>>()?;
                ModelBody::Forest(ForestModel { task, forests })
            }
        };
        Ok(Self { id, task, v_max, divisor, body })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container()?.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(Container::from_bytes(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
