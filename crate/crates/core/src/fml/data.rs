//! Multimodal datasets: a synthetic generator where every modality sees the
//! latent class through its own partial view, a CSV loader, and the split of
//! training data over UAVs (IID or Dirichlet label skew).

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::FmlError;
use crate::scenario::ScenarioConfig;

/// Feature rows of one modality with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows `idx` in that order.
    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples { x: self.x.select(Axis(0), idx), y: idx.iter().map(|&i| self.y[i]).collect() }
    }
}

/// Row-aligned samples of every modality sharing one label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSamples {
    pub x: Vec<Array2<f64>>,
    pub y: Vec<usize>,
}

impl MultiSamples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn modality(&self, m: usize) -> Samples {
        Samples { x: self.x[m].clone(), y: self.y.clone() }
    }

    pub fn select(&self, idx: &[usize]) -> MultiSamples {
        MultiSamples {
            x: self.x.iter().map(|x| x.select(Axis(0), idx)).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// The data of one modality cluster: the partitions of its UAVs and the
/// server's probe rows of that modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityDataset {
    pub modality: usize,
    pub uavs: Vec<usize>,
    pub partitions: Vec<Samples>,
    pub probe: Samples,
}

/// Everything a training run needs. Each UAV's partition is kept with all
/// modalities so the same draw serves multimodal and unimodal runs; a run
/// only reads the modality the UAV is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedData {
    pub partitions: Vec<MultiSamples>,
    pub probe: MultiSamples,
    pub test: MultiSamples,
    pub num_classes: usize,
}

impl FederatedData {
    pub fn num_modalities(&self) -> usize {
        self.probe.x.len()
    }

    /// Modality clusters for an assignment of one modality per UAV.
    pub fn clusters(&self, assignment: &[usize]) -> Vec<ModalityDataset> {
        let mut out: Vec<ModalityDataset> = Vec::new();
        for (u, &m) in assignment.iter().enumerate() {
            let pos = match out.iter().position(|c| c.modality == m) {
                Some(p) => p,
                None => {
                    out.push(ModalityDataset { modality: m, uavs: vec![], partitions: vec![], probe: self.probe.modality(m) });
                    out.len() - 1
                }
            };
            out[pos].uavs.push(u);
            out[pos].partitions.push(self.partitions[u].modality(m));
        }
        out.sort_by_key(|c| c.modality);
        out
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-class counts summing to `n` for the proportions `p` (largest
/// remainder, ties to the lower class).
pub fn apportion(n: usize, p: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &c in order.iter().cycle().take(missing) {
        counts[c] += 1;
    }
    counts
}

/// A Dirichlet(alpha, …, alpha) draw. Very small `alpha` can underflow every
/// gamma draw to zero; the draw then puts all mass on one random class.
pub fn dirichlet<R: Rng>(alpha: f64, classes: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let g: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let total: f64 = g.iter().sum();
    if total > 0.0 && total.is_finite() {
        g.iter().map(|v| v / total).collect()
    } else {
        let mut p = vec![0.0; classes];
        p[rng.gen_range(0..classes)] = 1.0;
        p
    }
}

/// Label sequence of each UAV: uniform labels in the IID case, Dirichlet class
/// proportions otherwise. `classes` lists the labels available.
fn uav_labels(cfg: &ScenarioConfig, classes: &[usize], seed: u64) -> Vec<Vec<usize>> {
    let mut rng = stream_rng(seed, 1);
    cfg.samples_per_uav
        .iter()
        .map(|&n| {
            let mut labels: Vec<usize> = if cfg.non_iid {
                let p = dirichlet(cfg.dirichlet_alpha, classes.len(), &mut rng);
                apportion(n, &p).iter().zip(classes).flat_map(|(&k, &c)| std::iter::repeat(c).take(k)).collect()
            } else {
                (0..n).map(|_| classes[rng.gen_range(0..classes.len())]).collect()
            };
            labels.shuffle(&mut rng);
            labels
        })
        .collect()
}

/// Class centers of the synthetic generator. Modality `m` only resolves the
/// pair a class falls into after a shift by `m`, so every modality confuses
/// a different set of class pairs and only their combination separates all
/// classes.
struct SynthModel {
    centers: Vec<Vec<Array1<f64>>>,
    groups: usize,
    noise: f64,
}

impl SynthModel {
    fn new(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Self {
        let groups = cfg.num_classes.div_ceil(2);
        let centers = (0..cfg.num_modalities)
            .map(|_| {
                (0..groups)
                    .map(|_| {
                        let v: Array1<f64> = (0..cfg.input_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        let norm = v.dot(&v).sqrt().max(f64::MIN_POSITIVE);
                        v * (cfg.class_separation / norm)
                    })
                    .collect()
            })
            .collect();
        Self { centers, groups, noise: cfg.feature_noise }
    }

    fn group(&self, class: usize, modality: usize, classes: usize) -> usize {
        (((class + modality) % classes) / 2).min(self.groups - 1)
    }

    fn draw<R: Rng>(&self, labels: &[usize], classes: usize, rng: &mut R) -> MultiSamples {
        let x = self
            .centers
            .iter()
            .enumerate()
            .map(|(m, centers)| {
                let dim = centers[0].len();
                let mut x = Array2::zeros((labels.len(), dim));
                for (i, &c) in labels.iter().enumerate() {
                    let center = &centers[self.group(c, m, classes)];
                    for d in 0..dim {
                        x[[i, d]] = center[d] + self.noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                x
            })
            .collect();
        MultiSamples { x, y: labels.to_vec() }
    }
}

fn balanced_labels<R: Rng>(n: usize, classes: usize, rng: &mut R) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(rng);
    y
}

/// Synthetic two-or-more-modality data: a latent class drives a Gaussian
/// cluster in every modality. Deterministic in `seed`.
pub fn synth_multimodal_dataset(cfg: &ScenarioConfig, seed: u64) -> FederatedData {
    let classes = cfg.num_classes;
    let model = SynthModel::new(cfg, &mut stream_rng(seed, 0));
    let labels = uav_labels(cfg, &(0..classes).collect::<Vec<_>>(), seed);
    let mut rng = stream_rng(seed, 2);
    let partitions = labels.iter().map(|y| model.draw(y, classes, &mut rng)).collect();
    let probe_y = balanced_labels(cfg.probe_set_size, classes, &mut rng);
    let probe = model.draw(&probe_y, classes, &mut rng);
    let test_y = balanced_labels(cfg.test_set_size, classes, &mut rng);
    let test = model.draw(&test_y, classes, &mut rng);
    FederatedData { partitions, probe, test, num_classes: classes }
}

/// A labeled table split into training and test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub train: MultiSamples,
    pub test: MultiSamples,
    pub num_classes: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Reads a numeric CSV with a header row. Every column is z-scored (a
/// constant column becomes zeros), rows are ordered by a hash of their index
/// and the last 30% (rounded up) form the test set. Labels must be
/// non-negative integers.
pub fn load_csv_dataset(path: &Path, modality_columns: &[Vec<String>], label_column: &str) -> Result<TabularDataset, FmlError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| FmlError::Io(e.to_string()))?;
    let header: HashMap<String, usize> = reader
        .headers()
        .map_err(|e| FmlError::Io(e.to_string()))?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let find = |name: &str| header.get(name).copied().ok_or_else(|| FmlError::UnknownColumn(name.to_string()));
    let label_idx = find(label_column)?;
    let feature_idx: Vec<Vec<usize>> =
        modality_columns.iter().map(|cols| cols.iter().map(|c| find(c)).collect()).collect::<Result<_, _>>()?;
    if feature_idx.is_empty() || feature_idx.iter().any(|c| c.is_empty()) {
        return Err(FmlError::EmptyModality);
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let record = record.map_err(|_| FmlError::MalformedRow(line))?;
        let cell = |j: usize| record.get(j).and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite());
        let label = cell(label_idx).filter(|v| *v >= 0.0 && v.fract() == 0.0).ok_or(FmlError::MalformedRow(line))?;
        labels.push(label as usize);
        let row = feature_idx.iter().flatten().map(|&j| cell(j).ok_or(FmlError::MalformedRow(line))).collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let width = feature_idx.iter().map(|c| c.len()).sum();
    let mut all = Array2::from_shape_vec((n, width), rows.concat()).expect("rows have equal width");
    for mut col in all.columns_mut() {
        let mean = col.mean().unwrap_or(0.0);
        let sd = col.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0).sqrt();
        col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 });
    }
    let mut offset = 0;
    let x: Vec<Array2<f64>> = feature_idx
        .iter()
        .map(|cols| {
            let block = all.slice(ndarray::s![.., offset..offset + cols.len()]).to_owned();
            offset += cols.len();
            block
        })
        .collect();
    let table = MultiSamples { x, y: labels };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (splitmix64(i as u64), i));
    let n_train = n - (n * 3).div_ceil(10);
    let num_classes = table.y.iter().max().map_or(0, |m| m + 1);
    Ok(TabularDataset { train: table.select(&order[..n_train]), test: table.select(&order[n_train..]), num_classes })
}

impl TabularDataset {
    /// Federated view of the table: the probe set is a random slice of the
    /// training rows (at most a fifth of them) and each UAV draws its
    /// `samples_per_uav` rows, with replacement, from the training rows of
    /// the labels its IID or Dirichlet allocation asks for.
    pub fn federate(&self, cfg: &ScenarioConfig, seed: u64) -> Result<FederatedData, FmlError> {
        if self.train.is_empty() {
            return Err(FmlError::EmptyModality);
        }
        let mut rng = stream_rng(seed, 3);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let n_probe = cfg.probe_set_size.min(self.train.len() / 5).max(1);
        let probe = self.train.select(&order[..n_probe]);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for &i in &order[n_probe..] {
            by_class[self.train.y[i]].push(i);
        }
        if by_class.iter().all(|c| c.is_empty()) {
            by_class[self.train.y[order[0]]].push(order[0]);
        }
        let present: Vec<usize> = (0..self.num_classes).filter(|&c| !by_class[c].is_empty()).collect();
        let partitions = uav_labels(cfg, &present, seed)
            .iter()
            .map(|labels| {
                let idx: Vec<usize> = labels.iter().map(|&c| *by_class[c].choose(&mut rng).unwrap()).collect();
                self.train.select(&idx)
            })
            .collect();
        Ok(FederatedData { partitions, probe, test: self.test.clone(), num_classes: self.num_classes })
    }
}
