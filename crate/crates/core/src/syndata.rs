//! Synthetic multimodal data with a known latent generator, plus the fixed
//! and random missingness protocols.
//!
//! Each sample draws a latent `h ~ N(0, I)` and emits one feature vector per
//! modality, `x⁽ᵐ⁾ = tanh(W_m h + b_m) + σ·η`. Every modality only sees a
//! window of the latent coordinates, so a single observed modality leaves
//! part of the sentiment score undetermined and the others are only partly
//! predictable from it. The generator maps are kept with the data so that
//! tests can regenerate any modality exactly.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::checkpoint::{self, Bundle, Tensor};
use crate::nn::Mat;
use crate::par::{self, Mode};
use crate::rng::{normal_vec, stream, Domain};

pub const MODALITY_NAMES: [&str; 3] = ["L", "V", "A"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub latent_dim: usize,
    pub modality_dims: Vec<usize>,
    pub obs_noise_std: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Fraction of latent coordinates each modality depends on.
    pub visible_fraction: f64,
    /// Multiplier mapping the unit-variance score direction onto [-3, 3].
    pub score_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            latent_dim: 8,
            modality_dims: vec![16, 8, 8],
            obs_noise_std: 0.05,
            n_train: 1000,
            n_val: 200,
            n_test: 300,
            seed: 0,
            visible_fraction: 0.75,
            score_scale: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.modality_dims.len() < 2 {
            return bad("need at least two modalities");
        }
        if self.latent_dim == 0 || self.modality_dims.contains(&0) {
            return bad("all dimensions must be positive");
        }
        if !(self.obs_noise_std >= 0.0) {
            return bad("obs_noise_std must be non-negative");
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("split sizes must be positive");
        }
        if !(self.visible_fraction > 0.0 && self.visible_fraction <= 1.0) {
            return bad("visible_fraction must lie in (0, 1]");
        }
        if !(self.score_scale > 0.0) {
            return bad("score_scale must be positive");
        }
        Ok(())
    }

    pub fn num_modalities(&self) -> usize {
        self.modality_dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.modality_dims.iter().sum()
    }
}

/// The fixed per-dataset maps that produce features and scores from a latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// `dim_m × latent_dim` per modality.
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
    pub score_weights: Vec<f64>,
    pub score_scale: f64,
}

impl Generator {
    fn sample(config: &SyntheticConfig) -> Self {
        let d = config.latent_dim;
        let m = config.num_modalities();
        let visible = ((config.visible_fraction * d as f64).ceil() as usize).clamp(1, d);
        let mut rng = stream(config.seed, Domain::Generator, 0);
        let mut weights = Vec::with_capacity(m);
        let mut biases = Vec::with_capacity(m);
        for (mi, &dim) in config.modality_dims.iter().enumerate() {
            let offset = (mi * d + m / 2) / m;
            let mut w = Mat::from_vec(dim, d, normal_vec(&mut rng, dim * d));
            let gain = 1.5 / (visible as f64).sqrt();
            for r in 0..dim {
                for c in 0..d {
                    let seen = (c + d - offset) % d < visible;
                    let x = w.at(r, c);
                    w.row_mut(r)[c] = if seen { x * gain } else { 0.0 };
                }
            }
            weights.push(w);
            biases.push(normal_vec(&mut rng, dim).into_iter().map(|b| 0.3 * b).collect());
        }
        Generator {
            weights,
            biases,
            score_weights: normal_vec(&mut rng, d),
            score_scale: config.score_scale,
        }
    }

    /// Noise-free features of modality `m` for latent `h`.
    pub fn modality(&self, m: usize, h: &[f64]) -> Vec<f64> {
        let w = &self.weights[m];
        (0..w.rows)
            .map(|r| (crate::nn::dot(w.row(r), h) + self.biases[m][r]).tanh())
            .collect()
    }

    pub fn score(&self, h: &[f64]) -> f64 {
        let proj = crate::nn::dot(&self.score_weights, h) / crate::nn::norm(&self.score_weights);
        (3.0 * self.score_scale * proj).clamp(-3.0, 3.0)
    }

    /// Latent coordinates modality `m` depends on.
    pub fn visible_coords(&self, m: usize) -> Vec<usize> {
        let w = &self.weights[m];
        (0..w.cols)
            .filter(|&c| (0..w.rows).any(|r| w.at(r, c) != 0.0))
            .collect()
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.weights {
            for x in &w.data {
                h.update(x.to_le_bytes());
            }
        }
        for b in &self.biases {
            for x in b {
                h.update(x.to_le_bytes());
            }
        }
        for x in &self.score_weights {
            h.update(x.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub id: usize,
    pub features: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub score: f64,
    /// Generator latent; only oracles and ground-truth plan construction read it.
    pub latent: Vec<f64>,
}

impl MultimodalSample {
    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&m| !self.mask[m]).collect()
    }

    /// All modalities concatenated in order.
    pub fn concat_features(&self) -> Vec<f64> {
        self.features.concat()
    }

    /// Copy with the listed modalities removed.
    pub fn masked(&self, removed: &[usize]) -> MultimodalSample {
        let mut out = self.clone();
        for &m in removed {
            out.drop_modality(m);
        }
        out
    }

    fn drop_modality(&mut self, m: usize) {
        self.mask[m] = false;
        self.features[m].iter_mut().for_each(|x| *x = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modality_dims: Vec<usize>,
    pub samples: Vec<MultimodalSample>,
    pub generator: Arc<Generator>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.modality_dims.len()
    }

    /// Start offset of each modality inside the concatenated feature vector.
    pub fn offsets(&self) -> Vec<usize> {
        offsets(&self.modality_dims)
    }
}

pub fn offsets(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}

/// Train/validation/test splits drawn from one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: SyntheticConfig,
    pub generator: Arc<Generator>,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn generate_dataset(config: &SyntheticConfig) -> Result<Benchmark> {
    generate_dataset_with(config, Mode::default())
}

pub fn generate_dataset_with(config: &SyntheticConfig, mode: Mode) -> Result<Benchmark> {
    config.validate()?;
    let generator = Arc::new(Generator::sample(config));
    let total = config.n_train + config.n_val + config.n_test;
    let samples = par::map_indexed(mode, total, |i| {
        let mut rng = stream(config.seed, Domain::Sample, i as u64);
        let latent = normal_vec(&mut rng, config.latent_dim);
        let features = (0..config.num_modalities())
            .map(|m| {
                let clean = generator.modality(m, &latent);
                if config.obs_noise_std == 0.0 {
                    return clean;
                }
                let noise = normal_vec(&mut rng, clean.len());
                clean
                    .iter()
                    .zip(noise)
                    .map(|(x, e)| x + config.obs_noise_std * e)
                    .collect()
            })
            .collect();
        MultimodalSample {
            id: i,
            features,
            mask: vec![true; config.num_modalities()],
            score: generator.score(&latent),
            latent,
        }
    });
    let mut it = samples.into_iter();
    let mut split = |n: usize| Dataset {
        modality_dims: config.modality_dims.clone(),
        samples: it.by_ref().take(n).collect(),
        generator: generator.clone(),
    };
    let train = split(config.n_train);
    let val = split(config.n_val);
    let test = split(config.n_test);
    Ok(Benchmark {
        config: config.clone(),
        generator,
        train,
        val,
        test,
    })
}

/// How modalities are removed from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskProtocol {
    /// The same modalities are removed from every sample.
    Fixed { removed: Vec<usize> },
    /// Per-sample random removal hitting an aggregate missing rate.
    Random { mr: f64, seed: u64 },
}

impl MaskProtocol {
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        match self {
            MaskProtocol::Fixed { removed } => apply_fixed_mask(dataset, removed),
            MaskProtocol::Random { mr, seed } => apply_random_mask(dataset, *mr, *seed),
        }
    }
}

pub fn apply_fixed_mask(dataset: &Dataset, removed: &[usize]) -> Result<Dataset> {
    let m = dataset.num_modalities();
    if let Some(&bad) = removed.iter().find(|&&r| r >= m) {
        return Err(Error::InvalidConfig(format!("modality {bad} out of range")));
    }
    let mut out = dataset.clone();
    for s in &mut out.samples {
        for &r in removed {
            s.drop_modality(r);
        }
        if s.observed_count() == 0 {
            return Err(Error::AllMissing);
        }
    }
    Ok(out)
}

pub fn max_missing_rate(num_modalities: usize) -> f64 {
    (num_modalities as f64 - 1.0) / num_modalities as f64
}

pub fn apply_random_mask(dataset: &Dataset, mr: f64, seed: u64) -> Result<Dataset> {
    let m = dataset.num_modalities();
    let max = max_missing_rate(m);
    if !(0.0..=max + 1e-12).contains(&mr) {
        return Err(Error::RateOutOfRange { mr, max });
    }
    let n = dataset.len();
    let per_sample = mr * m as f64;
    let base = (per_sample.floor() as usize).min(m - 1);
    let target = (mr * (n * m) as f64).round() as usize;
    let extra = target.saturating_sub(base * n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Domain::Mask, u64::MAX));
    let mut drop_count = vec![base; n];
    for &i in &order[..extra] {
        drop_count[i] = (base + 1).min(m - 1);
    }
    let mut out = dataset.clone();
    for (i, s) in out.samples.iter_mut().enumerate() {
        let mut observed: Vec<usize> = (0..m).filter(|&k| s.mask[k]).collect();
        if observed.is_empty() {
            return Err(Error::AllMissing);
        }
        let k = drop_count[i].min(observed.len() - 1);
        observed.shuffle(&mut stream(seed, Domain::Mask, s.id as u64));
        for &r in &observed[..k] {
            s.drop_modality(r);
        }
    }
    Ok(out)
}

pub fn missing_rate(dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let observed: usize = dataset.samples.iter().map(|s| s.observed_count()).sum();
    Ok(1.0 - observed as f64 / (dataset.len() * dataset.num_modalities()) as f64)
}

/// Every non-empty availability pattern, expressed as the removed set.
/// Ordered from full availability down to single modalities.
pub fn availability_patterns(num_modalities: usize) -> Vec<Vec<usize>> {
    let full = (1usize << num_modalities) - 1;
    let mut avail: Vec<usize> = (1..=full).collect();
    avail.sort_by_key(|&a| (std::cmp::Reverse(a.count_ones()), a));
    avail
        .into_iter()
        .map(|a| (0..num_modalities).filter(|&k| a & (1 << k) == 0).collect())
        .collect()
}

pub fn pattern_label(removed: &[usize], num_modalities: usize) -> String {
    (0..num_modalities)
        .filter(|k| !removed.contains(k))
        .map(|k| MODALITY_NAMES.get(k).map_or_else(|| format!("M{k}"), |s| s.to_string()))
        .collect::<Vec<_>>()
        .join("+")
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    config: SyntheticConfig,
    seed: u64,
    generator_checksum: String,
    splits: Vec<(String, usize)>,
}

fn dataset_tensors(prefix: &str, d: &Dataset, bundle: &mut Bundle) {
    let n = d.len();
    let total: usize = d.modality_dims.iter().sum();
    let feats: Vec<f64> = d.samples.iter().flat_map(|s| s.concat_features()).collect();
    let masks: Vec<f64> = d
        .samples
        .iter()
        .flat_map(|s| s.mask.iter().map(|&b| b as u8 as f64))
        .collect();
    let lat: Vec<f64> = d.samples.iter().flat_map(|s| s.latent.clone()).collect();
    let latent_dim = d.samples.first().map_or(0, |s| s.latent.len());
    bundle.insert(format!("{prefix}.features"), Tensor::f64(vec![n, total], feats));
    bundle.insert(format!("{prefix}.mask"), Tensor::f32(vec![n, d.num_modalities()], masks));
    bundle.insert(
        format!("{prefix}.score"),
        Tensor::f64(vec![n], d.samples.iter().map(|s| s.score).collect()),
    );
    bundle.insert(format!("{prefix}.latent"), Tensor::f64(vec![n, latent_dim], lat));
    bundle.insert(
        format!("{prefix}.id"),
        Tensor::f64(vec![n], d.samples.iter().map(|s| s.id as f64).collect()),
    );
}

fn dataset_from_tensors(prefix: &str, b: &Bundle, dims: &[usize], generator: &Arc<Generator>) -> Result<Dataset> {
    let feats = b.require(&format!("{prefix}.features"))?;
    let masks = b.require(&format!("{prefix}.mask"))?.to_f64();
    let scores = b.require(&format!("{prefix}.score"))?.to_f64();
    let lat = b.require(&format!("{prefix}.latent"))?;
    let ids = b.require(&format!("{prefix}.id"))?.to_f64();
    let n = scores.len();
    let latent_dim = lat.shape.get(1).copied().unwrap_or(0);
    let (feat, lat) = (feats.to_f64(), lat.to_f64());
    let total: usize = dims.iter().sum();
    let offs = offsets(dims);
    let m = dims.len();
    let samples = (0..n)
        .map(|i| MultimodalSample {
            id: ids[i] as usize,
            features: dims
                .iter()
                .zip(&offs)
                .map(|(&d, &o)| feat[i * total + o..i * total + o + d].to_vec())
                .collect(),
            mask: (0..m).map(|k| masks[i * m + k] != 0.0).collect(),
            score: scores[i],
            latent: lat[i * latent_dim..(i + 1) * latent_dim].to_vec(),
        })
        .collect();
    Ok(Dataset {
        modality_dims: dims.to_vec(),
        samples,
        generator: generator.clone(),
    })
}

/// Writes `meta.json` and `tensors.omga` under `dir`.
pub fn save_benchmark(b: &Benchmark, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        config: b.config.clone(),
        seed: b.config.seed,
        generator_checksum: b.generator.checksum(),
        splits: vec![
            ("train".into(), b.train.len()),
            ("val".into(), b.val.len()),
            ("test".into(), b.test.len()),
        ],
    };
    let path = dir.join("meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    let mut bundle = Bundle::default();
    for (m, w) in b.generator.weights.iter().enumerate() {
        bundle.insert(format!("gen.w{m}"), Tensor::f64(vec![w.rows, w.cols], w.data.clone()));
        bundle.insert(
            format!("gen.b{m}"),
            Tensor::f64(vec![b.generator.biases[m].len()], b.generator.biases[m].clone()),
        );
    }
    bundle.insert(
        "gen.score_w",
        Tensor::f64(vec![b.generator.score_weights.len()], b.generator.score_weights.clone()),
    );
    dataset_tensors("train", &b.train, &mut bundle);
    dataset_tensors("val", &b.val, &mut bundle);
    dataset_tensors("test", &b.test, &mut bundle);
    checkpoint::save(&bundle, &dir.join("tensors.omga"))
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)?;
    let bundle = checkpoint::load(&dir.join("tensors.omga"))?;
    let m = meta.config.num_modalities();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for k in 0..m {
        let w = bundle.require(&format!("gen.w{k}"))?;
        weights.push(Mat::from_vec(w.shape[0], w.shape[1], w.to_f64()));
        biases.push(bundle.require(&format!("gen.b{k}"))?.to_f64());
    }
    let generator = Arc::new(Generator {
        weights,
        biases,
        score_weights: bundle.require("gen.score_w")?.to_f64(),
        score_scale: meta.config.score_scale,
    });
    if generator.checksum() != meta.generator_checksum {
        return Err(Error::CorruptCheckpoint("generator checksum mismatch".into()));
    }
    let dims = &meta.config.modality_dims;
    Ok(Benchmark {
        train: dataset_from_tensors("train", &bundle, dims, &generator)?,
        val: dataset_from_tensors("val", &bundle, dims, &generator)?,
        test: dataset_from_tensors("test", &bundle, dims, &generator)?,
        config: meta.config,
        generator,
    })
}
