//! Plan-driven evidence retrieval over a non-parametric knowledge base.
//!
//! Entries are `(key, value, semantic)` rows built from fully observed
//! training samples. A query mixes the observation embedding with the plan
//! condition, scores every key by temperature-scaled cosine similarity,
//! keeps the exact top-K and aggregates their values with a softmax
//! restricted to that subset.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::Encoders;
use crate::error::{Error, Result};
use crate::harness::checkpoint::{self, Bundle};
use crate::nn::{cosine, dot, norm, Init, Linear, Mat, ParamId, ParamStore, Tape, Var};
use crate::planner::{ground_truth_plan, Schema};
use crate::rng::{stream, Domain};
use crate::syndata::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub kappa: f64,
    pub normalize_query: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 10,
            kappa: 0.07,
            normalize_query: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    /// Unit-norm keys, N×d.
    pub keys: Arc<Mat>,
    /// Target latents, N×d_z.
    pub values: Arc<Mat>,
    /// Plan-space embeddings, N×d_S.
    pub semantics: Arc<Mat>,
    /// Sample id each entry came from.
    pub source_ids: Vec<usize>,
    pub source_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbMeta {
    pub n: usize,
    pub d: usize,
    pub d_z: usize,
    pub d_s: usize,
    pub kappa: f64,
    pub k: usize,
    pub source_checksum: String,
}

impl KnowledgeBase {
    pub fn len(&self) -> usize {
        self.keys.rows
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows == 0
    }

    /// Position of the entry built from sample `id`, if any.
    pub fn entry_of(&self, id: usize) -> Option<usize> {
        self.source_ids.binary_search(&id).ok()
    }

    pub fn meta(&self, cfg: &RetrievalConfig) -> KbMeta {
        KbMeta {
            n: self.len(),
            d: self.keys.cols,
            d_z: self.values.cols,
            d_s: self.semantics.cols,
            kappa: cfg.kappa,
            k: cfg.k,
            source_checksum: self.source_checksum.clone(),
        }
    }

    /// Writes `kb.omga` (tensors `kb.keys`, `kb.values`, `kb.semantics`,
    /// `kb.ids`) and `kb.meta.json` under `dir`.
    pub fn save(&self, dir: &Path, cfg: &RetrievalConfig) -> Result<()> {
        let mut b = Bundle::default();
        b.insert_mat("kb.keys", &self.keys);
        b.insert_mat("kb.values", &self.values);
        b.insert_mat("kb.semantics", &self.semantics);
        b.insert(
            "kb.ids",
            checkpoint::Tensor::f64(vec![self.len()], self.source_ids.iter().map(|&i| i as f64).collect()),
        );
        checkpoint::save(&b, &dir.join("kb.omga"))?;
        let path = dir.join("kb.meta.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.meta(cfg))?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, KbMeta)> {
        let b = checkpoint::load(&dir.join("kb.omga"))?;
        let path = dir.join("kb.meta.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: KbMeta = serde_json::from_str(&text)?;
        let kb = KnowledgeBase {
            keys: Arc::new(b.mat("kb.keys")?),
            values: Arc::new(b.mat("kb.values")?),
            semantics: Arc::new(b.mat("kb.semantics")?),
            source_ids: b.require("kb.ids")?.to_f64().into_iter().map(|x| x as usize).collect(),
            source_checksum: meta.source_checksum.clone(),
        };
        if kb.len() != meta.n {
            return Err(Error::CorruptCheckpoint("kb row count disagrees with meta".into()));
        }
        Ok((kb, meta))
    }
}

pub fn dataset_checksum(d: &Dataset) -> String {
    let mut h = Sha256::new();
    for s in &d.samples {
        h.update((s.id as u64).to_le_bytes());
        for f in s.features.iter().flatten() {
            h.update(f.to_le_bytes());
        }
    }
    crate::syndata::hex(&h.finalize())
}

/// Builds the knowledge base from the fully observed samples of `train`.
pub fn build_kb(train: &Dataset, encoders: &Encoders, store: &ParamStore, schema: &Schema) -> Result<KnowledgeBase> {
    let full: Vec<_> = train.samples.iter().filter(|s| s.is_complete()).collect();
    if full.is_empty() {
        return Err(Error::EmptyKb);
    }
    let mut keys = encoders.encode_obs_batch(store, &full)?;
    for r in 0..keys.rows {
        let n = norm(keys.row(r));
        if n > 0.0 {
            keys.row_mut(r).iter_mut().for_each(|x| *x /= n);
        }
    }
    let targets = Mat::from_rows(&full.iter().map(|s| s.concat_features()).collect::<Vec<_>>());
    let values = encoders.vae_encode_batch(store, &targets);
    let plans: Vec<_> = full.iter().map(|s| ground_truth_plan(schema, &s.latent, s.score)).collect();
    let semantics = encoders.encode_plans(store, &plans.iter().collect::<Vec<_>>())?;
    let mut source_ids: Vec<usize> = full.iter().map(|s| s.id).collect();
    debug_assert!(source_ids.windows(2).all(|w| w[0] < w[1]));
    source_ids.dedup();
    Ok(KnowledgeBase {
        keys: Arc::new(keys),
        values: Arc::new(values),
        semantics: Arc::new(semantics),
        source_ids,
        source_checksum: dataset_checksum(train),
    })
}

/// `q = tanh(W_q [u_X ⊕ c_S] + b_q)`.
#[derive(Debug, Clone)]
pub struct QueryProjector {
    pub linear: Linear,
    pub obs_dim: usize,
    pub plan_dim: usize,
}

impl QueryProjector {
    pub fn new(store: &mut ParamStore, obs_dim: usize, plan_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Init, 20);
        QueryProjector {
            linear: Linear::new(store, "retriever.q", obs_dim + plan_dim, obs_dim, true, Init::Scaled(1.0), &mut rng),
            obs_dim,
            plan_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, u: Var, c: Var) -> Var {
        let x = tape.concat(&[u, c]);
        let h = self.linear.forward(tape, x);
        tape.tanh(h)
    }

    pub fn project_query(&self, store: &ParamStore, u_x: &[f64], c_s: &[f64]) -> Result<Vec<f64>> {
        if u_x.len() != self.obs_dim || c_s.len() != self.plan_dim {
            return Err(Error::ShapeMismatch(format!(
                "query inputs {}+{}, expected {}+{}",
                u_x.len(),
                c_s.len(),
                self.obs_dim,
                self.plan_dim
            )));
        }
        Ok(self
            .project_batch(store, &Mat::row_vector(u_x.to_vec()), &Mat::row_vector(c_s.to_vec()))
            .data)
    }

    pub fn project_batch(&self, store: &ParamStore, u: &Mat, c: &Mat) -> Mat {
        let mut tape = Tape::new(store);
        let uv = tape.constant(u.clone());
        let cv = tape.constant(c.clone());
        let q = self.forward(&mut tape, uv, cv);
        tape.value(q).clone()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.linear.params()
    }
}

/// What fills the plan slot of the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    PlanDriven,
    /// Plan slot zeroed.
    ContentOnly,
    /// Plan slot replaced by standard-normal noise.
    RandomPlan,
}

/// `s_i = cos(q, k_i) / κ` for every entry.
pub fn score_entries(q: &[f64], kb: &KnowledgeBase, kappa: f64, normalize_query: bool) -> Result<Vec<f64>> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {kappa}")));
    }
    if q.len() != kb.keys.cols {
        return Err(Error::ShapeMismatch(format!("query {} vs keys {}", q.len(), kb.keys.cols)));
    }
    let nq = norm(q);
    if nq == 0.0 {
        return Err(Error::ZeroQuery);
    }
    let scale = if normalize_query { 1.0 / (nq * kappa) } else { 1.0 / kappa };
    Ok((0..kb.len()).map(|i| dot(q, kb.keys.row(i)) * scale).collect())
}

fn by_score_then_index(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    |&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
pub fn topk(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    topk_excluding(scores, k, None)
}

/// Like [`topk`] but never returns `exclude` (leave-one-out retrieval).
pub fn topk_excluding(scores: &[f64], k: usize, exclude: Option<usize>) -> Result<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| Some(i) != exclude).collect();
    if k == 0 || k > idx.len() {
        return Err(Error::KTooLarge { k, n: idx.len() });
    }
    let cmp = by_score_then_index(scores);
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, &cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(&cmp);
    Ok(idx)
}

/// Softmax over the selected scores only, and the weighted sum of values.
pub fn aggregate(scores: &[f64], selected: &[usize], values: &Mat) -> (Vec<f64>, Vec<f64>) {
    let mut alpha: Vec<f64> = selected.iter().map(|&i| scores[i]).collect();
    crate::nn::softmax_in_place(&mut alpha);
    let e = combine(&alpha, selected, values);
    (alpha, e)
}

/// Uniform weights over the selected entries.
pub fn aggregate_mean(selected: &[usize], values: &Mat) -> (Vec<f64>, Vec<f64>) {
    let alpha = vec![1.0 / selected.len() as f64; selected.len()];
    let e = combine(&alpha, selected, values);
    (alpha, e)
}

fn combine(alpha: &[f64], selected: &[usize], values: &Mat) -> Vec<f64> {
    let mut e = vec![0.0; values.cols];
    for (&a, &i) in alpha.iter().zip(selected) {
        for (o, v) in e.iter_mut().zip(values.row(i)) {
            *o += a * v;
        }
    }
    e
}

/// `Σ α_i (1 − cos(c_S, u_i))`.
pub fn evidence_cost(c_s: &[f64], alpha: &[f64], semantics: &[&[f64]]) -> Result<f64> {
    if alpha.len() != semantics.len() {
        return Err(Error::ShapeMismatch("weights and embeddings differ in count".into()));
    }
    let mut total = 0.0;
    for (&a, u) in alpha.iter().zip(semantics) {
        total += a * (1.0 - cosine(c_s, u).ok_or(Error::ZeroVector)?);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub evidence: Vec<f64>,
    pub kappa: f64,
}

/// Pooling applied to the retrieved set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    SparseSoftmax,
    Mean,
}

/// Scores, selects and aggregates for one query.
pub fn retrieve(
    q: &[f64],
    kb: &KnowledgeBase,
    cfg: &RetrievalConfig,
    pooling: Pooling,
    exclude: Option<usize>,
) -> Result<EvidenceBundle> {
    let scores = score_entries(q, kb, cfg.kappa, cfg.normalize_query)?;
    let indices = topk_excluding(&scores, cfg.k, exclude)?;
    let (weights, evidence) = match pooling {
        Pooling::SparseSoftmax => aggregate(&scores, &indices, &kb.values),
        Pooling::Mean => aggregate_mean(&indices, &kb.values),
    };
    Ok(EvidenceBundle {
        indices,
        weights,
        evidence,
        kappa: cfg.kappa,
    })
}

/// Differentiable retrieval for projector training: `q` (B×d) on the tape,
/// `selected` holds K entry indices per row. Returns (α, E).
pub fn retrieve_on_tape(
    tape: &mut Tape,
    q: Var,
    kb: &KnowledgeBase,
    selected: Vec<usize>,
    cfg: &RetrievalConfig,
) -> (Var, Var) {
    let qn = if cfg.normalize_query { tape.row_normalize(q) } else { q };
    let s = tape.select_dot(qn, kb.keys.clone(), selected.clone());
    let s = tape.scale(s, 1.0 / cfg.kappa);
    let alpha = tape.softmax_rows(s);
    let e = tape.select_combine(alpha, kb.values.clone(), selected);
    (alpha, e)
}
