//! The assembled planner → retriever → executor system and its objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::losses::{path_cost, LossWeights, RecTerms, TrajectoryRecord};
use super::variant::{ClassifierInput, EvidenceSource, PlanSource, Variant};
use crate::encoders::{expected_score, score_class, Encoders, ModelDims};
use crate::error::{Error, Result};
use crate::executor::{
    corrupt_batch, Conditions, Denoiser, DenoiserConfig, NoiseSchedule, NoisyBatch, Sampler, ScheduleConfig,
};
use crate::harness::checkpoint::{Bundle, Tensor};
use crate::nn::{Mat, ParamStore, Tape, Var};
use crate::par::{map_chunks, Mode};
use crate::planner::{PlannerConfig, PlannerPolicy, Reranker, Schema, SemanticPlan};
use crate::retriever::{
    evidence_cost, retrieve, EvidenceBundle, KnowledgeBase, QueryMode, QueryProjector, RetrievalConfig,
};
use crate::rng::{normal_vec, stream, Domain};
use crate::syndata::{offsets, MultimodalSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub decay_factor: f64,
    pub patience: usize,
    pub vae_epochs: usize,
    pub contrastive_epochs: usize,
    pub planner_epochs: usize,
    pub projector_epochs: usize,
    pub diffusion_epochs: usize,
    /// Masked copies of each training sample per stage.
    pub views_per_sample: usize,
    pub contrastive_temperature: f64,
    pub kl_weight: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 32,
            lr: 2e-3,
            decay_factor: 0.5,
            patience: 10,
            vae_epochs: 40,
            contrastive_epochs: 25,
            planner_epochs: 20,
            projector_epochs: 10,
            diffusion_epochs: 30,
            views_per_sample: 2,
            contrastive_temperature: 0.1,
            kl_weight: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub schema: Schema,
    pub planner: PlannerConfig,
    pub retrieval: RetrievalConfig,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub weights: LossWeights,
    pub training: TrainingConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let t = &self.training;
        if t.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if !(t.lr > 0.0) || !(t.decay_factor > 0.0 && t.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig("learning rate and decay factor must be positive".into()));
        }
        if t.views_per_sample == 0 {
            return Err(Error::InvalidConfig("views_per_sample must be at least 1".into()));
        }
        if self.retrieval.k == 0 {
            return Err(Error::InvalidConfig("retrieval k must be at least 1".into()));
        }
        if !(self.retrieval.kappa > 0.0) {
            return Err(Error::InvalidConfig("retrieval temperature must be positive".into()));
        }
        if self.planner.candidates == 0 {
            return Err(Error::InvalidConfig("planner needs at least one candidate".into()));
        }
        Ok(())
    }
}

/// Components trained before the denoiser, shared by every variant.
#[derive(Debug, Clone)]
pub struct BaseModel {
    pub config: ModelConfig,
    pub modality_dims: Vec<usize>,
    pub seed: u64,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub planner: PlannerPolicy,
    pub projector: QueryProjector,
    pub kb: KnowledgeBase,
}

/// Freshly initialised components, before any training.
pub struct Architecture {
    pub store: ParamStore,
    pub encoders: Encoders,
    pub planner: PlannerPolicy,
    pub projector: QueryProjector,
}

impl Architecture {
    pub fn new(config: &ModelConfig, modality_dims: &[usize], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let encoders = Encoders::new(&mut store, modality_dims, &config.schema, &config.dims, seed)?;
        let planner = PlannerPolicy::new(&mut store, &config.schema, config.dims.obs, &config.planner, seed);
        let projector = QueryProjector::new(&mut store, config.dims.obs, config.dims.plan, seed);
        Ok(Architecture {
            store,
            encoders,
            planner,
            projector,
        })
    }
}

/// Conditions for a batch of (masked) samples, plus the intermediate
/// planning and retrieval results.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cond: Conditions,
    pub plans: Vec<Option<SemanticPlan>>,
    pub c_sem: Vec<Option<f64>>,
    pub retrievals: Vec<Option<EvidenceBundle>>,
    pub c_evi: Vec<Option<f64>>,
    /// Rows where no schema-valid plan or no usable query existed.
    pub fallbacks: usize,
}

/// Standard-normal vector for sample `id`; `salt` separates independent uses.
pub fn plan_noise(dim: usize, seed: u64, id: usize, salt: u64) -> Vec<f64> {
    normal_vec(&mut stream(seed, Domain::Noise, (id as u64) << 2 | salt), dim)
}

const NOISE_PLAN: u64 = 1;
const NOISE_QUERY: u64 = 2;

/// A trained model for one variant.
#[derive(Debug, Clone)]
pub struct Model {
    pub base: Arc<BaseModel>,
    pub store: ParamStore,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub variant: Variant,
}

/// One stage-3 training batch.
#[derive(Debug, Clone)]
pub struct Stage3Batch {
    pub z0: Mat,
    pub noisy: NoisyBatch,
    pub cond: Conditions,
    pub labels: Vec<usize>,
}

/// Loss nodes of the stage-3 objective.
#[derive(Debug, Clone, Copy)]
pub struct Stage3Vars {
    pub noise_mse: Var,
    pub plan: Var,
    pub evidence: Var,
    pub task: Var,
    pub rec: Var,
    pub total: Var,
    pub z_hat: Var,
}

/// Output of the evaluation workflow for a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Expected score under the classifier.
    pub predictions: Vec<f64>,
    /// Full feature vectors with observed modalities kept and missing ones reconstructed.
    pub completed: Vec<Vec<f64>>,
    pub reconstructed: Vec<bool>,
    pub fallbacks: usize,
}

impl Model {
    /// Adds a fresh denoiser for `variant` on top of a trained base.
    pub fn new(base: Arc<BaseModel>, variant: Variant) -> Result<Self> {
        let mut store = base.store.clone();
        let mut den_cfg = base.config.denoiser.clone();
        den_cfg.injection = variant.injection;
        let dims = &base.config.dims;
        let denoiser = Denoiser::new(&mut store, &den_cfg, dims.latent, dims.obs, dims.plan, base.seed)?;
        let schedule = NoiseSchedule::linear(&base.config.schedule)?;
        Ok(Model {
            base,
            store,
            denoiser,
            schedule,
            variant,
        })
    }

    pub fn encoders(&self) -> &Encoders {
        &self.base.encoders
    }

    pub fn config(&self) -> &ModelConfig {
        &self.base.config
    }

    /// Planning and retrieval for `samples`. With `exclude_self`, a sample's
    /// own knowledge-base entry is never retrieved.
    pub fn prepare(&self, samples: &[&MultimodalSample], exclude_self: bool, seed: u64) -> Result<Prepared> {
        prepare_with(&self.base, &self.store, &self.variant, samples, exclude_self, seed)
    }

    /// `L_total` and its parts on the tape.
    pub fn objective(&self, tape: &mut Tape, batch: &Stage3Batch, weights: &LossWeights) -> Stage3Vars {
        let enc = &self.base.encoders;
        let n = batch.z0.rows;
        let zt = tape.constant(batch.noisy.z_t.clone());
        let temb = tape.constant(self.denoiser.time_batch(&batch.noisy.steps));
        let u = tape.constant(batch.cond.u.clone());
        let c = tape.constant(batch.cond.c.clone());
        let e = tape.constant(batch.cond.e.clone());
        let eps_hat = self.denoiser.forward(tape, zt, temb, u, c, e);
        let eps = tape.constant(batch.noisy.noise.clone());
        let diff = tape.sub(eps_hat, eps);
        let sq = tape.square(diff);
        let noise_mse = tape.mean_all(sq);

        // ẑ = z_t / √ᾱ − (√(1−ᾱ)/√ᾱ) ε̂, per row
        let mut inv = Vec::with_capacity(n);
        let mut ratio = Vec::with_capacity(n);
        for &t in &batch.noisy.steps {
            let ab = self.schedule.alpha_bars[t];
            inv.push(1.0 / ab.sqrt());
            ratio.push(-(1.0 - ab).sqrt() / ab.sqrt());
        }
        let zt_scaled = tape.scale_rows(zt, inv);
        let eps_scaled = tape.scale_rows(eps_hat, ratio);
        let z_hat = tape.add(zt_scaled, eps_scaled);

        let y_hat = enc.vae.decode(tape, z_hat);
        let gy = enc.g_y.forward(tape, y_hat);
        let cos = tape.row_cosine(gy, c);
        let mean_cos = tape.mean_all(cos);
        let neg = tape.scale(mean_cos, -1.0);
        let one = tape.constant(Mat::from_vec(1, 1, vec![1.0]));
        let plan = tape.add(one, neg);

        let phi = enc.phi.forward(tape, y_hat);
        let ae = enc.align.forward(tape, e);
        let d = tape.sub(phi, ae);
        let d = tape.abs(d);
        let d = tape.sum_cols(d);
        let evidence = tape.mean_all(d);

        let latent = match self.variant.classifier_input {
            ClassifierInput::Tweedie => z_hat,
            ClassifierInput::NoisyLatent => zt,
        };
        let fused = tape.concat(&[u, latent]);
        let logits = enc.classifier.forward(tape, fused);
        let task = tape.cross_entropy(logits, batch.labels.clone());

        let mut rec = noise_mse;
        if self.variant.consistency.plan() {
            let p = tape.scale(plan, weights.lambda_p);
            rec = tape.add(rec, p);
        }
        if self.variant.consistency.evidence() {
            let v = tape.scale(evidence, weights.lambda_e);
            rec = tape.add(rec, v);
        }
        let total = if self.variant.task_loss {
            let t = tape.scale(task, weights.lambda_task);
            tape.add(rec, t)
        } else {
            rec
        };
        Stage3Vars {
            noise_mse,
            plan,
            evidence,
            task,
            rec,
            total,
            z_hat,
        }
    }

    /// Builds a stage-3 batch from prepared conditions and clean latents.
    pub fn make_batch(&self, z0: Mat, cond: Conditions, labels: Vec<usize>, rng: &mut crate::rng::Rng) -> Stage3Batch {
        let noisy = corrupt_batch(&self.schedule, &z0, rng);
        Stage3Batch { z0, noisy, cond, labels }
    }

    /// Planner → retriever → executor on every incomplete sample, then
    /// classification of the completed vectors.
    pub fn infer(&self, samples: &[&MultimodalSample], seed: u64, mode: Mode) -> Result<Inference> {
        let parts = map_chunks(mode, samples.len(), 32, |range| self.infer_chunk(&samples[range], seed));
        let mut out = Inference {
            predictions: Vec::with_capacity(samples.len()),
            completed: Vec::with_capacity(samples.len()),
            reconstructed: Vec::with_capacity(samples.len()),
            fallbacks: 0,
        };
        for p in parts {
            let p = p?;
            out.predictions.extend(p.predictions);
            out.completed.extend(p.completed);
            out.reconstructed.extend(p.reconstructed);
            out.fallbacks += p.fallbacks;
        }
        Ok(out)
    }

    fn infer_chunk(&self, samples: &[&MultimodalSample], seed: u64) -> Result<Inference> {
        let enc = &self.base.encoders;
        let mut completed: Vec<Vec<f64>> = samples.iter().map(|s| s.concat_features()).collect();
        let incomplete: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].is_complete()).collect();
        let mut fallbacks = 0;
        if !incomplete.is_empty() {
            let subset: Vec<&MultimodalSample> = incomplete.iter().map(|&i| samples[i]).collect();
            let prep = self.prepare(&subset, false, seed)?;
            fallbacks = prep.fallbacks;
            let sampler = Sampler {
                store: &self.store,
                denoiser: &self.denoiser,
                schedule: &self.schedule,
                deterministic: false,
            };
            let keys: Vec<u64> = subset.iter().map(|s| s.id as u64).collect();
            let z0 = sampler.sample_batch(&prep.cond, &keys, seed, Mode::Sequential)?;
            let y_hat = enc.vae_decode_batch(&self.store, &z0);
            let offs = offsets(&self.base.modality_dims);
            for (j, &i) in incomplete.iter().enumerate() {
                for m in samples[i].missing() {
                    let (o, d) = (offs[m], self.base.modality_dims[m]);
                    completed[i][o..o + d].copy_from_slice(&y_hat.row(j)[o..o + d]);
                }
            }
        }
        let predictions = self.classify_completed(samples, &completed)?;
        Ok(Inference {
            predictions,
            completed,
            reconstructed: samples.iter().map(|s| !s.is_complete()).collect(),
            fallbacks,
        })
    }

    /// Expected scores from `fuse(ψ(X), vae_mean(Ŷ))`.
    pub fn classify_completed(&self, samples: &[&MultimodalSample], completed: &[Vec<f64>]) -> Result<Vec<f64>> {
        let enc = &self.base.encoders;
        let u = enc.encode_obs_batch(&self.store, samples)?;
        let z = enc.vae_encode_batch(&self.store, &Mat::from_rows(completed));
        let mut fused = Mat::zeros(samples.len(), u.cols + z.cols);
        for r in 0..samples.len() {
            let row = fused.row_mut(r);
            row[..u.cols].copy_from_slice(u.row(r));
            row[u.cols..].copy_from_slice(z.row(r));
        }
        let logits = enc.classify_batch(&self.store, &fused);
        Ok((0..logits.rows).map(|r| expected_score(logits.row(r))).collect())
    }

    /// Full diagnostic record of one sample's trajectory. `full` carries the
    /// ground-truth features used for the reconstruction terms.
    pub fn trace(&self, sample: &MultimodalSample, full: &MultimodalSample, seed: u64) -> Result<TrajectoryRecord> {
        let enc = &self.base.encoders;
        let prep = self.prepare(&[sample], false, seed)?;
        let sampler = Sampler {
            store: &self.store,
            denoiser: &self.denoiser,
            schedule: &self.schedule,
            deterministic: false,
        };
        let traj = sampler.sample(
            prep.cond.u.row(0),
            prep.cond.c.row(0),
            prep.cond.e.row(0),
            seed,
            sample.id as u64,
            |z| enc.vae_decode(&self.store, z),
        )?;
        let z0 = enc.vae_encode_batch(&self.store, &Mat::row_vector(full.concat_features()));
        let mut rng = stream(seed, Domain::Eval, sample.id as u64);
        let batch = self.make_batch(z0, prep.cond.clone(), vec![score_class(full.score)], &mut rng);
        let mut tape = Tape::new(&self.store);
        let vars = self.objective(&mut tape, &batch, &self.config().weights);
        let rec_terms = RecTerms {
            noise_mse: tape.value(vars.noise_mse).scalar(),
            plan: tape.value(vars.plan).scalar(),
            evidence: tape.value(vars.evidence).scalar(),
        };
        let retrieval = prep.retrievals[0].clone();
        Ok(TrajectoryRecord {
            plan_log_prob: prep.plans[0].as_ref().map(|p| p.log_prob()),
            plan: prep.plans[0].clone(),
            c_sem: prep.c_sem[0],
            indices: retrieval.as_ref().map(|r| r.indices.clone()).unwrap_or_default(),
            alpha: retrieval.as_ref().map(|r| r.weights.clone()).unwrap_or_default(),
            evidence: prep.cond.e.row(0).to_vec(),
            c_evi: prep.c_evi[0],
            c_path: Some(path_cost(&traj.tweedie_estimates)?),
            states: traj.states,
            tweedie_estimates: traj.tweedie_estimates,
            y_hat: traj.decoded,
            rec_terms: Some(rec_terms),
            task: Some(tape.value(vars.task).scalar()),
        })
    }

    /// Every parameter, the knowledge base, and the variant.
    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::default();
        b.insert_params("", &self.store);
        b.insert_mat("kb.keys", &self.base.kb.keys);
        b.insert_mat("kb.values", &self.base.kb.values);
        b.insert_mat("kb.semantics", &self.base.kb.semantics);
        b.insert(
            "kb.ids",
            Tensor::f64(
                vec![self.base.kb.source_ids.len()],
                self.base.kb.source_ids.iter().map(|&i| i as f64).collect(),
            ),
        );
        b
    }

    /// Rebuilds the architecture from `config` and loads weights from `bundle`.
    pub fn from_bundle(
        bundle: &Bundle,
        config: &ModelConfig,
        modality_dims: &[usize],
        seed: u64,
        variant: Variant,
        kb_checksum: String,
    ) -> Result<Self> {
        let arch = Architecture::new(config, modality_dims, seed)?;
        let kb = KnowledgeBase {
            keys: Arc::new(bundle.mat("kb.keys")?),
            values: Arc::new(bundle.mat("kb.values")?),
            semantics: Arc::new(bundle.mat("kb.semantics")?),
            source_ids: bundle.require("kb.ids")?.to_f64().into_iter().map(|x| x as usize).collect(),
            source_checksum: kb_checksum,
        };
        let base = Arc::new(BaseModel {
            config: config.clone(),
            modality_dims: modality_dims.to_vec(),
            seed,
            store: arch.store,
            encoders: arch.encoders,
            planner: arch.planner,
            projector: arch.projector,
            kb,
        });
        let mut model = Model::new(base, variant)?;
        bundle.load_params("", &mut model.store)?;
        Ok(model)
    }
}

/// Shared by stage-3 training and inference; `store` supplies parameter values.
pub fn prepare_with(
    base: &BaseModel,
    store: &ParamStore,
    variant: &Variant,
    samples: &[&MultimodalSample],
    exclude_self: bool,
    seed: u64,
) -> Result<Prepared> {
    let enc = &base.encoders;
    let cfg = &base.config;
    let n = samples.len();
    let d_s = cfg.dims.plan;
    let u = enc.encode_obs_batch(store, samples)?;
    let mut c = Mat::zeros(n, d_s);
    let mut plans = vec![None; n];
    let mut c_sem = vec![None; n];
    let mut fallbacks = 0;
    match variant.plan_source {
        PlanSource::Planner => {
            let keys: Vec<u64> = samples.iter().map(|s| s.id as u64).collect();
            let cands = base.planner.generate_batch(
                store,
                &u,
                &keys,
                cfg.planner.candidates,
                seed,
                cfg.planner.temperature,
            );
            let reranker = Reranker::from_config(&cfg.planner);
            for (r, cand) in cands.iter().enumerate() {
                let embed = |p: &SemanticPlan| enc.encode_plan_tokens(store, p);
                let chosen = if variant.rerank {
                    reranker.rerank(&base.config.schema, cand, u.row(r), embed)
                } else {
                    // first candidate, still screened for validity
                    reranker.rerank(&base.config.schema, &cand[..1.min(cand.len())], u.row(r), embed)
                };
                match chosen {
                    Ok(sel) => {
                        c.row_mut(r).copy_from_slice(&sel.embedding);
                        c_sem[r] = Some(sel.semantic_cost);
                        plans[r] = Some(cand[sel.index].clone());
                    }
                    Err(Error::NoValidPlan(_)) => fallbacks += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        PlanSource::Noise => {
            for (r, s) in samples.iter().enumerate() {
                c.row_mut(r).copy_from_slice(&plan_noise(d_s, seed, s.id, NOISE_PLAN));
            }
        }
    }

    let d_z = cfg.dims.latent;
    let mut e = Mat::zeros(n, d_z);
    let mut retrievals = vec![None; n];
    let mut c_evi = vec![None; n];
    if variant.evidence == EvidenceSource::Retrieved {
        let mut qc = match variant.query {
            QueryMode::PlanDriven => c.clone(),
            QueryMode::ContentOnly => Mat::zeros(n, d_s),
            QueryMode::RandomPlan => Mat::zeros(n, d_s),
        };
        if variant.query == QueryMode::RandomPlan {
            for (r, s) in samples.iter().enumerate() {
                qc.row_mut(r).copy_from_slice(&plan_noise(d_s, seed, s.id, NOISE_QUERY));
            }
        }
        let q = base.projector.project_batch(store, &u, &qc);
        for (r, s) in samples.iter().enumerate() {
            let exclude = if exclude_self { base.kb.entry_of(s.id) } else { None };
            let bundle = match retrieve(q.row(r), &base.kb, &cfg.retrieval, variant.pooling, exclude) {
                Ok(b) => b,
                Err(Error::ZeroQuery) => {
                    fallbacks += 1;
                    uniform_retrieval(&base.kb, cfg.retrieval.k, exclude, cfg.retrieval.kappa)?
                }
                Err(err) => return Err(err),
            };
            e.row_mut(r).copy_from_slice(&bundle.evidence);
            let sems: Vec<&[f64]> = bundle.indices.iter().map(|&i| base.kb.semantics.row(i)).collect();
            c_evi[r] = evidence_cost(c.row(r), &bundle.weights, &sems).ok();
            retrievals[r] = Some(bundle);
        }
    }
    Ok(Prepared {
        cond: Conditions { u, c, e },
        plans,
        c_sem,
        retrievals,
        c_evi,
        fallbacks,
    })
}

/// Equal weights over the first `k` admissible entries.
fn uniform_retrieval(kb: &KnowledgeBase, k: usize, exclude: Option<usize>, kappa: f64) -> Result<EvidenceBundle> {
    let indices: Vec<usize> = (0..kb.len()).filter(|&i| Some(i) != exclude).take(k).collect();
    if indices.len() < k {
        return Err(Error::KTooLarge { k, n: indices.len() });
    }
    let (weights, evidence) = crate::retriever::aggregate_mean(&indices, &kb.values);
    Ok(EvidenceBundle {
        indices,
        weights,
        evidence,
        kappa,
    })
}

/// Draws one latent per row of `mean`/`logvar` with per-row streams.
pub fn vae_sample_rows(mean: &Mat, logvar: &Mat, seed: u64, keys: &[u64]) -> Result<Mat> {
    let mut out = Mat::zeros(mean.rows, mean.cols);
    for r in 0..mean.rows {
        let eta = normal_vec(&mut stream(seed, Domain::Sample, keys[r]), mean.cols);
        let z = crate::encoders::vae_reparam(mean.row(r), logvar.row(r), &eta)?;
        out.row_mut(r).copy_from_slice(&z);
    }
    Ok(out)
}

/// Class labels of `samples`.
pub fn labels(samples: &[&MultimodalSample]) -> Vec<usize> {
    samples.iter().map(|s| score_class(s.score)).collect()
}
