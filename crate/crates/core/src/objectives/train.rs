//! Staged training.
//!
//! 1. VAE, observation/plan encoders, plan head `g_y` and planner policy.
//! 2. Retrieval query projector, with the evidence–plan cost as auxiliary.
//! 3. Denoiser, adapters, evidence alignment head and classifier.
//!
//! Stages 1–2 produce a [`BaseModel`] that every variant reuses.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use super::model::{labels, Architecture, BaseModel, Model, ModelConfig, Stage3Batch, TrainingConfig};
use super::variant::{ClassifierInput, EvidenceSource, Variant};
use crate::encoders::ObsBatch;
use crate::error::{Error, Result};
use crate::nn::{cosine, Adam, Gradients, Mat, ParamId, ParamStore, PlateauScheduler, Tape};
use crate::planner::{ground_truth_plan, SemanticPlan};
use crate::retriever::{build_kb, retrieve_on_tape, score_entries, topk_excluding, KnowledgeBase};
use crate::rng::{normal_vec, stream, Domain, Rng};
use crate::syndata::{availability_patterns, Benchmark, Dataset, MultimodalSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub val_loss: f64,
    pub losses: BTreeMap<String, f64>,
    pub mr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<EpochLog>,
}

impl TrainLog {
    pub fn stage(&self, name: &str) -> Vec<&EpochLog> {
        self.entries.iter().filter(|e| e.stage == name).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Each sample masked with a uniformly drawn availability pattern, `copies` times.
pub fn training_views(data: &Dataset, copies: usize, seed: u64) -> Vec<MultimodalSample> {
    let patterns = availability_patterns(data.num_modalities());
    let mut out = Vec::with_capacity(data.len() * copies);
    for c in 0..copies {
        for s in &data.samples {
            let mut rng = stream(seed, Domain::Mask, (s.id as u64) << 4 | c as u64);
            let p = &patterns[rng.random_range(0..patterns.len())];
            out.push(s.masked(p));
        }
    }
    out
}

fn realized_mr(views: &[MultimodalSample]) -> f64 {
    let total: usize = views.iter().map(|v| v.mask.len()).sum();
    let observed: usize = views.iter().map(|v| v.observed_count()).sum();
    1.0 - observed as f64 / total.max(1) as f64
}

struct StepOut {
    /// One gradient set per parameter group.
    grads: Vec<Gradients>,
    terms: Vec<(&'static str, f64)>,
}

struct StageSpec<'a> {
    name: &'a str,
    epochs: usize,
    salt: u64,
    rows: usize,
    mr: f64,
}

/// Mini-batch loop with Adam, plateau decay and finiteness checks.
fn run_stage(
    store: &mut ParamStore,
    groups: &[Vec<ParamId>],
    spec: StageSpec,
    tcfg: &TrainingConfig,
    seed: u64,
    log: &mut TrainLog,
    mut step: impl FnMut(&ParamStore, &[usize], &mut Rng) -> Result<StepOut>,
    mut validate: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<()> {
    let mut opts: Vec<Adam> = groups.iter().map(|_| Adam::default()).collect();
    let mut sched = PlateauScheduler::new(tcfg.lr, tcfg.decay_factor, tcfg.patience);
    let mut lr = tcfg.lr;
    let mut order: Vec<usize> = (0..spec.rows).collect();
    for epoch in 0..spec.epochs {
        let mut rng = stream(seed, Domain::Batch, spec.salt << 20 | epoch as u64);
        order.shuffle(&mut rng);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let out = step(store, chunk, &mut rng)?;
            for (k, v) in &out.terms {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::NonFiniteLoss {
                        stage: spec.name.to_string(),
                        epoch,
                        detail: format!("{k} = {v}; terms {:?}", out.terms),
                    });
                }
                *sums.entry(k.to_string()).or_default() += v;
            }
            for ((g, params), opt) in out.grads.iter().zip(groups).zip(opts.iter_mut()) {
                opt.step(store, g, params, lr);
            }
            batches += 1;
        }
        let val = validate(store)?;
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: spec.name.to_string(),
                epoch,
                detail: format!("validation loss {val}"),
            });
        }
        let losses = sums.into_iter().map(|(k, v)| (k, v / batches.max(1) as f64)).collect();
        log.entries.push(EpochLog {
            stage: spec.name.to_string(),
            epoch,
            lr,
            val_loss: val,
            losses,
            mr: spec.mr,
            seed,
        });
        lr = sched.observe(val);
    }
    Ok(())
}

fn rows_of(samples: &[&MultimodalSample]) -> Mat {
    Mat::from_rows(&samples.iter().map(|s| s.concat_features()).collect::<Vec<_>>())
}

fn pick<'a, T>(items: &'a [T], idx: &[usize]) -> Vec<&'a T> {
    idx.iter().map(|&i| &items[i]).collect()
}

/// Ground-truth plans keyed by sample id.
fn plan_table(bench: &Benchmark, schema: &crate::planner::Schema) -> BTreeMap<usize, SemanticPlan> {
    bench
        .train
        .samples
        .iter()
        .chain(&bench.val.samples)
        .chain(&bench.test.samples)
        .map(|s| (s.id, ground_truth_plan(schema, &s.latent, s.score)))
        .collect()
}

/// Stages 1 and 2.
pub fn train_base(bench: &Benchmark, config: &ModelConfig, seed: u64, log: &mut TrainLog) -> Result<BaseModel> {
    let dims = bench.config.modality_dims.clone();
    let Architecture {
        mut store,
        encoders,
        planner,
        projector,
    } = Architecture::new(config, &dims, seed)?;
    let tcfg = &config.training;
    let plans = plan_table(bench, &config.schema);
    let train_full: Vec<&MultimodalSample> = bench.train.samples.iter().collect();
    let val_full: Vec<&MultimodalSample> = bench.val.samples.iter().collect();
    let train_views = training_views(&bench.train, tcfg.views_per_sample, seed);
    let val_views = training_views(&bench.val, 1, seed ^ 0x5eed);
    let mr = realized_mr(&train_views);

    // VAE on complete feature vectors
    let y_train = rows_of(&train_full);
    let y_val = rows_of(&val_full);
    let vae = encoders.vae.clone();
    let kl_w = tcfg.kl_weight;
    run_stage(
        &mut store,
        &[vae.params()],
        StageSpec { name: "vae", epochs: tcfg.vae_epochs, salt: 1, rows: y_train.rows, mr: 0.0 },
        tcfg,
        seed,
        log,
        |store, idx, rng| {
            let y = y_train.select_rows(idx);
            let eta = Mat::from_vec(idx.len(), vae.latent, normal_vec(rng, idx.len() * vae.latent));
            let mut tape = Tape::new(store);
            let yv = tape.constant(y);
            let (m, lv) = vae.encode(&mut tape, yv);
            let half = tape.scale(lv, 0.5);
            let sd = tape.exp(half);
            let ev = tape.constant(eta);
            let noise = tape.mul(sd, ev);
            let z = tape.add(m, noise);
            let y_hat = vae.decode(&mut tape, z);
            let d = tape.sub(y_hat, yv);
            let d = tape.square(d);
            let mse = tape.mean_all(d);
            let var = tape.exp(lv);
            let m2 = tape.square(m);
            let s = tape.add(var, m2);
            let s = tape.sub(s, lv);
            let kl_el = tape.mean_all(s);
            // 0.5·Σ(σ² + μ² − log σ² − 1) per row
            let kl = tape.scale(kl_el, 0.5 * vae.latent as f64);
            let kl_shift = 0.5 * vae.latent as f64;
            let w = tape.scale(kl, kl_w);
            let loss = tape.add(mse, w);
            let terms = vec![
                ("mse", tape.value(mse).scalar()),
                ("kl", (tape.value(kl).scalar() - kl_shift).max(0.0)),
            ];
            Ok(StepOut { grads: vec![tape.backward(loss)], terms })
        },
        |store| {
            let mut tape = Tape::new(store);
            let yv = tape.constant(y_val.clone());
            let (m, _) = vae.encode(&mut tape, yv);
            let y_hat = vae.decode(&mut tape, m);
            let d = tape.sub(y_hat, yv);
            let d = tape.square(d);
            let mse = tape.mean_all(d);
            Ok(tape.value(mse).scalar())
        },
    )?;

    // ψ and g in a shared space, contrastively
    let psi = encoders.psi.clone();
    let g_tok = encoders.g_tok.clone();
    let tau = tcfg.contrastive_temperature;
    let view_plans: Vec<&SemanticPlan> = train_views.iter().map(|v| &plans[&v.id]).collect();
    let val_plans: Vec<&SemanticPlan> = val_views.iter().map(|v| &plans[&v.id]).collect();
    let contrastive = |tape: &mut Tape, views: &[&MultimodalSample], ps: &[&SemanticPlan]| -> Result<crate::nn::Var> {
        let batch = ObsBatch::new(views, &psi.modality_dims)?;
        let u = psi.forward(tape, &batch);
        let c = g_tok.forward_bag(tape, g_tok.bag(ps)?);
        let un = tape.row_normalize(u);
        let cn = tape.row_normalize(c);
        let ct = tape.transpose(cn);
        let logits = tape.matmul(un, ct);
        let logits = tape.scale(logits, 1.0 / tau);
        let diag: Vec<usize> = (0..views.len()).collect();
        let a = tape.cross_entropy(logits, diag.clone());
        let lt = tape.transpose(logits);
        let b = tape.cross_entropy(lt, diag);
        let s = tape.add(a, b);
        Ok(tape.scale(s, 0.5))
    };
    let mut enc_params = psi.params();
    enc_params.extend(g_tok.params());
    run_stage(
        &mut store,
        &[enc_params],
        StageSpec { name: "contrastive", epochs: tcfg.contrastive_epochs, salt: 2, rows: train_views.len(), mr },
        tcfg,
        seed,
        log,
        |store, idx, _| {
            let mut tape = Tape::new(store);
            let loss = contrastive(&mut tape, &pick(&train_views, idx), &pick(&view_plans, idx).into_iter().copied().collect::<Vec<_>>())?;
            let terms = vec![("info_nce", tape.value(loss).scalar())];
            Ok(StepOut { grads: vec![tape.backward(loss)], terms })
        },
        |store| {
            let mut tape = Tape::new(store);
            let refs: Vec<&MultimodalSample> = val_views.iter().collect();
            let loss = contrastive(&mut tape, &refs, &val_plans)?;
            Ok(tape.value(loss).scalar())
        },
    )?;

    // g_y towards the frozen plan embedding of the same sample
    let train_c = encoders.encode_plans(&store, &train_full.iter().map(|s| &plans[&s.id]).collect::<Vec<_>>())?;
    let val_c = encoders.encode_plans(&store, &val_full.iter().map(|s| &plans[&s.id]).collect::<Vec<_>>())?;
    let g_y = encoders.g_y.clone();
    let align_loss = |tape: &mut Tape, y: Mat, c: Mat| {
        let yv = tape.constant(y);
        let cv = tape.constant(c);
        let h = g_y.forward(tape, yv);
        let cos = tape.row_cosine(h, cv);
        let m = tape.mean_all(cos);
        let n = tape.scale(m, -1.0);
        let one = tape.constant(Mat::from_vec(1, 1, vec![1.0]));
        tape.add(one, n)
    };
    run_stage(
        &mut store,
        &[g_y.params()],
        StageSpec { name: "plan_head", epochs: tcfg.contrastive_epochs, salt: 3, rows: train_full.len(), mr: 0.0 },
        tcfg,
        seed,
        log,
        |store, idx, _| {
            let mut tape = Tape::new(store);
            let loss = align_loss(&mut tape, y_train.select_rows(idx), train_c.select_rows(idx));
            let terms = vec![("cosine", tape.value(loss).scalar())];
            Ok(StepOut { grads: vec![tape.backward(loss)], terms })
        },
        |store| {
            let mut tape = Tape::new(store);
            let loss = align_loss(&mut tape, y_val.clone(), val_c.clone());
            Ok(tape.value(loss).scalar())
        },
    )?;

    // planner by teacher-forced likelihood on masked views
    let u_train = encoders.encode_obs_batch(&store, &train_views.iter().collect::<Vec<_>>())?;
    let u_val = encoders.encode_obs_batch(&store, &val_views.iter().collect::<Vec<_>>())?;
    let policy = planner.clone();
    run_stage(
        &mut store,
        &[policy.params()],
        StageSpec { name: "planner", epochs: tcfg.planner_epochs, salt: 4, rows: train_views.len(), mr },
        tcfg,
        seed,
        log,
        |store, idx, _| {
            let mut tape = Tape::new(store);
            let ps: Vec<&SemanticPlan> = pick(&view_plans, idx).into_iter().copied().collect();
            let loss = policy.nll(&mut tape, &u_train.select_rows(idx), &ps);
            let terms = vec![("nll", tape.value(loss).scalar())];
            Ok(StepOut { grads: vec![tape.backward(loss)], terms })
        },
        |store| {
            let mut tape = Tape::new(store);
            let loss = policy.nll(&mut tape, &u_val, &val_plans);
            Ok(tape.value(loss).scalar())
        },
    )?;

    let kb = build_kb(&bench.train, &encoders, &store, &config.schema)?;
    let mut base = BaseModel {
        config: config.clone(),
        modality_dims: dims,
        seed,
        store,
        encoders,
        planner,
        projector,
        kb,
    };
    train_projector(&mut base, bench, &train_views, &val_views, config.weights.lambda_e, log)?;
    Ok(base)
}

/// Inputs of the projector objective for a set of views.
struct ProjectorData {
    u: Mat,
    c: Mat,
    target: Mat,
    exclude: Vec<Option<usize>>,
}

fn projector_data(base: &BaseModel, views: &[MultimodalSample], full: &Dataset, exclude_self: bool, seed: u64) -> Result<ProjectorData> {
    let refs: Vec<&MultimodalSample> = views.iter().collect();
    let plan_only = Variant { evidence: EvidenceSource::Zero, ..Variant::default() };
    let prep = super::model::prepare_with(base, &base.store, &plan_only, &refs, false, seed)?;
    let by_id: BTreeMap<usize, &MultimodalSample> = full.samples.iter().map(|s| (s.id, s)).collect();
    let target = base
        .encoders
        .vae_encode_batch(&base.store, &Mat::from_rows(&views.iter().map(|v| by_id[&v.id].concat_features()).collect::<Vec<_>>()));
    let exclude = views
        .iter()
        .map(|v| if exclude_self { base.kb.entry_of(v.id) } else { None })
        .collect();
    Ok(ProjectorData {
        u: prep.cond.u,
        c: prep.cond.c,
        target,
        exclude,
    })
}

/// `‖E − z‖²` plus `λ_e·C_evi` for the rows `idx`, on a fresh tape.
fn projector_loss<'s>(
    base: &BaseModel,
    store: &'s ParamStore,
    data: &ProjectorData,
    idx: &[usize],
    lambda_e: f64,
) -> Result<(Tape<'s>, crate::nn::Var, f64, f64)> {
    let kb: &KnowledgeBase = &base.kb;
    let cfg = &base.config.retrieval;
    let mut tape = Tape::new(store);
    let u = tape.constant(data.u.select_rows(idx));
    let c = tape.constant(data.c.select_rows(idx));
    let q = base.projector.forward(&mut tape, u, c);
    let qv = tape.value(q).clone();
    let mut selected = Vec::with_capacity(idx.len() * cfg.k);
    let mut costs = Mat::zeros(idx.len(), cfg.k);
    for (r, &i) in idx.iter().enumerate() {
        let scores = match score_entries(qv.row(r), kb, cfg.kappa, cfg.normalize_query) {
            Ok(s) => s,
            Err(Error::ZeroQuery) => vec![0.0; kb.len()],
            Err(e) => return Err(e),
        };
        let top = topk_excluding(&scores, cfg.k, data.exclude[i])?;
        for (j, &t) in top.iter().enumerate() {
            costs.row_mut(r)[j] = 1.0 - cosine(data.c.row(i), kb.semantics.row(t)).unwrap_or(0.0);
        }
        selected.extend(top);
    }
    let (alpha, e) = retrieve_on_tape(&mut tape, q, kb, selected, cfg);
    let z = tape.constant(data.target.select_rows(idx));
    let d = tape.sub(e, z);
    let d = tape.square(d);
    let fit = tape.mean_all(d);
    let cv = tape.constant(costs);
    let w = tape.mul(alpha, cv);
    let s = tape.sum_all(w);
    let c_evi = tape.scale(s, 1.0 / idx.len() as f64);
    let aux = tape.scale(c_evi, lambda_e);
    let loss = tape.add(fit, aux);
    let (f, ce) = (tape.value(fit).scalar(), tape.value(c_evi).scalar());
    Ok((tape, loss, f, ce))
}

/// Stage 2, exposed separately so the evidence-cost auxiliary can be toggled.
pub fn train_projector(
    base: &mut BaseModel,
    bench: &Benchmark,
    train_views: &[MultimodalSample],
    val_views: &[MultimodalSample],
    lambda_e: f64,
    log: &mut TrainLog,
) -> Result<()> {
    let seed = base.seed;
    let train = projector_data(base, train_views, &bench.train, true, seed)?;
    let val = projector_data(base, val_views, &bench.val, false, seed)?;
    let val_idx: Vec<usize> = (0..val_views.len()).collect();
    let tcfg = base.config.training.clone();
    let mr = realized_mr(train_views);
    let mut store = std::mem::take(&mut base.store);
    let params = base.projector.params();
    let frozen: &BaseModel = base;
    run_stage(
        &mut store,
        &[params],
        StageSpec { name: "projector", epochs: tcfg.projector_epochs, salt: 5, rows: train_views.len(), mr },
        &tcfg,
        seed,
        log,
        |store, idx, _| {
            let (tape, loss, fit, c_evi) = projector_loss(frozen, store, &train, idx, lambda_e)?;
            Ok(StepOut {
                grads: vec![tape.backward(loss)],
                terms: vec![("fit", fit), ("c_evi", c_evi)],
            })
        },
        |store| {
            let (tape, loss, _, _) = projector_loss(frozen, store, &val, &val_idx, lambda_e)?;
            Ok(tape.value(loss).scalar())
        },
    )?;
    base.store = store;
    Ok(())
}

/// Mean evidence–plan cost of the trained projector on `views`.
pub fn projector_evidence_cost(base: &BaseModel, views: &[MultimodalSample], full: &Dataset) -> Result<f64> {
    let data = projector_data(base, views, full, false, base.seed)?;
    let idx: Vec<usize> = (0..views.len()).collect();
    let (_, _, _, c_evi) = projector_loss(base, &base.store, &data, &idx, 0.0)?;
    Ok(c_evi)
}

/// Precomputed stage-3 rows.
struct Stage3Data {
    cond: crate::executor::Conditions,
    z0: Mat,
    labels: Vec<usize>,
}

fn stage3_data(model: &Model, views: &[MultimodalSample], full: &Dataset, exclude_self: bool, seed: u64) -> Result<Stage3Data> {
    let refs: Vec<&MultimodalSample> = views.iter().collect();
    let prep = model.prepare(&refs, exclude_self, seed)?;
    let by_id: BTreeMap<usize, &MultimodalSample> = full.samples.iter().map(|s| (s.id, s)).collect();
    let y = Mat::from_rows(&views.iter().map(|v| by_id[&v.id].concat_features()).collect::<Vec<_>>());
    let z0 = model.encoders().vae_encode_batch(&model.store, &y);
    Ok(Stage3Data {
        cond: prep.cond,
        z0,
        labels: labels(&refs),
    })
}

/// Stage 3 for one variant on top of a trained base.
pub fn train_variant(base: Arc<BaseModel>, bench: &Benchmark, variant: Variant, log: &mut TrainLog) -> Result<Model> {
    let mut model = Model::new(base, variant)?;
    let seed = model.base.seed;
    let tcfg = model.config().training.clone();
    let weights = model.config().weights.clone();
    let train_views = training_views(&bench.train, tcfg.views_per_sample, seed);
    let val_views = training_views(&bench.val, 1, seed ^ 0x5eed);
    let train = stage3_data(&model, &train_views, &bench.train, true, seed)?;
    let val = stage3_data(&model, &val_views, &bench.val, false, seed)?;
    let mut main = model.denoiser.params();
    main.extend(model.encoders().align.params());
    let cls = model.encoders().classifier.params();
    let mr = realized_mr(&train_views);
    let mut store = std::mem::take(&mut model.store);
    {
        let frozen = &model;
        let classifier_step = |store: &ParamStore, u: Mat, latent: Mat, labels: Vec<usize>| {
            let mut tape = Tape::new(store);
            let uv = tape.constant(u);
            let zv = tape.constant(latent);
            let x = tape.concat(&[uv, zv]);
            let logits = frozen.encoders().classifier.forward(&mut tape, x);
            let ce = tape.cross_entropy(logits, labels);
            (tape.value(ce).scalar(), tape.backward(ce))
        };
        run_stage(
            &mut store,
            &[main, cls],
            StageSpec { name: "diffusion", epochs: tcfg.diffusion_epochs, salt: 6, rows: train_views.len(), mr },
            &tcfg,
            seed,
            log,
            |store, idx, rng| {
                let batch = frozen.make_batch(
                    train.z0.select_rows(idx),
                    train.cond.select(idx),
                    idx.iter().map(|&i| train.labels[i]).collect(),
                    rng,
                );
                let (grads, terms, latent) = objective_step(frozen, store, &batch, &weights);
                let (ce, cls_grads) = classifier_step(store, batch.cond.u.clone(), latent, batch.labels.clone());
                let mut terms = terms;
                terms.push(("classifier_ce", ce));
                Ok(StepOut { grads: vec![grads, cls_grads], terms })
            },
            |store| {
                let mut rng = stream(seed, Domain::Eval, 0);
                let all: Vec<usize> = (0..val.z0.rows).collect();
                let batch = frozen.make_batch(val.z0.clone(), val.cond.select(&all), val.labels.clone(), &mut rng);
                let mut tape = Tape::new(store);
                let vars = frozen.objective(&mut tape, &batch, &weights);
                Ok(tape.value(vars.total).scalar())
            },
        )?;
    }
    model.store = store;
    Ok(model)
}

/// Gradients of `L_total`, logged terms, and the latent the classifier trains on.
fn objective_step(model: &Model, store: &ParamStore, batch: &Stage3Batch, w: &LossWeights) -> (Gradients, Vec<(&'static str, f64)>, Mat) {
    let mut tape = Tape::new(store);
    let vars = model.objective(&mut tape, batch, w);
    let latent = match model.variant.classifier_input {
        ClassifierInput::Tweedie => tape.value(vars.z_hat).clone(),
        ClassifierInput::NoisyLatent => batch.noisy.z_t.clone(),
    };
    let terms = vec![
        ("noise_mse", tape.value(vars.noise_mse).scalar()),
        ("plan", tape.value(vars.plan).scalar()),
        ("evidence", tape.value(vars.evidence).scalar()),
        ("task", tape.value(vars.task).scalar()),
        ("total", tape.value(vars.total).scalar()),
    ];
    (tape.backward(vars.total), terms, latent)
}

/// A base with freshly initialised weights and a knowledge base built from
/// them; for tests and property checks that need the full graph untrained.
pub fn untrained_base(bench: &Benchmark, config: &ModelConfig, seed: u64) -> Result<BaseModel> {
    let Architecture {
        store,
        encoders,
        planner,
        projector,
    } = Architecture::new(config, &bench.config.modality_dims, seed)?;
    let kb = build_kb(&bench.train, &encoders, &store, &config.schema)?;
    Ok(BaseModel {
        config: config.clone(),
        modality_dims: bench.config.modality_dims.clone(),
        seed,
        store,
        encoders,
        planner,
        projector,
        kb,
    })
}
