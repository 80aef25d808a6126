//! Semantic planning: triplet schema, an autoregressive categorical policy,
//! candidate sampling and the regularised re-ranking that picks one plan.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cosine, Mat, Mlp2, ParamId, ParamStore, Tape};
use crate::rng::{normal_vec, stream, Domain};

pub const SLOT_NAMES: [&str; 3] = ["E", "A", "S"];

/// `[Entity, Action, Sentiment]` triplet vocabulary and plan length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub entity_vocab: usize,
    pub action_vocab: usize,
    pub sentiment_vocab: usize,
    pub triplets: usize,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            entity_vocab: 16,
            action_vocab: 16,
            sentiment_vocab: 7,
            triplets: 3,
        }
    }
}

impl Schema {
    pub fn vocab(&self, slot: usize) -> usize {
        [self.entity_vocab, self.action_vocab, self.sentiment_vocab][slot]
    }

    fn per_triplet(&self) -> usize {
        self.entity_vocab + self.action_vocab + self.sentiment_vocab
    }

    /// Rows of a position-tagged embedding table.
    pub fn table_rows(&self) -> usize {
        self.triplets * self.per_triplet()
    }

    pub fn num_tokens(&self) -> usize {
        3 * self.triplets
    }

    /// Table row of token `tok` at triplet `pos`, slot `slot`.
    pub fn row_of(&self, pos: usize, slot: usize, tok: usize) -> usize {
        let slot_off: usize = (0..slot).map(|s| self.vocab(s)).sum();
        pos * self.per_triplet() + slot_off + tok
    }

    /// Table rows for every token of a (schema-valid) plan.
    pub fn token_rows(&self, plan: &SemanticPlan) -> Vec<usize> {
        plan.constraints
            .iter()
            .enumerate()
            .flat_map(|(pos, t)| (0..3).map(move |slot| (pos, slot, t[slot])))
            .map(|(pos, slot, tok)| self.row_of(pos, slot, tok))
            .collect()
    }

    pub fn check(&self, plan: &SemanticPlan) -> Result<()> {
        if plan.constraints.len() != self.triplets {
            return Err(Error::SchemaViolation(format!(
                "{} triplets, expected {}",
                plan.constraints.len(),
                self.triplets
            )));
        }
        for (pos, t) in plan.constraints.iter().enumerate() {
            for slot in 0..3 {
                if t[slot] >= self.vocab(slot) {
                    return Err(Error::SchemaViolation(format!(
                        "triplet {pos}: {}{} out of vocabulary",
                        SLOT_NAMES[slot], t[slot]
                    )));
                }
            }
        }
        Ok(())
    }

    /// 0 for a well-formed plan, +∞ otherwise.
    pub fn indicator(&self, plan: &SemanticPlan) -> f64 {
        if self.check(plan).is_ok() {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn schema_indicator(schema: &Schema, plan: &SemanticPlan) -> f64 {
    schema.indicator(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticPlan {
    pub constraints: Vec<[usize; 3]>,
    /// Log-probability of every emitted token under the policy.
    pub token_logprobs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PlanWire {
    constraints: Vec<[String; 3]>,
    logprobs: Vec<f64>,
}

impl SemanticPlan {
    pub fn new(constraints: Vec<[usize; 3]>) -> Self {
        SemanticPlan {
            constraints,
            token_logprobs: Vec::new(),
        }
    }

    pub fn log_prob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }

    pub fn to_json(&self) -> String {
        let wire = PlanWire {
            constraints: self
                .constraints
                .iter()
                .map(|t| std::array::from_fn(|s| format!("{}{}", SLOT_NAMES[s], t[s])))
                .collect(),
            logprobs: self.token_logprobs.clone(),
        };
        serde_json::to_string(&wire).expect("plan serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let wire: PlanWire = serde_json::from_str(s)?;
        let mut constraints = Vec::with_capacity(wire.constraints.len());
        for t in &wire.constraints {
            let mut out = [0usize; 3];
            for slot in 0..3 {
                let tok = t[slot]
                    .strip_prefix(SLOT_NAMES[slot])
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| Error::SchemaViolation(format!("bad token `{}`", t[slot])))?;
                out[slot] = tok;
            }
            constraints.push(out);
        }
        Ok(SemanticPlan {
            constraints,
            token_logprobs: wire.logprobs,
        })
    }
}

/// Plan implied by the generator latent: entity and action tokens encode the
/// signs of four latent coordinates each, the sentiment token is the
/// seven-way score bin.
pub fn ground_truth_plan(schema: &Schema, latent: &[f64], score: f64) -> SemanticPlan {
    let d = latent.len();
    let bits = |start: usize, vocab: usize| -> usize {
        let width = (usize::BITS - (vocab - 1).leading_zeros()) as usize;
        let mut v = 0;
        for j in 0..width {
            if latent[(start + j) % d] > 0.0 {
                v |= 1 << j;
            }
        }
        v % vocab
    };
    let sentiment = ((score.round().clamp(-3.0, 3.0) + 3.0) as usize).min(schema.sentiment_vocab - 1);
    let constraints = (0..schema.triplets)
        .map(|pos| {
            [
                bits(3 * pos, schema.entity_vocab),
                bits(3 * pos + 4, schema.action_vocab),
                sentiment,
            ]
        })
        .collect();
    SemanticPlan::new(constraints)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub candidates: usize,
    pub lambda_s: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub context_dim: usize,
    pub hidden: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            candidates: 5,
            lambda_s: 0.3,
            gamma: 0.1,
            temperature: 1.0,
            context_dim: 16,
            hidden: 64,
        }
    }
}

/// Autoregressive categorical model over schema tokens.
///
/// Step `k` sees `u_X`, the sum of position-tagged embeddings of the tokens
/// emitted so far and a one-hot of the current triplet index, and feeds
/// them through the perceptron of its slot (entity, action or sentiment).
#[derive(Debug, Clone)]
pub struct PlannerPolicy {
    pub schema: Schema,
    pub context_table: ParamId,
    pub heads: Vec<Mlp2>,
    pub obs_dim: usize,
}

impl PlannerPolicy {
    pub fn new(store: &mut ParamStore, schema: &Schema, obs_dim: usize, cfg: &PlannerConfig, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Init, 10);
        let rows = schema.table_rows();
        let table = Mat::from_vec(
            rows,
            cfg.context_dim,
            normal_vec(&mut rng, rows * cfg.context_dim)
                .into_iter()
                .map(|x| 0.3 * x)
                .collect(),
        );
        let context_table = store.add("planner.ctx", table);
        let input = obs_dim + cfg.context_dim + schema.triplets;
        let heads = (0..3)
            .map(|slot| {
                Mlp2::new(
                    store,
                    &format!("planner.{}", SLOT_NAMES[slot]),
                    input,
                    cfg.hidden,
                    schema.vocab(slot),
                    &mut rng,
                )
            })
            .collect();
        PlannerPolicy {
            schema: schema.clone(),
            context_table,
            heads,
            obs_dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.context_table)
            .chain(self.heads.iter().flat_map(|h| h.params()))
            .collect()
    }

    /// Logits for step `k` given the multi-hot context of earlier tokens.
    fn step_logits(&self, tape: &mut Tape, u: &Mat, context: Mat, k: usize) -> crate::nn::Var {
        let pos = k / 3;
        let slot = k % 3;
        let mut onehot = Mat::zeros(u.rows, self.schema.triplets);
        for r in 0..u.rows {
            onehot.row_mut(r)[pos] = 1.0;
        }
        let ctx = tape.constant(context);
        let table = tape.param(self.context_table);
        let ctx = tape.matmul(ctx, table);
        let uv = tape.constant(u.clone());
        let oh = tape.constant(onehot);
        let x = tape.concat(&[uv, ctx, oh]);
        self.heads[slot].forward(tape, x)
    }

    /// Teacher-forced mean negative log-likelihood (per token) of `plans`.
    pub fn nll(&self, tape: &mut Tape, u: &Mat, plans: &[&SemanticPlan]) -> crate::nn::Var {
        let mut context = Mat::zeros(u.rows, self.schema.table_rows());
        let mut total: Option<crate::nn::Var> = None;
        for k in 0..self.schema.num_tokens() {
            let (pos, slot) = (k / 3, k % 3);
            let logits = self.step_logits(tape, u, context.clone(), k);
            let labels: Vec<usize> = plans.iter().map(|p| p.constraints[pos][slot]).collect();
            let ce = tape.cross_entropy(logits, labels.clone());
            total = Some(match total {
                Some(t) => tape.add(t, ce),
                None => ce,
            });
            for (r, &tok) in labels.iter().enumerate() {
                context.row_mut(r)[self.schema.row_of(pos, slot, tok)] = 1.0;
            }
        }
        let t = total.expect("schema has tokens");
        tape.scale(t, 1.0 / self.schema.num_tokens() as f64)
    }

    /// Per-step token distributions of a given plan (for verification).
    pub fn step_distributions(&self, store: &ParamStore, u_x: &[f64], plan: &SemanticPlan) -> Vec<Vec<f64>> {
        let u = Mat::row_vector(u_x.to_vec());
        let mut context = Mat::zeros(1, self.schema.table_rows());
        let mut out = Vec::new();
        for k in 0..self.schema.num_tokens() {
            let (pos, slot) = (k / 3, k % 3);
            let mut tape = Tape::new(store);
            let l = self.step_logits(&mut tape, &u, context.clone(), k);
            let mut p = tape.value(l).data.clone();
            crate::nn::softmax_in_place(&mut p);
            out.push(p);
            let tok = plan.constraints[pos][slot];
            context.row_mut(0)[self.schema.row_of(pos, slot, tok)] = 1.0;
        }
        out
    }

    /// Samples `n` plans per row of `u`. Row `r`, candidate `c` draws from
    /// its own stream keyed by `(seed, keys[r], c)`. Temperature 0 is greedy.
    pub fn generate_batch(
        &self,
        store: &ParamStore,
        u: &Mat,
        keys: &[u64],
        n: usize,
        seed: u64,
        temperature: f64,
    ) -> Vec<Vec<SemanticPlan>> {
        let rows = u.rows * n;
        let mut big = Mat::zeros(rows, u.cols);
        for r in 0..u.rows {
            for c in 0..n {
                big.row_mut(r * n + c).copy_from_slice(u.row(r));
            }
        }
        let mut rngs: Vec<_> = (0..rows)
            .map(|i| stream(seed, Domain::Planner, keys[i / n].wrapping_mul(1024).wrapping_add((i % n) as u64)))
            .collect();
        let mut plans: Vec<SemanticPlan> = (0..rows)
            .map(|_| SemanticPlan {
                constraints: vec![[0; 3]; self.schema.triplets],
                token_logprobs: Vec::with_capacity(self.schema.num_tokens()),
            })
            .collect();
        let mut context = Mat::zeros(rows, self.schema.table_rows());
        for k in 0..self.schema.num_tokens() {
            let (pos, slot) = (k / 3, k % 3);
            let logits = {
                let mut tape = Tape::new(store);
                let l = self.step_logits(&mut tape, &big, context.clone(), k);
                tape.value(l).clone()
            };
            for i in 0..rows {
                let row = logits.row(i);
                let mut p = row.to_vec();
                crate::nn::softmax_in_place(&mut p);
                let tok = if temperature <= 0.0 {
                    argmax(row)
                } else {
                    let mut q: Vec<f64> = row.iter().map(|x| x / temperature).collect();
                    crate::nn::softmax_in_place(&mut q);
                    sample_categorical(&q, rngs[i].random::<f64>())
                };
                plans[i].constraints[pos][slot] = tok;
                plans[i].token_logprobs.push(p[tok].ln());
                context.row_mut(i)[self.schema.row_of(pos, slot, tok)] = 1.0;
            }
        }
        let mut it = plans.into_iter();
        (0..u.rows).map(|_| it.by_ref().take(n).collect()).collect()
    }

    pub fn generate_candidates(&self, store: &ParamStore, u_x: &[f64], n: usize, seed: u64, temperature: f64) -> Vec<SemanticPlan> {
        let u = Mat::row_vector(u_x.to_vec());
        self.generate_batch(store, &u, &[0], n, seed, temperature)
            .pop()
            .unwrap_or_default()
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// `1 − cos(g(S), ψ(X))`.
pub fn semantic_cost(plan_embedding: &[f64], u_x: &[f64]) -> Result<f64> {
    cosine(plan_embedding, u_x).map(|c| 1.0 - c).ok_or(Error::ZeroVector)
}

/// Outcome of re-ranking: the chosen candidate and its score terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub score: f64,
    pub semantic_cost: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reranker {
    pub lambda_s: f64,
    pub gamma: f64,
}

impl Reranker {
    pub fn from_config(cfg: &PlannerConfig) -> Self {
        Reranker {
            lambda_s: cfg.lambda_s,
            gamma: cfg.gamma,
        }
    }

    /// `Σ log π − λ_s C_sem − γ 𝕀_schema`; the indicator acts as a hard filter.
    pub fn score(&self, log_prob: f64, semantic_cost: f64) -> f64 {
        log_prob - self.lambda_s * semantic_cost
    }

    /// Picks the best schema-valid candidate; ties go to the earliest index.
    pub fn rerank(
        &self,
        schema: &Schema,
        candidates: &[SemanticPlan],
        u_x: &[f64],
        mut embed: impl FnMut(&SemanticPlan) -> Result<Vec<f64>>,
    ) -> Result<Selection> {
        let mut best: Option<Selection> = None;
        for (i, cand) in candidates.iter().enumerate() {
            if schema.indicator(cand).is_infinite() {
                continue;
            }
            let e = embed(cand)?;
            let c_sem = semantic_cost(&e, u_x)?;
            // γ·𝕀 vanishes for every candidate that passed the filter
            let score = self.score(cand.log_prob(), c_sem);
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Selection {
                    index: i,
                    score,
                    semantic_cost: c_sem,
                    embedding: e,
                });
            }
        }
        best.ok_or(Error::NoValidPlan(candidates.len()))
    }
}

/// Standard-normal replacement for `c_S` used by the planner-free ablation.
pub fn noise_condition(d_s: usize, seed: u64) -> Vec<f64> {
    normal_vec(&mut stream(seed, Domain::Noise, 0), d_s)
}
