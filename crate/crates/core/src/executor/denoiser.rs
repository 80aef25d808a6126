//! Noise predictor `ε_θ(z_t, t; u_X, c_S, E)`.
//!
//! A stack of residual blocks over a hidden state. Every block sees
//! `[h ⊕ u_X ⊕ temb]`. Depending on the injection mode a block may also add
//! a cross-attention read of the plan tokens and/or a zero-initialised
//! adapter over the evidence.

use serde::{Deserialize, Serialize};

use super::schedule::time_embedding;
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Mat, ParamId, ParamStore, Tape, Var};
use crate::rng::{stream, Domain, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// Plan via cross-attention in deep blocks, evidence via adapters in shallow blocks.
    #[default]
    Dual,
    /// `[c_S ⊕ E]` through adapters in every block.
    Concat,
    /// Plan via cross-attention in shallow blocks, evidence via adapters in deep blocks.
    Reversed,
    /// Evidence adapters in shallow blocks only; the plan is not injected.
    SingleStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub time_dim: usize,
    pub attn_dim: usize,
    pub plan_tokens: usize,
    pub adapter_hidden: usize,
    pub injection: InjectionMode,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: 64,
            blocks: 6,
            time_dim: 16,
            attn_dim: 16,
            plan_tokens: 4,
            adapter_hidden: 32,
            injection: InjectionMode::Dual,
        }
    }
}

#[derive(Debug, Clone)]
struct CrossAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    tokens: usize,
    token_dim: usize,
}

impl CrossAttention {
    fn forward(&self, tape: &mut Tape, h: Var, c: Var) -> Var {
        let q = self.q.forward(tape, h);
        let mut ks = Vec::with_capacity(self.tokens);
        let mut vs = Vec::with_capacity(self.tokens);
        for j in 0..self.tokens {
            let tok = tape.slice_cols(c, j * self.token_dim, self.token_dim);
            ks.push(self.k.forward(tape, tok));
            vs.push(self.v.forward(tape, tok));
        }
        let k = tape.concat(&ks);
        let v = tape.concat(&vs);
        let a = tape.attention(q, k, v, self.tokens);
        self.o.forward(tape, a)
    }

    fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.o].iter().flat_map(|l| l.params()).collect()
    }
}

/// `W_b · tanh(W_a [h ⊕ cond] + b_a) + b_b` with `W_b`, `b_b` starting at zero.
#[derive(Debug, Clone)]
struct ZeroAdapter {
    a: Linear,
    b: Linear,
}

impl ZeroAdapter {
    fn forward(&self, tape: &mut Tape, h: Var, cond: Var) -> Var {
        let x = tape.concat(&[h, cond]);
        let x = self.a.forward(tape, x);
        let x = tape.tanh(x);
        self.b.forward(tape, x)
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.a.params();
        p.extend(self.b.params());
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AdapterInput {
    Evidence,
    PlanAndEvidence,
}

#[derive(Debug, Clone)]
struct Block {
    l1: Linear,
    l2: Linear,
    cross: Option<CrossAttention>,
    adapter: Option<(ZeroAdapter, AdapterInput)>,
}

/// Per-block additive contributions, for activation diffing.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub mlp: Var,
    pub cross: Option<Var>,
    pub adapter: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub plan_dim: usize,
    input: Linear,
    blocks: Vec<Block>,
    output: Linear,
}

/// One batch of denoiser inputs. Row `r` of every matrix belongs to sample `r`.
#[derive(Debug, Clone)]
pub struct Conditions {
    pub u: Mat,
    pub c: Mat,
    pub e: Mat,
}

impl Conditions {
    pub fn rows(&self) -> usize {
        self.u.rows
    }

    pub fn select(&self, idx: &[usize]) -> Conditions {
        Conditions {
            u: self.u.select_rows(idx),
            c: self.c.select_rows(idx),
            e: self.e.select_rows(idx),
        }
    }
}

impl Denoiser {
    pub fn new(
        store: &mut ParamStore,
        config: &DenoiserConfig,
        latent_dim: usize,
        obs_dim: usize,
        plan_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = config.clone();
        if cfg.blocks == 0 || cfg.hidden == 0 {
            return Err(Error::InvalidConfig("denoiser needs at least one block".into()));
        }
        if cfg.plan_tokens == 0 || plan_dim % cfg.plan_tokens != 0 {
            return Err(Error::InvalidConfig(format!(
                "plan width {plan_dim} does not split into {} tokens",
                cfg.plan_tokens
            )));
        }
        if cfg.time_dim % 2 != 0 {
            return Err(Error::InvalidConfig("time embedding width must be even".into()));
        }
        let mut rng = stream(seed, Domain::Init, 30);
        let h = cfg.hidden;
        let token_dim = plan_dim / cfg.plan_tokens;
        let input = Linear::new(store, "den.in", latent_dim + cfg.time_dim, h, true, Init::Scaled(1.0), &mut rng);
        let half = cfg.blocks / 2;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let name = format!("den.b{i}");
            let deep = i >= half;
            let l1 = Linear::new(store, &format!("{name}.l1"), h + obs_dim + cfg.time_dim, h, true, Init::Scaled(1.0), &mut rng);
            let l2 = Linear::new(store, &format!("{name}.l2"), h, h, true, Init::Scaled(0.5), &mut rng);
            let (with_cross, adapter_input) = match cfg.injection {
                InjectionMode::Dual => (deep, (!deep).then_some(AdapterInput::Evidence)),
                InjectionMode::Reversed => (!deep, deep.then_some(AdapterInput::Evidence)),
                InjectionMode::SingleStream => (false, (!deep).then_some(AdapterInput::Evidence)),
                InjectionMode::Concat => (false, Some(AdapterInput::PlanAndEvidence)),
            };
            let cross = with_cross.then(|| cross_attention(store, &name, h, token_dim, &cfg, &mut rng));
            let adapter = adapter_input.map(|kind| {
                let cond = match kind {
                    AdapterInput::Evidence => latent_dim,
                    AdapterInput::PlanAndEvidence => plan_dim + latent_dim,
                };
                let adapter = ZeroAdapter {
                    a: Linear::new(store, &format!("{name}.za.a"), h + cond, cfg.adapter_hidden, true, Init::Scaled(1.0), &mut rng),
                    b: Linear::new(store, &format!("{name}.za.b"), cfg.adapter_hidden, h, true, Init::Zero, &mut rng),
                };
                (adapter, kind)
            });
            blocks.push(Block { l1, l2, cross, adapter });
        }
        let output = Linear::new(store, "den.out", h, latent_dim, true, Init::Scaled(1.0), &mut rng);
        Ok(Denoiser {
            config: cfg,
            latent_dim,
            obs_dim,
            plan_dim,
            input,
            blocks,
            output,
        })
    }

    /// Time embeddings for a batch of step indices.
    pub fn time_batch(&self, ts: &[usize]) -> Mat {
        Mat::from_rows(&ts.iter().map(|&t| time_embedding(t, self.config.time_dim)).collect::<Vec<_>>())
    }

    pub fn forward(&self, tape: &mut Tape, z: Var, temb: Var, u: Var, c: Var, e: Var) -> Var {
        self.forward_inner(tape, z, temb, u, c, e, None)
    }

    pub fn forward_traced(&self, tape: &mut Tape, z: Var, temb: Var, u: Var, c: Var, e: Var) -> (Var, Vec<BlockVars>) {
        let mut trace = Vec::with_capacity(self.blocks.len());
        let out = self.forward_inner(tape, z, temb, u, c, e, Some(&mut trace));
        (out, trace)
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_inner(
        &self,
        tape: &mut Tape,
        z: Var,
        temb: Var,
        u: Var,
        c: Var,
        e: Var,
        mut trace: Option<&mut Vec<BlockVars>>,
    ) -> Var {
        let x = tape.concat(&[z, temb]);
        let mut h = self.input.forward(tape, x);
        let mut plan_evidence = None;
        for block in &self.blocks {
            let x = tape.concat(&[h, u, temb]);
            let x = block.l1.forward(tape, x);
            let x = tape.tanh(x);
            let mlp = block.l2.forward(tape, x);
            let base = h;
            h = tape.add(h, mlp);
            let cross = block.cross.as_ref().map(|ca| ca.forward(tape, base, c));
            let adapter = block.adapter.as_ref().map(|(za, kind)| {
                let cond = match kind {
                    AdapterInput::Evidence => e,
                    AdapterInput::PlanAndEvidence => *plan_evidence.get_or_insert_with(|| tape.concat(&[c, e])),
                };
                za.forward(tape, base, cond)
            });
            if let Some(v) = cross {
                h = tape.add(h, v);
            }
            if let Some(v) = adapter {
                h = tape.add(h, v);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(BlockVars { mlp, cross, adapter });
            }
        }
        let h = tape.tanh(h);
        self.output.forward(tape, h)
    }

    /// Batched prediction outside of training.
    pub fn predict(&self, store: &ParamStore, z: &Mat, ts: &[usize], cond: &Conditions) -> Result<Mat> {
        self.check(z, ts, cond)?;
        let mut tape = Tape::new(store);
        let zv = tape.constant(z.clone());
        let tv = tape.constant(self.time_batch(ts));
        let uv = tape.constant(cond.u.clone());
        let cv = tape.constant(cond.c.clone());
        let ev = tape.constant(cond.e.clone());
        let out = self.forward(&mut tape, zv, tv, uv, cv, ev);
        Ok(tape.value(out).clone())
    }

    /// Single-sample `ε̂ = ε_θ(z_t, t; u_X, c_S, E)`.
    pub fn predict_noise(&self, store: &ParamStore, z_t: &[f64], t: usize, u: &[f64], c: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        let cond = Conditions {
            u: Mat::row_vector(u.to_vec()),
            c: Mat::row_vector(c.to_vec()),
            e: Mat::row_vector(e.to_vec()),
        };
        Ok(self.predict(store, &Mat::row_vector(z_t.to_vec()), &[t], &cond)?.data)
    }

    fn check(&self, z: &Mat, ts: &[usize], cond: &Conditions) -> Result<()> {
        let n = z.rows;
        let ok = z.cols == self.latent_dim
            && ts.len() == n
            && cond.u.shape() == (n, self.obs_dim)
            && cond.c.shape() == (n, self.plan_dim)
            && cond.e.shape() == (n, self.latent_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "denoiser inputs z {:?}, u {:?}, c {:?}, e {:?} for {} steps",
                z.shape(),
                cond.u.shape(),
                cond.c.shape(),
                cond.e.shape(),
                ts.len()
            )))
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.input.params();
        for b in &self.blocks {
            p.extend(b.l1.params());
            p.extend(b.l2.params());
            if let Some(ca) = &b.cross {
                p.extend(ca.params());
            }
            if let Some((za, _)) = &b.adapter {
                p.extend(za.params());
            }
        }
        p.extend(self.output.params());
        p
    }

    /// Output weights and biases of every adapter.
    pub fn adapter_output_params(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .filter_map(|b| b.adapter.as_ref())
            .flat_map(|(za, _)| za.b.params())
            .collect()
    }

    pub fn cross_attention_blocks(&self) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&i| self.blocks[i].cross.is_some()).collect()
    }

    pub fn adapter_blocks(&self) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&i| self.blocks[i].adapter.is_some()).collect()
    }
}

fn cross_attention(store: &mut ParamStore, name: &str, h: usize, token_dim: usize, cfg: &DenoiserConfig, rng: &mut Rng) -> CrossAttention {
    let a = cfg.attn_dim;
    CrossAttention {
        q: Linear::new(store, &format!("{name}.ca.q"), h, a, false, Init::Scaled(1.0), rng),
        k: Linear::new(store, &format!("{name}.ca.k"), token_dim, a, false, Init::Scaled(1.0), rng),
        v: Linear::new(store, &format!("{name}.ca.v"), token_dim, a, false, Init::Scaled(1.0), rng),
        o: Linear::new(store, &format!("{name}.ca.o"), a, h, false, Init::Scaled(0.5), rng),
        tokens: cfg.plan_tokens,
        token_dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_vec;

    fn setup(mode: InjectionMode) -> (ParamStore, Denoiser) {
        let mut store = ParamStore::default();
        let cfg = DenoiserConfig {
            hidden: 16,
            injection: mode,
            ..Default::default()
        };
        let d = Denoiser::new(&mut store, &cfg, 8, 32, 32, 5).unwrap();
        (store, d)
    }

    fn random_cond(rng: &mut Rng, n: usize) -> Conditions {
        Conditions {
            u: Mat::from_vec(n, 32, normal_vec(rng, n * 32)),
            c: Mat::from_vec(n, 32, normal_vec(rng, n * 32)),
            e: Mat::from_vec(n, 8, normal_vec(rng, n * 8)),
        }
    }

    #[test]
    fn block_layout_per_mode() {
        let (_, d) = setup(InjectionMode::Dual);
        assert_eq!(d.cross_attention_blocks(), vec![3, 4, 5]);
        assert_eq!(d.adapter_blocks(), vec![0, 1, 2]);
        let (_, r) = setup(InjectionMode::Reversed);
        assert_eq!(r.cross_attention_blocks(), vec![0, 1, 2]);
        assert_eq!(r.adapter_blocks(), vec![3, 4, 5]);
        let (_, s) = setup(InjectionMode::SingleStream);
        assert!(s.cross_attention_blocks().is_empty());
        assert_eq!(s.adapter_blocks(), vec![0, 1, 2]);
        let (_, c) = setup(InjectionMode::Concat);
        assert_eq!(c.adapter_blocks().len(), 6);
    }

    #[test]
    fn output_shape_and_shape_errors() {
        let (store, d) = setup(InjectionMode::Dual);
        let out = d.predict_noise(&store, &[0.1; 8], 10, &[0.2; 32], &[0.3; 32], &[0.4; 8]).unwrap();
        assert_eq!(out.len(), 8);
        assert!(matches!(
            d.predict_noise(&store, &[0.1; 7], 10, &[0.2; 32], &[0.3; 32], &[0.4; 8]),
            Err(Error::ShapeMismatch(_))
        ));
        let mut bad = DenoiserConfig::default();
        bad.plan_tokens = 5;
        assert!(Denoiser::new(&mut ParamStore::default(), &bad, 8, 32, 32, 0).is_err());
    }

    #[test]
    fn adapters_start_silent() {
        for mode in [InjectionMode::Dual, InjectionMode::Concat, InjectionMode::Reversed, InjectionMode::SingleStream] {
            let (store, d) = setup(mode);
            let mut rng = stream(1, Domain::Test, 0);
            let cond = random_cond(&mut rng, 4);
            let z = Mat::from_vec(4, 8, normal_vec(&mut rng, 32));
            let ts = [1, 20, 50, 100];
            let base = d.predict(&store, &z, &ts, &cond).unwrap();
            for _ in 0..20 {
                let mut c2 = cond.clone();
                c2.e = Mat::from_vec(4, 8, normal_vec(&mut rng, 32).iter().map(|x| 100.0 * x).collect());
                assert_eq!(d.predict(&store, &z, &ts, &c2).unwrap(), base);
            }
        }
    }

    #[test]
    fn plan_reaches_output_through_cross_attention() {
        let (store, d) = setup(InjectionMode::Dual);
        let mut rng = stream(2, Domain::Test, 0);
        let cond = random_cond(&mut rng, 2);
        let z = Mat::from_vec(2, 8, normal_vec(&mut rng, 16));
        let base = d.predict(&store, &z, &[5, 9], &cond).unwrap();
        let mut c2 = cond.clone();
        c2.c.data.iter_mut().for_each(|x| *x += 0.5);
        assert_ne!(d.predict(&store, &z, &[5, 9], &c2).unwrap(), base);
    }

    #[test]
    fn zero_plan_silences_cross_attention_only() {
        let (store, d) = setup(InjectionMode::Dual);
        let mut rng = stream(3, Domain::Test, 0);
        let mut cond = random_cond(&mut rng, 3);
        let z = Mat::from_vec(3, 8, normal_vec(&mut rng, 24));
        let run = |cond: &Conditions| {
            let mut tape = Tape::new(&store);
            let vars = [
                tape.constant(z.clone()),
                tape.constant(d.time_batch(&[3, 3, 3])),
                tape.constant(cond.u.clone()),
                tape.constant(cond.c.clone()),
                tape.constant(cond.e.clone()),
            ];
            let (_, trace) = d.forward_traced(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4]);
            trace
                .iter()
                .map(|b| {
                    (
                        tape.value(b.mlp).clone(),
                        b.cross.map(|v| tape.value(v).clone()),
                        b.adapter.map(|v| tape.value(v).clone()),
                    )
                })
                .collect::<Vec<_>>()
        };
        let with_plan = run(&cond);
        cond.c = Mat::zeros(3, 32);
        let without = run(&cond);
        for (i, (a, b)) in with_plan.iter().zip(&without).enumerate() {
            if i < 3 {
                // shallow blocks never see the plan
                assert_eq!(a, b);
            } else {
                assert!(b.1.as_ref().unwrap().data.iter().all(|&x| x == 0.0));
            }
        }
        // the first deep block input is unchanged, so only its cross term differs
        assert_eq!(with_plan[3].0, without[3].0);
        assert_ne!(with_plan[3].1, without[3].1);
    }
}
