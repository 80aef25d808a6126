//! Learned feature maps shared by the planner, retriever and executor.
//!
//! All of them are small tanh perceptrons registered in one [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Mat, Mlp2, ParamId, ParamStore, Tape, Var};
use crate::planner::{Schema, SemanticPlan};
use crate::rng::{stream, Domain};
use crate::syndata::MultimodalSample;

pub const NUM_CLASSES: usize = 7;
pub const LOGVAR_RANGE: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// Observation / key space (d).
    pub obs: usize,
    /// Plan space (d_S).
    pub plan: usize,
    /// Diffusion latent (d_z).
    pub latent: usize,
    /// Output of the low-level extractor and the evidence alignment head.
    pub phi: usize,
    pub hidden: usize,
    pub classifier_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            obs: 32,
            plan: 32,
            latent: 8,
            phi: 16,
            hidden: 32,
            classifier_hidden: 64,
        }
    }
}

/// ψ: one sub-encoder per modality, mean-pooled over observed modalities.
#[derive(Debug, Clone)]
pub struct ObsEncoder {
    pub subs: Vec<Mlp2>,
    pub modality_dims: Vec<usize>,
}

/// Per-modality inputs for a batch of (possibly masked) samples.
pub struct ObsBatch {
    pub features: Vec<Mat>,
    /// `weights[m][r]` is `mask / observed_count` for row r.
    pub weights: Vec<Vec<f64>>,
}

impl ObsBatch {
    pub fn new(samples: &[&MultimodalSample], modality_dims: &[usize]) -> Result<Self> {
        let mut features: Vec<Mat> = modality_dims
            .iter()
            .map(|&d| Mat::zeros(samples.len(), d))
            .collect();
        let mut weights = vec![vec![0.0; samples.len()]; modality_dims.len()];
        for (r, s) in samples.iter().enumerate() {
            let count = s.observed_count();
            if count == 0 {
                return Err(Error::AllMissing);
            }
            for (m, f) in s.features.iter().enumerate() {
                if f.len() != modality_dims[m] {
                    return Err(Error::ShapeMismatch(format!(
                        "modality {m} has {} features, expected {}",
                        f.len(),
                        modality_dims[m]
                    )));
                }
                if s.mask[m] {
                    features[m].row_mut(r).copy_from_slice(f);
                    weights[m][r] = 1.0 / count as f64;
                }
            }
        }
        Ok(ObsBatch { features, weights })
    }
}

impl ObsEncoder {
    pub fn new(store: &mut ParamStore, modality_dims: &[usize], dims: &ModelDims, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Init, 1);
        let subs = modality_dims
            .iter()
            .enumerate()
            .map(|(m, &d)| Mlp2::new(store, &format!("psi.m{m}"), d, dims.hidden, dims.obs, &mut rng))
            .collect();
        ObsEncoder {
            subs,
            modality_dims: modality_dims.to_vec(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, batch: &ObsBatch) -> Var {
        let mut acc: Option<Var> = None;
        for (m, sub) in self.subs.iter().enumerate() {
            let x = tape.constant(batch.features[m].clone());
            let h = sub.forward(tape, x);
            let w = tape.scale_rows(h, batch.weights[m].clone());
            acc = Some(match acc {
                Some(a) => tape.add(a, w),
                None => w,
            });
        }
        acc.expect("at least one modality")
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.subs.iter().flat_map(|s| s.params()).collect()
    }
}

/// g: position-tagged token embedding sum followed by a projection.
#[derive(Debug, Clone)]
pub struct PlanEncoder {
    pub table: ParamId,
    pub bias: ParamId,
    pub proj: Linear,
    pub schema: Schema,
}

impl PlanEncoder {
    pub fn new(store: &mut ParamStore, schema: &Schema, dims: &ModelDims, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Init, 2);
        let rows = schema.table_rows();
        let table = Mat::from_vec(
            rows,
            dims.hidden,
            crate::rng::normal_vec(&mut rng, rows * dims.hidden),
        );
        PlanEncoder {
            table: store.add("g.table", table),
            bias: store.add("g.bias", Mat::zeros(1, dims.hidden)),
            proj: Linear::new(store, "g.proj", dims.hidden, dims.plan, true, Init::Scaled(1.0), &mut rng),
            schema: schema.clone(),
        }
    }

    /// Multi-hot matrix selecting each plan's position-tagged token rows.
    pub fn bag(&self, plans: &[&SemanticPlan]) -> Result<Mat> {
        let mut bag = Mat::zeros(plans.len(), self.schema.table_rows());
        for (r, p) in plans.iter().enumerate() {
            self.schema.check(p)?;
            for row in self.schema.token_rows(p) {
                bag.row_mut(r)[row] += 1.0;
            }
        }
        Ok(bag)
    }

    pub fn forward_bag(&self, tape: &mut Tape, bag: Mat) -> Var {
        let b = tape.constant(bag);
        let t = tape.param(self.table);
        let s = tape.matmul(b, t);
        let bias = tape.param(self.bias);
        let s = tape.add_row(s, bias);
        let h = tape.tanh(s);
        self.proj.forward(tape, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.table, self.bias];
        p.extend(self.proj.params());
        p
    }
}

/// VAE over the concatenated multimodal feature vector.
#[derive(Debug, Clone)]
pub struct TargetVae {
    pub encoder: Mlp2,
    pub decoder: Mlp2,
    pub latent: usize,
}

impl TargetVae {
    pub fn new(store: &mut ParamStore, target_dim: usize, dims: &ModelDims, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Init, 3);
        TargetVae {
            encoder: Mlp2::new(store, "vae.enc", target_dim, dims.hidden, 2 * dims.latent, &mut rng),
            decoder: Mlp2::new(store, "vae.dec", dims.latent, dims.hidden, target_dim, &mut rng),
            latent: dims.latent,
        }
    }

    /// Returns (mean, clamped logvar).
    pub fn encode(&self, tape: &mut Tape, y: Var) -> (Var, Var) {
        let h = self.encoder.forward(tape, y);
        let mean = tape.slice_cols(h, 0, self.latent);
        let lv = tape.slice_cols(h, self.latent, self.latent);
        let lv = tape.clamp(lv, LOGVAR_RANGE.0, LOGVAR_RANGE.1);
        (mean, lv)
    }

    pub fn decode(&self, tape: &mut Tape, z: Var) -> Var {
        self.decoder.forward(tape, z)
    }

    pub fn target_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }
}

/// `z = mean + exp(logvar / 2) · η`, with logvar clamped to a finite range.
pub fn vae_reparam(mean: &[f64], logvar: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    if mean.len() != logvar.len() || mean.len() != eta.len() {
        return Err(Error::ShapeMismatch("reparameterisation inputs differ in length".into()));
    }
    Ok(mean
        .iter()
        .zip(logvar)
        .zip(eta)
        .map(|((m, lv), e)| m + (lv.clamp(LOGVAR_RANGE.0, LOGVAR_RANGE.1) / 2.0).exp() * e)
        .collect())
}

/// Every learned map besides the planner policy, retriever and denoiser.
#[derive(Debug, Clone)]
pub struct Encoders {
    pub dims: ModelDims,
    pub psi: ObsEncoder,
    pub g_tok: PlanEncoder,
    /// Head from target features into the plan space.
    pub g_y: Mlp2,
    pub vae: TargetVae,
    /// Low-level feature extractor; kept at its random initialisation.
    pub phi: Mlp2,
    /// Evidence alignment head.
    pub align: Mlp2,
    pub classifier: Mlp2,
}

impl Encoders {
    pub fn new(store: &mut ParamStore, modality_dims: &[usize], schema: &Schema, dims: &ModelDims, seed: u64) -> Result<Self> {
        if dims.obs != dims.plan {
            return Err(Error::InvalidConfig(
                "observation and plan spaces must share a dimension for the semantic cost".into(),
            ));
        }
        let target_dim: usize = modality_dims.iter().sum();
        let mut rng = stream(seed, Domain::Init, 4);
        let enc = Encoders {
            psi: ObsEncoder::new(store, modality_dims, dims, seed),
            g_tok: PlanEncoder::new(store, schema, dims, seed),
            g_y: Mlp2::new(store, "g_y", target_dim, dims.hidden, dims.plan, &mut rng),
            vae: TargetVae::new(store, target_dim, dims, seed),
            phi: Mlp2::new(store, "phi", target_dim, dims.hidden, dims.phi, &mut rng),
            align: Mlp2::new(store, "align", dims.latent, dims.hidden, dims.phi, &mut rng),
            classifier: Mlp2::new(
                store,
                "cls",
                dims.obs + dims.latent,
                dims.classifier_hidden,
                NUM_CLASSES,
                &mut rng,
            ),
            dims: dims.clone(),
        };
        assert_eq!(enc.phi.output_dim(), enc.align.output_dim());
        Ok(enc)
    }

    pub fn target_dim(&self) -> usize {
        self.vae.target_dim()
    }

    /// ψ(X) for a single sample.
    pub fn encode_obs(&self, store: &ParamStore, sample: &MultimodalSample) -> Result<Vec<f64>> {
        Ok(self.encode_obs_batch(store, &[sample])?.data)
    }

    pub fn encode_obs_batch(&self, store: &ParamStore, samples: &[&MultimodalSample]) -> Result<Mat> {
        let batch = ObsBatch::new(samples, &self.psi.modality_dims)?;
        let mut tape = Tape::new(store);
        let u = self.psi.forward(&mut tape, &batch);
        Ok(tape.value(u).clone())
    }

    /// c_S = g(S).
    pub fn encode_plan_tokens(&self, store: &ParamStore, plan: &SemanticPlan) -> Result<Vec<f64>> {
        Ok(self.encode_plans(store, &[plan])?.data)
    }

    pub fn encode_plans(&self, store: &ParamStore, plans: &[&SemanticPlan]) -> Result<Mat> {
        let bag = self.g_tok.bag(plans)?;
        let mut tape = Tape::new(store);
        let c = self.g_tok.forward_bag(&mut tape, bag);
        Ok(tape.value(c).clone())
    }

    pub fn vae_encode(&self, store: &ParamStore, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(y.len(), self.target_dim(), "target")?;
        let mut tape = Tape::new(store);
        let yv = tape.constant(Mat::row_vector(y.to_vec()));
        let (m, lv) = self.vae.encode(&mut tape, yv);
        Ok((tape.value(m).data.clone(), tape.value(lv).data.clone()))
    }

    pub fn vae_encode_batch(&self, store: &ParamStore, y: &Mat) -> Mat {
        let mut tape = Tape::new(store);
        let yv = tape.constant(y.clone());
        let (m, _) = self.vae.encode(&mut tape, yv);
        tape.value(m).clone()
    }

    pub fn vae_decode(&self, store: &ParamStore, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len(), self.dims.latent, "latent")?;
        Ok(self.vae_decode_batch(store, &Mat::row_vector(z.to_vec())).data)
    }

    pub fn vae_decode_batch(&self, store: &ParamStore, z: &Mat) -> Mat {
        let mut tape = Tape::new(store);
        let zv = tape.constant(z.clone());
        let y = self.vae.decode(&mut tape, zv);
        tape.value(y).clone()
    }

    /// Concatenation of observation embedding and latent.
    pub fn fuse(&self, u_x: &[f64], z_hat: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u_x.len(), self.dims.obs, "observation embedding")?;
        self.check_len(z_hat.len(), self.dims.latent, "latent")?;
        Ok([u_x, z_hat].concat())
    }

    pub fn classify(&self, store: &ParamStore, fused: &[f64]) -> Result<Vec<f64>> {
        self.check_len(fused.len(), self.dims.obs + self.dims.latent, "fused vector")?;
        let mut tape = Tape::new(store);
        let x = tape.constant(Mat::row_vector(fused.to_vec()));
        let l = self.classifier.forward(&mut tape, x);
        Ok(tape.value(l).data.clone())
    }

    pub fn classify_batch(&self, store: &ParamStore, fused: &Mat) -> Mat {
        let mut tape = Tape::new(store);
        let x = tape.constant(fused.clone());
        let l = self.classifier.forward(&mut tape, x);
        tape.value(l).clone()
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::ShapeMismatch(format!("{what}: got {got}, expected {want}")));
        }
        Ok(())
    }
}

/// Softmax of logits, then the expected class value on the [-3, 3] scale.
pub fn expected_score(logits: &[f64]) -> f64 {
    let mut p = logits.to_vec();
    crate::nn::softmax_in_place(&mut p);
    p.iter().enumerate().map(|(k, pk)| pk * (k as f64 - 3.0)).sum()
}

/// Seven-way class index of a continuous score (round, then clamp).
pub fn score_class(score: f64) -> usize {
    (score.round().clamp(-3.0, 3.0) + 3.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::ground_truth_plan;
    use crate::syndata::{apply_fixed_mask, generate_dataset, SyntheticConfig};
    use proptest::prelude::*;

    fn setup() -> (ParamStore, Encoders, crate::syndata::Benchmark) {
        let cfg = SyntheticConfig {
            n_train: 20,
            n_val: 5,
            n_test: 5,
            ..Default::default()
        };
        let bench = generate_dataset(&cfg).unwrap();
        let mut store = ParamStore::default();
        let enc = Encoders::new(&mut store, &cfg.modality_dims, &Schema::default(), &ModelDims::default(), 3).unwrap();
        (store, enc, bench)
    }

    #[test]
    fn observation_embedding_shape_and_masking() {
        let (store, enc, bench) = setup();
        let s = &bench.train.samples[0];
        assert_eq!(enc.encode_obs(&store, s).unwrap().len(), 32);
        let mut none = s.clone();
        none.mask = vec![false; 3];
        assert!(matches!(enc.encode_obs(&store, &none), Err(Error::AllMissing)));
    }

    proptest! {
        #[test]
        fn psi_ignores_masked_slot_contents(noise in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let (store, enc, bench) = setup();
            let masked = apply_fixed_mask(&bench.train, &[0]).unwrap();
            let a = &masked.samples[1];
            let mut b = a.clone();
            b.features[0] = noise;
            prop_assert_eq!(enc.encode_obs(&store, a).unwrap(), enc.encode_obs(&store, &b).unwrap());
        }
    }

    #[test]
    fn plan_encoding_deterministic_and_order_sensitive() {
        let (store, enc, bench) = setup();
        let schema = Schema::default();
        let s = &bench.train.samples[0];
        let plan = ground_truth_plan(&schema, &s.latent, s.score);
        let a = enc.encode_plan_tokens(&store, &plan).unwrap();
        assert_eq!(a, enc.encode_plan_tokens(&store, &plan).unwrap());
        assert!(crate::nn::norm(&a) > 0.0 && a.iter().all(|x| x.is_finite()));
        let mut swapped = plan.clone();
        swapped.constraints.swap(0, 2);
        if swapped.constraints != plan.constraints {
            assert_ne!(a, enc.encode_plan_tokens(&store, &swapped).unwrap());
        }
        let mut bad = plan.clone();
        bad.constraints.pop();
        assert!(matches!(enc.encode_plan_tokens(&store, &bad), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn reparam_contract() {
        let m = [0.5, -1.0];
        assert_eq!(vae_reparam(&m, &[3.0, -2.0], &[0.0, 0.0]).unwrap(), m.to_vec());
        let z = vae_reparam(&m, &[1e6, -1e6], &[1.0, 1.0]).unwrap();
        assert!(z.iter().all(|x| x.is_finite()));
        assert!((z[0] - (0.5 + 5f64.exp())).abs() < 1e-9);
        assert!(vae_reparam(&m, &[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn vae_shapes() {
        let (store, enc, bench) = setup();
        let y = bench.train.samples[0].concat_features();
        let (m, lv) = enc.vae_encode(&store, &y).unwrap();
        assert_eq!((m.len(), lv.len()), (8, 8));
        assert_eq!(enc.vae_decode(&store, &m).unwrap().len(), 32);
        assert!(enc.vae_encode(&store, &y[..5]).is_err());
        assert!(enc.vae_decode(&store, &y).is_err());
    }

    #[test]
    fn fuse_and_classify() {
        let (store, enc, _) = setup();
        let f = enc.fuse(&[0.1; 32], &[0.2; 8]).unwrap();
        assert_eq!(f.len(), 40);
        let logits = enc.classify(&store, &f).unwrap();
        assert_eq!(logits.len(), 7);
        let mut p = logits.clone();
        crate::nn::softmax_in_place(&mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(enc.fuse(&[0.0; 31], &[0.0; 8]).is_err());
        assert!(enc.classify(&store, &[0.0; 39]).is_err());
    }

    #[test]
    fn score_classes() {
        assert_eq!(score_class(-3.0), 0);
        assert_eq!(score_class(2.6), 6);
        assert_eq!(score_class(9.0), 6);
        assert_eq!(score_class(0.4), 3);
        assert!(expected_score(&[0.0; 7]).abs() < 1e-15);
    }
}
