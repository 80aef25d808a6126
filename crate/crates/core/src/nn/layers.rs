use rand_distr::{Distribution, StandardNormal};

use super::mat::Mat;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::rng::Rng;

/// How a weight matrix starts out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Gaussian with variance `gain² / fan_in`.
    Scaled(f64),
    Zero,
}

/// Affine map `x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let w = match init {
            Init::Scaled(gain) => {
                let std = gain / (input as f64).sqrt();
                Mat::from_vec(
                    input,
                    output,
                    (0..input * output)
                        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                        .collect(),
                )
            }
            Init::Zero => Mat::zeros(input, output),
        };
        let w = store.add(format!("{name}.w"), w);
        let b = bias.then(|| store.add(format!("{name}.b"), Mat::zeros(1, output)));
        Linear {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// Two-layer perceptron with a tanh hidden layer.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut Rng,
    ) -> Self {
        Mlp2 {
            hidden: Linear::new(store, &format!("{name}.l1"), input, hidden, true, Init::Scaled(1.0), rng),
            out: Linear::new(store, &format!("{name}.l2"), hidden, output, true, Init::Scaled(1.0), rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.tanh(h);
        self.out.forward(tape, h)
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input
    }

    pub fn output_dim(&self) -> usize {
        self.out.output
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.hidden.params();
        p.extend(self.out.params());
        p
    }
}
