//! Minimal batched autodiff and the layers built on it.

mod layers;
mod mat;
mod optim;
mod params;
mod tape;

pub use layers::{Init, Linear, Mlp2};
pub use mat::{cosine, dot, norm, Mat};
pub use optim::{Adam, PlateauScheduler};
pub use params::{ParamId, ParamStore};
pub use tape::{softmax_in_place, Gradients, Tape, Var};
