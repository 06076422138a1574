//! The reference-guided attention U-Net generator, the discriminator, the
//! frozen perceptual feature extractor and the four-term composite loss.

mod discriminator;
mod generator;
mod losses;

pub use discriminator::{Discriminator, DiscriminatorConfig, FeatureExtractor, PERCEPTUAL_SEED};
pub use generator::{Generator, GeneratorConfig};
pub use losses::{
    adversarial_losses, disc_loss, frequency_loss, gen_adv_loss, perceptual_loss, pixel_loss, total_loss, LossParts,
    LossWeights,
};

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::substrate::{ParamStore, Real, Graph, Var};

const LEAKY_SLOPE: f64 = 0.2;

/// Largest group count ≤ 8 that divides `channels` and leaves at least two
/// channels per group.
fn norm_groups(channels: usize) -> usize {
    (1..=8)
        .rev()
        .find(|g| channels.is_multiple_of(*g) && channels / g >= 2)
        .unwrap_or(1)
}

/// Registers layer parameters with fan-in-scaled uniform initialization.
struct Builder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool) {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        self.conv_with_bound(name, cin, cout, k, bias, bound);
    }

    fn conv_with_bound(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool, bound: f64) {
        self.store
            .add_uniform(format!("{name}.weight"), &[cout, cin, k, k], bound, self.rng);
        if bias {
            self.store.add_uniform(format!("{name}.bias"), &[cout], bound, self.rng);
        }
    }

    fn norm(&mut self, name: &str, channels: usize) {
        self.store.add_full(format!("{name}.gamma"), &[channels], 1.0);
        self.store.add_full(format!("{name}.beta"), &[channels], 0.0);
    }
}

/// Parameters of one model bound into a graph, looked up by name.
pub struct Bound<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<'a, T: Real> Bound<'a, T> {
    /// Binds as gradient-tracking leaves.
    pub fn tracked(store: &'a ParamStore<T>, g: &mut Graph<T>) -> Self {
        Bound {
            store,
            vars: store.bind(g),
        }
    }

    /// Binds as constants.
    pub fn frozen(store: &'a ParamStore<T>, g: &mut Graph<T>) -> Self {
        Bound {
            store,
            vars: store.bind_frozen(g),
        }
    }

    /// Uses already-created graph nodes, one per parameter in store order.
    pub fn from_vars(store: &'a ParamStore<T>, vars: Vec<Var>) -> Self {
        assert_eq!(store.len(), vars.len(), "one node per parameter");
        Bound { store, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get(&self, name: &str) -> Option<Var> {
        self.store.index_of(name).map(|i| self.vars[i])
    }

    fn var(&self, name: &str) -> Var {
        self.get(name)
            .unwrap_or_else(|| panic!("model has no parameter {name}"))
    }

    fn conv(&self, g: &mut Graph<T>, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let w = self.var(&format!("{name}.weight"));
        let b = self.get(&format!("{name}.bias"));
        g.conv2d(x, w, b, stride, pad)
    }

    fn norm(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let c = g.shape(x)[1];
        let gamma = self.var(&format!("{name}.gamma"));
        let beta = self.var(&format!("{name}.beta"));
        g.group_norm(x, gamma, beta, norm_groups(c))
    }
}
