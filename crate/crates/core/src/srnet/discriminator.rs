use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::substrate::{Graph, ParamStore, Real, Var};

use super::{Bound, Builder, LEAKY_SLOPE};

/// Seed of the frozen perceptual extractor; independent of any run seed.
pub const PERCEPTUAL_SEED: u64 = 0x5EED_F00D;

const PERCEPTUAL_WIDTHS: [usize; 4] = [16, 32, 64, 64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub widths: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            widths: vec![32, 64, 128, 256],
        }
    }
}

/// Stride-2 convolution blocks with leaky activations, global mean pool
/// and a linear head producing one logit per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn build(config: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be positive and non-empty".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let mut cin = 1;
        for (i, &w) in config.widths.iter().enumerate() {
            b.conv(&format!("disc.b{i}.conv"), cin, w, 3, true);
            cin = w;
        }
        b.conv("disc.head", cin, 1, 1, true);
        Ok(Discriminator {
            config: config.clone(),
            params: store,
        })
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// `[N, 1, H, W]` → logits `[N]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound<T>, x: Var) -> Result<Var> {
        let n = match *g.shape(x) {
            [n, 1, _, _] => n,
            ref s => shape_err!("discriminator: expected [N, 1, H, W], got {s:?}"),
        };
        let mut t = x;
        for i in 0..self.config.widths.len() {
            t = p.conv(g, &format!("disc.b{i}.conv"), t, 2, 1)?;
            t = g.leaky_relu(t, T::from_f64_lossy(LEAKY_SLOPE))?;
        }
        let pooled = g.mean_spatial(t)?;
        let logit = p.conv(g, "disc.head", pooled, 1, 0)?;
        g.reshape(logit, &[n])
    }
}

/// Frozen random convolutional feature stack used for the perceptual
/// distance. Never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    pub params: ParamStore<T>,
}

impl<T: Real> Default for FeatureExtractor<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new() -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(PERCEPTUAL_SEED);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let mut cin = 1;
        for (i, &w) in PERCEPTUAL_WIDTHS.iter().enumerate() {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            b.conv_with_bound(&format!("percep.l{i}.conv"), cin, w, 3, false, bound);
            cin = w;
        }
        FeatureExtractor { params: store }
    }

    pub fn cast<U: Real>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            params: self.params.cast(),
        }
    }

    /// Activations of the four stages for `[N, 1, H, W]` input.
    pub fn features(&self, g: &mut Graph<T>, p: &Bound<T>, x: Var) -> Result<Vec<Var>> {
        if !matches!(g.shape(x), [_, 1, _, _]) {
            shape_err!("feature extractor: expected [N, 1, H, W], got {:?}", g.shape(x));
        }
        let mut out = Vec::with_capacity(PERCEPTUAL_WIDTHS.len());
        let mut t = x;
        for i in 0..PERCEPTUAL_WIDTHS.len() {
            t = p.conv(g, &format!("percep.l{i}.conv"), t, 2, 1)?;
            t = g.leaky_relu(t, T::from_f64_lossy(LEAKY_SLOPE))?;
            out.push(t);
        }
        Ok(out)
    }
}
