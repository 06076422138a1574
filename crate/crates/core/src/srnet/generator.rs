use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::substrate::{Array, Graph, ParamStore, Real, Var};

use super::{Bound, Builder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub base_width: usize,
    pub channel_mults: Vec<usize>,
    /// Levels that get self-attention in addition to the bottleneck
    /// (depth `len(channel_mults)`), which always has it.
    pub attention_at_depth: BTreeSet<usize>,
    pub attention_heads: usize,
    pub residual_output: bool,
    pub in_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_width: 32,
            channel_mults: vec![1, 2, 4],
            attention_at_depth: BTreeSet::from([2]),
            attention_heads: 4,
            residual_output: true,
            in_channels: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=2).contains(&self.in_channels) {
            return bad(format!("in_channels must be 1 or 2, got {}", self.in_channels));
        }
        if self.base_width == 0 || self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return bad("base_width and channel_mults must be positive and non-empty".into());
        }
        if let Some(&d) = self.attention_at_depth.iter().find(|&&d| d > self.levels()) {
            return bad(format!("attention depth {d} exceeds {} levels", self.levels()));
        }
        if self.attention_heads == 0 {
            return bad("attention_heads must be >= 1".into());
        }
        for d in self.attention_at_depth.iter().copied().chain([self.levels()]) {
            let c = self.width_at(d);
            if !c.is_multiple_of(self.attention_heads) {
                return bad(format!(
                    "{c} channels at depth {d} not divisible by {} heads",
                    self.attention_heads
                ));
            }
        }
        Ok(())
    }

    /// Channel count at encoder level `d`; the bottleneck uses the deepest
    /// level's width.
    fn width_at(&self, d: usize) -> usize {
        self.base_width * self.channel_mults[d.min(self.levels() - 1)]
    }
}

/// Attention U-Net with GroupNorm/SiLU residual blocks. Input
/// `[N, in_channels, H, W]`, channel 0 holding the upsampled low-resolution
/// image; output `[N, 1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub params: ParamStore<T>,
}

fn res_block_params<T: Real>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize) {
    b.norm(&format!("{name}.norm1"), cin);
    b.conv(&format!("{name}.conv1"), cin, cout, 3, true);
    b.norm(&format!("{name}.norm2"), cout);
    b.conv(&format!("{name}.conv2"), cout, cout, 3, true);
    if cin != cout {
        b.conv(&format!("{name}.skip"), cin, cout, 1, false);
    }
}

fn attn_params<T: Real>(b: &mut Builder<T>, name: &str, c: usize) {
    b.norm(&format!("{name}.norm"), c);
    b.conv(&format!("{name}.qkv"), c, 3 * c, 1, false);
    b.conv(&format!("{name}.proj"), c, c, 1, true);
}

fn res_block<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var) -> Result<Var> {
    let h = p.norm(g, &format!("{name}.norm1"), x)?;
    let h = g.silu(h)?;
    let h = p.conv(g, &format!("{name}.conv1"), h, 1, 1)?;
    let h = p.norm(g, &format!("{name}.norm2"), h)?;
    let h = g.silu(h)?;
    let h = p.conv(g, &format!("{name}.conv2"), h, 1, 1)?;
    let skip = match p.get(&format!("{name}.skip.weight")) {
        Some(_) => p.conv(g, &format!("{name}.skip"), x, 1, 0)?,
        None => x,
    };
    g.add(skip, h)
}

/// Multi-head self-attention over the flattened spatial positions, with a
/// residual connection.
fn attention<T: Real>(g: &mut Graph<T>, p: &Bound<T>, name: &str, x: Var, heads: usize) -> Result<Var> {
    let [n, c, h, w] = match *g.shape(x) {
        [n, c, h, w] => [n, c, h, w],
        ref s => shape_err!("attention: expected [N, C, H, W], got {s:?}"),
    };
    let dh = c / heads;
    let hw = h * w;
    let t = p.norm(g, &format!("{name}.norm"), x)?;
    let qkv = p.conv(g, &format!("{name}.qkv"), t, 1, 0)?;
    let q = g.select_channels(qkv, 0, c)?;
    let k = g.select_channels(qkv, c, c)?;
    let v = g.select_channels(qkv, 2 * c, c)?;
    let q = g.reshape(q, &[n * heads, dh, hw])?;
    let k = g.reshape(k, &[n * heads, dh, hw])?;
    let v = g.reshape(v, &[n * heads, dh, hw])?;
    let scores = g.matmul(q, k, true, false)?;
    let scores = g.scale(scores, T::from_f64_lossy(1.0 / (dh as f64).sqrt()))?;
    let attn = g.softmax(scores)?;
    let out = g.matmul(v, attn, false, true)?;
    let out = g.reshape(out, &[n, c, h, w])?;
    let out = p.conv(g, &format!("{name}.proj"), out, 1, 0)?;
    g.add(x, out)
}

impl<T: Real> Generator<T> {
    pub fn build(config: &GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let levels = config.levels();
        let base = config.base_width;
        b.conv("gen.in.conv", config.in_channels, base, 3, true);
        let mut ch = base;
        for l in 0..levels {
            let out = config.width_at(l);
            res_block_params(&mut b, &format!("gen.enc{l}.res0"), ch, out);
            res_block_params(&mut b, &format!("gen.enc{l}.res1"), out, out);
            if config.attention_at_depth.contains(&l) {
                attn_params(&mut b, &format!("gen.enc{l}.attn"), out);
            }
            b.conv(&format!("gen.enc{l}.down"), out, out, 3, true);
            ch = out;
        }
        res_block_params(&mut b, "gen.mid.res0", ch, ch);
        attn_params(&mut b, "gen.mid.attn", ch);
        res_block_params(&mut b, "gen.mid.res1", ch, ch);
        for l in (0..levels).rev() {
            let out = config.width_at(l);
            b.conv(&format!("gen.dec{l}.up"), ch, out, 3, true);
            res_block_params(&mut b, &format!("gen.dec{l}.res0"), 2 * out, out);
            res_block_params(&mut b, &format!("gen.dec{l}.res1"), out, out);
            if config.attention_at_depth.contains(&l) {
                attn_params(&mut b, &format!("gen.dec{l}.attn"), out);
            }
            ch = out;
        }
        b.norm("gen.out.norm", ch);
        let bound = 1.0 / ((ch * 9) as f64).sqrt();
        b.conv_with_bound("gen.out.conv", ch, 1, 3, true, bound);
        Ok(Generator {
            config: config.clone(),
            params: store,
        })
    }

    /// Zeroes the final convolution so that, with a residual output, the
    /// network is the identity on its low-resolution channel.
    pub fn zero_output_layer(&mut self) {
        for name in ["gen.out.conv.weight", "gen.out.conv.bias"] {
            let i = self.params.index_of(name).expect("output layer");
            let shape = self.params.get(i).shape().to_vec();
            *self.params.get_mut(i) = Array::zeros(&shape);
        }
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound<T>, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let [_, c, h, w] = match *g.shape(x) {
            [n, c, h, w] => [n, c, h, w],
            ref s => shape_err!("generator: expected [N, C, H, W] input, got {s:?}"),
        };
        if c != cfg.in_channels {
            shape_err!("generator: expected {} input channels, got {c}", cfg.in_channels);
        }
        let levels = cfg.levels();
        let m = 1 << levels;
        if h % m != 0 || w % m != 0 {
            shape_err!("generator: input {h}x{w} not divisible by 2^{levels}");
        }
        let heads = cfg.attention_heads;
        let mut t = p.conv(g, "gen.in.conv", x, 1, 1)?;
        let mut skips = Vec::with_capacity(levels);
        for l in 0..levels {
            t = res_block(g, p, &format!("gen.enc{l}.res0"), t)?;
            t = res_block(g, p, &format!("gen.enc{l}.res1"), t)?;
            if cfg.attention_at_depth.contains(&l) {
                t = attention(g, p, &format!("gen.enc{l}.attn"), t, heads)?;
            }
            skips.push(t);
            t = p.conv(g, &format!("gen.enc{l}.down"), t, 2, 1)?;
        }
        t = res_block(g, p, "gen.mid.res0", t)?;
        t = attention(g, p, "gen.mid.attn", t, heads)?;
        t = res_block(g, p, "gen.mid.res1", t)?;
        for l in (0..levels).rev() {
            t = g.upsample2x(t)?;
            t = p.conv(g, &format!("gen.dec{l}.up"), t, 1, 1)?;
            t = g.concat(&[t, skips[l]])?;
            t = res_block(g, p, &format!("gen.dec{l}.res0"), t)?;
            t = res_block(g, p, &format!("gen.dec{l}.res1"), t)?;
            if cfg.attention_at_depth.contains(&l) {
                t = attention(g, p, &format!("gen.dec{l}.attn"), t, heads)?;
            }
        }
        t = p.norm(g, "gen.out.norm", t)?;
        t = g.silu(t)?;
        let out = p.conv(g, "gen.out.conv", t, 1, 1)?;
        if cfg.residual_output {
            let lr = g.select_channels(x, 0, 1)?;
            g.add(out, lr)
        } else {
            Ok(out)
        }
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, input: Array<T>) -> Result<Array<T>> {
        let mut g = Graph::new();
        let p = Bound::frozen(&self.params, &mut g);
        let x = g.input(input);
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            base_width: 8,
            channel_mults: vec![1, 2],
            attention_at_depth: BTreeSet::from([1]),
            attention_heads: 2,
            ..Default::default()
        }
    }

    #[test]
    fn default_build_is_deterministic() {
        let a = Generator::<f32>::build(&GeneratorConfig::default(), 7).unwrap();
        let b = Generator::<f32>::build(&GeneratorConfig::default(), 7).unwrap();
        assert_eq!(a.params.num_scalars(), b.params.num_scalars());
        assert_eq!(a, b);
        let c = Generator::<f32>::build(&GeneratorConfig::default(), 8).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn output_shape() {
        let gen = Generator::<f32>::build(&small(), 1).unwrap();
        let y = gen.predict(Array::full(&[1, 2, 16, 16], 0.5)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 16, 16]);
        assert!(y.all_finite());
    }

    #[test]
    fn zeroed_output_is_identity_on_lr_channel() {
        let mut gen = Generator::<f32>::build(&small(), 3).unwrap();
        gen.zero_output_layer();
        let data: Vec<f32> = (0..2 * 16 * 16).map(|i| (i % 37) as f32 / 37.0).collect();
        let x = Array::from_vec(&[1, 2, 16, 16], data.clone()).unwrap();
        let y = gen.predict(x).unwrap();
        assert_eq!(y.data(), &data[..256]);
    }

    #[test]
    fn indivisible_input_is_shape_error() {
        let gen = Generator::<f32>::build(&small(), 1).unwrap();
        let err = gen.predict(Array::zeros(&[1, 2, 18, 16])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        let err = gen.predict(Array::zeros(&[1, 1, 16, 16])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.in_channels = 3;
        assert!(c.validate().is_err());
        let mut c = small();
        c.attention_at_depth.insert(5);
        assert!(c.validate().is_err());
        let mut c = small();
        c.attention_heads = 3;
        assert!(c.validate().is_err());
    }
}
