use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::substrate::{Graph, Real, Var};

use super::{Bound, Discriminator, FeatureExtractor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_pixel: f64,
    pub w_freq: f64,
    pub w_percep: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_pixel: 1.0,
            w_freq: 0.1,
            w_percep: 0.01,
            w_adv: 0.005,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_pixel, self.w_freq, self.w_percep, self.w_adv];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(g: &Graph<T>, a: Var, b: Var, op: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        shape_err!("{op}: {:?} vs {:?}", g.shape(a), g.shape(b));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn pixel_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(g, pred, gt, "pixel_loss")?;
    let d = g.sub(pred, gt)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Mean squared modulus of the difference of the 2D spectra (over the last
/// two axes), with the DFT scaled by `1/sqrt(H·W)`.
pub fn frequency_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(g, pred, gt, "frequency_loss")?;
    let s = g.shape(pred).to_vec();
    if s.len() < 2 {
        shape_err!("frequency_loss: expected at least 2D input, got {s:?}");
    }
    let hw = s[s.len() - 2] * s[s.len() - 1];
    let scale = T::from_f64_lossy(1.0 / (hw as f64).sqrt());
    let fp = g.dft2(pred, scale)?;
    let fg = g.dft2(gt, scale)?;
    let d = g.sub(fp, fg)?;
    let sq = g.square(d)?;
    let total = g.sum(sq)?;
    let n: usize = s.iter().product();
    g.scale(total, T::from_f64_lossy(1.0 / n as f64))
}

/// Sum over extractor stages of the mean squared feature difference.
pub fn perceptual_loss<T: Real>(
    g: &mut Graph<T>,
    extractor: &FeatureExtractor<T>,
    ext: &Bound<T>,
    pred: Var,
    gt: Var,
) -> Result<Var> {
    same_shape(g, pred, gt, "perceptual_loss")?;
    let fp = extractor.features(g, ext, pred)?;
    let fg = extractor.features(g, ext, gt)?;
    let mut total: Option<Var> = None;
    for (a, b) in fp.into_iter().zip(fg) {
        let term = pixel_loss(g, a, b)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("extractor has stages"))
}

/// Non-saturating generator term `mean(softplus(−logit(fake)))`.
pub fn gen_adv_loss<T: Real>(g: &mut Graph<T>, fake_logits: Var) -> Result<Var> {
    let n = g.neg(fake_logits)?;
    let s = g.softplus(n)?;
    g.mean(s)
}

/// `mean(softplus(−logit(real))) + mean(softplus(logit(fake)))`.
pub fn disc_loss<T: Real>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let r = gen_adv_loss(g, real_logits)?;
    let f = g.softplus(fake_logits)?;
    let f = g.mean(f)?;
    g.add(r, f)
}

/// Generator and discriminator adversarial losses. The discriminator sees
/// a detached copy of `fake`.
pub fn adversarial_losses<T: Real>(
    g: &mut Graph<T>,
    disc: &Discriminator<T>,
    dp: &Bound<T>,
    fake: Var,
    real: Var,
) -> Result<(Var, Var)> {
    let fake_logits = disc.forward(g, dp, fake)?;
    let gen = gen_adv_loss(g, fake_logits)?;
    let detached = g.detach(fake);
    let fl = disc.forward(g, dp, detached)?;
    let rl = disc.forward(g, dp, real)?;
    let d = disc_loss(g, rl, fl)?;
    Ok((gen, d))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub pixel: Var,
    pub freq: Var,
    pub percep: Var,
    pub adv: Var,
}

/// `w_pixel·pixel + w_freq·freq + w_percep·percep + w_adv·adv`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, parts: &LossParts, w: &LossWeights) -> Result<Var> {
    let terms = [
        (parts.pixel, w.w_pixel),
        (parts.freq, w.w_freq),
        (parts.percep, w.w_percep),
        (parts.adv, w.w_adv),
    ];
    let mut total: Option<Var> = None;
    for (v, wt) in terms {
        let t = g.scale(v, T::from_f64_lossy(wt))?;
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    Ok(total.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(shape: &[usize], seed: u64) -> Array<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Array::from_vec(shape, (0..n).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn pixel_loss_closed_forms() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Array::full(&[1, 1, 4, 4], 0.3));
        let b = g.input(Array::full(&[1, 1, 4, 4], 0.4));
        let z = pixel_loss(&mut g, a, a).unwrap();
        assert_eq!(g.value(z).item(), 0.0);
        let l = pixel_loss(&mut g, b, a).unwrap();
        assert!((g.value(l).item() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn pixel_loss_matches_direct_sum() {
        let (x, y) = (rand_arr(&[1, 1, 8, 8], 1), rand_arr(&[1, 1, 8, 8], 2));
        let direct = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 64.0;
        let mut g = Graph::new();
        let (a, b) = (g.input(x), g.input(y));
        let l = pixel_loss(&mut g, a, b).unwrap();
        assert!((g.value(l).item() - direct).abs() < 1e-12);
    }

    #[test]
    fn frequency_equals_pixel_by_parseval() {
        for seed in 0..5 {
            let (x, y) = (rand_arr(&[2, 1, 16, 8], seed), rand_arr(&[2, 1, 16, 8], seed + 100));
            let mut g = Graph::new();
            let (a, b) = (g.input(x), g.input(y));
            let p = pixel_loss(&mut g, a, b).unwrap();
            let f = frequency_loss(&mut g, a, b).unwrap();
            let (p, f) = (g.value(p).item(), g.value(f).item());
            assert!((p - f).abs() <= 1e-6 * p, "{p} vs {f}");
        }
    }

    #[test]
    fn perceptual_zero_symmetric_positive() {
        let ext = FeatureExtractor::<f64>::new();
        let x = rand_arr(&[1, 1, 16, 16], 3);
        let noise = rand_arr(&[1, 1, 16, 16], 4).map(|v| (v - 0.5) * 0.2);
        let y = Array::from_vec(&[1, 1, 16, 16], x.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect()).unwrap();
        let mut g = Graph::new();
        let ep = Bound::frozen(&ext.params, &mut g);
        let (a, b) = (g.input(x), g.input(y));
        let z = perceptual_loss(&mut g, &ext, &ep, a, a).unwrap();
        let ab = perceptual_loss(&mut g, &ext, &ep, a, b).unwrap();
        let ba = perceptual_loss(&mut g, &ext, &ep, b, a).unwrap();
        assert_eq!(g.value(z).item(), 0.0);
        assert!(g.value(ab).item() > 0.0);
        assert!((g.value(ab).item() - g.value(ba).item()).abs() < 1e-15);
    }

    #[test]
    fn adversarial_at_zero_logits() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Array::zeros(&[3]));
        let gl = gen_adv_loss(&mut g, z).unwrap();
        let dl = disc_loss(&mut g, z, z).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((g.value(gl).item() - ln2).abs() < 1e-15);
        assert!((g.value(dl).item() - 2.0 * ln2).abs() < 1e-15);
        let up = g.input(Array::full(&[3], 1.0));
        let gl2 = gen_adv_loss(&mut g, up).unwrap();
        assert!(g.value(gl2).item() < g.value(gl).item());
    }

    #[test]
    fn total_loss_is_linear() {
        let mut g = Graph::<f64>::new();
        let vals = [0.3, 0.2, 0.7, 0.9];
        let v: Vec<Var> = vals.iter().map(|&x| g.input(Array::scalar(x))).collect();
        let parts = LossParts {
            pixel: v[0],
            freq: v[1],
            percep: v[2],
            adv: v[3],
        };
        let only_pixel = LossWeights {
            w_pixel: 1.0,
            w_freq: 0.0,
            w_percep: 0.0,
            w_adv: 0.0,
        };
        let t = total_loss(&mut g, &parts, &only_pixel).unwrap();
        assert_eq!(g.value(t).item(), 0.3);
        let w = LossWeights::default();
        let w2 = LossWeights {
            w_pixel: 2.0,
            w_freq: 0.2,
            w_percep: 0.02,
            w_adv: 0.01,
        };
        let a = total_loss(&mut g, &parts, &w).unwrap();
        let b = total_loss(&mut g, &parts, &w2).unwrap();
        assert!((2.0 * g.value(a).item() - g.value(b).item()).abs() < 1e-15);
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let zero = LossWeights {
            w_pixel: 0.0,
            w_freq: 0.0,
            w_percep: 0.0,
            w_adv: 0.0,
        };
        assert!(zero.validate().is_err());
        let neg = LossWeights {
            w_adv: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }
}
