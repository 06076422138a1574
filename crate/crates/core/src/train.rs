//! Case-wise splitting, two-channel pair assembly, the alternating
//! adversarial training loop and slice-by-slice volume inference.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{bilinear_baseline, DegradedCase, LowResSeries};
use crate::error::{shape_err, Error, Result};
use crate::metrics::{psnr, ssim, SsimParams};
use crate::phantom::{derive_seed, PhantomGeometry};
use crate::srnet::{
    disc_loss, frequency_loss, gen_adv_loss, perceptual_loss, pixel_loss, total_loss, Bound, Discriminator,
    DiscriminatorConfig, FeatureExtractor, Generator, GeneratorConfig, LossParts, LossWeights,
};
use crate::substrate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::substrate::{AdamConfig, AdamState, Array, Graph, Var};
use crate::volume::{DwiCase, DwiImage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Upsampled DWI plus the high-resolution b0 reference.
    #[default]
    Proposed,
    /// Upsampled DWI only.
    Conventional,
}

impl Mode {
    pub fn in_channels(self) -> usize {
        match self {
            Mode::Proposed => 2,
            Mode::Conventional => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::Conventional => "conventional",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halving_period_epochs: usize,
    pub epochs: usize,
    pub split_ratio: [usize; 3],
    pub train_b_values: Vec<f64>,
    pub eval_b_values: Vec<f64>,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Random subset of training pairs visited per epoch (all when unset).
    pub max_pairs_per_epoch: Option<usize>,
    /// Evenly spaced subset of validation pairs scored per epoch (all when
    /// unset).
    pub val_max_pairs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Proposed,
            batch_size: 18,
            lr: 1e-4,
            lr_halving_period_epochs: 20,
            epochs: 60,
            split_ratio: [5, 2, 3],
            train_b_values: vec![500.0],
            eval_b_values: vec![500.0, 1000.0],
            seed: 0,
            loss_weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            max_pairs_per_epoch: None,
            val_max_pairs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.lr_halving_period_epochs == 0 {
            return bad("lr_halving_period_epochs must be >= 1".into());
        }
        if self.split_ratio.contains(&0) {
            return bad(format!("split ratio components must be >= 1, got {:?}", self.split_ratio));
        }
        if self.train_b_values.is_empty() || self.eval_b_values.is_empty() {
            return bad("train and eval b-values must be non-empty".into());
        }
        if self.generator.in_channels != self.mode.in_channels() {
            return bad(format!(
                "{} mode needs {} input channels, generator has {}",
                self.mode,
                self.mode.in_channels(),
                self.generator.in_channels
            ));
        }
        if self.max_pairs_per_epoch == Some(0) || self.val_max_pairs == Some(0) {
            return bad("pair limits must be >= 1 when set".into());
        }
        self.generator.validate()?;
        self.loss_weights.validate()
    }

    /// The same configuration for another mode, with the generator input
    /// width adjusted.
    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut c = self.clone();
        c.mode = mode;
        c.generator.in_channels = mode.in_channels();
        c
    }

    /// `lr · 0.5^floor(epoch / period)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.lr_halving_period_epochs) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle, then proportional partition by case. Rounding puts any
/// remainder in the training set; validation and test get at least one case
/// each.
pub fn split_cases(ids: &[String], ratio: [usize; 3], seed: u64) -> Result<Split> {
    let n = ids.len();
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 cases to split, got {n}")));
    }
    if ratio.contains(&0) {
        return Err(Error::Config(format!("split ratio components must be >= 1, got {ratio:?}")));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != n {
        return Err(Error::Data("duplicate case ids".into()));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5911)));
    let total: usize = ratio.iter().sum();
    let n_val = ((n * ratio[1]) as f64 / total as f64).round().max(1.0) as usize;
    let n_test = ((n * ratio[2]) as f64 / total as f64).round().max(1.0) as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    if n_train == 0 {
        return Err(Error::Config(format!("{n} cases leave no training case for ratio {ratio:?}")));
    }
    Ok(Split {
        train: shuffled[..n_train].to_vec(),
        val: shuffled[n_train..n_train + n_val].to_vec(),
        test: shuffled[n_train + n_val..].to_vec(),
    })
}

/// One slice-level example: `input` is `[C, H, W]`, `target` `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub case_id: String,
    pub slice_index: usize,
    pub dwi_index: usize,
    pub b_value: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub input: Vec<f32>,
    pub target: Vec<f32>,
}

/// Pairs for every HR slice and every DWI whose b-value is listed. Channel
/// 0 is the bilinear reconstruction, channel 1 (proposed mode) the HR b0.
pub fn make_training_pairs(case: &DegradedCase, mode: Mode, b_values: &[f64]) -> Result<Vec<TrainingPair>> {
    let [nz, ny, nx] = case.hr.dims();
    if case.bilinear.dims() != case.hr.dims() {
        shape_err!(
            "case {}: bilinear grid {:?} differs from HR grid {:?}",
            case.hr.case_id,
            case.bilinear.dims(),
            case.hr.dims()
        );
    }
    let b0 = &case.hr.b0;
    if mode == Mode::Proposed && (b0.b_value != 0.0 || b0.volume.dims() != [nz, ny, nx]) {
        return Err(Error::Data(format!("case {}: no usable HR b0 reference", case.hr.case_id)));
    }
    let mut pairs = Vec::new();
    for (d, (hr, bl)) in case.hr.dwis.iter().zip(&case.bilinear.dwis).enumerate() {
        if !b_values.contains(&hr.b_value) {
            continue;
        }
        for z in 0..nz {
            let mut input: Vec<f32> = bl.volume.slice(z).iter().map(|&v| v as f32).collect();
            if mode == Mode::Proposed {
                input.extend(b0.volume.slice(z).iter().map(|&v| v as f32));
            }
            pairs.push(TrainingPair {
                case_id: case.hr.case_id.clone(),
                slice_index: z,
                dwi_index: d,
                b_value: hr.b_value,
                channels: mode.in_channels(),
                height: ny,
                width: nx,
                input,
                target: hr.volume.slice(z).iter().map(|&v| v as f32).collect(),
            });
        }
    }
    Ok(pairs)
}

fn batch_arrays(pairs: &[&TrainingPair]) -> Result<(Array<f32>, Array<f32>)> {
    let p0 = pairs[0];
    let (c, h, w) = (p0.channels, p0.height, p0.width);
    let mut input = Vec::with_capacity(pairs.len() * c * h * w);
    let mut target = Vec::with_capacity(pairs.len() * h * w);
    for p in pairs {
        if (p.channels, p.height, p.width) != (c, h, w) {
            shape_err!("batch mixes pair shapes");
        }
        input.extend_from_slice(&p.input);
        target.extend_from_slice(&p.target);
    }
    Ok((
        Array::from_vec(&[pairs.len(), c, h, w], input)?,
        Array::from_vec(&[pairs.len(), 1, h, w], target)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub pixel: f64,
    pub freq: f64,
    pub percep: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,lr,pixel,freq,percep,adv_g,adv_d,val_psnr,val_ssim";

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{EPOCH_LOG_HEADER}\n");
    for e in log {
        s += &format!(
            "{},{:e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.6},{:.6}\n",
            e.epoch, e.lr, e.pixel, e.freq, e.percep, e.adv_g, e.adv_d, e.val_psnr, e.val_ssim
        );
    }
    s
}

/// Trained weights plus everything needed to rebuild and use them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub discriminator: Option<Discriminator<f32>>,
    pub best_epoch: usize,
    pub best_val_psnr: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    train_config: TrainConfig,
    seed: u64,
    best_epoch: usize,
    best_val_psnr: f64,
    has_discriminator: bool,
}

impl ModelCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = serde_json::to_value(CheckpointHeader {
            train_config: self.config.clone(),
            seed: self.config.seed,
            best_epoch: self.best_epoch,
            best_val_psnr: self.best_val_psnr,
            has_discriminator: self.discriminator.is_some(),
        })?;
        let mut records: Vec<(String, &Array<f32>)> =
            self.generator.params.iter().map(|(n, a)| (n.to_string(), a)).collect();
        if let Some(d) = &self.discriminator {
            records.extend(d.params.iter().map(|(n, a)| (n.to_string(), a)));
        }
        write_checkpoint(path, &header, &records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, records) = read_checkpoint(path)?;
        let h: CheckpointHeader = serde_json::from_value(header)?;
        h.train_config.validate()?;
        let mut generator = Generator::build(&h.train_config.generator, 0)?;
        let (gen_rec, disc_rec): (Vec<_>, Vec<_>) = records.into_iter().partition(|(n, _)| n.starts_with("gen."));
        if gen_rec.len() != generator.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} generator tensors, model expects {}",
                gen_rec.len(),
                generator.params.len()
            )));
        }
        generator.params.load(&gen_rec)?;
        let discriminator = if h.has_discriminator {
            let mut d = Discriminator::build(&h.train_config.discriminator, 0)?;
            if disc_rec.len() != d.params.len() {
                return Err(Error::Data(format!(
                    "checkpoint has {} discriminator tensors, model expects {}",
                    disc_rec.len(),
                    d.params.len()
                )));
            }
            d.params.load(&disc_rec)?;
            Some(d)
        } else {
            None
        };
        Ok(ModelCheckpoint {
            config: h.train_config,
            generator,
            discriminator,
            best_epoch: h.best_epoch,
            best_val_psnr: h.best_val_psnr,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<EpochLog>,
}

/// Running means of the loss terms over one epoch.
#[derive(Default)]
struct LossMeans {
    sums: [f64; 5],
    batches: usize,
}

impl LossMeans {
    fn add(&mut self, v: [f64; 5]) {
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += x;
        }
        self.batches += 1;
    }

    fn means(&self) -> [f64; 5] {
        self.sums.map(|s| s / self.batches.max(1) as f64)
    }
}

fn check_finite(values: &[(&str, f64)], epoch: usize, batch: usize) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch,
                message: format!("{name} loss is {v}"),
            });
        }
    }
    Ok(())
}

/// Mean PSNR and SSIM of the generator's output over `pairs`.
pub fn score_pairs(gen: &Generator<f32>, pairs: &[&TrainingPair], batch: usize) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let params = SsimParams::default();
    let (mut ps, mut ss) = (Vec::new(), Vec::new());
    for chunk in pairs.chunks(batch.max(1)) {
        let (x, _) = batch_arrays(chunk)?;
        let y = gen.predict(x)?;
        let hw = chunk[0].height * chunk[0].width;
        for (p, out) in chunk.iter().zip(y.data().chunks(hw)) {
            let pred: Vec<f64> = out.iter().map(|&v| v as f64).collect();
            let gt: Vec<f64> = p.target.iter().map(|&v| v as f64).collect();
            let v = psnr(&pred, &gt, 1.0)?;
            if v.is_finite() {
                ps.push(v);
            }
            ss.push(ssim(&pred, &gt, p.height, p.width, &params)?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&ps), mean(&ss)))
}

/// Evenly spaced subset of at most `limit` elements.
fn spaced<T>(items: &[T], limit: Option<usize>) -> Vec<&T> {
    match limit {
        Some(m) if m < items.len() => (0..m).map(|i| &items[i * items.len() / m]).collect(),
        _ => items.iter().collect(),
    }
}

/// One discriminator step on the detached generator output, then one
/// generator step against the updated discriminator. Returns
/// `[pixel, freq, percep, adv_g, adv_d]`.
#[allow(clippy::too_many_arguments)]
fn train_batch(
    cfg: &TrainConfig,
    gen: &mut Generator<f32>,
    disc: &mut Discriminator<f32>,
    ext: &FeatureExtractor<f32>,
    g_opt: &mut AdamState<f32>,
    d_opt: &mut AdamState<f32>,
    x: Array<f32>,
    y: Array<f32>,
    lr: f64,
) -> Result<[f64; 5]> {
    let w = &cfg.loss_weights;
    let mut g = Graph::new();
    let gp = Bound::tracked(&gen.params, &mut g);
    let xv = g.input(x);
    let yv = g.input(y.clone());
    let pred = gen.forward(&mut g, &gp, xv)?;

    let mut adv_d = 0.0;
    if w.w_adv > 0.0 {
        let mut dg = Graph::new();
        let dp = Bound::tracked(&disc.params, &mut dg);
        let fake = dg.input(g.value(pred).clone());
        let real = dg.input(y);
        let fl = disc.forward(&mut dg, &dp, fake)?;
        let rl = disc.forward(&mut dg, &dp, real)?;
        let dl = disc_loss(&mut dg, rl, fl)?;
        adv_d = dg.value(dl).item() as f64;
        if adv_d.is_finite() {
            let grads = dg.backward(dl)?;
            let grads = disc.params.collect_grads(&grads, dp.vars());
            d_opt.step(&mut disc.params, &grads, lr)?;
        }
    }

    let zero = g.input(Array::scalar(0.0));
    let term = |g: &mut Graph<f32>, wt: f64, f: &mut dyn FnMut(&mut Graph<f32>) -> Result<Var>| -> Result<Var> {
        if wt > 0.0 {
            f(g)
        } else {
            Ok(zero)
        }
    };
    let pixel = term(&mut g, w.w_pixel, &mut |g| pixel_loss(g, pred, yv))?;
    let freq = term(&mut g, w.w_freq, &mut |g| frequency_loss(g, pred, yv))?;
    let percep = term(&mut g, w.w_percep, &mut |g| {
        let ep = Bound::frozen(&ext.params, g);
        perceptual_loss(g, ext, &ep, pred, yv)
    })?;
    let adv = term(&mut g, w.w_adv, &mut |g| {
        let dp = Bound::frozen(&disc.params, g);
        let logits = disc.forward(g, &dp, pred)?;
        gen_adv_loss(g, logits)
    })?;
    let parts = LossParts {
        pixel,
        freq,
        percep,
        adv,
    };
    let total = total_loss(&mut g, &parts, w)?;
    let vals = [pixel, freq, percep, adv].map(|v| g.value(v).item() as f64);
    if g.value(total).all_finite() {
        let grads = g.backward(total)?;
        let grads = gen.params.collect_grads(&grads, gp.vars());
        g_opt.step(&mut gen.params, &grads, lr)?;
    }
    Ok([vals[0], vals[1], vals[2], vals[3], adv_d])
}

/// Trains a generator (and discriminator) on `train` cases, selecting the
/// epoch with the best validation PSNR.
pub fn train(cfg: &TrainConfig, train: &[DegradedCase], val: &[DegradedCase]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs at least one training and one validation case".into()));
    }
    let train_ids: BTreeSet<&str> = train.iter().map(|c| c.hr.case_id.as_str()).collect();
    if let Some(c) = val.iter().find(|c| train_ids.contains(c.hr.case_id.as_str())) {
        return Err(Error::Data(format!("case {} is in both training and validation sets", c.hr.case_id)));
    }
    let mut pairs = Vec::new();
    for c in train {
        pairs.extend(make_training_pairs(c, cfg.mode, &cfg.train_b_values)?);
    }
    let mut val_pairs = Vec::new();
    for c in val {
        val_pairs.extend(make_training_pairs(c, cfg.mode, &cfg.train_b_values)?);
    }
    if pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Data(format!("no DWIs at b-values {:?}", cfg.train_b_values)));
    }
    let val_subset = spaced(&val_pairs, cfg.val_max_pairs);

    let mut gen = Generator::<f32>::build(&cfg.generator, derive_seed(cfg.seed, 0x6e6))?;
    if cfg.generator.residual_output {
        gen.zero_output_layer();
    }
    let mut disc = Discriminator::<f32>::build(&cfg.discriminator, derive_seed(cfg.seed, 0xd15))?;
    let ext = FeatureExtractor::<f32>::new();
    let mut g_opt = AdamState::new(AdamConfig::default());
    let mut d_opt = AdamState::new(AdamConfig::default());

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Generator<f32>)> = None;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xe90c + epoch as u64)));
        let visit = cfg.max_pairs_per_epoch.map_or(order.len(), |m| m.min(order.len()));
        let mut means = LossMeans::default();
        for (b, idx) in order[..visit].chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingPair> = idx.iter().map(|&i| &pairs[i]).collect();
            debug_assert!(batch.iter().all(|p| train_ids.contains(p.case_id.as_str())));
            let (x, y) = batch_arrays(&batch)?;
            let v = train_batch(cfg, &mut gen, &mut disc, &ext, &mut g_opt, &mut d_opt, x, y, lr)?;
            check_finite(
                &[("pixel", v[0]), ("freq", v[1]), ("percep", v[2]), ("adv_g", v[3]), ("adv_d", v[4])],
                epoch,
                b,
            )?;
            means.add(v);
        }
        let (val_psnr, val_ssim) = score_pairs(&gen, &val_subset, cfg.batch_size)?;
        let m = means.means();
        log::info!(
            "{} epoch {epoch}: lr {lr:e} pixel {:.5e} val psnr {val_psnr:.3} ssim {val_ssim:.4}",
            cfg.mode,
            m[0]
        );
        log.push(EpochLog {
            epoch,
            lr,
            pixel: m[0],
            freq: m[1],
            percep: m[2],
            adv_g: m[3],
            adv_d: m[4],
            val_psnr,
            val_ssim,
        });
        if best.as_ref().is_none_or(|(_, p, _)| val_psnr > *p) {
            best = Some((epoch, val_psnr, gen.clone()));
        }
    }
    let (best_epoch, best_val_psnr, generator) = match best {
        Some(b) => b,
        None => (0, f64::NAN, gen),
    };
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint {
            config: cfg.clone(),
            generator,
            discriminator: Some(disc),
            best_epoch,
            best_val_psnr,
        },
        log,
    })
}

const INFER_BATCH: usize = 16;

/// Upsamples each low-resolution DWI onto the grid of `hr_b0`, runs the
/// generator slice by slice (with the b0 as second channel in proposed
/// mode) and reassembles the volumes.
pub fn infer_volume(
    ckpt: &ModelCheckpoint,
    lr: &LowResSeries,
    hr_b0: &DwiImage,
    geometry: Option<PhantomGeometry>,
    mode: Mode,
) -> Result<DwiCase> {
    if ckpt.config.mode != mode {
        return Err(Error::Config(format!(
            "checkpoint was trained in {} mode, {mode} requested",
            ckpt.config.mode
        )));
    }
    if hr_b0.b_value != 0.0 {
        return Err(Error::Data("reference image must have b = 0".into()));
    }
    let reference = DwiCase::new(lr.case_id.clone(), hr_b0.clone(), vec![hr_b0.clone()], geometry.clone())?;
    let baseline = bilinear_baseline(&lr.case_id, &lr.dwis, &reference)?;
    let [nz, ny, nx] = reference.dims();
    let gen = &ckpt.generator;
    let c = mode.in_channels();
    let mut dwis = Vec::with_capacity(baseline.dwis.len());
    for d in &baseline.dwis {
        let mut out = Vec::with_capacity(nz * ny * nx);
        for z0 in (0..nz).step_by(INFER_BATCH) {
            let zs = z0..(z0 + INFER_BATCH).min(nz);
            let mut input = Vec::with_capacity(zs.len() * c * ny * nx);
            for z in zs.clone() {
                input.extend(d.volume.slice(z).iter().map(|&v| v as f32));
                if mode == Mode::Proposed {
                    input.extend(hr_b0.volume.slice(z).iter().map(|&v| v as f32));
                }
            }
            let y = gen.predict(Array::from_vec(&[zs.len(), c, ny, nx], input)?)?;
            out.extend(y.data().iter().map(|&v| v as f64));
        }
        dwis.push(d.with_volume(d.volume.with_data(out)?));
    }
    DwiCase::new(lr.case_id.clone(), hr_b0.clone(), dwis, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("case-{i:02}")).collect()
    }

    #[test]
    fn lr_schedule_halves() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(19), 1e-4);
        assert_eq!(c.lr_at(20), 5e-5);
        assert_eq!(c.lr_at(40), 2.5e-5);
    }

    #[test]
    fn ten_cases_split_5_2_3() {
        let s = split_cases(&ids(10), [5, 2, 3], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (5, 2, 3));
        assert_eq!(s, split_cases(&ids(10), [5, 2, 3], 1).unwrap());
        assert!(matches!(split_cases(&ids(2), [5, 2, 3], 1), Err(Error::Config(_))));
    }

    #[test]
    fn mode_must_match_channels() {
        let mut c = TrainConfig::default();
        c.generator.in_channels = 1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(c.with_mode(Mode::Conventional).validate().is_ok());
    }
}
