//! Built-in numerical self-tests: finite-difference gradient checks of
//! every primitive and of the full generator loss, the Parseval pin, the
//! SSIM oracle comparison and the tensor-fit round trip.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dtfit::{self, circular_ha_error, fit_tensor, mean_diffusivity, symmetric_eigen};
use crate::error::Result;
use crate::metrics::{self, SsimParams};
use crate::phantom::{derive_seed, make_phantom_case, PhantomConfig};
use crate::srnet::{
    frequency_loss, gen_adv_loss, perceptual_loss, pixel_loss, total_loss, Bound, Discriminator,
    DiscriminatorConfig, FeatureExtractor, Generator, GeneratorConfig, LossParts, LossWeights,
};
use crate::substrate::{gradient_check, Array, Fault, GradCheckOptions, GradCheckReport, Graph, Var};

pub const GRAD_TOL: f64 = 1e-4;
pub const PARSEVAL_TOL: f64 = 1e-6;
pub const SSIM_ORACLE_TOL: f64 = 1e-8;
pub const FIT_TOL: f64 = 1e-9;
pub const HA_TOL_DEG: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn below(name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: value < tolerance,
            value,
            tolerance,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} {:>10.3e} (tol {:.0e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.detail
        )
    }
}

/// One line per check.
pub fn render_matrix(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    s
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array<f64> {
    let n = shape.iter().product();
    Array::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn off_origin(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen() { v } else { -v }
        })
        .collect();
    Array::from_vec(shape, data).unwrap()
}

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Gradient check of `op` contracted with a fixed random weight array, so
/// that every output element contributes with a distinct coefficient.
fn check_contracted(
    inputs: &[Array<f64>],
    op: &OpFn,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.input(a.clone())).collect();
    let out = op(&mut g, &vars)?;
    let shape = g.shape(out).to_vec();
    let weights = uniform(&shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    gradient_check(inputs, opts, |g, v| {
        let y = op(g, v)?;
        let w = g.input(weights.clone());
        let p = g.mul(y, w)?;
        g.sum(p)
    })
}

struct Case {
    inputs: Vec<Array<f64>>,
    op: OpFn,
}

/// Random instance of primitive `name` drawn from `rng`.
fn primitive_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(3..=7);
    let w = rng.gen_range(3..=7);
    let nchw = [n, c, h, w];
    let unary = |f: fn(&mut Graph<f64>, Var) -> Result<Var>| -> OpFn { Box::new(move |g, v| f(g, v[0])) };
    let binary = |f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>| -> OpFn { Box::new(move |g, v| f(g, v[0], v[1])) };
    match name {
        "conv2d_stride1" | "conv2d_stride2" => {
            let stride = if name.ends_with('1') { 1 } else { 2 };
            let k = if stride == 1 { [1, 3][rng.gen_range(0..2)] } else { 3 };
            let o = rng.gen_range(1..=3);
            let x = uniform(&nchw, -1.0, 1.0, rng);
            let wt = uniform(&[o, c, k, k], -1.0, 1.0, rng);
            let b = uniform(&[o], -1.0, 1.0, rng);
            Case {
                inputs: vec![x, wt, b],
                op: Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, k / 2)),
            }
        }
        "upsample2x" => Case {
            inputs: vec![uniform(&nchw, -1.0, 1.0, rng)],
            op: unary(Graph::upsample2x),
        },
        "matmul" => {
            let (b, m, k, nn) = (n, rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
            let (ta, tb) = (rng.gen(), rng.gen());
            let a_shape = if ta { [b, k, m] } else { [b, m, k] };
            let b_shape = if tb { [b, nn, k] } else { [b, k, nn] };
            Case {
                inputs: vec![uniform(&a_shape, -1.0, 1.0, rng), uniform(&b_shape, -1.0, 1.0, rng)],
                op: Box::new(move |g, v| g.matmul(v[0], v[1], ta, tb)),
            }
        }
        "softmax" => Case {
            inputs: vec![uniform(&[n, h, w], -2.0, 2.0, rng)],
            op: unary(Graph::softmax),
        },
        "group_norm" => {
            let groups = rng.gen_range(1..=2);
            let ch = groups * rng.gen_range(2..=3);
            Case {
                inputs: vec![
                    uniform(&[n, ch, h, w], -1.0, 1.0, rng),
                    uniform(&[ch], 0.5, 1.5, rng),
                    uniform(&[ch], -0.5, 0.5, rng),
                ],
                op: Box::new(move |g, v| g.group_norm(v[0], v[1], v[2], groups)),
            }
        }
        "add" | "sub" | "mul" => {
            let f = match name {
                "add" => Graph::add,
                "sub" => Graph::sub,
                _ => Graph::mul,
            };
            Case {
                inputs: vec![uniform(&nchw, -1.0, 1.0, rng), uniform(&nchw, -1.0, 1.0, rng)],
                op: binary(f),
            }
        }
        "leaky_relu" => Case {
            inputs: vec![off_origin(&nchw, rng)],
            op: Box::new(|g, v| g.leaky_relu(v[0], 0.2)),
        },
        "silu" | "sigmoid" | "softplus" | "square" | "neg" => {
            let f = match name {
                "silu" => Graph::silu,
                "sigmoid" => Graph::sigmoid,
                "softplus" => Graph::softplus,
                "square" => Graph::square,
                _ => Graph::neg,
            };
            Case {
                inputs: vec![uniform(&nchw, -3.0, 3.0, rng)],
                op: unary(f),
            }
        }
        "scale" => {
            let s = rng.gen_range(-2.0..2.0);
            Case {
                inputs: vec![uniform(&nchw, -1.0, 1.0, rng)],
                op: Box::new(move |g, v| g.scale(v[0], s)),
            }
        }
        "mean" | "sum" | "mean_spatial" => {
            let f = match name {
                "mean" => Graph::mean,
                "sum" => Graph::sum,
                _ => Graph::mean_spatial,
            };
            Case {
                inputs: vec![uniform(&nchw, -1.0, 1.0, rng)],
                op: unary(f),
            }
        }
        "concat" => {
            let parts = rng.gen_range(2..=3);
            let inputs = (0..parts)
                .map(|_| uniform(&[n, rng.gen_range(1..=3), h, w], -1.0, 1.0, rng))
                .collect();
            Case {
                inputs,
                op: Box::new(|g, v| g.concat(v)),
            }
        }
        "select_channels" => {
            let ch = c + 2;
            let start = rng.gen_range(0..ch);
            let len = rng.gen_range(1..=ch - start);
            Case {
                inputs: vec![uniform(&[n, ch, h, w], -1.0, 1.0, rng)],
                op: Box::new(move |g, v| g.select_channels(v[0], start, len)),
            }
        }
        "reshape" => Case {
            inputs: vec![uniform(&nchw, -1.0, 1.0, rng)],
            op: Box::new(move |g, v| g.reshape(v[0], &[n * c, h * w])),
        },
        "dft2" => {
            // one power-of-two plane size (FFT path) and odd sizes (direct sum)
            let hh = [4, 8, 5, 6][rng.gen_range(0..4)];
            let ww = [4, 8, 3, 7][rng.gen_range(0..4)];
            let scale = 1.0 / ((hh * ww) as f64).sqrt();
            Case {
                inputs: vec![uniform(&[n, c, hh, ww], -1.0, 1.0, rng)],
                op: Box::new(move |g, v| g.dft2(v[0], scale)),
            }
        }
        other => panic!("no self-check for primitive {other}"),
    }
}

pub const PRIMITIVES: [&str; 23] = [
    "conv2d_stride1",
    "conv2d_stride2",
    "upsample2x",
    "matmul",
    "softmax",
    "group_norm",
    "add",
    "sub",
    "mul",
    "leaky_relu",
    "silu",
    "sigmoid",
    "softplus",
    "square",
    "neg",
    "scale",
    "mean",
    "sum",
    "mean_spatial",
    "concat",
    "select_channels",
    "reshape",
    "dft2",
];

/// Gradient check of one primitive on `shapes` random instances; the
/// result carries the worst error over all instances.
pub fn check_primitive(name: &str, shapes: usize, seed: u64, fault: Option<Fault>) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions {
        fault,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut seen = Vec::new();
    for i in 0..shapes {
        let case = primitive_case(name, &mut rng);
        let report = check_contracted(&case.inputs, &case.op, derive_seed(seed, i as u64), &opts)?;
        worst = worst.max(report.max_rel_error);
        seen.push(
            case.inputs
                .iter()
                .map(|a| format!("{:?}", a.shape()))
                .collect::<Vec<_>>()
                .join("+"),
        );
    }
    Ok(CheckResult::below(format!("grad/{name}"), worst, GRAD_TOL, seen.join(" ")))
}

pub fn primitive_gradient_checks(shapes: usize, seed: u64) -> Result<Vec<CheckResult>> {
    PRIMITIVES
        .iter()
        .enumerate()
        .map(|(i, name)| check_primitive(name, shapes, derive_seed(seed, 100 + i as u64), None))
        .collect()
}

/// The perturbed convolution backward must be caught by the gradient check.
pub fn mutation_check(seed: u64) -> Result<CheckResult> {
    let r = check_primitive("conv2d_stride1", 1, seed, Some(Fault::ConvWeightGrad))?;
    Ok(CheckResult {
        name: "mutation/conv_weight_grad".into(),
        passed: !r.passed,
        value: r.value,
        tolerance: GRAD_TOL,
        detail: "perturbed backward must exceed tolerance".into(),
    })
}

/// Small generator used by the end-to-end gradient check.
pub fn check_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        base_width: 4,
        channel_mults: vec![1, 2],
        attention_at_depth: BTreeSet::from([1]),
        attention_heads: 2,
        residual_output: true,
        in_channels: 2,
    }
}

/// Gradient check of the four-term generator loss with respect to the
/// 2-channel input and every generator parameter, for input shape
/// `[n, 2, h, w]`. The target sits within ±0.1 of the initial prediction,
/// the regime the loss is evaluated in during training. `max_per_input`
/// subsamples elements for larger shapes.
pub fn full_graph_check(shape: [usize; 4], seed: u64, max_per_input: Option<usize>) -> Result<CheckResult> {
    let start = Instant::now();
    let gen = Generator::<f64>::build(&check_generator_config(), derive_seed(seed, 1))?;
    let disc = Discriminator::<f64>::build(&DiscriminatorConfig { widths: vec![4, 8] }, derive_seed(seed, 2))?;
    let ext = FeatureExtractor::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let x = uniform(&shape, 0.0, 1.0, &mut rng);
    let base = gen.predict(x.clone())?;
    let offset = uniform(base.shape(), -0.1, 0.1, &mut rng);
    let y = Array::from_vec(
        base.shape(),
        base.data().iter().zip(offset.data()).map(|(a, b)| a + b).collect(),
    )?;
    let mut inputs = vec![x];
    inputs.extend(gen.params.values().iter().cloned());
    let weights = LossWeights::default();
    let opts = GradCheckOptions {
        max_per_input,
        ..Default::default()
    };
    let report = gradient_check(&inputs, &opts, |g, v| {
        let p = Bound::from_vars(&gen.params, v[1..].to_vec());
        let dp = Bound::frozen(&disc.params, g);
        let ep = Bound::frozen(&ext.params, g);
        let gt = g.input(y.clone());
        let pred = gen.forward(g, &p, v[0])?;
        let pixel = pixel_loss(g, pred, gt)?;
        let freq = frequency_loss(g, pred, gt)?;
        let percep = perceptual_loss(g, &ext, &ep, pred, gt)?;
        let logits = disc.forward(g, &dp, pred)?;
        let adv = gen_adv_loss(g, logits)?;
        total_loss(g, &LossParts { pixel, freq, percep, adv }, &weights)
    })?;
    let worst = match report.worst.0 {
        0 => "input".to_string(),
        i => gen.params.names()[i - 1].clone(),
    };
    Ok(CheckResult::below(
        format!("grad/generator_loss {}x{}x{}", shape[0], shape[2], shape[3]),
        report.max_rel_error,
        GRAD_TOL,
        format!(
            "{} elements, worst at {worst}, {:.1}s",
            report.checked,
            start.elapsed().as_secs_f64()
        ),
    ))
}

/// The full-graph check on three input shapes: the 16×16 case exhaustively,
/// a batch of two and a non-square plane subsampled.
pub fn full_graph_checks(seed: u64, sample: usize) -> Result<Vec<CheckResult>> {
    Ok(vec![
        full_graph_check([1, 2, 16, 16], seed, None)?,
        full_graph_check([2, 2, 16, 16], derive_seed(seed, 10), Some(sample))?,
        full_graph_check([1, 2, 16, 32], derive_seed(seed, 11), Some(sample))?,
    ])
}

/// Gradient check of the discriminator loss with respect to the
/// discriminator parameters and both inputs.
pub fn discriminator_loss_check(seed: u64) -> Result<CheckResult> {
    let disc = Discriminator::<f64>::build(&DiscriminatorConfig { widths: vec![4, 8, 8] }, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut inputs = vec![
        uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng),
        uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng),
    ];
    inputs.extend(disc.params.values().iter().cloned());
    let report = gradient_check(&inputs, &GradCheckOptions::default(), |g, v| {
        let p = Bound::from_vars(&disc.params, v[2..].to_vec());
        let real = disc.forward(g, &p, v[0])?;
        let fake = disc.forward(g, &p, v[1])?;
        crate::srnet::disc_loss(g, real, fake)
    })?;
    Ok(CheckResult::below(
        "grad/discriminator_loss",
        report.max_rel_error,
        GRAD_TOL,
        format!("{} elements", report.checked),
    ))
}

/// `frequency_loss == pixel_loss` and the unnormalized Parseval identity on
/// `pairs` random 64×64 slice pairs.
pub fn parseval_check(pairs: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = uniform(&[1, 1, 64, 64], 0.0, 1.0, &mut rng);
        let b = uniform(&[1, 1, 64, 64], 0.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.input(a.clone()), g.input(b));
        let p = pixel_loss(&mut g, va, vb)?;
        let f = frequency_loss(&mut g, va, vb)?;
        let (p, f) = (g.value(p).item(), g.value(f).item());
        worst = worst.max((p - f).abs() / p);
        let spec = g.dft2(va, 1.0)?;
        let energy: f64 = g.value(spec).data().iter().map(|v| v * v).sum();
        let direct: f64 = a.data().iter().map(|v| v * v).sum::<f64>() * 64.0 * 64.0;
        worst = worst.max((energy - direct).abs() / direct);
    }
    Ok(CheckResult::below(
        "parseval",
        worst,
        PARSEVAL_TOL,
        format!("{pairs} random 64x64 pairs"),
    ))
}

/// Separable SSIM against the brute-force per-window oracle.
pub fn ssim_oracle_check(pairs: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = SsimParams::default();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a: Vec<f64> = (0..32 * 32).map(|_| rng.gen()).collect();
        let b: Vec<f64> = a.iter().map(|v| (v + rng.gen_range(-0.3..0.3f64)).clamp(0.0, 1.0)).collect();
        let fast = metrics::ssim(&a, &b, 32, 32, &p)?;
        let slow = metrics::reference::ssim(&a, &b, 32, 32, &p)?;
        worst = worst.max((fast - slow).abs());
    }
    Ok(CheckResult::below(
        "ssim_oracle",
        worst,
        SSIM_ORACLE_TOL,
        format!("{pairs} random 32x32 pairs"),
    ))
}

fn frobenius(m: &[[f64; 3]; 3]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Noiseless phantom → tensor fit: worst relative Frobenius error and worst
/// helix-angle deviation from the configured transmural ramp.
pub fn tensor_round_trip(cfg: &PhantomConfig) -> Result<(f64, f64)> {
    let (case, truth) = make_phantom_case(cfg)?;
    let geom = case.geometry.clone().expect("phantom has geometry");
    let fitted = fit_tensor(&case, Some(&truth.mask))?;
    let ha = dtfit::ha(&fitted, &geom)?;
    let hmask = dtfit::ha_mask(&fitted, &geom);
    let [_, ny, nx] = cfg.dims;
    let (mut d_err, mut ha_err) = (0.0f64, 0.0f64);
    for i in 0..truth.len() {
        if !truth.mask[i] {
            continue;
        }
        let (t, f) = (truth.tensor(i), fitted.tensor(i));
        let mut diff = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                diff[r][c] = f[r][c] - t[r][c];
            }
        }
        d_err = d_err.max(frobenius(&diff) / frobenius(&t));
        if hmask[i] {
            let (z, y, x) = (i / (ny * nx), (i / nx) % ny, i % nx);
            let depth = geom.depth(z, y, x).expect("masked voxel is in the wall");
            let want = cfg.ha_endo_deg + (cfg.ha_epi_deg - cfg.ha_endo_deg) * depth;
            ha_err = ha_err.max(circular_ha_error(ha.data()[i], want));
        }
    }
    Ok((d_err, ha_err))
}

/// Largest fitted FA over an isotropic phantom.
pub fn isotropic_fa(cfg: &PhantomConfig) -> Result<f64> {
    let l = cfg.eigenvalues_mm2_per_s[1];
    let iso = PhantomConfig {
        eigenvalues_mm2_per_s: [l; 3],
        ..cfg.clone()
    };
    let (case, truth) = make_phantom_case(&iso)?;
    let fitted = fit_tensor(&case, Some(&truth.mask))?;
    let fa = dtfit::fa(&fitted)?;
    Ok(fa
        .data()
        .iter()
        .zip(&fitted.mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(0.0, f64::max))
}

/// Random rotation matrix from a normalized random quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = [0.0; 4];
    loop {
        for v in &mut q {
            *v = rng.gen_range(-1.0..1.0);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-3 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `R D Rᵀ`.
pub fn rotate(d: &[[f64; 3]; 3], r: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    out[i][j] += r[i][k] * d[k][l] * r[j][l];
                }
            }
        }
    }
    out
}

/// Worst relative change of MD under random rotations of random SPD tensors.
pub fn md_rotation_invariance(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let eig = [rng.gen_range(1e-4..3e-3), rng.gen_range(1e-4..3e-3), rng.gen_range(1e-4..3e-3)];
        let base = rotate(&[[eig[0], 0.0, 0.0], [0.0, eig[1], 0.0], [0.0, 0.0, eig[2]]], &random_rotation(&mut rng));
        let rotated = rotate(&base, &random_rotation(&mut rng));
        let (a, b) = (mean_diffusivity(&base), mean_diffusivity(&rotated));
        worst = worst.max((a - b).abs() / a);
        let (ea, eb) = (symmetric_eigen(&base).0, symmetric_eigen(&rotated).0);
        let fa_a = dtfit::fractional_anisotropy_of(ea);
        let fa_b = dtfit::fractional_anisotropy_of(eb);
        worst = worst.max((fa_a - fa_b).abs());
    }
    worst
}

/// Phantom used by the fit checks: the default grid shrunk in z.
pub fn fit_check_phantom() -> PhantomConfig {
    PhantomConfig {
        dims: [8, 64, 64],
        seed: 7,
        ..Default::default()
    }
}

pub fn tensor_checks() -> Result<Vec<CheckResult>> {
    let cfg = fit_check_phantom();
    let (d_err, ha_err) = tensor_round_trip(&cfg)?;
    Ok(vec![
        CheckResult::below("fit/tensor_round_trip", d_err, FIT_TOL, "noiseless phantom, rel. Frobenius"),
        CheckResult::below("fit/helix_ramp_deg", ha_err, HA_TOL_DEG, "+60 to -60 transmural"),
        CheckResult::below("fit/isotropic_fa", isotropic_fa(&cfg)?, FIT_TOL, "isotropic phantom"),
        CheckResult::below("fit/md_rotation", md_rotation_invariance(200, 5), 1e-12, "200 random rotations"),
    ])
}

/// Everything `check` runs. `sample` bounds the elements per tensor for the
/// two larger full-graph shapes.
pub fn run_all(seed: u64, sample: usize) -> Result<Vec<CheckResult>> {
    let mut out = primitive_gradient_checks(3, seed)?;
    out.push(discriminator_loss_check(derive_seed(seed, 4))?);
    out.extend(full_graph_checks(seed, sample)?);
    out.push(mutation_check(derive_seed(seed, 5))?);
    out.push(parseval_check(100, derive_seed(seed, 6))?);
    out.push(ssim_oracle_check(50, derive_seed(seed, 7))?);
    out.push(CheckResult::below(
        "ssim_identity",
        {
            let a: Vec<f64> = (0..32 * 32).map(|i| (i % 17) as f64 / 16.0).collect();
            (metrics::ssim(&a, &a, 32, 32, &SsimParams::default())? - 1.0).abs()
        },
        f64::EPSILON,
        "ssim(x, x) = 1",
    ));
    out.push(CheckResult::below(
        "psnr_closed_form",
        (metrics::psnr_from_mse(0.01, 1.0) - 20.0).abs(),
        f64::EPSILON,
        "mse 0.01 -> 20 dB",
    ));
    out.extend(tensor_checks()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_primitives_pass() {
        for name in ["add", "softmax", "matmul", "group_norm", "dft2"] {
            let r = check_primitive(name, 3, 1, None).unwrap();
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn mutation_is_detected() {
        assert!(mutation_check(3).unwrap().passed);
    }

    #[test]
    fn matrix_counts_failures() {
        let rs = [
            CheckResult::below("a", 0.5, 1.0, ""),
            CheckResult::below("b", 2.0, 1.0, ""),
        ];
        let m = render_matrix(&rs);
        assert!(m.starts_with("PASS a"));
        assert!(m.contains("FAIL b"));
        assert!(m.ends_with("2 checks, 1 failed\n"));
    }
}
