//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Criteria 6 to 9 share two full desk-scale ablation runs.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refsr_core::degrade::{
    downsample_in_plane, downsample_through_plane, upsample_to_grid, DegradeConfig, SliceMode,
};
use refsr_core::experiment::{run_ablation_to_dir, AblationOutcome, ExperimentManifest};
use refsr_core::metrics::{self, Method, SsimParams};
use refsr_core::phantom::PhantomConfig;
use refsr_core::selfcheck::{self, CheckResult};
use refsr_core::volume::Volume;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn all(results: &[CheckResult]) -> (bool, String) {
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.to_string()).collect();
    (failed.is_empty(), failed.join("; "))
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut results = selfcheck::primitive_gradient_checks(3, 1).unwrap();
    results.push(selfcheck::discriminator_loss_check(2).unwrap());
    results.extend(selfcheck::full_graph_checks(3, 48).unwrap());
    let secs = start.elapsed().as_secs_f64();
    for r in &results {
        println!("    {r}");
    }
    let worst = results.iter().map(|r| r.value).fold(0.0, f64::max);
    let (ok, failed) = all(&results);
    verdict(
        ok && secs < 180.0,
        format!(
            "{} checks, worst max_rel_error {worst:.2e} < 1e-4, {secs:.0} s < 180 s {failed}",
            results.len()
        ),
    )
}

fn parseval() -> Verdict {
    let r = selfcheck::parseval_check(100, 11).unwrap();
    verdict(r.passed, format!("max relative gap {:.2e} < 1e-6 over 100 pairs", r.value))
}

fn random_volume(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Volume {
    let n = dims.iter().product();
    Volume::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), [1.5; 3], 1.0).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn degradation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [16, 32, 32];
    let block = DegradeConfig::default();
    let sliding = DegradeConfig {
        slice_mode: SliceMode::Sliding,
        ..Default::default()
    };
    type Op = Box<dyn Fn(&Volume) -> Volume>;
    let ops: Vec<(&str, Op)> = vec![
        ("block", Box::new(move |v| downsample_through_plane(v, &block).unwrap())),
        ("sliding", Box::new(move |v| downsample_through_plane(v, &sliding).unwrap())),
        ("in_plane", Box::new(|v| downsample_in_plane(v, 4).unwrap())),
        ("upsample", Box::new(move |v| upsample_to_grid(v, [dims[0] * 2, dims[1] * 2, dims[2] * 2]).unwrap())),
    ];
    let mut linearity = 0.0f64;
    let mut constant = 0.0f64;
    for (_, op) in &ops {
        for _ in 0..5 {
            let (v, w) = (random_volume(dims, &mut rng), random_volume(dims, &mut rng));
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mix = v.with_data(v.data().iter().zip(w.data()).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let lhs = op(&mix);
            let (ov, ow) = (op(&v), op(&w));
            let rhs: Vec<f64> = ov.data().iter().zip(ow.data()).map(|(x, y)| a * x + b * y).collect();
            linearity = linearity.max(max_abs_diff(lhs.data(), &rhs));
        }
        let c = Volume::filled(dims, 0.37, [1.5; 3]).unwrap();
        constant = constant.max(op(&c).data().iter().map(|x| (x - 0.37).abs()).fold(0.0, f64::max));
    }

    // affine exactness: x-ramp sampled at LR centres, and the interior of
    // its round trip
    let [nz, ny, nx] = dims;
    let ramp = Volume::new(
        dims,
        (0..nz * ny * nx).map(|i| (i % nx) as f64).collect(),
        [1.5; 3],
        1.0,
    )
    .unwrap();
    let lr = downsample_in_plane(&ramp, 4).unwrap();
    let mut affine = 0.0f64;
    for (k, v) in lr.data().iter().enumerate() {
        let i = k % (nx / 4);
        affine = affine.max((v - ((i as f64 + 0.5) * 4.0 - 0.5)).abs());
    }
    let back = upsample_to_grid(&lr, dims).unwrap();
    for z in 0..nz {
        for y in 0..ny {
            for x in 2..nx - 2 {
                affine = affine.max((back.get(z, y, x) - x as f64).abs());
            }
        }
    }

    let slice: Vec<f64> = (0..ny * nx).map(|_| rng.gen_range(0.0..1.0)).collect();
    let stack = Volume::new([4, ny, nx], slice.repeat(4), [1.5; 3], 1.0).unwrap();
    let avg = downsample_through_plane(&stack, &DegradeConfig::default()).unwrap();
    let identical = max_abs_diff(avg.data(), &slice);

    let ok = linearity < 1e-6 && constant < 1e-12 && affine < 1e-6 && identical <= 4.0 * f64::EPSILON;
    verdict(
        ok,
        format!(
            "linearity {linearity:.1e} < 1e-6, constant {constant:.1e}, affine {affine:.1e} < 1e-6, \
             4 identical slices {identical:.1e}"
        ),
    )
}

fn ssim_oracle() -> Verdict {
    let r = selfcheck::ssim_oracle_check(50, 4).unwrap();
    let a: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..32 * 32).map(|_| rng.gen()).collect()
    };
    let self_ssim = metrics::ssim(&a, &a, 32, 32, &SsimParams::default()).unwrap();
    let p = metrics::psnr_from_mse(0.01, 1.0);
    verdict(
        r.passed && self_ssim == 1.0 && p == 20.0,
        format!("fast vs oracle {:.1e} < 1e-8, ssim(x,x) = {self_ssim}, psnr(0.01) = {p}", r.value),
    )
}

fn tensor_round_trip() -> Verdict {
    let cfg = PhantomConfig::default();
    let (d_err, ha_err) = selfcheck::tensor_round_trip(&cfg).unwrap();
    let fa = selfcheck::isotropic_fa(&cfg).unwrap();
    let md = selfcheck::md_rotation_invariance(500, 12);
    verdict(
        d_err < 1e-9 && fa < 1e-9 && md < 1e-12 && ha_err < 1.0,
        format!("D rel err {d_err:.1e} < 1e-9, FA(iso) {fa:.1e}, MD rotation {md:.1e} < 1e-12, HA ramp {ha_err:.2e} deg < 1"),
    )
}

fn table1(o: &AblationOutcome) -> Verdict {
    let ord = &o.summary.ordering;
    let [p, c, b] = ord.psnr;
    let [sp, sc, sb] = ord.ssim;
    let ok = p >= c + 0.5 && c > b && sp > sc && sc > sb && (24.0..=29.0).contains(&b);
    verdict(
        ok,
        format!(
            "PSNR proposed {p:.3} / conventional {c:.3} / bilinear {b:.3} dB (margin {:.3} >= 0.5, bilinear in 24-29), \
             SSIM {sp:.4} / {sc:.4} / {sb:.4}",
            p - c
        ),
    )
}

fn table2(o: &AblationOutcome) -> Verdict {
    let get = |m| o.summary.table2.iter().find(|a| a.method == m && a.b_value == 1000.0);
    match (get(Method::Proposed), get(Method::Bilinear)) {
        (Some(p), Some(b)) => verdict(
            p.psnr_mean > b.psnr_mean && p.ssim_mean > b.ssim_mean,
            format!(
                "b=1000 PSNR {:.3} vs bilinear {:.3} dB, SSIM {:.4} vs {:.4}",
                p.psnr_mean, b.psnr_mean, p.ssim_mean, b.ssim_mean
            ),
        ),
        _ => verdict(false, "no b=1000 rows"),
    }
}

fn maps(o: &AblationOutcome) -> Verdict {
    let get = |m: Method| o.summary.maps.iter().find(|(k, _)| *k == m).unwrap().1;
    let (p, b) = (get(Method::Proposed), get(Method::Bilinear));
    verdict(
        p.md_mae < b.md_mae && p.fa_mae < b.fa_mae && p.ha_mae_deg < b.ha_mae_deg,
        format!(
            "MD {:.3e} < {:.3e}, FA {:.4} < {:.4}, HA {:.2} < {:.2} deg ({} voxels)",
            p.md_mae, b.md_mae, p.fa_mae, b.fa_mae, p.ha_mae_deg, b.ha_mae_deg, p.voxels
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism(a: &Path, b: &Path) -> Verdict {
    let (x, y) = (csv_files(a), csv_files(b));
    let differing: Vec<&str> = x
        .iter()
        .zip(&y)
        .filter(|(p, q)| p != q)
        .map(|(p, _)| p.0.as_str())
        .collect();
    verdict(
        x.len() == y.len() && x.len() >= 6 && differing.is_empty(),
        format!("{} CSV files compared, differing: {differing:?}", x.len()),
    )
}

#[test]
fn acceptance_criteria() {
    let mut lines: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, v: Verdict| {
        println!("criterion {n} {name}: {} {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        lines.push((n, name, v));
    };
    record(1, "gradient correctness", gradients());
    record(2, "Parseval pin", parseval());
    record(3, "degradation linearity and identities", degradation());
    record(4, "SSIM oracle equivalence", ssim_oracle());
    record(5, "tensor round trip", tensor_round_trip());

    let tmp = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let m = ExperimentManifest {
            output_dir: tmp.path().join(sub),
            ..Default::default()
        };
        let start = Instant::now();
        let o = run_ablation_to_dir(&m, false).unwrap();
        println!("    ablation run {sub}: {:.0} s", start.elapsed().as_secs_f64());
        o
    };
    let first = run("a");
    record(6, "b=500 ordering", table1(&first));
    record(7, "unseen b=1000 generalization", table2(&first));
    record(8, "downstream map improvement", maps(&first));
    run("b");
    record(9, "determinism", determinism(&tmp.path().join("a"), &tmp.path().join("b")));

    println!("acceptance summary:");
    for (n, name, v) in &lines {
        println!("  criterion {n} {name}: {}", if v.passed { "PASS" } else { "FAIL" });
    }
    let failed: Vec<usize> = lines.iter().filter(|l| !l.2.passed).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
