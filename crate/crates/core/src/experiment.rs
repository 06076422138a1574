//! The end-to-end protocol: phantom cases, degradation, proposed and
//! conventional training with identical seeds, evaluation against the
//! bilinear baseline and the tensor-map comparison.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::{read_lr_series, write_degraded, DegradeConfig, DegradedCase};
use crate::dtfit::{compare_maps, compute_maps, fit_tensor, ErrorStats, MapComparison, Maps};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Aggregate, EvalOptions, Method, MetricsReport};
use crate::phantom::{add_case_noise, derive_seed, make_phantom_case, PhantomConfig};
use crate::srnet::{DiscriminatorConfig, GeneratorConfig};
use crate::train::{epoch_log_csv, infer_volume, split_cases, train, Mode, ModelCheckpoint, Split, TrainConfig};
use crate::volume::{normalize_case_with, read_case, DwiCase, NormalizeMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentManifest {
    pub phantom: PhantomConfig,
    pub degrade: DegradeConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub cases: usize,
    pub normalize_percentile: f64,
    pub normalize_mode: NormalizeMode,
}

impl Default for ExperimentManifest {
    /// Desk-scale protocol: 10 noisy 64×64×32 phantoms, a narrow generator
    /// and a shortened, subsampled schedule.
    fn default() -> Self {
        ExperimentManifest {
            phantom: PhantomConfig {
                noise_sigma: 0.02,
                seed: 1,
                ..Default::default()
            },
            degrade: DegradeConfig::default(),
            train: TrainConfig {
                seed: 1,
                lr: 1e-3,
                lr_halving_period_epochs: 4,
                epochs: 12,
                batch_size: 8,
                max_pairs_per_epoch: Some(192),
                val_max_pairs: Some(96),
                generator: GeneratorConfig {
                    base_width: 8,
                    channel_mults: vec![1, 2, 2],
                    ..Default::default()
                },
                discriminator: DiscriminatorConfig {
                    widths: vec![16, 32, 64, 64],
                },
                ..Default::default()
            },
            output_dir: PathBuf::from("runs/ablation"),
            cases: 10,
            normalize_percentile: 99.5,
            normalize_mode: NormalizeMode::PerCase,
        }
    }
}

impl ExperimentManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Uses `seed` for both the phantoms and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.phantom.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Checks every component configuration and their mutual consistency.
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.phantom.geometry().validate(self.phantom.dims)?;
        self.degrade.validate_for(self.phantom.dims)?;
        self.train.validate()?;
        self.train.with_mode(Mode::Conventional).validate()?;
        if !(self.normalize_percentile > 0.0 && self.normalize_percentile <= 100.0) {
            return Err(Error::Config(format!(
                "normalize_percentile must be in (0, 100], got {}",
                self.normalize_percentile
            )));
        }
        for b in self.train.train_b_values.iter().chain(&self.train.eval_b_values) {
            if !self.phantom.b_values.contains(b) {
                return Err(Error::Config(format!(
                    "b-value {b} is not simulated (phantom b-values {:?})",
                    self.phantom.b_values
                )));
            }
        }
        let levels = self.train.generator.channel_mults.len();
        let [_, ny, nx] = self.phantom.dims;
        if ny % (1 << levels) != 0 || nx % (1 << levels) != 0 {
            return Err(Error::Config(format!(
                "slice size {ny}x{nx} must be divisible by 2^{levels} for the generator"
            )));
        }
        split_cases(&case_ids(self.cases), self.train.split_ratio, self.train.seed)?;
        Ok(())
    }

    /// Phantom configuration of case `index`.
    pub fn case_phantom(&self, index: usize) -> PhantomConfig {
        PhantomConfig {
            seed: derive_seed(self.phantom.seed, 1 + index as u64),
            ..self.phantom.clone()
        }
    }
}

pub fn case_id(index: usize) -> String {
    format!("case-{index:02}")
}

pub fn case_ids(n: usize) -> Vec<String> {
    (0..n).map(case_id).collect()
}

/// Noisy, normalized high-resolution case `index`.
pub fn make_case(m: &ExperimentManifest, index: usize) -> Result<DwiCase> {
    let cfg = m.case_phantom(index);
    let (clean, _) = make_phantom_case(&cfg)?;
    let clean = DwiCase {
        case_id: case_id(index),
        ..clean
    };
    let noisy = if cfg.noise_sigma > 0.0 {
        add_case_noise(&clean, cfg.noise_sigma, derive_seed(cfg.seed, 0x401e))?
    } else {
        clean
    };
    normalize_case_with(&noisy, m.normalize_percentile, m.normalize_mode)
}

pub fn make_cases(m: &ExperimentManifest) -> Result<Vec<DwiCase>> {
    crate::par::map_range(m.cases, |i| make_case(m, i)).into_iter().collect()
}

pub fn degrade_cases(m: &ExperimentManifest, cases: &[DwiCase]) -> Result<Vec<DegradedCase>> {
    crate::par::map_range(cases.len(), |i| crate::degrade::degrade_case(&cases[i], &m.degrade))
        .into_iter()
        .collect()
}

/// Writes `case-XX/` directories under `dir`.
pub fn write_cases(cases: &[DwiCase], dir: impl AsRef<Path>) -> Result<()> {
    for c in cases {
        crate::volume::write_case(c, dir.as_ref().join(&c.case_id))?;
    }
    Ok(())
}

/// Reads every case directory under `dir`, sorted by name.
pub fn read_cases(dir: impl AsRef<Path>) -> Result<Vec<DwiCase>> {
    subdirs(dir.as_ref())?.iter().map(read_case).collect()
}

pub fn write_degraded_cases(cases: &[DegradedCase], dir: impl AsRef<Path>) -> Result<()> {
    for c in cases {
        write_degraded(c, dir.as_ref().join(&c.hr.case_id))?;
    }
    Ok(())
}

/// Reads `hr/`, `lr/` and `bilinear/` of every case directory under `dir`.
pub fn read_degraded_cases(dir: impl AsRef<Path>) -> Result<Vec<DegradedCase>> {
    subdirs(dir.as_ref())?
        .iter()
        .map(|d| {
            Ok(DegradedCase {
                hr: read_case(d.join("hr"))?,
                lr: read_lr_series(d.join("lr"))?,
                bilinear: read_case(d.join("bilinear"))?,
            })
        })
        .collect()
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no case directories", dir.display())));
    }
    Ok(out)
}

/// Refuses to write into a non-empty directory unless `force`.
pub fn prepare_output_dir(dir: impl AsRef<Path>, force: bool) -> Result<()> {
    let dir = dir.as_ref();
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn select<'a>(cases: &'a [DegradedCase], ids: &[String]) -> Vec<DegradedCase> {
    ids.iter()
        .filter_map(|id| cases.iter().find(|c: &&'a DegradedCase| &c.hr.case_id == id))
        .cloned()
        .collect()
}

/// Super-resolves every DWI of the test cases with `ckpt`.
pub fn infer_cases(ckpt: &ModelCheckpoint, cases: &[DegradedCase]) -> Result<Vec<DwiCase>> {
    cases
        .iter()
        .map(|c| infer_volume(ckpt, &c.lr, &c.hr.b0, c.hr.geometry.clone(), ckpt.config.mode))
        .collect()
}

/// Map errors summed over cases, weighted by voxel count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapErrors {
    pub md_mae: f64,
    pub fa_mae: f64,
    pub ha_mae_deg: f64,
    pub voxels: usize,
}

impl MapErrors {
    fn pool(parts: &[MapComparison]) -> Self {
        let pool = |f: fn(&MapComparison) -> ErrorStats| {
            let n: usize = parts.iter().map(|p| f(p).voxels).sum();
            let s: f64 = parts.iter().map(|p| f(p).mae * f(p).voxels as f64).sum();
            (s / n.max(1) as f64, n)
        };
        let (md_mae, voxels) = pool(|p| p.md);
        MapErrors {
            md_mae,
            fa_mae: pool(|p| p.fa).0,
            ha_mae_deg: pool(|p| p.ha_deg).0,
            voxels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMapRow {
    pub case_id: String,
    pub method: Method,
    pub comparison: MapComparison,
}

fn myocardium_maps(case: &DwiCase) -> Result<(Maps, Vec<bool>)> {
    let geom = case
        .geometry
        .as_ref()
        .ok_or_else(|| Error::Data(format!("case {} has no geometry", case.case_id)))?;
    let mask = geom.mask(case.dims());
    let field = fit_tensor(case, Some(&mask))?;
    Ok((compute_maps(&field, geom)?, mask))
}

/// MD/FA/HA maps of each method against maps fitted to the ground-truth
/// volumes, inside the myocardium.
pub fn compare_tensor_maps(gt: &[DwiCase], methods: &[(Method, &[DwiCase])]) -> Result<Vec<CaseMapRow>> {
    let refs: Vec<(Maps, Vec<bool>)> = gt.iter().map(myocardium_maps).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &(method, cases) in methods {
        for (c, (reference, mask)) in cases.iter().zip(&refs) {
            let (maps, _) = myocardium_maps(c)?;
            rows.push(CaseMapRow {
                case_id: c.case_id.clone(),
                method,
                comparison: compare_maps(&maps, reference, mask)?,
            });
        }
    }
    Ok(rows)
}

pub fn pooled_map_errors(rows: &[CaseMapRow], method: Method) -> MapErrors {
    let parts: Vec<MapComparison> = rows.iter().filter(|r| r.method == method).map(|r| r.comparison).collect();
    MapErrors::pool(&parts)
}

pub fn maps_csv(rows: &[CaseMapRow]) -> String {
    let mut s = String::from("case_id,method,md_mae,md_p95,fa_mae,fa_p95,ha_mae_deg,ha_p95_deg,voxels\n");
    let line = |id: &str, m: Method, c: &MapComparison| {
        format!(
            "{id},{m},{:.6e},{:.6e},{:.6},{:.6},{:.4},{:.4},{}\n",
            c.md.mae, c.md.p95, c.fa.mae, c.fa.p95, c.ha_deg.mae, c.ha_deg.p95, c.md.voxels
        )
    };
    for r in rows {
        s += &line(&r.case_id, r.method, &r.comparison);
    }
    for m in [Method::Bilinear, Method::Proposed, Method::Conventional] {
        if rows.iter().any(|r| r.method == m) {
            let e = pooled_map_errors(rows, m);
            s += &format!(
                "all,{m},{:.6e},,{:.6},,{:.4},,{}\n",
                e.md_mae, e.fa_mae, e.ha_mae_deg, e.voxels
            );
        }
    }
    s
}

/// Method ordering at the training b-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub b_value: f64,
    pub psnr: [f64; 3],
    pub ssim: [f64; 3],
    /// proposed > conventional > bilinear in mean PSNR.
    pub psnr_holds: bool,
    pub ssim_holds: bool,
    pub proposed_margin_db: f64,
}

fn ordering(report: &MetricsReport, b: f64) -> Result<Ordering> {
    let get = |m: Method| -> Result<&Aggregate> {
        report
            .get(m, b)
            .ok_or_else(|| Error::Data(format!("no {m} metrics at b = {b}")))
    };
    let (p, c, l) = (get(Method::Proposed)?, get(Method::Conventional)?, get(Method::Bilinear)?);
    Ok(Ordering {
        b_value: b,
        psnr: [p.psnr_mean, c.psnr_mean, l.psnr_mean],
        ssim: [p.ssim_mean, c.ssim_mean, l.ssim_mean],
        psnr_holds: p.psnr_mean > c.psnr_mean && c.psnr_mean > l.psnr_mean,
        ssim_holds: p.ssim_mean > c.ssim_mean && c.ssim_mean > l.ssim_mean,
        proposed_margin_db: p.psnr_mean - c.psnr_mean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub split: Split,
    pub best_epoch: [usize; 2],
    pub table1: Vec<Aggregate>,
    pub table2: Vec<Aggregate>,
    pub ordering: Ordering,
    pub maps: [(Method, MapErrors); 3],
}

impl AblationSummary {
    /// The exit criterion of `run-ablation`.
    pub fn ordering_holds(&self) -> bool {
        self.ordering.psnr_holds
    }
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub summary: AblationSummary,
    pub report: MetricsReport,
    pub map_rows: Vec<CaseMapRow>,
    pub proposed: ModelCheckpoint,
    pub conventional: ModelCheckpoint,
    /// Epoch logs as CSV, proposed then conventional.
    pub logs: [String; 2],
    pub test: Vec<DegradedCase>,
    /// Super-resolved test cases, proposed then conventional.
    pub super_resolved: [Vec<DwiCase>; 2],
}

/// Everything `run-ablation` computes, without touching the filesystem.
pub fn run_ablation(m: &ExperimentManifest) -> Result<AblationOutcome> {
    m.validate()?;
    log::info!("preparing {} cases", m.cases);
    let cases = degrade_cases(m, &make_cases(m)?)?;
    let split = split_cases(&case_ids(m.cases), m.train.split_ratio, m.train.seed)?;
    let (tr, va, te) = (select(&cases, &split.train), select(&cases, &split.val), select(&cases, &split.test));

    let mut logs = [String::new(), String::new()];
    let mut ckpts = Vec::new();
    for (k, mode) in [Mode::Proposed, Mode::Conventional].into_iter().enumerate() {
        log::info!("training {mode} model");
        let out = train(&m.train.with_mode(mode), &tr, &va)?;
        logs[k] = epoch_log_csv(&out.log);
        ckpts.push(out.checkpoint);
    }
    let conventional = ckpts.pop().unwrap();
    let proposed = ckpts.pop().unwrap();

    log::info!("evaluating {} test cases", te.len());
    let gt: Vec<DwiCase> = te.iter().map(|c| c.hr.clone()).collect();
    let bil: Vec<DwiCase> = te.iter().map(|c| c.bilinear.clone()).collect();
    let sr_p = infer_cases(&proposed, &te)?;
    let sr_c = infer_cases(&conventional, &te)?;
    let eval_b = &m.train.eval_b_values;
    let pick = |cs: &[DwiCase]| -> Result<Vec<DwiCase>> { cs.iter().map(|c| c.select_b_values(eval_b)).collect() };
    let report = evaluate(
        &pick(&gt)?,
        &[
            (Method::Bilinear, &pick(&bil)?),
            (Method::Proposed, &pick(&sr_p)?),
            (Method::Conventional, &pick(&sr_c)?),
        ],
        &EvalOptions::default(),
    )?;
    let train_b = m.train.train_b_values[0];
    let table1: Vec<Aggregate> = report.aggregates.iter().filter(|a| a.b_value == train_b).cloned().collect();
    let table2: Vec<Aggregate> = report
        .aggregates
        .iter()
        .filter(|a| a.b_value != train_b && matches!(a.method, Method::Proposed | Method::Bilinear))
        .cloned()
        .collect();

    log::info!("fitting tensor maps");
    let map_rows = compare_tensor_maps(
        &gt,
        &[(Method::Bilinear, &bil), (Method::Proposed, &sr_p), (Method::Conventional, &sr_c)],
    )?;
    let summary = AblationSummary {
        split,
        best_epoch: [proposed.best_epoch, conventional.best_epoch],
        ordering: ordering(&report, train_b)?,
        table1,
        table2,
        maps: [Method::Bilinear, Method::Proposed, Method::Conventional].map(|mm| (mm, pooled_map_errors(&map_rows, mm))),
    };
    Ok(AblationOutcome {
        summary,
        report,
        map_rows,
        proposed,
        conventional,
        logs,
        test: te,
        super_resolved: [sr_p, sr_c],
    })
}

fn table_csv(rows: &[Aggregate]) -> String {
    MetricsReport {
        rows: Vec::new(),
        aggregates: rows.to_vec(),
    }
    .table_csv(&rows.iter().map(|a| a.b_value).collect::<Vec<_>>())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the ablation and writes the report bundle into `m.output_dir`:
/// tables, per-slice metrics, map errors, training logs, checkpoints and
/// montages.
pub fn run_ablation_to_dir(m: &ExperimentManifest, force: bool) -> Result<AblationOutcome> {
    m.validate()?;
    let dir = m.output_dir.clone();
    prepare_output_dir(&dir, force)?;
    let outcome = run_ablation(m)?;
    let [sr_p, sr_c] = &outcome.super_resolved;
    write_text(&dir.join("manifest.json"), &m.to_json()?)?;
    write_text(&dir.join("table1.csv"), &table_csv(&outcome.summary.table1))?;
    write_text(&dir.join("table2.csv"), &table_csv(&outcome.summary.table2))?;
    write_text(&dir.join("slices.csv"), &outcome.report.rows_csv())?;
    write_text(&dir.join("maps.csv"), &maps_csv(&outcome.map_rows))?;
    write_text(&dir.join("train_proposed.csv"), &outcome.logs[0])?;
    write_text(&dir.join("train_conventional.csv"), &outcome.logs[1])?;
    write_text(
        &dir.join("summary.json"),
        &(serde_json::to_string_pretty(&outcome.summary)? + "\n"),
    )?;
    outcome.proposed.save(dir.join("proposed.rckp"))?;
    outcome.conventional.save(dir.join("conventional.rckp"))?;
    let mdir = dir.join("montages");
    fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
    for (i, c) in outcome.test.iter().enumerate() {
        for &b in &m.train.eval_b_values {
            let Some(d) = c.hr.dwis.iter().position(|x| x.b_value == b) else {
                continue;
            };
            let z = c.hr.dims()[0] / 2;
            let panels = [
                c.bilinear.dwis[d].volume.slice(z),
                c.hr.dwis[d].volume.slice(z),
                sr_p[i].dwis[d].volume.slice(z),
                sr_c[i].dwis[d].volume.slice(z),
            ];
            let [_, h, w] = c.hr.dims();
            let path = mdir.join(format!("{}_b{}_z{z:02}.png", c.hr.case_id, b.round() as i64));
            write_montage(&path, &panels, h, w, 3)?;
        }
    }
    Ok(outcome)
}

pub const MONTAGE_GAP: usize = 4;

/// Side-by-side grayscale panels, window [0, 1], each pixel repeated
/// `zoom` times, separated by white gaps.
pub fn montage_pixels(panels: &[&[f64]], h: usize, w: usize, zoom: usize) -> (Vec<u8>, usize, usize) {
    let width = panels.len() * w * zoom + (panels.len().saturating_sub(1)) * MONTAGE_GAP;
    let height = h * zoom;
    let mut px = vec![255u8; width * height];
    for (p, panel) in panels.iter().enumerate() {
        let x0 = p * (w * zoom + MONTAGE_GAP);
        for y in 0..height {
            for x in 0..w * zoom {
                let v = panel[(y / zoom) * w + x / zoom].clamp(0.0, 1.0);
                px[y * width + x0 + x] = (v * 255.0).round() as u8;
            }
        }
    }
    (px, width, height)
}

pub fn write_montage(path: &Path, panels: &[&[f64]], h: usize, w: usize, zoom: usize) -> Result<()> {
    let (px, width, height) = montage_pixels(panels, h, w, zoom);
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&px).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// A readable description of what `run-ablation` would do.
pub fn dry_run_plan(m: &ExperimentManifest) -> Result<String> {
    m.validate()?;
    let split = split_cases(&case_ids(m.cases), m.train.split_ratio, m.train.seed)?;
    let per_case = m.phantom.dims[0] * m.phantom.n_directions * m.train.train_b_values.len();
    Ok(format!(
        "{} cases of {:?} voxels, {} directions at b {:?}, noise sigma {}\n\
         split train {:?} / val {:?} / test {:?}\n\
         {} training pairs, {} epochs x {} pairs per model, lr {} halved every {} epochs\n\
         evaluation at b {:?}, output {}\n",
        m.cases,
        m.phantom.dims,
        m.phantom.n_directions,
        m.phantom.b_values,
        m.phantom.noise_sigma,
        split.train,
        split.val,
        split.test,
        per_case * split.train.len(),
        m.train.epochs,
        m.train.max_pairs_per_epoch.unwrap_or(per_case * split.train.len()),
        m.train.lr,
        m.train.lr_halving_period_epochs,
        m.train.eval_b_values,
        m.output_dir.display()
    ))
}
