//! Per-slice PSNR and SSIM, with mean / population-std aggregation per
//! method and b-value.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::par;
use crate::volume::DwiCase;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

/// `10·log10(range² / mse)`; `+inf` when the slices are identical.
pub fn psnr(pred: &[f64], gt: &[f64], data_range: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        shape_err!("psnr: {} vs {} elements", pred.len(), gt.len());
    }
    if pred.is_empty() {
        shape_err!("psnr: empty slice");
    }
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data range must be > 0, got {data_range}")));
    }
    let mse = pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    Ok(psnr_from_mse(mse, data_range))
}

pub fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    }
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn check_ssim_shape(pred: &[f64], gt: &[f64], h: usize, w: usize) -> Result<()> {
    if pred.len() != h * w || gt.len() != h * w {
        shape_err!("ssim: expected {h}x{w} slices, got {} and {} elements", pred.len(), gt.len());
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        shape_err!("ssim: slice {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window");
    }
    Ok(())
}

/// Valid-region separable Gaussian filter of an `h × w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let r = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&r[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Local SSIM map over the valid region, `(h − 10) × (w − 10)`.
pub fn ssim_map(pred: &[f64], gt: &[f64], h: usize, w: usize, p: &SsimParams) -> Result<Vec<f64>> {
    check_ssim_shape(pred, gt, h, w)?;
    let taps = gaussian_window();
    let xx: Vec<f64> = pred.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = gt.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = pred.iter().zip(gt).map(|(a, b)| a * b).collect();
    let mx = filter_valid(pred, h, w, &taps);
    let my = filter_valid(gt, h, w, &taps);
    let sxx = filter_valid(&xx, h, w, &taps);
    let syy = filter_valid(&yy, h, w, &taps);
    let sxy = filter_valid(&xy, h, w, &taps);
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    Ok((0..mx.len())
        .map(|i| ssim_formula(mx[i], my[i], sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i], sxy[i] - mx[i] * my[i], c1, c2))
        .collect())
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    let num = (2.0 * (mx * my) + c1) * (2.0 * cxy + c2);
    let den = (mx * mx + my * my + c1) * (vx + vy + c2);
    if num == den {
        1.0
    } else {
        num / den
    }
}

/// Mean of the valid-region SSIM map.
pub fn ssim(pred: &[f64], gt: &[f64], h: usize, w: usize, p: &SsimParams) -> Result<f64> {
    let m = ssim_map(pred, gt, h, w, p)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Direct per-window SSIM with 2D weights and two-pass local moments.
pub mod reference {
    use super::*;

    pub fn ssim(pred: &[f64], gt: &[f64], h: usize, w: usize, p: &SsimParams) -> Result<f64> {
        check_ssim_shape(pred, gt, h, w)?;
        let g = gaussian_window();
        let c1 = (p.k1 * p.data_range).powi(2);
        let c2 = (p.k2 * p.data_range).powi(2);
        let mut total = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let mut wsum = 0.0;
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = g[i] * g[j];
                        let k = (y0 + i) * w + x0 + j;
                        wsum += wt;
                        mx += wt * pred[k];
                        my += wt * gt[k];
                    }
                }
                mx /= wsum;
                my /= wsum;
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = g[i] * g[j] / wsum;
                        let k = (y0 + i) * w + x0 + j;
                        let (dx, dy) = (pred[k] - mx, gt[k] - my);
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cxy += wt * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        Ok(total / count as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bilinear,
    Proposed,
    Conventional,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bilinear => "bilinear",
            Method::Proposed => "proposed",
            Method::Conventional => "conventional",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub case_id: String,
    pub slice_index: usize,
    pub b_value: f64,
    pub direction_index: usize,
    pub method: Method,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub b_value: f64,
    pub slices: usize,
    /// Slices left out of the PSNR statistics because they were identical
    /// to the ground truth.
    pub psnr_excluded: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<SliceMetrics>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct EvalOptions {
    pub ssim: SsimParams,
    /// Restrict both metrics to myocardium voxels of the case geometry.
    pub myocardium_only: bool,
}


/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// PSNR and SSIM of every slice of every DWI of `pred` against `gt`. With
/// `mask`, PSNR uses masked voxels only and SSIM averages the windows whose
/// centre is masked; slices without any masked voxel are skipped.
fn slice_metrics(pred: &DwiCase, gt: &DwiCase, method: Method, opts: &EvalOptions) -> Result<Vec<SliceMetrics>> {
    if pred.case_id != gt.case_id {
        return Err(Error::Data(format!("case mismatch: {} vs {}", pred.case_id, gt.case_id)));
    }
    if pred.dims() != gt.dims() {
        shape_err!("case {}: grid {:?} vs {:?}", gt.case_id, pred.dims(), gt.dims());
    }
    if pred.dwis.len() != gt.dwis.len() {
        return Err(Error::Data(format!(
            "case {}: {} vs {} DWIs",
            gt.case_id,
            pred.dwis.len(),
            gt.dwis.len()
        )));
    }
    for (a, b) in pred.dwis.iter().zip(&gt.dwis) {
        if a.b_value != b.b_value || a.direction != b.direction {
            return Err(Error::Data(format!("case {}: DWI series do not correspond", gt.case_id)));
        }
    }
    let [nz, ny, nx] = gt.dims();
    let mask = if opts.myocardium_only {
        let geom = gt
            .geometry
            .as_ref()
            .ok_or_else(|| Error::Data(format!("case {}: masked metrics need a geometry", gt.case_id)))?;
        Some(geom.mask([nz, ny, nx]))
    } else {
        None
    };
    let jobs = gt.dwis.len() * nz;
    let out = par::map_range(jobs, |job| -> Result<Option<SliceMetrics>> {
        let (d, z) = (job / nz, job % nz);
        let p = pred.dwis[d].volume.slice(z);
        let g = gt.dwis[d].volume.slice(z);
        let (psnr_db, s) = match &mask {
            None => (psnr(p, g, opts.ssim.data_range)?, ssim(p, g, ny, nx, &opts.ssim)?),
            Some(m) => {
                let m = &m[z * ny * nx..(z + 1) * ny * nx];
                match masked_metrics(p, g, m, ny, nx, &opts.ssim)? {
                    Some(v) => v,
                    None => return Ok(None),
                }
            }
        };
        Ok(Some(SliceMetrics {
            case_id: gt.case_id.clone(),
            slice_index: z,
            b_value: gt.dwis[d].b_value,
            direction_index: d,
            method,
            psnr_db,
            ssim: s,
        }))
    });
    out.into_iter().filter_map(|r| r.transpose()).collect()
}

fn masked_metrics(p: &[f64], g: &[f64], m: &[bool], h: usize, w: usize, sp: &SsimParams) -> Result<Option<(f64, f64)>> {
    let n = m.iter().filter(|&&v| v).count();
    if n == 0 {
        return Ok(None);
    }
    let mse = (0..p.len()).filter(|&i| m[i]).map(|i| (p[i] - g[i]).powi(2)).sum::<f64>() / n as f64;
    let map = ssim_map(p, g, h, w, sp)?;
    let half = SSIM_WINDOW / 2;
    let ow = w - SSIM_WINDOW + 1;
    let vals: Vec<f64> = map
        .iter()
        .enumerate()
        .filter(|(i, _)| m[(i / ow + half) * w + i % ow + half])
        .map(|(_, &v)| v)
        .collect();
    if vals.is_empty() {
        return Ok(None);
    }
    Ok(Some((psnr_from_mse(mse, sp.data_range), vals.iter().sum::<f64>() / vals.len() as f64)))
}

/// Scores each method's cases against the ground-truth cases (matched by
/// id) and aggregates per `(method, b_value)`.
pub fn evaluate(gt: &[DwiCase], methods: &[(Method, &[DwiCase])], opts: &EvalOptions) -> Result<MetricsReport> {
    let by_id: BTreeMap<&str, &DwiCase> = gt.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let mut rows = Vec::new();
    for &(method, cases) in methods {
        if cases.len() != gt.len() {
            return Err(Error::Data(format!(
                "{method}: {} cases vs {} ground-truth cases",
                cases.len(),
                gt.len()
            )));
        }
        for c in cases {
            let truth = by_id
                .get(c.case_id.as_str())
                .ok_or_else(|| Error::Data(format!("{method}: unknown case {}", c.case_id)))?;
            rows.extend(slice_metrics(c, truth, method, opts)?);
        }
    }
    let aggregates = aggregate(&rows);
    Ok(MetricsReport { rows, aggregates })
}

/// Groups rows by `(method, b_value)`; infinite PSNR rows are excluded from
/// the PSNR statistics.
pub fn aggregate(rows: &[SliceMetrics]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(Method, u64), Vec<&SliceMetrics>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method, r.b_value.to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, b), rs)| {
            // sort values so the sums do not depend on row order
            let mut ps: Vec<f64> = rs.iter().map(|r| r.psnr_db).filter(|v| v.is_finite()).collect();
            let mut ss: Vec<f64> = rs.iter().map(|r| r.ssim).collect();
            ps.sort_by(f64::total_cmp);
            ss.sort_by(f64::total_cmp);
            let excluded = rs.len() - ps.len();
            if excluded > 0 {
                log::warn!("{method} b={}: {excluded} identical slices excluded from PSNR", f64::from_bits(b));
            }
            let (psnr_mean, psnr_std) = mean_std(&ps);
            let (ssim_mean, ssim_std) = mean_std(&ss);
            Aggregate {
                method,
                b_value: f64::from_bits(b),
                slices: rs.len(),
                psnr_excluded: excluded,
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
            }
        })
        .collect()
}

impl MetricsReport {
    pub fn get(&self, method: Method, b_value: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.b_value == b_value)
    }

    pub fn merge(mut self, other: MetricsReport) -> MetricsReport {
        self.rows.extend(other.rows);
        self.aggregates = aggregate(&self.rows);
        self
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("case_id,slice_index,b_value,direction_index,method,psnr_db,ssim\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{},{:.6},{:.8}\n",
                r.case_id, r.slice_index, r.b_value, r.direction_index, r.method, r.psnr_db, r.ssim
            );
        }
        s
    }

    /// Table with one row per `(method, b_value)` among `b_values`.
    pub fn table_csv(&self, b_values: &[f64]) -> String {
        let mut s = String::from("method,b_value,slices,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        for a in self.aggregates.iter().filter(|a| b_values.contains(&a.b_value)) {
            s += &format!(
                "{},{},{},{:.4},{:.4},{:.5},{:.5}\n",
                a.method, a.b_value, a.slices, a.psnr_mean, a.psnr_std, a.ssim_mean, a.ssim_std
            );
        }
        s
    }

    pub fn write_rows_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.rows_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn psnr_closed_form() {
        let gt = vec![0.5; 100];
        let pred = vec![0.6; 100];
        assert!((psnr(&pred, &gt, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
        assert_eq!(psnr(&gt, &gt, 1.0).unwrap(), f64::INFINITY);
        assert!(matches!(psnr(&gt, &gt[..4], 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(w[i], w[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_oracle() {
        let p = SsimParams::default();
        let a = random(32 * 32, 1);
        let b = random(32 * 32, 2);
        assert_eq!(ssim(&a, &a, 32, 32, &p).unwrap(), 1.0);
        let ab = ssim(&a, &b, 32, 32, &p).unwrap();
        let ba = ssim(&b, &a, 32, 32, &p).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let oracle = reference::ssim(&a, &b, 32, 32, &p).unwrap();
        assert!((ab - oracle).abs() < 1e-8, "{ab} vs {oracle}");
    }

    #[test]
    fn ssim_rejects_small_slices() {
        let a = vec![0.0; 100];
        assert!(matches!(ssim(&a, &a, 10, 10, &SsimParams::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn evaluate_counts_rows_and_identity() {
        use crate::phantom::{make_phantom_case, PhantomConfig};
        let cfg = PhantomConfig {
            dims: [4, 16, 16],
            n_directions: 6,
            b_values: vec![500.0],
            ..Default::default()
        };
        let (case, _) = make_phantom_case(&cfg).unwrap();
        let gt = vec![case];
        let r = evaluate(&gt, &[(Method::Proposed, &gt)], &EvalOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 4 * 6);
        let a = r.get(Method::Proposed, 500.0).unwrap();
        assert_eq!((a.ssim_mean, a.ssim_std), (1.0, 0.0));
        assert_eq!(a.psnr_excluded, 24);
    }

    #[test]
    fn masked_metrics_ignore_background() {
        use crate::phantom::{make_phantom_case, PhantomConfig};
        let cfg = PhantomConfig {
            dims: [2, 32, 32],
            n_directions: 6,
            b_values: vec![500.0],
            ..Default::default()
        };
        let (case, _) = make_phantom_case(&cfg).unwrap();
        let mut noisy = case.clone();
        let mask = case.geometry.as_ref().unwrap().mask(case.dims());
        for d in &mut noisy.dwis {
            let data: Vec<f64> = d
                .volume
                .data()
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| if m { v } else { v + 0.3 })
                .collect();
            d.volume = d.volume.with_data(data).unwrap();
        }
        let opts = EvalOptions {
            myocardium_only: true,
            ..Default::default()
        };
        let gt = vec![case];
        let r = evaluate(&gt, &[(Method::Bilinear, std::slice::from_ref(&noisy))], &opts).unwrap();
        assert!(r.rows.iter().all(|row| row.psnr_db.is_infinite()));
    }
}
