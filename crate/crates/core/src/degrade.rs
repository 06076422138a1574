//! Volumetric 4× degradation (through-plane slice averaging, then in-plane
//! bilinear decimation) and the bilinear reconstruction back onto the
//! high-resolution grid.
//!
//! Sampling follows the pixel-centre convention: low-resolution index `j`
//! sits at high-resolution coordinate `(j + 0.5)·f − 0.5`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::volume::{read_volume, write_case, write_volume, DwiCase, DwiImage, Sidecar, Volume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceMode {
    /// Mean of each non-overlapping run of `factor` slices.
    #[default]
    Block,
    /// Running mean of each slice and its `factor − 1` successors, then
    /// decimation.
    Sliding,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Average only the slices that exist.
    #[default]
    Truncate,
    /// Mirror indices past the last slice.
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeConfig {
    pub through_plane_factor: usize,
    pub in_plane_factor: usize,
    pub slice_mode: SliceMode,
    pub boundary: Boundary,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            through_plane_factor: 4,
            in_plane_factor: 4,
            slice_mode: SliceMode::Block,
            boundary: Boundary::Truncate,
        }
    }
}

impl DegradeConfig {
    pub fn validate_for(&self, dims: [usize; 3]) -> Result<()> {
        if self.through_plane_factor == 0 || self.in_plane_factor == 0 {
            return Err(Error::Config("degradation factors must be >= 1".into()));
        }
        if self.slice_mode == SliceMode::Block && !dims[0].is_multiple_of(self.through_plane_factor) {
            shape_err!(
                "{} slices not divisible by through-plane factor {}",
                dims[0],
                self.through_plane_factor
            );
        }
        if !dims[1].is_multiple_of(self.in_plane_factor) || !dims[2].is_multiple_of(self.in_plane_factor) {
            shape_err!(
                "in-plane size {}x{} not divisible by factor {}",
                dims[1],
                dims[2],
                self.in_plane_factor
            );
        }
        Ok(())
    }
}

pub fn downsample_through_plane(vol: &Volume, cfg: &DegradeConfig) -> Result<Volume> {
    let f = cfg.through_plane_factor;
    let [nz, ny, nx] = vol.dims();
    if f == 0 {
        return Err(Error::Config("through-plane factor must be >= 1".into()));
    }
    let plane = ny * nx;
    let src = vol.data();
    let (out_z, data) = match cfg.slice_mode {
        SliceMode::Block => {
            if nz % f != 0 {
                shape_err!("{nz} slices not divisible by through-plane factor {f}");
            }
            let mut data = vec![0.0; nz / f * plane];
            for (k, dst) in data.chunks_mut(plane).enumerate() {
                for z in k * f..(k + 1) * f {
                    for (d, s) in dst.iter_mut().zip(&src[z * plane..(z + 1) * plane]) {
                        *d += s;
                    }
                }
                dst.iter_mut().for_each(|v| *v /= f as f64);
            }
            (nz / f, data)
        }
        SliceMode::Sliding => {
            let out_z = nz.div_ceil(f);
            let mut data = vec![0.0; out_z * plane];
            for (k, dst) in data.chunks_mut(plane).enumerate() {
                let start = k * f;
                let members: Vec<usize> = (start..start + f)
                    .filter_map(|z| match cfg.boundary {
                        Boundary::Truncate => (z < nz).then_some(z),
                        Boundary::Reflect => Some(reflect(z, nz)),
                    })
                    .collect();
                for &z in &members {
                    for (d, s) in dst.iter_mut().zip(&src[z * plane..(z + 1) * plane]) {
                        *d += s;
                    }
                }
                dst.iter_mut().for_each(|v| *v /= members.len() as f64);
            }
            (out_z, data)
        }
    };
    let sp = vol.spacing_mm();
    vol.with_geometry([out_z, ny, nx], data, [sp[0] * f as f64, sp[1], sp[2]])
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Linear interpolation along one axis. `coord(i)` gives the continuous
/// source coordinate of output index `i`; coordinates are clamped to the
/// source extent.
fn resample_axis(
    data: &[f64],
    dims: [usize; 3],
    axis: usize,
    out_len: usize,
    coord: impl Fn(usize) -> f64,
) -> (Vec<f64>, [usize; 3]) {
    let n = dims[axis];
    let taps: Vec<(usize, usize, f64)> = (0..out_len)
        .map(|i| {
            let u = coord(i).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, u - i0 as f64)
        })
        .collect();
    let mut out_dims = dims;
    out_dims[axis] = out_len;
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = Vec::with_capacity(outer * out_len * stride);
    for o in 0..outer {
        let base = o * n * stride;
        for &(i0, i1, t) in &taps {
            let a = &data[base + i0 * stride..base + (i0 + 1) * stride];
            let b = &data[base + i1 * stride..base + (i1 + 1) * stride];
            out.extend(a.iter().zip(b).map(|(&a, &b)| if t == 0.0 { a } else { (1.0 - t) * a + t * b }));
        }
    }
    (out, out_dims)
}

/// Bilinear decimation of every slice by `factor`.
pub fn downsample_in_plane(vol: &Volume, factor: usize) -> Result<Volume> {
    let [nz, ny, nx] = vol.dims();
    if factor == 0 {
        return Err(Error::Config("in-plane factor must be >= 1".into()));
    }
    if ny % factor != 0 || nx % factor != 0 {
        shape_err!("in-plane size {ny}x{nx} not divisible by factor {factor}");
    }
    let f = factor as f64;
    let centre = move |j: usize| (j as f64 + 0.5) * f - 0.5;
    let (d, dims) = resample_axis(vol.data(), [nz, ny, nx], 1, ny / factor, centre);
    let (d, dims) = resample_axis(&d, dims, 2, nx / factor, centre);
    let sp = vol.spacing_mm();
    vol.with_geometry(dims, d, [sp[0], sp[1] * f, sp[2] * f])
}

/// Separable linear interpolation onto a grid that is an integer multiple
/// of the source grid along every axis.
pub fn upsample_to_grid(vol: &Volume, target: [usize; 3]) -> Result<Volume> {
    let src = vol.dims();
    for a in 0..3 {
        if target[a] < src[a] || !target[a].is_multiple_of(src[a]) {
            shape_err!("target grid {target:?} is not an integer multiple of {src:?}");
        }
    }
    let mut data = vol.data().to_vec();
    let mut dims = src;
    let mut spacing = vol.spacing_mm();
    for a in 0..3 {
        let f = (target[a] / src[a]) as f64;
        if f == 1.0 {
            continue;
        }
        let (d, nd) = resample_axis(&data, dims, a, target[a], move |i| (i as f64 + 0.5) / f - 0.5);
        data = d;
        dims = nd;
        spacing[a] /= f;
    }
    vol.with_geometry(dims, data, spacing)
}

/// Through-plane then in-plane degradation of one volume.
pub fn degrade_volume(vol: &Volume, cfg: &DegradeConfig) -> Result<Volume> {
    downsample_in_plane(&downsample_through_plane(vol, cfg)?, cfg.in_plane_factor)
}

/// Low-resolution DWIs of one case. No reference image: the b0 is only
/// ever used at full resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LowResSeries {
    pub case_id: String,
    pub dwis: Vec<DwiImage>,
}

/// One case at three stages: the original, the degraded DWIs and their
/// bilinear reconstruction on the original grid (sharing the original b0).
#[derive(Clone, Debug, PartialEq)]
pub struct DegradedCase {
    pub hr: DwiCase,
    pub lr: LowResSeries,
    pub bilinear: DwiCase,
}

pub fn degrade_case(case: &DwiCase, cfg: &DegradeConfig) -> Result<DegradedCase> {
    let dims = case.dims();
    cfg.validate_for(dims)?;
    let lr_dwis = case
        .dwis
        .iter()
        .map(|d| Ok(d.with_volume(degrade_volume(&d.volume, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let bilinear = bilinear_baseline(&case.case_id, &lr_dwis, case)?;
    Ok(DegradedCase {
        hr: case.clone(),
        lr: LowResSeries {
            case_id: case.case_id.clone(),
            dwis: lr_dwis,
        },
        bilinear,
    })
}

/// Upsamples low-resolution DWIs onto the grid of `reference` and pairs
/// them with its b0.
pub fn bilinear_baseline(case_id: &str, lr: &[DwiImage], reference: &DwiCase) -> Result<DwiCase> {
    let target = reference.dims();
    let spacing = reference.b0.volume.spacing_mm();
    let dwis = lr
        .iter()
        .map(|d| {
            let up = upsample_to_grid(&d.volume, target)?;
            let up = up.with_geometry(target, up.data().to_vec(), spacing)?;
            Ok(d.with_volume(up))
        })
        .collect::<Result<Vec<_>>>()?;
    DwiCase::new(case_id, reference.b0.clone(), dwis, reference.geometry.clone())
}

/// Writes `lr/` (DWIs only), `hr/` and `bilinear/` under `dir`.
pub fn write_degraded(d: &DegradedCase, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    write_case(&d.hr, dir.join("hr"))?;
    write_case(&d.bilinear, dir.join("bilinear"))?;
    write_lr_series(&d.lr, dir.join("lr"))
}

pub fn write_lr_series(lr: &LowResSeries, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, d) in lr.dwis.iter().enumerate() {
        let stem = format!("dwi_b{:04}_d{i:03}", d.b_value.round() as i64);
        write_volume(&d.volume, dir.join(format!("{stem}.rvol")))?;
        let side = Sidecar {
            case_id: lr.case_id.clone(),
            b_value: d.b_value,
            direction: d.direction,
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&side)? + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_lr_series(dir: impl AsRef<Path>) -> Result<LowResSeries> {
    let dir = dir.as_ref();
    let mut stems: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "rvol")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("dwi_"))
        })
        .map(|p| p.with_extension(""))
        .collect();
    stems.sort();
    let mut case_id = String::new();
    let mut dwis = Vec::with_capacity(stems.len());
    for stem in &stems {
        let vol = read_volume(stem.with_extension("rvol"))?;
        let jpath = stem.with_extension("json");
        let text = fs::read_to_string(&jpath).map_err(|e| Error::io(&jpath, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        case_id = side.case_id;
        dwis.push(DwiImage::new(vol, side.b_value, side.direction)?);
    }
    if dwis.is_empty() {
        return Err(Error::Data(format!("{}: no low-resolution DWIs", dir.display())));
    }
    Ok(LowResSeries { case_id, dwis })
}
