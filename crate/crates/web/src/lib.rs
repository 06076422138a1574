//! Browser bindings: phantom slices, the degradation round trip with its
//! PSNR/SSIM, and fitted helix-angle maps.

use refsr_core::degrade::{degrade_case, DegradeConfig};
use refsr_core::dtfit::{circular_ha_error, fit_tensor, ha, ha_mask};
use refsr_core::metrics::{psnr, ssim, SsimParams};
use refsr_core::phantom::{add_case_noise, derive_seed, make_phantom_case, PhantomConfig};
use refsr_core::volume::{normalize_case, DwiCase};
use wasm_bindgen::prelude::*;

pub const SIZE: usize = 64;
const SLICES: usize = 8;

fn phantom(seed: u64, noise_sigma: f64) -> Result<DwiCase, String> {
    let cfg = PhantomConfig {
        dims: [SLICES, SIZE, SIZE],
        seed,
        ..Default::default()
    };
    let (case, _) = make_phantom_case(&cfg).map_err(|e| e.to_string())?;
    let case = if noise_sigma > 0.0 {
        add_case_noise(&case, noise_sigma, derive_seed(seed, 0x401e)).map_err(|e| e.to_string())?
    } else {
        case
    };
    normalize_case(&case, 99.5).map_err(|e| e.to_string())
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Middle slice of DWI `dwi` (`None` for the b0), row-major `SIZE × SIZE`.
pub fn phantom_slice_native(seed: u64, noise_sigma: f64, dwi: Option<usize>) -> Result<Vec<f32>, String> {
    let case = phantom(seed, noise_sigma)?;
    let img = match dwi {
        None => &case.b0,
        Some(i) => case.dwis.get(i).ok_or(format!("DWI index {i} out of range"))?,
    };
    Ok(to_f32(img.volume.slice(SLICES / 2)))
}

#[wasm_bindgen]
pub struct Comparison {
    truth: Vec<f32>,
    bilinear: Vec<f32>,
    psnr_db: f64,
    ssim: f64,
}

#[wasm_bindgen]
impl Comparison {
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f32> {
        self.truth.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn bilinear(&self) -> Vec<f32> {
        self.bilinear.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn psnr_db(&self) -> f64 {
        self.psnr_db
    }

    #[wasm_bindgen(getter)]
    pub fn ssim(&self) -> f64 {
        self.ssim
    }
}

/// Degrades the phantom by `factor` in every direction, upsamples it back
/// and scores the middle slice of DWI `dwi`.
pub fn degrade_compare_native(seed: u64, noise_sigma: f64, factor: usize, dwi: usize) -> Result<Comparison, String> {
    let case = phantom(seed, noise_sigma)?;
    let cfg = DegradeConfig {
        through_plane_factor: factor,
        in_plane_factor: factor,
        ..Default::default()
    };
    let d = degrade_case(&case, &cfg).map_err(|e| e.to_string())?;
    let i = dwi.min(case.dwis.len() - 1);
    let z = SLICES / 2;
    let gt = d.hr.dwis[i].volume.slice(z);
    let bl = d.bilinear.dwis[i].volume.slice(z);
    Ok(Comparison {
        truth: to_f32(gt),
        bilinear: to_f32(bl),
        psnr_db: psnr(bl, gt, 1.0).map_err(|e| e.to_string())?,
        ssim: ssim(bl, gt, SIZE, SIZE, &SsimParams::default()).map_err(|e| e.to_string())?,
    })
}

/// Helix angle (degrees) of the fitted tensors on the middle slice, NaN
/// outside the wall, followed by the mean absolute error against the
/// configured transmural ramp as the last element.
pub fn helix_map_native(seed: u64, noise_sigma: f64) -> Result<Vec<f32>, String> {
    let cfg = PhantomConfig {
        dims: [SLICES, SIZE, SIZE],
        seed,
        ..Default::default()
    };
    let case = phantom(seed, noise_sigma)?;
    let geom = case.geometry.clone().ok_or("phantom without geometry")?;
    let mask = geom.mask(case.dims());
    let field = fit_tensor(&case, Some(&mask)).map_err(|e| e.to_string())?;
    let map = ha(&field, &geom).map_err(|e| e.to_string())?;
    let valid = ha_mask(&field, &geom);
    let z = SLICES / 2;
    let off = z * SIZE * SIZE;
    let (mut out, mut err, mut n) = (Vec::with_capacity(SIZE * SIZE + 1), 0.0, 0usize);
    for k in 0..SIZE * SIZE {
        let i = off + k;
        if valid[i] {
            out.push(map.data()[i] as f32);
            let depth = geom.depth(z, k / SIZE, k % SIZE).unwrap_or(0.0);
            let want = cfg.ha_endo_deg + (cfg.ha_epi_deg - cfg.ha_endo_deg) * depth;
            err += circular_ha_error(map.data()[i], want);
            n += 1;
        } else {
            out.push(f32::NAN);
        }
    }
    out.push((err / n.max(1) as f64) as f32);
    Ok(out)
}

#[wasm_bindgen]
pub fn slice_size() -> usize {
    SIZE
}

/// `dwi < 0` selects the b0 reference.
#[wasm_bindgen]
pub fn phantom_slice(seed: u32, noise_sigma: f64, dwi: i32) -> Result<Vec<f32>, JsError> {
    let dwi = usize::try_from(dwi).ok();
    phantom_slice_native(seed as u64, noise_sigma, dwi).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn degrade_compare(seed: u32, noise_sigma: f64, factor: u32, dwi: u32) -> Result<Comparison, JsError> {
    degrade_compare_native(seed as u64, noise_sigma, factor as usize, dwi as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn helix_map(seed: u32, noise_sigma: f64) -> Result<Vec<f32>, JsError> {
    helix_map_native(seed as u64, noise_sigma).map_err(|e| JsError::new(&e))
}
