//! Deterministic synthetic DT-CMR phantom: a left-ventricle-like annulus
//! with a transmural helix-angle ramp, a textured S0 and monoexponential
//! diffusion weighting, plus Rician noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dtfit::{Mat3, TensorField};
use crate::error::{Error, Result};
use crate::par;
use crate::volume::{DwiCase, DwiImage, Volume};

/// Relative amplitude of the S0 texture.
pub const TEXTURE_AMPLITUDE: f64 = 0.2;
const TEXTURE_MODES: usize = 8;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Annulus geometry in voxel units. The long axis is +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomGeometry {
    /// Centre `(x, y)` in voxels.
    pub center_xy: [f64; 2],
    pub inner_radius: Vec<f64>,
    pub outer_radius: Vec<f64>,
    pub long_axis: [f64; 3],
}

/// Local cardiac frame of a wall voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub radius: f64,
    pub radial: [f64; 3],
    pub circumferential: [f64; 3],
}

impl PhantomGeometry {
    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        let [nz, ny, nx] = dims;
        if self.inner_radius.len() != nz || self.outer_radius.len() != nz {
            return Err(Error::Geometry(format!(
                "need {nz} per-slice radii, got {}/{}",
                self.inner_radius.len(),
                self.outer_radius.len()
            )));
        }
        let [cx, cy] = self.center_xy;
        for (z, (&ri, &ro)) in self.inner_radius.iter().zip(&self.outer_radius).enumerate() {
            if !(ri > 0.0 && ri < ro) {
                return Err(Error::Geometry(format!(
                    "slice {z}: need 0 < inner ({ri}) < outer ({ro})"
                )));
            }
            if cx - ro < 0.0 || cy - ro < 0.0 || cx + ro > (nx - 1) as f64 || cy + ro > (ny - 1) as f64 {
                return Err(Error::Geometry(format!(
                    "slice {z}: annulus of radius {ro} around ({cx}, {cy}) exceeds {nx}x{ny}"
                )));
            }
        }
        Ok(())
    }

    /// Radial/circumferential unit vectors at a voxel, `None` on the axis.
    pub fn local_frame(&self, _z: usize, y: usize, x: usize) -> Option<LocalFrame> {
        let dx = x as f64 - self.center_xy[0];
        let dy = y as f64 - self.center_xy[1];
        let r = dx.hypot(dy);
        if r < 1e-9 {
            return None;
        }
        let radial = [dx / r, dy / r, 0.0];
        // ẑ × r̂
        let circumferential = [-radial[1], radial[0], 0.0];
        Some(LocalFrame {
            radius: r,
            radial,
            circumferential,
        })
    }

    /// Transmural depth in `[0, 1]` (0 = endocardium), `None` outside the
    /// wall.
    pub fn depth(&self, z: usize, y: usize, x: usize) -> Option<f64> {
        let f = self.local_frame(z, y, x)?;
        let (ri, ro) = (self.inner_radius[z], self.outer_radius[z]);
        (f.radius >= ri && f.radius <= ro).then(|| (f.radius - ri) / (ro - ri))
    }

    pub fn mask(&self, dims: [usize; 3]) -> Vec<bool> {
        let [nz, ny, nx] = dims;
        let mut m = Vec::with_capacity(nz * ny * nx);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    m.push(self.depth(z, y, x).is_some());
                }
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// `(z, y, x)`.
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub ha_endo_deg: f64,
    pub ha_epi_deg: f64,
    /// λ1 ≥ λ2 ≥ λ3 > 0 in mm²/s.
    pub eigenvalues_mm2_per_s: [f64; 3],
    pub s0_mean: f64,
    /// Width in voxels of the smooth signal ramp at the endo- and epicardial
    /// surfaces (0 = hard edge).
    pub edge_width_vox: f64,
    pub noise_sigma: f64,
    pub n_directions: usize,
    pub b_values: Vec<f64>,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [32, 64, 64],
            spacing_mm: [1.5; 3],
            ha_endo_deg: 60.0,
            ha_epi_deg: -60.0,
            eigenvalues_mm2_per_s: [1.5e-3, 0.9e-3, 0.6e-3],
            s0_mean: 1.0,
            edge_width_vox: 3.0,
            noise_sigma: 0.0,
            n_directions: 12,
            b_values: vec![500.0, 1000.0],
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let [l1, l2, l3] = self.eigenvalues_mm2_per_s;
        if !(l1 >= l2 && l2 >= l3 && l3 > 0.0) {
            return Err(Error::Config(format!(
                "eigenvalues must satisfy l1 >= l2 >= l3 > 0, got {:?}",
                self.eigenvalues_mm2_per_s
            )));
        }
        if self.n_directions < 6 {
            return Err(Error::Config(format!(
                "need at least 6 gradient directions, got {}",
                self.n_directions
            )));
        }
        if self.dims.contains(&0) || self.spacing_mm.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config(format!(
                "invalid grid {:?} / spacing {:?}",
                self.dims, self.spacing_mm
            )));
        }
        if !(self.s0_mean > 0.0) || !(self.noise_sigma >= 0.0) || !(self.edge_width_vox >= 0.0) {
            return Err(Error::Config(
                "s0_mean must be > 0, noise_sigma and edge_width_vox >= 0".into(),
            ));
        }
        if self.b_values.iter().any(|&b| !(b > 0.0)) || self.b_values.is_empty() {
            return Err(Error::Config(format!(
                "weighted b-values must be positive, got {:?}",
                self.b_values
            )));
        }
        Ok(())
    }

    /// Annulus derived from the grid size, slightly varied per seed: the
    /// wall tapers towards higher slices.
    pub fn geometry(&self) -> PhantomGeometry {
        let [nz, ny, nx] = self.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 1));
        let size = nx.min(ny) as f64;
        let jitter = 0.03 * size;
        let center_xy = [
            (nx - 1) as f64 / 2.0 + rng.gen_range(-jitter..=jitter),
            (ny - 1) as f64 / 2.0 + rng.gen_range(-jitter..=jitter),
        ];
        let scale = rng.gen_range(0.92..=1.05);
        let t = |z: usize| if nz > 1 { z as f64 / (nz - 1) as f64 } else { 0.0 };
        PhantomGeometry {
            center_xy,
            inner_radius: (0..nz).map(|z| 0.17 * size * scale * (1.0 - 0.15 * t(z))).collect(),
            outer_radius: (0..nz).map(|z| 0.36 * size * scale * (1.0 - 0.08 * t(z))).collect(),
            long_axis: [0.0, 0.0, 1.0],
        }
    }
}

/// `n` gradient directions on a hemispherical Fibonacci lattice. A non-zero
/// `seed` rotates the whole set by a seed-determined random rotation.
pub fn make_direction_set(n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if n < 6 {
        return Err(Error::Config(format!("need at least 6 directions, got {n}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut dirs: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect();
    if seed != 0 {
        let rot = random_rotation(seed);
        for d in &mut dirs {
            *d = std::array::from_fn(|i| (0..3).map(|k| rot[i][k] * d[k]).sum());
        }
    }
    for d in &mut dirs {
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        *d = d.map(|c| c / norm);
    }
    Ok(dirs)
}

fn random_rotation(seed: u64) -> Mat3 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    // uniform unit quaternion (Shoemake)
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Eigenframe `(e1, e2, e3)` of a wall voxel: e1 = cos(HA)·ĉ + sin(HA)·ẑ,
/// e2 radial, e3 = e1 × e2.
pub fn fiber_frame(ha_deg: f64, radial: [f64; 3], circ: [f64; 3], axis: [f64; 3]) -> [[f64; 3]; 3] {
    let (s, c) = ha_deg.to_radians().sin_cos();
    let e1 = std::array::from_fn(|i| c * circ[i] + s * axis[i]);
    let e3 = cross(e1, radial);
    [e1, radial, e3]
}

pub fn tensor_from_frame(frame: &[[f64; 3]; 3], eig: [f64; 3]) -> Mat3 {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| (0..3).map(|k| eig[k] * frame[k][i] * frame[k][j]).sum())
    })
}

/// Smooth pseudo-random field in `[-1, 1]` built from a few low-frequency
/// cosine modes.
fn texture(dims: [usize; 3], seed: u64) -> Vec<f64> {
    let [nz, ny, nx] = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let modes: Vec<([f64; 3], f64, f64)> = (0..TEXTURE_MODES)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let k = rng.gen_range(2.0..10.0);
            let kz = rng.gen_range(-2.0..2.0);
            let freq = [kz / nz as f64, k * angle.sin() / ny as f64, k * angle.cos() / nx as f64];
            (freq, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.5..1.0))
        })
        .collect();
    let total: f64 = modes.iter().map(|m| m.2).sum();
    let mut out = Vec::with_capacity(nz * ny * nx);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v: f64 = modes
                    .iter()
                    .map(|(f, phase, amp)| {
                        let arg = std::f64::consts::TAU * (f[0] * z as f64 + f[1] * y as f64 + f[2] * x as f64);
                        amp * (arg + phase).cos()
                    })
                    .sum();
                out.push(v / total);
            }
        }
    }
    out
}

/// Raised-cosine partial-volume ramp from the nearest wall surface,
/// strictly positive inside the wall.
fn edge_ramp(geom: &PhantomGeometry, z: usize, y: usize, x: usize, width: f64) -> f64 {
    if width == 0.0 {
        return 1.0;
    }
    let r = geom.local_frame(z, y, x).map_or(0.0, |f| f.radius);
    let s = (r - geom.inner_radius[z]).min(geom.outer_radius[z] - r).max(0.0);
    let t = ((s + 0.5) / (width + 1.0)).min(1.0);
    0.5 - 0.5 * (std::f64::consts::PI * t).cos()
}

/// Builds the noiseless phantom case and its ground-truth tensor field.
/// DWIs are ordered by b-value, then direction.
pub fn make_phantom_case(cfg: &PhantomConfig) -> Result<(DwiCase, TensorField)> {
    cfg.validate()?;
    let geom = cfg.geometry();
    geom.validate(cfg.dims)?;
    let [nz, ny, nx] = cfg.dims;

    let tex = texture(cfg.dims, cfg.seed);
    let mut tensors = Vec::with_capacity(nz * ny * nx);
    let mut mask = Vec::with_capacity(nz * ny * nx);
    let mut s0 = Vec::with_capacity(nz * ny * nx);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                match geom.depth(z, y, x) {
                    Some(d) => {
                        let f = geom.local_frame(z, y, x).unwrap();
                        let ha = cfg.ha_endo_deg + (cfg.ha_epi_deg - cfg.ha_endo_deg) * d;
                        let frame = fiber_frame(ha, f.radial, f.circumferential, geom.long_axis);
                        tensors.push(tensor_from_frame(&frame, cfg.eigenvalues_mm2_per_s));
                        mask.push(true);
                        let ramp = edge_ramp(&geom, z, y, x, cfg.edge_width_vox);
                        s0.push(cfg.s0_mean * (1.0 + TEXTURE_AMPLITUDE * tex[i]) * ramp);
                    }
                    None => {
                        tensors.push([[0.0; 3]; 3]);
                        mask.push(false);
                        s0.push(0.0);
                    }
                }
            }
        }
    }
    let field = TensorField::new(cfg.dims, cfg.spacing_mm, &tensors, mask)?;
    let s0 = Volume::new(cfg.dims, s0, cfg.spacing_mm, 1.0)?;
    let dirs = make_direction_set(cfg.n_directions, cfg.seed)?;
    let mut dwis = Vec::with_capacity(cfg.b_values.len() * dirs.len());
    for &b in &cfg.b_values {
        for &g in &dirs {
            dwis.push(synthesize_dwi(&field, &s0, b, g)?);
        }
    }
    let case = DwiCase::new(
        format!("phantom-{}", cfg.seed),
        DwiImage::reference(s0),
        dwis,
        Some(geom),
    )?;
    Ok((case, field))
}

/// `S = S0 · exp(−b gᵀDg)` inside the tensor mask, zero outside.
pub fn synthesize_dwi(tensors: &TensorField, s0: &Volume, b: f64, g: [f64; 3]) -> Result<DwiImage> {
    if !(b >= 0.0) {
        return Err(Error::Config(format!("b-value must be >= 0, got {b}")));
    }
    if tensors.dims() != s0.dims() {
        return Err(Error::Shape(format!(
            "tensor field {:?} vs S0 {:?}",
            tensors.dims(),
            s0.dims()
        )));
    }
    let data = (0..s0.len())
        .map(|i| {
            if !tensors.mask[i] {
                return 0.0;
            }
            let d = tensors.tensor(i);
            let q: f64 = (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| g[r] * d[r][c] * g[c]).sum();
            s0.data()[i] * (-b * q).exp()
        })
        .collect();
    let dir = if b > 0.0 { g } else { [0.0; 3] };
    DwiImage::new(s0.with_data(data)?, b, dir)
}

fn unit_open(bits: u64) -> f64 {
    // (0, 1]
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Magnitude noise `sqrt((v + n1)² + n2²)` with `n1`, `n2 ~ N(0, σ²)` drawn
/// from a counter-based stream keyed on `(seed, voxel index)`.
pub fn add_rician_noise(img: &DwiImage, sigma: f64, seed: u64) -> Result<DwiImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let src = img.volume.data();
    let mut out = src.to_vec();
    let chunk = img.volume.slice_len();
    par::for_each_chunk(&mut out, chunk, |ci, dst| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // two u64 draws = four 32-bit words per voxel
        rng.set_word_pos(4 * (ci * chunk) as u128);
        for v in dst.iter_mut() {
            let u1 = unit_open(rng.gen());
            let u2 = unit_open(rng.gen());
            let r = sigma * (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            let (n1, n2) = (r * c, r * s);
            *v = ((*v + n1).powi(2) + n2 * n2).sqrt();
        }
    });
    Ok(img.with_volume(img.volume.with_data(out)?))
}

/// Applies independent Rician noise to every image of a case, each image
/// keyed by its own derived seed.
pub fn add_case_noise(case: &DwiCase, sigma: f64, seed: u64) -> Result<DwiCase> {
    Ok(DwiCase {
        case_id: case.case_id.clone(),
        b0: add_rician_noise(&case.b0, sigma, derive_seed(seed, 1000))?,
        dwis: case
            .dwis
            .iter()
            .enumerate()
            .map(|(i, d)| add_rician_noise(d, sigma, derive_seed(seed, 1001 + i as u64)))
            .collect::<Result<_>>()?,
        geometry: case.geometry.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtfit::symmetric_eigen;

    fn small_cfg() -> PhantomConfig {
        PhantomConfig {
            dims: [4, 32, 32],
            n_directions: 6,
            b_values: vec![500.0],
            ..Default::default()
        }
    }

    #[test]
    fn six_distinct_unit_directions() {
        let d = make_direction_set(6, 0).unwrap();
        assert_eq!(d.len(), 6);
        for (i, a) in d.iter().enumerate() {
            assert!(((a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt() - 1.0).abs() < 1e-12);
            for b in &d[i + 1..] {
                let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                assert!(cos.clamp(-1.0, 1.0).acos() > 1e-6);
            }
        }
        assert!(matches!(make_direction_set(5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn rotated_set_is_still_unit() {
        let d = make_direction_set(30, 17).unwrap();
        assert_ne!(d, make_direction_set(30, 0).unwrap());
        assert_eq!(d, make_direction_set(30, 17).unwrap());
        for v in d {
            assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn midwall_fiber_is_circumferential() {
        let frame = fiber_frame(60.0 + (-60.0 - 60.0) * 0.5, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        assert_eq!(frame[0], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn wall_tensors_have_configured_eigenvalues() {
        let cfg = small_cfg();
        let (_, field) = make_phantom_case(&cfg).unwrap();
        let mut seen = 0;
        for i in (0..field.len()).filter(|&i| field.mask[i]) {
            let (vals, _) = symmetric_eigen(&field.tensor(i));
            for (v, e) in vals.iter().zip(cfg.eigenvalues_mm2_per_s) {
                assert!((v - e).abs() < 1e-12);
            }
            seen += 1;
        }
        assert!(seen > 100);
    }

    #[test]
    fn b_zero_returns_s0() {
        let (case, field) = make_phantom_case(&small_cfg()).unwrap();
        let img = synthesize_dwi(&field, &case.b0.volume, 0.0, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(img.volume.data(), case.b0.volume.data());
        assert!(synthesize_dwi(&field, &case.b0.volume, -1.0, [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn attenuation_along_primary_axis() {
        let dims = [1, 1, 1];
        let s0 = Volume::filled(dims, 2.0, [1.0; 3]).unwrap();
        let frame = fiber_frame(0.0, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        let d = tensor_from_frame(&frame, [1.5e-3, 0.9e-3, 0.6e-3]);
        let field = TensorField::new(dims, [1.0; 3], &[d], vec![true]).unwrap();
        let img = synthesize_dwi(&field, &s0, 500.0, frame[0]).unwrap();
        assert!((img.volume.data()[0] - 2.0 * (-0.75f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn signal_non_increasing_in_b() {
        let (case, field) = make_phantom_case(&small_cfg()).unwrap();
        let g = case.dwis[0].direction;
        let imgs: Vec<_> = [0.0, 250.0, 500.0, 1000.0]
            .iter()
            .map(|&b| synthesize_dwi(&field, &case.b0.volume, b, g).unwrap())
            .collect();
        for w in imgs.windows(2) {
            for (a, b) in w[0].volume.data().iter().zip(w[1].volume.data()) {
                assert!(b <= a);
            }
        }
    }

    #[test]
    fn phantom_is_pure_function_of_config() {
        let a = make_phantom_case(&small_cfg()).unwrap();
        let b = make_phantom_case(&small_cfg()).unwrap();
        assert_eq!(a, b);
        let other = make_phantom_case(&PhantomConfig { seed: 3, ..small_cfg() }).unwrap();
        assert_ne!(a.0.b0, other.0.b0);
    }

    #[test]
    fn background_is_empty_and_texture_bounded() {
        let cfg = small_cfg();
        let (case, field) = make_phantom_case(&cfg).unwrap();
        for (i, &v) in case.b0.volume.data().iter().enumerate() {
            if field.mask[i] {
                assert!(v > 0.0 && v <= 1.2 + 1e-12);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn oversized_annulus_is_geometry_error() {
        let geom = PhantomGeometry {
            center_xy: [5.0, 5.0],
            inner_radius: vec![2.0],
            outer_radius: vec![8.0],
            long_axis: [0.0, 0.0, 1.0],
        };
        assert!(matches!(geom.validate([1, 16, 16]), Err(Error::Geometry(_))));
        let inverted = PhantomGeometry {
            inner_radius: vec![3.0],
            outer_radius: vec![2.0],
            ..geom
        };
        assert!(matches!(inverted.validate([1, 16, 16]), Err(Error::Geometry(_))));
    }

    #[test]
    fn noise_zero_sigma_is_identity_and_seeded() {
        let (case, _) = make_phantom_case(&small_cfg()).unwrap();
        let img = &case.dwis[0];
        assert_eq!(&add_rician_noise(img, 0.0, 1).unwrap(), img);
        let a = add_rician_noise(img, 0.05, 9).unwrap();
        let b = add_rician_noise(img, 0.05, 9).unwrap();
        let c = add_rician_noise(img, 0.05, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(add_rician_noise(img, -0.1, 0).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_eig = PhantomConfig { eigenvalues_mm2_per_s: [1e-3, 2e-3, 0.5e-3], ..small_cfg() };
        assert!(matches!(make_phantom_case(&bad_eig), Err(Error::Config(_))));
        let few = PhantomConfig { n_directions: 5, ..small_cfg() };
        assert!(matches!(make_phantom_case(&few), Err(Error::Config(_))));
    }
}
