//! Diffusion-tensor fitting and the MD / FA / HA parametric maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::PhantomGeometry;
use crate::volume::{read_volume, write_volume, DwiCase, Volume};

pub type Mat3 = [[f64; 3]; 3];

/// Component order used for storage: Dxx, Dyy, Dzz, Dxy, Dxz, Dyz.
pub const COMPONENT_NAMES: [&str; 6] = ["Dxx", "Dyy", "Dzz", "Dxy", "Dxz", "Dyz"];

/// Per-voxel symmetric tensors (mm²/s) with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    components: [Volume; 6],
    pub mask: Vec<bool>,
    /// Voxels whose fitted tensor has a negative eigenvalue.
    pub negative_eigen: Vec<bool>,
}

pub fn to_components(d: &Mat3) -> [f64; 6] {
    [d[0][0], d[1][1], d[2][2], d[0][1], d[0][2], d[1][2]]
}

pub fn from_components(c: &[f64; 6]) -> Mat3 {
    [[c[0], c[3], c[4]], [c[3], c[1], c[5]], [c[4], c[5], c[2]]]
}

impl TensorField {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        tensors: &[Mat3],
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n: usize = dims.iter().product();
        if tensors.len() != n || mask.len() != n {
            return Err(Error::Shape(format!(
                "tensor field {dims:?} needs {n} tensors and mask entries"
            )));
        }
        let mut comps: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 6];
        for (d, &m) in tensors.iter().zip(&mask) {
            let c = if m { to_components(d) } else { [0.0; 6] };
            for (k, v) in c.iter().enumerate() {
                comps[k].push(*v);
            }
        }
        let negative_eigen = tensors
            .iter()
            .zip(&mask)
            .map(|(d, &m)| m && symmetric_eigen(d).0[2] < 0.0)
            .collect();
        let components = comps
            .into_iter()
            .map(|c| Volume::new(dims, c, spacing_mm, 1.0))
            .collect::<Result<Vec<_>>>()?
            .try_into()
            .unwrap();
        Ok(TensorField {
            components,
            mask,
            negative_eigen,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.components[0].dims()
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn component(&self, k: usize) -> &Volume {
        &self.components[k]
    }

    pub fn tensor(&self, i: usize) -> Mat3 {
        let c: [f64; 6] = std::array::from_fn(|k| self.components[k].data()[i]);
        from_components(&c)
    }

    /// Writes `tensor_Dxx.rvol` … `tensor_Dyz.rvol` and `tensor_mask.rvol`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (vol, name) in self.components.iter().zip(COMPONENT_NAMES) {
            write_volume(vol, dir.join(format!("tensor_{name}.rvol")))?;
        }
        let mask = self.components[0]
            .with_data(self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())?;
        write_volume(&mask, dir.join("tensor_mask.rvol"))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vols = COMPONENT_NAMES
            .iter()
            .map(|name| read_volume(dir.join(format!("tensor_{name}.rvol"))))
            .collect::<Result<Vec<_>>>()?;
        let mask: Vec<bool> = read_volume(dir.join("tensor_mask.rvol"))?
            .data()
            .iter()
            .map(|&v| v > 0.5)
            .collect();
        let tensors: Vec<Mat3> = (0..mask.len())
            .map(|i| from_components(&std::array::from_fn(|k| vols[k].data()[i])))
            .collect();
        TensorField::new(vols[0].dims(), vols[0].spacing_mm(), &tensors, mask)
    }
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi
/// rotations. Eigenvalues are sorted descending; `vectors[i]` pairs with
/// `values[i]`.
pub fn symmetric_eigen(m: &Mat3) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..50 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off == 0.0 || off <= 1e-30 * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A' = Jᵀ A J with J the (p, q) rotation
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.map(|i| a[i][i]);
    let vectors = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (values, vectors)
}

/// `(AᵀA)⁻¹Aᵀ` for the log-linear design matrix, or an error when the
/// direction set does not determine all six tensor components.
fn design_pseudo_inverse(rows: &[[f64; 6]]) -> Result<Vec<[f64; 6]>> {
    let mut ata = [[0.0; 6]; 6];
    for r in rows {
        for i in 0..6 {
            for j in 0..6 {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    // Gauss-Jordan inversion with partial pivoting.
    let mut inv = [[0.0; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let max_diag = (0..6).map(|i| ata[i][i].abs()).fold(0.0, f64::max);
    for col in 0..6 {
        let piv = (col..6)
            .max_by(|&a, &b| ata[a][col].abs().partial_cmp(&ata[b][col].abs()).unwrap())
            .unwrap();
        if ata[piv][col].abs() <= 1e-12 * max_diag {
            return Err(Error::Config(format!("design matrix rank < 6 (pivot {col})")));
        }
        ata.swap(col, piv);
        inv.swap(col, piv);
        let d = ata[col][col];
        for j in 0..6 {
            ata[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..6 {
            if r != col {
                let f = ata[r][col];
                if f != 0.0 {
                    for j in 0..6 {
                        ata[r][j] -= f * ata[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(rows
        .iter()
        .map(|r| std::array::from_fn(|i| (0..6).map(|j| inv[i][j] * r[j]).sum()))
        .collect())
}

fn design_row(b: f64, g: [f64; 3]) -> [f64; 6] {
    let [x, y, z] = g;
    [
        -b * x * x,
        -b * y * y,
        -b * z * z,
        -b * 2.0 * x * y,
        -b * 2.0 * x * z,
        -b * 2.0 * y * z,
    ]
}

/// Ordinary least-squares fit of `ln(Sᵢ/S0) = −bᵢ gᵢᵀ D gᵢ` per voxel.
/// Voxels outside `mask` or with any non-positive signal are masked out.
pub fn fit_tensor(case: &DwiCase, mask: Option<&[bool]>) -> Result<TensorField> {
    let weighted: Vec<_> = case.dwis.iter().filter(|d| d.b_value > 0.0).collect();
    let describe = || {
        weighted
            .iter()
            .map(|d| format!("b={} g={:?}", d.b_value, d.direction))
            .collect::<Vec<_>>()
            .join("; ")
    };
    if weighted.len() < 6 {
        return Err(Error::Config(format!(
            "tensor fit needs >= 6 weighted images, got {} [{}]",
            weighted.len(),
            describe()
        )));
    }
    let rows: Vec<[f64; 6]> = weighted.iter().map(|d| design_row(d.b_value, d.direction)).collect();
    let pinv = design_pseudo_inverse(&rows)
        .map_err(|e| Error::Config(format!("{e}; directions: [{}]", describe())))?;

    let s0 = case.b0.volume.data();
    let n = s0.len();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::Shape(format!("mask has {} entries, volume {n}", m.len())));
        }
    }
    let mut tensors = vec![[[0.0; 3]; 3]; n];
    let mut valid = vec![false; n];
    let mut logs = vec![0.0; weighted.len()];
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) || s0[i] <= 0.0 {
            continue;
        }
        let mut ok = true;
        for (l, d) in logs.iter_mut().zip(&weighted) {
            let s = d.volume.data()[i];
            if s <= 0.0 {
                ok = false;
                break;
            }
            *l = (s / s0[i]).ln();
        }
        if !ok {
            continue;
        }
        let mut c = [0.0; 6];
        for (row, &l) in pinv.iter().zip(&logs) {
            for k in 0..6 {
                c[k] += row[k] * l;
            }
        }
        tensors[i] = from_components(&c);
        valid[i] = true;
    }
    let vol = &case.b0.volume;
    TensorField::new(vol.dims(), vol.spacing_mm(), &tensors, valid)
}

fn map_volume(t: &TensorField, f: impl Fn(usize, &Mat3) -> Option<f64>) -> Result<Volume> {
    let data = (0..t.len())
        .map(|i| {
            if t.mask[i] {
                f(i, &t.tensor(i)).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    t.components[0].with_data(data)
}

pub fn mean_diffusivity(d: &Mat3) -> f64 {
    (d[0][0] + d[1][1] + d[2][2]) / 3.0
}

/// FA from eigenvalues clamped at zero; the zero tensor has FA 0.
pub fn fractional_anisotropy_of(values: [f64; 3]) -> f64 {
    let l = values.map(|v| v.max(0.0));
    let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let mean = (l[0] + l[1] + l[2]) / 3.0;
    let dev = l.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    ((1.5f64).sqrt() * dev / norm).clamp(0.0, 1.0)
}

/// Mean diffusivity, trace(D)/3.
pub fn md(t: &TensorField) -> Result<Volume> {
    map_volume(t, |_, d| Some(mean_diffusivity(d)))
}

pub fn fa(t: &TensorField) -> Result<Volume> {
    map_volume(t, |_, d| Some(fractional_anisotropy_of(symmetric_eigen(d).0)))
}

/// Helix angle in degrees of a primary eigenvector in the local
/// (radial, circumferential, long-axis) frame. Range (−90, 90].
pub fn helix_angle_deg(e1: [f64; 3], circ: [f64; 3], axis: [f64; 3]) -> f64 {
    let mut c = dot(e1, circ);
    let mut z = dot(e1, axis);
    if c < 0.0 {
        c = -c;
        z = -z;
    }
    let a = z.atan2(c).to_degrees();
    if a <= -90.0 {
        a + 180.0
    } else {
        a
    }
}

/// Helix angle map (degrees). Voxels on the long axis are left at 0 and
/// excluded by [`ha_mask`].
pub fn ha(t: &TensorField, geom: &PhantomGeometry) -> Result<Volume> {
    let [_, ny, nx] = t.dims();
    map_volume(t, |i, d| {
        let (z, y, x) = (i / (ny * nx), (i / nx) % ny, i % nx);
        let frame = geom.local_frame(z, y, x)?;
        let (_, vecs) = symmetric_eigen(d);
        Some(helix_angle_deg(vecs[0], frame.circumferential, geom.long_axis))
    })
}

/// Voxels where the helix angle is defined: fitted and off the long axis.
pub fn ha_mask(t: &TensorField, geom: &PhantomGeometry) -> Vec<bool> {
    let [_, ny, nx] = t.dims();
    (0..t.len())
        .map(|i| t.mask[i] && geom.local_frame(i / (ny * nx), (i / nx) % ny, i % nx).is_some())
        .collect()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// The three parametric maps of one tensor field.
#[derive(Clone, Debug, PartialEq)]
pub struct Maps {
    pub md: Volume,
    pub fa: Volume,
    pub ha: Volume,
    pub mask: Vec<bool>,
}

pub fn compute_maps(t: &TensorField, geom: &PhantomGeometry) -> Result<Maps> {
    Ok(Maps {
        md: md(t)?,
        fa: fa(t)?,
        ha: ha(t, geom)?,
        mask: ha_mask(t, geom),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub p95: f64,
    pub voxels: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapComparison {
    pub md: ErrorStats,
    pub fa: ErrorStats,
    pub ha_deg: ErrorStats,
}

/// Absolute difference of two helix angles on the 180°-periodic circle.
pub fn circular_ha_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

fn stats(errors: &mut [f64]) -> ErrorStats {
    if errors.is_empty() {
        return ErrorStats::default();
    }
    let mae = errors.iter().sum::<f64>() / errors.len() as f64;
    let p95 = crate::volume::percentile(errors, 95.0);
    ErrorStats {
        mae,
        p95,
        voxels: errors.len(),
    }
}

/// Masked error summary of `test` maps against `reference` maps. Only
/// voxels valid in both maps and in `mask` are counted.
pub fn compare_maps(test: &Maps, reference: &Maps, mask: &[bool]) -> Result<MapComparison> {
    let n = mask.len();
    if test.md.len() != n || reference.md.len() != n {
        return Err(Error::Shape(format!(
            "map sizes {} / {} differ from mask {n}",
            test.md.len(),
            reference.md.len()
        )));
    }
    let idx: Vec<usize> = (0..n)
        .filter(|&i| mask[i] && test.mask[i] && reference.mask[i])
        .collect();
    let diff = |a: &Volume, b: &Volume| -> Vec<f64> {
        idx.iter().map(|&i| (a.data()[i] - b.data()[i]).abs()).collect()
    };
    let mut ha_err: Vec<f64> = idx
        .iter()
        .map(|&i| circular_ha_error(test.ha.data()[i], reference.ha.data()[i]))
        .collect();
    Ok(MapComparison {
        md: stats(&mut diff(&test.md, &reference.md)),
        fa: stats(&mut diff(&test.fa, &reference.fa)),
        ha_deg: stats(&mut ha_err),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_direction_set, synthesize_dwi};
    use crate::volume::DwiImage;

    fn rotation(a: f64, b: f64, c: f64) -> Mat3 {
        let rx = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rz = [[c.cos(), -c.sin(), 0.0], [c.sin(), c.cos(), 0.0], [0.0, 0.0, 1.0]];
        matmul(&matmul(&rz, &ry), &rx)
    }

    fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
    }

    fn transpose(a: &Mat3) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
    }

    #[test]
    fn eigen_of_diagonal_is_sorted() {
        let (vals, vecs) = symmetric_eigen(&[[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(vals, [3.0, 2.0, 1.0]);
        assert_eq!(vecs[0].map(f64::abs), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn eigen_reconstructs_rotated_tensor() {
        let r = rotation(0.3, -1.1, 2.0);
        let d = matmul(&matmul(&r, &[[1.5e-3, 0.0, 0.0], [0.0, 0.9e-3, 0.0], [0.0, 0.0, 0.6e-3]]), &transpose(&r));
        let (vals, vecs) = symmetric_eigen(&d);
        for (v, e) in vals.iter().zip([1.5e-3, 0.9e-3, 0.6e-3]) {
            assert!((v - e).abs() < 1e-15);
        }
        for (k, vec) in vecs.iter().enumerate() {
            let col = [r[0][k], r[1][k], r[2][k]];
            assert!((dot(*vec, col).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn md_and_fa_closed_forms() {
        let d = [[2e-3, 0.0, 0.0], [0.0, 1e-3, 0.0], [0.0, 0.0, 1e-3]];
        assert!((mean_diffusivity(&d) - 4e-3 / 3.0).abs() < 1e-18);
        assert_eq!(fractional_anisotropy_of([1e-3; 3]), 0.0);
        assert!((fractional_anisotropy_of([1.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(fractional_anisotropy_of([0.0; 3]), 0.0);
        assert_eq!(fractional_anisotropy_of([-1.0, -2.0, -3.0]), 0.0);
    }

    #[test]
    fn helix_angle_definition() {
        let c = [0.0, 1.0, 0.0];
        let z = [0.0, 0.0, 1.0];
        assert_eq!(helix_angle_deg(c, c, z), 0.0);
        assert_eq!(helix_angle_deg(z, c, z), 90.0);
        assert_eq!(helix_angle_deg([0.0, 0.0, -1.0], c, z), 90.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((helix_angle_deg([0.0, -s, -s], c, z) - 45.0).abs() < 1e-12);
        assert!((helix_angle_deg([0.0, s, -s], c, z) + 45.0).abs() < 1e-12);
    }

    #[test]
    fn circular_error_wraps() {
        assert!((circular_ha_error(89.0, -89.0) - 2.0).abs() < 1e-12);
        assert_eq!(circular_ha_error(10.0, 10.0), 0.0);
        assert!((circular_ha_error(-30.0, 40.0) - 70.0).abs() < 1e-12);
    }

    fn isotropic_case(d: f64, n_dirs: usize) -> DwiCase {
        let dims = [1, 2, 2];
        let s0 = Volume::filled(dims, 1.0, [1.0; 3]).unwrap();
        let iso = [[d, 0.0, 0.0], [0.0, d, 0.0], [0.0, 0.0, d]];
        let field = TensorField::new(dims, [1.0; 3], &[iso; 4], vec![true; 4]).unwrap();
        let dwis = make_direction_set(n_dirs.max(6), 0)
            .unwrap()
            .into_iter()
            .take(n_dirs)
            .map(|g| synthesize_dwi(&field, &s0, 500.0, g).unwrap())
            .collect();
        DwiCase::new("iso", DwiImage::reference(s0), dwis, None).unwrap()
    }

    #[test]
    fn isotropic_fit() {
        let t = fit_tensor(&isotropic_case(1e-3, 6), None).unwrap();
        for i in 0..4 {
            let d = t.tensor(i);
            for r in 0..3 {
                for c in 0..3 {
                    let e = if r == c { 1e-3 } else { 0.0 };
                    assert!((d[r][c] - e).abs() < 1e-9 * 1e-3);
                }
            }
        }
        let fa_map = fa(&t).unwrap();
        assert!(fa_map.data().iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn too_few_directions_is_config_error() {
        let err = fit_tensor(&isotropic_case(1e-3, 5), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn coplanar_directions_are_rank_deficient() {
        let dims = [1, 1, 1];
        let s0 = Volume::filled(dims, 1.0, [1.0; 3]).unwrap();
        let dwis = (0..8)
            .map(|k| {
                let a = k as f64 * 0.4;
                DwiImage::new(s0.clone(), 500.0, [a.cos(), a.sin(), 0.0]).unwrap()
            })
            .collect();
        let case = DwiCase::new("flat", DwiImage::reference(s0), dwis, None).unwrap();
        let err = fit_tensor(&case, None).unwrap_err().to_string();
        assert!(err.contains("rank") && err.contains("g=["), "{err}");
    }

    #[test]
    fn nonpositive_signal_is_masked() {
        let mut case = isotropic_case(1e-3, 6);
        let mut data = case.dwis[2].volume.data().to_vec();
        data[1] = 0.0;
        case.dwis[2].volume = case.dwis[2].volume.with_data(data).unwrap();
        let t = fit_tensor(&case, None).unwrap();
        assert_eq!(t.mask, vec![true, false, true, true]);
    }

    #[test]
    fn compare_identical_maps_is_zero() {
        let v = Volume::new([1, 1, 3], vec![1e-3, 2e-3, 3e-3], [1.0; 3], 1.0).unwrap();
        let maps = Maps {
            md: v.clone(),
            fa: v.clone(),
            ha: v,
            mask: vec![true; 3],
        };
        let c = compare_maps(&maps, &maps, &[true; 3]).unwrap();
        assert_eq!(c.md.mae, 0.0);
        assert_eq!(c.fa.p95, 0.0);
        assert_eq!(c.ha_deg.mae, 0.0);
        assert_eq!(c.md.voxels, 3);
    }
}
