//! Volume data model, the RVOL binary format and per-case intensity
//! normalization.
//!
//! An RVOL file is a fixed 36-byte little-endian header followed by the
//! voxel payload as 32-bit floats in z-major, then y, then x order:
//!
//! | bytes  | content                                |
//! |--------|----------------------------------------|
//! | 0..6   | magic `RVOL1\0`                        |
//! | 6..8   | reserved, zero                         |
//! | 8..20  | dims z, y, x (`u32`)                   |
//! | 20..32 | spacing z, y, x in mm (`f32`)          |
//! | 32..36 | intensity scale (`f32`)                |
//! | 36..   | `z * y * x` voxel values (`f32`)       |
//!
//! In memory voxels are held as `f64`, so a write/read round trip is exact
//! for any volume whose values are representable in `f32`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::PhantomGeometry;

pub const RVOL_MAGIC: [u8; 6] = *b"RVOL1\0";
pub const RVOL_HEADER_LEN: usize = 36;

/// A 3D scalar field indexed `(z, y, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f64>,
    spacing_mm: [f64; 3],
    intensity_scale: f64,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        data: Vec<f64>,
        spacing_mm: [f64; 3],
        intensity_scale: f64,
    ) -> Result<Self> {
        let vol = Volume {
            dims,
            data,
            spacing_mm,
            intensity_scale,
        };
        vol.validate()?;
        Ok(vol)
    }

    pub fn filled(dims: [usize; 3], value: f64, spacing_mm: [f64; 3]) -> Result<Self> {
        Self::new(dims, vec![value; dims.iter().product()], spacing_mm, 1.0)
    }

    /// Checks every invariant: non-empty dims matching the payload, finite
    /// values, positive spacing and scale.
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Validation(format!(
                "volume dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        let n: usize = self.dims.iter().product();
        if n != self.data.len() {
            return Err(Error::Validation(format!(
                "dims {:?} need {} values, payload has {}",
                self.dims,
                n,
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite voxel value {} at index {}",
                self.data[i], i
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Validation(format!(
                "spacing must be positive, got {:?}",
                self.spacing_mm
            )));
        }
        if !(self.intensity_scale > 0.0 && self.intensity_scale.is_finite()) {
            return Err(Error::Validation(format!(
                "intensity scale must be positive, got {}",
                self.intensity_scale
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn intensity_scale(&self) -> f64 {
        self.intensity_scale
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(z, y, x)]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    /// The 2D slice at `z`, row-major `(y, x)`.
    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    /// Replaces the payload, keeping geometry and scale. The result is
    /// re-validated.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Volume::new(self.dims, data, self.spacing_mm, self.intensity_scale)
    }

    pub fn with_geometry(
        &self,
        dims: [usize; 3],
        data: Vec<f64>,
        spacing_mm: [f64; 3],
    ) -> Result<Self> {
        Volume::new(dims, data, spacing_mm, self.intensity_scale)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn set_intensity_scale(&mut self, s: f64) {
        self.intensity_scale = s;
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing_mm == other.spacing_mm
    }

    /// Index of the largest value (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Serializes a volume into RVOL bytes.
pub fn encode_volume(vol: &Volume) -> Result<Vec<u8>> {
    vol.validate()?;
    if let Some(i) = vol.data.iter().position(|&v| !(v as f32).is_finite()) {
        return Err(Error::Validation(format!(
            "voxel {} ({}) overflows 32-bit storage",
            i, vol.data[i]
        )));
    }
    let mut out = Vec::with_capacity(RVOL_HEADER_LEN + 4 * vol.data.len());
    out.extend_from_slice(&RVOL_MAGIC);
    out.extend_from_slice(&[0, 0]);
    for d in vol.dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::Validation(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in vol.spacing_mm {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out.extend_from_slice(&(vol.intensity_scale as f32).to_le_bytes());
    for &v in &vol.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            offset,
            message: "unexpected end of header".into(),
        })
}

fn read_f32(bytes: &[u8], offset: usize) -> Result<f32> {
    read_u32(bytes, offset).map(f32::from_bits)
}

/// Parses RVOL bytes into a validated volume.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 6 || bytes[..6] != RVOL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected RVOL1\\0".into(),
        });
    }
    if bytes.len() < RVOL_HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("header truncated ({} of {RVOL_HEADER_LEN} bytes)", bytes.len()),
        });
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::Format {
            offset: 6,
            message: "reserved bytes must be zero".into(),
        });
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = read_u32(bytes, 8 + 4 * i)? as usize;
        if *d == 0 {
            return Err(Error::Format {
                offset: 8 + 4 * i,
                message: "zero dimension".into(),
            });
        }
    }
    let mut spacing = [0f64; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        *s = read_f32(bytes, 20 + 4 * i)? as f64;
    }
    let scale = read_f32(bytes, 32)? as f64;

    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format {
            offset: 8,
            message: "dimension product overflows".into(),
        })?;
    let expected = RVOL_HEADER_LEN + 4 * n;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected),
            message: format!("payload length mismatch: file has {} bytes, dims need {expected}", bytes.len()),
        });
    }
    let data = bytes[RVOL_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Volume::new(dims, data, spacing, scale)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

/// Writes a volume; nothing is written when validation fails.
pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(vol)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One diffusion-weighted image: a volume tagged with its b-value
/// (s/mm²) and gradient direction `[x, y, z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DwiImage {
    pub volume: Volume,
    pub b_value: f64,
    pub direction: [f64; 3],
}

impl DwiImage {
    pub fn new(volume: Volume, b_value: f64, direction: [f64; 3]) -> Result<Self> {
        let img = DwiImage {
            volume,
            b_value,
            direction,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn reference(volume: Volume) -> Self {
        DwiImage {
            volume,
            b_value: 0.0,
            direction: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_value >= 0.0 && self.b_value.is_finite()) {
            return Err(Error::Validation(format!(
                "b-value must be >= 0, got {}",
                self.b_value
            )));
        }
        if self.b_value > 0.0 {
            let norm = self.direction.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "gradient direction must be unit length, |g| = {norm}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_volume(&self, volume: Volume) -> Self {
        DwiImage {
            volume,
            b_value: self.b_value,
            direction: self.direction,
        }
    }
}

/// JSON sidecar stored next to each RVOL file of a case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub case_id: String,
    pub b_value: f64,
    pub direction: [f64; 3],
}

/// One heart: the b0 reference plus its diffusion-weighted series.
#[derive(Clone, Debug, PartialEq)]
pub struct DwiCase {
    pub case_id: String,
    pub b0: DwiImage,
    pub dwis: Vec<DwiImage>,
    pub geometry: Option<PhantomGeometry>,
}

impl DwiCase {
    pub fn new(
        case_id: impl Into<String>,
        b0: DwiImage,
        dwis: Vec<DwiImage>,
        geometry: Option<PhantomGeometry>,
    ) -> Result<Self> {
        let case = DwiCase {
            case_id: case_id.into(),
            b0,
            dwis,
            geometry,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b0.b_value != 0.0 {
            return Err(Error::Validation(format!(
                "case {}: reference image must have b = 0",
                self.case_id
            )));
        }
        if self.dwis.is_empty() {
            return Err(Error::Validation(format!(
                "case {}: no diffusion-weighted images",
                self.case_id
            )));
        }
        for dwi in &self.dwis {
            dwi.validate()?;
            if !dwi.volume.same_grid(&self.b0.volume) {
                return Err(Error::Validation(format!(
                    "case {}: volume grid {:?}/{:?} differs from b0 {:?}/{:?}",
                    self.case_id,
                    dwi.volume.dims(),
                    dwi.volume.spacing_mm(),
                    self.b0.volume.dims(),
                    self.b0.volume.spacing_mm()
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.b0.volume.dims()
    }

    /// Distinct b-values of the weighted images, ascending.
    pub fn b_values(&self) -> Vec<f64> {
        let mut bs: Vec<f64> = self.dwis.iter().map(|d| d.b_value).collect();
        bs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bs.dedup();
        bs
    }

    pub fn dwis_at(&self, b_value: f64) -> impl Iterator<Item = &DwiImage> {
        self.dwis.iter().filter(move |d| d.b_value == b_value)
    }

    /// A copy keeping only the DWIs whose b-value is listed.
    pub fn select_b_values(&self, b_values: &[f64]) -> Result<Self> {
        DwiCase::new(
            self.case_id.clone(),
            self.b0.clone(),
            self.dwis
                .iter()
                .filter(|d| b_values.contains(&d.b_value))
                .cloned()
                .collect(),
            self.geometry.clone(),
        )
    }
}

/// How intensities are rescaled before entering the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// One factor per case taken from the b0 volume.
    #[default]
    PerCase,
    /// One factor per slice index taken from the matching b0 slice. Ratios
    /// between images stay intact, but `intensity_scale` is not updated.
    PerSlice,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (pct / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let t = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * t
}

/// Divides every volume of the case by the `pct`-th percentile of the b0
/// volume and folds the factor into `intensity_scale`.
pub fn normalize_case(case: &DwiCase, pct: f64) -> Result<DwiCase> {
    normalize_case_with(case, pct, NormalizeMode::PerCase)
}

pub fn normalize_case_with(case: &DwiCase, pct: f64, mode: NormalizeMode) -> Result<DwiCase> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::Config(format!("percentile must be in (0, 100], got {pct}")));
    }
    let b0 = &case.b0.volume;
    if !b0.data().iter().any(|&v| v > 0.0) {
        return Err(Error::Degenerate(format!(
            "case {}: b0 volume has no positive value",
            case.case_id
        )));
    }
    let factors: Vec<f64> = match mode {
        NormalizeMode::PerCase => {
            let s = percentile(b0.data(), pct);
            if s <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "case {}: b0 {pct}th percentile is {s}",
                    case.case_id
                )));
            }
            vec![s; b0.dims()[0]]
        }
        NormalizeMode::PerSlice => (0..b0.dims()[0])
            .map(|z| {
                let s = percentile(b0.slice(z), pct);
                if s > 0.0 { s } else { 1.0 }
            })
            .collect(),
    };
    let rescale = |vol: &Volume| -> Result<Volume> {
        let n = vol.slice_len();
        let data = vol
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v / factors[i / n])
            .collect();
        let mut out = vol.with_data(data)?;
        if mode == NormalizeMode::PerCase {
            out.set_intensity_scale(vol.intensity_scale() * factors[0]);
        }
        Ok(out)
    };
    Ok(DwiCase {
        case_id: case.case_id.clone(),
        b0: case.b0.with_volume(rescale(&case.b0.volume)?),
        dwis: case
            .dwis
            .iter()
            .map(|d| Ok(d.with_volume(rescale(&d.volume)?)))
            .collect::<Result<_>>()?,
        geometry: case.geometry.clone(),
    })
}

fn dwi_stem(index: usize, dwi: &DwiImage) -> String {
    format!("dwi_b{:04}_d{index:03}", dwi.b_value.round() as i64)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `b0.rvol`, `dwi_b<b>_d<i>.rvol` and their sidecars, plus
/// `geometry.json` when present, into `dir`.
pub fn write_case(case: &DwiCase, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_one = |stem: &str, img: &DwiImage| -> Result<()> {
        write_volume(&img.volume, dir.join(format!("{stem}.rvol")))?;
        write_json(
            &Sidecar {
                case_id: case.case_id.clone(),
                b_value: img.b_value,
                direction: img.direction,
            },
            &dir.join(format!("{stem}.json")),
        )
    };
    write_one("b0", &case.b0)?;
    for (i, dwi) in case.dwis.iter().enumerate() {
        write_one(&dwi_stem(i, dwi), dwi)?;
    }
    if let Some(geom) = &case.geometry {
        write_json(geom, &dir.join("geometry.json"))?;
    }
    Ok(())
}

/// Reads a case directory written by [`write_case`]. DWIs are ordered by
/// file name.
pub fn read_case(dir: impl AsRef<Path>) -> Result<DwiCase> {
    let dir = dir.as_ref();
    let read_one = |stem: &Path| -> Result<(DwiImage, String)> {
        let volume = read_volume(stem.with_extension("rvol"))?;
        let side: Sidecar = read_json(&stem.with_extension("json"))?;
        Ok((DwiImage::new(volume, side.b_value, side.direction)?, side.case_id))
    };
    let (b0, case_id) = read_one(&dir.join("b0"))?;
    let mut stems: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "rvol")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("dwi_"))
        })
        .map(|p| p.with_extension(""))
        .collect();
    stems.sort();
    let dwis = stems
        .iter()
        .map(|s| read_one(s).map(|(img, _)| img))
        .collect::<Result<Vec<_>>>()?;
    let geom_path = dir.join("geometry.json");
    let geometry = if geom_path.exists() {
        Some(read_json(&geom_path)?)
    } else {
        None
    };
    DwiCase::new(case_id, b0, dwis, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 3], data: Vec<f64>) -> Volume {
        Volume::new(dims, data, [1.5; 3], 1.0).unwrap()
    }

    #[test]
    fn one_voxel_payload_is_four_bytes() {
        let bytes = encode_volume(&vol([1, 1, 1], vec![1.0])).unwrap();
        assert_eq!(bytes.len(), RVOL_HEADER_LEN + 4);
        assert_eq!(&bytes[RVOL_HEADER_LEN..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = encode_volume(&vol([1, 1, 2], vec![1.0, 2.0])).unwrap();
        bytes[0] = b'X';
        match decode_volume(&bytes) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = encode_volume(&vol([1, 2, 2], vec![1.0; 4])).unwrap();
        match decode_volume(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() - 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_payload_is_validation_error() {
        let mut bytes = encode_volume(&vol([1, 1, 1], vec![1.0])).unwrap();
        bytes[RVOL_HEADER_LEN..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_volume(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn nan_volume_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rvol");
        let bad = Volume {
            dims: [1, 1, 1],
            data: vec![f64::NAN],
            spacing_mm: [1.0; 3],
            intensity_scale: 1.0,
        };
        assert!(matches!(write_volume(&bad, &path), Err(Error::Validation(_))));
        assert!(!path.exists());
    }

    #[test]
    fn volume_invariants() {
        assert!(Volume::new([0, 1, 1], vec![], [1.0; 3], 1.0).is_err());
        assert!(Volume::new([1, 1, 1], vec![0.0], [0.0, 1.0, 1.0], 1.0).is_err());
        assert!(Volume::new([1, 1, 1], vec![0.0], [1.0; 3], 0.0).is_err());
        assert!(Volume::new([1, 1, 2], vec![0.0], [1.0; 3], 1.0).is_err());
    }

    #[test]
    fn direction_must_be_unit_when_weighted() {
        let v = vol([1, 1, 1], vec![1.0]);
        assert!(DwiImage::new(v.clone(), 500.0, [1.0, 1.0, 0.0]).is_err());
        assert!(DwiImage::new(v.clone(), 0.0, [0.0; 3]).is_ok());
        assert!(DwiImage::new(v, 500.0, [0.6, 0.8, 0.0]).is_ok());
    }

    fn toy_case(b0: Vec<f64>, dwi: Vec<f64>) -> DwiCase {
        let n = b0.len();
        DwiCase::new(
            "toy",
            DwiImage::reference(vol([1, 1, n], b0)),
            vec![DwiImage::new(vol([1, 1, n], dwi), 500.0, [0.0, 0.0, 1.0]).unwrap()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn normalization_halves_when_percentile_is_two() {
        let case = toy_case(vec![2.0; 8], vec![1.0; 8]);
        let out = normalize_case(&case, 99.5).unwrap();
        assert!(out.b0.volume.data().iter().all(|&v| v == 1.0));
        assert!(out.dwis[0].volume.data().iter().all(|&v| v == 0.5));
        assert_eq!(out.b0.volume.intensity_scale(), 2.0);
        assert_eq!(out.dwis[0].volume.intensity_scale(), 2.0);
    }

    #[test]
    fn normalized_case_is_unchanged() {
        let case = toy_case(vec![1.0; 4], vec![0.3, 0.5, 0.2, 0.1]);
        assert_eq!(normalize_case(&case, 99.5).unwrap(), case);
    }

    #[test]
    fn all_zero_b0_is_degenerate() {
        let case = toy_case(vec![0.0; 4], vec![0.3; 4]);
        assert!(matches!(normalize_case(&case, 99.5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&v, 50.0), 2.5);
        assert!((percentile(&v, 100.0 / 3.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn case_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let case = toy_case(vec![1.0, 0.5, 0.25, 2.0], vec![0.5, 0.25, 0.125, 1.0]);
        write_case(&case, dir.path()).unwrap();
        assert!(dir.path().join("dwi_b0500_d000.json").exists());
        assert_eq!(read_case(dir.path()).unwrap(), case);
    }
}
