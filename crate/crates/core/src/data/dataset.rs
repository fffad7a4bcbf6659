//! Image/mask samples and on-disk dataset directories.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::netpbm::parse_netpbm;
use crate::data::resize::{resize, Interpolation};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mask pixels at or above this 8-bit value are foreground.
pub const MASK_LOAD_THRESHOLD: u8 = 128;

/// Pixels flagged by the synthetic generator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: String,
    /// Flat `y·W + x` positions of injected non-mask distractors.
    pub distractors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    /// `[H, W, C]`, values in `[0, 1]`.
    pub image: Tensor<T>,
    /// `[H, W, 1]`.
    pub mask: BinaryMask,
    pub provenance: Provenance,
}

impl<T: Scalar> Sample<T> {
    pub fn new(id: impl Into<String>, image: Tensor<T>, mask: BinaryMask) -> Result<Self> {
        let s = Sample {
            id: id.into(),
            image,
            mask,
            provenance: Provenance::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (is, ms) = (self.image.shape(), self.mask.shape());
        if is.len() != 3 || ms.len() != 3 || ms[2] != 1 || is[..2] != ms[..2] {
            return Err(Error::Pairing(format!(
                "{}: image {is:?} and mask {ms:?} disagree",
                self.id
            )));
        }
        if !self.image.data().iter().all(|&v| v >= T::zero() && v <= T::one()) {
            return Err(Error::Domain(format!("{}: image values outside [0, 1]", self.id)));
        }
        Ok(())
    }

    pub fn extents(&self) -> [usize; 2] {
        [self.image.shape()[0], self.image.shape()[1]]
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.count() as f64 / self.mask.bits().len() as f64
    }

    /// Bilinear image, nearest-neighbour mask.
    pub fn resized(&self, extents: [usize; 2]) -> Result<Self> {
        let image = resize(&self.image, extents, Interpolation::Bilinear)?;
        let mask = resize(&self.mask.to_tensor::<T>(), extents, Interpolation::Nearest)?;
        Ok(Sample {
            id: self.id.clone(),
            image,
            mask: BinaryMask::from_tensor(&mask)?,
            provenance: self.provenance.clone(),
        })
    }
}

pub type Dataset<T> = Vec<Sample<T>>;

fn read_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let raw: Tensor<T> = if ext.eq_ignore_ascii_case("tnsr") {
        let t = Tensor::<T>::read_tnsr(&bytes[..])?;
        match t.rank() {
            2 => {
                let s = t.shape().to_vec();
                t.reshape(vec![s[0], s[1], 1])?
            }
            3 => t,
            r => return Err(Error::Format(format!("{}: TNSR image of rank {r}", path.display()))),
        }
    } else {
        let r = parse_netpbm(&bytes)?;
        Tensor::new(
            vec![r.height, r.width, r.channels],
            r.pixels.iter().map(|&p| T::from_f64_lossy(p as f64)).collect(),
        )?
    };
    let scale = T::from_f64_lossy(255.0);
    let img = raw.map(|v| v / scale);
    if !img.data().iter().all(|&v| v >= T::zero() && v <= T::one()) {
        return Err(Error::Format(format!("{}: intensities outside 0..=255", path.display())));
    }
    Ok(img)
}

fn read_mask(path: &Path) -> Result<BinaryMask> {
    let r = parse_netpbm(&fs::read(path)?)?;
    if r.channels != 1 {
        return Err(Error::Format(format!("{}: masks must be grayscale PGM", path.display())));
    }
    BinaryMask::new(
        vec![r.height, r.width, 1],
        r.pixels.iter().map(|&p| p >= MASK_LOAD_THRESHOLD).collect(),
    )
}

/// Reads an image (`.pgm`, `.ppm` or `.tnsr`, divided by 255) and its PGM mask.
pub fn load_sample<T: Scalar>(image_path: &Path, mask_path: &Path) -> Result<Sample<T>> {
    let image = read_image(image_path)?;
    let mask = read_mask(mask_path)?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut s = Sample::new(id, image, mask)?;
    s.provenance.source = image_path.display().to_string();
    Ok(s)
}

/// Loads `<root>/images/<id>.{pgm,ppm,tnsr}` with `<root>/masks/<id>.pgm`,
/// ordered by id, optionally resized to `extents`.
pub fn load_dataset<T: Scalar>(root: &Path, extents: Option<[usize; 2]>) -> Result<Dataset<T>> {
    let images = root.join("images");
    let masks = root.join("masks");
    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&images)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "ppm" | "tnsr")) {
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            entries.push((id, path));
        }
    }
    entries.sort();
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Pairing(format!("duplicate image id `{}`", w[0].0)));
    }
    let mut out = Vec::with_capacity(entries.len());
    for (id, path) in entries {
        let mask_path = masks.join(format!("{id}.pgm"));
        if !mask_path.exists() {
            return Err(Error::Pairing(format!("no mask for image `{id}`")));
        }
        let s = load_sample::<T>(&path, &mask_path)?;
        out.push(match extents {
            Some(e) => s.resized(e)?,
            None => s,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::netpbm::{encode_netpbm, Raster};

    fn write_pgm(path: &Path, w: usize, h: usize, px: &[u8]) {
        let r = Raster {
            width: w,
            height: h,
            channels: 1,
            pixels: px.to_vec(),
        };
        fs::write(path, encode_netpbm(&r).unwrap()).unwrap();
    }

    #[test]
    fn normalizes_and_thresholds() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = (dir.path().join("a.pgm"), dir.path().join("a_mask.pgm"));
        write_pgm(&ip, 2, 1, &[255, 0]);
        write_pgm(&mp, 2, 1, &[200, 10]);
        let s = load_sample::<f32>(&ip, &mp).unwrap();
        assert_eq!(s.image.data(), &[1.0, 0.0]);
        assert_eq!(s.mask.bits(), &[true, false]);
        assert_eq!(s.image.shape(), &[1, 2, 1]);
    }

    #[test]
    fn extent_mismatch_is_a_pairing_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = (dir.path().join("a.pgm"), dir.path().join("m.pgm"));
        write_pgm(&ip, 2, 1, &[1, 2]);
        write_pgm(&mp, 1, 2, &[1, 2]);
        assert!(matches!(load_sample::<f32>(&ip, &mp), Err(Error::Pairing(_))));
    }

    #[test]
    fn malformed_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("a.pgm");
        fs::write(&ip, b"P5\n2 1\n").unwrap();
        write_pgm(&dir.path().join("m.pgm"), 2, 1, &[0, 0]);
        assert!(matches!(
            load_sample::<f32>(&ip, &dir.path().join("m.pgm")),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn directory_layout_sorted_and_resized() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::create_dir_all(dir.path().join("masks")).unwrap();
        for id in ["b", "a", "c"] {
            write_pgm(&dir.path().join(format!("images/{id}.pgm")), 4, 4, &[128; 16]);
            write_pgm(&dir.path().join(format!("masks/{id}.pgm")), 4, 4, &[255; 16]);
        }
        let rgb = Tensor::<f32>::full(&[4, 4, 1], 51.0).unwrap();
        fs::write(dir.path().join("images/d.tnsr"), rgb.to_tnsr_bytes()).unwrap();
        write_pgm(&dir.path().join("masks/d.pgm"), 4, 4, &[0; 16]);
        let ds = load_dataset::<f32>(dir.path(), Some([8, 8])).unwrap();
        let ids: Vec<&str> = ds.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d"]);
        assert!(ds.iter().all(|s| s.extents() == [8, 8]));
        assert!((ds[3].image.data()[0] - 0.2).abs() < 1e-6);
        fs::remove_file(dir.path().join("masks/c.pgm")).unwrap();
        assert!(matches!(load_dataset::<f32>(dir.path(), None), Err(Error::Pairing(_))));
    }
}
