//! Seeded synthetic segmentation corpora: elliptical blobs on noisy
//! backgrounds, with variants that stress specific failure modes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, Provenance, Sample};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Challenge {
    #[default]
    Clean,
    /// Blob radius spans a 4× range.
    ScaleVary,
    /// Low foreground/background contrast with a blurred edge.
    FaintBoundary,
    /// Sinusoidal background texture plus heavy noise.
    Perturbed,
    /// Small bright discs that are not part of the mask.
    Outliers,
    /// Foreground is the complement of the blob and covers most pixels.
    MajorityClass,
}

impl Challenge {
    pub const ALL: [Challenge; 6] = [
        Challenge::Clean,
        Challenge::ScaleVary,
        Challenge::FaintBoundary,
        Challenge::Perturbed,
        Challenge::Outliers,
        Challenge::MajorityClass,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Challenge::Clean => "clean",
            Challenge::ScaleVary => "scale_vary",
            Challenge::FaintBoundary => "faint_boundary",
            Challenge::Perturbed => "perturbed",
            Challenge::Outliers => "outliers",
            Challenge::MajorityClass => "majority_class",
        }
    }

    /// Accepted range of mask foreground fraction.
    pub fn coverage_range(self) -> (f64, f64) {
        match self {
            Challenge::MajorityClass => (0.6, 1.0),
            Challenge::ScaleVary => (0.005, 0.4),
            _ => (0.05, 0.4),
        }
    }

    fn radius_range(self) -> (f64, f64) {
        match self {
            Challenge::ScaleVary => (0.07, 0.28),
            _ => (0.15, 0.28),
        }
    }
}

impl fmt::Display for Challenge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Challenge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Challenge::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown challenge `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub extents: [usize; 2],
    pub channels: usize,
    pub challenge: Challenge,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n: usize, extents: [usize; 2], challenge: Challenge, seed: u64) -> Self {
        SynthSpec {
            n,
            extents,
            channels: 1,
            challenge,
            seed,
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    theta: f64,
}

impl Ellipse {
    fn draw(rng: &mut ChaCha8Rng, h: usize, w: usize, radius: (f64, f64)) -> Self {
        let side = h.min(w) as f64;
        let r = rng.gen_range(radius.0..=radius.1) * side;
        let aspect = rng.gen_range(0.7..=1.3);
        Ellipse {
            cy: rng.gen_range(0.3..=0.7) * h as f64,
            cx: rng.gen_range(0.3..=0.7) * w as f64,
            ry: r,
            rx: r * aspect,
            theta: rng.gen_range(0.0..std::f64::consts::PI),
        }
    }

    /// Normalized radial distance of a pixel center; `<= 1` is inside.
    fn distance(&self, y: usize, x: usize) -> f64 {
        let (dy, dx) = (y as f64 + 0.5 - self.cy, x as f64 + 0.5 - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }
}

struct Drawn {
    image: Vec<f64>,
    mask: Vec<bool>,
    distractors: Vec<usize>,
}

fn draw_sample(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Option<Drawn> {
    let [h, w] = spec.extents;
    let c = spec.channels;
    let challenge = spec.challenge;
    let blob = Ellipse::draw(rng, h, w, challenge.radius_range());
    let dist: Vec<f64> = (0..h * w).map(|i| blob.distance(i / w, i % w)).collect();
    let inside: Vec<bool> = dist.iter().map(|&d| d <= 1.0).collect();
    let mask: Vec<bool> = match challenge {
        Challenge::MajorityClass => inside.iter().map(|&b| !b).collect(),
        _ => inside.clone(),
    };
    let fraction = mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64;
    let (lo, hi) = challenge.coverage_range();
    if fraction < lo || fraction > hi {
        return None;
    }

    let (bg, fg, sigma) = match challenge {
        Challenge::FaintBoundary => (0.4, 0.6, 0.05),
        Challenge::Perturbed => (0.2, 0.8, 0.12),
        Challenge::MajorityClass => (0.8, 0.2, 0.05),
        _ => (0.2, 0.8, 0.05),
    };
    let mut base: Vec<f64> = match challenge {
        Challenge::FaintBoundary => {
            let edge = 0.08;
            dist.iter()
                .map(|&d| bg + (fg - bg) / (1.0 + ((d - 1.0) / edge).exp()))
                .collect()
        }
        _ => inside.iter().map(|&b| if b { fg } else { bg }).collect(),
    };
    if challenge == Challenge::Perturbed {
        let (fy, fx) = (rng.gen_range(2.0..6.0), rng.gen_range(2.0..6.0));
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (i, v) in base.iter_mut().enumerate() {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            let tex = (std::f64::consts::TAU * (fy * y + fx * x) + phase).sin();
            *v += 0.15 * tex;
        }
    }

    let mut distractors = Vec::new();
    if challenge == Challenge::Outliers {
        let count = rng.gen_range(3..=6);
        let mut placed = 0;
        for _ in 0..MAX_ATTEMPTS {
            if placed == count {
                break;
            }
            let r = rng.gen_range(2..=3) as isize;
            let cy = rng.gen_range(r..h as isize - r);
            let cx = rng.gen_range(r..w as isize - r);
            let disc: Vec<usize> = (-r..=r)
                .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
                .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
                .map(|(dy, dx)| ((cy + dy) as usize) * w + (cx + dx) as usize)
                .collect();
            let near_mask = (-r - 1..=r + 1).any(|dy| {
                (-r - 1..=r + 1).any(|dx| {
                    let (y, x) = (cy + dy, cx + dx);
                    y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize]
                })
            });
            if near_mask || disc.iter().any(|p| distractors.contains(p)) {
                continue;
            }
            for &p in &disc {
                base[p] = 0.95;
            }
            distractors.extend(disc);
            placed += 1;
        }
        if placed < 3 {
            return None;
        }
        distractors.sort_unstable();
    }

    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let mut image = Vec::with_capacity(h * w * c);
    for &v in &base {
        for _ in 0..c {
            image.push((v + noise.sample(rng)).clamp(0.0, 1.0));
        }
    }
    Some(Drawn {
        image,
        mask,
        distractors,
    })
}

/// Generates `spec.n` samples. Sample `i` depends only on `(seed, i)`.
pub fn synth_generate<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>> {
    let [h, w] = spec.extents;
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(Error::InvalidShape(format!(
            "synthetic extents {h}x{w} must be positive multiples of 16"
        )));
    }
    if spec.channels == 0 {
        return Err(Error::InvalidShape("synthetic images need at least one channel".into()));
    }
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let drawn = (0..MAX_ATTEMPTS)
            .find_map(|_| draw_sample(&mut rng, spec))
            .ok_or_else(|| Error::Config(format!("could not draw sample {i} for {}", spec.challenge)))?;
        let image = Tensor::new(
            vec![h, w, spec.channels],
            drawn.image.into_iter().map(T::from_f64_lossy).collect(),
        )?;
        let mask = BinaryMask::new(vec![h, w, 1], drawn.mask)?;
        let mut s = Sample::new(format!("{}_{i:04}", spec.challenge), image, mask)?;
        s.provenance = Provenance {
            source: format!("synth:{}:seed={}", spec.challenge, spec.seed),
            distractors: drawn.distractors,
        };
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generate(challenge: Challenge, n: usize, seed: u64) -> Dataset<f32> {
        synth_generate(&SynthSpec::new(n, [64, 64], challenge, seed)).unwrap()
    }

    #[test]
    fn clean_audit() {
        let ds = generate(Challenge::Clean, 4, 7);
        assert_eq!(ds.len(), 4);
        for s in &ds {
            s.validate().unwrap();
            let f = s.foreground_fraction();
            assert!((0.05..=0.4).contains(&f), "{f}");
        }
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let a = generate(Challenge::Perturbed, 5, 3);
        let b = generate(Challenge::Perturbed, 3, 3);
        assert_eq!(a[..3], b[..]);
        assert_ne!(a[0], generate(Challenge::Perturbed, 1, 4)[0]);
    }

    #[test]
    fn outliers_are_outside_the_mask() {
        for s in generate(Challenge::Outliers, 8, 11) {
            assert!(!s.provenance.distractors.is_empty());
            for &p in &s.provenance.distractors {
                assert!(!s.mask.bits()[p]);
                assert!(s.image.data()[p] > 0.7);
            }
        }
    }

    #[test]
    fn majority_class_covers_most_pixels() {
        let ds = generate(Challenge::MajorityClass, 10, 5);
        let mean = ds.iter().map(|s| s.foreground_fraction()).sum::<f64>() / ds.len() as f64;
        assert!(mean > 0.6, "{mean}");
    }

    #[test]
    fn scale_vary_spans_a_wide_range() {
        let ds = generate(Challenge::ScaleVary, 40, 2);
        let fr: Vec<f64> = ds.iter().map(|s| s.foreground_fraction()).collect();
        let (lo, hi) = fr.iter().fold((1.0f64, 0.0f64), |(l, h), &f| (l.min(f), h.max(f)));
        assert!(hi / lo > 4.0, "{lo} {hi}");
    }

    #[test]
    fn faint_boundary_has_low_contrast() {
        let s = &generate(Challenge::FaintBoundary, 1, 1)[0];
        let (mut fg, mut bg) = (Vec::new(), Vec::new());
        for (&v, &m) in s.image.data().iter().zip(s.mask.bits()) {
            if m { fg.push(v) } else { bg.push(v) }
        }
        let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
        let gap = mean(&fg) - mean(&bg);
        assert!(gap > 0.05 && gap < 0.25, "{gap}");
    }

    #[test]
    fn multichannel_and_bad_extents() {
        let spec = SynthSpec::new(1, [32, 48], Challenge::Clean, 0).with_channels(3);
        let ds = synth_generate::<f64>(&spec).unwrap();
        assert_eq!(ds[0].image.shape(), &[32, 48, 3]);
        let bad = SynthSpec::new(1, [30, 32], Challenge::Clean, 0);
        assert!(synth_generate::<f64>(&bad).is_err());
    }

    #[test]
    fn challenge_names_round_trip() {
        for c in Challenge::ALL {
            assert_eq!(c.as_str().parse::<Challenge>().unwrap(), c);
        }
        assert!("noisy".parse::<Challenge>().is_err());
    }
}
