//! Seeded synthetic datasets with paired out-of-distribution sets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use packed_core::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DatasetHandle, Source, Split, Targets};
use crate::error::{HarnessError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Gaussian blobs on a circle; OOD is a ring at ten times the blob scale.
    Gaussians2d,
    /// Concentric noisy annuli, one per class; OOD is a ring at ten times the spacing.
    Rings,
    /// 16×16 seven-segment digit images; OOD is a ring whose radius is ten stroke widths.
    Digits,
}

impl FromStr for Regime {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussians-2d" => Ok(Regime::Gaussians2d),
            "rings" => Ok(Regime::Rings),
            "digits" => Ok(Regime::Digits),
            other => Err(HarnessError::Config(format!(
                "unknown synthetic regime '{other}' (expected gaussians-2d, rings or digits)"
            ))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Gaussians2d => "gaussians-2d",
            Regime::Rings => "rings",
            Regime::Digits => "digits",
        })
    }
}

/// Generator knobs; the defaults are what the CLI uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub classes: usize,
    /// Distance of the blob centres from the origin (2-D regimes).
    pub separation: f64,
    /// Probability that a digit segment is toggled (label noise for the image regime).
    pub segment_flip: f64,
    /// Short random strokes added to every image (ID and OOD alike).
    pub clutter: usize,
    pub image_size: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            classes: 3,
            separation: 4.0,
            segment_flip: 0.01,
            clutter: 0,
            image_size: 16,
        }
    }
}

pub const BLOB_SCALE: f64 = 1.0;
pub const OOD_SCALE: f64 = 10.0;
const STROKE: f64 = 0.75;
const PIXEL_NOISE: f64 = 0.15;
const VAL_FRAC: f64 = 0.1;
const TEST_FRAC: f64 = 0.2;

/// `n` labelled samples split into train/val/test, plus `n_ood` OOD inputs.
pub fn synth_classification(seed: u64, n: usize, regime: Regime) -> Result<(DatasetHandle, Tensor)> {
    synth_classification_with(seed, n, n / 5, regime, SynthOptions::default())
}

pub fn synth_classification_with(
    seed: u64,
    n: usize,
    n_ood: usize,
    regime: Regime,
    opts: SynthOptions,
) -> Result<(DatasetHandle, Tensor)> {
    let mut r = rng(seed);
    let (all, ood) = match regime {
        Regime::Gaussians2d => {
            let k = opts.classes.max(2);
            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            let normal = Normal::new(0.0, BLOB_SCALE).expect("unit normal");
            let mut x = Vec::with_capacity(2 * n);
            for &l in &labels {
                let a = 2.0 * PI * l as f64 / k as f64;
                x.push(opts.separation * a.cos() + normal.sample(&mut r));
                x.push(opts.separation * a.sin() + normal.sample(&mut r));
            }
            let ood = ring_points(n_ood, OOD_SCALE * BLOB_SCALE, 0.5 * BLOB_SCALE, &mut r);
            (Split::new(Tensor::new(vec![n, 2], x)?, Targets::Classes { labels, num_classes: k })?, ood)
        }
        Regime::Rings => {
            let k = opts.classes.max(2);
            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            let mut x = Vec::with_capacity(2 * n);
            let normal = Normal::new(0.0, 0.15 * BLOB_SCALE).expect("normal");
            for &l in &labels {
                let a = r.gen_range(0.0..2.0 * PI);
                let rad = (l + 1) as f64 * BLOB_SCALE + normal.sample(&mut r);
                x.push(rad * a.cos());
                x.push(rad * a.sin());
            }
            let ood = ring_points(n_ood, OOD_SCALE * BLOB_SCALE, 0.15 * BLOB_SCALE, &mut r);
            (Split::new(Tensor::new(vec![n, 2], x)?, Targets::Classes { labels, num_classes: k })?, ood)
        }
        Regime::Digits => {
            let s = opts.image_size;
            let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..10)).collect();
            let mut x = Vec::with_capacity(n * s * s);
            for &l in &labels {
                x.extend(render_digit(l, s, &opts, &mut r));
            }
            let mut ood = Vec::with_capacity(n_ood * s * s);
            for _ in 0..n_ood {
                ood.extend(render_ring(s, &opts, &mut r));
            }
            (
                Split::new(Tensor::new(vec![n, 1, s, s], x)?, Targets::Classes { labels, num_classes: 10 })?,
                Tensor::new(vec![n_ood, 1, s, s], ood)?,
            )
        }
    };
    let source = Source::Synthetic {
        generator: regime.to_string(),
        seed,
    };
    Ok((DatasetHandle::from_split(all, VAL_FRAC, TEST_FRAC, seed ^ 0x5EED, source)?, ood))
}

fn ring_points<R: Rng>(n: usize, radius: f64, width: f64, r: &mut R) -> Tensor {
    let normal = Normal::new(0.0, width).expect("normal");
    let mut x = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let a = r.gen_range(0.0..2.0 * PI);
        let rad = radius + normal.sample(r);
        x.push(rad * a.cos());
        x.push(rad * a.sin());
    }
    Tensor::new(vec![n, 2], x).expect("ring shape")
}

/// Seven-segment layout `a b c d e f g` in glyph coordinates `[0,1]²` (y down).
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.5), (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (1.0, 0.5)),
];

const DIGITS: [[bool; 7]; 10] = {
    const T: bool = true;
    const F: bool = false;
    [
        [T, T, T, T, T, T, F],
        [F, T, T, F, F, F, F],
        [T, T, F, T, T, F, T],
        [T, T, T, T, F, F, T],
        [F, T, T, F, F, T, T],
        [T, F, T, T, F, T, T],
        [T, F, T, T, T, T, T],
        [T, T, T, F, F, F, F],
        [T, T, T, T, T, T, T],
        [T, T, T, T, F, T, T],
    ]
};

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Stroke intensity at pixel centre `p` for line segments given in pixel coordinates.
fn stroke_image(size: usize, strokes: &[((f64, f64), (f64, f64))], width: f64) -> Vec<f64> {
    (0..size * size)
        .map(|i| {
            let p = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            let d = strokes
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * width * width)).exp()
        })
        .collect()
}

/// Adds clutter strokes and pixel noise, then clamps to `[0, 1]`.
fn finish<R: Rng>(mut img: Vec<f64>, size: usize, opts: &SynthOptions, r: &mut R) -> Vec<f64> {
    let s = size as f64;
    let strokes: Vec<_> = (0..opts.clutter)
        .map(|_| {
            let a = (r.gen_range(0.0..s), r.gen_range(0.0..s));
            let t = r.gen_range(0.0..2.0 * PI);
            let len = r.gen_range(1.5..3.5);
            (a, (a.0 + len * t.cos(), a.1 + len * t.sin()))
        })
        .collect();
    let clutter = stroke_image(size, &strokes, STROKE);
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("normal");
    for (v, c) in img.iter_mut().zip(clutter) {
        *v = (v.max(c) + noise.sample(r)).clamp(0.0, 1.0);
    }
    img
}

fn render_digit<R: Rng>(digit: usize, size: usize, opts: &SynthOptions, r: &mut R) -> Vec<f64> {
    let s = size as f64;
    let (gw, gh) = (0.4 * s * r.gen_range(0.8..1.2), 0.6 * s * r.gen_range(0.8..1.2));
    let (cx, cy) = (s / 2.0 + r.gen_range(-1.5..1.5), s / 2.0 + r.gen_range(-1.5..1.5));
    let (sin, cos) = r.gen_range(-0.3f64..0.3).sin_cos();
    let shear = r.gen_range(-0.2..0.2);
    let width = STROKE * r.gen_range(0.8..1.2);
    let to_px = |(u, v): (f64, f64)| {
        let (x, y) = ((u - 0.5) * gw, (v - 0.5) * gh);
        let x = x - shear * y;
        (cx + cos * x - sin * y, cy + sin * x + cos * y)
    };
    let strokes: Vec<_> = (0..7)
        .filter(|&k| DIGITS[digit][k] ^ (r.gen::<f64>() < opts.segment_flip))
        .map(|k| (to_px(SEGMENTS[k].0), to_px(SEGMENTS[k].1)))
        .collect();
    finish(stroke_image(size, &strokes, width), size, opts, r)
}

/// A ring of radius `OOD_SCALE` stroke widths around a jittered centre.
fn render_ring<R: Rng>(size: usize, opts: &SynthOptions, r: &mut R) -> Vec<f64> {
    let s = size as f64;
    let (cx, cy) = (s / 2.0 + r.gen_range(-1.5..1.5), s / 2.0 + r.gen_range(-1.5..1.5));
    let radius = OOD_SCALE * STROKE * r.gen_range(0.9..1.1);
    let width = STROKE * r.gen_range(0.8..1.2);
    let img = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            let d = ((x - cx).hypot(y - cy) - radius).abs();
            (-d * d / (2.0 * width * width)).exp()
        })
        .collect();
    finish(img, size, opts, r)
}

/// `y = x³ + ε`, `x ~ U(−4, 4)`, `ε ~ N(0, 9)`; inputs `[N, 1]`.
pub fn synth_cubic(seed: u64, n: usize) -> Result<DatasetHandle> {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 3.0).expect("normal");
    let xs: Vec<f64> = (0..n).map(|_| r.gen_range(-4.0..4.0)).collect();
    let ys = xs.iter().map(|x| x * x * x + noise.sample(&mut r)).collect();
    let all = Split::new(Tensor::new(vec![n, 1], xs)?, Targets::Values(ys))?;
    let source = Source::Synthetic {
        generator: "cubic".into(),
        seed,
    };
    DatasetHandle::from_split(all, VAL_FRAC, TEST_FRAC, seed ^ 0x5EED, source)
}
