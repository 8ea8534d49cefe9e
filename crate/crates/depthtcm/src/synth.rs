//! Seeded synthetic depth scenes: a smooth low-order base surface with
//! elliptical quadric patches pasted on top. Patch boundaries create the
//! occlusion steps that make depth maps hard to compress, while patch
//! interiors and the base stay piecewise smooth — the regime the fringe
//! transform is designed for. Everything is driven by a ChaCha20 stream,
//! so a seed fully determines the scene.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::depth::DepthMap;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Number of elliptical patches pasted over the base surface.
    pub n_patches: usize,
    /// Probability that any given pixel is marked invalid.
    pub mask_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 128,
            height: 128,
            seed: 0,
            n_patches: 6,
            mask_fraction: 0.0,
        }
    }
}

struct Patch {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos_t: f64,
    sin_t: f64,
    offset: f64,
    curve_u: f64,
    curve_v: f64,
}

impl Patch {
    /// Local elliptical coordinates of a pixel; inside the patch iff
    /// u^2 + v^2 <= 1.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * self.cos_t + dy * self.sin_t) / self.rx;
        let v = (-dx * self.sin_t + dy * self.cos_t) / self.ry;
        (u, v)
    }

    fn surface(&self, u: f64, v: f64) -> f64 {
        self.offset + self.curve_u * u * u + self.curve_v * v * v
    }
}

/// Generates a depth map from the config. The same config always produces
/// the same map, bit for bit.
pub fn generate(cfg: &SynthConfig) -> DepthMap {
    assert!(cfg.width > 1 && cfg.height > 1, "scene needs at least 2x2 pixels");
    assert!(
        (0.0..=1.0).contains(&cfg.mask_fraction),
        "mask fraction {} outside [0, 1]",
        cfg.mask_fraction
    );
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // Smooth base: a bilinear sheet plus one gentle sinusoid. Slopes are
    // kept small enough that adjacent pixels never differ by more than a
    // few tenths of a unit.
    let a0 = rng.random_range(30.0..45.0);
    let a1 = rng.random_range(-5.0..5.0);
    let a2 = rng.random_range(-5.0..5.0);
    let a3 = rng.random_range(-2.0..2.0);
    let amp = rng.random_range(0.5..1.5);
    let fx = rng.random_range(0.3..1.2);
    let fy = rng.random_range(0.3..1.2);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let patches: Vec<Patch> = (0..cfg.n_patches)
        .map(|_| {
            let min_dim = cfg.width.min(cfg.height) as f64;
            let offset_mag = rng.random_range(4.0..10.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Patch {
                cx: rng.random_range(0.1..0.9) * cfg.width as f64,
                cy: rng.random_range(0.1..0.9) * cfg.height as f64,
                rx: rng.random_range(0.08..0.22) * min_dim,
                ry: rng.random_range(0.08..0.22) * min_dim,
                cos_t: theta.cos(),
                sin_t: theta.sin(),
                offset: sign * offset_mag,
                curve_u: rng.random_range(-1.0..1.0),
                curve_v: rng.random_range(-1.0..1.0),
            }
        })
        .collect();

    let wn = (cfg.width - 1) as f64;
    let hn = (cfg.height - 1) as f64;
    let values = Array2::from_shape_fn((cfg.height, cfg.width), |(y, x)| {
        let xn = x as f64 / wn;
        let yn = y as f64 / hn;
        let mut z = a0
            + a1 * xn
            + a2 * yn
            + a3 * xn * yn
            + amp * (std::f64::consts::TAU * (fx * xn + fy * yn) + phase).sin();
        // Painter's order: the last patch covering a pixel wins, so
        // overlapping patches occlude one another.
        for p in &patches {
            let (u, v) = p.local(x as f64, y as f64);
            if u * u + v * v <= 1.0 {
                z = a0 + a1 * xn + a2 * yn + a3 * xn * yn + p.surface(u, v);
            }
        }
        z
    });

    let valid = Array2::from_shape_fn((cfg.height, cfg.width), |_| {
        !(cfg.mask_fraction > 0.0 && rng.random_bool(cfg.mask_fraction))
    });

    DepthMap::new(values, valid).expect("shapes match by construction")
}

/// Fraction of 4-neighbor pixel pairs (both valid) whose depth difference
/// exceeds `threshold`. A piecewise-smooth scene scores near zero except
/// for the thin set of patch boundaries.
pub fn discontinuity_fraction(map: &DepthMap, threshold: f64) -> f64 {
    let (h, w) = map.values.dim();
    let mut pairs = 0usize;
    let mut jumps = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !map.valid[[y, x]] {
                continue;
            }
            if x + 1 < w && map.valid[[y, x + 1]] {
                pairs += 1;
                if (map.values[[y, x]] - map.values[[y, x + 1]]).abs() > threshold {
                    jumps += 1;
                }
            }
            if y + 1 < h && map.valid[[y + 1, x]] {
                pairs += 1;
                if (map.values[[y, x]] - map.values[[y + 1, x]]).abs() > threshold {
                    jumps += 1;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        jumps as f64 / pairs as f64
    }
}
