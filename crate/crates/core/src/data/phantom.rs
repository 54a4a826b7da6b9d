//! Synthetic MR-like slices: nested ellipses of distinct intensities over a
//! dark background, a faint band-limited texture inside the outer ellipse,
//! and a smooth multiplicative bias field. Each slice is normalized by its
//! own maximum.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

const BACKGROUND: f64 = 0.02;

/// One generated slice and the maximum it was divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Tensor<f32>,
    pub norm_max: f64,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }

    /// A random ellipse inside this one (its bounding circle fits in the
    /// inscribed circle of the parent).
    fn child(&self, rng: &mut ChaCha8Rng) -> Ellipse {
        let r_in = self.rx.min(self.ry);
        let r = r_in * rng.gen_range(0.35..0.6);
        let room = r_in - r;
        let ang = rng.gen_range(0.0..std::f64::consts::TAU);
        let off = room * rng.gen_range(0.0..0.9);
        Ellipse {
            cy: self.cy + off * ang.sin(),
            cx: self.cx + off * ang.cos(),
            ry: r * rng.gen_range(0.6..1.0),
            rx: r * rng.gen_range(0.6..1.0),
            theta: rng.gen_range(0.0..std::f64::consts::PI),
        }
    }
}

fn slice_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn phantom_slice(size: usize, seed: u64, index: usize) -> Phantom {
    let mut rng = slice_rng(seed, index);
    let n = size as f64;
    let half = n / 2.0;
    let outer = Ellipse {
        cy: half + rng.gen_range(-0.05..0.05) * n,
        cx: half + rng.gen_range(-0.05..0.05) * n,
        ry: half * rng.gen_range(0.6..0.8),
        rx: half * rng.gen_range(0.55..0.75),
        theta: rng.gen_range(-0.3..0.3),
    };
    let count = rng.gen_range(2..=5);
    let mut shapes = vec![outer];
    while shapes.len() < count {
        let parent = shapes[rng.gen_range(0..shapes.len())];
        shapes.push(parent.child(&mut rng));
    }
    // Distinct levels: at least 0.06 apart.
    let mut levels: Vec<f64> = Vec::with_capacity(count);
    while levels.len() < count {
        let v = rng.gen_range(0.25..0.95);
        if levels.iter().all(|&l| (l - v).abs() >= 0.06) {
            levels.push(v);
        }
    }
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(1.0..6.0) / n,
                rng.gen_range(1.0..6.0) / n,
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.01..0.03),
            )
        })
        .collect();
    let (gy, gx) = (rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08));
    let mut raw = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut v = BACKGROUND;
            if outer.contains(py, px) {
                // Later ellipses are nested in earlier ones and paint over them.
                for (e, &l) in shapes.iter().zip(&levels) {
                    if e.contains(py, px) {
                        v = l;
                    }
                }
                let tau = std::f64::consts::TAU;
                v += waves.iter().map(|&(fy, fx, ph, a)| a * (tau * (fy * py + fx * px) + ph).sin()).sum::<f64>();
            }
            let (ny, nx) = (py / n - 0.5, px / n - 0.5);
            let bias = 1.0 + gy * ny + gx * nx - 0.1 * (ny * ny + nx * nx);
            raw.push((v * bias).clamp(0.0, 1.0));
        }
    }
    let norm_max = raw.iter().copied().fold(0.0f64, f64::max);
    let data: Vec<f64> = raw.iter().map(|v| v / norm_max).collect();
    Phantom {
        image: Tensor::from_f64(vec![size, size, 1], &data).expect("square slice"),
        norm_max,
    }
}

/// `count` slices of `size×size`; slice `i` depends only on `(seed, i)`.
pub fn phantom_generate(count: usize, size: usize, seed: u64) -> Result<Vec<Phantom>> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::invalid(format!("phantom size {size} must be a positive multiple of 16")));
    }
    Ok(parallel::map(count, |i| phantom_slice(size, seed, i)))
}
