use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::*;
use crate::tensor::Tensor;

fn noise(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
    Tensor::new(vec![h, w, 1], d).unwrap()
}

// Keys' cubic written out piecewise, a = −0.5.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        1.5 * t.powi(3) - 2.5 * t.powi(2) + 1.0
    } else if t < 2.0 {
        -0.5 * t.powi(3) + 2.5 * t.powi(2) - 4.0 * t + 2.0
    } else {
        0.0
    }
}

fn bicubic_direct(img: &Tensor<f64>, s: usize) -> Vec<f64> {
    let (h, w) = (img.shape()[0] as i64, img.shape()[1] as i64);
    let mut out = Vec::new();
    for oy in 0..h * s as i64 {
        for ox in 0..w * s as i64 {
            let u = (oy as f64 + 0.5) / s as f64 - 0.5;
            let v = (ox as f64 + 0.5) / s as f64 - 0.5;
            let mut acc = 0.0;
            for iy in (u.floor() as i64 - 1)..=(u.floor() as i64 + 2) {
                for ix in (v.floor() as i64 - 1)..=(v.floor() as i64 + 2) {
                    let py = iy.clamp(0, h - 1);
                    let px = ix.clamp(0, w - 1);
                    acc += keys(u - iy as f64) * keys(v - ix as f64) * img.data()[(py * w + px) as usize];
                }
            }
            out.push(acc);
        }
    }
    out
}

#[test]
fn bicubic_weight_table() {
    let t = taps(8, 2);
    assert_eq!(t[4].weight, [-0.0234375, 0.2265625, 0.8671875, -0.0703125]);
    assert_eq!(t[5].weight, [-0.0703125, 0.8671875, 0.2265625, -0.0234375]);
    assert_eq!(t[4].index, [0, 1, 2, 3]);
    for s in [2, 4] {
        for tp in taps(8, s) {
            assert_eq!(tp.weight.iter().sum::<f64>(), 1.0);
        }
    }
    assert_eq!(taps(8, 2)[0].index, [0, 0, 0, 1]);
}

#[test]
fn bicubic_keeps_constants_exactly() {
    for s in [2, 4] {
        let img = Tensor::<f32>::full(&[5, 7, 1], 0.3712);
        let up = bicubic_upscale(&img, s).unwrap();
        assert_eq!(up.shape(), [5 * s, 7 * s, 1]);
        assert!(up.data().iter().all(|&v| v == 0.3712f32));
    }
}

#[test]
fn bicubic_reproduces_ramps_in_the_interior() {
    let (h, w) = (10, 12);
    let d: Vec<f64> = (0..h * w).map(|i| 0.01 * (i / w) as f64 + 0.03 * (i % w) as f64).collect();
    let img = Tensor::new(vec![h, w, 1], d).unwrap();
    for s in [2, 4] {
        let up = bicubic_upscale(&img, s).unwrap();
        let ww = w * s;
        // Taps stay inside the image two pixels from each edge.
        for oy in 2 * s..(h - 2) * s {
            for ox in 2 * s..(w - 2) * s {
                let u = (oy as f64 + 0.5) / s as f64 - 0.5;
                let v = (ox as f64 + 0.5) / s as f64 - 0.5;
                let expect = 0.01 * u + 0.03 * v;
                assert!((up.data()[oy * ww + ox] - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn bicubic_matches_direct_summation() {
    for s in [2, 4] {
        let img = noise(8, 8, 1);
        let up = bicubic_upscale(&img, s).unwrap();
        for (a, b) in up.data().iter().zip(bicubic_direct(&img, s)) {
            assert!((a - b).abs() < 1e-13);
        }
    }
    assert!(bicubic_upscale(&noise(4, 4, 0), 3).is_err());
}

#[test]
fn bicubic_adjoint_is_the_transpose() {
    let x = noise(6, 5, 2);
    let g = noise(12, 10, 3);
    let lhs: f64 = bicubic_upscale(&x, 2).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = bicubic_adjoint(&g, 6, 5, 2).unwrap().data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn degrade_keeps_constants() {
    for s in [2, 4] {
        let img = Tensor::<f32>::full(&[32, 16, 1], 0.62);
        let lr = degrade_kspace(&img, s).unwrap();
        assert_eq!(lr.shape(), [32 / s, 16 / s, 1]);
        assert!(lr.data().iter().all(|&v| (v - 0.62).abs() <= 1e-6));
    }
    assert!(degrade_kspace(&Tensor::<f32>::zeros(&[10, 8, 1]), 4).is_err());
}

fn sinusoid(h: usize, w: usize, fy: f64, fx: f64) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.5 + 0.3 * (tau * (fy * y / h as f64 + fx * x / w as f64) + 0.4).cos()
        })
        .collect()
}

#[test]
fn degrade_recovers_band_limited_sinusoids() {
    for (s, fy, fx) in [(2, 3.0, 5.0), (2, -7.0, 2.0), (4, 1.0, -3.0), (4, 3.0, 3.0)] {
        let (hh, ww) = (32, 32);
        let hr = Tensor::new(vec![hh, ww, 1], sinusoid(hh, ww, fy, fx)).unwrap();
        let lr = degrade_kspace(&hr, s).unwrap();
        let expect = sinusoid(hh / s, ww / s, fy, fx);
        for (a, b) in lr.data().iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-4 * b.abs(), "s={s} {a} {b}");
        }
    }
}

fn naive_dft(x: &[f64], h: usize, w: usize, ky: i64, kx: i64) -> Complex64 {
    let tau = std::f64::consts::TAU;
    let mut acc = Complex64::default();
    for y in 0..h {
        for xx in 0..w {
            let ph = -tau * (ky as f64 * y as f64 / h as f64 + kx as f64 * xx as f64 / w as f64);
            acc += Complex64::from_polar(x[y * w + xx], ph);
        }
    }
    acc
}

#[test]
fn degrade_retains_the_cropped_spectral_energy() {
    let (hh, ww, s) = (16, 16, 2);
    let img = noise(hh, ww, 4);
    let z = degrade_kspace_complex(&img, s, 0.0, 0).unwrap();
    let (h, w) = (hh / s, ww / s);
    // Parseval on the small grid: Σ|z|² = Σ_crop |X/s²|² / (h·w).
    let lhs: f64 = z.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let mut cropped = 0.0;
    for ky in -(h as i64 / 2)..(h as i64 / 2) {
        for kx in -(w as i64 / 2)..(w as i64 / 2) {
            cropped += naive_dft(img.data(), hh, ww, ky, kx).norm_sqr();
        }
    }
    let rhs = cropped / (s as f64).powi(4) / (h * w) as f64;
    assert!((lhs - rhs).abs() <= 1e-6 * rhs);
    // Retained fraction against total energy, Σ|X|² = H·W·Σ|x|².
    let total = (hh * ww) as f64 * img.data().iter().map(|v| v * v).sum::<f64>();
    let frac = lhs * (h * w) as f64 * (s as f64).powi(4) / total;
    assert!((frac - cropped / total).abs() <= 1e-6 * (cropped / total));
    assert!(frac < 1.0);
}

#[test]
fn degrade_is_sampling_for_band_limited_images() {
    // Spectrum inside the crop: degradation reduces to decimation.
    let (hh, s) = (32, 4);
    let hr = sinusoid(hh, hh, 2.0, -1.0);
    let hr_t = Tensor::new(vec![hh, hh, 1], hr.clone()).unwrap();
    let lr = degrade_kspace(&hr_t, s).unwrap();
    let again = degrade_kspace(&Tensor::new(vec![hh, hh, 1], hr.clone()).unwrap(), s).unwrap();
    assert_eq!(lr, again);
    for y in 0..hh / s {
        for x in 0..hh / s {
            let a = lr.data()[y * hh / s + x];
            let b = hr[(y * s) * hh + x * s];
            assert!((a - b).abs() <= 1e-4 * b.abs());
        }
    }
}

#[test]
fn kspace_noise_knob_perturbs_deterministically() {
    let img = noise(16, 16, 5);
    let a = degrade_kspace_noisy(&img, 2, 0.01, 9).unwrap();
    let b = degrade_kspace_noisy(&img, 2, 0.01, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.max_abs_diff(&degrade_kspace(&img, 2).unwrap()) > 0.0);
}

#[test]
fn psnr_closed_forms() {
    let a = noise(16, 16, 6).map(|v| v * 0.9);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() <= 1e-6);
    assert!(psnr(&a, &noise(8, 8, 0), 1.0).is_err());
}

#[test]
fn psnr_matches_two_pass_mse() {
    let (a, b) = (noise(20, 12, 7), noise(20, 12, 8));
    let mut m = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        m += (x - y) * (x - y);
    }
    m /= a.len() as f64;
    let expect = 10.0 * (1.0 / m).log10();
    let got = psnr(&a, &b, 1.0).unwrap();
    assert!((got - expect).abs() <= 1e-6 * expect.abs());
    assert_eq!(got, psnr(&b, &a, 1.0).unwrap());
}

#[test]
fn psnr_decreases_with_noise() {
    let a = noise(32, 32, 9);
    let n = noise(32, 32, 10).map(|v| v - 0.5);
    let vals: Vec<f64> = [0.01, 0.05, 0.2]
        .iter()
        .map(|&amp| {
            let b = Tensor::new(a.shape().to_vec(), a.data().iter().zip(n.data()).map(|(x, e)| x + amp * e).collect()).unwrap();
            psnr(&a, &b, 1.0).unwrap()
        })
        .collect();
    assert!(vals[0] > vals[1] && vals[1] > vals[2]);
}

/// SSIM from the definition: each window's weighted moments computed
/// directly, no separable filtering.
fn ssim_direct(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let r = 5.0;
    let mut g2 = [[0.0f64; 11]; 11];
    let mut z = 0.0;
    for (i, row) in g2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-((i as f64 - r).powi(2) + (j as f64 - r).powi(2)) / 4.5).exp();
            z += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = (y0 + i) * w + x0 + j;
                    ma += g2[i][j] / z * a.data()[k];
                    mb += g2[i][j] / z * b.data()[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = (y0 + i) * w + x0 + j;
                    let wt = g2[i][j] / z;
                    va += wt * (a.data()[k] - ma).powi(2);
                    vb += wt * (b.data()[k] - mb).powi(2);
                    cov += wt * (a.data()[k] - ma) * (b.data()[k] - mb);
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}

#[test]
fn ssim_identity_and_symmetry() {
    let a = noise(24, 20, 11);
    let b = noise(24, 20, 12);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-9);
    assert!(ssim(&noise(10, 20, 0), &noise(10, 20, 1)).is_err());
}

#[test]
fn ssim_matches_windowed_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let bin = Tensor::new(vec![16, 18, 1], (0..16 * 18).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect()).unwrap();
    let inv = bin.map(|v| 1.0 - v);
    let s = ssim(&bin, &inv).unwrap();
    assert!((s - ssim_direct(&bin, &inv)).abs() < 1e-9);
    assert!(s < -0.5, "{s}");
    let (a, b) = (noise(14, 15, 14), noise(14, 15, 15));
    assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-9);
}

#[test]
fn ssim_of_constants_is_luminance_only() {
    let (a, b) = (0.4, 0.55);
    let ta = Tensor::<f64>::full(&[12, 12, 1], a);
    let tb = Tensor::<f64>::full(&[12, 12, 1], b);
    let c1 = 1e-4;
    let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
    assert!((ssim(&ta, &tb).unwrap() - expect).abs() < 1e-9);
}

#[test]
fn pgm_round_trip() {
    let img = noise(5, 7, 16).cast::<f32>();
    let bytes = encode_pgm16(&img).unwrap();
    assert!(bytes.starts_with(b"P5\n7 5\n65535\n"));
    assert_eq!(bytes.len(), 13 + 2 * 35);
    let back = decode_pgm(&bytes).unwrap();
    assert_eq!(back.shape(), [5, 7, 1]);
    assert!(back.max_abs_diff(&img) <= 0.5 / 65535.0 + 1e-7);
    // Big-endian sample order.
    let one = encode_pgm16(&Tensor::<f32>::full(&[1, 1, 1], 1.0)).unwrap();
    assert_eq!(&one[one.len() - 2..], &[0xff, 0xff]);
    let eight = decode_pgm(b"P5\n# c\n2 1\n255\n\x00\xff").unwrap();
    assert_eq!(eight.data(), [0.0, 1.0]);
    assert!(decode_pgm(b"P6\n1 1\n255\n\x00").is_err());
    assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
}

#[test]
fn phantoms_are_seeded_and_in_range() {
    let a = phantom_generate(4, 64, 7).unwrap();
    let b = phantom_generate(4, 64, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], phantom_generate(1, 64, 8).unwrap()[0]);
    for p in &a {
        let d = p.image.data();
        assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(d.iter().any(|&v| v == 1.0));
        for (y0, x0) in [(0, 0), (0, 60), (60, 0), (60, 60)] {
            let mean: f32 = (0..16).map(|k| d[(y0 + k / 4) * 64 + x0 + k % 4]).sum::<f32>() / 16.0;
            assert!(mean < 0.1, "{mean}");
        }
    }
    assert!(phantom_generate(1, 40, 0).is_err());
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_phantom_dataset(dir.path(), 8, 2, 64, 3).unwrap();
    assert_eq!(std::fs::read_dir(dir.path().join("hr")).unwrap().count(), 8);
    let (read, root) = Manifest::read(dir.path()).unwrap();
    assert_eq!(read, m);
    assert_eq!(m.split(Split::Test).count(), 2);
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(text.find("\"scale\"").unwrap() < text.find("\"size\"").unwrap());
    assert!(text.find("\"hr\"").unwrap() < text.find("\"name\"").unwrap());
    assert!(read.load_pairs(&root, Split::Train).is_err());

    let m2 = degrade_dataset(dir.path(), 2, 0.0, 0).unwrap();
    assert_eq!(m2.scale, Some(2));
    let pairs = m2.load_pairs(&root, Split::Train).unwrap();
    assert_eq!(pairs.len(), 6);
    let hr0: Tensor<f32> = crate::srt::read(root.join(&m2.slices[0].hr)).unwrap();
    assert_eq!(pairs[0].hr, hr0);
    assert_eq!(pairs[0].lr, degrade_kspace(&hr0, 2).unwrap());
}

#[test]
fn manifest_rejects_shared_paths() {
    let e = |split| SliceEntry {
        name: "a".into(),
        hr: "hr/a.srt".into(),
        lr: None,
        split,
        norm_max: 1.0,
    };
    let m = Manifest {
        version: MANIFEST_VERSION,
        size: 16,
        scale: None,
        slices: vec![e(Split::Train), e(Split::Test)],
    };
    assert!(m.validate().is_err());
}
