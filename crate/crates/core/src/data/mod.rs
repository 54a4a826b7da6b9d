//! Data pipeline and image quality metrics.

mod bicubic;
mod degrade;
mod manifest;
mod metrics;
mod pgm;
mod phantom;

use std::fs;
use std::path::Path;

pub use bicubic::{bicubic_adjoint, bicubic_upscale, cubic_kernel, taps, Taps, CUBIC_A};
pub use degrade::{degrade_kspace, degrade_kspace_complex, degrade_kspace_noisy, fft2};
pub use manifest::{canonical, to_canonical_json, Manifest, SliceEntry, SlicePair, Split, MANIFEST_FILE, MANIFEST_VERSION};
pub use metrics::{gaussian_window, mse, psnr, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use pgm::{decode_pgm, encode_pgm16, read_pgm, write_pgm16};
pub use phantom::{phantom_generate, phantom_slice, Phantom};

use crate::error::{Error, Result};
use crate::parallel;
use crate::srt;

/// Writes `count` phantoms under `dir/hr/` plus a manifest; the last
/// `test_count` slices form the test split.
pub fn write_phantom_dataset(dir: &Path, count: usize, test_count: usize, size: usize, seed: u64) -> Result<Manifest> {
    if test_count > count {
        return Err(Error::invalid(format!("test count {test_count} exceeds slice count {count}")));
    }
    let slices = phantom_generate(count, size, seed)?;
    fs::create_dir_all(dir.join("hr"))?;
    let mut entries = Vec::with_capacity(count);
    for (i, p) in slices.iter().enumerate() {
        let name = format!("slice_{i:04}");
        let hr = format!("hr/{name}.srt");
        srt::write(dir.join(&hr), &p.image)?;
        entries.push(SliceEntry {
            name,
            hr,
            lr: None,
            split: if i + test_count >= count { Split::Test } else { Split::Train },
            norm_max: p.norm_max,
        });
    }
    let m = Manifest {
        version: MANIFEST_VERSION,
        size,
        scale: None,
        slices: entries,
    };
    m.write(dir)?;
    Ok(m)
}

/// Degrades every slice of the dataset at `dir` into `dir/lr_x{scale}/` and
/// records the paths in the manifest.
pub fn degrade_dataset(dir: &Path, scale: usize, noise_std: f64, seed: u64) -> Result<Manifest> {
    let (mut m, root) = Manifest::read(dir)?;
    let sub = format!("lr_x{scale}");
    fs::create_dir_all(root.join(&sub))?;
    let results = parallel::map(m.slices.len(), |i| -> Result<String> {
        let s = &m.slices[i];
        let hr = srt::read::<f32>(root.join(&s.hr))?;
        let lr = degrade_kspace_noisy(&hr, scale, noise_std, seed.wrapping_add(i as u64))
            .map_err(|e| Error::Data(format!("{}: {e}", s.name)))?;
        let rel = format!("{sub}/{}.srt", s.name);
        srt::write(root.join(&rel), &lr)?;
        Ok(rel)
    });
    for (s, r) in m.slices.iter_mut().zip(results) {
        s.lr = Some(r?);
    }
    m.scale = Some(scale);
    m.write(&root)?;
    Ok(m)
}

#[cfg(test)]
mod tests;
