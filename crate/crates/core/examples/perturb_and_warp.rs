//! Draws perspective perturbations of a digit, undoes them with the inverse
//! homography, and writes both grids as PGM files.
//!
//! cargo run --release --example perturb_and_warp -- [sigma] [out-dir]

use std::path::{Path, PathBuf};

use congeal::autodiff::Tensor;
use congeal::dataset::{ImageSource, SyntheticSource};
use congeal::io::{grid, read_idx_images};
use congeal::warp::{warp_image, PerturbModel, WarpParams};

fn main() -> congeal::Result<()> {
    let mut args = std::env::args().skip(1);
    let sigma = args.next().and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "perturb-out".into()));
    std::fs::create_dir_all(&out).map_err(|e| congeal::Error::io(&out, e))?;

    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/digits-3-7-images.idx3-ubyte");
    let digits = read_idx_images(&data)?;
    let template = Tensor::new([1, 1, 28, 28], digits.image(0).to_vec())?;
    let source = SyntheticSource::new(template, PerturbModel::Perspective { sigma }, 0, 16)?;

    let mut perturbed = Vec::new();
    let mut restored = Vec::new();
    for i in 0..source.len() {
        let (img, truth) = source.generate(i)?;
        let corners = WarpParams::from_homography(&truth, 28, 28);
        let back = warp_image(&img, &truth.inverse()?)?;
        println!(
            "image {i:2}: top-left corner moved by ({:5.2}, {:5.2}) px, mean corner shift {:5.2} px, area ratio {:.3}",
            corners.0[0],
            corners.0[1],
            truth.corner_error(28, 28),
            truth.area_ratio(28, 28)
        );
        perturbed.extend_from_slice(img.data());
        restored.extend_from_slice(back.data());
    }
    grid(perturbed.chunks(784), (1, 28, 28))?.write(&out.join("perturbed.pgm"))?;
    grid(restored.chunks(784), (1, 28, 28))?.write(&out.join("restored.pgm"))?;
    println!("grids written to {}", out.display());
    Ok(())
}
