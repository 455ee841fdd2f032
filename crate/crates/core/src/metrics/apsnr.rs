use super::stats::StackStats;
use crate::error::Result;

const PEAK: f64 = 255.0;

/// Alignment PSNR in dB: `10 log10(255^2 / MSE)`, with pixels rescaled from
/// `[0, 1]` to `[0, 255]` and MSE the mean squared deviation from the mean
/// image. A perfectly aligned stack yields `+inf`.
pub fn apsnr(stats: &StackStats) -> Result<f64> {
    let mse = stats.mse()? * PEAK * PEAK;
    if mse <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// APSNR of images given as `[0, 1]` slices.
pub fn apsnr_of<'a, T, I>(dims: (usize, usize, usize), images: I) -> Result<f64>
where
    T: Copy + Into<f64> + 'a,
    I: IntoIterator<Item = &'a [T]>,
{
    apsnr(&super::stats::stack_stats(dims, images)?)
}
