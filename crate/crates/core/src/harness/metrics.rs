use crate::codec::ImageTensor;
use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `−10·log10(mse)` for unit-peak images, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

pub fn compute_psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::ShapeMismatch(format!("{}×{} vs {}×{}", a.height(), a.width(), b.height(), b.width())));
    }
    let (x, y) = (a.pixels(), b.pixels());
    let mse = x.iter().zip(y).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(psnr_from_mse(mse))
}
