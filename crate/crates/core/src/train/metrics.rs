use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Value reported when prediction and target are identical.
pub const PSNR_CAP: f64 = 100.0;

/// Mean absolute error. The subgradient at an exact tie is zero.
pub fn l1_loss<T: Element>(pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(
            "l1_loss",
            format!("prediction {:?} and target {:?} differ", pred.shape(), target.shape()),
        ));
    }
    Ok(pred.sub(target)?.abs().mean())
}

/// `10 log10(peak^2 / MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, peak: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(
            "psnr",
            format!("prediction {:?} and target {:?} differ", pred.shape(), target.shape()),
        ));
    }
    if pred.numel() == 0 {
        return Err(Error::invalid("psnr", "empty tensors"));
    }
    let sse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a.to_f64() - b.to_f64()).powi(2))
        .sum();
    let mse = sse / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}
