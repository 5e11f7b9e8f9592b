use crate::error::{Error, Result};
use crate::nn::DenseMatrix;
use crate::scalar::Scalar;

/// Masked reconstruction error over a whole batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub mmse: f64,
    /// Σ mask.
    pub observed_count: f64,
    pub rmse: f64,
}

impl LossReport {
    pub fn from_sums(squared_error: f64, observed_count: f64) -> Self {
        let mmse = squared_error / observed_count;
        LossReport {
            mmse,
            observed_count,
            rmse: mmse.sqrt(),
        }
    }
}

fn check_shapes<T: Scalar>(y: &DenseMatrix<T>, q: &DenseMatrix<T>, mask: &DenseMatrix<T>) -> Result<()> {
    if y.shape() != q.shape() || y.shape() != mask.shape() {
        return Err(Error::shape(
            "masked_mse",
            format!("y {:?}", y.shape()),
            format!("q {:?}, mask {:?}", q.shape(), mask.shape()),
        ));
    }
    Ok(())
}

/// `Σ mask·(y−q)² / Σ mask` over every entry of the batch.
///
/// Entries with mask 0 are skipped outright, so whatever they hold cannot
/// leak into the result.
pub fn masked_mse<T: Scalar>(y: &DenseMatrix<T>, q: &DenseMatrix<T>, mask: &DenseMatrix<T>) -> Result<LossReport> {
    check_shapes(y, q, mask)?;
    let mut sq = 0.0f64;
    let mut count = 0.0f64;
    for ((&y, &q), &m) in y.as_slice().iter().zip(q.as_slice()).zip(mask.as_slice()) {
        if m == T::zero() {
            continue;
        }
        let m = m.as_f64();
        let d = y.as_f64() - q.as_f64();
        sq += m * d * d;
        count += m;
    }
    if count <= 0.0 {
        return Err(Error::EmptyMask);
    }
    Ok(LossReport::from_sums(sq, count))
}

/// ∂MMSE/∂q = 2·mask·(q−y)/Σmask.
pub(crate) fn loss_gradient<T: Scalar>(y: &DenseMatrix<T>, q: &DenseMatrix<T>, mask: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    check_shapes(y, q, mask)?;
    let count: f64 = mask.as_slice().iter().map(|m| m.as_f64()).sum();
    if count <= 0.0 {
        return Err(Error::EmptyMask);
    }
    let scale = T::lit(2.0 / count);
    let mut out = DenseMatrix::zeros(q.rows(), q.cols());
    for (((o, &y), &q), &m) in out.as_mut_slice().iter_mut().zip(y.as_slice()).zip(q.as_slice()).zip(mask.as_slice()) {
        if m != T::zero() {
            *o = scale * m * (q - y);
        }
    }
    Ok(out)
}
