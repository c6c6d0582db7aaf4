use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A 2-D or 3-D Gaussian position belief.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d != 2 && d != 3 {
            return Err(Error::Domain(format!("Gaussian dimension must be 2 or 3, got {d}")));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows().max(cov.ncols()),
            });
        }
        check_covariance(&cov)?;
        Ok(Gaussian { mean, cov })
    }

    pub fn from_slices(mean: &[f64], cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: cov.len(),
            });
        }
        Gaussian::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(d, d, cov))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        Gaussian::new(mean, self.cov.clone())
    }
}

/// Checks symmetry (relative 1e-12) and positive definiteness.
pub fn check_covariance(cov: &DMatrix<f64>) -> Result<()> {
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let scale = cov.amax();
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    match sym.cholesky() {
        Some(ch) if ch.l().diagonal().iter().all(|v| *v > 0.0) => Ok(()),
        _ => Err(Error::NotPositiveDefinite),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_valid_covariance() {
        let g = Gaussian::from_slices(&[0.0, 1.0], &[0.04, 0.0, 0.0, 0.02]).unwrap();
        assert_eq!(g.dim(), 2);
    }

    #[test]
    fn rejects_bad_covariances() {
        assert!(matches!(
            Gaussian::from_slices(&[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(matches!(
            Gaussian::from_slices(&[0.0, 0.0], &[1.0, 0.1, 0.0, 1.0]),
            Err(Error::NotSymmetric(_))
        ));
        assert!(Gaussian::from_slices(&[0.0], &[1.0]).is_err());
        assert!(Gaussian::from_slices(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).is_err());
    }
}
