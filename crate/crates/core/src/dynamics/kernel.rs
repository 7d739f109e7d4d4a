use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Squared-exponential kernel parameters: signal standard deviation `delta`
/// and length scale `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    delta: f64,
    l: f64,
}

impl KernelParams {
    pub fn new(delta: f64, l: f64) -> Result<Self, DynamicsError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(DynamicsError::InvalidKernel(format!("delta must be > 0, got {delta}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(DynamicsError::InvalidKernel(format!(
                "length scale must be > 0, got {l}"
            )));
        }
        Ok(Self { delta, l })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn length_scale(&self) -> f64 {
        self.l
    }

    /// Prior variance `δ²`, the kernel value at zero distance.
    pub fn signal_variance(&self) -> f64 {
        self.delta * self.delta
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(x_prime).map(|(a, b)| (a - b) * (a - b)).sum();
        self.signal_variance() * (-sq / (2.0 * self.l * self.l)).exp()
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { delta: 1.0, l: 2.0 }
    }
}

/// `δ² exp(-‖x - x'‖² / (2 l²))`.
pub fn rbf(x: &[f64], x_prime: &[f64], params: &KernelParams) -> Result<f64, DynamicsError> {
    if x.len() != x_prime.len() {
        return Err(DynamicsError::DimensionMismatch {
            expected: x.len(),
            found: x_prime.len(),
        });
    }
    Ok(params.eval_unchecked(x, x_prime))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_gives_signal_variance() {
        let p = KernelParams::new(1.0, 2.0).unwrap();
        assert_eq!(rbf(&[0.3, -1.0], &[0.3, -1.0], &p).unwrap(), 1.0);
        let p2 = KernelParams::new(2.0, 2.0).unwrap();
        assert_eq!(rbf(&[5.0], &[5.0], &p2).unwrap(), 4.0);
    }

    #[test]
    fn distance_two() {
        let p = KernelParams::new(1.0, 2.0).unwrap();
        let k = rbf(&[0.0, 0.0], &[2.0, 0.0], &p).unwrap();
        assert!((k - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert_eq!(k, rbf(&[2.0, 0.0], &[0.0, 0.0], &p).unwrap());
    }

    #[test]
    fn validation() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, -2.0).is_err());
        let p = KernelParams::default();
        assert!(matches!(
            rbf(&[0.0], &[0.0, 1.0], &p),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }
}
