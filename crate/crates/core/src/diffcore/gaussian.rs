//! Diagonal Gaussian helpers shared by the CVAE encoder and the stochastic actor.

use crate::error::{Error, Result};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogStdRange {
    pub min: f64,
    pub max: f64,
}

impl Default for LogStdRange {
    fn default() -> Self {
        Self { min: -5.0, max: 2.0 }
    }
}

impl LogStdRange {
    /// Clamped value and whether the gradient passes through (`raw` inside the range).
    #[inline]
    pub fn clamp(&self, raw: f64) -> (f64, bool) {
        if raw < self.min {
            (self.min, false)
        } else if raw > self.max {
            (self.max, false)
        } else {
            (raw, true)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    /// Builds a distribution, clamping `log_std` into `range`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>, range: LogStdRange) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::Shape(format!(
                "mean has {} dims, log_std has {}",
                mean.len(),
                log_std.len()
            )));
        }
        let log_std = log_std.into_iter().map(|l| range.clamp(l).0).collect();
        Ok(Self { mean, log_std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Reparameterized draw `mean + exp(log_std) * eps`.
    pub fn sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.dim() {
            return Err(Error::Shape(format!(
                "noise has {} dims, distribution {}",
                eps.len(),
                self.dim()
            )));
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, l), e)| m + l.exp() * e)
            .collect())
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point has {} dims, distribution {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((m, l), xi)| {
                let z = (xi - m) / l.exp();
                -0.5 * z * z - l - HALF_LN_2PI
            })
            .sum())
    }

    /// `KL(self || N(0, I))`.
    pub fn kl_to_standard(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| 0.5 * (m * m + (2.0 * l).exp() - 1.0 - 2.0 * l))
            .sum()
    }

    /// Gradients of [`DiagGaussian::kl_to_standard`] with respect to `(mean, log_std)`.
    pub fn kl_to_standard_grad(&self) -> (Vec<f64>, Vec<f64>) {
        let dm = self.mean.clone();
        let dl = self.log_std.iter().map(|l| (2.0 * l).exp() - 1.0).collect();
        (dm, dl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_noise_returns_mean() {
        let d = DiagGaussian::new(vec![0.3, -1.2], vec![0.4, -0.1], LogStdRange::default()).unwrap();
        assert_eq!(d.sample(&[0.0, 0.0]).unwrap(), d.mean);
    }

    #[test]
    fn unit_std_passes_noise_through() {
        let d = DiagGaussian::standard(2);
        assert_eq!(d.sample(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn sample_mean_converges() {
        let d = DiagGaussian::new(vec![0.7], vec![0.5], LogStdRange::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            acc += d.sample(&[e]).unwrap()[0];
        }
        let sigma = 0.5f64.exp();
        assert!((acc / n as f64 - 0.7).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn standard_density_at_mean() {
        let d = DiagGaussian::standard(1);
        assert!((d.log_prob(&[0.0]).unwrap() + 0.918_938_533_204_672_8).abs() < 1e-15);
        assert!((d.log_prob(&[0.0]).unwrap() - (-0.9189)).abs() < 1e-4);
    }

    #[test]
    fn log_prob_is_additive_over_dims() {
        let d1 = DiagGaussian::new(vec![0.1], vec![0.3], LogStdRange::default()).unwrap();
        let d2 = DiagGaussian::new(vec![-0.4], vec![-0.7], LogStdRange::default()).unwrap();
        let d = DiagGaussian::new(vec![0.1, -0.4], vec![0.3, -0.7], LogStdRange::default()).unwrap();
        let joint = d.log_prob(&[0.5, 0.2]).unwrap();
        let split = d1.log_prob(&[0.5]).unwrap() + d2.log_prob(&[0.2]).unwrap();
        assert!((joint - split).abs() < 1e-14);
    }

    #[test]
    fn log_prob_against_textbook_density() {
        // Independent route: product of univariate normal pdfs, then ln.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mu: Vec<f64> = (0..3).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            let ls: Vec<f64> = (0..3).map(|_| rand::Rng::gen_range(&mut rng, -2.0..1.0)).collect();
            let x: Vec<f64> = (0..3).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
            let d = DiagGaussian::new(mu.clone(), ls.clone(), LogStdRange::default()).unwrap();
            let pdf: f64 = (0..3)
                .map(|i| {
                    let s = ls[i].exp();
                    (-(x[i] - mu[i]).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
                })
                .product();
            assert!((d.log_prob(&x).unwrap() - pdf.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_closed_form_values() {
        assert_eq!(DiagGaussian::standard(3).kl_to_standard(), 0.0);
        let d = DiagGaussian::new(vec![1.0], vec![0.0], LogStdRange::default()).unwrap();
        assert!((d.kl_to_standard() - 0.5).abs() < 1e-15);
        let d = DiagGaussian::new(vec![0.0], vec![1.0], LogStdRange::default()).unwrap();
        let e2 = std::f64::consts::E.powi(2);
        assert!((d.kl_to_standard() - 0.5 * (e2 - 3.0)).abs() < 1e-12);
        assert!((d.kl_to_standard() - 2.1945).abs() < 1e-4);
    }

    #[test]
    fn log_std_is_clamped() {
        let d = DiagGaussian::new(vec![0.0, 0.0], vec![-9.0, 4.0], LogStdRange::default()).unwrap();
        assert_eq!(d.log_std, vec![-5.0, 2.0]);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 1..6),
                              ls_seed in prop::collection::vec(-5.0f64..2.0, 6)) {
            let ls = ls_seed[..mu.len()].to_vec();
            let d = DiagGaussian::new(mu.clone(), ls.clone(), LogStdRange::default()).unwrap();
            let kl = d.kl_to_standard();
            prop_assert!(kl >= 0.0);
            let at_origin = mu.iter().all(|&m| m == 0.0) && ls.iter().all(|&l| l == 0.0);
            if !at_origin {
                prop_assert!(kl > 0.0 || mu.iter().chain(&ls).all(|v| v.abs() < 1e-6));
            }
        }
    }
}
