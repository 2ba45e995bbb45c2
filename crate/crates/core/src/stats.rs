//! Sample statistics shared by the Monte Carlo diagnostics.

use serde::Serialize;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Two-pass mean and standard error, summed in slice order.
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Estimate { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Estimate { mean, se: f64::NAN };
        }
        let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        Estimate { mean, se: (ss / (n - 1.0) / n).sqrt() }
    }

    /// `|mean - target| ≤ k·se`, with an absolute floor for exact estimates.
    pub fn within(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + floor
    }

    pub fn relative_se(&self) -> f64 {
        self.se / self.mean.abs()
    }
}

/// Running sums of a fixed number of scalar statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Moments { count: 0, sum: vec![0.0; len], sum_sq: vec![0.0; len] }
    }

    pub fn push(&mut self, j: usize, x: f64) {
        self.sum[j] += x;
        self.sum_sq[j] += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.sum[j] / self.count as f64
    }

    /// Standard error of the mean, with the unbiased sample variance.
    pub fn se(&self, j: usize) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return f64::NAN;
        }
        let m = self.sum[j] / n;
        let var = ((self.sum_sq[j] - n * m * m) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }

    pub fn merge_all(len: usize, parts: &[Moments]) -> Moments {
        let mut total = Moments::new(len);
        for p in parts {
            total.merge(p);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let mut m = Moments::new(1);
        for x in [1.0, 2.0, 3.0, 4.0] {
            m.count += 1;
            m.push(0, x);
        }
        assert_eq!(m.mean(0), 2.5);
        assert!((m.se(0) - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn estimate() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(e.within(2.0, 1.0, 0.0));
        assert!(!e.within(0.0, 3.0, 0.0));
        let exact = Estimate::from_samples(&[0.25; 8]);
        assert_eq!(exact.se, 0.0);
        assert!(exact.within(0.25, 3.0, 1e-12));
    }
}
