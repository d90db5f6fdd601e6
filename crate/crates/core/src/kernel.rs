//! Kernel smoothing: product kernels, the rule-of-thumb bandwidth, the kernel
//! density estimator and Nadaraya-Watson weights.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_dim, Error, Result};
use crate::sample::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    /// Univariate kernel `K1(u)`.
    #[inline]
    pub fn eval_1d(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            KernelFamily::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `sup K1`.
    pub fn sup_1d(self) -> f64 {
        self.eval_1d(0.0)
    }

    /// `∫ K1²`.
    pub fn int_k2_1d(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0 / (2.0 * PI.sqrt()),
            KernelFamily::Epanechnikov => 0.6,
        }
    }
}

impl KernelFamily {
    /// Self-convolution `(K1 * K1)(d) = ∫ K1(u) K1(u + d) du`; equals `∫ K1²` at 0.
    pub fn convolution_1d(self, d: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-0.25 * d * d).exp() / (2.0 * PI.sqrt()),
            KernelFamily::Epanechnikov => {
                let a = d.abs();
                if a >= 2.0 {
                    0.0
                } else {
                    3.0 / 160.0 * (2.0 - a).powi(3) * (a * a + 6.0 * a + 4.0)
                }
            }
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "epanechnikov" | "epa" => Ok(KernelFamily::Epanechnikov),
            other => Err(Error::Argument(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Product kernel of a given family, bandwidth and covariate dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64, dim: usize) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Argument(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if dim == 0 {
            return Err(Error::Argument("kernel dimension must be at least 1".into()));
        }
        Ok(KernelSpec {
            family,
            bandwidth,
            dim,
        })
    }

    /// `C_K = sup K` for the product kernel.
    pub fn sup(&self) -> f64 {
        self.family.sup_1d().powi(self.dim as i32)
    }

    /// `∫ K²` for the product kernel.
    pub fn int_k2(&self) -> f64 {
        self.family.int_k2_1d().powi(self.dim as i32)
    }

    /// `∫ K(u) K(u + (z1 - z2)/h) du` for the product kernel.
    pub fn overlap(&self, z1: &[f64], z2: &[f64]) -> f64 {
        z1.iter()
            .zip(z2)
            .map(|(a, b)| self.family.convolution_1d((a - b) / self.bandwidth))
            .product()
    }

    /// `h^p`.
    pub fn volume(&self) -> f64 {
        self.bandwidth.powi(self.dim as i32)
    }

    /// Unscaled product kernel without dimension checks.
    #[inline]
    fn eval_unchecked(&self, u: impl Iterator<Item = f64>) -> f64 {
        let mut acc = 1.0;
        for v in u {
            acc *= self.family.eval_1d(v);
            if acc == 0.0 {
                break;
            }
        }
        acc
    }

    /// `K_h(v) = K(v / h) / h^p`, evaluated at `v = zi - z`.
    #[inline]
    pub(crate) fn scaled(&self, zi: &[f64], z: &[f64]) -> f64 {
        let h = self.bandwidth;
        self.eval_unchecked(zi.iter().zip(z).map(|(a, b)| (a - b) / h)) / self.volume()
    }
}

/// Evaluates the unscaled kernel `K(u)`.
pub fn kernel_value(spec: &KernelSpec, u: &[f64]) -> Result<f64> {
    check_dim(spec.dim, u.len())?;
    Ok(spec.eval_unchecked(u.iter().copied()))
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Rule-of-thumb bandwidth `multiplier * sd(Z) * n^(-1/5)`.
///
/// For `p > 1` the geometric mean of the per-coordinate standard deviations is
/// used together with the rate `n^(-1/(4+p))`.
pub fn rule_of_thumb_bandwidth(sample: &Sample, multiplier: f64) -> Result<f64> {
    if !(multiplier > 0.0) {
        return Err(Error::Argument("bandwidth multiplier must be positive".into()));
    }
    sample.require_at_least(2)?;
    let n = sample.len() as f64;
    let p = sample.dim();
    let mut log_sd = 0.0;
    for k in 0..p {
        let sd = sample_sd(&sample.z_column(k));
        if !(sd > 0.0) {
            return Err(Error::Degenerate(format!("covariate {k} has zero variance")));
        }
        log_sd += sd.ln();
    }
    let sd = (log_sd / p as f64).exp();
    Ok(multiplier * sd * n.powf(-1.0 / (4.0 + p as f64)))
}

/// Kernel density estimate `(1/n) Σ K_h(Z_i - z)`.
pub fn density_estimate(sample: &Sample, z: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dim(spec.dim, z.len())?;
    check_dim(spec.dim, sample.dim())?;
    let sum: f64 = sample.rows().iter().map(|r| spec.scaled(&r.z, z)).sum();
    Ok(sum / sample.len() as f64)
}

/// Nadaraya-Watson weights restricted to the observations with positive kernel mass.
///
/// `indices` is increasing; `weights[k]` belongs to row `indices[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalWeights {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// `Σ_j K_h(Z_j - z)` before normalization.
    pub kernel_mass: f64,
    pub n: usize,
}

impl LocalWeights {
    pub fn compute(sample: &Sample, z: &[f64], spec: &KernelSpec) -> Result<Self> {
        check_dim(spec.dim, z.len())?;
        check_dim(spec.dim, sample.dim())?;
        let mut indices = Vec::new();
        let mut raw = Vec::new();
        for (i, r) in sample.rows().iter().enumerate() {
            let k = spec.scaled(&r.z, z);
            if k > 0.0 {
                indices.push(i);
                raw.push(k);
            }
        }
        let mass: f64 = raw.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::EmptyNeighborhood { z: z.to_vec() });
        }
        let weights = raw.into_iter().map(|k| k / mass).collect();
        Ok(LocalWeights {
            indices,
            weights,
            kernel_mass: mass,
            n: sample.len(),
        })
    }

    /// Σ w_i².
    pub fn sum_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn support(&self) -> usize {
        self.indices.len()
    }

    /// Kernel density estimate at the same point, `kernel_mass / n`.
    pub fn density(&self) -> f64 {
        self.kernel_mass / self.n as f64
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (&i, &w) in self.indices.iter().zip(&self.weights) {
            out[i] = w;
        }
        out
    }
}

/// Nadaraya-Watson weights `w_i(z) = K_h(Z_i - z) / Σ_j K_h(Z_j - z)` for every row.
pub fn nw_weights(sample: &Sample, z: &[f64], spec: &KernelSpec) -> Result<Vec<f64>> {
    Ok(LocalWeights::compute(sample, z, spec)?.to_dense())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_quadrature() {
        for fam in [KernelFamily::Gaussian, KernelFamily::Epanechnikov] {
            assert!((fam.convolution_1d(0.0) - fam.int_k2_1d()).abs() < 1e-15);
            for d in [0.0, 0.3, 1.0, 1.7, 2.5] {
                let n = 200_000;
                let (lo, hi) = (-12.0, 12.0);
                let step = (hi - lo) / n as f64;
                let q: f64 = (0..n)
                    .map(|i| {
                        let u = lo + (i as f64 + 0.5) * step;
                        fam.eval_1d(u) * fam.eval_1d(u + d)
                    })
                    .sum::<f64>()
                    * step;
                assert!((q - fam.convolution_1d(d)).abs() < 1e-8, "{fam:?} {d}");
            }
        }
    }

    fn sample_1d(z: &[f64]) -> Sample {
        let x: Vec<f64> = (0..z.len()).map(|i| i as f64).collect();
        Sample::from_scalar_z(&x, &x, z).unwrap()
    }

    #[test]
    fn kernel_values_at_mode_and_outside_support() {
        let g = KernelSpec::new(KernelFamily::Gaussian, 1.0, 1).unwrap();
        let e = KernelSpec::new(KernelFamily::Epanechnikov, 1.0, 1).unwrap();
        assert!((kernel_value(&g, &[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(kernel_value(&e, &[0.0]).unwrap(), 0.75);
        assert_eq!(kernel_value(&e, &[1.5]).unwrap(), 0.0);
        assert!(matches!(
            kernel_value(&e, &[0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernels_integrate_to_one_and_match_int_k2() {
        for fam in [KernelFamily::Gaussian, KernelFamily::Epanechnikov] {
            // midpoint rule on [-12, 12]
            let m = 2_400_000;
            let step = 24.0 / m as f64;
            let (mut s1, mut s2) = (0.0, 0.0);
            for i in 0..m {
                let u = -12.0 + (i as f64 + 0.5) * step;
                let k = fam.eval_1d(u);
                s1 += k * step;
                s2 += k * k * step;
            }
            assert!((s1 - 1.0).abs() < 1e-6, "{fam:?} integral {s1}");
            assert!((s2 - fam.int_k2_1d()).abs() < 1e-6, "{fam:?} int K^2 {s2}");
        }
        assert!((KernelFamily::Gaussian.int_k2_1d() - 0.282_095).abs() < 1e-6);
    }

    #[test]
    fn kernel_is_symmetric() {
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, 1.0, 2).unwrap();
        for &(a, b) in &[(0.3, -0.2), (0.9, 0.1), (1.2, 0.0)] {
            assert_eq!(
                kernel_value(&spec, &[a, b]).unwrap(),
                kernel_value(&spec, &[-a, -b]).unwrap()
            );
        }
    }

    #[test]
    fn product_kernel_int_k2() {
        let spec = KernelSpec::new(KernelFamily::Epanechnikov, 0.3, 2).unwrap();
        assert!((spec.int_k2() - 0.36).abs() < 1e-15);
        assert_eq!(spec.sup(), 0.5625);
    }

    #[test]
    fn rule_of_thumb_values() {
        // Z with sd exactly 1 is not needed: the rule is linear in sd.
        let z: Vec<f64> = (0..3000).map(|i| (i % 2) as f64).collect();
        let s = sample_1d(&z);
        let sd = sample_sd(&z);
        let h = rule_of_thumb_bandwidth(&s, 1.0).unwrap();
        assert!((h / sd - 0.201_639_563_7).abs() < 1e-9);
        let h = rule_of_thumb_bandwidth(&s, 0.25).unwrap();
        assert!((h / sd - 0.050_409_890_9).abs() < 1e-9);

        let one = sample_1d(&[2.0]);
        assert!(matches!(
            rule_of_thumb_bandwidth(&one, 1.0),
            Err(Error::Degenerate(_))
        ));
        let flat = sample_1d(&[1.0, 1.0, 1.0]);
        assert!(matches!(
            rule_of_thumb_bandwidth(&flat, 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn density_examples() {
        let g = KernelSpec::new(KernelFamily::Gaussian, 0.5, 1).unwrap();
        let s = sample_1d(&[0.3]);
        let f = density_estimate(&s, &[0.3], &g).unwrap();
        assert!((f - 0.797_884_560_802_865).abs() < 1e-12);

        let e = KernelSpec::new(KernelFamily::Epanechnikov, 0.4, 1).unwrap();
        let s = sample_1d(&[0.0, 0.5, 1.0]);
        let naive: f64 = [0.0f64, 0.5, 1.0]
            .iter()
            .map(|zi| {
                let u: f64 = (zi - 0.5) / 0.4;
                let k = if u.abs() <= 1.0 { 0.75 * (1.0 - u * u) } else { 0.0 };
                k / 0.4
            })
            .sum::<f64>()
            / 3.0;
        assert!((density_estimate(&s, &[0.5], &e).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn nw_weights_examples() {
        let e = KernelSpec::new(KernelFamily::Epanechnikov, 0.1, 1).unwrap();
        let s = sample_1d(&[0.2, 0.2, 0.2, 0.2]);
        let w = nw_weights(&s, &[0.25], &e).unwrap();
        assert!(w.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let s = sample_1d(&[0.0, 0.1, 0.5]);
        match nw_weights(&s, &[0.3], &e) {
            Err(Error::EmptyNeighborhood { z }) => assert_eq!(z, vec![0.3]),
            other => panic!("expected empty neighborhood, got {other:?}"),
        }
    }
}
