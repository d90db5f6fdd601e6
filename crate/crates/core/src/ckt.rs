//! Kernel-weighted estimator of the conditional Kendall's tau and the
//! triple-sum second moment used by the Wald variance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, LocalWeights};
use crate::sample::Sample;

/// Pair kernels whose conditional expectation is Kendall's tau.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConcordanceVariant {
    /// `4·1{x_i1 < x_j1, x_i2 < x_j2} - 1`
    G1,
    /// `sign((x_i1 - x_j1)(x_i2 - x_j2))`
    #[default]
    G2,
    /// `1 - 4·1{x_i1 < x_j1, x_i2 > x_j2}`
    G3,
}

impl ConcordanceVariant {
    /// Constant `c_k` of the exponential concentration bound.
    pub fn c_constant(self) -> f64 {
        match self {
            ConcordanceVariant::G1 | ConcordanceVariant::G3 => 4.0,
            ConcordanceVariant::G2 => 2.0,
        }
    }

    #[inline]
    pub(crate) fn eval(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self {
            ConcordanceVariant::G1 => {
                if a.0 < b.0 && a.1 < b.1 {
                    3.0
                } else {
                    -1.0
                }
            }
            ConcordanceVariant::G2 => {
                let prod = (a.0 - b.0) * (a.1 - b.1);
                if prod > 0.0 {
                    1.0
                } else if prod < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            ConcordanceVariant::G3 => {
                if a.0 < b.0 && a.1 > b.1 {
                    -3.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Symmetrized kernel `(g(a, b) + g(b, a)) / 2`.
    #[inline]
    pub(crate) fn symmetrized(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        0.5 * (self.eval(a, b) + self.eval(b, a))
    }
}

impl std::str::FromStr for ConcordanceVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g1" => Ok(ConcordanceVariant::G1),
            "g2" => Ok(ConcordanceVariant::G2),
            "g3" => Ok(ConcordanceVariant::G3),
            other => Err(Error::Argument(format!("unknown concordance variant `{other}`"))),
        }
    }
}

/// `g*(x_i, x_j)` for the chosen variant.
pub fn concordance(variant: ConcordanceVariant, xi: (f64, f64), xj: (f64, f64)) -> Result<f64> {
    if xi.0.is_nan() || xi.1.is_nan() || xj.0.is_nan() || xj.1.is_nan() {
        return Err(Error::Argument("NaN coordinate in concordance".into()));
    }
    Ok(variant.eval(xi, xj))
}

/// First-stage estimate at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CktEstimate {
    /// Estimate clipped to `[-1, 1]`.
    pub value: f64,
    /// Estimate before clipping.
    pub raw: f64,
    pub z: Vec<f64>,
    /// Number of observations with positive weight.
    pub support: usize,
    /// Kernel density estimate `f̂_Z(z)`.
    pub density: f64,
}

impl CktEstimate {
    pub fn clipped(&self) -> bool {
        self.value != self.raw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CktOptions {
    pub variant: ConcordanceVariant,
    /// Keep the `i = j` terms of the double sum.
    pub include_diagonal: bool,
}

impl Default for CktOptions {
    fn default() -> Self {
        CktOptions {
            variant: ConcordanceVariant::G2,
            include_diagonal: true,
        }
    }
}

fn local_pairs(sample: &Sample, w: &LocalWeights) -> Vec<(f64, f64)> {
    w.indices
        .iter()
        .map(|&i| {
            let r = sample.row(i);
            (r.x1, r.x2)
        })
        .collect()
}

/// Weighted double sum `Σ_i Σ_j w_i w_j g*(X_i, X_j)` (i outer, j inner).
pub(crate) fn weighted_double_sum(
    x: &[(f64, f64)],
    w: &[f64],
    variant: ConcordanceVariant,
    include_diagonal: bool,
) -> f64 {
    let mut acc = 0.0;
    for (i, (&xi, &wi)) in x.iter().zip(w).enumerate() {
        for (j, (&xj, &wj)) in x.iter().zip(w).enumerate() {
            if !include_diagonal && i == j {
                continue;
            }
            acc += wi * wj * variant.eval(xi, xj);
        }
    }
    acc
}

/// Conditional Kendall's tau estimate at `z`.
///
/// With `include_diagonal` the full double sum is returned; otherwise the
/// off-diagonal sum is divided by `1 - Σ w_i²`.
pub fn ckt_at(sample: &Sample, z: &[f64], kernel: &KernelSpec, opts: CktOptions) -> Result<CktEstimate> {
    sample.require_at_least(2)?;
    let w = LocalWeights::compute(sample, z, kernel)?;
    let x = local_pairs(sample, &w);
    let sum = weighted_double_sum(&x, &w.weights, opts.variant, opts.include_diagonal);
    let raw = if opts.include_diagonal {
        sum
    } else {
        let denom = 1.0 - w.sum_sq();
        if !(denom > 0.0) {
            return Err(Error::Degenerate(format!(
                "a single observation carries all kernel weight at z = {z:?}"
            )));
        }
        sum / denom
    };
    Ok(CktEstimate {
        value: raw.clamp(-1.0, 1.0),
        raw,
        z: z.to_vec(),
        support: w.support(),
        density: w.density(),
    })
}

/// `ckt_at` over many points, evaluated in parallel; output order follows `points`.
pub fn ckt_batch(
    sample: &Sample,
    points: &[Vec<f64>],
    kernel: &KernelSpec,
    opts: CktOptions,
) -> Vec<Result<CktEstimate>> {
    points
        .par_iter()
        .map(|z| ckt_at(sample, z, kernel, opts))
        .collect()
}

/// Exact-versus-subsampled control for the triple sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnBudget {
    /// Use the exact triple sum when `m³ <= max_triples`, `m` being the number
    /// of observations with positive weight; otherwise draw `max_triples`
    /// random ordered triples of distinct indices.
    pub max_triples: u64,
}

impl Default for GnBudget {
    fn default() -> Self {
        GnBudget {
            max_triples: 300 * 300 * 300,
        }
    }
}

/// `𝒢ₙ(z) = Σ_{i,j,k distinct} w_i w_j w_k g̃(X_i, X_k) g̃(X_j, X_k)`.
pub fn gn_moment(
    sample: &Sample,
    z: &[f64],
    kernel: &KernelSpec,
    variant: ConcordanceVariant,
    budget: GnBudget,
    seed: u64,
) -> Result<f64> {
    sample.require_at_least(3)?;
    let w = LocalWeights::compute(sample, z, kernel)?;
    let x = local_pairs(sample, &w);
    Ok(gn_from_local(&x, &w.weights, variant, budget, seed))
}

pub(crate) fn gn_from_local(
    x: &[(f64, f64)],
    w: &[f64],
    variant: ConcordanceVariant,
    budget: GnBudget,
    seed: u64,
) -> f64 {
    let m = x.len();
    if m < 3 {
        return 0.0;
    }
    let cube = (m as u64).saturating_mul(m as u64).saturating_mul(m as u64);
    if cube <= budget.max_triples {
        if m <= DIRECT_MAX {
            gn_exact(x, w, variant)
        } else {
            gn_reduced(x, w, variant)
        }
    } else {
        gn_subsampled(x, w, variant, budget.max_triples.max(1), seed)
    }
}

const DIRECT_MAX: usize = 64;

/// Exact triple sum in `O(m²)` via
/// `Σ_k w_k [(Σ_{i≠k} w_i g̃_ik)² - Σ_{i≠k} w_i² g̃_ik²]`.
fn gn_reduced(x: &[(f64, f64)], w: &[f64], variant: ConcordanceVariant) -> f64 {
    let m = x.len();
    let mut acc = 0.0;
    for k in 0..m {
        let (mut lin, mut sq) = (0.0, 0.0);
        for i in 0..m {
            if i == k {
                continue;
            }
            let a = w[i] * variant.symmetrized(x[i], x[k]);
            lin += a;
            sq += a * a;
        }
        acc += w[k] * (lin * lin - sq);
    }
    acc
}

fn gn_exact(x: &[(f64, f64)], w: &[f64], variant: ConcordanceVariant) -> f64 {
    let m = x.len();
    let mut gt = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            gt[a * m + b] = variant.symmetrized(x[a], x[b]);
        }
    }
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            if j == i {
                continue;
            }
            for k in 0..m {
                if k == i || k == j {
                    continue;
                }
                acc += w[i] * w[j] * w[k] * gt[i * m + k] * gt[j * m + k];
            }
        }
    }
    acc
}

fn gn_subsampled(x: &[(f64, f64)], w: &[f64], variant: ConcordanceVariant, draws: u64, seed: u64) -> f64 {
    let m = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..draws {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let mut k = rng.random_range(0..m - 2);
        if k >= lo {
            k += 1;
        }
        if k >= hi {
            k += 1;
        }
        acc += w[i] * w[j] * w[k] * variant.symmetrized(x[i], x[k]) * variant.symmetrized(x[j], x[k]);
    }
    let total = m as f64 * (m - 1) as f64 * (m - 2) as f64;
    total * acc / draws as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;

    const ALL: [ConcordanceVariant; 3] = [
        ConcordanceVariant::G1,
        ConcordanceVariant::G2,
        ConcordanceVariant::G3,
    ];

    #[test]
    fn concordance_examples() {
        use ConcordanceVariant::*;
        assert_eq!(concordance(G1, (0.0, 0.0), (1.0, 1.0)).unwrap(), 3.0);
        assert_eq!(concordance(G2, (0.0, 0.0), (1.0, 1.0)).unwrap(), 1.0);
        assert_eq!(concordance(G2, (0.0, 0.0), (0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(concordance(G1, (0.3, 0.2), (0.3, 0.2)).unwrap(), -1.0);
        assert_eq!(concordance(G3, (0.0, 1.0), (1.0, 0.0)).unwrap(), -3.0);
        assert_eq!(concordance(G3, (0.0, 0.0), (1.0, 1.0)).unwrap(), 1.0);
        assert!(concordance(G2, (f64::NAN, 0.0), (1.0, 1.0)).is_err());
    }

    #[test]
    fn g2_symmetric() {
        let pts = [(0.1, 0.9), (0.4, -0.3), (0.4, 0.5), (-2.0, 0.0)];
        for &a in &pts {
            for &b in &pts {
                assert_eq!(
                    ConcordanceVariant::G2.eval(a, b),
                    ConcordanceVariant::G2.eval(b, a)
                );
            }
        }
    }

    #[test]
    fn two_point_examples() {
        let s = Sample::from_scalar_z(&[0.0, 1.0], &[0.0, 1.0], &[0.5, 0.5]).unwrap();
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 1.0, 1).unwrap();
        let with = ckt_at(&s, &[0.5], &k, CktOptions::default()).unwrap();
        assert!((with.value - 0.5).abs() < 1e-15);
        let without = ckt_at(
            &s,
            &[0.5],
            &k,
            CktOptions {
                include_diagonal: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((without.value - 1.0).abs() < 1e-15);
        assert_eq!(with.support, 2);
    }

    #[test]
    fn rejects_tiny_samples() {
        let s = Sample::from_scalar_z(&[0.0], &[0.0], &[0.5]).unwrap();
        let k = KernelSpec::new(KernelFamily::Gaussian, 1.0, 1).unwrap();
        assert!(matches!(
            ckt_at(&s, &[0.5], &k, CktOptions::default()),
            Err(Error::Degenerate(_))
        ));
        let s = Sample::from_scalar_z(&[0.0, 1.0], &[0.0, 1.0], &[0.1, 0.2]).unwrap();
        assert!(matches!(
            gn_moment(&s, &[0.1], &k, ConcordanceVariant::G2, GnBudget::default(), 0),
            Err(Error::Degenerate(_))
        ));
    }

    fn pseudo_sample(n: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let x1: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let x2: Vec<f64> = x1.iter().map(|v| v + 0.5 * rng.random::<f64>()).collect();
        Sample::from_scalar_z(&x1, &x2, &z).unwrap()
    }

    #[test]
    fn g2_estimates_stay_in_range_and_are_coordinate_symmetric() {
        let s = pseudo_sample(200, 3);
        let swapped = Sample::from_columns(
            &s.rows().iter().map(|r| r.x2).collect::<Vec<_>>(),
            &s.rows().iter().map(|r| r.x1).collect::<Vec<_>>(),
            &s.rows().iter().map(|r| r.z.clone()).collect::<Vec<_>>(),
        )
        .unwrap();
        let k = KernelSpec::new(KernelFamily::Gaussian, 0.1, 1).unwrap();
        for z in [0.1, 0.5, 0.9] {
            let a = ckt_at(&s, &[z], &k, CktOptions::default()).unwrap();
            let b = ckt_at(&swapped, &[z], &k, CktOptions::default()).unwrap();
            assert!(a.raw.abs() <= 1.0);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn rank_invariance_under_monotone_maps() {
        let s = pseudo_sample(150, 9);
        let mapped = Sample::from_columns(
            &s.rows().iter().map(|r| r.x1.exp()).collect::<Vec<_>>(),
            &s.rows().iter().map(|r| r.x2.powi(3) - 4.0).collect::<Vec<_>>(),
            &s.rows().iter().map(|r| r.z.clone()).collect::<Vec<_>>(),
        )
        .unwrap();
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.2, 1).unwrap();
        for variant in ALL {
            for diag in [true, false] {
                let o = CktOptions {
                    variant,
                    include_diagonal: diag,
                };
                let a = ckt_at(&s, &[0.4], &k, o).unwrap();
                let b = ckt_at(&mapped, &[0.4], &k, o).unwrap();
                assert_eq!(a.raw, b.raw, "{variant:?} diag={diag}");
            }
        }
    }

    #[test]
    fn batch_matches_sequential_in_order() {
        let s = pseudo_sample(120, 1);
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.05, 1).unwrap();
        let pts: Vec<Vec<f64>> = vec![vec![0.9], vec![0.2], vec![1.5], vec![0.5]];
        let batch = ckt_batch(&s, &pts, &k, CktOptions::default());
        for (p, b) in pts.iter().zip(&batch) {
            let single = ckt_at(&s, p, &k, CktOptions::default());
            assert_eq!(&single, b);
        }
        assert!(matches!(batch[2], Err(Error::EmptyNeighborhood { .. })));
    }

    #[test]
    fn gn_reduction_matches_triple_loop() {
        for seed in 0..5 {
            let s = pseudo_sample(90, seed);
            let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.6, 1).unwrap();
            let w = LocalWeights::compute(&s, &[0.5], &k).unwrap();
            let x = local_pairs(&s, &w);
            for v in ALL {
                let a = gn_exact(&x, &w.weights, v);
                let b = gn_reduced(&x, &w.weights, v);
                assert!((a - b).abs() < 1e-12, "{a} {b}");
            }
        }
    }

    #[test]
    fn gn_exact_and_subsampled_agree_when_budget_suffices() {
        let s = pseudo_sample(40, 5);
        let k = KernelSpec::new(KernelFamily::Gaussian, 0.3, 1).unwrap();
        let exact = gn_moment(&s, &[0.5], &k, ConcordanceVariant::G2, GnBudget::default(), 1).unwrap();
        let sub = gn_moment(
            &s,
            &[0.5],
            &k,
            ConcordanceVariant::G2,
            GnBudget { max_triples: 63_999 },
            1,
        )
        .unwrap();
        assert!(exact.abs() <= 1.0);
        // 40³ > 63999 forces the subsampled path with 63999 draws
        assert!((exact - sub).abs() < 0.05 * exact.abs().max(0.05), "{exact} vs {sub}");
        let again = gn_moment(
            &s,
            &[0.5],
            &k,
            ConcordanceVariant::G2,
            GnBudget { max_triples: 63_999 },
            1,
        )
        .unwrap();
        assert_eq!(sub, again);
    }
}
