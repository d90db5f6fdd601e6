//! Data-generating processes for the simulation settings: Gaussian and Frank
//! copulas driven by a conditional Kendall's tau, with normal margins.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::Open01;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_dim, Error, Result};
use crate::sample::{Observation, Sample};

const CHUNK: usize = 1024;

/// Derives an independent 64-bit seed from a root seed and a stream path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^ (x >> 31)
    }
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Gaussian-copula correlation with Kendall's tau `tau`: `sin(π τ / 2)`.
pub fn tau_to_rho_gaussian(tau: f64) -> Result<f64> {
    if !(tau.abs() < 1.0) {
        return Err(Error::Argument(format!("tau must lie in (-1, 1), got {tau}")));
    }
    Ok((0.5 * PI * tau).sin())
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Gauss-Kronrod (7, 15) rule on `[a, b]`: `(kronrod, |kronrod - gauss|)`.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WEIGHTS[7] * fc;
    let mut g = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let pair = f(c - x) + f(c + x);
        k += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            g += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature with recursive bisection.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (k, err) = gk15(f, a, b);
        if depth == 0 || err <= tol.max(1e-15 * k.abs()) {
            return k;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    rec(f, a, b, tol, 30)
}

fn debye_integrand(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        t / t.exp_m1()
    }
}

/// Debye function `D₁(θ) = (1/θ) ∫₀^θ t / (eᵗ - 1) dt`.
pub fn debye1(theta: f64) -> f64 {
    if theta == 0.0 {
        return 1.0;
    }
    if theta < 0.0 {
        return debye1(-theta) - 0.5 * theta;
    }
    let upper = theta.min(60.0);
    integrate(&debye_integrand, 0.0, upper, 1e-15) / theta
}

/// Kendall's tau of the Frank copula, `1 + 4 (D₁(θ) - 1) / θ`.
pub fn frank_tau_from_theta(theta: f64) -> Result<f64> {
    if theta == 0.0 || theta.is_nan() {
        return Err(Error::Argument("Frank parameter must be nonzero".into()));
    }
    Ok(frank_tau_unchecked(theta))
}

fn frank_tau_unchecked(theta: f64) -> f64 {
    if theta < 0.0 {
        return -frank_tau_unchecked(-theta);
    }
    if theta < 1e-3 {
        let t2 = theta * theta;
        return theta / 9.0 - theta * t2 / 900.0 + theta * t2 * t2 / 52920.0;
    }
    1.0 + 4.0 * (debye1(theta) - 1.0) / theta
}

fn frank_tau_derivative(theta: f64) -> f64 {
    if theta < 1e-3 {
        return 1.0 / 9.0 - theta * theta / 300.0;
    }
    let d = debye1(theta);
    let dd = 1.0 / theta.exp_m1() - d / theta;
    4.0 * dd / theta - 4.0 * (d - 1.0) / (theta * theta)
}

/// Inverse of [`frank_tau_from_theta`], by safeguarded Newton steps inside a bisection bracket.
pub fn frank_theta_from_tau(tau: f64) -> Result<f64> {
    if !(tau.abs() < 1.0) || tau == 0.0 {
        return Err(Error::Argument(format!("tau must lie in (-1, 1) \\ {{0}}, got {tau}")));
    }
    if tau < 0.0 {
        return Ok(-frank_theta_from_tau(-tau)?);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while frank_tau_unchecked(hi) < tau {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Ok(hi);
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = frank_tau_unchecked(x) - tau;
        if f.abs() <= 1e-14 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = x - f / frank_tau_derivative(x);
        x = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
    Frank,
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(CopulaFamily::Gaussian),
            "frank" => Ok(CopulaFamily::Frank),
            other => Err(Error::Argument(format!("unknown copula family `{other}`"))),
        }
    }
}

/// A fully specified bivariate copula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CopulaParam {
    Independent,
    Gaussian { rho: f64 },
    Frank { theta: f64 },
}

impl CopulaParam {
    pub fn from_tau(family: CopulaFamily, tau: f64) -> Result<Self> {
        if tau == 0.0 {
            return Ok(CopulaParam::Independent);
        }
        Ok(match family {
            CopulaFamily::Gaussian => CopulaParam::Gaussian {
                rho: tau_to_rho_gaussian(tau)?,
            },
            CopulaFamily::Frank => CopulaParam::Frank {
                theta: frank_theta_from_tau(tau)?,
            },
        })
    }

    /// One draw `(U, V)` with uniform margins, together with the standard
    /// normal scores `(Φ⁻¹(U), Φ⁻¹(V))`.
    fn draw<R: Rng>(&self, rng: &mut R) -> ((f64, f64), (f64, f64)) {
        let normal = Normal::standard();
        match *self {
            CopulaParam::Gaussian { rho } => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let w = rho * a + (1.0 - rho * rho).sqrt() * b;
                ((normal.cdf(a), normal.cdf(w)), (a, w))
            }
            CopulaParam::Independent => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                ((normal.cdf(a), normal.cdf(b)), (a, b))
            }
            CopulaParam::Frank { theta } => {
                let u: f64 = rng.sample(Open01);
                let w: f64 = rng.sample(Open01);
                let v = frank_conditional_inverse(theta, u, w);
                let q = |p: f64| normal.inverse_cdf(p.clamp(1e-300, 1.0 - f64::EPSILON / 2.0));
                ((u, v), (q(u), q(v)))
            }
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Solves `∂C(u, v)/∂u = w` for `v` under the Frank copula, in the log domain:
/// `v = -(1/θ) log(1 + w(e^{-θ} - 1) / (w + (1 - w) e^{-θu}))`.
pub fn frank_conditional_inverse(theta: f64, u: f64, w: f64) -> f64 {
    if theta == 0.0 {
        return w;
    }
    let (lw, l1w) = (w.ln(), (-w).ln_1p());
    let num = log_add_exp(l1w - theta * u, lw - theta);
    let den = log_add_exp(lw, l1w - theta * u);
    (-(num - den) / theta).clamp(0.0, 1.0)
}

/// `n` copula draws `(U, V)`; deterministic in `seed` regardless of thread count.
pub fn sample_copula(param: CopulaParam, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng_for(seed, &[c as u64]);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(move |_| param.draw(&mut rng).0).collect::<Vec<_>>()
        })
        .collect()
}

/// The simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    D1,
    D2,
    D3,
}

impl SettingId {
    pub const ONE_DIM: [SettingId; 6] = [
        SettingId::S1,
        SettingId::S2,
        SettingId::S3,
        SettingId::S4,
        SettingId::S5,
        SettingId::S6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SettingId::S1 => "s1",
            SettingId::S2 => "s2",
            SettingId::S3 => "s3",
            SettingId::S4 => "s4",
            SettingId::S5 => "s5",
            SettingId::S6 => "s6",
            SettingId::D1 => "d1",
            SettingId::D2 => "d2",
            SettingId::D3 => "d3",
        }
    }
}

impl std::fmt::Display for SettingId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SettingId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let all = [
            SettingId::S1,
            SettingId::S2,
            SettingId::S3,
            SettingId::S4,
            SettingId::S5,
            SettingId::S6,
            SettingId::D1,
            SettingId::D2,
            SettingId::D3,
        ];
        let key = s.to_ascii_lowercase();
        let key = key.strip_prefix("setting").unwrap_or(&key);
        all.into_iter()
            .find(|id| id.name() == key || id.name()[1..] == *key && id.name().starts_with('s'))
            .ok_or_else(|| Error::Argument(format!("unknown setting `{s}`")))
    }
}

pub type TauFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A data-generating process.
#[derive(Clone)]
pub enum SettingSpec {
    Builtin(SettingId),
    /// Copula family driven by an arbitrary tau function on `[0, 1]^dim`,
    /// with `N(z₁, 1)` margins.
    Custom {
        name: String,
        family: CopulaFamily,
        dim: usize,
        tau: TauFn,
    },
}

impl std::fmt::Debug for SettingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SettingSpec::Builtin(id) => write!(f, "Builtin({id})"),
            SettingSpec::Custom { name, family, dim, .. } => write!(f, "Custom({name}, {family:?}, {dim})"),
        }
    }
}

impl From<SettingId> for SettingSpec {
    fn from(id: SettingId) -> Self {
        SettingSpec::Builtin(id)
    }
}

fn tau_s1(z: f64) -> f64 {
    3.0 * z * (1.0 - z)
}

fn theta_s2(z: f64) -> f64 {
    (0.5 * PI * z).tan()
}

fn tau_s2(z: f64) -> f64 {
    let th = theta_s2(z);
    if th == 0.0 {
        0.0
    } else {
        frank_tau_unchecked(th)
    }
}

impl SettingSpec {
    pub fn name(&self) -> String {
        match self {
            SettingSpec::Builtin(id) => id.name().to_string(),
            SettingSpec::Custom { name, .. } => name.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SettingSpec::Builtin(SettingId::D1 | SettingId::D2 | SettingId::D3) => 2,
            SettingSpec::Builtin(_) => 1,
            SettingSpec::Custom { dim, .. } => *dim,
        }
    }

    pub fn family(&self) -> CopulaFamily {
        match self {
            SettingSpec::Builtin(SettingId::S2 | SettingId::S3 | SettingId::S6) => CopulaFamily::Frank,
            SettingSpec::Builtin(_) => CopulaFamily::Gaussian,
            SettingSpec::Custom { family, .. } => *family,
        }
    }

    /// True when the conditional tau does not depend on `z`.
    pub fn is_simplified(&self) -> bool {
        matches!(self, SettingSpec::Builtin(SettingId::S5 | SettingId::S6))
    }

    fn check_box(&self, z: &[f64]) -> Result<()> {
        check_dim(self.dim(), z.len())?;
        if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument(format!("z = {z:?} lies outside [0, 1]^{}", self.dim())));
        }
        Ok(())
    }

    /// Exact conditional Kendall's tau at `z`.
    pub fn true_tau(&self, z: &[f64]) -> Result<f64> {
        self.check_box(z)?;
        Ok(self.tau_unchecked(z))
    }

    fn tau_unchecked(&self, z: &[f64]) -> f64 {
        match self {
            SettingSpec::Builtin(id) => match id {
                SettingId::S1 | SettingId::S3 => tau_s1(z[0]),
                SettingId::S2 | SettingId::S4 => tau_s2(z[0]),
                SettingId::S5 | SettingId::S6 => 0.5,
                SettingId::D1 => 0.75 * (z[0] - z[1]),
                SettingId::D2 => 0.5 * (2.0 * PI * z[0]).cos() + 0.25 * (2.0 * PI * z[1]).sin(),
                SettingId::D3 => 0.75 * (z[0].max(1e-12) / z[1].max(1e-12)).tanh(),
            },
            SettingSpec::Custom { tau, .. } => tau(z),
        }
    }

    /// Copula at covariate value `z`.
    pub fn copula_at(&self, z: &[f64]) -> Result<CopulaParam> {
        self.check_box(z)?;
        if let SettingSpec::Builtin(SettingId::S2) = self {
            let th = theta_s2(z[0]);
            return Ok(if th == 0.0 {
                CopulaParam::Independent
            } else {
                CopulaParam::Frank { theta: th }
            });
        }
        let tau = self.tau_unchecked(z);
        if !(tau.abs() < 1.0) {
            return Err(Error::Argument(format!("tau({z:?}) = {tau} is not inside (-1, 1)")));
        }
        CopulaParam::from_tau(self.family(), tau)
    }

    /// `(mean, sd)` of both conditional margins.
    fn margin(&self, z: &[f64]) -> (f64, f64) {
        match self {
            SettingSpec::Builtin(SettingId::D1 | SettingId::D2 | SettingId::D3) => (0.0, z[0].max(1e-12).sqrt()),
            _ => (z[0], 1.0),
        }
    }

    /// Draws at the given covariate values, one observation per entry.
    pub fn sample_at(&self, zs: &[Vec<f64>], seed: u64) -> Result<Sample> {
        if zs.is_empty() {
            return Err(Error::Degenerate("n must be at least 1".into()));
        }
        let cached = if self.is_simplified() {
            Some(self.copula_at(&zs[0])?)
        } else {
            None
        };
        let chunks: Vec<Vec<Observation>> = zs
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, block)| {
                let mut rng = rng_for(seed, &[1, c as u64]);
                block
                    .iter()
                    .map(|z| {
                        let param = match cached {
                            Some(p) => p,
                            None => self.copula_at(z)?,
                        };
                        let (_, (a, b)) = param.draw(&mut rng);
                        let (mu, sd) = self.margin(z);
                        Ok(Observation {
                            x1: mu + sd * a,
                            x2: mu + sd * b,
                            z: z.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Sample::new(chunks.into_iter().flatten().collect())
    }

    /// `n` observations with `Z` uniform on `[0, 1]^p`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        if n == 0 {
            return Err(Error::Degenerate("n must be at least 1".into()));
        }
        let dim = self.dim();
        let zs: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = rng_for(seed, &[0, c as u64]);
                let len = CHUNK.min(n - c * CHUNK);
                (0..len)
                    .map(move |_| (0..dim).map(|_| rng.random::<f64>()).collect::<Vec<f64>>())
                    .collect::<Vec<_>>()
            })
            .collect();
        self.sample_at(&zs, seed)
    }
}

pub fn sample_setting(spec: &SettingSpec, n: usize, seed: u64) -> Result<Sample> {
    spec.sample(n, seed)
}

pub fn true_tau(spec: &SettingSpec, z: &[f64]) -> Result<f64> {
    spec.true_tau(z)
}

/// Kendall's tau-b of paired data in `O(n log n)` (Knight's algorithm).
pub fn empirical_kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Argument("x and y must have equal length".into()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Degenerate("need at least two pairs".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Argument("NaN in input".into()));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tie_pairs = |counts: &mut dyn Iterator<Item = u64>| -> u64 { counts.map(|t| t * (t - 1) / 2).sum() };
    let runs = |eq: &dyn Fn(usize) -> bool| -> Vec<u64> {
        let mut out = Vec::new();
        let mut run = 1u64;
        for i in 1..n {
            if eq(i) {
                run += 1;
            } else {
                out.push(run);
                run = 1;
            }
        }
        out.push(run);
        out
    };
    let tx = tie_pairs(&mut runs(&|i| pairs[i].0 == pairs[i - 1].0).into_iter());
    let txy = tie_pairs(&mut runs(&|i| pairs[i] == pairs[i - 1]).into_iter());

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys);
    let ty = {
        let mut run = 1u64;
        let mut acc = 0u64;
        for i in 1..n {
            if ys[i] == ys[i - 1] {
                run += 1;
            } else {
                acc += run * (run - 1) / 2;
                run = 1;
            }
        }
        acc + run * (run - 1) / 2
    };
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let num = n0 as f64 - tx as f64 - ty as f64 + txy as f64 - 2.0 * swaps as f64;
    let den = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if den == 0.0 {
        return Err(Error::Degenerate("a variable is constant".into()));
    }
    Ok(num / den)
}

/// Sorts in place and returns the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    let mut buf = v.to_vec();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    buf[k] = v[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + end - j].copy_from_slice(&v[j..end]);
            start = end;
        }
        v.copy_from_slice(&buf);
        width *= 2;
    }
    swaps
}

/// Kolmogorov-Smirnov distance between the empirical law of `u` and U(0, 1).
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_tau_a(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += ((x[i] - x[j]) * (y[i] - y[j])).signum();
            }
        }
        s / (n * (n - 1) / 2) as f64
    }

    #[test]
    fn rho_examples() {
        assert_eq!(tau_to_rho_gaussian(0.0).unwrap(), 0.0);
        assert!((tau_to_rho_gaussian(0.5).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        let r = tau_to_rho_gaussian(1.0 - 1e-9).unwrap();
        assert!(r <= 1.0 && r > 0.999 && r.is_finite());
        assert!(tau_to_rho_gaussian(1.0).is_err());
    }

    #[test]
    fn debye_matches_riemann_sum() {
        for theta in [1.0f64, 5.0, 10.0] {
            let m = 1_000_000;
            let step = theta / m as f64;
            let riemann: f64 = (0..m).map(|i| debye_integrand((i as f64 + 0.5) * step)).sum::<f64>() * step / theta;
            assert!((debye1(theta) - riemann).abs() < 1e-8, "{theta}");
        }
        // D₁(-θ) = D₁(θ) + θ/2
        assert!((debye1(-2.0) - debye1(2.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn debye_matches_exponential_series() {
        // D₁(x) = (π²/6 - Σ_k e^{-kx}(x/k + 1/k²)) / x
        for x in [2.0f64, 3.7, 9.0, 25.0, 80.0] {
            let tail: f64 = (1..200)
                .map(|k| {
                    let k = k as f64;
                    (-k * x).exp() * (x / k + 1.0 / (k * k))
                })
                .sum();
            let series = (PI * PI / 6.0 - tail) / x;
            assert!((debye1(x) - series).abs() < 1e-13, "{x}");
        }
    }

    #[test]
    fn frank_tau_examples() {
        assert!(frank_tau_from_theta(0.0).is_err());
        assert!(frank_tau_from_theta(1e-8).unwrap().abs() < 1e-8);
        for th in [0.5, 2.0, 8.0] {
            let a = frank_tau_from_theta(th).unwrap();
            let b = frank_tau_from_theta(-th).unwrap();
            assert!((a + b).abs() < 1e-10);
        }
        let grid: Vec<f64> = (1..400).map(|i| -40.0 + 0.2 * i as f64).filter(|t| *t != 0.0).collect();
        let vals: Vec<f64> = grid.iter().map(|t| frank_tau_from_theta(*t).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        // continuity across the series cut
        let a = frank_tau_unchecked(0.999e-3);
        let b = frank_tau_unchecked(1.001e-3);
        assert!((b - a - 2e-6 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn frank_inversion() {
        let th = frank_theta_from_tau(0.5).unwrap();
        assert!((th - 5.736).abs() < 1e-3, "{th}");
        assert!((frank_theta_from_tau(-0.5).unwrap() + th).abs() < 1e-10);
        for k in 1..=9 {
            for s in [-1.0, 1.0] {
                let tau = s * k as f64 / 10.0;
                let back = frank_tau_from_theta(frank_theta_from_tau(tau).unwrap()).unwrap();
                assert!((back - tau).abs() <= 1e-10, "{tau}: {back}");
            }
        }
        assert!(frank_theta_from_tau(0.0).is_err());
        assert!(frank_theta_from_tau(1.0).is_err());
    }

    #[test]
    fn frank_conditional_inverse_inverts_the_h_function() {
        for theta in [-35.0, -3.0, 0.7, 5.736, 40.0] {
            for &u in &[0.05, 0.4, 0.93] {
                for &w in &[0.01, 0.5, 0.99] {
                    let v = frank_conditional_inverse(theta, u, w);
                    // ∂C/∂u for Frank: e^{-θu}(e^{-θv}-1) / ((e^{-θ}-1) + (e^{-θu}-1)(e^{-θv}-1)),
                    // expanded so that no two terms of similar size are subtracted
                    let h = if theta > 0.0 {
                        let (a, b, c, e) = (
                            (-theta).exp(),
                            (-theta * u).exp(),
                            (-theta * v).exp(),
                            (-theta * (u + v)).exp(),
                        );
                        (b - e) / (b + c - a - e)
                    } else {
                        let (a, b, c) = ((theta * (u + v - 1.0)).exp(), (theta * u).exp(), (theta * v).exp());
                        (c - 1.0) / (c + b - a - 1.0)
                    };
                    assert!((h - w).abs() < 1e-8, "θ={theta} u={u} w={w}: {h}");
                }
            }
        }
    }

    #[test]
    fn knight_matches_naive() {
        let mut rng = rng_for(3, &[]);
        for n in [2usize, 3, 10, 57, 200] {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = x.iter().map(|v| v + 0.5 * rng.random::<f64>()).collect();
            let a = empirical_kendall_tau(&x, &y).unwrap();
            assert!((a - naive_tau_a(&x, &y)).abs() < 1e-12);
        }
        // tau-b with ties
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 2.0, 3.0];
        let expect = 4.0 / (5.0f64 * 5.0).sqrt();
        assert!((empirical_kendall_tau(&x, &y).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn true_tau_examples() {
        let s1 = SettingSpec::from(SettingId::S1);
        assert_eq!(s1.true_tau(&[0.5]).unwrap(), 0.75);
        assert!(s1.true_tau(&[1.5]).is_err());
        let d2 = SettingSpec::from(SettingId::D2);
        assert!(d2.true_tau(&[0.25, 0.0]).unwrap().abs() < 1e-15);
        let s2 = SettingSpec::from(SettingId::S2);
        let near = s2.true_tau(&[0.999]).unwrap();
        assert!(near > 0.99 && near < 1.0);
        let s4 = SettingSpec::from(SettingId::S4);
        assert_eq!(s2.true_tau(&[0.3]).unwrap(), s4.true_tau(&[0.3]).unwrap());
    }

    #[test]
    fn samples_are_reproducible_across_thread_counts() {
        let spec = SettingSpec::from(SettingId::S3);
        let a = spec.sample(3000, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| spec.sample(3000, 42).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, spec.sample(3000, 43).unwrap());
    }

    #[test]
    fn simplified_setting_has_target_tau() {
        let s = SettingSpec::from(SettingId::S5).sample(100_000, 1).unwrap();
        let x1: Vec<f64> = s.rows().iter().map(|r| r.x1 - r.z[0]).collect();
        let x2: Vec<f64> = s.rows().iter().map(|r| r.x2 - r.z[0]).collect();
        let t = empirical_kendall_tau(&x1, &x2).unwrap();
        assert!((t - 0.5).abs() < 0.01, "{t}");
    }

    #[test]
    fn pinned_covariate_has_target_tau() {
        let spec = SettingSpec::from(SettingId::S1);
        let zs = vec![vec![0.5]; 200_000];
        let s = spec.sample_at(&zs, 5).unwrap();
        let x1: Vec<f64> = s.rows().iter().map(|r| r.x1).collect();
        let x2: Vec<f64> = s.rows().iter().map(|r| r.x2).collect();
        assert!((empirical_kendall_tau(&x1, &x2).unwrap() - 0.75).abs() < 0.01);
    }

    #[test]
    fn copula_margins_are_uniform() {
        for param in [CopulaParam::Gaussian { rho: 0.7 }, CopulaParam::Frank { theta: -12.0 }] {
            let uv = sample_copula(param, 100_000, 8);
            let u: Vec<f64> = uv.iter().map(|p| p.0).collect();
            let v: Vec<f64> = uv.iter().map(|p| p.1).collect();
            assert!(ks_uniform(&u) <= 0.01 && ks_uniform(&v) <= 0.01);
        }
    }

    #[test]
    fn setting_names_parse() {
        assert_eq!("s4".parse::<SettingId>().unwrap(), SettingId::S4);
        assert_eq!("4".parse::<SettingId>().unwrap(), SettingId::S4);
        assert_eq!("setting5".parse::<SettingId>().unwrap(), SettingId::S5);
        assert_eq!("D3".parse::<SettingId>().unwrap(), SettingId::D3);
        assert!("s7".parse::<SettingId>().is_err());
    }
}
