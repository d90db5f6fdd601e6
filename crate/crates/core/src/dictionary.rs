//! Basis dictionaries `ψ: R^p -> R^p'`.
//!
//! A dictionary is an ordered list of terms; each term is a product of
//! univariate factors acting on individual covariate coordinates (the empty
//! product is the constant 1). Coefficient `j` of a fit always refers to term `j`.
//!
//! Two-dimensional families are enumerated lexicographically in `(i, j)`, the
//! degree/frequency indices of the factors on `z1` and `z2`. Within a
//! trigonometric pair the order is `(cos·cos, cos·sin, sin·cos, sin·sin)`.
//! Mixed families list the polynomial family first and then the trigonometric
//! family without its constant term.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_dim, Error, Result};

/// Univariate building block of a term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorKind {
    /// `2^-d (x - 0.5)^d`
    CenteredPoly { degree: u32 },
    /// `x^d`
    Power { degree: u32 },
    /// `cos(2 k π x)`
    Cos { freq: u32 },
    /// `sin(2 k π x)`
    Sin { freq: u32 },
    /// `1{x <= t}`
    Indicator { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub coord: usize,
    #[serde(flatten)]
    pub kind: FactorKind,
}

impl Factor {
    fn eval(&self, x: f64) -> f64 {
        match self.kind {
            FactorKind::CenteredPoly { degree } => (0.5 * (x - 0.5)).powi(degree as i32),
            FactorKind::Power { degree } => x.powi(degree as i32),
            FactorKind::Cos { freq } => (2.0 * freq as f64 * PI * x).cos(),
            FactorKind::Sin { freq } => (2.0 * freq as f64 * PI * x).sin(),
            FactorKind::Indicator { threshold } => {
                if x <= threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative in `x`; `None` at an indicator threshold.
    fn deriv(&self, x: f64) -> Option<f64> {
        Some(match self.kind {
            FactorKind::CenteredPoly { degree } => {
                if degree == 0 {
                    0.0
                } else {
                    degree as f64 * 0.5 * (0.5 * (x - 0.5)).powi(degree as i32 - 1)
                }
            }
            FactorKind::Power { degree } => {
                if degree == 0 {
                    0.0
                } else {
                    degree as f64 * x.powi(degree as i32 - 1)
                }
            }
            FactorKind::Cos { freq } => {
                let w = 2.0 * freq as f64 * PI;
                -w * (w * x).sin()
            }
            FactorKind::Sin { freq } => {
                let w = 2.0 * freq as f64 * PI;
                w * (w * x).cos()
            }
            FactorKind::Indicator { threshold } => {
                if x == threshold {
                    return None;
                }
                0.0
            }
        })
    }

    fn label(&self, dim: usize) -> String {
        let var = if dim == 1 {
            "z".to_string()
        } else {
            format!("z{}", self.coord + 1)
        };
        match self.kind {
            FactorKind::CenteredPoly { degree } => format!("p{degree}({var})"),
            FactorKind::Power { degree } => format!("{var}^{degree}"),
            FactorKind::Cos { freq } => format!("cos({}pi*{var})", 2 * freq),
            FactorKind::Sin { freq } => format!("sin({}pi*{var})", 2 * freq),
            FactorKind::Indicator { threshold } => format!("1{{{var}<={threshold}}}"),
        }
    }
}

/// A product of factors; the empty product is the constant function 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn constant() -> Self {
        Term {
            name: "1".into(),
            factors: Vec::new(),
        }
    }

    pub fn from_factors(factors: Vec<Factor>, dim: usize) -> Self {
        if factors.is_empty() {
            return Term::constant();
        }
        let name = factors
            .iter()
            .map(|f| f.label(dim))
            .collect::<Vec<_>>()
            .join("*");
        Term { name, factors }
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.eval(z[f.coord])).product()
    }

    fn deriv(&self, z: &[f64], coord: usize) -> Option<f64> {
        let mut total = 0.0;
        for (k, f) in self.factors.iter().enumerate() {
            if f.coord != coord {
                continue;
            }
            let mut prod = f.deriv(z[f.coord])?;
            for (l, g) in self.factors.iter().enumerate() {
                if l != k {
                    prod *= g.eval(z[g.coord]);
                }
            }
            total += prod;
        }
        Some(total)
    }
}

/// Serializable description of a dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DictionaryDescriptor {
    /// The 12-function univariate family (polynomials, two trigonometric
    /// frequencies and two step functions).
    Family1d,
    /// One of the twelve bivariate families, `id` in `1..=12`.
    Family2d { id: u32 },
    /// An explicit term list.
    Terms { input_dim: usize, terms: Vec<Term> },
}

/// Affine map of each coordinate from `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub lo: f64,
    pub hi: f64,
}

/// An ordered basis family, serialized as its descriptor plus optional rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DictionaryRepr", into = "DictionaryRepr")]
pub struct Dictionary {
    descriptor: DictionaryDescriptor,
    rescale: Option<Vec<Rescale>>,
    input_dim: usize,
    terms: Vec<Term>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DictionaryRepr {
    #[serde(flatten)]
    descriptor: DictionaryDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rescale: Option<Vec<Rescale>>,
}

impl TryFrom<DictionaryRepr> for Dictionary {
    type Error = Error;
    fn try_from(r: DictionaryRepr) -> Result<Self> {
        let d = Dictionary::from_descriptor(r.descriptor)?;
        match r.rescale {
            Some(ranges) => d.with_rescale(ranges),
            None => Ok(d),
        }
    }
}

impl From<Dictionary> for DictionaryRepr {
    fn from(d: Dictionary) -> Self {
        DictionaryRepr {
            descriptor: d.descriptor,
            rescale: d.rescale,
        }
    }
}

impl Dictionary {
    pub fn from_descriptor(descriptor: DictionaryDescriptor) -> Result<Self> {
        let (input_dim, terms) = match &descriptor {
            DictionaryDescriptor::Family1d => (1, family_1d_terms()),
            DictionaryDescriptor::Family2d { id } => (2, family_2d_terms(*id)?),
            DictionaryDescriptor::Terms { input_dim, terms } => {
                validate_terms(*input_dim, terms)?;
                (*input_dim, terms.clone())
            }
        };
        Ok(Dictionary {
            descriptor,
            rescale: None,
            input_dim,
            terms,
        })
    }

    pub fn descriptor(&self) -> &DictionaryDescriptor {
        &self.descriptor
    }

    pub fn rescale(&self) -> Option<&[Rescale]> {
        self.rescale.as_deref()
    }

    /// The univariate 12-term family.
    pub fn family_1d() -> Self {
        Dictionary::from_descriptor(DictionaryDescriptor::Family1d).expect("static family")
    }

    /// Bivariate family `id` in `1..=12`.
    pub fn build_family_2d(id: u32) -> Result<Self> {
        Dictionary::from_descriptor(DictionaryDescriptor::Family2d { id })
    }

    pub fn from_terms(input_dim: usize, terms: Vec<Term>) -> Result<Self> {
        Dictionary::from_descriptor(DictionaryDescriptor::Terms { input_dim, terms })
    }

    /// Only the constant function.
    pub fn constant(input_dim: usize) -> Self {
        Dictionary::from_terms(input_dim, vec![Term::constant()]).expect("valid")
    }

    /// Map every coordinate `k` from `[lo_k, hi_k]` onto `[0, 1]` before evaluation.
    pub fn with_rescale(mut self, ranges: Vec<Rescale>) -> Result<Self> {
        check_dim(self.input_dim(), ranges.len())?;
        if ranges.iter().any(|r| !(r.hi > r.lo)) {
            return Err(Error::Argument("rescale range must satisfy hi > lo".into()));
        }
        self.rescale = Some(ranges);
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn names(&self) -> Vec<String> {
        self.terms().iter().map(|t| t.name.clone()).collect()
    }

    /// Position of the constant term, if any.
    pub fn constant_index(&self) -> Option<usize> {
        self.terms().iter().position(Term::is_constant)
    }

    fn transformed(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), z.len())?;
        Ok(match &self.rescale {
            None => z.to_vec(),
            Some(r) => z
                .iter()
                .zip(r)
                .map(|(v, s)| (v - s.lo) / (s.hi - s.lo))
                .collect(),
        })
    }

    /// `ψ(z)`.
    pub fn evaluate(&self, z: &[f64]) -> Result<Vec<f64>> {
        let u = self.transformed(z)?;
        Ok(self.terms().iter().map(|t| t.eval(&u)).collect())
    }

    /// `ψ(z)ᵀβ`, evaluating only the terms with a nonzero coefficient.
    pub fn linear_predictor(&self, z: &[f64], beta: &[f64]) -> Result<f64> {
        check_dim(self.len(), beta.len())?;
        let u = self.transformed(z)?;
        Ok(self
            .terms()
            .iter()
            .zip(beta)
            .filter(|(_, b)| **b != 0.0)
            .map(|(t, b)| b * t.eval(&u))
            .sum())
    }

    /// `∂ψ(z) / ∂z_coord` (0-based `coord`).
    pub fn evaluate_derivative(&self, z: &[f64], coord: usize) -> Result<Vec<f64>> {
        let u = self.transformed(z)?;
        if coord >= self.input_dim() {
            return Err(Error::Argument(format!(
                "coordinate {coord} out of range for dimension {}",
                self.input_dim()
            )));
        }
        let chain = match &self.rescale {
            None => 1.0,
            Some(r) => 1.0 / (r[coord].hi - r[coord].lo),
        };
        self.terms()
            .iter()
            .map(|t| {
                t.deriv(&u, coord)
                    .map(|d| d * chain)
                    .ok_or_else(|| Error::NonDifferentiable {
                        name: t.name.clone(),
                        z: z.to_vec(),
                    })
            })
            .collect()
    }

    /// The `n' x p'` matrix whose rows are `ψ(z'_i)`.
    pub fn design_matrix(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let p = self.len();
        let mut m = DMatrix::zeros(points.len(), p);
        for (i, z) in points.iter().enumerate() {
            let row = self.evaluate(z)?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    /// Numerical rank of the design matrix at `points`. The coefficients are
    /// identifiable on these points iff the rank equals `len()`.
    pub fn design_rank(&self, points: &[Vec<f64>]) -> Result<usize> {
        let m = self.design_matrix(points)?;
        if m.nrows() == 0 {
            return Ok(0);
        }
        let size = m.nrows().max(m.ncols()) as f64;
        let sv = m.svd(false, false).singular_values;
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let tol = smax * 1e-10 * size;
        Ok(sv.iter().filter(|&&s| s > tol).count())
    }
}

fn validate_terms(input_dim: usize, terms: &[Term]) -> Result<()> {
    if input_dim == 0 {
        return Err(Error::Argument("input dimension must be at least 1".into()));
    }
    if terms.is_empty() {
        return Err(Error::Argument("dictionary has no terms".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for t in terms {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::Argument(format!("duplicate term name `{}`", t.name)));
        }
        if let Some(f) = t.factors.iter().find(|f| f.coord >= input_dim) {
            return Err(Error::Argument(format!(
                "term `{}` uses coordinate {} beyond dimension {input_dim}",
                t.name, f.coord
            )));
        }
    }
    Ok(())
}

fn factor(coord: usize, kind: FactorKind) -> Factor {
    Factor { coord, kind }
}

fn family_1d_terms() -> Vec<Term> {
    let mut terms = vec![Term::constant()];
    for d in 1..=5 {
        terms.push(Term::from_factors(
            vec![factor(0, FactorKind::CenteredPoly { degree: d })],
            1,
        ));
    }
    for k in 1..=2 {
        terms.push(Term::from_factors(vec![factor(0, FactorKind::Cos { freq: k })], 1));
        terms.push(Term::from_factors(vec![factor(0, FactorKind::Sin { freq: k })], 1));
    }
    for t in [0.4, 0.6] {
        terms.push(Term::from_factors(
            vec![factor(0, FactorKind::Indicator { threshold: t })],
            1,
        ));
    }
    terms
}

/// Univariate components of `trig_i`: `[1]` for `i = 0`, `[cos, sin]` otherwise.
fn trig_parts(i: u32, coord: usize) -> Vec<Option<Factor>> {
    if i == 0 {
        vec![None]
    } else {
        vec![
            Some(factor(coord, FactorKind::Cos { freq: i })),
            Some(factor(coord, FactorKind::Sin { freq: i })),
        ]
    }
}

fn poly_part(i: u32, coord: usize) -> Option<Factor> {
    (i > 0).then(|| factor(coord, FactorKind::CenteredPoly { degree: i }))
}

/// Tensor products over `(i, j)` with `max(i, j) <= 5` and `min(i, j) <= min_cap`.
fn tensor_family(trig: bool, min_cap: u32) -> Vec<Term> {
    let mut terms = Vec::new();
    for i in 0..=5u32 {
        for j in 0..=5u32 {
            if i.min(j) > min_cap {
                continue;
            }
            let left = if trig { trig_parts(i, 0) } else { vec![poly_part(i, 0)] };
            let right = if trig { trig_parts(j, 1) } else { vec![poly_part(j, 1)] };
            for a in &left {
                for b in &right {
                    let factors: Vec<Factor> = a.iter().chain(b.iter()).copied().collect();
                    terms.push(Term::from_factors(factors, 2));
                }
            }
        }
    }
    terms
}

fn family_2d_terms(id: u32) -> Result<Vec<Term>> {
    let base = |k: u32| -> Vec<Term> {
        match k {
            1 => tensor_family(false, 0),
            2 => tensor_family(false, 1),
            3 => tensor_family(false, 2),
            4 => tensor_family(false, 5),
            5 => tensor_family(true, 0),
            6 => tensor_family(true, 1),
            7 => tensor_family(true, 2),
            8 => tensor_family(true, 5),
            _ => unreachable!(),
        }
    };
    match id {
        1..=8 => Ok(base(id)),
        9..=12 => {
            let mut terms = base(id - 8);
            terms.extend(base(id - 4).into_iter().filter(|t| !t.is_constant()));
            Ok(terms)
        }
        _ => Err(Error::Argument(format!(
            "bivariate family id must be in 1..=12, got {id}"
        ))),
    }
}

/// `k` equispaced points on `[lo, hi]` per axis, as a `k^dim` tensor grid
/// (last coordinate varying fastest).
pub fn equispaced_grid(lo: f64, hi: f64, k: usize, dim: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if k == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    };
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dim {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    points
}
