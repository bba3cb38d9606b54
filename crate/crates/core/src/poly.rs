//! Sparse multivariate polynomials over multi-indices.
//!
//! Terms are kept in a `BTreeMap`, so iteration (and every reduction built
//! on it) runs in lexicographic multi-index order.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Exponent vector `(a_1, ..., a_d)` of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        assert!(!entries.is_empty(), "multi-index needs d >= 1");
        MultiIndex(entries)
    }

    pub fn zeros(d: usize) -> Self {
        MultiIndex::new(vec![0; d])
    }

    /// `power * e_axis`.
    pub fn pure(d: usize, axis: usize, power: u32) -> Self {
        let mut e = vec![0; d];
        e[axis] = power;
        MultiIndex::new(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// Total degree `|a|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `a! = prod a_i!`.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| factorial(a)).product()
    }

    pub fn maxdeg(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Index of the axis carrying all of the degree, if `self` is a pure power.
    pub fn pure_axis(&self) -> Option<usize> {
        let nz: Vec<usize> = (0..self.dim()).filter(|&i| self.0[i] > 0).collect();
        match nz.as_slice() {
            [i] => Some(*i),
            _ => None,
        }
    }

    fn sum(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// All multi-indices of dimension `d` with every entry `<= k`, lexicographic.
    pub fn box_indices(d: usize, k: u32) -> Vec<MultiIndex> {
        let mut out = Vec::with_capacity((k as usize + 1).pow(d as u32));
        let mut cur = vec![0u32; d];
        loop {
            out.push(MultiIndex(cur.clone()));
            let mut axis = d;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if cur[axis] < k {
                    cur[axis] += 1;
                    for c in cur.iter_mut().skip(axis + 1) {
                        *c = 0;
                    }
                    break;
                }
            }
        }
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

pub fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Anything that can be sampled pointwise.
pub trait Evaluable: Sync {
    fn eval(&self, x: &[f64]) -> f64;

    /// Exact polynomial form, when one is known. Lets operators act
    /// coefficient-wise instead of through samples.
    fn as_polynomial(&self) -> Option<&Polynomial> {
        None
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Evaluable for F {
    fn eval(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// A function with exact partial derivatives available pointwise.
pub trait SmoothFunction: Evaluable {
    fn dim(&self) -> usize;

    /// `d^a f(x)`, or `None` when the oracle does not cover order `|a|`.
    fn derivative(&self, alpha: &MultiIndex, x: &[f64]) -> Option<f64>;
}

/// Sparse polynomial in `dim` variables with real coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        assert!(dim >= 1);
        Polynomial { dim, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Polynomial::monomial(MultiIndex::zeros(dim), c)
    }

    pub fn monomial(alpha: MultiIndex, c: f64) -> Self {
        let mut p = Polynomial::zero(alpha.dim());
        p.add_term(alpha, c);
        p
    }

    /// The coordinate function `X_{axis}`.
    pub fn variable(dim: usize, axis: usize) -> Self {
        Polynomial::monomial(MultiIndex::pure(dim, axis, 1), 1.0)
    }

    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut p = Polynomial::zero(dim);
        for (alpha, c) in terms {
            if alpha.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: alpha.dim() });
            }
            p.add_term(alpha, c);
        }
        Ok(p)
    }

    fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(alpha);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(a, &c)| (a, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Maximum total degree (0 for the zero polynomial).
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::order).max().unwrap_or(0)
    }

    /// Maximum degree in any single variable.
    pub fn max_axis_degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::maxdeg).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (alpha, &c) in &self.terms {
            let mut m = c;
            for (xi, &a) in x.iter().zip(alpha.entries()) {
                if a > 0 {
                    m *= xi.powi(a as i32);
                }
            }
            acc += m;
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut p = Polynomial::zero(self.dim);
        for (a, &c) in &self.terms {
            p.add_term(a.clone(), c * s);
        }
        p
    }

    /// `p o diag(scales)`; coefficient of `X^a` picks up `prod D_i^{a_i}`.
    pub fn compose_diag(&self, scales: &[f64]) -> Result<Polynomial> {
        self.check_len(scales.len())?;
        if let Some((index, &value)) = scales.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeScale { index, value });
        }
        Ok(self.compose_diag_unchecked(scales))
    }

    pub(crate) fn compose_diag_unchecked(&self, scales: &[f64]) -> Polynomial {
        let mut p = Polynomial::zero(self.dim);
        for (a, &c) in &self.terms {
            let f: f64 = a.entries().iter().zip(scales).map(|(&e, s)| s.powi(e as i32)).product();
            p.add_term(a.clone(), c * f);
        }
        p
    }

    /// `p o diag(signs)` with every sign in `{-1, +1}`.
    pub fn compose_signs(&self, signs: &[f64]) -> Result<Polynomial> {
        self.check_len(signs.len())?;
        if let Some((index, &value)) = signs.iter().enumerate().find(|(_, v)| **v != 1.0 && **v != -1.0) {
            return Err(Error::InvalidSign { index, value });
        }
        Ok(self.compose_diag_signed(signs))
    }

    fn compose_diag_signed(&self, signs: &[f64]) -> Polynomial {
        let mut p = Polynomial::zero(self.dim);
        for (a, &c) in &self.terms {
            let odd = a.entries().iter().zip(signs).filter(|(&e, &s)| s < 0.0 && e % 2 == 1).count();
            p.add_term(a.clone(), if odd % 2 == 1 { -c } else { c });
        }
        p
    }

    /// `X -> p(offset + scale * X)` with per-axis offset and scale.
    pub fn compose_affine(&self, offset: &[f64], scale: &[f64]) -> Result<Polynomial> {
        self.check_len(offset.len())?;
        self.check_len(scale.len())?;
        let mut p = Polynomial::zero(self.dim);
        for (alpha, &c) in &self.terms {
            // expand prod_i (b_i + a_i X_i)^{alpha_i}
            let per_axis: Vec<Vec<f64>> = alpha
                .entries()
                .iter()
                .enumerate()
                .map(|(i, &e)| {
                    (0..=e)
                        .map(|j| {
                            binomial(e as u64, j as u64) as f64
                                * scale[i].powi(j as i32)
                                * offset[i].powi((e - j) as i32)
                        })
                        .collect()
                })
                .collect();
            let bounds: Vec<u32> = alpha.entries().to_vec();
            for beta in MultiIndex::box_indices(self.dim, alpha.maxdeg()) {
                if beta.entries().iter().zip(&bounds).any(|(b, a)| b > a) {
                    continue;
                }
                let w: f64 = beta.entries().iter().enumerate().map(|(i, &j)| per_axis[i][j as usize]).product();
                p.add_term(beta, c * w);
            }
        }
        Ok(p)
    }

    /// `p o M_sigma`, i.e. `x -> p(y)` with `y_i = x_{sigma^{-1}(i)}`.
    /// The exponent of `X_j` in the result is `alpha_{sigma(j)}`.
    pub fn permute_vars(&self, sigma: &[usize]) -> Result<Polynomial> {
        self.check_len(sigma.len())?;
        let mut p = Polynomial::zero(self.dim);
        for (a, &c) in &self.terms {
            let e = a.entries();
            p.add_term(MultiIndex::new(sigma.iter().map(|&s| e[s]).collect()), c);
        }
        Ok(p)
    }

    /// Partial derivative `d^alpha p`.
    pub fn derivative(&self, alpha: &MultiIndex) -> Polynomial {
        let mut p = Polynomial::zero(self.dim);
        'terms: for (a, &c) in &self.terms {
            let mut coef = c;
            let mut e = a.entries().to_vec();
            for (i, &k) in alpha.entries().iter().enumerate() {
                if e[i] < k {
                    continue 'terms;
                }
                for j in 0..k {
                    coef *= f64::from(e[i] - j);
                }
                e[i] -= k;
            }
            p.add_term(MultiIndex::new(e), coef);
        }
        p
    }

    /// Sum of the terms of total degree exactly `m`.
    pub fn homogeneous_part(&self, m: u32) -> Polynomial {
        Polynomial {
            dim: self.dim,
            terms: self.terms.iter().filter(|(a, _)| a.order() == m).map(|(a, &c)| (a.clone(), c)).collect(),
        }
    }

    /// Largest absolute coefficient difference.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> f64 {
        let mut m: f64 = 0.0;
        for (a, &c) in &self.terms {
            m = m.max((c - other.coeff(a)).abs());
        }
        for (a, &c) in &other.terms {
            if !self.terms.contains_key(a) {
                m = m.max(c.abs());
            }
        }
        m
    }

    /// Drop terms with `|c| <= tol`.
    pub fn pruned(&self, tol: f64) -> Polynomial {
        Polynomial {
            dim: self.dim,
            terms: self.terms.iter().filter(|(_, c)| c.abs() > tol).map(|(a, &c)| (a.clone(), c)).collect(),
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: n });
        }
        Ok(())
    }

    /// Parse expressions such as `X1^2 + 4*X2^2 - 0.5*X1*X2`.
    /// Variables are `X1..Xd` (also `x`, `y`, `z` for the first three axes).
    pub fn parse(dim: usize, src: &str) -> Result<Polynomial> {
        let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err(Error::Parse("empty polynomial".into()));
        }
        let mut terms = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            let at_split = i == bytes.len()
                || ((bytes[i] == b'+' || bytes[i] == b'-')
                    && !matches!(bytes[i - 1], b'e' | b'E' | b'^' | b'*' | b'+' | b'-'));
            if at_split {
                terms.push(&s[start..i]);
                start = i;
            }
        }
        let mut p = Polynomial::zero(dim);
        for t in terms {
            let body = t.trim_start_matches(['+', '-']);
            let negatives = t[..t.len() - body.len()].matches('-').count();
            if body.is_empty() {
                return Err(Error::Parse(format!("dangling sign in {src:?}")));
            }
            let mut coef = if negatives % 2 == 1 { -1.0 } else { 1.0 };
            let mut exps = vec![0u32; dim];
            for factor in body.split('*').filter(|f| !f.is_empty()) {
                let (base, pow) = match factor.split_once('^') {
                    Some((b, e)) => {
                        (b, e.parse::<u32>().map_err(|_| Error::Parse(format!("bad exponent in {factor}")))?)
                    }
                    None => (factor, 1),
                };
                let axis = match base {
                    "x" => Some(0),
                    "y" => Some(1),
                    "z" => Some(2),
                    b if b.starts_with('X') || b.starts_with('x') => {
                        b[1..].parse::<usize>().ok().filter(|&i| i >= 1).map(|i| i - 1)
                    }
                    _ => None,
                };
                match axis {
                    Some(a) if a < dim => exps[a] += pow,
                    Some(_) => return Err(Error::Parse(format!("variable {base} out of range for d = {dim}"))),
                    None => {
                        let v: f64 = base.parse().map_err(|_| Error::Parse(format!("bad factor {factor}")))?;
                        coef *= v.powi(pow as i32);
                    }
                }
            }
            p.add_term(MultiIndex::new(exps), coef);
        }
        Ok(p)
    }
}

impl Evaluable for Polynomial {
    fn eval(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x)
    }

    fn as_polynomial(&self) -> Option<&Polynomial> {
        Some(self)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (a, &c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (i, &e) in a.entries().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*X{}", i + 1)?,
                    _ => write!(f, "*X{}^{}", i + 1, e)?,
                }
            }
        }
        Ok(())
    }
}

impl<'a> Add<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut p = self.clone();
        for (a, &c) in &rhs.terms {
            p.add_term(a.clone(), c);
        }
        p
    }
}

impl<'a> Sub<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut p = self.clone();
        for (a, &c) in &rhs.terms {
            p.add_term(a.clone(), -c);
        }
        p
    }
}

impl<'a> Mul<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut p = Polynomial::zero(self.dim);
        for (a, &c) in &self.terms {
            for (b, &e) in &rhs.terms {
                p.add_term(a.sum(b), c * e);
            }
        }
        p
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Which of the three standard polynomial spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    /// total degree `<= k`
    Pk,
    /// per-variable degree `<= k` and total degree `<= k + 1`
    PkStar,
    /// per-variable degree `<= k`
    PkStarStar,
}

impl SpaceKind {
    pub fn name(self) -> &'static str {
        match self {
            SpaceKind::Pk => "Pk",
            SpaceKind::PkStar => "PkStar",
            SpaceKind::PkStarStar => "PkStarStar",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "Pk" => Ok(SpaceKind::Pk),
            "PkStar" | "Pk*" => Ok(SpaceKind::PkStar),
            "PkStarStar" | "Pk**" => Ok(SpaceKind::PkStarStar),
            other => Err(Error::Parse(format!("unknown polynomial space {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolySpace {
    pub kind: SpaceKind,
    pub k: u32,
    pub d: usize,
}

impl PolySpace {
    pub fn new(kind: SpaceKind, k: u32, d: usize) -> Self {
        assert!(d >= 1);
        PolySpace { kind, k, d }
    }

    pub fn contains(&self, alpha: &MultiIndex) -> bool {
        match self.kind {
            SpaceKind::Pk => alpha.order() <= self.k,
            SpaceKind::PkStar => alpha.maxdeg() <= self.k && alpha.order() <= self.k + 1,
            SpaceKind::PkStarStar => alpha.maxdeg() <= self.k,
        }
    }

    /// Monomial exponents spanning the space, in lexicographic order.
    pub fn basis(&self) -> Vec<MultiIndex> {
        MultiIndex::box_indices(self.d, self.k + 1).into_iter().filter(|a| self.contains(a)).collect()
    }

    /// Closed-form dimension.
    pub fn dim(&self) -> usize {
        let (k, d) = (self.k as u64, self.d as u64);
        match self.kind {
            SpaceKind::Pk => binomial(k + d, d) as usize,
            SpaceKind::PkStar => (binomial(k + d + 1, d) - d) as usize,
            SpaceKind::PkStarStar => (k + 1).pow(d as u32) as usize,
        }
    }

    /// Whether every element of the space is a polynomial of `p`-membership kind:
    /// `p` lies in the span iff all its exponents do.
    pub fn contains_poly(&self, p: &Polynomial) -> bool {
        p.terms().all(|(a, _)| self.contains(a))
    }
}

/// Degree-`m` Taylor polynomial of `f` at `x`, expanded in monomials.
pub fn taylor_poly<F: SmoothFunction + ?Sized>(f: &F, x: &[f64], m: u32) -> Result<Polynomial> {
    let d = f.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    if m < 1 {
        return Err(Error::InvalidArgument("Taylor order must be >= 1".into()));
    }
    let mut out = Polynomial::zero(d);
    // shifted monomials (X - x)^a, built axis by axis
    let shifted_pow = |axis: usize, e: u32| -> Polynomial {
        let mut p = Polynomial::constant(d, 1.0);
        let lin = &Polynomial::variable(d, axis) - &Polynomial::constant(d, x[axis]);
        for _ in 0..e {
            p = &p * &lin;
        }
        p
    };
    for alpha in MultiIndex::box_indices(d, m) {
        if alpha.order() > m {
            continue;
        }
        let dv = f.derivative(&alpha, x).ok_or(Error::MissingDerivative { order: alpha.order() as usize })?;
        if dv == 0.0 {
            continue;
        }
        let mut term = Polynomial::constant(d, dv / alpha.factorial());
        for (axis, &e) in alpha.entries().iter().enumerate() {
            if e > 0 {
                term = &term * &shifted_pow(axis, e);
            }
        }
        out = &out + &term;
    }
    Ok(out)
}

/// Homogeneous degree-`m` part of the Taylor expansion, read directly from
/// the `m`-th derivatives: `sum_{|a| = m} d^a f(x) X^a / a!`.
pub fn homogeneous_taylor<F: SmoothFunction + ?Sized>(f: &F, x: &[f64], m: u32) -> Result<Polynomial> {
    let d = f.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let mut out = Polynomial::zero(d);
    for alpha in MultiIndex::box_indices(d, m) {
        if alpha.order() != m {
            continue;
        }
        let dv = f.derivative(&alpha, x).ok_or(Error::MissingDerivative { order: m as usize })?;
        let fact = alpha.factorial();
        out.add_term(alpha, dv / fact);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(e: &[u32]) -> MultiIndex {
        MultiIndex::new(e.to_vec())
    }

    struct ExpFn;
    impl Evaluable for ExpFn {
        fn eval(&self, x: &[f64]) -> f64 {
            x[0].exp()
        }
    }
    impl SmoothFunction for ExpFn {
        fn dim(&self) -> usize {
            1
        }
        fn derivative(&self, _: &MultiIndex, x: &[f64]) -> Option<f64> {
            Some(x[0].exp())
        }
    }

    struct PolyFn(Polynomial, u32);
    impl Evaluable for PolyFn {
        fn eval(&self, x: &[f64]) -> f64 {
            self.0.eval_unchecked(x)
        }
    }
    impl SmoothFunction for PolyFn {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn derivative(&self, a: &MultiIndex, x: &[f64]) -> Option<f64> {
            (a.order() <= self.1).then(|| self.0.derivative(a).eval_unchecked(x))
        }
    }

    #[test]
    fn multi_index_quantities() {
        let a = mi(&[2, 0, 3]);
        assert_eq!(a.order(), 5);
        assert_eq!(a.factorial(), 12.0);
        assert_eq!(a.maxdeg(), 3);
        assert_eq!(mi(&[0, 4]).pure_axis(), Some(1));
        assert_eq!(mi(&[1, 1]).pure_axis(), None);
    }

    #[test]
    fn eval_examples() {
        let p = Polynomial::parse(2, "X1^2*X2").unwrap();
        assert_eq!(p.eval(&[2.0, 3.0]).unwrap(), 12.0);
        assert_eq!(Polynomial::zero(3).eval(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let q = Polynomial::parse(1, "1 + X1 + 0.5*X1^2").unwrap();
        assert_eq!(q.eval(&[1.0]).unwrap(), 2.5);
        assert!(matches!(p.eval(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn compose_diag_examples() {
        let p = Polynomial::parse(2, "X1^2*X2").unwrap();
        let q = p.compose_diag(&[2.0, 0.5]).unwrap();
        assert_eq!(q, p.scale(2.0));
        assert_eq!(p.compose_diag(&[1.0, 1.0]).unwrap(), p);
        let r = Polynomial::parse(2, "X1^2").unwrap();
        assert!(r.compose_diag(&[0.0, 1.0]).unwrap().is_zero());
        assert!(matches!(r.compose_diag(&[-1.0, 1.0]), Err(Error::NegativeScale { index: 0, .. })));
    }

    #[test]
    fn compose_signs_examples() {
        let p = Polynomial::parse(1, "X1^3").unwrap();
        assert_eq!(p.compose_signs(&[-1.0]).unwrap(), p.scale(-1.0));
        let q = Polynomial::parse(2, "X1^2 + X2^2").unwrap();
        assert_eq!(q.compose_signs(&[-1.0, -1.0]).unwrap(), q);
        let r = Polynomial::parse(2, "X1*X2").unwrap();
        assert_eq!(r.compose_signs(&[-1.0, 1.0]).unwrap(), r.scale(-1.0));
        assert!(matches!(r.compose_signs(&[0.5, 1.0]), Err(Error::InvalidSign { .. })));
    }

    #[test]
    fn taylor_examples() {
        let t = taylor_poly(&ExpFn, &[0.0], 2).unwrap();
        assert_eq!(t, Polynomial::parse(1, "1 + X1 + 0.5*X1^2").unwrap());

        let sq = PolyFn(Polynomial::parse(1, "X1^2").unwrap(), 4);
        let t = taylor_poly(&sq, &[1.0], 2).unwrap();
        assert!(t.max_coeff_diff(&sq.0) < 1e-15);

        let q = PolyFn(Polynomial::parse(2, "x^2 + 4*y^2").unwrap(), 4);
        assert_eq!(taylor_poly(&q, &[0.0, 0.0], 2).unwrap(), q.0);

        let short = PolyFn(Polynomial::parse(1, "X1^2").unwrap(), 1);
        assert!(matches!(taylor_poly(&short, &[0.0], 2), Err(Error::MissingDerivative { order: 2 })));
    }

    #[test]
    fn homogeneous_examples() {
        let p = Polynomial::parse(1, "1 + X1 + 0.5*X1^2").unwrap();
        assert_eq!(p.homogeneous_part(2), Polynomial::parse(1, "0.5*X1^2").unwrap());
        let q = Polynomial::parse(2, "X1^2 + 4*X2^2 + 3*X1").unwrap();
        assert_eq!(q.homogeneous_part(2), Polynomial::parse(2, "X1^2 + 4*X2^2").unwrap());
        assert!(Polynomial::parse(2, "X1*X2").unwrap().homogeneous_part(3).is_zero());
    }

    #[test]
    fn space_bases() {
        let pk = PolySpace::new(SpaceKind::Pk, 1, 2).basis();
        assert_eq!(pk, vec![mi(&[0, 0]), mi(&[0, 1]), mi(&[1, 0])]);
        let star = PolySpace::new(SpaceKind::PkStar, 1, 2).basis();
        assert_eq!(star, vec![mi(&[0, 0]), mi(&[0, 1]), mi(&[1, 0]), mi(&[1, 1])]);
        assert_eq!(PolySpace::new(SpaceKind::PkStar, 1, 2).dim(), 4);
        let ss = PolySpace::new(SpaceKind::PkStarStar, 1, 3);
        assert_eq!(ss.basis().len(), 8);
        assert!(ss.basis().iter().all(|a| a.maxdeg() <= 1));
        for kind in [SpaceKind::Pk, SpaceKind::PkStar, SpaceKind::PkStarStar] {
            for k in 0..5 {
                for d in 1..5 {
                    let s = PolySpace::new(kind, k, d);
                    assert_eq!(s.basis().len(), s.dim(), "{kind:?} k={k} d={d}");
                }
            }
        }
    }

    #[test]
    fn affine_composition_matches_pointwise() {
        let p = Polynomial::parse(2, "3*X1^2*X2 - X2^3 + 2*X1 + 1").unwrap();
        let q = p.compose_affine(&[0.5, -1.0], &[2.0, 0.25]).unwrap();
        for &(u, v) in &[(0.1, 0.2), (-0.3, 0.7), (1.5, -2.0)] {
            let direct = p.eval(&[0.5 + 2.0 * u, -1.0 + 0.25 * v]).unwrap();
            assert!((q.eval(&[u, v]).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_semantics() {
        // (p o M_sigma)(x) = p(y), y_i = x_{sigma^-1(i)}
        let p = Polynomial::parse(3, "X1^2*X3 + 5*X2").unwrap();
        let sigma = [2usize, 0, 1];
        let q = p.permute_vars(&sigma).unwrap();
        let x = [0.3, -0.7, 1.1];
        let mut inv = [0usize; 3];
        for (j, &s) in sigma.iter().enumerate() {
            inv[s] = j;
        }
        let y: Vec<f64> = (0..3).map(|i| x[inv[i]]).collect();
        assert!((q.eval(&x).unwrap() - p.eval(&y).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn derivative_and_parse() {
        let p = Polynomial::parse(2, "x^3*y^2 - 2*y").unwrap();
        let d = p.derivative(&mi(&[2, 1]));
        assert_eq!(d, Polynomial::parse(2, "12*x*y").unwrap());
        assert!(Polynomial::parse(2, "X3^2").is_err());
        assert_eq!(Polynomial::parse(2, "-X1^2-4*X2^2").unwrap().coeff(&mi(&[0, 2])), -4.0);
        assert_eq!(Polynomial::parse(1, "1e-3*X1").unwrap().coeff(&mi(&[1])), 1e-3);
        let q = Polynomial::parse(2, "0.75 + -1.5*X2 - -2*X1").unwrap();
        assert_eq!(q, Polynomial::parse(2, "0.75 - 1.5*X2 + 2*X1").unwrap());
        assert!(Polynomial::parse(2, "X1 +").is_err());
    }
}
