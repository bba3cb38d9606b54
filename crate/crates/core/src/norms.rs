//! Tensor Gauss–Legendre quadrature, grid maxima, and (weighted) L_p norms
//! on blocks and block partitions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blocks::{Block, BlockMap, BlockPartition};
use crate::error::{Error, Result};
use crate::exec::{kahan_sum, Exec};
use crate::poly::{Evaluable, Polynomial};
use crate::proj::{monomial_value, ProjectionOperator};

/// Lebesgue exponent `p` in `[1, inf]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Inf,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p == f64::INFINITY {
            Ok(Exponent::Inf)
        } else if p.is_finite() && p >= 1.0 {
            Ok(Exponent::Finite(p))
        } else {
            Err(Error::InvalidArgument(format!("exponent p = {p} is outside [1, inf]")))
        }
    }

    /// `1/p`, zero for `p = inf`.
    pub fn recip(self) -> f64 {
        match self {
            Exponent::Finite(p) => 1.0 / p,
            Exponent::Inf => 0.0,
        }
    }

    pub fn is_inf(self) -> bool {
        matches!(self, Exponent::Inf)
    }

    /// `tau` with `1/tau = m/d + 1/p`.
    pub fn tau(self, m: u32, d: usize) -> f64 {
        1.0 / (f64::from(m) / d as f64 + self.recip())
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Inf => write!(f, "inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "infinity" | "∞" => Ok(Exponent::Inf),
            other => Exponent::new(other.parse::<f64>().map_err(|_| Error::Parse(format!("bad exponent {other}")))?),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => s.serialize_f64(*p),
            Exponent::Inf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Exponent::new(p).map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Quadrature order and L_inf grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormSettings {
    pub quad_order: usize,
    pub grid_points: usize,
}

impl Default for NormSettings {
    fn default() -> Self {
        NormSettings { quad_order: 20, grid_points: 33 }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre_1d(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "quadrature order must be >= 1");
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    let n = q as f64;
    for i in 0..q.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=q {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if q == 1 { z } else { p1 };
            let pm = if q == 1 { 1.0 } else { p0 };
            dp = n * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if q == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[q - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[q - 1 - i] = wi;
    }
    if q == 1 {
        w[0] = 2.0;
    }
    (x, w)
}

/// Tensor Gauss–Legendre rule on a block.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    d: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

type RuleCache = Mutex<HashMap<(usize, usize), Arc<QuadratureRule>>>;

impl QuadratureRule {
    pub fn gauss_legendre(block: &Block, q: usize) -> Self {
        let d = block.dim();
        let (x1, w1) = gauss_legendre_1d(q);
        let total = q.pow(d as u32);
        let mut points = Vec::with_capacity(total * d);
        let mut weights = Vec::with_capacity(total);
        let lo = block.lo();
        let wid = block.widths();
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mut w = 1.0;
            for ax in 0..d {
                points.push(lo[ax] + 0.5 * wid[ax] * (x1[idx[ax]] + 1.0));
                w *= 0.5 * wid[ax] * w1[idx[ax]];
            }
            weights.push(w);
            for ax in (0..d).rev() {
                idx[ax] += 1;
                if idx[ax] < q {
                    break;
                }
                idx[ax] = 0;
            }
        }
        QuadratureRule { d, points, weights }
    }

    /// Shared rule on `[-1/2, 1/2]^d`.
    pub fn reference(d: usize, q: usize) -> Arc<QuadratureRule> {
        static CACHE: OnceLock<RuleCache> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("rule cache poisoned");
        guard.entry((d, q)).or_insert_with(|| Arc::new(QuadratureRule::gauss_legendre(&Block::unit_cube(d), q))).clone()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        kahan_sum(self.points.chunks(self.d).zip(&self.weights).map(|(x, w)| w * f(x)))
    }
}

/// Uniform grid with `n` points per axis including the faces, lexicographic.
pub fn grid_points(block: &Block, n: usize) -> Vec<f64> {
    let d = block.dim();
    let total = n.pow(d as u32);
    let lo = block.lo();
    let wid = block.widths();
    let denom = (n.max(2) - 1) as f64;
    let mut out = Vec::with_capacity(total * d);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        for ax in 0..d {
            out.push(if n == 1 { lo[ax] + 0.5 * wid[ax] } else { lo[ax] + wid[ax] * idx[ax] as f64 / denom });
        }
        for ax in (0..d).rev() {
            idx[ax] += 1;
            if idx[ax] < n {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

/// Positions of the nested half-resolution grid (every other point per axis).
fn nested_mask(n: usize, d: usize) -> Vec<bool> {
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut i| {
            (0..d).all(|_| {
                let r = i % n;
                i /= n;
                r % 2 == 0
            })
        })
        .collect()
}

const REFINE_RTOL: f64 = 0.005;

/// Max of `|values|` on an `n`-grid, refined once to `2n - 1` points per axis
/// when the nested half grid disagrees by more than 0.5%.
pub(crate) fn refined_sup(n: usize, d: usize, values: impl Fn(usize) -> Result<Vec<f64>>) -> Result<f64> {
    let v = values(n)?;
    let mask = nested_mask(n, d);
    let full = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let half = v.iter().zip(&mask).filter(|(_, &m)| m).fold(0.0f64, |a, (x, _)| a.max(x.abs()));
    if n % 2 == 1 && full > 0.0 && (full - half) > REFINE_RTOL * full {
        let fine = values(2 * n - 1)?;
        return Ok(fine.iter().fold(full, |a, x| a.max(x.abs())));
    }
    Ok(full)
}

fn checked(x: &[f64], v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { point: x.to_vec(), value: v })
    }
}

fn checked_weight(x: &[f64], w: f64) -> Result<f64> {
    if w > 0.0 && w.is_finite() {
        Ok(w)
    } else {
        Err(Error::NonPositiveWeight { point: x.to_vec(), value: w })
    }
}

/// Grid maximum of `|g|` on a block (a lower estimate of the sup norm).
pub fn grid_max(g: &dyn Evaluable, r: &Block, n: usize) -> Result<f64> {
    let d = r.dim();
    refined_sup(n, d, |m| grid_points(r, m).chunks(d).map(|x| checked(x, g.eval(x))).collect())
}

pub fn lp_norm(g: &dyn Evaluable, r: &Block, p: Exponent, settings: &NormSettings) -> Result<f64> {
    lp_norm_impl(g, None, r, p, settings)
}

/// `||g Omega||_{L_p(R)}`.
pub fn lp_norm_weighted(
    g: &dyn Evaluable,
    r: &Block,
    p: Exponent,
    weight: &dyn Evaluable,
    settings: &NormSettings,
) -> Result<f64> {
    lp_norm_impl(g, Some(weight), r, p, settings)
}

fn lp_norm_impl(
    g: &dyn Evaluable,
    weight: Option<&dyn Evaluable>,
    r: &Block,
    p: Exponent,
    settings: &NormSettings,
) -> Result<f64> {
    let d = r.dim();
    let value = |x: &[f64]| -> Result<f64> {
        let v = checked(x, g.eval(x))?;
        match weight {
            Some(w) => Ok(v * checked_weight(x, w.eval(x))?),
            None => Ok(v),
        }
    };
    match p {
        Exponent::Inf => refined_sup(settings.grid_points, d, |m| grid_points(r, m).chunks(d).map(value).collect()),
        Exponent::Finite(pp) => {
            let rule = QuadratureRule::gauss_legendre(r, settings.quad_order);
            let terms: Vec<f64> = rule
                .points()
                .chunks(d)
                .zip(rule.weights())
                .map(|(x, w)| Ok(w * value(x)?.abs().powf(pp)))
                .collect::<Result<_>>()?;
            Ok(kahan_sum(terms).powf(1.0 / pp))
        }
    }
}

/// Reference-cube point sets with the image basis tabulated on them.
struct RefTable {
    points: Vec<f64>,
    weights: Vec<f64>,
    basis: Vec<f64>,
}

impl RefTable {
    fn new(op: &ProjectionOperator, points: Vec<f64>, weights: Vec<f64>) -> Self {
        let d = op.dim();
        let basis = points.chunks(d).flat_map(|u| op.image_basis().iter().map(move |b| monomial_value(b, u))).collect();
        RefTable { points, weights, basis }
    }
}

enum CellResidual<'a> {
    Poly(Polynomial),
    Sampled { f: &'a dyn Evaluable, coef: Vec<f64> },
}

impl CellResidual<'_> {
    fn values(&self, table: &RefTable, map: &BlockMap, weight: Option<&dyn Evaluable>) -> Result<Vec<f64>> {
        let d = map.center.len();
        let nb = match self {
            CellResidual::Sampled { coef, .. } => coef.len(),
            CellResidual::Poly(_) => 0,
        };
        let mut x = vec![0.0; d];
        table
            .points
            .chunks(d)
            .enumerate()
            .map(|(i, u)| {
                map.forward_into(u, &mut x);
                let e = match self {
                    CellResidual::Poly(r) => r.eval_unchecked(u),
                    CellResidual::Sampled { f, coef } => {
                        let fx = checked(&x, f.eval(&x))?;
                        let row = &table.basis[i * nb..(i + 1) * nb];
                        fx - coef.iter().zip(row).map(|(c, b)| c * b).sum::<f64>()
                    }
                };
                let e = checked(u, e)?;
                match weight {
                    Some(w) => Ok(e * checked_weight(&x, w.eval(&x))?),
                    None => Ok(e),
                }
            })
            .collect()
    }
}

/// Per-cell contributions: `||f - I_R f||^p` for finite `p`, the sup for `p = inf`.
pub fn cell_errors(
    f: &dyn Evaluable,
    op: &ProjectionOperator,
    part: &BlockPartition,
    p: Exponent,
    weight: Option<&dyn Evaluable>,
    settings: &NormSettings,
    exec: Exec,
) -> Result<Vec<f64>> {
    let d = op.dim();
    if part.domain().dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: part.domain().dim() });
    }
    let poly = f.as_polynomial();
    let needs_basis = poly.is_none();
    let make = |pts: Vec<f64>, w: Vec<f64>| {
        if needs_basis {
            RefTable::new(op, pts, w)
        } else {
            RefTable { points: pts, weights: w, basis: Vec::new() }
        }
    };
    let (coarse, fine) = match p {
        Exponent::Finite(_) => {
            let rule = QuadratureRule::reference(d, settings.quad_order);
            (make(rule.points().to_vec(), rule.weights().to_vec()), None)
        }
        Exponent::Inf => {
            let n = settings.grid_points;
            let cube = Block::unit_cube(d);
            (make(grid_points(&cube, n), Vec::new()), Some(OnceLock::<RefTable>::new()))
        }
    };
    let fine_table = || -> &RefTable {
        fine.as_ref()
            .expect("sup tables")
            .get_or_init(|| make(grid_points(&Block::unit_cube(d), 2 * settings.grid_points - 1), Vec::new()))
    };

    let results = exec.map(part.cells(), |cell| -> Result<f64> {
        let map = BlockMap::normalize(cell);
        let residual = match poly {
            Some(pf) => CellResidual::Poly(op.residual_poly(&pf.compose_affine(&map.center, &map.scales)?)?),
            None => {
                let mut x = vec![0.0; d];
                let vals: Vec<f64> = op
                    .sample_points()
                    .chunks(d)
                    .map(|u| {
                        map.forward_into(u, &mut x);
                        checked(&x, f.eval(&x))
                    })
                    .collect::<Result<_>>()?;
                CellResidual::Sampled { f, coef: op.coefficients_from_samples(&vals) }
            }
        };
        match p {
            Exponent::Finite(pp) => {
                let vals = residual.values(&coarse, &map, weight)?;
                let s = kahan_sum(vals.iter().zip(&coarse.weights).map(|(v, w)| w * v.abs().powf(pp)));
                Ok(map.det() * s)
            }
            Exponent::Inf => refined_sup(settings.grid_points, d, |m| {
                if m == settings.grid_points {
                    residual.values(&coarse, &map, weight)
                } else {
                    residual.values(fine_table(), &map, weight)
                }
            }),
        }
    });
    results.into_iter().collect()
}

/// `||f - I_P f||_{L_p(R0, [Omega])}` over a partition, reduced in cell order.
pub fn partition_error(
    f: &dyn Evaluable,
    op: &ProjectionOperator,
    part: &BlockPartition,
    p: Exponent,
    weight: Option<&dyn Evaluable>,
    settings: &NormSettings,
    exec: Exec,
) -> Result<f64> {
    let per_cell = cell_errors(f, op, part, p, weight, settings, exec)?;
    Ok(match p {
        Exponent::Finite(pp) => kahan_sum(per_cell).powf(1.0 / pp),
        Exponent::Inf => per_cell.into_iter().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proj::NodeKind;

    #[test]
    fn gauss_rule_exactness() {
        for q in 1..=20 {
            let (x, w) = gauss_legendre_1d(q);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            assert!(w.iter().all(|&v| v > 0.0));
            for deg in 0..(2 * q) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((got - exact).abs() < 1e-13 * exact.abs().max(1.0), "q={q} deg={deg}");
            }
        }
        let r = Block::new(vec![0.0, 1.0], vec![2.0, 1.5]).unwrap();
        let rule = QuadratureRule::gauss_legendre(&r, 4);
        assert!((rule.weights().iter().sum::<f64>() - r.volume()).abs() < 1e-14);
        let got = rule.integrate(|x| x[0].powi(7) * x[1].powi(3));
        let exact = (2f64.powi(8) / 8.0) * ((1.5f64.powi(4) - 1.0) / 4.0);
        assert!(((got - exact) / exact).abs() < 1e-13);
    }

    #[test]
    fn lp_norm_examples() {
        let s = NormSettings::default();
        let one = |_: &[f64]| 1.0;
        for p in [Exponent::Finite(1.0), Exponent::Finite(2.0), Exponent::Inf] {
            assert!((lp_norm(&one, &Block::unit_cube(2), p, &s).unwrap() - 1.0).abs() < 1e-13);
        }
        let g = |x: &[f64]| x[0] * x[0] - 0.25;
        let i1 = Block::unit_cube(1);
        assert!((lp_norm(&g, &i1, Exponent::Inf, &s).unwrap() - 0.25).abs() < 1e-15);
        assert!((lp_norm(&g, &i1, Exponent::Finite(2.0), &s).unwrap() - 30f64.sqrt().recip()).abs() < 1e-12);
        let bad = |x: &[f64]| if x[0] > 0.4 { f64::NAN } else { 0.0 };
        assert!(matches!(lp_norm(&bad, &i1, Exponent::Inf, &s), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn weighted_examples() {
        let s = NormSettings::default();
        let g = |x: &[f64]| x[0].sin() + 2.0;
        let r = Block::unit_box(1);
        let two = |_: &[f64]| 2.0;
        let unit = |_: &[f64]| 1.0;
        for p in [Exponent::Finite(1.0), Exponent::Finite(3.0), Exponent::Inf] {
            let base = lp_norm(&g, &r, p, &s).unwrap();
            assert_eq!(lp_norm_weighted(&g, &r, p, &two, &s).unwrap(), 2.0 * base);
            assert_eq!(lp_norm_weighted(&g, &r, p, &unit, &s).unwrap(), base);
        }
        let r12 = Block::new(vec![1.0], vec![2.0]).unwrap();
        let id = |x: &[f64]| x[0];
        let one = |_: &[f64]| 1.0;
        assert!((lp_norm_weighted(&one, &r12, Exponent::Finite(1.0), &id, &s).unwrap() - 1.5).abs() < 1e-14);
        let neg = |x: &[f64]| x[0] - 1.5;
        assert!(matches!(
            lp_norm_weighted(&one, &r12, Exponent::Finite(1.0), &neg, &s),
            Err(Error::NonPositiveWeight { .. })
        ));
    }

    #[test]
    fn exponent_parsing() {
        assert_eq!("inf".parse::<Exponent>().unwrap(), Exponent::Inf);
        assert_eq!("2".parse::<Exponent>().unwrap(), Exponent::Finite(2.0));
        assert!("0.5".parse::<Exponent>().is_err());
        assert_eq!(serde_json::to_string(&Exponent::Inf).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Exponent>("1").unwrap(), Exponent::Finite(1.0));
        assert!((Exponent::Inf.tau(2, 2) - 1.0).abs() < 1e-15);
        assert!((Exponent::Inf.tau(2, 1) - 0.5).abs() < 1e-15);
    }

    fn uniform(n: usize, d: usize) -> BlockPartition {
        let mut cells = Vec::new();
        for idx in crate::poly::MultiIndex::box_indices(d, n as u32 - 1) {
            let lo: Vec<f64> = idx.entries().iter().map(|&i| i as f64 / n as f64).collect();
            let hi: Vec<f64> = idx.entries().iter().map(|&i| (i + 1) as f64 / n as f64).collect();
            cells.push(Block::new(lo, hi).unwrap());
        }
        BlockPartition::new(Block::unit_box(d), cells).unwrap()
    }

    #[test]
    fn partition_error_examples() {
        let s = NormSettings::default();
        let lin = ProjectionOperator::lagrange(NodeKind::Equispaced, 1, 1).unwrap();
        let sq = Polynomial::parse(1, "X1^2").unwrap();
        for n in [1usize, 3, 10, 37] {
            let e = partition_error(&sq, &lin, &uniform(n, 1), Exponent::Inf, None, &s, Exec::Parallel).unwrap();
            assert!((e * (n * n) as f64 - 0.25).abs() < 1e-12, "n={n}");
        }
        let bil = ProjectionOperator::lagrange(NodeKind::Equispaced, 1, 2).unwrap();
        let q = Polynomial::parse(2, "x^2 + 4*y^2").unwrap();
        let qs = |x: &[f64]| x[0] * x[0] + 4.0 * x[1] * x[1];
        for n in [2usize, 5] {
            let e = partition_error(&q, &bil, &uniform(n, 2), Exponent::Inf, None, &s, Exec::Sequential).unwrap();
            assert!((e * (n * n) as f64 - 1.25).abs() < 1e-12);
            let e2 = partition_error(&qs, &bil, &uniform(n, 2), Exponent::Inf, None, &s, Exec::Parallel).unwrap();
            assert!((e2 * (n * n) as f64 - 1.25).abs() < 1e-12);
        }
        let lin_f = Polynomial::parse(2, "3*x - y + 2*x*y").unwrap();
        let e = partition_error(&lin_f, &bil, &uniform(3, 2), Exponent::Finite(2.0), None, &s, Exec::Parallel).unwrap();
        assert!(e < 1e-12);
    }

    #[test]
    fn transfer_identity() {
        let s = NormSettings::default();
        let op = ProjectionOperator::lagrange(NodeKind::Equispaced, 1, 2).unwrap();
        let f = |x: &[f64]| (x[0] + 2.0 * x[1]).exp();
        let r = Block::new(vec![0.1, 0.2], vec![0.4, 0.3]).unwrap();
        let map = BlockMap::normalize(&r);
        let part = BlockPartition::new(r.clone(), vec![r.clone()]).unwrap();
        for p in [Exponent::Finite(1.0), Exponent::Finite(2.0), Exponent::Inf] {
            let lhs = partition_error(&f, &op, &part, p, None, &s, Exec::Sequential).unwrap();
            let g = |u: &[f64]| f(&map.forward(u));
            let ig = op.apply(&g).unwrap();
            let res = |u: &[f64]| g(u) - ig.eval_unchecked(u);
            let rhs = r.volume().powf(p.recip()) * lp_norm(&res, &Block::unit_cube(2), p, &s).unwrap();
            assert!(((lhs - rhs) / rhs).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn sup_refinement_triggers() {
        // a narrow spike seen by the 33-point grid only
        let g = |x: &[f64]| (-((x[0] - 1.0 / 32.0) * 200.0).powi(2)).exp();
        let v = grid_max(&g, &Block::unit_cube(1), 33).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }
}
