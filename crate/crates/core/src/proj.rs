//! Projection operators on `C0([-1/2, 1/2]^d)` and their transfer to blocks.
//!
//! Every shipped operator is stored in nodal form: sample points `x_s` and a
//! coefficient matrix `C` over a monomial image basis `b_j`, so that
//! `I f = sum_j b_j sum_s C[j][s] f(x_s)`. Polynomial inputs bypass sampling:
//! only the monomials outside the image are projected.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{Block, BlockMap};
use crate::error::{Error, Result};
use crate::norms::{grid_points, QuadratureRule};
use crate::poly::{Evaluable, MultiIndex, PolySpace, Polynomial, SpaceKind};

pub const DEFAULT_K_MAX: u32 = 8;
const REPRO_TOL: f64 = 1e-10;
const HYP_GRID: usize = 17;
const L2_SAMPLE_ORDER: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Equispaced,
    Chebyshev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    LagrangeTensor { nodes: NodeKind },
    L2Proj { space: SpaceKind },
    BoundaryLattice,
}

/// 1-D interpolation nodes on `[-1/2, 1/2]`, ascending.
pub fn lagrange_nodes(k: u32, kind: NodeKind) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = match kind {
        NodeKind::Equispaced if k == 0 => vec![0.0],
        NodeKind::Equispaced => (0..=k).map(|n| -0.5 + f64::from(n) / f64::from(k)).collect(),
        NodeKind::Chebyshev if k == 0 => return Err(Error::InvalidArgument("Chebyshev nodes need k >= 1".into())),
        NodeKind::Chebyshev => (0..=k)
            .map(|n| {
                let c = 0.5 * (f64::from(n) * std::f64::consts::PI / f64::from(k)).cos();
                // cos(pi/2) is not exactly zero in floating point
                if c.abs() < 1e-15 {
                    0.0
                } else {
                    c
                }
            })
            .collect(),
    };
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Coefficients (ascending powers) of the 1-D Lagrange basis on `nodes`.
fn lagrange_basis_1d(nodes: &[f64]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let mut c = vec![1.0];
            for j in (0..n).filter(|&j| j != i) {
                let den = nodes[i] - nodes[j];
                let mut next = vec![0.0; c.len() + 1];
                for (e, &a) in c.iter().enumerate() {
                    next[e + 1] += a / den;
                    next[e] -= a * nodes[j] / den;
                }
                c = next;
            }
            c
        })
        .collect()
}

/// `int_{-1/2}^{1/2} x^n dx`.
fn moment_1d(n: u32) -> f64 {
    if n % 2 == 1 {
        0.0
    } else {
        0.5f64.powi(n as i32) / f64::from(n + 1)
    }
}

fn monomial_integral(alpha: &[u32]) -> f64 {
    alpha.iter().map(|&a| moment_1d(a)).product()
}

pub(crate) fn monomial_value(alpha: &MultiIndex, x: &[f64]) -> f64 {
    alpha.entries().iter().zip(x).map(|(&a, v)| if a == 0 { 1.0 } else { v.powi(a as i32) }).product()
}

#[derive(Debug)]
struct Nodal {
    basis: Vec<MultiIndex>,
    /// flattened `n_samples x d`
    samples: Vec<f64>,
    /// row-major `n_basis x n_samples`
    coef: Vec<f64>,
    /// inverse Gram matrix for L2 variants
    gram_inv: Option<DMatrix<f64>>,
}

impl Nodal {
    fn n_samples(&self, d: usize) -> usize {
        self.samples.len() / d
    }
}

/// Results of the four structural checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub h_pm: bool,
    pub h_sigma: bool,
    pub h_star: bool,
    pub h_star_star: bool,
}

impl Hypotheses {
    pub fn all(&self) -> bool {
        self.h_pm && self.h_sigma && self.h_star && self.h_star_star
    }
}

/// A linear projector on continuous functions of the reference cube.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    d: usize,
    k: u32,
    variant: Variant,
    nodal: Arc<Nodal>,
    detected_k: Arc<OnceLock<Result<u32>>>,
    hypotheses: Arc<OnceLock<Hypotheses>>,
}

impl PartialEq for ProjectionOperator {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.k == other.k && self.variant == other.variant
    }
}

impl ProjectionOperator {
    pub fn new(variant: Variant, k: u32, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        let nodal = match variant {
            Variant::LagrangeTensor { nodes } => build_lagrange(&lagrange_nodes(k, nodes)?, d),
            Variant::BoundaryLattice => build_boundary(k, d)?,
            Variant::L2Proj { space } => build_l2(PolySpace::new(space, k, d))?,
        };
        Ok(ProjectionOperator {
            d,
            k,
            variant,
            nodal: Arc::new(nodal),
            detected_k: Arc::new(OnceLock::new()),
            hypotheses: Arc::new(OnceLock::new()),
        })
    }

    pub fn lagrange(nodes: NodeKind, k: u32, d: usize) -> Result<Self> {
        Self::new(Variant::LagrangeTensor { nodes }, k, d)
    }

    pub fn l2(space: SpaceKind, k: u32, d: usize) -> Result<Self> {
        Self::new(Variant::L2Proj { space }, k, d)
    }

    pub fn boundary(k: u32, d: usize) -> Result<Self> {
        Self::new(Variant::BoundaryLattice, k, d)
    }

    /// Lagrange interpolation at user-supplied 1-D nodes.
    pub fn lagrange_custom(nodes: &[f64], d: usize) -> Result<Self> {
        let mut sorted = nodes.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.is_empty() || sorted.windows(2).any(|w| w[1] - w[0] < 1e-12) {
            return Err(Error::Singular("interpolation nodes must be distinct".into()));
        }
        if sorted.iter().any(|x| !(-0.5..=0.5).contains(x)) {
            return Err(Error::InvalidArgument("nodes must lie in [-1/2, 1/2]".into()));
        }
        let k = sorted.len() as u32 - 1;
        Ok(ProjectionOperator {
            d,
            k,
            variant: Variant::LagrangeTensor { nodes: NodeKind::Equispaced },
            nodal: Arc::new(build_lagrange(&sorted, d)),
            detected_k: Arc::new(OnceLock::new()),
            hypotheses: Arc::new(OnceLock::new()),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// The construction parameter `k`.
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Monomials spanning the image.
    pub fn image_basis(&self) -> &[MultiIndex] {
        &self.nodal.basis
    }

    pub fn image_contains(&self, alpha: &MultiIndex) -> bool {
        self.nodal.basis.binary_search(alpha).is_ok()
    }

    /// Sample points `x_s`, flattened `n_samples x d`.
    pub fn sample_points(&self) -> &[f64] {
        &self.nodal.samples
    }

    pub fn n_samples(&self) -> usize {
        self.nodal.n_samples(self.d)
    }

    /// Image-basis coefficients of `I f` from the samples `f(x_s)`.
    pub fn coefficients_from_samples(&self, values: &[f64]) -> Vec<f64> {
        let ns = values.len();
        self.nodal.coef.chunks(ns).map(|row| row.iter().zip(values).map(|(c, v)| c * v).sum()).collect()
    }

    fn poly_from_coefficients(&self, c: &[f64]) -> Polynomial {
        Polynomial::from_terms(self.d, self.nodal.basis.iter().cloned().zip(c.iter().copied()))
            .expect("basis dimension matches")
    }

    /// Image-basis coefficients of `I(X^alpha)`.
    pub fn project_monomial(&self, alpha: &MultiIndex) -> Vec<f64> {
        if let Some(pos) = self.nodal.basis.iter().position(|b| b == alpha) {
            let mut c = vec![0.0; self.nodal.basis.len()];
            c[pos] = 1.0;
            return c;
        }
        match &self.nodal.gram_inv {
            Some(ginv) => {
                let rhs: Vec<f64> = self
                    .nodal
                    .basis
                    .iter()
                    .map(|b| {
                        let s: Vec<u32> = b.entries().iter().zip(alpha.entries()).map(|(x, y)| x + y).collect();
                        monomial_integral(&s)
                    })
                    .collect();
                let v = ginv * nalgebra::DVector::from_vec(rhs);
                v.iter().copied().collect()
            }
            None => {
                let vals: Vec<f64> = self.nodal.samples.chunks(self.d).map(|x| monomial_value(alpha, x)).collect();
                self.coefficients_from_samples(&vals)
            }
        }
    }

    /// `X^alpha - I(X^alpha)`.
    pub fn monomial_residual(&self, alpha: &MultiIndex) -> Polynomial {
        let ip = self.poly_from_coefficients(&self.project_monomial(alpha));
        &Polynomial::monomial(alpha.clone(), 1.0) - &ip
    }

    /// `p - I(p)`, built only from the monomials of `p` outside the image.
    pub fn residual_poly(&self, p: &Polynomial) -> Result<Polynomial> {
        self.check_dim(p.dim())?;
        let nb = self.nodal.basis.len();
        let mut acc = vec![0.0; nb];
        let mut outside = Polynomial::zero(self.d);
        for (alpha, c) in p.terms() {
            if self.image_contains(alpha) {
                continue;
            }
            outside = &outside + &Polynomial::monomial(alpha.clone(), c);
            for (a, v) in acc.iter_mut().zip(self.project_monomial(alpha)) {
                *a += c * v;
            }
        }
        Ok(&outside - &self.poly_from_coefficients(&acc))
    }

    /// `I(p)` for a polynomial input.
    pub fn apply_poly(&self, p: &Polynomial) -> Result<Polynomial> {
        Ok(p - &self.residual_poly(p)?)
    }

    /// `I(f)`; exact for polynomial inputs, nodal otherwise.
    pub fn apply(&self, f: &dyn Evaluable) -> Result<Polynomial> {
        if let Some(p) = f.as_polynomial() {
            return self.apply_poly(p);
        }
        let vals = self.sample(f)?;
        Ok(self.poly_from_coefficients(&self.coefficients_from_samples(&vals)))
    }

    fn sample(&self, f: &dyn Evaluable) -> Result<Vec<f64>> {
        self.nodal
            .samples
            .chunks(self.d)
            .map(|x| {
                let v = f.eval(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite { point: x.to_vec(), value: v })
                }
            })
            .collect()
    }

    /// `I_R f = I(f o phi) o phi^{-1}`, returned in the coordinates of `R`.
    pub fn apply_on_block(&self, r: &Block, f: &dyn Evaluable) -> Result<Polynomial> {
        self.check_dim(r.dim())?;
        let map = BlockMap::normalize(r);
        let ref_poly = match f.as_polynomial() {
            Some(p) => self.apply_poly(&p.compose_affine(&map.center, &map.scales)?)?,
            None => {
                let g = |u: &[f64]| f.eval(&map.forward(u));
                self.apply(&g)?
            }
        };
        let inv_scale: Vec<f64> = map.scales.iter().map(|s| 1.0 / s).collect();
        let inv_offset: Vec<f64> = map.center.iter().zip(&map.scales).map(|(c, s)| -c / s).collect();
        ref_poly.compose_affine(&inv_offset, &inv_scale)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: d });
        }
        Ok(())
    }

    /// Largest total degree reproduced, searched up to `DEFAULT_K_MAX`.
    pub fn detect_k(&self) -> Result<u32> {
        self.detected_k.get_or_init(|| self.detect_k_with(DEFAULT_K_MAX)).clone()
    }

    pub fn detect_k_with(&self, k_max: u32) -> Result<u32> {
        for kp in 0..=k_max {
            let all = MultiIndex::box_indices(self.d, kp)
                .into_iter()
                .filter(|a| a.order() == kp)
                .all(|a| self.reproduces_sampled(&a));
            if !all {
                return if kp == 0 { Err(Error::HypothesisFailed("constants are not reproduced")) } else { Ok(kp - 1) };
            }
        }
        Err(Error::KMaxReached(k_max as usize))
    }

    /// `m = k(I) + 1`.
    pub fn m(&self) -> Result<u32> {
        Ok(self.detect_k()? + 1)
    }

    /// Reproduction of `X^alpha` through the sampling path, checked on a
    /// 17-point grid and confirmed on a 33-point grid.
    fn reproduces_sampled(&self, alpha: &MultiIndex) -> bool {
        let a = alpha.clone();
        let f = move |x: &[f64]| monomial_value(&a, x);
        let Ok(ip) = self.apply(&f) else { return false };
        [HYP_GRID, 2 * HYP_GRID - 1].iter().all(|&n| {
            grid_points(&Block::unit_cube(self.d), n)
                .chunks(self.d)
                .all(|x| (ip.eval_unchecked(x) - monomial_value(alpha, x)).abs() <= REPRO_TOL)
        })
    }

    pub fn check_hypotheses(&self) -> Hypotheses {
        *self.hypotheses.get_or_init(|| self.compute_hypotheses())
    }

    fn compute_hypotheses(&self) -> Hypotheses {
        let d = self.d;
        let k = self.detect_k().unwrap_or(self.k);
        let m = k + 1;
        let grid = grid_points(&Block::unit_cube(d), HYP_GRID);

        let mut tests: Vec<Box<dyn Fn(&[f64]) -> f64 + Sync>> = Vec::new();
        for alpha in PolySpace::new(SpaceKind::PkStarStar, m, d).basis() {
            tests.push(Box::new(move |x: &[f64]| monomial_value(&alpha, x)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..20 {
            tests.push(Box::new(random_trig(&mut rng, d)));
        }

        let sup_diff = |a: &Polynomial, b: &Polynomial| {
            grid.chunks(d).map(|x| (a.eval_unchecked(x) - b.eval_unchecked(x)).abs()).fold(0.0, f64::max)
        };
        let scale_of = |p: &Polynomial| grid.chunks(d).map(|x| p.eval_unchecked(x).abs()).fold(1.0, f64::max);

        // sign flips and adjacent transpositions generate both groups
        let commutes = |transform: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
                        on_poly: &dyn Fn(&Polynomial) -> Polynomial| {
            tests.iter().all(|f| {
                let composed = |x: &[f64]| f(&transform(x));
                match (self.apply(&composed), self.apply(&|x: &[f64]| f(x))) {
                    (Ok(lhs), Ok(ifx)) => {
                        let rhs = on_poly(&ifx);
                        sup_diff(&lhs, &rhs) <= REPRO_TOL * scale_of(&ifx)
                    }
                    _ => false,
                }
            })
        };

        let h_pm = (0..d).all(|axis| {
            let mut eps = vec![1.0; d];
            eps[axis] = -1.0;
            let e2 = eps.clone();
            commutes(&move |x: &[f64]| x.iter().zip(&eps).map(|(v, s)| v * s).collect(), &move |p: &Polynomial| {
                p.compose_signs(&e2).expect("valid signs")
            })
        });

        let h_sigma = (0..d.saturating_sub(1)).all(|i| {
            let mut sigma: Vec<usize> = (0..d).collect();
            sigma.swap(i, i + 1);
            let s2 = sigma.clone();
            commutes(
                // (f o M_sigma)(x) = f(y), y_i = x_{sigma^-1(i)}; a transposition is its own inverse
                &move |x: &[f64]| (0..x.len()).map(|j| x[sigma[j]]).collect(),
                &move |p: &Polynomial| p.permute_vars(&s2).expect("valid permutation"),
            )
        });

        let h_star = PolySpace::new(SpaceKind::PkStar, k, d).basis().iter().all(|a| self.reproduces_sampled(a));

        let h_star_star = {
            let gs: Vec<Polynomial> = (0..d)
                .map(|i| {
                    let a = MultiIndex::pure(d, i, m);
                    let a2 = a.clone();
                    let f = move |x: &[f64]| monomial_value(&a2, x);
                    match self.apply(&f) {
                        Ok(ip) => &Polynomial::monomial(a, 1.0) - &ip,
                        Err(_) => Polynomial::zero(d),
                    }
                })
                .collect();
            let npts = grid.len() / d;
            let a = DMatrix::from_fn(npts, d, |r, c| gs[c].eval_unchecked(&grid[r * d..(r + 1) * d]));
            let gram = a.transpose() * &a / npts as f64;
            let sv = gram.singular_values();
            sv.iter().copied().fold(f64::INFINITY, f64::min) > 1e-8
        };

        Hypotheses { h_pm, h_sigma, h_star, h_star_star }
    }

    /// Lower estimate of the sup-norm operator bound on a 33^d grid: the
    /// sampled Lebesgue function, and ratios over random trigonometric inputs.
    pub fn operator_norm_estimate(&self) -> f64 {
        let d = self.d;
        let grid = grid_points(&Block::unit_cube(d), 33);
        let ns = self.n_samples();
        let basis_vals: Vec<Vec<f64>> =
            grid.chunks(d).map(|x| self.nodal.basis.iter().map(|b| monomial_value(b, x)).collect()).collect();
        let nb = self.nodal.basis.len();
        let mut lebesgue: f64 = 0.0;
        for bv in &basis_vals {
            let mut total = 0.0;
            for s in 0..ns {
                let psi: f64 = (0..nb).map(|j| self.nodal.coef[j * ns + s] * bv[j]).sum();
                total += psi.abs();
            }
            lebesgue = lebesgue.max(total);
        }
        let mut best = lebesgue;
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
        for _ in 0..50 {
            let f = random_trig(&mut rng, d);
            let Ok(ip) = self.apply(&f) else { continue };
            let num = grid.chunks(d).map(|x| ip.eval_unchecked(x).abs()).fold(0.0, f64::max);
            let den = grid.chunks(d).map(|x| f(x).abs()).fold(0.0, f64::max);
            if den > 0.0 {
                best = best.max(num / den);
            }
        }
        best
    }

    /// Compact textual form, e.g. `lagrange:equispaced:k=1:d=2`.
    pub fn descriptor(&self) -> String {
        let head = match self.variant {
            Variant::LagrangeTensor { nodes: NodeKind::Equispaced } => "lagrange:equispaced".to_string(),
            Variant::LagrangeTensor { nodes: NodeKind::Chebyshev } => "lagrange:chebyshev".to_string(),
            Variant::L2Proj { space } => format!("l2:{}", space.name()),
            Variant::BoundaryLattice => "boundary".to_string(),
        };
        format!("{head}:k={}:d={}", self.k, self.d)
    }

    /// Parses the compact form produced by [`descriptor`](Self::descriptor).
    /// `default_d` fills in a missing `d=` field.
    pub fn parse(src: &str, default_d: Option<usize>) -> Result<Self> {
        let parts: Vec<&str> = src.trim().split(':').collect();
        let mut k = None;
        let mut d = default_d;
        let mut words = Vec::new();
        for p in &parts {
            if let Some(v) = p.strip_prefix("k=") {
                k = Some(v.parse::<u32>().map_err(|_| Error::Parse(format!("bad k in {src}")))?);
            } else if let Some(v) = p.strip_prefix("d=") {
                d = Some(v.parse::<usize>().map_err(|_| Error::Parse(format!("bad d in {src}")))?);
            } else {
                words.push(*p);
            }
        }
        let k = k.ok_or_else(|| Error::Parse(format!("missing k= in {src}")))?;
        let d = d.ok_or_else(|| Error::Parse(format!("missing d= in {src}")))?;
        let variant = match words.as_slice() {
            ["lagrange"] | ["lagrange", "equispaced"] => Variant::LagrangeTensor { nodes: NodeKind::Equispaced },
            ["lagrange", "chebyshev"] => Variant::LagrangeTensor { nodes: NodeKind::Chebyshev },
            ["l2", space] => Variant::L2Proj { space: SpaceKind::from_name(space)? },
            ["boundary"] => Variant::BoundaryLattice,
            _ => return Err(Error::Parse(format!("unknown operator {src}"))),
        };
        Self::new(variant, k, d)
    }

    pub fn to_descriptor(&self) -> OperatorDescriptor {
        let (variant, nodes, space) = match self.variant {
            Variant::LagrangeTensor { nodes } => ("lagrange", Some(nodes), None),
            Variant::L2Proj { space } => ("l2", None, Some(space.name().to_string())),
            Variant::BoundaryLattice => ("boundary", None, None),
        };
        OperatorDescriptor { variant: variant.into(), nodes, k: self.k, space, d: Some(self.d) }
    }
}

impl fmt::Display for ProjectionOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

/// JSON form of an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDescriptor {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<NodeKind>,
    pub k: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
}

impl OperatorDescriptor {
    pub fn build(&self, default_d: usize) -> Result<ProjectionOperator> {
        let d = self.d.unwrap_or(default_d);
        let variant = match self.variant.as_str() {
            "lagrange" => Variant::LagrangeTensor { nodes: self.nodes.unwrap_or(NodeKind::Equispaced) },
            "l2" => Variant::L2Proj {
                space: SpaceKind::from_name(
                    self.space.as_deref().ok_or_else(|| Error::Parse("l2 operator needs a space".into()))?,
                )?,
            },
            "boundary" => Variant::BoundaryLattice,
            other => return Err(Error::Parse(format!("unknown operator variant {other}"))),
        };
        ProjectionOperator::new(variant, self.k, d)
    }
}

fn random_trig(rng: &mut ChaCha8Rng, d: usize) -> impl Fn(&[f64]) -> f64 + Sync + Send + 'static {
    let waves: Vec<(f64, Vec<f64>, f64)> = (0..3)
        .map(|_| {
            let a = rng.gen_range(-1.0..1.0);
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let ph = rng.gen_range(0.0..std::f64::consts::TAU);
            (a, w, ph)
        })
        .collect();
    move |x: &[f64]| {
        waves.iter().map(|(a, w, ph)| a * (w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + ph).cos()).sum()
    }
}

fn tensor_samples(nodes: &[f64], d: usize) -> (Vec<Vec<u32>>, Vec<f64>) {
    let k = nodes.len() as u32 - 1;
    let idx: Vec<Vec<u32>> = MultiIndex::box_indices(d, k).into_iter().map(|m| m.entries().to_vec()).collect();
    let pts = idx.iter().flat_map(|ix| ix.iter().map(|&i| nodes[i as usize])).collect();
    (idx, pts)
}

fn build_lagrange(nodes: &[f64], d: usize) -> Nodal {
    let k = nodes.len() as u32 - 1;
    let l1 = lagrange_basis_1d(nodes);
    let basis = MultiIndex::box_indices(d, k);
    let (idx, samples) = tensor_samples(nodes, d);
    let ns = idx.len();
    let mut coef = vec![0.0; basis.len() * ns];
    for (j, beta) in basis.iter().enumerate() {
        for (s, ix) in idx.iter().enumerate() {
            coef[j * ns + s] = beta.entries().iter().zip(ix).map(|(&e, &i)| l1[i as usize][e as usize]).product();
        }
    }
    Nodal { basis, samples, coef, gram_inv: None }
}

fn build_boundary(k: u32, d: usize) -> Result<Nodal> {
    let nodes = lagrange_nodes(k, NodeKind::Equispaced)?;
    let basis = PolySpace::new(SpaceKind::PkStar, k, d).basis();
    let target = basis.len();
    let (idx, pts) = tensor_samples(&nodes, d);
    let on_boundary = |ix: &[u32]| k > 0 && ix.iter().any(|&i| i == 0 || i == k);
    let mut order: Vec<usize> = (0..idx.len()).filter(|&s| on_boundary(&idx[s])).collect();
    order.extend((0..idx.len()).filter(|&s| !on_boundary(&idx[s])));

    let row = |s: usize| -> Vec<f64> { basis.iter().map(|b| monomial_value(b, &pts[s * d..(s + 1) * d])).collect() };
    let mut chosen: Vec<usize> = Vec::new();
    for s in order {
        if chosen.len() == target {
            break;
        }
        let mut trial = chosen.clone();
        trial.push(s);
        let m = DMatrix::from_fn(trial.len(), target, |r, c| row(trial[r])[c]);
        if m.rank(1e-10) == trial.len() {
            chosen = trial;
        }
    }
    if chosen.len() < target {
        return Err(Error::Singular("lattice cannot determine the intermediate space".into()));
    }
    let v = DMatrix::from_fn(target, target, |r, c| row(chosen[r])[c]);
    let inv = v.try_inverse().ok_or_else(|| Error::Singular("boundary lattice Vandermonde".into()))?;
    let samples: Vec<f64> = chosen.iter().flat_map(|&s| pts[s * d..(s + 1) * d].to_vec()).collect();
    let coef = (0..target).flat_map(|j| (0..target).map(move |s| (j, s))).map(|(j, s)| inv[(j, s)]).collect();
    Ok(Nodal { basis, samples, coef, gram_inv: None })
}

fn build_l2(space: PolySpace) -> Result<Nodal> {
    let d = space.d;
    let basis = space.basis();
    let nb = basis.len();
    let gram = DMatrix::from_fn(nb, nb, |i, j| {
        let s: Vec<u32> = basis[i].entries().iter().zip(basis[j].entries()).map(|(a, b)| a + b).collect();
        monomial_integral(&s)
    });
    let ginv = gram.try_inverse().ok_or_else(|| Error::Singular("Gram matrix".into()))?;
    let rule = QuadratureRule::reference(d, L2_SAMPLE_ORDER);
    let ns = rule.len();
    let bvals = DMatrix::from_fn(nb, ns, |j, s| monomial_value(&basis[j], rule.point(s)) * rule.weights()[s]);
    let c = &ginv * bvals;
    let coef = (0..nb).flat_map(|j| (0..ns).map(move |s| (j, s))).map(|(j, s)| c[(j, s)]).collect();
    Ok(Nodal { basis, samples: rule.points().to_vec(), coef, gram_inv: Some(ginv) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sup_on_grid(p: &Polynomial, f: impl Fn(&[f64]) -> f64, block: &Block, n: usize) -> f64 {
        let d = block.dim();
        grid_points(block, n).chunks(d).map(|x| (p.eval_unchecked(x) - f(x)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn node_examples() {
        assert_eq!(lagrange_nodes(1, NodeKind::Equispaced).unwrap(), vec![-0.5, 0.5]);
        assert_eq!(lagrange_nodes(2, NodeKind::Equispaced).unwrap(), vec![-0.5, 0.0, 0.5]);
        assert_eq!(lagrange_nodes(1, NodeKind::Chebyshev).unwrap(), vec![-0.5, 0.5]);
        assert_eq!(lagrange_nodes(2, NodeKind::Chebyshev).unwrap(), vec![-0.5, 0.0, 0.5]);
        assert_eq!(lagrange_nodes(0, NodeKind::Equispaced).unwrap(), vec![0.0]);
        assert!(lagrange_nodes(0, NodeKind::Chebyshev).is_err());
    }

    #[test]
    fn linear_interp_of_square() {
        let op = ProjectionOperator::lagrange(NodeKind::Equispaced, 1, 1).unwrap();
        let f = Polynomial::parse(1, "X1^2").unwrap();
        assert_eq!(op.apply(&f).unwrap(), Polynomial::constant(1, 0.25));
        let g = |x: &[f64]| x[0] * x[0];
        assert!(op.apply(&g).unwrap().max_coeff_diff(&Polynomial::constant(1, 0.25)) < 1e-15);

        let op2 = ProjectionOperator::lagrange(NodeKind::Equispaced, 1, 2).unwrap();
        let f2 = Polynomial::parse(2, "X1^2").unwrap();
        assert_eq!(op2.apply(&f2).unwrap(), Polynomial::constant(2, 0.25));
    }

    #[test]
    fn block_transfer_examples() {
        let op = ProjectionOperator::lagrange(NodeKind::Equispaced, 1, 1).unwrap();
        let r = Block::new(vec![0.0], vec![1.0]).unwrap();
        let f = Polynomial::parse(1, "X1^2").unwrap();
        let ir = op.apply_on_block(&r, &f).unwrap();
        assert!(ir.max_coeff_diff(&Polynomial::variable(1, 0)) < 1e-15);

        let bil = ProjectionOperator::lagrange(NodeKind::Equispaced, 1, 2).unwrap();
        let r2 = Block::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let xy = Polynomial::parse(2, "X1*X2").unwrap();
        assert!(bil.apply_on_block(&r2, &xy).unwrap().max_coeff_diff(&xy) < 1e-14);

        // sampled path agrees with the exact path
        let g = |x: &[f64]| x[0] * x[0] + 4.0 * x[1] * x[1];
        let r3 = Block::new(vec![0.2, -0.3], vec![0.7, 0.1]).unwrap();
        let a = bil.apply_on_block(&r3, &g).unwrap();
        let b = bil.apply_on_block(&r3, &Polynomial::parse(2, "x^2 + 4*y^2").unwrap()).unwrap();
        assert!(a.max_coeff_diff(&b) < 1e-13);
    }

    #[test]
    fn projector_on_image() {
        let ops = [
            ProjectionOperator::lagrange(NodeKind::Equispaced, 2, 2).unwrap(),
            ProjectionOperator::lagrange(NodeKind::Chebyshev, 3, 2).unwrap(),
            ProjectionOperator::l2(SpaceKind::Pk, 2, 2).unwrap(),
            ProjectionOperator::l2(SpaceKind::PkStar, 1, 2).unwrap(),
            ProjectionOperator::boundary(2, 2).unwrap(),
        ];
        let f = |x: &[f64]| (x[0] + 2.0 * x[1]).exp();
        for op in &ops {
            let once = op.apply(&f).unwrap();
            let twice = op.apply(&|x: &[f64]| once.eval_unchecked(x)).unwrap();
            let err = sup_on_grid(&twice, |x| once.eval_unchecked(x), &Block::unit_cube(2), 17);
            assert!(err < 1e-10, "{op}: {err}");
            assert!(op.apply_poly(&once).unwrap().max_coeff_diff(&once) < 1e-12, "{op}");
            for b in op.image_basis() {
                assert!(op.monomial_residual(b).is_zero());
            }
        }
    }

    #[test]
    fn detect_k_examples() {
        assert_eq!(ProjectionOperator::lagrange(NodeKind::Equispaced, 2, 2).unwrap().detect_k().unwrap(), 2);
        assert_eq!(ProjectionOperator::l2(SpaceKind::Pk, 1, 2).unwrap().detect_k().unwrap(), 1);
        assert_eq!(ProjectionOperator::l2(SpaceKind::PkStarStar, 1, 2).unwrap().detect_k().unwrap(), 1);
        assert_eq!(ProjectionOperator::boundary(2, 2).unwrap().detect_k().unwrap(), 2);
        let op = ProjectionOperator::lagrange(NodeKind::Equispaced, 9, 1).unwrap();
        assert!(matches!(op.detect_k(), Err(Error::KMaxReached(8))));
    }

    #[test]
    fn hypothesis_examples() {
        for k in 1..=2 {
            let h = ProjectionOperator::lagrange(NodeKind::Equispaced, k, 2).unwrap().check_hypotheses();
            assert!(h.all(), "k={k}: {h:?}");
        }
        let h = ProjectionOperator::l2(SpaceKind::Pk, 1, 2).unwrap().check_hypotheses();
        assert!(!h.h_star);
        let h = ProjectionOperator::l2(SpaceKind::PkStarStar, 1, 2).unwrap().check_hypotheses();
        assert!(h.all(), "{h:?}");
    }

    #[test]
    fn operator_norms() {
        let n1 = ProjectionOperator::lagrange(NodeKind::Equispaced, 1, 1).unwrap().operator_norm_estimate();
        assert!((n1 - 1.0).abs() < 1e-9, "{n1}");
        let n2 = ProjectionOperator::lagrange(NodeKind::Equispaced, 2, 1).unwrap().operator_norm_estimate();
        assert!((n2 - 1.25).abs() < 1e-6, "{n2}");
        let l2 = ProjectionOperator::l2(SpaceKind::Pk, 1, 2).unwrap().operator_norm_estimate();
        assert!(l2 >= 1.0);
    }

    #[test]
    fn descriptors_round_trip() {
        for s in ["lagrange:equispaced:k=1:d=2", "lagrange:chebyshev:k=3:d=1", "l2:Pk:k=1:d=2", "boundary:k=2:d=2"] {
            let op = ProjectionOperator::parse(s, None).unwrap();
            assert_eq!(op.descriptor(), s);
            let json = serde_json::to_string(&op.to_descriptor()).unwrap();
            let back: OperatorDescriptor = serde_json::from_str(&json).unwrap();
            assert_eq!(back.build(op.dim()).unwrap(), op);
        }
        assert!(ProjectionOperator::parse("spline:k=1:d=2", None).is_err());
        assert!(serde_json::from_str::<OperatorDescriptor>(r#"{"variant":"l2","k":1,"bogus":1}"#).is_err());
    }

    #[test]
    fn custom_nodes_guarded() {
        assert!(matches!(ProjectionOperator::lagrange_custom(&[0.1, 0.1], 1), Err(Error::Singular(_))));
        let op = ProjectionOperator::lagrange_custom(&[-0.5, 0.0, 0.5], 1).unwrap();
        assert_eq!(op.detect_k().unwrap(), 2);
    }
}
