//! Test functions with closed-form partial derivatives.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::Block;
use crate::error::{Error, Result};
use crate::poly::{Evaluable, MultiIndex, Polynomial, SmoothFunction};

/// Highest derivative order the oracles answer.
pub const ORACLE_ORDER: u32 = 4;

/// One-variable factor of a separable term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    One,
    Pow(u32),
    Exp(f64),
    SinPi,
}

impl Factor {
    fn derivative(self, order: u32, x: f64) -> f64 {
        match self {
            Factor::One => {
                if order == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Factor::Pow(e) => {
                if order > e {
                    return 0.0;
                }
                let falling: f64 = (0..order).map(|i| f64::from(e - i)).product();
                falling * x.powi((e - order) as i32)
            }
            Factor::Exp(r) => r.powi(order as i32) * (r * x).exp(),
            Factor::SinPi => PI.powi(order as i32) * (PI * x + f64::from(order % 4) * PI / 2.0).sin(),
        }
    }
}

/// `coef * prod_i factor_i(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub factors: Vec<Factor>,
}

impl Term {
    fn new(coef: f64, factors: Vec<Factor>) -> Self {
        Term { coef, factors }
    }

    fn derivative(&self, alpha: &[u32], x: &[f64]) -> f64 {
        let mut v = self.coef;
        for ((f, &a), &xi) in self.factors.iter().zip(alpha).zip(x) {
            if v == 0.0 {
                break;
            }
            v *= f.derivative(a, xi);
        }
        v
    }
}

/// Sum of separable terms on a block, with an optional weight attached.
#[derive(Clone)]
pub struct CorpusFunction {
    pub name: String,
    pub domain: Block,
    terms: Vec<Term>,
    poly: Option<Polynomial>,
    pub weight: Option<Weight>,
    pub description: String,
}

impl fmt::Debug for CorpusFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CorpusFunction")
            .field("name", &self.name)
            .field("description", &self.description)
            .field("weight", &self.weight.as_ref().map(|w| w.label()))
            .finish()
    }
}

impl CorpusFunction {
    pub fn new(name: &str, description: &str, domain: Block, terms: Vec<Term>) -> Result<Self> {
        let d = domain.dim();
        if terms.iter().any(|t| t.factors.len() != d) {
            return Err(Error::InvalidArgument(format!("{name}: every term needs {d} factors")));
        }
        let poly = if terms.iter().all(|t| t.factors.iter().all(|f| matches!(f, Factor::One | Factor::Pow(_)))) {
            let mono = terms.iter().map(|t| {
                let e = t.factors.iter().map(|f| if let Factor::Pow(e) = f { *e } else { 0 }).collect();
                (MultiIndex::new(e), t.coef)
            });
            Some(Polynomial::from_terms(d, mono)?)
        } else {
            None
        };
        Ok(CorpusFunction {
            name: name.to_string(),
            domain,
            terms,
            poly,
            weight: None,
            description: description.to_string(),
        })
    }

    pub fn with_weight(mut self, w: Weight) -> Self {
        self.weight = Some(w);
        self
    }

    /// Same function restricted to another block of the same dimension.
    pub fn on_domain(mut self, domain: Block) -> Result<Self> {
        if domain.dim() != self.domain.dim() {
            return Err(Error::DimensionMismatch { expected: self.domain.dim(), got: domain.dim() });
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn polynomial(&self) -> Option<&Polynomial> {
        self.poly.as_ref()
    }

    /// Largest relative gap between the oracle and central differences of
    /// the next-lower order, over `points` random points and orders `1..=4`.
    pub fn finite_difference_gap(&self, points: usize, seed: u64) -> Result<f64> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let x: Vec<f64> = (0..d).map(|i| rng.gen_range(self.domain.lo()[i]..self.domain.hi()[i])).collect();
            for alpha in MultiIndex::box_indices(d, ORACLE_ORDER) {
                let order = alpha.order();
                if order == 0 || order > ORACLE_ORDER {
                    continue;
                }
                let axis = alpha.entries().iter().position(|&e| e > 0).expect("nonzero order");
                let mut lower = alpha.entries().to_vec();
                lower[axis] -= 1;
                let lower = MultiIndex::new(lower);
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[axis] += h;
                xm[axis] -= h;
                let oracle = |a: &MultiIndex, y: &[f64]| {
                    self.derivative(a, y).ok_or(Error::MissingDerivative { order: a.order() as usize })
                };
                let fd = (oracle(&lower, &xp)? - oracle(&lower, &xm)?) / (2.0 * h);
                let exact = oracle(&alpha, &x)?;
                worst = worst.max((fd - exact).abs() / exact.abs().max(1.0));
            }
        }
        Ok(worst)
    }
}

impl Evaluable for CorpusFunction {
    fn eval(&self, x: &[f64]) -> f64 {
        let zero = vec![0; x.len()];
        self.terms.iter().map(|t| t.derivative(&zero, x)).sum()
    }

    fn as_polynomial(&self) -> Option<&Polynomial> {
        self.poly.as_ref()
    }
}

impl SmoothFunction for CorpusFunction {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn derivative(&self, alpha: &MultiIndex, x: &[f64]) -> Option<f64> {
        if alpha.order() > ORACLE_ORDER || alpha.dim() != x.len() {
            return None;
        }
        Some(self.terms.iter().map(|t| t.derivative(alpha.entries(), x)).sum())
    }
}

/// Positive weight `scale * base(x)` with a stable label.
#[derive(Clone)]
pub struct Weight {
    name: String,
    scale: f64,
    base: Arc<dyn Evaluable + Send + Sync>,
}

impl Weight {
    pub fn new(name: &str, base: Arc<dyn Evaluable + Send + Sync>) -> Self {
        Weight { name: name.to_string(), scale: 1.0, base }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Weight { name: self.name.clone(), scale: self.scale * c, base: self.base.clone() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn label(&self) -> String {
        if self.scale == 1.0 {
            self.name.clone()
        } else {
            format!("{}*{}", self.scale, self.name)
        }
    }

    /// `"one_plus_x2"`, `"const:<c>"`, optionally prefixed by `"<c>*"`.
    pub fn by_name(spec: &str, d: usize) -> Result<Self> {
        if let Some((c, rest)) = spec.split_once('*') {
            let c: f64 = c.trim().parse().map_err(|_| Error::Parse(format!("bad weight factor in {spec:?}")))?;
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("weight factor must be positive, got {c}")));
            }
            return Ok(Weight::by_name(rest.trim(), d)?.scaled(c));
        }
        if let Some(c) = spec.strip_prefix("const:") {
            let c: f64 = c.parse().map_err(|_| Error::Parse(format!("bad constant weight {spec:?}")))?;
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("constant weight must be positive, got {c}")));
            }
            let mut w = Weight::new("one", Arc::new(|_: &[f64]| 1.0));
            w.scale = c;
            return Ok(w);
        }
        match spec {
            "one" => Ok(Weight::new("one", Arc::new(|_: &[f64]| 1.0))),
            "one_plus_x2" => {
                if d == 0 {
                    return Err(Error::InvalidArgument("weight needs d >= 1".into()));
                }
                Ok(Weight::new("one_plus_x2", Arc::new(|x: &[f64]| 1.0 + x[0] * x[0])))
            }
            other => Err(Error::InvalidArgument(format!("unknown weight {other:?}"))),
        }
    }
}

impl Evaluable for Weight {
    fn eval(&self, x: &[f64]) -> f64 {
        self.scale * self.base.eval(x)
    }
}

fn quad2(c: f64) -> Vec<Term> {
    use Factor::*;
    vec![Term::new(1.0, vec![Pow(2), One]), Term::new(c, vec![One, Pow(2)])]
}

/// The shipped functions, all on unit boxes `[0,1]^d`.
pub fn corpus() -> Vec<CorpusFunction> {
    use Factor::*;
    let sq = Block::unit_box(2);
    let build = |name: &str, desc: &str, dom: Block, terms: Vec<Term>| {
        CorpusFunction::new(name, desc, dom, terms).expect("corpus entries are well formed")
    };
    vec![
        build("square_1d", "x^2", Block::unit_box(1), vec![Term::new(1.0, vec![Pow(2)])]),
        build("quad_iso", "x^2 + y^2", sq.clone(), quad2(1.0)),
        build("quad_aniso", "x^2 + 4y^2", sq.clone(), quad2(4.0)),
        build("quad_mixed", "x^2 - y^2", sq.clone(), quad2(-1.0)),
        build(
            "cubic",
            "x^3 + y^3",
            sq.clone(),
            vec![Term::new(1.0, vec![Pow(3), One]), Term::new(1.0, vec![One, Pow(3)])],
        ),
        build("exp_sum", "exp(x + 2y)", sq.clone(), vec![Term::new(1.0, vec![Exp(1.0), Exp(2.0)])]),
        build("sin_prod", "sin(pi x) sin(pi y)", sq.clone(), vec![Term::new(1.0, vec![SinPi, SinPi])]),
        build("quad_aniso_weighted", "x^2 + 4y^2, weight 1 + x^2", sq, quad2(4.0))
            .with_weight(Weight::by_name("one_plus_x2", 2).expect("known weight")),
    ]
}

pub fn corpus_function(name: &str) -> Result<CorpusFunction> {
    corpus().into_iter().find(|f| f.name == name).ok_or_else(|| {
        let names: Vec<String> = corpus().into_iter().map(|f| f.name).collect();
        Error::InvalidArgument(format!("unknown function {name:?}; available: {}", names.join(", ")))
    })
}
