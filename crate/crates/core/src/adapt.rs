//! Local block specifications and the coarse-grid tiling construction of
//! adaptive partitions.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use crate::blocks::{Block, BlockPartition};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kfun::{k_closed_form, k_modified, HomogeneousPoly, KOptions};
use crate::norms::{grid_points, Exponent, QuadratureRule};
use crate::poly::{homogeneous_taylor, Evaluable, MultiIndex, SmoothFunction};
use crate::proj::ProjectionOperator;

pub type SpecMap = dyn Fn(&[f64]) -> Result<Block> + Send + Sync;
pub type SharedFunction = Arc<dyn SmoothFunction + Send + Sync>;
pub type SharedWeight = Arc<dyn Evaluable + Send + Sync>;

const SPEC_GRID: usize = 33;
const K_FLOOR: f64 = 1e-10;

/// Point-to-block map on a domain; only the shape of `R(x)` matters.
#[derive(Clone)]
pub struct LocalBlockSpec {
    domain: Block,
    map: Arc<SpecMap>,
    memo: Arc<Mutex<HashMap<Vec<u64>, Block>>>,
    sup_diam: Arc<OnceLock<Result<f64>>>,
}

impl fmt::Debug for LocalBlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalBlockSpec").field("domain", &self.domain).finish_non_exhaustive()
    }
}

impl LocalBlockSpec {
    pub fn new(domain: Block, map: impl Fn(&[f64]) -> Result<Block> + Send + Sync + 'static) -> Self {
        LocalBlockSpec {
            domain,
            map: Arc::new(map),
            memo: Arc::new(Mutex::new(HashMap::new())),
            sup_diam: Arc::new(OnceLock::new()),
        }
    }

    /// The same block shape at every point.
    pub fn constant(domain: Block, shape: Block) -> Self {
        let centered = Block::centered(&shape.widths()).expect("valid block");
        LocalBlockSpec::new(domain, move |_| Ok(centered.clone()))
    }

    pub fn domain(&self) -> &Block {
        &self.domain
    }

    /// `R(x)`, memoized per point.
    pub fn eval(&self, x: &[f64]) -> Result<Block> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(b) = self.memo.lock().expect("memo poisoned").get(&key) {
            return Ok(b.clone());
        }
        let b = (self.map)(x)?;
        if !(b.volume() > 0.0) {
            return Err(Error::DegenerateBlock(format!("spec block at {x:?} has zero volume")));
        }
        self.memo.lock().expect("memo poisoned").insert(key, b.clone());
        Ok(b)
    }

    /// Largest `diam R(x)` over a 33^d sample grid.
    pub fn sup_diam(&self) -> Result<f64> {
        self.sup_diam
            .get_or_init(|| {
                let d = self.domain.dim();
                let mut best: f64 = 0.0;
                for x in grid_points(&self.domain, SPEC_GRID).chunks(d) {
                    best = best.max((self.map)(x)?.diam());
                }
                Ok(best)
            })
            .clone()
    }

    /// Quadrature value of `int |R(x)|^{-1} dx`, the limit of `#P_n / n^{2d}`.
    pub fn inverse_volume_integral(&self, q: usize) -> Result<f64> {
        let rule = QuadratureRule::gauss_legendre(&self.domain, q);
        let mut total = 0.0;
        for (x, w) in rule.points().chunks(self.domain.dim()).zip(rule.weights()) {
            total += w / (self.map)(x)?.volume();
        }
        Ok(total)
    }
}

/// `n^d` congruent cells in lexicographic order.
pub fn uniform_partition(domain: &Block, n: usize) -> Result<BlockPartition> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let d = domain.dim();
    let cells = MultiIndex::box_indices(d, n as u32 - 1)
        .iter()
        .map(|idx| coarse_cell(domain, n, idx.entries()))
        .collect::<Result<Vec<_>>>()?;
    BlockPartition::new(domain.clone(), cells)
}

fn grid_coord(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if i == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / n as f64
    }
}

fn coarse_cell(domain: &Block, n: usize, idx: &[u32]) -> Result<Block> {
    let (lo, hi) = (domain.lo(), domain.hi());
    let a = (0..idx.len()).map(|ax| grid_coord(lo[ax], hi[ax], idx[ax] as usize, n)).collect();
    let b = (0..idx.len()).map(|ax| grid_coord(lo[ax], hi[ax], idx[ax] as usize + 1, n)).collect();
    Block::new(a, b)
}

/// One axis of a coarse cell cut by tile boundaries.
#[derive(Debug, Clone)]
struct AxisCut {
    /// boundaries, ascending, first = cell lo, last = cell hi
    bounds: Vec<f64>,
    /// whether segment `j` is a whole tile
    whole: Vec<bool>,
}

impl AxisCut {
    fn n_whole(&self) -> usize {
        self.whole.iter().filter(|&&w| w).count()
    }

    fn n_segments(&self) -> usize {
        self.whole.len()
    }
}

/// Tiles of width `h` over `[a, b]`, anchored at the midpoint either by a tile
/// centre or by a tile edge, whichever leaves more whole tiles.
fn cut_axis(a: f64, b: f64, h: f64, snap: f64) -> AxisCut {
    let len = b - a;
    let c = 0.5 * (a + b);
    let ratio = len / h;
    let eps = 1e-9;
    // centred: 2K + 1 tiles; edge-anchored: 2J tiles
    let k = ((ratio - 1.0) / 2.0 + eps).floor();
    let centred = if ratio + eps >= 1.0 { 2.0 * k + 1.0 } else { 0.0 };
    let j = (ratio / 2.0 + eps).floor();
    let edged = 2.0 * j;
    let (count, half_span) = if centred >= edged { (centred, (k + 0.5) * h) } else { (edged, j * h) };
    if count < 1.0 {
        return AxisCut { bounds: vec![a, b], whole: vec![false] };
    }
    let count = count as usize;
    let left = c - half_span;
    let mut inner: Vec<f64> = (0..=count).map(|i| left + i as f64 * h).collect();
    // snap tile edges that land within `snap` of the cell faces
    if inner[0] - a < snap {
        inner[0] = a;
    }
    if b - inner[count] < snap {
        inner[count] = b;
    }
    inner[0] = inner[0].max(a);
    inner[count] = inner[count].min(b);
    let mut bounds = Vec::with_capacity(count + 3);
    let mut whole = Vec::with_capacity(count + 2);
    if inner[0] > a {
        bounds.push(a);
        whole.push(false);
    }
    for (i, &x) in inner.iter().enumerate() {
        bounds.push(x);
        if i < count {
            whole.push(true);
        }
    }
    if inner[count] < b {
        bounds.push(b);
        whole.push(false);
    }
    AxisCut { bounds, whole }
}

/// Adaptive partition with its whole-tile and boundary-fragment parts.
#[derive(Debug, Clone)]
pub struct AdaptivePartition {
    pub partition: BlockPartition,
    /// ids of whole tiles
    pub part1: Vec<usize>,
    /// ids of subdivided boundary fragments
    pub part2: Vec<usize>,
    pub n: usize,
    /// coarse cell (lexicographic index) governing each cell
    pub governing: Vec<usize>,
    /// barycenters of the coarse cells
    pub barycenters: Vec<Vec<f64>>,
    /// tile widths used in each coarse cell
    pub tiles: Vec<Vec<f64>>,
}

impl AdaptivePartition {
    pub fn part2_max_diam(&self) -> f64 {
        self.part2.iter().map(|&i| self.partition.cells()[i].diam()).fold(0.0, f64::max)
    }

    pub fn part1_max_diam(&self) -> f64 {
        self.part1.iter().map(|&i| self.partition.cells()[i].diam()).fold(0.0, f64::max)
    }
}

/// `max(1, floor(ln n))` pieces per axis for boundary fragments.
pub fn fragment_pieces(n: usize) -> usize {
    ((n as f64).ln().floor() as usize).max(1)
}

struct CoarsePlan {
    center: Vec<f64>,
    tile: Vec<f64>,
    cuts: Vec<AxisCut>,
}

impl CoarsePlan {
    fn cell_count(&self, pieces: usize) -> usize {
        let all: usize = self.cuts.iter().map(AxisCut::n_segments).product();
        let whole: usize = self.cuts.iter().map(AxisCut::n_whole).product();
        whole + (all - whole) * pieces.pow(self.cuts.len() as u32)
    }
}

fn plan(spec: &LocalBlockSpec, n: usize, exec: Exec) -> Result<Vec<CoarsePlan>> {
    let domain = spec.domain();
    let d = domain.dim();
    let snap = 1e-14 * domain.diam();
    let scale = 1.0 / (n as f64 * n as f64);
    let indices = MultiIndex::box_indices(d, n as u32 - 1);
    exec.map(&indices, |idx| -> Result<CoarsePlan> {
        let q = coarse_cell(domain, n, idx.entries())?;
        let center = q.center();
        let shape = spec.eval(&center).map_err(|e| {
            Error::InvalidArgument(format!("spec evaluation failed in coarse cell {} at {center:?}: {e}", idx))
        })?;
        let tile: Vec<f64> = shape.widths().iter().map(|w| w * scale).collect();
        let cuts = (0..d).map(|ax| cut_axis(q.lo()[ax], q.hi()[ax], tile[ax], snap)).collect();
        Ok(CoarsePlan { center, tile, cuts })
    })
    .into_iter()
    .collect()
}

/// `#P_n` without materializing the cells.
pub fn adaptive_cell_count(spec: &LocalBlockSpec, n: usize, exec: Exec) -> Result<usize> {
    if n < 2 {
        return Err(Error::InvalidArgument("adaptive construction needs n >= 2".into()));
    }
    let pieces = fragment_pieces(n);
    Ok(plan(spec, n, exec)?.iter().map(|p| p.cell_count(pieces)).sum())
}

/// Tiles every coarse cell `Q` of the `n^d` grid by translates of
/// `n^{-2} R(x_Q)`; whole tiles form part 1, clipped fragments are subdivided
/// into part 2.
pub fn build_adaptive(spec: &LocalBlockSpec, n: usize, exec: Exec) -> Result<AdaptivePartition> {
    if n < 2 {
        return Err(Error::InvalidArgument("adaptive construction needs n >= 2".into()));
    }
    let d = spec.domain().dim();
    let pieces = fragment_pieces(n);
    let plans = plan(spec, n, exec)?;

    let per_q = exec.map(&plans, |pl| -> Result<Vec<(Block, bool)>> {
        let mut out = Vec::with_capacity(pl.cell_count(pieces));
        let seg_counts: Vec<u32> = pl.cuts.iter().map(|c| c.n_segments() as u32).collect();
        let max_seg = *seg_counts.iter().max().expect("d >= 1");
        for seg in MultiIndex::box_indices(d, max_seg - 1) {
            let s = seg.entries();
            if s.iter().zip(&seg_counts).any(|(a, b)| a >= b) {
                continue;
            }
            let lo: Vec<f64> = (0..d).map(|ax| pl.cuts[ax].bounds[s[ax] as usize]).collect();
            let hi: Vec<f64> = (0..d).map(|ax| pl.cuts[ax].bounds[s[ax] as usize + 1]).collect();
            let is_whole = (0..d).all(|ax| pl.cuts[ax].whole[s[ax] as usize]);
            if is_whole {
                out.push((Block::new(lo, hi)?, true));
                continue;
            }
            for sub in MultiIndex::box_indices(d, pieces as u32 - 1) {
                let e = sub.entries();
                let a = (0..d).map(|ax| grid_coord(lo[ax], hi[ax], e[ax] as usize, pieces)).collect();
                let b = (0..d).map(|ax| grid_coord(lo[ax], hi[ax], e[ax] as usize + 1, pieces)).collect();
                out.push((Block::new(a, b)?, false));
            }
        }
        Ok(out)
    });

    let mut cells = Vec::new();
    let mut flags = Vec::new();
    let mut governing = Vec::new();
    for (qi, res) in per_q.into_iter().enumerate() {
        for (b, whole) in res? {
            cells.push(b);
            flags.push(whole);
            governing.push(qi);
        }
    }
    // the partition constructor drops negligible cells; keep flags in step
    let vol = spec.domain().volume();
    let keep: Vec<bool> = cells.iter().map(|c| c.volume() >= 1e-14 * vol).collect();
    let mut kept_cells = Vec::with_capacity(cells.len());
    let mut part1 = Vec::new();
    let mut part2 = Vec::new();
    let mut gov = Vec::new();
    for (i, c) in cells.into_iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let id = kept_cells.len();
        if flags[i] {
            part1.push(id);
        } else {
            part2.push(id);
        }
        gov.push(governing[i]);
        kept_cells.push(c);
    }
    let partition = BlockPartition::new(spec.domain().clone(), kept_cells)?;
    Ok(AdaptivePartition {
        partition,
        part1,
        part2,
        n,
        governing: gov,
        barycenters: plans.iter().map(|p| p.center.clone()).collect(),
        tiles: plans.iter().map(|p| p.tile.clone()).collect(),
    })
}

/// Whole tiles are translates of the governing tile and stay within
/// `diam(R0)/n` of the governing barycenter.
pub fn check_tile_geometry(ap: &AdaptivePartition, domain: &Block) -> Result<()> {
    let bound = domain.diam() / ap.n as f64;
    for &id in &ap.part1 {
        let c = &ap.partition.cells()[id];
        let q = ap.governing[id];
        let tile = &ap.tiles[q];
        let y = &ap.barycenters[q];
        for (w, t) in c.widths().iter().zip(tile) {
            if (w - t).abs() > 1e-12 * t.max(1e-300) + 1e-14 * domain.diam() {
                return Err(Error::InvalidPartition(format!("cell {id} is not a translate of its tile")));
            }
        }
        for corner in [c.lo(), c.hi()] {
            let dist = corner.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist > bound * (1.0 + 1e-12) {
                return Err(Error::InvalidPartition(format!("cell {id} lies farther than diam/n from its barycenter")));
            }
        }
    }
    Ok(())
}

/// `n(N) = max{n : #P_n <= N}`, searched upward from `n = 2`.
pub fn partition_for_budget(spec: &LocalBlockSpec, budget: usize, exec: Exec) -> Result<AdaptivePartition> {
    let n = budget_index(spec, budget, exec)?;
    build_adaptive(spec, n, exec)
}

pub fn budget_index(spec: &LocalBlockSpec, budget: usize, exec: Exec) -> Result<usize> {
    let min = adaptive_cell_count(spec, 2, exec)?;
    if min > budget {
        return Err(Error::BudgetTooSmall { budget, min });
    }
    let mut n = 2;
    loop {
        let next = adaptive_cell_count(spec, n + 1, exec)?;
        if next > budget {
            return Ok(n);
        }
        n += 1;
    }
}

/// `pi_x = d^m f(x) / m!`.
pub fn local_poly(f: &dyn SmoothFunction, x: &[f64], m: u32) -> Result<HomogeneousPoly> {
    HomogeneousPoly::new(homogeneous_taylor(f, x, m)?, m)
}

fn weight_at(weight: &Option<SharedWeight>, x: &[f64]) -> Result<f64> {
    match weight {
        None => Ok(1.0),
        Some(w) => {
            let v = w.eval(x);
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonPositiveWeight { point: x.to_vec(), value: v })
            }
        }
    }
}

/// `R(x) = (K(pi_x) Omega(x))^{-tau/d} R*(x)` from the closed-form constants.
/// Requires `K(pi_x) > 0` and constant pure-power signs on the sample grid.
pub fn spec_from_closed_form(
    f: SharedFunction,
    op: &ProjectionOperator,
    p: Exponent,
    domain: &Block,
    weight: Option<SharedWeight>,
    opts: &KOptions,
) -> Result<LocalBlockSpec> {
    let d = domain.dim();
    let m = op.m()?;
    let tau = p.tau(m, d);
    let reject = |why: String| Error::Precondition(format!("{why}; build the spec with spec_from_km instead"));
    let mut signs: Option<Vec<f64>> = None;
    for x in grid_points(domain, SPEC_GRID).chunks(d) {
        let pi = local_poly(f.as_ref(), x, m)?;
        let k = k_closed_form(op, &pi, p, opts)?;
        if !(k.value >= K_FLOOR) {
            return Err(reject(format!("K vanishes at {x:?}")));
        }
        let s: Vec<f64> = pi.lambdas().iter().map(|v| v.signum()).collect();
        match &signs {
            None => signs = Some(s),
            Some(prev) if *prev != s => return Err(reject(format!("pure-power signs change at {x:?}"))),
            _ => {}
        }
    }
    let op = op.clone();
    let opts = *opts;
    Ok(LocalBlockSpec::new(domain.clone(), move |x| {
        let pi = local_poly(f.as_ref(), x, m)?;
        let k = k_closed_form(&op, &pi, p, &opts)?;
        let scales = k.scales.ok_or_else(|| Error::Precondition(format!("K vanishes at {x:?}")))?;
        let factor = (k.value * weight_at(&weight, x)?).powf(-tau / d as f64);
        Block::centered(&scales.iter().map(|s| s * factor).collect::<Vec<_>>())
    }))
}

/// `R_M(x) = (K_M(pi_x) Omega(x) + 1/M)^{-tau/d} R*_M(x)` from the
/// diameter-capped error function.
pub fn spec_from_km(
    f: SharedFunction,
    op: &ProjectionOperator,
    p: Exponent,
    max_diam: f64,
    domain: &Block,
    weight: Option<SharedWeight>,
    opts: &KOptions,
) -> Result<LocalBlockSpec> {
    let d = domain.dim();
    if !(max_diam >= (d as f64).sqrt() * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!("M = {max_diam} is below sqrt(d)")));
    }
    let m = op.m()?;
    let tau = p.tau(m, d);
    let op = op.clone();
    let opts = *opts;
    Ok(LocalBlockSpec::new(domain.clone(), move |x| {
        let pi = local_poly(f.as_ref(), x, m)?;
        let k = k_modified(&op, &pi, p, max_diam, &opts)?;
        let scales = k.scales.unwrap_or_else(|| vec![1.0; d]);
        let factor = (k.value * weight_at(&weight, x)? + 1.0 / max_diam).powf(-tau / d as f64);
        Block::centered(&scales.iter().map(|s| s * factor).collect::<Vec<_>>())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec() -> LocalBlockSpec {
        LocalBlockSpec::constant(Block::unit_box(2), Block::unit_box(2))
    }

    #[test]
    fn uniform_examples() {
        let p = uniform_partition(&Block::unit_box(2), 3).unwrap();
        assert_eq!(p.len(), 9);
        assert!(p.cells().iter().all(|c| (c.widths()[0] - 1.0 / 3.0).abs() < 1e-15));
        let r = Block::new(vec![0.0, 1.0], vec![2.0, 3.0]).unwrap();
        assert_eq!(uniform_partition(&r, 1).unwrap().cells(), &[r.clone()]);
        let p3 = uniform_partition(&Block::unit_box(3), 2).unwrap();
        assert_eq!(p3.len(), 8);
    }

    #[test]
    fn axis_cuts() {
        let c = cut_axis(0.0, 1.0, 0.25, 1e-14);
        assert_eq!(c.n_whole(), 4);
        assert_eq!(c.n_segments(), 4);
        let c = cut_axis(0.0, 1.0, 1.0 / 3.0, 1e-14);
        assert_eq!((c.n_whole(), c.n_segments()), (3, 3));
        let c = cut_axis(0.0, 1.0, 0.3, 1e-14);
        assert_eq!(c.n_whole(), 3);
        assert_eq!(c.n_segments(), 5);
        assert!((c.bounds[1] - 0.05).abs() < 1e-15);
        let c = cut_axis(0.0, 1.0, 2.0, 1e-14);
        assert_eq!((c.n_whole(), c.n_segments()), (0, 1));
    }

    #[test]
    fn unit_cube_counts_exact() {
        for n in 2..=7 {
            let ap = build_adaptive(&unit_spec(), n, Exec::Parallel).unwrap();
            assert_eq!(ap.part1.len(), n.pow(4), "n={n}");
            assert!(ap.part2.is_empty());
            assert_eq!(adaptive_cell_count(&unit_spec(), n, Exec::Sequential).unwrap(), n.pow(4));
            check_tile_geometry(&ap, &Block::unit_box(2)).unwrap();
        }
    }

    #[test]
    fn budget_examples() {
        let spec = unit_spec();
        let ap = partition_for_budget(&spec, 256, Exec::Parallel).unwrap();
        assert_eq!((ap.n, ap.partition.len()), (4, 256));
        let ap = partition_for_budget(&spec, 255, Exec::Parallel).unwrap();
        assert_eq!((ap.n, ap.partition.len()), (3, 81));
        assert!(matches!(partition_for_budget(&spec, 10, Exec::Parallel), Err(Error::BudgetTooSmall { min: 16, .. })));
    }

    #[test]
    fn irregular_tiles_form_valid_partition() {
        let spec = LocalBlockSpec::new(Block::unit_box(2), |x: &[f64]| {
            Block::centered(&[1.0 + x[0], 0.7 / (1.0 + x[0] * x[1])])
        });
        for n in [2, 3, 5, 8] {
            let ap = build_adaptive(&spec, n, Exec::Parallel).unwrap();
            assert!(!ap.part2.is_empty());
            check_tile_geometry(&ap, &Block::unit_box(2)).unwrap();
            assert_eq!(ap.partition.len(), adaptive_cell_count(&spec, n, Exec::Parallel).unwrap());
        }
    }
}
