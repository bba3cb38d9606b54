//! Axis-aligned blocks, their affine normalization, and block partitions.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Closed box `prod [lo_i, hi_i]` with `lo_i < hi_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Block {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.is_empty() {
            return Err(Error::DegenerateBlock("zero-dimensional block".into()));
        }
        for i in 0..lo.len() {
            if !(lo[i] < hi[i]) || !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(Error::DegenerateBlock(format!("axis {i}: lo = {} is not below hi = {}", lo[i], hi[i])));
            }
        }
        Ok(Block { lo, hi })
    }

    /// The canonical block `[-1/2, 1/2]^d`.
    pub fn unit_cube(d: usize) -> Self {
        Block { lo: vec![-0.5; d], hi: vec![0.5; d] }
    }

    /// `[0, 1]^d`.
    pub fn unit_box(d: usize) -> Self {
        Block { lo: vec![0.0; d], hi: vec![1.0; d] }
    }

    /// Block of the given widths centred at the origin.
    pub fn centered(widths: &[f64]) -> Result<Self> {
        Block::new(widths.iter().map(|w| -0.5 * w).collect(), widths.iter().map(|w| 0.5 * w).collect())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    /// Euclidean length of the diagonal.
    pub fn diam(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    /// Degeneracy `diam^d / volume`, minimal (`d^{d/2}`) for cubes.
    pub fn rho(&self) -> f64 {
        self.diam().powi(self.dim() as i32) / self.volume()
    }

    pub fn scaled(&self, c: f64) -> Result<Block> {
        Block::new(self.lo.iter().map(|v| v * c).collect(), self.hi.iter().map(|v| v * c).collect())
    }

    pub fn translated(&self, by: &[f64]) -> Result<Block> {
        Block::new(
            self.lo.iter().zip(by).map(|(v, s)| v + s).collect(),
            self.hi.iter().zip(by).map(|(v, s)| v + s).collect(),
        )
    }

    pub fn contains_point(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= a - tol && *v <= b + tol)
    }

    pub fn contains_block(&self, other: &Block, tol: f64) -> bool {
        (0..self.dim()).all(|i| other.lo[i] >= self.lo[i] - tol && other.hi[i] <= self.hi[i] + tol)
    }
}

/// `phi(u) = center + scales * u`, mapping `[-1/2, 1/2]^d` onto a block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMap {
    pub center: Vec<f64>,
    pub scales: Vec<f64>,
}

impl BlockMap {
    pub fn normalize(r: &Block) -> Self {
        BlockMap { center: r.center(), scales: r.widths() }
    }

    pub fn forward(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.center.iter().zip(&self.scales)).map(|(u, (c, s))| c + s * u).collect()
    }

    pub fn forward_into(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..u.len() {
            out[i] = self.center[i] + self.scales[i] * u[i];
        }
    }

    pub fn inverse(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.center.iter().zip(&self.scales)).map(|(x, (c, s))| (x - c) / s).collect()
    }

    pub fn image(&self) -> Block {
        Block {
            lo: self.center.iter().zip(&self.scales).map(|(c, s)| c - 0.5 * s).collect(),
            hi: self.center.iter().zip(&self.scales).map(|(c, s)| c + 0.5 * s).collect(),
        }
    }

    pub fn det(&self) -> f64 {
        self.scales.iter().product()
    }
}

/// Finite cover of a domain block by blocks with null-measure overlaps.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    domain: Block,
    cells: Vec<Block>,
}

const VOLUME_RTOL: f64 = 1e-10;
const CONTAIN_TOL: f64 = 1e-12;
const EMPTY_RTOL: f64 = 1e-14;

impl BlockPartition {
    /// Validates volume and containment; cells of negligible volume are dropped.
    pub fn new(domain: Block, cells: Vec<Block>) -> Result<Self> {
        let dvol = domain.volume();
        let cells: Vec<Block> = cells.into_iter().filter(|c| c.volume() >= EMPTY_RTOL * dvol).collect();
        if cells.is_empty() {
            return Err(Error::InvalidPartition("no cells".into()));
        }
        for (i, c) in cells.iter().enumerate() {
            if c.dim() != domain.dim() {
                return Err(Error::DimensionMismatch { expected: domain.dim(), got: c.dim() });
            }
            if !domain.contains_block(c, CONTAIN_TOL) {
                return Err(Error::InvalidPartition(format!("cell {i} leaves the domain")));
            }
        }
        let total = crate::exec::kahan_sum(cells.iter().map(Block::volume));
        if ((total - dvol) / dvol).abs() > VOLUME_RTOL {
            return Err(Error::InvalidPartition(format!("cell volumes sum to {total:e}, domain volume is {dvol:e}")));
        }
        let p = BlockPartition { domain, cells };
        if cfg!(debug_assertions) {
            p.check_overlaps()?;
        }
        Ok(p)
    }

    /// Sweep along axis 0; any pair overlapping with positive length on every
    /// axis is rejected.
    pub fn check_overlaps(&self) -> Result<()> {
        let d = self.domain.dim();
        let scale = self.domain.diam();
        let tol = 1e-12 * scale;
        let mut order: Vec<usize> = (0..self.cells.len()).collect();
        order.sort_by(|&a, &b| self.cells[a].lo[0].total_cmp(&self.cells[b].lo[0]));
        for (pos, &i) in order.iter().enumerate() {
            let a = &self.cells[i];
            for &j in &order[pos + 1..] {
                let b = &self.cells[j];
                if b.lo[0] >= a.hi[0] - tol {
                    break;
                }
                let overlaps = (0..d).all(|ax| a.hi[ax].min(b.hi[ax]) - a.lo[ax].max(b.lo[ax]) > tol);
                if overlaps {
                    return Err(Error::InvalidPartition(format!("cells {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> &Block {
        &self.domain
    }

    pub fn cells(&self) -> &[Block] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn max_diam(&self) -> f64 {
        self.cells.iter().map(Block::diam).fold(0.0, f64::max)
    }

    /// Writes `cell_id,lo_1..lo_d,hi_1..hi_d` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.domain.dim();
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["cell_id".to_string()];
        header.extend((1..=d).map(|i| format!("lo_{i}")));
        header.extend((1..=d).map(|i| format!("hi_{i}")));
        wr.write_record(&header).map_err(csv_err)?;
        for (id, c) in self.cells.iter().enumerate() {
            let mut row = vec![id.to_string()];
            row.extend(c.lo.iter().chain(&c.hi).map(|v| fmt_num(*v)));
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads cells back from the CSV dump format.
    pub fn read_csv<R: Read>(r: R) -> Result<Vec<Block>> {
        let mut rd = csv::Reader::from_reader(r);
        let width = rd.headers().map_err(csv_err)?.len();
        if width < 3 || (width - 1) % 2 != 0 {
            return Err(Error::Parse(format!("unexpected column count {width}")));
        }
        let d = (width - 1) / 2;
        let mut out = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}"))))
                .collect::<Result<_>>()?;
            out.push(Block::new(vals[..d].to_vec(), vals[d..].to_vec())?);
        }
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Scientific notation with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `sup_N N^{1/d} max diam` over a sequence indexed by `N = 1, 2, ...`.
pub fn admissibility_stat(seq: &[BlockPartition]) -> Result<f64> {
    let pairs: Vec<(usize, &BlockPartition)> = seq.iter().enumerate().map(|(i, p)| (i + 1, p)).collect();
    admissibility_stat_budgets(&pairs)
}

/// Same statistic for partitions tagged with explicit budgets.
pub fn admissibility_stat_budgets(seq: &[(usize, &BlockPartition)]) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for &(n, p) in seq {
        if p.len() > n {
            return Err(Error::TooManyCells { n, cells: p.len() });
        }
        let d = p.domain().dim() as f64;
        sup = sup.max((n as f64).powf(1.0 / d) * p.max_diam());
    }
    Ok(sup)
}
