//! Bernoulli observation masks and the projection operators built on them.

use std::io::{BufRead, Write};

use crate::error::{dim, param, Error, Result};
use crate::matrix::{dot, DenseMatrix, FactorPair};
use crate::rng::cell_uniform;

/// Observed cell set with row-major (CSR) and column (CSC permutation)
/// indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    d1: usize,
    d2: usize,
    p: f64,
    seed: u64,
    /// Column index of every observed cell, row-major order.
    cols: Vec<usize>,
    /// `row_ptr[i]..row_ptr[i + 1]` are the cells of row `i`.
    row_ptr: Vec<usize>,
    /// `col_ptr[j]..col_ptr[j + 1]` index into `col_cells`.
    col_ptr: Vec<usize>,
    /// Positions into the row-major cell list, grouped by column.
    col_cells: Vec<usize>,
}

impl ObservationMask {
    /// Builds a mask from an explicit coordinate list. Duplicates and
    /// out-of-range coordinates are rejected.
    pub fn from_cells(
        d1: usize,
        d2: usize,
        p: f64,
        seed: u64,
        cells: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        check_rate(p)?;
        let mut cells: Vec<(usize, usize)> = cells.into_iter().collect();
        if let Some(&(i, j)) = cells.iter().find(|&&(i, j)| i >= d1 || j >= d2) {
            return param(format!("cell ({i}, {j}) outside a {d1}x{d2} matrix"));
        }
        cells.sort_unstable();
        if let Some(w) = cells.windows(2).find(|w| w[0] == w[1]) {
            return param(format!("duplicate cell {:?}", w[0]));
        }
        Ok(Self::from_sorted(d1, d2, p, seed, &cells))
    }

    fn from_sorted(d1: usize, d2: usize, p: f64, seed: u64, cells: &[(usize, usize)]) -> Self {
        let mut row_ptr = vec![0usize; d1 + 1];
        let mut col_counts = vec![0usize; d2 + 1];
        for &(i, j) in cells {
            row_ptr[i + 1] += 1;
            col_counts[j + 1] += 1;
        }
        for i in 0..d1 {
            row_ptr[i + 1] += row_ptr[i];
        }
        for j in 0..d2 {
            col_counts[j + 1] += col_counts[j];
        }
        let col_ptr = col_counts.clone();
        let mut fill = col_counts;
        let mut col_cells = vec![0usize; cells.len()];
        for (pos, &(_, j)) in cells.iter().enumerate() {
            col_cells[fill[j]] = pos;
            fill[j] += 1;
        }
        Self {
            d1,
            d2,
            p,
            seed,
            cols: cells.iter().map(|&(_, j)| j).collect(),
            row_ptr,
            col_ptr,
            col_cells,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// Column indices of the observed cells in row `i`.
    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Row indices of the observed cells in column `j`, ascending.
    pub fn col_rows(&self, j: usize) -> Vec<usize> {
        self.col_cells[self.col_ptr[j]..self.col_ptr[j + 1]]
            .iter()
            .map(|&pos| self.row_of(pos))
            .collect()
    }

    fn row_of(&self, pos: usize) -> usize {
        // partition_point gives the first row whose end exceeds pos
        self.row_ptr[1..].partition_point(|&end| end <= pos)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.d1 && j < self.d2 && self.row_cols(i).binary_search(&j).is_ok()
    }

    /// All observed cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.d1).flat_map(move |i| self.row_cols(i).iter().map(move |&j| (i, j)))
    }

    /// Copy of this mask with a different nominal sampling rate.
    pub fn with_rate(&self, p: f64) -> Result<Self> {
        check_rate(p)?;
        Ok(Self { p, ..self.clone() })
    }

    /// Checks that the row and column indices agree with the cell list.
    pub fn is_consistent(&self) -> bool {
        let cells: Vec<_> = self.cells().collect();
        let rebuilt = Self::from_sorted(self.d1, self.d2, self.p, self.seed, &cells);
        rebuilt == *self
            && cells.windows(2).all(|w| w[0] < w[1])
            && cells.iter().all(|&(i, j)| i < self.d1 && j < self.d2)
    }

    /// Writes the coordinate-list text format: a `d1 d2 p seed` header, then
    /// one `i j` line per observed cell.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {} {} {}", self.d1, self.d2, self.p, self.seed)?;
        for (i, j) in self.cells() {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mask file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("bad mask header `{header}`")));
        }
        let bad = |what: &str| Error::Parse(format!("bad {what} in mask header `{header}`"));
        let d1: usize = fields[0].parse().map_err(|_| bad("d1"))?;
        let d2: usize = fields[1].parse().map_err(|_| bad("d2"))?;
        let p: f64 = fields[2].parse().map_err(|_| bad("p"))?;
        let seed: u64 = fields[3].parse().map_err(|_| bad("seed"))?;
        let mut cells = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad coordinate on line {}", n + 2)))
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse(format!("extra fields on line {}", n + 2)));
            }
            cells.push((i, j));
        }
        Self::from_cells(d1, d2, p, seed, cells)
    }
}

fn check_rate(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return param(format!("sampling rate p = {p} outside (0, 1]"));
    }
    Ok(())
}

/// Draws each cell independently with probability `p`, keyed by
/// `(seed, i, j)` so the result does not depend on traversal order.
pub fn sample_mask(d1: usize, d2: usize, p: f64, seed: u64) -> Result<ObservationMask> {
    check_rate(p)?;
    let mut cells = Vec::with_capacity(((d1 * d2) as f64 * p * 1.1) as usize + 16);
    for i in 0..d1 {
        for j in 0..d2 {
            if cell_uniform(seed, i, j) < p {
                cells.push((i, j));
            }
        }
    }
    Ok(ObservationMask::from_sorted(d1, d2, p, seed, &cells))
}

fn check_dims(m: &DenseMatrix, mask: &ObservationMask) -> Result<()> {
    if m.shape() != mask.dims() {
        return dim(format!(
            "matrix is {:?} but mask is {:?}",
            m.shape(),
            mask.dims()
        ));
    }
    Ok(())
}

/// Keeps the observed entries and zeros the rest.
pub fn project(m: &DenseMatrix, mask: &ObservationMask) -> Result<DenseMatrix> {
    check_dims(m, mask)?;
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    for (i, j) in mask.cells() {
        out[(i, j)] = m[(i, j)];
    }
    Ok(out)
}

/// `p^{-1} P_Omega(X Y^T - M*)`, evaluating `X Y^T` only on observed cells.
pub fn scaled_residual(
    f: &FactorPair,
    m_star: &DenseMatrix,
    mask: &ObservationMask,
) -> Result<DenseMatrix> {
    check_dims(m_star, mask)?;
    if (f.d1(), f.d2()) != mask.dims() {
        return dim("factor pair does not match the mask");
    }
    let inv_p = 1.0 / mask.p();
    let mut out = DenseMatrix::zeros(f.d1(), f.d2());
    for (i, j) in mask.cells() {
        out[(i, j)] = (dot(f.x.row(i), f.y.row(j)) - m_star[(i, j)]) * inv_p;
    }
    Ok(out)
}

/// Which row or column a leave-one-out problem treats as fully observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LooAxis {
    Row(usize),
    Column(usize),
}

/// Leave-one-out index `l` in `1..=d1 + d2`: rows first, then columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LooSelector {
    l: usize,
    d1: usize,
    d2: usize,
}

impl LooSelector {
    pub fn new(l: usize, d1: usize, d2: usize) -> Result<Self> {
        if l == 0 || l > d1 + d2 {
            return param(format!("leave-one-out index {l} outside 1..={}", d1 + d2));
        }
        Ok(Self { l, d1, d2 })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn axis(&self) -> LooAxis {
        if self.l <= self.d1 {
            LooAxis::Row(self.l - 1)
        } else {
            LooAxis::Column(self.l - self.d1 - 1)
        }
    }

    /// Zero-based row of the stacked `(d1 + d2) x r` factor this selector
    /// refers to.
    pub fn stacked_row(&self) -> usize {
        self.l - 1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    /// `n_rows` rows and `n_cols` columns, evenly spaced.
    pub fn evenly_spaced(d1: usize, d2: usize, n_rows: usize, n_cols: usize) -> Vec<Self> {
        let pick = |n: usize, len: usize| -> Vec<usize> {
            let n = n.min(len);
            let mut v: Vec<usize> = (0..n).map(|k| k * len / n).collect();
            v.dedup();
            v
        };
        pick(n_rows, d1)
            .into_iter()
            .map(|i| Self { l: i + 1, d1, d2 })
            .chain(pick(n_cols, d2).into_iter().map(|j| Self {
                l: d1 + j + 1,
                d1,
                d2,
            }))
            .collect()
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if (self.d1, self.d2) != (rows, cols) {
            return dim(format!(
                "selector built for {:?}, matrix is {:?}",
                (self.d1, self.d2),
                (rows, cols)
            ));
        }
        Ok(())
    }
}

/// `(P_{Omega without target} + p P_target)(m)`: the target row (column)
/// is kept in full and scaled by `p`, every other line is projected onto the
/// mask. `loo_project / p` is the leave-one-out sampling operator.
pub fn loo_project(
    m: &DenseMatrix,
    mask: &ObservationMask,
    sel: LooSelector,
    p: f64,
) -> Result<DenseMatrix> {
    check_dims(m, mask)?;
    sel.check(m.rows(), m.cols())?;
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    for (i, j) in mask.cells() {
        out[(i, j)] = m[(i, j)];
    }
    match sel.axis() {
        LooAxis::Row(t) => {
            for j in 0..m.cols() {
                out[(t, j)] = p * m[(t, j)];
            }
        }
        LooAxis::Column(t) => {
            for i in 0..m.rows() {
                out[(i, t)] = p * m[(i, t)];
            }
        }
    }
    Ok(out)
}

/// Sparse weighted sampling of a target matrix: a row-major cell list with
/// one weight and one target value per cell.
///
/// The data term is `0.5 * sum_c w_c (x_i . y_j - t_c)^2`. Plain sampling
/// uses `w = 1/p` on the mask; the leave-one-out operator uses `w = 1` on the
/// fully observed target line.
#[derive(Debug, Clone)]
pub(crate) struct WeightedCells {
    pub d1: usize,
    pub d2: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
}

impl WeightedCells {
    pub fn sampled(m_star: &DenseMatrix, mask: &ObservationMask) -> Result<Self> {
        check_dims(m_star, mask)?;
        let w = 1.0 / mask.p();
        let cols = mask.cols.clone();
        let targets = mask.cells().map(|(i, j)| m_star[(i, j)]).collect();
        Ok(Self {
            d1: mask.d1,
            d2: mask.d2,
            row_ptr: mask.row_ptr.clone(),
            weights: vec![w; cols.len()],
            cols,
            targets,
        })
    }

    pub fn leave_one_out(
        m_star: &DenseMatrix,
        mask: &ObservationMask,
        sel: LooSelector,
    ) -> Result<Self> {
        check_dims(m_star, mask)?;
        sel.check(m_star.rows(), m_star.cols())?;
        let w = 1.0 / mask.p();
        let (d1, d2) = mask.dims();
        let mut row_ptr = Vec::with_capacity(d1 + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for i in 0..d1 {
            match sel.axis() {
                LooAxis::Row(t) if t == i => {
                    cols.extend(0..d2);
                    weights.extend(std::iter::repeat_n(1.0, d2));
                }
                LooAxis::Row(_) => {
                    cols.extend_from_slice(mask.row_cols(i));
                    weights.extend(std::iter::repeat_n(w, mask.row_cols(i).len()));
                }
                LooAxis::Column(t) => {
                    let row = mask.row_cols(i);
                    let split = row.partition_point(|&j| j < t);
                    for &j in &row[..split] {
                        cols.push(j);
                        weights.push(w);
                    }
                    cols.push(t);
                    weights.push(1.0);
                    for &j in row[split..].iter().filter(|&&j| j != t) {
                        cols.push(j);
                        weights.push(w);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        let targets = (0..d1)
            .flat_map(|i| (row_ptr[i]..row_ptr[i + 1]).map(move |c| (i, c)))
            .map(|(i, c)| m_star[(i, cols[c])])
            .collect();
        Ok(Self {
            d1,
            d2,
            row_ptr,
            cols,
            weights,
            targets,
        })
    }

    /// Data term and its gradient at `(x, y)` in one pass over the cells.
    pub fn value_and_gradient(&self, f: &FactorPair) -> (f64, FactorPair) {
        let r = f.rank();
        let mut gx = DenseMatrix::zeros(self.d1, r);
        let mut gy = DenseMatrix::zeros(self.d2, r);
        let mut value = 0.0;
        for i in 0..self.d1 {
            let xi = f.x.row(i);
            let gxi = gx.row_mut(i);
            for c in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[c];
                let yj = f.y.row(j);
                let diff = dot(xi, yj) - self.targets[c];
                let w = self.weights[c];
                value += 0.5 * w * diff * diff;
                let res = w * diff;
                for (g, &v) in gxi.iter_mut().zip(yj) {
                    *g += res * v;
                }
                for (g, &v) in gy.row_mut(j).iter_mut().zip(xi) {
                    *g += res * v;
                }
            }
        }
        (value, FactorPair { x: gx, y: gy })
    }

    pub fn value(&self, f: &FactorPair) -> f64 {
        let mut value = 0.0;
        for i in 0..self.d1 {
            let xi = f.x.row(i);
            for c in self.row_ptr[i]..self.row_ptr[i + 1] {
                let diff = dot(xi, f.y.row(self.cols[c])) - self.targets[c];
                value += 0.5 * self.weights[c] * diff * diff;
            }
        }
        value
    }

    /// Dense matrix holding `w_c * t_c` at each cell.
    #[cfg(test)]
    pub fn weighted_targets(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.d1, self.d2);
        for i in 0..self.d1 {
            for c in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[(i, self.cols[c])] = self.targets[c] * self.weights[c];
            }
        }
        out
    }
}
