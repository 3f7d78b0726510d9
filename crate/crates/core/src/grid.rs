//! Dyadic grids and sparse piecewise-constant functions on them.
//!
//! A [`GridFunction`] stores one complex value per level-`J` cell
//! `2^{-J}(mu + [0,1)^d)`; absent cells are zero. Everything outside the
//! grid box is treated as zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const MAX_CELLS: u128 = 1u128 << 48;

/// Integrability exponent `p` in `(0, inf]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LebesgueExponent {
    Finite(f64),
    Infinite,
}

impl LebesgueExponent {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            Ok(LebesgueExponent::Infinite)
        } else if p.is_finite() && p > 0.0 {
            Ok(LebesgueExponent::Finite(p))
        } else {
            Err(Error::InvalidArgument(format!("exponent must be positive, got {p}")))
        }
    }

    /// `1/p`, zero for `p = inf`.
    pub fn recip(self) -> f64 {
        match self {
            LebesgueExponent::Finite(p) => 1.0 / p,
            LebesgueExponent::Infinite => 0.0,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            LebesgueExponent::Finite(p) => p,
            LebesgueExponent::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, LebesgueExponent::Infinite)
    }

    /// Parses `inf`, a decimal, or a fraction such as `2/3`.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(LebesgueExponent::Infinite);
        }
        LebesgueExponent::new(parse_real(t)?)
    }
}

impl std::fmt::Display for LebesgueExponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LebesgueExponent::Finite(p) => write!(f, "{p}"),
            LebesgueExponent::Infinite => write!(f, "inf"),
        }
    }
}

/// Parses a real number written as a decimal or as `a/b`.
pub fn parse_real(s: &str) -> Result<f64> {
    let t = s.trim();
    if let Some((a, b)) = t.split_once('/') {
        let a: f64 = a.trim().parse().map_err(|_| Error::Parse(format!("bad number {t}")))?;
        let b: f64 = b.trim().parse().map_err(|_| Error::Parse(format!("bad number {t}")))?;
        return Ok(a / b);
    }
    t.parse().map_err(|_| Error::Parse(format!("bad number {t}")))
}

/// Accumulates `sum |v|^p` (or the max for `p = inf`).
#[derive(Clone, Copy, Debug)]
pub struct LpAccumulator {
    p: LebesgueExponent,
    acc: f64,
}

impl LpAccumulator {
    pub fn new(p: LebesgueExponent) -> Self {
        LpAccumulator { p, acc: 0.0 }
    }

    #[inline]
    pub fn push(&mut self, v: C64) {
        let a = v.norm();
        match self.p {
            LebesgueExponent::Infinite => {
                if a > self.acc {
                    self.acc = a
                }
            }
            LebesgueExponent::Finite(p) => {
                if p == 1.0 {
                    self.acc += a
                } else if p == 2.0 {
                    self.acc += a * a
                } else if a > 0.0 {
                    self.acc += a.powf(p)
                }
            }
        }
    }

    pub fn merge(&mut self, other: &LpAccumulator) {
        match self.p {
            LebesgueExponent::Infinite => self.acc = self.acc.max(other.acc),
            LebesgueExponent::Finite(_) => self.acc += other.acc,
        }
    }

    /// Raw accumulated sum (for finite `p`) or max.
    pub fn raw(&self) -> f64 {
        self.acc
    }

    /// The norm for cells of measure `cell_measure`.
    pub fn finish(&self, cell_measure: f64) -> f64 {
        match self.p {
            LebesgueExponent::Infinite => self.acc,
            LebesgueExponent::Finite(p) => (self.acc * cell_measure).powf(1.0 / p),
        }
    }
}

/// A box `prod [lo_i, hi_i)` at unit scale, subdivided into cells of side `2^{-level}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DyadicGrid {
    d: usize,
    level: u32,
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl DyadicGrid {
    pub fn new(d: usize, level: u32, lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        if lo.len() != d || hi.len() != d {
            return Err(Error::InvalidGrid("corner length differs from dimension".into()));
        }
        if level > 62 {
            return Err(Error::InvalidGrid(format!("level {level} too large")));
        }
        let mut total: u128 = 1;
        for i in 0..d {
            if lo[i] >= hi[i] {
                return Err(Error::InvalidGrid(format!("empty extent on axis {i}")));
            }
            let n = ((hi[i] as i128 - lo[i] as i128) as u128) << level;
            total = total.saturating_mul(n);
            if total > MAX_CELLS {
                return Err(Error::InvalidGrid("more than 2^48 cells".into()));
            }
        }
        Ok(DyadicGrid { d, level, lo, hi })
    }

    pub fn unit_cube(d: usize, level: u32) -> Result<Self> {
        DyadicGrid::new(d, level, vec![0; d], vec![1; d])
    }

    /// One-dimensional grid on `[lo, hi)`.
    pub fn interval(level: u32, lo: i64, hi: i64) -> Result<Self> {
        DyadicGrid::new(1, level, vec![lo], vec![hi])
    }

    /// The cube `[lo, hi)^d`.
    pub fn cube(d: usize, level: u32, lo: i64, hi: i64) -> Result<Self> {
        DyadicGrid::new(d, level, vec![lo; d], vec![hi; d])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    pub fn cells_per_axis(&self, axis: usize) -> u64 {
        ((self.hi[axis] - self.lo[axis]) as u64) << self.level
    }

    pub fn cell_count(&self) -> u64 {
        (0..self.d).map(|i| self.cells_per_axis(i)).product()
    }

    pub fn cell_width(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn cell_measure(&self) -> f64 {
        (-((self.level as usize * self.d) as f64)).exp2()
    }

    /// First cell index along `axis`.
    pub fn first_cell(&self, axis: usize) -> i64 {
        self.lo[axis] << self.level
    }

    /// One past the last cell index along `axis`.
    pub fn end_cell(&self, axis: usize) -> i64 {
        self.hi[axis] << self.level
    }

    pub fn contains_cell(&self, mu: &[i64]) -> bool {
        mu.len() == self.d
            && (0..self.d).all(|i| mu[i] >= self.first_cell(i) && mu[i] < self.end_cell(i))
    }

    pub fn key(&self, mu: &[i64]) -> Option<u64> {
        if !self.contains_cell(mu) {
            return None;
        }
        let mut k: u64 = 0;
        for i in 0..self.d {
            k = k * self.cells_per_axis(i) + (mu[i] - self.first_cell(i)) as u64;
        }
        Some(k)
    }

    pub fn cell(&self, key: u64) -> Vec<i64> {
        let mut mu = vec![0i64; self.d];
        let mut k = key;
        for i in (0..self.d).rev() {
            let n = self.cells_per_axis(i);
            mu[i] = (k % n) as i64 + self.first_cell(i);
            k /= n;
        }
        mu
    }

    /// Same box at another level.
    pub fn with_level(&self, level: u32) -> Result<Self> {
        DyadicGrid::new(self.d, level, self.lo.clone(), self.hi.clone())
    }

    /// Smallest box containing both; the level is taken from `self`.
    pub fn hull(&self, other: &DyadicGrid) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::InvalidGrid("dimension mismatch".into()));
        }
        let lo = (0..self.d).map(|i| self.lo[i].min(other.lo[i])).collect();
        let hi = (0..self.d).map(|i| self.hi[i].max(other.hi[i])).collect();
        DyadicGrid::new(self.d, self.level, lo, hi)
    }

    /// Box enlarged by whole units: `lo - below`, `hi + above` on each axis.
    pub fn enlarged(&self, below: &[i64], above: &[i64]) -> Result<Self> {
        let lo = (0..self.d).map(|i| self.lo[i] - below[i]).collect();
        let hi = (0..self.d).map(|i| self.hi[i] + above[i]).collect();
        DyadicGrid::new(self.d, self.level, lo, hi)
    }

    /// Smallest integer box at this level containing the cell ranges `[a_i, b_i)`.
    pub fn covering(d: usize, level: u32, a: &[i64], b: &[i64]) -> Result<Self> {
        let s = 1i64 << level;
        let lo: Vec<i64> = (0..d).map(|i| a[i].div_euclid(s)).collect();
        let hi: Vec<i64> = (0..d)
            .map(|i| {
                let h = (b[i] + s - 1).div_euclid(s);
                h.max(lo[i] + 1)
            })
            .collect();
        DyadicGrid::new(d, level, lo, hi)
    }
}

/// Dense one-dimensional segment of cells `start .. start + data.len()` at `level`.
#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub level: u32,
    pub start: i64,
    pub data: Vec<C64>,
}

impl Line {
    pub fn new(level: u32, start: i64, data: Vec<C64>) -> Self {
        Line { level, start, data }
    }

    pub fn end(&self) -> i64 {
        self.start + self.data.len() as i64
    }

    pub fn get(&self, i: i64) -> C64 {
        if i < self.start || i >= self.end() {
            C64::new(0.0, 0.0)
        } else {
            self.data[(i - self.start) as usize]
        }
    }

    pub fn lp_norm(&self, p: LebesgueExponent) -> f64 {
        let mut acc = LpAccumulator::new(p);
        for &v in &self.data {
            acc.push(v);
        }
        acc.finish((-(self.level as f64)).exp2())
    }

    /// Drops leading and trailing exact zeros.
    pub fn trimmed(mut self) -> Self {
        let zero = C64::new(0.0, 0.0);
        let first = self.data.iter().position(|v| *v != zero);
        match first {
            None => Line::new(self.level, self.start, Vec::new()),
            Some(a) => {
                let b = self.data.iter().rposition(|v| *v != zero).unwrap();
                self.data.truncate(b + 1);
                self.data.drain(..a);
                self.start += a as i64;
                self
            }
        }
    }

    /// Piecewise-constant refinement to a finer level.
    pub fn refined(&self, level: u32) -> Line {
        assert!(level >= self.level);
        let r = 1usize << (level - self.level);
        let mut data = Vec::with_capacity(self.data.len() * r);
        for &v in &self.data {
            data.extend(std::iter::repeat_n(v, r));
        }
        Line::new(level, self.start * r as i64, data)
    }
}

/// Sparse piecewise-constant function on a [`DyadicGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: DyadicGrid,
    keys: Vec<u64>,
    vals: Vec<C64>,
}

fn check_finite(v: C64) -> Result<()> {
    if v.re.is_finite() && v.im.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument("non-finite value".into()))
    }
}

impl GridFunction {
    pub fn zero(grid: DyadicGrid) -> Self {
        GridFunction { grid, keys: Vec::new(), vals: Vec::new() }
    }

    /// Builds from (key, value) pairs; duplicate keys are summed in input order.
    pub(crate) fn from_keyed(grid: DyadicGrid, mut entries: Vec<(u64, C64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut keys = Vec::with_capacity(entries.len());
        let mut vals: Vec<C64> = Vec::with_capacity(entries.len());
        for (k, v) in entries {
            if keys.last() == Some(&k) {
                *vals.last_mut().unwrap() += v;
            } else {
                keys.push(k);
                vals.push(v);
            }
        }
        let zero = C64::new(0.0, 0.0);
        let mut out = GridFunction { grid, keys: Vec::new(), vals: Vec::new() };
        for (k, v) in keys.into_iter().zip(vals) {
            if v != zero {
                out.keys.push(k);
                out.vals.push(v);
            }
        }
        out
    }

    /// Builds from cell multi-indices; duplicates are summed, zeros dropped.
    pub fn from_cells<I>(grid: DyadicGrid, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<i64>, C64)>,
    {
        let mut entries = Vec::new();
        for (mu, v) in cells {
            check_finite(v)?;
            let k = grid
                .key(&mu)
                .ok_or_else(|| Error::InvalidArgument(format!("cell {mu:?} outside grid")))?;
            entries.push((k, v));
        }
        Ok(GridFunction::from_keyed(grid, entries))
    }

    /// Real-valued convenience constructor.
    pub fn from_real_cells<I>(grid: DyadicGrid, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<i64>, f64)>,
    {
        GridFunction::from_cells(grid, cells.into_iter().map(|(m, v)| (m, C64::new(v, 0.0))))
    }

    /// Midpoint sampling of `f` on every cell of the grid box.
    pub fn sample<F>(grid: DyadicGrid, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> C64,
    {
        let h = grid.cell_width();
        let n = grid.cell_count();
        let mut entries = Vec::new();
        let mut x = vec![0.0; grid.dim()];
        for key in 0..n {
            let mu = grid.cell(key);
            for i in 0..grid.dim() {
                x[i] = (mu[i] as f64 + 0.5) * h;
            }
            let v = f(&x);
            check_finite(v)?;
            entries.push((key, v));
        }
        Ok(GridFunction::from_keyed(grid, entries))
    }

    /// One-dimensional function from a dense line, on the smallest covering box.
    pub fn from_line(line: &Line) -> Result<Self> {
        let end = line.end().max(line.start + 1);
        let grid = DyadicGrid::covering(1, line.level, &[line.start], &[end])?;
        let first = grid.first_cell(0);
        let mut entries = Vec::with_capacity(line.data.len());
        for (i, &v) in line.data.iter().enumerate() {
            check_finite(v)?;
            entries.push(((line.start + i as i64 - first) as u64, v));
        }
        Ok(GridFunction::from_keyed(grid, entries))
    }

    /// Dense line covering the support (d = 1 only).
    pub fn to_line(&self) -> Line {
        assert_eq!(self.grid.dim(), 1, "to_line needs d = 1");
        let first = self.grid.first_cell(0);
        if self.keys.is_empty() {
            return Line::new(self.level(), first, Vec::new());
        }
        let a = self.keys[0];
        let b = *self.keys.last().unwrap();
        let mut data = vec![C64::new(0.0, 0.0); (b - a + 1) as usize];
        for (k, v) in self.keys.iter().zip(&self.vals) {
            data[(k - a) as usize] = *v;
        }
        Line::new(self.level(), first + a as i64, data)
    }

    pub fn grid(&self) -> &DyadicGrid {
        &self.grid
    }

    pub fn level(&self) -> u32 {
        self.grid.level()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Number of stored (nonzero) cells.
    pub fn nnz(&self) -> usize {
        self.keys.len()
    }

    pub fn is_zero(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn values(&self) -> &[C64] {
        &self.vals
    }

    /// Cells in mu-lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<i64>, C64)> + '_ {
        self.keys.iter().zip(&self.vals).map(move |(k, v)| (self.grid.cell(*k), *v))
    }

    pub fn get(&self, mu: &[i64]) -> C64 {
        match self.grid.key(mu) {
            None => C64::new(0.0, 0.0),
            Some(k) => match self.keys.binary_search(&k) {
                Ok(i) => self.vals[i],
                Err(_) => C64::new(0.0, 0.0),
            },
        }
    }

    /// Value at a point (zero outside the box).
    pub fn eval(&self, x: &[f64]) -> C64 {
        let s = (self.level() as f64).exp2();
        let mu: Vec<i64> = x.iter().map(|&t| (t * s).floor() as i64).collect();
        self.get(&mu)
    }

    pub fn map_values<F: Fn(C64) -> C64>(&self, f: F) -> Result<Self> {
        let mut entries = Vec::with_capacity(self.keys.len());
        for (k, v) in self.keys.iter().zip(&self.vals) {
            let w = f(*v);
            check_finite(w)?;
            entries.push((*k, w));
        }
        Ok(GridFunction::from_keyed(self.grid.clone(), entries))
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map_values(|v| v * c).expect("scaling by a finite constant")
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    /// Same function re-embedded in `grid` (same dimension, level >= own level).
    pub fn embed(&self, grid: &DyadicGrid) -> Result<Self> {
        if grid.dim() != self.dim() {
            return Err(Error::InvalidGrid("dimension mismatch".into()));
        }
        if grid.level() < self.level() {
            return Err(Error::LevelMismatch("cannot embed into a coarser grid".into()));
        }
        let f = self.at_level(grid.level());
        let mut entries = Vec::with_capacity(f.keys.len());
        for (mu, v) in f.iter() {
            let k = grid.key(&mu).ok_or_else(|| {
                Error::InvalidGrid(format!("cell {mu:?} outside target grid"))
            })?;
            entries.push((k, v));
        }
        Ok(GridFunction::from_keyed(grid.clone(), entries))
    }

    /// Piecewise-constant refinement to `level >= self.level()`.
    pub fn at_level(&self, level: u32) -> Self {
        assert!(level >= self.level(), "at_level cannot coarsen; use expectation");
        if level == self.level() {
            return self.clone();
        }
        let grid = self.grid.with_level(level).expect("refined grid");
        let shift = level - self.level();
        let r = 1i64 << shift;
        let d = self.dim();
        let children = 1usize << (shift as usize * d);
        let mut entries = Vec::with_capacity(self.keys.len() * children);
        let mut child = vec![0i64; d];
        for (mu, v) in self.iter() {
            for c in 0..children {
                let mut rest = c;
                for i in (0..d).rev() {
                    child[i] = mu[i] * r + (rest as i64 & (r - 1));
                    rest >>= shift;
                }
                entries.push((grid.key(&child).unwrap(), v));
            }
        }
        GridFunction::from_keyed(grid, entries)
    }

    fn combine(&self, other: &GridFunction, sign: f64) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidGrid("dimension mismatch".into()));
        }
        let level = self.level().max(other.level());
        let grid = self.grid.with_level(level)?.hull(&other.grid)?;
        let a = self.embed(&grid)?;
        let b = other.embed(&grid)?;
        let mut entries: Vec<(u64, C64)> = a.keys.iter().copied().zip(a.vals.iter().copied()).collect();
        entries.extend(b.keys.iter().copied().zip(b.vals.iter().map(|v| v * sign)));
        Ok(GridFunction::from_keyed(grid, entries))
    }

    /// Pointwise sum on the hull of both boxes at the finer level.
    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.combine(other, -1.0)
    }

    /// Translation by `shift` cells: result(mu) = f(mu - shift).
    pub fn translate(&self, shift: &[i64]) -> Result<Self> {
        let d = self.dim();
        if shift.len() != d {
            return Err(Error::InvalidArgument("shift length differs from dimension".into()));
        }
        let a: Vec<i64> = (0..d).map(|i| self.grid.first_cell(i) + shift[i]).collect();
        let b: Vec<i64> = (0..d).map(|i| self.grid.end_cell(i) + shift[i]).collect();
        let grid = DyadicGrid::covering(d, self.level(), &a, &b)?;
        let mut entries = Vec::with_capacity(self.keys.len());
        for (mut mu, v) in self.iter() {
            for i in 0..d {
                mu[i] += shift[i];
            }
            entries.push((grid.key(&mu).unwrap(), v));
        }
        Ok(GridFunction::from_keyed(grid, entries))
    }

    /// Pointwise product (same dimension; common finer level).
    pub fn mul(&self, other: &GridFunction) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidGrid("dimension mismatch".into()));
        }
        let level = self.level().max(other.level());
        let a = self.at_level(level);
        let b = other.at_level(level);
        let cells: Vec<(Vec<i64>, C64)> = a
            .iter()
            .filter_map(|(mu, v)| {
                let w = b.get(&mu);
                if w == C64::new(0.0, 0.0) {
                    None
                } else {
                    Some((mu, v * w))
                }
            })
            .collect();
        GridFunction::from_cells(a.grid.clone(), cells)
    }

    pub fn lp_norm(&self, p: LebesgueExponent) -> f64 {
        let mut acc = LpAccumulator::new(p);
        for &v in &self.vals {
            acc.push(v);
        }
        acc.finish(self.grid.cell_measure())
    }

    /// `int f`, summed in mu-lexicographic order.
    pub fn integral(&self) -> C64 {
        let s: C64 = self.vals.iter().sum();
        s * self.grid.cell_measure()
    }

    /// `int f * monomial x^m` (exact for step functions).
    pub fn moment(&self, powers: &[u32]) -> C64 {
        let h = self.grid.cell_width();
        let mut s = C64::new(0.0, 0.0);
        for (mu, v) in self.iter() {
            let mut w = 1.0;
            for i in 0..self.dim() {
                let a = mu[i] as f64 * h;
                let b = a + h;
                let m = powers[i] as i32;
                w *= (b.powi(m + 1) - a.powi(m + 1)) / (m + 1) as f64;
            }
            s += v * w;
        }
        s
    }

    /// Maximum modulus of the difference, compared at the finer level.
    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        let diff = self.sub(other).expect("comparable functions");
        diff.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Inclusive-exclusive cell ranges of the support, per axis.
    pub fn support_cells(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        if self.keys.is_empty() {
            return None;
        }
        let d = self.dim();
        let mut a = vec![i64::MAX; d];
        let mut b = vec![i64::MIN; d];
        for (mu, _) in self.iter() {
            for i in 0..d {
                a[i] = a[i].min(mu[i]);
                b[i] = b[i].max(mu[i] + 1);
            }
        }
        Some((a, b))
    }

    /// Same function on the smallest integer box covering its support.
    pub fn shrink_to_support(&self) -> Self {
        match self.support_cells() {
            None => self.clone(),
            Some((a, b)) => {
                let grid = DyadicGrid::covering(self.dim(), self.level(), &a, &b).unwrap();
                let entries = self.iter().map(|(mu, v)| (grid.key(&mu).unwrap(), v)).collect();
                GridFunction::from_keyed(grid, entries)
            }
        }
    }

    /// Groups cells into lines parallel to `axis`; the map key is the cell
    /// index with the `axis` coordinate zeroed.
    pub fn lines_along(&self, axis: usize) -> BTreeMap<Vec<i64>, Vec<(i64, C64)>> {
        let mut out: BTreeMap<Vec<i64>, Vec<(i64, C64)>> = BTreeMap::new();
        for (mut mu, v) in self.iter() {
            let t = mu[axis];
            mu[axis] = 0;
            out.entry(mu).or_default().push((t, v));
        }
        for line in out.values_mut() {
            line.sort_by_key(|e| e.0);
        }
        out
    }

    /// Text serialization: header `d J lo... hi...`, then `mu... re im` per cell.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut s = String::new();
        write!(s, "{} {}", g.dim(), g.level()).unwrap();
        for v in g.lo() {
            write!(s, " {v}").unwrap();
        }
        for v in g.hi() {
            write!(s, " {v}").unwrap();
        }
        s.push('\n');
        for (mu, v) in self.iter() {
            for m in &mu {
                write!(s, "{m} ").unwrap();
            }
            writeln!(s, "{:.16e} {:.16e}", v.re, v.im).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))?;
        let h: Vec<i64> = header
            .split_whitespace()
            .map(|t| t.parse::<i64>().map_err(|_| Error::Parse(format!("bad header token {t}"))))
            .collect::<Result<_>>()?;
        if h.len() < 2 {
            return Err(Error::Parse("short header".into()));
        }
        let d = h[0] as usize;
        if h.len() != 2 + 2 * d {
            return Err(Error::Parse("header length does not match dimension".into()));
        }
        let grid = DyadicGrid::new(d, h[1] as u32, h[2..2 + d].to_vec(), h[2 + d..].to_vec())?;
        let mut cells = Vec::new();
        for line in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != d + 2 {
                return Err(Error::Parse(format!("bad cell line: {line}")));
            }
            let mu = t[..d]
                .iter()
                .map(|x| x.parse::<i64>().map_err(|_| Error::Parse(format!("bad index {x}"))))
                .collect::<Result<Vec<_>>>()?;
            let re: f64 = t[d].parse().map_err(|_| Error::Parse(format!("bad value {}", t[d])))?;
            let im: f64 =
                t[d + 1].parse().map_err(|_| Error::Parse(format!("bad value {}", t[d + 1])))?;
            cells.push((mu, C64::new(re, im)));
        }
        GridFunction::from_cells(grid, cells)
    }
}

/// `(sum_mu |f(mu)|^p 2^{-Jd})^{1/p}`, or the max modulus for `p = inf`.
pub fn lp_norm(f: &GridFunction, p: LebesgueExponent) -> f64 {
    f.lp_norm(p)
}

/// `g(x) = f(x + 2h e_axis) - 2 f(x + h e_axis) + f(x)` with zero extension.
///
/// `axis` is zero-based. The box grows by `ceil(2h)` units below on that axis.
pub fn second_difference(f: &GridFunction, axis: usize, h: f64) -> Result<GridFunction> {
    let d = f.dim();
    if axis >= d {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    let m = h * (f.level() as f64).exp2();
    if !(m >= 1.0 && m.fract() == 0.0 && m < 9.0e15) {
        return Err(Error::InvalidArgument(format!(
            "step {h} is not a positive multiple of 2^-{}",
            f.level()
        )));
    }
    let m = m as i64;
    let s = 1i64 << f.level();
    let grow = (2 * m + s - 1) / s;
    let mut below = vec![0; d];
    below[axis] = grow;
    let grid = f.grid().enlarged(&below, &vec![0; d])?;
    let mut entries = Vec::with_capacity(3 * f.nnz());
    for (mu, v) in f.iter() {
        for (j, w) in [(0i64, 1.0), (1, -2.0), (2, 1.0)] {
            let mut nu = mu.clone();
            nu[axis] -= j * m;
            entries.push((grid.key(&nu).unwrap(), v * w));
        }
    }
    Ok(GridFunction::from_keyed(grid, entries))
}

/// `(f1 (x) f2)(mu_1, mu') = f1(mu_1) f2(mu')`.
pub fn tensor(f1: &GridFunction, f2: &GridFunction) -> Result<GridFunction> {
    if f1.level() != f2.level() {
        return Err(Error::LevelMismatch(format!(
            "tensor factors at levels {} and {}",
            f1.level(),
            f2.level()
        )));
    }
    let d = f1.dim() + f2.dim();
    let mut lo = f1.grid().lo().to_vec();
    lo.extend_from_slice(f2.grid().lo());
    let mut hi = f1.grid().hi().to_vec();
    hi.extend_from_slice(f2.grid().hi());
    let grid = DyadicGrid::new(d, f1.level(), lo, hi)?;
    let mut cells = Vec::with_capacity(f1.nnz() * f2.nnz());
    for (a, u) in f1.iter() {
        for (b, v) in f2.iter() {
            let mut mu = a.clone();
            mu.extend_from_slice(&b);
            cells.push((mu, u * v));
        }
    }
    GridFunction::from_cells(grid, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn step_pm() -> GridFunction {
        let g = DyadicGrid::interval(1, 0, 1).unwrap();
        GridFunction::from_real_cells(g, vec![(vec![0], 1.0), (vec![1], -1.0)]).unwrap()
    }

    #[test]
    fn grid_rejects_bad_boxes() {
        assert!(DyadicGrid::new(1, 0, vec![1], vec![1]).is_err());
        assert!(DyadicGrid::new(0, 0, vec![], vec![]).is_err());
        assert!(DyadicGrid::new(2, 24, vec![0, 0], vec![2, 1]).is_err());
        assert!(DyadicGrid::new(2, 24, vec![0, 0], vec![1, 1]).is_ok());
    }

    #[test]
    fn key_roundtrip_is_lexicographic() {
        let g = DyadicGrid::new(2, 1, vec![-1, 0], vec![1, 2]).unwrap();
        let mut prev = None;
        for k in 0..g.cell_count() {
            let mu = g.cell(k);
            assert_eq!(g.key(&mu), Some(k));
            if let Some(p) = prev {
                assert!(p < mu);
            }
            prev = Some(mu);
        }
    }

    #[test]
    fn norms_of_unit_step() {
        let f = step_pm();
        assert_eq!(f.lp_norm(LebesgueExponent::Finite(1.0)), 1.0);
        assert_eq!(f.lp_norm(LebesgueExponent::Infinite), 1.0);
        // (1/2 * 1 + 1/2 * 1)^2
        assert_eq!(f.lp_norm(LebesgueExponent::Finite(0.5)), 1.0);
        assert_eq!(GridFunction::zero(f.grid().clone()).lp_norm(LebesgueExponent::Finite(0.3)), 0.0);
    }

    #[test]
    fn second_difference_staircase() {
        let g = DyadicGrid::interval(4, 0, 1).unwrap();
        let f = GridFunction::sample(g, |_| c(1.0)).unwrap();
        let dd = second_difference(&f, 0, 0.25).unwrap();
        // brute force pointwise evaluation of the definition
        for i in -32..32 {
            let x = (i as f64 + 0.5) / 16.0;
            let ind = |t: f64| if (0.0..1.0).contains(&t) { 1.0 } else { 0.0 };
            let want = ind(x + 0.5) - 2.0 * ind(x + 0.25) + ind(x);
            assert_eq!(dd.eval(&[x]).re, want, "x = {x}");
        }
        let l2 = dd.lp_norm(LebesgueExponent::Finite(2.0));
        assert!((l2 - 2.0 * 0.25f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn second_difference_l2_formula() {
        let g = DyadicGrid::interval(6, 0, 1).unwrap();
        let f = GridFunction::sample(g, |_| c(1.0)).unwrap();
        for m in 1..32 {
            let h = m as f64 / 64.0;
            let dd = second_difference(&f, 0, h).unwrap();
            assert!((dd.lp_norm(LebesgueExponent::Finite(2.0)) - 2.0 * h.sqrt()).abs() < 1e-13);
        }
    }

    #[test]
    fn second_difference_kills_constants_inside() {
        let g = DyadicGrid::interval(3, -2, 2).unwrap();
        let f = GridFunction::sample(g, |_| c(3.5)).unwrap();
        let dd = second_difference(&f, 0, 0.125).unwrap();
        for i in -16..14 {
            assert_eq!(dd.get(&[i]), c(0.0));
        }
        assert!(second_difference(&f, 0, 0.1).is_err());
        assert!(second_difference(&f, 0, 0.0625).is_err());
    }

    #[test]
    fn tensor_examples() {
        let g = DyadicGrid::interval(2, 0, 1).unwrap();
        let one = GridFunction::sample(g.clone(), |_| c(1.0)).unwrap();
        let t = tensor(&one, &one).unwrap();
        let sq = GridFunction::sample(DyadicGrid::unit_cube(2, 2).unwrap(), |_| c(1.0)).unwrap();
        assert_eq!(t, sq);
        let a = GridFunction::from_real_cells(g.clone(), vec![(vec![1], 2.0)]).unwrap();
        let b = GridFunction::from_real_cells(g, vec![(vec![3], 3.0)]).unwrap();
        let ab = tensor(&a, &b).unwrap();
        assert_eq!(ab.nnz(), 1);
        assert_eq!(ab.get(&[1, 3]), c(6.0));
        let coarse = GridFunction::sample(DyadicGrid::interval(1, 0, 1).unwrap(), |_| c(1.0)).unwrap();
        assert!(tensor(&a, &coarse).is_err());
    }

    #[test]
    fn text_roundtrip_is_bit_exact() {
        let g = DyadicGrid::new(2, 3, vec![-1, 0], vec![1, 1]).unwrap();
        let f = GridFunction::sample(g, |x| C64::new((x[0] * 7.1).sin() / 3.0, x[1].exp() * 1e-17))
            .unwrap();
        let back = GridFunction::from_text(&f.to_text()).unwrap();
        assert_eq!(f, back);
        for (a, b) in f.values().iter().zip(back.values()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn refinement_and_translation() {
        let f = step_pm();
        let r = f.at_level(3);
        assert_eq!(r.nnz(), 8);
        assert_eq!(r.lp_norm(LebesgueExponent::Finite(1.0)), 1.0);
        let t = f.translate(&[3]).unwrap();
        assert_eq!(t.get(&[3]), c(1.0));
        assert_eq!(t.get(&[4]), c(-1.0));
        assert_eq!(t.max_abs_diff(&f), 1.0);
        let line = t.to_line();
        assert_eq!(line.start, 3);
        assert_eq!(GridFunction::from_line(&line).unwrap().to_line(), line);
    }

    #[test]
    fn exact_moments_of_steps() {
        let g = DyadicGrid::interval(2, 0, 1).unwrap();
        let f = GridFunction::sample(g, |_| c(1.0)).unwrap();
        assert!((f.moment(&[2]).re - 1.0 / 3.0).abs() < 1e-15);
    }
}
