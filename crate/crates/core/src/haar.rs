//! The inhomogeneous Haar system on dyadic grids.
//!
//! Coefficients use the `2^{kd}<f, h>` normalization, so that synthesis
//! multiplies by the raw `±1` Haar function and `E_{N+1} - E_N` is the
//! level-`N` part of the expansion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{DyadicGrid, GridFunction, C64};

/// A father function `1_{mu + [0,1)^d}` or a wavelet `h^eps_{k,mu}`.
///
/// `eps` is a bit mask with axis `i` stored at bit `d - 1 - i`, so integer
/// order equals lexicographic order of the `{0,1}^d` tuple.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HaarIndex {
    Father { mu: Vec<i64> },
    Wavelet { k: u32, mu: Vec<i64>, eps: u32 },
}

impl HaarIndex {
    pub fn father(mu: Vec<i64>) -> Self {
        HaarIndex::Father { mu }
    }

    /// Panics if `eps` is zero or too wide for the dimension.
    pub fn wavelet(k: u32, mu: Vec<i64>, eps: u32) -> Self {
        let d = mu.len();
        assert!(eps != 0 && eps < (1 << d), "wavelet type must be a nonzero {d}-bit mask");
        HaarIndex::Wavelet { k, mu, eps }
    }

    /// Wavelet from an explicit `{0,1}^d` tuple.
    pub fn wavelet_from_bits(k: u32, mu: Vec<i64>, bits: &[u8]) -> Self {
        let mut eps = 0u32;
        for &b in bits {
            eps = (eps << 1) | (b & 1) as u32;
        }
        HaarIndex::wavelet(k, mu, eps)
    }

    pub fn dim(&self) -> usize {
        self.mu().len()
    }

    pub fn mu(&self) -> &[i64] {
        match self {
            HaarIndex::Father { mu } | HaarIndex::Wavelet { mu, .. } => mu,
        }
    }

    /// Support level: the support is `2^{-level}(mu + [0,1)^d)`. Fathers have level 0.
    pub fn level(&self) -> u32 {
        match self {
            HaarIndex::Father { .. } => 0,
            HaarIndex::Wavelet { k, .. } => *k,
        }
    }

    pub fn is_father(&self) -> bool {
        matches!(self, HaarIndex::Father { .. })
    }

    pub fn eps(&self) -> u32 {
        match self {
            HaarIndex::Father { .. } => 0,
            HaarIndex::Wavelet { eps, .. } => *eps,
        }
    }

    /// `eps` as a tuple in axis order.
    pub fn eps_bits(&self) -> Vec<u8> {
        let d = self.dim();
        let e = self.eps();
        (0..d).map(|i| ((e >> (d - 1 - i)) & 1) as u8).collect()
    }

    /// Finest grid level needed to represent the function exactly.
    pub fn min_resolution(&self) -> u32 {
        match self {
            HaarIndex::Father { .. } => 0,
            HaarIndex::Wavelet { k, .. } => k + 1,
        }
    }

    /// Closed support `[lo_i, hi_i]` at unit scale, in units of `2^{-level}`.
    pub fn support_cells(&self) -> (u32, Vec<i64>, Vec<i64>) {
        let mu = self.mu();
        (self.level(), mu.to_vec(), mu.iter().map(|m| m + 1).collect())
    }
}

impl fmt::Display for HaarIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HaarIndex::Father { mu } => write!(f, "F{mu:?}"),
            HaarIndex::Wavelet { k, mu, .. } => {
                let bits: String = self.eps_bits().iter().map(|b| char::from(b'0' + b)).collect();
                write!(f, "W({k},{mu:?},{bits})")
            }
        }
    }
}

#[inline]
fn child_sign(c: u32, eps: u32) -> f64 {
    if (c & eps).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Exact `±1` realization of a Haar function on `grid` (clipped to the box).
pub fn haar_eval(idx: &HaarIndex, grid: &DyadicGrid) -> Result<GridFunction> {
    let d = grid.dim();
    if idx.dim() != d {
        return Err(Error::InvalidArgument("index dimension differs from grid".into()));
    }
    let j = grid.level();
    if j < idx.min_resolution() {
        return Err(Error::Resolution(format!("{idx} needs level {}, grid has {j}", idx.min_resolution())));
    }
    let k = idx.level();
    let r = 1i64 << (j - k);
    let mu = idx.mu();
    let a: Vec<i64> = (0..d).map(|i| (mu[i] * r).max(grid.first_cell(i))).collect();
    let b: Vec<i64> = (0..d).map(|i| ((mu[i] + 1) * r).min(grid.end_cell(i))).collect();
    let mut cells = Vec::new();
    if (0..d).all(|i| a[i] < b[i]) {
        let eps = idx.eps();
        let mut nu = a.clone();
        loop {
            let mut c = 0u32;
            if !idx.is_father() {
                for &x in &nu {
                    c = (c << 1) | ((x >> (j - k - 1)) & 1) as u32;
                }
            }
            cells.push((nu.clone(), C64::new(child_sign(c, eps), 0.0)));
            let mut ax = d;
            loop {
                if ax == 0 {
                    return GridFunction::from_cells(grid.clone(), cells);
                }
                ax -= 1;
                nu[ax] += 1;
                if nu[ax] < b[ax] {
                    break;
                }
                nu[ax] = a[ax];
            }
        }
    }
    GridFunction::from_cells(grid.clone(), cells)
}

/// Raw sums of `f` over level-`n` cells, keyed in the level-`n` grid.
///
/// Sums are formed one level at a time (children in mu-lexicographic order),
/// so constant blocks sum exactly.
pub(crate) fn block_sums(f: &GridFunction, n: u32) -> Result<(DyadicGrid, Vec<(u64, C64)>)> {
    let j = f.level();
    if n > j {
        return Err(Error::LevelMismatch(format!("level {n} finer than grid level {j}")));
    }
    let mut grid = f.grid().clone();
    let mut cur: Vec<(u64, C64)> = f.keys().iter().copied().zip(f.values().iter().copied()).collect();
    for l in (n..j).rev() {
        let coarse = grid.with_level(l)?;
        let mut tagged: Vec<(u64, C64)> = cur
            .into_iter()
            .map(|(k, v)| {
                let p: Vec<i64> = grid.cell(k).iter().map(|m| m >> 1).collect();
                (coarse.key(&p).unwrap(), v)
            })
            .collect();
        if f.dim() > 1 {
            tagged.sort_by_key(|e| e.0);
        }
        let mut out: Vec<(u64, C64)> = Vec::with_capacity(tagged.len() >> f.dim());
        for (k, v) in tagged {
            match out.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => out.push((k, v)),
            }
        }
        cur = out;
        grid = coarse;
    }
    Ok((grid, cur))
}

/// Level-`n` averages as a function on the level-`n` grid.
pub fn expectation_coarse(f: &GridFunction, n: u32) -> Result<GridFunction> {
    let (coarse, sums) = block_sums(f, n)?;
    let scale = (-(((f.level() - n) as usize * f.dim()) as f64)).exp2();
    let entries = sums.into_iter().map(|(k, s)| (k, s * scale)).collect();
    Ok(GridFunction::from_keyed(coarse, entries))
}

/// `E_N f`: the average of `f` on each level-`N` dyadic cube, at the level of `f`.
pub fn expectation(f: &GridFunction, n: u32) -> Result<GridFunction> {
    Ok(expectation_coarse(f, n)?.at_level(f.level()))
}

/// `E_{N+1} f - E_N f`.
pub fn martingale_difference(f: &GridFunction, n: u32) -> Result<GridFunction> {
    if n + 1 > f.level() {
        return Err(Error::LevelMismatch(format!("difference at level {n} needs grid level > {n}")));
    }
    let fine = expectation_coarse(f, n + 1)?;
    let coarse = expectation_coarse(f, n)?.at_level(n + 1);
    Ok(fine.sub(&coarse)?.at_level(f.level()))
}

/// All nonzero level-`k` wavelet coefficients of `f`.
pub fn level_coefficients(f: &GridFunction, k: u32) -> Result<Vec<(HaarIndex, C64)>> {
    let j = f.level();
    if k + 1 > j {
        return Err(Error::Resolution(format!("level {k} wavelets need grid level > {k}")));
    }
    let d = f.dim();
    let (fine, sums) = block_sums(f, k + 1)?;
    let coarse = f.grid().with_level(k)?;
    let nc = 1usize << d;
    let mut groups: Vec<(u64, usize, C64)> = sums
        .into_iter()
        .map(|(key, s)| {
            let nu = fine.cell(key);
            let mut c = 0usize;
            let mut p = Vec::with_capacity(d);
            for &x in &nu {
                c = (c << 1) | (x & 1) as usize;
                p.push(x >> 1);
            }
            (coarse.key(&p).unwrap(), c, s)
        })
        .collect();
    if d > 1 {
        groups.sort_by_key(|g| g.0);
    }
    let scale = (-(((j - k) as usize * d) as f64)).exp2();
    let zero = C64::new(0.0, 0.0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < groups.len() {
        let key = groups[i].0;
        let mut s = vec![zero; nc];
        while i < groups.len() && groups[i].0 == key {
            s[groups[i].1] += groups[i].2;
            i += 1;
        }
        let mu = coarse.cell(key);
        for eps in 1..nc as u32 {
            let mut acc = zero;
            for (c, v) in s.iter().enumerate() {
                acc += v * child_sign(c as u32, eps);
            }
            let coef = acc * scale;
            if coef != zero {
                out.push((HaarIndex::Wavelet { k, mu: mu.clone(), eps }, coef));
            }
        }
    }
    Ok(out)
}

/// Normalized coefficients `u_n*(f)`, keyed by Haar index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HaarExpansion {
    coeffs: BTreeMap<HaarIndex, C64>,
}

impl HaarExpansion {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a coefficient; exact zeros remove the entry.
    pub fn insert(&mut self, idx: HaarIndex, c: C64) -> Result<()> {
        if !(c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        if c == C64::new(0.0, 0.0) {
            self.coeffs.remove(&idx);
        } else {
            self.coeffs.insert(idx, c);
        }
        Ok(())
    }

    pub fn get(&self, idx: &HaarIndex) -> C64 {
        self.coeffs.get(idx).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HaarIndex, &C64)> {
        self.coeffs.iter()
    }

    pub fn restrict(&self, keep: &BTreeSet<HaarIndex>) -> HaarExpansion {
        let coeffs = self.coeffs.iter().filter(|(i, _)| keep.contains(i)).map(|(i, c)| (i.clone(), *c)).collect();
        HaarExpansion { coeffs }
    }

    pub fn retain<F: FnMut(&HaarIndex, &C64) -> bool>(&mut self, mut f: F) {
        self.coeffs.retain(|i, c| f(i, c));
    }

    pub fn max_abs_diff(&self, other: &HaarExpansion) -> f64 {
        let keys: BTreeSet<&HaarIndex> = self.coeffs.keys().chain(other.coeffs.keys()).collect();
        keys.into_iter().map(|k| (self.get(k) - other.get(k)).norm()).fold(0.0, f64::max)
    }

    /// Lines `F mu... re im` and `W k mu... eps... re im`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (idx, c) in &self.coeffs {
            match idx {
                HaarIndex::Father { mu } => {
                    s.push('F');
                    for m in mu {
                        write!(s, " {m}").unwrap();
                    }
                }
                HaarIndex::Wavelet { k, mu, .. } => {
                    write!(s, "W {k}").unwrap();
                    for m in mu {
                        write!(s, " {m}").unwrap();
                    }
                    for b in idx.eps_bits() {
                        write!(s, " {b}").unwrap();
                    }
                }
            }
            writeln!(s, " {:.16e} {:.16e}", c.re, c.im).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |l: &str| Error::Parse(format!("bad expansion line: {l}"));
        let mut e = HaarExpansion::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let t: Vec<&str> = line.split_whitespace().collect();
            let num = |x: &str| x.parse::<i64>().map_err(|_| bad(line));
            let re: f64 = t[t.len() - 2].parse().map_err(|_| bad(line))?;
            let im: f64 = t[t.len() - 1].parse().map_err(|_| bad(line))?;
            let idx = match t[0] {
                "F" if t.len() >= 4 => {
                    HaarIndex::father(t[1..t.len() - 2].iter().map(|x| num(x)).collect::<Result<_>>()?)
                }
                "W" if t.len() >= 6 && (t.len() - 4) % 2 == 0 => {
                    let d = (t.len() - 4) / 2;
                    let k = num(t[1])? as u32;
                    let mu = t[2..2 + d].iter().map(|x| num(x)).collect::<Result<Vec<_>>>()?;
                    let bits = t[2 + d..2 + 2 * d].iter().map(|x| num(x).map(|v| v as u8)).collect::<Result<Vec<_>>>()?;
                    if bits.iter().all(|&b| b == 0) || bits.iter().any(|&b| b > 1) {
                        return Err(bad(line));
                    }
                    HaarIndex::wavelet_from_bits(k, mu, &bits)
                }
                _ => return Err(bad(line)),
            };
            e.insert(idx, C64::new(re, im))?;
        }
        Ok(e)
    }
}

impl FromIterator<(HaarIndex, C64)> for HaarExpansion {
    fn from_iter<I: IntoIterator<Item = (HaarIndex, C64)>>(iter: I) -> Self {
        let mut e = HaarExpansion::new();
        for (i, c) in iter {
            let _ = e.insert(i, c);
        }
        e
    }
}

/// Father coefficients and wavelet coefficients for levels `0..=max_level`.
///
/// Levels at or beyond the grid level carry no wavelet content and are skipped.
pub fn analyze(f: &GridFunction, max_level: u32) -> Result<HaarExpansion> {
    let mut e = HaarExpansion::new();
    let (coarse, sums) = block_sums(f, 0)?;
    let scale = (-((f.level() as usize * f.dim()) as f64)).exp2();
    for (k, s) in sums {
        e.insert(HaarIndex::father(coarse.cell(k)), s * scale)?;
    }
    if f.level() > 0 {
        for k in 0..=max_level.min(f.level() - 1) {
            for (idx, c) in level_coefficients(f, k)? {
                e.coeffs.insert(idx, c);
            }
        }
    }
    Ok(e)
}

/// `sum coeff * h` on `grid`, by level-by-level upsampling.
pub fn synthesize(e: &HaarExpansion, grid: &DyadicGrid) -> Result<GridFunction> {
    let d = grid.dim();
    let j = grid.level();
    let top = e.iter().map(|(i, _)| i.min_resolution()).max().unwrap_or(0);
    if top > j {
        return Err(Error::Resolution(format!("expansion needs level {top}, grid has {j}")));
    }
    let outside = |i: &HaarIndex| Error::InvalidGrid(format!("{i} lies outside the grid box"));
    let level0 = grid.with_level(0)?;
    let mut entries = Vec::new();
    let mut by_level: BTreeMap<u32, Vec<(&HaarIndex, C64)>> = BTreeMap::new();
    for (idx, c) in e.iter() {
        if idx.dim() != d {
            return Err(Error::InvalidArgument("index dimension differs from grid".into()));
        }
        match idx {
            HaarIndex::Father { mu } => entries.push((level0.key(mu).ok_or_else(|| outside(idx))?, *c)),
            HaarIndex::Wavelet { k, .. } => by_level.entry(*k).or_default().push((idx, *c)),
        }
    }
    let mut cur = GridFunction::from_keyed(level0, entries);
    let nc = 1u32 << d;
    for (&k, items) in &by_level {
        let fine_grid = grid.with_level(k + 1)?;
        let up = cur.at_level(k + 1);
        let mut entries: Vec<(u64, C64)> = up.keys().iter().copied().zip(up.values().iter().copied()).collect();
        let mut child = vec![0i64; d];
        for (idx, coef) in items {
            let mu = idx.mu();
            let eps = idx.eps();
            for c in 0..nc {
                for i in 0..d {
                    child[i] = 2 * mu[i] + ((c >> (d - 1 - i)) & 1) as i64;
                }
                let key = fine_grid.key(&child).ok_or_else(|| outside(idx))?;
                entries.push((key, coef * child_sign(c, eps)));
            }
        }
        cur = GridFunction::from_keyed(fine_grid, entries);
    }
    Ok(cur.at_level(j))
}

/// `P_A f`: synthesis of the coefficients of `f` on the index set.
pub fn project(f: &GridFunction, indices: &BTreeSet<HaarIndex>) -> Result<GridFunction> {
    let top = indices.iter().map(|i| i.level()).max().unwrap_or(0);
    let e = analyze(f, top)?.restrict(indices);
    synthesize(&e, f.grid())
}

/// Per-index real weights in `[-1, 1]` for one Haar level.
///
/// Level `-1` addresses the father functions (with `eps = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMask {
    level: i32,
    full: bool,
    weights: BTreeMap<(Vec<i64>, u32), f64>,
}

impl CoefficientMask {
    pub fn new<I>(level: i32, weights: I) -> Result<Self>
    where
        I: IntoIterator<Item = ((Vec<i64>, u32), f64)>,
    {
        if level < -1 {
            return Err(Error::InvalidArgument(format!("mask level {level} below -1")));
        }
        let mut map = BTreeMap::new();
        for ((mu, eps), a) in weights {
            if !(a.abs() <= 1.0) {
                return Err(Error::InvalidArgument(format!("mask weight {a} outside [-1, 1]")));
            }
            if (level == -1) != (eps == 0) {
                return Err(Error::InvalidArgument("father masks use eps = 0, wavelet masks eps != 0".into()));
            }
            if a != 0.0 {
                map.insert((mu, eps), a);
            }
        }
        Ok(CoefficientMask { level, full: false, weights: map })
    }

    /// Weight 1 on every index of the level.
    pub fn full(level: i32) -> Self {
        CoefficientMask { level, full: true, weights: BTreeMap::new() }
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn level(&self) -> i32 {
        self.level
    }

    pub fn weight(&self, mu: &[i64], eps: u32) -> f64 {
        if self.full {
            return 1.0;
        }
        self.weights.get(&(mu.to_vec(), eps)).copied().unwrap_or(0.0)
    }

    /// True when every weight is zero.
    pub fn is_empty(&self) -> bool {
        !self.full && self.weights.is_empty()
    }

    /// Explicit entries (empty for a full mask).
    pub fn entries(&self) -> impl Iterator<Item = (&(Vec<i64>, u32), &f64)> {
        self.weights.iter()
    }
}

/// `T_N[f, a]`: the level-`N` Haar projection of `f` with per-index weights.
pub fn masked_level(f: &GridFunction, mask: &CoefficientMask) -> Result<GridFunction> {
    let mut e = HaarExpansion::new();
    if mask.level() < 0 {
        for (idx, c) in analyze(f, 0)?.iter().filter(|(i, _)| i.is_father()) {
            let a = mask.weight(idx.mu(), 0);
            e.insert(idx.clone(), c * a)?;
        }
    } else {
        let n = mask.level() as u32;
        if n + 1 > f.level() {
            return Err(Error::Resolution(format!("mask level {n} needs grid level > {n}")));
        }
        for (idx, c) in level_coefficients(f, n)? {
            let a = mask.weight(idx.mu(), idx.eps());
            e.insert(idx, c * a)?;
        }
    }
    synthesize(&e, f.grid())
}

/// `2^{Nd} prod_i (1_{[0,2^{-N})}(x_i) - 1_{[-2^{-N},0)}(x_i))` on `grid`.
pub fn odd_block(n: u32, grid: &DyadicGrid) -> Result<GridFunction> {
    let j = grid.level();
    if n > j {
        return Err(Error::Resolution(format!("block level {n} finer than grid level {j}")));
    }
    let d = grid.dim();
    let w = 1i64 << (j - n);
    let height = ((n as usize * d) as f64).exp2();
    let total = (2 * w) as u64;
    let mut cells = Vec::new();
    for t in 0..total.pow(d as u32) {
        let mut rest = t;
        let mut mu = vec![0i64; d];
        let mut sign = 1.0;
        for i in (0..d).rev() {
            mu[i] = (rest % total) as i64 - w;
            rest /= total;
            if mu[i] < 0 {
                sign = -sign;
            }
        }
        if !grid.contains_cell(&mu) {
            return Err(Error::InvalidGrid("odd block does not fit in the grid box".into()));
        }
        cells.push((mu, C64::new(sign * height, 0.0)));
    }
    GridFunction::from_cells(grid.clone(), cells)
}

/// The expansion `1_{[0,1)^d} + sum_{k<N} 2^{kd} sum_eps h^eps_{k,0}` of `2^{Nd} 1_{[0,2^{-N})^d}`.
pub fn block_indicator_expansion(n: u32, d: usize) -> HaarExpansion {
    let mut e = HaarExpansion::new();
    e.insert(HaarIndex::father(vec![0; d]), C64::new(1.0, 0.0)).unwrap();
    for k in 0..n {
        let c = ((k as usize * d) as f64).exp2();
        for eps in 1..(1u32 << d) {
            e.insert(HaarIndex::wavelet(k, vec![0; d], eps), C64::new(c, 0.0)).unwrap();
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LebesgueExponent;
    use proptest::prelude::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn random_fn(d: usize, j: u32, seed: u64) -> GridFunction {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DyadicGrid::unit_cube(d, j).unwrap();
        GridFunction::sample(g, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap()
    }

    /// Brute-force `2^{kd} sum_cells f h 2^{-Jd}` from a pointwise Haar function.
    fn brute_coeff(f: &GridFunction, idx: &HaarIndex) -> C64 {
        let h = haar_eval(idx, f.grid()).unwrap();
        let mut s = C64::new(0.0, 0.0);
        for (mu, v) in f.iter() {
            s += v * h.get(&mu);
        }
        s * f.grid().cell_measure() * ((idx.level() as usize * f.dim()) as f64).exp2()
    }

    #[test]
    fn haar_eval_examples() {
        let g1 = DyadicGrid::interval(1, 0, 1).unwrap();
        let h = haar_eval(&HaarIndex::wavelet(0, vec![0], 1), &g1).unwrap();
        assert_eq!(h.get(&[0]), c(1.0));
        assert_eq!(h.get(&[1]), c(-1.0));
        let g2 = DyadicGrid::unit_cube(2, 1).unwrap();
        let h = haar_eval(&HaarIndex::wavelet(0, vec![0, 0], 3), &g2).unwrap();
        let vals: Vec<f64> = h.values().iter().map(|v| v.re).collect();
        assert_eq!(vals, vec![1.0, -1.0, -1.0, 1.0]);
        let g0 = DyadicGrid::interval(0, 0, 5).unwrap();
        let f = haar_eval(&HaarIndex::father(vec![3]), &g0).unwrap();
        assert_eq!(f.nnz(), 1);
        assert_eq!(f.get(&[3]), c(1.0));
        assert!(haar_eval(&HaarIndex::wavelet(2, vec![0], 1), &DyadicGrid::interval(2, 0, 1).unwrap()).is_err());
    }

    #[test]
    fn analyze_examples() {
        let g = DyadicGrid::interval(3, 0, 1).unwrap();
        let h = haar_eval(&HaarIndex::wavelet(0, vec![0], 1), &g).unwrap();
        let e = analyze(&h, 2).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.get(&HaarIndex::wavelet(0, vec![0], 1)), c(1.0));
        let one = GridFunction::sample(g.clone(), |_| c(1.0)).unwrap();
        let e = analyze(&one, 2).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.get(&HaarIndex::father(vec![0])), c(1.0));
        let half = GridFunction::sample(g, |x| c(if x[0] < 0.5 { 2.0 } else { 0.0 })).unwrap();
        let e = analyze(&half, 2).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.get(&HaarIndex::father(vec![0])), c(1.0));
        assert_eq!(e.get(&HaarIndex::wavelet(0, vec![0], 1)), c(1.0));
    }

    #[test]
    fn coefficients_match_brute_force() {
        for d in 1..=2 {
            let f = random_fn(d, 4, 7 + d as u64);
            let e = analyze(&f, 3).unwrap();
            for (idx, v) in e.iter() {
                assert!((brute_coeff(&f, idx) - v).norm() < 1e-13, "{idx}");
            }
            let count = 1 + (0..4).map(|k| ((1usize << d) - 1) << (k * d)).sum::<usize>();
            assert_eq!(e.len(), count);
        }
    }

    #[test]
    fn block_identity_small_cases() {
        for d in 1..=3 {
            for n in 1..=6u32 {
                if n as usize * d > 12 {
                    continue;
                }
                let g = DyadicGrid::unit_cube(d, n).unwrap();
                let lhs = synthesize(&block_indicator_expansion(n, d), &g).unwrap();
                let height = ((n as usize * d) as f64).exp2();
                let mut rhs = GridFunction::zero(g.clone());
                rhs = rhs.add(&GridFunction::from_real_cells(g, vec![(vec![0; d], height)]).unwrap()).unwrap();
                assert_eq!(lhs, rhs, "d={d} n={n}");
            }
        }
        let g = DyadicGrid::interval(2, 0, 1).unwrap();
        let f = synthesize(&block_indicator_expansion(2, 1), &g).unwrap();
        assert_eq!(f.nnz(), 1);
        assert_eq!(f.get(&[0]), c(4.0));
    }

    #[test]
    fn expectation_example() {
        let g = DyadicGrid::interval(2, 0, 1).unwrap();
        let f = GridFunction::from_real_cells(g, (0..4).map(|i| (vec![i], (i + 1) as f64))).unwrap();
        let e = expectation(&f, 1).unwrap();
        let vals: Vec<f64> = e.values().iter().map(|v| v.re).collect();
        assert_eq!(vals, vec![1.5, 1.5, 3.5, 3.5]);
        assert!(expectation(&f, 3).is_err());
    }

    #[test]
    fn martingale_difference_examples() {
        let g = DyadicGrid::interval(4, 0, 1).unwrap();
        let one = GridFunction::sample(g.clone(), |_| c(1.0)).unwrap();
        for n in 0..4 {
            assert!(martingale_difference(&one, n).unwrap().is_zero());
        }
        let h = haar_eval(&HaarIndex::wavelet(0, vec![0], 1), &g).unwrap();
        assert_eq!(martingale_difference(&h, 0).unwrap(), h);
        for n in 1..4 {
            assert!(martingale_difference(&h, n).unwrap().is_zero());
        }
    }

    #[test]
    fn reconstruction_two_dims() {
        let f = random_fn(2, 4, 3);
        let mut acc = expectation(&f, 0).unwrap();
        for n in 0..4 {
            acc = acc.add(&martingale_difference(&f, n).unwrap()).unwrap();
        }
        assert!(acc.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn masks() {
        let f = random_fn(1, 5, 11);
        for n in 0..4 {
            let full = masked_level(&f, &CoefficientMask::full(n)).unwrap();
            assert!(full.max_abs_diff(&martingale_difference(&f, n as u32).unwrap()) < 1e-13);
            let none = CoefficientMask::new(n, Vec::new()).unwrap();
            assert!(masked_level(&f, &none).unwrap().is_zero());
        }
        assert!(CoefficientMask::new(0, vec![((vec![0], 1), 1.5)]).is_err());
        let fathers = masked_level(&f, &CoefficientMask::full(-1)).unwrap();
        assert!(fathers.max_abs_diff(&expectation(&f, 0).unwrap()) < 1e-15);
    }

    #[test]
    fn odd_block_is_expectation_of_odd_pair() {
        let g = DyadicGrid::interval(5, -1, 1).unwrap();
        let h = odd_block(2, &g).unwrap();
        assert_eq!(h.nnz(), 16);
        assert_eq!(h.integral(), c(0.0));
        assert_eq!(h.get(&[0]), c(4.0));
        assert_eq!(h.get(&[-1]), c(-4.0));
    }

    #[test]
    fn expansion_text_roundtrip() {
        let f = random_fn(2, 3, 5);
        let e = analyze(&f, 2).unwrap();
        let back = HaarExpansion::from_text(&e.to_text()).unwrap();
        assert_eq!(e, back);
    }

    #[test]
    fn orthogonality_exhaustive_small() {
        let g = DyadicGrid::unit_cube(2, 3).unwrap();
        let mut all = vec![HaarIndex::father(vec![0, 0])];
        for k in 0..3u32 {
            for a in 0..(1i64 << k) {
                for b in 0..(1i64 << k) {
                    for eps in 1..4 {
                        all.push(HaarIndex::wavelet(k, vec![a, b], eps));
                    }
                }
            }
        }
        let funcs: Vec<GridFunction> = all.iter().map(|i| haar_eval(i, &g).unwrap()).collect();
        for i in 0..funcs.len() {
            for j in 0..i {
                assert_eq!(funcs[i].mul(&funcs[j]).unwrap().integral(), c(0.0));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn expectation_idempotent_and_nested(seed in 0u64..10_000, n in 0u32..5, m in 0u32..5) {
            let f = random_fn(1, 5, seed);
            let en = expectation(&f, n).unwrap();
            prop_assert_eq!(expectation(&en, n).unwrap(), en.clone());
            let nested = expectation(&expectation(&f, m).unwrap(), n).unwrap();
            let direct = expectation(&f, n.min(m)).unwrap();
            prop_assert!(nested.max_abs_diff(&direct) < 1e-13);
        }

        #[test]
        fn expectation_contracts(seed in 0u64..10_000, n in 0u32..4, p in 1.0f64..4.0) {
            let f = random_fn(2, 4, seed);
            let p = LebesgueExponent::Finite(p);
            prop_assert!(expectation(&f, n).unwrap().lp_norm(p) <= f.lp_norm(p) * (1.0 + 1e-12));
        }

        #[test]
        fn synthesis_inverts_analysis(seed in 0u64..10_000, d in 1usize..3) {
            let f = random_fn(d, if d == 1 { 6 } else { 3 }, seed);
            let e = analyze(&f, f.level()).unwrap();
            prop_assert!(synthesize(&e, f.grid()).unwrap().max_abs_diff(&f) < 1e-12);
        }

        #[test]
        fn sign_masks_flip_coefficients(seed in 0u64..10_000, n in 0u32..4) {
            use rand::{Rng, SeedableRng};
            let f = random_fn(1, 5, seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let signs: Vec<((Vec<i64>, u32), f64)> = (0..(1i64 << n))
                .map(|m| ((vec![m], 1), if rng.gen_bool(0.5) { 1.0 } else { -1.0 }))
                .collect();
            let mask = CoefficientMask::new(n as i32, signs.clone()).unwrap();
            let out = analyze(&masked_level(&f, &mask).unwrap(), 4).unwrap();
            let inp = analyze(&f, 4).unwrap();
            for ((mu, eps), s) in signs {
                let idx = HaarIndex::wavelet(n, mu, eps);
                prop_assert!((out.get(&idx) - inp.get(&idx) * s).norm() < 1e-13);
            }
        }
    }
}
