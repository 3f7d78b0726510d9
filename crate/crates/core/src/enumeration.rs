//! Enumerations of the Haar system, admissibility checks, partial sums and
//! the per-cube structure of partial-sum operators.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::grid::{DyadicGrid, GridFunction};
use crate::haar::{self, CoefficientMask, HaarIndex};

/// A lexicographic sweep over the cells of a cube minus an optional inner cube.
#[derive(Clone, Debug)]
struct Block {
    father: bool,
    level: u32,
    lo: i64,
    hi: i64,
    inner: Option<(i64, i64)>,
    start: usize,
    len: usize,
}

impl Block {
    fn new(d: usize, father: bool, level: u32, lo: i64, hi: i64, inner: Option<(i64, i64)>) -> Block {
        let cube = |a: i64, b: i64| ((b - a) as usize).saturating_pow(d as u32);
        let cells = cube(lo, hi) - inner.map_or(0, |(a, b)| cube(a, b));
        let per = if father { 1 } else { (1usize << d) - 1 };
        Block { father, level, lo, hi, inner, start: 0, len: cells.saturating_mul(per) }
    }

    fn in_inner(&self, mu: &[i64]) -> bool {
        match self.inner {
            None => false,
            Some((a, b)) => mu.iter().all(|&m| m >= a && m < b),
        }
    }

    fn contains(&self, mu: &[i64]) -> bool {
        mu.iter().all(|&m| m >= self.lo && m < self.hi) && !self.in_inner(mu)
    }

    /// Number of block cells lexicographically before `mu` (which must belong to the block).
    fn rank(&self, mu: &[i64]) -> usize {
        let d = mu.len();
        let n = (self.hi - self.lo) as usize;
        let mut outer = 0usize;
        for &m in mu {
            outer = outer * n + (m - self.lo) as usize;
        }
        let mut skipped = 0usize;
        if let Some((a, b)) = self.inner {
            let w = (b - a) as usize;
            for i in 0..d {
                let below = (mu[i].clamp(a, b) - a) as usize;
                skipped += below * w.pow((d - 1 - i) as u32);
                if mu[i] < a || mu[i] >= b {
                    break;
                }
            }
        }
        outer - skipped
    }

    fn items(&self, d: usize) -> Vec<HaarIndex> {
        let mut out = Vec::with_capacity(self.len);
        let mut mu = vec![self.lo; d];
        loop {
            if !self.in_inner(&mu) {
                if self.father {
                    out.push(HaarIndex::father(mu.clone()));
                } else {
                    for eps in 1..(1u32 << d) {
                        out.push(HaarIndex::wavelet(self.level, mu.clone(), eps));
                    }
                }
            }
            let mut ax = d;
            loop {
                if ax == 0 {
                    return out;
                }
                ax -= 1;
                mu[ax] += 1;
                if mu[ax] < self.hi {
                    break;
                }
                mu[ax] = self.lo;
            }
        }
    }
}

#[derive(Debug)]
enum Scheme {
    Corridor { checkpoints: Vec<usize> },
    Lex { k_max: u32 },
    List { pos: HashMap<HaarIndex, usize> },
}

/// A deterministic injective map `n -> HaarIndex` (1-based) with a finite horizon.
#[derive(Debug)]
pub struct Enumeration {
    name: String,
    d: usize,
    b: u32,
    scheme: Scheme,
    blocks: Vec<Block>,
    lookup: HashMap<(bool, u32, i64), usize>,
    cache: Mutex<HashMap<usize, Arc<Vec<HaarIndex>>>>,
}

/// Unit-cube indicators in corridor `l` or Haar functions of level `k - 1` inside it.
fn corridor_block(d: usize, l: usize, k: usize) -> Block {
    let l = l as i64;
    let (father, level, s) = if k == 0 { (true, 0, 1) } else { (false, (k - 1) as u32, 1i64 << (k - 1)) };
    let inner = if l == 0 { None } else { Some(((-10 * l + 5) * s, (10 * l - 5) * s)) };
    Block::new(d, father, level, (-10 * l - 5) * s, (10 * l + 5) * s, inner)
}

/// Corridor number of a unit cube.
fn corridor_of(cube: &[i64]) -> i64 {
    cube.iter()
        .map(|&c| if c >= 0 { ((c - 5).div_euclid(10) + 1).max(0) } else { ((-c - 5) + 9).div_euclid(10).max(0) })
        .max()
        .unwrap_or(0)
}

impl Enumeration {
    fn from_blocks(name: &str, d: usize, b: u32, scheme: Scheme, mut blocks: Vec<Block>, tags: Vec<i64>) -> Self {
        let mut start = 0usize;
        let mut lookup = HashMap::new();
        for (i, blk) in blocks.iter_mut().enumerate() {
            blk.start = start;
            start = start.saturating_add(blk.len);
            lookup.insert((blk.father, blk.level, tags[i]), i);
        }
        Enumeration { name: name.to_string(), d, b, scheme, blocks, lookup, cache: Mutex::new(HashMap::new()) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Admissibility parameter `b`.
    pub fn b(&self) -> u32 {
        self.b
    }

    /// Number of indices that can be requested.
    pub fn horizon(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start.saturating_add(b.len))
    }

    /// Checkpoint `R(m)` of the corridor scheme (or the prefix ending level `m` of the lex scheme).
    pub fn checkpoint(&self, m: usize) -> Option<usize> {
        match &self.scheme {
            Scheme::Corridor { checkpoints, .. } => checkpoints.get(m).copied(),
            Scheme::Lex { k_max } => (m <= *k_max as usize + 1).then(|| self.blocks[m].start + self.blocks[m].len),
            Scheme::List { .. } => None,
        }
    }

    fn block_items(&self, i: usize) -> Arc<Vec<HaarIndex>> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        cache.entry(i).or_insert_with(|| Arc::new(self.blocks[i].items(self.d))).clone()
    }

    fn check_horizon(&self, n: usize) -> Result<()> {
        if n > self.horizon() {
            return Err(Error::Horizon { requested: n, horizon: self.horizon() });
        }
        Ok(())
    }

    /// The `n`-th function, `n >= 1`.
    pub fn at(&self, n: usize) -> Result<HaarIndex> {
        if n == 0 {
            return Err(Error::InvalidArgument("enumerations start at n = 1".into()));
        }
        self.check_horizon(n)?;
        let i = self.blocks.partition_point(|b| b.start + b.len < n);
        let items = self.block_items(i);
        Ok(items[n - 1 - self.blocks[i].start].clone())
    }

    /// `u_1, ..., u_R`.
    pub fn prefix(&self, r: usize) -> Result<Vec<HaarIndex>> {
        self.check_horizon(r)?;
        let mut out = Vec::with_capacity(r);
        for (i, blk) in self.blocks.iter().enumerate() {
            if blk.start >= r {
                break;
            }
            let items = self.block_items(i);
            let take = (r - blk.start).min(blk.len);
            out.extend_from_slice(&items[..take]);
        }
        Ok(out)
    }

    /// The `n` with `u_n = idx`, if it lies within the horizon.
    pub fn position(&self, idx: &HaarIndex) -> Option<usize> {
        if idx.dim() != self.d {
            return None;
        }
        let tag = match &self.scheme {
            Scheme::List { pos } => return pos.get(idx).copied(),
            Scheme::Lex { .. } => 0,
            Scheme::Corridor { .. } => {
                let cube: Vec<i64> = idx.mu().iter().map(|m| m >> idx.level()).collect();
                corridor_of(&cube)
            }
        };
        let &i = self.lookup.get(&(idx.is_father(), idx.level(), tag))?;
        let blk = &self.blocks[i];
        if !blk.contains(idx.mu()) {
            return None;
        }
        let r = blk.rank(idx.mu());
        let within = if blk.father { r } else { r * ((1usize << self.d) - 1) + idx.eps() as usize - 1 };
        Some(blk.start + within + 1)
    }

    /// Largest support level among `u_1..u_R` (fathers count as level 0).
    pub fn max_level(&self, r: usize) -> Result<u32> {
        self.check_horizon(r)?;
        if let Scheme::List { .. } = self.scheme {
            return Ok(self.prefix(r)?.iter().map(|i| i.level()).max().unwrap_or(0));
        }
        Ok(self
            .blocks
            .iter()
            .filter(|b| b.start < r && b.len > 0)
            .map(|b| b.level)
            .max()
            .unwrap_or(0))
    }
}

/// The corridor enumeration on `R^d` with blocks up to `R(m_max)`.
pub fn corridor_enumeration_with_horizon(d: usize, m_max: usize) -> Result<Enumeration> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut blocks = Vec::new();
    let mut tags = Vec::new();
    let mut checkpoints = Vec::new();
    let mut total = 0usize;
    for t in 0..=m_max {
        for k in 0..=t {
            let blk = corridor_block(d, t - k, k);
            total = total.saturating_add(blk.len);
            blocks.push(blk);
            tags.push((t - k) as i64);
        }
        checkpoints.push(total);
    }
    Ok(Enumeration::from_blocks("corridor", d, 1, Scheme::Corridor { checkpoints }, blocks, tags))
}

/// The corridor enumeration with a default horizon (`R(12)` for `d = 1`, `R(6)` otherwise).
pub fn corridor_enumeration(d: usize) -> Result<Enumeration> {
    corridor_enumeration_with_horizon(d, if d == 1 { 12 } else { 6 })
}

/// Father of `[0,1)^d`, then wavelet levels `0..=k_max` inside the unit cube.
pub fn lex_unit_cube_enumeration_with_horizon(d: usize, k_max: u32) -> Result<Enumeration> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut blocks = vec![Block::new(d, true, 0, 0, 1, None)];
    for k in 0..=k_max {
        blocks.push(Block::new(d, false, k, 0, 1i64 << k, None));
    }
    let tags = vec![0; blocks.len()];
    Ok(Enumeration::from_blocks("lex", d, 1, Scheme::Lex { k_max }, blocks, tags))
}

pub fn lex_unit_cube_enumeration(d: usize) -> Result<Enumeration> {
    lex_unit_cube_enumeration_with_horizon(d, if d == 1 { 16 } else { 8 })
}

/// A user-supplied finite enumeration with declared parameter `b`.
pub fn list_enumeration(name: &str, d: usize, b: u32, items: Vec<HaarIndex>) -> Result<Enumeration> {
    let mut pos = HashMap::new();
    for (i, idx) in items.iter().enumerate() {
        if idx.dim() != d {
            return Err(Error::InvalidArgument(format!("{idx} has the wrong dimension")));
        }
        if pos.insert(idx.clone(), i + 1).is_some() {
            return Err(Error::InvalidArgument(format!("{idx} listed twice")));
        }
    }
    let mut blk = Block::new(d, true, 0, 0, 1, None);
    blk.len = items.len();
    let e = Enumeration::from_blocks(name, d, b, Scheme::List { pos }, vec![blk], vec![0]);
    e.cache.lock().unwrap().insert(0, Arc::new(items));
    Ok(e)
}

/// Outcome of an admissibility check; `violation` is the first offending `(n, n')`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub violation: Option<(usize, usize)>,
}

/// Unit cubes `nu` whose dilate `nu + [-reach, 1 + reach]^d` contains the closed support.
fn host_cubes(idx: &HaarIndex, reach: i64, box_grid: &DyadicGrid) -> Vec<Vec<i64>> {
    let k = idx.level();
    let d = idx.dim();
    let mut ranges = Vec::with_capacity(d);
    for (i, &m) in idx.mu().iter().enumerate() {
        let floor_lo = m >> k;
        let ceil_hi = -((-(m + 1)) >> k);
        let a = (ceil_hi - 1 - reach).max(box_grid.lo()[i]);
        let b = (floor_lo + reach).min(box_grid.hi()[i] - 1);
        if a > b {
            return Vec::new();
        }
        ranges.push((a, b));
    }
    let mut out = Vec::new();
    let mut nu: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        out.push(nu.clone());
        let mut ax = d;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            nu[ax] += 1;
            if nu[ax] <= ranges[ax].1 {
                break;
            }
            nu[ax] = ranges[ax].0;
        }
    }
}

fn check_with_reach(e: &Enumeration, r: usize, box_grid: &DyadicGrid, reach: i64) -> Result<AdmissibilityReport> {
    if box_grid.dim() != e.dim() {
        return Err(Error::InvalidArgument("box dimension differs from enumeration".into()));
    }
    let b = e.b();
    let prefix = e.prefix(r)?;
    // earliest position per (cube, level)
    let mut first: HashMap<Vec<i64>, BTreeMap<u32, usize>> = HashMap::new();
    for (i, idx) in prefix.iter().enumerate() {
        let n_new = i + 1;
        let lvl = idx.level();
        let hosts = host_cubes(idx, reach, box_grid);
        let mut worst: Option<usize> = None;
        for nu in &hosts {
            if let Some(levels) = first.get(nu) {
                if let Some(n) = levels.range(lvl + b..).map(|(_, &n)| n).min() {
                    worst = Some(worst.map_or(n, |w: usize| w.min(n)));
                }
            }
        }
        if let Some(n) = worst {
            return Ok(AdmissibilityReport { admissible: false, violation: Some((n, n_new)) });
        }
        for nu in hosts {
            first.entry(nu).or_default().entry(lvl).or_insert(n_new);
        }
    }
    Ok(AdmissibilityReport { admissible: true, violation: None })
}

/// Strong admissibility on the prefix `u_1..u_R`, over the unit cubes of `box_grid`.
pub fn check_strongly_admissible(e: &Enumeration, r: usize, box_grid: &DyadicGrid) -> Result<AdmissibilityReport> {
    check_with_reach(e, r, box_grid, 2)
}

/// Plain admissibility (pairs inside one closed unit cube).
pub fn check_admissible(e: &Enumeration, r: usize, box_grid: &DyadicGrid) -> Result<AdmissibilityReport> {
    check_with_reach(e, r, box_grid, 0)
}

/// `S_R f = sum_{n <= R} u_n*(f) u_n`.
pub fn partial_sum(f: &GridFunction, e: &Enumeration, r: usize) -> Result<GridFunction> {
    if f.dim() != e.dim() {
        return Err(Error::InvalidArgument("function dimension differs from enumeration".into()));
    }
    if r == 0 {
        return Ok(GridFunction::zero(f.grid().clone()));
    }
    let top = e.max_level(r)?;
    let has_wavelets = e.prefix_has_wavelets(r);
    if has_wavelets && top + 1 > f.level() {
        return Err(Error::Resolution(format!("prefix reaches level {top}, grid level is {}", f.level())));
    }
    let mut coeffs = haar::analyze(f, top)?;
    coeffs.retain(|idx, _| e.position(idx).is_some_and(|n| n <= r));
    haar::synthesize(&coeffs, f.grid())
}

impl Enumeration {
    fn prefix_has_wavelets(&self, r: usize) -> bool {
        match self.scheme {
            Scheme::List { .. } => self.prefix(r).map(|p| p.iter().any(|i| !i.is_father())).unwrap_or(false),
            _ => self.blocks.iter().any(|b| b.start < r && !b.father && b.len > 0),
        }
    }
}

/// Per-cube structure of `S_R`: `S_R f = E_N f + sum_kappa T_{N + kappa}[f, a^kappa]`
/// for every `f` supported in the unit cube `nu`.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeDecomposition {
    pub nu: Vec<i64>,
    /// `N_nu >= -1`; `-1` means the averaging part is absent.
    pub level: i32,
    /// Masks for levels `level .. level + b` (level `-1` addresses fathers).
    pub masks: Vec<CoefficientMask>,
}

impl CubeDecomposition {
    /// Right-hand side of the decomposition applied to `f`.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        let mut out = if self.level >= 0 {
            haar::expectation(f, self.level as u32)?
        } else {
            GridFunction::zero(f.grid().clone())
        };
        for m in &self.masks {
            if m.is_empty() || (m.level() >= 0 && m.level() as u32 >= f.level()) {
                continue;
            }
            out = out.add(&haar::masked_level(f, m)?)?;
        }
        Ok(out)
    }

    /// Equivalent form in which a mask selecting every index of its level is
    /// absorbed into the averaging part.
    pub fn canonical(&self) -> CubeDecomposition {
        let d = self.nu.len();
        let mut level = self.level;
        let mut masks: Vec<CoefficientMask> = self.masks.clone();
        while let Some(m) = masks.first() {
            if m.level() != level || !mask_is_complete(m, &self.nu, d) {
                break;
            }
            masks.remove(0);
            level += 1;
        }
        if level < 0 {
            level = -1;
        }
        masks.retain(|m| !m.is_empty());
        CubeDecomposition { nu: self.nu.clone(), level, masks }
    }
}

fn mask_is_complete(m: &CoefficientMask, nu: &[i64], d: usize) -> bool {
    if m.level() < 0 {
        return m.weight(nu, 0) == 1.0;
    }
    let k = m.level() as u32;
    relevant_indices(nu, k, d).iter().all(|i| m.weight(i.mu(), i.eps()) == 1.0)
}

/// Indices of support level `k` inside the unit cube `nu` (level `0` wavelets, not fathers).
fn relevant_indices(nu: &[i64], k: u32, d: usize) -> Vec<HaarIndex> {
    let s = 1i64 << k;
    let lo: Vec<i64> = nu.iter().map(|v| v * s).collect();
    let mut out = Vec::new();
    let mut mu = lo.clone();
    loop {
        for eps in 1..(1u32 << d) {
            out.push(HaarIndex::wavelet(k, mu.clone(), eps));
        }
        let mut ax = d;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            mu[ax] += 1;
            if mu[ax] < lo[ax] + s {
                break;
            }
            mu[ax] = lo[ax];
        }
    }
}

/// Decomposition of `S_R` on every unit cube of `box_grid`.
pub fn decompose_partial_sum(e: &Enumeration, r: usize, box_grid: &DyadicGrid) -> Result<Vec<CubeDecomposition>> {
    let d = e.dim();
    if box_grid.dim() != d {
        return Err(Error::InvalidArgument("box dimension differs from enumeration".into()));
    }
    let b = e.b() as i32;
    let prefix = e.prefix(r)?;
    // deepest level and its position per host cube; members per own cube
    let mut deepest: HashMap<Vec<i64>, (i32, usize)> = HashMap::new();
    let mut members: HashMap<Vec<i64>, Vec<(usize, &HaarIndex)>> = HashMap::new();
    for (i, idx) in prefix.iter().enumerate() {
        let lvl = idx.level() as i32;
        for nu in host_cubes(idx, 2, box_grid) {
            let entry = deepest.entry(nu).or_insert((lvl, i + 1));
            if lvl > entry.0 {
                *entry = (lvl, i + 1);
            }
        }
        let own: Vec<i64> = idx.mu().iter().map(|m| m >> idx.level()).collect();
        if box_grid.with_level(0).is_ok_and(|g| g.contains_cell(&own)) {
            members.entry(own).or_default().push((i + 1, idx));
        }
    }
    let mut out = Vec::new();
    for key in 0..box_grid.with_level(0)?.cell_count() {
        let nu = box_grid.with_level(0)?.cell(key);
        let (big_k, n_star) = deepest.get(&nu).copied().unwrap_or((-1, 0));
        let level = if big_k < b { -1 } else { big_k - b + 1 };
        let mine = members.get(&nu).cloned().unwrap_or_default();
        // everything strictly below `level` must already be enumerated
        if level >= 0 {
            let present = |idx: &HaarIndex| mine.iter().any(|(_, i)| *i == idx);
            let mut required = vec![HaarIndex::father(nu.clone())];
            for k in 0..level as u32 {
                required.extend(relevant_indices(&nu, k, d));
            }
            if let Some(missing) = required.iter().find(|i| !present(i)) {
                let later = e.position(missing).unwrap_or(r + 1);
                return Err(Error::Admissibility { earlier: n_star, later });
            }
        }
        let mut masks = Vec::new();
        for kappa in 0..=b {
            let lvl = level + kappa;
            let entries = mine
                .iter()
                .filter(|(_, i)| if lvl < 0 { i.is_father() } else { !i.is_father() && i.level() as i32 == lvl })
                .map(|(_, i)| ((i.mu().to_vec(), i.eps()), 1.0));
            masks.push(CoefficientMask::new(lvl, entries)?);
        }
        out.push(CubeDecomposition { nu, level, masks });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::C64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Brute-force count of corridor blocks from the support conditions.
    fn brute_block(l: i64, k: u32) -> usize {
        let in_corridor = |c: i64| {
            let outer = c >= -10 * l - 5 && c < 10 * l + 5;
            let inner = l > 0 && c >= -10 * l + 5 && c < 10 * l - 5;
            outer && !inner
        };
        if k == 0 {
            return (-200..200).filter(|&c| in_corridor(c)).count();
        }
        let s = 1i64 << (k - 1);
        (-200 * s..200 * s).filter(|&m| in_corridor(m.div_euclid(s))).count()
    }

    #[test]
    fn corridor_block_sizes() {
        let e = corridor_enumeration(1).unwrap();
        assert_eq!(e.checkpoint(0), Some(10));
        assert_eq!(e.checkpoint(1), Some(40));
        assert_eq!(e.checkpoint(2), Some(100));
        for l in 0..4 {
            for k in 0..5u32 {
                let blk = corridor_block(1, l as usize, k as usize);
                assert_eq!(blk.len, brute_block(l, k), "l={l} k={k}");
                let base = if l == 0 { 10 } else { 20 };
                let want = if k == 0 { base } else { base << (k - 1) };
                assert_eq!(blk.len, want);
            }
        }
        let d2 = corridor_block(2, 2, 3);
        assert_eq!(d2.len, 100 * (25 - 9) * 16 * 3);
    }

    #[test]
    fn corridor_starts_with_unit_fathers() {
        let e = corridor_enumeration(1).unwrap();
        for n in 1..=10 {
            assert_eq!(e.at(n).unwrap(), HaarIndex::father(vec![n as i64 - 6]));
        }
        assert!(matches!(e.at(e.horizon() + 1), Err(Error::Horizon { .. })));
    }

    #[test]
    fn positions_invert_the_enumeration() {
        for e in [corridor_enumeration_with_horizon(1, 6).unwrap(), corridor_enumeration_with_horizon(2, 2).unwrap()] {
            let all = e.prefix(e.horizon()).unwrap();
            for (i, idx) in all.iter().enumerate() {
                assert_eq!(e.position(idx), Some(i + 1), "{idx}");
            }
            let mut sorted = all.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), all.len());
        }
        let lex = lex_unit_cube_enumeration_with_horizon(2, 3).unwrap();
        for (i, idx) in lex.prefix(lex.horizon()).unwrap().iter().enumerate() {
            assert_eq!(lex.position(idx), Some(i + 1));
        }
        assert_eq!(lex.position(&HaarIndex::wavelet(1, vec![2, 0], 1)), None);
    }

    #[test]
    fn lex_order_and_counts() {
        let e = lex_unit_cube_enumeration(1).unwrap();
        assert_eq!(e.at(1).unwrap(), HaarIndex::father(vec![0]));
        assert_eq!(e.at(2).unwrap(), HaarIndex::wavelet(0, vec![0], 1));
        assert_eq!(e.at(3).unwrap(), HaarIndex::wavelet(1, vec![0], 1));
        assert_eq!(e.at(4).unwrap(), HaarIndex::wavelet(1, vec![1], 1));
        for d in 1..=3usize {
            let e = lex_unit_cube_enumeration_with_horizon(d, 3).unwrap();
            for k in 0..=3usize {
                let want = 1 + (0..k).map(|j| ((1usize << d) - 1) << (j * d)).sum::<usize>();
                assert_eq!(e.checkpoint(k), Some(want));
            }
        }
    }

    #[test]
    fn admissibility_checks() {
        let e = corridor_enumeration(1).unwrap();
        let r = e.checkpoint(4).unwrap();
        let bx = DyadicGrid::interval(0, -45, 45).unwrap();
        assert!(check_strongly_admissible(&e, r, &bx).unwrap().admissible);
        let lex = lex_unit_cube_enumeration(2).unwrap();
        let unit = DyadicGrid::unit_cube(2, 0).unwrap();
        assert!(check_strongly_admissible(&lex, lex.checkpoint(4).unwrap(), &unit).unwrap().admissible);
        let rev: Vec<HaarIndex> = lex_unit_cube_enumeration(1).unwrap().prefix(4).unwrap().into_iter().rev().collect();
        let bad = list_enumeration("reversed", 1, 1, rev).unwrap();
        let rep = check_strongly_admissible(&bad, 4, &DyadicGrid::unit_cube(1, 0).unwrap()).unwrap();
        assert_eq!(rep.violation, Some((1, 3)));
        let pair = list_enumeration("pair", 1, 1, vec![HaarIndex::wavelet(1, vec![0], 1), HaarIndex::father(vec![0])]).unwrap();
        let rep = check_strongly_admissible(&pair, 2, &DyadicGrid::unit_cube(1, 0).unwrap()).unwrap();
        assert_eq!(rep, AdmissibilityReport { admissible: false, violation: Some((1, 2)) });
        assert!(!check_admissible(&pair, 2, &DyadicGrid::unit_cube(1, 0).unwrap()).unwrap().admissible);
    }

    fn random_support(seed: u64, lo: i64, hi: i64, j: u32) -> GridFunction {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DyadicGrid::interval(j, lo, hi).unwrap();
        GridFunction::sample(g, |_| C64::new(rng.gen_range(-1.0..1.0), 0.0)).unwrap()
    }

    #[test]
    fn checkpoints_are_expectations() {
        let e = corridor_enumeration(1).unwrap();
        let f = random_support(1, -5, 5, 7);
        for m in 0..=6 {
            let s = partial_sum(&f, &e, e.checkpoint(m).unwrap()).unwrap();
            assert!(s.max_abs_diff(&haar::expectation(&f, m as u32).unwrap()) < 1e-12, "m={m}");
        }
        let f = random_support(2, 15, 25, 6);
        for m in 2..=5 {
            let s = partial_sum(&f, &e, e.checkpoint(m).unwrap()).unwrap();
            assert!(s.max_abs_diff(&haar::expectation(&f, m as u32 - 2).unwrap()) < 1e-12);
        }
        assert!(partial_sum(&f, &e, 0).unwrap().is_zero());
    }

    #[test]
    fn decomposition_examples() {
        let e = corridor_enumeration(1).unwrap();
        let bx = DyadicGrid::interval(0, -5, 5).unwrap();
        for m in 1..=4 {
            let dec = decompose_partial_sum(&e, e.checkpoint(m).unwrap(), &bx).unwrap();
            for c in dec.iter().filter(|c| c.nu[0] > -5 && c.nu[0] < 4) {
                let can = c.canonical();
                assert_eq!(can.level, m as i32, "nu={:?}", c.nu);
                assert!(can.masks.is_empty());
            }
        }
        let lex = lex_unit_cube_enumeration(1).unwrap();
        let dec = decompose_partial_sum(&lex, 1, &DyadicGrid::unit_cube(1, 0).unwrap()).unwrap();
        assert_eq!(dec[0].level, -1);
        assert_eq!(dec[0].masks[0].level(), -1);
        assert_eq!(dec[0].masks[0].weight(&[0], 0), 1.0);
    }

    #[test]
    fn decomposition_matches_partial_sums_between_checkpoints() {
        let e = corridor_enumeration(1).unwrap();
        let bx = DyadicGrid::interval(0, -15, 15).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let r = rng.gen_range(1..e.checkpoint(5).unwrap());
            let dec = decompose_partial_sum(&e, r, &bx).unwrap();
            for c in dec.iter().step_by(3) {
                let nu = c.nu[0];
                let f = random_support(rng.gen(), nu, nu + 1, 7).embed(&DyadicGrid::interval(7, -15, 15).unwrap()).unwrap();
                let lhs = partial_sum(&f, &e, r).unwrap();
                assert!(lhs.max_abs_diff(&c.apply(&f).unwrap()) < 1e-12);
                assert!(lhs.max_abs_diff(&c.canonical().apply(&f).unwrap()) < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn partial_sums_are_projections(seed in 0u64..1000, frac in 0.0f64..1.0) {
            let e = corridor_enumeration(1).unwrap();
            let r = 1 + (frac * (e.checkpoint(5).unwrap() - 1) as f64) as usize;
            let f = random_support(seed, -8, 8, 6);
            let once = partial_sum(&f, &e, r).unwrap();
            let twice = partial_sum(&once, &e, r).unwrap();
            prop_assert!(once.max_abs_diff(&twice) < 1e-12);
            let n = 1 + (seed as usize % r);
            let u = haar::haar_eval(&e.at(n).unwrap(), f.grid());
            if let Ok(u) = u {
                if !u.is_zero() {
                    prop_assert!(partial_sum(&u, &e, r).unwrap().max_abs_diff(&u) == 0.0);
                }
            }
        }

        #[test]
        fn checkpoint_growth(m in 0usize..8) {
            let e = corridor_enumeration(1).unwrap();
            let p: usize = (0..=m + 1).map(|i| corridor_block(1, m + 1 - i, i).len).sum();
            prop_assert_eq!(e.checkpoint(m + 1).unwrap() - e.checkpoint(m).unwrap(), p);
        }
    }
}
