//! Extremal test functions, each sampled at cell midpoints on a level-`J`
//! grid, together with closed-form images under the operators they probe.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use crate::enumeration::corridor_enumeration;
use crate::error::{Error, Result};
use crate::grid::{tensor, DyadicGrid, GridFunction, C64};
use crate::haar::{odd_block, HaarIndex};
use crate::kernels::{make_gl, Kernel};

/// Smooth cutoff: 1 on `[inner_lo, inner_hi]`, 0 outside `(outer_lo, outer_hi)`,
/// with degree-7 smoothstep ramps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plateau {
    pub outer_lo: f64,
    pub inner_lo: f64,
    pub inner_hi: f64,
    pub outer_hi: f64,
}

fn smoothstep(z: f64) -> f64 {
    z.powi(4) * (35.0 - 84.0 * z + 70.0 * z * z - 20.0 * z * z * z)
}

impl Plateau {
    pub fn new(outer_lo: f64, inner_lo: f64, inner_hi: f64, outer_hi: f64) -> Result<Self> {
        if !(outer_lo < inner_lo && inner_lo <= inner_hi && inner_hi < outer_hi) {
            return Err(Error::InvalidArgument("plateau breakpoints must increase".into()));
        }
        Ok(Plateau { outer_lo, inner_lo, inner_hi, outer_hi })
    }

    /// 1 on `[1/4, 3/4]`, supported in `(1/8, 7/8)`.
    pub fn unit() -> Self {
        Plateau { outer_lo: 0.125, inner_lo: 0.25, inner_hi: 0.75, outer_hi: 0.875 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.outer_lo || t >= self.outer_hi {
            0.0
        } else if t < self.inner_lo {
            smoothstep((t - self.outer_lo) / (self.inner_lo - self.outer_lo))
        } else if t <= self.inner_hi {
            1.0
        } else {
            smoothstep((self.outer_hi - t) / (self.outer_hi - self.inner_hi))
        }
    }
}

/// A constructed test function with its pieces and placement.
#[derive(Clone, Debug)]
pub struct Extremal {
    pub family: &'static str,
    pub f: GridFunction,
    /// Cell boxes `[lo, hi)` that contain the pieces, one per piece.
    pub windows: Vec<(Vec<i64>, Vec<i64>)>,
    /// Integer anchors of translated pieces (empty when not applicable).
    pub anchors: Vec<Vec<i64>>,
    /// Frequency or scale level of each piece.
    pub levels: Vec<u32>,
}

impl Extremal {
    /// Bounding box of all windows.
    pub fn support_box(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        let first = self.windows.first()?;
        let mut lo = first.0.clone();
        let mut hi = first.1.clone();
        for (a, b) in &self.windows {
            for i in 0..lo.len() {
                lo[i] = lo[i].min(a[i]);
                hi[i] = hi[i].max(b[i]);
            }
        }
        Some((lo, hi))
    }
}

fn cell_range(a: f64, b: f64, level: u32) -> (i64, i64) {
    let s = (level as f64).exp2();
    ((a * s).floor() as i64, (b * s).ceil() as i64)
}

fn midpoint(mu: i64, level: u32) -> f64 {
    (mu as f64 + 0.5) * (-(level as f64)).exp2()
}

/// `x' -> prod chi(x_i)` sampled on `[0,1)^{d'}` at `level`, as a grid function
/// (`None` when `d' = 0`).
fn sample_cross_section(chi: &Plateau, dp: usize, level: u32) -> Result<Option<GridFunction>> {
    if dp == 0 {
        return Ok(None);
    }
    let (a, b) = cell_range(chi.outer_lo, chi.outer_hi, level);
    let grid = DyadicGrid::covering(dp, level, &vec![a.min(0); dp], &vec![b.max(1 << level); dp])?;
    let line: Vec<(i64, f64)> = (a..b).map(|m| (m, chi.eval(midpoint(m, level)))).filter(|(_, v)| *v != 0.0).collect();
    let mut cells = Vec::new();
    let total = line.len().pow(dp as u32);
    for flat in 0..total {
        let mut rest = flat;
        let mut mu = vec![0i64; dp];
        let mut v = 1.0;
        for i in (0..dp).rev() {
            let (m, w) = line[rest % line.len()];
            rest /= line.len();
            mu[i] = m;
            v *= w;
        }
        cells.push((mu, C64::new(v, 0.0)));
    }
    Ok(Some(GridFunction::from_cells(grid, cells)?))
}

/// `base (x) chi(x_2) ... chi(x_d)` with `chi` sampled at the level of `base`.
pub fn make_tensorized(base: &GridFunction, chi: &Plateau, d: usize) -> Result<GridFunction> {
    if base.dim() != 1 || d == 0 {
        return Err(Error::InvalidArgument("tensorization needs a one-dimensional base and d >= 1".into()));
    }
    match sample_cross_section(chi, d - 1, base.level())? {
        None => Ok(base.clone()),
        Some(cross) => tensor(base, &cross),
    }
}

/// Frequencies `j` with `N/8 < j < N/4`.
pub fn s1_frequencies(n: u32) -> Vec<u32> {
    (0..n).filter(|&j| 8 * j > n && 4 * j < n).collect()
}

/// `chi(x') sum_{N/8 < j < N/4} 2^{-j} e^{2 pi i 2^j x_1} u(N x_1 - 2j)`.
pub fn make_fn_s1(n: u32, d: usize, level: u32) -> Result<Extremal> {
    let freqs = s1_frequencies(n);
    if freqs.is_empty() {
        return Err(Error::InvalidArgument(format!("no active frequencies for N = {n}")));
    }
    let need = (n / 4 + 4).max((n as f64).log2().ceil() as u32 + 4);
    if level < need {
        return Err(Error::Resolution(format!("level {level} below {need} for N = {n}")));
    }
    let u = Plateau::unit();
    let nf = n as f64;
    let grid = DyadicGrid::interval(level, 0, 1)?;
    let mut cells = Vec::new();
    let mut windows = Vec::new();
    for &j in &freqs {
        let (a, b) = cell_range((2.0 * j as f64 + u.outer_lo) / nf, (2.0 * j as f64 + u.outer_hi) / nf, level);
        let amp = (-(j as f64)).exp2();
        let freq = (j as f64).exp2();
        for m in a..b {
            let x = midpoint(m, level);
            let w = u.eval(nf * x - 2.0 * j as f64);
            if w != 0.0 {
                cells.push((vec![m], C64::from_polar(amp * w, 2.0 * PI * freq * x)));
            }
        }
        windows.push((vec![a], vec![b]));
    }
    let base = GridFunction::from_cells(grid, cells)?;
    let f = make_tensorized(&base, &u, d)?;
    let cross = u.outer_lo;
    let (ca, cb) = cell_range(cross, u.outer_hi, level);
    for w in &mut windows {
        w.0.extend(std::iter::repeat_n(ca, d - 1));
        w.1.extend(std::iter::repeat_n(cb, d - 1));
    }
    Ok(Extremal { family: "s1-growth", f, windows, anchors: Vec::new(), levels: freqs })
}

/// `g_l` translated by `shift` cells of the target level.
fn placed_gl(eta: &Kernel, l: u32, d: usize, level: u32, shift: &[i64]) -> Result<(GridFunction, (Vec<i64>, Vec<i64>))> {
    if l + eta.level() > level {
        return Err(Error::Resolution(format!("bump of level {l} needs grid level {}", l + eta.level())));
    }
    let g = make_gl(eta, l, d)?.at_level(level).shrink_to_support().translate(shift)?;
    let r = 1i64 << (level - l - eta.level());
    let w = eta.values().len() as i64 * r;
    let lo: Vec<i64> = shift.iter().map(|s| s + eta.start() * r).collect();
    let hi: Vec<i64> = lo.iter().map(|a| a + w).collect();
    Ok((g, (lo, hi)))
}

fn sum_pieces(pieces: Vec<GridFunction>, grid: DyadicGrid) -> Result<GridFunction> {
    let mut cells = Vec::new();
    for p in pieces {
        cells.extend(p.iter());
    }
    GridFunction::from_cells(grid, cells)
}

fn check_disjoint(windows: &[(Vec<i64>, Vec<i64>)]) -> Result<()> {
    for (i, a) in windows.iter().enumerate() {
        for b in &windows[i + 1..] {
            if (0..a.0.len()).all(|t| a.0[t] < b.1[t] && b.0[t] < a.1[t]) {
                return Err(Error::InvalidArgument("pieces overlap".into()));
            }
        }
    }
    Ok(())
}

/// Default anchors `(m, 1, ..., 1)`, `m = 1..=count`.
pub fn default_dpd_anchors(count: usize, d: usize) -> Vec<Vec<i64>> {
    (1..=count as i64)
        .map(|m| {
            let mut z = vec![1i64; d];
            z[0] = m;
            z
        })
        .collect()
}

/// `sum_{m=1}^{M} g_{N+m}(x - 2^{-N+5} z_m)` with `g_l = 2^{ld} prod eta(2^l x_i)`.
pub fn make_f_dpd(n: u32, m_active: u32, anchors: &[Vec<i64>], eta: &Kernel, d: usize, level: u32) -> Result<Extremal> {
    make_f_dpd_graded(n, m_active, anchors, |_| Ok(eta.clone()), d, level)
}

/// [`make_f_dpd`] with the profile of `g_l` given by `eta_at(l)`, e.g. a
/// smooth profile sampled at the grid resolution `J - l`.
pub fn make_f_dpd_graded<E>(n: u32, m_active: u32, anchors: &[Vec<i64>], eta_at: E, d: usize, level: u32) -> Result<Extremal>
where
    E: Fn(u32) -> Result<Kernel>,
{
    if anchors.len() != m_active as usize {
        return Err(Error::InvalidArgument("one anchor per active term".into()));
    }
    if n < 5 && level < 5 - n {
        return Err(Error::Resolution("anchor lattice finer than the grid".into()));
    }
    let spacing = (level + 5 - n) as i64;
    let mut pieces = Vec::new();
    let mut windows = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, z) in anchors.iter().enumerate() {
        if z.len() != d || !seen.insert(z.clone()) {
            return Err(Error::InvalidArgument("anchors must be distinct points of Z^d".into()));
        }
        let shift: Vec<i64> = z.iter().map(|&c| if spacing >= 0 { c << spacing } else { 0 }).collect();
        let l = n + idx as u32 + 1;
        let (g, w) = placed_gl(&eta_at(l)?, l, d, level, &shift)?;
        pieces.push(g);
        windows.push(w);
    }
    check_disjoint(&windows)?;
    let ext = bounding_grid(&windows, d, level)?;
    let f = sum_pieces(pieces, ext)?;
    Ok(Extremal { family: "dpd", f, windows, anchors: anchors.to_vec(), levels: (n + 1..=n + m_active).collect() })
}

fn bounding_grid(windows: &[(Vec<i64>, Vec<i64>)], d: usize, level: u32) -> Result<DyadicGrid> {
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for (a, b) in windows {
        for i in 0..d {
            lo[i] = lo[i].min(a[i]);
            hi[i] = hi[i].max(b[i]);
        }
    }
    DyadicGrid::covering(d, level, &lo, &hi)
}

/// `sum_z h_N(. - 2^{-N+5} z)` on `grid`: the level-`N` averages of [`make_f_dpd`].
pub fn dpd_expectation_oracle(n: u32, anchors: &[Vec<i64>], grid: &DyadicGrid) -> Result<GridFunction> {
    let level = grid.level();
    let spacing = level as i64 + 5 - n as i64;
    let d = grid.dim();
    let w = 1i64 << (level - n);
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for z in anchors {
        for i in 0..d {
            lo[i] = lo[i].min((z[i] << spacing) - w);
            hi[i] = hi[i].max((z[i] << spacing) + w);
        }
    }
    let host = DyadicGrid::covering(d, level, &lo, &hi)?.hull(grid)?;
    let block = odd_block(n, &DyadicGrid::covering(d, level, &vec![-w; d], &vec![w; d])?)?;
    let mut cells = Vec::new();
    for z in anchors {
        let shift: Vec<i64> = z.iter().map(|&c| c << spacing).collect();
        cells.extend(block.translate(&shift)?.iter());
    }
    GridFunction::from_cells(host, cells)
}

/// Corridor anchors `z_l = 10 l e_1`: the threefold dilate of `z_l + [0,1)` lies in `A_l`.
pub fn corridor_anchor(l: u32) -> i64 {
    10 * l as i64
}

/// `sum_{l=1}^{m} g_j(x - z_l)` spread over the corridors `A_1, ..., A_m` (d = 1).
pub fn make_fmj_corridor(m: u32, j: u32, eta: &Kernel, level: u32) -> Result<Extremal> {
    if j <= m {
        return Err(Error::InvalidArgument(format!("need j > m, got j = {j}, m = {m}")));
    }
    let mut pieces = Vec::new();
    let mut windows = Vec::new();
    let mut anchors = Vec::new();
    for l in 1..=m {
        let z = corridor_anchor(l);
        let (g, w) = placed_gl(eta, j, 1, level, &[z << level])?;
        pieces.push(g);
        windows.push(w);
        anchors.push(vec![z]);
    }
    let grid = bounding_grid(&windows, 1, level)?;
    let f = sum_pieces(pieces, grid)?;
    Ok(Extremal { family: "corridor", f, windows, anchors, levels: vec![j; m as usize] })
}

/// `sum_l h_{m-l}(. - z_l)`: the corridor partial sum `S_{R(m)}` of [`make_fmj_corridor`].
pub fn corridor_partial_sum_oracle(m: u32, grid: &DyadicGrid) -> Result<GridFunction> {
    let level = grid.level();
    let mut cells = Vec::new();
    let mut lo = grid.first_cell(0);
    let mut hi = grid.end_cell(0);
    for l in 1..=m {
        let n = m - l;
        let w = 1i64 << (level - n);
        let block = odd_block(n, &DyadicGrid::covering(1, level, &[-w], &[w])?)?;
        let shift = corridor_anchor(l) << level;
        lo = lo.min(shift - w);
        hi = hi.max(shift + w);
        cells.extend(block.translate(&[shift])?.iter());
    }
    GridFunction::from_cells(DyadicGrid::covering(1, level, &[lo], &[hi])?, cells)
}

/// Checks that each corridor piece sits inside its corridor `A_l`.
pub fn corridor_pieces_in_corridors(ext: &Extremal) -> bool {
    let level = ext.f.level();
    let scale = 1i64 << level;
    ext.windows.iter().enumerate().all(|(i, (a, b))| {
        let l = i as i64 + 1;
        let (outer_lo, outer_hi) = (-10 * l - 5, 10 * l + 5);
        let (inner_lo, inner_hi) = (-10 * l + 5, 10 * l - 5);
        let x0 = a[0].div_euclid(scale);
        let x1 = (b[0] + scale - 1).div_euclid(scale);
        x0 >= outer_lo && x1 <= outer_hi && (x1 <= inner_lo || x0 >= inner_hi)
    })
}

/// Companion of the corridor family: the enumeration it is paired with.
pub fn corridor_family_enumeration() -> Result<crate::enumeration::Enumeration> {
    corridor_enumeration(1)
}

/// `F_N = 2^{Nd} 1_{[0, 2^{-N})^d}`, its odd extension `G_N(x) = F_N(x) - F_N(-x)`,
/// and the index set spanning `A(N)`.
pub fn make_gn_fn(n: u32, d: usize, level: u32) -> Result<(GridFunction, GridFunction, BTreeSet<HaarIndex>)> {
    if level < n {
        return Err(Error::Resolution(format!("level {level} below N = {n}")));
    }
    let grid = DyadicGrid::cube(d, level, -1, 1)?;
    let w = 1i64 << (level - n);
    let height = ((n as usize * d) as f64).exp2();
    let count = w.pow(d as u32);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for t in 0..count {
        let mut rest = t;
        let mut mu = vec![0i64; d];
        for i in (0..d).rev() {
            mu[i] = rest % w;
            rest /= w;
        }
        let mirrored: Vec<i64> = mu.iter().map(|c| -c - 1).collect();
        pos.push((mu, C64::new(height, 0.0)));
        neg.push((mirrored, C64::new(-height, 0.0)));
    }
    let f = GridFunction::from_cells(grid.clone(), pos.clone())?;
    pos.extend(neg);
    let g = GridFunction::from_cells(grid, pos)?;
    Ok((g, f, block_span_indices(n, d)))
}

/// `{father 0} U {h^eps_{k,0} : k < N, eps != 0}`, of size `(2^d - 1) N + 1`.
pub fn block_span_indices(n: u32, d: usize) -> BTreeSet<HaarIndex> {
    let mut set = BTreeSet::new();
    set.insert(HaarIndex::father(vec![0; d]));
    for k in 0..n {
        for eps in 1..(1u32 << d) {
            set.insert(HaarIndex::wavelet(k, vec![0; d], eps));
        }
    }
    set
}

/// `x_1 eta(x)` with `eta = 1` on `(1/8, 7/8)^d`, supported in `(1/16, 15/16)^d`.
pub fn make_density_counterexample(d: usize, level: u32) -> Result<GridFunction> {
    if level < 6 {
        return Err(Error::Resolution("density counterexample needs level >= 6".into()));
    }
    let eta = Plateau::new(1.0 / 16.0, 0.125, 0.875, 15.0 / 16.0)?;
    let (a, b) = cell_range(eta.outer_lo, eta.outer_hi, level);
    let mut base = Vec::new();
    for m in a..b {
        let x = midpoint(m, level);
        let v = x * eta.eval(x);
        if v != 0.0 {
            base.push((vec![m], C64::new(v, 0.0)));
        }
    }
    let base = GridFunction::from_cells(DyadicGrid::interval(level, 0, 1)?, base)?;
    make_tensorized(&base, &eta, d)
}

/// The staircase `sum_k (k + 1/2) 2^{-N} 1_{[k 2^{-N}, (k+1) 2^{-N})}(x_1)` on the
/// cells of `grid` inside `(1/4, 3/4) x [0,1)^{d-1}`.
pub fn staircase_oracle(n: u32, grid: &DyadicGrid) -> Result<GridFunction> {
    let level = grid.level();
    if n > level || n < 2 {
        return Err(Error::Resolution("staircase needs 2 <= N <= level".into()));
    }
    let d = grid.dim();
    let (a, b) = (1i64 << (level - 2), 3i64 << (level - 2));
    let side = 1i64 << level;
    let mut cells = Vec::new();
    let rest_count = side.pow(d as u32 - 1);
    for m in a..b {
        let k = m >> (level - n);
        let v = (k as f64 + 0.5) * (-(n as f64)).exp2();
        for t in 0..rest_count {
            let mut mu = vec![m; d];
            let mut r = t;
            for i in (1..d).rev() {
                mu[i] = r % side;
                r /= side;
            }
            cells.push((mu, C64::new(v, 0.0)));
        }
    }
    GridFunction::from_cells(grid.clone(), cells)
}

/// `sum_{I in D_N} f(c_I) 1_I`, reading `f` at the center of each level-`N` cube.
pub fn make_step_approximant(f: &GridFunction, n: u32) -> Result<GridFunction> {
    let level = f.level();
    if n > level {
        return Err(Error::Resolution(format!("N = {n} above grid level {level}")));
    }
    if n == level {
        return Ok(f.clone());
    }
    let half = 1i64 << (level - n - 1);
    let coarse = f.grid().with_level(n)?;
    let mut seen = BTreeSet::new();
    let mut cells = Vec::new();
    for (mu, _) in f.iter() {
        let c: Vec<i64> = mu.iter().map(|&m| m >> (level - n)).collect();
        if seen.insert(c.clone()) {
            let center: Vec<i64> = c.iter().map(|&m| (m << (level - n)) + half).collect();
            let v = f.get(&center);
            if v != C64::new(0.0, 0.0) {
                cells.push((c, v));
            }
        }
    }
    Ok(GridFunction::from_cells(coarse, cells)?.at_level(level))
}

/// Samples a function of `x` at the cell midpoints of `grid`.
pub fn sample_smooth<F: Fn(&[f64]) -> f64>(grid: DyadicGrid, f: F) -> Result<GridFunction> {
    GridFunction::sample(grid, |x| C64::new(f(x), 0.0))
}

/// Family parameters for the command line `make` entry point.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremalSpec {
    pub family: String,
    pub n: u32,
    pub m: u32,
    pub j: u32,
    pub m_active: u32,
    pub d: usize,
    pub level: u32,
}

impl ExtremalSpec {
    pub const FAMILIES: &'static [&'static str] = &["s1-growth", "dpd", "corridor", "gn", "fn", "density"];

    pub fn build(&self) -> Result<GridFunction> {
        let eta = || crate::kernels::make_eta_odd(1, 2);
        match self.family.as_str() {
            "s1-growth" => Ok(make_fn_s1(self.n, self.d, self.level)?.f),
            "dpd" => {
                let anchors = default_dpd_anchors(self.m_active as usize, self.d);
                let level = self.level;
                let eta_at = |l: u32| crate::kernels::make_eta_smooth(1, level.saturating_sub(l));
                Ok(make_f_dpd_graded(self.n, self.m_active, &anchors, eta_at, self.d, level)?.f)
            }
            "corridor" => Ok(make_fmj_corridor(self.m, self.j, &eta()?, self.level)?.f),
            "gn" => Ok(make_gn_fn(self.n, self.d, self.level)?.0),
            "fn" => Ok(make_gn_fn(self.n, self.d, self.level)?.1),
            "density" => make_density_counterexample(self.d, self.level),
            other => Err(Error::InvalidArgument(format!("unknown family {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumeration::partial_sum;
    use crate::grid::{second_difference, LebesgueExponent};
    use crate::haar::{expectation, project};
    use crate::kernels::make_eta_odd;

    fn nonzero_inside(f: &GridFunction, windows: &[(Vec<i64>, Vec<i64>)]) -> bool {
        f.iter().all(|(mu, _)| windows.iter().any(|(a, b)| (0..mu.len()).all(|i| a[i] <= mu[i] && mu[i] < b[i])))
    }

    #[test]
    fn s1_block_counts() {
        assert_eq!(s1_frequencies(32), vec![5, 6, 7]);
        assert_eq!(s1_frequencies(16), vec![3]);
        assert_eq!(s1_frequencies(20), vec![3, 4]);
        assert!(matches!(make_fn_s1(16, 1, 7), Err(Error::Resolution(_))));
    }

    #[test]
    fn s1_blocks_are_disjoint_and_supported_in_unit_cube() {
        let e = make_fn_s1(32, 1, 14).unwrap();
        assert_eq!(e.windows.len(), 3);
        check_disjoint(&e.windows).unwrap();
        assert!(nonzero_inside(&e.f, &e.windows));
        let (a, b) = e.f.support_cells().unwrap();
        assert!(a[0] > 0 && b[0] < 1 << 14);
        for (w, &j) in e.windows.iter().zip(&e.levels) {
            let centre = 2.0 * j as f64 / 32.0;
            let s = (14f64).exp2();
            assert!(w.0[0] as f64 / s > centre - 2.0 / 32.0 && (w.1[0] as f64) / s < centre + 2.0 / 32.0);
        }
        let e2 = make_fn_s1(16, 2, 8).unwrap();
        assert!(nonzero_inside(&e2.f, &e2.windows));
        // plateau of chi recovers the base
        let base = make_fn_s1(16, 1, 8).unwrap().f;
        for (mu, v) in base.iter() {
            assert_eq!(e2.f.get(&[mu[0], 128]), v);
        }
    }

    #[test]
    fn dpd_expectation_matches_oracle() {
        let eta = make_eta_odd(1, 2).unwrap();
        for d in 1..=2 {
            for (n, m_active) in [(6u32, 1u32), (6, 3), (8, 2)] {
                if d == 2 && n == 8 {
                    continue;
                }
                let level = n + m_active + 2;
                let anchors = default_dpd_anchors(m_active as usize, d);
                let e = make_f_dpd(n, m_active, &anchors, &eta, d, level).unwrap();
                assert!(nonzero_inside(&e.f, &e.windows));
                let got = expectation(&e.f, n).unwrap();
                let want = dpd_expectation_oracle(n, &anchors, e.f.grid()).unwrap();
                assert!(got.max_abs_diff(&want) < 1e-12, "d={d} N={n} M={m_active}");
                assert_eq!(got.nnz(), want.nnz());
            }
        }
        let anchors = vec![vec![1], vec![1]];
        assert!(make_f_dpd(6, 2, &anchors, &eta, 1, 10).is_err());
    }

    #[test]
    fn dpd_norm_adds_over_pieces() {
        let eta = make_eta_odd(1, 2).unwrap();
        let p = LebesgueExponent::Finite(0.5);
        let e = make_f_dpd(6, 3, &default_dpd_anchors(3, 1), &eta, 1, 11).unwrap();
        let total = e.f.lp_norm(p).powf(0.5);
        let parts: f64 = (0..3)
            .map(|i| {
                let (g, _) = placed_gl(&eta, 7 + i, 1, 11, &[e.anchors[i as usize][0] << 10]).unwrap();
                g.lp_norm(p).powf(0.5)
            })
            .sum();
        assert!((total - parts).abs() < 1e-12 * total);
    }

    #[test]
    fn corridor_family_partial_sum() {
        let eta = make_eta_odd(1, 2).unwrap();
        let en = corridor_family_enumeration().unwrap();
        for (m, j) in [(1u32, 3u32), (2, 4), (3, 5)] {
            let e = make_fmj_corridor(m, j, &eta, j + 2).unwrap();
            assert_eq!(e.windows.len(), m as usize);
            assert!(corridor_pieces_in_corridors(&e));
            check_disjoint(&e.windows).unwrap();
            let r = en.checkpoint(m as usize).unwrap();
            let s = partial_sum(&e.f, &en, r).unwrap();
            let want = corridor_partial_sum_oracle(m, e.f.grid()).unwrap();
            assert!(s.max_abs_diff(&want) < 1e-12, "m={m}");
        }
        assert!(make_fmj_corridor(3, 3, &eta, 8).is_err());
    }

    #[test]
    fn block_pair_projection() {
        for d in 1..=2 {
            for n in [1u32, 3, 5] {
                let (g, f, idx) = make_gn_fn(n, d, n + 1).unwrap();
                assert_eq!(idx.len(), ((1 << d) - 1) * n as usize + 1);
                assert!(g.integral().norm() < 1e-15);
                let proj = project(&g, &idx).unwrap();
                assert!(proj.max_abs_diff(&f) < 1e-12, "d={d} N={n}");
            }
        }
    }

    #[test]
    fn tensorized_block_pair_projection() {
        let n = 3;
        let (g, f, _) = make_gn_fn(n, 1, 6).unwrap();
        let chi = Plateau::new(-0.5, 0.0, 1.0, 1.5).unwrap();
        let g2 = make_tensorized(&g, &chi, 2).unwrap();
        let mut idx = BTreeSet::new();
        idx.insert(HaarIndex::father(vec![0, 0]));
        // x_1-wavelets at the origin column, constant across the cross section
        for k in 0..n {
            for nu in 0..1i64 << k {
                idx.insert(HaarIndex::wavelet_from_bits(k, vec![0, nu], &[1, 0]));
            }
        }
        let proj = project(&g2, &idx).unwrap();
        let ones = GridFunction::sample(DyadicGrid::interval(6, 0, 1).unwrap(), |_| C64::new(1.0, 0.0)).unwrap();
        let want = tensor(&f, &ones).unwrap();
        assert!(proj.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn density_staircase_is_exact() {
        for d in 1..=2 {
            let level = if d == 1 { 12 } else { 7 };
            let f = make_density_counterexample(d, level).unwrap();
            for n in 3..=level.min(8) {
                let e = expectation(&f, n).unwrap();
                let stair = staircase_oracle(n, f.grid()).unwrap();
                let scale = 1i64 << level;
                for (mu, v) in stair.iter() {
                    if mu[1..].iter().all(|&c| 4 * c >= scale && 4 * c < 3 * scale) {
                        assert_eq!(e.get(&mu), v, "d={d} N={n} mu={mu:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn density_second_differences_are_quadratic() {
        let f = make_density_counterexample(1, 14).unwrap();
        let p = LebesgueExponent::Finite(1.0);
        // ||Delta^2_h f||_1 <= h^2 ||f''||_1 for the smooth profile
        let eta = Plateau::new(1.0 / 16.0, 0.125, 0.875, 15.0 / 16.0).unwrap();
        let g = |x: f64| x * eta.eval(x);
        let (n, e) = (200_000, 1e-4);
        let curvature: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                ((g(x + e) - 2.0 * g(x) + g(x - e)) / (e * e)).abs() / n as f64
            })
            .sum();
        for i in 4..9 {
            let h = (-(i as f64)).exp2();
            let r = second_difference(&f, 0, h).unwrap().lp_norm(p) / (h * h);
            assert!(r <= 1.01 * curvature, "h={h}: {r} vs {curvature}");
        }
    }

    #[test]
    fn step_approximant() {
        let grid = DyadicGrid::interval(10, 0, 1).unwrap();
        let f = sample_smooth(grid, |x| (PI * x[0]).sin().powi(2)).unwrap();
        let p = LebesgueExponent::Finite(2.0);
        let errs: Vec<f64> = (3..8).map(|n| f.sub(&make_step_approximant(&f, n).unwrap()).unwrap().lp_norm(p)).collect();
        for w in errs.windows(2) {
            let ratio = w[1] / w[0];
            assert!(ratio > 0.4 && ratio < 0.6, "{errs:?}");
        }
        let coarse = make_step_approximant(&f, 4).unwrap();
        assert_eq!(make_step_approximant(&coarse, 4).unwrap().max_abs_diff(&coarse), 0.0);
    }

    #[test]
    fn spec_builds_are_deterministic() {
        for fam in ExtremalSpec::FAMILIES {
            let spec = ExtremalSpec { family: fam.to_string(), n: if *fam == "s1-growth" { 16 } else { 4 }, m: 2, j: 4, m_active: 2, d: 1, level: 10 };
            let a = spec.build().unwrap().to_text();
            let b = spec.build().unwrap().to_text();
            assert_eq!(a, b, "{fam}");
        }
    }
}
