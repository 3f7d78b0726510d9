//! Besov quasi-norm estimators on step functions: second differences, local
//! means, test-kernel lower functionals, a Fourier decomposition, the
//! closed-form single-block bound, Peetre-type window maxima and the
//! localized norm.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::FftPlanner;

use crate::conv::{convolve, convolve_line_periodic, convolve_norm};
use crate::error::{Error, Result};
use crate::grid::{second_difference, GridFunction, LebesgueExponent, Line, C64};
use crate::kernels::{make_bump, make_moment_kernel, Kernel, TensorKernel};

/// Smoothness `s` and exponents `p`, `q` of `B^s_{p,q}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovParams {
    pub s: f64,
    pub p: LebesgueExponent,
    pub q: LebesgueExponent,
}

impl BesovParams {
    pub fn new(s: f64, p: f64, q: f64) -> Result<Self> {
        let exp = |v: f64| if v.is_infinite() { Ok(LebesgueExponent::Infinite) } else { LebesgueExponent::new(v) };
        if !s.is_finite() {
            return Err(Error::InvalidArgument("smoothness must be finite".into()));
        }
        Ok(BesovParams { s, p: exp(p)?, q: exp(q)? })
    }

    /// Interior of the unconditionality region of the Haar system.
    pub fn in_pentagon(&self, d: usize) -> bool {
        let ip = self.p.recip();
        let d = d as f64;
        match self.q {
            LebesgueExponent::Infinite => false,
            _ => {
                (ip <= 1.0 && ip > 0.0 && ip - 1.0 < self.s && self.s < ip)
                    || (ip > 1.0 && ip < (d + 1.0) / d && d * (ip - 1.0) < self.s && self.s < 1.0)
            }
        }
    }

    /// Which of the six uniform-boundedness regions for the averaging
    /// operators contains these parameters (1-based), if any.
    pub fn averaging_region(&self, d: usize) -> Option<u8> {
        if self.p.is_infinite() {
            return None;
        }
        let ip = self.p.recip();
        let q = self.q.value();
        let qi = self.q.recip();
        let p = self.p.value();
        let d = d as f64;
        let s = self.s;
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        if ip < 1.0 && close(s, ip) && self.q.is_infinite() {
            return Some(1);
        }
        if ip <= 1.0 && ip - 1.0 < s && s < ip {
            return Some(2);
        }
        if ip <= 1.0 && close(s, ip - 1.0) && qi >= 1.0 {
            return Some(3);
        }
        let lower_ok = p > d / (d + 1.0) && p < 1.0;
        if lower_ok && close(s, 1.0) && q <= p {
            return Some(4);
        }
        if lower_ok && d * (ip - 1.0) < s && s < 1.0 {
            return Some(5);
        }
        if p >= d / (d + 1.0) && p < 1.0 && close(s, d * (ip - 1.0)) && q <= p {
            return Some(6);
        }
        None
    }
}

/// `l^q` aggregation of nonnegative terms.
pub fn aggregate(values: &[f64], q: LebesgueExponent) -> f64 {
    match q {
        LebesgueExponent::Infinite => values.iter().copied().fold(0.0, f64::max),
        LebesgueExponent::Finite(q) => values.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q),
    }
}

/// Per-level quantities `2^{ks} ||K_k f||_p` for `k = first, first + 1, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelProfile {
    pub first: u32,
    pub values: Vec<f64>,
}

impl LevelProfile {
    pub fn get(&self, k: u32) -> Option<f64> {
        k.checked_sub(self.first).and_then(|i| self.values.get(i as usize).copied())
    }

    pub fn levels(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| (self.first + i as u32, v))
    }

    pub fn aggregate(&self, q: LebesgueExponent) -> f64 {
        aggregate(&self.values, q)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,level_value\n");
        for (k, v) in self.levels() {
            writeln!(s, "{k},{v:.12e}").unwrap();
        }
        s
    }
}

/// Result of a quasi-norm estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiNormReport {
    pub estimator: String,
    pub params: BesovParams,
    pub k_max: u32,
    pub value: f64,
    /// Geometric bound on the omitted levels `k > k_max`; `None` when the
    /// finest-level decay rate `2^{s - 1/p}` is not below 1.
    pub tail_bound: Option<f64>,
    pub profile: LevelProfile,
}

impl QuasiNormReport {
    pub fn to_text(&self) -> String {
        let tail = match self.tail_bound {
            Some(t) => format!("{t:.12e}"),
            None => "null".to_string(),
        };
        format!(
            "{{\"estimator\": \"{}\", \"s\": {}, \"p\": \"{}\", \"q\": \"{}\", \"K\": {}, \"value\": {:.12e}, \"tail_bound\": {}}}",
            self.estimator, self.params.s, self.params.p, self.params.q, self.k_max, self.value, tail
        )
    }
}

/// `||f||_p + sum_axis max_{h in H} ||Delta^2_h f||_p / h^s`, for `0 < s < 2`.
///
/// `h_set` defaults to `{2^{-J}, ..., 1/2}`.
pub fn diff_quasinorm(f: &GridFunction, s: f64, p: LebesgueExponent, h_set: Option<&[f64]>) -> Result<f64> {
    if !(s > 0.0 && s < 2.0) {
        return Err(Error::Estimator(format!("difference quasi-norm needs 0 < s < 2, got {s}")));
    }
    if f.is_zero() {
        return Ok(0.0);
    }
    let default: Vec<f64> = (1..=f.level()).map(|i| (-(i as f64)).exp2()).collect();
    let hs = h_set.unwrap_or(&default);
    let mut total = f.lp_norm(p);
    for axis in 0..f.dim() {
        let mut best = 0.0f64;
        for &h in hs {
            let g = second_difference(f, axis, h)?;
            best = best.max(g.lp_norm(p) / h.powf(s));
        }
        total += best;
    }
    Ok(total)
}

/// `2^{ks} ||Psi_k * f||_p` for `k` in `levels`, with `Psi_k = 2^{kd} Psi(2^k .)`.
pub fn psi_lower_functional(
    f: &GridFunction,
    s: f64,
    p: LebesgueExponent,
    psi: &TensorKernel,
    levels: std::ops::RangeInclusive<u32>,
) -> Result<LevelProfile> {
    let d = f.dim() as f64;
    let need = s.abs() + d * p.recip() - d;
    match psi.moments() {
        Some(m) if m as f64 > need => {}
        _ => return Err(Error::Estimator(format!("test kernel needs more than {need} vanishing moments"))),
    }
    let first = *levels.start();
    let mut values = Vec::new();
    for k in levels {
        if f.is_zero() {
            values.push(0.0);
            continue;
        }
        let norm = convolve_norm(f, &psi.dilate(k), p)?;
        values.push((k as f64 * s).exp2() * norm);
    }
    Ok(LevelProfile { first, values })
}

/// The local-means kernel pair, shared across experiments.
///
/// At level `k` on a level-`J` signal the kernels are sampled at resolution
/// `clamp(J - k, r, r_max)`, so coarse levels see the signal's own grid
/// rather than a dyadic-aligned coarsening of it.
#[derive(Clone, Debug)]
pub struct LocalMeans {
    /// Pairs `(beta0, beta)` at resolutions `r..=r_max`.
    pairs: Vec<(Kernel, Kernel)>,
    base: u32,
}

impl LocalMeans {
    /// Default finest kernel resolution.
    pub const MAX_RESOLUTION: u32 = 12;

    /// `beta` with `M` vanishing moments on `[-8, 8]`, tuned to frequency 1/4;
    /// `beta0` is a unit-mass bump on `[-1/2, 1/2]`. Resolution fixed at `r`.
    pub fn new(m: u32, r: u32) -> Result<Self> {
        Self::adaptive(m, r, r)
    }

    /// Resolutions `r..=r_max`.
    pub fn adaptive(m: u32, r: u32, r_max: u32) -> Result<Self> {
        if r_max < r {
            return Err(Error::InvalidArgument("r_max below r".into()));
        }
        let pairs = (r..=r_max)
            .map(|t| Ok((make_bump(2, 0.5, t)?, make_moment_kernel(m, 8.0, t)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LocalMeans { pairs, base: r })
    }

    /// Process-wide cache keyed by `(M, r, r_max)`.
    pub fn cached(m: u32, r: u32, r_max: u32) -> Result<Arc<LocalMeans>> {
        static CACHE: OnceLock<Mutex<HashMap<(u32, u32, u32), Arc<LocalMeans>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap();
        if let Some(lm) = map.get(&(m, r, r_max)) {
            return Ok(lm.clone());
        }
        let lm = Arc::new(LocalMeans::adaptive(m, r, r_max)?);
        map.insert((m, r, r_max), lm.clone());
        Ok(lm)
    }

    /// Coarsest-resolution `beta0`.
    pub fn beta0(&self) -> &Kernel {
        &self.pairs[0].0
    }

    /// Coarsest-resolution `beta`.
    pub fn beta(&self) -> &Kernel {
        &self.pairs[0].1
    }

    pub fn resolutions(&self) -> std::ops::RangeInclusive<u32> {
        self.base..=self.base + self.pairs.len() as u32 - 1
    }

    /// Kernel pair used at level `k` on a level-`level` signal.
    pub fn pair_for(&self, level: u32, k: u32) -> &(Kernel, Kernel) {
        let want = level.saturating_sub(k).clamp(self.base, *self.resolutions().end());
        &self.pairs[(want - self.base) as usize]
    }

    /// Level-`k` kernel in `d` dimensions for a level-`level` signal.
    pub fn kernel(&self, level: u32, k: u32, d: usize) -> TensorKernel {
        let (b0, b) = self.pair_for(level, k);
        if k == 0 {
            TensorKernel::isotropic(b0, d)
        } else {
            TensorKernel::isotropic(&b.dilate(k), d)
        }
    }

    /// `2^{ks} ||beta_k * f||_p` for `k = 0..=k_max`.
    pub fn profile(&self, f: &GridFunction, params: &BesovParams, k_max: u32) -> Result<LevelProfile> {
        let d = f.dim();
        check_local_means(d, params, self.beta())?;
        let mut values = Vec::with_capacity(k_max as usize + 1);
        for k in 0..=k_max {
            if f.is_zero() {
                values.push(0.0);
                continue;
            }
            let norm = convolve_norm(f, &self.kernel(f.level(), k, d), params.p)?;
            values.push((k as f64 * params.s).exp2() * norm);
        }
        Ok(LevelProfile { first: 0, values })
    }

    /// `|| {2^{ks} beta_k * f}_{k <= K} ||_{l^q(L^p)}`, `K = J - 2` by default.
    pub fn quasinorm(&self, f: &GridFunction, params: &BesovParams, k_max: Option<u32>) -> Result<QuasiNormReport> {
        let k_max = k_max.unwrap_or_else(|| f.level().saturating_sub(2));
        let profile = self.profile(f, params, k_max)?;
        Ok(finish_report(params, k_max, profile))
    }
}

fn check_local_means(d: usize, params: &BesovParams, beta: &Kernel) -> Result<()> {
    let need = params.s.abs() + d as f64 * params.p.recip();
    match beta.moments() {
        Some(m) if m as f64 > need => Ok(()),
        _ => Err(Error::Estimator(format!("local means need more than {need} vanishing moments"))),
    }
}

/// `2^{ks} ||beta_k * f||_p` for `k = 0..=k_max`.
pub fn local_means_profile(
    f: &GridFunction,
    params: &BesovParams,
    beta0: &Kernel,
    beta: &Kernel,
    k_max: u32,
) -> Result<LevelProfile> {
    let d = f.dim();
    check_local_means(d, params, beta)?;
    let mut values = Vec::with_capacity(k_max as usize + 1);
    for k in 0..=k_max {
        if f.is_zero() {
            values.push(0.0);
            continue;
        }
        let kern = if k == 0 { TensorKernel::isotropic(beta0, d) } else { TensorKernel::isotropic(&beta.dilate(k), d) };
        let norm = convolve_norm(f, &kern, params.p)?;
        values.push((k as f64 * params.s).exp2() * norm);
    }
    Ok(LevelProfile { first: 0, values })
}

/// `|| {2^{ks} beta_k * f}_{k <= K} ||_{l^q(L^p)}`, `K = J - 2` by default.
pub fn local_means_quasinorm(
    f: &GridFunction,
    params: &BesovParams,
    beta0: &Kernel,
    beta: &Kernel,
    k_max: Option<u32>,
) -> Result<QuasiNormReport> {
    let k_max = k_max.unwrap_or_else(|| f.level().saturating_sub(2));
    let profile = local_means_profile(f, params, beta0, beta, k_max)?;
    Ok(finish_report(params, k_max, profile))
}

fn finish_report(params: &BesovParams, k_max: u32, profile: LevelProfile) -> QuasiNormReport {
    let value = profile.aggregate(params.q);
    // beyond the cap a step function is seen only through its jumps,
    // which decay like 2^{k (s - 1/p)}
    let rho = (params.s - params.p.recip()).exp2();
    let last = *profile.values.last().unwrap();
    let tail_bound = if rho < 1.0 {
        Some(match params.q {
            LebesgueExponent::Infinite => last * rho,
            LebesgueExponent::Finite(q) => last * rho / (1.0 - rho.powf(q)).powf(1.0 / q),
        })
    } else {
        None
    };
    QuasiNormReport { estimator: "local-means".into(), params: *params, k_max, value, tail_bound, profile }
}

/// Smooth radial cutoff: 1 on `|xi| <= 1/4`, 0 on `|xi| >= 3/8`.
pub fn eta0(xi: f64) -> f64 {
    let t = (xi.abs() - 0.25) * 8.0;
    if t <= 0.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / (1.0 - t)).exp();
    let b = (-1.0 / t).exp();
    a / (a + b)
}

/// How a compactly supported signal is made periodic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Periodization {
    /// Zero-pad to a power-of-two period of at least five support widths.
    Auto,
    /// The grid box is one period.
    Torus,
}

/// Frequency pieces `(Lambda_k f, L_k Lambda_k f)` on one period.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub pieces: Vec<(Line, Line)>,
    /// `max |f - sum_k L_k Lambda_k f|` over the period.
    pub residual: f64,
    pub period_start: i64,
    pub period_cells: usize,
}

/// In-place DFT; the inverse is normalized by `1/n`.
pub fn fft(data: &mut [C64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let plan = if inverse { planner.plan_fft_inverse(data.len()) } else { planner.plan_fft_forward(data.len()) };
    plan.process(data);
    if inverse {
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Periodic level-`J` response of the local mean with `kernel`, cell averaged back to level `J`.
fn periodic_response(level: u32, cells: usize, kernel: &Kernel) -> Result<Vec<C64>> {
    let period_units = (cells >> level) as i64;
    let impulse = Line::new(level, 0, vec![C64::new(1.0, 0.0)]);
    let out = convolve_line_periodic(&impulse, kernel, period_units)?;
    let r = 1usize << (out.level - level);
    Ok((0..cells).map(|i| out.data[i * r..(i + 1) * r].iter().sum::<C64>() / r as f64).collect())
}

/// DFT of the periodic level-`J` impulse response of the local mean with
/// `kernel`, over a period of `cells` level-`J` cells. Multiplying a signal's
/// DFT by it and inverting reproduces the cell-averaged periodic convolution.
pub fn local_mean_symbol(level: u32, cells: usize, kernel: &Kernel) -> Result<Vec<C64>> {
    if cells % (1usize << level) != 0 {
        return Err(Error::InvalidArgument("period must be a whole number of units".into()));
    }
    let mut sym = periodic_response(level, cells, kernel)?;
    fft(&mut sym, false);
    Ok(sym)
}

/// Fourier decomposition `f = sum_k L_k Lambda_k f` (d = 1).
///
/// The local means act through their exact discrete symbols, so the
/// reconstruction telescopes. Fails if a symbol drops below
/// `min_symbol * ||beta||_1` where a cutoff difference is nonzero.
pub fn spectral_decompose(
    f: &GridFunction,
    k_max: u32,
    beta0: &Kernel,
    beta: &Kernel,
    periodization: Periodization,
    min_symbol: f64,
) -> Result<SpectralDecomposition> {
    if f.dim() != 1 {
        return Err(Error::InvalidArgument("spectral decomposition is one-dimensional".into()));
    }
    let level = f.level();
    let scale = 1i64 << level;
    let (start, cells) = match periodization {
        Periodization::Torus => {
            let g = f.grid();
            (g.first_cell(0), (g.end_cell(0) - g.first_cell(0)) as usize)
        }
        Periodization::Auto => match f.support_cells() {
            None => (f.grid().first_cell(0), scale as usize),
            Some((a, b)) => {
                let pad = 2 * (b[0] - a[0]);
                let lo = (a[0] - pad).div_euclid(scale) * scale;
                let units = ((b[0] + pad - lo) as u64).div_ceil(scale as u64).max(1).next_power_of_two() as i64;
                (lo, (units * scale) as usize)
            }
        },
    };
    if cells > 1 << 26 {
        return Err(Error::Estimator("period too long for the Fourier decomposition".into()));
    }
    let period_units = cells as f64 / scale as f64;
    let mut spec: Vec<C64> = (0..cells).map(|i| f.get(&[start + i as i64])).collect();
    let original = spec.clone();
    fft(&mut spec, false);
    let freq = |m: usize| -> f64 {
        let m = if m <= cells / 2 { m as f64 } else { m as f64 - cells as f64 };
        m / period_units
    };
    let mut pieces = Vec::with_capacity(k_max as usize + 1);
    let mut recon = vec![C64::new(0.0, 0.0); cells];
    for k in 0..=k_max {
        let kern = if k == 0 { beta0.clone() } else { beta.dilate(k) };
        let symbol = local_mean_symbol(level, cells, &kern)?;
        let scale_k = (k as f64).exp2();
        let norm1 = kern.l1_norm();
        let mut lam = vec![C64::new(0.0, 0.0); cells];
        let mut llam = vec![C64::new(0.0, 0.0); cells];
        for m in 0..cells {
            let xi = freq(m);
            let num = if k == 0 { eta0(xi) } else { eta0(xi / scale_k) - eta0(2.0 * xi / scale_k) };
            if num == 0.0 {
                continue;
            }
            let sym = symbol[m];
            if sym.norm() < min_symbol * norm1 {
                return Err(Error::Estimator(format!(
                    "local-mean symbol {:.3e} too small at frequency {xi} (level {k})",
                    sym.norm() / norm1
                )));
            }
            lam[m] = spec[m] * num / sym;
            llam[m] = spec[m] * num;
        }
        fft(&mut lam, true);
        fft(&mut llam, true);
        for (r, v) in recon.iter_mut().zip(&llam) {
            *r += v;
        }
        pieces.push((Line::new(level, start, lam), Line::new(level, start, llam)));
    }
    let residual = original.iter().zip(&recon).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok(SpectralDecomposition { pieces, residual, period_start: start, period_cells: cells })
}

/// Closed-form bound for one block `L_k E_N L_j Lambda_j`, from the branch
/// tables for `p <= 1` and `p >= 1` (they agree at `p = 1`).
pub fn u_predictor(params: &BesovParams, d: usize, j: u32, k: u32, n: u32) -> f64 {
    let ip = params.p.recip();
    if ip >= 1.0 {
        u_table_small_p(params.s, ip, d as f64, j as f64, k as f64, n as f64)
    } else {
        u_table_large_p(params.s, ip, j as f64, k as f64, n as f64)
    }
}

/// Branch table for `p <= 1`.
pub fn u_table_small_p(s: f64, ip: f64, d: f64, j: f64, k: f64, n: f64) -> f64 {
    let e = if j > n && k > n {
        k * (s - ip) + j * (d * ip - d - s) + n * (d - (d - 1.0) * ip)
    } else if j <= n && k > n {
        k * (s - ip) + j * (1.0 - s) + n * (ip - 1.0)
    } else if j <= n && k <= n {
        k * (s + d + 1.0 - d * ip) + j * (1.0 - s) + n * (d * ip - d - 2.0)
    } else {
        k * (s + d + 1.0 - d * ip) + j * (d * ip - d - s) - n
    };
    e.exp2()
}

/// Branch table for `p >= 1`.
pub fn u_table_large_p(s: f64, ip: f64, j: f64, k: f64, n: f64) -> f64 {
    let e = if j > n && k > n {
        k * (s - ip) + j * (ip - 1.0 - s) + n
    } else if j <= n && k > n {
        k * (s - ip) + j * (1.0 - s) + n * (ip - 1.0)
    } else if j <= n && k <= n {
        k * (1.0 + s) + j * (1.0 - s) - 2.0 * n
    } else {
        k * (1.0 + s) + j * (ip - 1.0 - s) - n * ip
    };
    e.exp2()
}

/// `2^{(k - j) s} B_p(j, k, N)` written with `(1/p - 1)_+`.
pub fn u_reference(params: &BesovParams, d: usize, j: u32, k: u32, n: u32) -> f64 {
    let ip = params.p.recip();
    let plus = (ip - 1.0).max(0.0);
    let (j, k, n, d) = (j as f64, k as f64, n as f64, d as f64);
    let b = if j > n && k > n {
        (n - j) + (j - k) * ip + (j - n) * (d - 1.0) * plus
    } else if j <= n && k > n {
        (n - k) * ip + (j - n)
    } else if j <= n && k <= n {
        (k - n) + (j - n) + (n - k) * d * plus
    } else {
        (k - j) + (j - n) * ip + ((n - k) + (j - k) * (d - 1.0)) * plus
    };
    ((k - j) * params.s + b).exp2()
}

/// Sliding maximum of `|f|` over `|h|_inf <= 2^{-j+5}`, at cell resolution.
///
/// Each cell takes the maximum over all cells its window can reach, an upper
/// bound for the pointwise supremum.
pub fn windowed_max(f: &GridFunction, j: u32) -> Result<GridFunction> {
    let level = f.level() as i64;
    let w = if 5 - j as i64 + level >= 0 { 1i64 << (5 - j as i64 + level) } else { 1 };
    let mut g = f.map_values(|v| C64::new(v.norm(), 0.0))?;
    let d = f.dim();
    let units = (w + (1i64 << level) - 1) >> level;
    g = g.embed(&g.grid().enlarged(&vec![units; d], &vec![units; d])?)?;
    for axis in 0..d {
        let mut cells = Vec::new();
        for (base, entries) in g.lines_along(axis) {
            let a = entries[0].0 - w;
            let b = entries.last().unwrap().0 + w + 1;
            let mut data = vec![0.0f64; (b - a) as usize];
            for (t, v) in &entries {
                data[(t - a) as usize] = v.re;
            }
            // monotone deque over the window [i - w, i + w]
            let n = data.len();
            let mut out = vec![0.0f64; n];
            let mut dq: VecDeque<usize> = VecDeque::new();
            let mut next = 0usize;
            for i in 0..n {
                let hi = (i + w as usize).min(n - 1);
                while next <= hi {
                    while dq.back().is_some_and(|&t| data[t] <= data[next]) {
                        dq.pop_back();
                    }
                    dq.push_back(next);
                    next += 1;
                }
                while dq.front().is_some_and(|&t| (t as i64) < i as i64 - w) {
                    dq.pop_front();
                }
                out[i] = data[*dq.front().unwrap()];
            }
            for (i, v) in out.into_iter().enumerate() {
                if v != 0.0 {
                    let mut mu = base.clone();
                    mu[axis] = a + i as i64;
                    cells.push((mu, C64::new(v, 0.0)));
                }
            }
        }
        g = GridFunction::from_cells(g.grid().clone(), cells)?;
    }
    Ok(g)
}

/// Discrete hat partition `sum_nu varsigma(x - nu) = 1` at level `r`, supported in `(-1, 1)`.
pub fn hat_partition(r: u32) -> Kernel {
    let n = 1i64 << r;
    let vals: Vec<f64> = (0..2 * n).map(|i| {
        let x = (i - n) as f64 + 0.5;
        1.0 - x.abs() / n as f64
    }).collect();
    Kernel::from_values(r, -n, vals, None, crate::kernels::Parity::Even)
}

/// Largest deviation of `sum_nu varsigma(. - nu)` from 1.
pub fn partition_defect(varsigma: &Kernel) -> f64 {
    let n = 1i64 << varsigma.level();
    let mut sums = vec![0.0f64; n as usize];
    for (i, v) in varsigma.values().iter().enumerate() {
        sums[(varsigma.start() + i as i64).rem_euclid(n) as usize] += v;
    }
    sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

/// `[sum_nu ||varsigma(. - nu) f||^p]^{1/p}` over integer translates, each local
/// piece measured by the local-means quasi-norm.
pub fn bourdaud_norm(
    f: &GridFunction,
    params: &BesovParams,
    means: &LocalMeans,
    varsigma: &Kernel,
    k_max: Option<u32>,
) -> Result<f64> {
    if partition_defect(varsigma) > 1e-10 {
        return Err(Error::Estimator("partition of unity does not sum to 1".into()));
    }
    if varsigma.level() > f.level() {
        return Err(Error::Resolution("partition finer than the signal".into()));
    }
    let Some((a, b)) = f.support_cells() else {
        return Ok(0.0);
    };
    let d = f.dim();
    let level = f.level();
    let scale = 1i64 << level;
    let (s_lo, s_hi) = varsigma.support();
    // integer translates whose bump meets the support
    let lo: Vec<i64> = (0..d).map(|i| ((a[i] as f64 / scale as f64) - s_hi).floor() as i64).collect();
    let hi: Vec<i64> = (0..d).map(|i| ((b[i] as f64 / scale as f64) - s_lo).ceil() as i64).collect();
    let bump = varsigma.to_grid_function()?.at_level(level);
    let mut local = Vec::new();
    let mut nu = lo.clone();
    loop {
        let mut w = bump.translate(&[nu[0] * scale])?;
        for &t in nu.iter().skip(1) {
            w = crate::grid::tensor(&w, &bump.translate(&[t * scale])?)?;
        }
        let piece = f.mul(&w)?;
        if !piece.is_zero() {
            let k = k_max.unwrap_or(level.saturating_sub(2));
            local.push(means.quasinorm(&piece, params, Some(k))?.value);
        }
        let mut i = 0;
        while i < d {
            nu[i] += 1;
            if nu[i] < hi[i] {
                break;
            }
            nu[i] = lo[i];
            i += 1;
        }
        if i == d {
            break;
        }
    }
    Ok(aggregate(&local, params.p))
}

/// Applies a local mean and returns the full output (any dimension).
pub fn local_mean(f: &GridFunction, k: &TensorKernel) -> Result<GridFunction> {
    convolve(f, k)
}
