//! Discrete kernels: step functions at resolution `2^{-r}` with certified
//! vanishing moments, and their tensor products.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{DyadicGrid, GridFunction, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    None,
}

impl Parity {
    fn tag(self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
            Parity::None => "none",
        }
    }
}

/// Positivity certificate: a lower bound `c` holding on an interval of length `eps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Certificate {
    pub c: f64,
    pub eps: f64,
}

/// Step function with value `values[i]` on `[(start + i) 2^{-r}, (start + i + 1) 2^{-r})`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    level: u32,
    start: i64,
    values: Vec<f64>,
    moments: Option<u32>,
    parity: Parity,
    certificate: Option<Certificate>,
}

impl Kernel {
    pub fn from_values(level: u32, start: i64, values: Vec<f64>, moments: Option<u32>, parity: Parity) -> Self {
        Kernel { level, start, values, moments, parity, certificate: None }
    }

    pub fn with_certificate(mut self, c: Certificate) -> Self {
        self.certificate = Some(c);
        self
    }

    /// Resolution level of the step function.
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Highest certified vanishing-moment order.
    pub fn moments(&self) -> Option<u32> {
        self.moments
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn certificate(&self) -> Option<Certificate> {
        self.certificate
    }

    /// Largest Peetre exponent compatible with the moment order at smoothness `s`.
    pub fn a_max(&self, s: f64) -> Option<f64> {
        self.moments.map(|m| m as f64 - s.abs() - 2.0)
    }

    pub fn cell_width(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// Closed support interval.
    pub fn support(&self) -> (f64, f64) {
        let h = self.cell_width();
        (self.start as f64 * h, (self.start + self.values.len() as i64) as f64 * h)
    }

    /// `2^k kernel(2^k x)`: same cells one level per factor finer.
    pub fn dilate(&self, k: u32) -> Kernel {
        let s = (k as f64).exp2();
        Kernel {
            level: self.level + k,
            start: self.start,
            values: self.values.iter().map(|v| v * s).collect(),
            moments: self.moments,
            parity: self.parity,
            certificate: None,
        }
    }

    pub fn scaled(&self, c: f64) -> Kernel {
        let mut k = self.clone();
        k.values.iter_mut().for_each(|v| *v *= c);
        k.certificate = None;
        k
    }

    pub fn negated(&self) -> Kernel {
        let mut k = self.scaled(-1.0);
        k.certificate = self.certificate;
        k
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = (x * (self.level as f64).exp2()).floor() as i64 - self.start;
        if i >= 0 && (i as usize) < self.values.len() {
            self.values[i as usize]
        } else {
            0.0
        }
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_width()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_width()
    }

    /// Midpoint moment `sum_i v_i x_i^m h`.
    pub fn discrete_moment(&self, m: u32) -> f64 {
        let h = self.cell_width();
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * (((self.start + i as i64) as f64 + 0.5) * h).powi(m as i32) * h)
            .sum()
    }

    /// Exact moment `int x^m k(x) dx` of the step function.
    pub fn exact_moment(&self, m: u32) -> f64 {
        let h = self.cell_width();
        let e = m as i32 + 1;
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let a = (self.start + i as i64) as f64 * h;
                v * ((a + h).powi(e) - a.powi(e)) / e as f64
            })
            .sum()
    }

    /// Largest midpoint-moment residual over orders `0..=m`.
    pub fn moment_residual(&self, m: u32) -> f64 {
        (0..=m).map(|j| self.discrete_moment(j).abs()).fold(0.0, f64::max)
    }

    /// Moment residuals over orders `0..=m`, each relative to `sum_i |v_i| |x_i|^j h`.
    pub fn relative_moment_residual(&self, m: u32) -> f64 {
        let h = self.cell_width();
        (0..=m)
            .map(|j| {
                let scale: f64 = self
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v.abs() * (((self.start + i as i64) as f64 + 0.5) * h).abs().powi(j as i32) * h)
                    .sum();
                self.discrete_moment(j).abs() / scale
            })
            .fold(0.0, f64::max)
    }

    /// Exact mirror symmetry check for the declared parity.
    pub fn parity_holds(&self) -> bool {
        let n = self.values.len();
        let centered = 2 * self.start + n as i64 == 0;
        match self.parity {
            Parity::None => true,
            Parity::Even => centered && (0..n).all(|i| self.values[i] == self.values[n - 1 - i]),
            Parity::Odd => centered && (0..n).all(|i| self.values[i] == -self.values[n - 1 - i]),
        }
    }

    /// The kernel as a one-dimensional grid function.
    pub fn to_grid_function(&self) -> Result<GridFunction> {
        let a = self.start;
        let b = self.start + self.values.len().max(1) as i64;
        let grid = DyadicGrid::covering(1, self.level, &[a], &[b])?;
        GridFunction::from_real_cells(grid, self.values.iter().enumerate().map(|(i, &v)| (vec![a + i as i64], v)))
    }

    /// Header `r M parity`, comment lines, then `cell value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = self.moments.map(|m| m as i64).unwrap_or(-1);
        writeln!(s, "{} {} {}", self.level, m, self.parity.tag()).unwrap();
        if let Some(c) = self.certificate {
            writeln!(s, "# c {:.16e}", c.c).unwrap();
            writeln!(s, "# eps {:.16e}", c.eps).unwrap();
        }
        if let Some(m) = self.moments {
            for j in 0..=m {
                writeln!(s, "# residual {} {:.3e}", j, self.discrete_moment(j)).unwrap();
            }
        }
        for (i, v) in self.values.iter().enumerate() {
            writeln!(s, "{} {:.17e}", self.start + i as i64, v).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Kernel> {
        let bad = |m: &str| Error::Parse(m.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty kernel"))?.split_whitespace().collect();
        if header.len() != 3 {
            return Err(bad("kernel header must be `r M parity`"));
        }
        let level: u32 = header[0].parse().map_err(|_| bad("bad level"))?;
        let m: i64 = header[1].parse().map_err(|_| bad("bad moment order"))?;
        let parity = match header[2] {
            "even" => Parity::Even,
            "odd" => Parity::Odd,
            "none" => Parity::None,
            _ => return Err(bad("bad parity tag")),
        };
        let (mut c, mut eps) = (None, None);
        let mut cells: Vec<(i64, f64)> = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts[0] == "#" {
                match parts.get(1).copied() {
                    Some("c") => c = parts.get(2).and_then(|v| v.parse().ok()),
                    Some("eps") => eps = parts.get(2).and_then(|v| v.parse().ok()),
                    _ => {}
                }
                continue;
            }
            if parts.len() != 2 {
                return Err(bad("kernel line must be `cell value`"));
            }
            cells.push((parts[0].parse().map_err(|_| bad("bad cell"))?, parts[1].parse().map_err(|_| bad("bad value"))?));
        }
        let start = cells.first().map(|c| c.0).unwrap_or(0);
        if cells.iter().enumerate().any(|(i, c)| c.0 != start + i as i64) {
            return Err(bad("kernel cells must be consecutive"));
        }
        let mut k = Kernel::from_values(level, start, cells.into_iter().map(|c| c.1).collect(), (m >= 0).then_some(m as u32), parity);
        if let (Some(c), Some(eps)) = (c, eps) {
            k.certificate = Some(Certificate { c, eps });
        }
        Ok(k)
    }
}

/// Sum of tensor products of one-dimensional kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorKernel {
    d: usize,
    terms: Vec<Vec<Kernel>>,
    moments: Option<u32>,
}

impl TensorKernel {
    pub fn new(d: usize, terms: Vec<Vec<Kernel>>) -> Result<Self> {
        if d == 0 || terms.is_empty() {
            return Err(Error::Kernel("empty tensor kernel".into()));
        }
        for t in &terms {
            if t.len() != d {
                return Err(Error::Kernel("tensor term has wrong number of factors".into()));
            }
            if t.iter().any(|k| k.level != t[0].level) {
                return Err(Error::Kernel("factors of a tensor term must share resolution".into()));
            }
        }
        // a product annihilates total degree <= m when one factor does
        let moments = terms
            .iter()
            .map(|t| t.iter().filter_map(|k| k.moments).max())
            .collect::<Option<Vec<u32>>>()
            .and_then(|v| v.into_iter().min());
        Ok(TensorKernel { d, terms, moments })
    }

    /// Overrides the certified moment order (for sums whose cancellation is collective).
    pub fn with_moments(mut self, m: Option<u32>) -> Self {
        self.moments = m;
        self
    }

    pub fn single(k: Kernel) -> Self {
        let moments = k.moments;
        TensorKernel { d: 1, terms: vec![vec![k]], moments }
    }

    /// `k(x_1) ... k(x_d)`.
    pub fn isotropic(k: &Kernel, d: usize) -> Self {
        TensorKernel { d, terms: vec![vec![k.clone(); d]], moments: k.moments }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn terms(&self) -> &[Vec<Kernel>] {
        &self.terms
    }

    pub fn level(&self) -> u32 {
        self.terms.iter().flat_map(|t| t.iter().map(|k| k.level)).max().unwrap()
    }

    pub fn moments(&self) -> Option<u32> {
        self.moments
    }

    /// `2^{kd} K(2^k x)`.
    pub fn dilate(&self, k: u32) -> TensorKernel {
        TensorKernel {
            d: self.d,
            terms: self.terms.iter().map(|t| t.iter().map(|f| f.dilate(k)).collect()).collect(),
            moments: self.moments,
        }
    }

    /// Dense representation at the common level.
    pub fn to_grid_function(&self) -> Result<GridFunction> {
        let level = self.level();
        let mut total: Option<GridFunction> = None;
        for term in &self.terms {
            let mut g = term[0].to_grid_function()?.at_level(level);
            for f in &term[1..] {
                g = crate::grid::tensor(&g, &f.to_grid_function()?.at_level(level))?;
            }
            total = Some(match total {
                None => g,
                Some(t) => t.add(&g)?,
            });
        }
        Ok(total.unwrap())
    }
}


fn to_f64_exact(v: i128) -> Result<f64> {
    if v.unsigned_abs() >= 1u128 << 53 {
        return Err(Error::Kernel("integer kernel exceeds exact double range".into()));
    }
    Ok(v as f64)
}

fn convolve_int(a: &[i128], b: &[i128]) -> Vec<i128> {
    let mut out = vec![0i128; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `(delta_0 - delta_s)^{M+1} * box_s^{P}` as integers.
fn difference_sequence(m: u32, s: usize, p: u32) -> Vec<i128> {
    let mut diff = vec![0i128; s + 1];
    diff[0] = 1;
    diff[s] = -1;
    let boxs = vec![1i128; s];
    let mut seq = vec![1i128];
    for _ in 0..=m {
        seq = convolve_int(&seq, &diff);
    }
    for _ in 0..p {
        seq = convolve_int(&seq, &boxs);
    }
    seq
}

/// Longest centered even-length difference kernel with at most `max_len` cells.
fn even_difference_kernel(m: u32, max_len: usize, r: u32) -> Result<Kernel> {
    let mut s = max_len / (m as usize + 1);
    while s >= 1 {
        for p in [m + 2, m + 3] {
            let len = (m as usize + 1) * s + p as usize * (s - 1) + 1;
            if len <= max_len && len % 2 == 0 {
                let seq = difference_sequence(m, s, p);
                debug_assert_eq!(seq.len(), len);
                let vals: Vec<f64> = seq.iter().map(|&v| to_f64_exact(v)).collect::<Result<_>>()?;
                let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let vals: Vec<f64> = vals.iter().map(|v| v / max).collect();
                let parity = if m % 2 == 1 { Parity::Even } else { Parity::Odd };
                return Ok(Kernel::from_values(r, -(len as i64) / 2, vals, Some(m), parity));
            }
        }
        s -= 1;
    }
    Err(Error::Kernel(format!("support too small for {} vanishing moments at resolution {}", m + 1, r)))
}

/// Kernel on `[-w, w]` whose moments of order `0..=M` vanish, both as midpoint
/// sums and as exact integrals: `(delta_0 - delta_s)^{M+1} * box_s^P` in
/// integer arithmetic. Normalized to sup norm 1.
pub fn make_difference_kernel(m: u32, support_halfwidth: f64, r: u32) -> Result<Kernel> {
    if !(support_halfwidth > 0.0) {
        return Err(Error::InvalidArgument("support half-width must be positive".into()));
    }
    let max_len = (2.0 * support_halfwidth * (r as f64).exp2()).floor() as usize;
    even_difference_kernel(m, max_len, r)
}

/// Even kernel on `[-w, w]` concentrated near frequency `2/w`: a window times
/// `cos(4 pi x / w)`, corrected by even polynomials times the window so that
/// the moments of order `0..=M` vanish. Normalized to sup norm 1.
///
/// Vanishing midpoint moments imply vanishing exact moments of the step function.
pub fn make_moment_kernel(m: u32, support_halfwidth: f64, r: u32) -> Result<Kernel> {
    let w = support_halfwidth;
    if !(w > 0.0) {
        return Err(Error::InvalidArgument("support half-width must be positive".into()));
    }
    let half = (w * (r as f64).exp2()).round() as usize;
    if half as f64 != w * (r as f64).exp2() {
        return Err(Error::InvalidArgument("support half-width must be a multiple of the cell width".into()));
    }
    let q = m as usize / 2 + 1;
    if half < 2 * q {
        return Err(Error::Kernel(format!("support too small for {} vanishing moments at resolution {}", m + 1, r)));
    }
    let h = (-(r as f64)).exp2();
    let xi0 = 2.0 / w;
    let xs: Vec<f64> = (0..half).map(|i| (i as f64 + 0.5) * h).collect();
    let window: Vec<f64> = xs.iter().map(|x| (1.0 - (x / w).powi(2)).powi(4)).collect();
    let carrier: Vec<f64> = xs.iter().map(|x| (2.0 * std::f64::consts::PI * xi0 * x).cos()).collect();
    let mut a = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    for i in 0..half {
        let u = xs[i] / w;
        for row in 0..q {
            let test = u.powi(2 * row as i32);
            rhs[row] -= window[i] * carrier[i] * test;
            for col in 0..q {
                a[(row, col)] += window[i] * u.powi(2 * col as i32) * test;
            }
        }
    }
    let coef = a.lu().solve(&rhs).ok_or_else(|| Error::Kernel("moment system is singular".into()))?;
    let pos: Vec<f64> = (0..half)
        .map(|i| {
            let u = xs[i] / w;
            window[i] * (carrier[i] + (0..q).map(|c| coef[c] * u.powi(2 * c as i32)).sum::<f64>())
        })
        .collect();
    let max = pos.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut values: Vec<f64> = pos.iter().rev().map(|v| v / max).collect();
    values.extend(pos.iter().map(|v| v / max));
    let k = Kernel::from_values(r, -(half as i64), values, Some(m), Parity::Even);
    if k.relative_moment_residual(m) > 1e-11 {
        return Err(Error::Kernel("moment residual too large".into()));
    }
    Ok(k)
}

/// Centered B-spline of order `M + 1` on `[-w, w]` with unit integral.
pub fn make_bump(m: u32, support_halfwidth: f64, r: u32) -> Result<Kernel> {
    let max_len = (2.0 * support_halfwidth * (r as f64).exp2()).floor() as usize;
    let mut s = max_len;
    loop {
        if s == 0 {
            return Err(Error::Kernel("support too small for bump".into()));
        }
        let len = (m as usize + 1) * (s - 1) + 1;
        if len <= max_len && len % 2 == 0 {
            break;
        }
        s -= 1;
    }
    let boxs = vec![1i128; s];
    let mut seq = vec![1i128];
    for _ in 0..=m {
        seq = convolve_int(&seq, &boxs);
    }
    let total: i128 = seq.iter().sum();
    let h = (-(r as f64)).exp2();
    let vals: Vec<f64> = seq.iter().map(|&v| to_f64_exact(v).map(|v| v / (total as f64 * h))).collect::<Result<_>>()?;
    let len = vals.len() as i64;
    Ok(Kernel::from_values(r, -len / 2, vals, None, Parity::Even))
}

/// `t -> int_t^{1/2} psi` at cell boundaries `t = j h`, `j = 0..`.
fn upper_tail_integrals(k: &Kernel) -> Vec<f64> {
    let h = k.cell_width();
    let n = k.values.len() as i64;
    let first_pos = (-k.start).max(0);
    let mut tails = Vec::new();
    let mut acc = 0.0;
    let mut j = n - 1;
    let mut rev = Vec::new();
    while j >= first_pos {
        acc += k.values[j as usize] * h;
        rev.push(acc);
        j -= 1;
    }
    rev.reverse();
    tails.extend(rev);
    tails.push(0.0);
    tails
}

/// Odd kernel supported in `(-1/2, 1/2)` with vanishing moments up to `M`
/// and a certified lower bound for its convolution with the odd step
/// `1_{[0,1/2)} - 1_{[-1/2,0)}` just to the right of `1/2`.
pub fn make_psi(m: u32, r: u32) -> Result<Kernel> {
    let order = if m % 2 == 1 { m + 1 } else { m };
    let mut level = r;
    while level <= r + 6 {
        if let Ok(k) = psi_at(order, level) {
            return Ok(k);
        }
        level += 1;
    }
    Err(Error::Kernel("positivity certificate failed".into()))
}

fn psi_at(order: u32, r: u32) -> Result<Kernel> {
    let cells = (1usize << r).saturating_sub(2);
    let mut k = even_difference_kernel(order, cells, r)?;
    let tails = upper_tail_integrals(&k);
    if tails[0] < 0.0 {
        k = k.negated();
    }
    let tails = upper_tail_integrals(&k);
    let g0 = tails[0];
    if !(g0 > 0.0) {
        return Err(Error::Kernel("odd step response vanishes".into()));
    }
    // The response at 1/2 + t is the upper tail integral from t, linear between cells.
    let mut e = 0;
    while e + 1 < tails.len() && tails[e + 1] >= 0.5 * g0 {
        e += 1;
    }
    if e == 0 {
        return Err(Error::Kernel("certificate interval is empty".into()));
    }
    let c = tails[..=e].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(k.with_certificate(Certificate { c, eps: e as f64 * (-(r as f64)).exp2() }))
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Kernel supported in `(-1, 1)`, equal to at least 1 on `(-1/2, -1/8)`,
/// with vanishing moments `0..=M`.
pub fn make_psi_positive(m: u32, r: u32) -> Result<Kernel> {
    if r < 5 {
        return Err(Error::Kernel("resolution must be at least 5".into()));
    }
    let h = (-(r as f64)).exp2();
    let n = 1i64 << r;
    let start = -n;
    let len = (2 * n) as usize;
    let mid = |i: usize| (start + i as i64) as f64 * h + 0.5 * h;
    let plateau: Vec<f64> = (0..len)
        .map(|i| {
            let x = mid(i);
            if x >= -0.5 && x <= -0.125 {
                1.0
            } else if x < -0.5 {
                smoothstep((x + 9.0 / 16.0) * 16.0)
            } else {
                smoothstep((-1.0 / 16.0 - x) * 16.0)
            }
        })
        .collect();
    let u = |x: f64| (x - 0.5) / (7.0 / 16.0);
    let bump = |x: f64| {
        let t = u(x);
        if t.abs() < 1.0 {
            (1.0 - t * t).powi(3)
        } else {
            0.0
        }
    };
    let q = m as usize + 1;
    let mut a = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    for i in 0..len {
        let x = mid(i);
        let b = bump(x);
        for row in 0..q {
            let test = u(x).powi(row as i32);
            rhs[row] -= plateau[i] * test;
            if b != 0.0 {
                for col in 0..q {
                    a[(row, col)] += b * u(x).powi(col as i32) * test;
                }
            }
        }
    }
    let coef = a.lu().solve(&rhs).ok_or_else(|| Error::Kernel("moment system is singular".into()))?;
    let values: Vec<f64> = (0..len)
        .map(|i| {
            let x = mid(i);
            let b = bump(x);
            let corr: f64 = if b == 0.0 { 0.0 } else { (0..q).map(|c| coef[c] * u(x).powi(c as i32)).sum::<f64>() * b };
            plateau[i] + corr
        })
        .collect();
    let k = Kernel::from_values(r, start, values, Some(m), Parity::None);
    if k.moment_residual(m) > 1e-10 {
        return Err(Error::Kernel("moment residual too large".into()));
    }
    Ok(k)
}

/// Odd kernel on `(-1/2, 1/2)` with `int_0^{1/2} eta = 1` and
/// `int_0^{1/2} t^n eta = 0` for `n = 1..=M` (exact step-function integrals).
pub fn make_eta_odd(m: u32, r: u32) -> Result<Kernel> {
    eta_with_weight(m, r, |_| 1.0)
}

/// Like [`make_eta_odd`] but with a profile vanishing to infinite order at
/// `0` and `+-1/2`, so its samples approximate a smooth function.
pub fn make_eta_smooth(m: u32, r: u32) -> Result<Kernel> {
    eta_with_weight(m, r, |u| if u.abs() < 1.0 { (1.0 - 1.0 / (1.0 - u * u)).exp() } else { 0.0 })
}

fn eta_with_weight<W: Fn(f64) -> f64>(m: u32, r: u32, weight: W) -> Result<Kernel> {
    if r == 0 {
        return Err(Error::Kernel("resolution must be positive".into()));
    }
    let half = 1usize << (r - 1);
    let q = m as usize + 1;
    if half < q {
        return Err(Error::Kernel(format!("{half} half-line cells cannot carry {q} constraints")));
    }
    let h = (-(r as f64)).exp2();
    let mut a = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    rhs[0] = 1.0;
    // eta_i = sum_a p_a u_i^a with u in (-1, 1) over the half-line cells
    for i in 0..half {
        let lo = i as f64 * h;
        let u = 4.0 * (lo + 0.5 * h) - 1.0;
        for n in 0..q {
            let e = n as i32 + 1;
            let cell_moment = ((lo + h).powi(e) - lo.powi(e)) / e as f64;
            for col in 0..q {
                a[(n, col)] += cell_moment * weight(u) * u.powi(col as i32);
            }
        }
    }
    let p = a.lu().solve(&rhs).ok_or_else(|| Error::Kernel("half-line moment system is singular".into()))?;
    let pos: Vec<f64> = (0..half)
        .map(|i| {
            let u = 4.0 * (i as f64 * h + 0.5 * h) - 1.0;
            weight(u) * (0..q).map(|c| p[c] * u.powi(c as i32)).sum::<f64>()
        })
        .collect();
    let mut values: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    values.extend(pos.iter().copied());
    Ok(Kernel::from_values(r, -(half as i64), values, Some(m), Parity::Odd))
}

/// Half-line mass and moment residuals of an odd profile.
pub fn half_line_moments(eta: &Kernel, m: u32) -> Vec<f64> {
    let h = eta.cell_width();
    (0..=m)
        .map(|n| {
            let e = n as i32 + 1;
            eta.values
                .iter()
                .enumerate()
                .filter(|(i, _)| eta.start + *i as i64 >= 0)
                .map(|(i, v)| {
                    let lo = (eta.start + i as i64) as f64 * h;
                    v * ((lo + h).powi(e) - lo.powi(e)) / e as f64
                })
                .sum()
        })
        .collect()
}

/// `2^{ld} prod_i eta(2^l x_i)` at level `l + r`.
pub fn make_gl(eta: &Kernel, l: u32, d: usize) -> Result<GridFunction> {
    let level = l + eta.level;
    let n = eta.values.len() as i64;
    let a = vec![eta.start; d];
    let b = vec![eta.start + n; d];
    let grid = DyadicGrid::covering(d, level, &a, &b)?;
    let scale = ((l as usize * d) as f64).exp2();
    let total = (n as usize).pow(d as u32);
    let mut cells = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rest = flat;
        let mut mu = vec![0i64; d];
        let mut v = scale;
        for i in (0..d).rev() {
            let t = (rest % n as usize) as i64;
            rest /= n as usize;
            mu[i] = eta.start + t;
            v *= eta.values[t as usize];
        }
        cells.push((mu, C64::new(v, 0.0)));
    }
    GridFunction::from_cells(grid, cells)
}

/// The non-decay test kernel and its one-dimensional ingredients.
#[derive(Clone, Debug)]
pub struct BigPsi {
    pub kernel: TensorKernel,
    /// `2M`-th derivative of the seed bump.
    pub theta: Kernel,
    /// Running integral of `theta`, as cell averages.
    pub big_theta: Kernel,
    /// The seed bump.
    pub phi0: Kernel,
    /// Seed bump normalized to unit integral (transverse factor).
    pub phi0_unit: Kernel,
    /// `int_{-eps}^0 theta` with `theta > 0` on `[-2 eps, 0)`.
    pub certificate: Certificate,
    pub m: u32,
}

const SEED_BITS: u32 = 30;

fn seed_integers(m: u32, r: u32) -> Result<(Vec<i128>, i64)> {
    if r < 3 || (1i64 << (r - 3)) <= m as i64 + 1 {
        return Err(Error::Kernel("resolution too coarse for the seed bump".into()));
    }
    let half = 1i64 << (r - 3);
    let h = (-(r as f64)).exp2();
    // contract so that 2M differences stay inside (-1/8, 1/8)
    let contract = half as f64 / (half - m as i64) as f64;
    let gamma = if m % 2 == 1 { 2.0 * (m as f64 + 3.0) / m as f64 } else { 0.0 };
    let scale = (SEED_BITS as f64).exp2();
    let vals: Vec<i128> = (-half..half)
        .map(|i| {
            let t = ((i as f64) + 0.5) * h * contract;
            let u = 8.0 * t;
            if u.abs() >= 1.0 {
                0
            } else {
                let v = (1.0 - u * u).powi(2 * m as i32 + 2) * (1.0 + gamma * u * u);
                (v / (1.0 + gamma) * scale).round() as i128
            }
        })
        .collect();
    Ok((vals, -half))
}

fn second_difference_int(v: &[i128]) -> Vec<i128> {
    let n = v.len();
    let at = |i: i64| if i >= 0 && (i as usize) < n { v[i as usize] } else { 0 };
    (0..n as i64).map(|i| at(i - 1) - 2 * at(i) + at(i + 1)).collect()
}

fn differentiated(seed: &[i128], start: i64, times: u32, r: u32) -> Result<Kernel> {
    let mut v = seed.to_vec();
    for _ in 0..times {
        v = second_difference_int(&v);
    }
    let scale = ((2 * times * r) as f64 - SEED_BITS as f64).exp2();
    let vals: Vec<f64> = v.iter().map(|&x| to_f64_exact(x).map(|x| x * scale)).collect::<Result<_>>()?;
    let moments = if times == 0 { None } else { Some(2 * times - 1) };
    Ok(Kernel::from_values(r, start, vals, moments, Parity::Even))
}

/// The kernel `theta(x_1) phi(x') + phi0(x_1) vartheta(x')` with
/// `theta = phi0^{(2M)}` and `vartheta` the `M`-th power of the transverse
/// Laplacian of `phi`, `phi` the normalized transverse bump.
/// The resolution is raised if the sign certificate fails at `r`.
pub fn make_big_psi(m: u32, r: u32, d: usize) -> Result<BigPsi> {
    let mut last = Error::Kernel("no resolution tried".into());
    for level in r..=r + 4 {
        match big_psi_at(m, level, d) {
            Ok(bp) => return Ok(bp),
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn big_psi_at(m: u32, r: u32, d: usize) -> Result<BigPsi> {
    if m == 0 || d == 0 {
        return Err(Error::Kernel("need M >= 1 and d >= 1".into()));
    }
    let (seed, start) = seed_integers(m, r)?;
    let h = (-(r as f64)).exp2();
    let theta = differentiated(&seed, start, m, r)?;
    let phi0 = differentiated(&seed, start, 0, r)?;
    let mass = phi0.integral();
    let phi0_unit = phi0.scaled(1.0 / mass);

    // running integral, cell averages of the piecewise-linear primitive
    let mut t_int: Vec<i128> = seed.clone();
    for _ in 0..m {
        t_int = second_difference_int(&t_int);
    }
    let mut prefix = 0i128;
    let mut avg = Vec::with_capacity(t_int.len());
    for &t in &t_int {
        avg.push(2 * prefix + t);
        prefix += t;
    }
    let tscale = ((2 * m * r) as f64 - SEED_BITS as f64 - r as f64 - 1.0).exp2();
    let big_theta = Kernel::from_values(
        r,
        start,
        avg.iter().map(|&x| to_f64_exact(x).map(|x| x * tscale)).collect::<Result<_>>()?,
        None,
        Parity::Odd,
    );

    // theta > 0 on the cells left of 0 down to -2 eps
    let zero = (-start) as usize;
    let mut run = 0usize;
    while run < zero && theta.values[zero - 1 - run] > 0.0 {
        run += 1;
    }
    if run < 2 {
        return Err(Error::Kernel("seed derivative is not positive near 0".into()));
    }
    let e = run / 2;
    let c: f64 = theta.values[zero - e..zero].iter().sum::<f64>() * h;
    let certificate = Certificate { c, eps: e as f64 * h };
    let theta = theta.with_certificate(certificate);

    let mut terms = vec![std::iter::once(theta.clone()).chain(std::iter::repeat_n(phi0_unit.clone(), d - 1)).collect::<Vec<_>>()];
    if d >= 2 {
        // multinomial expansion of the transverse Laplacian power
        let mut derivs = Vec::with_capacity(m as usize + 1);
        for a in 0..=m {
            derivs.push(differentiated(&seed, start, a, r)?.scaled(1.0 / mass));
        }
        let fact = |n: u32| (1..=n as u64).product::<u64>() as f64;
        let mut alpha = vec![0u32; d - 1];
        loop {
            if alpha.iter().sum::<u32>() == m {
                let coef = fact(m) / alpha.iter().map(|&a| fact(a)).product::<f64>();
                let mut term = vec![phi0.scaled(coef)];
                term.extend(alpha.iter().map(|&a| derivs[a as usize].clone()));
                terms.push(term);
            }
            let mut i = 0;
            loop {
                if i == alpha.len() {
                    break;
                }
                alpha[i] += 1;
                if alpha[i] <= m {
                    break;
                }
                alpha[i] = 0;
                i += 1;
            }
            if i == alpha.len() {
                break;
            }
        }
    }
    Ok(BigPsi { kernel: TensorKernel::new(d, terms)?.with_moments(Some(2 * m - 1)), theta, big_theta, phi0, phi0_unit, certificate, m })
}

impl BigPsi {
    /// `int_0^{1/8} |Theta|^p`, exact for the step representation.
    pub fn theta_tail_pnorm(&self, p: f64) -> f64 {
        let h = self.big_theta.cell_width();
        self.big_theta
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.big_theta.start + *i as i64 >= 0)
            .map(|(_, v)| v.abs().powf(p) * h)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{convolve, convolve_line};
    use crate::grid::{LebesgueExponent, Line};
    use crate::haar::{expectation, odd_block};

    /// Independent midpoint moment.
    fn moment_by_hand(k: &Kernel, m: u32) -> f64 {
        let h = (-(k.level() as f64)).exp2();
        let mut s = 0.0;
        for (i, v) in k.values().iter().enumerate() {
            let x = (k.start() + i as i64) as f64 * h + h / 2.0;
            s += v * x.powi(m as i32) * h;
        }
        s
    }

    #[test]
    fn moment_kernel_orders() {
        let k0 = make_moment_kernel(0, 1.0, 8).unwrap();
        assert!(moment_by_hand(&k0, 0).abs() < 1e-10);
        let k3 = make_moment_kernel(3, 1.0, 8).unwrap();
        for m in 0..=3 {
            assert!(moment_by_hand(&k3, m).abs() < 1e-10, "m = {m}");
            assert!(k3.exact_moment(m).abs() < 1e-10);
        }
        assert!(moment_by_hand(&k3, 4).abs() > 1e-6);
        assert_eq!(k3.values().iter().fold(0.0f64, |a, v| a.max(v.abs())), 1.0);
        let (a, b) = k3.support();
        assert!(a >= -1.0 && b <= 1.0);
        assert!(k3.parity_holds());
        assert_eq!(k3.parity(), Parity::Even);
        let k4 = make_difference_kernel(4, 1.0, 8).unwrap();
        assert_eq!(k4.parity(), Parity::Odd);
        assert!(k4.parity_holds());
        let k3 = make_difference_kernel(3, 1.0, 8).unwrap();
        assert_eq!(k3.parity(), Parity::Even);
        for m in 0..=3 {
            assert!(moment_by_hand(&k3, m).abs() < 1e-10);
            assert!(k3.exact_moment(m).abs() < 1e-10);
        }
    }

    #[test]
    fn moment_kernel_too_small() {
        assert!(matches!(make_moment_kernel(6, 0.25, 3), Err(Error::Kernel(_))));
        assert!(matches!(make_difference_kernel(6, 0.25, 3), Err(Error::Kernel(_))));
    }

    #[test]
    fn dilation_keeps_moments_and_l1() {
        let k = make_moment_kernel(3, 1.0, 7).unwrap();
        for j in 1..5 {
            let kj = k.dilate(j);
            for m in 0..=3 {
                assert!(moment_by_hand(&kj, m).abs() < 1e-10);
            }
            assert!((kj.l1_norm() - k.l1_norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn polynomials_are_annihilated() {
        let k = make_moment_kernel(3, 1.0, 5).unwrap();
        for deg in 0..=3 {
            let level = 9;
            let n = 6 << level;
            let x = Line::new(
                level,
                -(3 << level),
                (0..n)
                    .map(|i| {
                        let t = ((i - (3 << level)) as f64 + 0.5) / (1 << level) as f64;
                        C64::new(t.powi(deg) - 0.3 * t, 0.0)
                    })
                    .collect(),
            );
            let out = convolve_line(&x, &k);
            let lin = convolve_line(&Line::new(level, x.start, x.data.iter().map(|_| C64::new(0.0, 0.0)).collect()), &k);
            let _ = lin;
            let mut worst = 0.0f64;
            for q in (-(1i64 << level))..(1i64 << level) {
                worst = worst.max(out.get(q).norm());
            }
            assert!(worst < 1e-8, "degree {deg}: {worst}");
        }
    }

    #[test]
    fn psi_certificate_matches_convolution() {
        let psi = make_psi(3, 8).unwrap();
        assert_eq!(psi.moments(), Some(4));
        assert_eq!(psi.parity(), Parity::Odd);
        let (a, b) = psi.support();
        assert!(a > -0.5 && b < 0.5);
        for m in 0..=4 {
            assert!(moment_by_hand(&psi, m).abs() < 1e-10);
        }
        let cert = psi.certificate().unwrap();
        assert!(cert.c > 0.0 && cert.eps > 0.0);
        // odd step at the kernel resolution; output cell averages on [1/2, 1/2 + eps]
        let r = psi.level();
        let half = 1i64 << (r - 1);
        let step = Line::new(r, -half, (0..2 * half).map(|i| C64::new(if i < half { -1.0 } else { 1.0 }, 0.0)).collect());
        let out = convolve_line(&step, &psi);
        let cells = (cert.eps * (r as f64).exp2()).round() as i64;
        for q in half..half + cells {
            assert!(out.get(q).re >= cert.c - 1e-12, "cell {q}");
        }
    }

    #[test]
    fn psi_positive_plateau_and_moments() {
        let psi = make_psi_positive(4, 8).unwrap();
        for m in 0..=4 {
            assert!(moment_by_hand(&psi, m).abs() < 1e-10);
        }
        let h = psi.cell_width();
        for (i, v) in psi.values().iter().enumerate() {
            let a = (psi.start() + i as i64) as f64 * h;
            if a >= -0.5 && a + h <= -0.125 {
                assert!(*v >= 1.0);
            }
        }
        let (a, b) = psi.support();
        assert!(a >= -1.0 && b <= 1.0);
    }

    #[test]
    fn eta_small_profile() {
        let eta = make_eta_odd(1, 2).unwrap();
        let want = [2.0, -6.0, 6.0, -2.0];
        for (v, w) in eta.values().iter().zip(want) {
            assert!((v - w).abs() < 1e-12);
        }
        assert!(eta.parity_holds());
        let eta = make_eta_odd(3, 6).unwrap();
        let mom = half_line_moments(&eta, 3);
        assert!((mom[0] - 1.0).abs() < 1e-10);
        for v in &mom[1..] {
            assert!(v.abs() < 1e-10);
        }
        assert!(eta.parity_holds());
    }

    #[test]
    fn gl_expectation_is_odd_block() {
        let eta = make_eta_odd(1, 2).unwrap();
        for d in 1..=2 {
            for (n, l) in [(2u32, 2u32), (2, 4), (3, 5)] {
                let g = make_gl(&eta, l, d).unwrap();
                assert!(g.integral().norm() < 1e-10);
                let (a, b) = g.support_cells().unwrap();
                let scale = (g.level() as f64).exp2();
                for i in 0..d {
                    assert!(a[i] as f64 / scale > -(2f64.powi(-(l as i32) - 1)) - 1e-15);
                    assert!(b[i] as f64 / scale < 2f64.powi(-(l as i32) - 1) + 1e-15);
                }
                let e = expectation(&g, n).unwrap();
                let hn = odd_block(n, g.grid()).unwrap();
                assert!(e.max_abs_diff(&hn) < 1e-10, "d={d} N={n} l={l}");
            }
        }
        let eta = make_eta_odd(3, 5).unwrap();
        let g = make_gl(&eta, 2, 2).unwrap();
        for px in 0..=3u32 {
            for py in 0..=(3 - px) {
                assert!(g.moment(&[px, py]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn big_psi_properties() {
        for m in 1..=3 {
            let bp = make_big_psi(m, 8, 1).unwrap();
            assert!(bp.theta.parity_holds());
            for j in 0..2 * m {
                assert!(bp.theta.discrete_moment(j).abs() < 1e-10 * bp.theta.l1_norm(), "M={m} j={j}");
            }
            assert!(bp.big_theta.parity_holds());
            assert!(bp.big_theta.integral().abs() < 1e-10);
            assert!(bp.certificate.c > 0.0 && bp.certificate.eps > 0.0);
            assert!(bp.theta_tail_pnorm(1.0) > 0.0);
            let (a, b) = bp.theta.support();
            assert!(a >= -0.125 && b <= 0.125);
        }
    }

    #[test]
    fn big_psi_two_dimensional_moments() {
        let bp = make_big_psi(1, 6, 2).unwrap();
        let g = bp.kernel.to_grid_function().unwrap();
        let scale = g.lp_norm(LebesgueExponent::Finite(1.0));
        for px in 0..2u32 {
            for py in 0..(2 - px) {
                assert!(g.moment(&[px, py]).norm() < 1e-10 * scale);
            }
        }
        let vartheta: f64 = bp.kernel.terms()[1..].iter().map(|t| t[1].integral() * t[0].integral()).sum();
        assert!(vartheta.abs() < 1e-10 * scale);
        // separable engine agrees with the dense kernel on a test function
        let f = GridFunction::from_real_cells(DyadicGrid::cube(2, 6, 0, 1).unwrap(), (0..64).map(|i| (vec![i, (i * 7) % 64], 1.0))).unwrap();
        let out = convolve(&f, &bp.kernel).unwrap();
        assert!(out.integral().norm() < 1e-9 * scale);
    }

    #[test]
    fn text_round_trip() {
        let psi = make_psi(2, 7).unwrap();
        let back = Kernel::from_text(&psi.to_text()).unwrap();
        assert_eq!(back, psi);
    }
}
