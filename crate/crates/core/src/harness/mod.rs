//! Experiment registry, operator-norm probing and report emission.

mod config;
mod experiments;
mod report;

use std::sync::Arc;
use std::time::Instant;

pub use config::Config;
pub use report::{fit_slope, render_svg, ExperimentReport, Fit, Plot, Verdict};

use crate::besov::{diff_quasinorm, BesovParams, LocalMeans};
use crate::enumeration::{partial_sum, Enumeration};
use crate::error::{Error, Result};
use crate::grid::{DyadicGrid, GridFunction};
use crate::haar::{expectation, masked_level, CoefficientMask};

/// Operators that can be probed.
#[derive(Clone)]
pub enum Operator {
    Identity,
    /// `E_N`.
    Expectation(u32),
    /// `S_R` under an enumeration.
    PartialSum(Arc<Enumeration>, usize),
    /// `T_N[., a]`.
    Masked(CoefficientMask),
}

impl Operator {
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        match self {
            Operator::Identity => Ok(f.clone()),
            Operator::Expectation(n) => expectation(f, *n),
            Operator::PartialSum(e, r) => partial_sum(f, e, *r),
            Operator::Masked(m) => masked_level(f, m),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Operator::Identity => "identity".into(),
            Operator::Expectation(n) => format!("E_{n}"),
            Operator::PartialSum(e, r) => format!("S_{r}[{}]", e.name()),
            Operator::Masked(m) => format!("T_{}", m.level()),
        }
    }
}

/// Quasi-norm estimators usable as the norm of the probed space.
#[derive(Clone)]
pub enum Estimator {
    /// Local means up to level `k_max` (default `J - 2`).
    LocalMeans { means: Arc<LocalMeans>, k_max: Option<u32> },
    /// Second-difference quasi-norm (`0 < s < 2`, `q = inf`).
    Difference,
}

impl Estimator {
    pub fn eval(&self, f: &GridFunction, params: &BesovParams) -> Result<f64> {
        match self {
            Estimator::LocalMeans { means, k_max } => Ok(means.quasinorm(f, params, *k_max)?.value),
            Estimator::Difference => diff_quasinorm(f, params.s, params.p, None),
        }
    }
}

/// Best ratio found by [`op_lower_bound`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub ratio: f64,
    /// Index of the first candidate attaining it.
    pub best: usize,
}

fn inside(f: &GridFunction, q: &DyadicGrid) -> bool {
    match f.support_cells() {
        None => true,
        Some((a, b)) => {
            let s = (f.level() as f64).exp2();
            (0..f.dim()).all(|i| a[i] as f64 / s >= q.lo()[i] as f64 && b[i] as f64 / s <= q.hi()[i] as f64)
        }
    }
}

/// `max_f estimator(T f) / estimator(f)` over candidates supported in the cube `q`:
/// a lower bound for the local operator norm.
pub fn op_lower_bound(
    op: &Operator,
    params: &BesovParams,
    q: &DyadicGrid,
    candidates: &[GridFunction],
    estimator: &Estimator,
) -> Result<Probe> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates".into()));
    }
    let mut best = Probe { ratio: f64::NEG_INFINITY, best: 0 };
    for (i, f) in candidates.iter().enumerate() {
        if !inside(f, q) {
            return Err(Error::InvalidArgument(format!("candidate {i} is not supported in the probe cube")));
        }
        let den = estimator.eval(f, params)?;
        if !(den > 0.0) {
            return Err(Error::Estimator(format!("candidate {i} has zero norm")));
        }
        let ratio = estimator.eval(&op.apply(f)?, params)? / den;
        if ratio > best.ratio {
            best = Probe { ratio, best: i };
        }
    }
    Ok(best)
}

type Runner = fn(&Config) -> Result<ExperimentReport>;

/// A registered experiment.
pub struct Experiment {
    pub id: &'static str,
    pub summary: &'static str,
    /// Default configuration, tolerances included.
    pub defaults: &'static str,
    /// CSV columns.
    pub columns: &'static str,
    run: Runner,
}

pub fn experiments() -> &'static [Experiment] {
    experiments::REGISTRY
}

pub fn find_experiment(id: &str) -> Result<&'static Experiment> {
    experiments().iter().find(|e| e.id == id).ok_or_else(|| Error::UnknownExperiment(id.to_string()))
}

/// Runs experiment `id` with `config` layered over its defaults.
pub fn run_experiment(id: &str, config: &Config) -> Result<ExperimentReport> {
    let exp = find_experiment(id)?;
    let cfg = config.over(&Config::parse(exp.defaults)?);
    let start = Instant::now();
    let mut report = (exp.run)(&cfg)?;
    report.elapsed = start.elapsed();
    report.config = cfg.used();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::C64;

    fn level_n_function(n: u32, level: u32) -> GridFunction {
        let grid = DyadicGrid::interval(level, 0, 1).unwrap();
        let s = (n as f64).exp2();
        GridFunction::sample(grid, |x| C64::new(((x[0] * s).floor() * 0.37).sin() + 0.2, 0.0)).unwrap()
    }

    #[test]
    fn probing_examples() {
        let lm = Arc::new(LocalMeans::new(3, 3).unwrap());
        let est = Estimator::LocalMeans { means: lm, k_max: None };
        let params = BesovParams::new(0.5, 1.0, 1.0).unwrap();
        let q = DyadicGrid::interval(0, 0, 1).unwrap();
        let f = level_n_function(3, 8);
        let p = op_lower_bound(&Operator::Expectation(3), &params, &q, &[f.clone()], &est).unwrap();
        assert!((p.ratio - 1.0).abs() < 1e-12);
        let p = op_lower_bound(&Operator::Identity, &params, &q, &[f.clone(), level_n_function(5, 8)], &est).unwrap();
        assert_eq!(p, Probe { ratio: 1.0, best: 0 });
        assert!(op_lower_bound(&Operator::Identity, &params, &q, &[], &est).is_err());
        let z = GridFunction::zero(f.grid().clone());
        assert!(matches!(op_lower_bound(&Operator::Identity, &params, &q, &[z], &est), Err(Error::Estimator(_))));
        let outside = f.translate(&[256]).unwrap();
        assert!(op_lower_bound(&Operator::Identity, &params, &q, &[outside], &est).is_err());
    }

    #[test]
    fn probing_takes_the_first_maximizer() {
        let lm = Arc::new(LocalMeans::new(3, 3).unwrap());
        let est = Estimator::LocalMeans { means: lm, k_max: None };
        let params = BesovParams::new(0.5, 1.0, 1.0).unwrap();
        let q = DyadicGrid::interval(0, 0, 1).unwrap();
        let op = Operator::Expectation(4);
        let cands: Vec<GridFunction> = [2u32, 5, 7, 5].iter().map(|&n| level_n_function(n, 8)).collect();
        let single: Vec<f64> = cands.iter().map(|f| op_lower_bound(&op, &params, &q, &[f.clone()], &est).unwrap().ratio).collect();
        let best = op_lower_bound(&op, &params, &q, &cands, &est).unwrap();
        let max = single.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.ratio, max);
        assert_eq!(best.best, single.iter().position(|&r| r == max).unwrap());
        assert!(best.best < 3);
    }

    #[test]
    fn registry_lists_every_experiment() {
        let ids: Vec<&str> = experiments().iter().map(|e| e.id).collect();
        for id in ["martingale-identity", "admissibility", "s1-growth", "local-lower", "corridor-counterexample", "uncond-p11", "density", "approximation", "u-sweep", "masked"] {
            assert!(ids.contains(&id), "{id}");
        }
        assert!(matches!(run_experiment("nope", &Config::default()), Err(Error::UnknownExperiment(_))));
        for e in experiments() {
            Config::parse(e.defaults).unwrap();
        }
    }
}
