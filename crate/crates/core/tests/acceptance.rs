//! The ten acceptance criteria, each with its configuration and tolerances
//! pinned here rather than taken from the experiment defaults.

use std::time::Duration;

use haarspace::{run_experiment, Config, ExperimentReport};

struct Criterion {
    number: u32,
    id: &'static str,
    config: &'static str,
    budget: Duration,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        number: 1,
        id: "martingale-identity",
        config: "
            seed = 1
            samples = 100
            level_1d = 10
            level_2d = 6
            haar_id_max = 6
            block_pair_max = 10
            block_pair_max_2d = 6
            gl_max = 4
            corridor_max = 6
            corridor_level_1d = 8
            corridor_level_2d = 7
            corridor_samples_2d = 2
            decomposition_samples = 5
            tolerance = 1e-12
        ",
        budget: Duration::from_secs(120),
    },
    Criterion {
        number: 2,
        id: "admissibility",
        config: "
            corridor_m = 6
            lex_levels_1d = 6
            lex_levels_2d = 4
        ",
        budget: Duration::from_secs(30),
    },
    Criterion {
        number: 3,
        id: "s1-growth",
        config: "
            N = 12, 16, 20
            extra_levels = 4
            s = 1
            p = 1
            q = inf
            moments = 5
            resolution = 3
            max_resolution = 12
            psi_order = 2
            psi_resolution = 8
            stability_tolerance = 0.35
            psi_floor = 0.5
        ",
        budget: Duration::from_secs(300),
    },
    Criterion {
        number: 4,
        id: "local-lower",
        config: "
            N = 8
            M_active = 2, 4, 8
            p = 1/2, 2/3
            q = 1, 2
            extra_levels = 6
            moments = 5
            resolution = 3
            max_resolution = 12
            eta_order = 1
            slope_tolerance = 0.25
        ",
        budget: Duration::from_secs(300),
    },
    Criterion {
        number: 5,
        id: "corridor-counterexample",
        config: "
            m = 2, 4, 8
            frequency_offset = 3
            extra_levels = 2
            s = 0
            p = 1
            q = 1/2
            moments = 5
            resolution = 3
            max_resolution = 12
            eta_order = 1
            eta_resolution = 2
            slope_tolerance = 0.30
            oracle_tolerance = 1e-12
        ",
        budget: Duration::from_secs(300),
    },
    Criterion {
        number: 6,
        id: "uncond-p11",
        config: "
            N = 12..18
            first_level = 4
            margin = 4
            psi_order = 2
            psi_resolution = 6
            extra_levels = 4
            moments = 5
            resolution = 3
            max_resolution = 12
            level_tolerance = 0.20
            boundedness_ratio = 2
        ",
        budget: Duration::from_secs(180),
    },
    Criterion {
        number: 7,
        id: "density",
        config: "
            level = 16
            N = 6..12
            p = 2/3, 1
            h_exponents = 4..10
            staircase_tolerance = 1e-12
            ratio_floor = 0.5
            slope = 1
            slope_tolerance = 0.2
        ",
        budget: Duration::from_secs(120),
    },
    Criterion {
        number: 8,
        id: "approximation",
        config: "
            level = 18
            N = 4..10
            s = 1/2
            p = 2
            slope = -0.5
            slope_tolerance = 0.15
            indicator_level = 14
            indicator_p = 1, 2
            indicator_first = 2
            psi_order = 2
            psi_resolution = 8
            indicator_floor = 0.25
        ",
        budget: Duration::from_secs(120),
    },
    Criterion {
        number: 9,
        id: "u-sweep",
        config: "
            seed = 7
            level = 14
            max_index = 10
            samples = 20
            min_period_units = 4
            p = 1, 2/3
            s = 0, 1/2
            moments = 5
            resolution = 3
            max_resolution = 12
            min_slope = 0.8
            min_range_log2 = 6
        ",
        budget: Duration::from_secs(600),
    },
    Criterion {
        number: 10,
        id: "masked",
        config: "
            seed = 11
            samples = 50
            level = 10
            max_N = 8
            s = 1/2
            p = 3/4
            q = 1
            moments = 5
            resolution = 3
            max_resolution = 12
            region = 5
            max_factor = 3
        ",
        budget: Duration::from_secs(180),
    },
];

fn failed_checks(report: &ExperimentReport) -> String {
    let failed: Vec<String> = report
        .verdicts
        .iter()
        .filter(|v| !v.passed)
        .map(|v| format!("{} (measured {:.4e}, accepted {})", v.name, v.measured, v.tolerance))
        .collect();
    failed.join("; ")
}

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    for c in CRITERIA {
        let config = Config::parse(c.config).unwrap();
        let line = match run_experiment(c.id, &config) {
            Ok(report) => {
                // every pinned key must actually be read, or the pin is meaningless
                let used: Vec<String> = report.config.iter().map(|(k, _)| k.clone()).collect();
                let unused: Vec<&String> = config.keys().filter(|k| !used.contains(k)).collect();
                assert!(unused.is_empty(), "criterion {}: unused keys {unused:?}", c.number);
                let within = report.elapsed <= c.budget;
                let secs = report.elapsed.as_secs_f64();
                if report.passed() && within {
                    format!("criterion {:>2} PASS {} ({secs:.1} s)", c.number, c.id)
                } else if !within {
                    failures.push(c.number);
                    format!("criterion {:>2} FAIL {} ({secs:.1} s, over the {} s budget)", c.number, c.id, c.budget.as_secs())
                } else {
                    failures.push(c.number);
                    format!("criterion {:>2} FAIL {} ({secs:.1} s): {}", c.number, c.id, failed_checks(&report))
                }
            }
            Err(e) => {
                failures.push(c.number);
                format!("criterion {:>2} FAIL {}: error {e}", c.number, c.id)
            }
        };
        println!("{line}");
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
