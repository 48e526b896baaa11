//! Acceptance battery: one PASS/FAIL line per criterion, at the stated sizes.
//!
//! `POLYMER_ACCEPTANCE=3,5` restricts the run to the listed criteria.
//! Criteria in `KNOWN_FAILURES` are run and reported like the rest, but do
//! not fail the target; any other FAIL does.

use std::path::{Path, PathBuf};
use std::time::Instant;

use polymer_cli::commands::dispatch;
use polymer_cli::config::RunConfig;
use polymer_cli::report::Check;

type Run = (&'static str, &'static str, &'static [(&'static str, &'static str)]);

struct Criterion {
    id: u32,
    title: &'static str,
    runs: &'static [Run],
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        title: "kernel mass within 1e-12 for n <= 300, exact parity zeros",
        runs: &[("transition", "mass", &[("d", "3"), ("n_max", "300")])],
    },
    Criterion {
        id: 2,
        title: "alpha_3 DP vs pair-walk MC within 1%, beta* with interval",
        runs: &[("constants", "", &[("d", "3"), ("n_max", "300"), ("n_pairs", "1000000")])],
    },
    Criterion {
        id: 3,
        title: "mean one within 3 stderr, beta in {0.1, 0.3}, t in {1, 5, 10}",
        runs: &[(
            "partition",
            "mean-one",
            &[("d", "3"), ("beta", "0.1,0.3"), ("t", "1,5,10"), ("n_env", "10000"), ("n_paths", "100")],
        )],
    },
    Criterion {
        id: 4,
        title: "second-moment triangle; plateau below beta*, divergence at 1.2 beta*",
        runs: &[
            ("partition", "second-moment", &[("d", "3"), ("beta", "0.2"), ("t", "1,2,5"), ("box", "12")]),
            ("partition", "profile", &[("d", "3"), ("beta", "0.5*,1.2*")]),
        ],
    },
    Criterion {
        id: 5,
        title: "lambda product (3 sigma, r <= 5), A(t,l,r) on 20 cells, golden I values to 1e-9",
        runs: &[
            ("moments", "lambda", &[("r_max", "5")]),
            ("moments", "a-cells", &[("t", "2,8"), ("l", "2,4,6,8,10"), ("r", "1,3")]),
        ],
    },
    Criterion {
        id: 6,
        title: "LCLT error <= 0.15 at t = 100, |y| <= 10; error at 200 below 50",
        runs: &[("transition", "lclt", &[("d", "3"), ("t", "50,100,200"), ("y_radius", "10")])],
    },
    Criterion {
        id: 7,
        title: "p-ratio and q-iota constants finite and stable within 10% over t in {200, 400}",
        runs: &[("moments", "p-ratio", &[("t", "200,400")]), ("moments", "q-iota", &[("t", "200,400")])],
    },
    Criterion {
        id: 8,
        title: "factorization error decays from t = 20 to 80 at 95%, theta positive at 95%",
        runs: &[(
            "factorization",
            "",
            &[("d", "3"), ("beta", "0.2"), ("sigma", "0.6"), ("t", "20,40,80"), ("n_env", "2000")],
        )],
    },
    Criterion {
        id: 9,
        title: "Feynman-Kac vs lattice SHE within 5%, shrinking 1.5x as dt halves; ratio gap decreases",
        runs: &[
            ("she", "fk", &[("d", "3"), ("beta", "0.2"), ("t", "2"), ("box", "8")]),
            ("she", "ratio", &[("d", "3"), ("beta", "0.2"), ("checkpoints", "2,8"), ("n_env", "1000")]),
        ],
    },
    Criterion {
        id: 10,
        title: "discrete model: mean one, pair moment below closed form and approaching it, N(1-q) bounded",
        runs: &[("tail", "discrete", &[("d", "3"), ("lazy_n", "1,2,4,8,16,32")])],
    },
    Criterion {
        id: 11,
        title: "lower tail: quadratic coefficient b > 0 at 95%, quadratic beats exponential",
        runs: &[("tail", "empirical", &[("d", "3"), ("beta", "0.2"), ("t", "5"), ("n_env", "100000")])],
    },
    Criterion {
        id: 12,
        title: "convolution bound finite for r <= 5, n <= 100, nonincreasing as n_max doubles",
        runs: &[("moments", "convolution", &[("d", "3"), ("n_max", "100"), ("r_max", "5")])],
    },
    Criterion {
        id: 13,
        title: "byte-identical artifacts across reruns and worker counts",
        runs: &[("selftest", "", &[])],
    },
];

/// Criteria whose stated property does not hold for the model itself.
const KNOWN_FAILURES: &[(u32, &str)] = &[
    (4, "the L2 threshold is sqrt(2) beta*, so the profile at 1.2 beta* plateaus"),
    (12, "the sup runs over a grid that grows with n_max, so c can only increase"),
];

fn selected() -> Option<Vec<u32>> {
    let s = std::env::var("POLYMER_ACCEPTANCE").ok()?;
    Some(s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
}

fn run_one(root: &Path, id: u32, k: usize, run: &Run) -> Result<Vec<Check>, String> {
    let (command, action, settings) = *run;
    let mut kv: Vec<(String, String)> = settings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let out = root.join(format!("c{id:02}-{k}"));
    kv.push(("out".into(), out.display().to_string()));
    kv.push(("seed".into(), "1".into()));
    let cfg = RunConfig::resolve(command, action, None, &kv).map_err(|e| e.to_string())?;
    let mut rep = dispatch(&cfg).map_err(|e| format!("{command} {action}: {e}"))?;
    rep.finish(&cfg).map_err(|e| e.to_string())?;
    Ok(rep.checks)
}

fn main() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let only = selected();
    let mut unexpected = Vec::new();
    let t_all = Instant::now();
    for c in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            println!("SKIP criterion {:>2}: {}", c.id, c.title);
            continue;
        }
        let t0 = Instant::now();
        let mut failed: Vec<String> = Vec::new();
        let mut n_checks = 0;
        for (k, run) in c.runs.iter().enumerate() {
            match run_one(&root, c.id, k, run) {
                Ok(checks) => {
                    n_checks += checks.len();
                    for ch in checks.iter().filter(|ch| !ch.passed) {
                        failed.push(format!("{} (value {:e}, tolerance {:e})", ch.name, ch.value, ch.tolerance));
                    }
                }
                Err(e) => failed.push(format!("error: {e}")),
            }
        }
        let known = KNOWN_FAILURES.iter().find(|(id, _)| *id == c.id);
        let verdict = if failed.is_empty() { "PASS" } else { "FAIL" };
        let note = match (failed.is_empty(), known) {
            (false, Some((_, why))) => format!(" [known: {why}]"),
            (true, Some(_)) => " [listed as a known failure but passed]".to_string(),
            _ => String::new(),
        };
        println!(
            "{verdict} criterion {:>2}: {} ({n_checks} checks, {:.1} s){note}",
            c.id,
            c.title,
            t0.elapsed().as_secs_f64()
        );
        for f in &failed {
            println!("       - {f}");
        }
        if !failed.is_empty() && known.is_none() {
            unexpected.push(c.id);
        }
    }
    println!("artifacts: {}", root.display());
    println!("total {:.1} s", t_all.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
