use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::report::{Check, Report};
use crate::RunError;

type Case = (&'static str, &'static str, &'static str, &'static [(&'static str, &'static str)]);

/// Small runs covering every command: (name, command, action, settings).
const CASES: &[Case] = &[
    ("constants", "constants", "", &[("n_max", "120"), ("tolerance", "0.2")]),
    ("transition-mass", "transition", "mass", &[("n_max", "80")]),
    (
        "partition-mean-one",
        "partition",
        "mean-one",
        &[("beta", "0.2"), ("t", "1,2"), ("n_env", "200"), ("n_paths", "20")],
    ),
    ("moments-lambda", "moments", "lambda", &[("r_max", "3"), ("n_samples", "20000")]),
    ("moments-a-cells", "moments", "a-cells", &[("t", "2"), ("l", "2,4"), ("r", "1,3"), ("n_samples", "20000")]),
    ("factorization", "factorization", "", &[("t", "2,8"), ("n_env", "32"), ("sigma", "0.5")]),
    ("she-integrate", "she", "integrate", &[("t", "0.25"), ("box", "4")]),
    ("she-ratio", "she", "ratio", &[("checkpoints", "0.5,1"), ("box", "4"), ("n_env", "8"), ("y_radius", "1")]),
    (
        "tail-discrete",
        "tail",
        "discrete",
        &[
            ("lazy_n", "1,2,4"),
            ("t", "1,4"),
            ("n_env", "200"),
            ("n_paths", "20"),
            ("n_pairs", "4000"),
            ("n_samples", "4000"),
            ("quad_points", "24"),
        ],
    ),
];

/// Worker counts whose artifacts must agree byte for byte.
const WORKERS: [usize; 2] = [1, 2];

pub fn run(cfg: &RunConfig) -> Result<Report, RunError> {
    let seed: u64 = cfg.get("seed", "1")?;
    let root = cfg.out_dir().join("selftest");
    let mut rep = Report::new(cfg, seed)?;
    let mut runs = Vec::new();
    for (name, command, action, settings) in CASES {
        let mut digests: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
        let mut passed = true;
        for w in WORKERS {
            let dir = root.join(format!("w{w}")).join(name);
            let mut kv: Vec<(String, String)> = settings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            kv.push(("seed".into(), seed.to_string()));
            kv.push(("timing".into(), "false".into()));
            kv.push(("out".into(), dir.display().to_string()));
            let sub = RunConfig::resolve(command, action, None, &kv)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| ConfigError::Usage(format!("cannot start {w} workers: {e}")))?;
            let mut r = pool.install(|| super::dispatch(&sub))?;
            r.finish(&sub)?;
            passed &= r.passed();
            if w == WORKERS[0] {
                for c in &r.checks {
                    rep.check(Check::new(
                        format!("{name}: {}", c.name),
                        c.passed,
                        c.value,
                        c.tolerance,
                        c.detail.clone(),
                    ));
                }
            }
            digests.push(read_tree(&dir)?);
        }
        let same = digests.windows(2).all(|p| p[0] == p[1]);
        let files = digests[0].len();
        rep.check(Check::new(
            format!("{name}: reproducible"),
            same && files > 0,
            files as f64,
            0.0,
            format!("artifacts byte-identical across workers {WORKERS:?}"),
        ));
        runs.push(json!({"name": name, "command": command, "action": action, "passed": passed, "files": files, "identical": same}));
    }
    rep.detail = json!({"runs": runs});
    Ok(rep)
}

fn read_tree(dir: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![PathBuf::from(dir)];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p)? {
            let path = e?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
                // Each run names its own out dir; mask it before comparing.
                let bytes = std::fs::read(&path)?;
                let text = String::from_utf8_lossy(&bytes).replace(&dir.display().to_string(), "<out>");
                out.insert(rel, text.into_bytes());
            }
        }
    }
    Ok(out)
}
