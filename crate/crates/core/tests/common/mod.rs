#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub const GAMMA_1_5: f64 = 0.886_226_925_452_758;

/// Config for N^{1/2}ϑ = Γ(1.5) on [0, 1], whose solution is √z.
pub fn sqrt_config() -> Value {
    json!({
        "problem": {"alpha": 0.5, "b": 1.0, "theta0": 0.0, "psi": {"family": "identity"},
                    "F": "0.886226925452758", "H": "0"},
        "grid": {"n": 1024, "spacing": "uniform_in_z"},
        "solver": {"tol": 1e-10, "max_iter": 100}
    })
}

pub fn set(config: &mut Value, path: &[&str], value: Value) {
    let mut cur = config;
    for key in &path[..path.len() - 1] {
        cur = cur
            .as_object_mut()
            .unwrap()
            .entry(*key)
            .or_insert(json!({}));
    }
    cur[path[path.len() - 1]] = value;
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
    pub out: PathBuf,
}

impl Run {
    pub fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out.join(name)).unwrap()
    }

    pub fn report(&self) -> Value {
        serde_json::from_str(&self.read("report.json")).unwrap()
    }

    /// Parses a CSV written by the tool into its header and columns.
    pub fn csv(&self, name: &str) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut reader = csv::Reader::from_path(self.out.join(name)).unwrap();
        let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
        let mut cols = vec![Vec::new(); header.len()];
        for rec in reader.records() {
            for (c, field) in cols.iter_mut().zip(rec.unwrap().iter()) {
                c.push(field.parse::<f64>().unwrap());
            }
        }
        (header, cols)
    }
}

fn output(o: Output, out: &Path) -> Run {
    Run {
        code: o.status.code().expect("terminated by signal"),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
        out: out.to_path_buf(),
    }
}

/// Writes `config` into `dir` and runs one subcommand with `--out dir/out`.
pub fn run(dir: &Path, subcommand: &str, config: &Value, extra: &[&str]) -> Run {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let out = dir.join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_psi-caputo"))
        .arg(subcommand)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    output(o, &out)
}

/// Report with the run-dependent timing field removed.
pub fn stripped_report(run: &Run) -> Value {
    let mut v = run.report();
    v.as_object_mut().unwrap().remove("timing");
    v
}

pub fn erf(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..160 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

/// Γ(x) for x > 0 from Stirling's series after shifting x up by 12; kept
/// independent of the library's Lanczos evaluation.
pub fn oracle_gamma(x: f64) -> f64 {
    let mut shift = 0.0;
    let mut y = x;
    while y < 12.0 {
        shift += y.ln();
        y += 1.0;
    }
    let inv = 1.0 / y;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
    ((y - 0.5) * y.ln() - y + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift).exp()
}

/// E_{1/2}(x) = e^{x²} erfc(−x).
pub fn oracle_ml_half(x: f64) -> f64 {
    (x * x).exp() * (1.0 + erf(x))
}
