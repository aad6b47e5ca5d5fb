//! JSON run configuration and its validation.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::StabilityMode;
use crate::expr::{parse, Expr};
use crate::psi::{FractionalOrder, Grid, PsiFunction, Spacing};
use crate::solver::{estimate_lipschitz, forcing_sup, LipschitzData, ProblemSpec, SampleBox};

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_BOX: (f64, f64) = (-1.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub alpha: f64,
    pub b: f64,
    pub theta0: f64,
    pub psi: PsiConfig,
    #[serde(rename = "F")]
    pub f: String,
    #[serde(rename = "H")]
    pub h: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiFamily {
    Identity,
    ShiftedLog,
    Power,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiConfig {
    pub family: PsiFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub spacing: Spacing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBoxConfig {
    pub theta: [f64; 2],
    pub w: [f64; 2],
    pub g: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(rename = "W1", default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(rename = "W2", default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(rename = "W3", default, skip_serializing_if = "Option::is_none")]
    pub w3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<String>,
    #[serde(default)]
    pub estimate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub sample_box: Option<SampleBoxConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub h: String,
    pub epsilon: f64,
    pub mode: StabilityMode,
}

/// A configuration problem tied to the offending field path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

fn expr_at(field: &str, source: &str) -> Result<Expr, ConfigError> {
    parse(source).map_err(|e| bad(field, e.to_string()))
}

fn check<T: std::fmt::Display>(
    field: &str,
    value: T,
    ok: bool,
    want: &str,
) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(bad(field, format!("must be {want}, got {value}")))
    }
}

fn nonneg(field: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) => check(field, x, x >= 0.0 && x.is_finite(), "finite and >= 0"),
        None => Ok(()),
    }
}

fn range(field: &str, r: [f64; 2]) -> Result<(f64, f64), ConfigError> {
    check(
        field,
        format!("[{}, {}]", r[0], r[1]),
        r[0].is_finite() && r[1].is_finite() && r[0] <= r[1],
        "a finite [lo, hi] with lo <= hi",
    )?;
    Ok((r[0], r[1]))
}

#[derive(Debug, Clone)]
pub enum LipschitzSource {
    /// W1 and W2 given; W3 given or computed from the zero-argument forcing.
    Supplied { w1: f64, w2: f64, w3: Option<f64> },
    Estimate {
        samples: usize,
        seed: u64,
        sample_box: SampleBox,
    },
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub lipschitz: Option<LipschitzSource>,
    pub rho: Option<Expr>,
}

#[derive(Debug, Clone)]
pub struct Stability {
    pub h: Expr,
    pub epsilon: f64,
    pub mode: StabilityMode,
}

/// A configuration whose every section has been checked.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: Config,
    pub spec: ProblemSpec,
    pub grid: Arc<Grid>,
    pub tol: f64,
    pub max_iter: usize,
    pub analysis: Option<Analysis>,
    pub stability: Option<Stability>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad("config", format!("cannot read {}: {e}", path.display())))?;
        Config::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        serde_json::from_str(text).map_err(|e| bad("config", e.to_string()))
    }

    fn psi(&self) -> Result<PsiFunction, ConfigError> {
        let p = &self.problem.psi;
        let unused = |name: &str, present: bool| {
            if present {
                Err(bad(
                    &format!("problem.psi.{name}"),
                    format!("not used by family {:?}", p.family),
                ))
            } else {
                Ok(())
            }
        };
        match p.family {
            PsiFamily::Identity => {
                unused("sigma", p.sigma.is_some())?;
                unused("shift", p.shift.is_some())?;
                unused("expr", p.expr.is_some())?;
                Ok(PsiFunction::Identity)
            }
            PsiFamily::ShiftedLog => {
                unused("sigma", p.sigma.is_some())?;
                unused("expr", p.expr.is_some())?;
                let shift = p
                    .shift
                    .ok_or_else(|| bad("problem.psi.shift", "required for shifted_log"))?;
                PsiFunction::shifted_log(shift).map_err(|e| bad("problem.psi.shift", e.to_string()))
            }
            PsiFamily::Power => {
                unused("shift", p.shift.is_some())?;
                unused("expr", p.expr.is_some())?;
                let sigma = p
                    .sigma
                    .ok_or_else(|| bad("problem.psi.sigma", "required for power"))?;
                PsiFunction::power(sigma).map_err(|e| bad("problem.psi.sigma", e.to_string()))
            }
            PsiFamily::Custom => {
                unused("sigma", p.sigma.is_some())?;
                unused("shift", p.shift.is_some())?;
                let src = p
                    .expr
                    .as_deref()
                    .ok_or_else(|| bad("problem.psi.expr", "required for custom"))?;
                PsiFunction::custom(expr_at("problem.psi.expr", src)?)
                    .map_err(|e| bad("problem.psi.expr", e.to_string()))
            }
        }
    }

    /// Checks every present section; `grid_n` overrides `grid.n`.
    pub fn validate(mut self, grid_n: Option<usize>) -> Result<Validated, ConfigError> {
        if let Some(n) = grid_n {
            self.grid.n = n;
        }
        let p = &self.problem;
        let alpha = FractionalOrder::new(p.alpha).map_err(|_| {
            bad(
                "problem.alpha",
                format!("must be in (0, 1), got {}", p.alpha),
            )
        })?;
        check(
            "problem.b",
            p.b,
            p.b > 0.0 && p.b.is_finite(),
            "finite and > 0",
        )?;
        check("problem.theta0", p.theta0, p.theta0.is_finite(), "finite")?;
        let psi = self.psi()?;
        let f = expr_at("problem.F", &p.f)?;
        let h = expr_at("problem.H", &p.h)?;
        let spec =
            ProblemSpec::new(alpha, p.b, p.theta0, psi.clone(), f.clone(), h).map_err(|e| {
                let field = if f
                    .free_vars()
                    .iter()
                    .any(|v| !crate::solver::F_VARS.contains(&v.as_str()))
                {
                    "problem.F"
                } else {
                    "problem.H"
                };
                bad(field, e.to_string())
            })?;

        check("grid.n", self.grid.n, self.grid.n >= 2, ">= 2")?;
        let grid = Grid::new(p.b, self.grid.n, self.grid.spacing, psi)
            .map_err(|e| bad("problem.psi", e.to_string()))?;

        let s = &self.solver;
        check(
            "solver.tol",
            s.tol,
            s.tol > 0.0 && s.tol.is_finite(),
            "finite and > 0",
        )?;
        check("solver.max_iter", s.max_iter, s.max_iter >= 1, ">= 1")?;

        let analysis = self.analysis.as_ref().map(validate_analysis).transpose()?;
        let stability = self
            .stability
            .as_ref()
            .map(|st| -> Result<Stability, ConfigError> {
                check(
                    "stability.epsilon",
                    st.epsilon,
                    st.epsilon > 0.0 && st.epsilon.is_finite(),
                    "finite and > 0",
                )?;
                let h = expr_at("stability.h", &st.h)?;
                if let Some(v) = h.free_vars().into_iter().find(|v| v != "z") {
                    return Err(bad("stability.h", format!("may only use `z`, found `{v}`")));
                }
                Ok(Stability {
                    h,
                    epsilon: st.epsilon,
                    mode: st.mode,
                })
            })
            .transpose()?;

        Ok(Validated {
            tol: s.tol,
            max_iter: s.max_iter,
            spec,
            grid: Arc::new(grid),
            analysis,
            stability,
            config: self,
        })
    }
}

fn validate_analysis(a: &AnalysisConfig) -> Result<Analysis, ConfigError> {
    nonneg("analysis.W1", a.w1)?;
    nonneg("analysis.W2", a.w2)?;
    nonneg("analysis.W3", a.w3)?;
    let rho = a
        .rho
        .as_deref()
        .map(|r| expr_at("analysis.rho", r))
        .transpose()?;
    if let Some(v) = rho.iter().flat_map(|r| r.free_vars()).find(|v| v != "z") {
        return Err(bad(
            "analysis.rho",
            format!("may only use `z`, found `{v}`"),
        ));
    }
    let lipschitz = if a.estimate {
        for (name, v) in [("W1", a.w1), ("W2", a.w2), ("W3", a.w3)] {
            if v.is_some() {
                return Err(bad(
                    &format!("analysis.{name}"),
                    "cannot be combined with estimate: true",
                ));
            }
        }
        let samples = a.samples.unwrap_or(DEFAULT_SAMPLES);
        check("analysis.samples", samples, samples >= 2, ">= 2")?;
        let sample_box = match &a.sample_box {
            Some(bx) => SampleBox {
                theta: range("analysis.box.theta", bx.theta)?,
                w: range("analysis.box.w", bx.w)?,
                g: range("analysis.box.g", bx.g)?,
            },
            None => SampleBox::uniform(DEFAULT_BOX.0, DEFAULT_BOX.1),
        };
        Some(LipschitzSource::Estimate {
            samples,
            seed: a.seed.unwrap_or(DEFAULT_SEED),
            sample_box,
        })
    } else {
        for (name, present) in [
            ("samples", a.samples.is_some()),
            ("seed", a.seed.is_some()),
            ("box", a.sample_box.is_some()),
        ] {
            if present {
                return Err(bad(
                    &format!("analysis.{name}"),
                    "only used with estimate: true",
                ));
            }
        }
        match (a.w1, a.w2) {
            (Some(w1), Some(w2)) => Some(LipschitzSource::Supplied { w1, w2, w3: a.w3 }),
            (None, None) if a.w3.is_none() => None,
            (None, _) => {
                return Err(bad(
                    "analysis.W1",
                    "required when Lipschitz data is supplied",
                ))
            }
            (_, None) => {
                return Err(bad(
                    "analysis.W2",
                    "required when Lipschitz data is supplied",
                ))
            }
        }
    };
    Ok(Analysis { lipschitz, rho })
}

impl Validated {
    /// Lipschitz data from the analysis section, supplied or estimated.
    pub fn lipschitz(&self) -> crate::Result<LipschitzData> {
        let missing = || {
            crate::Error::Precondition(
                "analysis: Lipschitz data required (give W1 and W2, or set estimate: true)".into(),
            )
        };
        match self
            .analysis
            .as_ref()
            .and_then(|a| a.lipschitz.as_ref())
            .ok_or_else(missing)?
        {
            LipschitzSource::Supplied { w1, w2, w3 } => {
                let w3 = match w3 {
                    Some(w3) => *w3,
                    None => forcing_sup(&self.spec, &self.grid)?,
                };
                LipschitzData::user(*w1, *w2, w3)
            }
            LipschitzSource::Estimate {
                samples,
                seed,
                sample_box,
            } => estimate_lipschitz(&self.spec, &self.grid, sample_box, *samples, *seed),
        }
    }

    pub fn rho(&self) -> Option<&Expr> {
        self.analysis.as_ref().and_then(|a| a.rho.as_ref())
    }
}
