//! Quantitative guarantees: ψ-Gronwall majorants, the a-priori estimate,
//! Ulam-type stability constants and perturbation experiments.

use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::frac_ops::{ProductRule, SampledFunction};
use crate::psi::{FractionalOrder, Grid, PsiFunction};
use crate::solver::{LipschitzData, PicardSolver, ProblemSpec, SolutionTrace};
use crate::special::{gamma, mittag_leffler};

/// A term of the Gronwall series is dropped once it falls below this
/// fraction of the running value.
pub const GRONWALL_REL_TOL: f64 = 1e-15;
pub const GRONWALL_MAX_TERMS: usize = 200;
/// Slack allowed when checking that ρ is nondecreasing.
pub const MONOTONE_SLACK: f64 = 1e-12;
/// Relative slack on perturbation-size preconditions, absorbing rounding in
/// products such as ε·ρ(z).
pub const PRECONDITION_SLACK: f64 = 1e-12;
/// Relative slack when comparing a deviation to its bound; the UH bound is
/// attained exactly when F does not depend on ϑ or w.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    Gronwall,
    APriori,
    UH,
    UHR,
}

fn serialize_trace<S: Serializer>(
    v: &SampledFunction,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    v.values().serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum BoundValue {
    Scalar(f64),
    #[serde(serialize_with = "serialize_trace")]
    Trace(SampledFunction),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInputs {
    pub alpha: f64,
    pub psi: String,
    pub b: f64,
    #[serde(rename = "W1", skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(rename = "W2", skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(rename = "W3", skip_serializing_if = "Option::is_none")]
    pub w3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_q3: Option<f64>,
}

impl BoundInputs {
    pub fn new(
        alpha: FractionalOrder,
        psi: &PsiFunction,
        b: f64,
        lip: Option<&LipschitzData>,
    ) -> Self {
        BoundInputs {
            alpha: alpha.get(),
            psi: psi.to_string(),
            b,
            w1: lip.map(|l| l.w1),
            w2: lip.map(|l| l.w2),
            w3: lip.map(|l| l.w3),
            gamma_q3: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub value: BoundValue,
    pub inputs: BoundInputs,
}

impl BoundReport {
    pub fn new(kind: BoundKind, value: BoundValue, inputs: BoundInputs) -> Result<Self> {
        let ok = match &value {
            BoundValue::Scalar(v) => v.is_finite() && *v >= 0.0,
            BoundValue::Trace(t) => t.values().iter().all(|v| v.is_finite() && *v >= 0.0),
        };
        if !ok {
            return Err(Error::Domain(format!(
                "{kind:?} bound is negative or not finite"
            )));
        }
        Ok(BoundReport {
            kind,
            value,
            inputs,
        })
    }
}

fn require_nonnegative(name: &str, v: &SampledFunction) -> Result<()> {
    if let Some((i, x)) = v.values().iter().enumerate().find(|(_, x)| **x < 0.0) {
        return Err(Error::Precondition(format!(
            "{name} is negative at node {i} (z = {}): {x}",
            v.grid().nodes()[i]
        )));
    }
    Ok(())
}

fn require_nondecreasing(name: &str, values: &[f64], nodes: &[f64], from: usize) -> Result<()> {
    for i in from + 1..values.len() {
        let (prev, cur) = (values[i - 1], values[i]);
        if cur < prev - MONOTONE_SLACK * prev.abs().max(1.0) {
            return Err(Error::Precondition(format!(
                "{name} decreases at node {i} (z = {}): {prev} -> {cur}",
                nodes[i]
            )));
        }
    }
    Ok(())
}

/// ψ-Gronwall majorant
///
/// ```text
/// η(z) + Σ_{m≥1} [ρ(z)Γ(α)]^m I^{αm,ψ}η(z)
/// ```
///
/// where I^{αm,ψ}η is built by applying I^{α,ψ} m times. The series stops at
/// a node once its term drops below [`GRONWALL_REL_TOL`] of the running
/// value, and after [`GRONWALL_MAX_TERMS`] terms at the latest.
pub fn gronwall_bound(
    eta: &SampledFunction,
    rho: &SampledFunction,
    alpha: FractionalOrder,
) -> Result<SampledFunction> {
    crate::frac_ops::same_grid(eta.grid(), rho.grid())?;
    require_nonnegative("eta", eta)?;
    require_nonnegative("rho", rho)?;
    require_nondecreasing("rho", rho.values(), rho.grid().nodes(), 0)?;

    let a = alpha.get();
    let gamma_a = gamma(a)?;
    let rule = ProductRule::new(a, eta.grid().clone())?;
    let factors: Vec<f64> = rho.values().iter().map(|r| r * gamma_a).collect();
    let mut bound = eta.values().to_vec();
    let mut powers = vec![1.0; bound.len()];
    let mut active: Vec<bool> = vec![true; bound.len()];
    let mut iterated = eta.values().to_vec();
    for _ in 0..GRONWALL_MAX_TERMS {
        iterated = rule.apply(&iterated);
        let mut any = false;
        for i in 0..bound.len() {
            if !active[i] {
                continue;
            }
            powers[i] *= factors[i];
            let term = powers[i] * iterated[i];
            bound[i] += term;
            if term <= GRONWALL_REL_TOL * bound[i] {
                active[i] = false;
            } else {
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    if let Some(i) = bound.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "Gronwall series overflows at node {i}"
        )));
    }
    eta.with_values(bound)
}

/// Closed form η·E_α(ρ Γ(α) (ψ(z) − ψ(0))^α) for constant η and ρ.
pub fn gronwall_bound_constant(
    eta0: f64,
    rho0: f64,
    alpha: FractionalOrder,
    psi: &PsiFunction,
    z: f64,
) -> Result<f64> {
    if !(eta0 >= 0.0) || !(rho0 >= 0.0) {
        return Err(Error::Precondition(format!(
            "eta0 and rho0 must be >= 0, got {eta0} and {rho0}"
        )));
    }
    if eta0 == 0.0 {
        return Ok(0.0);
    }
    let a = alpha.get();
    let arg = rho0 * gamma(a)? * psi.increment(z)?.powf(a);
    Ok(eta0 * mittag_leffler(a, arg)?)
}

/// Mittag-Leffler growth factor E_α(W1 (1 + W2) (ψ(b) − ψ(0))^α).
fn growth_factor(alpha: FractionalOrder, span: f64, lip: &LipschitzData) -> Result<f64> {
    let a = alpha.get();
    mittag_leffler(a, lip.combined() * span.powf(a))
}

/// Bound on sup|ϑ|:
///
/// ```text
/// [|ϑ₀| + (ψ(b) − ψ(0))^α / Γ(α + 1) (W3 + W2 |ϑ₀|)] E_α(W1 (1 + W2) (ψ(b) − ψ(0))^α)
/// ```
pub fn a_priori_bound(spec: &ProblemSpec, lip: &LipschitzData) -> Result<f64> {
    let t0 = spec.theta0().abs();
    let lead = t0 + spec.kernel_mass()? * (lip.w3 + lip.w2 * t0);
    Ok(lead * growth_factor(spec.alpha(), spec.psi_span()?, lip)?)
}

/// Ulam-Hyers constant γ = (ψ(b) − ψ(0))^α / Γ(α + 1) · E_α(W1 (1 + W2) (ψ(b) − ψ(0))^α).
pub fn uh_gamma(
    alpha: FractionalOrder,
    psi: &PsiFunction,
    b: f64,
    lip: &LipschitzData,
) -> Result<f64> {
    let a = alpha.get();
    let span = psi.increment(b)?;
    Ok(span.powf(a) / gamma(a + 1.0)? * growth_factor(alpha, span, lip)?)
}

fn sample_expr(expr: &Expr, grid: &Grid, name: &str) -> Result<Vec<f64>> {
    if let Some(v) = expr.free_vars().into_iter().find(|v| v != "z") {
        return Err(Error::Domain(format!(
            "{name} may only use `z`, found `{v}`"
        )));
    }
    let compiled = expr.compile(&["z"])?;
    grid.nodes()
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            compiled
                .eval(&[z])
                .map_err(|source| Error::NodeEval { node: i, z, source })
        })
        .collect()
}

/// Smallest γ with I^{α,ψ}ρ ≤ γρ on the grid nodes z_1, …, z_n.
pub fn check_q3(rho: &Expr, alpha: FractionalOrder, grid: &Arc<Grid>) -> Result<f64> {
    let values = sample_expr(rho, grid, "rho")?;
    let nodes = grid.nodes();
    if values[0] < 0.0 {
        return Err(Error::Precondition(format!(
            "rho is negative at node 0: {}",
            values[0]
        )));
    }
    if let Some(i) = (1..values.len()).find(|&i| !(values[i] > 0.0)) {
        return Err(Error::Precondition(format!(
            "rho must be > 0 at node {i} (z = {}), got {}",
            nodes[i], values[i]
        )));
    }
    require_nondecreasing("rho", &values, nodes, 0)?;
    let integral = ProductRule::new(alpha.get(), grid.clone())?.apply(&values);
    Ok((1..values.len()).fold(0.0, |m, i| f64::max(m, integral[i] / values[i])))
}

/// Ulam-Hyers-Rassias constant B = γ_q3 / (1 − W1 (1 + W2) γ_q3).
pub fn uhr_b(gamma_q3: f64, lip: &LipschitzData) -> Result<f64> {
    if !(gamma_q3 >= 0.0) || !gamma_q3.is_finite() {
        return Err(Error::Domain(format!(
            "gamma_q3 must be finite and >= 0, got {gamma_q3}"
        )));
    }
    let product = lip.combined() * gamma_q3;
    if product >= 1.0 {
        return Err(Error::DivergentSeries { product });
    }
    Ok(gamma_q3 / (1.0 - product))
}

/// Solves N^{α,ψ}ω = F(…) + h(z), ω(0) = ϑ₀, with the same Picard scheme.
pub fn perturb_and_solve(
    spec: &ProblemSpec,
    h: &Expr,
    grid: Arc<Grid>,
    tol: f64,
    max_iter: usize,
) -> Result<SolutionTrace> {
    PicardSolver::new(spec, grid)?
        .with_forcing(h)?
        .solve(tol, max_iter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum StabilityMode {
    UH,
    GUH,
    UHR,
    GUHR,
}

impl StabilityMode {
    pub fn needs_rho(self) -> bool {
        matches!(self, StabilityMode::UHR | StabilityMode::GUHR)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub mode: StabilityMode,
    pub h: Expr,
    /// ε used for the bound; 1 in GUHR mode.
    pub epsilon: f64,
    pub gamma: f64,
    pub gamma_q3: Option<f64>,
    pub b_constant: Option<f64>,
    pub rho: Option<Expr>,
    pub theta: SolutionTrace,
    pub omega: SolutionTrace,
    /// |ω − ϑ| per node.
    pub deviation: Vec<f64>,
    pub bound: Vec<f64>,
    /// Deviation within the bound (up to [`BOUND_SLACK`]) at every node.
    pub satisfied: bool,
}

impl StabilityReport {
    pub fn max_deviation(&self) -> f64 {
        self.deviation.iter().fold(0.0, |m, &d| m.max(d))
    }
}

/// Settings shared by both solves of a stability experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub tol: f64,
    pub max_iter: usize,
}

/// Solves the unperturbed and perturbed problems and compares |ω − ϑ| to
/// the bound of the chosen stability notion: γε (UH, GUH), Bερ (UHR) or
/// Bρ (GUHR, where ε = 1).
#[allow(clippy::too_many_arguments)]
pub fn stability_experiment(
    spec: &ProblemSpec,
    lip: &LipschitzData,
    h: &Expr,
    epsilon: f64,
    mode: StabilityMode,
    rho: Option<&Expr>,
    grid: Arc<Grid>,
    settings: SolveSettings,
) -> Result<StabilityReport> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Precondition(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let epsilon = if mode == StabilityMode::GUHR {
        1.0
    } else {
        epsilon
    };
    let n = grid.len();
    let h_values = sample_expr(h, &grid, "h")?;
    let gamma_uh = uh_gamma(spec.alpha(), spec.psi(), spec.b(), lip)?;

    let (allowed, bound, gamma_q3, b_constant) = if mode.needs_rho() {
        let rho = rho.ok_or_else(|| Error::Precondition(format!("{mode:?} mode requires rho")))?;
        let rho_values = sample_expr(rho, &grid, "rho")?;
        let gq3 = check_q3(rho, spec.alpha(), &grid)?;
        let b = uhr_b(gq3, lip)?;
        let allowed: Vec<f64> = rho_values.iter().map(|r| epsilon * r).collect();
        let bound = allowed.iter().map(|a| b * a).collect();
        (allowed, bound, Some(gq3), Some(b))
    } else {
        (vec![epsilon; n], vec![gamma_uh * epsilon; n], None, None)
    };

    let worst = (0..n)
        .map(|i| {
            (
                i,
                h_values[i].abs() - allowed[i] * (1.0 + PRECONDITION_SLACK),
            )
        })
        .fold((0, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    if worst.1 > 0.0 {
        let i = worst.0;
        return Err(Error::Precondition(format!(
            "|h| = {} exceeds the allowed {} at node {i} (z = {})",
            h_values[i].abs(),
            allowed[i],
            grid.nodes()[i]
        )));
    }

    let solver = PicardSolver::new(spec, grid.clone())?;
    let theta = solver.solve(settings.tol, settings.max_iter)?;
    let omega = solver
        .with_forcing(h)?
        .solve(settings.tol, settings.max_iter)?;
    let deviation: Vec<f64> = theta
        .theta
        .values()
        .iter()
        .zip(omega.theta.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let satisfied = deviation
        .iter()
        .zip(&bound)
        .all(|(d, b)| *d <= b * (1.0 + BOUND_SLACK));
    Ok(StabilityReport {
        mode,
        h: h.clone(),
        epsilon,
        gamma: gamma_uh,
        gamma_q3,
        b_constant,
        rho: if mode.needs_rho() { rho.cloned() } else { None },
        theta,
        omega,
        deviation,
        bound,
        satisfied,
    })
}
