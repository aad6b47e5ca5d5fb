//! Picard iteration for
//!
//! ```text
//! N^{α,ψ} ϑ(z) = F(z, ϑ(z), I^{α,ψ} H(z, τ, N^{α,ψ} ϑ(τ))),   ϑ(0) = ϑ₀.
//! ```
//!
//! The unknown is g = N^{α,ψ}ϑ. Each sweep is the explicit update
//!
//! ```text
//! g_{k+1}(z_i) = F(z_i, ϑ₀ + I^{α,ψ} g_k(z_i), w_k(z_i)),
//! w_k(z_i)     = I^{α,ψ}[H(z_i, ·, g_k(·))](z_i),
//! ```
//!
//! and ϑ = ϑ₀ + I^{α,ψ} g is recovered once the sweeps settle.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr};
use crate::frac_ops::{sup_diff, InnerKernel, ProductRule, SampledFunction};
use crate::psi::{FractionalOrder, Grid, PsiFunction};
use crate::special::gamma;

pub const F_VARS: [&str; 3] = ["z", "theta", "w"];
pub const H_VARS: [&str; 3] = InnerKernel::VARS;

fn check_vars(expr: &Expr, allowed: &[&str], what: &str) -> Result<()> {
    if let Some(bad) = expr
        .free_vars()
        .iter()
        .find(|v| !allowed.contains(&v.as_str()))
    {
        return Err(Error::Domain(format!(
            "{what} uses unknown variable `{bad}` (allowed: {})",
            allowed.join(", ")
        )));
    }
    Ok(())
}

/// Problem data: α, J = [0, b], ϑ₀, ψ, F(z, theta, w) and H(z, tau, g).
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    alpha: FractionalOrder,
    b: f64,
    theta0: f64,
    psi: PsiFunction,
    f: Expr,
    h: Expr,
}

impl ProblemSpec {
    pub fn new(
        alpha: FractionalOrder,
        b: f64,
        theta0: f64,
        psi: PsiFunction,
        f: Expr,
        h: Expr,
    ) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Domain(format!("b must be > 0, got {b}")));
        }
        if !theta0.is_finite() {
            return Err(Error::Domain(format!(
                "theta0 must be finite, got {theta0}"
            )));
        }
        check_vars(&f, &F_VARS, "F")?;
        check_vars(&h, &H_VARS, "H")?;
        Ok(ProblemSpec {
            alpha,
            b,
            theta0,
            psi,
            f,
            h,
        })
    }

    pub fn alpha(&self) -> FractionalOrder {
        self.alpha
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn psi(&self) -> &PsiFunction {
        &self.psi
    }

    pub fn f(&self) -> &Expr {
        &self.f
    }

    pub fn h(&self) -> &Expr {
        &self.h
    }

    /// ψ(b) − ψ(0).
    pub fn psi_span(&self) -> Result<f64> {
        self.psi.increment(self.b)
    }

    /// (ψ(b) − ψ(0))^α / Γ(α + 1), the sup of I^{α,ψ}1 over J.
    pub fn kernel_mass(&self) -> Result<f64> {
        let a = self.alpha.get();
        Ok(self.psi_span()?.powf(a) / gamma(a + 1.0)?)
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.psi() != &self.psi || grid.b() != self.b {
            return Err(Error::GridMismatch(format!(
                "grid on [0, {}] with psi `{}` does not match problem on [0, {}] with psi `{}`",
                grid.b(),
                grid.psi(),
                self.b,
                self.psi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    UserSupplied,
    SampledEstimate,
}

/// Lipschitz bounds: W1 for F in (theta, w), W2 for H in g, and W3 the sup
/// of the zero-argument forcing |F(z, 0, I^{α,ψ}H(z, ·, 0))|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzData {
    #[serde(rename = "W1")]
    pub w1: f64,
    #[serde(rename = "W2")]
    pub w2: f64,
    #[serde(rename = "W3")]
    pub w3: f64,
    pub provenance: Provenance,
}

impl LipschitzData {
    pub fn new(w1: f64, w2: f64, w3: f64, provenance: Provenance) -> Result<Self> {
        for (name, v) in [("W1", w1), ("W2", w2), ("W3", w3)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(LipschitzData {
            w1,
            w2,
            w3,
            provenance,
        })
    }

    pub fn user(w1: f64, w2: f64, w3: f64) -> Result<Self> {
        Self::new(w1, w2, w3, Provenance::UserSupplied)
    }

    /// W1 (1 + W2).
    pub fn combined(&self) -> f64 {
        self.w1 * (1.0 + self.w2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionCertificate {
    #[serde(rename = "L")]
    pub l: f64,
    pub contracting: bool,
}

/// L = (ψ(b) − ψ(0))^α / Γ(α + 1) · W1 (1 + W2); the Picard map contracts
/// in the sup norm when L < 1.
pub fn check_contraction(
    spec: &ProblemSpec,
    lip: &LipschitzData,
) -> Result<ContractionCertificate> {
    let l = spec.kernel_mass()? * lip.combined();
    Ok(ContractionCertificate {
        l,
        contracting: l < 1.0,
    })
}

/// Ranges sampled by [`estimate_lipschitz`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBox {
    pub theta: (f64, f64),
    pub w: (f64, f64),
    pub g: (f64, f64),
}

impl SampleBox {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        SampleBox {
            theta: (lo, hi),
            w: (lo, hi),
            g: (lo, hi),
        }
    }
}

/// Draws a pair of points in [lo, hi]: either independent, or the second
/// one a log-uniformly small step away from the first, so that local
/// slopes are probed as well as chords.
fn sample_pair(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> (f64, f64) {
    let a = rng.gen_range(lo..=hi);
    if hi <= lo {
        return (a, a);
    }
    if rng.gen_bool(0.5) {
        (a, rng.gen_range(lo..=hi))
    } else {
        let step = (hi - lo) * 10f64.powf(-rng.gen_range(0.0..4.0));
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let b = a + sign * step;
        (a, if b > hi || b < lo { a - sign * step } else { b })
    }
}

/// Sampled surrogate for the Lipschitz constants; deterministic per seed.
/// W1 and W2 are maxima of difference quotients, so they approach the true
/// constants from below. W3 is evaluated on every node.
pub fn estimate_lipschitz(
    spec: &ProblemSpec,
    grid: &Arc<Grid>,
    sample_box: &SampleBox,
    samples: usize,
    seed: u64,
) -> Result<LipschitzData> {
    if samples < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 samples, got {samples}"
        )));
    }
    spec.check_grid(grid)?;
    let f = spec.f.compile(&F_VARS)?;
    let h = spec.h.compile(&H_VARS)?;
    let nodes = grid.nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |c: &CompiledExpr, args: [f64; 3], node: usize| {
        c.eval(&args).map_err(|source| Error::NodeEval {
            node,
            z: nodes[node],
            source,
        })
    };

    let mut w1 = 0.0_f64;
    for k in 0..samples {
        let i = rng.gen_range(0..nodes.len());
        let z = nodes[i];
        let (t1, t2) = if k % 3 == 1 {
            let t = rng.gen_range(sample_box.theta.0..=sample_box.theta.1);
            (t, t)
        } else {
            sample_pair(&mut rng, sample_box.theta)
        };
        let (v1, v2) = if k % 3 == 0 {
            let v = rng.gen_range(sample_box.w.0..=sample_box.w.1);
            (v, v)
        } else {
            sample_pair(&mut rng, sample_box.w)
        };
        let denom = (t1 - t2).abs() + (v1 - v2).abs();
        if denom == 0.0 {
            continue;
        }
        let df = eval(&f, [z, t1, v1], i)? - eval(&f, [z, t2, v2], i)?;
        w1 = w1.max(df.abs() / denom);
    }

    let mut w2 = 0.0_f64;
    for _ in 0..samples {
        let i = rng.gen_range(0..nodes.len());
        let j = rng.gen_range(0..=i);
        let (g1, g2) = sample_pair(&mut rng, sample_box.g);
        if g1 == g2 {
            continue;
        }
        let dh = eval(&h, [nodes[i], nodes[j], g1], j)? - eval(&h, [nodes[i], nodes[j], g2], j)?;
        w2 = w2.max(dh.abs() / (g1 - g2).abs());
    }

    let w3 = forcing_sup(spec, grid)?;
    LipschitzData::new(w1, w2, w3, Provenance::SampledEstimate)
}

/// W3 = max over nodes of |F(z, 0, I^{α,ψ}H(z, ·, 0))|.
pub fn forcing_sup(spec: &ProblemSpec, grid: &Arc<Grid>) -> Result<f64> {
    spec.check_grid(grid)?;
    let f = spec.f.compile(&F_VARS)?;
    let rule = ProductRule::new(spec.alpha.get(), grid.clone())?;
    let w0 = InnerKernel::new(&spec.h)?.trace(&rule, &vec![0.0; grid.len()])?;
    let mut sup = 0.0_f64;
    for (i, (&z, &w)) in grid.nodes().iter().zip(&w0).enumerate() {
        let v = f
            .eval(&[z, 0.0, w])
            .map_err(|source| Error::NodeEval { node: i, z, source })?;
        sup = sup.max(v.abs());
    }
    Ok(sup)
}

/// Result of a Picard solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTrace {
    pub grid: Arc<Grid>,
    /// ϑ at every node.
    pub theta: SampledFunction,
    /// g = N^{α,ψ}ϑ at every node.
    pub g: SampledFunction,
    pub iterates: usize,
    /// sup_i |g_{k+1}(z_i) − g_k(z_i)| per sweep.
    pub sup_diffs: Vec<f64>,
    /// Sup-node defect of the equivalent integral equation.
    pub residual: f64,
}

/// Picard solver for one problem on one grid, optionally with an additive
/// perturbation h(z) of the right-hand side.
#[derive(Debug, Clone)]
pub struct PicardSolver {
    spec: ProblemSpec,
    grid: Arc<Grid>,
    rule: ProductRule,
    kernel: InnerKernel,
    f: CompiledExpr,
    forcing: Option<Vec<f64>>,
}

impl PicardSolver {
    pub fn new(spec: &ProblemSpec, grid: Arc<Grid>) -> Result<Self> {
        spec.check_grid(&grid)?;
        Ok(PicardSolver {
            rule: ProductRule::new(spec.alpha.get(), grid.clone())?,
            kernel: InnerKernel::new(&spec.h)?,
            f: spec.f.compile(&F_VARS)?,
            spec: spec.clone(),
            grid,
            forcing: None,
        })
    }

    /// Adds h(z) to the right-hand side: N^{α,ψ}ω = F(…) + h(z).
    pub fn with_forcing(mut self, h: &Expr) -> Result<Self> {
        check_vars(h, &["z"], "perturbation h")?;
        let compiled = h.compile(&["z"])?;
        let values = self
            .grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                compiled
                    .eval(&[z])
                    .map_err(|source| Error::NodeEval { node: i, z, source })
            })
            .collect::<Result<Vec<_>>>()?;
        self.forcing = Some(values);
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn rule(&self) -> &ProductRule {
        &self.rule
    }

    /// Right-hand side F(z_i, ϑ_i, w_i) (+ h_i) at every node.
    fn rhs(&self, theta: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let nodes = self.grid.nodes();
        (0..nodes.len())
            .map(|i| {
                let z = nodes[i];
                let mut v = self
                    .f
                    .eval(&[z, theta[i], w[i]])
                    .map_err(|source| Error::NodeEval { node: i, z, source })?;
                if let Some(h) = &self.forcing {
                    if h[i] != 0.0 {
                        v += h[i];
                    }
                }
                Ok(v)
            })
            .collect()
    }

    fn theta_from(&self, g: &[f64]) -> Vec<f64> {
        let theta0 = self.spec.theta0;
        self.rule.apply(g).into_iter().map(|v| theta0 + v).collect()
    }

    fn sweep(&self, g: &[f64]) -> Result<Vec<f64>> {
        let theta = self.theta_from(g);
        let w = self.kernel.trace(&self.rule, g)?;
        self.rhs(&theta, &w)
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<SolutionTrace> {
        self.solve_from(&vec![0.0; self.grid.len()], tol, max_iter)
    }

    /// Iterates from the given g₀ until the sup-norm change drops below `tol`.
    pub fn solve_from(&self, initial: &[f64], tol: f64, max_iter: usize) -> Result<SolutionTrace> {
        if !(tol > 0.0) {
            return Err(Error::Precondition(format!("tol must be > 0, got {tol}")));
        }
        if max_iter == 0 {
            return Err(Error::Precondition("max_iter must be >= 1".into()));
        }
        if initial.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "initial iterate has {} values for {} nodes",
                initial.len(),
                self.grid.len()
            )));
        }
        let mut g = initial.to_vec();
        let mut sup_diffs = Vec::new();
        loop {
            let next = self.sweep(&g)?;
            let diff = sup_diff(&next, &g);
            g = next;
            sup_diffs.push(diff);
            if diff < tol {
                break;
            }
            if sup_diffs.len() >= max_iter {
                return Err(Error::NoConvergence {
                    max_iter,
                    last_diff: diff,
                });
            }
        }
        let theta = self.theta_from(&g);
        let g = SampledFunction::new(self.grid.clone(), g)?;
        let theta = SampledFunction::new(self.grid.clone(), theta)?;
        let mut trace = SolutionTrace {
            grid: self.grid.clone(),
            theta,
            g,
            iterates: sup_diffs.len(),
            sup_diffs,
            residual: 0.0,
        };
        trace.residual = self.residual(&trace)?;
        Ok(trace)
    }

    /// sup_i |ϑ(z_i) − ϑ₀ − I^{α,ψ}[F(·, ϑ, w) (+ h)](z_i)| with w rebuilt
    /// from the trace's g.
    pub fn residual(&self, trace: &SolutionTrace) -> Result<f64> {
        crate::frac_ops::same_grid(&self.grid, &trace.grid)?;
        let theta = trace.theta.values();
        let w = self.kernel.trace(&self.rule, trace.g.values())?;
        let rhs = self.rhs(theta, &w)?;
        let integral = self.rule.apply(&rhs);
        let theta0 = self.spec.theta0;
        Ok(theta
            .iter()
            .zip(&integral)
            .fold(0.0, |m, (t, i)| m.max((t - theta0 - i).abs())))
    }
}

pub fn solve_picard(
    spec: &ProblemSpec,
    grid: Arc<Grid>,
    tol: f64,
    max_iter: usize,
) -> Result<SolutionTrace> {
    PicardSolver::new(spec, grid)?.solve(tol, max_iter)
}

/// Recomputes the defect of the equivalent integral equation for `trace`.
pub fn residual(spec: &ProblemSpec, trace: &SolutionTrace) -> Result<f64> {
    PicardSolver::new(spec, trace.grid.clone())?.residual(trace)
}
