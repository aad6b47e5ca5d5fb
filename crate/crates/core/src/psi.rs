//! Weight functions ψ, fractional orders and discretization grids on J = [0, b].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr};

/// Fractional order α in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(FractionalOrder(alpha))
        } else {
            Err(Error::Domain(format!(
                "fractional order must lie in (0, 1), got {alpha}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for FractionalOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// User-defined ψ(z); the derivative is taken by finite differences.
#[derive(Debug, Clone)]
pub struct CustomPsi {
    expr: Expr,
    compiled: CompiledExpr,
}

impl CustomPsi {
    pub fn new(expr: Expr) -> Result<Self> {
        let compiled = expr.compile(&["z"])?;
        Ok(CustomPsi { expr, compiled })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    fn eval(&self, z: f64) -> Result<f64> {
        self.compiled
            .eval(&[z])
            .map_err(|e| Error::Domain(format!("custom psi at z = {z}: {e}")))
    }
}

impl PartialEq for CustomPsi {
    fn eq(&self, other: &Self) -> bool {
        self.expr == other.expr
    }
}

/// The weight function ψ of the ψ-fractional operators.
///
/// `ShiftedLog { shift: c }` is ψ(z) = ln(z + c) with c > 0: plain ln z is
/// undefined at the left end of J, so Hadamard-type problems must be
/// translated onto [0, b] before use.
#[derive(Debug, Clone, PartialEq)]
pub enum PsiFunction {
    Identity,
    ShiftedLog { shift: f64 },
    Power { sigma: f64 },
    Custom(CustomPsi),
}

impl PsiFunction {
    pub fn shifted_log(shift: f64) -> Result<Self> {
        if shift > 0.0 && shift.is_finite() {
            Ok(PsiFunction::ShiftedLog { shift })
        } else {
            Err(Error::Domain(format!("log shift must be > 0, got {shift}")))
        }
    }

    pub fn power(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(PsiFunction::Power { sigma })
        } else {
            Err(Error::Domain(format!(
                "power exponent must be > 0, got {sigma}"
            )))
        }
    }

    pub fn custom(expr: Expr) -> Result<Self> {
        Ok(PsiFunction::Custom(CustomPsi::new(expr)?))
    }

    fn check_z(z: f64) -> Result<()> {
        if z >= 0.0 && z.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "psi evaluated outside [0, b] at z = {z}"
            )))
        }
    }

    /// ψ(z).
    pub fn eval(&self, z: f64) -> Result<f64> {
        Self::check_z(z)?;
        match self {
            PsiFunction::Identity => Ok(z),
            PsiFunction::ShiftedLog { shift } => {
                let arg = z + shift;
                if arg <= 0.0 {
                    return Err(Error::Domain(format!("log argument {arg} <= 0")));
                }
                Ok(arg.ln())
            }
            PsiFunction::Power { sigma } => Ok(if z == 0.0 { 0.0 } else { z.powf(*sigma) }),
            PsiFunction::Custom(c) => c.eval(z),
        }
    }

    /// ψ(z) − ψ(0), evaluated without cancellation for the built-in families.
    pub fn increment(&self, z: f64) -> Result<f64> {
        Self::check_z(z)?;
        match self {
            PsiFunction::Identity => Ok(z),
            PsiFunction::ShiftedLog { shift } => Ok((z / shift).ln_1p()),
            PsiFunction::Power { .. } => self.eval(z),
            PsiFunction::Custom(c) => Ok(c.eval(z)? - c.eval(0.0)?),
        }
    }

    /// ψ′(z). For `Power` the origin is special: σ < 1 is singular there,
    /// σ > 1 gives ψ′(0) = 0.
    pub fn derivative(&self, z: f64) -> Result<f64> {
        Self::check_z(z)?;
        match self {
            PsiFunction::Identity => Ok(1.0),
            PsiFunction::ShiftedLog { shift } => {
                let arg = z + shift;
                if arg <= 0.0 {
                    return Err(Error::Domain(format!("log argument {arg} <= 0")));
                }
                Ok(1.0 / arg)
            }
            PsiFunction::Power { sigma } => {
                if z == 0.0 {
                    match sigma.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => Err(Error::SingularDerivative { z }),
                        Some(std::cmp::Ordering::Equal) => Ok(1.0),
                        _ => Ok(0.0),
                    }
                } else {
                    Ok(sigma * z.powf(sigma - 1.0))
                }
            }
            PsiFunction::Custom(c) => {
                let h = 1e-5 * z.abs().max(1.0);
                if z < h {
                    let (f0, f1, f2) = (c.eval(z)?, c.eval(z + h)?, c.eval(z + 2.0 * h)?);
                    Ok((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h))
                } else {
                    Ok((c.eval(z + h)? - c.eval(z - h)?) / (2.0 * h))
                }
            }
        }
    }

    /// Whether ψ′ may vanish or blow up at z = 0 without invalidating ψ.
    fn origin_exempt(&self) -> bool {
        matches!(self, PsiFunction::Power { sigma } if *sigma != 1.0)
    }
}

impl fmt::Display for PsiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsiFunction::Identity => f.write_str("z"),
            PsiFunction::ShiftedLog { shift } => write!(f, "ln(z + {shift:?})"),
            PsiFunction::Power { sigma } => write!(f, "z ^ {sigma:?}"),
            PsiFunction::Custom(c) => write!(f, "{}", c.expr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// ψ(z_{i+1}) ≤ ψ(z_i); reported at node i.
    NotIncreasing,
    /// ψ′(z_i) ≤ 0.
    NonPositiveDerivative,
    /// ψ or ψ′ could not be evaluated at the node.
    Undefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: usize,
    pub z: f64,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Nodes where ψ′ is singular (a one-sided limit flag, not a failure).
    pub singular_nodes: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Distinct node indices carrying at least one violation.
    pub fn violating_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self.violations.iter().map(|v| v.node).collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }
}

/// Checks monotonicity of ψ and positivity of ψ′ on the given nodes.
pub fn validate_psi(psi: &PsiFunction, nodes: &[f64]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut values = Vec::with_capacity(nodes.len());
    for (i, &z) in nodes.iter().enumerate() {
        let value = psi.eval(z).ok();
        if value.is_none() {
            report.violations.push(Violation {
                node: i,
                z,
                kind: ViolationKind::Undefined,
            });
        }
        values.push(value);
        match psi.derivative(z) {
            Err(Error::SingularDerivative { .. }) => report.singular_nodes.push(i),
            Ok(d) if d > 0.0 => {}
            Ok(_) if z == 0.0 && psi.origin_exempt() => {}
            Ok(_) => report.violations.push(Violation {
                node: i,
                z,
                kind: ViolationKind::NonPositiveDerivative,
            }),
            Err(_) => report.violations.push(Violation {
                node: i,
                z,
                kind: ViolationKind::Undefined,
            }),
        }
    }
    for (i, pair) in values.windows(2).enumerate() {
        if let (Some(a), Some(b)) = (pair[0], pair[1]) {
            if !(b > a) {
                report.violations.push(Violation {
                    node: i,
                    z: nodes[i],
                    kind: ViolationKind::NotIncreasing,
                });
            }
        }
    }
    report.violations.sort_by_key(|v| v.node);
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    UniformInZ,
    UniformInPsi,
}

/// Discretization of J = [0, b] with cached ψ data.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    b: f64,
    spacing: Spacing,
    psi: PsiFunction,
    nodes: Vec<f64>,
    psi_values: Vec<f64>,
    /// ψ(z_i) − ψ(0); the quadrature variable.
    psi_increments: Vec<f64>,
    /// ψ′(z_i); `f64::INFINITY` marks a singular one-sided limit.
    psi_prime_values: Vec<f64>,
}

pub const BISECTION_TOL: f64 = 1e-13;

fn invert_increment(psi: &PsiFunction, target: f64, b: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0_f64, b);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if psi.increment(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl Grid {
    /// Builds a grid with `n` intervals (`n + 1` nodes) on [0, b].
    pub fn new(b: f64, n: usize, spacing: Spacing, psi: PsiFunction) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Domain(format!(
                "grid end point must be > 0, got {b}"
            )));
        }
        if n < 2 {
            return Err(Error::Domain(format!(
                "grid needs n >= 2 intervals, got {n}"
            )));
        }
        let nodes: Vec<f64> = match spacing {
            Spacing::UniformInZ => (0..=n)
                .map(|i| if i == n { b } else { i as f64 * b / n as f64 })
                .collect(),
            Spacing::UniformInPsi => {
                let total = psi.increment(b)?;
                if !(total > 0.0) {
                    return Err(Error::Domain(format!(
                        "psi is not increasing on [0, {b}]: psi(b) - psi(0) = {total}"
                    )));
                }
                let mut nodes = Vec::with_capacity(n + 1);
                nodes.push(0.0);
                for i in 1..n {
                    nodes.push(invert_increment(&psi, total * i as f64 / n as f64, b)?);
                }
                nodes.push(b);
                nodes
            }
        };
        Self::from_nodes(nodes, spacing, psi)
    }

    /// Builds a grid from explicit nodes; they must start at 0 and increase.
    pub fn from_nodes(nodes: Vec<f64>, spacing: Spacing, psi: PsiFunction) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Domain(format!(
                "grid needs at least 3 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes[0] != 0.0 {
            return Err(Error::Domain("first grid node must be 0".into()));
        }
        if let Some(k) = nodes.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(format!(
                "grid nodes must increase strictly (nodes {k} and {})",
                k + 1
            )));
        }
        let report = validate_psi(&psi, &nodes);
        if let Some(v) = report.violations.first() {
            return Err(Error::Domain(format!(
                "psi `{psi}` invalid at node {} (z = {}): {:?}",
                v.node, v.z, v.kind
            )));
        }
        let psi_values = nodes
            .iter()
            .map(|&z| psi.eval(z))
            .collect::<Result<Vec<_>>>()?;
        let psi_increments = nodes
            .iter()
            .map(|&z| psi.increment(z))
            .collect::<Result<Vec<_>>>()?;
        if let Some(k) = psi_increments.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(format!(
                "psi increments not strictly increasing at node {k}"
            )));
        }
        let psi_prime_values = nodes
            .iter()
            .map(|&z| match psi.derivative(z) {
                Err(Error::SingularDerivative { .. }) => Ok(f64::INFINITY),
                other => other,
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Grid {
            b: *nodes.last().expect("nonempty"),
            spacing,
            psi,
            nodes,
            psi_values,
            psi_increments,
            psi_prime_values,
        })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn psi(&self) -> &PsiFunction {
        &self.psi
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn psi_values(&self) -> &[f64] {
        &self.psi_values
    }

    pub fn psi_increments(&self) -> &[f64] {
        &self.psi_increments
    }

    pub fn psi_prime_values(&self) -> &[f64] {
        &self.psi_prime_values
    }

    /// ψ(b) − ψ(0).
    pub fn psi_span(&self) -> f64 {
        *self.psi_increments.last().expect("nonempty")
    }

    pub fn singular_at_origin(&self) -> bool {
        self.psi_prime_values[0].is_infinite()
    }
}
