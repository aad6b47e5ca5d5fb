//! Arithmetic expression language used to define `F`, `H`, custom `psi`,
//! comparison functions `rho` and perturbations `h` in configuration files.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = term , { ("+" | "-") , term } ;
//! term    = unary , { ("*" | "/") , unary } ;
//! unary   = "-" , unary | power ;
//! power   = primary , [ "^" , unary ] ;
//! primary = number | "pi" | ident | ident , "(" , args , ")" | "(" , expr , ")" ;
//! args    = expr , { "," , expr } ;
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-2^2`
//! is `-4` and `2^3^2` is `512`. Built-in functions are `sin`, `cos`,
//! `exp`, `ln`, `sqrt`, `abs` (one argument) and `pow`, `min`, `max`
//! (two arguments).

mod parser;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

pub use parser::parse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

/// Variable bindings for [`Expr::eval`].
pub type Bindings = HashMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Pow,
    Min,
    Max,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn apply(self, args: &[f64]) -> Result<f64, ExprError> {
        let x = args[0];
        let value = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Ln => {
                if x <= 0.0 {
                    return Err(ExprError::Eval(format!("ln of nonpositive value {x}")));
                }
                x.ln()
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(ExprError::Eval(format!("sqrt of negative value {x}")));
                }
                x.sqrt()
            }
            Func::Abs => x.abs(),
            Func::Pow => x.powf(args[1]),
            Func::Min => x.min(args[1]),
            Func::Max => x.max(args[1]),
        };
        Ok(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn apply(self, a: f64, b: f64) -> Result<f64, ExprError> {
        Ok(match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => {
                if b == 0.0 {
                    return Err(ExprError::Eval("division by zero".into()));
                }
                a / b
            }
            BinOp::Pow => a.powf(b),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

fn finite(value: f64) -> Result<f64, ExprError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ExprError::Eval(format!("non-finite result {value}")))
    }
}

impl Expr {
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) | Expr::Pi => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(inner) => inner.collect_vars(out),
            Expr::Binary(_, lhs, rhs) => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    pub fn eval(&self, bindings: &Bindings) -> Result<f64, ExprError> {
        self.eval_with(&|name| bindings.get(name).copied())
    }

    fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        let value = match self {
            Expr::Num(x) => *x,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(name) => {
                lookup(name).ok_or_else(|| ExprError::UnboundVariable(name.clone()))?
            }
            Expr::Neg(inner) => -inner.eval_with(lookup)?,
            Expr::Binary(op, lhs, rhs) => {
                op.apply(lhs.eval_with(lookup)?, rhs.eval_with(lookup)?)?
            }
            Expr::Call(func, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval_with(lookup))
                    .collect::<Result<Vec<_>, _>>()?;
                func.apply(&vals)?
            }
        };
        finite(value)
    }

    /// Resolves variables to positional slots for repeated evaluation.
    /// Fails with `UnboundVariable` if a free variable is not in `slots`.
    pub fn compile(&self, slots: &[&str]) -> Result<CompiledExpr, ExprError> {
        let mut code = Vec::new();
        self.emit(slots, &mut code)?;
        Ok(CompiledExpr {
            code,
            arity: slots.len(),
        })
    }

    fn emit(&self, slots: &[&str], code: &mut Vec<Op>) -> Result<(), ExprError> {
        match self {
            Expr::Num(x) => code.push(Op::Const(*x)),
            Expr::Pi => code.push(Op::Const(std::f64::consts::PI)),
            Expr::Var(name) => {
                let idx = slots
                    .iter()
                    .position(|s| s == name)
                    .ok_or_else(|| ExprError::UnboundVariable(name.clone()))?;
                code.push(Op::Load(idx));
            }
            Expr::Neg(inner) => {
                inner.emit(slots, code)?;
                code.push(Op::Neg);
            }
            Expr::Binary(op, lhs, rhs) => {
                lhs.emit(slots, code)?;
                rhs.emit(slots, code)?;
                code.push(Op::Bin(*op));
            }
            Expr::Call(func, args) => {
                for a in args {
                    a.emit(slots, code)?;
                }
                code.push(Op::Call(*func));
            }
        }
        Ok(())
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Pi => f.write_str("pi"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(inner) => {
                if inner.precedence() < 3 {
                    write!(f, "-({inner})")
                } else {
                    write!(f, "-{inner}")
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let prec = self.precedence();
                // ^ is right-associative; the other operators are left-associative.
                let (lhs_paren, rhs_paren) = if *op == BinOp::Pow {
                    (lhs.precedence() <= prec, rhs.precedence() < 3)
                } else {
                    (lhs.precedence() < prec, rhs.precedence() <= prec)
                };
                if lhs_paren {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs_paren {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

/// Stack-code form of an [`Expr`] with variables bound to argument slots.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    code: Vec<Op>,
    arity: usize,
}

impl CompiledExpr {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, args: &[f64]) -> Result<f64, ExprError> {
        debug_assert_eq!(args.len(), self.arity);
        let mut stack: Vec<f64> = Vec::with_capacity(8);
        for op in &self.code {
            match *op {
                Op::Const(x) => stack.push(x),
                Op::Load(i) => stack.push(args[i]),
                Op::Neg => {
                    let top = stack.last_mut().expect("stack underflow");
                    *top = -*top;
                }
                Op::Bin(bin) => {
                    let rhs = stack.pop().expect("stack underflow");
                    let lhs = stack.pop().expect("stack underflow");
                    stack.push(finite(bin.apply(lhs, rhs)?)?);
                }
                Op::Call(func) => {
                    let n = func.arity();
                    let at = stack.len() - n;
                    let value = finite(func.apply(&stack[at..])?)?;
                    stack.truncate(at);
                    stack.push(value);
                }
            }
        }
        finite(stack.pop().expect("empty expression"))
    }
}
