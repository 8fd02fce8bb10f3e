//! Differentiable symbolic expression trees.
//!
//! Trees are immutable values built from variables, finite constants, the
//! binary operators `+ - * /` and the unary operators `sin`, `exp`. Evaluation
//! and exact analytic gradients run on a flat postorder program
//! ([`Compiled`]); division by zero, overflow, or any non-finite intermediate
//! makes the result invalid (`None`) rather than raising an error — invalidity
//! is data that the search layer turns into an infinite fitness.

mod compile;
mod parse;

pub use compile::{Compiled, Workspace};
pub use parse::parse;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Unary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Sin,
    Exp,
}

/// Binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub(crate) fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => " + ",
            BinaryOp::Sub => " - ",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

impl UnaryOp {
    pub(crate) fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Sin => a.sin(),
            UnaryOp::Exp => a.exp(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Exp => "exp",
        }
    }
}

/// A symbolic expression tree. Variables are zero-indexed internally and
/// printed one-indexed (`x1`, `x2`, ...).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Total node count; every variable, constant, and operator counts 1.
    pub fn complexity(&self) -> usize {
        match self {
            Expr::Var(_) | Expr::Const(_) => 1,
            Expr::Unary(_, a) => 1 + a.complexity(),
            Expr::Binary(_, a, b) => 1 + a.complexity() + b.complexity(),
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Var(i) => Some(*i),
            Expr::Const(_) => None,
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// Errors unless every variable index fits inside `arity` inputs.
    pub fn check_arity(&self, arity: usize) -> crate::Result<()> {
        match self.max_var() {
            Some(m) if m >= arity => Err(crate::Error::Usage(format!(
                "expression uses x{} but only {} input variables exist",
                m + 1,
                arity
            ))),
            _ => Ok(()),
        }
    }

    /// Evaluates at `x`; `None` marks an invalid (non-finite) result.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        let compiled = Compiled::new(self);
        let mut ws = Workspace::default();
        compiled.eval(x, &mut ws)
    }

    /// Exact analytic gradient with respect to all `x.len()` inputs;
    /// `None` if the value or any gradient component is non-finite.
    pub fn grad(&self, x: &[f64]) -> Option<Vec<f64>> {
        let compiled = Compiled::new(self);
        let mut ws = Workspace::default();
        let mut g = vec![0.0; x.len()];
        compiled.eval_grad(x, &mut ws, &mut g)?;
        Some(g)
    }

    /// The subtree rooted at preorder index `index` (0 is the root).
    pub fn subtree(&self, index: usize) -> Option<&Expr> {
        fn walk<'a>(node: &'a Expr, index: usize, counter: &mut usize) -> Option<&'a Expr> {
            if *counter == index {
                return Some(node);
            }
            *counter += 1;
            match node {
                Expr::Var(_) | Expr::Const(_) => None,
                Expr::Unary(_, a) => walk(a, index, counter),
                Expr::Binary(_, a, b) => {
                    walk(a, index, counter).or_else(|| walk(b, index, counter))
                }
            }
        }
        walk(self, index, &mut 0)
    }

    /// Mutable access by preorder index.
    pub fn subtree_mut(&mut self, index: usize) -> Option<&mut Expr> {
        fn walk<'a>(node: &'a mut Expr, index: usize, counter: &mut usize) -> Option<&'a mut Expr> {
            if *counter == index {
                return Some(node);
            }
            *counter += 1;
            match node {
                Expr::Var(_) | Expr::Const(_) => None,
                Expr::Unary(_, a) => walk(a, index, counter),
                Expr::Binary(_, a, b) => {
                    if let Some(hit) = walk(a, index, counter) {
                        return Some(hit);
                    }
                    walk(b, index, counter)
                }
            }
        }
        walk(self, index, &mut 0)
    }

    /// Constant values in depth-first (left-to-right) order. This is the same
    /// order [`Compiled`] assigns constant slots, so a vector optimized against
    /// a compiled program can be written back with [`Expr::set_constants`].
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        fn walk(node: &Expr, out: &mut Vec<f64>) {
            match node {
                Expr::Const(c) => out.push(*c),
                Expr::Var(_) => {}
                Expr::Unary(_, a) => walk(a, out),
                Expr::Binary(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    /// Overwrites constants in depth-first order. Panics on length mismatch.
    pub fn set_constants(&mut self, values: &[f64]) {
        fn walk(node: &mut Expr, values: &[f64], next: &mut usize) {
            match node {
                Expr::Const(c) => {
                    *c = values[*next];
                    *next += 1;
                }
                Expr::Var(_) => {}
                Expr::Unary(_, a) => walk(a, values, next),
                Expr::Binary(_, a, b) => {
                    walk(a, values, next);
                    walk(b, values, next);
                }
            }
        }
        let mut next = 0;
        walk(self, values, &mut next);
        assert_eq!(next, values.len(), "constant count mismatch");
    }

    /// Algebraic cleanup: constant folding plus the identities
    /// `x+0`, `x*1`, `x*0`, `x-x`, `x/1`. Never increases complexity; an
    /// invalid expression may become valid (e.g. `t*0` → `0`) but never the
    /// reverse, because folding only replaces a subtree when the folded value
    /// is finite.
    pub fn simplify(&self) -> Expr {
        let mut current = self.clone();
        loop {
            let next = simplify_pass(&current);
            if next == current {
                return next;
            }
            current = next;
        }
    }

    /// Canonical text form at full precision; [`parse`] inverts it exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_node(self, 0, false, &mut out, None);
        out
    }

    /// Text form with constants rounded to `digits` significant digits.
    /// Intended for human-facing output; does not round-trip in general.
    pub fn to_text_sig(&self, digits: u32) -> String {
        let mut out = String::new();
        write_node(self, 0, false, &mut out, Some(digits));
        out
    }
}

/// Human-facing rendering: constants rounded to 6 significant digits.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text_sig(6))
    }
}

fn round_sig(v: f64, digits: u32) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let magnitude = v.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits as i32 - 1 - magnitude);
    (v * factor).round() / factor
}

fn write_const(c: f64, out: &mut String, digits: Option<u32>) {
    let v = match digits {
        Some(d) => round_sig(c, d),
        None => c,
    };
    out.push_str(&format!("{}", v));
}

fn write_node(node: &Expr, parent_prec: u8, is_right: bool, out: &mut String, digits: Option<u32>) {
    match node {
        Expr::Var(i) => out.push_str(&format!("x{}", i + 1)),
        Expr::Const(c) => {
            // Negative constants get parentheses inside operator expressions so
            // the text stays unambiguous ("x1*(-2.5)").
            if *c < 0.0 && parent_prec > 0 {
                out.push('(');
                write_const(*c, out, digits);
                out.push(')');
            } else {
                write_const(*c, out, digits);
            }
        }
        Expr::Unary(op, a) => {
            out.push_str(op.name());
            out.push('(');
            write_node(a, 0, false, out, digits);
            out.push(')');
        }
        Expr::Binary(op, a, b) => {
            let prec = op.precedence();
            // Parse is left-associative, so a right child at equal precedence
            // needs parentheses for the structure to survive a round trip.
            let need = prec < parent_prec || (prec == parent_prec && is_right);
            if need {
                out.push('(');
            }
            write_node(a, prec, false, out, digits);
            out.push_str(op.symbol());
            write_node(b, prec, true, out, digits);
            if need {
                out.push(')');
            }
        }
    }
}

fn simplify_pass(node: &Expr) -> Expr {
    match node {
        Expr::Var(_) | Expr::Const(_) => node.clone(),
        Expr::Unary(op, a) => {
            let a = simplify_pass(a);
            if let Expr::Const(c) = a {
                let v = op.apply(c);
                if v.is_finite() {
                    return Expr::Const(v);
                }
            }
            Expr::unary(*op, a)
        }
        Expr::Binary(op, a, b) => {
            let a = simplify_pass(a);
            let b = simplify_pass(b);
            if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
                let v = op.apply(*x, *y);
                if v.is_finite() {
                    return Expr::Const(v);
                }
            }
            match op {
                BinaryOp::Add => {
                    if a == Expr::Const(0.0) {
                        return b;
                    }
                    if b == Expr::Const(0.0) {
                        return a;
                    }
                }
                BinaryOp::Sub => {
                    if b == Expr::Const(0.0) {
                        return a;
                    }
                    if a == b {
                        return Expr::Const(0.0);
                    }
                }
                BinaryOp::Mul => {
                    if a == Expr::Const(1.0) {
                        return b;
                    }
                    if b == Expr::Const(1.0) {
                        return a;
                    }
                    if a == Expr::Const(0.0) || b == Expr::Const(0.0) {
                        return Expr::Const(0.0);
                    }
                }
                BinaryOp::Div => {
                    if b == Expr::Const(1.0) {
                        return a;
                    }
                }
            }
            Expr::binary(*op, a, b)
        }
    }
}
