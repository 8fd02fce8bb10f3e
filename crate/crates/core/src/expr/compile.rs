//! Flat postorder programs for fast repeated evaluation and differentiation.
//!
//! The genetic search evaluates each candidate on many points per generation;
//! compiling the tree once and replaying a flat instruction list avoids
//! re-walking the tree (and re-boxing adjoints) per point. Constants get their
//! own slots so the constant optimizer can re-evaluate with trial values
//! without rebuilding the program.

use super::{BinaryOp, Expr, UnaryOp};

#[derive(Debug, Clone, Copy)]
enum Op {
    Var(u32),
    Const(u32),
    Unary(UnaryOp, u32),
    Binary(BinaryOp, u32, u32),
}

/// Reusable evaluation buffers; one per worker thread is enough.
#[derive(Default)]
pub struct Workspace {
    vals: Vec<f64>,
    adj: Vec<f64>,
}

/// A compiled expression: instructions in postorder, children before parents.
pub struct Compiled {
    code: Vec<Op>,
    consts: Vec<f64>,
}

impl Compiled {
    pub fn new(expr: &Expr) -> Compiled {
        let mut compiled = Compiled {
            code: Vec::with_capacity(expr.complexity()),
            consts: Vec::new(),
        };
        compiled.push(expr);
        compiled
    }

    fn push(&mut self, node: &Expr) -> u32 {
        let op = match node {
            Expr::Var(i) => Op::Var(*i as u32),
            Expr::Const(c) => {
                self.consts.push(*c);
                Op::Const(self.consts.len() as u32 - 1)
            }
            Expr::Unary(op, a) => {
                let a = self.push(a);
                Op::Unary(*op, a)
            }
            Expr::Binary(op, a, b) => {
                let a = self.push(a);
                let b = self.push(b);
                Op::Binary(*op, a, b)
            }
        };
        self.code.push(op);
        self.code.len() as u32 - 1
    }

    /// Constant values captured at compile time, in depth-first order.
    pub fn constants(&self) -> &[f64] {
        &self.consts
    }

    /// Evaluates at `x` with the captured constants.
    pub fn eval(&self, x: &[f64], ws: &mut Workspace) -> Option<f64> {
        self.eval_with(x, &self.consts, ws)
    }

    /// Evaluates at `x` with `consts` substituted for the constant slots.
    pub fn eval_with(&self, x: &[f64], consts: &[f64], ws: &mut Workspace) -> Option<f64> {
        self.forward(x, consts, ws)?;
        Some(ws.vals[self.code.len() - 1])
    }

    /// Value and gradient with respect to the inputs; `grad` must hold at
    /// least `max_var + 1` entries and is overwritten. Returns `None` when the
    /// value or any gradient component is non-finite.
    pub fn eval_grad(&self, x: &[f64], ws: &mut Workspace, grad: &mut [f64]) -> Option<f64> {
        self.eval_grad_with(x, &self.consts, ws, grad)
    }

    pub fn eval_grad_with(
        &self,
        x: &[f64],
        consts: &[f64],
        ws: &mut Workspace,
        grad: &mut [f64],
    ) -> Option<f64> {
        self.forward(x, consts, ws)?;
        let n = self.code.len();
        ws.adj.clear();
        ws.adj.resize(n, 0.0);
        ws.adj[n - 1] = 1.0;
        grad.fill(0.0);
        for i in (0..n).rev() {
            let a = ws.adj[i];
            if a == 0.0 {
                continue;
            }
            match self.code[i] {
                Op::Var(v) => grad[v as usize] += a,
                Op::Const(_) => {}
                Op::Unary(op, ai) => {
                    let d = match op {
                        UnaryOp::Sin => ws.vals[ai as usize].cos(),
                        UnaryOp::Exp => ws.vals[i],
                    };
                    ws.adj[ai as usize] += a * d;
                }
                Op::Binary(op, ai, bi) => {
                    let (va, vb) = (ws.vals[ai as usize], ws.vals[bi as usize]);
                    match op {
                        BinaryOp::Add => {
                            ws.adj[ai as usize] += a;
                            ws.adj[bi as usize] += a;
                        }
                        BinaryOp::Sub => {
                            ws.adj[ai as usize] += a;
                            ws.adj[bi as usize] -= a;
                        }
                        BinaryOp::Mul => {
                            ws.adj[ai as usize] += a * vb;
                            ws.adj[bi as usize] += a * va;
                        }
                        BinaryOp::Div => {
                            ws.adj[ai as usize] += a / vb;
                            ws.adj[bi as usize] -= a * va / (vb * vb);
                        }
                    }
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some(ws.vals[n - 1])
    }

    fn forward(&self, x: &[f64], consts: &[f64], ws: &mut Workspace) -> Option<()> {
        ws.vals.clear();
        ws.vals.reserve(self.code.len());
        for op in &self.code {
            let v = match *op {
                Op::Var(i) => x[i as usize],
                Op::Const(i) => consts[i as usize],
                Op::Unary(op, a) => op.apply(ws.vals[a as usize]),
                Op::Binary(op, a, b) => op.apply(ws.vals[a as usize], ws.vals[b as usize]),
            };
            if !v.is_finite() {
                return None;
            }
            ws.vals.push(v);
        }
        Some(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn constant_slots_follow_tree_order() {
        let mut t = parse("2*x1 + 3*sin(4*x2)").unwrap();
        let compiled = Compiled::new(&t);
        assert_eq!(compiled.constants(), &[2.0, 3.0, 4.0]);
        assert_eq!(t.constants(), vec![2.0, 3.0, 4.0]);

        // Writing optimized constants back through the tree agrees with
        // evaluating the compiled program under the same override.
        let mut ws = Workspace::default();
        let x = [0.3, -0.8];
        let trial = [1.5, -0.25, 2.0];
        let via_override = compiled.eval_with(&x, &trial, &mut ws).unwrap();
        t.set_constants(&trial);
        assert_eq!(t.eval(&x), Some(via_override));
    }

    #[test]
    fn overflow_invalidates() {
        let t = parse("exp(exp(x1))").unwrap();
        assert!(t.eval(&[10.0]).is_none());
        assert!(t.eval(&[1.0]).is_some());
    }

    #[test]
    fn gradient_overflow_invalidates() {
        // Value stays finite while the quotient adjoint overflows.
        let t = parse("x1/(x2*x2)").unwrap();
        let tiny = 1e-200;
        let mut ws = Workspace::default();
        let compiled = Compiled::new(&t);
        let mut g = [0.0, 0.0];
        assert!(compiled.eval_grad(&[0.0, tiny], &mut ws, &mut g).is_none());
    }
}
