//! Scalar math expressions over named variables with exact forward-mode
//! differentiation via dual numbers.
//!
//! Grammar: real literals, declared variables, binary `+ - * / ^`, unary `-`,
//! functions `sin cos exp log sqrt abs min max tanh` and the n-ary
//! `norm(v1,...,vk) = sqrt(v1^2 + ... + vk^2)`. Precedence is
//! `^` > unary `-` > `* /` > `+ -`, all left-associative except `^`, which is
//! right-associative. `pi` and `e` are reserved constant identifiers.
//!
//! Expressions are immutable after parse and evaluation is pure, so a tree can
//! be shared freely across threads.

mod dual;
mod lexer;
mod parser;

pub use dual::DualValue;

use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("`{name}` is reserved and cannot be used as a variable")]
    ReservedName { name: String },
    #[error("variable `{name}` is not bound")]
    Unbound { name: String },
    #[error("domain error in `{subexpr}`: {message}")]
    Domain { subexpr: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fun {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
    Tanh,
    Norm,
}

impl Fun {
    pub fn name(self) -> &'static str {
        match self {
            Fun::Sin => "sin",
            Fun::Cos => "cos",
            Fun::Exp => "exp",
            Fun::Log => "log",
            Fun::Sqrt => "sqrt",
            Fun::Abs => "abs",
            Fun::Min => "min",
            Fun::Max => "max",
            Fun::Tanh => "tanh",
            Fun::Norm => "norm",
        }
    }

    fn from_name(name: &str) -> Option<Fun> {
        Some(match name {
            "sin" => Fun::Sin,
            "cos" => Fun::Cos,
            "exp" => Fun::Exp,
            "log" => Fun::Log,
            "sqrt" => Fun::Sqrt,
            "abs" => Fun::Abs,
            "min" => Fun::Min,
            "max" => Fun::Max,
            "tanh" => Fun::Tanh,
            "norm" => Fun::Norm,
            _ => return None,
        })
    }
}

/// Abstract syntax tree node. Variables are indices into the declaring
/// expression's variable list.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Fun(Fun, Vec<Node>),
}

/// A parsed expression together with its declared variable list.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    vars: Vec<String>,
}

/// Parse `text` over the declared variable names.
pub fn parse(text: &str, variables: &[&str]) -> Result<Expression, ExprError> {
    for name in variables {
        if matches!(*name, "pi" | "e") || Fun::from_name(name).is_some() {
            return Err(ExprError::ReservedName {
                name: name.to_string(),
            });
        }
    }
    let root = parser::parse(text, variables)?;
    Ok(Expression {
        root,
        vars: variables.iter().map(|s| s.to_string()).collect(),
    })
}

impl Expression {
    /// Build an expression directly from a tree. Variable indices in `root`
    /// must be valid for `vars`.
    pub fn from_node(root: Node, vars: Vec<String>) -> Expression {
        Expression { root, vars }
    }

    pub fn constant(value: f64, vars: Vec<String>) -> Expression {
        Expression {
            root: Node::Num(value),
            vars,
        }
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Evaluate with values given in declared-variable order.
    pub fn eval_slice(&self, vals: &[f64]) -> Result<f64, ExprError> {
        debug_assert_eq!(vals.len(), self.vars.len());
        eval_node(&self.root, vals)
    }

    /// Evaluate with named bindings; every declared variable must be bound.
    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64, ExprError> {
        let vals = self.binding_slice(bindings)?;
        self.eval_slice(&vals)
    }

    /// Exact partial derivatives w.r.t. the seed variables (by index), via a
    /// single forward-mode dual pass.
    pub fn gradient_slice(&self, vals: &[f64], seeds: &[usize]) -> Result<Vec<f64>, ExprError> {
        let dual = dual_node(&self.root, vals, seeds)?;
        Ok(dual.partials.to_vec())
    }

    /// Value and partials in one pass.
    pub fn value_and_gradient(
        &self,
        vals: &[f64],
        seeds: &[usize],
    ) -> Result<(f64, Vec<f64>), ExprError> {
        let dual = dual_node(&self.root, vals, seeds)?;
        Ok((dual.value, dual.partials.to_vec()))
    }

    /// Named-binding gradient, seeded by variable name.
    pub fn gradient(
        &self,
        bindings: &HashMap<String, f64>,
        seeds: &[&str],
    ) -> Result<Vec<f64>, ExprError> {
        let vals = self.binding_slice(bindings)?;
        let mut idx = Vec::with_capacity(seeds.len());
        for s in seeds {
            match self.vars.iter().position(|v| v == s) {
                Some(i) => idx.push(i),
                None => {
                    return Err(ExprError::Unbound {
                        name: s.to_string(),
                    })
                }
            }
        }
        self.gradient_slice(&vals, &idx)
    }

    fn binding_slice(&self, bindings: &HashMap<String, f64>) -> Result<Vec<f64>, ExprError> {
        self.vars
            .iter()
            .map(|name| {
                bindings
                    .get(name)
                    .copied()
                    .ok_or_else(|| ExprError::Unbound { name: name.clone() })
            })
            .collect()
    }

    /// Replace each input variable (index >= `n_keep`) with the corresponding
    /// replacement expression over the first `n_keep` variables. Used to close
    /// the loop: f(x, u(x)) becomes an expression over x alone.
    pub fn substitute_tail(&self, n_keep: usize, replacements: &[&Node]) -> Expression {
        fn rec(node: &Node, n_keep: usize, repl: &[&Node]) -> Node {
            match node {
                Node::Num(v) => Node::Num(*v),
                Node::Var(i) => {
                    if *i < n_keep {
                        Node::Var(*i)
                    } else {
                        repl[*i - n_keep].clone()
                    }
                }
                Node::Neg(a) => Node::Neg(Box::new(rec(a, n_keep, repl))),
                Node::Bin(op, a, b) => Node::Bin(
                    *op,
                    Box::new(rec(a, n_keep, repl)),
                    Box::new(rec(b, n_keep, repl)),
                ),
                Node::Fun(f, args) => {
                    Node::Fun(*f, args.iter().map(|a| rec(a, n_keep, repl)).collect())
                }
            }
        }
        Expression {
            root: rec(&self.root, n_keep, replacements),
            vars: self.vars[..n_keep].to_vec(),
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print_node(&self.root, &self.vars, 0, f)
    }
}

fn precedence(node: &Node) -> u8 {
    match node {
        Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Node::Neg(_) => 3,
        Node::Num(v) if *v < 0.0 => 3,
        Node::Bin(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn print_node(node: &Node, vars: &[String], min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let prec = precedence(node);
    let parens = prec < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match node {
        Node::Num(v) => write!(f, "{v}")?,
        Node::Var(i) => write!(f, "{}", vars[*i])?,
        Node::Neg(a) => {
            write!(f, "-")?;
            print_node(a, vars, 3, f)?;
        }
        Node::Bin(op, a, b) => {
            let (sym, lp, rp) = match op {
                BinOp::Add => (" + ", 1, 2),
                BinOp::Sub => (" - ", 1, 2),
                BinOp::Mul => (" * ", 2, 3),
                BinOp::Div => (" / ", 2, 3),
                // right-associative: left operand needs parens at equal precedence
                BinOp::Pow => (" ^ ", 5, 4),
            };
            print_node(a, vars, lp, f)?;
            write!(f, "{sym}")?;
            print_node(b, vars, rp, f)?;
        }
        Node::Fun(fun, args) => {
            write!(f, "{}(", fun.name())?;
            for (k, arg) in args.iter().enumerate() {
                if k > 0 {
                    write!(f, ", ")?;
                }
                print_node(arg, vars, 0, f)?;
            }
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

fn domain_error(node: &Node, vars: &[String], message: &str) -> ExprError {
    struct Snippet<'a>(&'a Node, &'a [String]);
    impl fmt::Display for Snippet<'_> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            print_node(self.0, self.1, 0, f)
        }
    }
    ExprError::Domain {
        subexpr: format!("{}", Snippet(node, vars)),
        message: message.to_string(),
    }
}

fn eval_node(node: &Node, vals: &[f64]) -> Result<f64, ExprError> {
    // vars are only needed to render error snippets; thread them lazily
    fn go(node: &Node, vals: &[f64], top: &Node) -> Result<f64, ExprError> {
        Ok(match node {
            Node::Num(v) => *v,
            Node::Var(i) => vals[*i],
            Node::Neg(a) => -go(a, vals, top)?,
            Node::Bin(op, a, b) => {
                let x = go(a, vals, top)?;
                let y = go(b, vals, top)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(eval_domain(node, "division by zero"));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        let v = x.powf(y);
                        if v.is_nan() {
                            return Err(eval_domain(node, "invalid power"));
                        }
                        v
                    }
                }
            }
            Node::Fun(fun, args) => match fun {
                Fun::Sin => go(&args[0], vals, top)?.sin(),
                Fun::Cos => go(&args[0], vals, top)?.cos(),
                Fun::Exp => go(&args[0], vals, top)?.exp(),
                Fun::Tanh => go(&args[0], vals, top)?.tanh(),
                Fun::Log => {
                    let v = go(&args[0], vals, top)?;
                    if v <= 0.0 {
                        return Err(eval_domain(node, "log of non-positive value"));
                    }
                    v.ln()
                }
                Fun::Sqrt => {
                    let v = go(&args[0], vals, top)?;
                    if v < 0.0 {
                        return Err(eval_domain(node, "sqrt of negative value"));
                    }
                    v.sqrt()
                }
                Fun::Abs => go(&args[0], vals, top)?.abs(),
                Fun::Min => {
                    let x = go(&args[0], vals, top)?;
                    let y = go(&args[1], vals, top)?;
                    x.min(y)
                }
                Fun::Max => {
                    let x = go(&args[0], vals, top)?;
                    let y = go(&args[1], vals, top)?;
                    x.max(y)
                }
                Fun::Norm => {
                    let mut acc = 0.0;
                    for a in args {
                        let v = go(a, vals, top)?;
                        acc += v * v;
                    }
                    acc.sqrt()
                }
            },
        })
    }
    go(node, vals, node)
}

// Error construction for eval: the snippet needs variable names, which the
// fast path does not carry; render indices as x{i} placeholders instead.
fn eval_domain(node: &Node, message: &str) -> ExprError {
    let placeholder: Vec<String> = (0..max_var_index(node) + 1).map(|i| format!("v{i}")).collect();
    domain_error(node, &placeholder, message)
}

fn max_var_index(node: &Node) -> usize {
    match node {
        Node::Num(_) => 0,
        Node::Var(i) => *i,
        Node::Neg(a) => max_var_index(a),
        Node::Bin(_, a, b) => max_var_index(a).max(max_var_index(b)),
        Node::Fun(_, args) => args.iter().map(max_var_index).max().unwrap_or(0),
    }
}

fn dual_node(node: &Node, vals: &[f64], seeds: &[usize]) -> Result<DualValue, ExprError> {
    let n = seeds.len();
    Ok(match node {
        Node::Num(v) => DualValue::constant(*v, n),
        Node::Var(i) => {
            let mut d = DualValue::constant(vals[*i], n);
            for (k, s) in seeds.iter().enumerate() {
                if s == i {
                    d.partials[k] = 1.0;
                }
            }
            d
        }
        Node::Neg(a) => dual_node(a, vals, seeds)?.neg(),
        Node::Bin(op, a, b) => {
            let x = dual_node(a, vals, seeds)?;
            match op {
                BinOp::Add => x.add(&dual_node(b, vals, seeds)?),
                BinOp::Sub => x.sub(&dual_node(b, vals, seeds)?),
                BinOp::Mul => x.mul(&dual_node(b, vals, seeds)?),
                BinOp::Div => {
                    let y = dual_node(b, vals, seeds)?;
                    if y.value == 0.0 {
                        return Err(eval_domain(node, "division by zero"));
                    }
                    x.div(&y)
                }
                BinOp::Pow => {
                    // constant-exponent path keeps negative bases differentiable
                    if let Some(k) = const_value(b) {
                        x.powi_like(k)
                            .ok_or_else(|| eval_domain(node, "invalid power"))?
                    } else {
                        let y = dual_node(b, vals, seeds)?;
                        if x.value <= 0.0 {
                            return Err(eval_domain(
                                node,
                                "power with variable exponent requires positive base",
                            ));
                        }
                        x.pow(&y)
                    }
                }
            }
        }
        Node::Fun(fun, args) => match fun {
            Fun::Sin => dual_node(&args[0], vals, seeds)?.sin(),
            Fun::Cos => dual_node(&args[0], vals, seeds)?.cos(),
            Fun::Exp => dual_node(&args[0], vals, seeds)?.exp(),
            Fun::Tanh => dual_node(&args[0], vals, seeds)?.tanh(),
            Fun::Log => {
                let a = dual_node(&args[0], vals, seeds)?;
                if a.value <= 0.0 {
                    return Err(eval_domain(node, "log of non-positive value"));
                }
                a.log()
            }
            Fun::Sqrt => {
                let a = dual_node(&args[0], vals, seeds)?;
                if a.value < 0.0 {
                    return Err(eval_domain(node, "sqrt of negative value"));
                }
                a.sqrt()
                    .ok_or_else(|| eval_domain(node, "sqrt not differentiable at 0"))?
            }
            Fun::Abs => dual_node(&args[0], vals, seeds)?.abs(),
            Fun::Min => {
                let x = dual_node(&args[0], vals, seeds)?;
                let y = dual_node(&args[1], vals, seeds)?;
                x.min(y)
            }
            Fun::Max => {
                let x = dual_node(&args[0], vals, seeds)?;
                let y = dual_node(&args[1], vals, seeds)?;
                x.max(y)
            }
            Fun::Norm => {
                let mut parts = Vec::with_capacity(args.len());
                for a in args {
                    parts.push(dual_node(a, vals, seeds)?);
                }
                DualValue::norm(&parts)
            }
        },
    })
}

fn const_value(node: &Node) -> Option<f64> {
    match node {
        Node::Num(v) => Some(*v),
        Node::Neg(a) => const_value(a).map(|v| -v),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn bind(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn e_desugars_to_literal() {
        let e = parse("e^y * x", &["x", "y"]).unwrap();
        match e.root() {
            Node::Bin(BinOp::Mul, l, r) => {
                assert!(matches!(**r, Node::Var(0)));
                match &**l {
                    Node::Bin(BinOp::Pow, base, _) => {
                        assert_eq!(**base, Node::Num(std::f64::consts::E))
                    }
                    other => panic!("expected power, got {other:?}"),
                }
            }
            other => panic!("expected product, got {other:?}"),
        }
    }

    #[test]
    fn example_v7_local_h_parses() {
        let e = parse("1 - (x+1)^2 - (y-5)^2", &["x", "y"]).unwrap();
        assert_relative_eq!(e.eval(&bind(&[("x", 0.0), ("y", 5.0)])).unwrap(), 0.0);
        assert_relative_eq!(e.eval(&bind(&[("x", 0.0), ("y", 0.0)])).unwrap(), -25.0);
    }

    #[test]
    fn malformed_input_reports_offset() {
        match parse("x + * y", &["x", "y"]) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_variable_is_reported() {
        match parse("x + z", &["x", "y"]) {
            Err(ExprError::UnknownVariable { name, offset }) => {
                assert_eq!(name, "z");
                assert_eq!(offset, 4);
            }
            other => panic!("expected unknown variable, got {other:?}"),
        }
    }

    #[test]
    fn eval_basics() {
        let e = parse("x*y+1", &["x", "y"]).unwrap();
        assert_relative_eq!(e.eval(&bind(&[("x", 0.0), ("y", -7.0)])).unwrap(), 1.0);

        let e = parse("exp(x)*sin(x)", &["x"]).unwrap();
        assert!(e.eval(&bind(&[("x", PI)])).unwrap().abs() < 1e-9);
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let e = parse("sqrt(x)", &["x"]).unwrap();
        match e.eval(&bind(&[("x", -1.0)])) {
            Err(ExprError::Domain { subexpr, .. }) => assert!(subexpr.contains("sqrt")),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        let e = parse("1/x", &["x"]).unwrap();
        assert!(matches!(
            e.eval(&bind(&[("x", 0.0)])),
            Err(ExprError::Domain { .. })
        ));
    }

    #[test]
    fn gradient_polynomial() {
        let e = parse("x^2 + y^2", &["x", "y"]).unwrap();
        let g = e.gradient(&bind(&[("x", 1.0), ("y", 2.0)]), &["x", "y"]).unwrap();
        assert_relative_eq!(g[0], 2.0);
        assert_relative_eq!(g[1], 4.0);
    }

    #[test]
    fn gradient_of_wrong_candidate_alt() {
        // hand differentiation of e^y * x at (1, 0)
        let e = parse("e^y * x", &["x", "y"]).unwrap();
        let g = e.gradient(&bind(&[("x", 1.0), ("y", 0.0)]), &["x", "y"]).unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(g[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_constant_power_negative_base() {
        let e = parse("(x+1)^2", &["x"]).unwrap();
        let g = e.gradient(&bind(&[("x", -3.0)]), &["x"]).unwrap();
        assert_relative_eq!(g[0], -4.0);
    }

    #[test]
    fn nonsmooth_right_derivative_at_ties() {
        // abs'(0) = +1, max tie -> first argument, min tie -> second argument
        let e = parse("abs(x)", &["x"]).unwrap();
        assert_relative_eq!(e.gradient(&bind(&[("x", 0.0)]), &["x"]).unwrap()[0], 1.0);

        let e = parse("max(x, 2*x)", &["x"]).unwrap();
        assert_relative_eq!(e.gradient(&bind(&[("x", 0.0)]), &["x"]).unwrap()[0], 1.0);
        let e = parse("min(x, 2*x)", &["x"]).unwrap();
        assert_relative_eq!(e.gradient(&bind(&[("x", 0.0)]), &["x"]).unwrap()[0], 2.0);
    }

    #[test]
    fn norm_value_and_gradient() {
        let e = parse("norm(x, y, 2)", &["x", "y"]).unwrap();
        assert_relative_eq!(e.eval(&bind(&[("x", 1.0), ("y", 2.0)])).unwrap(), 3.0);
        let g = e.gradient(&bind(&[("x", 1.0), ("y", 2.0)]), &["x", "y"]).unwrap();
        assert_relative_eq!(g[0], 1.0 / 3.0);
        assert_relative_eq!(g[1], 2.0 / 3.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("2^3^2", &["x"]).unwrap();
        assert_relative_eq!(e.eval_slice(&[0.0]).unwrap(), 512.0); // right-assoc
        let e = parse("-x^2", &["x"]).unwrap();
        assert_relative_eq!(e.eval_slice(&[2.0]).unwrap(), -4.0); // ^ binds tighter
        let e = parse("1 - 2 - 3", &["x"]).unwrap();
        assert_relative_eq!(e.eval_slice(&[0.0]).unwrap(), -4.0); // left-assoc
    }

    #[test]
    fn reserved_names_rejected() {
        assert!(matches!(
            parse("pi", &["pi"]),
            Err(ExprError::ReservedName { .. })
        ));
    }

    #[test]
    fn substitution_closes_the_loop() {
        // f(x, u) = -y + u, u(x, y) = x*y  =>  -y + x*y
        let f = parse("-y + u", &["x", "y", "u"]).unwrap();
        let u = parse("x*y", &["x", "y"]).unwrap();
        let closed = f.substitute_tail(2, &[u.root()]);
        assert_eq!(closed.variables(), &["x".to_string(), "y".to_string()]);
        assert_relative_eq!(closed.eval_slice(&[2.0, 3.0]).unwrap(), 3.0);
    }

    #[test]
    fn print_parse_round_trip_structural() {
        for text in [
            "x*y+1",
            "1 - (x+1)^2 - (y-5)^2",
            "-x^2",
            "x - (y - 1)",
            "(x^2)^3",
            "x^-2",
            "exp(y)*x",
            "norm(x, y)",
            "min(max(x, y), abs(x - y))",
            "x / (y / 2)",
            "-(x + y) * 2",
        ] {
            let e = parse(text, &["x", "y"]).unwrap();
            let printed = format!("{e}");
            let re = parse(&printed, &["x", "y"]).unwrap();
            assert_eq!(e, re, "round trip failed for `{text}` -> `{printed}`");
        }
    }
}
