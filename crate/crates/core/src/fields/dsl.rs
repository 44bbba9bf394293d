//! A small expression language for custom fields.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := postfix ('^' unary)?
//! postfix := primary ('[' integer ']')*
//! primary := number | 'pi' | var | call | '(' expr ')'
//! var     := 'x' | 'y' | 'u'
//! call    := name '(' expr (',' expr)* ')'
//! ```
//!
//! `x` and `y` are `d`-vectors, `u` is the scalar noise label. Indexing is zero-based.
//! Scalars broadcast against vectors in `+ - * /`; `^` takes a scalar exponent.
//! Functions: `sin cos tan exp log sqrt abs tanh` (componentwise), `dot(a, b)`, `norm(a)`,
//! `vec(s1, .., sd)`, `min(a, b)`, `max(a, b)`, and `mean(e)`, the `mu`-average of `e` over
//! `y` (nonlocal fields only).
//!
//! Expressions are shape-checked at compile time, so evaluation cannot fail.

use std::sync::Arc;

use super::{LocalField, NoiseSpace, PvfSpec};
use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    X,
    Y,
    U,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Index(Box<Expr>, usize),
    Call(String, Vec<Expr>),
    Mean(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::input(format!("bad number '{s}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()[],".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(Error::input(format!(
                "unexpected character '{c}' in field expression"
            )));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::input(format!(
                "expected '{c}' at token {} of field expression",
                self.pos
            )))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                '+'
            } else if self.eat('-') {
                '-'
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                '*'
            } else if self.eat('/') {
                '/'
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.postfix()?;
        if self.eat('^') {
            return Ok(Expr::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr> {
        let mut e = self.primary()?;
        while self.eat('[') {
            let idx = match self.toks.get(self.pos) {
                Some(Tok::Num(v)) if *v >= 0.0 && v.fract() == 0.0 => *v as usize,
                _ => return Err(Error::input("index must be a non-negative integer literal")),
            };
            self.pos += 1;
            self.expect(']')?;
            e = Expr::Index(Box::new(e), idx);
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => return Ok(Expr::Var(Var::X)),
                    "y" => return Ok(Expr::Var(Var::Y)),
                    "u" => return Ok(Expr::Var(Var::U)),
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    _ => {}
                }
                self.expect('(')?;
                let mut args = vec![self.expr()?];
                while self.eat(',') {
                    args.push(self.expr()?);
                }
                self.expect(')')?;
                if name == "mean" {
                    if args.len() != 1 {
                        return Err(Error::input("mean takes one argument"));
                    }
                    return Ok(Expr::Mean(Box::new(args.remove(0))));
                }
                Ok(Expr::Call(name, args))
            }
            other => Err(Error::input(format!(
                "unexpected {other:?} in field expression"
            ))),
        }
    }
}

fn parse(src: &str) -> Result<Expr> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(Error::input(format!(
            "trailing input after token {} in field expression",
            p.pos
        )));
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Scalar,
    Vector(usize),
}

struct Scope {
    dim: usize,
    x: bool,
    y: bool,
    u: bool,
    mean: bool,
}

fn shape_of(e: &Expr, sc: &Scope, in_mean: bool) -> Result<Shape> {
    use Shape::*;
    Ok(match e {
        Expr::Num(_) => Scalar,
        Expr::Var(v) => {
            let ok = match v {
                Var::X => sc.x,
                Var::Y => sc.y || in_mean,
                Var::U => sc.u,
            };
            if !ok {
                return Err(Error::input(format!(
                    "variable {v:?} is not available for this field kind"
                )));
            }
            if *v == Var::U {
                Scalar
            } else {
                Vector(sc.dim)
            }
        }
        Expr::Neg(a) => shape_of(a, sc, in_mean)?,
        Expr::Bin(op, a, b) => {
            let (sa, sb) = (shape_of(a, sc, in_mean)?, shape_of(b, sc, in_mean)?);
            match (op, sa, sb) {
                ('^', s, Scalar) => s,
                ('^', _, _) => return Err(Error::input("exponent must be scalar")),
                (_, Scalar, s) | (_, s, Scalar) => s,
                (_, Vector(m), Vector(n)) if m == n => Vector(m),
                _ => return Err(Error::input("vector length mismatch in field expression")),
            }
        }
        Expr::Index(a, k) => match shape_of(a, sc, in_mean)? {
            Vector(n) if *k < n => Scalar,
            _ => return Err(Error::input(format!("index {k} out of range"))),
        },
        Expr::Mean(a) => {
            if !sc.mean || in_mean {
                return Err(Error::input(
                    "mean(..) is only available in nonlocal fields",
                ));
            }
            shape_of(a, sc, true)?
        }
        Expr::Call(name, args) => {
            let shapes = args
                .iter()
                .map(|a| shape_of(a, sc, in_mean))
                .collect::<Result<Vec<_>>>()?;
            let arity = |n: usize| {
                if shapes.len() == n {
                    Ok(())
                } else {
                    Err(Error::input(format!("{name} takes {n} argument(s)")))
                }
            };
            match name.as_str() {
                "sin" | "cos" | "tan" | "exp" | "log" | "sqrt" | "abs" | "tanh" => {
                    arity(1)?;
                    shapes[0]
                }
                "norm" => {
                    arity(1)?;
                    Scalar
                }
                "dot" => {
                    arity(2)?;
                    if shapes[0] != shapes[1] {
                        return Err(Error::input("dot needs arguments of equal shape"));
                    }
                    Scalar
                }
                "min" | "max" => {
                    arity(2)?;
                    match (shapes[0], shapes[1]) {
                        (Scalar, s) | (s, Scalar) => s,
                        (a, b) if a == b => a,
                        _ => return Err(Error::input("min/max shape mismatch")),
                    }
                }
                "vec" => {
                    if shapes.iter().any(|s| *s != Scalar) {
                        return Err(Error::input("vec takes scalar arguments"));
                    }
                    Vector(shapes.len())
                }
                _ => return Err(Error::input(format!("unknown function '{name}'"))),
            }
        }
    })
}

#[derive(Debug, Clone)]
enum Value {
    S(f64),
    V(Point),
}

impl Value {
    fn map(self, f: impl Fn(f64) -> f64) -> Value {
        match self {
            Value::S(a) => Value::S(f(a)),
            Value::V(v) => Value::V(v.into_iter().map(f).collect()),
        }
    }

    fn zip(self, other: Value, f: impl Fn(f64, f64) -> f64) -> Value {
        match (self, other) {
            (Value::S(a), Value::S(b)) => Value::S(f(a, b)),
            (Value::S(a), Value::V(v)) => Value::V(v.into_iter().map(|b| f(a, b)).collect()),
            (Value::V(v), Value::S(b)) => Value::V(v.into_iter().map(|a| f(a, b)).collect()),
            (Value::V(v), Value::V(w)) => {
                Value::V(v.into_iter().zip(w).map(|(a, b)| f(a, b)).collect())
            }
        }
    }

    fn scalar(&self) -> f64 {
        match self {
            Value::S(a) => *a,
            Value::V(_) => unreachable!("shape-checked"),
        }
    }

    fn components(&self) -> Point {
        match self {
            Value::S(a) => smallvec::smallvec![*a],
            Value::V(v) => v.clone(),
        }
    }
}

struct Env<'a> {
    x: &'a [f64],
    y: &'a [f64],
    u: f64,
    mu: Option<&'a DiscreteMeasure>,
}

fn eval(e: &Expr, env: &Env<'_>) -> Value {
    match e {
        Expr::Num(v) => Value::S(*v),
        Expr::Var(Var::X) => Value::V(env.x.iter().copied().collect()),
        Expr::Var(Var::Y) => Value::V(env.y.iter().copied().collect()),
        Expr::Var(Var::U) => Value::S(env.u),
        Expr::Neg(a) => eval(a, env).map(|v| -v),
        Expr::Bin(op, a, b) => {
            let (a, b) = (eval(a, env), eval(b, env));
            match op {
                '+' => a.zip(b, |p, q| p + q),
                '-' => a.zip(b, |p, q| p - q),
                '*' => a.zip(b, |p, q| p * q),
                '/' => a.zip(b, |p, q| p / q),
                _ => {
                    let k = b.scalar();
                    a.map(|p| p.powf(k))
                }
            }
        }
        Expr::Index(a, k) => match eval(a, env) {
            Value::V(v) => Value::S(v[*k]),
            Value::S(_) => unreachable!("shape-checked"),
        },
        Expr::Mean(a) => {
            let mu = env.mu.expect("mean only compiles for nonlocal fields");
            let mut acc: Option<Value> = None;
            for (y, w) in mu.atoms().zip(mu.weights()) {
                let inner = Env {
                    x: env.x,
                    y,
                    u: env.u,
                    mu: None,
                };
                let term = eval(a, &inner).map(|c| w * c);
                acc = Some(match acc {
                    None => term,
                    Some(s) => s.zip(term, |p, q| p + q),
                });
            }
            acc.expect("measures are non-empty")
        }
        Expr::Call(name, args) => {
            let mut vals: Vec<Value> = args.iter().map(|a| eval(a, env)).collect();
            match name.as_str() {
                "sin" => vals.remove(0).map(f64::sin),
                "cos" => vals.remove(0).map(f64::cos),
                "tan" => vals.remove(0).map(f64::tan),
                "exp" => vals.remove(0).map(f64::exp),
                "log" => vals.remove(0).map(f64::ln),
                "sqrt" => vals.remove(0).map(f64::sqrt),
                "abs" => vals.remove(0).map(f64::abs),
                "tanh" => vals.remove(0).map(f64::tanh),
                "norm" => {
                    let c = vals[0].components();
                    Value::S(c.iter().map(|v| v * v).sum::<f64>().sqrt())
                }
                "dot" => {
                    let (a, b) = (vals[0].components(), vals[1].components());
                    Value::S(a.iter().zip(&b).map(|(p, q)| p * q).sum())
                }
                "min" => {
                    let b = vals.remove(1);
                    vals.remove(0).zip(b, f64::min)
                }
                "max" => {
                    let b = vals.remove(1);
                    vals.remove(0).zip(b, f64::max)
                }
                _ => Value::V(vals.iter().map(Value::scalar).collect()),
            }
        }
    }
}

fn uses(e: &Expr, var: Var) -> bool {
    match e {
        Expr::Num(_) => false,
        Expr::Var(v) => *v == var,
        Expr::Neg(a) | Expr::Index(a, _) | Expr::Mean(a) => uses(a, var),
        Expr::Bin(_, a, b) => uses(a, var) || uses(b, var),
        Expr::Call(_, args) => args.iter().any(|a| uses(a, var)),
    }
}

/// Replaces every `mean(..)` whose body depends only on `y` by its value under `mu`.
fn specialize(e: &Expr, mu: &DiscreteMeasure) -> Expr {
    let rec = |a: &Expr| Box::new(specialize(a, mu));
    match e {
        Expr::Mean(a) if !uses(a, Var::X) && !uses(a, Var::U) => {
            let env = Env {
                x: &[],
                y: &[],
                u: 0.0,
                mu: Some(mu),
            };
            match eval(e, &env) {
                Value::S(v) => Expr::Num(v),
                Value::V(v) => Expr::Call("vec".into(), v.into_iter().map(Expr::Num).collect()),
            }
        }
        Expr::Neg(a) => Expr::Neg(rec(a)),
        Expr::Bin(op, a, b) => Expr::Bin(*op, rec(a), rec(b)),
        Expr::Index(a, k) => Expr::Index(rec(a), *k),
        Expr::Call(n, args) => {
            Expr::Call(n.clone(), args.iter().map(|a| specialize(a, mu)).collect())
        }
        other => other.clone(),
    }
}

/// How a DSL expression is turned into a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    /// `g(x, u)`.
    Sampled,
    /// `f(x, y)`.
    Interaction,
    /// `h(x, y, u)`.
    StochasticInteraction,
    /// `g(x, mu, u)` with `mean(..)` over `y ~ mu`.
    Nonlocal,
}

/// Parses and shape-checks `src`, returning a field in dimension `dim`.
///
/// The expression must evaluate to a `dim`-vector (a scalar is accepted when `dim = 1`).
pub fn compile_field(kind: FieldKind, src: &str, dim: usize, noise: NoiseSpace) -> Result<PvfSpec> {
    let expr = parse(src)?;
    let scope = Scope {
        dim,
        x: true,
        y: matches!(
            kind,
            FieldKind::Interaction | FieldKind::StochasticInteraction
        ),
        u: kind != FieldKind::Interaction,
        mean: kind == FieldKind::Nonlocal,
    };
    match shape_of(&expr, &scope, false)? {
        Shape::Vector(n) if n == dim => {}
        Shape::Scalar if dim == 1 => {}
        s => {
            return Err(Error::input(format!(
                "field expression has shape {s:?}, expected a {dim}-vector"
            )))
        }
    }
    let expr = Arc::new(expr);
    let point = |v: Value| -> Point { v.components() };
    let empty: &[f64] = &[];
    Ok(match kind {
        FieldKind::Sampled => PvfSpec::sampled(noise, move |x, u| {
            point(eval(
                &expr,
                &Env {
                    x,
                    y: empty,
                    u,
                    mu: None,
                },
            ))
        }),
        FieldKind::Interaction => PvfSpec::interaction(move |x, y| {
            point(eval(
                &expr,
                &Env {
                    x,
                    y,
                    u: 0.0,
                    mu: None,
                },
            ))
        }),
        FieldKind::StochasticInteraction => {
            PvfSpec::stochastic_interaction(noise, move |x, y, u| {
                point(eval(&expr, &Env { x, y, u, mu: None }))
            })
        }
        FieldKind::Nonlocal => PvfSpec::nonlocal(noise, move |mu: &DiscreteMeasure| {
            let local = Arc::new(specialize(&expr, mu));
            let mu = mu.clone();
            Arc::new(move |x: &[f64], u: f64| {
                point(eval(
                    &local,
                    &Env {
                        x,
                        y: empty,
                        u,
                        mu: Some(&mu),
                    },
                ))
            }) as LocalField
        }),
    })
}

/// Evaluates a closed scalar expression (no variables), e.g. for config constants.
pub fn eval_constant(src: &str) -> Result<f64> {
    let expr = parse(src)?;
    let scope = Scope {
        dim: 0,
        x: false,
        y: false,
        u: false,
        mean: false,
    };
    if shape_of(&expr, &scope, false)? != Shape::Scalar {
        return Err(Error::input("constant expression must be scalar"));
    }
    let v = eval(
        &expr,
        &Env {
            x: &[],
            y: &[],
            u: 0.0,
            mu: None,
        },
    )
    .scalar();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{evaluate_pvf, scenario};
    use crate::measure::tangent_mismatch;

    fn pm() -> NoiseSpace {
        NoiseSpace::uniform(vec![1.0, -1.0])
    }

    #[test]
    fn sampled_matches_builtin() {
        let spec = compile_field(FieldKind::Sampled, "-x + u", 1, pm()).unwrap();
        let mu = DiscreteMeasure::new(1, vec![-0.3, 0.7], vec![0.4, 0.6]).unwrap();
        let s = scenario("sdf-linear").unwrap();
        let (a, b) = (
            evaluate_pvf(&spec, &mu).unwrap(),
            evaluate_pvf(&s.spec, &mu).unwrap(),
        );
        assert!(tangent_mismatch(&a, &b, 0.0, 0.0).is_none());
    }

    #[test]
    fn nonlocal_matches_builtin_cylinder() {
        let src = "-x + 0.5 * tanh(mean(sin(y[0]))) * vec(cos(x[1]), sin(x[0])) + u * vec(0, 0.5)";
        let spec = compile_field(FieldKind::Nonlocal, src, 2, pm()).unwrap();
        let s = scenario("nonlocal-cylinder").unwrap();
        let a = evaluate_pvf(&spec, &s.mu0).unwrap();
        let b = evaluate_pvf(&s.spec, &s.mu0).unwrap();
        assert!(tangent_mismatch(&a, &b, 1e-14, 0.0).is_none());
    }

    #[test]
    fn interaction_and_functions() {
        let spec = compile_field(
            FieldKind::Interaction,
            "(y - x) * exp(-norm(y - x)^2)",
            2,
            pm(),
        )
        .unwrap();
        let mu = DiscreteMeasure::new(2, vec![0.0, 0.0, 1.0, 0.0], vec![0.5, 0.5]).unwrap();
        let phi = evaluate_pvf(&spec, &mu).unwrap();
        let v = phi.velocity_at(&[0.0, 0.0], 0.0).unwrap();
        assert!((v[0] - 0.5 * (-1f64).exp()).abs() < 1e-15);
        assert_eq!(eval_constant("2^3 - max(1, 4) / 2 + pi - pi").unwrap(), 6.0);
        assert_eq!(eval_constant("-2^2").unwrap(), -4.0);
    }

    #[test]
    fn rejects_bad_expressions() {
        let bad = [
            (FieldKind::Sampled, "-x + y"),
            (FieldKind::Interaction, "x * u"),
            (FieldKind::Sampled, "x[3]"),
            (FieldKind::Sampled, "vec(1, 2, 3) + x"),
            (FieldKind::Sampled, "mean(y)"),
            (FieldKind::Sampled, "frob(x)"),
            (FieldKind::Sampled, "x +"),
            (FieldKind::Sampled, "x $ 2"),
            (FieldKind::Nonlocal, "mean(mean(y))"),
        ];
        for (k, src) in bad {
            assert!(compile_field(k, src, 2, pm()).is_err(), "{src}");
        }
        assert!(compile_field(FieldKind::Sampled, "dot(x, x)", 2, pm()).is_err());
        assert!(compile_field(FieldKind::Sampled, "dot(x, x)", 1, pm()).is_ok());
    }
}
