//! Right-hand-side recipes: a small arithmetic expression over the point.
//!
//! Variables: `x`, `y` (the first complex coordinate), `x1, y1, x2, y2`,
//! `r` = |z|, `r1` = |z1|, `theta` = arg z1, `eps`. Functions: `sin`,
//! `cos`, `exp`, `ln`, `sqrt`, `abs`, `min`, `max`. Integer literals are
//! read as floats, so `1/2` is one half.

use std::sync::Arc;

use evalexpr::{
    build_operator_tree, ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes,
    EvalexprError, Function, HashMapContext, Node, Value,
};

use crate::error::{Error, Result};
use crate::grid::{GridDomain, GridFunction, NodeKind};

pub struct Recipe {
    source: String,
    tree: Node<DefaultNumericTypes>,
}

impl std::fmt::Debug for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("Recipe").field(&self.source).finish()
    }
}

fn expr_err(e: impl std::fmt::Display) -> Error {
    Error::Expr(e.to_string())
}

/// Appends ".0" to integer literals that are not part of an identifier.
fn floatify(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let in_ident = i > 0 && (chars[i - 1].is_alphanumeric() || chars[i - 1] == '_' || chars[i - 1] == '.');
        if c.is_ascii_digit() && !in_ident {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let mut float = chars[start..i].contains(&'.');
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                float = true;
                i += 1;
                if i < chars.len() && (chars[i] == '-' || chars[i] == '+') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.extend(&chars[start..i]);
            if !float {
                out.push_str(".0");
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

fn unary(f: fn(f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |arg: &Value<DefaultNumericTypes>| Ok(Value::Float(f(arg.as_number()?))))
}

fn base_context() -> Result<HashMapContext<DefaultNumericTypes>> {
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    let fns: [(&str, fn(f64) -> f64); 6] = [
        ("sin", f64::sin),
        ("cos", f64::cos),
        ("exp", f64::exp),
        ("ln", f64::ln),
        ("sqrt", f64::sqrt),
        ("abs", f64::abs),
    ];
    for (name, f) in fns {
        ctx.set_function(name.into(), unary(f)).map_err(expr_err)?;
    }
    Ok(ctx)
}

impl Recipe {
    pub fn parse(source: &str) -> Result<Recipe> {
        let tree = build_operator_tree::<DefaultNumericTypes>(&floatify(source)).map_err(expr_err)?;
        let r = Recipe { source: source.to_string(), tree };
        r.eval(&[0.1, 0.2, 0.3, 0.4], 0.0)?;
        Ok(r)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: &[f64], eps: f64) -> Result<f64> {
        let mut ctx = base_context()?;
        self.eval_in(&mut ctx, x, eps)
    }

    fn eval_in(&self, ctx: &mut HashMapContext<DefaultNumericTypes>, x: &[f64], eps: f64) -> Result<f64> {
        let get = |i: usize| x.get(i).copied().unwrap_or(0.0);
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let vars = [
            ("x", get(0)),
            ("y", get(1)),
            ("x1", get(0)),
            ("y1", get(1)),
            ("x2", get(2)),
            ("y2", get(3)),
            ("r", r),
            ("r1", get(0).hypot(get(1))),
            ("theta", get(1).atan2(get(0))),
            ("eps", eps),
        ];
        for (k, v) in vars {
            ctx.set_value(k.into(), Value::Float(v)).map_err(expr_err)?;
        }
        match self.tree.eval_number_with_context(ctx) {
            Ok(v) => Ok(v),
            Err(EvalexprError::VariableIdentifierNotFound(name)) => {
                Err(Error::Expr(format!("unknown variable `{name}`")))
            }
            Err(e) => Err(expr_err(e)),
        }
    }

    /// Samples the recipe on every non-exterior node and the boundary
    /// crossing points; values must be finite and positive.
    pub fn sample(&self, domain: &Arc<GridDomain>, eps: f64) -> Result<GridFunction> {
        let mut ctx = base_context()?;
        let dim = domain.dim;
        let mut values = vec![f64::NAN; domain.node_count()];
        for (i, v) in values.iter_mut().enumerate() {
            if domain.kind(i) == NodeKind::Exterior {
                continue;
            }
            let x = domain.coord(i);
            let f = self.eval_in(&mut ctx, &x[..dim], eps)?;
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "right side {} = {f} at {:?} is not positive",
                    self.source,
                    &x[..dim]
                )));
            }
            *v = f;
        }
        let trace = domain
            .cuts()
            .iter()
            .map(|c| self.eval_in(&mut ctx, &c.point[..dim], eps))
            .collect::<Result<Vec<_>>>()?;
        Ok(GridFunction { domain: domain.clone(), values, trace: Some(trace) })
    }
}

/// Largest |f - 1| over the interior nodes.
pub fn band_width(f: &GridFunction) -> f64 {
    f.domain.interior_nodes().iter().map(|&q| (f.values[q] - 1.0).abs()).fold(0.0, f64::max)
}
