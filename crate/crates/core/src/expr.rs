//! Scalar expressions of a few named real variables, for configuration files.
//!
//! Syntax and built-in functions are those of `evalexpr` (`math::sin`,
//! `math::exp`, `math::pow`, ...). The constant `pi` is predefined. Integer
//! literals stay integers, so write `0.5` rather than `1/2`.

use evalexpr::{
    build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    tree: Node<DefaultNumericTypes>,
    variables: Vec<&'static str>,
}

impl Expression {
    /// Parses `source`; identifiers other than `variables` and `pi` are rejected.
    pub fn parse(source: &str, variables: &[&'static str]) -> Result<Self> {
        let tree = build_operator_tree::<DefaultNumericTypes>(source)
            .map_err(|e| Error::Config(format!("cannot parse expression `{source}`: {e}")))?;
        for id in tree.iter_variable_identifiers() {
            if id != "pi" && !variables.contains(&id) {
                return Err(Error::Config(format!(
                    "unknown variable `{id}` in `{source}`; allowed: {}",
                    variables.join(", ")
                )));
            }
        }
        let e = Expression { source: source.to_string(), tree, variables: variables.to_vec() };
        e.eval(&vec![0.5; variables.len()])?;
        Ok(e)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Whether the expression reads `name`.
    pub fn uses(&self, name: &str) -> bool {
        self.tree.iter_variable_identifiers().any(|id| id == name)
    }

    /// Evaluates with `values` bound to the variables in declaration order.
    pub fn eval(&self, values: &[f64]) -> Result<f64> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        let bind = |ctx: &mut HashMapContext, name: &str, v: f64| {
            ctx.set_value(name.to_string(), Value::Float(v))
                .map_err(|e| Error::Config(format!("cannot bind `{name}`: {e}")))
        };
        bind(&mut ctx, "pi", std::f64::consts::PI)?;
        for (name, v) in self.variables.iter().zip(values) {
            bind(&mut ctx, name, *v)?;
        }
        self.tree
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::Config(format!("cannot evaluate `{}`: {e}", self.source)))
    }

    /// Like [`eval`](Self::eval) for callers that validated the expression
    /// already; evaluation errors become NaN.
    pub fn value(&self, values: &[f64]) -> f64 {
        self.eval(values).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_with_variables() {
        let e = Expression::parse("1 + 2 * s + math::sin(pi * t)", &["s", "t"]).unwrap();
        assert!((e.eval(&[0.25, 0.5]).unwrap() - 2.5).abs() < 1e-15);
        assert!(e.uses("t") && e.uses("s"));
        let c = Expression::parse("3", &["s", "t"]).unwrap();
        assert_eq!(c.eval(&[1.0, 1.0]).unwrap(), 3.0);
        assert!(!c.uses("t"));
    }

    #[test]
    fn rejects_unknown_names_and_bad_syntax() {
        assert!(Expression::parse("x + 1", &["s"]).is_err());
        assert!(Expression::parse("1 +", &["s"]).is_err());
        assert!(Expression::parse("\"text\"", &["s"]).is_err());
    }
}
