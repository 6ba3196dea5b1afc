use std::collections::BTreeMap;
use std::path::Path;

use meval::{ContextProvider, Expr, FuncEvalError};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{FlowError, FlowSystem};

/// On-disk description of a user-defined vector field.
///
/// ```toml
/// name = "rossler"
/// dim = 3
/// equations = ["-x2 - x3", "x1 + a*x2", "b + x3*(x1 - c)"]
/// singularities = []
///
/// [parameters]
/// a = 0.2
/// b = 0.2
/// c = 5.7
/// ```
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UserSystemConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dim: usize,
    pub equations: Vec<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub singularities: Vec<Vec<f64>>,
}

fn default_name() -> String {
    "user".to_string()
}

/// A vector field given by arithmetic expressions over `x1..xd` and named
/// parameters. The Jacobian falls back to central finite differences.
#[derive(Debug, Clone)]
pub struct UserSystem {
    config: UserSystemConfig,
    exprs: Vec<Expr>,
}

struct Scope<'a> {
    x: &'a [f64],
    params: &'a BTreeMap<String, f64>,
}

impl ContextProvider for Scope<'_> {
    fn get_var(&self, name: &str) -> Option<f64> {
        if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx >= 1 && idx <= self.x.len() {
                return Some(self.x[idx - 1]);
            }
        }
        match name {
            "pi" => Some(std::f64::consts::PI),
            "e" => Some(std::f64::consts::E),
            _ => self.params.get(name).copied(),
        }
    }

    fn eval_func(&self, name: &str, args: &[f64]) -> Result<f64, FuncEvalError> {
        let unary = |f: fn(f64) -> f64| match args {
            [a] => Ok(f(*a)),
            _ => Err(FuncEvalError::NumberArgs(1)),
        };
        match name {
            "sin" => unary(f64::sin),
            "cos" => unary(f64::cos),
            "tan" => unary(f64::tan),
            "tanh" => unary(f64::tanh),
            "exp" => unary(f64::exp),
            "ln" => unary(f64::ln),
            "sqrt" => unary(f64::sqrt),
            "abs" => unary(f64::abs),
            "atan2" => match args {
                [a, b] => Ok(a.atan2(*b)),
                _ => Err(FuncEvalError::NumberArgs(2)),
            },
            _ => Err(FuncEvalError::UnknownFunction),
        }
    }
}

impl UserSystem {
    pub fn new(config: UserSystemConfig) -> Result<Self, FlowError> {
        if config.dim < 3 {
            return Err(FlowError::ParseError(format!("dim must be at least 3, got {}", config.dim)));
        }
        if config.equations.len() != config.dim {
            return Err(FlowError::ParseError(format!(
                "expected {} equations, found {}",
                config.dim,
                config.equations.len()
            )));
        }
        if let Some(s) = config.singularities.iter().find(|s| s.len() != config.dim) {
            return Err(FlowError::ParseError(format!("singularity {s:?} has the wrong dimension")));
        }
        let exprs = config
            .equations
            .iter()
            .enumerate()
            .map(|(i, src)| {
                src.parse::<Expr>()
                    .map_err(|e| FlowError::ParseError(format!("equation {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let system = UserSystem { config, exprs };
        // Resolve every name once so unknown identifiers fail at load time.
        let probe = vec![0.5; system.config.dim];
        for (i, expr) in system.exprs.iter().enumerate() {
            expr.eval_with_context(system.scope(&probe))
                .map_err(|e| FlowError::ParseError(format!("equation {}: {e}", i + 1)))?;
        }
        Ok(system)
    }

    pub fn from_toml_str(src: &str) -> Result<Self, FlowError> {
        let config: UserSystemConfig = toml::from_str(src).map_err(|e| FlowError::ParseError(e.to_string()))?;
        Self::new(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, FlowError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| FlowError::ParseError(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    pub fn config(&self) -> &UserSystemConfig {
        &self.config
    }

    fn scope<'a>(&'a self, x: &'a [f64]) -> Scope<'a> {
        Scope {
            x,
            params: &self.config.parameters,
        }
    }
}

impl FlowSystem for UserSystem {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, expr) in out.iter_mut().zip(&self.exprs) {
            // Names were resolved at load time, so evaluation cannot fail.
            *o = expr.eval_with_context(self.scope(x)).unwrap_or(f64::NAN);
        }
    }

    fn singularities(&self) -> Vec<DVector<f64>> {
        self.config
            .singularities
            .iter()
            .map(|s| DVector::from_column_slice(s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Lorenz;

    const LORENZ_TOML: &str = r#"
name = "lorenz-user"
dim = 3
equations = ["sigma*(x2 - x1)", "x1*(rho - x3) - x2", "x1*x2 - beta*x3"]
singularities = [[0.0, 0.0, 0.0]]

[parameters]
sigma = 10.0
rho = 28.0
beta = 2.6666666666666665
"#;

    #[test]
    fn user_lorenz_matches_builtin() {
        let user = UserSystem::from_toml_str(LORENZ_TOML).unwrap();
        let exact = Lorenz::default();
        for x in [[1.0, 1.0, 1.0], [-3.0, 4.5, 20.0], [10.0, -7.0, 30.0]] {
            let a = user.eval(&x);
            let b = exact.eval(&x);
            assert!((a - b).amax() < 1e-12);
            let ja = user.jacobian(&x);
            let jb = exact.jacobian(&x);
            assert!((ja - &jb).norm() / jb.norm() < 1e-5);
        }
        assert_eq!(user.name(), "lorenz-user");
        assert_eq!(user.singularities().len(), 1);
    }

    #[test]
    fn malformed_systems_are_rejected() {
        let bad_count = "dim = 3\nequations = [\"x1\", \"x2\"]";
        assert!(matches!(UserSystem::from_toml_str(bad_count), Err(FlowError::ParseError(_))));
        let bad_expr = "dim = 3\nequations = [\"x1 +\", \"x2\", \"x3\"]";
        assert!(matches!(UserSystem::from_toml_str(bad_expr), Err(FlowError::ParseError(_))));
        let unknown = "dim = 3\nequations = [\"q*x1\", \"x2\", \"x3\"]";
        assert!(matches!(UserSystem::from_toml_str(unknown), Err(FlowError::ParseError(_))));
        let small = "dim = 2\nequations = [\"x1\", \"x2\"]";
        assert!(matches!(UserSystem::from_toml_str(small), Err(FlowError::ParseError(_))));
        assert!(matches!(UserSystem::from_toml_str("dim = ["), Err(FlowError::ParseError(_))));
    }

    #[test]
    fn functions_and_constants() {
        let src = "dim = 3\nequations = [\"sin(x1)\", \"exp(x2) - 1\", \"-x3 + pi*0\"]";
        let s = UserSystem::from_toml_str(src).unwrap();
        let v = s.eval(&[0.5, 0.0, 2.0]);
        assert!((v[0] - 0.5f64.sin()).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], -2.0);
    }
}
