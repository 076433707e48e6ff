//! Declarative strategy descriptions, as read from experiment configs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    criteria, CovarianceResetting, DataDependentUpdating, DirectionalForgettingImd,
    DirectionalForgettingSlow, ExponentialForgetting, ExponentialResetting, Forgetting,
    MultipleForgetting, PlainRls, StrategyTag, VariableDirectionForgetting,
    VariableRateForgetting,
};
use crate::error::{Error, Result};
use crate::linalg::{SpdMatrix, SymMatrix};

/// A per-step value: constant, or a list repeated cyclically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    Cyclic(Vec<f64>),
}

impl Schedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Cyclic(vs) => vs[k % vs.len()],
        }
    }

    pub fn validate(&self, name: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
        let values: &[f64] = match self {
            Self::Constant(v) => std::slice::from_ref(v),
            Self::Cyclic(vs) if vs.is_empty() => {
                return Err(Error::InvalidParameter(format!("{name}: empty schedule")))
            }
            Self::Cyclic(vs) => vs,
        };
        match values.iter().find(|v| !ok(**v)) {
            Some(v) => Err(Error::InvalidParameter(format!("{name} = {v} is out of range"))),
            None => Ok(()),
        }
    }
}

/// A square matrix given as a scalar multiple of identity, a diagonal, or
/// in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_sym(&self, n: usize) -> Result<SymMatrix> {
        match self {
            Self::Scalar(c) => Ok(SymMatrix::identity(n).scale(*c)),
            Self::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "diagonal has {} entries, expected {n}",
                        d.len()
                    )));
                }
                SymMatrix::from_diagonal(d)
            }
            Self::Full(rows) => {
                if rows.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "matrix has {} rows, expected {n}",
                        rows.len()
                    )));
                }
                SymMatrix::from_rows(rows)
            }
        }
    }

    pub fn to_spd(&self, n: usize) -> Result<SpdMatrix> {
        SpdMatrix::new(self.to_sym(n)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ResetCriterionSpec {
    Never,
    Period { period: usize },
    TraceBelow { threshold: f64 },
}

fn default_eps() -> f64 {
    1e-8
}

/// One of the ten built-in forgetting laws with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategySpec {
    PlainRls,
    ExponentialForgetting {
        lambda: f64,
    },
    VariableRateForgetting {
        lambda: Schedule,
    },
    DataDependentUpdating {
        mu: Schedule,
    },
    ExponentialResetting {
        lambda: f64,
        r_inf: MatrixSpec,
    },
    CovarianceResetting {
        criterion: ResetCriterionSpec,
        p_inf: MatrixSpec,
    },
    DirectionalForgettingImd {
        lambda: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    VariableDirectionForgetting {
        lambda_matrix: MatrixSpec,
    },
    DirectionalForgettingSlow {
        mu: f64,
    },
    MultipleForgetting {
        lambda1: Schedule,
        lambda2: Schedule,
    },
}

fn in_unit(v: f64) -> bool {
    v > 0.0 && v <= 1.0
}

fn check(name: &str, v: f64, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} is out of range")))
    }
}

impl StrategySpec {
    pub fn tag(&self) -> StrategyTag {
        match self {
            Self::PlainRls => StrategyTag::PlainRls,
            Self::ExponentialForgetting { .. } => StrategyTag::ExponentialForgetting,
            Self::VariableRateForgetting { .. } => StrategyTag::VariableRateForgetting,
            Self::DataDependentUpdating { .. } => StrategyTag::DataDependentUpdating,
            Self::ExponentialResetting { .. } => StrategyTag::ExponentialResetting,
            Self::CovarianceResetting { .. } => StrategyTag::CovarianceResetting,
            Self::DirectionalForgettingImd { .. } => StrategyTag::DirectionalForgettingImd,
            Self::VariableDirectionForgetting { .. } => StrategyTag::VariableDirectionForgetting,
            Self::DirectionalForgettingSlow { .. } => StrategyTag::DirectionalForgettingSlow,
            Self::MultipleForgetting { .. } => StrategyTag::MultipleForgetting,
        }
    }

    /// Checks every parameter against its domain without building anything.
    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        self.build(n, p).map(|_| ())
    }

    pub fn build(&self, n: usize, p: usize) -> Result<Box<dyn Forgetting>> {
        let scalar_only = |tag: &str| {
            if p == 1 {
                Ok(())
            } else {
                Err(Error::UnsupportedDimension(format!(
                    "{tag} is defined for p = 1 only, got p = {p}"
                )))
            }
        };
        Ok(match self {
            Self::PlainRls => Box::new(PlainRls),
            Self::ExponentialForgetting { lambda } => Box::new(ExponentialForgetting::new(*lambda)?),
            Self::VariableRateForgetting { lambda } => {
                Box::new(VariableRateForgetting::from_schedule(lambda.clone())?)
            }
            Self::DataDependentUpdating { mu } => {
                Box::new(DataDependentUpdating::from_schedule(mu.clone())?)
            }
            Self::ExponentialResetting { lambda, r_inf } => {
                Box::new(ExponentialResetting::new(*lambda, r_inf.to_sym(n)?)?)
            }
            Self::CovarianceResetting { criterion, p_inf } => {
                let predicate = match criterion {
                    ResetCriterionSpec::Never => criteria::never(),
                    ResetCriterionSpec::Period { period } => {
                        if *period == 0 {
                            return Err(Error::InvalidParameter("period must be positive".into()));
                        }
                        criteria::every(*period)
                    }
                    ResetCriterionSpec::TraceBelow { threshold } => {
                        check("threshold", *threshold, *threshold > 0.0 && threshold.is_finite())?;
                        criteria::trace_below(*threshold)
                    }
                };
                Box::new(CovarianceResetting::with_target(predicate, p_inf.to_spd(n)?))
            }
            Self::DirectionalForgettingImd { lambda, eps } => {
                scalar_only(StrategyTag::DirectionalForgettingImd.name())?;
                Box::new(DirectionalForgettingImd::new(*lambda, *eps)?)
            }
            Self::VariableDirectionForgetting { lambda_matrix } => {
                let l = lambda_matrix.to_spd(n)?;
                Box::new(VariableDirectionForgetting::new(Arc::new(move |_| Ok(l.clone()))))
            }
            Self::DirectionalForgettingSlow { mu } => {
                scalar_only(StrategyTag::DirectionalForgettingSlow.name())?;
                check("mu", *mu, in_unit(*mu))?;
                Box::new(DirectionalForgettingSlow::new(*mu)?)
            }
            Self::MultipleForgetting { lambda1, lambda2 } => {
                if n != 2 || p != 1 {
                    return Err(Error::UnsupportedDimension(format!(
                        "multiple-forgetting is defined for n = 2, p = 1, got n = {n}, p = {p}"
                    )));
                }
                Box::new(MultipleForgetting::from_schedules(lambda1.clone(), lambda2.clone())?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kebab_case_kinds() {
        let s: StrategySpec =
            serde_json::from_str(r#"{"kind":"exponential-forgetting","lambda":0.9}"#).unwrap();
        assert_eq!(s, StrategySpec::ExponentialForgetting { lambda: 0.9 });
        let s: StrategySpec =
            serde_json::from_str(r#"{"kind":"variable-rate-forgetting","lambda":[0.9,1.0]}"#).unwrap();
        assert_eq!(
            s,
            StrategySpec::VariableRateForgetting { lambda: Schedule::Cyclic(vec![0.9, 1.0]) }
        );
        let s: StrategySpec = serde_json::from_str(
            r#"{"kind":"covariance-resetting","criterion":{"type":"period","period":10},"p_inf":[[2.0,0.0],[0.0,2.0]]}"#,
        )
        .unwrap();
        assert!(matches!(s, StrategySpec::CovarianceResetting { .. }));
        assert!(serde_json::from_str::<StrategySpec>(r#"{"kind":"nope"}"#).is_err());
    }

    #[test]
    fn domains_are_enforced() {
        let bad = [
            StrategySpec::ExponentialForgetting { lambda: 0.0 },
            StrategySpec::ExponentialForgetting { lambda: 1.5 },
            StrategySpec::VariableRateForgetting { lambda: Schedule::Cyclic(vec![0.5, -0.1]) },
            StrategySpec::DataDependentUpdating { mu: Schedule::Constant(1.0) },
            StrategySpec::DirectionalForgettingSlow { mu: 0.0 },
            StrategySpec::ExponentialResetting { lambda: 0.9, r_inf: MatrixSpec::Scalar(-1.0) },
        ];
        for s in bad {
            assert!(matches!(s.validate(2, 1), Err(Error::InvalidParameter(_))), "{s:?}");
        }
    }

    #[test]
    fn dimension_restrictions() {
        let imd = StrategySpec::DirectionalForgettingImd { lambda: 0.9, eps: 1e-6 };
        assert!(matches!(imd.validate(2, 2), Err(Error::UnsupportedDimension(_))));
        imd.validate(3, 1).unwrap();
        let mf = StrategySpec::MultipleForgetting {
            lambda1: Schedule::Constant(0.9),
            lambda2: Schedule::Constant(0.8),
        };
        assert!(matches!(mf.validate(3, 1), Err(Error::UnsupportedDimension(_))));
        mf.validate(2, 1).unwrap();
    }

    #[test]
    fn matrix_spec_shapes() {
        assert_eq!(MatrixSpec::Scalar(2.0).to_sym(2).unwrap(), SymMatrix::identity(2).scale(2.0));
        assert!(MatrixSpec::Diagonal(vec![1.0]).to_sym(2).is_err());
        assert!(MatrixSpec::Full(vec![vec![1.0, 2.0], vec![0.0, 1.0]]).to_sym(2).is_err());
    }
}
