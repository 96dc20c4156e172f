use std::fmt;
use std::sync::Arc;

use crate::doe::DesignDomain;
use crate::error::{Error, Result};

/// Black-box map from a design to `[J, H₁, …, H_m]`.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, s: &[f64]) -> std::result::Result<Vec<f64>, String>;
}

impl<F> Evaluator for F
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn evaluate(&self, s: &[f64]) -> std::result::Result<Vec<f64>, String> {
        Ok(self(s))
    }
}

/// Box-constrained minimisation problem. Output 0 is the objective; outputs
/// `1..d_y` are constraints, feasible iff `≤ 0`.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub domain: DesignDomain,
    pub d_y: usize,
    pub evaluator: Arc<dyn Evaluator>,
    pub known_optimum: Option<f64>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("d_s", &self.domain.dim())
            .field("d_y", &self.d_y)
            .finish()
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        domain: DesignDomain,
        d_y: usize,
        evaluator: Arc<dyn Evaluator>,
    ) -> Result<Self> {
        if d_y == 0 {
            return Err(Error::invalid("a problem needs at least the objective output"));
        }
        Ok(Self {
            name: name.into(),
            domain,
            d_y,
            evaluator,
            known_optimum: None,
        })
    }

    pub fn d_s(&self) -> usize {
        self.domain.dim()
    }

    pub fn n_constraints(&self) -> usize {
        self.d_y - 1
    }

    /// Evaluates a design; `iteration` only labels errors.
    pub fn evaluate(&self, s: &[f64], iteration: usize) -> Result<Vec<f64>> {
        let y = self
            .evaluator
            .evaluate(s)
            .map_err(|message| Error::Evaluation { iteration, message })?;
        if y.len() != self.d_y {
            return Err(Error::Evaluation {
                iteration,
                message: format!("expected {} outputs, got {}", self.d_y, y.len()),
            });
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                iteration,
                message: format!("non-finite output {v}"),
            });
        }
        Ok(y)
    }
}

/// `true` iff every constraint output is `≤ 0`.
pub fn is_feasible(y: &[f64]) -> bool {
    y.iter().skip(1).all(|h| *h <= 0.0)
}
