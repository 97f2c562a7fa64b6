//! Multivariate polynomials in the plant state.
//!
//! Used wherever a scenario file has to describe a state function without an
//! expression language: the regressor entries of the integrator chain, the
//! disturbance gain `a(x)` and the damping weight `mu(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    /// One exponent per state component; missing trailing entries are zero.
    #[serde(default)]
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn constant(value: f64) -> Self {
        Self {
            terms: vec![Monomial {
                coef: value,
                powers: Vec::new(),
            }],
        }
    }

    /// `coef * x[index]^power`.
    pub fn monomial(coef: f64, index: usize, power: u32) -> Self {
        let mut powers = vec![0; index + 1];
        powers[index] = power;
        Self {
            terms: vec![Monomial { coef, powers }],
        }
    }

    pub fn plus(mut self, other: Polynomial) -> Self {
        self.terms.extend(other.terms);
        self
    }

    /// Checks that no monomial references a component beyond `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        for term in &self.terms {
            if term.powers.len() > n && term.powers[n..].iter().any(|&p| p != 0) {
                return config(format!(
                    "polynomial term references state component {} but n={n}",
                    term.powers.len()
                ));
            }
            if !term.coef.is_finite() {
                return config("polynomial coefficient is not finite");
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.powers
                    .iter()
                    .zip(x)
                    .fold(t.coef, |acc, (&p, &xi)| acc * xi.powi(p as i32))
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_mixed_terms() {
        // 2 + x1^2 - 3 x1 x2^3
        let p = Polynomial::constant(2.0)
            .plus(Polynomial::monomial(1.0, 0, 2))
            .plus(Polynomial {
                terms: vec![Monomial {
                    coef: -3.0,
                    powers: vec![1, 3],
                }],
            });
        assert_eq!(p.eval(&[2.0, -1.0]), 2.0 + 4.0 + 6.0);
        assert_eq!(p.eval(&[0.0, 0.0]), 2.0);
    }

    #[test]
    fn rejects_out_of_range_component() {
        let p = Polynomial::monomial(1.0, 2, 1);
        assert!(p.validate(2).is_err());
        assert!(p.validate(3).is_ok());
    }

    #[test]
    fn parses_json() {
        let p: Polynomial = serde_json::from_str(r#"{"terms":[{"coef":2.0},{"coef":1.0,"powers":[2]}]}"#).unwrap();
        assert_eq!(p.eval(&[3.0, 5.0]), 11.0);
    }
}
