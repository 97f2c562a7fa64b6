//! Open-loop plant families.
//!
//! Matched plants have the form `x' = f(x) + g(x) (u + phi(x)^T theta + a(x) d)`:
//! the unknown parameters and the disturbance act through the control
//! channel `g`. The two mismatched plants exist only to demonstrate that the
//! structure is necessary.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, ensure_finite, Result};
use crate::poly::Polynomial;

pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(x, u, theta, d) -> x'`
pub type MismatchedRhsFn = Arc<dyn Fn(&[f64], f64, &[f64], f64) -> Vec<f64> + Send + Sync>;

const ORIGIN_TOL: f64 = 1e-12;

/// A matched-uncertainty plant given by its four evaluators.
#[derive(Clone)]
pub struct PlantSpec {
    label: String,
    n: usize,
    p: usize,
    f: VectorFn,
    g: VectorFn,
    phi: VectorFn,
    a: ScalarFn,
}

impl fmt::Debug for PlantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantSpec")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

impl PlantSpec {
    /// Builds a plant and checks `f(0) = 0`, `phi(0) = 0` and the output
    /// dimensions of every evaluator at the origin.
    pub fn new(
        label: impl Into<String>,
        n: usize,
        p: usize,
        f: VectorFn,
        g: VectorFn,
        phi: VectorFn,
        a: ScalarFn,
    ) -> Result<Self> {
        let label = label.into();
        if n == 0 {
            return config(format!("plant {label}: state dimension must be positive"));
        }
        let origin = vec![0.0; n];
        let f0 = f(&origin);
        let g0 = g(&origin);
        let phi0 = phi(&origin);
        let a0 = a(&origin);
        if f0.len() != n || g0.len() != n {
            return config(format!("plant {label}: f and g must return {n}-vectors"));
        }
        if phi0.len() != p {
            return config(format!("plant {label}: phi must return a {p}-vector"));
        }
        ensure_finite(
            "plant evaluators at origin",
            &[&f0[..], &g0, &phi0, &[a0]].concat(),
            &origin,
        )?;
        if f0.iter().any(|v| v.abs() > ORIGIN_TOL) {
            return config(format!("plant {label}: f(0) != 0"));
        }
        if phi0.iter().any(|v| v.abs() > ORIGIN_TOL) {
            return config(format!("plant {label}: phi(0) != 0"));
        }
        Ok(Self {
            label,
            n,
            p,
            f,
            g,
            phi,
            a,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn f(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }

    pub fn g(&self, x: &[f64]) -> Vec<f64> {
        (self.g)(x)
    }

    pub fn phi(&self, x: &[f64]) -> Vec<f64> {
        (self.phi)(x)
    }

    pub fn a(&self, x: &[f64]) -> f64 {
        (self.a)(x)
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return config(format!(
                "plant {}: state has dimension {}, expected {}",
                self.label,
                x.len(),
                self.n
            ));
        }
        Ok(())
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p {
            return config(format!(
                "plant {}: parameter vector has dimension {}, expected {}",
                self.label,
                theta.len(),
                self.p
            ));
        }
        Ok(())
    }

    /// `f(x) + g(x) (u + phi(x)^T theta + a(x) d)`.
    pub fn rhs(&self, x: &[f64], u: f64, theta: &[f64], d: f64) -> Result<Vec<f64>> {
        self.check_state(x)?;
        self.check_theta(theta)?;
        let phi = self.phi(x);
        let channel = u + dot(&phi, theta) + self.a(x) * d;
        let out: Vec<f64> = self
            .f(x)
            .iter()
            .zip(self.g(x))
            .map(|(fi, gi)| fi + gi * channel)
            .collect();
        ensure_finite("matched plant rhs", &out, x)?;
        Ok(out)
    }
}

pub fn rhs_matched(plant: &PlantSpec, x: &[f64], u: f64, theta: &[f64], d: f64) -> Result<Vec<f64>> {
    plant.rhs(x, u, theta, d)
}

/// `x' = A x + B (u + phi(x)^T theta + a(x) d)`.
#[derive(Clone)]
pub struct LinearMatchedPlant {
    pub label: String,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub p: usize,
    pub phi: VectorFn,
    pub a_fn: ScalarFn,
}

impl LinearMatchedPlant {
    pub fn into_plant_spec(self) -> Result<PlantSpec> {
        let n = self.a.nrows();
        if self.a.ncols() != n || self.b.len() != n {
            return config(format!("plant {}: A must be n x n and B an n-vector", self.label));
        }
        let a = self.a;
        let b: Vec<f64> = self.b.iter().copied().collect();
        let f: VectorFn = Arc::new(move |x: &[f64]| mat_vec(&a, x));
        let g: VectorFn = Arc::new(move |_: &[f64]| b.clone());
        PlantSpec::new(self.label, n, self.p, f, g, self.phi, self.a_fn)
    }
}

/// A plant that violates the matching condition.
#[derive(Clone)]
pub struct MismatchedPlant {
    label: String,
    n: usize,
    p: usize,
    rhs: MismatchedRhsFn,
}

impl fmt::Debug for MismatchedPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MismatchedPlant")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

impl MismatchedPlant {
    pub fn new(label: impl Into<String>, n: usize, p: usize, rhs: MismatchedRhsFn) -> Self {
        Self {
            label: label.into(),
            n,
            p,
            rhs,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rhs(&self, x: &[f64], u: f64, theta: &[f64], d: f64) -> Result<Vec<f64>> {
        if x.len() != self.n || theta.len() != self.p {
            return config(format!(
                "plant {}: expected state dim {} and parameter dim {}",
                self.label, self.n, self.p
            ));
        }
        let out = (self.rhs)(x, u, theta, d);
        ensure_finite("mismatched plant rhs", &out, x)?;
        Ok(out)
    }
}

pub fn rhs_mismatched(plant: &MismatchedPlant, x: &[f64], u: f64, theta: &[f64], d: f64) -> Result<Vec<f64>> {
    plant.rhs(x, u, theta, d)
}

#[derive(Debug, Clone)]
pub enum Plant {
    Matched(PlantSpec),
    Mismatched(MismatchedPlant),
}

impl Plant {
    pub fn label(&self) -> &str {
        match self {
            Plant::Matched(p) => p.label(),
            Plant::Mismatched(p) => p.label(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Plant::Matched(p) => p.n(),
            Plant::Mismatched(p) => p.n(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Plant::Matched(p) => p.p(),
            Plant::Mismatched(p) => p.p(),
        }
    }

    pub fn rhs(&self, x: &[f64], u: f64, theta: &[f64], d: f64) -> Result<Vec<f64>> {
        match self {
            Plant::Matched(p) => p.rhs(x, u, theta, d),
            Plant::Mismatched(p) => p.rhs(x, u, theta, d),
        }
    }

    pub fn as_matched(&self) -> Option<&PlantSpec> {
        match self {
            Plant::Matched(p) => Some(p),
            Plant::Mismatched(_) => None,
        }
    }
}

/// Chain of integrators `x_i' = x_{i+1}`, `x_n' = u + a(x) d + sum_k phi_k(x) theta_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub n: usize,
    #[serde(default)]
    pub phi: Vec<Polynomial>,
    pub a: Polynomial,
}

/// How scenario files name a plant: a bare builtin identifier or an inline chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantRef {
    Name(String),
    Chain { chain: ChainSpec },
}

impl PlantRef {
    pub fn named(name: &str) -> Self {
        PlantRef::Name(name.to_string())
    }
}

pub const BUILTIN_NAMES: [&str; 5] = ["planar_3_1", "scalar_3_7", "double_3_10", "triple_3_11", "chain"];

/// Descriptive synonyms accepted for the fixed builtin identifiers, in the same order.
pub const BUILTIN_ALIASES: [&str; 4] = [
    "planar_quadratic",
    "scalar_linear",
    "unmatched_double_integrator",
    "unmatched_triple_chain",
];

pub fn make_builtin(plant: &PlantRef) -> Result<Plant> {
    match plant {
        PlantRef::Name(name) => match name.as_str() {
            "planar_3_1" | "planar_quadratic" => planar_quadratic().map(Plant::Matched),
            "scalar_3_7" | "scalar_linear" => scalar_linear().map(Plant::Matched),
            "double_3_10" | "unmatched_double_integrator" => Ok(Plant::Mismatched(unmatched_double_integrator())),
            "triple_3_11" | "unmatched_triple_chain" => Ok(Plant::Mismatched(unmatched_triple_chain())),
            "chain" => config("plant \"chain\" needs parameters: {\"chain\": {\"n\", \"phi\", \"a\"}}"),
            other => config(format!(
                "unknown plant \"{other}\" (known: {}, {})",
                BUILTIN_NAMES.join(", "),
                BUILTIN_ALIASES.join(", ")
            )),
        },
        PlantRef::Chain { chain } => chain_of_integrators(chain).map(Plant::Matched),
    }
}

pub fn double_integrator_matrices(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    (a, b)
}

/// `x1' = x2`, `x2' = theta1 x1 + theta2 x2 + theta3 x1^2 + u + d`.
pub fn planar_quadratic() -> Result<PlantSpec> {
    let (a, b) = double_integrator_matrices(2);
    LinearMatchedPlant {
        label: "planar_3_1".into(),
        a,
        b,
        p: 3,
        phi: Arc::new(|x: &[f64]| vec![x[0], x[1], x[0] * x[0]]),
        a_fn: Arc::new(|_: &[f64]| 1.0),
    }
    .into_plant_spec()
}

/// `x' = theta x + u + d`.
pub fn scalar_linear() -> Result<PlantSpec> {
    PlantSpec::new(
        "scalar_3_7",
        1,
        1,
        Arc::new(|_: &[f64]| vec![0.0]),
        Arc::new(|_: &[f64]| vec![1.0]),
        Arc::new(|x: &[f64]| vec![x[0]]),
        Arc::new(|_: &[f64]| 1.0),
    )
}

/// `x1' = x2 + d`, `x2' = u`. The disturbance enters away from the control channel.
pub fn unmatched_double_integrator() -> MismatchedPlant {
    MismatchedPlant::new(
        "double_3_10",
        2,
        0,
        Arc::new(|x: &[f64], u: f64, _: &[f64], d: f64| vec![x[1] + d, u]),
    )
}

/// `x1' = -x1 + d`, `x2' = theta x1 + x3`, `x3' = u`.
pub fn unmatched_triple_chain() -> MismatchedPlant {
    MismatchedPlant::new(
        "triple_3_11",
        3,
        1,
        Arc::new(|x: &[f64], u: f64, theta: &[f64], d: f64| vec![-x[0] + d, theta[0] * x[0] + x[2], u]),
    )
}

pub fn chain_of_integrators(spec: &ChainSpec) -> Result<PlantSpec> {
    if spec.n == 0 {
        return config("chain: n must be positive");
    }
    for phi in &spec.phi {
        phi.validate(spec.n)?;
    }
    spec.a.validate(spec.n)?;
    let (a, b) = double_integrator_matrices(spec.n);
    let phis = spec.phi.clone();
    let gain = spec.a.clone();
    LinearMatchedPlant {
        label: format!("chain_{}", spec.n),
        a,
        b,
        p: spec.phi.len(),
        phi: Arc::new(move |x: &[f64]| phis.iter().map(|p| p.eval(x)).collect()),
        a_fn: Arc::new(move |x: &[f64]| gain.eval(x)),
    }
    .into_plant_spec()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn builtin(name: &str) -> Plant {
        make_builtin(&PlantRef::named(name)).unwrap()
    }

    #[test]
    fn scalar_plant_rhs() {
        let p = scalar_linear().unwrap();
        assert_eq!(p.rhs(&[1.0], 0.0, &[2.0], 0.0).unwrap(), vec![2.0]);
        assert_eq!((p.n(), p.p()), (1, 1));
        assert_eq!(p.f(&[3.0]), vec![0.0]);
        assert_eq!(p.g(&[3.0]), vec![1.0]);
        assert_eq!(p.phi(&[3.0]), vec![3.0]);
        assert_eq!(p.a(&[3.0]), 1.0);
    }

    #[test]
    fn planar_plant_rhs() {
        let p = planar_quadratic().unwrap();
        assert_eq!(
            p.rhs(&[-1.0, 1.0], 0.0, &[10.0, 1.0, 1.0], 0.0).unwrap(),
            vec![1.0, -8.0]
        );
        assert_eq!(p.phi(&[3.0, -2.0]), vec![3.0, -2.0, 9.0]);
        assert_eq!((p.n(), p.p()), (2, 3));
    }

    #[test]
    fn origin_is_equilibrium_for_matched_builtins() {
        for name in ["planar_3_1", "scalar_3_7"] {
            let plant = builtin(name);
            let theta = vec![7.5; plant.p()];
            let rhs = plant.rhs(&vec![0.0; plant.n()], 0.0, &theta, 0.0).unwrap();
            assert!(rhs.iter().all(|&v| v == 0.0), "{name}");
        }
    }

    #[test]
    fn mismatched_examples() {
        let double = unmatched_double_integrator();
        assert_eq!(double.rhs(&[0.0, 0.0], 0.0, &[], 2.2).unwrap(), vec![2.2, 0.0]);
        let triple = unmatched_triple_chain();
        assert_eq!(
            triple.rhs(&[1.0, 0.0, 0.0], 0.0, &[2.0], 1.0).unwrap(),
            vec![0.0, 2.0, 0.0]
        );
        assert_eq!(triple.rhs(&[0.0; 3], 0.0, &[0.0], 0.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn aliases_build_the_same_plants() {
        for (name, alias) in BUILTIN_NAMES.iter().zip(BUILTIN_ALIASES) {
            let a = make_builtin(&PlantRef::named(name)).unwrap();
            let b = make_builtin(&PlantRef::named(alias)).unwrap();
            assert_eq!((a.n(), a.label()), (b.n(), b.label()), "{alias}");
        }
    }

    #[test]
    fn unknown_and_bare_chain_names_are_config_errors() {
        assert!(matches!(
            make_builtin(&PlantRef::named("pendulum")),
            Err(crate::Error::Config(_))
        ));
        assert!(make_builtin(&PlantRef::named("chain")).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = planar_quadratic().unwrap();
        assert!(matches!(
            p.rhs(&[1.0], 0.0, &[1.0, 1.0, 1.0], 0.0),
            Err(crate::Error::Config(_))
        ));
        assert!(matches!(
            p.rhs(&[1.0, 1.0], 0.0, &[1.0], 0.0),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn non_finite_output_is_a_numeric_fault() {
        let p = scalar_linear().unwrap();
        assert!(matches!(
            p.rhs(&[1.0], f64::INFINITY, &[0.0], 0.0),
            Err(crate::Error::NumericFault { .. })
        ));
    }

    #[test]
    fn construction_rejects_nonzero_drift_at_origin() {
        let r = PlantSpec::new(
            "bad",
            1,
            0,
            Arc::new(|_: &[f64]| vec![1.0]),
            Arc::new(|_: &[f64]| vec![1.0]),
            Arc::new(|_: &[f64]| vec![]),
            Arc::new(|_: &[f64]| 1.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn chain_matches_planar_when_configured_identically() {
        let chain = chain_of_integrators(&ChainSpec {
            n: 2,
            phi: vec![
                Polynomial::monomial(1.0, 0, 1),
                Polynomial::monomial(1.0, 1, 1),
                Polynomial::monomial(1.0, 0, 2),
            ],
            a: Polynomial::constant(1.0),
        })
        .unwrap();
        let planar = planar_quadratic().unwrap();
        let x = [0.3, -1.7];
        let theta = [1.0, -2.0, 0.5];
        assert_eq!(
            chain.rhs(&x, 0.4, &theta, 0.9).unwrap(),
            planar.rhs(&x, 0.4, &theta, 0.9).unwrap()
        );
    }

    #[test]
    fn chain_rejects_phi_with_constant_term() {
        let r = chain_of_integrators(&ChainSpec {
            n: 2,
            phi: vec![Polynomial::constant(1.0)],
            a: Polynomial::constant(1.0),
        });
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn rhs_is_affine_in_control(
            x1 in -10.0..10.0f64, x2 in -10.0..10.0f64,
            u in -10.0..10.0f64, delta in -10.0..10.0f64,
            t1 in -5.0..5.0f64, t2 in -5.0..5.0f64, t3 in -5.0..5.0f64,
            d in -5.0..5.0f64,
        ) {
            let p = planar_quadratic().unwrap();
            let x = [x1, x2];
            let theta = [t1, t2, t3];
            let base = p.rhs(&x, u, &theta, d).unwrap();
            let shifted = p.rhs(&x, u + delta, &theta, d).unwrap();
            let g = p.g(&x);
            for i in 0..2 {
                let diff = shifted[i] - base[i];
                prop_assert!((diff - delta * g[i]).abs() <= 1e-12 * (1.0 + base[i].abs() + shifted[i].abs()));
            }
        }

        #[test]
        fn planar_agrees_with_generic_linear_form(
            x1 in -10.0..10.0f64, x2 in -10.0..10.0f64,
            u in -10.0..10.0f64, d in -5.0..5.0f64,
            t1 in -5.0..5.0f64, t2 in -5.0..5.0f64, t3 in -5.0..5.0f64,
        ) {
            let p = planar_quadratic().unwrap();
            let got = p.rhs(&[x1, x2], u, &[t1, t2, t3], d).unwrap();
            // A x + B (u + phi^T theta + a d), written out by hand.
            let expected = [x2, u + t1 * x1 + t2 * x2 + t3 * x1 * x1 + d];
            for i in 0..2 {
                prop_assert!((got[i] - expected[i]).abs() <= 1e-14 * (1.0 + expected[i].abs()));
            }
        }
    }
}
