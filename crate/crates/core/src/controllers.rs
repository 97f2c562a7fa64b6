//! Control laws and update laws as pure evaluators.
//!
//! Every law takes the plant state and the adapted state and returns the
//! control value or the adapted-state derivative. The adapted state itself
//! lives in the integrator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::designs::{ClfDesign, LinearDesign};
use crate::error::{config, ensure_finite, ensure_finite_scalar, Error, Result};
use crate::plants::{dot, PlantSpec};

/// Class-K-infinity gain shaping function applied to `exp(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaFn {
    /// `kappa(s) = s^q`.
    Power {
        q: f64,
    },
    Identity,
}

impl KappaFn {
    fn exponent(&self) -> f64 {
        match self {
            KappaFn::Power { q } => *q,
            KappaFn::Identity => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.exponent();
        if !(q > 0.0 && q.is_finite()) {
            return config(format!("kappa: exponent must be positive, got {q}"));
        }
        Ok(())
    }

    pub fn forward(&self, s: f64) -> f64 {
        s.max(0.0).powf(self.exponent())
    }

    /// Inverse on `[0, inf)`; negative arguments map to 0.
    pub fn inverse(&self, s: f64) -> f64 {
        s.max(0.0).powf(1.0 / self.exponent())
    }

    /// `kappa(exp(z))` evaluated as `exp(q z)`.
    pub fn of_exp(&self, z: f64) -> f64 {
        (self.exponent() * z).exp()
    }
}

/// Parameters of the deadzone-adapted law: deadzone level `r`, adaptation
/// rate `gamma`, damping gain `c`, weight `lambda` and shaping function `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DadsParams {
    pub r: f64,
    pub gamma: f64,
    pub c: f64,
    pub lambda: f64,
    pub kappa: KappaFn,
}

impl DadsParams {
    pub fn new(r: f64, gamma: f64, c: f64, lambda: f64, kappa: KappaFn) -> Result<Self> {
        if !(r > 0.0) || !(gamma > 0.0) || !(c > 0.0) || !(lambda >= 0.0) {
            return config("dads: require r, gamma, c > 0 and lambda >= 0");
        }
        kappa.validate()?;
        Ok(Self {
            r,
            gamma,
            c,
            lambda,
            kappa,
        })
    }

    /// Parameters for the quadratic law, whose deadzone level is
    /// `lambda_min(P) eps^2` taken from the design.
    pub fn linear(design: &LinearDesign, gamma: f64, c: f64, lambda: f64, kappa: KappaFn) -> Result<Self> {
        Self::new(design.deadzone_level(), gamma, c, lambda, kappa)
    }

    /// `c (1 + kappa(exp(z)))`: the effective damping gain at adapted state `z`.
    pub fn gain(&self, z: f64) -> f64 {
        self.c * (1.0 + self.kappa.of_exp(z))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaModParams {
    pub c: f64,
    pub sigma: f64,
    pub gamma: DMatrix<f64>,
}

impl SigmaModParams {
    pub fn new(c: f64, sigma: f64, gamma: DMatrix<f64>) -> Result<Self> {
        if !(c > 0.0) || !(sigma >= 0.0) {
            return config("sigma_mod: require c > 0 and sigma >= 0");
        }
        if !gamma.is_square() || (&gamma - gamma.transpose()).amax() > 1e-12 * gamma.amax() {
            return config("sigma_mod: adaptation matrix must be symmetric");
        }
        if gamma.clone().cholesky().is_none() {
            return config("sigma_mod: adaptation matrix must be positive definite");
        }
        Ok(Self { c, sigma, gamma })
    }

    pub fn diagonal(c: f64, sigma: f64, gains: &[f64]) -> Result<Self> {
        Self::new(
            c,
            sigma,
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(gains)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustParams {
    pub c: f64,
    pub rho_bound: f64,
}

impl RobustParams {
    pub fn new(c: f64, rho_bound: f64) -> Result<Self> {
        if !(c > 0.25) {
            return config(format!("robust: c must exceed 1/4, got {c}"));
        }
        if !(rho_bound >= 0.0) {
            return config("robust: rho_bound must be non-negative");
        }
        Ok(Self { c, rho_bound })
    }
}

/// Gains of the leakage-adapted foil without deadzone (scalar plant only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoDeadzoneParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub m: f64,
    pub sigma: f64,
}

impl NoDeadzoneParams {
    pub fn new(k1: f64, k2: f64, k3: f64, k4: f64, m: f64, sigma: f64) -> Result<Self> {
        if [k1, k2, k3, k4, m, sigma].iter().any(|v| !(*v > 0.0)) {
            return config("no_deadzone: all gains must be positive");
        }
        Ok(Self {
            k1,
            k2,
            k3,
            k4,
            m,
            sigma,
        })
    }
}

/// `|phi(x)|^2 + lambda^2 mu(x) + a(x)^2`.
fn damping_weight(plant: &PlantSpec, mu: f64, lambda: f64, x: &[f64]) -> f64 {
    let phi2: f64 = plant.phi(x).iter().map(|v| v * v).sum();
    let a = plant.a(x);
    phi2 + lambda * lambda * mu + a * a
}

fn lie_g(grad_v: &[f64], plant: &PlantSpec, x: &[f64]) -> f64 {
    dot(grad_v, &plant.g(x))
}

/// `u = k(x) - c(1 + kappa(e^z)) (|phi|^2 + lambda^2 mu + a^2) grad V g`.
pub fn dads_u(design: &ClfDesign, plant: &PlantSpec, params: &DadsParams, x: &[f64], z: f64) -> Result<f64> {
    let w = damping_weight(plant, design.mu(x), params.lambda, x);
    let u = design.k(x) - params.gain(z) * w * lie_g(&design.grad_v(x), plant, x);
    ensure_finite_scalar("dads control", u, x)
}

/// `z' = gamma exp(-z) (V(x) - r)^+`.
pub fn dads_zdot(design: &ClfDesign, params: &DadsParams, x: &[f64], z: f64) -> Result<f64> {
    let excess = (design.v(x) - params.r).max(0.0);
    let zdot = if excess > 0.0 {
        params.gamma * (-z).exp() * excess
    } else {
        0.0
    };
    ensure_finite_scalar("dads update law", zdot, x)
}

/// `u = -k'x - 2c(1 + kappa(e^z)) (|phi|^2 + lambda^2 mu + a^2) B'Px`.
pub fn dads_linear_u(design: &LinearDesign, plant: &PlantSpec, params: &DadsParams, x: &[f64], z: f64) -> Result<f64> {
    let w = damping_weight(plant, (design.mu)(x), params.lambda, x);
    let kx: f64 = design.k.iter().zip(x).map(|(k, v)| k * v).sum();
    let u = -kx - 2.0 * params.gain(z) * w * design.b_p_x(x);
    ensure_finite_scalar("linear dads control", u, x)
}

/// `z' = gamma exp(-z) (x'Px - lambda_min(P) eps^2)^+`.
pub fn dads_linear_zdot(design: &LinearDesign, params: &DadsParams, x: &[f64], z: f64) -> Result<f64> {
    let excess = (design.v(x) - design.deadzone_level()).max(0.0);
    let zdot = if excess > 0.0 {
        params.gamma * (-z).exp() * excess
    } else {
        0.0
    };
    ensure_finite_scalar("linear dads update law", zdot, x)
}

/// `u = k(x) - c(rho^2 mu(x) + a(x)^2) grad V g`.
pub fn robust_u(design: &ClfDesign, plant: &PlantSpec, params: &RobustParams, x: &[f64]) -> Result<f64> {
    let a = plant.a(x);
    let w = params.rho_bound * params.rho_bound * design.mu(x) + a * a;
    let u = design.k(x) - params.c * w * lie_g(&design.grad_v(x), plant, x);
    ensure_finite_scalar("robust control", u, x)
}

fn check_theta_hat(plant: &PlantSpec, theta_hat: &[f64]) -> Result<()> {
    if theta_hat.len() != plant.p() {
        return config(format!(
            "sigma_mod: estimate has dimension {}, expected {}",
            theta_hat.len(),
            plant.p()
        ));
    }
    Ok(())
}

/// `u = k(x) - phi'theta_hat - c a(x)^2 grad V g`.
pub fn sigma_u(
    design: &ClfDesign,
    plant: &PlantSpec,
    params: &SigmaModParams,
    x: &[f64],
    theta_hat: &[f64],
) -> Result<f64> {
    check_theta_hat(plant, theta_hat)?;
    let a = plant.a(x);
    let u = design.k(x) - dot(&plant.phi(x), theta_hat) - params.c * a * a * lie_g(&design.grad_v(x), plant, x);
    ensure_finite_scalar("sigma-modification control", u, x)
}

/// `theta_hat' = (grad V g) Gamma phi(x) - sigma theta_hat`.
pub fn sigma_thetahat_dot(
    design: &ClfDesign,
    plant: &PlantSpec,
    params: &SigmaModParams,
    x: &[f64],
    theta_hat: &[f64],
) -> Result<Vec<f64>> {
    check_theta_hat(plant, theta_hat)?;
    if params.gamma.nrows() != plant.p() {
        return config("sigma_mod: adaptation matrix dimension differs from p");
    }
    let lg = lie_g(&design.grad_v(x), plant, x);
    let phi = plant.phi(x);
    let out: Vec<f64> = (0..plant.p())
        .map(|i| {
            let gphi: f64 = (0..plant.p()).map(|j| params.gamma[(i, j)] * phi[j]).sum();
            lg * gphi - params.sigma * theta_hat[i]
        })
        .collect();
    ensure_finite("sigma-modification update law", &out, x)?;
    Ok(out)
}

/// `u = -(K1 + K2 rho^2) x - (K3 + K4 rho^2) x^3`.
pub fn nodeadzone_u(params: &NoDeadzoneParams, x: f64, rho: f64) -> f64 {
    let r2 = rho * rho;
    -(params.k1 + params.k2 * r2) * x - (params.k3 + params.k4 * r2) * x * x * x
}

/// `rho' = M x^2 - sigma rho`.
pub fn nodeadzone_rhodot(params: &NoDeadzoneParams, x: f64, rho: f64) -> f64 {
    params.m * x * x - params.sigma * rho
}

/// `(|theta|^2 - c lambda^2) / (c lambda^2)`: once `kappa(exp(z))` reaches this
/// value the closed loop regulates the state to zero in the disturbance-free case.
pub fn regulation_threshold(params: &DadsParams, theta_norm: f64) -> Result<f64> {
    if params.lambda == 0.0 {
        return Err(Error::Config("regulation threshold is undefined for lambda = 0".into()));
    }
    let cl2 = params.c * params.lambda * params.lambda;
    Ok((theta_norm * theta_norm - cl2) / cl2)
}

/// What the adapted state of a controller represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptedKind {
    /// Log-gain `z`; `rho = exp(z)`.
    LogGain,
    /// Parameter estimate `theta_hat`.
    Estimate,
    /// Gain `rho` stored directly.
    Gain,
    None,
}

/// A configured control law together with the matched model whose `phi`,
/// `a` and `g` it uses.
#[derive(Debug, Clone)]
pub enum Controller {
    Dads {
        design: ClfDesign,
        model: PlantSpec,
        params: DadsParams,
    },
    DadsLinear {
        design: LinearDesign,
        model: PlantSpec,
        params: DadsParams,
    },
    Robust {
        design: ClfDesign,
        model: PlantSpec,
        params: RobustParams,
    },
    SigmaMod {
        design: ClfDesign,
        model: PlantSpec,
        params: SigmaModParams,
    },
    NoDeadzone {
        params: NoDeadzoneParams,
    },
}

impl Controller {
    pub fn type_name(&self) -> &'static str {
        match self {
            Controller::Dads { .. } => "dads",
            Controller::DadsLinear { .. } => "dads_linear",
            Controller::Robust { .. } => "robust",
            Controller::SigmaMod { .. } => "sigma_mod",
            Controller::NoDeadzone { .. } => "no_deadzone",
        }
    }

    pub fn adapted_dim(&self) -> usize {
        match self {
            Controller::Dads { .. } | Controller::DadsLinear { .. } | Controller::NoDeadzone { .. } => 1,
            Controller::Robust { .. } => 0,
            Controller::SigmaMod { model, .. } => model.p(),
        }
    }

    pub fn adapted_kind(&self) -> AdaptedKind {
        match self {
            Controller::Dads { .. } | Controller::DadsLinear { .. } => AdaptedKind::LogGain,
            Controller::SigmaMod { .. } => AdaptedKind::Estimate,
            Controller::NoDeadzone { .. } => AdaptedKind::Gain,
            Controller::Robust { .. } => AdaptedKind::None,
        }
    }

    /// State dimension the control law expects.
    pub fn state_dim(&self) -> usize {
        match self {
            Controller::Dads { model, .. }
            | Controller::DadsLinear { model, .. }
            | Controller::Robust { model, .. }
            | Controller::SigmaMod { model, .. } => model.n(),
            Controller::NoDeadzone { .. } => 1,
        }
    }

    /// Lyapunov function the law is built on (`x^2/2` for the scalar foil).
    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        match self {
            Controller::Dads { design, .. }
            | Controller::Robust { design, .. }
            | Controller::SigmaMod { design, .. } => design.v(x),
            Controller::DadsLinear { design, .. } => design.v(x),
            Controller::NoDeadzone { .. } => 0.5 * x[0] * x[0],
        }
    }

    /// Level below which adaptation is frozen, for the deadzone laws.
    pub fn deadzone_level(&self) -> Option<f64> {
        match self {
            Controller::Dads { params, .. } => Some(params.r),
            Controller::DadsLinear { design, .. } => Some(design.deadzone_level()),
            _ => None,
        }
    }

    fn check(&self, x: &[f64], adapted: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() || adapted.len() != self.adapted_dim() {
            return config(format!(
                "{} controller: expected state dim {} and adapted dim {}, got {} and {}",
                self.type_name(),
                self.state_dim(),
                self.adapted_dim(),
                x.len(),
                adapted.len()
            ));
        }
        Ok(())
    }

    pub fn control(&self, x: &[f64], adapted: &[f64]) -> Result<f64> {
        self.check(x, adapted)?;
        match self {
            Controller::Dads { design, model, params } => dads_u(design, model, params, x, adapted[0]),
            Controller::DadsLinear { design, model, params } => dads_linear_u(design, model, params, x, adapted[0]),
            Controller::Robust { design, model, params } => robust_u(design, model, params, x),
            Controller::SigmaMod { design, model, params } => sigma_u(design, model, params, x, adapted),
            Controller::NoDeadzone { params } => {
                ensure_finite_scalar("no-deadzone control", nodeadzone_u(params, x[0], adapted[0]), x)
            }
        }
    }

    pub fn adapted_rate(&self, x: &[f64], adapted: &[f64]) -> Result<Vec<f64>> {
        self.check(x, adapted)?;
        match self {
            Controller::Dads { design, params, .. } => Ok(vec![dads_zdot(design, params, x, adapted[0])?]),
            Controller::DadsLinear { design, params, .. } => Ok(vec![dads_linear_zdot(design, params, x, adapted[0])?]),
            Controller::Robust { .. } => Ok(Vec::new()),
            Controller::SigmaMod { design, model, params } => sigma_thetahat_dot(design, model, params, x, adapted),
            Controller::NoDeadzone { params } => Ok(vec![ensure_finite_scalar(
                "no-deadzone update law",
                nodeadzone_rhodot(params, x[0], adapted[0]),
                x,
            )?]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::make_example1_design;
    use crate::plants::planar_quadratic;
    use proptest::prelude::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn example1_params(gamma: f64, c: f64, lambda: f64) -> DadsParams {
        DadsParams::linear(&make_example1_design(), gamma, c, lambda, KappaFn::Power { q: 2.0 }).unwrap()
    }

    /// The displayed law of the planar example, typed in independently.
    fn displayed_u(x1: f64, x2: f64, z: f64, c: f64, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        -5.0 * x1
            - 4.0 * x2
            - c * (1.0 + (2.0 * z).exp())
                * ((1.0 + l2) * x1 * x1 + x2 * x2 + x1.powi(4) + 1.0 + 2.0 * l2)
                * (x2 + 2.0 * x1)
    }

    fn displayed_zdot(x1: f64, x2: f64, z: f64, gamma: f64, eps: f64) -> f64 {
        let s = x1 * x1 + (x2 + 2.0 * x1).powi(2) - (3.0 - 2.0 * SQRT2) * eps * eps;
        0.5 * gamma * (-z).exp() * s.max(0.0)
    }

    #[test]
    fn kappa_power_roundtrip() {
        let k = KappaFn::Power { q: 2.0 };
        for s in [1e-6, 1e-3, 0.5, 1.0, 17.0, 1e6] {
            assert!((k.inverse(k.forward(s)) - s).abs() <= 1e-10 * s);
        }
        assert_eq!(k.of_exp(0.0), 1.0);
        assert!((k.of_exp(-(10f64).ln()) - 0.01).abs() < 1e-15);
        assert!(KappaFn::Power { q: 0.0 }.validate().is_err());
        assert_eq!(KappaFn::Identity.forward(3.0), 3.0);
    }

    #[test]
    fn kappa_json_shape() {
        let k: KappaFn = serde_json::from_str(r#"{"kind":"power","q":2}"#).unwrap();
        assert_eq!(k, KappaFn::Power { q: 2.0 });
        let k: KappaFn = serde_json::from_str(r#"{"kind":"identity"}"#).unwrap();
        assert_eq!(k, KappaFn::Identity);
    }

    #[test]
    fn dads_vanishes_at_origin() {
        let d = make_example1_design();
        let plant = planar_quadratic().unwrap();
        let p = example1_params(20.0, 1.0, 1.0);
        for z in [-5.0, 0.0, 3.0] {
            assert_eq!(dads_u(&d.as_clf(), &plant, &p, &[0.0, 0.0], z).unwrap(), 0.0);
            assert_eq!(dads_linear_u(&d, &plant, &p, &[0.0, 0.0], z).unwrap(), 0.0);
        }
    }

    #[test]
    fn dads_general_matches_displayed_law() {
        let d = make_example1_design().as_clf();
        let plant = planar_quadratic().unwrap();
        let p = example1_params(20.0, 1.0, 1.0);
        let mut rng = 12345u64;
        for _ in 0..1000 {
            let x1 = uniform(&mut rng, -3.0, 3.0);
            let x2 = uniform(&mut rng, -3.0, 3.0);
            let z = uniform(&mut rng, -2.0, 2.0);
            let got = dads_u(&d, &plant, &p, &[x1, x2], z).unwrap();
            let want = displayed_u(x1, x2, z, 1.0, 1.0);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn dads_reduces_without_regressor_and_weight() {
        let design = make_example1_design();
        let clf = design.as_clf();
        let chain = crate::plants::chain_of_integrators(&crate::plants::ChainSpec {
            n: 2,
            phi: vec![],
            a: crate::poly::Polynomial::constant(1.0),
        })
        .unwrap();
        let p = DadsParams::new(0.1, 1.0, 2.0, 0.0, KappaFn::Power { q: 2.0 }).unwrap();
        let x = [0.7, -1.3];
        let z: f64 = 0.4;
        let lg = clf.grad_v(&x)[1];
        let want = clf.k(&x) - 2.0 * (1.0 + (2.0 * z).exp()) * lg;
        assert!((dads_u(&clf, &chain, &p, &x, z).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn zdot_deadzone_and_positive_part() {
        let clf = make_example1_design().as_clf();
        let p = DadsParams::new(1.0, 1.0, 1.0, 1.0, KappaFn::Power { q: 2.0 }).unwrap();
        // V(x) = x1^2/2 + (x2 + 2x1)^2/2; at x = (0, 2) V = 2 = r + 1.
        assert_eq!(dads_zdot(&clf, &p, &[0.0, 2.0], 0.0).unwrap(), 1.0);
        assert_eq!(dads_zdot(&clf, &p, &[0.0, 1.0], 0.0).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for z in [0.0, 1.0, 5.0, 20.0, 50.0] {
            let v = dads_zdot(&clf, &p, &[0.0, 2.0], z).unwrap();
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
    }

    #[test]
    fn linear_zdot_boundary_is_frozen() {
        let d = make_example1_design();
        let p = example1_params(20.0, 1.0, 1.0);
        // Scale an eigenvector of P so that x'Px equals the deadzone level.
        let x = [1.0, -2.0];
        let s = (d.deadzone_level() / d.v(&x)).sqrt();
        let xb = [x[0] * s, x[1] * s];
        let excess = d.v(&xb) - d.deadzone_level();
        let zdot = dads_linear_zdot(&d, &p, &xb, 0.0).unwrap();
        if excess <= 0.0 {
            assert_eq!(zdot, 0.0);
        } else {
            assert!(excess < 1e-16 && zdot < 1e-15);
        }
        assert_eq!(dads_linear_zdot(&d, &p, &[0.0, 0.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_law_matches_displayed_form() {
        let d = make_example1_design();
        let plant = planar_quadratic().unwrap();
        let p = example1_params(20.0, 1.0, 1.0);
        let mut rng = 99u64;
        for _ in 0..1000 {
            let x1 = uniform(&mut rng, -3.0, 3.0);
            let x2 = uniform(&mut rng, -3.0, 3.0);
            let z = uniform(&mut rng, -2.0, 2.0);
            let u = dads_linear_u(&d, &plant, &p, &[x1, x2], z).unwrap();
            let want = displayed_u(x1, x2, z, 1.0, 1.0);
            assert!((u - want).abs() <= 1e-9 * want.abs().max(1.0));
            let zd = dads_linear_zdot(&d, &p, &[x1, x2], z).unwrap();
            let want = displayed_zdot(x1, x2, z, 20.0, 0.2);
            assert!((zd - want).abs() <= 1e-9 * want.abs().max(1e-300));
        }
    }

    #[test]
    fn robust_law() {
        let d = make_example1_design().as_clf();
        let plant = planar_quadratic().unwrap();
        let rho = 102f64.sqrt();
        let params = RobustParams::new(1.0, rho).unwrap();
        assert_eq!(robust_u(&d, &plant, &params, &[0.0, 0.0]).unwrap(), 0.0);
        let mut rng = 7u64;
        for _ in 0..100 {
            let x1 = uniform(&mut rng, -3.0, 3.0);
            let x2 = uniform(&mut rng, -3.0, 3.0);
            // -5x1 - 4x2 - c (102 (2 + x1^2) + 1) (x2 + 2x1)
            let want = -5.0 * x1 - 4.0 * x2 - (102.0 * (2.0 + x1 * x1) + 1.0) * (x2 + 2.0 * x1);
            let got = robust_u(&d, &plant, &params, &[x1, x2]).unwrap();
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
        let nominal = RobustParams::new(1.0, 0.0).unwrap();
        let no_dist = crate::plants::chain_of_integrators(&crate::plants::ChainSpec {
            n: 2,
            phi: vec![],
            a: crate::poly::Polynomial::default(),
        })
        .unwrap();
        assert_eq!(robust_u(&d, &no_dist, &nominal, &[0.3, 0.4]).unwrap(), d.k(&[0.3, 0.4]));
        assert!(RobustParams::new(0.25, 1.0).is_err());
    }

    #[test]
    fn sigma_mod_matches_displayed_update() {
        let d = make_example1_design().as_clf();
        let plant = planar_quadratic().unwrap();
        let params = SigmaModParams::diagonal(1.0, 1.0, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(sigma_u(&d, &plant, &params, &[0.0, 0.0], &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(
            sigma_thetahat_dot(&d, &plant, &params, &[0.0, 0.0], &[0.0; 3]).unwrap(),
            vec![0.0; 3]
        );
        let frozen = SigmaModParams::diagonal(1.0, 0.0, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            sigma_thetahat_dot(&d, &plant, &frozen, &[0.0, 0.0], &[4.0, -2.0, 1.0]).unwrap(),
            vec![0.0; 3]
        );
        let mut rng = 3u64;
        for _ in 0..200 {
            let x1 = uniform(&mut rng, -3.0, 3.0);
            let x2 = uniform(&mut rng, -3.0, 3.0);
            let th = [
                uniform(&mut rng, -5.0, 5.0),
                uniform(&mut rng, -5.0, 5.0),
                uniform(&mut rng, -5.0, 5.0),
            ];
            let s = x2 + 2.0 * x1;
            let rate = sigma_thetahat_dot(&d, &plant, &params, &[x1, x2], &th).unwrap();
            let want = [x1 * s - th[0], x2 * s - th[1], x1 * x1 * s - th[2]];
            for i in 0..3 {
                assert!((rate[i] - want[i]).abs() <= 1e-12 * (1.0 + want[i].abs()));
            }
            let u = sigma_u(&d, &plant, &params, &[x1, x2], &th).unwrap();
            let want_u = -5.0 * x1 - 4.0 * x2 - s - th[0] * x1 - th[1] * x2 - th[2] * x1 * x1;
            assert!((u - want_u).abs() <= 1e-12 * (1.0 + want_u.abs()));
        }
        assert!(sigma_u(&d, &plant, &params, &[0.0, 0.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn no_deadzone_foil() {
        let p = NoDeadzoneParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(nodeadzone_u(&p, 0.0, 1.0), 0.0);
        assert_eq!(nodeadzone_rhodot(&p, 0.0, 1.0), -1.0);
        assert_eq!(nodeadzone_u(&p, 2.0, 0.0), -2.0 - 8.0);
        assert!(NoDeadzoneParams::new(1.0, 0.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn regulation_threshold_cases() {
        let p = DadsParams::new(0.1, 20.0, 1.0, 1.0, KappaFn::Power { q: 2.0 }).unwrap();
        assert_eq!(regulation_threshold(&p, 1.0).unwrap(), 0.0);
        assert!((regulation_threshold(&p, 102f64.sqrt()).unwrap() - 101.0).abs() < 1e-12);
        assert!(regulation_threshold(&p, 0.5).unwrap() < 0.0);
        let p4 = DadsParams::new(0.1, 20.0, 4.0, 0.5, KappaFn::Identity).unwrap();
        // |theta| = lambda sqrt(c) = 1
        assert!(regulation_threshold(&p4, 1.0).unwrap().abs() < 1e-15);
        let p0 = DadsParams::new(0.1, 20.0, 1.0, 0.0, KappaFn::Identity).unwrap();
        assert!(regulation_threshold(&p0, 1.0).is_err());
    }

    #[test]
    fn controller_enum_dispatch() {
        let design = make_example1_design();
        let plant = planar_quadratic().unwrap();
        let params = example1_params(20.0, 1.0, 1.0);
        let ctrl = Controller::DadsLinear {
            design: design.clone(),
            model: plant.clone(),
            params,
        };
        assert_eq!(ctrl.adapted_dim(), 1);
        assert_eq!(ctrl.deadzone_level(), Some(design.deadzone_level()));
        assert!(ctrl.control(&[1.0], &[0.0]).is_err());
        let x = [0.4, -0.2];
        assert_eq!(
            ctrl.control(&x, &[0.1]).unwrap(),
            dads_linear_u(&design, &plant, &params, &x, 0.1).unwrap()
        );
        let foil = Controller::NoDeadzone {
            params: NoDeadzoneParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap(),
        };
        assert_eq!(foil.lyapunov(&[2.0]), 2.0);
    }

    #[test]
    fn overflowing_gain_is_a_numeric_fault() {
        let d = make_example1_design();
        let plant = planar_quadratic().unwrap();
        let p = example1_params(20.0, 1.0, 1.0);
        assert!(matches!(
            dads_linear_u(&d, &plant, &p, &[1.0, 1.0], 800.0),
            Err(Error::NumericFault { .. })
        ));
    }

    #[test]
    fn controller_is_odd_without_even_regressor() {
        let d = make_example1_design().as_clf();
        let odd_plant = crate::plants::chain_of_integrators(&crate::plants::ChainSpec {
            n: 2,
            phi: vec![
                crate::poly::Polynomial::monomial(1.0, 0, 1),
                crate::poly::Polynomial::monomial(1.0, 1, 1),
            ],
            a: crate::poly::Polynomial::constant(1.0),
        })
        .unwrap();
        let params = RobustParams::new(1.0, 3.0).unwrap();
        let x = [0.8, -1.1];
        let u = robust_u(&d, &odd_plant, &params, &x).unwrap();
        let um = robust_u(&d, &odd_plant, &params, &[-x[0], -x[1]]).unwrap();
        assert_eq!(u, -um);
    }

    fn uniform(state: &mut u64, lo: f64, hi: f64) -> f64 {
        // splitmix64
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        lo + (hi - lo) * ((z >> 11) as f64 / (1u64 << 53) as f64)
    }

    proptest! {
        #[test]
        fn zdot_is_non_negative(x1 in -10.0..10.0f64, x2 in -10.0..10.0f64, z in -20.0..20.0f64) {
            let d = make_example1_design();
            let p = example1_params(20.0, 1.0, 1.0);
            prop_assert!(dads_linear_zdot(&d, &p, &[x1, x2], z).unwrap() >= 0.0);
            prop_assert!(dads_zdot(&d.as_clf(), &p, &[x1, x2], z).unwrap() >= 0.0);
        }

        #[test]
        fn evaluators_are_pure(x1 in -5.0..5.0f64, x2 in -5.0..5.0f64, z in -3.0..3.0f64) {
            let d = make_example1_design();
            let plant = planar_quadratic().unwrap();
            let p = example1_params(20.0, 1.0, 1.0);
            let a = dads_linear_u(&d, &plant, &p, &[x1, x2], z).unwrap();
            let b = dads_linear_u(&d, &plant, &p, &[x1, x2], z).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
