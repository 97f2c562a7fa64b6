//! Scenario and design files.
//!
//! Files are parsed strictly (unknown keys are rejected) and hashed in a
//! canonical form so that key order does not change the hash.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::controllers::{Controller, DadsParams, KappaFn, NoDeadzoneParams, RobustParams, SigmaModParams};
use crate::designs::{make_example1_design, LinearDesign};
use crate::error::{config, Error, Result};
use crate::plants::{double_integrator_matrices, make_builtin, Plant, PlantRef, PlantSpec};
use crate::poly::Polynomial;
use crate::sim::{DisturbanceSignal, Scenario, SolverConfig, DEFAULT_DT, DEFAULT_STRIDE};

fn default_mu() -> Polynomial {
    Polynomial::constant(1.0)
}

/// Quadratic design description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignConfig {
    /// A named design shipped with the library (`example1`).
    Builtin { name: String },
    /// `A`, `B` default to the integrator chain of dimension `len(k)`.
    /// Exactly one of `p` and `lyapunov_q` must be given.
    Linear {
        #[serde(default)]
        a: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        b: Option<Vec<f64>>,
        k: Vec<f64>,
        #[serde(default)]
        p: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        lyapunov_q: Option<Vec<Vec<f64>>>,
        eta: f64,
        eps: f64,
        #[serde(default = "default_mu")]
        mu: Polynomial,
    },
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return config(format!("{what}: matrix rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

impl DesignConfig {
    pub fn build(&self) -> Result<LinearDesign> {
        match self {
            DesignConfig::Builtin { name } => match name.as_str() {
                "example1" => Ok(make_example1_design()),
                other => config(format!("unknown builtin design \"{other}\" (known: example1)")),
            },
            DesignConfig::Linear {
                a,
                b,
                k,
                p,
                lyapunov_q,
                eta,
                eps,
                mu,
            } => {
                let n = k.len();
                if n == 0 {
                    return config("design: k must be non-empty");
                }
                mu.validate(n)?;
                let (a0, b0) = double_integrator_matrices(n);
                let a = match a {
                    Some(rows) => matrix(rows, "design.a")?,
                    None => a0,
                };
                let b = match b {
                    Some(v) => DVector::from_column_slice(v),
                    None => b0,
                };
                if a.nrows() != n || a.ncols() != n || b.len() != n {
                    return config(format!("design: A must be {n}x{n} and B of length {n}"));
                }
                let k = DVector::from_column_slice(k);
                let mu = mu.clone();
                let mu_fn: crate::plants::ScalarFn = Arc::new(move |x: &[f64]| mu.eval(x));
                match (p, lyapunov_q) {
                    (Some(p), None) => LinearDesign::new(a, b, k, matrix(p, "design.p")?, *eta, mu_fn, *eps),
                    (None, Some(q)) => {
                        LinearDesign::from_lyapunov(a, b, k, &matrix(q, "design.lyapunov_q")?, *eta, mu_fn, *eps)
                    }
                    _ => config("design: give exactly one of \"p\" and \"lyapunov_q\""),
                }
            }
        }
    }
}

/// Control law selection. `model` names the matched plant whose `phi`, `a`
/// and `g` the law uses; it defaults to the simulated plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    /// General form on the design's Lyapunov view, with an explicit deadzone level.
    Dads {
        r: f64,
        gamma: f64,
        c: f64,
        lambda: f64,
        kappa: KappaFn,
        #[serde(default)]
        model: Option<PlantRef>,
    },
    /// Quadratic form; the deadzone level is `lambda_min(P) eps^2`.
    DadsLinear {
        gamma: f64,
        c: f64,
        lambda: f64,
        kappa: KappaFn,
        #[serde(default)]
        model: Option<PlantRef>,
    },
    Robust {
        c: f64,
        rho_bound: f64,
        #[serde(default)]
        model: Option<PlantRef>,
    },
    SigmaMod {
        c: f64,
        sigma: f64,
        /// Diagonal of the adaptation matrix.
        gamma: Vec<f64>,
        #[serde(default)]
        model: Option<PlantRef>,
    },
    NoDeadzone {
        k1: f64,
        k2: f64,
        k3: f64,
        k4: f64,
        m: f64,
        sigma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    DEFAULT_STRIDE
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { stride: DEFAULT_STRIDE }
    }
}

fn default_disturbance() -> DisturbanceSignal {
    DisturbanceSignal::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub label: Option<String>,
    pub plant: PlantRef,
    #[serde(default)]
    pub design: Option<DesignConfig>,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub theta: Vec<f64>,
    #[serde(default = "default_disturbance")]
    pub disturbance: DisturbanceSignal,
    pub x0: Vec<f64>,
    pub adapted0: Vec<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Marks scenarios whose purpose is to exhibit divergence; blowup is
    /// then an expected outcome rather than a failure.
    #[serde(default)]
    pub counterexample: bool,
}

/// A parsed scenario together with its canonical JSON form.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub canonical: Value,
    pub hash: String,
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::from(k.as_str()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// SHA-256 of [`canonical_json`], hex encoded.
pub fn canonical_hash(value: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(value).as_bytes()))
}

fn matched_model(model: &Option<PlantRef>, plant: &Plant, plant_ref: &PlantRef) -> Result<PlantSpec> {
    let source = model.as_ref().unwrap_or(plant_ref);
    let built = if model.is_some() {
        make_builtin(source)?
    } else {
        plant.clone()
    };
    match built {
        Plant::Matched(p) => Ok(p),
        Plant::Mismatched(_) => config(format!(
            "controller model {source:?} is not a matched plant; give a matched \"model\""
        )),
    }
}

impl ScenarioFile {
    pub fn build_controller(&self, plant: &Plant) -> Result<Controller> {
        let design = || -> Result<LinearDesign> {
            match &self.design {
                Some(d) => d.build(),
                None => config(format!("controller \"{}\" needs a design", self.controller_type())),
            }
        };
        Ok(match &self.controller {
            ControllerConfig::Dads {
                r,
                gamma,
                c,
                lambda,
                kappa,
                model,
            } => Controller::Dads {
                design: design()?.as_clf(),
                model: matched_model(model, plant, &self.plant)?,
                params: DadsParams::new(*r, *gamma, *c, *lambda, *kappa)?,
            },
            ControllerConfig::DadsLinear {
                gamma,
                c,
                lambda,
                kappa,
                model,
            } => {
                let design = design()?;
                let params = DadsParams::linear(&design, *gamma, *c, *lambda, *kappa)?;
                Controller::DadsLinear {
                    design,
                    model: matched_model(model, plant, &self.plant)?,
                    params,
                }
            }
            ControllerConfig::Robust { c, rho_bound, model } => Controller::Robust {
                design: design()?.as_clf(),
                model: matched_model(model, plant, &self.plant)?,
                params: RobustParams::new(*c, *rho_bound)?,
            },
            ControllerConfig::SigmaMod { c, sigma, gamma, model } => Controller::SigmaMod {
                design: design()?.as_clf(),
                model: matched_model(model, plant, &self.plant)?,
                params: SigmaModParams::diagonal(*c, *sigma, gamma)?,
            },
            ControllerConfig::NoDeadzone {
                k1,
                k2,
                k3,
                k4,
                m,
                sigma,
            } => {
                if self.design.is_some() {
                    return config("controller \"no_deadzone\" takes no design");
                }
                Controller::NoDeadzone {
                    params: NoDeadzoneParams::new(*k1, *k2, *k3, *k4, *m, *sigma)?,
                }
            }
        })
    }

    pub fn controller_type(&self) -> &'static str {
        match self.controller {
            ControllerConfig::Dads { .. } => "dads",
            ControllerConfig::DadsLinear { .. } => "dads_linear",
            ControllerConfig::Robust { .. } => "robust",
            ControllerConfig::SigmaMod { .. } => "sigma_mod",
            ControllerConfig::NoDeadzone { .. } => "no_deadzone",
        }
    }
}

/// Parses a scenario from a JSON value. `default_dt` fills in the step of
/// the default solver when the file does not choose one; the effective
/// solver becomes part of the canonical form and therefore of the hash.
pub fn scenario_from_value(mut value: Value, default_dt: Option<f64>) -> Result<LoadedScenario> {
    let mut file: ScenarioFile =
        serde_json::from_value(value.clone()).map_err(|e| Error::Config(format!("scenario schema: {e}")))?;
    if file.solver.is_none() {
        let solver = SolverConfig::rk4(default_dt.unwrap_or(DEFAULT_DT));
        file.solver = Some(solver);
        if let Value::Object(map) = &mut value {
            map.insert("solver".into(), serde_json::to_value(solver)?);
        }
    }
    let plant = make_builtin(&file.plant)?;
    let controller = file.build_controller(&plant)?;
    let hash = canonical_hash(&value);
    let scenario = Scenario {
        label: file.label.clone().unwrap_or_else(|| "scenario".into()),
        plant,
        controller,
        theta: file.theta.clone(),
        disturbance: file.disturbance.clone(),
        x0: file.x0.clone(),
        adapted0: file.adapted0.clone(),
        t_end: file.t_end,
        solver: file.solver.expect("filled above"),
        output_stride: file.outputs.stride,
        hash: Some(hash.clone()),
    };
    scenario.validate()?;
    Ok(LoadedScenario {
        file,
        scenario,
        canonical: value,
        hash,
    })
}

pub fn scenario_from_str(text: &str, default_dt: Option<f64>) -> Result<LoadedScenario> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario is not valid JSON: {e}")))?;
    scenario_from_value(value, default_dt)
}

pub fn load_scenario(path: &Path, default_dt: Option<f64>) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    scenario_from_str(&text, default_dt)
}

/// A plant paired with a design, as consumed by the certification command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub plant: PlantRef,
    pub design: DesignConfig,
}

impl DesignFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read design {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("design schema: {e}")))
    }

    pub fn build(&self) -> Result<(PlantSpec, LinearDesign)> {
        let plant = match make_builtin(&self.plant)? {
            Plant::Matched(p) => p,
            Plant::Mismatched(_) => return config("certification needs a matched plant"),
        };
        let design = self.design.build()?;
        if design.n() != plant.n() {
            return config(format!(
                "design dimension {} does not match plant dimension {}",
                design.n(),
                plant.n()
            ));
        }
        Ok((plant, design))
    }
}

/// Sets the value at a dotted path such as `controller.gamma` or `x0.1`.
pub fn set_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_string(), new);
                    return Ok(());
                }
                map.get_mut(*part)
                    .ok_or_else(|| Error::Config(format!("path {path}: no key \"{part}\"")))?
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("path {path}: \"{part}\" is not an index")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("path {path}: index {idx} out of range")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => return config(format!("path {path}: \"{part}\" is not inside an object or array")),
        };
    }
    config(format!("path {path} is empty"))
}
