//! Scenario schema, validation and resolution to solver inputs.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use bdsvie_core::bdsvie::{
    BetaChoice, CompletionMode, SolverConfig, TerminalField, Variant, VolterraCoefficients,
    VolterraFn,
};
use bdsvie_core::probability::{AlgebraLevel, NoiseModel, RandomField, TimeGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub k: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { k: 1 }
    }
}

/// Terminal-data registry: every entry is a functional of the W path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PsiSpec {
    Zero,
    /// `psi(t) = scale * W_T` in every component.
    WienerTerminal {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Deterministic polynomial of the node time.
    PolyT { coeffs: Vec<f64> },
    /// `psi(t) = amp * sin(W_T + phase * t)`.
    SinWiener {
        #[serde(default = "one")]
        amp: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Default for PsiSpec {
    fn default() -> Self {
        Self::Zero
    }
}

/// Coefficient registry for the two drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DriverSpec {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `m_y y + m_z z + m_zeta zeta + a0 + a_t t + a_s s`, all per-component.
    Affine {
        #[serde(default)]
        y: Vec<Vec<f64>>,
        #[serde(default)]
        z: Vec<Vec<f64>>,
        #[serde(default)]
        zeta: Vec<Vec<f64>>,
        #[serde(default)]
        a0: Vec<f64>,
        #[serde(default)]
        a_t: Vec<f64>,
        #[serde(default)]
        a_s: Vec<f64>,
    },
    /// `ay sin(y + s) + az cos(z + t) + azeta sin(zeta)`, componentwise.
    Trig {
        #[serde(default)]
        ay: f64,
        #[serde(default)]
        az: f64,
        #[serde(default)]
        azeta: f64,
    },
}

impl Default for DriverSpec {
    fn default() -> Self {
        Self::Zero
    }
}

fn one() -> f64 {
    1.0
}

/// Declared Lipschitz constants; computed from the registry parameters
/// when absent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Constants {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Auto(String),
    Explicit(f64),
}

impl Default for BetaSpec {
    fn default() -> Self {
        Self::Auto("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub beta: BetaSpec,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max")]
    pub picard_max: usize,
    #[serde(default = "default_completion")]
    pub completion_mode: String,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
}

fn default_variant() -> String {
    "simple".into()
}
fn default_picard_tol() -> f64 {
    1e-10
}
fn default_picard_max() -> usize {
    200
}
fn default_completion() -> String {
    "sm".into()
}
fn default_inner_tol() -> f64 {
    1e-12
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            beta: BetaSpec::default(),
            picard_tol: default_picard_tol(),
            picard_max: default_picard_max(),
            completion_mode: default_completion(),
            inner_tol: default_inner_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: Grid,
    #[serde(default)]
    pub dims: Dims,
    #[serde(default)]
    pub psi: PsiSpec,
    #[serde(default)]
    pub f: DriverSpec,
    #[serde(default)]
    pub g: DriverSpec,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

/// Everything a command needs, resolved from a validated scenario.
pub struct Resolved {
    pub noise: NoiseModel,
    pub psi: TerminalField,
    pub coeffs: VolterraCoefficients,
    pub config: SolverConfig,
    pub checks: Vec<String>,
}

pub fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario file {}", path.display()))?;
    let scenario: Scenario = serde_json::from_str(&text)
        .with_context(|| format!("scenario file {} is not valid", path.display()))?;
    Ok(scenario)
}

fn frob2(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum()
}

fn check_matrix(name: &str, m: &[Vec<f64>], k: usize) -> anyhow::Result<()> {
    if m.is_empty() {
        return Ok(());
    }
    if m.len() != k || m.iter().any(|row| row.len() != k) {
        bail!("matrix {name} must be {k}x{k}");
    }
    Ok(())
}

fn check_vector(name: &str, v: &[f64], k: usize) -> anyhow::Result<()> {
    if !v.is_empty() && v.len() != k {
        bail!("vector {name} must have {k} entries");
    }
    Ok(())
}

impl DriverSpec {
    fn validate(&self, which: &str, k: usize, simple: bool) -> anyhow::Result<()> {
        match self {
            DriverSpec::Zero => Ok(()),
            DriverSpec::Constant { value } => {
                if value.len() != k {
                    bail!("constant driver {which} needs {k} components");
                }
                Ok(())
            }
            DriverSpec::Affine { y, z, zeta, a0, a_t, a_s } => {
                check_matrix(&format!("{which}.y"), y, k)?;
                check_matrix(&format!("{which}.z"), z, k)?;
                check_matrix(&format!("{which}.zeta"), zeta, k)?;
                check_vector(&format!("{which}.a0"), a0, k)?;
                check_vector(&format!("{which}.a_t"), a_t, k)?;
                check_vector(&format!("{which}.a_s"), a_s, k)?;
                if simple && frob2(zeta) > 0.0 {
                    bail!("simple-variant driver {which} must not read the transposed entry zeta");
                }
                Ok(())
            }
            DriverSpec::Trig { azeta, .. } => {
                if simple && *azeta != 0.0 {
                    bail!("simple-variant driver {which} must not read the transposed entry zeta");
                }
                Ok(())
            }
        }
    }

    /// Sound squared-Lipschitz bound of the registry entry.
    fn lipschitz_bound(&self) -> f64 {
        match self {
            DriverSpec::Zero | DriverSpec::Constant { .. } => 0.0,
            DriverSpec::Affine { y, z, zeta, .. } => frob2(y) + frob2(z) + frob2(zeta),
            DriverSpec::Trig { ay, az, azeta } => ay * ay + az * az + azeta * azeta,
        }
    }

    /// True when the driver ignores the unknowns entirely.
    pub fn is_data_only(&self) -> bool {
        match self {
            DriverSpec::Zero | DriverSpec::Constant { .. } => true,
            DriverSpec::Affine { y, z, zeta, .. } => {
                frob2(y) == 0.0 && frob2(z) == 0.0 && frob2(zeta) == 0.0
            }
            DriverSpec::Trig { .. } => false,
        }
    }

    fn closure(&self, k: usize) -> VolterraFn {
        match self.clone() {
            DriverSpec::Zero => Arc::new(|_t, _s, _y, _z, _w, out: &mut [f64]| out.fill(0.0)),
            DriverSpec::Constant { value } => {
                Arc::new(move |_t, _s, _y, _z, _w, out: &mut [f64]| out.copy_from_slice(&value))
            }
            DriverSpec::Affine { y, z, zeta, a0, a_t, a_s } => {
                let matvec = move |m: &[Vec<f64>], x: &[f64], out: &mut [f64]| {
                    if m.is_empty() {
                        return;
                    }
                    for (row, o) in m.iter().zip(out.iter_mut()) {
                        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    }
                };
                Arc::new(move |t, s, yv, zv, wv, out: &mut [f64]| {
                    out.fill(0.0);
                    matvec(&y, yv, out);
                    matvec(&z, zv, out);
                    matvec(&zeta, wv, out);
                    for (d, o) in out.iter_mut().enumerate() {
                        *o += a0.get(d).unwrap_or(&0.0)
                            + a_t.get(d).unwrap_or(&0.0) * t
                            + a_s.get(d).unwrap_or(&0.0) * s;
                    }
                })
            }
            DriverSpec::Trig { ay, az, azeta } => {
                let _ = k;
                Arc::new(move |t, s, yv, zv, wv, out: &mut [f64]| {
                    for (d, o) in out.iter_mut().enumerate() {
                        *o = ay * (yv[d] + s).sin() + az * (zv[d] + t).cos() + azeta * wv[d].sin();
                    }
                })
            }
        }
    }
}

fn psi_field(spec: &PsiSpec, noise: &NoiseModel, k: usize) -> anyhow::Result<TerminalField> {
    let n = noise.steps();
    let entries: Vec<RandomField> = match spec {
        PsiSpec::Zero => (0..=n)
            .map(|_| RandomField::zero(AlgebraLevel::trivial(n), k))
            .collect(),
        PsiSpec::WienerTerminal { scale } => {
            let w_t = noise.w_at(n);
            let s = *scale;
            (0..=n)
                .map(|_| w_t.map_atoms(k, move |v, o| o.fill(s * v[0])))
                .collect()
        }
        PsiSpec::PolyT { coeffs } => {
            let cs = coeffs.clone();
            (0..=n)
                .map(|i| {
                    let t = noise.grid().node(i);
                    let v: f64 = cs.iter().rev().fold(0.0, |acc, c| acc * t + c);
                    RandomField::constant(n, &vec![v; k])
                })
                .collect()
        }
        PsiSpec::SinWiener { amp, phase } => {
            let w_t = noise.w_at(n);
            let (a, p) = (*amp, *phase);
            (0..=n)
                .map(|i| {
                    let t = noise.grid().node(i);
                    w_t.map_atoms(k, move |v, o| o.fill(a * (v[0] + p * t).sin()))
                })
                .collect()
        }
    };
    TerminalField::new(noise, entries).map_err(|e| anyhow::anyhow!("terminal data: {e}"))
}

pub fn resolve(scenario: &Scenario, guard_override: bool) -> anyhow::Result<Resolved> {
    let Grid { horizon, steps } = scenario.grid;
    if !(horizon > 0.0) || !horizon.is_finite() {
        bail!("grid.T must be positive, got {horizon}");
    }
    let guard = if guard_override {
        steps.max(1)
    } else {
        bdsvie_core::probability::DEFAULT_STEP_GUARD
    };
    let grid = TimeGrid::with_guard(horizon, steps, guard)
        .map_err(|e| anyhow::anyhow!("grid: {e} (use --guard-override to allow larger trees)"))?;
    let noise = NoiseModel::new(grid);
    let k = scenario.dims.k;
    if k == 0 {
        bail!("dims.k must be at least 1");
    }

    let variant = match scenario.solver.variant.as_str() {
        "simple" => Variant::Simple,
        "full" => Variant::Full,
        other => bail!("unknown solver variant {other:?} (expected \"simple\" or \"full\")"),
    };
    let simple = variant == Variant::Simple;
    scenario.f.validate("f", k, simple)?;
    scenario.g.validate("g", k, simple)?;

    let c = scenario
        .constants
        .c
        .unwrap_or_else(|| scenario.f.lipschitz_bound().max(1e-3));
    let alpha = scenario
        .constants
        .alpha
        .unwrap_or_else(|| scenario.g.lipschitz_bound().max(1e-3));
    let (bound, bound_text) = match variant {
        Variant::Simple => (0.5, "1/2".to_string()),
        Variant::Full => (
            1.0 / (horizon + 8.0),
            format!("1/(T+8) = {:.6} (T = {horizon})", 1.0 / (horizon + 8.0)),
        ),
    };
    if !(alpha > 0.0 && alpha < bound) {
        bail!(
            "alpha = {alpha} violates the {}-variant requirement 0 < alpha < {bound_text}",
            scenario.solver.variant
        );
    }
    if !(c > 0.0) {
        bail!("Lipschitz constant c must be positive, got {c}");
    }

    let beta = match &scenario.solver.beta {
        BetaSpec::Auto(word) if word == "auto" => BetaChoice::Auto,
        BetaSpec::Auto(word) => bail!("solver.beta must be a number or \"auto\", got {word:?}"),
        BetaSpec::Explicit(v) if *v > 0.0 => BetaChoice::Explicit(*v),
        BetaSpec::Explicit(v) => bail!("solver.beta must be positive, got {v}"),
    };
    let completion_mode = match scenario.solver.completion_mode.as_str() {
        "sm" => CompletionMode::Sm,
        "m" => CompletionMode::M,
        "s" => CompletionMode::S,
        other => bail!("unknown completion mode {other:?} (expected \"sm\", \"m\" or \"s\")"),
    };
    let known = [
        "measurability",
        "norm_equivalence",
        "weighted_lemmas",
        "apriori",
        "oracle_equivalence",
    ];
    for suite in &scenario.checks {
        if !known.contains(&suite.as_str()) {
            bail!("unknown check suite {suite:?} (known: {})", known.join(", "));
        }
    }

    Ok(Resolved {
        psi: psi_field(&scenario.psi, &noise, k)?,
        noise,
        coeffs: VolterraCoefficients {
            f: scenario.f.closure(k),
            g: scenario.g.closure(k),
            c,
            alpha,
            variant,
            dim: k,
        },
        config: SolverConfig {
            beta,
            picard_tol: scenario.solver.picard_tol,
            picard_max: scenario.solver.picard_max,
            completion_mode,
        },
        checks: scenario.checks.clone(),
    })
}
