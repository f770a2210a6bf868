//! Backward doubly stochastic Volterra integral equations on the tree.
//!
//! The unknown is a pair `(Y(t_k), Z(t,s))` where `Z` is a two-parameter
//! field over the time square. The equation only pins `Z` on the region
//! `t <= s` (one row per first argument); off that region `Z` is defined
//! through a symmetrical-martingale completion built from the forward and
//! backward representation integrands of `Y`. The general equation is
//! solved by Picard iteration of a map that freezes the drivers at the
//! previous iterate, solves the resulting linear row problems exactly via
//! the mixed representation, and re-completes the off-region entries.

use std::sync::Arc;

use crate::bdsde::{solve_bdsde, BdsdeCoefficients, DriverFn, SplitMix};
use crate::error::{Error, Result};
use crate::probability::{
    cond_expect, measurability_check, AlgebraLevel, NoiseModel, RandomField, TwoParamField,
};
use crate::representation::{backward_rep, forward_rep, mixed_rep};

/// Pointwise coefficient `(t, s, y, z, zeta) -> R^k`, applied atom by atom.
/// `z` is the row entry `Z(t, s)` and `zeta` the transposed entry `Z(s, t)`.
pub type VolterraFn = Arc<dyn Fn(f64, f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Terminal data `psi(t_k)`, one field per node, each a W-path functional.
#[derive(Debug, Clone)]
pub struct TerminalField {
    entries: Vec<RandomField>,
}

impl TerminalField {
    /// Validate one entry per node `0..=N`, all the same dimension and all
    /// measurable with respect to the terminal W-algebra.
    pub fn new(noise: &NoiseModel, entries: Vec<RandomField>) -> Result<Self> {
        let n = noise.steps();
        if entries.len() != n + 1 {
            return Err(Error::Config(format!(
                "terminal field needs {} entries (one per node), got {}",
                n + 1,
                entries.len()
            )));
        }
        let dim = entries[0].dim();
        for (k, e) in entries.iter().enumerate() {
            if e.dim() != dim {
                return Err(Error::Config(format!(
                    "terminal entry {k} has dimension {} != {dim}",
                    e.dim()
                )));
            }
            let (ok, dev) = measurability_check(e, AlgebraLevel::f_w(n, n), 1e-12);
            if !ok {
                return Err(Error::Measurability(dev));
            }
        }
        Ok(Self { entries })
    }

    /// The node-independent case `psi(t_k) = xi` for all `k`.
    pub fn uniform(noise: &NoiseModel, xi: RandomField) -> Result<Self> {
        let n = noise.steps();
        Self::new(noise, vec![xi; n + 1])
    }

    pub fn entry(&self, k: usize) -> &RandomField {
        &self.entries[k]
    }

    pub fn dim(&self) -> usize {
        self.entries[0].dim()
    }

    pub fn steps(&self) -> usize {
        self.entries.len() - 1
    }
}

/// Coefficient class: `Simple` has no dependence on the transposed entry
/// `zeta` and allows `alpha < 1/2`; `Full` may use `zeta` and needs
/// `alpha < 1/(T+8)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Simple,
    Full,
}

/// How entries off the row region (`s < t`) are defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionMode {
    /// Sum of the symmetrically extended forward and backward integrands.
    Sm,
    /// Forward integrand only.
    M,
    /// Mirror symmetry `Z(t,s) = Z(s,t)` off the row region.
    S,
}

/// Drivers `f`, `g` with their declared constants: sampled verification
/// enforces `|df|^2 <= c(|dy|^2+|dz|^2+|dzeta|^2)` and
/// `|dg|^2 <= alpha(|dy|^2+|dz|^2+|dzeta|^2)`.
#[derive(Clone)]
pub struct VolterraCoefficients {
    pub f: VolterraFn,
    pub g: VolterraFn,
    pub c: f64,
    pub alpha: f64,
    pub variant: Variant,
    pub dim: usize,
}

impl VolterraCoefficients {
    /// Admissible upper bound on `alpha` for the variant.
    pub fn alpha_bound(&self, horizon: f64) -> f64 {
        match self.variant {
            Variant::Simple => 0.5,
            Variant::Full => 1.0 / (horizon + 8.0),
        }
    }

    pub fn check_hypothesis(&self, horizon: f64) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!(
                "Lipschitz constant c must be positive, got {}",
                self.c
            )));
        }
        let bound = self.alpha_bound(horizon);
        let variant = match self.variant {
            Variant::Simple => "simple",
            Variant::Full => "full",
        };
        if !(self.alpha > 0.0 && self.alpha < bound) {
            return Err(Error::Hypothesis {
                variant,
                alpha: self.alpha,
                bound,
            });
        }
        Ok(())
    }

    /// Spot-check the declared constants on pseudo-random argument pairs.
    pub fn verify_constants(&self, samples: usize, seed: u64) -> Result<()> {
        let k = self.dim;
        let mut rng = SplitMix::new(seed);
        let mut buf_a = vec![0.0; k];
        let mut buf_b = vec![0.0; k];
        let draw = |rng: &mut SplitMix| -> Vec<f64> { (0..k).map(|_| rng.symmetric()).collect() };
        for _ in 0..samples {
            let t = rng.uniform();
            let s = rng.uniform();
            let (y1, z1, w1) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let (y2, z2, w2) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let d2: f64 = y1.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                + z1.iter().zip(&z2).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                + w1.iter().zip(&w2).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (self.f)(t, s, &y1, &z1, &w1, &mut buf_a);
            (self.f)(t, s, &y2, &z2, &w2, &mut buf_b);
            let df: f64 = buf_a.iter().zip(&buf_b).map(|(a, b)| (a - b).powi(2)).sum();
            if df > self.c * d2 * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Config(format!(
                    "driver f violates declared Lipschitz constant c = {}: gap {:.3e}",
                    self.c,
                    df - self.c * d2
                )));
            }
            (self.g)(t, s, &y1, &z1, &w1, &mut buf_a);
            (self.g)(t, s, &y2, &z2, &w2, &mut buf_b);
            let dg: f64 = buf_a.iter().zip(&buf_b).map(|(a, b)| (a - b).powi(2)).sum();
            if dg > self.alpha * d2 * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Config(format!(
                    "driver g violates declared constant alpha = {}: gap {:.3e}",
                    self.alpha,
                    dg - self.alpha * d2
                )));
            }
            if self.variant == Variant::Simple {
                // the simple variant must not read zeta at all
                (self.f)(t, s, &y1, &z1, &w2, &mut buf_b);
                (self.f)(t, s, &y1, &z1, &w1, &mut buf_a);
                let dev: f64 = buf_a.iter().zip(&buf_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                (self.g)(t, s, &y1, &z1, &w2, &mut buf_b);
                (self.g)(t, s, &y1, &z1, &w1, &mut buf_a);
                let dev_g: f64 = buf_a.iter().zip(&buf_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if dev > 1e-12 || dev_g > 1e-12 {
                    return Err(Error::Config(
                        "simple-variant coefficients must not depend on the transposed entry".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Weight exponent for the exponentially weighted square norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaChoice {
    /// Derive from the declared constants; for the `Full` variant the
    /// starting value is doubled until the measured contraction ratio is
    /// at most 0.9.
    Auto,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub beta: BetaChoice,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub completion_mode: CompletionMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: BetaChoice::Auto,
            picard_tol: 1e-10,
            picard_max: 200,
            completion_mode: CompletionMode::Sm,
        }
    }
}

/// Output of one application of the frozen-driver map: diagonal path,
/// completed two-parameter field and the two completion halves.
#[derive(Debug, Clone)]
pub struct ThetaState {
    pub y: Vec<RandomField>,
    pub z: TwoParamField,
    pub x1: TwoParamField,
    pub x2: TwoParamField,
}

#[derive(Debug, Clone, Default)]
pub struct PicardDiagnostics {
    pub beta: f64,
    pub iterations: usize,
    /// Weighted norm of the state difference per iteration.
    pub differences: Vec<f64>,
    /// Successive difference ratios (empirical contraction factors).
    pub ratios: Vec<f64>,
    /// Number of times the automatic weight was doubled.
    pub beta_retries: usize,
}

#[derive(Debug, Clone)]
pub struct SmSolution {
    pub y: Vec<RandomField>,
    pub z: TwoParamField,
    pub x1: TwoParamField,
    pub x2: TwoParamField,
    pub diagnostics: PicardDiagnostics,
}

/// Apply a Volterra coefficient pointwise on the join level of its three
/// field arguments.
fn apply_coeff(
    f: &VolterraFn,
    t: f64,
    s: f64,
    y: &RandomField,
    z: &RandomField,
    zeta: &RandomField,
    dim: usize,
) -> RandomField {
    let level = y.level().join(&z.level()).join(&zeta.level());
    let ye = y.expand(level);
    let ze = z.expand(level);
    let we = zeta.expand(level);
    let (ky, kz, kw) = (ye.dim(), ze.dim(), we.dim());
    let (yv, zv, wv) = (ye.values(), ze.values(), we.values());
    let mut values = vec![0.0; level.atoms() * dim];
    crate::par::fill_chunks(&mut values, dim, |idx, chunk| {
        f(
            t,
            s,
            &yv[idx * ky..(idx + 1) * ky],
            &zv[idx * kz..(idx + 1) * kz],
            &wv[idx * kw..(idx + 1) * kw],
            chunk,
        );
    });
    RandomField::from_parts(level, dim, values)
}

fn check_state_shape(
    noise: &NoiseModel,
    psi: &TerminalField,
    y: &[RandomField],
    z: &TwoParamField,
    dim: usize,
) -> Result<()> {
    let n = noise.steps();
    if psi.steps() != n || psi.dim() != dim {
        return Err(Error::IncompleteState(format!(
            "terminal field shape ({} nodes, dim {}) does not match the model ({} nodes, dim {})",
            psi.steps() + 1,
            psi.dim(),
            n + 1,
            dim
        )));
    }
    if y.len() != n + 1 {
        return Err(Error::IncompleteState(format!(
            "frozen path has {} entries, need {}",
            y.len(),
            n + 1
        )));
    }
    if z.steps() != n || z.dim() != dim {
        return Err(Error::IncompleteState(
            "frozen two-parameter field does not match the model shape".into(),
        ));
    }
    Ok(())
}

/// Right-hand side of row `k` for frozen state `(y, z)`:
/// `psi(t_k) + sum_{i>=k} f(t_k, t_i, y_i, z(k,i), zeta_i) dt
///  + sum_{i>=k} g(t_k, t_{i+1}, y_{i+1}, z(k,i), z(i+1,k)) dB_i`,
/// where `zeta_i` is the transposed entry `z(i,k)` for `i > k` and the
/// diagonal entry `z(k,k)` for `i = k`.
pub fn assemble_rhs(
    noise: &NoiseModel,
    psi: &TerminalField,
    y: &[RandomField],
    z: &TwoParamField,
    coeffs: &VolterraCoefficients,
    k: usize,
) -> Result<RandomField> {
    let n = noise.steps();
    let dim = coeffs.dim;
    check_state_shape(noise, psi, y, z, dim)?;
    let dt = noise.grid().dt();
    let t_k = noise.grid().node(k);
    let mut acc = psi.entry(k).clone();
    for i in k..n {
        let zeta_f = if i == k { z.get(k, k) } else { z.get(i, k) };
        let fv = apply_coeff(
            &coeffs.f,
            t_k,
            noise.grid().node(i),
            &y[i],
            z.get(k, i),
            zeta_f,
            dim,
        );
        acc = acc.add(&fv.scale(dt));
        let gv = apply_coeff(
            &coeffs.g,
            t_k,
            noise.grid().node(i + 1),
            &y[i + 1],
            z.get(k, i),
            z.get(i + 1, k),
            dim,
        );
        acc = acc.add(&gv.mul_scalar_field(&noise.b_increment(i)));
    }
    Ok(acc)
}

/// Solve the linear row problems for explicitly given interval processes:
/// `F_k = psi(t_k) + sum f_rows[k] dt + sum g_rows[k] dB`, then split every
/// `F_k` through the mixed representation. `f_rows[k][i-k]` must be
/// `F_{t_i}`-measurable and `g_rows[k][i-k]` measurable at the
/// right-endpoint level `(i+1, i)`.
pub fn solve_linear_bdsvie(
    noise: &NoiseModel,
    psi: &TerminalField,
    f_rows: &[Vec<RandomField>],
    g_rows: &[Vec<RandomField>],
) -> Result<(Vec<RandomField>, TwoParamField)> {
    let n = noise.steps();
    let dim = psi.dim();
    if psi.steps() != n {
        return Err(Error::Config("terminal field does not match the model".into()));
    }
    if f_rows.len() != n + 1 || g_rows.len() != n + 1 {
        return Err(Error::IncompleteState(format!(
            "need {} driver rows, got {} / {}",
            n + 1,
            f_rows.len(),
            g_rows.len()
        )));
    }
    let dt = noise.grid().dt();
    for k in 0..=n {
        if f_rows[k].len() != n - k || g_rows[k].len() != n - k {
            return Err(Error::IncompleteState(format!(
                "row {k} needs {} interval entries",
                n - k
            )));
        }
        for (off, e) in f_rows[k].iter().enumerate() {
            let i = k + off;
            let (ok, dev) = measurability_check(e, AlgebraLevel::f_t(n, i), 1e-12);
            if !ok {
                return Err(Error::Measurability(dev));
            }
        }
        for (off, e) in g_rows[k].iter().enumerate() {
            let i = k + off;
            let (ok, dev) = measurability_check(e, AlgebraLevel::new(n, i + 1, i), 1e-12);
            if !ok {
                return Err(Error::Measurability(dev));
            }
        }
    }
    let mut y = Vec::with_capacity(n + 1);
    let mut z = TwoParamField::zero(n, dim);
    for k in 0..=n {
        let mut rhs = psi.entry(k).clone();
        for (off, e) in f_rows[k].iter().enumerate() {
            let _ = off;
            rhs = rhs.add(&e.scale(dt));
        }
        for (off, e) in g_rows[k].iter().enumerate() {
            rhs = rhs.add(&e.mul_scalar_field(&noise.b_increment(k + off)));
        }
        let (y_k, z_row) = mixed_rep(noise, &rhs, k)?;
        for (off, entry) in z_row.into_iter().enumerate() {
            z.set(k, k + off, entry);
        }
        y.push(y_k);
    }
    Ok((y, z))
}

/// Build the two completion halves from the diagonal path and define the
/// off-region entries of `z` per the requested mode.
///
/// `x1(k, j)` for `j < k` is the forward representation integrand of
/// `E[Y(t_k) | W-path]` at interval `j`; `x2(k, i)` for `i >= k` is the
/// backward representation integrand of `E[Y(t_k) | B-tail]`. Both tables
/// are filled on the whole square by symmetry (`x1(k,j) = x1(j,k)` on the
/// row region, `x2(k,i) = x2(i,k)` off it; entries that would need the
/// nonexistent interval `N` are zero). Modes: `Sm` sets
/// `z(k,j) = x1(k,j) + x2(j,k)` off-region, `M` keeps only `x1`, `S`
/// mirrors the row entries (`z(k,j) = z(j,k)`, with the first argument of
/// the mirror clamped to the last interval for the terminal row).
pub fn sm_complete(
    noise: &NoiseModel,
    y: &[RandomField],
    mode: CompletionMode,
    z: &mut TwoParamField,
) -> Result<(TwoParamField, TwoParamField)> {
    let n = noise.steps();
    let dim = z.dim();
    let dt = noise.grid().dt();
    let _ = dt;
    for (k, y_k) in y.iter().enumerate() {
        let (ok, dev) = measurability_check(y_k, AlgebraLevel::f_t(n, k), 1e-12);
        if !ok {
            return Err(Error::Measurability(dev));
        }
    }
    // native integrand rows
    let mut native_w: Vec<Vec<RandomField>> = Vec::with_capacity(n + 1);
    let mut native_b: Vec<Vec<RandomField>> = Vec::with_capacity(n + 1);
    for y_k in y.iter() {
        let u = cond_expect(y_k, AlgebraLevel::f_w(n, n));
        let rep_w = forward_rep(noise, &u)?;
        native_w.push((0..n).map(|j| rep_w.integrand.entry(j).clone()).collect());
        let v = cond_expect(y_k, AlgebraLevel::f_b_tail(n, 0));
        let rep_b = backward_rep(noise, &v)?;
        native_b.push((0..n).map(|i| rep_b.integrand.entry(i).clone()).collect());
    }
    let mut x1 = TwoParamField::zero(n, dim);
    let mut x2 = TwoParamField::zero(n, dim);
    for k in 0..=n {
        for j in 0..n {
            if j < k {
                x1.set(k, j, native_w[k][j].clone());
            } else {
                // symmetric extension onto the row region
                x1.set(k, j, native_w[j][k].clone());
            }
            if j >= k {
                x2.set(k, j, native_b[k][j].clone());
            } else if k < n {
                // symmetric extension off the row region
                x2.set(k, j, native_b[j][k].clone());
            }
            // k == n would mirror into interval N, which does not exist:
            // the off-region extension of x2 at the terminal row stays 0.
        }
    }
    for k in 0..=n {
        for j in 0..k.min(n) {
            let entry = match mode {
                CompletionMode::Sm => x1.get(k, j).add(x2.get(k, j)),
                CompletionMode::M => x1.get(k, j).clone(),
                CompletionMode::S => z.get(j, k.min(n - 1)).clone(),
            };
            z.set(k, j, entry);
        }
    }
    Ok((x1, x2))
}

/// One application of the frozen-driver map: per row, assemble the
/// right-hand side from the previous iterate, split it through the mixed
/// representation, then complete the off-region entries.
pub fn theta_map(
    noise: &NoiseModel,
    psi: &TerminalField,
    y: &[RandomField],
    z: &TwoParamField,
    coeffs: &VolterraCoefficients,
    mode: CompletionMode,
) -> Result<ThetaState> {
    let n = noise.steps();
    let dim = coeffs.dim;
    check_state_shape(noise, psi, y, z, dim)?;
    let rows: Vec<Result<(RandomField, Vec<RandomField>)>> = crate::par::map_indices(n + 1, |k| {
        let rhs = assemble_rhs(noise, psi, y, z, coeffs, k)?;
        mixed_rep(noise, &rhs, k)
    });
    let mut y_new = Vec::with_capacity(n + 1);
    let mut z_new = TwoParamField::zero(n, dim);
    for (k, row) in rows.into_iter().enumerate() {
        let (y_k, z_row) = row?;
        for (off, entry) in z_row.into_iter().enumerate() {
            z_new.set(k, k + off, entry);
        }
        y_new.push(y_k);
    }
    let (x1, x2) = sm_complete(noise, &y_new, mode, &mut z_new)?;
    Ok(ThetaState {
        y: y_new,
        z: z_new,
        x1,
        x2,
    })
}

/// Weighted square norm of the state difference, restricted to the parts
/// the equation pins (path on left nodes, row-region entries of `z`).
fn weighted_diff(
    noise: &NoiseModel,
    beta: f64,
    y_a: &[RandomField],
    z_a: &TwoParamField,
    y_b: &[RandomField],
    z_b: &TwoParamField,
) -> f64 {
    let n = noise.steps();
    let dt = noise.grid().dt();
    let mut acc = 0.0;
    for k in 0..n {
        let w = (beta * noise.grid().node(k)).exp();
        acc += w * y_a[k].sub(&y_b[k]).second_moment() * dt;
        for i in k..n {
            let wi = (beta * noise.grid().node(i)).exp();
            acc += wi * z_a.get(k, i).sub(z_b.get(k, i)).second_moment() * dt * dt;
        }
    }
    acc.sqrt()
}

/// Starting weight exponent for the declared constants. `Explicit` passes
/// through; `Auto` uses `10c/(1-2a)+1` for the simple variant and
/// `10c/(1-a(T+8))+1` as the starting point of the doubling search for the
/// full variant.
pub fn resolve_beta(coeffs: &VolterraCoefficients, config: &SolverConfig, horizon: f64) -> Result<f64> {
    match config.beta {
        BetaChoice::Explicit(b) => {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::Config(format!("beta must be positive, got {b}")));
            }
            Ok(b)
        }
        BetaChoice::Auto => {
            coeffs.check_hypothesis(horizon)?;
            let denom = match coeffs.variant {
                Variant::Simple => 1.0 - 2.0 * coeffs.alpha,
                Variant::Full => 1.0 - coeffs.alpha * (horizon + 8.0),
            };
            Ok(10.0 * coeffs.c / denom + 1.0)
        }
    }
}

struct PicardRun {
    state: ThetaState,
    diffs: Vec<f64>,
    ratios: Vec<f64>,
    converged: bool,
}

fn picard_run(
    noise: &NoiseModel,
    psi: &TerminalField,
    coeffs: &VolterraCoefficients,
    config: &SolverConfig,
    beta: f64,
) -> Result<PicardRun> {
    let n = noise.steps();
    let dim = coeffs.dim;
    let mut y: Vec<RandomField> = (0..=n)
        .map(|k| RandomField::zero(AlgebraLevel::f_t(n, k), dim))
        .collect();
    let mut z = TwoParamField::zero(n, dim);
    let mut diffs = Vec::new();
    let mut ratios = Vec::new();
    let mut state = None;
    let mut converged = false;
    for _ in 0..config.picard_max {
        let next = theta_map(noise, psi, &y, &z, coeffs, config.completion_mode)?;
        let d = weighted_diff(noise, beta, &next.y, &next.z, &y, &z);
        if let Some(prev) = diffs.last().copied() {
            if prev > 0.0 {
                ratios.push(d / prev);
            }
        }
        diffs.push(d);
        y = next.y.clone();
        z = next.z.clone();
        state = Some(next);
        if d <= config.picard_tol {
            converged = true;
            break;
        }
    }
    Ok(PicardRun {
        state: state.expect("picard_max >= 1"),
        diffs,
        ratios,
        converged,
    })
}

/// Largest contraction ratio observed before the difference fell under the
/// tolerance (ratios at the round-off floor are not meaningful).
fn significant_ratio_sup(diffs: &[f64], ratios: &[f64], tol: f64) -> f64 {
    let mut sup: f64 = 0.0;
    for (idx, r) in ratios.iter().enumerate() {
        if diffs[idx] > tol {
            sup = sup.max(*r);
        }
    }
    sup
}

/// Picard iteration of the frozen-driver map from the zero state.
pub fn solve_bdsvie(
    noise: &NoiseModel,
    psi: &TerminalField,
    coeffs: &VolterraCoefficients,
    config: &SolverConfig,
) -> Result<SmSolution> {
    let horizon = noise.grid().horizon();
    coeffs.check_hypothesis(horizon)?;
    coeffs.verify_constants(64, 0x5eed)?;
    if psi.dim() != coeffs.dim {
        return Err(Error::Config(format!(
            "terminal dimension {} != coefficient dimension {}",
            psi.dim(),
            coeffs.dim
        )));
    }
    if config.picard_max == 0 || !(config.picard_tol > 0.0) {
        return Err(Error::Config("picard_tol must be positive and picard_max >= 1".into()));
    }
    let mut beta = resolve_beta(coeffs, config, horizon)?;
    let auto_full = matches!(config.beta, BetaChoice::Auto) && coeffs.variant == Variant::Full;
    let max_retries = if auto_full { 8 } else { 0 };
    let mut retries = 0;
    loop {
        let run = picard_run(noise, psi, coeffs, config, beta)?;
        let sup = significant_ratio_sup(&run.diffs, &run.ratios, config.picard_tol);
        if run.converged && (!auto_full || sup <= 0.9) {
            return Ok(SmSolution {
                y: run.state.y,
                z: run.state.z,
                x1: run.state.x1,
                x2: run.state.x2,
                diagnostics: PicardDiagnostics {
                    beta,
                    iterations: run.diffs.len(),
                    differences: run.diffs,
                    ratios: run.ratios,
                    beta_retries: retries,
                },
            });
        }
        if retries >= max_retries {
            if run.converged {
                return Err(Error::NonContraction(format!(
                    "converged but measured contraction ratio {sup:.3} stayed above 0.9 after {retries} weight doublings"
                )));
            }
            return Err(Error::PicardDiverged {
                max_iter: config.picard_max,
                ratios: run.ratios,
            });
        }
        retries += 1;
        beta *= 2.0;
    }
}

/// Solve the simple-variant equation as a family of terminal-value
/// problems, one per node `t_k` with the first driver argument frozen.
pub fn solve_bdsvie_family(
    noise: &NoiseModel,
    psi: &TerminalField,
    coeffs: &VolterraCoefficients,
    inner_tol: f64,
    inner_max: usize,
) -> Result<(Vec<RandomField>, TwoParamField)> {
    if coeffs.variant != Variant::Simple {
        return Err(Error::Config(
            "family construction is only defined for simple-variant coefficients (no transposed-entry dependence)"
                .into(),
        ));
    }
    coeffs.verify_constants(64, 0x5eed)?;
    let n = noise.steps();
    let dim = coeffs.dim;
    if psi.steps() != n || psi.dim() != dim {
        return Err(Error::Config("terminal field does not match the model".into()));
    }
    let mut y = Vec::with_capacity(n + 1);
    let mut z = TwoParamField::zero(n, dim);
    for k in 0..=n {
        let t_k = noise.grid().node(k);
        let zeros = vec![0.0; dim];
        let f = coeffs.f.clone();
        let g = coeffs.g.clone();
        let zf = zeros.clone();
        let driver: DriverFn = Arc::new(move |s, yv, zv, out: &mut [f64]| f(t_k, s, yv, zv, &zf, out));
        let zg = zeros;
        let noise_coeff: DriverFn =
            Arc::new(move |s, yv, zv, out: &mut [f64]| g(t_k, s, yv, zv, &zg, out));
        let row = BdsdeCoefficients {
            terminal: psi.entry(k).clone(),
            driver,
            noise_coeff,
            lipschitz_c: coeffs.c,
            lipschitz_alpha: coeffs.alpha,
        };
        let sol = solve_bdsde(noise, &row, inner_tol, inner_max, k)?;
        y.push(sol.y[k].clone());
        for i in k..n {
            z.set(k, i, sol.z[i].clone());
        }
    }
    Ok((y, z))
}

/// Defect of the discrete equation, per row and atom.
#[derive(Debug, Clone, Copy)]
pub struct VolterraResidual {
    pub max_abs: f64,
    pub weighted_l2: f64,
}

/// Residual of `Y(t_k) = rhs_k - sum_{i>=k} Z(k,i) dW_i` over all rows.
pub fn bdsvie_residual(
    noise: &NoiseModel,
    psi: &TerminalField,
    y: &[RandomField],
    z: &TwoParamField,
    coeffs: &VolterraCoefficients,
    beta: f64,
) -> Result<VolterraResidual> {
    let n = noise.steps();
    let dt = noise.grid().dt();
    let mut max_abs: f64 = 0.0;
    let mut acc = 0.0;
    for k in 0..=n {
        let rhs = assemble_rhs(noise, psi, y, z, coeffs, k)?;
        let mut recon = y[k].clone();
        for i in k..n {
            recon = recon.add(&z.get(k, i).mul_scalar_field(&noise.w_increment(i)));
        }
        let defect = recon.sub(&rhs);
        max_abs = max_abs.max(defect.sup_abs());
        let w = (beta * noise.grid().node(k)).exp();
        acc += w * defect.second_moment() * dt;
    }
    Ok(VolterraResidual {
        max_abs,
        weighted_l2: acc.sqrt(),
    })
}
