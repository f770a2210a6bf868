//! Backward doubly stochastic differential equations on the tree, solved
//! by backward recursion: explicit in `Z` and in the backward-noise term,
//! implicit in `Y` through the driver (plain fixed-point inner iteration,
//! contractive for `c * dt < 1`).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::probability::{measurability_check, AlgebraLevel, NoiseModel, RandomField};

/// Pointwise coefficient `(s, y, z) -> R^k`, applied atom by atom.
pub type DriverFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Terminal value, driver `f`, backward-noise coefficient `g`, and their
/// declared Lipschitz constants (`|df|^2 <= c(|dy|^2 + |dz|^2)`,
/// `|dg|^2 <= c |dy|^2 + alpha |dz|^2`).
#[derive(Clone)]
pub struct BdsdeCoefficients {
    pub terminal: RandomField,
    pub driver: DriverFn,
    pub noise_coeff: DriverFn,
    pub lipschitz_c: f64,
    pub lipschitz_alpha: f64,
}

impl BdsdeCoefficients {
    pub fn dim(&self) -> usize {
        self.terminal.dim()
    }

    /// Spot-check the declared constants on pseudo-random argument pairs.
    pub fn verify_constants(&self, samples: usize, seed: u64) -> Result<()> {
        let k = self.dim();
        let mut rng = SplitMix::new(seed);
        let mut buf_a = vec![0.0; k];
        let mut buf_b = vec![0.0; k];
        for _ in 0..samples {
            let s = rng.uniform();
            let y1: Vec<f64> = (0..k).map(|_| rng.symmetric()).collect();
            let z1: Vec<f64> = (0..k).map(|_| rng.symmetric()).collect();
            let y2: Vec<f64> = (0..k).map(|_| rng.symmetric()).collect();
            let z2: Vec<f64> = (0..k).map(|_| rng.symmetric()).collect();
            let dy: f64 = y1.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum();
            let dz: f64 = z1.iter().zip(&z2).map(|(a, b)| (a - b).powi(2)).sum();
            (self.driver)(s, &y1, &z1, &mut buf_a);
            (self.driver)(s, &y2, &z2, &mut buf_b);
            let df: f64 = buf_a.iter().zip(&buf_b).map(|(a, b)| (a - b).powi(2)).sum();
            if df > self.lipschitz_c * (dy + dz) * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Config(format!(
                    "driver violates declared Lipschitz constant c = {}: gap {:.3e}",
                    self.lipschitz_c,
                    df - self.lipschitz_c * (dy + dz)
                )));
            }
            (self.noise_coeff)(s, &y1, &z1, &mut buf_a);
            (self.noise_coeff)(s, &y2, &z2, &mut buf_b);
            let dg: f64 = buf_a.iter().zip(&buf_b).map(|(a, b)| (a - b).powi(2)).sum();
            if dg > (self.lipschitz_c * dy + self.lipschitz_alpha * dz) * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Config(format!(
                    "noise coefficient violates declared constants (c = {}, alpha = {})",
                    self.lipschitz_c, self.lipschitz_alpha
                )));
            }
        }
        Ok(())
    }
}

/// Small deterministic generator for coefficient spot checks.
pub(crate) struct SplitMix(u64);

impl SplitMix {
    pub(crate) fn new(seed: u64) -> Self {
        Self(seed)
    }

    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub(crate) fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub(crate) fn symmetric(&mut self) -> f64 {
        4.0 * self.uniform() - 2.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct BdsdeDiagnostics {
    /// Inner fixed-point iterations per time step (index = step).
    pub inner_iterations: Vec<usize>,
    /// Last inner update size per step.
    pub inner_updates: Vec<f64>,
}

/// Solution path: `y[i]` at node `t_i` (level `(i,i)`), `z[i]` per
/// interval `i` (level `(i,i)`), both defined for `i >= from`.
#[derive(Debug, Clone)]
pub struct BdsdeSolution {
    pub from: usize,
    pub y: Vec<RandomField>,
    pub z: Vec<RandomField>,
    pub diagnostics: BdsdeDiagnostics,
}

/// Solve the BDSDE `Y_t = xi + int f ds + int g dB - int Z dW` on
/// `[t_from, T]` by backward recursion.
pub fn solve_bdsde(
    noise: &NoiseModel,
    coeffs: &BdsdeCoefficients,
    inner_tol: f64,
    inner_max: usize,
    from: usize,
) -> Result<BdsdeSolution> {
    let n = noise.steps();
    let dim = coeffs.dim();
    let dt = noise.grid().dt();
    if coeffs.lipschitz_c * dt >= 1.0 {
        return Err(Error::StepSize(coeffs.lipschitz_c * dt));
    }
    let (ok, dev) = measurability_check(&coeffs.terminal, AlgebraLevel::f_w(n, n), 1e-12);
    if !ok {
        return Err(Error::Measurability(dev));
    }
    let mut y: Vec<RandomField> = (0..=n)
        .map(|i| RandomField::zero(AlgebraLevel::f_t(n, i), dim))
        .collect();
    let mut z: Vec<RandomField> = (0..n)
        .map(|i| RandomField::zero(AlgebraLevel::f_t(n, i), dim))
        .collect();
    y[n] = coeffs.terminal.clone();
    let mut diag = BdsdeDiagnostics::default();
    diag.inner_iterations = vec![0; n];
    diag.inner_updates = vec![0.0; n];
    for i in (from..n).rev() {
        let t_right = noise.grid().node(i + 1);
        // Z_{i+1} := 0 at the terminal interval (no interval N exists)
        let z_right = if i + 1 < n {
            z[i + 1].clone()
        } else {
            RandomField::zero(AlgebraLevel::f_t(n, n), dim)
        };
        let g_right = pointwise(&coeffs.noise_coeff, t_right, &y[i + 1], &z_right, dim);
        let carrier = y[i + 1].add(&g_right.mul_scalar_field(&noise.b_increment(i)));
        let level_i = AlgebraLevel::f_t(n, i);
        z[i] = carrier
            .mul_scalar_field(&noise.w_increment(i))
            .project(level_i)
            .scale(1.0 / dt);
        let base = carrier.project(level_i);
        // implicit in Y: fixed point of y = base + f(t_i, y, z_i) dt
        let t_i = noise.grid().node(i);
        let mut current = base.clone();
        let mut converged = false;
        for it in 0..inner_max {
            let fv = pointwise(&coeffs.driver, t_i, &current, &z[i], dim);
            let next = base.add(&fv.scale(dt));
            let update = next.max_deviation(&current);
            current = next;
            diag.inner_iterations[i] = it + 1;
            diag.inner_updates[i] = update;
            if update <= inner_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::InnerIteration {
                max_iter: inner_max,
                last_update: diag.inner_updates[i],
            });
        }
        y[i] = current;
    }
    Ok(BdsdeSolution {
        from,
        y,
        z,
        diagnostics: diag,
    })
}

/// Apply `(s, y, z) -> R^dim` pointwise on the join level of two fields.
pub(crate) fn pointwise(
    f: &DriverFn,
    s: f64,
    y: &RandomField,
    z: &RandomField,
    dim: usize,
) -> RandomField {
    let level = y.level().join(&z.level());
    let ye = y.expand(level);
    let ze = z.expand(level);
    let k_y = ye.dim();
    let k_z = ze.dim();
    let yv = ye.values();
    let zv = ze.values();
    let mut values = vec![0.0; level.atoms() * dim];
    crate::par::fill_chunks(&mut values, dim, |idx, chunk| {
        f(
            s,
            &yv[idx * k_y..(idx + 1) * k_y],
            &zv[idx * k_z..(idx + 1) * k_z],
            chunk,
        );
    });
    RandomField::from_parts(level, dim, values)
}

/// Defect of the stacked discrete equation over all nodes and atoms.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub l2: f64,
}

/// Residual of `Y_i = xi + sum f dt + sum g dB - sum Z dW` for
/// `i = from..=N`, atomwise.
pub fn bdsde_residual(
    noise: &NoiseModel,
    sol: &BdsdeSolution,
    coeffs: &BdsdeCoefficients,
) -> ResidualReport {
    let n = noise.steps();
    let dim = coeffs.dim();
    let dt = noise.grid().dt();
    // running tail sums, built backwards
    let mut tail = coeffs.terminal.clone();
    let mut max_abs: f64 = (sol.y[n].max_deviation(&tail)).abs();
    let mut l2 = sol.y[n].sub(&tail).second_moment() * dt;
    for i in (sol.from..n).rev() {
        let z_right = if i + 1 < n {
            sol.z[i + 1].clone()
        } else {
            RandomField::zero(AlgebraLevel::f_t(n, n), dim)
        };
        let g_right = pointwise(
            &coeffs.noise_coeff,
            noise.grid().node(i + 1),
            &sol.y[i + 1],
            &z_right,
            dim,
        );
        let f_here = pointwise(&coeffs.driver, noise.grid().node(i), &sol.y[i], &sol.z[i], dim);
        tail = tail
            .add(&f_here.scale(dt))
            .add(&g_right.mul_scalar_field(&noise.b_increment(i)))
            .sub(&sol.z[i].mul_scalar_field(&noise.w_increment(i)));
        let defect = sol.y[i].sub(&tail);
        max_abs = max_abs.max(defect.sup_abs());
        l2 += defect.second_moment() * dt;
    }
    ResidualReport {
        max_abs,
        l2: l2.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probability::TimeGrid;
    use approx::assert_abs_diff_eq;

    fn noise(t: f64, n: usize) -> NoiseModel {
        NoiseModel::new(TimeGrid::new(t, n).unwrap())
    }

    fn zero_fn() -> DriverFn {
        Arc::new(|_s, _y, _z, out: &mut [f64]| out.fill(0.0))
    }

    fn const_fn(v: f64) -> DriverFn {
        Arc::new(move |_s, _y, _z, out: &mut [f64]| out.fill(v))
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let nm = noise(1.0, 4);
        let coeffs = BdsdeCoefficients {
            terminal: RandomField::zero(AlgebraLevel::f_w(4, 4), 1),
            driver: zero_fn(),
            noise_coeff: zero_fn(),
            lipschitz_c: 0.0,
            lipschitz_alpha: 0.0,
        };
        let sol = solve_bdsde(&nm, &coeffs, 1e-12, 100, 0).unwrap();
        for i in 0..=4 {
            assert_eq!(sol.y[i].sup_abs(), 0.0);
        }
        for i in 0..4 {
            assert_eq!(sol.z[i].sup_abs(), 0.0);
        }
    }

    #[test]
    fn terminal_w_gives_w_path_and_unit_z() {
        let nm = noise(1.0, 4);
        let coeffs = BdsdeCoefficients {
            terminal: nm.w_at(4),
            driver: zero_fn(),
            noise_coeff: zero_fn(),
            lipschitz_c: 0.0,
            lipschitz_alpha: 0.0,
        };
        let sol = solve_bdsde(&nm, &coeffs, 1e-12, 100, 0).unwrap();
        for i in 0..=4 {
            assert!(sol.y[i].max_deviation(&nm.w_at(i)) < 1e-12);
        }
        for i in 0..4 {
            assert!(sol.z[i].max_deviation(&RandomField::constant_scalar(4, 1.0)) < 1e-12);
        }
        let res = bdsde_residual(&nm, &sol, &coeffs);
        assert!(res.max_abs < 1e-10);
    }

    #[test]
    fn unit_g_gives_b_tail_shift() {
        let nm = noise(1.0, 4);
        let coeffs = BdsdeCoefficients {
            terminal: RandomField::constant_scalar(4, 1.0),
            driver: zero_fn(),
            noise_coeff: const_fn(1.0),
            lipschitz_c: 0.0,
            lipschitz_alpha: 0.0,
        };
        let sol = solve_bdsde(&nm, &coeffs, 1e-12, 100, 0).unwrap();
        for i in 0..=4 {
            let expected = nm.b_tail(i).map_atoms(1, |v, o| o[0] = 1.0 + v[0]);
            assert!(sol.y[i].max_deviation(&expected) < 1e-12);
        }
        for i in 0..4 {
            assert!(sol.z[i].sup_abs() < 1e-12);
        }
        let res = bdsde_residual(&nm, &sol, &coeffs);
        assert!(res.max_abs < 1e-10);
    }

    #[test]
    fn ode_case_converges_first_order() {
        // xi = 1, f = -y, g = 0, T = 1: Y(t) = e^{t-T}, so Y(0) = e^{-1}
        let run = |n: usize| -> f64 {
            let nm = noise(1.0, n);
            let coeffs = BdsdeCoefficients {
                terminal: RandomField::constant_scalar(n, 1.0),
                driver: Arc::new(|_s, y, _z, out: &mut [f64]| {
                    for (o, yi) in out.iter_mut().zip(y) {
                        *o = -yi;
                    }
                }),
                noise_coeff: zero_fn(),
                lipschitz_c: 1.0,
                lipschitz_alpha: 0.0,
            };
            let sol = solve_bdsde(&nm, &coeffs, 1e-13, 200, 0).unwrap();
            (sol.y[0].expect()[0] - (-1.0f64).exp()).abs()
        };
        let e10 = run(10);
        assert!(e10 <= 0.03, "error at N=10: {e10}");
        let e5 = run(5);
        let ratio = e5 / e10;
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn step_size_guard() {
        let nm = noise(1.0, 2);
        let coeffs = BdsdeCoefficients {
            terminal: RandomField::zero(AlgebraLevel::f_w(2, 2), 1),
            driver: zero_fn(),
            noise_coeff: zero_fn(),
            lipschitz_c: 2.5,
            lipschitz_alpha: 0.0,
        };
        assert!(matches!(
            solve_bdsde(&nm, &coeffs, 1e-12, 100, 0),
            Err(Error::StepSize(_))
        ));
    }

    #[test]
    fn measurability_of_solution() {
        let nm = noise(1.0, 4);
        let coeffs = BdsdeCoefficients {
            terminal: nm.w_at(4).map_atoms(1, |v, o| o[0] = v[0] * v[0]),
            driver: Arc::new(|s, y, z, out: &mut [f64]| {
                out[0] = 0.3 * y[0] + 0.2 * z[0] + s;
            }),
            noise_coeff: Arc::new(|_s, y, z, out: &mut [f64]| {
                out[0] = 0.3 * y[0] + 0.2 * z[0];
            }),
            lipschitz_c: 0.5,
            lipschitz_alpha: 0.1,
        };
        coeffs.verify_constants(200, 7).unwrap();
        let sol = solve_bdsde(&nm, &coeffs, 1e-13, 200, 0).unwrap();
        for i in 0..=4 {
            let (ok, dev) = measurability_check(&sol.y[i], AlgebraLevel::f_t(4, i), 1e-12);
            assert!(ok, "Y_{i} deviation {dev}");
        }
        for i in 0..4 {
            let (ok, dev) = measurability_check(&sol.z[i], AlgebraLevel::f_t(4, i), 1e-12);
            assert!(ok, "Z_{i} deviation {dev}");
        }
        let res = bdsde_residual(&nm, &sol, &coeffs);
        assert!(res.max_abs < 1e-10, "residual {}", res.max_abs);
    }

    #[test]
    fn lipschitz_violation_detected() {
        let coeffs = BdsdeCoefficients {
            terminal: RandomField::zero(AlgebraLevel::f_w(2, 2), 1),
            driver: Arc::new(|_s, y, _z, out: &mut [f64]| out[0] = 10.0 * y[0]),
            noise_coeff: zero_fn(),
            lipschitz_c: 1.0,
            lipschitz_alpha: 0.5,
        };
        assert!(coeffs.verify_constants(200, 3).is_err());
    }

    #[test]
    fn inner_iteration_contracts() {
        let nm = noise(1.0, 5);
        let coeffs = BdsdeCoefficients {
            terminal: nm.w_at(5),
            driver: Arc::new(|_s, y, _z, out: &mut [f64]| out[0] = y[0].sin()),
            noise_coeff: zero_fn(),
            lipschitz_c: 1.0,
            lipschitz_alpha: 0.0,
        };
        let sol = solve_bdsde(&nm, &coeffs, 1e-12, 100, 0).unwrap();
        // c*dt = 0.2, so each step should converge quickly
        for &it in &sol.diagnostics.inner_iterations {
            assert!(it <= 25);
        }
        assert_abs_diff_eq!(
            bdsde_residual(&nm, &sol, &coeffs).max_abs,
            0.0,
            epsilon = 1e-9
        );
    }
}
