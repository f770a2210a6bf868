//! Discrete forward and backward Ito integrals on the tree, their exact
//! isometries, and a numerical check of the backward Ito formula.
//!
//! Conventions: the forward integral pairs a left-endpoint-measurable
//! integrand `h_i` (no dependence on `eps_{i+1}..eps_N`) with
//! `dW_i`; the backward integral pairs a right-endpoint-measurable
//! integrand (no dependence on `eta_1..eta_{i+1}`) with `dB_i`. Both make
//! the corresponding isometry exact on the tree.

use crate::error::{Error, Result};
use crate::probability::{AlgebraLevel, NoiseModel, RandomField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Paired with `dW`; `h_i` must not depend on `eps_{i+1}..eps_N`.
    Forward,
    /// Paired with `dB`; `h_i` must not depend on `eta_1..eta_{i+1}`.
    Backward,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::Forward => "forward",
            Orientation::Backward => "backward",
        }
    }
}

/// Per-interval integrand `h_0..h_{N-1}` with a declared orientation.
#[derive(Debug, Clone)]
pub struct IntervalProcess {
    orientation: Orientation,
    entries: Vec<RandomField>,
}

impl IntervalProcess {
    pub fn new(orientation: Orientation, entries: Vec<RandomField>) -> Self {
        assert!(!entries.is_empty());
        let steps = entries[0].steps();
        assert!(entries.len() == steps, "one entry per interval expected");
        assert!(entries.iter().all(|e| e.steps() == steps));
        Self {
            orientation,
            entries,
        }
    }

    pub fn forward(entries: Vec<RandomField>) -> Self {
        Self::new(Orientation::Forward, entries)
    }

    pub fn backward(entries: Vec<RandomField>) -> Self {
        Self::new(Orientation::Backward, entries)
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn steps(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].dim()
    }

    pub fn entry(&self, i: usize) -> &RandomField {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[RandomField] {
        &self.entries
    }

    /// The level the orientation requires `h_i` to be measurable at.
    pub fn required_level(&self, i: usize) -> AlgebraLevel {
        let n = self.steps();
        match self.orientation {
            // no dependence on eps beyond i; any eta is fine
            Orientation::Forward => AlgebraLevel::new(n, i, 0),
            // no dependence on eta_1..eta_{i+1}; any eps is fine
            Orientation::Backward => AlgebraLevel::new(n, n, i + 1),
        }
    }

    /// Verify the orientation invariant on `from..to`.
    pub fn check_orientation(&self, from: usize, to: usize, tol: f64) -> Result<()> {
        for i in from..to {
            let (ok, dev) =
                crate::probability::measurability_check(&self.entries[i], self.required_level(i), tol);
            if !ok {
                return Err(Error::Orientation {
                    orientation: self.orientation.name(),
                    interval: i,
                    deviation: dev,
                });
            }
        }
        Ok(())
    }
}

const ORIENTATION_TOL: f64 = 1e-12;

/// `sum_{i=from}^{to-1} h_i dW_i` for a forward-oriented integrand.
pub fn forward_integral(
    noise: &NoiseModel,
    h: &IntervalProcess,
    from: usize,
    to: usize,
) -> Result<RandomField> {
    assert_eq!(h.orientation(), Orientation::Forward);
    h.check_orientation(from, to, ORIENTATION_TOL)?;
    Ok(sum_paired(noise, h, from, to, true))
}

/// `sum_{i=from}^{to-1} h_i dB_i` for a backward-oriented integrand, with
/// `h_i` attributed to the right endpoint of the interval.
pub fn backward_integral(
    noise: &NoiseModel,
    h: &IntervalProcess,
    from: usize,
    to: usize,
) -> Result<RandomField> {
    assert_eq!(h.orientation(), Orientation::Backward);
    h.check_orientation(from, to, ORIENTATION_TOL)?;
    Ok(sum_paired(noise, h, from, to, false))
}

fn sum_paired(
    noise: &NoiseModel,
    h: &IntervalProcess,
    from: usize,
    to: usize,
    forward: bool,
) -> RandomField {
    let n = h.steps();
    let dim = h.dim();
    debug_assert!(from <= to && to <= n);
    let mut acc = RandomField::zero(AlgebraLevel::trivial(n), dim);
    for i in from..to {
        let inc = if forward {
            noise.w_increment(i)
        } else {
            noise.b_increment(i)
        };
        acc = acc.add(&h.entry(i).mul_scalar_field(&inc));
    }
    acc
}

/// Both sides of the Ito isometry for the full span, and their gap.
#[derive(Debug, Clone, Copy)]
pub struct IsometryReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// `E[(integral)^2]` against `sum_i E[|h_i|^2] dt`; exact under the
/// orientation invariant.
pub fn isometry_check(noise: &NoiseModel, h: &IntervalProcess) -> Result<IsometryReport> {
    let n = h.steps();
    h.check_orientation(0, n, ORIENTATION_TOL)?;
    let integral = sum_paired(noise, h, 0, n, h.orientation() == Orientation::Forward);
    let lhs = integral.second_moment();
    let dt = noise.grid().dt();
    let rhs: f64 = (0..n).map(|i| h.entry(i).second_moment() * dt).sum();
    Ok(IsometryReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Scalar polynomial with coefficients in increasing degree order.
#[derive(Debug, Clone)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct ItoFormulaEntry {
    pub steps: usize,
    pub sup_defect: f64,
    pub rms_defect: f64,
}

/// Per-`N` defects of the discrete backward Ito identity and the empirical
/// convergence order (fitted on the mean-square defect).
#[derive(Debug, Clone)]
pub struct ItoFormulaReport {
    pub entries: Vec<ItoFormulaEntry>,
    pub empirical_order: Option<f64>,
}

/// Check the backward Ito formula
/// `phi(a_t) = phi(a_0) + int phi'(a) b ds + int phi'(a) g dB
///  - 1/2 int phi''(a) g^2 ds`
/// for `a` accumulated discretely from `a_{i+1} = a_i + b_i dt + g_i dB_i`.
/// The stochastic term and the correction are evaluated at the right
/// endpoint, matching the backward-integral convention. The `1/2` factor in
/// the correction is the standard second-order backward Ito term.
///
/// `beta` and `gamma` build the interval coefficients for a given tree;
/// `phi` is a polynomial up to degree 4.
pub fn backward_ito_formula_check<FB, FG>(
    phi: &Polynomial,
    beta: FB,
    gamma: FG,
    alpha0: f64,
    horizon: f64,
    steps_sequence: &[usize],
) -> Result<ItoFormulaReport>
where
    FB: Fn(&NoiseModel, usize) -> RandomField,
    FG: Fn(&NoiseModel, usize) -> RandomField,
{
    assert!(phi.0.len() <= 5, "polynomial degree at most 4");
    let d1 = phi.derivative();
    let d2 = d1.derivative();
    let mut entries = Vec::new();
    for &n in steps_sequence {
        let grid = crate::probability::TimeGrid::new(horizon, n)?;
        let noise = NoiseModel::new(grid);
        let dt = grid.dt();
        // accumulate alpha along the tree
        let mut alpha = vec![RandomField::constant_scalar(n, alpha0)];
        for i in 0..n {
            let b = beta(&noise, i);
            let g = gamma(&noise, i);
            let step = b.scale(dt).add(&g.mul_scalar_field(&noise.b_increment(i)));
            alpha.push(alpha[i].add(&step));
        }
        let phi_t = alpha[n].map_atoms(1, |v, o| o[0] = phi.eval(v[0]));
        let mut rhs = alpha[0].map_atoms(1, |v, o| o[0] = phi.eval(v[0]));
        for i in 0..n {
            let b = beta(&noise, i);
            let g = gamma(&noise, i);
            let d1_right = alpha[i + 1].map_atoms(1, |v, o| o[0] = d1.eval(v[0]));
            let d2_right = alpha[i + 1].map_atoms(1, |v, o| o[0] = d2.eval(v[0]));
            rhs = rhs
                .add(&d1_right.mul_scalar_field(&b).scale(dt))
                .add(&d1_right
                    .mul_scalar_field(&g)
                    .mul_scalar_field(&noise.b_increment(i)))
                .sub(&d2_right
                    .mul_scalar_field(&g)
                    .mul_scalar_field(&g)
                    .scale(0.5 * dt));
        }
        let defect = phi_t.sub(&rhs);
        entries.push(ItoFormulaEntry {
            steps: n,
            sup_defect: defect.sup_abs(),
            rms_defect: defect.second_moment().sqrt(),
        });
    }
    let empirical_order = fit_order(&entries);
    Ok(ItoFormulaReport {
        entries,
        empirical_order,
    })
}

fn fit_order(entries: &[ItoFormulaEntry]) -> Option<f64> {
    let mut orders = Vec::new();
    for pair in entries.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.rms_defect > 1e-14 && b.rms_defect > 1e-14 {
            let ratio = a.rms_defect / b.rms_defect;
            let scale = b.steps as f64 / a.steps as f64;
            orders.push(ratio.ln() / scale.ln());
        }
    }
    if orders.is_empty() {
        None
    } else {
        Some(orders.iter().sum::<f64>() / orders.len() as f64)
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

    #[test]
    fn forward_of_ones_is_w_terminal() {
        let nm = noise(1.0, 4);
        let h = IntervalProcess::forward(
            (0..4).map(|_| RandomField::constant_scalar(4, 1.0)).collect(),
        );
        let int = forward_integral(&nm, &h, 0, 4).unwrap();
        assert!(int.max_deviation(&nm.w_at(4)) < 1e-14);
        let zero = IntervalProcess::forward(
            (0..4).map(|_| RandomField::constant_scalar(4, 0.0)).collect(),
        );
        let int = forward_integral(&nm, &zero, 0, 4).unwrap();
        assert_eq!(int.sup_abs(), 0.0);
    }

    #[test]
    fn forward_isometry_with_w_integrand() {
        // h_i = W_{t_i}: E[int] = 0 and E[int^2] = sum t_i dt
        let nm = noise(1.0, 4);
        let h = IntervalProcess::forward((0..4).map(|i| nm.w_at(i)).collect());
        let int = forward_integral(&nm, &h, 0, 4).unwrap();
        assert_abs_diff_eq!(int.expect()[0], 0.0, epsilon = 1e-14);
        let expected: f64 = (0..4).map(|i| nm.grid().node(i) * nm.grid().dt()).sum();
        assert_abs_diff_eq!(int.second_moment(), expected, epsilon = 1e-13);
        let rep = isometry_check(&nm, &h).unwrap();
        assert!(rep.gap < 1e-13);
    }

    #[test]
    fn backward_of_ones_is_b_terminal() {
        let nm = noise(1.0, 4);
        let h = IntervalProcess::backward(
            (0..4).map(|_| RandomField::constant_scalar(4, 1.0)).collect(),
        );
        let int = backward_integral(&nm, &h, 0, 4).unwrap();
        assert!(int.max_deviation(&nm.b_at(4)) < 1e-14);
    }

    #[test]
    fn backward_of_b_tail_matches_summation_by_parts() {
        // h_i = B_T - B_{t_{i+1}} integrates to (B_T^2 - T)/2 exactly
        let nm = noise(1.0, 4);
        let h = IntervalProcess::backward((0..4).map(|i| nm.b_tail(i + 1)).collect());
        let int = backward_integral(&nm, &h, 0, 4).unwrap();
        let expected = nm
            .b_at(4)
            .map_atoms(1, |v, o| o[0] = 0.5 * (v[0] * v[0] - 1.0));
        assert!(int.max_deviation(&expected) < 1e-13);
    }

    #[test]
    fn orientation_violations_are_rejected() {
        let nm = noise(1.0, 3);
        // backward integrand depending on eta_{i+1} (the interval's own sign)
        let bad = IntervalProcess::backward((0..3).map(|i| nm.b_increment(i)).collect());
        assert!(matches!(
            backward_integral(&nm, &bad, 0, 3),
            Err(Error::Orientation { .. })
        ));
        // forward integrand depending on a future eps
        let bad = IntervalProcess::forward((0..3).map(|_| nm.w_at(3)).collect());
        assert!(matches!(
            forward_integral(&nm, &bad, 0, 3),
            Err(Error::Orientation { .. })
        ));
    }

    #[test]
    fn backward_isometry_examples() {
        let nm = noise(1.0, 4);
        let c = IntervalProcess::backward(
            (0..4).map(|_| RandomField::constant_scalar(4, 3.0)).collect(),
        );
        let rep = isometry_check(&nm, &c).unwrap();
        assert_abs_diff_eq!(rep.lhs, 9.0, epsilon = 1e-13);
        assert!(rep.gap < 1e-13);
        // h_i = 2(B_T - B_{t_{i+1}})
        let h = IntervalProcess::backward((0..4).map(|i| nm.b_tail(i + 1).scale(2.0)).collect());
        let rep = isometry_check(&nm, &h).unwrap();
        let dt = nm.grid().dt();
        let expected: f64 = (0..4).map(|i| 4.0 * (1.0 - nm.grid().node(i + 1)) * dt).sum();
        assert_abs_diff_eq!(rep.lhs, expected, epsilon = 1e-13);
        assert!(rep.gap < 1e-13);
    }

    #[test]
    fn deterministic_integrand_orientation_agreement() {
        // with deterministic h, pairing h_i with dB_i gives the same field
        // whether h is declared forward or backward
        let nm = noise(1.0, 4);
        let entries: Vec<RandomField> = (0..4)
            .map(|i| RandomField::constant_scalar(4, 1.0 + i as f64))
            .collect();
        let hb = IntervalProcess::backward(entries.clone());
        let via_backward = backward_integral(&nm, &hb, 0, 4).unwrap();
        let direct = sum_paired(&nm, &IntervalProcess::forward(entries), 0, 4, false);
        assert!(via_backward.max_deviation(&direct) < 1e-15);
    }

    #[test]
    fn ito_formula_linear_is_exact() {
        let phi = Polynomial(vec![0.0, 1.0]);
        let rep = backward_ito_formula_check(
            &phi,
            |n, i| n.b_tail(i + 1),
            |n, _| RandomField::constant_scalar(n.steps(), 1.0),
            0.3,
            1.0,
            &[4, 6],
        )
        .unwrap();
        for e in &rep.entries {
            assert!(e.sup_defect < 1e-13, "linear case must be exact");
        }
    }

    #[test]
    fn ito_formula_square_is_exact_on_the_tree() {
        // phi(x) = x^2, beta = 0, gamma = 1: the identity
        // B_t^2 = 2 int B dB - t holds exactly because dB_i^2 = dt.
        let phi = Polynomial(vec![0.0, 0.0, 1.0]);
        let rep = backward_ito_formula_check(
            &phi,
            |n, _| RandomField::constant_scalar(n.steps(), 0.0),
            |n, _| RandomField::constant_scalar(n.steps(), 1.0),
            0.0,
            1.0,
            &[4, 8],
        )
        .unwrap();
        for e in &rep.entries {
            assert!(e.sup_defect < 1e-12);
        }
    }

    #[test]
    fn ito_formula_cubic_first_order_in_mean_square() {
        let phi = Polynomial(vec![0.0, 0.0, 0.0, 1.0]);
        let rep = backward_ito_formula_check(
            &phi,
            |n, _| RandomField::constant_scalar(n.steps(), 0.0),
            |n, _| RandomField::constant_scalar(n.steps(), 1.0),
            0.0,
            1.0,
            &[4, 8],
        )
        .unwrap();
        let order = rep.empirical_order.expect("nonzero defects");
        assert!(order >= 0.9, "reported order {order} below 1");
    }

    #[test]
    fn integral_linearity() {
        let nm = noise(1.0, 4);
        let h1 = IntervalProcess::backward((0..4).map(|i| nm.b_tail(i + 1)).collect());
        let h2 = IntervalProcess::backward(
            (0..4).map(|_| RandomField::constant_scalar(4, 2.0)).collect(),
        );
        let sum = IntervalProcess::backward(
            (0..4)
                .map(|i| h1.entry(i).add(h2.entry(i)))
                .collect(),
        );
        let a = backward_integral(&nm, &h1, 0, 4).unwrap();
        let b = backward_integral(&nm, &h2, 0, 4).unwrap();
        let c = backward_integral(&nm, &sum, 0, 4).unwrap();
        assert!(c.max_deviation(&a.add(&b)) < 1e-13);
    }
}
