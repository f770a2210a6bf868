//! Exact probability core: the uniform time grid, the exhaustive two-noise
//! binary tree, random fields tagged with their measurability level, and
//! exact (finite-average) expectation and conditional expectation.
//!
//! The model replaces the two independent Brownian motions by Rademacher
//! increments `+-sqrt(dt)`, so second moments are exact and every
//! conditional expectation is a finite average over independent sign
//! coordinates. A sub-sigma-algebra is described by an [`AlgebraLevel`]
//! `(a, b)`, standing for `sigma(eps_1..eps_a, eta_{b+1}..eta_N)`: a prefix
//! of the W-signs and a suffix of the B-signs. This is exactly the family
//! of algebras the doubly stochastic framework uses (`F_t^W v F_{s,T}^B`).

use crate::error::{Error, Result};
use crate::par;

/// Default ceiling on the number of steps: a full field has `4^N` atoms.
pub const DEFAULT_STEP_GUARD: usize = 10;

/// Uniform partition of `[0, T]` into `N` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        Self::with_guard(horizon, steps, DEFAULT_STEP_GUARD)
    }

    pub fn with_guard(horizon: f64, steps: usize, guard: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be a positive real, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if steps > guard {
            return Err(Error::Config(format!(
                "steps = {steps} exceeds the memory guard {guard} (full fields have 4^N atoms)"
            )));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node `t_i = i * dt`, for `i = 0..=N`.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.steps);
        i as f64 * self.dt
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|i| self.node(i))
    }
}

/// The sub-sigma-algebra `sigma(eps_1..eps_a, eta_{b+1}..eta_N)` on an
/// `N`-step tree: `a` is the W-prefix depth, `b` the B-suffix start.
///
/// `F_{t_i}` is `(i, i)`, `F^W_{t_i}` is `(i, N)`, `F^B_{t_i,T}` is `(0, i)`
/// and `F_T = F^W_T` is `(N, N)` (the terminal B-algebra is trivial).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlgebraLevel {
    steps: usize,
    w_depth: usize,
    b_start: usize,
}

impl AlgebraLevel {
    pub fn new(steps: usize, w_depth: usize, b_start: usize) -> Self {
        assert!(w_depth <= steps && b_start <= steps);
        Self {
            steps,
            w_depth,
            b_start,
        }
    }

    /// The full atom space `sigma(eps_1..eps_N, eta_1..eta_N)`.
    pub fn full(steps: usize) -> Self {
        Self::new(steps, steps, 0)
    }

    /// The trivial algebra (single atom).
    pub fn trivial(steps: usize) -> Self {
        Self::new(steps, 0, steps)
    }

    /// `F_{t_i} = F^W_{t_i} v F^B_{t_i,T}`.
    pub fn f_t(steps: usize, i: usize) -> Self {
        Self::new(steps, i, i)
    }

    /// `F^W_{t_i}`.
    pub fn f_w(steps: usize, i: usize) -> Self {
        Self::new(steps, i, steps)
    }

    /// `F^B_{t_i,T}`.
    pub fn f_b_tail(steps: usize, i: usize) -> Self {
        Self::new(steps, 0, i)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn w_depth(&self) -> usize {
        self.w_depth
    }

    pub fn b_start(&self) -> usize {
        self.b_start
    }

    /// Number of B-suffix coordinates `eta_{b+1}..eta_N`.
    pub fn b_coords(&self) -> usize {
        self.steps - self.b_start
    }

    /// Number of atoms, `2^(a + N - b)`.
    pub fn atoms(&self) -> usize {
        1usize << (self.w_depth + self.b_coords())
    }

    /// Containment: `other` is a sub-algebra of `self` iff
    /// `other.a <= self.a` and `other.b >= self.b`.
    pub fn contains(&self, other: &AlgebraLevel) -> bool {
        debug_assert_eq!(self.steps, other.steps);
        other.w_depth <= self.w_depth && other.b_start >= self.b_start
    }

    /// Smallest common refinement: `(max a, min b)`.
    pub fn join(&self, other: &AlgebraLevel) -> AlgebraLevel {
        debug_assert_eq!(self.steps, other.steps);
        AlgebraLevel::new(
            self.steps,
            self.w_depth.max(other.w_depth),
            self.b_start.min(other.b_start),
        )
    }
}

/// A random variable on the tree with values in `R^k`, stored densely over
/// the atoms of its declared [`AlgebraLevel`].
///
/// Atom layout: index `= w_bits * 2^(N-b) + b_bits`, where bit `j` of
/// `w_bits` is the sign of `eps_{j+1}` and bit `m` of `b_bits` is the sign
/// of `eta_{b+1+m}` (0 encodes -1, 1 encodes +1).
#[derive(Debug, Clone, PartialEq)]
pub struct RandomField {
    level: AlgebraLevel,
    dim: usize,
    values: Vec<f64>,
}

#[inline]
fn sign(bits: usize, pos: usize) -> f64 {
    if (bits >> pos) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

impl RandomField {
    /// Build a field from a function of the level's atom coordinates.
    pub fn from_fn<F>(level: AlgebraLevel, dim: usize, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]) + Sync + Send,
    {
        assert!(dim > 0);
        let b_atoms = 1usize << level.b_coords();
        let mut values = vec![0.0; level.atoms() * dim];
        par::fill_chunks(&mut values, dim, |idx, out| {
            f(idx / b_atoms, idx % b_atoms, out)
        });
        Self { level, dim, values }
    }

    /// Constant field at the trivial level.
    pub fn constant(steps: usize, value: &[f64]) -> Self {
        Self {
            level: AlgebraLevel::trivial(steps),
            dim: value.len(),
            values: value.to_vec(),
        }
    }

    /// Constant scalar field.
    pub fn constant_scalar(steps: usize, value: f64) -> Self {
        Self::constant(steps, &[value])
    }

    /// Build a field from a prefilled dense value buffer.
    pub(crate) fn from_parts(level: AlgebraLevel, dim: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), level.atoms() * dim);
        Self { level, dim, values }
    }

    pub fn zero(level: AlgebraLevel, dim: usize) -> Self {
        Self {
            level,
            dim,
            values: vec![0.0; level.atoms() * dim],
        }
    }

    pub fn level(&self) -> AlgebraLevel {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.level.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value on the atom containing the full-tree coordinates
    /// (`w_full` bit `j` = sign of `eps_{j+1}`, `b_full` bit `m` = sign of
    /// `eta_{m+1}`).
    pub fn value_at(&self, w_full: usize, b_full: usize) -> &[f64] {
        let a = self.level.w_depth;
        let b = self.level.b_start;
        let w = w_full & ((1usize << a) - 1);
        let bb = b_full >> b;
        let idx = w * (1usize << self.level.b_coords()) + bb;
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Exact expectation: uniform average over the atoms of the level.
    pub fn expect(&self) -> Vec<f64> {
        let atoms = self.level.atoms();
        let mut acc = vec![0.0; self.dim];
        for chunk in self.values.chunks(self.dim) {
            for (a, v) in acc.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= atoms as f64;
        }
        acc
    }

    /// `E[|X|^2]`, summed over components.
    pub fn second_moment(&self) -> f64 {
        let atoms = self.level.atoms() as f64;
        self.values.iter().map(|v| v * v).sum::<f64>() / atoms
    }

    /// Largest absolute value over atoms and components.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Exact conditional expectation onto `target`: averages over every
    /// coordinate the target excludes. Because the sign coordinates are
    /// independent and uniform this is the exact L^2 projection.
    pub fn project(&self, target: AlgebraLevel) -> RandomField {
        debug_assert_eq!(target.steps, self.level.steps);
        let (a, b) = (self.level.w_depth, self.level.b_start);
        let (ap, bp) = (target.w_depth, target.b_start);
        if target.contains(&self.level) {
            return self.expand(target);
        }
        let d_w = a.saturating_sub(ap);
        let d_b = bp.saturating_sub(b);
        let inner = 1usize << (d_w + d_b);
        let keep_w = a.min(ap);
        let b_shift = b.saturating_sub(bp);
        let src_b_atoms = 1usize << self.level.b_coords();
        let out_b_atoms = 1usize << target.b_coords();
        let dim = self.dim;
        let src = &self.values;
        let mut values = vec![0.0; target.atoms() * dim];
        par::fill_chunks(&mut values, dim, |idx, out| {
            let wq = idx / out_b_atoms;
            let bq = idx % out_b_atoms;
            for c in 0..inner {
                let cw = c & ((1usize << d_w) - 1);
                let cb = c >> d_w;
                let w_src = (wq & ((1usize << keep_w) - 1)) | (cw << keep_w);
                let b_src = if d_b > 0 { (bq << d_b) | cb } else { bq >> b_shift };
                let base = (w_src * src_b_atoms + b_src) * dim;
                for (o, v) in out.iter_mut().zip(&src[base..base + dim]) {
                    *o += v;
                }
            }
            let scale = 1.0 / inner as f64;
            for o in out.iter_mut() {
                *o *= scale;
            }
        });
        RandomField {
            level: target,
            dim,
            values,
        }
    }

    /// Re-express the field on a finer level (pure replication).
    pub fn expand(&self, finer: AlgebraLevel) -> RandomField {
        assert!(
            finer.contains(&self.level),
            "expand target must refine the field's level"
        );
        if finer == self.level {
            return self.clone();
        }
        let (a, b) = (self.level.w_depth, self.level.b_start);
        let src_b_atoms = 1usize << self.level.b_coords();
        let out_b_atoms = 1usize << finer.b_coords();
        let shift = b - finer.b_start;
        let dim = self.dim;
        let src = &self.values;
        let mut values = vec![0.0; finer.atoms() * dim];
        par::fill_chunks(&mut values, dim, |idx, out| {
            let wq = idx / out_b_atoms;
            let bq = idx % out_b_atoms;
            let w_src = wq & ((1usize << a) - 1);
            let b_src = bq >> shift;
            let base = (w_src * src_b_atoms + b_src) * dim;
            out.copy_from_slice(&src[base..base + dim]);
        });
        RandomField {
            level: finer,
            dim,
            values,
        }
    }

    /// Componentwise combination of two fields on their join level.
    pub fn zip_with<F>(&self, other: &RandomField, op: F) -> RandomField
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let level = self.level.join(&other.level);
        let lhs = self.expand(level);
        let rhs = other.expand(level);
        let values = lhs
            .values
            .iter()
            .zip(&rhs.values)
            .map(|(x, y)| op(*x, *y))
            .collect();
        RandomField {
            level,
            dim: self.dim,
            values,
        }
    }

    pub fn add(&self, other: &RandomField) -> RandomField {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &RandomField) -> RandomField {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn scale(&self, s: f64) -> RandomField {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= s;
        }
        out
    }

    /// Multiply a (possibly vector-valued) field by a scalar field.
    pub fn mul_scalar_field(&self, scalar: &RandomField) -> RandomField {
        assert_eq!(scalar.dim, 1, "multiplier must be scalar");
        let level = self.level.join(&scalar.level);
        let lhs = self.expand(level);
        let rhs = scalar.expand(level);
        let dim = self.dim;
        let mut values = lhs.values;
        for (chunk, s) in values.chunks_mut(dim).zip(&rhs.values) {
            for v in chunk.iter_mut() {
                *v *= s;
            }
        }
        RandomField {
            level,
            dim,
            values,
        }
    }

    /// Apply a pointwise map to the component vector of every atom.
    pub fn map_atoms<F>(&self, out_dim: usize, f: F) -> RandomField
    where
        F: Fn(&[f64], &mut [f64]) + Sync + Send,
    {
        let dim = self.dim;
        let src = &self.values;
        let mut values = vec![0.0; self.level.atoms() * out_dim];
        par::fill_chunks(&mut values, out_dim, |idx, out| {
            f(&src[idx * dim..(idx + 1) * dim], out)
        });
        RandomField {
            level: self.level,
            dim: out_dim,
            values,
        }
    }

    /// Largest atomwise deviation from `other`, compared on the join level.
    pub fn max_deviation(&self, other: &RandomField) -> f64 {
        self.sub(other).sup_abs()
    }
}

/// Exact expectation of a field (free function form).
pub fn expect(f: &RandomField) -> Vec<f64> {
    f.expect()
}

/// Exact conditional expectation of `f` given `target`.
pub fn cond_expect(f: &RandomField, target: AlgebraLevel) -> RandomField {
    f.project(target)
}

/// True iff projecting `f` onto `claimed` moves no atom value by more than
/// `tol`; also returns the max deviation.
pub fn measurability_check(f: &RandomField, claimed: AlgebraLevel, tol: f64) -> (bool, f64) {
    let projected = f.project(claimed);
    let dev = f.max_deviation(&projected);
    (dev <= tol, dev)
}

/// The exhaustive two-noise binary tree: signed increments `+-sqrt(dt)` for
/// W and B with uniform atom weight `4^-N`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    grid: TimeGrid,
}

impl NoiseModel {
    pub fn new(grid: TimeGrid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.grid.dt.sqrt()
    }

    /// `dW_i = W_{t_{i+1}} - W_{t_i} = sqrt(dt) * eps_{i+1}`, level `(i+1, N)`.
    pub fn w_increment(&self, i: usize) -> RandomField {
        let n = self.steps();
        assert!(i < n);
        let s = self.sqrt_dt();
        RandomField::from_fn(AlgebraLevel::f_w(n, i + 1), 1, move |w, _b, out| {
            out[0] = s * sign(w, i);
        })
    }

    /// `dB_i = B_{t_{i+1}} - B_{t_i} = sqrt(dt) * eta_{i+1}`, level `(0, i)`.
    pub fn b_increment(&self, i: usize) -> RandomField {
        let n = self.steps();
        assert!(i < n);
        let s = self.sqrt_dt();
        RandomField::from_fn(AlgebraLevel::f_b_tail(n, i), 1, move |_w, b, out| {
            out[0] = s * sign(b, 0);
        })
    }

    /// `W_{t_i}`, level `(i, N)`.
    pub fn w_at(&self, i: usize) -> RandomField {
        let n = self.steps();
        assert!(i <= n);
        let s = self.sqrt_dt();
        RandomField::from_fn(AlgebraLevel::f_w(n, i), 1, move |w, _b, out| {
            out[0] = s * (0..i).map(|j| sign(w, j)).sum::<f64>();
        })
    }

    /// `B_T - B_{t_i}`, level `(0, i)`.
    pub fn b_tail(&self, i: usize) -> RandomField {
        let n = self.steps();
        assert!(i <= n);
        let s = self.sqrt_dt();
        RandomField::from_fn(AlgebraLevel::f_b_tail(n, i), 1, move |_w, b, out| {
            out[0] = s * (0..n - i).map(|m| sign(b, m)).sum::<f64>();
        })
    }

    /// `B_{t_i}`; depends on the leading B-signs, so it lives at level `(0, 0)`.
    pub fn b_at(&self, i: usize) -> RandomField {
        let n = self.steps();
        assert!(i <= n);
        let s = self.sqrt_dt();
        RandomField::from_fn(AlgebraLevel::f_b_tail(n, 0), 1, move |_w, b, out| {
            out[0] = s * (0..i).map(|m| sign(b, m)).sum::<f64>();
        })
    }
}

/// Region tag for entries of a [`TwoParamField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// `t <= s`: the row's own equation pins this entry.
    Delta,
    /// `s < t`: pinned only through a completion rule.
    DeltaC,
}

/// The two-parameter process `Z(t, s)`: rows are first-argument nodes
/// `t_k` for `k = 0..=N`, columns are intervals `[t_i, t_{i+1})` for
/// `i = 0..N-1`. Row `N` carries only off-diagonal (`Delta^c`) entries; the
/// general solver needs `Z(T, s)` through its completion.
#[derive(Debug, Clone)]
pub struct TwoParamField {
    steps: usize,
    dim: usize,
    rows: Vec<Vec<RandomField>>,
}

impl TwoParamField {
    pub fn zero(steps: usize, dim: usize) -> Self {
        let rows = (0..=steps)
            .map(|k| {
                (0..steps)
                    .map(|i| RandomField::zero(Self::declared_level_for(steps, k, i), dim))
                    .collect()
            })
            .collect();
        Self { steps, dim, rows }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn region(&self, k: usize, i: usize) -> Region {
        if i >= k {
            Region::Delta
        } else {
            Region::DeltaC
        }
    }

    fn declared_level_for(steps: usize, k: usize, i: usize) -> AlgebraLevel {
        if i >= k {
            // Delta: F_{t_i}-measurable.
            AlgebraLevel::f_t(steps, i)
        } else {
            // Delta^c: sigma(eps_1..eps_i, eta_{k+1}..eta_N).
            AlgebraLevel::new(steps, i, k)
        }
    }

    /// The level an entry must be measurable at per its region.
    pub fn declared_level(&self, k: usize, i: usize) -> AlgebraLevel {
        Self::declared_level_for(self.steps, k, i)
    }

    pub fn get(&self, k: usize, i: usize) -> &RandomField {
        &self.rows[k][i]
    }

    pub fn set(&mut self, k: usize, i: usize, f: RandomField) {
        assert_eq!(f.dim(), self.dim);
        self.rows[k][i] = f;
    }

    /// Entries of row `k` on the Delta region (`i >= k`).
    pub fn delta_row(&self, k: usize) -> &[RandomField] {
        &self.rows[k][k.min(self.steps)..]
    }

    /// Largest measurability deviation over all entries.
    pub fn max_level_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for k in 0..=self.steps {
            for i in 0..self.steps {
                let (_, d) = measurability_check(&self.rows[k][i], self.declared_level(k, i), 0.0);
                dev = dev.max(d);
            }
        }
        dev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.dt(), 0.25);
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = TimeGrid::new(2.0, 1).unwrap();
        assert_eq!(g.dt(), 2.0);
    }

    #[test]
    fn grid_guard_and_errors() {
        assert!(TimeGrid::new(1.0, 11).is_err());
        assert!(TimeGrid::with_guard(1.0, 11, 12).is_ok());
        assert!(TimeGrid::new(-1.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn level_containment() {
        let n = 4;
        let f_t2 = AlgebraLevel::f_t(n, 2);
        let full = AlgebraLevel::full(n);
        assert!(full.contains(&f_t2));
        assert!(!f_t2.contains(&full));
        // F^B_{t_k,T} = (0,k) is contained in F_{t_k} = (k,k)
        assert!(AlgebraLevel::f_t(n, 2).contains(&AlgebraLevel::f_b_tail(n, 2)));
        assert_eq!(f_t2.atoms(), 1 << 4);
    }

    #[test]
    fn expect_constant_and_terminal() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let noise = NoiseModel::new(g);
        let c = RandomField::constant(4, &[3.5, -1.0]);
        assert_eq!(c.expect(), vec![3.5, -1.0]);
        // E[W_T] = 0 by sign symmetry
        assert_abs_diff_eq!(noise.w_at(4).expect()[0], 0.0, epsilon = 1e-15);
        // E[(B_T)^2] = T exactly
        let bt = noise.b_at(4);
        let sq = bt.map_atoms(1, |v, out| out[0] = v[0] * v[0]);
        assert_abs_diff_eq!(sq.expect()[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn increments_have_exact_moments() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let noise = NoiseModel::new(g);
        for i in 0..4 {
            let dw = noise.w_increment(i);
            let db = noise.b_increment(i);
            assert_abs_diff_eq!(dw.expect()[0], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(db.expect()[0], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(dw.second_moment(), 0.25, epsilon = 1e-15);
            assert_abs_diff_eq!(db.second_moment(), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn cond_expect_of_terminal_w_is_path() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let noise = NoiseModel::new(g);
        let wt = noise.w_at(4);
        for i in 0..=4 {
            let proj = cond_expect(&wt, AlgebraLevel::f_w(4, i));
            assert!(proj.max_deviation(&noise.w_at(i)) < 1e-14);
        }
    }

    #[test]
    fn cond_expect_leaves_measurable_field_alone() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let noise = NoiseModel::new(g);
        let k = 2;
        let tail = noise.b_tail(k); // level (0, k) is contained in (k, k)
        let proj = cond_expect(&tail, AlgebraLevel::f_t(4, k));
        assert!(proj.max_deviation(&tail) < 1e-15);
    }

    #[test]
    fn cond_expect_product_enumeration() {
        // E[W_T * (B_T - B_0) | F_{t_i}] = W_{t_i} * (B_T - B_{t_i})
        let n = 3;
        let g = TimeGrid::new(1.0, n).unwrap();
        let noise = NoiseModel::new(g);
        let prod = noise.w_at(n).mul_scalar_field(&noise.b_tail(0));
        for i in 0..=n {
            let proj = cond_expect(&prod, AlgebraLevel::f_t(n, i));
            let expected = noise.w_at(i).mul_scalar_field(&noise.b_tail(i));
            assert!(proj.max_deviation(&expected) < 1e-13);
        }
    }

    #[test]
    fn measurability_detects_excluded_coordinate() {
        let n = 2;
        let g = TimeGrid::new(1.0, n).unwrap();
        // field = eps_2 (the sign itself), at full level
        let f = RandomField::from_fn(AlgebraLevel::full(n), 1, |w, _b, out| {
            out[0] = sign(w, 1);
        });
        let (ok, dev) = measurability_check(&f, AlgebraLevel::new(n, 1, 2), 1e-12);
        assert!(!ok);
        assert_abs_diff_eq!(dev, 1.0, epsilon = 1e-15);
        let c = RandomField::constant_scalar(n, 7.0);
        let (ok, dev) = measurability_check(&c, AlgebraLevel::trivial(n), 0.0);
        assert!(ok);
        assert_eq!(dev, 0.0);
        let _ = g;
    }

    #[test]
    fn tower_and_idempotence() {
        let n = 4;
        let g = TimeGrid::new(1.0, n).unwrap();
        let noise = NoiseModel::new(g);
        // a genuinely mixed field
        let f = noise
            .w_at(n)
            .mul_scalar_field(&noise.b_at(n))
            .add(&noise.w_at(2).map_atoms(1, |v, o| o[0] = v[0] * v[0] * v[0]));
        let l1 = AlgebraLevel::f_t(n, 3);
        let l2 = AlgebraLevel::f_t(n, 1); // (1,1)... not contained in (3,3)
        let l2b = AlgebraLevel::new(n, 1, 3); // contained in (3,3)
        assert!(l1.contains(&l2b));
        let via = cond_expect(&cond_expect(&f, l1), l2b);
        let direct = cond_expect(&f, l2b);
        assert!(via.max_deviation(&direct) < 1e-12);
        let once = cond_expect(&f, l2);
        let twice = cond_expect(&once, l2);
        assert!(once.max_deviation(&twice) < 1e-15);
    }

    #[test]
    fn jensen_and_independence() {
        let n = 4;
        let g = TimeGrid::new(1.0, n).unwrap();
        let noise = NoiseModel::new(g);
        let f = noise.w_at(n).map_atoms(1, |v, o| o[0] = (v[0] + 0.3).powi(2));
        let l = AlgebraLevel::f_t(n, 2);
        assert!(cond_expect(&f, l).second_moment() <= f.second_moment() + 1e-12);
        // independence factorization: f at (2, N) vs g on eta_1..eta_2 only
        let fa = noise.w_at(2);
        let gb = RandomField::from_fn(AlgebraLevel::f_b_tail(n, 0), 1, |_w, b, o| {
            o[0] = sign(b, 0) + 2.0 * sign(b, 1) + 1.0;
        });
        let prod = fa.mul_scalar_field(&gb);
        let lhs = prod.expect()[0];
        let rhs = fa.expect()[0] * gb.expect()[0];
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn two_param_levels() {
        let z = TwoParamField::zero(4, 1);
        assert_eq!(z.region(1, 3), Region::Delta);
        assert_eq!(z.region(3, 1), Region::DeltaC);
        assert_eq!(z.declared_level(3, 1), AlgebraLevel::new(4, 1, 3));
        assert_eq!(z.declared_level(1, 3), AlgebraLevel::f_t(4, 3));
        assert_eq!(z.max_level_deviation(), 0.0);
    }
}
