//! Dense linear-system reference solve for scalar affine scenarios on
//! small trees. Used by the `oracle_equivalence` check suite: the whole
//! fixed-point system (path, row entries and completed off-region entries)
//! is stacked into one vector over raw atoms and solved by LU, without
//! going through the library's projection code.

use anyhow::bail;
use bdsvie_core::bdsvie::TerminalField;
use bdsvie_core::probability::NoiseModel;

/// Scalar affine driver `m_y y + m_z z + m_zeta zeta + a0 + a_t t + a_s s`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AffineDriver {
    pub m_y: f64,
    pub m_z: f64,
    pub m_zeta: f64,
    pub a0: f64,
    pub a_t: f64,
    pub a_s: f64,
}

impl AffineDriver {
    fn offset(&self, t: f64, s: f64) -> f64 {
        self.a0 + self.a_t * t + self.a_s * s
    }
}

pub struct DenseSolution {
    pub n: usize,
    side: usize,
    blocks: Vec<Vec<f64>>,
    delta: Vec<(usize, usize)>,
    deltac: Vec<(usize, usize)>,
}

impl DenseSolution {
    fn block_index(&self, k: usize, i: usize) -> usize {
        if i >= k {
            self.n + 1 + self.delta.iter().position(|&p| p == (k, i)).unwrap()
        } else {
            self.n + 1 + self.delta.len() + self.deltac.iter().position(|&p| p == (k, i)).unwrap()
        }
    }

    pub fn y_at(&self, k: usize, w: usize, b: usize) -> f64 {
        self.blocks[k][w * self.side + b]
    }

    pub fn z_at(&self, k: usize, i: usize, w: usize, b: usize) -> f64 {
        self.blocks[self.block_index(k, i)][w * self.side + b]
    }

    /// All two-parameter index pairs carried by the system.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.delta.iter().chain(self.deltac.iter()).copied().collect()
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

/// Solve the affine equation exactly on a tree with at most 3 steps.
/// Mirrors the row assembly and the two-half off-region completion of the
/// iterative solver, but as one dense linear system.
pub fn dense_affine_solve(
    noise: &NoiseModel,
    psi: &TerminalField,
    f: AffineDriver,
    g: AffineDriver,
) -> anyhow::Result<DenseSolution> {
    let n = noise.steps();
    if n > 3 {
        bail!("the dense reference solve is limited to N <= 3 (got N = {n})");
    }
    if psi.dim() != 1 {
        bail!("the dense reference solve is scalar only");
    }
    let dt = noise.grid().dt();
    let sqrt_dt = dt.sqrt();
    let side = 1usize << n;
    let atoms = side * side;
    let node = |i: usize| noise.grid().node(i);

    let delta: Vec<(usize, usize)> = (0..n).flat_map(|k| (k..n).map(move |i| (k, i))).collect();
    let deltac: Vec<(usize, usize)> = (1..=n).flat_map(|k| (0..k).map(move |j| (k, j))).collect();
    let nblocks = n + 1 + delta.len() + deltac.len();
    let dim = nblocks * atoms;

    let proj = |v: &[f64], a: usize, b: usize| -> Vec<f64> {
        let mask = (1usize << a) - 1;
        let mut out = vec![0.0; atoms];
        for w in 0..side {
            for bb in 0..side {
                let mut sum = 0.0;
                let mut cnt = 0usize;
                for w2 in 0..side {
                    for b2 in 0..side {
                        if w2 & mask == w & mask && b2 >> b == bb >> b {
                            sum += v[w2 * side + b2];
                            cnt += 1;
                        }
                    }
                }
                out[w * side + bb] = sum / cnt as f64;
            }
        }
        out
    };
    let sign_w = |w: usize, i: usize| if (w >> i) & 1 == 1 { sqrt_dt } else { -sqrt_dt };
    let sign_b = |b: usize, i: usize| if (b >> i) & 1 == 1 { sqrt_dt } else { -sqrt_dt };
    let dw = |i: usize| -> Vec<f64> {
        (0..atoms).map(|a| sign_w(a / side, i)).collect()
    };
    let db = |i: usize| -> Vec<f64> {
        (0..atoms).map(|a| sign_b(a % side, i)).collect()
    };
    let mul = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(a, b)| a * b).collect() };
    let psi_vec = |k: usize| -> Vec<f64> {
        let field = psi.entry(k);
        let mut out = vec![0.0; atoms];
        for w in 0..side {
            for b in 0..side {
                out[w * side + b] = field.value_at(w, b)[0];
            }
        }
        out
    };

    let y_block = |k: usize| k;
    let z_block = |k: usize, i: usize| -> usize {
        if i >= k {
            n + 1 + delta.iter().position(|&p| p == (k, i)).unwrap()
        } else {
            n + 1 + delta.len() + deltac.iter().position(|&p| p == (k, i)).unwrap()
        }
    };
    let get = |x: &[f64], blk: usize| -> Vec<f64> { x[blk * atoms..(blk + 1) * atoms].to_vec() };

    let apply = |x: &[f64], with_data: bool| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for k in 0..=n {
            let t_k = node(k);
            let mut rhs = if with_data { psi_vec(k) } else { vec![0.0; atoms] };
            for i in k..n {
                // forward driver term, left node, dt weight
                let y_i = get(x, y_block(i));
                let z_ki = get(x, z_block(k, i));
                let zeta = if i == k {
                    get(x, z_block(k, k))
                } else {
                    get(x, z_block(i, k))
                };
                for idx in 0..atoms {
                    let lin = f.m_y * y_i[idx] + f.m_z * z_ki[idx] + f.m_zeta * zeta[idx];
                    rhs[idx] += lin * dt;
                }
                if with_data {
                    let off = f.offset(t_k, node(i)) * dt;
                    for r in rhs.iter_mut() {
                        *r += off;
                    }
                }
                // backward driver term, right endpoint paired with dB_i
                let dbi = db(i);
                let y_r = get(x, y_block(i + 1));
                let zeta_g = get(x, z_block(i + 1, k));
                for idx in 0..atoms {
                    let lin = g.m_y * y_r[idx] + g.m_z * z_ki[idx] + g.m_zeta * zeta_g[idx];
                    rhs[idx] += lin * dbi[idx];
                }
                if with_data {
                    let off = g.offset(t_k, node(i + 1));
                    for (r, d) in rhs.iter_mut().zip(&dbi) {
                        *r += off * d;
                    }
                }
            }
            let yk = proj(&rhs, k, k);
            out[y_block(k) * atoms..(y_block(k) + 1) * atoms].copy_from_slice(&yk);
            for i in k..n {
                let zi = proj(&mul(&rhs, &dw(i)), i, i);
                let dst = z_block(k, i) * atoms;
                for (o, v) in out[dst..dst + atoms].iter_mut().zip(&zi) {
                    *o = v / dt;
                }
            }
        }
        // off-region completion from the path of the same iterate
        for &(k, j) in &deltac {
            let yk = get(&out, y_block(k));
            let x1 = proj(&mul(&yk, &dw(j)), j, n);
            let x2 = if k < n {
                let yj = get(&out, y_block(j));
                proj(&mul(&yj, &db(k)), 0, k + 1)
            } else {
                vec![0.0; atoms]
            };
            let dst = z_block(k, j) * atoms;
            for (idx, o) in out[dst..dst + atoms].iter_mut().enumerate() {
                *o = (x1[idx] + x2[idx]) / dt;
            }
        }
        out
    };

    let rhs = apply(&vec![0.0; dim], true);
    let mut a_mat = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut basis = vec![0.0; dim];
    for j in 0..dim {
        basis[j] = 1.0;
        let col = apply(&basis, false);
        basis[j] = 0.0;
        for (i, v) in col.iter().enumerate() {
            a_mat[(i, j)] = if i == j { 1.0 - v } else { -v };
        }
    }
    let Some(sol) = a_mat.lu().solve(&nalgebra::DVector::from_vec(rhs)) else {
        bail!("the dense fixed-point system is singular for this scenario");
    };
    let blocks = (0..nblocks)
        .map(|b| sol.as_slice()[b * atoms..(b + 1) * atoms].to_vec())
        .collect();
    Ok(DenseSolution {
        n,
        side,
        blocks,
        delta,
        deltac,
    })
}
