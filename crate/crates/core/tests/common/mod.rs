//! Shared helpers for the integration suites: seeded test-field corpora
//! and an independent dense linear-system oracle that never calls the
//! library's projection or representation code.

use bdsvie_core::probability::{AlgebraLevel, RandomField};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded quadratic polynomial functional of the W-signs, at the terminal
/// W-level. Coefficients are scaled to keep second moments near 1.
pub fn random_w_functional(n: usize, rng: &mut ChaCha8Rng) -> RandomField {
    let scale = 1.0 / (n as f64).sqrt();
    let lin: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    let quad: Vec<f64> = (0..n * n)
        .map(|_| rng.gen_range(-1.0..1.0) * scale * scale)
        .collect();
    let c0: f64 = rng.gen_range(-1.0..1.0);
    RandomField::from_fn(AlgebraLevel::f_w(n, n), 1, move |w, _b, out| {
        let s = |p: usize| if (w >> p) & 1 == 1 { 1.0 } else { -1.0 };
        let mut v = c0;
        for (j, a) in lin.iter().enumerate() {
            v += a * s(j);
        }
        for j in 0..n {
            for l in (j + 1)..n {
                v += quad[j * n + l] * s(j) * s(l);
            }
        }
        out[0] = v;
    })
}

/// Same construction over the B-signs, at the full B-level.
pub fn random_b_functional(n: usize, rng: &mut ChaCha8Rng) -> RandomField {
    let scale = 1.0 / (n as f64).sqrt();
    let lin: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    let quad: Vec<f64> = (0..n * n)
        .map(|_| rng.gen_range(-1.0..1.0) * scale * scale)
        .collect();
    let c0: f64 = rng.gen_range(-1.0..1.0);
    RandomField::from_fn(AlgebraLevel::f_b_tail(n, 0), 1, move |_w, b, out| {
        let s = |p: usize| if (b >> p) & 1 == 1 { 1.0 } else { -1.0 };
        let mut v = c0;
        for (j, a) in lin.iter().enumerate() {
            v += a * s(j);
        }
        for j in 0..n {
            for l in (j + 1)..n {
                v += quad[j * n + l] * s(j) * s(l);
            }
        }
        out[0] = v;
    })
}

/// Seeded functional of both sign families, at the full atom level.
pub fn random_mixed_functional(n: usize, rng: &mut ChaCha8Rng) -> RandomField {
    let scale = 1.0 / (n as f64).sqrt();
    let lw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    let lb: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    let cross: Vec<f64> = (0..n * n)
        .map(|_| rng.gen_range(-1.0..1.0) * scale * scale)
        .collect();
    let c0: f64 = rng.gen_range(-1.0..1.0);
    RandomField::from_fn(AlgebraLevel::full(n), 1, move |w, b, out| {
        let sw = |p: usize| if (w >> p) & 1 == 1 { 1.0 } else { -1.0 };
        let sb = |p: usize| if (b >> p) & 1 == 1 { 1.0 } else { -1.0 };
        let mut v = c0;
        for j in 0..n {
            v += lw[j] * sw(j) + lb[j] * sb(j);
            for l in 0..n {
                v += cross[j * n + l] * sw(j) * sb(l);
            }
        }
        out[0] = v;
    })
}

/// Independent dense solve of the discrete fixed-point system for the
/// scalar scenario `f(t,s,y,z,zeta) = zeta`, `g = 0`, terminal `W_T`, on a
/// 3-step unit-horizon tree with the symmetric (two-half) completion.
///
/// Everything here is written from scratch against the raw sign
/// enumeration: atoms are indexed `w * 2^N + b`, conditional expectations
/// are plain nested-loop averages, and the stacked linear system
/// `(I - L) x = c` is solved by LU. Returns the per-block atom vectors in
/// the order: `y_0..y_3`, then row-region `z` entries
/// `(0,0),(0,1),(0,2),(1,1),(1,2),(2,2)`, then off-region entries
/// `(1,0),(2,0),(2,1),(3,0),(3,1),(3,2)`.
pub struct DenseOracle {
    pub n: usize,
    pub delta: Vec<(usize, usize)>,
    pub deltac: Vec<(usize, usize)>,
    pub blocks: Vec<Vec<f64>>,
}

pub fn dense_transposed_entry_oracle() -> DenseOracle {
    let n = 3usize;
    let dt = 1.0f64 / 3.0;
    let side = 1usize << n;
    let atoms = side * side;
    let sqrt_dt = dt.sqrt();

    let delta: Vec<(usize, usize)> = (0..n).flat_map(|k| (k..n).map(move |i| (k, i))).collect();
    let deltac: Vec<(usize, usize)> = (1..=n).flat_map(|k| (0..k).map(move |j| (k, j))).collect();
    let nblocks = (n + 1) + delta.len() + deltac.len();
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
    let dw = |i: usize| -> Vec<f64> {
        (0..atoms)
            .map(|a| {
                let w = a / side;
                if (w >> i) & 1 == 1 { sqrt_dt } else { -sqrt_dt }
            })
            .collect()
    };
    let db = |i: usize| -> Vec<f64> {
        (0..atoms)
            .map(|a| {
                let b = a % side;
                if (b >> i) & 1 == 1 { sqrt_dt } else { -sqrt_dt }
            })
            .collect()
    };
    let mul = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(a, b)| a * b).collect() };
    let psi: Vec<f64> = (0..atoms)
        .map(|a| {
            let w = a / side;
            (0..n)
                .map(|i| if (w >> i) & 1 == 1 { sqrt_dt } else { -sqrt_dt })
                .sum()
        })
        .collect();

    // block bookkeeping
    let y_block = |k: usize| k;
    let z_block = |k: usize, i: usize| -> usize {
        if i >= k {
            n + 1 + delta.iter().position(|&p| p == (k, i)).unwrap()
        } else {
            n + 1 + delta.len() + deltac.iter().position(|&p| p == (k, i)).unwrap()
        }
    };
    let get = |x: &[f64], blk: usize| -> Vec<f64> { x[blk * atoms..(blk + 1) * atoms].to_vec() };

    // the linear part of the fixed-point map, plus the constant part when
    // `with_psi` is set
    let apply = |x: &[f64], with_psi: bool| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        let zero = vec![0.0; atoms];
        for k in 0..=n {
            // rhs of row k
            let mut rhs = if with_psi { psi.clone() } else { zero.clone() };
            for i in k..n {
                let zeta = if i == k {
                    get(x, z_block(k, k))
                } else {
                    get(x, z_block(i, k))
                };
                for (r, zv) in rhs.iter_mut().zip(&zeta) {
                    *r += zv * dt;
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
        // off-region completion from the path blocks of the same iterate
        for &(k, j) in &deltac {
            let yk = get(&out, y_block(k));
            let x1 = proj(&mul(&yk, &dw(j)), j, n);
            // the mirrored second-noise part needs the increment over
            // interval k, which does not exist for the terminal row
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

    // x = apply(x) is affine; assemble (I - L) x = c and solve by LU
    let c = apply(&vec![0.0; dim], true);
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
    let sol = a_mat
        .lu()
        .solve(&nalgebra::DVector::from_vec(c))
        .expect("fixed-point system is nonsingular");
    let blocks = (0..nblocks)
        .map(|b| sol.as_slice()[b * atoms..(b + 1) * atoms].to_vec())
        .collect();
    DenseOracle {
        n,
        delta,
        deltac,
        blocks,
    }
}

impl DenseOracle {
    pub fn y(&self, k: usize) -> &[f64] {
        &self.blocks[k]
    }

    pub fn z(&self, k: usize, i: usize) -> &[f64] {
        let idx = if i >= k {
            self.n + 1 + self.delta.iter().position(|&p| p == (k, i)).unwrap()
        } else {
            self.n + 1 + self.delta.len() + self.deltac.iter().position(|&p| p == (k, i)).unwrap()
        };
        &self.blocks[idx]
    }

    /// Max atomwise deviation between a library field and an oracle block.
    pub fn deviation(&self, field: &RandomField, block: &[f64]) -> f64 {
        let side = 1usize << self.n;
        let mut dev: f64 = 0.0;
        for w in 0..side {
            for b in 0..side {
                dev = dev.max((field.value_at(w, b)[0] - block[w * side + b]).abs());
            }
        }
        dev
    }
}
