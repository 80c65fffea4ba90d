#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relaxdiff::model::eval_coefficient;
use relaxdiff::{CoefficientSpec, Field, Grid, ModelSpec, SchemeConfig, Species};

/// Two-species SKT system with symmetric cross-diffusion, initial data
/// touching zero.
pub fn skt_problem(grid: Grid, d: f64, cross: f64, delta: f64) -> ModelSpec {
    let len = grid.domain_lengths();
    let dims = grid.dims();
    let bump = |c: [f64; 2], width: f64| {
        grid.field_from_fn(|x| {
            let r = (0..dims).map(|k| ((x[k] - c[k]) / len[k]).powi(2)).sum::<f64>().sqrt();
            if r < width {
                (std::f64::consts::FRAC_PI_2 * r / width).cos().powi(2)
            } else {
                0.0
            }
        })
    };
    let u1 = bump([0.3 * len[0], 0.35 * len.get(1).copied().unwrap_or(0.0)], 0.25);
    let u2 = bump([0.7 * len[0], 0.6 * len.get(1).copied().unwrap_or(0.0)], 0.25);
    ModelSpec::new(
        grid,
        vec![
            Species::new(delta, CoefficientSpec::skt(d, &[0.0, cross], 1.0), u1),
            Species::new(delta, CoefficientSpec::skt(d, &[cross, 0.0], 1.0), u2),
        ],
    )
}

/// Coefficient history `A(x, t) = A0(x) + t A1(x)` with random positive
/// `A0`, `A1`, sampled at `tₙ = nτ`.
pub struct Slab {
    pub grid: Grid,
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub w0: Field,
}

impl Slab {
    pub fn random(grid: Grid, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.len();
        let a0 = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let a1 = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let w0 = Field::new(&grid, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        Slab { grid, a0, a1, w0 }
    }

    pub fn history(&self, tau: f64, horizon: f64) -> Vec<Field> {
        let steps = (horizon / tau).round() as usize;
        (0..steps)
            .map(|k| {
                let t = k as f64 * tau;
                Field::new(&self.grid, self.a0.iter().zip(&self.a1).map(|(a, b)| a + t * b).collect()).unwrap()
            })
            .collect()
    }
}

/// Three species with mixed exponents on any grid.
pub fn three_species(grid: Grid) -> ModelSpec {
    let bump = |c: f64| grid.field_from_fn(|x| (1.0 - ((x[0] - c) / 0.3).powi(2)).max(0.0));
    let third = grid.field_from_fn(|x| 0.5 + 0.4 * (3.0 * x[0] + x[1]).sin());
    ModelSpec::new(
        grid.clone(),
        vec![
            Species::new(0.01, CoefficientSpec::skt(0.05, &[0.0, 1.0, 0.5], 1.0), bump(0.3)),
            Species::new(0.02, CoefficientSpec::skt(0.1, &[0.7, 0.0, 0.2], 2.0), bump(0.7)),
            Species::new(0.05, CoefficientSpec::skt(0.2, &[0.3, 0.3, 0.0], 1.5), third),
        ],
    )
}

/// Step profile for species 1 and a bump for species 2, both touching zero.
pub fn skt_step_bump(grid: Grid) -> ModelSpec {
    let mut m = skt_problem(grid, 0.05, 1.0, 0.01);
    let half = 0.5 * m.grid.domain_lengths()[0];
    m.species[0].initial = m.grid.field_from_fn(|x| if x[0] < half { 1.0 } else { 0.0 });
    m
}

pub fn scheme(tau: f64, horizon: f64) -> SchemeConfig {
    SchemeConfig::new(tau, horizon)
}

/// Dense Neumann Laplacian built directly from the five-point stencil.
pub fn dense_laplacian(grid: &Grid) -> Vec<Vec<f64>> {
    let n = grid.len();
    let cells = grid.cells_per_axis();
    let h = grid.spacing();
    let (n1, n2) = (cells[0], cells.get(1).copied().unwrap_or(1));
    let mut a = vec![vec![0.0; n]; n];
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            let c = i1 + n1 * i2;
            let mut link = |nb: usize, w: f64| {
                a[c][nb] += w;
                a[c][c] -= w;
            };
            let w1 = 1.0 / (h[0] * h[0]);
            if i1 > 0 {
                link(c - 1, w1);
            }
            if i1 + 1 < n1 {
                link(c + 1, w1);
            }
            if cells.len() == 2 {
                let w2 = 1.0 / (h[1] * h[1]);
                if i2 > 0 {
                    link(c - n1, w2);
                }
                if i2 + 1 < n2 {
                    link(c + n1, w2);
                }
            }
        }
    }
    a
}

/// Gaussian elimination with partial pivoting.
pub fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

#[derive(Debug, Clone)]
pub struct ReplayState {
    pub u: Vec<Vec<f64>>,
    pub u_tilde: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

fn resolvent(lap: &[Vec<f64>], delta: f64, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let m = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - delta * lap[i][j]).collect())
        .collect();
    gauss(m, u.to_vec())
}

/// Replays the semi-implicit scheme with dense elimination:
/// `ũⁿ = J(uⁿ)`, `Aⁿ = a([ũⁿ]⁺)`, `(I/τ − L diag(Aⁿ)) uⁿ⁺¹ = uⁿ/τ`,
/// `wⁿ⁺¹ = wⁿ + δ(ũⁿ⁺¹ − ũⁿ) + τ Aⁿ uⁿ⁺¹`.
pub fn dense_replay(m: &ModelSpec, tau: f64, steps: usize) -> Vec<ReplayState> {
    let lap = dense_laplacian(&m.grid);
    let n = m.grid.len();
    let species = m.species_count();
    let u: Vec<Vec<f64>> = m.species.iter().map(|s| s.initial.to_vec()).collect();
    let u_tilde: Vec<Vec<f64>> = m.species.iter().zip(&u).map(|(s, u)| resolvent(&lap, s.delta, u)).collect();
    let w = m.species.iter().zip(&u_tilde).map(|(s, t)| t.iter().map(|v| s.delta * v).collect()).collect();
    let mut out = vec![ReplayState { u, u_tilde, w }];
    for _ in 0..steps {
        let prev = out.last().unwrap();
        let coeffs: Vec<Vec<f64>> = m
            .species
            .iter()
            .map(|s| {
                (0..n)
                    .map(|c| {
                        let r: Vec<f64> = (0..species).map(|j| prev.u_tilde[j][c].max(0.0)).collect();
                        eval_coefficient(&s.coefficient, &r).unwrap()
                    })
                    .collect()
            })
            .collect();
        let mut next = ReplayState { u: vec![], u_tilde: vec![], w: vec![] };
        for (i, s) in m.species.iter().enumerate() {
            let a = &coeffs[i];
            let mat = (0..n)
                .map(|r| {
                    (0..n)
                        .map(|c| if r == c { 1.0 / tau } else { 0.0 } - lap[r][c] * a[c])
                        .collect()
                })
                .collect();
            let rhs = prev.u[i].iter().map(|v| v / tau).collect();
            let u = gauss(mat, rhs);
            let ut = resolvent(&lap, s.delta, &u);
            let w = (0..n)
                .map(|c| prev.w[i][c] + s.delta * (ut[c] - prev.u_tilde[i][c]) + tau * a[c] * u[c])
                .collect();
            next.u.push(u);
            next.u_tilde.push(ut);
            next.w.push(w);
        }
        out.push(next);
    }
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn fields_diff(a: &[Field], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| max_diff(x, y)).fold(0.0, f64::max)
}

/// Smallest nonzero eigenvalue of `−L` by power iteration on `σI + L`
/// restricted to mean-zero vectors.
pub fn lambda_one(grid: &Grid) -> f64 {
    let lap = grid.assemble_laplacian();
    let n = grid.len();
    let sigma = grid.spacing().iter().map(|h| 4.0 / (h * h)).sum::<f64>();
    let deflate = |v: &mut Vec<f64>| {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    };
    // Deterministic start with a component along every mode.
    let mut v: Vec<f64> = (0..n).map(|i| ((i * 7919 + 13) % 101) as f64 / 101.0 + i as f64 / n as f64).collect();
    deflate(&mut v);
    let mut lv = vec![0.0; n];
    let mut mu = 0.0;
    for _ in 0..200_000 {
        lap.mul_vec(&v, &mut lv).unwrap();
        let mut next: Vec<f64> = v.iter().zip(&lv).map(|(x, l)| sigma * x + l).collect();
        let new_mu: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
        deflate(&mut next);
        v = next;
        if (new_mu - mu).abs() <= 1e-14 * new_mu.abs() {
            mu = new_mu;
            break;
        }
        mu = new_mu;
    }
    sigma - mu
}
