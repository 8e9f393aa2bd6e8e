// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact hierarchical marginal on tiny instances.
//!
//! Each run draws `theta` from a discrete prior (a [`ThetaGrid`]); labels are
//! categorical given `theta`; observations depend on labels through a likelihood
//! table. Summing over every label path `z_{1:t}` gives `p(r_t, X_{1:t})` exactly.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{hazard, DetectorConfig};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

const MAX_PATHS: f64 = 1e6;

/// Discrete prior over class-probability vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaGrid {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Gauss quadrature for `Beta(a, b)` on `(0, 1)`: `n` nodes and weights summing to 1,
/// exact for polynomials of degree `<= 2n - 1`.
pub fn beta_quadrature(a: f64, b: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(a > 0.0 && b > 0.0) || n == 0 {
        return Err(Error::invalid("beta quadrature needs a, b > 0 and n >= 1"));
    }
    // Jacobi weight (1 - x)^alpha (1 + x)^beta on (-1, 1) with p = (1 + x) / 2.
    let (al, be) = (b - 1.0, a - 1.0);
    let s = al + be;
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n {
        let m = i as f64;
        jac[(i, i)] = if i == 0 {
            (be - al) / (s + 2.0)
        } else {
            (be * be - al * al) / ((2.0 * m + s) * (2.0 * m + s + 2.0))
        };
        if i + 1 < n {
            let m = (i + 1) as f64;
            let bn = if i == 0 {
                4.0 * (1.0 + al) * (1.0 + be) / ((2.0 + s).powi(2) * (3.0 + s))
            } else {
                4.0 * m * (m + al) * (m + be) * (m + s)
                    / ((2.0 * m + s).powi(2) * (2.0 * m + s + 1.0) * (2.0 * m + s - 1.0))
            };
            jac[(i, i + 1)] = bn.sqrt();
            jac[(i + 1, i)] = bn.sqrt();
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| ((1.0 + eig.eigenvalues[i]) / 2.0, eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok(pairs.into_iter().map(|(x, w)| (x, w / total)).unzip())
}

impl ThetaGrid {
    /// Tensor-product quadrature of `Dir(gamma)` through stick-breaking:
    /// `v_i ~ Beta(gamma_i, sum_{j>i} gamma_j)`. Moments of total degree up to
    /// `2 * nodes - 1` are exact.
    pub fn dirichlet(gamma: &[f64], nodes: usize) -> Result<Self> {
        let k = gamma.len();
        if k == 0 {
            return Err(Error::invalid("gamma must be non-empty"));
        }
        let mut points = vec![Vec::new()];
        let mut weights = vec![1.0];
        if k == 1 {
            points[0].push(1.0);
            return Ok(Self { points, weights });
        }
        for i in 0..k - 1 {
            let rest: f64 = gamma[i + 1..].iter().sum();
            let (xs, ws) = beta_quadrature(gamma[i], rest, nodes)?;
            let mut np = Vec::with_capacity(points.len() * nodes);
            let mut nw = Vec::with_capacity(points.len() * nodes);
            for (p, w) in points.iter().zip(&weights) {
                let left = 1.0 - p.iter().sum::<f64>();
                for (x, wx) in xs.iter().zip(&ws) {
                    let mut q = p.clone();
                    q.push(left * x);
                    np.push(q);
                    nw.push(w * wx);
                }
            }
            points = np;
            weights = nw;
        }
        for p in &mut points {
            let left = 1.0 - p.iter().sum::<f64>();
            p.push(left.max(0.0));
        }
        Ok(Self { points, weights })
    }

    pub fn n_classes(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_classes();
        if k == 0 || self.points.len() != self.weights.len() {
            return Err(Error::invalid("theta grid is empty or malformed"));
        }
        if self.points.iter().any(|p| p.len() != k || p.iter().any(|v| *v < 0.0)) {
            return Err(Error::invalid("theta grid points must be non-negative K-vectors"));
        }
        if self.weights.iter().any(|w| *w < 0.0) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("theta grid weights must be non-negative and not all zero"));
        }
        Ok(())
    }
}

/// `ln p(r_t, X_{1:t})` for every `t = 1..=T` (row `t - 1` has `t + 1` entries).
///
/// `likelihood[t][k] = p(x_t | z_t = k)`; a row of ones encodes a missing
/// observation. Requires `K^T <= 10^6`.
pub fn exact_hierarchical_marginal(
    likelihood: &[Vec<f64>],
    grid: &ThetaGrid,
    cfg: &DetectorConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.hazard.validate()?;
    grid.validate()?;
    let k = grid.n_classes();
    let t_len = likelihood.len();
    if (k as f64).powi(t_len as i32) > MAX_PATHS {
        return Err(Error::InstanceTooLarge(format!("K^T = {k}^{t_len} exceeds 1e6 paths")));
    }
    if likelihood.iter().any(|row| row.len() != k || row.iter().any(|v| !(v.is_finite() && *v >= 0.0))) {
        return Err(Error::invalid("likelihood rows must hold K non-negative values"));
    }
    let total_w: f64 = grid.weights.iter().sum();
    let prior_u: Vec<f64> = grid.weights.iter().map(|w| w / total_w).collect();
    let mut acc = (0..t_len).map(|t| vec![f64::NEG_INFINITY; t + 2]).collect::<Vec<_>>();

    struct Frame {
        /// `ln p(r_t, z_{1:t})`.
        log_joint: Vec<f64>,
        /// Normalized grid posterior of each run length.
        runs: Vec<Vec<f64>>,
        /// `ln p(X_{1:t} | z_{1:t})`.
        log_lik: f64,
    }

    fn visit(
        frame: &Frame,
        t: usize,
        likelihood: &[Vec<f64>],
        grid: &ThetaGrid,
        prior_u: &[f64],
        cfg: &DetectorConfig,
        acc: &mut [Vec<f64>],
    ) {
        if t == likelihood.len() {
            return;
        }
        let h = hazard(t, &cfg.hazard);
        for z in 0..grid.n_classes() {
            let lz = likelihood[t][z];
            if lz == 0.0 {
                continue;
            }
            let mut log_pi = Vec::with_capacity(frame.runs.len());
            let mut runs = Vec::with_capacity(frame.runs.len() + 1);
            runs.push(prior_u.to_vec());
            for u in &frame.runs {
                let mut next: Vec<f64> = u.iter().zip(&grid.points).map(|(w, p)| w * p[z]).collect();
                let pi: f64 = next.iter().sum();
                log_pi.push(pi.ln());
                if pi > 0.0 {
                    next.iter_mut().for_each(|v| *v /= pi);
                }
                runs.push(next);
            }
            let weighted: Vec<f64> = frame.log_joint.iter().zip(&log_pi).map(|(j, p)| j + p).collect();
            let mut log_joint = Vec::with_capacity(weighted.len() + 1);
            log_joint.push(log_sum_exp(&weighted) + h.p_change.ln());
            log_joint.extend(weighted.iter().map(|w| w + h.p_grow.ln()));
            let child = Frame {
                log_joint,
                runs,
                log_lik: frame.log_lik + lz.ln(),
            };
            for (a, j) in acc[t].iter_mut().zip(&child.log_joint) {
                *a = crate::math::log_add_exp(*a, j + child.log_lik);
            }
            visit(&child, t + 1, likelihood, grid, prior_u, cfg, acc);
        }
    }

    let root = Frame {
        log_joint: vec![0.0],
        runs: vec![prior_u.clone()],
        log_lik: 0.0,
    };
    visit(&root, 0, likelihood, grid, &prior_u, cfg, &mut acc);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::peo::peo_run;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_quadrature_reproduces_moments() {
        for (a, b) in [(1.0, 1.0), (2.0, 5.0), (0.5, 0.7), (3.0, 1.0)] {
            let (x, w) = beta_quadrature(a, b, 6).unwrap();
            for m in 0..12 {
                let quad: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(m)).sum();
                let exact: f64 = (0..m).map(|i| (a + i as f64) / (a + b + i as f64)).product();
                assert!((quad - exact).abs() < 1e-12 * exact.max(1e-300).max(1.0), "a={a} b={b} m={m}");
            }
        }
    }

    #[test]
    fn dirichlet_grid_reproduces_mixed_moments() {
        let g = [1.5, 0.8, 2.0];
        let grid = ThetaGrid::dirichlet(&g, 5).unwrap();
        // E[t0 t1^2 t2] for Dir(g).
        let quad: f64 = grid.points.iter().zip(&grid.weights).map(|(p, w)| w * p[0] * p[1] * p[1] * p[2]).sum();
        let s: f64 = g.iter().sum();
        let exact = g[0] * g[1] * (g[1] + 1.0) * g[2] / (s * (s + 1.0) * (s + 2.0) * (s + 3.0));
        assert!((quad - exact).abs() < 1e-13);
    }

    /// Independent oracle: enumerate label paths and change-indicator paths jointly,
    /// scoring each segment by its grid marginal.
    fn brute_force(lik: &[Vec<f64>], grid: &ThetaGrid, tau: f64) -> Vec<Vec<f64>> {
        let k = grid.n_classes();
        let tl = lik.len();
        let mut out: Vec<Vec<f64>> = (0..tl).map(|t| vec![0.0; t + 2]).collect();
        for t in 1..=tl {
            for zcode in 0..k.pow(t as u32) {
                let z: Vec<usize> = (0..t).map(|i| zcode / k.pow(i as u32) % k).collect();
                let px: f64 = z.iter().enumerate().map(|(i, &zi)| lik[i][zi]).product();
                for mask in 0..(1u32 << t) {
                    let mut prior = 1.0;
                    let mut segs: Vec<Vec<usize>> = vec![Vec::new()];
                    for (s, &zs) in z.iter().enumerate() {
                        segs.last_mut().unwrap().push(zs);
                        if mask >> s & 1 == 1 {
                            prior *= 1.0 / tau;
                            segs.push(Vec::new());
                        } else {
                            prior *= 1.0 - 1.0 / tau;
                        }
                    }
                    let pz: f64 = segs
                        .iter()
                        .map(|seg| {
                            grid.points
                                .iter()
                                .zip(&grid.weights)
                                .map(|(p, w)| w * seg.iter().map(|&zi| p[zi]).product::<f64>())
                                .sum::<f64>()
                        })
                        .product();
                    let r = segs.last().unwrap().len();
                    out[t - 1][r] += px * prior * pz;
                }
            }
        }
        out
    }

    #[test]
    fn matches_joint_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = ThetaGrid::dirichlet(&[1.3, 0.7], 8).unwrap();
        let mut lik: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
        lik[3] = vec![1.0, 1.0];
        let cfg = DetectorConfig::with_tau(4.0).unwrap();
        let exact = exact_hierarchical_marginal(&lik, &grid, &cfg).unwrap();
        let oracle = brute_force(&lik, &grid, 4.0);
        for (row_e, row_o) in exact.iter().zip(&oracle) {
            for (e, o) in row_e.iter().zip(row_o) {
                assert!((e.exp() - o).abs() <= 1e-12 * o.max(1e-300), "{} vs {o}", e.exp());
            }
        }
    }

    #[test]
    fn deterministic_emissions_collapse_to_peo() {
        let labels = [0usize, 1, 1, 0, 1, 1];
        let gamma = [1.0, 2.0];
        let grid = ThetaGrid::dirichlet(&gamma, 8).unwrap();
        let lik: Vec<Vec<f64>> = labels.iter().map(|&z| (0..2).map(|k| f64::from(u8::from(k == z))).collect()).collect();
        let cfg = DetectorConfig::with_tau(5.0).unwrap();
        let exact = exact_hierarchical_marginal(&lik, &grid, &cfg).unwrap();
        let seq: Vec<Option<usize>> = labels.iter().map(|&z| Some(z)).collect();
        let (_, state) = peo_run(&seq, &gamma, &cfg).unwrap();
        for (e, p) in exact.last().unwrap().iter().zip(&state.log_joint) {
            assert!(((e - p) / p).abs() < 1e-9, "{e} vs {p}");
        }
    }

    #[test]
    fn single_class_is_plain_bocpd() {
        let grid = ThetaGrid::dirichlet(&[1.0], 3).unwrap();
        let lik = vec![vec![0.3], vec![0.5], vec![0.2]];
        let cfg = DetectorConfig::with_tau(3.0).unwrap();
        let exact = exact_hierarchical_marginal(&lik, &grid, &cfg).unwrap();
        // With one class every run predicts 1, so p(r_t, X) = p(r_t) * prod lik.
        let px = 0.3 * 0.5 * 0.2;
        let h: f64 = 1.0 / 3.0;
        let expect = [h, h * (1.0 - h), (1.0 - h).powi(3)];
        let row = &exact[2];
        assert!((row[0].exp() - px * h).abs() < 1e-15);
        assert!((row[1].exp() - px * expect[1]).abs() < 1e-15);
        assert!((row[3].exp() - px * expect[2]).abs() < 1e-15);
    }

    #[test]
    fn refuses_large_instances() {
        let grid = ThetaGrid::dirichlet(&[1.0, 1.0], 3).unwrap();
        let lik = vec![vec![1.0, 1.0]; 21];
        let err = exact_hierarchical_marginal(&lik, &grid, &DetectorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InstanceTooLarge(_)));
    }
}
