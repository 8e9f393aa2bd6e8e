// SPDX-License-Identifier: MIT OR Apache-2.0

//! Nonlinear conjugate-gradient ascent with a hard evaluation budget.

/// Result of [`maximize_cg`].
#[derive(Clone, Debug, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Number of accepted steps.
    pub steps: usize,
    /// True when the budget ran out inside a line search without finding ascent.
    pub line_search_failed: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_FIRST_STEP: f64 = 0.5;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `f` starting from `x0` with Polak-Ribiere+ directions and
/// backtracking Armijo line searches.
///
/// `f` returns the value and gradient, or `None` where the objective is
/// undefined (treated as `-inf`). Every call counts against `max_evals`,
/// including the one at `x0`. Only strictly improving steps are accepted, so the
/// returned value is never below `f(x0)`.
pub fn maximize_cg<F>(mut f: F, x0: &[f64], max_evals: usize) -> Option<CgOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut fx, mut g) = f(x0)?;
    if !fx.is_finite() {
        return None;
    }
    let mut x = x0.to_vec();
    let mut evals = 1;
    let mut steps = 0;
    let mut failed = false;
    let mut dir = g.clone();
    let mut prev_step: Option<(f64, f64)> = None;

    'outer: while evals < max_evals {
        let mut slope = dot(&g, &dir);
        if slope.is_nan() || slope <= 0.0 {
            dir.clone_from(&g);
            slope = dot(&g, &g);
        }
        if !slope.is_finite() || slope <= 0.0 {
            break;
        }
        let max_abs = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cap = MAX_FIRST_STEP / max_abs;
        let mut step = match prev_step {
            Some((alpha, prev_slope)) => (alpha * prev_slope / slope).min(cap),
            None => cap,
        };

        loop {
            if evals >= max_evals {
                failed = true;
                break 'outer;
            }
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            evals += 1;
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft > fx && ft >= fx + ARMIJO_C1 * step * slope {
                    let gg = dot(&g, &g);
                    let beta = if gg > 0.0 {
                        (gt.iter().zip(&g).map(|(n, o)| n * (n - o)).sum::<f64>() / gg).max(0.0)
                    } else {
                        0.0
                    };
                    for (d, gn) in dir.iter_mut().zip(&gt) {
                        *d = gn + beta * *d;
                    }
                    prev_step = Some((step, slope));
                    x = trial;
                    fx = ft;
                    g = gt;
                    steps += 1;
                    break;
                }
                if ft.is_finite() {
                    // Maximizer of the quadratic through f(x), its slope and f(trial).
                    let curv = ft - fx - slope * step;
                    let interp = if curv < 0.0 { -slope * step * step / (2.0 * curv) } else { 0.5 * step };
                    step = interp.clamp(0.1 * step, 0.5 * step);
                    continue;
                }
            }
            step *= 0.5;
        }
    }

    Some(CgOutcome {
        x,
        value: fx,
        evaluations: evals,
        steps,
        line_search_failed: failed,
    })
}
