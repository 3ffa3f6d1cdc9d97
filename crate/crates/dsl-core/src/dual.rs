//! Dual of the inner selection subproblem and its box-constrained solver.
//!
//! With the hyperplane `(w, b)` and the row reweighting `D` frozen, the
//! subproblem in `Phi` is quadratic and its hinge constraints dualize into
//! a concave box-constrained quadratic in the multipliers `alpha`:
//!
//! ```text
//! maximize  1/2 alpha^T K alpha + q^T alpha + g    over  0 <= alpha_i <= C*
//! ```
//!
//! where, writing `M = X X^T + lambda1 D + lambda2 L` and `Z = 1/2 M^{-1}`:
//!
//! ```text
//! K_ij = -(w^T w) y_i y_j x_i^T Z x_j
//! q_i  = 1 - y_i b - 2 y_i w^T (X X^T) Z x_i
//! g    = tr(X X^T) - 2 tr(X X^T Z X X^T)
//! ```
//!
//! `K` is negative semidefinite (`Z` is positive definite), so cyclic
//! coordinate ascent with exact per-coordinate maximization converges to
//! the global maximum. The optimal selection matrix is recovered from any
//! multiplier vector by [`crate::optim::update_phi`].

use nalgebra::{DMatrix, DVector};

use crate::error::{DslError, Result};
use crate::optim::{invert_system, symmetrize, system_matrix};

const MAX_SWEEPS: usize = 10_000;

/// Box-constrained quadratic `1/2 a^T K a + q^T a + g` over `[0, C*]^n`,
/// plus the system matrix `r = M` and scaled inverse `z = 1/2 M^{-1}` it
/// was built from.
#[derive(Debug, Clone)]
pub struct DualProblem {
    pub k: DMatrix<f64>,
    pub q: DVector<f64>,
    pub box_upper: f64,
    pub z: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: f64,
}

/// Solver output: multipliers, their complements `gamma = C* - alpha`, and
/// the attained dual objective value.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: DVector<f64>,
    pub gamma: DVector<f64>,
    pub dual_value: f64,
}

/// Assembles the dual quadratic for given data, hyperplane, and frozen
/// reweighting.
#[allow(clippy::too_many_arguments)]
pub fn build_dual(
    x: &DMatrix<f64>,
    y: &[i8],
    w: &DVector<f64>,
    b: f64,
    d_rw: &[f64],
    lambda1: f64,
    lambda2: f64,
    laplacian: &DMatrix<f64>,
    c_star: f64,
) -> Result<DualProblem> {
    let m = x.nrows();
    let n = x.ncols();
    if n == 0 || m == 0 {
        return Err(DslError::EmptyDataset);
    }
    if y.len() != n {
        return Err(DslError::DimensionMismatch {
            context: "labels vs samples".into(),
            expected: n,
            found: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l != 1 && l != -1) {
        return Err(DslError::InvalidLabel {
            found: bad.to_string(),
        });
    }
    if w.len() != m {
        return Err(DslError::DimensionMismatch {
            context: "hyperplane vs nodes".into(),
            expected: m,
            found: w.len(),
        });
    }
    if d_rw.len() != m {
        return Err(DslError::DimensionMismatch {
            context: "reweight vs nodes".into(),
            expected: m,
            found: d_rw.len(),
        });
    }
    if laplacian.nrows() != m || laplacian.ncols() != m {
        return Err(DslError::DimensionMismatch {
            context: "laplacian vs nodes".into(),
            expected: m,
            found: laplacian.nrows(),
        });
    }
    for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !v.is_finite() || v < 0.0 {
            return Err(DslError::InvalidParameter {
                name,
                message: format!("{v} must be finite and >= 0"),
            });
        }
    }
    check_box(c_star)?;
    if !b.is_finite() {
        return Err(DslError::InvalidParameter {
            name: "b",
            message: "intercept must be finite".into(),
        });
    }
    let g_mat = symmetrize(x * x.transpose());
    let xtx = symmetrize(x.transpose() * x);
    let msys = system_matrix(&g_mat, d_rw, lambda1, lambda2, laplacian);
    let minv = invert_system(&msys, g_mat.trace())?;
    let yf: Vec<f64> = y.iter().map(|&l| l as f64).collect();
    Ok(build_dual_with(
        x,
        &xtx,
        &g_mat,
        g_mat.trace(),
        &msys,
        &minv,
        &yf,
        w,
        b,
        c_star,
    ))
}

/// Dual assembly with every expensive piece precomputed (hot path of the
/// fit loop).
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_dual_with(
    x: &DMatrix<f64>,
    xtx: &DMatrix<f64>,
    g_mat: &DMatrix<f64>,
    trace_g: f64,
    msys: &DMatrix<f64>,
    minv: &DMatrix<f64>,
    yf: &[f64],
    w: &DVector<f64>,
    b: f64,
    c_star: f64,
) -> DualProblem {
    let n = x.ncols();
    let z = minv * 0.5;
    let xtzx = symmetrize(x.transpose() * (&z * x));
    let wtw = w.dot(w);
    let k = DMatrix::from_fn(n, n, |i, j| -wtw * yf[i] * yf[j] * xtzx[(i, j)]);
    let zgw = &z * (g_mat * w);
    let xt_zgw = x.transpose() * zgw;
    let q = DVector::from_fn(n, |i, _| 1.0 - yf[i] * b - 2.0 * yf[i] * xt_zgw[i]);
    let g = trace_g - 2.0 * xtzx.component_mul(xtx).sum();
    DualProblem {
        k,
        q,
        box_upper: c_star,
        z,
        r: msys.clone(),
        g,
    }
}

/// Dual objective `1/2 a^T K a + q^T a + g` at an arbitrary point.
pub fn dual_value(p: &DualProblem, alpha: &DVector<f64>) -> f64 {
    0.5 * alpha.dot(&(&p.k * alpha)) + p.q.dot(alpha) + p.g
}

/// Complementary multipliers `gamma = C* - alpha`; every `alpha_i` must
/// already lie in the box.
pub fn gamma_from_alpha(alpha: &DVector<f64>, c_star: f64) -> Result<DVector<f64>> {
    check_box(c_star)?;
    if let Some(&bad) = alpha.iter().find(|&&a| !(0.0..=c_star).contains(&a)) {
        return Err(DslError::InvalidParameter {
            name: "alpha",
            message: format!("entry {bad} outside [0, {c_star}]"),
        });
    }
    Ok(DVector::from_fn(alpha.len(), |i, _| c_star - alpha[i]))
}

fn check_box(c_star: f64) -> Result<()> {
    if !c_star.is_finite() || c_star <= 0.0 {
        return Err(DslError::InvalidParameter {
            name: "c_star",
            message: format!("{c_star} must be finite and positive"),
        });
    }
    Ok(())
}

/// Maximizes the dual from `alpha = 0`.
pub fn solve_box_qp(p: &DualProblem) -> Result<DualSolution> {
    solve_core(p, None, None)
}

/// Maximizes the dual warm-started from `alpha0` (clipped into the box).
pub fn solve_box_qp_from(p: &DualProblem, alpha0: &DVector<f64>) -> Result<DualSolution> {
    solve_core(p, Some(alpha0), None)
}

/// Warm-started solve invoking `observer` with the iterate after every
/// sweep; for tests and instrumentation.
pub fn solve_box_qp_observed(
    p: &DualProblem,
    alpha0: &DVector<f64>,
    observer: &mut dyn FnMut(&DVector<f64>),
) -> Result<DualSolution> {
    solve_core(p, Some(alpha0), Some(observer))
}

fn solve_core(
    p: &DualProblem,
    alpha0: Option<&DVector<f64>>,
    mut observer: Option<&mut dyn FnMut(&DVector<f64>)>,
) -> Result<DualSolution> {
    let n = p.q.len();
    if p.k.nrows() != n || p.k.ncols() != n {
        return Err(DslError::DimensionMismatch {
            context: "dual matrix vs linear term".into(),
            expected: n,
            found: p.k.nrows(),
        });
    }
    check_box(p.box_upper)?;
    let c = p.box_upper;

    let mut alpha = match alpha0 {
        Some(a0) => {
            if a0.len() != n {
                return Err(DslError::DimensionMismatch {
                    context: "warm start vs samples".into(),
                    expected: n,
                    found: a0.len(),
                });
            }
            DVector::from_fn(n, |i, _| a0[i].clamp(0.0, c))
        }
        None => DVector::zeros(n),
    };

    let fro = p.k.norm();
    if fro > 0.0 {
        let top = max_eigenvalue_estimate(&p.k, fro);
        if top > 1e-6 * fro {
            log::warn!(
                "dual matrix has positive curvature (top eigenvalue ~ {top:.3e}); \
                 the result is a stationary or boundary point, not a certified maximum"
            );
        }
    }

    let mut kalpha = &p.k * &alpha;
    let tol = 1e-6 * 1.0f64.max(p.q.norm());
    let mut converged = false;
    for sweep in 0..MAX_SWEEPS {
        for i in 0..n {
            let kii = p.k[(i, i)];
            let gi = p.q[i] + kalpha[i];
            let target = if kii < 0.0 {
                // exact 1-D maximizer, clipped into the box
                (alpha[i] - gi / kii).clamp(0.0, c)
            } else {
                // flat or convex coordinate: the best endpoint wins
                let lin = gi - kii * alpha[i];
                let at_c = 0.5 * kii * c * c + lin * c;
                if at_c > 0.0 {
                    c
                } else if at_c < 0.0 {
                    0.0
                } else {
                    alpha[i]
                }
            };
            let delta = target - alpha[i];
            if delta != 0.0 {
                kalpha.axpy(delta, &p.k.column(i), 1.0);
                alpha[i] = target;
            }
        }
        if let Some(obs) = observer.as_mut() {
            obs(&alpha);
        }
        // periodically refresh the cached product against drift
        if sweep % 256 == 255 {
            kalpha = &p.k * &alpha;
        }
        let mut pg_sq = 0.0;
        for i in 0..n {
            let gi = p.q[i] + kalpha[i];
            let pg = if alpha[i] <= 0.0 {
                gi.max(0.0)
            } else if alpha[i] >= c {
                gi.min(0.0)
            } else {
                gi
            };
            pg_sq += pg * pg;
        }
        if pg_sq.sqrt() <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("box QP stopped at the sweep cap without meeting tolerance");
    }
    let value = dual_value(p, &alpha);
    let gamma = gamma_from_alpha(&alpha, c)?;
    Ok(DualSolution {
        alpha,
        gamma,
        dual_value: value,
    })
}

/// Rayleigh-quotient estimate of the largest eigenvalue via shifted power
/// iteration (the shift keeps the dominant eigenvalue of `K + shift I`
/// aligned with the largest eigenvalue of `K`).
fn max_eigenvalue_estimate(k: &DMatrix<f64>, shift: f64) -> f64 {
    let n = k.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + i as f64 * 1e-3);
    v /= v.norm();
    for _ in 0..32 {
        let mut u = k * &v;
        u.axpy(shift, &v, 1.0);
        let nr = u.norm();
        if nr == 0.0 {
            return -shift;
        }
        v = u / nr;
    }
    v.dot(&(k * &v))
}
