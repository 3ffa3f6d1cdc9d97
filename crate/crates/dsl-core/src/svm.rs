//! Max-margin hyperplane solvers.
//!
//! Both flavors minimize `reg(w) + C * sum_i max(0, 1 - y_i (w^T x_i + b))`
//! over (w, b) with an unregularized bias:
//!
//! - flavor 2: `reg(w) = ||w||_2^2 / 2`, solved in the dual by pairwise
//!   coordinate ascent (maximal-violating-pair selection, the equality
//!   constraint `sum_i y_i alpha_i = 0` is preserved by every pair step);
//! - flavor 1: `reg(w) = ||w||_1`, solved exactly as a linear program
//!   (`w = u - v`, `b = b+ - b-`, slack per sample) with a dense two-phase
//!   simplex. Intended for desk-scale instances.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{DslError, Result};
use crate::optim::SelectionState;

/// Regularizer flavor; serialized as the numeric exponent (1 or 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginFlavor {
    L1,
    L2,
}

impl MarginFlavor {
    pub fn as_u8(self) -> u8 {
        match self {
            MarginFlavor::L1 => 1,
            MarginFlavor::L2 => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(MarginFlavor::L1),
            2 => Ok(MarginFlavor::L2),
            _ => Err(DslError::InvalidParameter {
                name: "flavor",
                message: format!("{v} is not 1 or 2"),
            }),
        }
    }
}

impl Serialize for MarginFlavor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for MarginFlavor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        MarginFlavor::from_u8(v).map_err(|_| D::Error::custom("flavor must be 1 or 2"))
    }
}

/// Affine decision rule `x -> w^T x + b` with its training flavor.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub w: DVector<f64>,
    pub b: f64,
    pub flavor: MarginFlavor,
}

impl Serialize for Hyperplane {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Hyperplane", 3)?;
        st.serialize_field("flavor", &self.flavor)?;
        st.serialize_field("b", &self.b)?;
        st.serialize_field("w", &self.w.as_slice())?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Hyperplane {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            flavor: MarginFlavor,
            b: f64,
            w: Vec<f64>,
        }
        let raw = Raw::deserialize(d)?;
        Ok(Hyperplane {
            w: DVector::from_vec(raw.w),
            b: raw.b,
            flavor: raw.flavor,
        })
    }
}

/// Hinge loss `max(0, 1 - y * score)`.
pub fn hinge_loss(y: i8, score: f64) -> f64 {
    (1.0 - y as f64 * score).max(0.0)
}

/// Full training objective `reg(w) + C * total hinge` for a candidate
/// hyperplane on columns of `xhat`.
pub fn margin_objective(h: &Hyperplane, xhat: &DMatrix<f64>, y: &[i8], c: f64) -> f64 {
    let reg = match h.flavor {
        MarginFlavor::L1 => h.w.iter().map(|v| v.abs()).sum::<f64>(),
        MarginFlavor::L2 => 0.5 * h.w.dot(&h.w),
    };
    let hinge: f64 = (0..xhat.ncols())
        .map(|i| hinge_loss(y[i], h.w.dot(&xhat.column(i)) + h.b))
        .sum();
    reg + c * hinge
}

fn validate_inputs(xhat: &DMatrix<f64>, y: &[i8], c: f64) -> Result<()> {
    if xhat.ncols() == 0 || xhat.nrows() == 0 {
        return Err(DslError::EmptyDataset);
    }
    if y.len() != xhat.ncols() {
        return Err(DslError::DimensionMismatch {
            context: "labels vs feature columns".into(),
            expected: xhat.ncols(),
            found: y.len(),
        });
    }
    for &label in y {
        if label != 1 && label != -1 {
            return Err(DslError::InvalidLabel {
                found: label.to_string(),
            });
        }
    }
    if !y.iter().any(|&v| v == 1) || !y.iter().any(|&v| v == -1) {
        return Err(DslError::SingleClass);
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(DslError::InvalidParameter {
            name: "C",
            message: format!("{c} must be finite and positive"),
        });
    }
    Ok(())
}

/// Fits the hyperplane on feature columns `xhat` (one column per sample).
///
/// Deterministic: no randomness in either solver. The flavor-2 path stops
/// when the maximal KKT violation drops below 1e-8 (cap 1e5 pair steps);
/// the flavor-1 path terminates at an exact LP vertex.
pub fn fit_svm(xhat: &DMatrix<f64>, y: &[i8], c: f64, flavor: MarginFlavor) -> Result<Hyperplane> {
    validate_inputs(xhat, y, c)?;
    match flavor {
        MarginFlavor::L2 => fit_l2(xhat, y, c),
        MarginFlavor::L1 => fit_l1(xhat, y, c),
    }
}

const SMO_TOL: f64 = 1e-8;
const SMO_MAX_STEPS: usize = 100_000;

fn fit_l2(xhat: &DMatrix<f64>, y: &[i8], c: f64) -> Result<Hyperplane> {
    let n = xhat.ncols();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    // gram matrix K_ij = <x_i, x_j>; the dual gradient is maintained
    // incrementally from its columns
    let gram = xhat.transpose() * xhat;
    let mut alpha = vec![0.0f64; n];
    // grad_i of the dual objective 1/2 a^T Q a - e^T a, Q_ij = y_i y_j K_ij
    let mut grad = vec![-1.0f64; n];

    let mut m_up = 0.0;
    let mut m_low = 0.0;
    for step in 0..=SMO_MAX_STEPS {
        // maximal violating pair over b-candidates -y_i grad_i
        let mut i_up: Option<usize> = None;
        let mut i_low: Option<usize> = None;
        m_up = f64::NEG_INFINITY;
        m_low = f64::INFINITY;
        for t in 0..n {
            let cand = -yf[t] * grad[t];
            let up = (y[t] == 1 && alpha[t] < c) || (y[t] == -1 && alpha[t] > 0.0);
            let low = (y[t] == 1 && alpha[t] > 0.0) || (y[t] == -1 && alpha[t] < c);
            if up && cand > m_up {
                m_up = cand;
                i_up = Some(t);
            }
            if low && cand < m_low {
                m_low = cand;
                i_low = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i_up, i_low) else {
            break;
        };
        if m_up - m_low <= SMO_TOL {
            break;
        }
        if step == SMO_MAX_STEPS {
            log::warn!("margin solver hit the step cap with violation {}", m_up - m_low);
            break;
        }

        // exact minimization along alpha_i += y_i t, alpha_j -= y_j t
        // (the equality constraint is preserved; label factors cancel in
        // the curvature, which is |x_i - x_j|^2)
        let a = gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)];
        let slope = yf[i] * grad[i] - yf[j] * grad[j]; // = m_low - m_up < 0 direction
        let mut t_new = if a > 1e-300 { -slope / a } else { f64::INFINITY };
        // box limits for both coordinates
        let t_hi_i = if y[i] == 1 { c - alpha[i] } else { alpha[i] };
        let t_hi_j = if y[j] == 1 { alpha[j] } else { c - alpha[j] };
        t_new = t_new.min(t_hi_i).min(t_hi_j);
        if t_new <= 0.0 {
            break; // numerically stuck; violation already ~tol
        }
        alpha[i] += yf[i] * t_new;
        alpha[j] -= yf[j] * t_new;
        // clamp away accumulated round-off
        alpha[i] = alpha[i].clamp(0.0, c);
        alpha[j] = alpha[j].clamp(0.0, c);
        for t in 0..n {
            grad[t] += t_new * yf[t] * (gram[(t, i)] - gram[(t, j)]);
        }
    }

    let mut w = DVector::zeros(xhat.nrows());
    for t in 0..n {
        if alpha[t] > 0.0 {
            w.axpy(alpha[t] * yf[t], &xhat.column(t).into_owned(), 1.0);
        }
    }
    let b = if m_up.is_finite() && m_low.is_finite() {
        0.5 * (m_up + m_low)
    } else {
        0.0
    };
    Ok(Hyperplane {
        w,
        b,
        flavor: MarginFlavor::L2,
    })
}

fn fit_l1(xhat: &DMatrix<f64>, y: &[i8], c: f64) -> Result<Hyperplane> {
    let m = xhat.nrows();
    let n = xhat.ncols();
    // variables: u(m), v(m), b+, b-, xi(n), surplus(n); all >= 0
    // row i: y_i (u - v)^T x_i + y_i (b+ - b-) + xi_i - s_i = 1
    let cols = 2 * m + 2 + 2 * n;
    let mut a = DMatrix::zeros(n, cols);
    for i in 0..n {
        let yi = y[i] as f64;
        for k in 0..m {
            let v = yi * xhat[(k, i)];
            a[(i, k)] = v;
            a[(i, m + k)] = -v;
        }
        a[(i, 2 * m)] = yi;
        a[(i, 2 * m + 1)] = -yi;
        a[(i, 2 * m + 2 + i)] = 1.0;
        a[(i, 2 * m + 2 + n + i)] = -1.0;
    }
    let mut cost = DVector::zeros(cols);
    for k in 0..2 * m {
        cost[k] = 1.0;
    }
    for i in 0..n {
        cost[2 * m + 2 + i] = c;
    }
    let rhs = DVector::from_element(n, 1.0);
    let z = simplex::minimize(&a, &rhs, &cost)?;
    let mut w = DVector::zeros(m);
    for k in 0..m {
        w[k] = z[k] - z[m + k];
    }
    let b = z[2 * m] - z[2 * m + 1];
    Ok(Hyperplane {
        w,
        b,
        flavor: MarginFlavor::L1,
    })
}

/// Predicted label `sign(w^T Phi^T x + b)` with `sign(0) = +1`.
pub fn predict(h: &Hyperplane, selection: &SelectionState, x: &DVector<f64>) -> Result<i8> {
    let phi = selection.phi();
    if x.len() != phi.nrows() {
        return Err(DslError::DimensionMismatch {
            context: "predict input vs selection rows".into(),
            expected: phi.nrows(),
            found: x.len(),
        });
    }
    if h.w.len() != phi.ncols() {
        return Err(DslError::DimensionMismatch {
            context: "hyperplane vs selection columns".into(),
            expected: phi.ncols(),
            found: h.w.len(),
        });
    }
    let score = decision_score(h, selection, x);
    Ok(if score >= 0.0 { 1 } else { -1 })
}

/// Raw decision value `w^T Phi^T x + b`.
pub fn decision_score(h: &Hyperplane, selection: &SelectionState, x: &DVector<f64>) -> f64 {
    // w^T Phi^T x = (Phi w)^T x, avoiding the m x m transpose product
    (selection.phi() * &h.w).dot(x) + h.b
}

/// Dense two-phase simplex for `min c^T z  s.t.  A z = b, z >= 0, b >= 0`.
/// Bland's rule throughout, so it terminates on degenerate instances.
mod simplex {
    use super::*;

    const PIVOT_TOL: f64 = 1e-10;

    pub fn minimize(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
        let rows = a.nrows();
        let cols = a.ncols();
        debug_assert!(b.iter().all(|&v| v >= 0.0));
        // working tableau with artificial identity block on the right
        let mut t = DMatrix::zeros(rows, cols + rows);
        t.view_mut((0, 0), (rows, cols)).copy_from(a);
        for r in 0..rows {
            t[(r, cols + r)] = 1.0;
        }
        let mut rhs = b.clone();
        let mut basis: Vec<usize> = (cols..cols + rows).collect();

        // phase 1: minimize the artificial sum
        let mut phase_cost = DVector::zeros(cols + rows);
        for k in cols..cols + rows {
            phase_cost[k] = 1.0;
        }
        let obj1 = run(&mut t, &mut rhs, &mut basis, &phase_cost, cols + rows)?;
        if obj1 > 1e-7 {
            return Err(DslError::InvalidParameter {
                name: "lp",
                message: "linear program infeasible".into(),
            });
        }
        // drive any leftover zero-level artificials out of the basis
        for r in 0..rows {
            if basis[r] >= cols {
                if let Some(cpiv) = (0..cols).find(|&j| t[(r, j)].abs() > PIVOT_TOL) {
                    pivot(&mut t, &mut rhs, &mut basis, r, cpiv);
                }
                // else: redundant row, harmless to leave (rhs is zero)
            }
        }

        // phase 2: real costs, artificial columns barred from entering
        let mut phase2 = DVector::zeros(cols + rows);
        phase2.rows_mut(0, cols).copy_from(c);
        run(&mut t, &mut rhs, &mut basis, &phase2, cols)?;

        let mut z = DVector::zeros(cols);
        for r in 0..rows {
            if basis[r] < cols {
                z[basis[r]] = rhs[r];
            }
        }
        Ok(z)
    }

    /// Pivot loop; only columns below `enter_limit` may enter. Returns the
    /// final objective value.
    fn run(
        t: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
        basis: &mut Vec<usize>,
        cost: &DVector<f64>,
        enter_limit: usize,
    ) -> Result<f64> {
        let rows = t.nrows();
        loop {
            // reduced costs r_j = c_j - c_B^T B^{-1} A_j, from the updated tableau
            let mut entering = None;
            for j in 0..enter_limit {
                if basis.contains(&j) {
                    continue;
                }
                let mut red = cost[j];
                for r in 0..rows {
                    let cb = cost[basis[r]];
                    if cb != 0.0 {
                        red -= cb * t[(r, j)];
                    }
                }
                if red < -1e-9 {
                    entering = Some(j); // Bland: first (lowest-index) violator
                    break;
                }
            }
            let Some(j) = entering else {
                let obj = (0..rows).map(|r| cost[basis[r]] * rhs[r]).sum();
                return Ok(obj);
            };
            // ratio test, Bland ties by lowest basic index
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..rows {
                if t[(r, j)] > PIVOT_TOL {
                    let ratio = rhs[r] / t[(r, j)];
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-12
                                || (ratio < lratio + 1e-12 && basis[r] < basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(DslError::InvalidParameter {
                    name: "lp",
                    message: "linear program unbounded".into(),
                });
            };
            pivot(t, rhs, basis, r, j);
        }
    }

    fn pivot(
        t: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
        basis: &mut [usize],
        r: usize,
        j: usize,
    ) {
        let piv = t[(r, j)];
        let cols = t.ncols();
        for cc in 0..cols {
            t[(r, cc)] /= piv;
        }
        rhs[r] /= piv;
        for rr in 0..t.nrows() {
            if rr == r {
                continue;
            }
            let f = t[(rr, j)];
            if f != 0.0 {
                for cc in 0..cols {
                    let delta = f * t[(r, cc)];
                    t[(rr, cc)] -= delta;
                }
                rhs[rr] -= f * rhs[r];
                rhs[rr] = rhs[rr].max(0.0); // round-off guard: basics stay feasible
            }
        }
        basis[r] = j;
    }
}
