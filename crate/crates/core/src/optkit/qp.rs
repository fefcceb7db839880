//! Primal active-set solver for dense convex QPs
//!
//! ```text
//! minimize   ½ zᵀ H z + cᵀ z
//! subject to A_eq z = b_eq,  A_in z ≤ b_in
//! ```
//!
//! A feasible starting point comes from a phase-1 LP. Multipliers follow the
//! convention `H z + c + A_eqᵀ μ + A_inᵀ λ = 0` with `λ ≥ 0`.

use serde::{Deserialize, Serialize};

use super::lp::{LinearProgram, LpOutcome};
use crate::error::{invalid, Result};
use crate::numkit::{Matrix, SymMatrix, Vector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: SymMatrix,
    pub c: Vector,
    pub a_eq: Matrix,
    pub b_eq: Vector,
    pub a_in: Matrix,
    pub b_in: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z_star: Vector,
    pub lambda: Vector,
    pub mu: Vector,
    /// Inequality rows held with equality in the final working set.
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Spanning-set tracker used to keep the working set linearly independent.
struct RowBasis {
    q: Vec<Vector>,
}

impl RowBasis {
    fn new() -> Self {
        RowBasis { q: Vec::new() }
    }

    /// Adds `a` if it is independent of the current rows (relative test).
    fn try_add(&mut self, a: &Vector) -> bool {
        let norm = a.norm();
        if norm == 0.0 {
            return false;
        }
        let mut r = a / norm;
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for qk in &self.q {
                let d = qk.dot(&r);
                r.axpy(-d, qk, 1.0);
            }
        }
        let rn = r.norm();
        if rn > 1e-9 {
            self.q.push(r / rn);
            true
        } else {
            false
        }
    }
}

impl QpProblem {
    pub fn new(h: SymMatrix, a_eq: Matrix, b_eq: Vector, a_in: Matrix, b_in: Vector) -> Self {
        let n = h.dim();
        QpProblem { h, c: Vector::zeros(n), a_eq, b_eq, a_in, b_in }
    }

    pub fn with_linear(mut self, c: Vector) -> Self {
        self.c = c;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.h.dim()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.c.len() != n || self.a_eq.ncols() != n || self.a_in.ncols() != n {
            return Err(invalid("QP: inconsistent variable dimension"));
        }
        if self.a_eq.nrows() != self.b_eq.len() || self.a_in.nrows() != self.b_in.len() {
            return Err(invalid("QP: constraint rows and right-hand sides disagree"));
        }
        Ok(())
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * self.h.quad(z) + self.c.dot(z)
    }

    /// Stationarity residual `‖Hz + c + A_eqᵀμ + A_inᵀλ‖∞`.
    pub fn stationarity(&self, z: &Vector, lambda: &Vector, mu: &Vector) -> f64 {
        let g = self.h.as_matrix() * z + &self.c + self.a_eq.tr_mul(mu) + self.a_in.tr_mul(lambda);
        g.amax()
    }

    fn scale(&self) -> f64 {
        1.0 + self.h.amax() + self.c.amax() + self.a_eq.amax() + self.a_in.amax()
    }
}

/// Solves the QP by a primal active-set iteration.
///
/// The iteration cap is `10·(constraints + variables)`.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    p.validate()?;
    let n = p.n_vars();
    let me = p.a_eq.nrows();
    let mi = p.a_in.nrows();
    let cap = 10 * (me + mi + n);

    let infeasible = || QpSolution {
        z_star: Vector::zeros(n),
        lambda: Vector::zeros(mi),
        mu: Vector::zeros(me),
        active_set: Vec::new(),
        status: QpStatus::Infeasible,
        iterations: 0,
        kkt_residual: f64::INFINITY,
    };

    let lp = LinearProgram::new(Vector::zeros(n), p.a_in.clone(), p.b_in.clone())
        .with_equalities(p.a_eq.clone(), p.b_eq.clone());
    let mut z = match lp.solve()? {
        LpOutcome::Optimal { x, .. } => x,
        _ => return Ok(infeasible()),
    };

    let feas_tol = |i: usize| 1e-9 * (1.0 + p.b_in[i].abs());

    // working set: independent equalities first, then active inequalities
    let mut basis = RowBasis::new();
    let mut eq_rows: Vec<usize> = Vec::new();
    for i in 0..me {
        if basis.try_add(&p.a_eq.row(i).transpose()) {
            eq_rows.push(i);
        }
    }
    let mut work: Vec<usize> = Vec::new();
    for i in 0..mi {
        let slack = p.b_in[i] - p.a_in.row(i).transpose().dot(&z);
        if slack.abs() <= feas_tol(i) && basis.try_add(&p.a_in.row(i).transpose()) {
            work.push(i);
        }
    }

    let hm = p.h.as_matrix();
    let mut iterations = 0;
    let mut status = QpStatus::MaxIterations;
    let mut y_eq = Vector::zeros(eq_rows.len());
    let mut y_in = Vector::zeros(work.len());
    // set after an unblocked full step: z minimizes over the working set
    let mut at_min = false;

    while iterations < cap {
        iterations += 1;
        let k_eq = eq_rows.len();
        let k = k_eq + work.len();
        let mut kkt = Matrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(hm);
        for (r, &i) in eq_rows.iter().enumerate() {
            let row = p.a_eq.row(i);
            kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
        }
        for (r, &i) in work.iter().enumerate() {
            let row = p.a_in.row(i);
            kkt.view_mut((n + k_eq + r, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + k_eq + r), (n, 1)).copy_from(&row.transpose());
        }
        let g = hm * &z + &p.c;
        let mut rhs = Vector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        let sol = kkt.lu().solve(&rhs).ok_or_else(|| crate::error::Error::SolverFailure {
            iterations,
            detail: "singular KKT matrix in active-set step".into(),
        })?;
        let step = sol.rows(0, n).into_owned();
        y_eq = sol.rows(n, k_eq).into_owned();
        y_in = sol.rows(n + k_eq, work.len()).into_owned();

        if at_min || step.amax() <= 1e-12 * (1.0 + z.amax()) {
            // stationary on the working set: check multiplier signs
            let lscale = 1e-9 * (1.0 + y_in.amax() + y_eq.amax());
            let most_negative = y_in
                .iter()
                .enumerate()
                .filter(|(_, &l)| l < -lscale)
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap());
            match most_negative {
                None => {
                    status = QpStatus::Optimal;
                    break;
                }
                Some((pos, _)) => {
                    at_min = false;
                    work.remove(pos);
                    basis = RowBasis::new();
                    for &i in &eq_rows {
                        basis.try_add(&p.a_eq.row(i).transpose());
                    }
                    for &i in &work {
                        basis.try_add(&p.a_in.row(i).transpose());
                    }
                    continue;
                }
            }
        }

        let mut alpha = 1.0;
        let mut blocking: Option<usize> = None;
        for i in 0..mi {
            if work.contains(&i) {
                continue;
            }
            let ai = p.a_in.row(i).transpose();
            let ap = ai.dot(&step);
            if ap > 1e-14 * ai.norm() * step.norm() {
                let slack = (p.b_in[i] - ai.dot(&z)).max(0.0);
                let t = slack / ap;
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        z.axpy(alpha, &step, 1.0);
        at_min = blocking.is_none();
        if let Some(i) = blocking {
            if basis.try_add(&p.a_in.row(i).transpose()) {
                work.push(i);
            }
        }
    }

    let mut lambda = Vector::zeros(mi);
    for (r, &i) in work.iter().enumerate() {
        lambda[i] = y_in[r];
    }
    let mut mu = Vector::zeros(me);
    for (r, &i) in eq_rows.iter().enumerate() {
        mu[i] = y_eq[r];
    }
    let kkt_residual = p.stationarity(&z, &lambda, &mu) / p.scale();
    let mut active_set = work.clone();
    active_set.sort_unstable();
    Ok(QpSolution { z_star: z, lambda, mu, active_set, status, iterations, kkt_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{mat, vec};

    fn no_eq(n: usize) -> (Matrix, Vector) {
        (Matrix::zeros(0, n), Vector::zeros(0))
    }

    #[test]
    fn unconstrained_centered() {
        let (ae, be) = no_eq(3);
        let p = QpProblem::new(SymMatrix::identity(3), ae, be, Matrix::zeros(0, 3), Vector::zeros(0));
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert!(s.z_star.amax() < 1e-14);
    }

    #[test]
    fn single_bound_by_hand() {
        let (ae, be) = no_eq(1);
        let p = QpProblem::new(SymMatrix::identity(1), ae, be, mat(1, 1, &[-1.0]), vec(&[-1.0]));
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert!((s.z_star[0] - 1.0).abs() < 1e-12);
        assert!((s.lambda[0] - 1.0).abs() < 1e-12);
        assert_eq!(s.active_set, vec![0]);
    }

    #[test]
    fn infeasible_constraints() {
        let (ae, be) = no_eq(1);
        let p = QpProblem::new(SymMatrix::identity(1), ae, be, mat(2, 1, &[1.0, -1.0]), vec(&[-1.0, -1.0]));
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn equality_with_linear_term() {
        // min ½(z1² + z2²) - z1 s.t. z1 + z2 = 0 → z = (0.5, -0.5)
        let p = QpProblem::new(
            SymMatrix::identity(2),
            mat(1, 2, &[1.0, 1.0]),
            vec(&[0.0]),
            Matrix::zeros(0, 2),
            Vector::zeros(0),
        )
        .with_linear(vec(&[-1.0, 0.0]));
        let s = solve_qp(&p).unwrap();
        assert!((s.z_star[0] - 0.5).abs() < 1e-12 && (s.z_star[1] + 0.5).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-12);
    }

    #[test]
    fn dropping_a_constraint() {
        // start vertex has both bounds active but optimum only needs one
        // min ½‖z - (2, -1)‖² s.t. z1 ≤ 1, z2 ≤ 1
        let (ae, be) = no_eq(2);
        let p = QpProblem::new(SymMatrix::identity(2), ae, be, mat(2, 2, &[1.0, 0.0, 0.0, 1.0]), vec(&[1.0, 1.0]))
            .with_linear(vec(&[-2.0, 1.0]));
        let s = solve_qp(&p).unwrap();
        assert!((s.z_star[0] - 1.0).abs() < 1e-12 && (s.z_star[1] + 1.0).abs() < 1e-12);
        assert_eq!(s.active_set, vec![0]);
        assert!((s.lambda[0] - 1.0).abs() < 1e-12 && s.lambda[1] == 0.0);
    }
}
