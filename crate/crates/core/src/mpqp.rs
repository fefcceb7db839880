//! The regularized multi-parametric QP in the closed-loop decision variable
//! `G ∈ ℝ^{2N}`, and its per-state solution.

use std::sync::OnceLock;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::data::PredictorData;
use crate::error::{invalid, Error, Result};
use crate::numkit::{self, Matrix, SymMatrix, Vector};
use crate::optkit::{solve_qp, QpProblem, QpSolution, QpStatus};

const RANK_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;

/// Control specification: horizon, weights, polyhedral constraints
/// `C_x x(k) + C_u u(k) ≤ d` and the regularization weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSpec {
    pub horizon: usize,
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub p: SymMatrix,
    #[serde(with = "numkit::rows")]
    pub c_x: Matrix,
    #[serde(with = "numkit::rows")]
    pub c_u: Matrix,
    #[serde(with = "numkit::column")]
    pub d: Vector,
    pub gamma: f64,
}

impl MpcSpec {
    pub fn n_constraints(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if self.q.dim() != n || self.p.dim() != n || self.r.dim() != m {
            return Err(invalid(format!("weights must be {n}x{n} (Q, P) and {m}x{m} (R)")));
        }
        let nc = self.d.len();
        if self.c_x.shape() != (nc, n) || self.c_u.shape() != (nc, m) {
            return Err(invalid(format!("constraints must be C_x: {nc}x{n}, C_u: {nc}x{m}")));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma must be positive and finite"));
        }
        if !numkit::is_positive_definite(&self.r, 0.0) {
            return Err(invalid("R must be positive definite"));
        }
        let tol = 1e-12;
        if self.q.min_eigenvalue() < -tol * (1.0 + self.q.amax()) {
            return Err(invalid("Q must be positive semi-definite"));
        }
        if self.p.min_eigenvalue() < -tol * (1.0 + self.p.amax()) {
            return Err(invalid("P must be positive semi-definite"));
        }
        if self.d.iter().any(|v| !v.is_finite()) {
            return Err(invalid("constraint bounds must be finite (omit a row to drop it)"));
        }
        numkit::check_finite(&self.c_x, "C_x")?;
        numkit::check_finite(&self.c_u, "C_u")?;
        Ok(())
    }

    /// `diag(Q, …, Q, P)` of size `nL`.
    pub fn state_weight(&self) -> Matrix {
        let mut blocks: Vec<&Matrix> = vec![self.q.as_matrix(); self.horizon - 1];
        blocks.push(self.p.as_matrix());
        numkit::block_diag(&blocks)
    }

    /// `diag(R, …, R)` of size `mL`.
    pub fn input_weight(&self) -> Matrix {
        numkit::block_diag(&vec![self.r.as_matrix(); self.horizon])
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        crate::data::hex_digest(json.as_bytes())
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        MpcSpec { gamma, ..self.clone() }
    }

    pub fn with_terminal(&self, p: SymMatrix) -> Self {
        MpcSpec { p, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// Number of data columns `N`; the decision variable has `2N` entries.
    pub n_cols: usize,
    pub n_c: usize,
}

impl Dims {
    pub fn n_ineq(&self) -> usize {
        self.n_c * self.horizon
    }

    pub fn n_vars(&self) -> usize {
        2 * self.n_cols
    }
}

/// The assembled mp-QP
/// `min ½ GᵀH_γG  s.t.  Ξ G ≤ D − Ψ x,  Θ G = [x; 0]`.
#[derive(Debug)]
pub struct MpQp {
    pub dims: Dims,
    pub gamma: f64,
    pub h_gamma: SymMatrix,
    pub xi: Matrix,
    pub psi: Matrix,
    pub theta: Matrix,
    pub d: Vector,
    /// `𝒳 = [X_future X_future]`
    pub x_mat: Matrix,
    /// `𝒱 = [U_block U_block]`
    pub v_mat: Matrix,
    kkt: OnceLock<std::result::Result<KktCache, String>>,
}

/// Products with `H_γ⁻¹` shared by every active set.
///
/// With `Ω = [Ξ; Θ]`, the matrix `ΦH⁻¹Φᵀ` of any active set is a principal
/// submatrix of `ΩH⁻¹Ωᵀ`, and the maps to `U`, `X̃` and `ΞG` are column
/// selections of `𝒱H⁻¹Ωᵀ`, `𝒳H⁻¹Ωᵀ` and `ΞH⁻¹Ωᵀ`.
#[derive(Debug)]
pub(crate) struct KktCache {
    /// `ΩH⁻¹Ωᵀ`
    pub gram: Matrix,
    pub v_maps: Matrix,
    pub x_maps: Matrix,
    /// `C` in `Ωᵀ = Q_Ω C`, with `Q_Ω` an orthonormal basis of the range
    /// of `Ωᵀ` (from a rank-revealing SVD).
    pub omega_c: Matrix,
    /// `(Q_ΩᵀH⁻¹Q_Ω)⁻¹` and `H⁻¹Q_Ω (Q_ΩᵀH⁻¹Q_Ω)⁻¹`, for the reduced solve.
    pub reduced_h: SymMatrix,
    pub reduced_lift: Matrix,
}

pub fn assemble(pd: &PredictorData, spec: &MpcSpec) -> Result<MpQp> {
    let (n, m, l) = (pd.n(), pd.m(), pd.horizon);
    spec.validate(n, m)?;
    if spec.horizon != l {
        return Err(invalid(format!(
            "specification horizon {} differs from data horizon {l}",
            spec.horizon
        )));
    }
    let rank = pd.rank_report();
    if !rank.satisfied {
        return Err(Error::PredictorUndefined { rank: rank.rank, required: rank.required });
    }
    let big_n = pd.n_cols();
    let nc = spec.n_constraints();
    let dims = Dims { n, m, horizon: l, n_cols: big_n, n_c: nc };

    let x_mat = numkit::hstack(&[&pd.x_future, &pd.x_future]);
    let v_mat = numkit::hstack(&[&pd.u_block, &pd.u_block]);
    let qbar = spec.state_weight();
    let rbar = spec.input_weight();
    let mut h = x_mat.transpose() * (&qbar * &x_mat) + v_mat.transpose() * (&rbar * &v_mat);
    for i in 0..2 * big_n {
        h[(i, i)] += spec.gamma;
    }
    let h_gamma = SymMatrix::symmetrize(h * 0.5);

    // row block k constrains x(k): k = 0 through Ψ, k ≥ 1 through block k−1 of X̃
    let mut xi = Matrix::zeros(nc * l, 2 * big_n);
    let mut psi = Matrix::zeros(nc * l, n);
    let mut d = Vector::zeros(nc * l);
    for k in 0..l {
        let mut rows = &spec.c_u * v_mat.rows(k * m, m);
        if k == 0 {
            psi.view_mut((0, 0), (nc, n)).copy_from(&spec.c_x);
        } else {
            rows += &spec.c_x * x_mat.rows((k - 1) * n, n);
        }
        xi.view_mut((k * nc, 0), (nc, 2 * big_n)).copy_from(&rows);
        d.rows_mut(k * nc, nc).copy_from(&spec.d);
    }
    let theta = numkit::block_diag(&[&pd.x_past, &pd.x_past]);

    Ok(MpQp {
        dims,
        gamma: spec.gamma,
        h_gamma,
        xi,
        psi,
        theta,
        d,
        x_mat,
        v_mat,
        kkt: OnceLock::new(),
    })
}

/// Optimal decision variable and derived input sequence at one state.
#[derive(Debug, Clone)]
pub struct ImplicitSolution {
    pub g: Vector,
    pub u_seq: Vector,
    pub u0: Vector,
    pub sol: QpSolution,
}

impl MpQp {
    /// Equality right-hand side `[x; 0]`.
    pub fn eq_rhs(&self, x: &Vector) -> Vector {
        let n = self.dims.n;
        let mut b = Vector::zeros(2 * n);
        b.rows_mut(0, n).copy_from(x);
        b
    }

    /// `½(𝒳ᵀ𝒬𝒳 + 𝒱ᵀℛ𝒱)` without the regularizer.
    pub fn h_unregularized(&self) -> Matrix {
        let mut h = self.h_gamma.as_matrix().clone();
        for i in 0..h.nrows() {
            h[(i, i)] -= 0.5 * self.gamma;
        }
        h
    }

    fn check_state(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dims.n {
            return Err(invalid(format!("state must have {} entries", self.dims.n)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("state contains non-finite entries"));
        }
        Ok(())
    }

    fn finish(&self, g: Vector, sol: QpSolution) -> Result<ImplicitSolution> {
        match sol.status {
            QpStatus::Optimal => {
                let u_seq = &self.v_mat * &g;
                let u0 = u_seq.rows(0, self.dims.m).into_owned();
                Ok(ImplicitSolution { g, u_seq, u0, sol })
            }
            QpStatus::Infeasible => Err(Error::InfeasibleState),
            QpStatus::MaxIterations => Err(Error::SolverFailure {
                iterations: sol.iterations,
                detail: "mp-QP at the requested state hit the iteration cap".into(),
            }),
        }
    }

    /// Solves the QP over the full `2N`-dimensional decision variable.
    pub fn implicit_solve(&self, x: &Vector) -> Result<ImplicitSolution> {
        self.check_state(x)?;
        let b_in = &self.d - &self.psi * x;
        let p = QpProblem::new(self.h_gamma.clone(), self.theta.clone(), self.eq_rhs(x), self.xi.clone(), b_in);
        let sol = solve_qp(&p)?;
        let g = sol.z_star.clone();
        self.finish(g, sol)
    }

    /// Same optimum as [`MpQp::implicit_solve`], computed in the span of
    /// the constraint rows: the cost is minimized over `G` for fixed
    /// `Q_ΩᵀG = β` in closed form, leaving a QP in `β`.
    pub fn implicit_solve_reduced(&self, x: &Vector) -> Result<ImplicitSolution> {
        self.check_state(x)?;
        let k = self.kkt()?;
        let ni = self.dims.n_ineq();
        let c_t = k.omega_c.transpose();
        let b_full = &self.d - &self.psi * x;
        // rows that do not involve G only restrict the state
        let scale = c_t.amax();
        let mut rows = Vec::with_capacity(ni);
        for i in 0..ni {
            if c_t.row(i).amax() > RANK_TOL * scale {
                rows.push(i);
            } else if b_full[i] < -FEAS_TOL * (1.0 + self.d[i].abs()) {
                return Err(Error::InfeasibleState);
            }
        }
        let a_in = c_t.select_rows(&rows);
        let b_in = Vector::from_iterator(rows.len(), rows.iter().map(|&i| b_full[i]));
        let a_eq = c_t.rows(ni, 2 * self.dims.n).into_owned();
        let p = QpProblem::new(k.reduced_h.clone(), a_eq, self.eq_rhs(x), a_in, b_in);
        let sol = solve_qp(&p)?;
        let g = &k.reduced_lift * &sol.z_star;
        if sol.status == QpStatus::Optimal {
            self.check_solution(&g, x)?;
        }
        self.finish(g, sol)
    }

    /// Rejects a solution that violates the original constraints, which
    /// would indicate a numerical failure of the reduced solve.
    fn check_solution(&self, g: &Vector, x: &Vector) -> Result<()> {
        let viol = (&self.xi * g + &self.psi * x - &self.d).max();
        let eq = (&self.theta * g - self.eq_rhs(x)).amax();
        let tol = 1e-6 * (1.0 + self.d.amax() + x.amax());
        if viol > tol || eq > tol {
            return Err(Error::SolverFailure {
                iterations: 0,
                detail: format!("reduced solve violates constraints by {:.3e}", viol.max(eq)),
            });
        }
        Ok(())
    }

    pub(crate) fn kkt(&self) -> Result<&KktCache> {
        self.kkt
            .get_or_init(|| self.build_kkt())
            .as_ref()
            .map_err(|e| Error::Conditioning(e.clone()))
    }

    fn build_kkt(&self) -> std::result::Result<KktCache, String> {
        let chol = Cholesky::new(self.h_gamma.as_matrix().clone())
            .ok_or_else(|| "H_gamma is not numerically positive definite".to_string())?;
        let omega = numkit::vstack(&[&self.xi, &self.theta]);
        let omega_t = omega.transpose();
        let h_inv_omega_t = chol.solve(&omega_t);
        let gram = numkit::SymMatrix::symmetrize(&omega * &h_inv_omega_t).into_matrix();
        let v_maps = &self.v_mat * &h_inv_omega_t;
        let x_maps = &self.x_mat * &h_inv_omega_t;

        let rows = omega_t.ncols();
        if omega_t.nrows() < rows {
            return Err(format!(
                "{rows} constraint rows exceed the {} decision variables",
                omega_t.nrows()
            ));
        }
        let svd = numkit::svd(&omega_t).map_err(|e| e.to_string())?;
        let (u, vt) = (&svd.u, &svd.v_t);
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > RANK_TOL * smax)
            .collect();
        if keep.is_empty() {
            return Err("constraint matrix is zero".into());
        }
        let q = u.select_columns(&keep);
        let mut omega_c = vt.select_rows(&keep);
        for (r, &i) in keep.iter().enumerate() {
            omega_c.row_mut(r).scale_mut(svd.singular_values[i]);
        }
        let h_inv_q = chol.solve(&q);
        let inner = SymMatrix::symmetrize(q.transpose() * &h_inv_q).into_matrix();
        let inner_chol =
            Cholesky::new(inner).ok_or_else(|| "reduced Hessian is not positive definite".to_string())?;
        let reduced = inner_chol.inverse();
        let reduced_lift = &h_inv_q * &reduced;
        Ok(KktCache {
            gram,
            v_maps,
            x_maps,
            omega_c,
            reduced_h: SymMatrix::symmetrize(reduced),
            reduced_lift,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_predictor_data, Dataset};
    use crate::numkit::{mat, vec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bench_data(ts: usize) -> PredictorData {
        let a = mat(2, 2, &[0.7326, -0.0861, 0.1722, 0.9909]);
        let b = mat(2, 1, &[0.0609, 0.0064]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut u = Matrix::zeros(1, ts);
        let mut x = Matrix::zeros(2, ts);
        for t in 0..ts {
            u[(0, t)] = rng.random_range(-5.0..5.0);
            if t + 1 < ts {
                let next = &a * x.column(t) + &b * u[(0, t)];
                x.set_column(t + 1, &next);
            }
        }
        build_predictor_data(&Dataset::new(u, x, None).unwrap(), 2).unwrap()
    }

    fn spec(gamma: f64) -> MpcSpec {
        MpcSpec {
            horizon: 2,
            q: SymMatrix::identity(2),
            r: SymMatrix::from_diagonal(&[0.01]),
            p: SymMatrix::identity(2),
            c_x: Matrix::zeros(2, 2),
            c_u: mat(2, 1, &[1.0, -1.0]),
            d: vec(&[2.0, 2.0]),
            gamma,
        }
    }

    #[test]
    fn dimensions() {
        let q = assemble(&bench_data(100), &spec(10.0)).unwrap();
        assert_eq!(q.xi.shape(), (4, 196));
        assert_eq!(q.theta.shape(), (4, 196));
        assert_eq!(q.psi, Matrix::zeros(4, 2));
        assert_eq!(q.dims.n_vars(), 196);
    }

    #[test]
    fn blocks_are_duplicated() {
        let q = assemble(&bench_data(60), &spec(1.0)).unwrap();
        let nn = q.dims.n_cols;
        assert_eq!(q.x_mat.columns(0, nn), q.x_mat.columns(nn, nn));
        assert_eq!(q.v_mat.columns(0, nn), q.v_mat.columns(nn, nn));
    }

    #[test]
    fn gamma_shift_is_half_identity() {
        let pd = bench_data(60);
        let a = assemble(&pd, &spec(1.0)).unwrap();
        let b = assemble(&pd, &spec(2.0)).unwrap();
        let diff = b.h_gamma.as_matrix() - a.h_gamma.as_matrix();
        let expect = Matrix::identity(diff.nrows(), diff.nrows()) * 0.5;
        assert!((diff - expect).amax() < 1e-12);
    }

    #[test]
    fn regularizer_makes_hessian_definite() {
        let q = assemble(&bench_data(60), &spec(1e-3)).unwrap();
        let h0 = SymMatrix::symmetrize(q.h_unregularized());
        let eig = h0.eigenvalues();
        assert!(eig.min() > -1e-9 * eig.max());
        assert!(numkit::numerical_rank(h0.as_matrix(), 1e-10) < h0.dim());
        assert!(q.h_gamma.min_eigenvalue() > 0.0);
    }

    #[test]
    fn origin_gives_zero_input() {
        let q = assemble(&bench_data(100), &spec(10.0)).unwrap();
        let s = q.implicit_solve(&Vector::zeros(2)).unwrap();
        assert!(s.u_seq.amax() < 1e-9);
    }

    #[test]
    fn reduced_solve_matches_full() {
        let q = assemble(&bench_data(100), &spec(10.0)).unwrap();
        for x in [vec(&[1.0, 1.0]), vec(&[-3.0, 2.5]), vec(&[30.0, -10.0])] {
            let full = q.implicit_solve(&x).unwrap();
            let red = q.implicit_solve_reduced(&x).unwrap();
            assert!((&full.u_seq - &red.u_seq).amax() < 1e-7, "{x}");
        }
    }

    #[test]
    fn saturates_far_from_origin() {
        let q = assemble(&bench_data(100), &spec(1e-3)).unwrap();
        let s = q.implicit_solve(&vec(&[30.0, 30.0])).unwrap();
        assert!((s.u0[0].abs() - 2.0).abs() < 1e-7);
    }

    #[test]
    fn cost_decreases_with_gamma() {
        let pd = bench_data(100);
        let x = vec(&[1.0, -2.0]);
        let mut last = f64::INFINITY;
        for g in [100.0, 10.0, 1.0, 0.1, 0.01] {
            let q = assemble(&pd, &spec(g)).unwrap();
            let s = q.implicit_solve(&x).unwrap();
            let cost = q.h_gamma.quad(&s.g) * 0.5;
            assert!(cost <= last * (1.0 + 1e-9));
            last = cost;
        }
    }

    #[test]
    fn rejects_bad_spec() {
        let pd = bench_data(60);
        let mut s = spec(1.0);
        s.r = SymMatrix::zeros(1);
        assert!(matches!(assemble(&pd, &s), Err(Error::InvalidInput(_))));
        let mut s = spec(1.0);
        s.horizon = 3;
        assert!(assemble(&pd, &s).is_err());
        assert!(assemble(&pd, &spec(0.0)).is_err());
    }
}

#[cfg(test)]
mod props {
    use crate::explicit::tests::bench_problem;
    use crate::numkit::Vector;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn reduced_solve_matches_full(x0 in -20.0..20.0f64, x1 in -20.0..20.0f64, lg in -2.0..2.0f64) {
            let q = bench_problem(10f64.powf(lg), 0.0);
            let x = Vector::from_vec(vec![x0, x1]);
            let full = q.implicit_solve(&x).unwrap();
            let red = q.implicit_solve_reduced(&x).unwrap();
            prop_assert!((full.u_seq - red.u_seq).amax() < 1e-6 * (1.0 + x.amax()));
        }
    }
}
