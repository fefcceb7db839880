//! Data-based multi-step predictors and the model-based matrices used to
//! verify them.

use crate::data::PredictorData;
use crate::error::{invalid, Error, Result};
use crate::mpqp::MpcSpec;
use crate::numkit::{self, Matrix, SymMatrix, Vector};
use crate::optkit::{solve_qp, QpProblem, QpStatus};

fn require_rank(pd: &PredictorData) -> Result<()> {
    let r = pd.rank_report();
    if r.satisfied {
        Ok(())
    } else {
        Err(Error::PredictorUndefined { rank: r.rank, required: r.required })
    }
}

/// `X̃ = X_future · [X_past; U_block]⁺ · [x; U]`
pub fn openloop_predict(pd: &PredictorData, x: &Vector, u_seq: &Vector) -> Result<Vector> {
    let (n, m, l) = (pd.n(), pd.m(), pd.horizon);
    if x.len() != n || u_seq.len() != m * l {
        return Err(invalid(format!(
            "open-loop prediction expects x ∈ ℝ^{n} and U ∈ ℝ^{}",
            m * l
        )));
    }
    require_rank(pd)?;
    let mut v = Vector::zeros(n + m * l);
    v.rows_mut(0, n).copy_from(x);
    v.rows_mut(n, m * l).copy_from(u_seq);
    Ok(&pd.x_future * (pd.stacked_pinv() * v))
}

/// Closed-loop gains `G_K`, `G_f` with `[X_past; U_block] G_K ≈ [I; K]`
/// and `[X_past; U_block] G_f ≈ [0; f]`.
#[derive(Debug, Clone)]
pub struct ClosedLoopGains {
    pub g_k: Matrix,
    pub g_f: Vector,
    /// Max-abs residual of the two defining equalities, relative to
    /// `1 + ‖[I; K]‖ + ‖f‖`. Zero up to rounding on noiseless data.
    pub residual: f64,
}

pub fn closedloop_gains(pd: &PredictorData, k: &Matrix, f: &Vector) -> Result<ClosedLoopGains> {
    let (n, m, l) = (pd.n(), pd.m(), pd.horizon);
    if k.shape() != (m * l, n) || f.len() != m * l {
        return Err(invalid(format!("closed-loop gains expect K: {}x{n}, f: {}", m * l, m * l)));
    }
    require_rank(pd)?;
    let mut ik = Matrix::zeros(n + m * l, n);
    ik.view_mut((0, 0), (n, n)).fill_with_identity();
    ik.view_mut((n, 0), (m * l, n)).copy_from(k);
    let mut zf = Vector::zeros(n + m * l);
    zf.rows_mut(n, m * l).copy_from(f);
    let pinv = pd.stacked_pinv();
    let g_k = pinv * &ik;
    let g_f = pinv * &zf;
    let s = pd.stacked();
    let res = (&s * &g_k - &ik).amax().max((&s * &g_f - &zf).amax());
    let residual = res / (1.0 + ik.amax() + f.amax());
    Ok(ClosedLoopGains { g_k, g_f, residual })
}

/// `X̃ = X_future (G_K x + G_f)` and `U = U_block (G_K x + G_f)`.
pub fn closedloop_predict(pd: &PredictorData, g: &ClosedLoopGains, x: &Vector) -> Result<(Vector, Vector)> {
    if g.g_k.nrows() != pd.n_cols() || g.g_k.ncols() != x.len() || g.g_f.len() != pd.n_cols() {
        return Err(invalid("closed-loop gains do not match the data matrices"));
    }
    let col = &g.g_k * x + &g.g_f;
    Ok((&pd.x_future * &col, &pd.u_block * &col))
}

/// Model-based prediction matrices: `X̃ = ξ x + Γ U` with `ξ` stacking
/// `A … A^L` and `Γ` the lower block-triangular impulse matrix.
#[derive(Debug, Clone)]
pub struct ModelOracle {
    pub a: Matrix,
    pub b: Matrix,
    pub xi: Matrix,
    pub gamma: Matrix,
}

pub fn model_oracle(a: &Matrix, b: &Matrix, horizon: usize) -> Result<ModelOracle> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || horizon == 0 {
        return Err(invalid("model oracle: inconsistent dimensions or zero horizon"));
    }
    let m = b.ncols();
    let mut powers = vec![Matrix::identity(n, n)];
    for k in 1..=horizon {
        let next = a * &powers[k - 1];
        powers.push(next);
    }
    let mut xi = Matrix::zeros(n * horizon, n);
    let mut gamma = Matrix::zeros(n * horizon, m * horizon);
    for i in 0..horizon {
        xi.view_mut((i * n, 0), (n, n)).copy_from(&powers[i + 1]);
        for j in 0..=i {
            gamma.view_mut((i * n, j * m), (n, m)).copy_from(&(&powers[i - j] * b));
        }
    }
    Ok(ModelOracle { a: a.clone(), b: b.clone(), xi, gamma })
}

impl ModelOracle {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.xi.nrows() / self.n()
    }

    pub fn predict(&self, x: &Vector, u_seq: &Vector) -> Vector {
        &self.xi * x + &self.gamma * u_seq
    }

    /// Condensed model-based MPC problem at state `x`, in the input
    /// sequence `U`.
    pub fn mpc_qp(&self, spec: &MpcSpec, x: &Vector) -> Result<QpProblem> {
        let (n, m, l) = (self.n(), self.m(), self.horizon());
        spec.validate(n, m)?;
        if spec.horizon != l {
            return Err(invalid("model oracle horizon differs from the specification"));
        }
        let qbar = spec.state_weight();
        let rbar = spec.input_weight();
        let h = (self.gamma.transpose() * &qbar * &self.gamma + &rbar) * 2.0;
        let c = self.gamma.transpose() * &qbar * &self.xi * x * 2.0;
        let nc = spec.n_constraints();
        // k = 0 uses x directly; k ≥ 1 uses the (k−1)-th predicted block
        let mut a_in = Matrix::zeros(nc * l, m * l);
        let mut b_in = Vector::zeros(nc * l);
        for k in 0..l {
            let mut rows = Matrix::zeros(nc, m * l);
            rows.view_mut((0, k * m), (nc, m)).copy_from(&spec.c_u);
            let mut rhs = spec.d.clone();
            if k == 0 {
                rhs -= &spec.c_x * x;
            } else {
                let xi_k = self.xi.rows((k - 1) * n, n);
                let gamma_k = self.gamma.rows((k - 1) * n, n);
                rows += &spec.c_x * gamma_k;
                rhs -= &spec.c_x * (xi_k * x);
            }
            a_in.view_mut((k * nc, 0), (nc, m * l)).copy_from(&rows);
            b_in.rows_mut(k * nc, nc).copy_from(&rhs);
        }
        Ok(QpProblem::new(
            SymMatrix::symmetrize(h),
            Matrix::zeros(0, m * l),
            Vector::zeros(0),
            a_in,
            b_in,
        )
        .with_linear(c))
    }

    /// Optimal model-based input sequence at `x`.
    pub fn mpc_input(&self, spec: &MpcSpec, x: &Vector) -> Result<Vector> {
        let sol = solve_qp(&self.mpc_qp(spec, x)?)?;
        match sol.status {
            QpStatus::Optimal => Ok(sol.z_star),
            QpStatus::Infeasible => Err(Error::InfeasibleState),
            QpStatus::MaxIterations => Err(Error::SolverFailure {
                iterations: sol.iterations,
                detail: "model-based MPC QP hit the iteration cap".into(),
            }),
        }
    }

    /// Unconstrained finite-horizon LQ gain on the whole input sequence,
    /// `U = K_lq x`.
    pub fn lq_gain(&self, spec: &MpcSpec) -> Result<Matrix> {
        let qbar = spec.state_weight();
        let rbar = spec.input_weight();
        let h = self.gamma.transpose() * &qbar * &self.gamma + rbar;
        let rhs = -(self.gamma.transpose() * qbar * &self.xi);
        h.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| invalid("LQ Hessian is not positive definite"))
    }
}

/// One-step data-based state matrix `X_future [X_past; U_block]⁺ [I; 0]`
/// from horizon-1 data.
pub fn data_state_matrix(pd: &PredictorData) -> Result<Matrix> {
    if pd.horizon != 1 {
        return Err(invalid("state matrix estimate needs horizon-1 data"));
    }
    require_rank(pd)?;
    let n = pd.n();
    let sel = numkit::vstack(&[&Matrix::identity(n, n), &Matrix::zeros(pd.m(), n)]);
    Ok(&pd.x_future * pd.stacked_pinv() * sel)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::data::{build_predictor_data, Dataset};
    use crate::numkit::mat;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64) -> PredictorData {
        let a = mat(2, 2, &[0.7326, -0.0861, 0.1722, 0.9909]);
        let b = mat(2, 1, &[0.0609, 0.0064]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts = 40;
        let mut u = Matrix::zeros(1, ts);
        let mut x = Matrix::zeros(2, ts);
        for t in 0..ts {
            u[(0, t)] = rng.random_range(-5.0..5.0);
            if t + 1 < ts {
                let next = &a * x.column(t) + &b * u[(0, t)];
                x.set_column(t + 1, &next);
            }
        }
        build_predictor_data(&Dataset::new(u, x, None).unwrap(), 3).unwrap()
    }

    proptest! {
        #[test]
        fn closed_loop_is_open_loop_under_feedback(
            seed in 0u64..1000,
            k in prop::collection::vec(-2.0..2.0f64, 6),
            f in prop::collection::vec(-1.0..1.0f64, 3),
            x in prop::collection::vec(-3.0..3.0f64, 2),
        ) {
            let pd = data(seed);
            let k = Matrix::from_row_slice(3, 2, &k);
            let f = Vector::from_vec(f);
            let x = Vector::from_vec(x);
            let g = closedloop_gains(&pd, &k, &f).unwrap();
            prop_assert!(g.residual < 1e-9);
            let (xs, us) = closedloop_predict(&pd, &g, &x).unwrap();
            let u_fb = &k * &x + &f;
            prop_assert!((&us - &u_fb).amax() < 1e-8 * (1.0 + u_fb.amax()));
            let open = openloop_predict(&pd, &x, &u_fb).unwrap();
            prop_assert!((xs - open).amax() < 1e-8 * (1.0 + x.amax() + u_fb.amax()));
        }
    }
}
