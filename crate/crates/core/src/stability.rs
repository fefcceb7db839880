//! Learned closed-loop matrices, Lyapunov certificates and the data-based
//! terminal weight.

use crate::data::PredictorData;
use crate::error::{Error, Result};
use crate::explicit::ExplicitLaw;
use crate::mpqp::MpQp;
use crate::numkit::{self, Matrix, SymMatrix, Vector};
use crate::optkit::{lmi_feasibility, LmiMode, LmiOptions, StabilityCertificate};
use crate::predictor::data_state_matrix;

/// One-step closed-loop model `x⁺ = A_cl,i x + f_cl,i` per law region.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModel {
    pub a_cl: Vec<Matrix>,
    pub f_cl: Vec<Vector>,
}

impl ClosedLoopModel {
    pub fn len(&self) -> usize {
        self.a_cl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_cl.is_empty()
    }

    /// Transition matrices with exact duplicates removed, in first-seen
    /// order.
    pub fn distinct_matrices(&self) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = Vec::new();
        for a in &self.a_cl {
            if !out.iter().any(|b| (a - b).amax() <= 1e-12 * (1.0 + a.amax())) {
                out.push(a.clone());
            }
        }
        out
    }
}

pub fn extract_closed_loop(q: &MpQp, law: &ExplicitLaw) -> Result<ClosedLoopModel> {
    let d = law.dims;
    if (d.n, d.m, d.horizon) != (q.dims.n, q.dims.m, q.dims.horizon) {
        return Err(Error::InvalidLaw("law dimensions differ from the mp-QP".into()));
    }
    let n = d.n;
    let mut a_cl = Vec::with_capacity(law.regions.len());
    let mut f_cl = Vec::with_capacity(law.regions.len());
    for (i, r) in law.regions.iter().enumerate() {
        if r.cl_gain.shape() != (n, n) || r.cl_offset.len() != n {
            return Err(Error::InvalidLaw(format!("region {i} lacks its closed-loop map")));
        }
        a_cl.push(r.cl_gain.clone());
        f_cl.push(r.cl_offset.clone());
    }
    Ok(ClosedLoopModel { a_cl, f_cl })
}

/// Searches for a common or piecewise quadratic Lyapunov function of the
/// learned transition matrices. Offsets are not used.
pub fn certify(clm: &ClosedLoopModel, mode: LmiMode, opts: &LmiOptions) -> Result<StabilityCertificate> {
    if clm.is_empty() {
        return Err(crate::error::invalid("closed-loop model has no regions"));
    }
    let mats = match mode {
        LmiMode::Common => clm.distinct_matrices(),
        LmiMode::Piecewise => clm.a_cl.clone(),
    };
    lmi_feasibility(&mats, mode, opts)
}

/// Data-based terminal weight: `P = A_dᵀ P A_d + Q` with
/// `A_d = X_future [X_past; U_block]⁺ [I; 0]` from horizon-1 data.
pub fn terminal_weight(pd1: &PredictorData, q: &SymMatrix) -> Result<SymMatrix> {
    let a_d = data_state_matrix(pd1)?;
    numkit::solve_discrete_lyapunov(&a_d, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_predictor_data, Dataset};
    use crate::explicit::tests::{bench_data, bench_spec};
    use crate::explicit::{build_explicit_law, BuildOptions};
    use crate::mpqp::assemble;
    use crate::numkit::{mat, vec};
    use crate::optkit::{reverify, CertificateKind};
    use crate::predictor::model_oracle;

    fn bench_a() -> Matrix {
        mat(2, 2, &[0.7326, -0.0861, 0.1722, 0.9909])
    }

    fn bench_b() -> Matrix {
        mat(2, 1, &[0.0609, 0.0064])
    }

    fn one_step_data(a: &Matrix, b: &Matrix) -> PredictorData {
        let ts = 60;
        let mut u = Matrix::zeros(1, ts);
        let mut x = Matrix::zeros(2, ts);
        for t in 0..ts {
            u[(0, t)] = ((t * 7919 % 23) as f64 / 11.5 - 1.0) * 5.0;
            if t + 1 < ts {
                let nx = a * x.column(t) + b * u[(0, t)];
                x.set_column(t + 1, &nx);
            }
        }
        build_predictor_data(&Dataset::new(u, x, None).unwrap(), 1).unwrap()
    }

    #[test]
    fn terminal_weight_matches_model() {
        let pd = one_step_data(&bench_a(), &bench_b());
        let p = terminal_weight(&pd, &SymMatrix::identity(2)).unwrap();
        let truth = numkit::solve_discrete_lyapunov(&bench_a(), &SymMatrix::identity(2)).unwrap();
        assert!((p.as_matrix() - truth.as_matrix()).amax() < 1e-6);
        let a_d = data_state_matrix(&pd).unwrap();
        assert!((&a_d - bench_a()).amax() < 1e-8);
        let resid = a_d.transpose() * p.as_matrix() * &a_d + Matrix::identity(2, 2) - p.as_matrix();
        assert!(resid.amax() < 1e-8);
    }

    #[test]
    fn zero_weight_gives_zero() {
        let pd = one_step_data(&bench_a(), &bench_b());
        let p = terminal_weight(&pd, &SymMatrix::zeros(2)).unwrap();
        assert!(p.amax() < 1e-14);
    }

    #[test]
    fn unstable_plant_rejected() {
        let a = mat(2, 2, &[1.1, 0.0, 0.0, 0.5]);
        let pd = one_step_data(&a, &bench_b());
        assert!(matches!(terminal_weight(&pd, &SymMatrix::identity(2)), Err(Error::Unstable { .. })));
    }

    #[test]
    fn unconstrained_region_is_lq_closed_loop() {
        let pd = bench_data(0.0);
        let spec = bench_spec(1e-6);
        let q = assemble(&pd, &spec).unwrap();
        let law = build_explicit_law(&q, &BuildOptions::default()).unwrap();
        let clm = extract_closed_loop(&q, &law).unwrap();
        assert_eq!(clm.len(), law.n_regions());
        let i = law.regions.iter().position(|r| r.active_set.is_empty()).unwrap();
        let oracle = model_oracle(&bench_a(), &bench_b(), 2).unwrap();
        let k0 = oracle.lq_gain(&spec).unwrap().rows(0, 1).into_owned();
        let expect = bench_a() + bench_b() * k0;
        assert!((&clm.a_cl[i] - expect).amax() < 1e-3);
        assert!(clm.f_cl[i].amax() < 1e-6);
    }

    #[test]
    fn one_step_bookkeeping() {
        let pd = bench_data(0.0);
        let q = assemble(&pd, &bench_spec(1.0)).unwrap();
        let law = build_explicit_law(&q, &BuildOptions::default()).unwrap();
        let clm = extract_closed_loop(&q, &law).unwrap();
        for x in [vec(&[0.1, -0.2]), vec(&[2.0, 2.5]), vec(&[-3.0, 1.0])] {
            let e = law.evaluate(&x).unwrap();
            let plant = bench_a() * &x + bench_b() * &e.u0;
            let model = &clm.a_cl[e.region] * &x + &clm.f_cl[e.region];
            assert!((plant - model).amax() < 1e-6);
        }
    }

    #[test]
    fn benchmark_law_certified() {
        let pd = bench_data(0.05);
        let q = assemble(&pd, &bench_spec(10.0)).unwrap();
        let law = build_explicit_law(&q, &BuildOptions::default()).unwrap();
        let clm = extract_closed_loop(&q, &law).unwrap();
        let cert = certify(&clm, LmiMode::Common, &LmiOptions::default()).unwrap();
        assert_eq!(cert.kind, CertificateKind::Common);
        assert!(reverify(&cert, &clm.distinct_matrices()));
        let pw = certify(&clm, LmiMode::Piecewise, &LmiOptions::default()).unwrap();
        assert_eq!(pw.kind, CertificateKind::Piecewise);
        assert!(reverify(&pw, &clm.a_cl));
    }

    #[test]
    fn unstable_single_region_not_found() {
        let clm = ClosedLoopModel { a_cl: vec![mat(2, 2, &[1.05, 0.0, 0.0, 0.2])], f_cl: vec![Vector::zeros(2)] };
        let opts = LmiOptions { budget: 400, ..Default::default() };
        assert_eq!(certify(&clm, LmiMode::Common, &opts).unwrap().kind, CertificateKind::NotFound);
    }
}
