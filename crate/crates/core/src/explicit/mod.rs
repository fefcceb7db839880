//! Explicit piecewise-affine law: active-set enumeration, per-set KKT
//! algebra, region construction, merging and point location.

mod io;
mod merge;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mpqp::MpQp;
use crate::numkit::{self, Matrix, Vector};
use crate::optkit::{chebyshev_interior, Polyhedron, DEFAULT_BOX_RADIUS};

pub use io::{read_law, write_law, LAW_SCHEMA_VERSION};
pub use merge::merge_duplicates;

/// Relative singular-value threshold of the independence check on `Φ`.
const RANK_TOL: f64 = 1e-10;
/// Reciprocal condition number below which `ΦH⁻¹Φᵀ` is rejected.
const MIN_RCOND: f64 = 1e-15;
/// Residual threshold deciding that a rank-deficient KKT system is
/// consistent.
const CONSISTENT_TOL: f64 = 1e-9;
/// Membership tolerance of [`ExplicitLaw::evaluate`].
pub const EVAL_TOL: f64 = 1e-9;

/// One polyhedral region of the partition and its affine laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRegion {
    /// Sorted indices of the inequality rows held with equality.
    pub active_set: Vec<usize>,
    pub region: Polyhedron,
    /// `U(x) = gain_u x + offset_u`
    #[serde(with = "numkit::rows")]
    pub gain_u: Matrix,
    #[serde(with = "numkit::column")]
    pub offset_u: Vector,
    /// Multipliers `(λ; μ)` as affine functions of `x`; the first
    /// `active_set.len()` entries belong to the inequalities.
    #[serde(with = "numkit::rows")]
    pub gain_lambda: Matrix,
    #[serde(with = "numkit::column")]
    pub offset_lambda: Vector,
    /// Predicted next state `x̃(1) = cl_gain x + cl_offset` under this law.
    #[serde(with = "numkit::rows")]
    pub cl_gain: Matrix,
    #[serde(with = "numkit::column")]
    pub cl_offset: Vector,
    pub chebyshev_radius: f64,
}

impl CriticalRegion {
    pub fn input_sequence(&self, x: &Vector) -> Vector {
        &self.gain_u * x + &self.offset_u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawDims {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the dataset CSV.
    pub dataset: String,
    /// SHA-256 of the specification JSON.
    pub spec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitLaw {
    pub dims: LawDims,
    pub gamma: f64,
    pub provenance: Provenance,
    pub skipped_degenerate: usize,
    pub regions: Vec<CriticalRegion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub u0: Vector,
    pub u_seq: Vector,
    pub region: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActiveSetOutcome {
    Region(Box<CriticalRegion>),
    /// `Φ` is rank-deficient but the KKT equalities are consistent.
    Degenerate,
    /// The region has no interior (including contradictory active sets).
    Empty,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Largest active-set size; `None` means `min(n_c·L, 2N − 2n)`.
    pub cap: Option<usize>,
    pub merge: bool,
    /// Radius clamp of the Chebyshev LP.
    pub box_radius: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { cap: None, merge: true, box_radius: DEFAULT_BOX_RADIUS }
    }
}

fn check_active_set(q: &MpQp, act: &[usize]) -> Result<()> {
    let ni = q.dims.n_ineq();
    if act.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("active set must be strictly increasing"));
    }
    if act.last().is_some_and(|&i| i >= ni) {
        return Err(invalid(format!("active set index out of range (only {ni} inequality rows)")));
    }
    Ok(())
}

/// KKT algebra of one active set.
///
/// With `Φ = [Ξ_A; Θ]`, `S̃ = [−Ψ_A; I; 0]`, `W̃ = [D_A; 0]` and
/// `Υ = (ΦH⁻¹Φᵀ)⁻¹`, the multipliers are `Λ̃ = −Υ(S̃x + W̃)` and the
/// optimizer is `G = H⁻¹ΦᵀΥ(S̃x + W̃)`. The region collects `λ̃ ≥ 0` and
/// primal feasibility of the remaining rows.
pub fn solve_active_set(q: &MpQp, act: &[usize]) -> Result<ActiveSetOutcome> {
    solve_active_set_with(q, act, DEFAULT_BOX_RADIUS)
}

fn solve_active_set_with(q: &MpQp, act: &[usize], box_radius: f64) -> Result<ActiveSetOutcome> {
    check_active_set(q, act)?;
    let kkt = q.kkt()?;
    let (n, ni) = (q.dims.n, q.dims.n_ineq());
    let na = act.len();
    let sel: Vec<usize> = act.iter().copied().chain(ni..ni + 2 * n).collect();
    let k = sel.len();

    let mut s_t = Matrix::zeros(k, n);
    let mut w_t = Vector::zeros(k);
    for (r, &i) in act.iter().enumerate() {
        s_t.row_mut(r).copy_from(&(-q.psi.row(i)));
        w_t[r] = q.d[i];
    }
    s_t.view_mut((na, 0), (n, n)).fill_with_identity();

    // Φᵀ = Q_Ω C[:, sel], so rank(Φ) = rank(C[:, sel])
    let r_sel = kkt.omega_c.select_columns(&sel);
    let sv = numkit::singular_values(&r_sel)?;
    let smax = sv.max();
    if sv.iter().any(|&s| s <= RANK_TOL * smax) || smax == 0.0 {
        // consistent iff some (β, x) solves C_selᵀβ − S̃x = W̃
        let sys = numkit::hstack(&[&r_sel.transpose(), &(-&s_t)]);
        let sol = numkit::pinv(&sys, 0.0)? * &w_t;
        let resid = (&sys * sol - &w_t).amax();
        return Ok(if resid <= CONSISTENT_TOL * (1.0 + w_t.amax() + sys.amax()) {
            ActiveSetOutcome::Degenerate
        } else {
            ActiveSetOutcome::Empty
        });
    }

    let m_mat = kkt.gram.select_rows(&sel).select_columns(&sel);
    let eig = numkit::SymMatrix::symmetrize(m_mat.clone()).eigenvalues();
    let (emin, emax) = (eig.min(), eig.max());
    if !(emin > MIN_RCOND * emax) {
        return Err(Error::Conditioning(format!(
            "ΦH⁻¹Φᵀ for active set {act:?} has eigenvalues in [{emin:.3e}, {emax:.3e}]"
        )));
    }
    let upsilon = m_mat
        .cholesky()
        .ok_or_else(|| Error::Conditioning(format!("Cholesky of ΦH⁻¹Φᵀ failed for active set {act:?}")))?
        .inverse();
    let us = &upsilon * &s_t;
    let uw = &upsilon * &w_t;

    let v_sel = kkt.v_maps.select_columns(&sel);
    let gain_u = &v_sel * &us;
    let offset_u = &v_sel * &uw;
    let x_sel = kkt.x_maps.rows(0, n).select_columns(&sel);
    let cl_gain = &x_sel * &us;
    let cl_offset = &x_sel * &uw;

    let inactive: Vec<usize> = (0..ni).filter(|i| !act.contains(i)).collect();
    let rows = na + inactive.len();
    let mut f = Matrix::zeros(rows, n);
    let mut g = Vector::zeros(rows);
    for r in 0..na {
        f.row_mut(r).copy_from(&us.row(r));
        g[r] = -uw[r];
    }
    for (r, &i) in inactive.iter().enumerate() {
        let coupling = kkt.gram.row(i).select_columns(&sel);
        f.row_mut(na + r).copy_from(&(&coupling * &us + q.psi.row(i)));
        g[na + r] = q.d[i] - (&coupling * &uw)[0];
    }
    let region = Polyhedron::new(f, g)?;
    match chebyshev_interior(&region, box_radius)? {
        None => Ok(ActiveSetOutcome::Empty),
        Some(ball) => Ok(ActiveSetOutcome::Region(Box::new(CriticalRegion {
            active_set: act.to_vec(),
            region,
            gain_u,
            offset_u,
            gain_lambda: -us,
            offset_lambda: -uw,
            cl_gain,
            cl_offset,
            chebyshev_radius: ball.radius,
        }))),
    }
}

/// Lexicographic `k`-subsets of `0..n`.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let Some(pos) = (0..k).rev().find(|&i| c[i] != i + n - k) else {
            return out;
        };
        c[pos] += 1;
        for j in pos + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Enumerates active sets by size, then lexicographically.
///
/// Rank deficiency and inconsistency are inherited by supersets, so
/// supersets of such sets are skipped without solving. Candidates of one
/// size are solved in parallel and collected in enumeration order.
pub fn build_explicit_law(q: &MpQp, opts: &BuildOptions) -> Result<ExplicitLaw> {
    let ni = q.dims.n_ineq();
    let limit = ni.min(q.dims.n_vars().saturating_sub(2 * q.dims.n));
    let cap = opts.cap.unwrap_or(limit);
    if cap > limit {
        return Err(invalid(format!("active-set cap {cap} exceeds min(n_c·L, 2N − 2n) = {limit}")));
    }
    let mut regions = Vec::new();
    let mut skipped_degenerate = 0;
    let mut pruned = 0usize;
    let mut dead_prev: HashSet<Vec<usize>> = HashSet::new();
    for size in 0..=cap {
        let (candidates, skipped): (Vec<Vec<usize>>, Vec<Vec<usize>>) =
            combinations(ni, size).into_iter().partition(|c| {
                size == 0
                    || (0..size).all(|drop| {
                        let mut sub = c.clone();
                        sub.remove(drop);
                        !dead_prev.contains(&sub)
                    })
            });
        pruned += skipped.len();
        let results: Vec<Result<ActiveSetOutcome>> =
            candidates.par_iter().map(|c| solve_active_set_with(q, c, opts.box_radius)).collect();
        let mut dead: HashSet<Vec<usize>> = skipped.into_iter().collect();
        for (c, res) in candidates.into_iter().zip(results) {
            match res? {
                ActiveSetOutcome::Region(r) => regions.push(*r),
                ActiveSetOutcome::Empty => {
                    if is_dependent(q, &c)? {
                        dead.insert(c);
                    }
                }
                ActiveSetOutcome::Degenerate => {
                    skipped_degenerate += 1;
                    dead.insert(c);
                }
            }
        }
        dead_prev = dead;
    }
    log::debug!(
        "explicit law: {} regions, {skipped_degenerate} degenerate, {pruned} pruned supersets",
        regions.len()
    );
    let law = ExplicitLaw {
        dims: LawDims { n: q.dims.n, m: q.dims.m, horizon: q.dims.horizon },
        gamma: q.gamma,
        provenance: Provenance::default(),
        skipped_degenerate,
        regions,
    };
    Ok(if opts.merge { merge_duplicates(&law)? } else { law })
}

/// Whether the rows of `Φ` for this active set are linearly dependent.
fn is_dependent(q: &MpQp, act: &[usize]) -> Result<bool> {
    let kkt = q.kkt()?;
    let (n, ni) = (q.dims.n, q.dims.n_ineq());
    let sel: Vec<usize> = act.iter().copied().chain(ni..ni + 2 * n).collect();
    let sv = numkit::singular_values(&kkt.omega_c.select_columns(&sel))?;
    let smax = sv.max();
    Ok(smax == 0.0 || sv.iter().any(|&s| s <= RANK_TOL * smax))
}

impl ExplicitLaw {
    /// First region (in stored order) containing `x` up to [`EVAL_TOL`].
    pub fn evaluate(&self, x: &Vector) -> Option<Evaluation> {
        if x.len() != self.dims.n {
            return None;
        }
        self.regions.iter().enumerate().find(|(_, r)| r.region.contains(x, EVAL_TOL)).map(|(i, r)| {
            let u_seq = r.input_sequence(x);
            Evaluation { u0: u_seq.rows(0, self.dims.m).into_owned(), u_seq, region: i }
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }
}


#[cfg(test)]
mod props {
    use super::tests::bench_problem;
    use super::*;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn fixture() -> &'static (MpQp, ExplicitLaw) {
        static F: OnceLock<(MpQp, ExplicitLaw)> = OnceLock::new();
        F.get_or_init(|| {
            let q = bench_problem(10.0, 0.05);
            let law = build_explicit_law(&q, &BuildOptions::default()).unwrap();
            (q, law)
        })
    }

    proptest! {
        #[test]
        fn evaluation_matches_implicit(x0 in -15.0..15.0f64, x1 in -15.0..15.0f64) {
            let (q, law) = fixture();
            let x = Vector::from_vec(vec![x0, x1]);
            let ev = law.evaluate(&x);
            prop_assert!(ev.is_some());
            let imp = q.implicit_solve(&x).unwrap();
            prop_assert!((ev.unwrap().u_seq - imp.u_seq).amax() < 1e-6 * (1.0 + x.amax()));
        }

        #[test]
        fn law_is_continuous(x0 in -10.0..10.0f64, x1 in -10.0..10.0f64, dx in -1.0..1.0f64, dy in -1.0..1.0f64) {
            let (_, law) = fixture();
            let a = Vector::from_vec(vec![x0, x1]);
            let b = Vector::from_vec(vec![x0 + 1e-7 * dx, x1 + 1e-7 * dy]);
            let ua = law.evaluate(&a).unwrap().u_seq;
            let ub = law.evaluate(&b).unwrap().u_seq;
            prop_assert!((ua - ub).amax() < 1e-4);
        }
    }
}
