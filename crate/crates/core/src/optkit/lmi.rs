//! Lyapunov LMI feasibility by alternating projections.
//!
//! Every constraint block is an affine map of the unknown symmetric
//! matrices, `Z_k = L_k(P) − s_k I ⪰ 0`. Iterates alternate between the
//! affine set `{(L_k(p) − s_k I)_k}` (least squares in the symmetric
//! parameters of `P`) and the PSD cone (eigenvalue clipping). The search runs
//! on normalized margins `s_k ≥ 1`; since the conditions are homogeneous in
//! `P`, this is equivalent to strict feasibility. Any candidate is
//! re-verified on eigenvalues before it is returned.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numkit::{pinv, Matrix, SymMatrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LmiMode {
    /// One matrix `P` with `AᵢᵀPAᵢ − P ⪯ −εI` for every `i`.
    Common,
    /// One `Pᵢ` per mode with `AᵢᵀPⱼAᵢ − Pᵢ ⪯ −εI` for every pair `(i, j)`.
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateKind {
    Common,
    Piecewise,
    NotFound,
}

impl std::fmt::Display for CertificateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CertificateKind::Common => "common",
            CertificateKind::Piecewise => "piecewise",
            CertificateKind::NotFound => "not-found",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmiOptions {
    pub delta: f64,
    pub eps: f64,
    pub budget: usize,
}

impl Default for LmiOptions {
    fn default() -> Self {
        LmiOptions { delta: 1e-6, eps: 1e-8, budget: 5000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateDiagnostics {
    pub iterations: usize,
    /// Smallest normalized constraint violation seen during the search.
    pub best_violation: f64,
    pub delta: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub kind: CertificateKind,
    /// `[P]` for common, `[P₁ … P_M]` for piecewise, empty when not found.
    pub matrices: Vec<SymMatrix>,
    /// Achieved `min λ_min(Pᵢ)`.
    pub delta_achieved: f64,
    /// Achieved `min −λ_max(decrement)` over all required pairs.
    pub eps_achieved: f64,
    pub diagnostics: CertificateDiagnostics,
}

impl StabilityCertificate {
    pub fn is_certified(&self) -> bool {
        self.kind != CertificateKind::NotFound
    }
}

/// One term `sign · Xᵀ P_j X` of a constraint block.
#[derive(Clone)]
struct Term {
    sign: f64,
    x: Matrix,
    j: usize,
}

struct Block {
    terms: Vec<Term>,
    shift: f64,
}

fn sym_basis(n: usize) -> Vec<Matrix> {
    let mut out = Vec::new();
    for i in 0..n {
        for k in i..n {
            let mut e = Matrix::zeros(n, n);
            if i == k {
                e[(i, i)] = 1.0;
            } else {
                let v = std::f64::consts::FRAC_1_SQRT_2;
                e[(i, k)] = v;
                e[(k, i)] = v;
            }
            out.push(e);
        }
    }
    out
}

fn eval_block(b: &Block, ps: &[Matrix]) -> Matrix {
    let n = ps[0].nrows();
    let mut z = Matrix::zeros(n, n);
    for t in &b.terms {
        z += (t.x.transpose() * &ps[t.j] * &t.x) * t.sign;
    }
    (&z + z.transpose()) * 0.5
}

fn min_eig(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn clip_psd(m: &Matrix) -> Matrix {
    let e = SymmetricEigen::new(m.clone());
    let d = e.eigenvalues.map(|v| v.max(0.0));
    &e.eigenvectors * Matrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Eigenvalue margins `(min λ_min(Pᵢ), min −λ_max(decrement))` of a
/// candidate.
pub fn lyapunov_margins(a_list: &[Matrix], mode: LmiMode, ps: &[SymMatrix]) -> (f64, f64) {
    let delta = ps.iter().map(|p| p.min_eigenvalue()).fold(f64::INFINITY, f64::min);
    let mut eps = f64::INFINITY;
    for (i, a) in a_list.iter().enumerate() {
        let pairs: Vec<(usize, usize)> = match mode {
            LmiMode::Common => vec![(0, 0)],
            LmiMode::Piecewise => (0..a_list.len()).map(|j| (j, i)).collect(),
        };
        for (j, own) in pairs {
            let d = a.transpose() * ps[j].as_matrix() * a - ps[own].as_matrix();
            let d = SymMatrix::symmetrize(d);
            eps = eps.min(-d.max_eigenvalue());
        }
    }
    (delta, eps)
}

/// Re-checks a certificate with halved margins `δ/2`, `ε/2`.
pub fn reverify(cert: &StabilityCertificate, a_list: &[Matrix]) -> bool {
    let mode = match cert.kind {
        CertificateKind::Common => LmiMode::Common,
        CertificateKind::Piecewise => LmiMode::Piecewise,
        CertificateKind::NotFound => return false,
    };
    let expected = match mode {
        LmiMode::Common => 1,
        LmiMode::Piecewise => a_list.len(),
    };
    if cert.matrices.len() != expected {
        return false;
    }
    let (d, e) = lyapunov_margins(a_list, mode, &cert.matrices);
    d >= cert.diagnostics.delta / 2.0 && e >= cert.diagnostics.eps / 2.0
}

/// Searches for a common or piecewise quadratic Lyapunov certificate.
///
/// A `NotFound` result only means the budget ran out; it does not prove
/// instability.
pub fn lmi_feasibility(a_list: &[Matrix], mode: LmiMode, opts: &LmiOptions) -> Result<StabilityCertificate> {
    if a_list.is_empty() {
        return Err(invalid("LMI search needs at least one matrix"));
    }
    let n = a_list[0].nrows();
    if a_list.iter().any(|a| a.nrows() != n || a.ncols() != n) {
        return Err(invalid("LMI matrices must be square with a common dimension"));
    }
    if !(opts.delta > 0.0 && opts.eps > 0.0) {
        return Err(invalid("LMI margins must be positive"));
    }
    for a in a_list {
        crate::numkit::check_finite(a, "LMI matrix")?;
    }

    let n_mats = match mode {
        LmiMode::Common => 1,
        LmiMode::Piecewise => a_list.len(),
    };
    let s_delta = (2.0 * opts.delta).max(1.0);
    let s_eps = (2.0 * opts.eps).max(1.0);
    let ident = Matrix::identity(n, n);

    let mut blocks: Vec<Block> = (0..n_mats)
        .map(|j| Block { terms: vec![Term { sign: 1.0, x: ident.clone(), j }], shift: s_delta })
        .collect();
    for (i, a) in a_list.iter().enumerate() {
        match mode {
            LmiMode::Common => blocks.push(Block {
                terms: vec![
                    Term { sign: 1.0, x: ident.clone(), j: 0 },
                    Term { sign: -1.0, x: a.clone(), j: 0 },
                ],
                shift: s_eps,
            }),
            LmiMode::Piecewise => {
                for j in 0..n_mats {
                    blocks.push(Block {
                        terms: vec![
                            Term { sign: 1.0, x: ident.clone(), j: i },
                            Term { sign: -1.0, x: a.clone(), j },
                        ],
                        shift: s_eps,
                    });
                }
            }
        }
    }

    // linear map from symmetric parameters to stacked block values
    let basis = sym_basis(n);
    let d = basis.len();
    let n_par = d * n_mats;
    let rows = blocks.len() * n * n;
    let mut map = Matrix::zeros(rows, n_par);
    for col in 0..n_par {
        let (j, e) = (col / d, &basis[col % d]);
        let ps: Vec<Matrix> = (0..n_mats)
            .map(|k| if k == j { e.clone() } else { Matrix::zeros(n, n) })
            .collect();
        for (bi, b) in blocks.iter().enumerate() {
            let z = eval_block(b, &ps);
            map.view_mut((bi * n * n, col), (n * n, 1))
                .copy_from(&Vector::from_column_slice(z.as_slice()));
        }
    }
    let map_pinv = pinv(&map, 0.0)?;

    let unpack = |p: &Vector| -> Vec<Matrix> {
        (0..n_mats)
            .map(|j| {
                let mut m = Matrix::zeros(n, n);
                for (k, e) in basis.iter().enumerate() {
                    m += e * p[j * d + k];
                }
                m
            })
            .collect()
    };

    let mut cones: Vec<Matrix> = vec![Matrix::zeros(n, n); blocks.len()];
    let mut best_violation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.budget {
        iterations += 1;
        // affine projection: L_k(p) ≈ C_k + s_k I
        let mut target = Vector::zeros(rows);
        for (bi, (b, c)) in blocks.iter().zip(&cones).enumerate() {
            let t = c + &ident * b.shift;
            target.rows_mut(bi * n * n, n * n).copy_from(&Vector::from_column_slice(t.as_slice()));
        }
        let p = &map_pinv * target;
        let ps = unpack(&p);

        let mut worst: f64 = 0.0;
        for (b, c) in blocks.iter().zip(cones.iter_mut()) {
            let z = eval_block(b, &ps) - &ident * b.shift;
            worst = worst.max(-min_eig(&z) / b.shift);
            *c = clip_psd(&z);
        }
        let violation = worst / (1.0 + p.amax());
        best_violation = best_violation.min(violation);

        // half the normalized margin is already far above the requested one
        if worst <= 0.5 {
            let sym: Vec<SymMatrix> = ps.into_iter().map(SymMatrix::symmetrize).collect();
            let (da, ea) = lyapunov_margins(a_list, mode, &sym);
            if da >= opts.delta && ea >= opts.eps {
                return Ok(StabilityCertificate {
                    kind: match mode {
                        LmiMode::Common => CertificateKind::Common,
                        LmiMode::Piecewise => CertificateKind::Piecewise,
                    },
                    matrices: sym,
                    delta_achieved: da,
                    eps_achieved: ea,
                    diagnostics: CertificateDiagnostics {
                        iterations,
                        best_violation: 0.0,
                        delta: opts.delta,
                        eps: opts.eps,
                    },
                });
            }
        }
    }
    Ok(StabilityCertificate {
        kind: CertificateKind::NotFound,
        matrices: Vec::new(),
        delta_achieved: f64::NAN,
        eps_achieved: f64::NAN,
        diagnostics: CertificateDiagnostics {
            iterations,
            best_violation,
            delta: opts.delta,
            eps: opts.eps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::mat;

    #[test]
    fn contractions_share_identity() {
        let list = vec![Matrix::identity(2, 2) * 0.5, Matrix::identity(2, 2) * 0.3];
        let c = lmi_feasibility(&list, LmiMode::Common, &LmiOptions::default()).unwrap();
        assert_eq!(c.kind, CertificateKind::Common);
        assert!(reverify(&c, &list));
        // identity itself verifies
        let (d, e) = lyapunov_margins(&list, LmiMode::Common, &[SymMatrix::identity(2)]);
        assert!(d > 0.0 && e > 0.0);
    }

    #[test]
    fn expanding_matrix_not_found() {
        let list = vec![Matrix::identity(2, 2) * 2.0];
        let c = lmi_feasibility(&list, LmiMode::Common, &LmiOptions { budget: 300, ..Default::default() })
            .unwrap();
        assert_eq!(c.kind, CertificateKind::NotFound);
        assert!(c.diagnostics.best_violation > 0.0);
        assert!(!reverify(&c, &list));
    }

    #[test]
    fn single_stable_matrix_always_certified() {
        let a = mat(2, 2, &[0.7326, -0.0861, 0.1722, 0.9909]);
        let c = lmi_feasibility(std::slice::from_ref(&a), LmiMode::Common, &LmiOptions::default()).unwrap();
        assert!(reverify(&c, &[a]));
    }

    #[test]
    fn piecewise_on_common_feasible() {
        let list = vec![mat(2, 2, &[0.9, 0.2, 0.0, 0.5]), mat(2, 2, &[0.5, 0.0, 0.3, 0.8])];
        let c = lmi_feasibility(&list, LmiMode::Common, &LmiOptions::default()).unwrap();
        assert!(c.is_certified());
        let pw = lmi_feasibility(&list, LmiMode::Piecewise, &LmiOptions::default()).unwrap();
        assert_eq!(pw.kind, CertificateKind::Piecewise);
        assert_eq!(pw.matrices.len(), 2);
        assert!(reverify(&pw, &list));
    }

    #[test]
    fn dimension_mismatch() {
        let list = vec![Matrix::identity(2, 2), Matrix::identity(3, 3)];
        assert!(lmi_feasibility(&list, LmiMode::Common, &LmiOptions::default()).is_err());
    }
}
