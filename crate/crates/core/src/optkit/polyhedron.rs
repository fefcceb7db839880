use serde::{Deserialize, Serialize};

use super::lp::{LinearProgram, LpOutcome};
use crate::error::{invalid, Result};
use crate::numkit::{Matrix, Vector};

/// Relative size below which a normalized row is treated as `0·x ≤ g`.
const ZERO_ROW: f64 = 1e-10;
/// Non-emptiness threshold on the Chebyshev radius.
pub const EPS_RADIUS: f64 = 1e-9;
/// Radius clamp used when the inscribed ball is unbounded.
pub const DEFAULT_BOX_RADIUS: f64 = 1e3;

/// The set `{x : F x ≤ g}` with unit-norm rows.
///
/// Rows that vanish after normalization are dropped when trivially
/// satisfied and kept as the single marker row `0·x ≤ −1` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    #[serde(with = "crate::numkit::rows")]
    f: Matrix,
    g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevBall {
    pub center: Vector,
    pub radius: f64,
    /// The LP radius hit the box clamp.
    pub unbounded: bool,
}

impl Polyhedron {
    pub fn new(f: Matrix, g: Vector) -> Result<Self> {
        if f.nrows() != g.len() {
            return Err(invalid(format!(
                "polyhedron: {} rows in F but {} entries in g",
                f.nrows(),
                g.len()
            )));
        }
        crate::numkit::check_finite(&f, "polyhedron F")?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(invalid("polyhedron g contains non-finite entries"));
        }
        let n = f.ncols();
        let mut rows: Vec<f64> = Vec::new();
        let mut rhs = Vec::new();
        let mut infeasible = false;
        for i in 0..f.nrows() {
            let fi = f.row(i);
            let s = (fi.norm_squared() + g[i] * g[i]).sqrt();
            if s == 0.0 {
                continue;
            }
            let fnorm = fi.norm() / s;
            let gi = g[i] / s;
            if fnorm <= ZERO_ROW {
                if gi < -ZERO_ROW {
                    infeasible = true;
                }
                continue;
            }
            rows.extend(fi.iter().map(|v| v / s / fnorm));
            rhs.push(gi / fnorm);
        }
        if infeasible {
            rows.extend(std::iter::repeat_n(0.0, n));
            rhs.push(-1.0);
        }
        let q = rhs.len();
        Ok(Polyhedron {
            f: Matrix::from_row_slice(q, n, &rows),
            g: rhs,
        })
    }

    /// The whole space ℝⁿ.
    pub fn universe(n: usize) -> Self {
        Polyhedron { f: Matrix::zeros(0, n), g: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.g.len()
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        (0..self.n_rows()).all(|i| self.f.row(i).transpose().dot(x) <= self.g[i] + tol)
    }

    /// Intersection with additional rows.
    pub fn with_rows(&self, f: &Matrix, g: &Vector) -> Result<Self> {
        let ff = crate::numkit::vstack(&[&self.f, f]);
        let mut gg: Vec<f64> = self.g.clone();
        gg.extend(g.iter());
        Polyhedron::new(ff, Vector::from_vec(gg))
    }

    pub fn row(&self, i: usize) -> (Vector, f64) {
        (self.f.row(i).transpose(), self.g[i])
    }

    /// Largest value of `aᵀx` over the set; `None` if unbounded or empty.
    pub fn support(&self, a: &Vector) -> Result<Option<f64>> {
        let lp = LinearProgram::new(-a, self.f.clone(), Vector::from_column_slice(&self.g));
        Ok(match lp.solve()? {
            LpOutcome::Optimal { value, .. } => Some(-value),
            _ => None,
        })
    }
}

/// Largest inscribed ball of `p`, or `None` when the radius is below
/// [`EPS_RADIUS`] or the set is empty.
pub fn chebyshev_interior(p: &Polyhedron, box_radius: f64) -> Result<Option<ChebyshevBall>> {
    if !(box_radius > 0.0) {
        return Err(invalid("box radius must be positive"));
    }
    let n = p.dim();
    let q = p.n_rows();
    if q == 0 {
        return Ok(Some(ChebyshevBall {
            center: Vector::zeros(n),
            radius: box_radius,
            unbounded: true,
        }));
    }
    // variables (x, r): F x + r ‖F_i‖ ≤ g, -r ≤ 0, r ≤ R
    let mut a = Matrix::zeros(q + 2, n + 1);
    let mut b = Vector::zeros(q + 2);
    for i in 0..q {
        let fi = p.f.row(i);
        a.view_mut((i, 0), (1, n)).copy_from(&fi);
        a[(i, n)] = fi.norm();
        b[i] = p.g[i];
    }
    a[(q, n)] = -1.0;
    a[(q + 1, n)] = 1.0;
    b[q + 1] = box_radius;
    let mut c = Vector::zeros(n + 1);
    c[n] = -1.0;
    match LinearProgram::new(c, a, b).solve()? {
        LpOutcome::Optimal { x, .. } => {
            let radius = x[n];
            if radius < EPS_RADIUS {
                return Ok(None);
            }
            Ok(Some(ChebyshevBall {
                center: x.rows(0, n).into_owned(),
                radius,
                unbounded: radius >= box_radius * (1.0 - 1e-12),
            }))
        }
        LpOutcome::Infeasible => Ok(None),
        // r is boxed, so an unbounded LP cannot occur for well-formed data
        LpOutcome::Unbounded => Err(crate::error::Error::SolverFailure {
            iterations: 0,
            detail: "Chebyshev LP reported unbounded despite radius clamp".into(),
        }),
    }
}
