//! Dense two-phase simplex for small linear programs with free variables.

use crate::error::{invalid, Error, Result};
use crate::numkit::{Matrix, Vector};

/// `minimize cᵀx  s.t.  A_in x ≤ b_in,  A_eq x = b_eq`, all variables free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: Vector,
    pub a_in: Matrix,
    pub b_in: Vector,
    pub a_eq: Matrix,
    pub b_eq: Vector,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: Vector, value: f64 },
    Infeasible,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;

impl LinearProgram {
    pub fn new(c: Vector, a_in: Matrix, b_in: Vector) -> Self {
        let n = c.len();
        LinearProgram {
            c,
            a_in,
            b_in,
            a_eq: Matrix::zeros(0, n),
            b_eq: Vector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a_eq: Matrix, b_eq: Vector) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.a_in.ncols() != n || self.a_eq.ncols() != n {
            return Err(invalid("LP: constraint column count differs from cost length"));
        }
        if self.a_in.nrows() != self.b_in.len() || self.a_eq.nrows() != self.b_eq.len() {
            return Err(invalid("LP: constraint rows and right-hand side disagree"));
        }
        let finite = self.c.iter().chain(self.a_in.iter()).chain(self.b_in.iter())
            .chain(self.a_eq.iter()).chain(self.b_eq.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("LP data contains non-finite entries"));
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        self.validate()?;
        Tableau::build(self).run(self.c.len())
    }
}

/// Standard-form tableau: columns are [x⁺ | x⁻ | slacks | artificials | rhs].
struct Tableau {
    t: Matrix,
    basis: Vec<usize>,
    n_struct: usize,
    n_art_start: usize,
    max_iter: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.c.len();
        let mi = lp.a_in.nrows();
        let me = lp.a_eq.nrows();
        let m = mi + me;
        let n_struct = 2 * n + mi;
        let n_art_start = n_struct;
        let cols = n_struct + m + 1;
        // two extra rows: phase-2 cost and phase-1 cost
        let mut t = Matrix::zeros(m + 2, cols);
        for i in 0..m {
            let (row, rhs, slack) = if i < mi {
                (lp.a_in.row(i), lp.b_in[i], Some(i))
            } else {
                (lp.a_eq.row(i - mi), lp.b_eq[i - mi], None)
            };
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[(i, j)] = sign * row[j];
                t[(i, n + j)] = -sign * row[j];
            }
            if let Some(s) = slack {
                t[(i, 2 * n + s)] = sign;
            }
            t[(i, n_art_start + i)] = 1.0;
            t[(i, cols - 1)] = sign * rhs;
        }
        // phase-2 objective row: reduced costs c_j
        for j in 0..n {
            t[(m, j)] = lp.c[j];
            t[(m, n + j)] = -lp.c[j];
        }
        // phase-1 objective: sum of artificials, expressed in non-basic terms
        for i in 0..m {
            for j in 0..cols {
                if j < n_art_start || j == cols - 1 {
                    let v = t[(i, j)];
                    t[(m + 1, j)] -= v;
                }
            }
        }
        let basis = (0..m).map(|i| n_art_start + i).collect();
        let max_iter = 50 * (m + cols) + 1000;
        Tableau { t, basis, n_struct, n_art_start, max_iter }
    }

    fn m(&self) -> usize {
        self.basis.len()
    }

    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[(r, c)];
        let ncols = self.t.ncols();
        for j in 0..ncols {
            self.t[(r, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i != r {
                let f = self.t[(i, c)];
                if f != 0.0 {
                    for j in 0..ncols {
                        let v = self.t[(r, j)];
                        self.t[(i, j)] -= f * v;
                    }
                }
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations on objective row `obj`, allowing entering
    /// columns `< col_limit`. Returns false if unbounded.
    fn iterate(&mut self, obj: usize, col_limit: usize, iters: &mut usize) -> Result<bool> {
        let m = self.m();
        let rhs = self.rhs_col();
        loop {
            *iters += 1;
            if *iters > self.max_iter {
                return Err(Error::SolverFailure {
                    iterations: *iters,
                    detail: "simplex iteration cap reached".into(),
                });
            }
            let scale = 1.0 + (0..col_limit).map(|j| self.t[(obj, j)].abs()).fold(0.0, f64::max);
            // Bland: first column with negative reduced cost
            let enter = (0..col_limit).find(|&j| self.t[(obj, j)] < -COST_TOL * scale);
            let Some(c) = enter else { return Ok(true) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[(i, c)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(i, rhs)] / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14
                                || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            match leave {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, c),
            }
        }
    }

    fn run(mut self, n: usize) -> Result<LpOutcome> {
        let m = self.m();
        let rhs = self.rhs_col();
        let mut iters = 0;
        if m > 0 {
            self.iterate(m + 1, self.n_art_start, &mut iters)?;
            let infeas = -self.t[(m + 1, rhs)];
            let bscale = 1.0 + (0..m).map(|i| self.t[(i, rhs)].abs()).fold(0.0, f64::max);
            if infeas > 1e-9 * bscale {
                return Ok(LpOutcome::Infeasible);
            }
            // drive remaining artificials out of the basis
            for r in 0..m {
                if self.basis[r] >= self.n_art_start {
                    if let Some(c) = (0..self.n_struct).find(|&j| self.t[(r, j)].abs() > 1e-9) {
                        self.pivot(r, c);
                    }
                    // otherwise the row is redundant; the artificial stays at zero
                }
            }
        }
        // phase 2 over structural columns only
        if !self.iterate(m, self.n_struct, &mut iters)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut y = vec![0.0; self.n_struct];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                y[b] = self.t[(r, rhs)];
            }
        }
        let x = Vector::from_fn(n, |j, _| y[j] - y[n + j]);
        let value = -self.t[(m, rhs)];
        Ok(LpOutcome::Optimal { x, value })
    }
}
