use super::{CriticalRegion, ExplicitLaw};
use crate::error::Result;
use crate::numkit::{Matrix, Vector};
use crate::optkit::{chebyshev_interior, Polyhedron, DEFAULT_BOX_RADIUS};

const LAW_TOL: f64 = 1e-9;
const SUPPORT_TOL: f64 = 1e-9;

fn close(a: &Matrix, b: &Matrix) -> bool {
    a.shape() == b.shape() && (a - b).amax() <= LAW_TOL * (1.0 + a.amax().max(b.amax()))
}

fn close_v(a: &Vector, b: &Vector) -> bool {
    a.len() == b.len() && (a - b).amax() <= LAW_TOL * (1.0 + a.amax().max(b.amax()))
}

fn same_law(a: &CriticalRegion, b: &CriticalRegion) -> bool {
    close(&a.gain_u, &b.gain_u)
        && close_v(&a.offset_u, &b.offset_u)
        && close(&a.cl_gain, &b.cl_gain)
        && close_v(&a.cl_offset, &b.cl_offset)
}

/// Splits the rows of `p` into those valid on all of `other` and the rest.
fn split_rows(p: &Polyhedron, other: &Polyhedron) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..p.n_rows() {
        let (a, g) = p.row(i);
        match other.support(&a)? {
            Some(s) if s <= g + SUPPORT_TOL => kept.push(i),
            _ => dropped.push(i),
        }
    }
    Ok((kept, dropped))
}

fn rows_of(p: &Polyhedron, idx: &[usize]) -> (Matrix, Vector) {
    let n = p.dim();
    let mut f = Matrix::zeros(idx.len(), n);
    let mut g = Vector::zeros(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        let (a, b) = p.row(i);
        f.row_mut(r).copy_from(&a.transpose());
        g[r] = b;
    }
    (f, g)
}

/// The envelope of `p ∪ q` if it equals the union, else `None`.
///
/// A point of the envelope outside the union violates a dropped row of
/// each region, so every such pair is checked for interior points.
fn convex_union(p: &Polyhedron, q: &Polyhedron) -> Result<Option<Polyhedron>> {
    let (kp, dp) = split_rows(p, q)?;
    let (kq, dq) = split_rows(q, p)?;
    let (fp, gp) = rows_of(p, &kp);
    let (fq, gq) = rows_of(q, &kq);
    let env = Polyhedron::new(crate::numkit::vstack(&[&fp, &fq]), Vector::from_iterator(gp.len() + gq.len(), gp.iter().chain(gq.iter()).copied()))?;
    for &i in &dp {
        for &j in &dq {
            let (a, ga) = p.row(i);
            let (b, gb) = q.row(j);
            let mut f = Matrix::zeros(2, p.dim());
            f.row_mut(0).copy_from(&(-a.transpose()));
            f.row_mut(1).copy_from(&(-b.transpose()));
            let outside = env.with_rows(&f, &Vector::from_vec(vec![-ga, -gb]))?;
            if chebyshev_interior(&outside, DEFAULT_BOX_RADIUS)?.is_some() {
                return Ok(None);
            }
        }
    }
    Ok(Some(env))
}

/// Greedily merges region pairs with identical affine laws whose union is
/// convex. The earlier region of a pair absorbs the later one.
pub fn merge_duplicates(law: &ExplicitLaw) -> Result<ExplicitLaw> {
    let mut regions = law.regions.clone();
    'outer: loop {
        for i in 0..regions.len() {
            for j in i + 1..regions.len() {
                if !same_law(&regions[i], &regions[j]) {
                    continue;
                }
                if let Some(env) = convex_union(&regions[i].region, &regions[j].region)? {
                    let radius = chebyshev_interior(&env, DEFAULT_BOX_RADIUS)?
                        .map_or(regions[i].chebyshev_radius, |b| b.radius);
                    regions[i].region = env;
                    regions[i].chebyshev_radius = radius;
                    regions.remove(j);
                    continue 'outer;
                }
            }
        }
        break;
    }
    Ok(ExplicitLaw { regions, ..law.clone() })
}
