//! Recorded datasets, Hankel matrices and the data matrices that stand in
//! for a plant model.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::numkit::{self, Matrix, Vector};

/// Relative singular-value threshold for the rank condition.
pub const RANK_TOL: f64 = 1e-10;

/// Input/state samples `t = 0..T_s−1`, stored column-per-sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `m × T_s`
    pub u: Matrix,
    /// `n × T_s` measured states
    pub x: Matrix,
    /// `n × T_s` measurement noise, only when simulated
    pub w: Option<Matrix>,
}

impl Dataset {
    pub fn new(u: Matrix, x: Matrix, w: Option<Matrix>) -> Result<Self> {
        if u.ncols() != x.ncols() {
            return Err(invalid(format!(
                "dataset: {} input samples but {} state samples",
                u.ncols(),
                x.ncols()
            )));
        }
        if let Some(w) = &w {
            if w.shape() != x.shape() {
                return Err(invalid("dataset: noise record must match the state record"));
            }
        }
        if u.nrows() == 0 || x.nrows() == 0 {
            return Err(invalid("dataset: input and state dimensions must be positive"));
        }
        Ok(Dataset { u, x, w })
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// SHA-256 of the canonical CSV rendering.
    pub fn digest(&self) -> String {
        hex_digest(self.to_csv().as_bytes())
    }

    pub fn to_csv(&self) -> String {
        let (m, n) = (self.m(), self.n());
        let mut s = String::from("t");
        for i in 1..=m {
            let _ = write!(s, ",u_{i}");
        }
        for i in 1..=n {
            let _ = write!(s, ",x_{i}");
        }
        if self.w.is_some() {
            for i in 1..=n {
                let _ = write!(s, ",w_{i}");
            }
        }
        s.push('\n');
        for t in 0..self.len() {
            let _ = write!(s, "{t}");
            for v in self.u.column(t).iter().chain(self.x.column(t).iter()) {
                let _ = write!(s, ",{}", fmt17(*v));
            }
            if let Some(w) = &self.w {
                for v in w.column(t).iter() {
                    let _ = write!(s, ",{}", fmt17(*v));
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Schema("first column must be `t`".into()));
        }
        let (m, n, has_w) = parse_header(&cols[1..])?;
        let width = 1 + m + n + if has_w { n } else { 0 };
        let mut u = Vec::new();
        let mut x = Vec::new();
        let mut w = Vec::new();
        let mut count = 0usize;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(Error::Schema(format!(
                    "line {lineno}: expected {width} columns, found {}",
                    fields.len()
                )));
            }
            let t: usize = fields[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad time index `{}`", fields[0]),
            })?;
            if t != count {
                return Err(Error::Schema(format!("line {lineno}: expected t = {count}, found {t}")));
            }
            let mut vals = Vec::with_capacity(width - 1);
            for f in &fields[1..] {
                let v: f64 = f.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad number `{f}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line: lineno, msg: format!("non-finite value `{f}`") });
                }
                vals.push(v);
            }
            u.extend_from_slice(&vals[..m]);
            x.extend_from_slice(&vals[m..m + n]);
            if has_w {
                w.extend_from_slice(&vals[m + n..]);
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Parse { line: 2, msg: "no samples".into() });
        }
        Dataset::new(
            Matrix::from_column_slice(m, count, &u),
            Matrix::from_column_slice(n, count, &x),
            has_w.then(|| Matrix::from_column_slice(n, count, &w)),
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        Dataset::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn parse_header(cols: &[&str]) -> Result<(usize, usize, bool)> {
    let count = |prefix: &str| -> Result<usize> {
        let names: Vec<&&str> = cols.iter().filter(|c| c.starts_with(prefix)).collect();
        for (k, name) in names.iter().enumerate() {
            if **name != format!("{prefix}{}", k + 1) {
                return Err(Error::Schema(format!("unexpected column `{name}`")));
            }
        }
        Ok(names.len())
    };
    let m = count("u_")?;
    let n = count("x_")?;
    let nw = count("w_")?;
    if m + n + nw != cols.len() {
        return Err(Error::Schema("unrecognized header columns".into()));
    }
    if m == 0 || n == 0 {
        return Err(Error::Schema("header needs at least one u_ and one x_ column".into()));
    }
    if nw != 0 && nw != n {
        return Err(Error::Schema(format!("{nw} noise columns for {n} states")));
    }
    let expected: Vec<String> = (1..=m)
        .map(|i| format!("u_{i}"))
        .chain((1..=n).map(|i| format!("x_{i}")))
        .chain((1..=nw).map(|i| format!("w_{i}")))
        .collect();
    if cols.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Schema("columns must be ordered t,u_*,x_*,w_*".into()));
    }
    Ok((m, n, nw > 0))
}

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Block Hankel matrix: column `j` stacks `signal(j) … signal(j+depth−1)`.
///
/// `signal` holds one sample per column.
pub fn build_hankel(signal: &Matrix, depth: usize) -> Result<Matrix> {
    let (d, len) = signal.shape();
    if depth == 0 {
        return Err(invalid("Hankel depth must be at least 1"));
    }
    if depth > len {
        return Err(invalid(format!("Hankel depth {depth} exceeds signal length {len}")));
    }
    let cols = len - depth + 1;
    let mut h = Matrix::zeros(d * depth, cols);
    for j in 0..cols {
        for k in 0..depth {
            h.view_mut((k * d, j), (d, 1)).copy_from(&signal.column(j + k));
        }
    }
    Ok(h)
}

/// The three data matrices of the multi-step predictors, all with
/// `N = T_s − L` columns.
#[derive(Debug, Clone)]
pub struct PredictorData {
    pub horizon: usize,
    /// `n × N`, columns `x(j)`
    pub x_past: Matrix,
    /// `mL × N`, column `j` stacks `u(j) … u(j+L−1)`
    pub u_block: Matrix,
    /// `nL × N`, column `j` stacks `x(j+1) … x(j+L)`
    pub x_future: Matrix,
    stacked_pinv: OnceLock<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankReport {
    pub rank: usize,
    pub required: usize,
    pub satisfied: bool,
}

impl PredictorData {
    pub fn n(&self) -> usize {
        self.x_past.nrows()
    }

    pub fn m(&self) -> usize {
        self.u_block.nrows() / self.horizon
    }

    pub fn n_cols(&self) -> usize {
        self.x_past.ncols()
    }

    /// `[X_past; U_block]`
    pub fn stacked(&self) -> Matrix {
        numkit::vstack(&[&self.x_past, &self.u_block])
    }

    /// Cached pseudo-inverse of the stacked matrix.
    pub fn stacked_pinv(&self) -> &Matrix {
        self.stacked_pinv.get_or_init(|| {
            numkit::pinv(&self.stacked(), 0.0).expect("data matrices are finite by construction")
        })
    }

    pub fn rank_report(&self) -> RankReport {
        check_rank_condition(self, self.n(), self.m())
    }
}

pub fn build_predictor_data(d: &Dataset, horizon: usize) -> Result<PredictorData> {
    let ts = d.len();
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if ts < horizon + 1 {
        return Err(invalid(format!("horizon {horizon} too long for {ts} samples")));
    }
    numkit::check_finite(&d.u, "dataset inputs")?;
    numkit::check_finite(&d.x, "dataset states")?;
    let n_cols = ts - horizon;
    let x_past = d.x.columns(0, n_cols).into_owned();
    let u_block = build_hankel(&d.u, horizon)?.columns(0, n_cols).into_owned();
    let shifted = d.x.columns(1, ts - 1).into_owned();
    let x_future = build_hankel(&shifted, horizon)?;
    debug_assert_eq!(x_future.ncols(), n_cols);
    Ok(PredictorData { horizon, x_past, u_block, x_future, stacked_pinv: OnceLock::new() })
}

/// Numerical rank of `[X_past; U_block]` against the required `n + mL`.
pub fn check_rank_condition(pd: &PredictorData, n: usize, m: usize) -> RankReport {
    let rank = numkit::numerical_rank(&pd.stacked(), RANK_TOL);
    let required = n + m * pd.horizon;
    RankReport { rank, required, satisfied: rank >= required }
}

/// Sample-wise mean of repeated experiments driven by one input sequence.
pub fn average_datasets(runs: &[Dataset]) -> Result<Dataset> {
    let first = runs.first().ok_or_else(|| invalid("no datasets to average"))?;
    for r in &runs[1..] {
        if r.u.shape() != first.u.shape() || r.x.shape() != first.x.shape() {
            return Err(invalid("datasets to average must share dimensions and length"));
        }
        if r.u != first.u {
            return Err(invalid("datasets to average must share the identical input sequence"));
        }
    }
    let k = runs.len() as f64;
    let mut x = Matrix::zeros(first.n(), first.len());
    for r in runs {
        x += &r.x;
    }
    x /= k;
    let w = if runs.iter().all(|r| r.w.is_some()) {
        let mut w = Matrix::zeros(first.n(), first.len());
        for r in runs {
            w += r.w.as_ref().unwrap();
        }
        Some(w / k)
    } else {
        None
    };
    Dataset::new(first.u.clone(), x, w)
}

/// Channel-averaged signal-to-noise ratio in dB, where `x` is the measured
/// state and `x − w` the noiseless one.
pub fn snr_db(x: &Matrix, w: &Matrix) -> Result<f64> {
    if x.shape() != w.shape() {
        return Err(invalid("snr: state and noise records differ in shape"));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(invalid("snr: no channels"));
    }
    let mut acc = 0.0;
    for i in 0..n {
        let noise: f64 = w.row(i).iter().map(|v| v * v).sum();
        if noise == 0.0 {
            return Err(Error::UndefinedSnr { channel: i });
        }
        let signal: f64 = x.row(i).iter().zip(w.row(i).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        acc += 10.0 * (signal / noise).log10();
    }
    Ok(acc / n as f64)
}

/// Convenience: columns of `v` as a vector list.
pub fn columns(m: &Matrix) -> Vec<Vector> {
    m.column_iter().map(|c| c.into_owned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::mat;

    fn scalar(v: &[f64]) -> Matrix {
        Matrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn hankel_definition() {
        let h = build_hankel(&scalar(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(h, mat(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
        let z = build_hankel(&Matrix::zeros(2, 5), 3).unwrap();
        assert_eq!(z.shape(), (6, 3));
        assert_eq!(z.amax(), 0.0);
        let full = build_hankel(&scalar(&[1.0, 2.0, 3.0]), 3).unwrap();
        assert_eq!(full, mat(3, 1, &[1.0, 2.0, 3.0]));
        assert!(build_hankel(&scalar(&[1.0]), 2).is_err());
    }

    #[test]
    fn predictor_bookkeeping() {
        let d = Dataset::new(
            scalar(&[0.5, 0.6, 0.7, 0.8, 0.9]),
            scalar(&[1.0, 2.0, 3.0, 4.0, 5.0]),
            None,
        )
        .unwrap();
        let pd = build_predictor_data(&d, 2).unwrap();
        assert_eq!(pd.n_cols(), 3);
        assert_eq!(pd.x_future.column(0).as_slice(), &[2.0, 3.0]);
        assert_eq!(pd.x_past, scalar(&[1.0, 2.0, 3.0]));
        assert_eq!(pd.u_block, mat(2, 3, &[0.5, 0.6, 0.7, 0.6, 0.7, 0.8]));
        assert!(build_predictor_data(&d, 5).is_err());
    }

    #[test]
    fn rank_of_zero_data() {
        let d = Dataset::new(Matrix::zeros(1, 20), Matrix::zeros(2, 20), None).unwrap();
        let pd = build_predictor_data(&d, 2).unwrap();
        let r = pd.rank_report();
        assert_eq!(r.required, 4);
        assert_eq!(r.rank, 0);
        assert!(!r.satisfied);
    }

    #[test]
    fn snr_examples() {
        let w = mat(2, 3, &[0.1, -0.2, 0.3, 0.5, 0.4, -0.1]);
        let x = &w * 2.0;
        assert!(snr_db(&x, &w).unwrap().abs() < 1e-12);
        let signal = mat(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 2.0]);
        let base = snr_db(&(&signal + &w), &w).unwrap();
        let w10 = &w * 0.1;
        let scaled = snr_db(&(&signal + &w10), &w10).unwrap();
        assert!((scaled - base - 20.0).abs() < 1e-10);
        assert!(matches!(snr_db(&x, &Matrix::zeros(2, 3)), Err(Error::UndefinedSnr { .. })));
    }

    #[test]
    fn averaging() {
        let u = scalar(&[1.0, -1.0, 0.5]);
        let base = mat(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let v = mat(2, 3, &[0.1, -0.2, 0.3, 0.0, 0.5, -0.5]);
        let a = Dataset::new(u.clone(), &base + &v, None).unwrap();
        let b = Dataset::new(u.clone(), &base - &v, None).unwrap();
        let avg = average_datasets(&[a.clone(), b]).unwrap();
        assert!((avg.x - &base).amax() < 1e-15);
        let same = average_datasets(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert!((same.x - &a.x).amax() < 1e-15);
        let other = Dataset::new(scalar(&[1.0, -1.0, 0.6]), base, None).unwrap();
        assert!(average_datasets(&[a, other]).is_err());
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(Dataset::from_csv(""), Err(Error::Parse { .. })));
        let missing = "t,u_1,x_1,x_2\n0,1.0,2.0\n";
        assert!(matches!(Dataset::from_csv(missing), Err(Error::Schema(_))));
        let bad = "t,u_1,x_1\n0,1.0,abc\n";
        assert!(matches!(Dataset::from_csv(bad), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_round_trip_with_noise() {
        let d = Dataset::new(
            scalar(&[0.1, 1.0 / 3.0]),
            mat(2, 2, &[std::f64::consts::PI, -1e-300, 2.5e10, 0.0]),
            Some(mat(2, 2, &[0.1, 0.2, 0.3, -0.4])),
        )
        .unwrap();
        let back = Dataset::from_csv(&d.to_csv()).unwrap();
        assert_eq!(back, d);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn signal() -> impl Strategy<Value = Matrix> {
        (1usize..3, 6usize..20).prop_flat_map(|(rows, t)| {
            prop::collection::vec(-5.0..5.0f64, rows * t).prop_map(move |v| Matrix::from_row_slice(rows, t, &v))
        })
    }

    fn runs() -> impl Strategy<Value = Vec<Dataset>> {
        (1usize..5, 4usize..12).prop_flat_map(|(k, t)| {
            (
                prop::collection::vec(-1.0..1.0f64, t),
                prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2 * t), k),
            )
                .prop_map(move |(u, xs)| {
                    let u = Matrix::from_row_slice(1, t, &u);
                    xs.iter().map(|x| Dataset::new(u.clone(), Matrix::from_row_slice(2, t, x), None).unwrap()).collect()
                })
        })
    }

    proptest! {
        #[test]
        fn depth_one_is_identity(s in signal()) {
            prop_assert_eq!(build_hankel(&s, 1).unwrap(), s);
        }

        #[test]
        fn sliding_window(s in signal(), depth in 1usize..5) {
            prop_assume!(depth <= s.ncols());
            let h = build_hankel(&s, depth).unwrap();
            for j in 0..h.ncols() {
                let shifted = s.columns(j, s.ncols() - j).into_owned();
                let hs = build_hankel(&shifted, depth).unwrap();
                prop_assert_eq!(h.column(j), hs.column(0));
            }
        }

        #[test]
        fn future_block_is_shifted_hankel(u in prop::collection::vec(-1.0..1.0f64, 12), x in prop::collection::vec(-1.0..1.0f64, 24), l in 1usize..4) {
            let d = Dataset::new(Matrix::from_row_slice(1, 12, &u), Matrix::from_row_slice(2, 12, &x), None).unwrap();
            let pd = build_predictor_data(&d, l).unwrap();
            let n_cols = pd.n_cols();
            let shifted = build_hankel(&d.x.columns(1, 11).into_owned(), l).unwrap();
            let expected = shifted.columns(0, n_cols).into_owned();
            prop_assert_eq!(&pd.x_future, &expected);
        }

        #[test]
        fn averaging_idempotent_and_symmetric(rs in runs()) {
            let avg = average_datasets(&rs).unwrap();
            prop_assert_eq!(&average_datasets(std::slice::from_ref(&rs[0])).unwrap(), &rs[0]);
            let same = vec![rs[0].clone(); rs.len()];
            prop_assert!((average_datasets(&same).unwrap().x - &rs[0].x).amax() <= 1e-15 * (1.0 + rs[0].x.amax()));
            let mut rev = rs.clone();
            rev.reverse();
            prop_assert!((average_datasets(&rev).unwrap().x - &avg.x).amax() <= 1e-14);
        }

        #[test]
        fn snr_joint_scale_invariant(s in signal(), c in 0.01..100.0f64, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = s.map(|_| rng.random_range(0.1..1.0));
            let x = &s + &w;
            let base = snr_db(&x, &w).unwrap();
            let scaled = snr_db(&(&s * c + &w * c), &(&w * c)).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9);
        }
    }
}
