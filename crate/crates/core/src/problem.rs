//! Linear inverse problems `y = A x̄ + ε`.
//!
//! The noise is always projected onto `ran(A)` so that `y ∈ ran(A)` holds by
//! construction; its norm is set relative to `‖ȳ‖ = ‖A x̄‖`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DipError, Result};
use crate::rng::seeded_rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    #[default]
    Gaussian,
    Identity,
    Custom,
}

/// Forward operator recipe.
#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    /// iid N(0,1) entries.
    Gaussian,
    /// `A[i, j] = 1` if `i == j` (rectangular when `m ≠ n`).
    Identity,
    Custom(DMatrix<f64>),
}

impl Operator {
    pub fn kind(&self) -> OperatorKind {
        match self {
            Operator::Gaussian => OperatorKind::Gaussian,
            Operator::Identity => OperatorKind::Identity,
            Operator::Custom(_) => OperatorKind::Custom,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Smallest retained (nonzero) singular value.
    pub sigma_a: f64,
    /// `σ_max / σ_A`.
    pub kappa_a: f64,
    pub sigma_max: f64,
    pub rank: usize,
}

/// Numerical rank threshold relative to `σ_max`.
pub fn rank_tolerance(rows: usize, cols: usize) -> f64 {
    1e-10 * rows.max(cols) as f64
}

/// Spectral quantities of `A` from its singular values.
///
/// Singular values below `rank_tolerance · σ_max` are treated as zero.
pub fn spectral_summary(a: &DMatrix<f64>) -> Result<SpectralSummary> {
    if a.is_empty() {
        return Err(DipError::DegenerateOperator("empty matrix".into()));
    }
    summary_from_singular_values(a.singular_values().as_slice(), a.nrows(), a.ncols())
}

fn summary_from_singular_values(sv: &[f64], rows: usize, cols: usize) -> Result<SpectralSummary> {
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    if !(sigma_max > 0.0) {
        return Err(DipError::DegenerateOperator(
            "all singular values are zero".into(),
        ));
    }
    let cut = rank_tolerance(rows, cols) * sigma_max;
    let retained: Vec<f64> = sv.iter().copied().filter(|&s| s > cut).collect();
    let sigma_a = retained.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SpectralSummary {
        sigma_a,
        kappa_a: sigma_max / sigma_a,
        sigma_max,
        rank: retained.len(),
    })
}

#[derive(Clone, Debug)]
pub struct InverseProblem {
    /// m×n forward operator.
    pub a: DMatrix<f64>,
    pub x_bar: DVector<f64>,
    pub eps: DVector<f64>,
    /// `A x̄ + ε`.
    pub y: DVector<f64>,
    /// `A x̄`.
    pub y_bar: DVector<f64>,
    pub spectrum: SpectralSummary,
    pub operator: OperatorKind,
    pub noise_level: f64,
    pub seed: Option<u64>,
}

/// Draws a problem instance.
///
/// Draw order from `ChaCha8Rng(seed)`: `A` row-major (Gaussian kind only),
/// `x̄` (n normals), then the raw noise direction `g` (m normals, always drawn
/// so that the noise level does not shift later draws).
pub fn make_problem(
    m: usize,
    n: usize,
    noise_level: f64,
    seed: u64,
    operator: &Operator,
) -> Result<InverseProblem> {
    if m == 0 {
        return Err(DipError::ZeroDimension("m"));
    }
    if n == 0 {
        return Err(DipError::ZeroDimension("n"));
    }
    if !(noise_level >= 0.0) || !noise_level.is_finite() {
        return Err(DipError::invalid(
            "noise_level",
            "must be a finite nonnegative number",
        ));
    }
    let mut rng = seeded_rng(seed);
    let a = match operator {
        Operator::Gaussian => {
            let entries: Vec<f64> = (0..m * n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            DMatrix::from_row_slice(m, n, &entries)
        }
        Operator::Identity => DMatrix::identity(m, n),
        Operator::Custom(mat) => {
            if mat.shape() != (m, n) {
                return Err(DipError::DimensionMismatch(format!(
                    "custom operator is {}x{}, expected {m}x{n}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            mat.clone()
        }
    };
    let x_bar = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let g = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut prob = from_parts(a, x_bar, DVector::zeros(m))?;
    prob.operator = operator.kind();
    prob.seed = Some(seed);
    prob.noise_level = noise_level;
    if noise_level > 0.0 {
        let projected = project_onto_range(&prob.a, &g)?;
        let pn = projected.norm();
        let yn = prob.y_bar.norm();
        if pn > 0.0 && yn > 0.0 {
            prob.eps = projected * (noise_level * yn / pn);
            prob.y = &prob.y_bar + &prob.eps;
        }
    }
    Ok(prob)
}

/// Builds a problem from explicit `A`, `x̄` and `ε`. The noise is used as
/// given; callers are responsible for keeping it in `ran(A)`.
pub fn from_parts(
    a: DMatrix<f64>,
    x_bar: DVector<f64>,
    eps: DVector<f64>,
) -> Result<InverseProblem> {
    if a.ncols() != x_bar.len() || a.nrows() != eps.len() {
        return Err(DipError::DimensionMismatch(format!(
            "A is {}x{}, x̄ has {} entries, ε has {}",
            a.nrows(),
            a.ncols(),
            x_bar.len(),
            eps.len()
        )));
    }
    let spectrum = spectral_summary(&a)?;
    let y_bar = &a * &x_bar;
    let y = &y_bar + &eps;
    Ok(InverseProblem {
        a,
        x_bar,
        noise_level: 0.0,
        eps,
        y,
        y_bar,
        spectrum,
        operator: OperatorKind::Custom,
        seed: None,
    })
}

/// Orthogonal projection of `v` onto `ran(A)` using the retained left singular vectors.
pub fn project_onto_range(a: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| DipError::DegenerateOperator("SVD did not return left vectors".into()))?;
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if !(sigma_max > 0.0) {
        return Err(DipError::DegenerateOperator(
            "all singular values are zero".into(),
        ));
    }
    let cut = rank_tolerance(a.nrows(), a.ncols()) * sigma_max;
    let mut out = DVector::zeros(a.nrows());
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            let col = u.column(j);
            out.axpy(col.dot(v), &col, 1.0);
        }
    }
    Ok(out)
}

impl InverseProblem {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn sigma_a(&self) -> f64 {
        self.spectrum.sigma_a
    }

    pub fn kappa_a(&self) -> f64 {
        self.spectrum.kappa_a
    }

    pub fn operator_norm(&self) -> f64 {
        self.spectrum.sigma_max
    }

    pub fn noise_norm(&self) -> f64 {
        self.eps.norm()
    }

    pub fn to_record(&self, include_matrices: bool) -> ProblemRecord {
        let matrices = (include_matrices || self.seed.is_none()).then(|| ProblemMatrices {
            a: self.a.transpose().iter().copied().collect(),
            x_bar: self.x_bar.iter().copied().collect(),
            eps: self.eps.iter().copied().collect(),
        });
        ProblemRecord {
            m: self.m(),
            n: self.n(),
            seed: self.seed,
            noise_level: self.noise_level,
            operator: self.operator,
            matrices,
        }
    }
}

/// Serializable problem description (seed + parameters, or full matrices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub m: usize,
    pub n: usize,
    pub seed: Option<u64>,
    pub noise_level: f64,
    pub operator: OperatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<ProblemMatrices>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemMatrices {
    /// Row-major m×n.
    pub a: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub eps: Vec<f64>,
}

impl ProblemRecord {
    pub fn restore(&self) -> Result<InverseProblem> {
        match (&self.matrices, self.seed) {
            (Some(mats), seed) => {
                if mats.a.len() != self.m * self.n {
                    return Err(DipError::DimensionMismatch(
                        "record matrix size does not match m·n".into(),
                    ));
                }
                let mut prob = from_parts(
                    DMatrix::from_row_slice(self.m, self.n, &mats.a),
                    DVector::from_vec(mats.x_bar.clone()),
                    DVector::from_vec(mats.eps.clone()),
                )?;
                prob.operator = self.operator;
                prob.noise_level = self.noise_level;
                prob.seed = seed;
                Ok(prob)
            }
            (None, Some(seed)) => {
                let op = match self.operator {
                    OperatorKind::Gaussian => Operator::Gaussian,
                    OperatorKind::Identity => Operator::Identity,
                    OperatorKind::Custom => {
                        return Err(DipError::invalid(
                            "operator",
                            "a custom operator record must carry its matrices",
                        ))
                    }
                };
                make_problem(self.m, self.n, self.noise_level, seed, &op)
            }
            (None, None) => Err(DipError::invalid(
                "problem",
                "needs either a seed or explicit matrices",
            )),
        }
    }
}

/// Reads a dense matrix.
///
/// Files ending in `.bin` use the binary layout: an 8-byte header holding
/// `rows` and `cols` as little-endian `u32`, followed by `rows·cols`
/// little-endian `f64` values in row-major order. Anything else is read as
/// text: a first line `rows cols`, then the entries row-major separated by
/// whitespace. Lines starting with `#` are ignored.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    if path.extension().is_some_and(|e| e == "bin") {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        decode_binary_matrix(&bytes)
    } else {
        read_text_matrix(BufReader::new(fs::File::open(path)?))
    }
}

pub fn decode_binary_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 8 {
        return Err(DipError::invalid(
            "matrix file",
            "missing 8-byte dimension header",
        ));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 8 {
        return Err(DipError::invalid(
            "matrix file",
            format!(
                "header says {rows}x{cols} but body has {} bytes",
                body.len()
            ),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn encode_binary_matrix(a: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + a.len() * 8);
    out.extend_from_slice(&(a.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(a.ncols() as u32).to_le_bytes());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.extend_from_slice(&a[(i, j)].to_le_bytes());
        }
    }
    out
}

fn read_text_matrix<R: BufRead>(reader: R) -> Result<DMatrix<f64>> {
    let mut tokens = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            tokens.push((lineno + 1, tok.to_string()));
        }
    }
    let parse_dim = |idx: usize, name: &str| -> Result<usize> {
        let (line, tok) = tokens
            .get(idx)
            .ok_or_else(|| DipError::invalid("matrix file", format!("missing {name}")))?;
        tok.parse().map_err(|_| {
            DipError::invalid("matrix file", format!("line {line}: bad {name} `{tok}`"))
        })
    };
    let rows = parse_dim(0, "row count")?;
    let cols = parse_dim(1, "column count")?;
    let body = &tokens[2..];
    if body.len() != rows * cols {
        return Err(DipError::invalid(
            "matrix file",
            format!("expected {} entries, found {}", rows * cols, body.len()),
        ));
    }
    let values = body
        .iter()
        .map(|(line, tok)| {
            tok.parse::<f64>().map_err(|_| {
                DipError::invalid("matrix file", format!("line {line}: bad number `{tok}`"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    if path.extension().is_some_and(|e| e == "bin") {
        fs::write(path, encode_binary_matrix(a))?;
    } else {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(f, "{} {}", a.nrows(), a.ncols())?;
        for i in 0..a.nrows() {
            let row: Vec<String> = (0..a.ncols()).map(|j| format!("{:e}", a[(i, j)])).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Independent route to the singular values: eigenvalues of the smaller
    /// of `A Aᵀ` and `Aᵀ A`.
    fn oracle_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
        let gram = if a.nrows() <= a.ncols() {
            a * a.transpose()
        } else {
            a.transpose() * a
        };
        let mut ev: Vec<f64> = gram
            .symmetric_eigenvalues()
            .iter()
            .map(|&l| l.max(0.0).sqrt())
            .collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn identity_operator() {
        let p = make_problem(4, 4, 0.0, 1, &Operator::Identity).unwrap();
        assert_eq!(p.sigma_a(), 1.0);
        assert_eq!(p.kappa_a(), 1.0);
        assert_eq!(p.y, p.x_bar);
    }

    #[test]
    fn rank_deficient_custom_operator() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = make_problem(2, 2, 0.0, 1, &Operator::Custom(a)).unwrap();
        assert!((p.sigma_a() - 2.0).abs() < 1e-15);
        assert!((p.kappa_a() - 1.0).abs() < 1e-15);
        assert_eq!(p.spectrum.rank, 1);
    }

    #[test]
    fn spectral_summary_small_cases() {
        let s = spectral_summary(&(DMatrix::identity(2, 2) * 3.0)).unwrap();
        assert!((s.sigma_a - 3.0).abs() < 1e-14);
        assert!((s.kappa_a - 1.0).abs() < 1e-14);
        assert!((s.sigma_max - 3.0).abs() < 1e-14);
        assert_eq!(s.rank, 2);

        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let s = spectral_summary(&a).unwrap();
        assert!((s.sigma_a - 1.0).abs() < 1e-14);
        assert!((s.kappa_a - 2.0).abs() < 1e-14);
        assert!((s.sigma_max - 2.0).abs() < 1e-14);
        assert_eq!(s.rank, 2);

        assert!(matches!(
            spectral_summary(&DMatrix::zeros(3, 2)),
            Err(DipError::DegenerateOperator(_))
        ));
    }

    #[test]
    fn spectral_summary_matches_oracle() {
        for (m, n, seed) in [(50, 200, 3), (10, 3000, 4), (60, 10, 5)] {
            let p = make_problem(m, n, 0.0, seed, &Operator::Gaussian).unwrap();
            let sv = oracle_singular_values(&p.a);
            let smax = sv[0];
            let smin = *sv.last().unwrap();
            assert_eq!(p.spectrum.rank, m.min(n));
            assert!((p.spectrum.sigma_max - smax).abs() <= 1e-8 * smax);
            assert!(
                (p.sigma_a() - smin).abs() <= 1e-8 * smax,
                "{} vs {smin}",
                p.sigma_a()
            );
            assert!((p.kappa_a() - smax / smin).abs() <= 1e-8 * (smax / smin));
        }
    }

    #[test]
    fn sigma_a_lower_bounds_range_probes() {
        let p = make_problem(8, 20, 0.0, 9, &Operator::Gaussian).unwrap();
        let mut rng = seeded_rng(1);
        for _ in 0..1000 {
            let v = DVector::from_fn(20, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &p.a * v;
            let ratio = (p.a.transpose() * &z).norm() / z.norm();
            assert!(ratio >= p.sigma_a() - 1e-8);
        }
        // Rank-deficient operator: probes restricted to the range still respect σ_A.
        let low = DMatrix::from_fn(6, 3, |i, j| (i + 2 * j) as f64);
        let s = spectral_summary(&low).unwrap();
        for _ in 0..100 {
            let v = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &low * v;
            assert!((low.transpose() * &z).norm() / z.norm() >= s.sigma_a - 1e-8);
        }
    }

    #[test]
    fn noise_lies_in_range_and_has_requested_norm() {
        for (m, n) in [(30, 10), (5, 10), (10, 10)] {
            let p = make_problem(m, n, 0.1, 77, &Operator::Gaussian).unwrap();
            assert!((p.noise_norm() - 0.1 * p.y_bar.norm()).abs() < 1e-12 * p.y_bar.norm());
            let proj = project_onto_range(&p.a, &p.y).unwrap();
            assert!((&proj - &p.y).norm() <= 1e-10 * p.y.norm());
            assert_eq!(p.y, &p.a * &p.x_bar + &p.eps);
        }
        let clean = make_problem(30, 10, 0.0, 77, &Operator::Gaussian).unwrap();
        assert_eq!(clean.y, clean.y_bar);
        assert_eq!(clean.eps.norm(), 0.0);
    }

    #[test]
    fn matrix_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let a = DMatrix::from_fn(3, 4, |i, j| i as f64 * 0.5 - j as f64 / 3.0);
        for name in ["a.bin", "a.txt"] {
            let path = dir.path().join(name);
            write_matrix(&path, &a).unwrap();
            let b = read_matrix(&path).unwrap();
            assert_eq!(a, b);
        }
        let bytes = encode_binary_matrix(&a);
        assert_eq!(&bytes[0..8], &[3, 0, 0, 0, 4, 0, 0, 0]);
        assert!(decode_binary_matrix(&bytes[..20]).is_err());
    }

    #[test]
    fn record_roundtrip() {
        let p = make_problem(4, 6, 0.2, 5, &Operator::Gaussian).unwrap();
        let again = p.to_record(false).restore().unwrap();
        assert_eq!(again.a, p.a);
        assert_eq!(again.y, p.y);
        let full = p.to_record(true).restore().unwrap();
        assert_eq!(full.a, p.a);
        assert_eq!(full.eps, p.eps);
    }

    proptest! {
        #[test]
        fn sigma_a_is_absolutely_homogeneous(seed in 0u64..500, c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
            let p = make_problem(4, 7, 0.0, seed, &Operator::Gaussian).unwrap();
            let scaled = spectral_summary(&(&p.a * c)).unwrap();
            prop_assert!((scaled.sigma_a - c.abs() * p.sigma_a()).abs() <= 1e-10 * scaled.sigma_max);
        }
    }
}
