//! Dense complex linear algebra and the scalar special functions shared by
//! the rest of the crate.
//!
//! Matrices are plain `nalgebra` dense matrices over `Complex<f64>`; the
//! helpers here add the contracts the simulator relies on (Hermitian checks,
//! descending eigenvalue order, least squares with a conditioning guard).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Relative tolerance used to accept a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Largest Gram-matrix condition number accepted by [`ls_solve`].
pub const MAX_CONDITION: f64 = 1e12;

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `e^{jθ}`
pub fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

pub fn frobenius_sq(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm_sq(v: &ComplexVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Relative Hermitian defect `‖H − Hᴴ‖_F / ‖H‖_F` (0 for the zero matrix).
pub fn hermitian_defect(h: &ComplexMatrix) -> f64 {
    if h.nrows() != h.ncols() {
        return f64::INFINITY;
    }
    let scale = frobenius_sq(h).sqrt();
    if scale == 0.0 {
        return 0.0;
    }
    let diff = h - h.adjoint();
    frobenius_sq(&diff).sqrt() / scale
}

pub fn is_hermitian(h: &ComplexMatrix) -> bool {
    hermitian_defect(h) <= HERMITIAN_TOL
}

/// `(H + Hᴴ)/2`
pub fn hermitian_part(h: &ComplexMatrix) -> ComplexMatrix {
    (h + h.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix.
///
/// Eigenvalues come back in descending order with the matching eigenvectors
/// as the columns of a unitary matrix.
pub fn hermitian_evd(h: &ComplexMatrix) -> Result<(DVector<f64>, ComplexMatrix)> {
    if h.nrows() != h.ncols() {
        return Err(Error::dim("hermitian_evd", "square matrix", format!("{}x{}", h.nrows(), h.ncols())));
    }
    let defect = hermitian_defect(h);
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let eig = hermitian_part(h).symmetric_eigen();
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Principal eigenpair of a Hermitian matrix.
pub fn principal_eigenpair(h: &ComplexMatrix) -> Result<(f64, ComplexVector)> {
    let (values, vectors) = hermitian_evd(h)?;
    Ok((values[0], vectors.column(0).into_owned()))
}

/// Least-squares solution `(UᴴU)⁻¹Uᴴy` for a tall, full-column-rank `U`.
pub fn ls_solve(u: &ComplexMatrix, y: &ComplexVector) -> Result<ComplexVector> {
    let (m, j) = u.shape();
    if y.len() != m {
        return Err(Error::dim("ls_solve", m, y.len()));
    }
    if j > m {
        return Err(Error::Singular(format!("{j} unknowns from {m} equations")));
    }
    let gram = u.adjoint() * u;
    let rhs = u.adjoint() * y;
    solve_gram(&gram, &rhs)
}

/// Solves `gram · x = rhs` for a Hermitian positive definite Gram matrix,
/// rejecting systems whose condition number exceeds [`MAX_CONDITION`].
pub fn solve_gram(gram: &ComplexMatrix, rhs: &ComplexVector) -> Result<ComplexVector> {
    if gram.nrows() == 0 {
        return Ok(ComplexVector::zeros(0));
    }
    let (values, _) = hermitian_evd(&hermitian_part(gram))?;
    let max = values[0];
    let min = values[values.len() - 1];
    if !(max > 0.0) || min <= max / MAX_CONDITION {
        return Err(Error::Singular(format!(
            "Gram matrix eigenvalues in [{min:.3e}, {max:.3e}]"
        )));
    }
    let chol = hermitian_part(gram)
        .cholesky()
        .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))?;
    Ok(chol.solve(rhs))
}

/// Inverse of a Hermitian positive definite matrix.
pub fn hpd_inverse(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let chol = hermitian_part(m)
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(hermitian_part(&chol.inverse()))
}

/// Standard Gaussian tail probability `Q(x) = ½·erfc(x/√2)`.
pub fn qfunc(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

fn check_chi2_args(x: f64, dof: u64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("chi-squared argument {x} must be >= 0")));
    }
    if dof < 2 || dof % 2 != 0 {
        return Err(Error::Domain(format!("chi-squared dof {dof} must be even and >= 2")));
    }
    Ok(())
}

/// CDF of the chi-squared distribution with an even number of degrees of freedom.
pub fn chi2_cdf(x: f64, dof: u64) -> Result<f64> {
    check_chi2_args(x, dof)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(statrs::function::gamma::gamma_lr(dof as f64 / 2.0, x / 2.0))
}

/// Upper tail `1 − chi2_cdf`, evaluated directly so tiny tails keep their precision.
pub fn chi2_sf(x: f64, dof: u64) -> Result<f64> {
    check_chi2_args(x, dof)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(statrs::function::gamma::gamma_ur(dof as f64 / 2.0, x / 2.0))
}

/// One draw of `CN(0, variance)`.
pub fn sample_cn<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Result<C64> {
    if variance.is_nan() || variance < 0.0 {
        return Err(Error::Domain(format!("variance {variance} must be >= 0")));
    }
    Ok(cn(variance, rng))
}

/// Unchecked `CN(0, variance)` draw for internal hot loops.
pub(crate) fn cn<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> C64 {
    if variance == 0.0 {
        return C64::new(0.0, 0.0);
    }
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub(crate) fn cn_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, variance: f64, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| cn(variance, rng))
}

pub(crate) fn cn_vector<R: Rng + ?Sized>(len: usize, variance: f64, rng: &mut R) -> ComplexVector {
    ComplexVector::from_fn(len, |_, _| cn(variance, rng))
}

/// Projects every entry onto the unit circle. Zero entries map to phase 0.
pub fn phase_project(v: &ComplexVector) -> ComplexVector {
    v.map(|z| {
        let r = z.norm();
        if r > 0.0 && r.is_finite() {
            z / r
        } else {
            C64::new(1.0, 0.0)
        }
    })
}

/// Column-major vectorization `vec(A)`.
pub fn vectorize(m: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &ComplexVector, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker product.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// `A · diag(d)`: scales column `j` of `A` by `d[j]`.
pub fn scale_columns(a: &ComplexMatrix, d: &[C64]) -> ComplexMatrix {
    let mut out = a.clone();
    for (j, &s) in d.iter().enumerate() {
        for z in out.column_mut(j).iter_mut() {
            *z *= s;
        }
    }
    out
}

/// `n` points log-spaced in `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Independent generator for sub-experiment `stream` of a run seeded with
/// `seed`: ChaCha8 keyed by the seed, with the stream selector set to `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// dBm to Watts: `10^((x − 30)/10)`.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}
