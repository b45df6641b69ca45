//! Primal-dual interior-point solver for small dense complex Hermitian SDPs
//! of the form
//!
//! ```text
//! maximize   tr(Ḡ W)
//! subject to W ⪰ 0,  W_kk = 1,  tr(G_i W) ≤ ᾱ_i
//! ```
//!
//! The inner solver handles the general standard form
//! `min ⟨C,X⟩ + cᵀx  s.t. ⟨A_k,X⟩ + a_kᵀx = b_k,  X ⪰ 0,  x ≥ 0`
//! with the HKM search direction and Mehrotra's predictor-corrector.
//! Infeasibility is decided by a phase-I problem that minimizes the largest
//! trace-constraint violation.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::{ComplexMatrix, C64};

#[derive(Debug, Clone, Error)]
pub enum SdpError {
    #[error("SDP is infeasible (smallest achievable violation {violation:.3e})")]
    Infeasible { violation: f64 },
    #[error("SDP solver did not converge after {iterations} iterations")]
    NotConverged {
        best: ComplexMatrix,
        objective: f64,
        iterations: usize,
    },
    #[error("invalid SDP input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Optimal `W`, with unit diagonal.
    pub w: ComplexMatrix,
    /// `tr(Ḡ W)`
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Phase-I optimum above which the problem is declared infeasible.
    pub infeasibility_tolerance: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-9,
            infeasibility_tolerance: 1e-7,
        }
    }
}

enum ConstraintMatrix {
    /// `E_kk`
    Diag(usize),
    Dense(ComplexMatrix),
}

struct Constraint {
    a: ConstraintMatrix,
    /// Sparse coefficients on the nonnegative LP variables.
    lp: Vec<(usize, f64)>,
    b: f64,
}

struct StandardForm {
    n: usize,
    c: ComplexMatrix,
    c_lp: Vec<f64>,
    cons: Vec<Constraint>,
}

struct Iterate {
    x: ComplexMatrix,
    z: ComplexMatrix,
    y: DVector<f64>,
    xl: DVector<f64>,
    zl: DVector<f64>,
}

struct Outcome {
    it: Iterate,
    converged: bool,
    iterations: usize,
    primal_objective: f64,
}

fn inner(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn hermitize(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * C64::from(0.5)
}

fn fro(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest `α` with `X + αΔX ⪰ 0`, or `None` if unbounded.
fn max_step(x: &ComplexMatrix, dx: &ComplexMatrix) -> Option<f64> {
    let l = x.clone().cholesky()?.unpack();
    let linv = l.solve_lower_triangular(&ComplexMatrix::identity(x.nrows(), x.nrows()))?;
    let m = hermitize(&(&linv * dx * linv.adjoint()));
    let lmin = m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    (lmin < 0.0).then(|| -1.0 / lmin)
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> Option<f64> {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .min_by(|a, b| a.total_cmp(b))
}

impl StandardForm {
    fn m(&self) -> usize {
        self.cons.len()
    }

    fn p(&self) -> usize {
        self.c_lp.len()
    }

    fn apply(&self, x: &ComplexMatrix, xl: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.m(),
            self.cons.iter().map(|k| {
                let sdp = match &k.a {
                    ConstraintMatrix::Diag(i) => x[(*i, *i)].re,
                    ConstraintMatrix::Dense(a) => inner(a, x),
                };
                sdp + k.lp.iter().map(|&(j, c)| c * xl[j]).sum::<f64>()
            }),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> (ComplexMatrix, DVector<f64>) {
        let mut s = ComplexMatrix::zeros(self.n, self.n);
        let mut l = DVector::zeros(self.p());
        for (k, con) in self.cons.iter().enumerate() {
            match &con.a {
                ConstraintMatrix::Diag(i) => s[(*i, *i)] += y[k],
                ConstraintMatrix::Dense(a) => s += a * C64::from(y[k]),
            }
            for &(j, c) in &con.lp {
                l[j] += c * y[k];
            }
        }
        (s, l)
    }

    fn b(&self) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.cons.iter().map(|k| k.b))
    }

    fn solve(&self, settings: &SdpSettings) -> Outcome {
        let (n, m, p) = (self.n, self.m(), self.p());
        let b = self.b();
        let bnorm = b.norm();
        let cnorm = fro(&self.c) + self.c_lp.iter().map(|v| v * v).sum::<f64>().sqrt();

        let mut amax: f64 = 1.0;
        let mut xi: f64 = 10f64.max((n as f64).sqrt());
        for con in &self.cons {
            let an = match &con.a {
                ConstraintMatrix::Diag(_) => 1.0,
                ConstraintMatrix::Dense(a) => fro(a),
            };
            amax = amax.max(an);
            xi = xi.max((n as f64).sqrt() * (1.0 + con.b.abs()) / (1.0 + an));
        }
        let eta = 10f64.max((n as f64).sqrt()).max(amax).max(cnorm);
        let mut it = Iterate {
            x: ComplexMatrix::identity(n, n) * C64::from(xi),
            z: ComplexMatrix::identity(n, n) * C64::from(eta),
            y: DVector::zeros(m),
            xl: DVector::from_element(p, xi),
            zl: DVector::from_element(p, eta),
        };
        let c_lp = DVector::from_vec(self.c_lp.clone());
        let nu = (n + p) as f64;

        for iter in 0..settings.max_iterations {
            let (aty, aty_l) = self.adjoint(&it.y);
            let rp = &b - self.apply(&it.x, &it.xl);
            let rd = hermitize(&(&self.c - &aty - &it.z));
            let rdl = &c_lp - &aty_l - &it.zl;
            let pobj = inner(&self.c, &it.x) + c_lp.dot(&it.xl);
            let dobj = b.dot(&it.y);
            let pinf = rp.norm() / (1.0 + bnorm);
            let dinf = (fro(&rd) + rdl.norm()) / (1.0 + cnorm);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            if pinf < settings.tolerance && dinf < settings.tolerance && gap < settings.tolerance {
                return Outcome {
                    it,
                    converged: true,
                    iterations: iter,
                    primal_objective: pobj,
                };
            }
            if !pobj.is_finite() || !dobj.is_finite() || it.y.amax() > 1e12 || fro(&it.x) > 1e12 {
                break;
            }

            let mu = (inner(&it.x, &it.z) + it.xl.dot(&it.zl)) / nu;
            let zinv = match it.z.clone().cholesky() {
                Some(ch) => hermitize(&ch.inverse()),
                None => break,
            };
            let ratio = DVector::from_iterator(p, it.xl.iter().zip(it.zl.iter()).map(|(x, z)| x / z));

            let dense: Vec<(usize, ComplexMatrix)> = self
                .cons
                .iter()
                .enumerate()
                .filter_map(|(k, c)| match &c.a {
                    ConstraintMatrix::Dense(a) => Some((k, &it.x * a * &zinv)),
                    ConstraintMatrix::Diag(_) => None,
                })
                .collect();
            let mut schur = DMatrix::<f64>::zeros(m, m);
            for (k, ck) in self.cons.iter().enumerate() {
                for (l, cl) in self.cons.iter().enumerate().skip(k) {
                    let v = match (&ck.a, &cl.a) {
                        (ConstraintMatrix::Diag(i), ConstraintMatrix::Diag(j)) => (it.x[(*i, *j)] * zinv[(*j, *i)]).re,
                        (ConstraintMatrix::Diag(i), ConstraintMatrix::Dense(_)) => {
                            dense.iter().find(|(q, _)| *q == l).unwrap().1[(*i, *i)].re
                        }
                        (ConstraintMatrix::Dense(_), ConstraintMatrix::Diag(j)) => {
                            dense.iter().find(|(q, _)| *q == k).unwrap().1[(*j, *j)].re
                        }
                        (ConstraintMatrix::Dense(a), ConstraintMatrix::Dense(_)) => {
                            let pl = &dense.iter().find(|(q, _)| *q == l).unwrap().1;
                            (a.transpose().component_mul(pl)).sum().re
                        }
                    };
                    let lp: f64 = ck
                        .lp
                        .iter()
                        .flat_map(|&(j1, c1)| {
                            let r = ratio[j1];
                            cl.lp.iter().filter(move |(j2, _)| *j2 == j1).map(move |&(_, c2)| c1 * c2 * r)
                        })
                        .sum();
                    schur[(k, l)] = v + lp;
                    schur[(l, k)] = v + lp;
                }
            }
            let scale = schur.diagonal().amax().max(1e-300);
            let chol = match schur.clone().cholesky() {
                Some(c) => c,
                None => {
                    let mut reg = schur.clone();
                    for i in 0..m {
                        reg[(i, i)] += 1e-13 * scale;
                    }
                    match reg.cholesky() {
                        Some(c) => c,
                        None => break,
                    }
                }
            };

            let direction = |sigma: f64, corr: Option<(&ComplexMatrix, &ComplexMatrix, &DVector<f64>, &DVector<f64>)>| {
                let mut kmat = &zinv * C64::from(sigma * mu) - &it.x - &it.x * &rd * &zinv;
                let mut kl = DVector::from_iterator(
                    p,
                    (0..p).map(|j| sigma * mu / it.zl[j] - it.xl[j] - it.xl[j] * rdl[j] / it.zl[j]),
                );
                if let Some((dxa, dza, dxla, dzla)) = corr {
                    kmat -= dxa * dza * &zinv;
                    for j in 0..p {
                        kl[j] -= dxla[j] * dzla[j] / it.zl[j];
                    }
                }
                let rhs = &rp - self.apply(&kmat, &kl);
                let dy = chol.solve(&rhs);
                let (atdy, atdy_l) = self.adjoint(&dy);
                let dz = &rd - &atdy;
                let dx = hermitize(&(&kmat + &it.x * &atdy * &zinv));
                let dzl = &rdl - &atdy_l;
                let dxl = DVector::from_iterator(p, (0..p).map(|j| kl[j] + it.xl[j] * atdy_l[j] / it.zl[j]));
                (dx, dy, dz, dxl, dzl)
            };
            let steps = |dx: &ComplexMatrix, dz: &ComplexMatrix, dxl: &DVector<f64>, dzl: &DVector<f64>, tau: f64| {
                let ap = [max_step(&it.x, dx), max_step_lp(&it.xl, dxl)]
                    .into_iter()
                    .flatten()
                    .fold(f64::INFINITY, f64::min);
                let ad = [max_step(&it.z, dz), max_step_lp(&it.zl, dzl)]
                    .into_iter()
                    .flatten()
                    .fold(f64::INFINITY, f64::min);
                ((tau * ap).min(1.0), (tau * ad).min(1.0))
            };

            let (dxa, _, dza, dxla, dzla) = direction(0.0, None);
            let (apa, ada) = steps(&dxa, &dza, &dxla, &dzla, 1.0);
            let mu_aff = (inner(&(&it.x + &dxa * C64::from(apa)), &(&it.z + &dza * C64::from(ada)))
                + (&it.xl + &dxla * apa).dot(&(&it.zl + &dzla * ada)))
                / nu;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let (dx, dy, dz, dxl, dzl) = direction(sigma, Some((&dxa, &dza, &dxla, &dzla)));
            let tau = 0.9 + 0.09 * apa.min(ada);
            let (ap, ad) = steps(&dx, &dz, &dxl, &dzl, tau);

            it.x = hermitize(&(&it.x + dx * C64::from(ap)));
            it.xl += dxl * ap;
            it.y += dy * ad;
            it.z = hermitize(&(&it.z + dz * C64::from(ad)));
            it.zl += dzl * ad;
        }
        let pobj = inner(&self.c, &it.x) + c_lp.dot(&it.xl);
        Outcome {
            it,
            converged: false,
            iterations: settings.max_iterations,
            primal_objective: pobj,
        }
    }
}

fn check_hermitian(name: &str, m: &ComplexMatrix, n: usize) -> Result<(), SdpError> {
    if m.shape() != (n, n) {
        return Err(SdpError::BadInput(format!("{name} has shape {:?}, expected {n}×{n}", m.shape())));
    }
    if crate::numerics::hermitian_defect(m) > 1e-8 {
        return Err(SdpError::BadInput(format!("{name} is not Hermitian")));
    }
    Ok(())
}

/// Scales the trace constraints to unit Frobenius norm, dropping any that
/// are identically zero (they are then either trivially true or infeasible).
fn normalized_constraints(constraints: &[(ComplexMatrix, f64)]) -> Result<Vec<(ComplexMatrix, f64)>, SdpError> {
    let mut out = Vec::with_capacity(constraints.len());
    for (g, alpha) in constraints {
        let nrm = fro(g);
        if nrm == 0.0 {
            if *alpha < 0.0 {
                return Err(SdpError::Infeasible { violation: -alpha });
            }
            continue;
        }
        out.push((hermitize(g) * C64::from(1.0 / nrm), alpha / nrm));
    }
    Ok(out)
}

fn diag_constraints(n: usize) -> impl Iterator<Item = Constraint> {
    (0..n).map(|i| Constraint {
        a: ConstraintMatrix::Diag(i),
        lp: Vec::new(),
        b: 1.0,
    })
}

/// Smallest `t ≥ 0` such that some unit-diagonal `W ⪰ 0` has
/// `tr(G_i W) ≤ ᾱ_i + t` for every (normalized) constraint.
fn phase_one(n: usize, cons: &[(ComplexMatrix, f64)], settings: &SdpSettings) -> Result<f64, SdpError> {
    let q = cons.len();
    let mut c_lp = vec![0.0; q + 1];
    c_lp[q] = 1.0;
    let form = StandardForm {
        n,
        c: ComplexMatrix::zeros(n, n),
        c_lp,
        cons: diag_constraints(n)
            .chain(cons.iter().enumerate().map(|(i, (g, a))| Constraint {
                a: ConstraintMatrix::Dense(g.clone()),
                lp: vec![(i, 1.0), (q, -1.0)],
                b: *a,
            }))
            .collect(),
    };
    let out = form.solve(settings);
    if !out.converged {
        return Err(SdpError::NotConverged {
            best: out.it.x,
            objective: f64::NAN,
            iterations: out.iterations,
        });
    }
    Ok(out.primal_objective.max(0.0))
}

fn unit_diagonal(w: &ComplexMatrix) -> ComplexMatrix {
    let d: Vec<f64> = (0..w.nrows()).map(|i| w[(i, i)].re.max(1e-300).sqrt()).collect();
    let mut out = ComplexMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] / (d[i] * d[j]));
    for i in 0..w.nrows() {
        out[(i, i)] = C64::from(1.0);
    }
    hermitize(&out)
}

pub fn sdp_solve(g_bar: &ComplexMatrix, constraints: &[(ComplexMatrix, f64)]) -> Result<SdpSolution, SdpError> {
    sdp_solve_with(g_bar, constraints, &SdpSettings::default())
}

/// Maximizes `tr(Ḡ W)` over unit-diagonal `W ⪰ 0` with `tr(G_i W) ≤ ᾱ_i`.
pub fn sdp_solve_with(
    g_bar: &ComplexMatrix,
    constraints: &[(ComplexMatrix, f64)],
    settings: &SdpSettings,
) -> Result<SdpSolution, SdpError> {
    let n = g_bar.nrows();
    if n == 0 {
        return Err(SdpError::BadInput("dimension must be >= 1".into()));
    }
    check_hermitian("objective", g_bar, n)?;
    for (g, a) in constraints {
        check_hermitian("constraint", g, n)?;
        if !a.is_finite() {
            return Err(SdpError::BadInput("constraint bound must be finite".into()));
        }
    }
    let cons = normalized_constraints(constraints)?;

    // Cheap certificates before paying for a phase-I solve.
    if !cons.is_empty() {
        let mut certain_infeasible = 0.0f64;
        for (g, a) in &cons {
            let lmin = g.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
            certain_infeasible = certain_infeasible.max(n as f64 * lmin - a);
        }
        if certain_infeasible > settings.infeasibility_tolerance {
            return Err(SdpError::Infeasible {
                violation: certain_infeasible,
            });
        }
        let strictly_inside_at_identity = cons.iter().all(|(g, a)| g.trace().re < *a);
        if !strictly_inside_at_identity {
            let t = phase_one(n, &cons, settings)?;
            if t > settings.infeasibility_tolerance {
                return Err(SdpError::Infeasible { violation: t });
            }
        }
    }

    let gnorm = fro(g_bar).max(f64::MIN_POSITIVE);
    let q = cons.len();
    let form = StandardForm {
        n,
        c: hermitize(g_bar) * C64::from(-1.0 / gnorm),
        c_lp: vec![0.0; q],
        cons: diag_constraints(n)
            .chain(cons.iter().enumerate().map(|(i, (g, a))| Constraint {
                a: ConstraintMatrix::Dense(g.clone()),
                lp: vec![(i, 1.0)],
                b: *a,
            }))
            .collect(),
    };
    let out = form.solve(settings);
    let w = unit_diagonal(&out.it.x);
    let objective = inner(g_bar, &w);
    if !out.converged {
        return Err(SdpError::NotConverged {
            best: w,
            objective,
            iterations: out.iterations,
        });
    }
    Ok(SdpSolution {
        w,
        objective,
        iterations: out.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testutil::{random_hermitian, rng};
    use crate::numerics::{c64, cis, cn_vector, hermitian_evd, phase_project, ComplexVector};
    use rand::Rng;

    fn quad(g: &ComplexMatrix, w: &ComplexVector) -> f64 {
        (w.adjoint() * g * w)[0].re
    }

    #[test]
    fn two_by_two_all_ones() {
        let g = ComplexMatrix::from_element(2, 2, c64(1.0, 0.0));
        let sol = sdp_solve(&g, &[]).unwrap();
        assert!((sol.objective - 4.0).abs() < 1e-6);
        assert!((sol.w[(0, 1)] - c64(1.0, 0.0)).norm() < 1e-4);
    }

    #[test]
    fn two_by_two_brute_force_disc() {
        let mut r = rng(40);
        for _ in 0..10 {
            let g = random_hermitian(2, &mut r);
            // tr(GW) = g00 + g11 + 2 Re(g10 w01) over |w01| ≤ 1
            let best = g[(0, 0)].re + g[(1, 1)].re + 2.0 * g[(1, 0)].norm();
            let sol = sdp_solve(&g, &[]).unwrap();
            assert!((sol.objective - best).abs() <= 1e-4 * best.abs().max(1.0));
        }
    }

    #[test]
    fn identity_objective_is_dimension() {
        for n in [1usize, 3, 7] {
            let sol = sdp_solve(&ComplexMatrix::identity(n, n), &[]).unwrap();
            assert!((sol.objective - n as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_constraint_below_dimension_is_infeasible() {
        let g = ComplexMatrix::identity(4, 4);
        let err = sdp_solve(&g, &[(ComplexMatrix::identity(4, 4), 3.5)]).unwrap_err();
        assert!(matches!(err, SdpError::Infeasible { .. }));
        assert!(sdp_solve(&g, &[(ComplexMatrix::identity(4, 4), 4.5)]).is_ok());
    }

    #[test]
    fn phase_one_detects_coupled_infeasibility() {
        // tr(A W) = 2 + Re w01 and tr(B W) = 2 − Re w01
        let half = c64(0.5, 0.0);
        let one = c64(1.0, 0.0);
        let a = ComplexMatrix::from_row_slice(2, 2, &[one, half, half, one]);
        let b = ComplexMatrix::identity(2, 2) * C64::from(2.0) - &a;
        let id = ComplexMatrix::identity(2, 2);
        let err = sdp_solve(&id, &[(a.clone(), 1.25), (b.clone(), 1.25)]).unwrap_err();
        assert!(matches!(err, SdpError::Infeasible { .. }), "{err:?}");
        let ok = sdp_solve(&id, &[(a, 1.5), (b, 2.6)]).unwrap();
        let re = ok.w[(0, 1)].re;
        assert!(re <= -0.5 + 1e-6 && re >= -0.6 - 1e-6, "{re}");
    }

    #[test]
    fn constrained_optimum_respects_constraints() {
        let mut r = rng(41);
        for _ in 0..5 {
            let n = 6;
            let gbar = random_hermitian(n, &mut r);
            let v = cn_vector(n, 1.0, &mut r);
            let gi = &v * v.adjoint();
            let unconstrained = sdp_solve(&gbar, &[]).unwrap();
            let cap = 0.5 * gi.trace().re;
            let sol = sdp_solve(&gbar, &[(gi.clone(), cap)]).unwrap();
            let lhs = (gi.clone() * &sol.w).trace().re;
            assert!(lhs <= cap + 1e-6 * cap.max(1.0));
            assert!(sol.objective <= unconstrained.objective + 1e-6);
            for i in 0..n {
                assert!((sol.w[(i, i)].re - 1.0).abs() < 1e-12);
            }
            let (vals, _) = hermitian_evd(&sol.w).unwrap();
            assert!(vals[n - 1] > -1e-8);
        }
    }

    #[test]
    fn relaxation_dominates_rank_one_points() {
        let mut r = rng(42);
        let n = 8;
        let gbar = random_hermitian(n, &mut r);
        let sol = sdp_solve(&gbar, &[]).unwrap();
        for _ in 0..100 {
            let w = ComplexVector::from_fn(n, |_, _| cis(r.random_range(0.0..std::f64::consts::TAU)));
            assert!(quad(&gbar, &w) <= sol.objective + 1e-6);
        }
        let w = phase_project(&cn_vector(n, 1.0, &mut r));
        assert!(quad(&gbar, &w) <= sol.objective + 1e-6);
    }

    #[test]
    fn larger_problem_converges() {
        let mut r = rng(43);
        let n = 32;
        let gbar = {
            let a = crate::numerics::cn_matrix(n, 4, 1.0, &mut r);
            &a * a.adjoint()
        };
        let gs: Vec<(ComplexMatrix, f64)> = (0..4)
            .map(|_| {
                let v = crate::numerics::cn_matrix(n, 2, 1.0, &mut r);
                let g = &v * v.adjoint();
                let cap = 0.8 * g.trace().re;
                (g, cap)
            })
            .collect();
        let sol = sdp_solve(&gbar, &gs).unwrap();
        for (g, cap) in &gs {
            assert!((g * &sol.w).trace().re <= cap * (1.0 + 1e-6));
        }
    }

    #[test]
    fn rejects_non_hermitian_input() {
        let g = ComplexMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)]);
        assert!(matches!(sdp_solve(&g, &[]), Err(SdpError::BadInput(_))));
    }
}
