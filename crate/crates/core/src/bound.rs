//! Approximate achievability bound on the per-user error probability of the
//! RIS-aided scheme with a blocked user-BS link.
//!
//! The bound is `ε = p_coll + p_cons + p_mis`: codeword collisions, power
//! constraint violations of the Gaussian codebook, and missed users caused by
//! the scatterer search stopping early. `p_mis` depends on the path gains and
//! is averaged over Monte-Carlo realizations.

use std::io::Write;

use nalgebra::Cholesky;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{sample_paths, ChannelParams, LinkSpec, RisBsModel, Upa};
use crate::error::{Error, Result};
use crate::numerics::{
    c64, chi2_sf, dbm_to_watts, hermitian_evd, hermitian_part, logspace, stream_rng, ComplexMatrix,
    ComplexVector, C64,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub k_a: usize,
    /// Message bits `B`.
    pub bits: u32,
    /// Channel uses per codeword.
    pub n: usize,
    /// Per-symbol power constraint `P`.
    pub power: f64,
    /// Codebook symbol variance `P′`.
    pub p_prime: f64,
    pub sigma2: f64,
    /// `L_{R,i}` for every user; paths are assigned to users contiguously.
    pub paths_per_user: Vec<usize>,
    /// Array geometry and the RIS-BS / user-RIS link statistics. The
    /// user-BS link is ignored.
    pub channel: ChannelParams,
    /// Points in the per-candidate λ grid.
    pub lambda_points: usize,
    pub rho: Vec<f64>,
    pub realizations: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        let k_a = 10;
        Self {
            k_a,
            bits: 100,
            n: 12_000,
            power: dbm_to_watts(-20.0),
            p_prime: dbm_to_watts(-20.0) * 0.9,
            sigma2: dbm_to_watts(-95.0),
            paths_per_user: vec![2; k_a],
            channel: ChannelParams {
                bs: Upa::new(8, 8, 0.5),
                ris: Upa::new(8, 8, 0.5),
                ris_bs: LinkSpec { paths: 2, l0: 1e-3, alpha: 2.3, distance: (100.0, 100.0) },
                ris_bs_model: RisBsModel::SalehValenzuela,
                user_ris: LinkSpec { paths: 2, l0: 1e-3, alpha: 2.3, distance: (200.0, 300.0) },
                user_bs: None,
            },
            lambda_points: 64,
            rho: vec![0.0, 1.0],
            realizations: 100,
        }
    }
}

impl BoundConfig {
    pub fn total_paths(&self) -> usize {
        self.paths_per_user.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        if self.paths_per_user.len() != self.k_a {
            return Err(Error::dim("bound paths_per_user", self.k_a, self.paths_per_user.len()));
        }
        if self.n == 0 {
            return Err(Error::Domain("bound needs n >= 1".into()));
        }
        if !(self.power >= 0.0 && self.p_prime >= 0.0 && self.sigma2 >= 0.0) {
            return Err(Error::Domain("bound powers must be >= 0".into()));
        }
        if self.rho.iter().any(|r| !(0.0..=1.0).contains(r)) || self.rho.is_empty() {
            return Err(Error::Domain("rho options must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    pub p_coll: f64,
    pub p_cons: f64,
    pub p_mis: f64,
    pub eps: f64,
}

/// `min(1, C(K_a, 2) / 2^B)`
pub fn p_coll(k_a: usize, bits: u32) -> f64 {
    if k_a < 2 {
        return 0.0;
    }
    let pairs = (k_a as f64) * (k_a as f64 - 1.0) / 2.0;
    (pairs * 0.5f64.powi(bits.min(i32::MAX as u32) as i32)).min(1.0)
}

/// `min(1, K_a · P[χ²_{2n} > 2nP/P′])`, and 0 when `P′ = 0`.
pub fn p_cons(k_a: usize, n: usize, power: f64, p_prime: f64) -> Result<f64> {
    if p_prime == 0.0 || k_a == 0 {
        return Ok(0.0);
    }
    if n == 0 {
        return Err(Error::Domain("p_cons needs n >= 1".into()));
    }
    let tail = chi2_sf(2.0 * n as f64 * power / p_prime, 2 * n as u64)?;
    Ok((k_a as f64 * tail).min(1.0))
}

/// Closed form of `E[exp(aᴴBa + Re(r a))]` for `a ~ CN(0, A)`:
/// `|I − AB|⁻¹ exp(¼ r D rᴴ)` with `D = (A⁻¹ − B)⁻¹`.
///
/// `r` holds the entries of the row vector. The expectation exists only when
/// `A⁻¹ − B ≻ 0`; otherwise a domain error is returned.
pub fn lemma1_rhs(a: &ComplexMatrix, b: &ComplexMatrix, r: &ComplexVector) -> Result<f64> {
    let k = a.nrows();
    if a.ncols() != k || b.shape() != (k, k) {
        return Err(Error::dim("mgf matrices", format!("{k}x{k}"), format!("{:?}", b.shape())));
    }
    if r.len() != k {
        return Err(Error::dim("mgf r", k, r.len()));
    }
    let l = Cholesky::new(hermitian_part(a))
        .ok_or_else(|| Error::Domain("covariance A is not positive definite".into()))?
        .l();
    let inner = ComplexMatrix::identity(k, k) - l.adjoint() * hermitian_part(b) * &l;
    let chol = Cholesky::new(inner).ok_or_else(|| Error::Domain("I − AB is not positive definite".into()))?;
    let det: f64 = chol.l_dirty().diagonal().iter().map(|x| x.re * x.re).product();
    let lr = l.adjoint() * r.conjugate();
    let quad = lr.dotc(&chol.solve(&lr)).re;
    Ok((0.25 * quad).exp() / det)
}

/// The QPSK point `ū` maximizing `Re(u μ*)`.
pub fn qpsk_argmax(mu: C64) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let sign = |x: f64| if x < 0.0 { -s } else { s };
    c64(sign(mu.re), sign(mu.im))
}

/// Upper end `λ₀ = 2/√(σ_max σ_z² + δ² σ_max²)` of the admissible λ range;
/// infinite when every eigenvalue is zero.
pub fn lambda_max(delta2: f64, sigma_g: &[f64], sigma2: f64) -> f64 {
    let s = sigma_g.iter().cloned().fold(0.0, f64::max);
    let q = s * sigma2 + delta2 * s * s;
    if q <= 0.0 {
        f64::INFINITY
    } else {
        2.0 / q.sqrt()
    }
}

/// `ln ε_{λ,k,i} = −n Σ_j ln(1 + c₁σ_j + c₂σ_j²)`. A non-positive factor
/// makes the bound vacuous and yields `+∞`.
pub fn ln_eps_lambda(lambda: f64, delta2: f64, mu: C64, sigma_g: &[f64], n: usize, sigma2: f64) -> Result<f64> {
    let l0 = lambda_max(delta2, sigma_g, sigma2);
    if !(lambda >= 0.0) || lambda >= l0 {
        return Err(Error::Domain(format!("lambda {lambda} outside [0, {l0})")));
    }
    let u = qpsk_argmax(mu);
    let s1 = lambda * (u * mu.conj()).re;
    let s2 = -0.5 * lambda * lambda;
    let c1 = s2 * sigma2 + s1;
    let c2 = s2 * delta2 - 0.25 * s1 * s1;
    let mut sum = 0.0;
    for &s in sigma_g {
        let x = c1 * s + c2 * s * s;
        if x <= -1.0 {
            return Ok(f64::INFINITY);
        }
        sum += x.ln_1p();
    }
    Ok(-(n as f64) * sum)
}

pub fn eps_lambda(lambda: f64, delta2: f64, mu: C64, sigma_g: &[f64], n: usize, sigma2: f64) -> Result<f64> {
    ln_eps_lambda(lambda, delta2, mu, sigma_g, n, sigma2).map(f64::exp)
}

/// Smallest `ln ε` over `points` log-spaced λ in `(0, 0.999 λ₀)`, with the
/// minimizing λ.
pub fn optimize_lambda(delta2: f64, mu: C64, sigma_g: &[f64], n: usize, sigma2: f64, points: usize) -> (f64, f64) {
    let l0 = lambda_max(delta2, sigma_g, sigma2);
    if !l0.is_finite() {
        return (0.0, 0.0);
    }
    let hi = 0.999 * l0;
    let mut best = (f64::INFINITY, 0.0);
    for lam in logspace(hi * 1e-6, hi, points.max(1)) {
        let v = ln_eps_lambda(lam, delta2, mu, sigma_g, n, sigma2).unwrap_or(f64::INFINITY);
        if v < best.0 {
            best = (v, lam);
        }
    }
    // λ = 0 is always admissible and gives ε = 1.
    if best.0 > 0.0 {
        best = (0.0, 0.0);
    }
    best
}

/// The worst undetected set for iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCandidate {
    /// 1-based index into the ascending gain list.
    pub index: usize,
    pub delta2: f64,
    pub lambda: f64,
    pub ln_eps: f64,
}

/// Among the windows `L_k = {i−|L_k|+1, …, i}` of the ascending gains, the
/// one whose optimized `ε` is largest.
pub fn worst_candidate(k: usize, gains: &[C64], sigma_g: &[f64], cfg: &BoundConfig) -> Result<WorstCandidate> {
    let lt = gains.len();
    if k == 0 || k > lt {
        return Err(Error::Domain(format!("iteration {k} outside 1..={lt}")));
    }
    let size = lt - k + 1;
    let mut worst: Option<WorstCandidate> = None;
    for i in size..=lt {
        let delta2: f64 = gains[i - size..i].iter().map(|g| g.norm_sqr()).sum();
        let (ln_eps, lambda) = optimize_lambda(delta2, gains[i - 1], sigma_g, cfg.n, cfg.sigma2, cfg.lambda_points);
        if worst.is_none_or(|w| ln_eps > w.ln_eps) {
            worst = Some(WorstCandidate { index: i, delta2, lambda, ln_eps });
        }
    }
    Ok(worst.unwrap())
}

/// `P_stop,k = min_{λ, ρ} exp(ρ((2+B) ln 2 + ln N + ln ε))` at the worst
/// candidate, clipped to `[0, 1]`. `gains` must be sorted by ascending modulus.
pub fn pstop_bound(k: usize, gains: &[C64], sigma_g: &[f64], cfg: &BoundConfig) -> Result<f64> {
    let worst = worst_candidate(k, gains, sigma_g, cfg)?;
    let log_count = (2.0 + cfg.bits as f64) * std::f64::consts::LN_2 + (cfg.channel.ris.len() as f64).ln();
    let exponent = log_count + worst.ln_eps;
    let best = cfg
        .rho
        .iter()
        .map(|&rho| if rho == 0.0 { 1.0 } else { (rho * exponent).exp() })
        .fold(f64::INFINITY, f64::min);
    Ok(best.clamp(0.0, 1.0))
}

/// `K_k` for `k = 1..=L_T`: users whose every path is among the first `k−1`
/// detections. `detected_users[j]` is the owner of the `j`th detected scatterer.
pub fn covered_users(detected_users: &[usize], paths_per_user: &[usize]) -> Vec<usize> {
    let mut seen = vec![0usize; paths_per_user.len()];
    let mut full = paths_per_user.iter().filter(|&&p| p == 0).count();
    let mut out = Vec::with_capacity(detected_users.len());
    for &u in detected_users {
        out.push(full);
        seen[u] += 1;
        if seen[u] == paths_per_user[u] {
            full += 1;
        }
    }
    out
}

/// `Σ_k (1 − K_k/K_a) P_stop,k Π_{l<k} (1 − P_stop,l)`.
pub fn pmis_from_stops(p_stop: &[f64], covered: &[usize], k_a: usize) -> f64 {
    if k_a == 0 {
        return 0.0;
    }
    let mut survive = 1.0;
    let mut total = 0.0;
    for (p, &kk) in p_stop.iter().zip(covered) {
        total += (1.0 - kk as f64 / k_a as f64) * p * survive;
        survive *= 1.0 - p;
    }
    total.clamp(0.0, 1.0)
}

/// Eigenvalues of `P′ G Gᴴ`, negatives from rounding clamped to zero.
pub fn gram_eigenvalues(g: &ComplexMatrix, p_prime: f64) -> Result<Vec<f64>> {
    let gram = g * g.adjoint() * c64(p_prime, 0.0);
    let (vals, _) = hermitian_evd(&hermitian_part(&gram))?;
    Ok(vals.iter().map(|v| v.max(0.0)).collect())
}

/// `p_mis` for one draw of `G` and the user-RIS path gains.
pub fn pmis_realization<R: Rng + ?Sized>(cfg: &BoundConfig, rng: &mut R) -> Result<f64> {
    let g = cfg.channel.realize(0, rng).g;
    let sigma_g = gram_eigenvalues(&g, cfg.p_prime)?;
    let link = &cfg.channel.user_ris;
    let mut labelled: Vec<(C64, usize)> = Vec::with_capacity(cfg.total_paths());
    for (user, &count) in cfg.paths_per_user.iter().enumerate() {
        for p in sample_paths(count, link.distance, &[0.0], &[0.0], link.l0, link.alpha, rng) {
            labelled.push((p.gain, user));
        }
    }
    if labelled.is_empty() {
        return Ok(0.0);
    }
    labelled.sort_by(|a, b| a.0.norm_sqr().total_cmp(&b.0.norm_sqr()));
    let gains: Vec<C64> = labelled.iter().map(|x| x.0).collect();
    // The search picks up the strongest scatterers first.
    let order: Vec<usize> = labelled.iter().rev().map(|x| x.1).collect();
    let covered = covered_users(&order, &cfg.paths_per_user);
    let stops = (1..=gains.len())
        .map(|k| pstop_bound(k, &gains, &sigma_g, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(pmis_from_stops(&stops, &covered, cfg.k_a))
}

/// Monte-Carlo average of [`pmis_realization`]; realization `j` draws from
/// stream `j` of a seed taken from `rng`.
pub fn pmis_mc<R: Rng + ?Sized>(cfg: &BoundConfig, rng: &mut R) -> Result<f64> {
    cfg.validate()?;
    if cfg.realizations == 0 {
        return Err(Error::Domain("bound needs at least one realization".into()));
    }
    let seed: u64 = rng.random();
    let values = (0..cfg.realizations as u64)
        .into_par_iter()
        .map(|j| pmis_realization(cfg, &mut stream_rng(seed, j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn pupe_bound<R: Rng + ?Sized>(cfg: &BoundConfig, rng: &mut R) -> Result<BoundResult> {
    let p_coll = p_coll(cfg.k_a, cfg.bits);
    let p_cons = p_cons(cfg.k_a, cfg.n, cfg.power, cfg.p_prime)?;
    let p_mis = pmis_mc(cfg, rng)?;
    Ok(BoundResult { p_coll, p_cons, p_mis, eps: (p_coll + p_cons + p_mis).min(1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub power: f64,
    pub result: BoundResult,
}

/// Evaluates the bound at each power with `P′ = ratio · P`. Every point reuses
/// `seed`, so the sweep sees identical gain realizations.
pub fn bound_sweep(cfg: &BoundConfig, powers: &[f64], ratio: f64, seed: u64) -> Result<Vec<BoundRow>> {
    powers
        .iter()
        .map(|&power| {
            let point = BoundConfig { power, p_prime: ratio * power, ..cfg.clone() };
            let result = pupe_bound(&point, &mut stream_rng(seed, 0))?;
            Ok(BoundRow { power, result })
        })
        .collect()
}

/// CSV header: `power,p_coll,p_cons,p_mis,eps`.
pub fn write_bound_csv<W: Write>(rows: &[BoundRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["power", "p_coll", "p_cons", "p_mis", "eps"])?;
    for r in rows {
        let b = r.result;
        w.write_record([r.power, b.p_coll, b.p_cons, b.p_mis, b.eps].map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    Ok(())
}
