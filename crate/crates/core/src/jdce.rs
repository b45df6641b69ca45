//! Joint pilot detection and channel estimation over the pilot part of a
//! slot: energy-detect a pilot, search the angle grid for its strongest
//! path, re-estimate every detected gain by least squares and cancel.
//!
//! Detected gains are reported on the physical path-gain scale, so the
//! channel estimate is `ĥ = Σ μ̂·√N·ā_N` (and `d̂ = Σ μ̂·√M·ā_M`).

use std::collections::BTreeMap;
use std::io::Write;

use crate::channel::{Direction, Upa};
use crate::error::{Error, Result};
use crate::numerics::{ls_solve, norm_sq, scale_columns, vectorize, ComplexMatrix, ComplexVector, C64};
use crate::transmitter::cascade;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkKind {
    /// User-RIS-BS path; angles on the RIS grid.
    Cascaded,
    /// User-BS path; angles on the BS grid.
    Direct,
}

impl LinkKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkKind::Cascaded => "cascaded",
            LinkKind::Direct => "direct",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub pilot: usize,
    pub kind: LinkKind,
    /// `(i₁, i₂)` indices into the two angle grids.
    pub grid_index: (usize, usize),
    pub angles: Direction,
    pub gain: C64,
}

impl Detection {
    fn key(&self) -> (usize, LinkKind, (usize, usize)) {
        (self.pilot, self.kind, self.grid_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimate {
    /// `ĥ`, length `N`.
    pub h: ComplexVector,
    /// `d̂`, length `M`; zero when no direct path was detected.
    pub d: ComplexVector,
}

impl PilotEstimate {
    pub fn has_direct(&self) -> bool {
        self.d.iter().any(|z| *z != C64::new(0.0, 0.0))
    }
}

pub type ChannelEstimates = BTreeMap<usize, PilotEstimate>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JdceConfig {
    pub bs: Upa,
    pub ris: Upa,
    pub p_p: f64,
    pub sigma2: f64,
    pub alpha1: f64,
    pub t_max: usize,
}

impl JdceConfig {
    /// Iteration cap `⌈4·K_a·L̄/S⌉`, at least 1.
    pub fn iteration_cap(active_users: usize, mean_paths: f64, slots: usize) -> usize {
        ((4.0 * active_users as f64 * mean_paths / slots.max(1) as f64).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub pilot: usize,
    pub kind: LinkKind,
    pub l: f64,
    pub q: f64,
    pub residual_energy: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct JdceOutput {
    pub detections: Vec<Detection>,
    pub estimates: ChannelEstimates,
    pub trace: Vec<TraceRow>,
}

/// Unit-norm steering vectors of every grid direction as columns, `φ̄`-major.
pub fn steering_matrix(array: &Upa) -> ComplexMatrix {
    let dirs = array.grid();
    let cols: Vec<ComplexVector> = dirs.iter().map(|&d| array.steering(d)).collect();
    ComplexMatrix::from_columns(&cols)
}

fn grid_direction(array: &Upa, idx: usize) -> ((usize, usize), Direction) {
    let (i1, i2) = (idx / array.n2, idx % array.n2);
    (
        (i1, i2),
        Direction::new(-1.0 + 2.0 * i1 as f64 / array.n1 as f64, -1.0 + 2.0 * i2 as f64 / array.n2 as f64),
    )
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Energy-detector values `tr(Q_k R Q_kᴴ)/tr(Q_k Q_kᴴ)` for every pilot,
/// with `Q_k = W diag(p̄_k)` and `R = Yᴴ Y`.
///
/// Uses `tr(Q R Qᴴ) = Σ_ab p_a R_ab p̄_b (WᴴW)_ba`.
pub fn pilot_metrics(y: &ComplexMatrix, pilots: &ComplexMatrix, w: &ComplexMatrix) -> Vec<f64> {
    let r = y.adjoint() * y;
    let whw = w.adjoint() * w;
    let a = r.component_mul(&whw.transpose());
    let x = &a * pilots.adjoint();
    (0..pilots.nrows())
        .map(|k| {
            let mut num = C64::new(0.0, 0.0);
            let mut den = 0.0;
            for j in 0..pilots.ncols() {
                let p = pilots[(k, j)];
                num += p * x[(j, k)];
                den += p.norm_sqr() * whw[(j, j)].re;
            }
            if den > 0.0 {
                num.re / den
            } else {
                0.0
            }
        })
        .collect()
}

/// Direct-link detector values `p̄_k R p̄_kᴴ/‖p̄_k‖² = ‖Y p̄_kᴴ‖²/‖p̄_k‖²`.
pub fn direct_pilot_metrics(y: &ComplexMatrix, pilots: &ComplexMatrix) -> Vec<f64> {
    let yp = y * pilots.adjoint();
    (0..pilots.nrows())
        .map(|k| {
            let den: f64 = pilots.row(k).iter().map(|z| z.norm_sqr()).sum();
            let num: f64 = yp.column(k).iter().map(|z| z.norm_sqr()).sum();
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect()
}

/// Smallest index attaining the largest energy-detector value.
pub fn detect_pilot(y: &ComplexMatrix, pilots: &ComplexMatrix, w: &ComplexMatrix) -> (usize, f64) {
    argmax(&pilot_metrics(y, pilots, w))
}

/// Path-detector values `‖F Yᴴ‖²/‖F‖²` with `F = G diag(ā) W diag(p̄)` for
/// every column `ā` of `steering`.
pub fn path_metrics(
    y: &ComplexMatrix,
    g: &ComplexMatrix,
    w: &ComplexMatrix,
    pilot: &ComplexVector,
    steering: &ComplexMatrix,
) -> Vec<f64> {
    let ghg = g.adjoint() * g;
    let wp = scale_columns(w, pilot.as_slice());
    let x = &wp * y.adjoint();
    let num_kernel = ghg.component_mul(&(&x * x.adjoint()).transpose());
    let den_kernel = ghg.component_mul(&(&wp * wp.adjoint()).transpose());
    let num = quadratic_forms(&num_kernel, steering);
    let den = quadratic_forms(&den_kernel, steering);
    num.iter()
        .zip(&den)
        .map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 })
        .collect()
}

/// `aᴴ K a` for every column `a` of `s`.
fn quadratic_forms(k: &ComplexMatrix, s: &ComplexMatrix) -> Vec<f64> {
    let ks = k * s;
    (0..s.ncols())
        .map(|c| s.column(c).iter().zip(ks.column(c).iter()).map(|(a, b)| (a.conj() * b).re).sum())
        .collect()
}

/// Strongest cascaded path of `pilot` on the RIS grid; ties go to the
/// lexicographically smallest `(l, q)`.
pub fn detect_path(
    y: &ComplexMatrix,
    g: &ComplexMatrix,
    w: &ComplexMatrix,
    pilot: &ComplexVector,
    ris: &Upa,
) -> ((usize, usize), Direction, f64) {
    let (idx, v) = argmax(&path_metrics(y, g, w, pilot, &steering_matrix(ris)));
    let (gi, dir) = grid_direction(ris, idx);
    (gi, dir, v)
}

/// Direct-path detector values `|āᴴ Y p̄ᴴ|²` on the BS grid.
pub fn direct_path_metrics(y: &ComplexMatrix, pilot: &ComplexVector, steering: &ComplexMatrix) -> Vec<f64> {
    let yp = y * pilot.map(|z| z.conj());
    let proj = steering.adjoint() * yp;
    proj.iter().map(|z| z.norm_sqr()).collect()
}

/// Noise-free `M × n_p` contribution of a unit-gain detection (`√P_p` included).
pub fn signature(
    kind: LinkKind,
    steering: &ComplexVector,
    g: &ComplexMatrix,
    w: &ComplexMatrix,
    pilot: &ComplexVector,
    p_p: f64,
) -> ComplexMatrix {
    let s = match kind {
        LinkKind::Cascaded => scale_columns(&cascade(g, steering, w), pilot.as_slice()),
        LinkKind::Direct => steering * pilot.transpose(),
    };
    s * C64::from(p_p.sqrt())
}

/// Joint LS re-estimation of all gains `m̂ = (ŪᴴŪ)⁻¹Ūᴴy₁` and the residual
/// `y₁ − Ū m̂`.
pub fn sic_update(y1: &ComplexVector, u: &ComplexMatrix) -> Result<(ComplexVector, ComplexVector)> {
    if u.ncols() == 0 {
        return Ok((ComplexVector::zeros(0), y1.clone()));
    }
    if u.nrows() != y1.len() {
        return Err(Error::dim("sic_update", u.nrows(), y1.len()));
    }
    let m = ls_solve(u, y1)?;
    let residual = y1 - u * &m;
    Ok((m, residual))
}

/// Per-pilot sums `ĥ = Σ μ̂√N ā_N` and `d̂ = Σ μ̂√M ā_M`.
pub fn assemble_estimates(detections: &[Detection], ris: &Upa, bs: &Upa) -> ChannelEstimates {
    let mut out = ChannelEstimates::new();
    for det in detections {
        let e = out.entry(det.pilot).or_insert_with(|| PilotEstimate {
            h: ComplexVector::zeros(ris.len()),
            d: ComplexVector::zeros(bs.len()),
        });
        match det.kind {
            LinkKind::Cascaded => e.h += ris.steering(det.angles) * (det.gain * (ris.len() as f64).sqrt()),
            LinkKind::Direct => e.d += bs.steering(det.angles) * (det.gain * (bs.len() as f64).sqrt()),
        }
    }
    out
}

struct Search<'a> {
    y1: ComplexVector,
    pilots: &'a ComplexMatrix,
    w: &'a ComplexMatrix,
    g: &'a ComplexMatrix,
    cfg: &'a JdceConfig,
    ris_steering: ComplexMatrix,
    bs_steering: Option<ComplexMatrix>,
}

impl Search<'_> {
    fn run(&self) -> Result<JdceOutput> {
        let (m, n_p) = (self.g.nrows(), self.w.ncols());
        let noise_energy = m as f64 * n_p as f64 * self.cfg.sigma2;
        let initial = norm_sq(&self.y1);

        let mut detections: Vec<Detection> = Vec::new();
        let mut columns: Vec<ComplexVector> = Vec::new();
        let mut gains = ComplexVector::zeros(0);
        let mut residual = self.y1.clone();
        let mut trace = Vec::new();

        for iteration in 1..=self.cfg.t_max {
            let energy = norm_sq(&residual);
            if initial == 0.0 || energy <= 1e-24 * initial {
                break;
            }
            let y = ComplexMatrix::from_column_slice(m, n_p, residual.as_slice());
            let mut det = self.next_detection(&y);
            if detections.iter().any(|d| d.key() == det.key()) {
                trace.push(self.trace_row(iteration, &det, energy, false));
                break;
            }
            let p = self.pilots.row(det.pilot).transpose();
            let steer = match det.kind {
                LinkKind::Cascaded => self.cfg.ris.steering(det.angles),
                LinkKind::Direct => self.cfg.bs.steering(det.angles),
            };
            columns.push(vectorize(&signature(det.kind, &steer, self.g, self.w, &p, self.cfg.p_p)));
            let u = ComplexMatrix::from_columns(&columns);
            let (new_gains, new_residual) = match sic_update(&self.y1, &u) {
                Ok(v) => v,
                Err(Error::Singular(_)) => {
                    columns.pop();
                    trace.push(self.trace_row(iteration, &det, energy, false));
                    break;
                }
                Err(e) => return Err(e),
            };
            let new_energy = norm_sq(&new_residual);
            debug_assert!(new_energy <= energy * (1.0 + 1e-9) + 1e-300);
            let stalled = if noise_energy > 0.0 {
                (energy - new_energy) / noise_energy <= self.cfg.alpha1
            } else {
                energy - new_energy <= 1e-12 * initial
            };
            if stalled {
                columns.pop();
                trace.push(self.trace_row(iteration, &det, new_energy, false));
                break;
            }
            det.gain = new_gains[new_gains.len() - 1];
            trace.push(self.trace_row(iteration, &det, new_energy, true));
            detections.push(det);
            gains = new_gains;
            residual = new_residual;
        }

        for (det, m_hat) in detections.iter_mut().zip(gains.iter()) {
            let array = match det.kind {
                LinkKind::Cascaded => &self.cfg.ris,
                LinkKind::Direct => &self.cfg.bs,
            };
            det.gain = m_hat / (array.len() as f64).sqrt();
        }
        let estimates = assemble_estimates(&detections, &self.cfg.ris, &self.cfg.bs);
        Ok(JdceOutput {
            detections,
            estimates,
            trace,
        })
    }

    fn next_detection(&self, y: &ComplexMatrix) -> Detection {
        let (k1, v1) = argmax(&pilot_metrics(y, self.pilots, self.w));
        let direct = self.bs_steering.as_ref().and_then(|s| {
            let (k2, v2) = argmax(&direct_pilot_metrics(y, self.pilots));
            (v2 > v1).then_some((k2, s))
        });
        match direct {
            None => {
                let p = self.pilots.row(k1).transpose();
                let (idx, _) = argmax(&path_metrics(y, self.g, self.w, &p, &self.ris_steering));
                let (grid_index, angles) = grid_direction(&self.cfg.ris, idx);
                Detection {
                    pilot: k1,
                    kind: LinkKind::Cascaded,
                    grid_index,
                    angles,
                    gain: C64::new(0.0, 0.0),
                }
            }
            Some((k2, steering)) => {
                let p = self.pilots.row(k2).transpose();
                let (idx, _) = argmax(&direct_path_metrics(y, &p, steering));
                let (grid_index, angles) = grid_direction(&self.cfg.bs, idx);
                Detection {
                    pilot: k2,
                    kind: LinkKind::Direct,
                    grid_index,
                    angles,
                    gain: C64::new(0.0, 0.0),
                }
            }
        }
    }

    fn trace_row(&self, iteration: usize, det: &Detection, residual_energy: f64, accepted: bool) -> TraceRow {
        TraceRow {
            iteration,
            pilot: det.pilot,
            kind: det.kind,
            l: det.angles.phi,
            q: det.angles.psi,
            residual_energy,
            accepted,
        }
    }
}

fn check_inputs(y_p: &ComplexMatrix, pilots: &ComplexMatrix, w: &ComplexMatrix, g: &ComplexMatrix, cfg: &JdceConfig) -> Result<()> {
    if y_p.shape() != (g.nrows(), w.ncols()) {
        return Err(Error::dim("pilot block", format!("{}×{}", g.nrows(), w.ncols()), format!("{:?}", y_p.shape())));
    }
    if pilots.ncols() != w.ncols() {
        return Err(Error::dim("pilot length", w.ncols(), pilots.ncols()));
    }
    if g.ncols() != w.nrows() || g.ncols() != cfg.ris.len() || g.nrows() != cfg.bs.len() {
        return Err(Error::dim("RIS-BS matrix", format!("{}×{}", cfg.bs.len(), cfg.ris.len()), format!("{:?}", g.shape())));
    }
    Ok(())
}

/// JDCE for a slot with blocked user-BS links.
pub fn jdce_run(
    y_p: &ComplexMatrix,
    pilots: &ComplexMatrix,
    w_ps: &ComplexMatrix,
    g: &ComplexMatrix,
    cfg: &JdceConfig,
) -> Result<JdceOutput> {
    check_inputs(y_p, pilots, w_ps, g, cfg)?;
    Search {
        y1: vectorize(y_p),
        pilots,
        w: w_ps,
        g,
        cfg,
        ris_steering: steering_matrix(&cfg.ris),
        bs_steering: None,
    }
    .run()
}

/// JDCE that also detects direct user-BS paths. Each iteration compares the
/// best cascaded and best direct energy-detector values and follows the
/// larger one.
pub fn jdce_run_direct(
    y_p: &ComplexMatrix,
    pilots: &ComplexMatrix,
    w_ps: &ComplexMatrix,
    g: &ComplexMatrix,
    cfg: &JdceConfig,
) -> Result<JdceOutput> {
    check_inputs(y_p, pilots, w_ps, g, cfg)?;
    Search {
        y1: vectorize(y_p),
        pilots,
        w: w_ps,
        g,
        cfg,
        ris_steering: steering_matrix(&cfg.ris),
        bs_steering: Some(steering_matrix(&cfg.bs)),
    }
    .run()
}

/// CSV trace: `iteration,pilot,kind,l,q,residual_energy,accepted`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "pilot", "kind", "l", "q", "residual_energy", "accepted"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.pilot.to_string(),
            r.kind.as_str().to_string(),
            r.l.to_string(),
            r.q.to_string(),
            format!("{:e}", r.residual_energy),
            r.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Normalized squared error `‖x̂ − x‖²/‖x‖²`.
pub fn nmse(estimate: &ComplexVector, truth: &ComplexVector) -> f64 {
    norm_sq(&(estimate - truth)) / norm_sq(truth)
}
