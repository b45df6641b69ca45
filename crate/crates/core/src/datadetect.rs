//! MMSE soft estimation, LLRs, list decoding and successive interference
//! cancellation over one data slot.

use rayon::prelude::*;

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::jdce::ChannelEstimates;
use crate::numerics::{hpd_inverse, norm_sq, vectorize, ComplexMatrix, ComplexVector, C64};
use crate::transmitter::{data_signature, index_to_bits, Codebooks};

/// `T_i = √P_c (G diag(ĥ) W_cs diag(b) + d̂ b)`, an `M × n_s` matrix.
pub fn build_ti(
    h: &ComplexVector,
    d: Option<&ComplexVector>,
    b: &ComplexVector,
    w_cs: &ComplexMatrix,
    p_c: f64,
    g: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    data_signature(h, d, b, w_cs, p_c, g)
}

/// MMSE estimates for a block of received vectors (columns of `y`):
/// `V̂ = (T̄ᴴT̄ + σ²I)⁻¹T̄ᴴY` and `δ = diag(σ²(T̄ᴴT̄ + σ²I)⁻¹)`.
pub fn mmse_detect_block(y: &ComplexMatrix, t: &ComplexMatrix, sigma2: f64) -> Result<(ComplexMatrix, Vec<f64>)> {
    if t.ncols() == 0 {
        return Err(Error::Domain("MMSE detection needs at least one signature".into()));
    }
    if y.nrows() != t.nrows() {
        return Err(Error::dim("mmse_detect rows", t.nrows(), y.nrows()));
    }
    let k = t.ncols();
    let gram = t.adjoint() * t + ComplexMatrix::identity(k, k) * C64::from(sigma2);
    let inv = hpd_inverse(&gram)?;
    let v = &inv * (t.adjoint() * y);
    let delta = (0..k).map(|i| sigma2 * inv[(i, i)].re).collect();
    Ok((v, delta))
}

/// Single received vector version of [`mmse_detect_block`].
pub fn mmse_detect(y: &ComplexVector, t: &ComplexMatrix, sigma2: f64) -> Result<(ComplexVector, Vec<f64>)> {
    let (v, delta) = mmse_detect_block(&ComplexMatrix::from_column_slice(y.len(), 1, y.as_slice()), t, sigma2)?;
    Ok((v.column(0).into_owned(), delta))
}

/// `2·Re(v̂)/δ`.
pub fn llr_compute(v: C64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("LLR needs positive error variance, got {delta}")));
    }
    Ok(2.0 * v.re / delta)
}

/// `Y ← Y − t v̄ᵀ` over a whole slot (`t = vec(T_i)`, one column per symbol).
pub fn sic_remove(y: &mut ComplexMatrix, t: &ComplexVector, symbols: &[f64]) -> Result<()> {
    if t.len() != y.nrows() || symbols.len() != y.ncols() {
        return Err(Error::dim("sic_remove", format!("{}x{}", t.len(), symbols.len()), format!("{:?}", y.shape())));
    }
    for (f, &s) in symbols.iter().enumerate() {
        y.column_mut(f).axpy(C64::from(-s), t, C64::from(1.0));
    }
    Ok(())
}

/// A pending user in the SIC loop.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub pilot: usize,
    /// `vec(T_i)`, length `M·n_s`.
    pub signature: ComplexVector,
}

/// One candidate per pilot in `estimates`, in ascending pilot order.
pub fn candidates_from_estimates(
    estimates: &ChannelEstimates,
    codebooks: &Codebooks,
    g: &ComplexMatrix,
    w_cs: &ComplexMatrix,
    p_c: f64,
    use_direct: bool,
) -> Result<Vec<Candidate>> {
    estimates
        .iter()
        .map(|(&pilot, est)| {
            let d = (use_direct && est.has_direct()).then_some(&est.d);
            let t = build_ti(&est.h, d, &codebooks.preamble(pilot), w_cs, p_c, g)?;
            Ok(Candidate {
                pilot,
                signature: vectorize(&t),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMessage {
    pub pilot: usize,
    /// Pilot bits followed by data bits.
    pub message: Vec<u8>,
    /// SIC iteration (1-based) in which the user was decoded.
    pub iteration: usize,
}

#[derive(Debug, Clone, Default)]
pub struct DataPhaseOutput {
    pub decoded: Vec<DecodedMessage>,
    /// Iterations run, including the last one that decoded nobody.
    pub iterations: usize,
}

/// Iterates MMSE → LLR → list decoding over the pending users, cancels every
/// user that passes CRC and stops once an iteration decodes nobody. A data
/// payload is accepted once per slot, from the strongest signature decoding it.
///
/// `y` is the `(M·n_s) × n_d` slot matrix whose column `f` is `vec(Y_{c,f})`.
pub fn data_phase(
    y: &ComplexMatrix,
    candidates: &[Candidate],
    codec: &Codec,
    pilot_bits: usize,
    sigma2: f64,
) -> Result<DataPhaseOutput> {
    let mut out = DataPhaseOutput::default();
    let mut residual = y.clone();
    let mut pending: Vec<&Candidate> = candidates.iter().collect();
    for c in &pending {
        if c.signature.len() != y.nrows() {
            return Err(Error::dim("candidate signature", y.nrows(), c.signature.len()));
        }
    }
    while !pending.is_empty() {
        out.iterations += 1;
        let cols: Vec<ComplexVector> = pending.iter().map(|c| c.signature.clone()).collect();
        let t = ComplexMatrix::from_columns(&cols);
        let (v, delta) = mmse_detect_block(&residual, &t, sigma2)?;
        let results: Vec<Option<Vec<u8>>> = (0..pending.len())
            .into_par_iter()
            .map(|i| {
                let llr = v
                    .row(i)
                    .iter()
                    .map(|&z| llr_compute(z, delta[i]))
                    .collect::<Result<Vec<f64>>>()?;
                codec.decode(&llr)
            })
            .collect::<Result<_>>()?;

        let mut still = Vec::new();
        let mut hits = Vec::new();
        for (cand, res) in pending.into_iter().zip(results) {
            match res {
                Some(data) => hits.push((cand, data)),
                None => still.push(cand),
            }
        }
        hits.sort_by(|a, b| norm_sq(&b.0.signature).total_cmp(&norm_sq(&a.0.signature)));
        let progress = !hits.is_empty();
        for (cand, data) in hits {
            if out.decoded.iter().any(|d| d.message[pilot_bits..] == data[..]) {
                continue;
            }
            let symbols = codec.modulate(&data)?;
            sic_remove(&mut residual, &cand.signature, &symbols)?;
            let mut message = index_to_bits(cand.pilot, pilot_bits);
            message.extend_from_slice(&data);
            out.decoded.push(DecodedMessage {
                pilot: cand.pilot,
                message,
                iteration: out.iterations,
            });
        }
        pending = still;
        if !progress {
            break;
        }
    }
    Ok(out)
}
