//! Codebooks, per-user encoding and synthesis of the received pilot and
//! data signals of one slot.
//!
//! A data slot is stored as an `(M·n_s) × n_d` matrix whose column `f` is
//! `vec(Y_{c,f})`.

use rand::Rng;

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::numerics::{cn_matrix, scale_columns, vectorize, ComplexMatrix, ComplexVector, C64};

/// Shared codebooks of one frame.
#[derive(Debug, Clone)]
pub struct Codebooks {
    /// `2^{B_p} × n_s` preambles, every row with squared norm `n_s`.
    pub preambles: ComplexMatrix,
    /// `2^{B_p} × n_p` pilots, every row with squared norm `n_p`.
    pub pilots: ComplexMatrix,
    /// One unit-modulus `N × n_p` pilot-part RIS matrix per slot.
    pub pilot_phases: Vec<ComplexMatrix>,
}

impl Codebooks {
    pub fn num_pilots(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn pilot(&self, k: usize) -> ComplexVector {
        self.pilots.row(k).transpose()
    }

    pub fn preamble(&self, k: usize) -> ComplexVector {
        self.preambles.row(k).transpose()
    }
}

fn normalize_rows(m: &mut ComplexMatrix, energy: f64) {
    for mut row in m.row_iter_mut() {
        let e: f64 = row.iter().map(|z| z.norm_sqr()).sum();
        if e > 0.0 {
            row *= C64::from((energy / e).sqrt());
        }
    }
}

/// Draws `B`, `P` and the `W_ps` matrices from `CN(0,1)` and rescales them.
///
/// With unit-modulus `W_ps`, `‖W_ps diag(p)‖²_F = N‖p‖²`, so equal
/// per-pilot energies and an average of `n_p` both reduce to `‖p‖² = n_p`
/// for every row, with or without a direct link.
pub fn gen_codebooks<R: Rng + ?Sized>(
    pilot_bits: usize,
    n_s: usize,
    n_p: usize,
    ris_elements: usize,
    slots: usize,
    rng: &mut R,
) -> Codebooks {
    let rows = 1usize << pilot_bits;
    let mut preambles = cn_matrix(rows, n_s, 1.0, rng);
    normalize_rows(&mut preambles, n_s as f64);
    let mut pilots = cn_matrix(rows, n_p, 1.0, rng);
    normalize_rows(&mut pilots, n_p as f64);
    let pilot_phases = (0..slots)
        .map(|_| cn_matrix(ris_elements, n_p, 1.0, rng).map(|z| z / z.norm()))
        .collect();
    Codebooks {
        preambles,
        pilots,
        pilot_phases,
    }
}

/// Random unit-modulus `N × n` matrix.
pub fn random_phases<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTransmission {
    /// All `B_p + B_c` message bits, pilot part first.
    pub message: Vec<u8>,
    /// 0-based slot index.
    pub slot: usize,
    pub pilot: usize,
    pub preamble: ComplexVector,
    /// BPSK codeword `v`, length `n_d`.
    pub symbols: Vec<f64>,
}

impl UserTransmission {
    /// `c = v ⊗ b`
    pub fn spread(&self) -> ComplexVector {
        spread(&self.symbols, &self.preamble)
    }

    pub fn data_bits(&self, pilot_bits: usize) -> &[u8] {
        &self.message[pilot_bits..]
    }
}

pub fn spread(v: &[f64], b: &ComplexVector) -> ComplexVector {
    let ns = b.len();
    ComplexVector::from_fn(v.len() * ns, |i, _| b[i % ns] * v[i / ns])
}

/// Integer value of a bit string, MSB first.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize)
}

pub fn index_to_bits(index: usize, width: usize) -> Vec<u8> {
    (0..width).rev().map(|i| ((index >> i) & 1) as u8).collect()
}

/// Splits the message into pilot and data parts, encodes the data part and
/// draws a slot uniformly.
pub fn encode_user<R: Rng + ?Sized>(
    message: &[u8],
    pilot_bits: usize,
    codebooks: &Codebooks,
    codec: &Codec,
    slots: usize,
    rng: &mut R,
) -> Result<UserTransmission> {
    if message.len() != pilot_bits + codec.message_bits() {
        return Err(Error::dim("encode_user", pilot_bits + codec.message_bits(), message.len()));
    }
    if slots == 0 {
        return Err(Error::Domain("at least one slot is required".into()));
    }
    let pilot = bits_to_index(&message[..pilot_bits]);
    if pilot >= codebooks.num_pilots() {
        return Err(Error::dim("encode_user pilot index", codebooks.num_pilots(), pilot));
    }
    Ok(UserTransmission {
        message: message.to_vec(),
        slot: rng.random_range(0..slots),
        pilot,
        preamble: codebooks.preamble(pilot),
        symbols: codec.modulate(&message[pilot_bits..])?,
    })
}

/// One user's view of the channel during its slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotUser<'a> {
    pub tx: &'a UserTransmission,
    pub h: &'a ComplexVector,
    pub d: Option<&'a ComplexVector>,
}

/// `G diag(h) W`
pub(crate) fn cascade(g: &ComplexMatrix, h: &ComplexVector, w: &ComplexMatrix) -> ComplexMatrix {
    let mut dw = w.clone();
    for (i, mut row) in dw.row_iter_mut().enumerate() {
        row *= h[i];
    }
    g * dw
}

fn check_dims(g: &ComplexMatrix, w: &ComplexMatrix, h: &ComplexVector, d: Option<&ComplexVector>) -> Result<()> {
    if g.ncols() != w.nrows() {
        return Err(Error::dim("RIS elements of W", g.ncols(), w.nrows()));
    }
    if h.len() != g.ncols() {
        return Err(Error::dim("user-RIS channel length", g.ncols(), h.len()));
    }
    if let Some(d) = d {
        if d.len() != g.nrows() {
            return Err(Error::dim("user-BS channel length", g.nrows(), d.len()));
        }
    }
    Ok(())
}

/// Noise-free pilot contribution `√P_p (G diag(h) W_ps diag(p) + d p)`.
pub fn pilot_signal(user: &SlotUser, g: &ComplexMatrix, w_ps: &ComplexMatrix, pilot: &ComplexVector, p_p: f64) -> Result<ComplexMatrix> {
    check_dims(g, w_ps, user.h, user.d)?;
    if pilot.len() != w_ps.ncols() {
        return Err(Error::dim("pilot length", w_ps.ncols(), pilot.len()));
    }
    let mut y = scale_columns(&cascade(g, user.h, w_ps), pilot.as_slice());
    if let Some(d) = user.d {
        y += d * pilot.transpose();
    }
    Ok(y * C64::from(p_p.sqrt()))
}

/// Received `M × n_p` pilot block of one slot.
pub fn simulate_pilot_slot<R: Rng + ?Sized>(
    users: &[SlotUser],
    g: &ComplexMatrix,
    w_ps: &ComplexMatrix,
    pilots: &ComplexMatrix,
    p_p: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    let mut y = cn_matrix(g.nrows(), w_ps.ncols(), sigma2, rng);
    for u in users {
        let p = pilots.row(u.tx.pilot).transpose();
        y += pilot_signal(u, g, w_ps, &p, p_p)?;
    }
    Ok(y)
}

/// Per-symbol signature `T = √P_c (G diag(h) W_cs diag(b) + d b)`.
pub fn data_signature(
    h: &ComplexVector,
    d: Option<&ComplexVector>,
    b: &ComplexVector,
    w_cs: &ComplexMatrix,
    p_c: f64,
    g: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    check_dims(g, w_cs, h, d)?;
    if b.len() != w_cs.ncols() {
        return Err(Error::dim("preamble length", w_cs.ncols(), b.len()));
    }
    let mut t = scale_columns(&cascade(g, h, w_cs), b.as_slice());
    if let Some(d) = d {
        t += d * b.transpose();
    }
    Ok(t * C64::from(p_c.sqrt()))
}

/// Received data block `Y_{c,f}` for a single symbol index `f`.
pub fn simulate_data_symbol<R: Rng + ?Sized>(
    users: &[SlotUser],
    g: &ComplexMatrix,
    w_cs: &ComplexMatrix,
    p_c: f64,
    f: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    let mut y = cn_matrix(g.nrows(), w_cs.ncols(), sigma2, rng);
    for u in users {
        let v = *u
            .tx
            .symbols
            .get(f)
            .ok_or_else(|| Error::dim("symbol index", u.tx.symbols.len(), f))?;
        y += data_signature(u.h, u.d, &u.tx.preamble, w_cs, p_c, g)? * C64::from(v);
    }
    Ok(y)
}

/// Whole data slot as an `(M·n_s) × n_d` matrix, column `f` = `vec(Y_{c,f})`.
pub fn simulate_data_slot<R: Rng + ?Sized>(
    users: &[SlotUser],
    g: &ComplexMatrix,
    w_cs: &ComplexMatrix,
    p_c: f64,
    n_d: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    let rows = g.nrows() * w_cs.ncols();
    let mut y = cn_matrix(rows, n_d, sigma2, rng);
    for u in users {
        if u.tx.symbols.len() != n_d {
            return Err(Error::dim("codeword length", n_d, u.tx.symbols.len()));
        }
        let t = vectorize(&data_signature(u.h, u.d, &u.tx.preamble, w_cs, p_c, g)?);
        let v = ComplexVector::from_iterator(n_d, u.tx.symbols.iter().map(|&s| C64::from(s)));
        y += t * v.transpose();
    }
    Ok(y)
}
