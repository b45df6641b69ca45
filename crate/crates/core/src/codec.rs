//! CRC attachment, polar encoding, BPSK mapping and CRC-aided successive
//! cancellation list (SCL) decoding.
//!
//! Bits are `u8` values in `{0, 1}`. The polar transform is `x = u·F^{⊗m}`
//! with `F = [[1,0],[1,1]]` in natural (non bit-reversed) order, so for
//! `n = 2` the codeword is `(u₀⊕u₁, u₁)`. LLRs are `ln P(0)/P(1)`, which with
//! the BPSK map `0 → +1`, `1 → −1` makes a positive LLR favour `+1`.

use crate::error::{Error, Result};

/// Polynomial-division CRC over a bit string, zero initial state, MSB first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrcSpec {
    pub width: u32,
    /// Generator polynomial without the leading `x^width` term.
    pub poly: u64,
}

impl CrcSpec {
    /// CRC-16 with polynomial `0x1021`.
    pub const CRC16: CrcSpec = CrcSpec { width: 16, poly: 0x1021 };

    pub fn new(width: u32, poly: u64) -> Result<Self> {
        if width == 0 || width > 63 || poly >> width != 0 {
            return Err(Error::Domain(format!("invalid CRC width {width} / poly {poly:#x}")));
        }
        Ok(Self { width, poly })
    }

    pub fn remainder(&self, bits: &[u8]) -> u64 {
        let top = 1u64 << (self.width - 1);
        let mask = (1u64 << self.width) - 1;
        let mut reg = 0u64;
        for &b in bits {
            let feedback = ((reg & top) != 0) ^ (b & 1 == 1);
            reg = (reg << 1) & mask;
            if feedback {
                reg ^= self.poly;
            }
        }
        reg
    }
}

/// `bits ∥ crc(bits)`
pub fn crc_append(bits: &[u8], spec: &CrcSpec) -> Vec<u8> {
    let rem = spec.remainder(bits);
    let mut out = Vec::with_capacity(bits.len() + spec.width as usize);
    out.extend_from_slice(bits);
    out.extend((0..spec.width).rev().map(|i| ((rem >> i) & 1) as u8));
    out
}

pub fn crc_check(bits: &[u8], spec: &CrcSpec) -> bool {
    bits.len() >= spec.width as usize && spec.remainder(bits) == 0
}

/// A polar code: block length, information set and frozen mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarCode {
    n: usize,
    /// Information positions in ascending order.
    info: Vec<usize>,
    frozen: Vec<bool>,
}

impl PolarCode {
    /// Builds a code from an explicit reliability order (most reliable first).
    pub fn from_reliability(order: &[usize], k: usize) -> Result<Self> {
        let n = order.len();
        if !n.is_power_of_two() || k > n {
            return Err(Error::Domain(format!("polar code ({n}, {k}) is not valid")));
        }
        let mut info: Vec<usize> = order[..k].to_vec();
        info.sort_unstable();
        let mut frozen = vec![true; n];
        for &i in &info {
            frozen[i] = false;
        }
        Ok(Self { n, info, frozen })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.info.len()
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info
    }

    pub fn frozen_positions(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.frozen[i]).collect()
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }
}

fn ln_phi(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < 10.0 {
        -0.4527 * x.powf(0.86) + 0.0218
    } else {
        0.5 * (std::f64::consts::PI / x).ln() - x / 4.0 + (1.0 - 10.0 / (7.0 * x)).ln()
    }
}

fn inv_ln_phi(target: f64) -> f64 {
    if target >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while ln_phi(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ln_phi(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Synthetic-channel LLR means under the Gaussian approximation of density
/// evolution, for BPSK over AWGN at `design_snr_db` (Es/N0).
pub fn ga_llr_means(n: usize, design_snr_db: f64) -> Vec<f64> {
    let es_n0 = 10f64.powf(design_snr_db / 10.0);
    let mut means = vec![4.0 * es_n0];
    while means.len() < n {
        let mut next = Vec::with_capacity(2 * means.len());
        for &m in &means {
            // ln(1 − (1 − φ)²) = ln φ + ln(2 − φ)
            let lp = ln_phi(m);
            let bad = inv_ln_phi(lp + (2.0 - lp.exp()).ln());
            next.push(bad);
            next.push(2.0 * m);
        }
        means = next;
    }
    means
}

/// Gaussian-approximation construction: the `k` synthetic channels with the
/// largest LLR means carry information.
pub fn polar_construct(n: usize, k: usize, design_snr_db: f64) -> Result<PolarCode> {
    if n == 0 || !n.is_power_of_two() || k > n {
        return Err(Error::Domain(format!("polar code ({n}, {k}) is not valid")));
    }
    let means = ga_llr_means(n, design_snr_db);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(b.cmp(&a)));
    PolarCode::from_reliability(&order, k)
}

/// In-place polar transform `x = u·F^{⊗m}`.
pub fn polar_transform(bits: &mut [u8]) {
    let n = bits.len();
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for j in block..block + h {
                bits[j] ^= bits[j + h];
            }
        }
        h *= 2;
    }
}

pub fn polar_encode(info: &[u8], code: &PolarCode) -> Result<Vec<u8>> {
    if info.len() != code.k() {
        return Err(Error::dim("polar_encode", code.k(), info.len()));
    }
    let mut u = vec![0u8; code.n];
    for (&pos, &b) in code.info.iter().zip(info) {
        u[pos] = b & 1;
    }
    polar_transform(&mut u);
    Ok(u)
}

/// `0 → +1`, `1 → −1`
pub fn bpsk(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| if b & 1 == 0 { 1.0 } else { -1.0 }).collect()
}

#[inline]
fn f_minsum(a: f64, b: f64) -> f64 {
    let m = a.abs().min(b.abs());
    if (a < 0.0) ^ (b < 0.0) {
        -m
    } else {
        m
    }
}

#[inline]
fn g_node(a: f64, b: f64, u: u8) -> f64 {
    if u == 0 {
        b + a
    } else {
        b - a
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct PathState {
    alpha: Vec<f64>,
    beta: Vec<u8>,
    u: Vec<u8>,
    metric: f64,
}

/// Workspace for CRC-aided SCL decoding of one code.
struct ListDecoder<'a> {
    code: &'a PolarCode,
    list_size: usize,
    paths: Vec<PathState>,
    active: Vec<usize>,
    free: Vec<usize>,
}

impl<'a> ListDecoder<'a> {
    fn new(code: &'a PolarCode, list_size: usize, llr: &[f64]) -> Self {
        let n = code.n;
        let paths: Vec<PathState> = (0..list_size)
            .map(|_| PathState {
                alpha: vec![0.0; 2 * n],
                beta: vec![0; 2 * n],
                u: vec![0; n],
                metric: 0.0,
            })
            .collect();
        let mut dec = Self {
            code,
            list_size,
            paths,
            active: vec![0],
            free: (1..list_size).rev().collect(),
        };
        dec.paths[0].alpha[..n].copy_from_slice(llr);
        dec
    }

    /// Start offset of the layer at `depth` (layer sizes n, n/2, …, 1).
    fn offset(&self, depth: usize) -> usize {
        2 * self.code.n - 2 * (self.code.n >> depth)
    }

    fn node(&mut self, depth: usize, leaf: usize) {
        let len = self.code.n >> depth;
        if len == 1 {
            self.decide(leaf, depth);
            return;
        }
        let half = len / 2;
        let (cur, nxt) = (self.offset(depth), self.offset(depth + 1));
        for &p in &self.active {
            let a = &mut self.paths[p].alpha;
            for j in 0..half {
                a[nxt + j] = f_minsum(a[cur + j], a[cur + j + half]);
            }
        }
        self.node(depth + 1, leaf);
        for &p in &self.active {
            let path = &mut self.paths[p];
            for j in 0..half {
                path.beta[cur + j] = path.beta[nxt + j];
                path.alpha[nxt + j] = g_node(path.alpha[cur + j], path.alpha[cur + j + half], path.beta[cur + j]);
            }
        }
        self.node(depth + 1, leaf + half);
        for &p in &self.active {
            let b = &mut self.paths[p].beta;
            for j in 0..half {
                b[cur + j] ^= b[nxt + j];
                b[cur + j + half] = b[nxt + j];
            }
        }
    }

    fn decide(&mut self, phase: usize, depth: usize) {
        let at = self.offset(depth);
        if self.code.frozen[phase] {
            for &p in &self.active {
                let path = &mut self.paths[p];
                path.metric += softplus(-path.alpha[at]);
                path.beta[at] = 0;
                path.u[phase] = 0;
            }
            return;
        }

        let mut cands: Vec<(f64, usize, u8)> = Vec::with_capacity(2 * self.active.len());
        for &p in &self.active {
            let path = &self.paths[p];
            let llr = path.alpha[at];
            cands.push((path.metric + softplus(-llr), p, 0));
            cands.push((path.metric + softplus(llr), p, 1));
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(self.list_size);

        let mut keep = vec![[None::<f64>; 2]; self.list_size];
        for &(m, p, u) in &cands {
            keep[p][u as usize] = Some(m);
        }
        let mut survivors = Vec::with_capacity(self.list_size);
        for &p in &self.active {
            if keep[p][0].is_none() && keep[p][1].is_none() {
                self.free.push(p);
            } else {
                survivors.push(p);
            }
        }
        let mut next_active = Vec::with_capacity(self.list_size);
        for p in survivors {
            match keep[p] {
                [Some(m0), Some(m1)] => {
                    let q = self.free.pop().expect("list has room for every surviving fork");
                    self.clone_path(p, q);
                    self.set_bit(p, phase, at, 0, m0);
                    self.set_bit(q, phase, at, 1, m1);
                    next_active.push(p);
                    next_active.push(q);
                }
                [Some(m0), None] => {
                    self.set_bit(p, phase, at, 0, m0);
                    next_active.push(p);
                }
                [None, Some(m1)] => {
                    self.set_bit(p, phase, at, 1, m1);
                    next_active.push(p);
                }
                [None, None] => unreachable!(),
            }
        }
        self.active = next_active;
    }

    fn set_bit(&mut self, p: usize, phase: usize, at: usize, u: u8, metric: f64) {
        let path = &mut self.paths[p];
        path.beta[at] = u;
        path.u[phase] = u;
        path.metric = metric;
    }

    fn clone_path(&mut self, src: usize, dst: usize) {
        let (a, b) = if src < dst {
            let (lo, hi) = self.paths.split_at_mut(dst);
            (&lo[src], &mut hi[0])
        } else {
            let (lo, hi) = self.paths.split_at_mut(src);
            (&hi[0], &mut lo[dst])
        };
        b.alpha.copy_from_slice(&a.alpha);
        b.beta.copy_from_slice(&a.beta);
        b.u.copy_from_slice(&a.u);
        b.metric = a.metric;
    }

    fn run(mut self) -> Vec<(f64, Vec<u8>)> {
        self.node(0, 0);
        let mut out: Vec<(f64, Vec<u8>)> = self
            .active
            .iter()
            .map(|&p| {
                let path = &self.paths[p];
                (path.metric, self.code.info.iter().map(|&i| path.u[i]).collect())
            })
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

/// Full list of surviving candidates (information bits incl. CRC) ordered by
/// path metric, best first.
pub fn scl_list(llr: &[f64], list_size: usize, code: &PolarCode) -> Result<Vec<(f64, Vec<u8>)>> {
    if llr.len() != code.n {
        return Err(Error::dim("scl_decode", code.n, llr.len()));
    }
    if list_size == 0 {
        return Err(Error::Domain("list size must be >= 1".into()));
    }
    if llr.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("LLRs must be finite".into()));
    }
    Ok(ListDecoder::new(code, list_size, llr).run())
}

/// CRC-aided SCL decoding. Returns the message (CRC stripped) of the best
/// CRC-passing candidate, or `None` when no candidate passes.
pub fn scl_decode(llr: &[f64], list_size: usize, code: &PolarCode, crc: &CrcSpec) -> Result<Option<Vec<u8>>> {
    let list = scl_list(llr, list_size, code)?;
    let msg_len = code.k().saturating_sub(crc.width as usize);
    Ok(list
        .into_iter()
        .find(|(_, bits)| crc_check(bits, crc))
        .map(|(_, mut bits)| {
            bits.truncate(msg_len);
            bits
        }))
}

/// A CRC + polar code pair carrying `message_bits` payload bits.
#[derive(Debug, Clone)]
pub struct Codec {
    pub code: PolarCode,
    pub crc: CrcSpec,
    pub list_size: usize,
}

impl Codec {
    pub fn new(n: usize, message_bits: usize, crc: CrcSpec, list_size: usize, design_snr_db: f64) -> Result<Self> {
        let code = polar_construct(n, message_bits + crc.width as usize, design_snr_db)?;
        Ok(Self { code, crc, list_size })
    }

    pub fn message_bits(&self) -> usize {
        self.code.k() - self.crc.width as usize
    }

    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.message_bits() {
            return Err(Error::dim("Codec::encode", self.message_bits(), message.len()));
        }
        polar_encode(&crc_append(message, &self.crc), &self.code)
    }

    /// BPSK symbols of the encoded message.
    pub fn modulate(&self, message: &[u8]) -> Result<Vec<f64>> {
        Ok(bpsk(&self.encode(message)?))
    }

    pub fn decode(&self, llr: &[f64]) -> Result<Option<Vec<u8>>> {
        scl_decode(llr, self.list_size, &self.code, &self.crc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testutil::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_bits<R: Rng>(n: usize, r: &mut R) -> Vec<u8> {
        (0..n).map(|_| r.random_range(0..2u8)).collect()
    }

    #[test]
    fn crc_basics() {
        let crc = CrcSpec::CRC16;
        assert!(crc_append(&[0; 90], &crc)[90..].iter().all(|&b| b == 0));
        let mut r = rng(20);
        for _ in 0..200 {
            let m = random_bits(90, &mut r);
            assert!(crc_check(&crc_append(&m, &crc), &crc));
        }
        // "123456789" as MSB-first bits under CRC-16/XMODEM gives 0x31C3
        let bits: Vec<u8> = b"123456789".iter().flat_map(|&c| (0..8).rev().map(move |i| (c >> i) & 1)).collect();
        assert_eq!(crc.remainder(&bits), 0x31C3);
    }

    #[test]
    fn crc_detects_every_single_bit_flip() {
        let crc = CrcSpec::CRC16;
        let mut r = rng(21);
        let word = crc_append(&random_bits(90, &mut r), &crc);
        assert_eq!(word.len(), 106);
        for pos in 0..word.len() {
            let mut w = word.clone();
            w[pos] ^= 1;
            assert!(!crc_check(&w, &crc), "flip at {pos} undetected");
        }
    }

    #[test]
    fn construction_examples() {
        let code = polar_construct(8, 8, 2.0).unwrap();
        assert!(code.frozen_positions().is_empty());
        let code = polar_construct(2, 1, 2.0).unwrap();
        assert_eq!(code.info_positions(), &[1]);
        let mut prev: Vec<usize> = Vec::new();
        for k in 0..=64 {
            let code = polar_construct(64, k, 2.0).unwrap();
            assert_eq!(code.k(), k);
            assert!(prev.iter().all(|p| code.info_positions().contains(p)));
            prev = code.info_positions().to_vec();
        }
        assert!(polar_construct(12, 3, 2.0).is_err());
        assert!(polar_construct(8, 9, 2.0).is_err());
    }

    #[test]
    fn ga_means_for_two_channels() {
        // bad channel: φ⁻¹(1 − (1 − φ(m))²), good channel: 2m
        let m = ga_llr_means(2, 0.0);
        assert!((m[1] - 8.0).abs() < 1e-12);
        let phi = |x: f64| (-0.4527 * x.powf(0.86) + 0.0218).exp();
        let target = 1.0 - (1.0 - phi(4.0)).powi(2);
        assert!((phi(m[0]) - target).abs() < 1e-9);
        assert!(m[0] < 4.0);
    }

    #[test]
    fn encoder_examples() {
        let code = PolarCode::from_reliability(&[1, 0], 2).unwrap();
        for (u0, u1) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(polar_encode(&[u0, u1], &code).unwrap(), vec![u0 ^ u1, u1]);
        }
        let code = polar_construct(256, 106, 2.0).unwrap();
        assert!(polar_encode(&[0; 106], &code).unwrap().iter().all(|&b| b == 0));
        let mut r = rng(22);
        for _ in 0..50 {
            let a = random_bits(106, &mut r);
            let b = random_bits(106, &mut r);
            let ab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
            let ea = polar_encode(&a, &code).unwrap();
            let eb = polar_encode(&b, &code).unwrap();
            let sum: Vec<u8> = ea.iter().zip(&eb).map(|(x, y)| x ^ y).collect();
            assert_eq!(sum, polar_encode(&ab, &code).unwrap());
        }
    }

    #[test]
    fn transform_is_an_involution() {
        let mut r = rng(23);
        let u = random_bits(64, &mut r);
        let mut x = u.clone();
        polar_transform(&mut x);
        polar_transform(&mut x);
        assert_eq!(x, u);
    }

    #[test]
    fn bpsk_mapping() {
        assert_eq!(bpsk(&[0, 1, 0]), vec![1.0, -1.0, 1.0]);
        let s = bpsk(&[1, 1, 0, 1]);
        assert!(s.iter().all(|x| x.abs() == 1.0));
        assert!(s.iter().map(|x| x * x).all(|x| x == 1.0));
    }

    #[test]
    fn noiseless_round_trip_every_list_size() {
        let mut r = rng(24);
        for &list in &[1usize, 2, 4, 8, 32] {
            let codec = Codec::new(256, 90, CrcSpec::CRC16, list, 2.0).unwrap();
            let trials = if list == 32 { 1000 } else { 200 };
            for _ in 0..trials {
                let msg = random_bits(90, &mut r);
                let llr: Vec<f64> = codec.modulate(&msg).unwrap().iter().map(|s| 20.0 * s).collect();
                assert_eq!(codec.decode(&llr).unwrap(), Some(msg));
            }
        }
    }

    #[test]
    fn noise_llrs_are_rejected() {
        let codec = Codec::new(256, 90, CrcSpec::CRC16, 32, 2.0).unwrap();
        let mut r = rng(25);
        let trials = 10_000;
        let mut accepted = 0;
        for _ in 0..trials {
            let llr: Vec<f64> = (0..256).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect();
            if let Some(msg) = codec.decode(&llr).unwrap() {
                assert!(crc_check(&crc_append(&msg, &codec.crc), &codec.crc));
                accepted += 1;
            }
        }
        // false-accept probability is at most list·2^−16
        let rate = accepted as f64 / trials as f64;
        assert!(rate <= 32.0 / 65536.0 * 3.0 + 1e-3, "false accept rate {rate}");
    }

    fn awgn_errors(codec: &Codec, eb_n0_db: f64, blocks: usize, seed: u64) -> usize {
        let mut r = rng(seed);
        let rate = codec.message_bits() as f64 / codec.code.n() as f64;
        let es_n0 = 10f64.powf(eb_n0_db / 10.0) * rate;
        let sigma2 = 1.0 / (2.0 * es_n0);
        let mut errors = 0;
        for _ in 0..blocks {
            let msg = random_bits(codec.message_bits(), &mut r);
            let llr: Vec<f64> = codec
                .modulate(&msg)
                .unwrap()
                .iter()
                .map(|&s| 2.0 * (s + sigma2.sqrt() * r.sample::<f64, _>(StandardNormal)) / sigma2)
                .collect();
            if codec.decode(&llr).unwrap().as_deref() != Some(&msg[..]) {
                errors += 1;
            }
        }
        errors
    }

    #[test]
    fn bler_nonincreasing_in_list_size() {
        let mut prev = usize::MAX;
        for &list in &[1usize, 4, 16] {
            let codec = Codec::new(256, 90, CrcSpec::CRC16, list, 2.0).unwrap();
            let e = awgn_errors(&codec, 2.0, 600, 26);
            assert!(e <= prev, "list {list}: {e} errors vs {prev}");
            prev = e;
        }
    }
}
