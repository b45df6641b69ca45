//! End-to-end Monte-Carlo trials, PUPE and Eb/N0 metrics, power search and
//! CSV output.
//!
//! Seeding: trial `t` of a run with master seed `s` draws everything from
//! `stream_rng(s, t)` (ChaCha8 keyed by `s`, stream `t`). Results therefore
//! do not depend on the number of worker threads.

pub mod config;
pub mod selftest;

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::codec::Codec;
use crate::datadetect::{build_ti, candidates_from_estimates, data_phase, Candidate};
use crate::error::{Error, Result};
use crate::jdce::{jdce_run, jdce_run_direct, ChannelEstimates, PilotEstimate};
use crate::numerics::{linear_to_db, stream_rng, vectorize, watts_to_dbm, ComplexMatrix, ComplexVector};
use crate::risdesign::{design, DesignProblem, DesignUser};
use crate::transmitter::{
    encode_user, gen_codebooks, random_phases, simulate_data_slot, simulate_pilot_slot, SlotUser, UserTransmission,
};

pub use config::SystemConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialStats {
    /// One entry per active user.
    pub transmitted: Vec<Vec<u8>>,
    pub decoded: BTreeSet<Vec<u8>>,
    pub missed: usize,
    pub false_alarms: usize,
    /// Users that shared both slot and pilot with another user.
    pub pilot_collisions: usize,
}

impl TrialStats {
    pub fn score(transmitted: Vec<Vec<u8>>, decoded: BTreeSet<Vec<u8>>) -> Self {
        let sent: BTreeSet<&Vec<u8>> = transmitted.iter().collect();
        let missed = transmitted.iter().filter(|m| !decoded.contains(*m)).count();
        let false_alarms = decoded.iter().filter(|m| !sent.contains(m)).count();
        Self { transmitted, decoded, missed, false_alarms, pilot_collisions: 0 }
    }
}

/// Runs one frame: channels, pilot slots, channel estimation, RIS design,
/// data slots and SIC decoding.
pub fn run_trial<R: Rng + ?Sized>(cfg: &SystemConfig, codec: &Codec, rng: &mut R) -> Result<TrialStats> {
    let k_a = cfg.active_users;
    if k_a == 0 {
        return Ok(TrialStats::default());
    }
    let chan = cfg.channel_params().realize(k_a, rng);
    let n = cfg.ris().len();
    let cb = gen_codebooks(cfg.pilot_bits, cfg.preamble_len, cfg.pilot_len, n, cfg.slots, rng);
    let users: Vec<UserTransmission> = (0..k_a)
        .map(|_| {
            let msg: Vec<u8> = (0..cfg.total_bits()).map(|_| rng.random_range(0..2u8)).collect();
            encode_user(&msg, cfg.pilot_bits, &cb, codec, cfg.slots, rng)
        })
        .collect::<Result<_>>()?;

    let jcfg = cfg.jdce_config();
    let mut decoded = BTreeSet::new();
    let mut collisions = 0;
    for slot in 0..cfg.slots {
        let idx: Vec<usize> = (0..k_a).filter(|&i| users[i].slot == slot).collect();
        let slot_users: Vec<SlotUser> = idx
            .iter()
            .map(|&i| SlotUser { tx: &users[i], h: &chan.h[i], d: chan.direct(i) })
            .collect();
        collisions += idx
            .iter()
            .filter(|&&i| idx.iter().any(|&j| j != i && users[j].pilot == users[i].pilot))
            .count();

        let w_ps = &cb.pilot_phases[slot];
        let y_p = simulate_pilot_slot(&slot_users, &chan.g, w_ps, &cb.pilots, cfg.pilot_power, cfg.noise_power, rng)?;
        let estimates = if cfg.perfect_csi {
            true_estimates(&slot_users, cfg)
        } else if cfg.direct_link {
            jdce_run_direct(&y_p, &cb.pilots, w_ps, &chan.g, &jcfg)?.estimates
        } else {
            jdce_run(&y_p, &cb.pilots, w_ps, &chan.g, &jcfg)?.estimates
        };

        let w_cs = if cfg.use_ris && !estimates.is_empty() {
            let preambles: Vec<ComplexVector> = estimates.keys().map(|&k| cb.preamble(k)).collect();
            let design_users: Vec<DesignUser> = estimates
                .values()
                .zip(&preambles)
                .map(|(e, b)| DesignUser { h: &e.h, d: (cfg.direct_link && e.has_direct()).then_some(&e.d), b })
                .collect();
            let problem = DesignProblem::from_channels(
                &chan.g,
                &design_users,
                cfg.ris_strategy,
                cfg.preamble_len,
                cfg.data_power,
                cfg.noise_power,
                cfg.design_settings(),
            )?;
            let outcome = design(&problem, cfg.design_algorithm, rng)?;
            cfg.ris_strategy.phase_matrix(&outcome.phases.w, n, cfg.preamble_len)?
        } else {
            random_phases(n, cfg.preamble_len, rng)
        };

        let y_d = simulate_data_slot(&slot_users, &chan.g, &w_cs, cfg.data_power, cfg.data_len, cfg.noise_power, rng)?;
        let candidates = if cfg.use_ris {
            candidates_from_estimates(&estimates, &cb, &chan.g, &w_cs, cfg.data_power, cfg.direct_link)?
        } else {
            direct_only_candidates(&estimates, &cb, &chan.g, &w_cs, cfg.data_power)?
        };
        let out = data_phase(&y_d, &candidates, codec, cfg.pilot_bits, cfg.noise_power)?;
        decoded.extend(out.decoded.into_iter().map(|d| d.message));
    }
    let mut stats = TrialStats::score(users.into_iter().map(|u| u.message).collect(), decoded);
    stats.pilot_collisions = collisions;
    Ok(stats)
}

/// Genie channel knowledge; on a pilot collision the first user's channel is kept.
fn true_estimates(users: &[SlotUser], cfg: &SystemConfig) -> ChannelEstimates {
    let mut out = ChannelEstimates::new();
    for u in users {
        out.entry(u.tx.pilot).or_insert_with(|| PilotEstimate {
            h: u.h.clone(),
            d: u.d.cloned().unwrap_or_else(|| ComplexVector::zeros(cfg.bs().len())),
        });
    }
    out
}

/// Signatures built from `d̂` alone, for the receiver that ignores the RIS.
fn direct_only_candidates(
    estimates: &ChannelEstimates,
    cb: &crate::transmitter::Codebooks,
    g: &ComplexMatrix,
    w_cs: &ComplexMatrix,
    p_c: f64,
) -> Result<Vec<Candidate>> {
    let zero = ComplexVector::zeros(g.ncols());
    estimates
        .iter()
        .filter(|(_, e)| e.has_direct())
        .map(|(&pilot, e)| {
            let t = build_ti(&zero, Some(&e.d), &cb.preamble(pilot), w_cs, p_c, g)?;
            Ok(Candidate { pilot, signature: vectorize(&t) })
        })
        .collect()
}

/// Runs `trials` independent frames; trial `t` uses `stream_rng(seed, t)`.
pub fn run_trials(cfg: &SystemConfig, trials: usize, seed: u64) -> Result<Vec<TrialStats>> {
    cfg.validate()?;
    let codec = cfg.codec()?;
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, &codec, &mut stream_rng(seed, t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupeEstimate {
    pub trials: usize,
    pub transmitted: usize,
    pub decoded: usize,
    pub missed: usize,
    pub false_alarms: usize,
    pub p_md: f64,
    pub p_fa: f64,
    pub pupe: f64,
    /// 95% normal-approximation interval on `pupe`, clipped to `[0, 1]`.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// `p_md = missed/transmitted`, `p_fa = false/decoded` (0 if nothing was
/// decoded) and `P_e = min(1, p_md + p_fa)`.
pub fn estimate_pupe(stats: &[TrialStats]) -> PupeEstimate {
    let transmitted: usize = stats.iter().map(|s| s.transmitted.len()).sum();
    let decoded: usize = stats.iter().map(|s| s.decoded.len()).sum();
    let missed: usize = stats.iter().map(|s| s.missed).sum();
    let false_alarms: usize = stats.iter().map(|s| s.false_alarms).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p_md = if transmitted == 0 { 0.0 } else { ratio(missed, transmitted) };
    let p_fa = ratio(false_alarms, decoded);
    let var = |p: f64, n: usize| if n == 0 { 0.0 } else { p * (1.0 - p) / n as f64 };
    let half = 1.96 * (var(p_md, transmitted) + var(p_fa, decoded)).sqrt();
    let pupe = (p_md + p_fa).min(1.0);
    PupeEstimate {
        trials: stats.len(),
        transmitted,
        decoded,
        missed,
        false_alarms,
        p_md,
        p_fa,
        pupe,
        ci_low: (pupe - half).clamp(0.0, 1.0),
        ci_high: (pupe + half).clamp(0.0, 1.0),
    }
}

/// Simulates `cfg.trials` frames with `cfg.seed`.
pub fn simulate(cfg: &SystemConfig) -> Result<PupeEstimate> {
    Ok(estimate_pupe(&run_trials(cfg, cfg.trials, cfg.seed)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbN0 {
    /// Energy per bit `P·n_T/B`.
    pub linear: f64,
    /// `10 log10(P n_T / (B σ_z²))`.
    pub db: f64,
}

pub fn eb_n0(power: f64, n_t: usize, bits: usize, sigma2: f64) -> Result<EbN0> {
    if bits == 0 {
        return Err(Error::Domain("Eb/N0 needs B >= 1".into()));
    }
    let linear = power * n_t as f64 / bits as f64;
    Ok(EbN0 { linear, db: linear_to_db(linear / sigma2) })
}

/// Both pilot and data power set to `power`.
pub fn with_power(cfg: &SystemConfig, power: f64) -> SystemConfig {
    SystemConfig { pilot_power: power, data_power: power, ..cfg.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub power: f64,
    pub eb_n0: EbN0,
    pub estimate: PupeEstimate,
}

/// PUPE at each power, every point reusing the same trial seeds.
pub fn power_sweep(cfg: &SystemConfig, powers: &[f64]) -> Result<Vec<SweepRow>> {
    powers
        .iter()
        .map(|&p| {
            let point = with_power(cfg, p);
            Ok(SweepRow {
                power: p,
                eb_n0: eb_n0(p, cfg.total_channel_uses(), cfg.total_bits(), cfg.noise_power)?,
                estimate: simulate(&point)?,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: [&str; 14] = [
    "power_w", "power_dbm", "eb_j", "eb_n0_db", "trials", "transmitted", "decoded", "missed", "false_alarms", "p_md",
    "p_fa", "pupe", "ci_low", "ci_high",
];

/// CSV with [`SWEEP_HEADER`].
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        let e = &r.estimate;
        w.write_record([
            format!("{:e}", r.power),
            format!("{:.4}", watts_to_dbm(r.power)),
            format!("{:e}", r.eb_n0.linear),
            format!("{:.4}", r.eb_n0.db),
            e.trials.to_string(),
            e.transmitted.to_string(),
            e.decoded.to_string(),
            e.missed.to_string(),
            e.false_alarms.to_string(),
            format!("{:.6}", e.p_md),
            format!("{:.6}", e.p_fa),
            format!("{:.6}", e.pupe),
            format!("{:.6}", e.ci_low),
            format!("{:.6}", e.ci_high),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchOutcome {
    Found {
        /// Smallest tested power meeting the target.
        power: f64,
        estimate: PupeEstimate,
        /// Final bracket `(lo, hi)` in Watts; `hi == power`.
        bracket: (f64, f64),
        evaluations: usize,
    },
    Unreachable {
        low: PupeEstimate,
        high: PupeEstimate,
    },
}

impl SearchOutcome {
    pub fn power(&self) -> Option<f64> {
        match self {
            SearchOutcome::Found { power, .. } => Some(*power),
            SearchOutcome::Unreachable { .. } => None,
        }
    }
}

/// Bisection in dB between `bracket.0` and `bracket.1` Watts for the
/// smallest power whose PUPE is at most `target`, stopping when the bracket
/// is narrower than `tol_db`.
pub fn power_search<F>(mut evaluate: F, target: f64, tol_db: f64, bracket: (f64, f64)) -> Result<SearchOutcome>
where
    F: FnMut(f64) -> Result<PupeEstimate>,
{
    let (lo_w, hi_w) = bracket;
    if !(lo_w > 0.0 && hi_w >= lo_w) || !(tol_db > 0.0) {
        return Err(Error::Domain(format!("bad search bracket {bracket:?} / tolerance {tol_db}")));
    }
    let low = evaluate(lo_w)?;
    let mut evaluations = 1;
    if low.pupe <= target {
        return Ok(SearchOutcome::Found { power: lo_w, estimate: low, bracket: (lo_w, lo_w), evaluations });
    }
    let high = evaluate(hi_w)?;
    evaluations += 1;
    if high.pupe > target {
        return Ok(SearchOutcome::Unreachable { low, high });
    }
    let (mut lo, mut hi) = (watts_to_dbm(lo_w), watts_to_dbm(hi_w));
    let mut best = high;
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        let est = evaluate(crate::numerics::dbm_to_watts(mid))?;
        evaluations += 1;
        if est.pupe <= target {
            hi = mid;
            best = est;
        } else {
            lo = mid;
        }
    }
    let power = if hi == watts_to_dbm(hi_w) { hi_w } else { crate::numerics::dbm_to_watts(hi) };
    Ok(SearchOutcome::Found {
        power,
        estimate: best,
        bracket: (crate::numerics::dbm_to_watts(lo), power),
        evaluations,
    })
}

/// [`power_search`] over simulated PUPE with paired seeds.
pub fn search_power(cfg: &SystemConfig, target: f64, tol_db: f64, bracket: (f64, f64)) -> Result<SearchOutcome> {
    power_search(|p| simulate(&with_power(cfg, p)), target, tol_db, bracket)
}

pub const SEARCH_HEADER: [&str; 8] =
    ["status", "power_w", "power_dbm", "eb_n0_db", "pupe", "ci_low", "ci_high", "evaluations"];

/// One-row CSV with [`SEARCH_HEADER`]; numeric fields are empty when the
/// target was not reached inside the bracket.
pub fn write_search_csv<W: Write>(cfg: &SystemConfig, outcome: &SearchOutcome, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SEARCH_HEADER)?;
    match outcome {
        SearchOutcome::Found { power, estimate, evaluations, .. } => {
            let eb = eb_n0(*power, cfg.total_channel_uses(), cfg.total_bits(), cfg.noise_power)?;
            w.write_record([
                "found".to_string(),
                format!("{power:e}"),
                format!("{:.4}", watts_to_dbm(*power)),
                format!("{:.4}", eb.db),
                format!("{:.6}", estimate.pupe),
                format!("{:.6}", estimate.ci_low),
                format!("{:.6}", estimate.ci_high),
                evaluations.to_string(),
            ])?;
        }
        SearchOutcome::Unreachable { .. } => {
            w.write_record(["unreachable", "", "", "", "", "", "", "2"])?;
        }
    }
    w.flush()?;
    Ok(())
}
