//! Reduced-size run of the acceptance checks. Check `c` draws from
//! `stream_rng(seed, c)`, so the CSV is a pure function of the seed.

use std::io::Write;

use nalgebra::Cholesky;
use rand::Rng;

use super::{estimate_pupe, run_trials, with_power, SystemConfig};
use crate::bound::{self, BoundConfig};
use crate::channel::{assemble_ris_bs, assemble_user_ris, PathComponent, Upa};
use crate::codec::{Codec, CrcSpec};
use crate::datadetect::mmse_detect;
use crate::error::Result;
use crate::jdce::{jdce_run, nmse, JdceConfig};
use crate::numerics::{
    cn, cn_matrix, cn_vector, dbm_to_watts, hermitian_evd, hermitian_part, linear_to_db, stream_rng, ComplexMatrix,
    ComplexVector, C64,
};
use crate::risdesign::{aevd, asdr, DesignProblem, DesignSettings, DesignUser, Strategy};
use crate::transmitter::gen_codebooks;

pub const SELFTEST_HEADER: [&str; 5] = ["criterion", "check", "value", "threshold", "pass"];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub criterion: usize,
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(criterion: usize, name: &'static str, value: f64, threshold: f64) -> Self {
        Self { criterion, name, value, threshold, pass: value <= threshold }
    }

    fn at_least(criterion: usize, name: &'static str, value: f64, threshold: f64) -> Self {
        Self { criterion, name, value, threshold, pass: value >= threshold }
    }
}

fn desk() -> SystemConfig {
    SystemConfig {
        bs_rows: 4,
        bs_cols: 4,
        ris_rows: 4,
        ris_cols: 4,
        active_users: 8,
        slots: 4,
        pilot_len: 128,
        pilot_bits: 8,
        preamble_len: 4,
        ..SystemConfig::default()
    }
}

fn max_abs_eig(m: &ComplexMatrix) -> Result<f64> {
    Ok(hermitian_evd(m)?.0.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

fn mgf(seed: u64) -> Result<Vec<Check>> {
    let mut r = stream_rng(seed, 1);
    let draws = 50_000;
    let mut worst: f64 = 0.0;
    for k in 1..=4 {
        let x = cn_matrix(k, k, 1.0, &mut r);
        let a = hermitian_part(&(&x * x.adjoint() / C64::from(k as f64) + ComplexMatrix::identity(k, k) * C64::from(0.2)));
        let y = cn_matrix(k, k, 1.0, &mut r);
        let mut b = hermitian_part(&(&y + y.adjoint()));
        b *= C64::from(0.15 / (max_abs_eig(&a)? * max_abs_eig(&b)?));
        let rv = cn_vector(k, 0.3 / max_abs_eig(&a)?.sqrt(), &mut r);
        let want = bound::lemma1_rhs(&a, &b, &rv)?;
        let l = Cholesky::new(a).expect("positive definite by construction").l();
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let av = &l * cn_vector(k, 1.0, &mut r);
            let f = (av.dotc(&(&b * &av)).re + rv.dot(&av).re).exp();
            s1 += f;
            s2 += f * f;
        }
        let mean = s1 / draws as f64;
        let se = ((s2 / draws as f64 - mean * mean) / draws as f64).sqrt();
        worst = worst.max((mean - want).abs() / se);
    }
    Ok(vec![Check::at_most(1, "mgf_max_z", worst, 3.0)])
}

fn jdce(seed: u64) -> Result<Vec<Check>> {
    let mut r = stream_rng(seed, 2);
    let (bs, ris) = (Upa::new(4, 4, 0.5), Upa::new(4, 4, 0.5));
    let (bs_grid, ris_grid) = (bs.grid(), ris.grid());
    let trials = 20;
    let (mut hits, mut err) = (0, 0.0);
    for _ in 0..trials {
        let g_path = PathComponent {
            gain: cn(1.0, &mut r),
            arrival: bs_grid[r.random_range(0..bs_grid.len())],
            departure: Some(ris_grid[r.random_range(0..ris_grid.len())]),
            distance: 100.0,
        };
        let g = assemble_ris_bs(&[g_path], &bs, &ris);
        let cell = r.random_range(0..ris_grid.len());
        let h = assemble_user_ris(
            &[PathComponent { gain: cn(1.0, &mut r), arrival: ris_grid[cell], departure: None, distance: 250.0 }],
            &ris,
        );
        let cb = gen_codebooks(8, 4, 128, ris.len(), 1, &mut r);
        let pilot = r.random_range(0..cb.num_pilots());
        let w = &cb.pilot_phases[0];
        let mut clean = &g * ComplexMatrix::from_diagonal(&h) * w;
        for (c, mut col) in clean.column_iter_mut().enumerate() {
            col *= cb.pilots[(pilot, c)];
        }
        let sigma2 = clean.norm_squared() / clean.len() as f64 / 100.0;
        let y = clean + cn_matrix(bs.len(), 128, sigma2, &mut r);
        let cfg = JdceConfig { bs, ris, p_p: 1.0, sigma2, alpha1: 0.01, t_max: 4 };
        let out = jdce_run(&y, &cb.pilots, w, &g, &cfg)?;
        hits += usize::from(
            out.detections.first().is_some_and(|d| d.pilot == pilot && d.grid_index.0 * ris.n2 + d.grid_index.1 == cell),
        );
        err += out.estimates.get(&pilot).map_or(1.0, |e| nmse(&e.h, &h));
    }
    Ok(vec![
        Check::at_least(2, "jdce_detection_rate", hits as f64 / trials as f64, 0.99),
        Check::at_most(2, "jdce_nmse_db", linear_to_db(err / trials as f64), -20.0),
    ])
}

fn frame_problems<R: Rng + ?Sized>(cfg: &SystemConfig, r: &mut R) -> Result<Vec<DesignProblem>> {
    let users = cfg.active_users;
    let chan = cfg.channel_params().realize(users, r);
    let cb = gen_codebooks(cfg.pilot_bits, cfg.preamble_len, cfg.pilot_len, cfg.ris().len(), cfg.slots, r);
    let slots: Vec<usize> = (0..users).map(|_| r.random_range(0..cfg.slots)).collect();
    let preambles: Vec<ComplexVector> = (0..users).map(|_| cb.preamble(r.random_range(0..cb.num_pilots()))).collect();
    let mut out = Vec::new();
    for slot in 0..cfg.slots {
        let members: Vec<DesignUser> = (0..users)
            .filter(|&i| slots[i] == slot)
            .map(|i| DesignUser { h: &chan.h[i], d: None, b: &preambles[i] })
            .collect();
        if !members.is_empty() {
            out.push(DesignProblem::from_channels(
                &chan.g,
                &members,
                Strategy::C0,
                cfg.preamble_len,
                cfg.data_power,
                cfg.noise_power,
                cfg.design_settings(),
            )?);
        }
    }
    Ok(out)
}

fn design(seed: u64) -> Result<Vec<Check>> {
    let mut r = stream_rng(seed, 3);
    let cfg = with_power(&SystemConfig { active_users: 4, slots: 2, ..desk() }, dbm_to_watts(40.0));
    let frames = 20;
    let mut wins = 0;
    for _ in 0..frames {
        let (mut a, mut b) = (0.0, 0.0);
        for p in frame_problems(&cfg, &mut r)? {
            a += aevd(&p, &mut r)?.cost;
            b += p.cost(&p.random_phases(&mut r))?;
        }
        wins += usize::from(a < b);
    }
    let single = with_power(&SystemConfig { active_users: 1, slots: 1, ..cfg }, dbm_to_watts(25.0));
    let (mut s, mut e) = (0.0, 0.0);
    for _ in 0..5 {
        for p in frame_problems(&single, &mut r)? {
            s += asdr(&p, &mut r)?.cost;
            e += aevd(&p, &mut r)?.cost;
        }
    }
    Ok(vec![
        Check::at_least(3, "aevd_beats_random_fraction", wins as f64 / frames as f64, 0.95),
        Check::at_most(3, "asdr_over_aevd_mean_cost", s / e, 1.2),
    ])
}

fn grid_probe(seed: u64) -> Result<Vec<Check>> {
    let mut r = stream_rng(seed, 4);
    let (trials, grid) = (10, 64);
    let step = std::f64::consts::TAU / grid as f64;
    let mut hits = 0;
    for _ in 0..trials {
        let e = cn_matrix(64, 2, 0.004, &mut r);
        let p = DesignProblem::new(vec![e], None, 1.0, DesignSettings::default())?;
        let mut best = f64::INFINITY;
        for i in 0..grid {
            for j in 0..grid {
                let w = ComplexVector::from_vec(vec![C64::from_polar(1.0, i as f64 * step), C64::from_polar(1.0, j as f64 * step)]);
                best = best.min(p.cost(&w)?);
            }
        }
        hits += usize::from(asdr(&p, &mut r)?.cost <= 1.05 * best);
    }
    Ok(vec![Check::at_least(4, "asdr_grid_within_5pct_fraction", hits as f64 / trials as f64, 0.9)])
}

fn codec(seed: u64) -> Result<Vec<Check>> {
    let mut r = stream_rng(seed, 5);
    let codec = Codec::new(256, 90, CrcSpec::new(16, 0x1021)?, 32, 2.0)?;
    let mut msg = || -> Vec<u8> { (0..90).map(|_| r.random_range(0..2u8)).collect() };
    let mut identity = 0;
    let messages: Vec<Vec<u8>> = (0..400).map(|_| msg()).collect();
    for m in &messages[..100] {
        let llr: Vec<f64> = codec.modulate(m)?.iter().map(|s| 50.0 * s).collect();
        identity += usize::from(codec.decode(&llr)?.as_deref() == Some(&m[..]));
    }
    let sigma2 = 1.0 / (2.0 * 10f64.powf(0.6) * 106.0 / 256.0);
    let mut errors = 0;
    for m in &messages[100..] {
        let llr: Vec<f64> = codec
            .modulate(m)?
            .iter()
            .map(|&s| 2.0 * (s + sigma2.sqrt() * r.sample::<f64, _>(rand_distr::StandardNormal)) / sigma2)
            .collect();
        errors += usize::from(codec.decode(&llr)?.as_deref() != Some(&m[..]));
    }
    Ok(vec![
        Check::at_least(5, "codec_identity_fraction", identity as f64 / 100.0, 1.0),
        Check::at_most(5, "codec_bler_6db", errors as f64 / 300.0, 1e-2),
    ])
}

fn mmse(seed: u64) -> Result<Vec<Check>> {
    let mut r = stream_rng(seed, 6);
    let mut in_range = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = r.random_range(1..=8);
        let t = cn_matrix(32, k, r.random_range(0.01..10.0), &mut r);
        let (_, delta) = mmse_detect(&cn_vector(32, 1.0, &mut r), &t, r.random_range(0.01..10.0))?;
        in_range += usize::from(delta.iter().all(|&d| d > 0.0 && d < 1.0));

        let t1 = cn_matrix(32, 1, r.random_range(0.01..10.0), &mut r);
        let sigma2 = r.random_range(0.01..10.0);
        let (est, delta) = mmse_detect(&t1.column(0).into_owned(), &t1, sigma2)?;
        let gain = t1.norm_squared() / (t1.norm_squared() + sigma2);
        worst = worst.max((est[0] - C64::from(gain)).norm()).max((delta[0] - (1.0 - gain)).abs());
    }
    Ok(vec![
        Check::at_least(6, "mmse_delta_in_unit_interval_fraction", in_range as f64 / 100.0, 1.0),
        Check::at_most(6, "mmse_closed_form_error", worst, 1e-10),
    ])
}

fn end_to_end(seed: u64) -> Result<Vec<Check>> {
    let cfg = with_power(&desk(), dbm_to_watts(50.0));
    let first = run_trials(&cfg, 20, seed ^ 7)?;
    let again = run_trials(&cfg, 20, seed ^ 7)?;
    let e = estimate_pupe(&first);
    Ok(vec![
        Check::at_most(7, "desk_pupe_50dbm", e.pupe, 0.1),
        Check::at_least(10, "replay_identical", f64::from(u8::from(first == again)), 1.0),
    ])
}

fn direct_link(seed: u64) -> Result<Vec<Check>> {
    let base = SystemConfig { user_ris_paths: 1, user_bs_paths: 1, alpha_user_bs: f64::INFINITY, ..desk() };
    let ris = with_power(&base, dbm_to_watts(55.0));
    let bare = with_power(&SystemConfig { direct_link: true, use_ris: false, ..base }, dbm_to_watts(55.0));
    let with = estimate_pupe(&run_trials(&ris, 10, seed ^ 8)?).pupe;
    let without = estimate_pupe(&run_trials(&bare, 10, seed ^ 8)?).pupe;
    Ok(vec![Check::at_least(8, "blocked_pupe_gain_from_ris", without - with, 0.0)])
}

fn bound_checks(seed: u64) -> Result<Vec<Check>> {
    let exact = bound::p_coll(2, 1) == 0.5 && bound::p_coll(1, 100) == 0.0 && bound::p_cons(3, 1, 1.0, 0.0)? == 0.0;
    let cons_err = (bound::p_cons(2, 1, 1.0, 1.0)? - 2.0 * (-1.0f64).exp()).abs();
    let eps0 = bound::eps_lambda(0.0, 0.5, C64::new(0.3, -0.2), &[3.0, 1.0], 100, 0.1)?;
    let cfg = BoundConfig { k_a: 4, paths_per_user: vec![2; 4], realizations: 10, ..BoundConfig::default() };
    let powers: Vec<f64> = [10.0, 20.0, 30.0].iter().map(|&d| dbm_to_watts(d)).collect();
    let rows = bound::bound_sweep(&cfg, &powers, 0.9, seed)?;
    let drops = rows.windows(2).filter(|w| w[1].result.eps < w[0].result.eps).count();
    Ok(vec![
        Check::at_least(9, "bound_exact_examples", f64::from(u8::from(exact)), 1.0),
        Check::at_most(9, "bound_p_cons_error", cons_err, 2e-15),
        Check::at_most(9, "bound_eps_at_zero_lambda_error", (eps0 - 1.0).abs(), 0.0),
        Check::at_least(9, "bound_eps_decreasing_steps", drops as f64, (powers.len() - 1) as f64),
    ])
}

/// Runs every reduced check in criterion order.
pub fn run_selftest(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for part in [mgf, jdce, design, grid_probe, codec, mmse, end_to_end, direct_link, bound_checks] {
        out.extend(part(seed)?);
    }
    out.sort_by_key(|c| c.criterion);
    Ok(out)
}

pub fn write_selftest_csv<W: Write>(checks: &[Check], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SELFTEST_HEADER)?;
    for c in checks {
        w.write_record([
            c.criterion.to_string(),
            c.name.to_string(),
            format!("{:.6e}", c.value),
            format!("{:.6e}", c.threshold),
            c.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
