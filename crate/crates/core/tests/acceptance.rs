//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr.

use std::io::Write;
use std::time::Instant;

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ris_ura::bound::{self, BoundConfig};
use ris_ura::channel::{assemble_ris_bs, assemble_user_ris, PathComponent, Upa};
use ris_ura::codec::{Codec, CrcSpec};
use ris_ura::datadetect::mmse_detect;
use ris_ura::harness::{self, estimate_pupe, run_trials, with_power, SearchOutcome, SystemConfig};
use ris_ura::jdce::{jdce_run, nmse, JdceConfig};
use ris_ura::numerics::{dbm_to_watts, hermitian_part, linear_to_db, watts_to_dbm, ComplexMatrix, ComplexVector, C64};
use ris_ura::risdesign::{aevd, asdr, DesignProblem, DesignSettings, DesignUser, Strategy};
use ris_ura::transmitter::gen_codebooks;

fn report(id: usize, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} [{verdict}] {name}: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cn<R: Rng>(var: f64, r: &mut R) -> C64 {
    let s = (0.5 * var).sqrt();
    C64::new(s * r.sample::<f64, _>(StandardNormal), s * r.sample::<f64, _>(StandardNormal))
}

fn cn_matrix<R: Rng>(rows: usize, cols: usize, var: f64, r: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| cn(var, r))
}

fn cn_vector<R: Rng>(len: usize, var: f64, r: &mut R) -> ComplexVector {
    ComplexVector::from_fn(len, |_, _| cn(var, r))
}

fn max_abs_eig(m: &ComplexMatrix) -> f64 {
    m.clone().symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Desk system shared by the end-to-end criteria.
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
        data_len: 256,
        ..SystemConfig::default()
    }
}

#[test]
fn c01_mgf_monte_carlo() {
    let start = Instant::now();
    let mut r = rng(101);
    let draws = 1_000_000;
    let mut worst: f64 = 0.0;
    for inst in 0..10 {
        let k = 1 + inst % 4;
        let x = cn_matrix(k, k, 1.0, &mut r);
        let a = hermitian_part(&(&x * x.adjoint() / C64::from(k as f64) + ComplexMatrix::identity(k, k) * C64::from(0.2)));
        let y = cn_matrix(k, k, 1.0, &mut r);
        let mut b = hermitian_part(&(&y + y.adjoint()));
        let scale = 0.15 / (max_abs_eig(&a) * max_abs_eig(&b));
        b *= C64::from(scale);
        let rv = cn_vector(k, 0.3 / max_abs_eig(&a).sqrt(), &mut r);
        let want = bound::lemma1_rhs(&a, &b, &rv).unwrap();

        let l = Cholesky::new(a.clone()).unwrap().l();
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
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 3.0 && secs <= 120.0;
    report(1, "Gaussian MGF closed form vs Monte Carlo", pass, format!("max |z| = {worst:.2} over 10 instances, {secs:.1} s"));
    assert!(pass);
}

#[test]
fn c02_jdce_planted_single_path() {
    let start = Instant::now();
    let mut r = rng(102);
    let (bs, ris) = (Upa::new(4, 4, 0.5), Upa::new(4, 4, 0.5));
    let (bs_grid, ris_grid) = (bs.grid(), ris.grid());
    let (n_p, pilot_bits, trials) = (128, 8, 100);
    let mut hits = 0;
    let mut nmse_sum = 0.0;
    for _ in 0..trials {
        let g_path = PathComponent {
            gain: cn(1.0, &mut r),
            arrival: bs_grid[r.random_range(0..bs_grid.len())],
            departure: Some(ris_grid[r.random_range(0..ris_grid.len())]),
            distance: 100.0,
        };
        let g = assemble_ris_bs(&[g_path], &bs, &ris);
        let cell = r.random_range(0..ris_grid.len());
        let h_path = PathComponent { gain: cn(1.0, &mut r), arrival: ris_grid[cell], departure: None, distance: 250.0 };
        let h = assemble_user_ris(&[h_path], &ris);
        let cb = gen_codebooks(pilot_bits, 4, n_p, ris.len(), 1, &mut r);
        let pilot = r.random_range(0..cb.num_pilots());
        let w = &cb.pilot_phases[0];

        let mut clean = &g * ComplexMatrix::from_diagonal(&h) * w;
        for (c, mut col) in clean.column_iter_mut().enumerate() {
            col *= cb.pilots[(pilot, c)];
        }
        let sigma2 = clean.norm_squared() / clean.len() as f64 / 100.0;
        let y = clean + cn_matrix(bs.len(), n_p, sigma2, &mut r);
        let cfg = JdceConfig { bs, ris, p_p: 1.0, sigma2, alpha1: 0.01, t_max: JdceConfig::iteration_cap(1, 1.0, 1) };
        let out = jdce_run(&y, &cb.pilots, w, &g, &cfg).unwrap();
        let first = out.detections.first();
        let correct = first.is_some_and(|d| d.pilot == pilot && d.grid_index.0 * ris.n2 + d.grid_index.1 == cell);
        hits += usize::from(correct);
        nmse_sum += out.estimates.get(&pilot).map_or(1.0, |e| nmse(&e.h, &h));
    }
    let rate = hits as f64 / trials as f64;
    let nmse_db = linear_to_db(nmse_sum / trials as f64);
    let secs = start.elapsed().as_secs_f64();
    let pass = rate >= 0.99 && nmse_db <= -20.0 && secs <= 300.0;
    report(2, "JDCE planted single path", pass, format!("detection rate {rate:.2}, NMSE {nmse_db:.1} dB, {secs:.1} s"));
    assert!(pass);
}

/// Perfect-CSI design problems of one desk frame, one per non-empty slot.
fn frame_problems<R: Rng>(cfg: &SystemConfig, users: usize, r: &mut R) -> Vec<DesignProblem> {
    let chan = cfg.channel_params().realize(users, r);
    let cb = gen_codebooks(cfg.pilot_bits, cfg.preamble_len, cfg.pilot_len, cfg.ris().len(), cfg.slots, r);
    let assignment: Vec<(usize, usize)> =
        (0..users).map(|_| (r.random_range(0..cfg.slots), r.random_range(0..cb.num_pilots()))).collect();
    let preambles: Vec<ComplexVector> = assignment.iter().map(|&(_, p)| cb.preamble(p)).collect();
    (0..cfg.slots)
        .filter_map(|slot| {
            let members: Vec<DesignUser> = (0..users)
                .filter(|&i| assignment[i].0 == slot)
                .map(|i| DesignUser { h: &chan.h[i], d: None, b: &preambles[i] })
                .collect();
            (!members.is_empty()).then(|| {
                DesignProblem::from_channels(
                    &chan.g,
                    &members,
                    Strategy::C0,
                    cfg.preamble_len,
                    cfg.data_power,
                    cfg.noise_power,
                    cfg.design_settings(),
                )
                .unwrap()
            })
        })
        .collect()
}

const DESIGN_POWER_DBM: f64 = 40.0;
/// Single-user comparison point: optimal proxies sit between 1e-4 and 1.
const SINGLE_USER_POWER_DBM: f64 = 25.0;

#[test]
fn c03_design_beats_random_phases() {
    let cfg = with_power(&SystemConfig { active_users: 4, slots: 2, ..desk() }, dbm_to_watts(DESIGN_POWER_DBM));
    let mut wins = 0;
    let (mut aevd_total, mut random_total) = (0.0, 0.0);
    for t in 0..100 {
        let mut r = rng(3_000 + t);
        let problems = frame_problems(&cfg, 4, &mut r);
        let (mut a, mut b) = (0.0, 0.0);
        for p in &problems {
            a += aevd(p, &mut r).unwrap().cost;
            b += p.cost(&p.random_phases(&mut r)).unwrap();
        }
        wins += usize::from(a < b);
        aevd_total += a;
        random_total += b;
    }

    let single = with_power(&SystemConfig { active_users: 1, slots: 1, ..cfg.clone() }, dbm_to_watts(SINGLE_USER_POWER_DBM));
    let (mut asdr_total, mut aevd_single) = (0.0, 0.0);
    let mut within = 0;
    let cases = 20;
    for t in 0..cases {
        let mut r = rng(3_500 + t);
        let p = &frame_problems(&single, 1, &mut r)[0];
        let s = asdr(p, &mut r).unwrap().cost;
        let e = aevd(p, &mut r).unwrap().cost;
        within += usize::from(s <= 1.2 * e);
        asdr_total += s;
        aevd_single += e;
    }
    let pass = wins >= 95 && asdr_total <= 1.2 * aevd_single;
    report(
        3,
        "RIS design gain",
        pass,
        format!(
            "AEVD < random in {wins}/100 (mean ΣF {:.3e} vs {:.3e}); single-user ASDR/AEVD mean cost ratio {:.3}, per-problem within 20% in {within}/{cases}",
            aevd_total / 100.0,
            random_total / 100.0,
            asdr_total / aevd_single
        ),
    );
    assert!(pass);
}

#[test]
fn c04_asdr_matches_phase_grid_optimum() {
    let mut r = rng(104);
    let settings = DesignSettings::default();
    let grid = 64;
    let mut hits = 0;
    for _ in 0..100 {
        let e = cn_matrix(64, 2, 1.0, &mut r);
        let scale = 0.004;
        let p = DesignProblem::new(vec![e * C64::from(scale)], None, 1.0, settings).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..grid {
            for j in 0..grid {
                let step = std::f64::consts::TAU / grid as f64;
                let w = ComplexVector::from_vec(vec![C64::from_polar(1.0, i as f64 * step), C64::from_polar(1.0, j as f64 * step)]);
                best = best.min(p.cost(&w).unwrap());
            }
        }
        let got = asdr(&p, &mut r).unwrap().cost;
        hits += usize::from(got <= 1.05 * best);
    }
    let pass = hits >= 90;
    report(4, "ASDR vs 64x64 phase grid (N' = 2)", pass, format!("within 5% in {hits}/100"));
    assert!(pass);
}

#[test]
fn c05_codec_identity_and_bler() {
    let start = Instant::now();
    let codec = Codec::new(256, 90, CrcSpec::new(16, 0x1021).unwrap(), 32, 2.0).unwrap();
    let mut r = rng(105);
    let bits = |r: &mut ChaCha8Rng| -> Vec<u8> { (0..90).map(|_| r.random_range(0..2u8)).collect() };
    let mut identity = 0;
    for _ in 0..1_000 {
        let msg = bits(&mut r);
        let llr: Vec<f64> = codec.modulate(&msg).unwrap().iter().map(|s| 50.0 * s).collect();
        identity += usize::from(codec.decode(&llr).unwrap().as_deref() == Some(&msg[..]));
    }
    let rate = 106.0 / 256.0;
    let sigma2 = 1.0 / (2.0 * 10f64.powf(0.6) * rate);
    let blocks = 10_000;
    let mut errors = 0;
    for _ in 0..blocks {
        let msg = bits(&mut r);
        let llr: Vec<f64> = codec
            .modulate(&msg)
            .unwrap()
            .iter()
            .map(|&s| 2.0 * (s + sigma2.sqrt() * r.sample::<f64, _>(StandardNormal)) / sigma2)
            .collect();
        errors += usize::from(codec.decode(&llr).unwrap().as_deref() != Some(&msg[..]));
    }
    let bler = errors as f64 / blocks as f64;
    let pass = identity == 1_000 && bler <= 1e-2;
    report(
        5,
        "polar/CRC codec",
        pass,
        format!("identity {identity}/1000, BLER {bler:.1e} at 6 dB over {blocks} blocks, {:.1} s", start.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn c06_mmse_error_variances() {
    let mut r = rng(106);
    let mut in_range = 0;
    for _ in 0..100 {
        let k = r.random_range(1..=8);
        let t = cn_matrix(32, k, r.random_range(0.01..10.0), &mut r);
        let y = cn_vector(32, 1.0, &mut r);
        let (_, delta) = mmse_detect(&y, &t, r.random_range(0.01..10.0)).unwrap();
        in_range += usize::from(delta.iter().all(|&d| d > 0.0 && d < 1.0));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = cn_matrix(32, 1, r.random_range(0.01..10.0), &mut r);
        let sigma2 = r.random_range(0.01..10.0);
        let v = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let y = t.column(0) * C64::from(v);
        let (est, delta) = mmse_detect(&y, &t, sigma2).unwrap();
        let e = t.norm_squared();
        let gain = e / (e + sigma2);
        worst = worst.max((est[0] - C64::from(gain * v)).norm()).max((delta[0] - (1.0 - gain)).abs());
    }
    let pass = in_range == 100 && worst <= 1e-10;
    report(6, "MMSE error variances", pass, format!("δ in (0,1) on {in_range}/100, closed-form error {worst:.1e}"));
    assert!(pass);
}

/// True when no step of the sweep is a significant increase.
fn nonincreasing(rows: &[harness::SweepRow]) -> bool {
    rows.windows(2).all(|w| {
        let (a, b) = (&w[0].estimate, &w[1].estimate);
        let half = |e: &harness::PupeEstimate| 0.5 * (e.ci_high - e.ci_low);
        b.pupe <= a.pupe + half(a).max(half(b))
    })
}

fn describe(outcome: &SearchOutcome) -> String {
    match outcome {
        SearchOutcome::Found { power, estimate, evaluations, .. } => format!(
            "{:.2} dBm (PUPE {:.3}, CI [{:.3}, {:.3}], {evaluations} evaluations)",
            watts_to_dbm(*power),
            estimate.pupe,
            estimate.ci_low,
            estimate.ci_high
        ),
        SearchOutcome::Unreachable { high, .. } => format!("unreachable (PUPE {:.3} at bracket top)", high.pupe),
    }
}

#[test]
fn c07_end_to_end_desk_pupe() {
    let start = Instant::now();
    let cfg = SystemConfig { trials: 200, seed: 7, ..desk() };
    let outcome = harness::search_power(&cfg, 0.1, 1.0, (dbm_to_watts(30.0), dbm_to_watts(60.0))).unwrap();
    let found = matches!(&outcome, SearchOutcome::Found { estimate, .. } if estimate.pupe <= 0.1);
    let powers: Vec<f64> = [35.0, 40.0, 45.0, 50.0, 55.0].iter().map(|&d| dbm_to_watts(d)).collect();
    let rows = harness::power_sweep(&cfg, &powers).unwrap();
    let trend = nonincreasing(&rows);
    let curve: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.estimate.pupe)).collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = found && trend && secs <= 3_600.0;
    report(
        7,
        "end-to-end desk PUPE",
        pass,
        format!("search: {}; sweep 35..55 dBm PUPE [{}], {secs:.0} s", describe(&outcome), curve.join(", ")),
    );
    assert!(pass);
}

/// Single user-RIS and user-BS paths. At `α = ∞` the user-BS link is fully
/// obstructed, so the RIS system runs as the blocked-link system while the
/// system without RIS keeps the direct-link receiver.
fn direct_link_cfg(alpha: f64, use_ris: bool) -> SystemConfig {
    SystemConfig {
        direct_link: alpha.is_finite() || !use_ris,
        alpha_user_bs: alpha,
        use_ris,
        user_ris_paths: 1,
        user_bs_paths: 1,
        trials: 100,
        seed: 8,
        ..desk()
    }
}

#[test]
fn c08_direct_link_ris_gain() {
    let start = Instant::now();
    let bracket = (dbm_to_watts(0.0), dbm_to_watts(70.0));
    let mut required = Vec::new();
    let mut lines = Vec::new();
    for alpha in [3.5, f64::INFINITY] {
        let mut pair = Vec::new();
        for use_ris in [true, false] {
            let outcome = harness::search_power(&direct_link_cfg(alpha, use_ris), 0.1, 1.0, bracket).unwrap();
            lines.push(format!("α={alpha} {}: {}", if use_ris { "RIS" } else { "no RIS" }, describe(&outcome)));
            pair.push(outcome.power().map_or(f64::INFINITY, watts_to_dbm));
        }
        required.push(pair);
    }
    let gap = |p: &Vec<f64>| if p[1].is_infinite() && p[0].is_finite() { f64::INFINITY } else { p[1] - p[0] };
    let pass = required.iter().all(|p| p[0] <= p[1]) && required[1][0].is_finite() && gap(&required[1]) > gap(&required[0]);
    lines.push(format!("{:.0} s", start.elapsed().as_secs_f64()));
    report(8, "direct link: RIS vs no RIS", pass, lines.join("; "));
    assert!(pass);
}

#[test]
fn c09_bound_closed_forms_and_trend() {
    let mut ok = Vec::new();
    ok.push(bound::p_coll(1, 100) == 0.0);
    ok.push(bound::p_coll(2, 1) == 0.5);
    ok.push(bound::p_coll(10, 10) == 45.0 / 1024.0);
    ok.push((bound::p_cons(2, 1, 1.0, 1.0).unwrap() - 2.0 * (-1.0f64).exp()).abs() <= 2e-15);
    ok.push(bound::p_cons(3, 1, 1.0, 0.0).unwrap() == 0.0);
    ok.push(bound::p_cons(1_000, 1, 1.0, 1.0).unwrap() == 1.0);
    let closed = ok.iter().all(|&b| b);

    let mut r = rng(109);
    let mut eps_one = true;
    for _ in 0..50 {
        let sg: Vec<f64> = (0..4).map(|_| r.random_range(0.0..5.0)).collect();
        let e = bound::eps_lambda(0.0, r.random_range(0.0..2.0), cn(1.0, &mut r), &sg, 100, 0.5).unwrap();
        eps_one &= e == 1.0;
    }

    let cfg = BoundConfig { k_a: 4, paths_per_user: vec![2; 4], realizations: 100, ..BoundConfig::default() };
    let powers: Vec<f64> = [10.0, 15.0, 20.0, 25.0, 30.0].iter().map(|&d| dbm_to_watts(d)).collect();
    let rows = bound::bound_sweep(&cfg, &powers, 0.9, 11).unwrap();
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    let in_range = rows.iter().all(|b| unit(b.result.p_coll) && unit(b.result.p_cons) && unit(b.result.p_mis) && unit(b.result.eps));
    let eps: Vec<f64> = rows.iter().map(|b| b.result.eps).collect();
    let decreasing = eps.windows(2).all(|w| w[1] < w[0]);
    let pass = closed && eps_one && in_range && decreasing;
    let shown: Vec<String> = eps.iter().map(|e| format!("{e:.3e}")).collect();
    report(
        9,
        "bound closed forms and trend",
        pass,
        format!("closed forms {closed}, ε(λ=0)=1 {eps_one}, in [0,1] {in_range}, ε over 10..30 dBm [{}]", shown.join(", ")),
    );
    assert!(pass);
}

#[test]
fn c10_selftest_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_ris-ura"))
            .args(["selftest", "--seed", "5", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.code().is_some_and(|c| c <= 1), "{status}");
        std::fs::read(path).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    let pass = !a.is_empty() && a == b;
    report(10, "selftest determinism", pass, format!("{} bytes, identical {}", a.len(), a == b));
    assert!(pass);
}

#[test]
fn desk_trials_are_reproducible() {
    let cfg = SystemConfig { trials: 3, ..desk() };
    let cfg = with_power(&cfg, dbm_to_watts(45.0));
    let a = estimate_pupe(&run_trials(&cfg, 3, 1).unwrap());
    let b = estimate_pupe(&run_trials(&cfg, 3, 1).unwrap());
    assert_eq!(a, b);
}
