//! RIS phase design for one slot with perfect CSI: compares AEVD, ASDR and
//! random phases, then writes the AEVD convergence trace as CSV.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_ura::harness::{with_power, SystemConfig};
use ris_ura::numerics::dbm_to_watts;
use ris_ura::risdesign::{design, write_convergence_csv, DesignAlgorithm, DesignProblem, DesignUser, Strategy};
use ris_ura::transmitter::gen_codebooks;

fn main() -> ris_ura::Result<()> {
    let cfg = with_power(
        &SystemConfig { bs_rows: 4, bs_cols: 4, ris_rows: 4, ris_cols: 4, ..SystemConfig::default() },
        dbm_to_watts(25.0),
    );
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let chan = cfg.channel_params().realize(3, &mut r);
    let cb = gen_codebooks(cfg.pilot_bits, cfg.preamble_len, cfg.pilot_len, cfg.ris().len(), 1, &mut r);
    let preambles: Vec<_> = [1usize, 2, 3].iter().map(|&k| cb.preamble(k)).collect();
    let users: Vec<DesignUser> = chan.h.iter().zip(&preambles).map(|(h, b)| DesignUser { h, d: None, b }).collect();
    let problem = DesignProblem::from_channels(
        &chan.g,
        &users,
        Strategy::C0,
        cfg.preamble_len,
        cfg.data_power,
        cfg.noise_power,
        cfg.design_settings(),
    )?;
    let mut trace = Vec::new();
    for algorithm in [DesignAlgorithm::Random, DesignAlgorithm::Asdr, DesignAlgorithm::Aevd] {
        let out = design(&problem, algorithm, &mut r)?;
        eprintln!("{algorithm:?}: sum error proxy {:.3e}, SINR terms {:.3?}", out.cost, problem.sinr_terms(&out.phases.w)?);
        trace = out.trace;
    }
    write_convergence_csv(&trace, std::io::stdout())
}
