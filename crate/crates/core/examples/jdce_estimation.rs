//! Joint pilot detection and channel estimation for three users sharing one
//! slot. Prints the per-user NMSE and writes the iteration trace as CSV.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_ura::harness::{with_power, SystemConfig};
use ris_ura::jdce::{jdce_run, nmse, write_trace_csv};
use ris_ura::numerics::dbm_to_watts;
use ris_ura::transmitter::{gen_codebooks, simulate_pilot_slot, SlotUser, UserTransmission};

fn main() -> ris_ura::Result<()> {
    let cfg = with_power(
        &SystemConfig { bs_rows: 4, bs_cols: 4, ris_rows: 4, ris_cols: 4, pilot_len: 128, pilot_bits: 8, active_users: 3, slots: 1, ..SystemConfig::default() },
        dbm_to_watts(50.0),
    );
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let chan = cfg.channel_params().realize(3, &mut r);
    let cb = gen_codebooks(cfg.pilot_bits, cfg.preamble_len, cfg.pilot_len, cfg.ris().len(), 1, &mut r);
    let users: Vec<UserTransmission> = [5usize, 77, 200]
        .iter()
        .map(|&pilot| UserTransmission { message: Vec::new(), slot: 0, pilot, preamble: cb.preamble(pilot), symbols: Vec::new() })
        .collect();
    let slot: Vec<SlotUser> = users.iter().zip(&chan.h).map(|(tx, h)| SlotUser { tx, h, d: None }).collect();
    let w = &cb.pilot_phases[0];
    let y = simulate_pilot_slot(&slot, &chan.g, w, &cb.pilots, cfg.pilot_power, cfg.noise_power, &mut r)?;
    let out = jdce_run(&y, &cb.pilots, w, &chan.g, &cfg.jdce_config())?;
    for (u, h) in users.iter().zip(&chan.h) {
        match out.estimates.get(&u.pilot) {
            Some(e) => eprintln!("pilot {:>3}: NMSE {:.2} dB", u.pilot, 10.0 * nmse(&e.h, h).log10()),
            None => eprintln!("pilot {:>3}: missed", u.pilot),
        }
    }
    write_trace_csv(&out.trace, std::io::stdout())
}
