//! MMSE-SIC decoding of two users sharing a data slot with known
//! signatures. Prints the decoded pilots and the SIC iteration of each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_ura::datadetect::{candidates_from_estimates, data_phase};
use ris_ura::harness::{with_power, SystemConfig};
use ris_ura::jdce::{ChannelEstimates, PilotEstimate};
use ris_ura::numerics::{dbm_to_watts, ComplexVector};
use ris_ura::transmitter::{encode_user, gen_codebooks, random_phases, simulate_data_slot, SlotUser};

fn main() -> ris_ura::Result<()> {
    let cfg = with_power(
        &SystemConfig { bs_rows: 4, bs_cols: 4, ris_rows: 4, ris_cols: 4, pilot_len: 128, pilot_bits: 8, slots: 1, ..SystemConfig::default() },
        dbm_to_watts(45.0),
    );
    let codec = cfg.codec()?;
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let chan = cfg.channel_params().realize(2, &mut r);
    let cb = gen_codebooks(cfg.pilot_bits, cfg.preamble_len, cfg.pilot_len, cfg.ris().len(), 1, &mut r);
    let txs = (0..2)
        .map(|_| {
            let msg: Vec<u8> = (0..cfg.total_bits()).map(|_| r.random_range(0..2u8)).collect();
            encode_user(&msg, cfg.pilot_bits, &cb, &codec, 1, &mut r)
        })
        .collect::<ris_ura::Result<Vec<_>>>()?;
    let slot: Vec<SlotUser> = txs.iter().zip(&chan.h).map(|(tx, h)| SlotUser { tx, h, d: None }).collect();
    let w_cs = random_phases(cfg.ris().len(), cfg.preamble_len, &mut r);
    let y = simulate_data_slot(&slot, &chan.g, &w_cs, cfg.data_power, cfg.data_len, cfg.noise_power, &mut r)?;
    let estimates: ChannelEstimates = txs
        .iter()
        .zip(&chan.h)
        .map(|(tx, h)| (tx.pilot, PilotEstimate { h: h.clone(), d: ComplexVector::zeros(cfg.bs().len()) }))
        .collect();
    let candidates = candidates_from_estimates(&estimates, &cb, &chan.g, &w_cs, cfg.data_power, false)?;
    let out = data_phase(&y, &candidates, &codec, cfg.pilot_bits, cfg.noise_power)?;
    for d in &out.decoded {
        let sent = txs.iter().any(|t| t.message == d.message);
        println!("pilot {:>3} decoded in SIC iteration {} (matches a sent message: {sent})", d.pilot, d.iteration);
    }
    println!("{} of {} users decoded in {} iterations", out.decoded.len(), txs.len(), out.iterations);
    Ok(())
}
