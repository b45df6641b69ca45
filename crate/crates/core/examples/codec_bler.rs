//! Block error rate of the CRC-aided polar code (n = 256, 90 + 16 bits) on
//! BPSK over AWGN for a few list sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ris_ura::codec::{Codec, CrcSpec};

fn main() -> ris_ura::Result<()> {
    let blocks = 500;
    println!("list_size,eb_n0_db,bler");
    for list in [1, 8, 32] {
        let codec = Codec::new(256, 90, CrcSpec::new(16, 0x1021)?, list, 2.0)?;
        let rate = 106.0 / 256.0;
        for eb_n0_db in [1.0, 2.0, 3.0] {
            let mut r = ChaCha8Rng::seed_from_u64(11);
            let sigma2 = 1.0 / (2.0 * 10f64.powf(eb_n0_db / 10.0) * rate);
            let mut errors = 0;
            for _ in 0..blocks {
                let msg: Vec<u8> = (0..90).map(|_| r.random_range(0..2u8)).collect();
                let llr: Vec<f64> = codec
                    .modulate(&msg)?
                    .iter()
                    .map(|&s| 2.0 * (s + sigma2.sqrt() * r.sample::<f64, _>(StandardNormal)) / sigma2)
                    .collect();
                errors += usize::from(codec.decode(&llr)?.as_deref() != Some(&msg[..]));
            }
            println!("{list},{eb_n0_db},{}", errors as f64 / blocks as f64);
        }
    }
    Ok(())
}
