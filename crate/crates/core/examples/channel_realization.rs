//! Draws one frame of geometric channels with a direct link and writes the
//! path components as CSV to stdout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_ura::channel::write_paths_csv;
use ris_ura::harness::SystemConfig;

fn main() -> ris_ura::Result<()> {
    let cfg = SystemConfig { direct_link: true, ..SystemConfig::default() };
    let chan = cfg.channel_params().realize(3, &mut ChaCha8Rng::seed_from_u64(1));
    eprintln!("G is {}x{}, ‖G‖_F = {:.3e}", chan.g.nrows(), chan.g.ncols(), chan.g.norm());
    for (i, h) in chan.h.iter().enumerate() {
        eprintln!("user {i}: ‖h‖ = {:.3e}, ‖d‖ = {:.3e}", h.norm(), chan.d[i].norm());
    }
    write_paths_csv(&chan, std::io::stdout())
}
