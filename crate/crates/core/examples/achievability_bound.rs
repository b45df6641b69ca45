//! Sweeps the achievability bound over the transmit power and writes the
//! result as CSV to stdout.

use ris_ura::bound::{bound_sweep, write_bound_csv, BoundConfig};
use ris_ura::numerics::dbm_to_watts;

fn main() -> ris_ura::Result<()> {
    let k_a = 4;
    let cfg = BoundConfig { k_a, paths_per_user: vec![2; k_a], realizations: 100, ..BoundConfig::default() };
    let powers: Vec<f64> = [0.0, 10.0, 20.0, 30.0, 40.0].iter().map(|&d| dbm_to_watts(d)).collect();
    let rows = bound_sweep(&cfg, &powers, 0.9, 7)?;
    write_bound_csv(&rows, std::io::stdout())
}
