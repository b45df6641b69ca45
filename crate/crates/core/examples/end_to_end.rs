//! Full frames on a 4×4 desk system: PUPE over a short power sweep, written
//! as CSV to stdout.

use ris_ura::harness::{power_sweep, write_sweep_csv, SystemConfig};
use ris_ura::numerics::dbm_to_watts;

fn main() -> ris_ura::Result<()> {
    let cfg = SystemConfig {
        bs_rows: 4,
        bs_cols: 4,
        ris_rows: 4,
        ris_cols: 4,
        active_users: 8,
        slots: 4,
        pilot_len: 128,
        pilot_bits: 8,
        trials: 20,
        ..SystemConfig::default()
    };
    let powers: Vec<f64> = [40.0, 45.0, 50.0].iter().map(|&d| dbm_to_watts(d)).collect();
    write_sweep_csv(&power_sweep(&cfg, &powers)?, std::io::stdout())
}
