//! Bisects for the power at which the desk system reaches PUPE 0.1, with
//! and without genie channel knowledge.

use ris_ura::harness::{search_power, SearchOutcome, SystemConfig};
use ris_ura::numerics::{dbm_to_watts, watts_to_dbm};

fn main() -> ris_ura::Result<()> {
    let base = SystemConfig {
        bs_rows: 4,
        bs_cols: 4,
        ris_rows: 4,
        ris_cols: 4,
        active_users: 8,
        slots: 4,
        pilot_len: 128,
        pilot_bits: 8,
        trials: 40,
        ..SystemConfig::default()
    };
    for perfect_csi in [true, false] {
        let cfg = SystemConfig { perfect_csi, ..base.clone() };
        match search_power(&cfg, 0.1, 1.0, (dbm_to_watts(10.0), dbm_to_watts(60.0)))? {
            SearchOutcome::Found { power, estimate, evaluations, .. } => println!(
                "perfect_csi={perfect_csi}: {:.2} dBm, PUPE {:.3} after {evaluations} evaluations",
                watts_to_dbm(power),
                estimate.pupe
            ),
            SearchOutcome::Unreachable { high, .. } => {
                println!("perfect_csi={perfect_csi}: unreachable, PUPE {:.3} at 60 dBm", high.pupe)
            }
        }
    }
    Ok(())
}
