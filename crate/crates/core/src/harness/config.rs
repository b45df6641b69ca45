//! Scenario configuration stored as TOML. Every key is optional; missing keys
//! take the defaults below and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bound::BoundConfig;
use crate::channel::{ChannelParams, LinkSpec, RisBsModel, Upa};
use crate::codec::{Codec, CrcSpec};
use crate::error::{Error, Result};
use crate::jdce::JdceConfig;
use crate::numerics::dbm_to_watts;
use crate::risdesign::sdp::SdpSettings;
use crate::risdesign::{DesignAlgorithm, DesignSettings, RateParams, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub bs_rows: usize,
    pub bs_cols: usize,
    pub ris_rows: usize,
    pub ris_cols: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,

    pub active_users: usize,
    pub slots: usize,
    pub pilot_len: usize,
    pub preamble_len: usize,
    pub data_len: usize,
    pub pilot_bits: usize,
    pub payload_bits: usize,
    pub crc_bits: u32,
    pub crc_poly: u64,

    /// Watts.
    pub pilot_power: f64,
    /// Watts.
    pub data_power: f64,
    /// Watts.
    pub noise_power: f64,

    pub ris_bs_paths: usize,
    pub user_ris_paths: usize,
    pub user_bs_paths: usize,
    pub ris_bs_model: RisBsModel,
    pub l0_ris_bs: f64,
    pub l0_user_ris: f64,
    pub l0_user_bs: f64,
    pub alpha_ris_bs: f64,
    pub alpha_user_ris: f64,
    /// `inf` blocks the link.
    pub alpha_user_bs: f64,
    pub ris_bs_distance: f64,
    pub user_ris_distance: [f64; 2],
    pub user_bs_distance: [f64; 2],
    pub direct_link: bool,

    pub ris_strategy: Strategy,
    pub design_algorithm: DesignAlgorithm,
    pub alpha1: f64,
    pub alpha_bar: f64,
    pub alpha_bar_direct: f64,
    pub alpha2: f64,
    pub t_iter: usize,
    pub t_sdr: usize,
    /// JDCE iteration cap; `⌈4 K_a L̄ / S⌉` when absent.
    pub t_max: Option<usize>,

    pub list_size: usize,
    pub design_snr_db: f64,

    /// Hand the true channels to the receiver instead of running JDCE.
    pub perfect_csi: bool,
    /// When false the receiver ignores the RIS: `W_cs` is random and only
    /// the direct estimates feed the data detector.
    pub use_ris: bool,

    pub seed: u64,
    pub trials: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            bs_rows: 8,
            bs_cols: 8,
            ris_rows: 8,
            ris_cols: 8,
            element_spacing: 0.5,
            active_users: 20,
            slots: 4,
            pilot_len: 440,
            preamble_len: 10,
            data_len: 256,
            pilot_bits: 10,
            payload_bits: 90,
            crc_bits: 16,
            crc_poly: 0x1021,
            pilot_power: 0.1,
            data_power: 0.1,
            noise_power: dbm_to_watts(-95.0),
            ris_bs_paths: 2,
            user_ris_paths: 2,
            user_bs_paths: 1,
            ris_bs_model: RisBsModel::SalehValenzuela,
            l0_ris_bs: 1e-3,
            l0_user_ris: 1e-3,
            l0_user_bs: 1e-3,
            alpha_ris_bs: 2.3,
            alpha_user_ris: 2.3,
            alpha_user_bs: 3.5,
            ris_bs_distance: 100.0,
            user_ris_distance: [200.0, 300.0],
            user_bs_distance: [250.0, 350.0],
            direct_link: false,
            ris_strategy: Strategy::C0,
            design_algorithm: DesignAlgorithm::Aevd,
            alpha1: 0.01,
            alpha_bar: 0.53,
            alpha_bar_direct: 2.0,
            alpha2: 1e-3,
            t_iter: 10,
            t_sdr: 50,
            t_max: None,
            list_size: 32,
            design_snr_db: 2.0,
            perfect_csi: false,
            use_ris: true,
            seed: 1,
            trials: 100,
        }
    }
}

fn field_err(field: &str, msg: &str) -> Error {
    Error::Config(format!("field `{field}` {msg}"))
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bs_rows", self.bs_rows),
            ("bs_cols", self.bs_cols),
            ("ris_rows", self.ris_rows),
            ("ris_cols", self.ris_cols),
            ("slots", self.slots),
            ("pilot_len", self.pilot_len),
            ("preamble_len", self.preamble_len),
            ("data_len", self.data_len),
            ("list_size", self.list_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(field_err(name, "must be >= 1"));
            }
        }
        if !self.data_len.is_power_of_two() {
            return Err(field_err("data_len", "must be a power of two"));
        }
        if self.pilot_bits > 20 {
            return Err(field_err("pilot_bits", "must be <= 20"));
        }
        if self.payload_bits + self.crc_bits as usize > self.data_len {
            return Err(field_err("payload_bits", "plus crc_bits exceeds data_len"));
        }
        CrcSpec::new(self.crc_bits, self.crc_poly).map_err(|_| field_err("crc_poly", "does not fit in crc_bits"))?;
        let nonneg = [
            ("pilot_power", self.pilot_power),
            ("data_power", self.data_power),
            ("l0_ris_bs", self.l0_ris_bs),
            ("l0_user_ris", self.l0_user_ris),
            ("l0_user_bs", self.l0_user_bs),
            ("alpha_ris_bs", self.alpha_ris_bs),
            ("alpha_user_ris", self.alpha_user_ris),
            ("alpha_user_bs", self.alpha_user_bs),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(field_err(name, "must be >= 0"));
            }
        }
        if !(self.noise_power > 0.0) {
            return Err(field_err("noise_power", "must be > 0"));
        }
        if !(self.element_spacing > 0.0) {
            return Err(field_err("element_spacing", "must be > 0"));
        }
        if !(self.alpha_bar > 0.0) {
            return Err(field_err("alpha_bar", "must be > 0"));
        }
        if !(self.alpha_bar_direct > 0.0) {
            return Err(field_err("alpha_bar_direct", "must be > 0"));
        }
        if !(self.ris_bs_distance > 0.0) {
            return Err(field_err("ris_bs_distance", "must be > 0"));
        }
        for (name, [lo, hi]) in [("user_ris_distance", self.user_ris_distance), ("user_bs_distance", self.user_bs_distance)] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(field_err(name, "must satisfy 0 < lo <= hi"));
            }
        }
        if self.t_max == Some(0) {
            return Err(field_err("t_max", "must be >= 1"));
        }
        if !self.use_ris && !self.direct_link {
            return Err(field_err("use_ris", "can only be false with direct_link = true"));
        }
        Ok(())
    }

    pub fn bs(&self) -> Upa {
        Upa::new(self.bs_rows, self.bs_cols, self.element_spacing)
    }

    pub fn ris(&self) -> Upa {
        Upa::new(self.ris_rows, self.ris_cols, self.element_spacing)
    }

    /// `B = B_p + B_c`
    pub fn total_bits(&self) -> usize {
        self.pilot_bits + self.payload_bits
    }

    /// `n_T = S·n_p + S·n_s·n_d`
    pub fn total_channel_uses(&self) -> usize {
        self.slots * self.pilot_len + self.slots * self.preamble_len * self.data_len
    }

    pub fn channel_params(&self) -> ChannelParams {
        ChannelParams {
            bs: self.bs(),
            ris: self.ris(),
            ris_bs: LinkSpec {
                paths: self.ris_bs_paths,
                l0: self.l0_ris_bs,
                alpha: self.alpha_ris_bs,
                distance: (self.ris_bs_distance, self.ris_bs_distance),
            },
            ris_bs_model: self.ris_bs_model,
            user_ris: LinkSpec {
                paths: self.user_ris_paths,
                l0: self.l0_user_ris,
                alpha: self.alpha_user_ris,
                distance: (self.user_ris_distance[0], self.user_ris_distance[1]),
            },
            user_bs: self.direct_link.then_some(LinkSpec {
                paths: self.user_bs_paths,
                l0: self.l0_user_bs,
                alpha: self.alpha_user_bs,
                distance: (self.user_bs_distance[0], self.user_bs_distance[1]),
            }),
        }
    }

    pub fn codec(&self) -> Result<Codec> {
        let crc = CrcSpec::new(self.crc_bits, self.crc_poly)?;
        Codec::new(self.data_len, self.payload_bits, crc, self.list_size, self.design_snr_db)
    }

    pub fn jdce_config(&self) -> JdceConfig {
        let direct = if self.direct_link { self.user_bs_paths } else { 0 };
        let cap = JdceConfig::iteration_cap(self.active_users, (self.user_ris_paths + direct) as f64, self.slots);
        JdceConfig {
            bs: self.bs(),
            ris: self.ris(),
            p_p: self.pilot_power,
            sigma2: self.noise_power,
            alpha1: self.alpha1,
            t_max: self.t_max.unwrap_or(cap),
        }
    }

    /// Bound inputs for this scenario with `P′ = ratio·P_c`.
    pub fn bound_config(&self, ratio: f64, realizations: usize) -> BoundConfig {
        BoundConfig {
            k_a: self.active_users,
            bits: self.total_bits() as u32,
            n: self.total_channel_uses(),
            power: self.data_power,
            p_prime: ratio * self.data_power,
            sigma2: self.noise_power,
            paths_per_user: vec![self.user_ris_paths; self.active_users],
            channel: self.channel_params(),
            realizations,
            ..BoundConfig::default()
        }
    }

    pub fn design_settings(&self) -> DesignSettings {
        DesignSettings {
            alpha_bar: if self.direct_link { self.alpha_bar_direct } else { self.alpha_bar },
            t_iter: self.t_iter,
            t_sdr: self.t_sdr,
            alpha2: self.alpha2,
            rate: RateParams {
                payload_bits: self.payload_bits,
                crc_bits: self.crc_bits as usize,
                n_d: self.data_len,
            },
            sdp: SdpSettings::default(),
        }
    }

    /// Applies a `key=value` override, with the value parsed as a TOML value.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()?).map_err(|e| Error::Config(e.to_string()))?;
        let key = key.trim();
        let parsed: toml::Value = match format!("v = {}", value.trim()).parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").unwrap(),
            Err(_) => toml::Value::String(value.trim().to_string()),
        };
        table.insert(key.to_string(), parsed);
        *self = Self::from_toml_str(&toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?)?;
        Ok(())
    }
}
