//! Response of an EV charger to a power command.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseShape {
    /// Drawn power falls short of the command by up to the bound.
    OneSided,
    /// Drawn power is within the bound of the command either way.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvPlantModel {
    /// Tracking noise bound in kW.
    pub noise_kw: f64,
    pub noise_shape: NoiseShape,
    /// State of charge above which the battery limits power.
    pub taper_soc: Option<f64>,
    /// Lowest power the taper cuts down to.
    pub taper_floor_kw: f64,
}

impl Default for EvPlantModel {
    fn default() -> Self {
        EvPlantModel {
            noise_kw: 0.0,
            noise_shape: NoiseShape::OneSided,
            taper_soc: None,
            taper_floor_kw: 1.4,
        }
    }
}

impl EvPlantModel {
    pub fn ideal() -> Self {
        EvPlantModel::default()
    }

    pub fn with_taper(mut self, soc: f64) -> Self {
        self.taper_soc = Some(soc);
        self
    }

    pub fn with_noise(mut self, noise_kw: f64, shape: NoiseShape) -> Self {
        self.noise_kw = noise_kw;
        self.noise_shape = shape;
        self
    }

    /// Power the battery accepts at `soc` with charger rating `max_rate_kw`.
    pub fn power_limit(&self, max_rate_kw: f64, soc: f64) -> f64 {
        match self.taper_soc {
            Some(t) if soc > t && t < 1.0 => {
                let linear = max_rate_kw * (1.0 - soc).max(0.0) / (1.0 - t);
                linear.max(self.taper_floor_kw).min(max_rate_kw)
            }
            _ => max_rate_kw,
        }
    }

    /// Drawn kW for a command. Never negative, never above the charger
    /// rating, and zero whenever the command is zero. `needed_kw` is the
    /// power that would finish the charge within this period.
    pub fn draw<R: Rng + ?Sized>(&self, command_kw: f64, max_rate_kw: f64, soc: f64, needed_kw: f64, rng: &mut R) -> f64 {
        if command_kw <= 0.0 {
            return 0.0;
        }
        let noisy = if self.noise_kw > 0.0 {
            let u: f64 = rng.random();
            match self.noise_shape {
                NoiseShape::OneSided => command_kw - self.noise_kw * u,
                NoiseShape::Symmetric => command_kw + self.noise_kw * (2.0 * u - 1.0),
            }
        } else {
            command_kw
        };
        noisy
            .min(self.power_limit(max_rate_kw, soc))
            .min(needed_kw.max(0.0))
            .clamp(0.0, max_rate_kw)
    }
}
