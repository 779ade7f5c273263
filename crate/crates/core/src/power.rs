//! Power budget and battery endurance of the backpack.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Draw of one backpack component: `active_mw` while on, `sleep_mw`
/// otherwise, on for a `duty` share of the time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerComponent {
    pub name: String,
    pub active_mw: f64,
    #[serde(default)]
    pub sleep_mw: f64,
    pub duty: f64,
}

impl PowerComponent {
    pub fn new(name: &str, active_mw: f64, sleep_mw: f64, duty: f64) -> Self {
        PowerComponent {
            name: name.into(),
            active_mw,
            sleep_mw,
            duty,
        }
    }

    pub fn average_mw(&self) -> f64 {
        self.duty * self.active_mw + (1.0 - self.duty) * self.sleep_mw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Battery {
    pub capacity_mah: f64,
    /// Nominal voltage; 3.7 V for a single Li-Po cell.
    pub voltage_v: f64,
}

impl Battery {
    pub fn lipo_120mah() -> Self {
        Battery {
            capacity_mah: 120.0,
            voltage_v: 3.7,
        }
    }

    pub fn energy_wh(&self) -> f64 {
        self.capacity_mah * self.voltage_v / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerLine {
    pub name: String,
    pub average_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerBudget {
    pub lines: Vec<PowerLine>,
    pub battery: Battery,
    pub total_mw: f64,
    pub energy_wh: f64,
    pub endurance_h: f64,
}

/// Camera average draw and sleep draw.
pub const CAMERA_ACTIVE_MW: f64 = 21.45;
pub const CAMERA_SLEEP_MW: f64 = 0.008;
pub const IMU_MW: f64 = 11.55;
/// Detection running continuously on the microcontroller.
pub const DETECTION_MW: f64 = 24.0;
pub const SYSTEM_TOTAL_MW: f64 = 205.5;

/// The backpack as measured: the listed parts plus one line holding the
/// rest of the 205.5 mW total (stimulator, radio, microcontroller idle,
/// environment sensors).
pub fn reference_components() -> Vec<PowerComponent> {
    let rest = SYSTEM_TOTAL_MW - CAMERA_ACTIVE_MW - IMU_MW - DETECTION_MW;
    vec![
        PowerComponent::new("camera", CAMERA_ACTIVE_MW, CAMERA_SLEEP_MW, 1.0),
        PowerComponent::new("imu", IMU_MW, 0.0, 1.0),
        PowerComponent::new("detection", DETECTION_MW, 0.0, 1.0),
        PowerComponent::new("remainder", rest, 0.0, 1.0),
    ]
}

pub fn power_budget(components: &[PowerComponent], battery: Battery) -> Result<PowerBudget> {
    for c in components {
        let bad = |reason: &str| Error::InvalidParameter {
            key: format!("power.{}", c.name),
            reason: reason.into(),
        };
        if !(c.active_mw >= 0.0 && c.sleep_mw >= 0.0) {
            return Err(bad("draw must be non-negative"));
        }
        if !(0.0..=1.0).contains(&c.duty) {
            return Err(bad("duty must lie in [0, 1]"));
        }
    }
    if !(battery.capacity_mah > 0.0 && battery.voltage_v > 0.0) {
        return Err(Error::InvalidParameter {
            key: "battery".into(),
            reason: "capacity and voltage must be positive".into(),
        });
    }
    let lines: Vec<PowerLine> = components
        .iter()
        .map(|c| PowerLine {
            name: c.name.clone(),
            average_mw: c.average_mw(),
        })
        .collect();
    let total_mw: f64 = lines.iter().map(|l| l.average_mw).sum();
    if total_mw <= 0.0 {
        return Err(Error::ZeroPowerDraw);
    }
    let energy_wh = battery.energy_wh();
    Ok(PowerBudget {
        lines,
        battery,
        total_mw,
        energy_wh,
        endurance_h: energy_wh / (total_mw / 1000.0),
    })
}
