//! Log-distance radio model: positions to RSSI, reachability, and link
//! rates for the Wi-Fi and cellular interfaces.

use serde::{Deserialize, Serialize};

use crate::error::{MoviError, Result};

/// Reference distance for the path-loss model, metres.
pub const REFERENCE_DISTANCE_M: f64 = 1.0;

/// Below this RSSI the optional two-tier Wi-Fi table halves the rate.
pub const TWO_TIER_BREAK_DBM: f64 = -75.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    /// Path loss at the 1 m reference distance.
    pub pl0_db: f64,
    pub exponent: f64,
    pub rssi_floor_dbm: f64,
    pub wifi_rate_bps: f64,
    pub cell_rate_bps: f64,
    #[serde(default)]
    pub two_tier_wifi: bool,
    /// Optional cap on the server's total cellular throughput. Absent means
    /// every node gets its own `cell_rate_bps` link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_cell_cap_bps: Option<f64>,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            tx_power_dbm: 15.0,
            pl0_db: 40.0,
            exponent: 3.0,
            rssi_floor_dbm: -85.0,
            wifi_rate_bps: 6e6,
            cell_rate_bps: 2e6,
            two_tier_wifi: false,
            aggregate_cell_cap_bps: None,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tx_power_dbm,
            self.pl0_db,
            self.exponent,
            self.rssi_floor_dbm,
            self.wifi_rate_bps,
            self.cell_rate_bps,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(MoviError::config("radio parameters must be finite"));
        }
        if self.exponent <= 0.0 {
            return Err(MoviError::config("radio.exponent must be > 0"));
        }
        if self.wifi_rate_bps <= 0.0 || self.cell_rate_bps <= 0.0 {
            return Err(MoviError::config("radio rates must be > 0"));
        }
        if self.rssi_floor_dbm >= self.tx_power_dbm - self.pl0_db {
            return Err(MoviError::config(
                "radio.rssi_floor_dbm must be below tx_power_dbm - pl0_db",
            ));
        }
        if let Some(cap) = self.aggregate_cell_cap_bps {
            if !(cap.is_finite() && cap >= self.cell_rate_bps) {
                return Err(MoviError::config(
                    "radio.aggregate_cell_cap_bps must be finite and >= cell_rate_bps",
                ));
            }
        }
        Ok(())
    }

    /// Distance at which RSSI drops to the discovery floor.
    pub fn max_range_m(&self) -> f64 {
        let budget = self.tx_power_dbm - self.pl0_db - self.rssi_floor_dbm;
        REFERENCE_DISTANCE_M * 10f64.powf(budget / (10.0 * self.exponent))
    }

    /// Effective Wi-Fi rate for a link heard at `rssi_dbm`.
    pub fn wifi_rate_at(&self, rssi_dbm: f64) -> f64 {
        if self.two_tier_wifi && rssi_dbm < TWO_TIER_BREAK_DBM {
            self.wifi_rate_bps / 2.0
        } else {
            self.wifi_rate_bps
        }
    }

    /// Number of server transfers that may run at once under the aggregate
    /// cap, if one is configured.
    pub fn cell_slots(&self) -> Option<usize> {
        self.aggregate_cell_cap_bps
            .map(|cap| ((cap / self.cell_rate_bps).floor() as usize).max(1))
    }
}

/// `pl0 + 10 n log10(d / d0)`, with distances under `d0` clamped to `d0`.
pub fn path_loss(distance_m: f64, params: &RadioParams) -> Result<f64> {
    if !distance_m.is_finite() {
        return Err(MoviError::input(format!(
            "non-finite distance {distance_m}"
        )));
    }
    if distance_m < 0.0 {
        return Err(MoviError::input(format!("negative distance {distance_m}")));
    }
    let d = distance_m.max(REFERENCE_DISTANCE_M);
    Ok(params.pl0_db + 10.0 * params.exponent * (d / REFERENCE_DISTANCE_M).log10())
}

pub fn rssi(a: &Position, b: &Position, params: &RadioParams) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(MoviError::input("non-finite position"));
    }
    Ok(params.tx_power_dbm - path_loss(a.distance(b), params)?)
}

pub fn in_range(a: &Position, b: &Position, params: &RadioParams) -> Result<bool> {
    Ok(rssi(a, b, params)? >= params.rssi_floor_dbm)
}

/// One point of a piecewise-linear trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Position along a waypoint list at time `t`. Before the first point and
/// after the last the node sits still.
pub fn position_at(track: &[Waypoint], t: f64) -> Position {
    let Some(first) = track.first() else {
        return Position::default();
    };
    if t <= first.t {
        return Position::new(first.x, first.y);
    }
    for pair in track.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if t <= b.t {
            let span = b.t - a.t;
            if span <= 0.0 {
                return Position::new(b.x, b.y);
            }
            let f = (t - a.t) / span;
            return Position::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y));
        }
    }
    let last = track[track.len() - 1];
    Position::new(last.x, last.y)
}
