//! Time signals extracted from representative profiles.
//!
//! Occupancy centroids give the first arrival `t_a` and last departure `t_d`
//! for an occupied threshold δ; shifting them by the thermal lag τ gives the
//! occupant-derived ramp-up `t_s_o` and setback `t_e_o`. Demand centroids
//! give the static ramp-up `t_s_e` and setback `t_e_e` at the largest
//! negative and positive lag-1 differences. All times are hour bins 0..=23.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::HOURS;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("occupied threshold must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("tau_sign_evening must be +1 or -1, got {0}")]
    InvalidLagSign(i8),
    #[error("profile must have {HOURS} values, got {0}")]
    WrongLength(usize),
    #[error("no detectable ramp: largest rise at {ramp:02}:00 is not before largest drop at {setback:02}:00")]
    NoRamp { ramp: u8, setback: u8 },
}

pub type Result<T> = std::result::Result<T, ScheduleError>;

/// Direction in which τ moves the departure time.
///
/// `Minus` sets back τ hours before departure (`t_e_o = t_d - τ`), the
/// default. `Plus` keeps conditioning τ hours after it (`t_e_o = t_d + τ`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum EveningLag {
    Plus,
    #[default]
    Minus,
}

impl TryFrom<i8> for EveningLag {
    type Error = ScheduleError;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(EveningLag::Plus),
            -1 => Ok(EveningLag::Minus),
            other => Err(ScheduleError::InvalidLagSign(other)),
        }
    }
}

impl From<EveningLag> for i8 {
    fn from(v: EveningLag) -> i8 {
        match v {
            EveningLag::Plus => 1,
            EveningLag::Minus => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Occupied threshold on normalized occupancy, in (0, 1).
    pub delta: f64,
    /// Thermal lag in hours.
    pub tau: u8,
    pub evening_lag: EveningLag,
}

impl ScheduleParams {
    pub fn new(delta: f64, tau: u8, evening_lag: EveningLag) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(ScheduleError::InvalidDelta(delta));
        }
        Ok(Self { delta, tau, evening_lag })
    }
}

/// Threshold crossings of an occupancy profile.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupiedWindow {
    pub t_a: Option<u8>,
    pub t_d: Option<u8>,
    /// Never above δ.
    pub unoccupied: bool,
    /// Still above δ at the last hour, so `t_d` is undefined.
    pub open_ended: bool,
}

/// Occupancy-derived signals for one profile at one (δ, τ).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySignals {
    pub t_a: Option<u8>,
    pub t_d: Option<u8>,
    pub t_s_o: Option<u8>,
    pub t_e_o: Option<u8>,
    pub unoccupied: bool,
    pub open_ended: bool,
}

/// Static schedule read off a demand profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandSignals {
    pub t_s_e: u8,
    pub t_e_e: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissWaste {
    /// HVAC operating while unoccupied.
    pub waste_h: u32,
    /// Occupied while HVAC is set back.
    pub miss_h: u32,
}

/// First rise strictly above δ and the first drop strictly below δ after it.
pub fn occupied_window(centroid: &[f64], delta: f64) -> OccupiedWindow {
    let Some(t_a) = centroid.iter().position(|&v| v > delta) else {
        return OccupiedWindow { unoccupied: true, ..Default::default() };
    };
    let t_d = centroid[t_a + 1..].iter().position(|&v| v < delta).map(|off| (t_a + 1 + off) as u8);
    OccupiedWindow { t_a: Some(t_a as u8), t_d, unoccupied: false, open_ended: t_d.is_none() }
}

fn clamp_hour(h: i32) -> u8 {
    h.clamp(0, HOURS as i32 - 1) as u8
}

/// Shifts the occupied window by τ: `t_s_o = t_a - τ` and `t_e_o = t_d ∓ τ`,
/// clamped to the day.
pub fn hvac_window(window: &OccupiedWindow, tau: u8, evening_lag: EveningLag) -> OccupancySignals {
    let tau = tau as i32;
    let t_s_o = window.t_a.map(|t| clamp_hour(t as i32 - tau));
    let t_e_o = window.t_d.map(|t| match evening_lag {
        EveningLag::Plus => clamp_hour(t as i32 + tau),
        EveningLag::Minus => clamp_hour(t as i32 - tau),
    });
    OccupancySignals {
        t_a: window.t_a,
        t_d: window.t_d,
        t_s_o,
        t_e_o,
        unoccupied: window.unoccupied,
        open_ended: window.open_ended,
    }
}

pub fn occupancy_signals(centroid: &[f64], params: &ScheduleParams) -> OccupancySignals {
    hvac_window(&occupied_window(centroid, params.delta), params.tau, params.evening_lag)
}

/// Ramp-up at the largest negative `v[h] - v[h+1]`, setback at the largest
/// positive one; ties go to the earliest hour.
pub fn demand_signals(centroid: &[f64]) -> Result<DemandSignals> {
    if centroid.len() != HOURS {
        return Err(ScheduleError::WrongLength(centroid.len()));
    }
    let diffs: Vec<f64> = centroid.windows(2).map(|w| w[0] - w[1]).collect();
    let mut ramp = 0;
    let mut setback = 0;
    for (h, &d) in diffs.iter().enumerate() {
        if d < diffs[ramp] {
            ramp = h;
        }
        if d > diffs[setback] {
            setback = h;
        }
    }
    let (ramp, setback) = (ramp as u8, setback as u8);
    if ramp >= setback {
        return Err(ScheduleError::NoRamp { ramp, setback });
    }
    Ok(DemandSignals { t_s_e: ramp, t_e_e: setback })
}

/// Hours of waste (operating while unoccupied) and miss (occupied while set
/// back) of the occupant-derived window against the static one.
pub fn miss_waste(occ: &OccupancySignals, dem: &DemandSignals) -> MissWaste {
    let (s_e, e_e) = (dem.t_s_e as i32, dem.t_e_e as i32);
    if occ.unoccupied {
        return MissWaste { waste_h: (e_e - s_e) as u32, miss_h: 0 };
    }
    let mut waste = 0;
    let mut miss = 0;
    if let Some(s_o) = occ.t_s_o.map(i32::from) {
        waste += (s_o - s_e).max(0);
        miss += (s_e - s_o).max(0);
    }
    match occ.t_e_o.map(i32::from) {
        Some(e_o) => {
            waste += (e_e - e_o).max(0);
            miss += (e_o - e_e).max(0);
        }
        None => miss += HOURS as i32 - 1 - e_e,
    }
    MissWaste { waste_h: waste as u32, miss_h: miss as u32 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(t_a: u8, t_d: u8) -> OccupiedWindow {
        OccupiedWindow { t_a: Some(t_a), t_d: Some(t_d), unoccupied: false, open_ended: false }
    }

    #[test]
    fn crossings_are_strict() {
        let mut c = [0.0; HOURS];
        c[7] = 0.05;
        c[8..12].fill(0.3);
        c[12] = 0.05;
        let w = occupied_window(&c, 0.05);
        assert_eq!(w.t_a, Some(8));
        // 0.05 is not below 0.05; hour 13 is
        assert_eq!(w.t_d, Some(13));
    }

    #[test]
    fn unoccupied_and_open_ended() {
        let low = [0.04; HOURS];
        let w = occupied_window(&low, 0.05);
        assert!(w.unoccupied);
        assert_eq!((w.t_a, w.t_d), (None, None));
        let s = hvac_window(&w, 2, EveningLag::Minus);
        assert_eq!((s.t_s_o, s.t_e_o), (None, None));

        let mut late = [0.0; HOURS];
        late[7..].fill(0.5);
        let w = occupied_window(&late, 0.05);
        assert_eq!((w.t_a, w.t_d, w.open_ended), (Some(7), None, true));
    }

    #[test]
    fn lag_conventions() {
        let s = hvac_window(&window(8, 20), 2, EveningLag::Plus);
        assert_eq!((s.t_s_o, s.t_e_o), (Some(6), Some(22)));
        let s = hvac_window(&window(8, 20), 2, EveningLag::Minus);
        assert_eq!((s.t_s_o, s.t_e_o), (Some(6), Some(18)));
    }

    #[test]
    fn lag_clamps_and_identity() {
        let s = hvac_window(&window(1, 23), 2, EveningLag::Plus);
        assert_eq!((s.t_s_o, s.t_e_o), (Some(0), Some(23)));
        let s = hvac_window(&window(8, 17), 0, EveningLag::Plus);
        assert_eq!((s.t_s_o, s.t_e_o), (Some(8), Some(17)));
    }

    #[test]
    fn params_validation() {
        assert!(ScheduleParams::new(0.1, 2, EveningLag::Minus).is_ok());
        assert_eq!(ScheduleParams::new(0.0, 2, EveningLag::Minus), Err(ScheduleError::InvalidDelta(0.0)));
        assert_eq!(ScheduleParams::new(1.0, 2, EveningLag::Minus), Err(ScheduleError::InvalidDelta(1.0)));
        assert_eq!(EveningLag::try_from(0), Err(ScheduleError::InvalidLagSign(0)));
    }

    fn trapezoid(low: f64, high: f64, ramp: usize, setback: usize) -> [f64; HOURS] {
        let mut p = [low; HOURS];
        p[ramp + 1..=setback].fill(high);
        p
    }

    #[test]
    fn demand_signals_on_trapezoid() {
        let p = trapezoid(100.0, 400.0, 5, 21);
        assert_eq!(demand_signals(&p), Ok(DemandSignals { t_s_e: 5, t_e_e: 21 }));
    }

    #[test]
    fn demand_signals_ties_break_early() {
        // two equal rises at 4 and 6
        let mut p = [0.0; HOURS];
        p[5] = 1.0;
        p[6] = 1.0;
        p[7..=20].fill(2.0);
        assert_eq!(demand_signals(&p).unwrap().t_s_e, 4);
    }

    #[test]
    fn flat_profile_has_no_ramp() {
        assert_eq!(demand_signals(&[0.5; HOURS]), Err(ScheduleError::NoRamp { ramp: 0, setback: 0 }));
        assert_eq!(demand_signals(&[0.5; 12]), Err(ScheduleError::WrongLength(12)));
    }

    fn occ(s: u8, e: u8) -> OccupancySignals {
        hvac_window(&window(s, e), 0, EveningLag::Minus)
    }

    #[test]
    fn miss_waste_cases() {
        let dem = DemandSignals { t_s_e: 5, t_e_e: 21 };
        assert_eq!(miss_waste(&occ(6, 18), &dem), MissWaste { waste_h: 4, miss_h: 0 });
        assert_eq!(miss_waste(&occ(5, 21), &dem), MissWaste { waste_h: 0, miss_h: 0 });
        assert_eq!(miss_waste(&occ(4, 22), &dem), MissWaste { waste_h: 0, miss_h: 2 });
        let unocc = OccupancySignals { unoccupied: true, ..Default::default() };
        assert_eq!(miss_waste(&unocc, &dem), MissWaste { waste_h: 16, miss_h: 0 });
        let open = OccupancySignals { t_a: Some(7), t_s_o: Some(5), open_ended: true, ..Default::default() };
        assert_eq!(miss_waste(&open, &dem), MissWaste { waste_h: 0, miss_h: 2 });
    }
}
