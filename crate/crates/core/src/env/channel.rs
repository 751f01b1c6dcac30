//! Large-scale path loss and small-scale fading.
//!
//! V2I: 128.1 + 37.6 log10(d[km]) with the antenna height difference folded
//! into `d`. V2V: WINNER+ B1 Manhattan model, LOS when the two ends share a
//! road (perpendicular offset < 7 m), otherwise the NLOS street-corner form.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::geometry::Point;
use crate::config::EnvConfig;

const SPEED_OF_LIGHT: f64 = 3e8;
/// Perpendicular offset below which two positions count as the same street.
const LOS_STREET_WIDTH_M: f64 = 7.0;

pub fn v2i_path_loss_db(cfg: &EnvConfig, a: &Point, bs: &Point) -> f64 {
    let dh = cfg.bs_antenna_height_m - cfg.vehicle_antenna_height_m;
    let d = (a.distance(bs).powi(2) + dh * dh).sqrt();
    128.1 + 37.6 * (d / 1000.0).log10()
}

fn winner_los_db(cfg: &EnvConfig, d: f64) -> f64 {
    let fc = cfg.carrier_ghz;
    let h_eff = cfg.vehicle_antenna_height_m - 1.0;
    let d_bp = 4.0 * h_eff * h_eff * fc * 1e9 / SPEED_OF_LIGHT;
    if d <= 3.0 {
        22.7 * 3f64.log10() + 41.0 + 20.0 * (fc / 5.0).log10()
    } else if d < d_bp {
        22.7 * d.log10() + 41.0 + 20.0 * (fc / 5.0).log10()
    } else {
        40.0 * d.log10() + 9.45 - 2.0 * 17.3 * h_eff.log10()
            + 2.7 * (fc / 5.0).log10()
    }
}

fn winner_nlos_db(cfg: &EnvConfig, d_along: f64, d_cross: f64) -> f64 {
    let n_j = (2.8 - 0.0024 * d_cross).max(1.84);
    winner_los_db(cfg, d_along) + 20.0 - 12.5 * n_j
        + 10.0 * n_j * d_cross.max(1.0).log10()
        + 3.0 * (cfg.carrier_ghz / 5.0).log10()
}

/// V2V path loss and whether the pair is line-of-sight.
pub fn v2v_path_loss_db(cfg: &EnvConfig, a: &Point, b: &Point) -> (f64, bool) {
    let dx = (a.x - b.x).abs();
    let dy = (a.y - b.y).abs();
    let d = dx.hypot(dy) + 1e-3;
    if dx.min(dy) < LOS_STREET_WIDTH_M {
        (winner_los_db(cfg, d), true)
    } else {
        let pl = winner_nlos_db(cfg, dx, dy).min(winner_nlos_db(cfg, dy, dx));
        (pl, false)
    }
}

/// Rayleigh block fading power gain in dB (exponential power, unit mean).
pub fn rayleigh_db<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let p: f64 = Exp1.sample(rng);
    10.0 * p.max(1e-300).log10()
}

pub fn shadowing_db<R: Rng + ?Sized>(rng: &mut R, std_db: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * std_db
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v2i_loss_at_one_km() {
        let cfg = EnvConfig { bs_antenna_height_m: 1.5, ..EnvConfig::default() };
        let a = Point::new(0.0, 0.0);
        let b = Point::new(1000.0, 0.0);
        assert!((v2i_path_loss_db(&cfg, &a, &b) - 128.1).abs() < 1e-9);
    }

    #[test]
    fn v2v_loss_increases_with_distance() {
        let cfg = EnvConfig::default();
        let a = Point::new(300.0, 0.0);
        let mut last = 0.0;
        for d in [5.0, 20.0, 50.0, 150.0, 400.0] {
            let (pl, los) = v2v_path_loss_db(&cfg, &a, &Point::new(300.0, d));
            assert!(los);
            assert!(pl > last);
            last = pl;
        }
        let (nlos, los) = v2v_path_loss_db(&cfg, &a, &Point::new(400.0, 100.0));
        assert!(!los);
        let (los_pl, _) = v2v_path_loss_db(&cfg, &a, &Point::new(300.0, 141.4));
        assert!(nlos > los_pl);
    }

    #[test]
    fn dbm_conversions_invert() {
        for v in [-114.0, 0.0, 23.0] {
            assert!((mw_to_dbm(dbm_to_mw(v)) - v).abs() < 1e-12);
        }
    }
}
