//! Decibel conversions. Everything inside the library is linear SI.

use num_traits::Float;

/// `10^(x/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// dBm to watts: `-110 dBm` is `1e-14 W`.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    linear_to_db(watts) + 30.0
}

pub fn dbw_to_watts(dbw: f64) -> f64 {
    db_to_linear(dbw)
}

pub fn watts_to_dbw(watts: f64) -> f64 {
    linear_to_db(watts)
}
