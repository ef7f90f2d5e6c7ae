//! Population (background) mortality from life tables.
//!
//! Rates are annual hazards, piecewise constant on integer age x calendar-year
//! cells, stratified by sex, deprivation quintile, and region.  Attained age
//! and calendar year advance together with follow-up time.  Lookups beyond
//! the table's age or year grid clamp to the nearest band and bump a warning
//! counter; a missing (sex, deprivation, region) stratum is a hard error.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

/// Life-table stratum carried by each patient record: the demographic cells
/// plus the calendar year at diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub sex: u8,
    pub deprivation: u8,
    pub region: u16,
    pub year: u16,
}

/// One life-table row.
#[derive(Debug, Clone, Copy)]
pub struct LifeRow {
    pub age: u16,
    pub year: u16,
    pub sex: u8,
    pub deprivation: u8,
    pub region: u16,
    pub rate: f64,
}

#[derive(Debug)]
pub struct LifeTable {
    rates: HashMap<(u16, u16, u8, u8, u16), f64>,
    age_range: (u16, u16),
    year_range: (u16, u16),
    all_zero: bool,
    clamp_warnings: AtomicU64,
}

impl Clone for LifeTable {
    fn clone(&self) -> Self {
        LifeTable {
            rates: self.rates.clone(),
            age_range: self.age_range,
            year_range: self.year_range,
            all_zero: self.all_zero,
            clamp_warnings: AtomicU64::new(self.clamp_warnings.load(Ordering::Relaxed)),
        }
    }
}

const EPS: f64 = 1e-9;

fn band(x: f64) -> f64 {
    (x + EPS).floor()
}

impl LifeTable {
    /// An all-zero table (overall-survival analyses; h_P = 0 everywhere).
    pub fn zero() -> Self {
        LifeTable {
            rates: HashMap::new(),
            age_range: (0, 0),
            year_range: (0, 0),
            all_zero: true,
            clamp_warnings: AtomicU64::new(0),
        }
    }

    pub fn from_rows(rows: &[LifeRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("life table has no rows".into()));
        }
        let mut rates = HashMap::with_capacity(rows.len());
        let mut age_range = (u16::MAX, 0u16);
        let mut year_range = (u16::MAX, 0u16);
        for row in rows {
            if !(row.rate >= 0.0) || !row.rate.is_finite() {
                return Err(Error::Invalid(format!(
                    "life-table rate must be finite and >= 0, got {} at age {} year {}",
                    row.rate, row.age, row.year
                )));
            }
            let key = (row.age, row.year, row.sex, row.deprivation, row.region);
            if rates.insert(key, row.rate).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate life-table stratum (age {}, year {}, sex {}, deprivation {}, region {})",
                    row.age, row.year, row.sex, row.deprivation, row.region
                )));
            }
            age_range = (age_range.0.min(row.age), age_range.1.max(row.age));
            year_range = (year_range.0.min(row.year), year_range.1.max(row.year));
        }
        Ok(LifeTable {
            rates,
            age_range,
            year_range,
            all_zero: false,
            clamp_warnings: AtomicU64::new(0),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.all_zero
    }

    /// Age-clamp events observed so far (attained age or year beyond the grid).
    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_warnings.load(Ordering::Relaxed)
    }

    pub fn age_range(&self) -> (u16, u16) {
        self.age_range
    }

    /// Annual rate for the cell containing attained age `age` in calendar
    /// year `year` (both real-valued; banded internally).
    pub fn rate(&self, stratum: &Stratum, age: f64, year: f64) -> Result<f64> {
        if self.all_zero {
            return Ok(0.0);
        }
        let mut a = band(age);
        let mut y = band(year);
        let mut clamped = false;
        if a < self.age_range.0 as f64 {
            a = self.age_range.0 as f64;
            clamped = true;
        } else if a > self.age_range.1 as f64 {
            a = self.age_range.1 as f64;
            clamped = true;
        }
        if y < self.year_range.0 as f64 {
            y = self.year_range.0 as f64;
            clamped = true;
        } else if y > self.year_range.1 as f64 {
            y = self.year_range.1 as f64;
            clamped = true;
        }
        if clamped {
            self.clamp_warnings.fetch_add(1, Ordering::Relaxed);
        }
        let key = (
            a as u16,
            y as u16,
            stratum.sex,
            stratum.deprivation,
            stratum.region,
        );
        self.rates.get(&key).copied().ok_or_else(|| {
            Error::LifeTable(format!(
                "no rate for stratum (age {}, year {}, sex {}, deprivation {}, region {})",
                key.0, key.1, key.2, key.3, key.4
            ))
        })
    }

    /// Whether attained age `age` in year `year` falls beyond the table grid.
    pub fn beyond_grid(&self, age: f64, year: f64) -> bool {
        !self.all_zero
            && (band(age) > self.age_range.1 as f64 || band(year) > self.year_range.1 as f64)
    }

    /// Instantaneous population hazard at follow-up time `t` for a patient
    /// diagnosed at `age` in `stratum.year`.
    pub fn hazard(&self, stratum: &Stratum, age: f64, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::Domain(format!("time must be >= 0, got {t}")));
        }
        self.rate(stratum, age + t, stratum.year as f64 + t)
    }

    /// Exact cumulative population hazard over [0, t]:
    /// H_P(age + t) - H_P(age), summing rate x duration over the cells the
    /// follow-up interval crosses (cells change when attained age or calendar
    /// year crosses an integer).
    pub fn cum_hazard(&self, stratum: &Stratum, age: f64, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::Domain(format!("time must be >= 0, got {t}")));
        }
        if self.all_zero || t == 0.0 {
            return Ok(0.0);
        }
        let year0 = stratum.year as f64;
        let mut acc = 0.0;
        let mut s = 0.0;
        while s < t - EPS {
            let a = age + s;
            let y = year0 + s;
            let next = next_cell_end(a, s, y).min(t);
            let rate = self.rate(stratum, a, y)?;
            acc += rate * (next - s);
            s = next;
        }
        Ok(acc)
    }
}

/// Smallest s' > s at which the attained age or the calendar year crosses an
/// integer boundary.
pub(crate) fn next_cell_end(age: f64, s: f64, year: f64) -> f64 {
    let by_age = s + (next_int(age) - age);
    let by_year = s + (next_int(year) - year);
    by_age.min(by_year)
}

fn next_int(x: f64) -> f64 {
    let b = band(x);
    b + 1.0
}
