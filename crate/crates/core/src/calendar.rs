//! Date arithmetic and stable hashing shared by the cohort and validation code.

use chrono::{Datelike, Months, NaiveDate};

/// Days per year used for exact-age arithmetic; leap years are folded in.
pub const DAYS_PER_YEAR: f64 = 365.25;

pub fn ymd(year: i32, month: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, month, day).expect("valid calendar date")
}

/// Exact age in fractional years.
pub fn age_at(birth: NaiveDate, date: NaiveDate) -> f64 {
    (date - birth).num_days() as f64 / DAYS_PER_YEAR
}

/// Date reached `age` years after `birth`, rounded to the nearest day.
pub fn date_at_age(birth: NaiveDate, age: f64) -> NaiveDate {
    let days = (age * DAYS_PER_YEAR).round() as i64;
    birth + chrono::Duration::days(days)
}

/// Calendar anniversary `years` after `birth` (29 February maps to 28 February).
pub fn anniversary(birth: NaiveDate, years: u32) -> NaiveDate {
    birth
        .checked_add_months(Months::new(12 * years))
        .expect("anniversary within calendar range")
}

pub fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

pub fn year_start(year: i32) -> NaiveDate {
    ymd(year, 1, 1)
}

pub fn year_end(date: NaiveDate) -> NaiveDate {
    ymd(date.year(), 12, 31)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of an identifier; stable across platforms and releases.
pub fn hash_id(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic uniform draw in [0, 1) keyed by `(seed, id, stream)`.
pub fn keyed_uniform(seed: u64, id: &str, stream: u64) -> f64 {
    let h = mix64(mix64(seed ^ stream.rotate_left(32)) ^ hash_id(id));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_year_age() {
        let a = age_at(ymd(1950, 7, 1), ymd(2010, 1, 1));
        assert!((a - 59.5).abs() < 0.01);
    }

    #[test]
    fn leap_day_anniversary() {
        assert_eq!(anniversary(ymd(1960, 2, 29), 50), ymd(2010, 2, 28));
        assert_eq!(days_in_year(2012), 366);
        assert_eq!(days_in_year(2013), 365);
    }

    #[test]
    fn keyed_uniform_is_stable() {
        let u = keyed_uniform(7, "abc", 1);
        assert_eq!(u, keyed_uniform(7, "abc", 1));
        assert_ne!(u, keyed_uniform(8, "abc", 1));
        assert!((0.0..1.0).contains(&u));
    }
}
