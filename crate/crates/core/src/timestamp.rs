use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar instant stored as seconds since the Unix epoch (UTC).
///
/// Flow records carry wall-clock timestamps; the model only ever needs
/// time-of-day and day-of-week, so a plain epoch offset is enough.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

const SECS_PER_DAY: i64 = 86_400;

impl Timestamp {
    pub fn from_unix_seconds(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub fn unix_seconds(&self) -> i64 {
        self.0
    }

    /// Fraction of the day elapsed, in [0, 1).
    pub fn time_of_day(&self) -> f64 {
        let s = self.0.rem_euclid(SECS_PER_DAY);
        s as f64 / SECS_PER_DAY as f64
    }

    /// Day of week with Monday = 0 .. Sunday = 6.
    pub fn day_of_week(&self) -> u8 {
        // 1970-01-01 was a Thursday.
        let days = self.0.div_euclid(SECS_PER_DAY);
        ((days + 3).rem_euclid(7)) as u8
    }

    pub fn add_seconds(&self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }

    /// Parses either integer epoch seconds or `YYYY-MM-DD HH:MM[:SS]`
    /// (a `T` separator is accepted too).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Ok(secs) = text.parse::<i64>() {
            return Ok(Timestamp(secs));
        }
        parse_datetime(text)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, m, d) = civil_from_days(self.0.div_euclid(SECS_PER_DAY));
        let s = self.0.rem_euclid(SECS_PER_DAY);
        write!(
            f,
            "{:04}-{:02}-{:02} {:02}:{:02}:{:02}",
            y,
            m,
            d,
            s / 3600,
            (s / 60) % 60,
            s % 60
        )
    }
}

fn parse_datetime(text: &str) -> Result<Timestamp> {
    let err = || Error::invalid_input(format!("unparseable timestamp `{text}`"));
    let (date, time) = text
        .split_once(' ')
        .or_else(|| text.split_once('T'))
        .ok_or_else(err)?;
    let mut dp = date.split('-');
    let year: i64 = dp.next().ok_or_else(err)?.parse().map_err(|_| err())?;
    let month: i64 = dp.next().ok_or_else(err)?.parse().map_err(|_| err())?;
    let day: i64 = dp.next().ok_or_else(err)?.parse().map_err(|_| err())?;
    if dp.next().is_some() || !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return Err(err());
    }
    let mut tp = time.split(':');
    let hour: i64 = tp.next().ok_or_else(err)?.parse().map_err(|_| err())?;
    let minute: i64 = tp.next().ok_or_else(err)?.parse().map_err(|_| err())?;
    let second: i64 = match tp.next() {
        Some(s) => s.parse().map_err(|_| err())?,
        None => 0,
    };
    if tp.next().is_some() || hour > 23 || minute > 59 || second > 59 {
        return Err(err());
    }
    let days = days_from_civil(year, month, day);
    Ok(Timestamp(
        days * SECS_PER_DAY + hour * 3600 + minute * 60 + second,
    ))
}

// Howard Hinnant's civil-date algorithms.
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    (if m <= 2 { y + 1 } else { y }, m, d)
}
