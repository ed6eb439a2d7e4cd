//! Calendar-month timestamps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A calendar month. Ordered chronologically; serialized as `"YYYY-MM"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::argument(format!("month {month} outside 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    /// Calendar month, 1..=12.
    pub fn month(self) -> u8 {
        self.month
    }

    /// Months since year 0, January.
    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u8,
        }
    }

    /// The month `n` months later (or earlier for negative `n`).
    pub fn add_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    /// Signed number of months from `self` to `other`.
    pub fn months_until(self, other: YearMonth) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::argument(format!("expected YYYY-MM, got {s:?}")))?;
        let year = y
            .parse::<i32>()
            .map_err(|_| Error::argument(format!("bad year in {s:?}")))?;
        let month = m
            .parse::<u8>()
            .map_err(|_| Error::argument(format!("bad month in {s:?}")))?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive range of consecutive months.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl MonthRange {
    pub fn new(start: YearMonth, end: YearMonth) -> Result<Self> {
        if end < start {
            return Err(Error::argument(format!("empty month range {start}..={end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: YearMonth) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn len(&self) -> usize {
        (self.start.months_until(self.end) + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_arithmetic_wraps_years() {
        let t = YearMonth::new(1981, 11).unwrap();
        assert_eq!(t.add_months(3), YearMonth::new(1982, 2).unwrap());
        assert_eq!(t.add_months(-11), YearMonth::new(1980, 12).unwrap());
        assert_eq!(t.months_until(YearMonth::new(2018, 12).unwrap()), 445);
    }

    #[test]
    fn parse_and_display() {
        let t: YearMonth = "1988-09".parse().unwrap();
        assert_eq!(t.to_string(), "1988-09");
        assert!("1988-13".parse::<YearMonth>().is_err());
        assert!("1988".parse::<YearMonth>().is_err());
    }
}
