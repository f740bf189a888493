//! Logical time: exact non-negative rationals, optionally extended with infinity.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Mul};
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Signed exact rational used for device values and time grains.
pub type Rational = Rational64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("malformed rational `{0}`")]
    Malformed(String),
    #[error("negative time `{0}`")]
    Negative(String),
    #[error("time subtraction would go below zero")]
    Underflow,
}

/// Parse an integer (`7`), a fraction (`3/2`) or a finite decimal (`2.5`).
pub fn parse_rational(s: &str) -> Result<Rational, TimeError> {
    let t = s.trim();
    let bad = || TimeError::Malformed(s.to_string());
    if t.is_empty() {
        return Err(bad());
    }
    if let Some((n, d)) = t.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((int, frac)) = t.split_once('.') {
        if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let neg = int.starts_with('-');
        let int_part: i64 = match int.trim_start_matches(['-', '+']) {
            "" => 0,
            digits => digits.parse().map_err(|_| bad())?,
        };
        let scale = 10i64.pow(frac.len() as u32);
        let frac_part: i64 = frac.parse().map_err(|_| bad())?;
        let mag = int_part
            .checked_mul(scale)
            .and_then(|v| v.checked_add(frac_part))
            .ok_or_else(bad)?;
        return Ok(Rational::new(if neg { -mag } else { mag }, scale));
    }
    t.parse::<i64>().map(Rational::from_integer).map_err(|_| bad())
}

/// Render as `n` for integers and `n/d` otherwise.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// A point or duration in model time units. Never negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LogicalTime(Rational);

impl LogicalTime {
    pub const ZERO: LogicalTime = LogicalTime(Rational::new_raw(0, 1));

    pub fn new(value: Rational) -> Result<Self, TimeError> {
        if value.is_negative() {
            Err(TimeError::Negative(format_rational(&value)))
        } else {
            Ok(LogicalTime(value))
        }
    }

    pub fn from_int(n: u32) -> Self {
        LogicalTime(Rational::from_integer(n as i64))
    }

    pub fn ratio(numer: u32, denom: u32) -> Self {
        LogicalTime(Rational::new(numer as i64, denom as i64))
    }

    pub fn value(&self) -> Rational {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn checked_sub(self, other: LogicalTime) -> Result<LogicalTime, TimeError> {
        if other.0 > self.0 {
            Err(TimeError::Underflow)
        } else {
            Ok(LogicalTime(self.0 - other.0))
        }
    }

    /// `self - other`, clamped at zero.
    pub fn saturating_sub(self, other: LogicalTime) -> LogicalTime {
        if other.0 > self.0 {
            LogicalTime::ZERO
        } else {
            LogicalTime(self.0 - other.0)
        }
    }

    /// Multiply by a non-negative integer count.
    pub fn times(self, k: u64) -> LogicalTime {
        LogicalTime(self.0 * Rational::from_integer(k as i64))
    }

    /// Largest multiple of `1/denom` not above `self`.
    pub fn floor_to(self, denom: i64) -> LogicalTime {
        let scaled = (self.0 * Rational::from_integer(denom)).floor();
        LogicalTime(scaled / Rational::from_integer(denom))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl Add for LogicalTime {
    type Output = LogicalTime;
    fn add(self, rhs: LogicalTime) -> LogicalTime {
        LogicalTime(self.0 + rhs.0)
    }
}

impl AddAssign for LogicalTime {
    fn add_assign(&mut self, rhs: LogicalTime) {
        self.0 = self.0 + rhs.0;
    }
}

impl Mul<Rational> for LogicalTime {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        self.0 * rhs
    }
}

impl fmt::Display for LogicalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl FromStr for LogicalTime {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LogicalTime::new(parse_rational(s)?)
    }
}

impl From<u32> for LogicalTime {
    fn from(n: u32) -> Self {
        LogicalTime::from_int(n)
    }
}

impl Serialize for LogicalTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LogicalTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RatText::deserialize(d)?;
        raw.0.parse().map_err(serde::de::Error::custom)
    }
}

/// Accepts a JSON string or number where a rational is expected.
#[derive(Debug, Clone)]
pub(crate) struct RatText(pub String);

impl<'de> Deserialize<'de> for RatText {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => Ok(RatText(s)),
            serde_json::Value::Number(n) => Ok(RatText(n.to_string())),
            other => Err(serde::de::Error::custom(format!("expected rational, got {other}"))),
        }
    }
}

/// Serde helpers for bare [`Rational`] fields.
pub mod rational_serde {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let raw = RatText::deserialize(d)?;
        parse_rational(&raw.0).map_err(serde::de::Error::custom)
    }
}

/// Logical time extended with `INF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimeInf {
    Finite(LogicalTime),
    Inf,
}

impl TimeInf {
    pub fn finite(&self) -> Option<LogicalTime> {
        match self {
            TimeInf::Finite(t) => Some(*t),
            TimeInf::Inf => None,
        }
    }

    pub fn is_inf(&self) -> bool {
        matches!(self, TimeInf::Inf)
    }

    pub fn min(self, other: TimeInf) -> TimeInf {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl PartialOrd for TimeInf {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeInf {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (TimeInf::Finite(a), TimeInf::Finite(b)) => a.cmp(b),
            (TimeInf::Finite(_), TimeInf::Inf) => Ordering::Less,
            (TimeInf::Inf, TimeInf::Finite(_)) => Ordering::Greater,
            (TimeInf::Inf, TimeInf::Inf) => Ordering::Equal,
        }
    }
}

impl From<LogicalTime> for TimeInf {
    fn from(t: LogicalTime) -> Self {
        TimeInf::Finite(t)
    }
}

impl fmt::Display for TimeInf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeInf::Finite(t) => t.fmt(f),
            TimeInf::Inf => f.write_str("INF"),
        }
    }
}

impl FromStr for TimeInf {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "INF" {
            Ok(TimeInf::Inf)
        } else {
            s.parse().map(TimeInf::Finite)
        }
    }
}

impl Serialize for TimeInf {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TimeInf {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RatText::deserialize(d)?;
        raw.0.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_integer_fraction_and_decimal() {
        assert_eq!(parse_rational("7").unwrap(), Rational::from_integer(7));
        assert_eq!(parse_rational("3/2").unwrap(), Rational::new(3, 2));
        assert_eq!(parse_rational("6/4").unwrap(), Rational::new(3, 2));
        assert_eq!(parse_rational("2.5").unwrap(), Rational::new(5, 2));
        assert_eq!(parse_rational("-0.25").unwrap(), Rational::new(-1, 4));
        assert!(parse_rational("").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1.").is_err());
    }

    #[test]
    fn renders_canonically() {
        assert_eq!(LogicalTime::from_int(10).to_string(), "10");
        assert_eq!(LogicalTime::ratio(6, 4).to_string(), "3/2");
        assert_eq!(TimeInf::Inf.to_string(), "INF");
    }

    #[test]
    fn negative_time_rejected() {
        assert!("-1".parse::<LogicalTime>().is_err());
        assert!(LogicalTime::from_int(1).checked_sub(LogicalTime::from_int(2)).is_err());
    }

    #[test]
    fn inf_ordering() {
        let t = TimeInf::Finite(LogicalTime::from_int(1_000_000));
        assert!(t < TimeInf::Inf);
        assert_eq!(TimeInf::Inf.min(t), t);
        assert_eq!(t.min(TimeInf::Inf), t);
        assert_eq!("INF".parse::<TimeInf>().unwrap(), TimeInf::Inf);
    }

    #[test]
    fn floor_to_thousandths() {
        let t = LogicalTime::ratio(1, 3);
        assert_eq!(t.floor_to(1000), LogicalTime::ratio(333, 1000));
    }
}
