//! Uniformly spaced time series.
//!
//! The index is stored implicitly as `start + i * step`, which makes the
//! ordering and uniform-spacing invariants hold by construction.

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<Utc>;

/// One hour, the default simulation step.
pub fn hour() -> TimeDelta {
    TimeDelta::hours(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries<T> {
    start: Timestamp,
    #[serde(with = "step_seconds")]
    step: TimeDelta,
    values: Vec<T>,
}

impl<T> TimeSeries<T> {
    pub fn new(start: Timestamp, step: TimeDelta, values: Vec<T>) -> Result<Self> {
        if step <= TimeDelta::zero() {
            return Err(Error::TimeSeries(format!("step must be positive, got {step}")));
        }
        Ok(Self { start, step, values })
    }

    /// Builds a series from an explicit index, checking that it is strictly
    /// increasing and uniformly spaced.
    pub fn from_index(index: Vec<Timestamp>, values: Vec<T>) -> Result<Self> {
        if index.len() != values.len() {
            return Err(Error::TimeSeries(format!(
                "index has {} entries but there are {} values",
                index.len(),
                values.len()
            )));
        }
        let Some(&start) = index.first() else {
            return Err(Error::TimeSeries("cannot infer step from an empty index".into()));
        };
        let step = if index.len() > 1 { index[1] - index[0] } else { hour() };
        if step <= TimeDelta::zero() {
            return Err(Error::TimeSeries("index must be strictly increasing".into()));
        }
        for (i, pair) in index.windows(2).enumerate() {
            let delta = pair[1] - pair[0];
            if delta <= TimeDelta::zero() {
                return Err(Error::TimeSeries(format!(
                    "index must be strictly increasing (position {})",
                    i + 1
                )));
            }
            if delta != step {
                return Err(Error::TimeSeries(format!(
                    "index must be uniformly spaced (position {})",
                    i + 1
                )));
            }
        }
        Ok(Self { start, step, values })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn step(&self) -> TimeDelta {
        self.step
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// First timestamp past the series.
    pub fn end(&self) -> Timestamp {
        self.timestamp(self.values.len())
    }

    pub fn timestamp(&self, position: usize) -> Timestamp {
        self.start + self.step * position as i32
    }

    pub fn index(&self) -> impl Iterator<Item = Timestamp> + '_ {
        (0..self.values.len()).map(|i| self.timestamp(i))
    }

    /// Position of `t` in the index, if `t` is one of its timestamps.
    pub fn position(&self, t: Timestamp) -> Option<usize> {
        let offset = t - self.start;
        if offset < TimeDelta::zero() {
            return None;
        }
        let step = self.step.num_seconds();
        let off = offset.num_seconds();
        if off % step != 0 || offset.subsec_nanos() != 0 {
            return None;
        }
        let pos = (off / step) as usize;
        (pos < self.values.len()).then_some(pos)
    }

    pub fn get(&self, t: Timestamp) -> Option<&T> {
        self.position(t).map(|i| &self.values[i])
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (Timestamp, &T)> + '_ {
        self.values.iter().enumerate().map(|(i, v)| (self.timestamp(i), v))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> TimeSeries<U> {
        TimeSeries {
            start: self.start,
            step: self.step,
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Values between `from` (inclusive) and `from + len * step`, or `None` if
    /// the range is not fully covered.
    pub fn slice(&self, from: Timestamp, len: usize) -> Option<TimeSeries<T>>
    where
        T: Clone,
    {
        let first = self.position(from)?;
        let last = first.checked_add(len)?;
        if last > self.values.len() {
            return None;
        }
        Some(TimeSeries {
            start: from,
            step: self.step,
            values: self.values[first..last].to_vec(),
        })
    }

    pub fn same_index<U>(&self, other: &TimeSeries<U>) -> bool {
        self.start == other.start && self.step == other.step && self.len() == other.len()
    }
}

mod step_seconds {
    use chrono::TimeDelta;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(step: &TimeDelta, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(step.num_seconds())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TimeDelta, D::Error> {
        let secs = i64::deserialize(d)?;
        Ok(TimeDelta::seconds(secs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(h: i64) -> Timestamp {
        Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap() + TimeDelta::hours(h)
    }

    #[test]
    fn from_index_checks_order_and_spacing() {
        assert!(TimeSeries::from_index(vec![t(0), t(1), t(2)], vec![1, 2, 3]).is_ok());
        assert!(TimeSeries::from_index(vec![t(0), t(2), t(1)], vec![1, 2, 3]).is_err());
        assert!(TimeSeries::from_index(vec![t(0), t(1), t(3)], vec![1, 2, 3]).is_err());
        assert!(TimeSeries::from_index(vec![t(0), t(1)], vec![1, 2, 3]).is_err());
    }

    #[test]
    fn position_and_slice() {
        let ts = TimeSeries::new(t(0), hour(), vec![10, 11, 12, 13]).unwrap();
        assert_eq!(ts.position(t(2)), Some(2));
        assert_eq!(ts.position(t(4)), None);
        assert_eq!(ts.position(t(-1)), None);
        assert_eq!(ts.position(t(1) + TimeDelta::minutes(30)), None);
        let s = ts.slice(t(1), 2).unwrap();
        assert_eq!(s.values(), &[11, 12]);
        assert_eq!(s.start(), t(1));
        assert!(ts.slice(t(3), 2).is_none());
        assert_eq!(ts.end(), t(4));
    }
}
