//! Finite unions of closed intervals over the extended real line.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

/// Closed interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is reversed");
        Self { lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Sorted, pairwise disjoint, maximally merged closed intervals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealIntervalSet {
    intervals: Vec<Interval>,
}

impl RealIntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn whole_line() -> Self {
        Self {
            intervals: vec![Interval::new(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    pub fn single(lo: f64, hi: f64) -> Self {
        Self::from_intervals([Interval::new(lo, hi)])
    }

    /// Canonicalizes an arbitrary collection: drops NaN/reversed pieces,
    /// sorts, and merges overlapping or touching intervals.
    pub fn from_intervals(items: impl IntoIterator<Item = Interval>) -> Self {
        let mut v: Vec<Interval> = items
            .into_iter()
            .filter(|i| !i.lo.is_nan() && !i.hi.is_nan() && i.lo <= i.hi)
            .collect();
        v.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut out: Vec<Interval> = Vec::with_capacity(v.len());
        for i in v {
            match out.last_mut() {
                Some(last) if i.lo <= last.hi => last.hi = last.hi.max(i.hi),
                _ => out.push(i),
            }
        }
        Self { intervals: out }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn is_whole_line(&self) -> bool {
        matches!(self.intervals.as_slice(), [i] if i.lo == f64::NEG_INFINITY && i.hi == f64::INFINITY)
    }

    pub fn is_bounded(&self) -> bool {
        self.intervals
            .iter()
            .all(|i| i.lo.is_finite() && i.hi.is_finite())
    }

    pub fn contains(&self, x: f64) -> bool {
        // Sorted, so a binary search finds the only candidate.
        let idx = self.intervals.partition_point(|i| i.hi < x);
        self.intervals.get(idx).is_some_and(|i| i.contains(x))
    }

    /// Lebesgue measure; `+inf` for unbounded sets.
    pub fn total_length(&self) -> f64 {
        self.intervals.iter().fold(0.0, |acc, i| acc + i.length())
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::from_intervals(self.intervals.iter().chain(&other.intervals).copied())
    }

    /// Smallest and largest points, if non-empty.
    pub fn hull(&self) -> Option<Interval> {
        Some(Interval::new(
            self.intervals.first()?.lo,
            self.intervals.last()?.hi,
        ))
    }

    /// True when every piece of `self` lies inside `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.intervals.iter().all(|i| {
            let idx = other.intervals.partition_point(|o| o.hi < i.lo);
            other
                .intervals
                .get(idx)
                .is_some_and(|o| o.lo <= i.lo && i.hi <= o.hi)
        })
    }

    /// Checks the sorted / disjoint / non-adjacent invariants.
    pub fn is_canonical(&self) -> bool {
        self.intervals.iter().all(|i| i.lo <= i.hi)
            && self.intervals.windows(2).all(|w| w[0].hi < w[1].lo)
    }
}

impl FromIterator<Interval> for RealIntervalSet {
    fn from_iter<T: IntoIterator<Item = Interval>>(iter: T) -> Self {
        Self::from_intervals(iter)
    }
}

impl fmt::Display for RealIntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return write!(f, "empty");
        }
        for (k, i) in self.intervals.iter().enumerate() {
            if k > 0 {
                write!(f, " U ")?;
            }
            write!(f, "[{}, {}]", fmt_sig(i.lo, 6), fmt_sig(i.hi, 6))?;
        }
        Ok(())
    }
}

/// Formats to `digits` significant figures, with `-inf`/`inf` for infinities.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == f64::INFINITY {
        return "inf".into();
    }
    if x == f64::NEG_INFINITY {
        return "-inf".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let formatted = format!("{:.*e}", digits.saturating_sub(1), x);
    let v: f64 = formatted.parse().unwrap_or(x);
    let mag = v.abs().log10().floor() as i32;
    if (-5..15).contains(&mag) {
        let decimals = (digits as i32 - 1 - mag).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        formatted
    }
}

// JSON form: array of [lo, hi] pairs, infinities as "-inf"/"inf" strings.

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Endpoint {
    Num(f64),
    Text(String),
}

fn to_endpoint(x: f64) -> Endpoint {
    if x == f64::INFINITY {
        Endpoint::Text("inf".into())
    } else if x == f64::NEG_INFINITY {
        Endpoint::Text("-inf".into())
    } else {
        Endpoint::Num(x)
    }
}

fn from_endpoint<E: de::Error>(e: Endpoint) -> Result<f64, E> {
    match e {
        Endpoint::Num(x) => Ok(x),
        Endpoint::Text(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(E::custom(format!("bad interval endpoint {other:?}"))),
        },
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(2))?;
        seq.serialize_element(&to_endpoint(self.lo))?;
        seq.serialize_element(&to_endpoint(self.hi))?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (lo, hi) = <(Endpoint, Endpoint)>::deserialize(d)?;
        let (lo, hi) = (from_endpoint(lo)?, from_endpoint(hi)?);
        if !(lo <= hi) {
            return Err(de::Error::custom(format!("reversed interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }
}

impl Serialize for RealIntervalSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.intervals.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RealIntervalSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<Interval>::deserialize(d)?;
        Ok(Self::from_intervals(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_interval() -> impl Strategy<Value = Interval> {
        (-100.0..100.0f64, 0.0..20.0f64, 0..10u8).prop_map(|(lo, len, kind)| match kind {
            0 => Interval::new(f64::NEG_INFINITY, lo),
            1 => Interval::new(lo, f64::INFINITY),
            _ => Interval::new(lo, lo + len),
        })
    }

    fn arb_set() -> impl Strategy<Value = RealIntervalSet> {
        prop::collection::vec(arb_interval(), 0..6).prop_map(RealIntervalSet::from_intervals)
    }

    #[test]
    fn merging_and_membership() {
        let s = RealIntervalSet::from_intervals([
            Interval::new(3.0, 4.0),
            Interval::new(0.0, 1.0),
            Interval::new(1.0, 2.0),
            Interval::new(3.5, 3.7),
        ]);
        assert_eq!(
            s.intervals(),
            &[Interval::new(0.0, 2.0), Interval::new(3.0, 4.0)]
        );
        assert!(s.contains(1.0) && s.contains(3.0) && !s.contains(2.5));
        assert_eq!(s.total_length(), 3.0);
        assert!(RealIntervalSet::empty().total_length().is_sign_positive());
        assert!(s.is_canonical());
        assert_eq!(s.to_string(), "[0, 2] U [3, 4]");
    }

    #[test]
    fn json_uses_string_sentinels() {
        let s = RealIntervalSet::from_intervals([
            Interval::new(f64::NEG_INFINITY, -1.5),
            Interval::new(0.25, f64::INFINITY),
        ]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"[["-inf",-1.5],[0.25,"inf"]]"#);
        let back: RealIntervalSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.total_length(), f64::INFINITY);
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(1.804_003_2, 6), "1.804");
        assert_eq!(fmt_sig(0.043_215_67, 6), "0.0432157");
        assert_eq!(fmt_sig(-123_456.78, 6), "-123457");
        assert_eq!(fmt_sig(f64::NEG_INFINITY, 6), "-inf");
    }

    proptest! {
        #[test]
        fn union_is_commutative_associative_and_canonical(a in arb_set(), b in arb_set(), c in arb_set()) {
            let ab = a.union(&b);
            prop_assert!(ab.is_canonical());
            prop_assert_eq!(&ab, &b.union(&a));
            prop_assert_eq!(ab.union(&c), a.union(&b.union(&c)));
            prop_assert!(a.is_subset_of(&ab) && b.is_subset_of(&ab));
        }

        #[test]
        fn membership_is_pointwise_union(a in arb_set(), b in arb_set(), x in -150.0..150.0f64) {
            prop_assert_eq!(a.union(&b).contains(x), a.contains(x) || b.contains(x));
        }

        #[test]
        fn json_round_trip_is_exact(a in arb_set()) {
            let back: RealIntervalSet = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
            prop_assert_eq!(back, a);
        }
    }
}
