//! Finite domains of strictly positive integers.
//!
//! A domain is stored either as an arithmetic progression `start, start+step, ..., end`
//! or as an explicit sorted list. The representation is canonical: any non-empty value
//! set that forms an arithmetic progression is stored as one, so structural equality is
//! value equality. Wide ranges such as `[1..10^6]` and their multiples-of-k restrictions
//! never enumerate.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::CspError;

/// Integer type used for all variable values and expression arithmetic.
pub type Value = i64;

/// Saturation ceiling. An upper bound equal to this value means "unbounded above".
pub const UNBOUNDED: Value = i64::MAX;

#[derive(Clone, PartialEq, Eq, Hash)]
enum Repr {
    Progression {
        start: Value,
        end: Value,
        step: Value,
    },
    Set(Vec<Value>),
}

/// Ordered, deduplicated set of candidate values, all `>= 1`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Domain {
    repr: Repr,
}

impl Domain {
    pub fn empty() -> Self {
        Domain {
            repr: Repr::Set(Vec::new()),
        }
    }

    pub fn singleton(value: Value) -> Result<Self, CspError> {
        if value < 1 {
            return Err(CspError::NonPositiveValue(value));
        }
        Ok(Self::progression_unchecked(value, value, 1))
    }

    /// Contiguous range `[lo, hi]`. A lower bound below one is clamped to one.
    pub fn range(lo: Value, hi: Value) -> Self {
        Self::progression(lo, hi, 1)
    }

    /// Values `start, start + step, ...` not exceeding `end`; `start` is clamped to one
    /// by stepping forward.
    pub fn progression(start: Value, end: Value, step: Value) -> Self {
        let step = step.max(1);
        let mut start = start;
        if start < 1 {
            let gap = (1 - start) as i128;
            let k = (gap + step as i128 - 1) / step as i128;
            let s = start as i128 + k * step as i128;
            if s > i64::MAX as i128 {
                return Self::empty();
            }
            start = s as Value;
        }
        if start > end {
            return Self::empty();
        }
        let last = start as i128 + ((end as i128 - start as i128) / step as i128) * step as i128;
        Self::progression_unchecked(start, last as Value, step)
    }

    fn progression_unchecked(start: Value, end: Value, step: Value) -> Self {
        let step = if start == end { 1 } else { step };
        Domain {
            repr: Repr::Progression { start, end, step },
        }
    }

    /// Builds a domain from arbitrary values; rejects values below one.
    pub fn from_values<I: IntoIterator<Item = Value>>(values: I) -> Result<Self, CspError> {
        let mut v: Vec<Value> = values.into_iter().collect();
        if let Some(&bad) = v.iter().find(|&&x| x < 1) {
            return Err(CspError::NonPositiveValue(bad));
        }
        v.sort_unstable();
        v.dedup();
        Ok(Self::from_sorted(v))
    }

    /// `values` must be sorted ascending, deduplicated and positive.
    pub(crate) fn from_sorted(values: Vec<Value>) -> Self {
        debug_assert!(values.windows(2).all(|w| w[0] < w[1]));
        match values.len() {
            0 => Self::empty(),
            1 => Self::progression_unchecked(values[0], values[0], 1),
            n => {
                let step = values[1] - values[0];
                if values.windows(2).all(|w| w[1] - w[0] == step) {
                    Self::progression_unchecked(values[0], values[n - 1], step)
                } else {
                    Domain {
                        repr: Repr::Set(values),
                    }
                }
            }
        }
    }

    pub fn len(&self) -> u64 {
        match &self.repr {
            Repr::Progression { start, end, step } => ((end - start) / step) as u64 + 1,
            Repr::Set(v) => v.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(&self.repr, Repr::Set(v) if v.is_empty())
    }

    pub fn min(&self) -> Option<Value> {
        match &self.repr {
            Repr::Progression { start, .. } => Some(*start),
            Repr::Set(v) => v.first().copied(),
        }
    }

    pub fn max(&self) -> Option<Value> {
        match &self.repr {
            Repr::Progression { end, .. } => Some(*end),
            Repr::Set(v) => v.last().copied(),
        }
    }

    /// The single value, if the domain is fixed.
    pub fn value(&self) -> Option<Value> {
        match &self.repr {
            Repr::Progression { start, end, .. } if start == end => Some(*start),
            _ => None,
        }
    }

    pub fn contains(&self, value: Value) -> bool {
        match &self.repr {
            Repr::Progression { start, end, step } => {
                value >= *start && value <= *end && (value - start) % step == 0
            }
            Repr::Set(v) => v.binary_search(&value).is_ok(),
        }
    }

    /// Ascending iterator; reverse it for descending order.
    pub fn iter(&self) -> DomainIter<'_> {
        DomainIter {
            domain: self,
            front: 0,
            back: self.len(),
        }
    }

    fn nth_value(&self, i: u64) -> Value {
        match &self.repr {
            Repr::Progression { start, step, .. } => start + (i as Value) * step,
            Repr::Set(v) => v[i as usize],
        }
    }

    pub fn is_progression(&self) -> bool {
        matches!(self.repr, Repr::Progression { .. })
    }

    /// Restriction to `[lo, hi]`.
    pub fn restrict(&self, lo: Value, hi: Value) -> Domain {
        let (Some(min), Some(max)) = (self.min(), self.max()) else {
            return Self::empty();
        };
        if lo <= min && hi >= max {
            return self.clone();
        }
        match &self.repr {
            Repr::Progression { start, step, .. } => {
                let lo = lo.max(*start);
                let k = (lo as i128 - *start as i128 + *step as i128 - 1) / *step as i128;
                let first = *start as i128 + k * *step as i128;
                if first > i64::MAX as i128 {
                    return Self::empty();
                }
                Self::progression(first as Value, hi.min(max), *step)
            }
            Repr::Set(v) => {
                let a = v.partition_point(|&x| x < lo);
                let b = v.partition_point(|&x| x <= hi);
                Self::from_sorted(v[a..b.max(a)].to_vec())
            }
        }
    }

    pub fn intersect(&self, other: &Domain) -> Domain {
        match (&self.repr, &other.repr) {
            (
                Repr::Progression {
                    start: s1,
                    end: e1,
                    step: a,
                },
                Repr::Progression {
                    start: s2,
                    end: e2,
                    step: b,
                },
            ) => intersect_progressions(*s1, *e1, *a, *s2, *e2, *b),
            (Repr::Set(v), _) => {
                Self::from_sorted(v.iter().copied().filter(|&x| other.contains(x)).collect())
            }
            (_, Repr::Set(v)) => {
                Self::from_sorted(v.iter().copied().filter(|&x| self.contains(x)).collect())
            }
        }
    }

    /// Values that are multiples of `k`.
    pub fn multiples_of(&self, k: Value) -> Domain {
        let (Some(min), Some(max)) = (self.min(), self.max()) else {
            return Self::empty();
        };
        if k <= 1 {
            return self.clone();
        }
        let first = (min as i128 + k as i128 - 1) / k as i128 * k as i128;
        if first > max as i128 {
            return Self::empty();
        }
        self.intersect(&Self::progression(first as Value, max, k))
    }

    /// Keeps the values satisfying `keep`. Enumerates the domain.
    pub fn filter<F: FnMut(Value) -> bool>(&self, mut keep: F) -> Domain {
        Self::from_sorted(self.iter().filter(|&v| keep(v)).collect())
    }

    pub fn to_vec(&self) -> Vec<Value> {
        self.iter().collect()
    }
}

fn ext_gcd(a: i128, b: i128) -> (i128, i128, i128) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

fn intersect_progressions(
    s1: Value,
    e1: Value,
    a: Value,
    s2: Value,
    e2: Value,
    b: Value,
) -> Domain {
    let lo = s1.max(s2) as i128;
    let hi = e1.min(e2) as i128;
    if lo > hi {
        return Domain::empty();
    }
    let (a, b) = (a as i128, b as i128);
    let (g, p, _) = ext_gcd(a, b);
    let diff = s2 as i128 - s1 as i128;
    if diff % g != 0 {
        return Domain::empty();
    }
    let m = b / g;
    // s1 + i*a == s2 (mod b)  <=>  i == (diff/g) * inv(a/g) (mod b/g)
    let i0 = ((diff / g) % m * (p % m)).rem_euclid(m);
    let x0 = s1 as i128 + i0 * a;
    let lcm = a / g * b;
    let first = if x0 >= lo {
        x0 - (x0 - lo) / lcm * lcm
    } else {
        x0 + (lo - x0 + lcm - 1) / lcm * lcm
    };
    if first > hi {
        return Domain::empty();
    }
    if lcm > i64::MAX as i128 {
        return Domain::progression_unchecked(first as Value, first as Value, 1);
    }
    Domain::progression(first as Value, hi as Value, lcm as Value)
}

/// Double-ended iterator over a [`Domain`].
pub struct DomainIter<'a> {
    domain: &'a Domain,
    front: u64,
    back: u64,
}

impl Iterator for DomainIter<'_> {
    type Item = Value;

    fn next(&mut self) -> Option<Value> {
        if self.front >= self.back {
            return None;
        }
        let v = self.domain.nth_value(self.front);
        self.front += 1;
        Some(v)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.back - self.front) as usize;
        (n, Some(n))
    }
}

impl DoubleEndedIterator for DomainIter<'_> {
    fn next_back(&mut self) -> Option<Value> {
        if self.front >= self.back {
            return None;
        }
        self.back -= 1;
        Some(self.domain.nth_value(self.back))
    }
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Progression { start, end, .. } if start == end => write!(f, "{{{start}}}"),
            Repr::Progression {
                start,
                end,
                step: 1,
            } => write!(f, "[{start}..{end}]"),
            Repr::Progression { start, end, step } => write!(f, "[{start}..{end} step {step}]"),
            Repr::Set(v) if v.len() <= 16 => write!(f, "{v:?}"),
            Repr::Set(v) => write!(
                f,
                "{{{} values in [{}..{}]}}",
                v.len(),
                v[0],
                v[v.len() - 1]
            ),
        }
    }
}

/// Wire form: `{"min": a, "max": b}` for a contiguous range, otherwise an explicit list.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DomainDoc {
    Range { min: Value, max: Value },
    List(Vec<Value>),
}

impl Serialize for Domain {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let doc = match (&self.repr, self.min(), self.max()) {
            (Repr::Progression { step: 1, .. }, Some(min), Some(max)) if min != max => {
                DomainDoc::Range { min, max }
            }
            _ => DomainDoc::List(self.to_vec()),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match DomainDoc::deserialize(deserializer)? {
            DomainDoc::Range { min, max } => {
                if min < 1 {
                    return Err(serde::de::Error::custom(format!(
                        "domain minimum {min} is not positive"
                    )));
                }
                Ok(Domain::range(min, max))
            }
            DomainDoc::List(v) => Domain::from_values(v).map_err(serde::de::Error::custom),
        }
    }
}
