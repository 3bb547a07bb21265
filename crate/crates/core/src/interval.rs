//! Closed integer intervals with optional infinite endpoints.

use std::cmp::{max, min};
use std::fmt;

/// An interval over the integers. `None` endpoints are −∞ / +∞.
///
/// Non-empty intervals always satisfy `lo ≤ hi`; anything else collapses to
/// [`Interval::Empty`] at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Interval {
    Empty,
    Range { lo: Option<i64>, hi: Option<i64> },
}

impl Interval {
    pub const TOP: Interval = Interval::Range { lo: None, hi: None };

    pub fn new(lo: Option<i64>, hi: Option<i64>) -> Self {
        match (lo, hi) {
            (Some(l), Some(h)) if l > h => Interval::Empty,
            _ => Interval::Range { lo, hi },
        }
    }

    pub fn closed(lo: i64, hi: i64) -> Self {
        Self::new(Some(lo), Some(hi))
    }

    /// `[m, +∞)`
    pub fn at_least(m: i64) -> Self {
        Self::new(Some(m), None)
    }

    /// `(−∞, m]`
    pub fn at_most(m: i64) -> Self {
        Self::new(None, Some(m))
    }

    /// Integers strictly greater than `m`.
    pub fn greater_than(m: i64) -> Self {
        match m.checked_add(1) {
            Some(lo) => Self::at_least(lo),
            None => Interval::Empty,
        }
    }

    /// Integers strictly less than `m`.
    pub fn less_than(m: i64) -> Self {
        match m.checked_sub(1) {
            Some(hi) => Self::at_most(hi),
            None => Interval::Empty,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Interval::Empty)
    }

    pub fn contains(&self, v: i64) -> bool {
        match *self {
            Interval::Empty => false,
            Interval::Range { lo, hi } => lo.is_none_or(|l| l <= v) && hi.is_none_or(|h| v <= h),
        }
    }

    /// Real-valued membership, used when a numeric column holds floats.
    pub fn contains_f64(&self, v: f64) -> bool {
        match *self {
            Interval::Empty => false,
            Interval::Range { lo, hi } => {
                lo.is_none_or(|l| l as f64 <= v) && hi.is_none_or(|h| v <= h as f64)
            }
        }
    }

    /// Containment order: `self ⊆ other`.
    pub fn leq(&self, other: &Interval) -> bool {
        match (*self, *other) {
            (Interval::Empty, _) => true,
            (_, Interval::Empty) => false,
            (Interval::Range { lo: l1, hi: h1 }, Interval::Range { lo: l2, hi: h2 }) => {
                lower_le(l2, l1) && upper_le(h1, h2)
            }
        }
    }

    /// Convex hull; `Empty` is the identity.
    pub fn join(&self, other: &Interval) -> Interval {
        match (*self, *other) {
            (Interval::Empty, x) | (x, Interval::Empty) => x,
            (Interval::Range { lo: l1, hi: h1 }, Interval::Range { lo: l2, hi: h2 }) => {
                let lo = match (l1, l2) {
                    (Some(a), Some(b)) => Some(min(a, b)),
                    _ => None,
                };
                let hi = match (h1, h2) {
                    (Some(a), Some(b)) => Some(max(a, b)),
                    _ => None,
                };
                Interval::new(lo, hi)
            }
        }
    }

    /// Intersection.
    pub fn meet(&self, other: &Interval) -> Interval {
        match (*self, *other) {
            (Interval::Empty, _) | (_, Interval::Empty) => Interval::Empty,
            (Interval::Range { lo: l1, hi: h1 }, Interval::Range { lo: l2, hi: h2 }) => {
                let lo = match (l1, l2) {
                    (Some(a), Some(b)) => Some(max(a, b)),
                    (a, b) => a.or(b),
                };
                let hi = match (h1, h2) {
                    (Some(a), Some(b)) => Some(min(a, b)),
                    (a, b) => a.or(b),
                };
                Interval::new(lo, hi)
            }
        }
    }
}

fn lower_le(a: Option<i64>, b: Option<i64>) -> bool {
    match (a, b) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(x), Some(y)) => x <= y,
    }
}

fn upper_le(a: Option<i64>, b: Option<i64>) -> bool {
    match (a, b) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(x), Some(y)) => x <= y,
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Interval::Empty => f.write_str("[]"),
            Interval::Range { lo, hi } => {
                match lo {
                    Some(l) => write!(f, "[{l}, ")?,
                    None => f.write_str("[-inf, ")?,
                }
                match hi {
                    Some(h) => write!(f, "{h}]"),
                    None => f.write_str("inf]"),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn join_examples() {
        assert_eq!(
            Interval::closed(0, 5).join(&Interval::closed(3, 9)),
            Interval::closed(0, 9)
        );
        assert_eq!(
            Interval::closed(2, 4).join(&Interval::closed(2, 4)),
            Interval::closed(2, 4)
        );
        assert_eq!(
            Interval::closed(0, 1).join(&Interval::closed(5, 9)),
            Interval::closed(0, 9)
        );
        assert_eq!(
            Interval::Empty.join(&Interval::closed(1, 2)),
            Interval::closed(1, 2)
        );
    }

    #[test]
    fn meet_examples() {
        assert_eq!(
            Interval::closed(0, 5).meet(&Interval::closed(3, 9)),
            Interval::closed(3, 5)
        );
        assert_eq!(
            Interval::closed(0, 1).meet(&Interval::closed(5, 9)),
            Interval::Empty
        );
        assert_eq!(
            Interval::TOP.meet(&Interval::closed(3, 9)),
            Interval::closed(3, 9)
        );
    }

    #[test]
    fn strict_bounds_desugar() {
        assert_eq!(Interval::greater_than(17), Interval::at_least(18));
        assert_eq!(Interval::less_than(5), Interval::at_most(4));
        assert!(Interval::greater_than(i64::MAX).is_empty());
        assert!(Interval::less_than(i64::MIN).is_empty());
    }

    #[test]
    fn display() {
        assert_eq!(Interval::at_least(18).to_string(), "[18, inf]");
        assert_eq!(Interval::TOP.to_string(), "[-inf, inf]");
        assert_eq!(Interval::Empty.to_string(), "[]");
    }

    fn endpoint() -> impl Strategy<Value = Option<i64>> {
        prop_oneof![1 => Just(None), 6 => (-20i64..20).prop_map(Some)]
    }

    fn interval() -> impl Strategy<Value = Interval> {
        (endpoint(), endpoint()).prop_map(|(lo, hi)| Interval::new(lo, hi))
    }

    proptest! {
        // Hull oracle: the join contains exactly the integers in
        // [min endpoint, max endpoint] over the non-empty operands.
        #[test]
        fn join_is_hull(a in interval(), b in interval()) {
            let j = a.join(&b);
            for v in -25i64..25 {
                let members: Vec<i64> = (-25i64..25).filter(|&x| a.contains(x) || b.contains(x)).collect();
                let expect = match (members.first(), members.last()) {
                    (Some(&lo), Some(&hi)) => {
                        let lo_inf = matches!(a, Interval::Range { lo: None, .. }) || matches!(b, Interval::Range { lo: None, .. });
                        let hi_inf = matches!(a, Interval::Range { hi: None, .. }) || matches!(b, Interval::Range { hi: None, .. });
                        (lo_inf || v >= lo) && (hi_inf || v <= hi)
                    }
                    _ => false,
                };
                prop_assert_eq!(j.contains(v), expect);
            }
        }

        #[test]
        fn meet_is_intersection(a in interval(), b in interval()) {
            let m = a.meet(&b);
            for v in -25i64..25 {
                prop_assert_eq!(m.contains(v), a.contains(v) && b.contains(v));
            }
        }
    }
}
