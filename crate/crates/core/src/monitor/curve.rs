//! Incremental regressogram of response time against admitted rate.
//!
//! The admitted-rate axis is cut into slices of width `slice_width`. Each slice keeps running
//! sums of the points that fell into it; its barycenter is the mean point. Slices whose response
//! time mean is too uncertain are left out of the curve, and adjacent barycenters that break
//! monotonicity are merged for good. The surviving barycenters, plus the idle benchmark point
//! on the left, are joined by straight lines.

use std::collections::BTreeMap;

use crate::stats::RunningStats;

/// A point of the curve: admitted rate (sessions/s) and 95th percentile response time (s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub lambda: f64,
    pub rt: f64,
}

impl Knot {
    pub fn new(lambda: f64, rt: f64) -> Self {
        Knot { lambda, rt }
    }
}

/// Running statistics of one slice `[lo, hi) * slice_width` of the rate axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStats {
    /// First base interval covered (inclusive).
    pub lo: u64,
    /// One past the last base interval covered.
    pub hi: u64,
    lambda: RunningStats,
    rt: RunningStats,
}

impl SliceStats {
    fn new(k: u64) -> Self {
        SliceStats {
            lo: k,
            hi: k + 1,
            lambda: RunningStats::new(),
            rt: RunningStats::new(),
        }
    }

    pub fn count(&self) -> u64 {
        self.rt.count()
    }

    pub fn barycenter(&self) -> Knot {
        Knot::new(self.lambda.mean(), self.rt.mean())
    }

    pub fn rt_variance(&self) -> f64 {
        self.rt.variance()
    }

    /// Standard error of the response-time mean relative to the mean; `None` below two points.
    pub fn relative_standard_error(&self) -> Option<f64> {
        let m = self.count();
        let mean = self.rt.mean();
        if m < 2 || mean <= 0.0 {
            return None;
        }
        Some((self.rt.variance() / m as f64).sqrt() / mean)
    }

    pub fn is_reliable(&self, max_relative_se: f64) -> bool {
        self.relative_standard_error()
            .is_some_and(|rse| rse <= max_relative_se)
    }

    fn push(&mut self, lambda: f64, rt: f64) {
        self.lambda.push(lambda);
        self.rt.push(rt);
    }

    fn absorb(&mut self, other: &SliceStats) {
        self.lo = self.lo.min(other.lo);
        self.hi = self.hi.max(other.hi);
        self.lambda.merge(&other.lambda);
        self.rt.merge(&other.rt);
    }
}

/// Piecewise-linear function through knots that increase in both coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    knots: Vec<Knot>,
}

impl Interpolant {
    /// `knots` must be non-empty and strictly increasing in both coordinates.
    pub fn new(knots: Vec<Knot>) -> Self {
        assert!(!knots.is_empty(), "an interpolant needs at least one knot");
        debug_assert!(
            knots
                .windows(2)
                .all(|w| w[1].lambda > w[0].lambda && w[1].rt > w[0].rt),
            "knots must increase in both coordinates: {knots:?}"
        );
        Interpolant { knots }
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    /// Predicted response time at admitted rate `lambda`. Left of the first knot the curve is
    /// flat; right of the last knot the final segment is prolonged.
    pub fn eval(&self, lambda: f64) -> f64 {
        let k = &self.knots;
        if k.len() == 1 || lambda <= k[0].lambda {
            return k[0].rt;
        }
        let j = k
            .windows(2)
            .position(|w| lambda <= w[1].lambda)
            .unwrap_or(k.len() - 2);
        let (a, b) = (k[j], k[j + 1]);
        a.rt + (lambda - a.lambda) * (b.rt - a.rt) / (b.lambda - a.lambda)
    }

    /// Smallest admitted rate at which the curve reaches `target`.
    ///
    /// Returns 0 when `target` lies below the first knot and `+inf` when the curve never
    /// climbs to `target` (a single knot below it).
    pub fn invert(&self, target: f64) -> f64 {
        let k = &self.knots;
        if target < k[0].rt {
            return 0.0;
        }
        if target == k[0].rt {
            return k[0].lambda;
        }
        if k.len() == 1 {
            return f64::INFINITY;
        }
        let j = k
            .windows(2)
            .position(|w| target <= w[1].rt)
            .unwrap_or(k.len() - 2);
        let (a, b) = (k[j], k[j + 1]);
        let slope = (b.rt - a.rt) / (b.lambda - a.lambda);
        if slope <= 0.0 {
            return f64::INFINITY;
        }
        a.lambda + (target - a.rt) / slope
    }
}

/// Regressogram for one tier.
#[derive(Debug, Clone)]
pub struct TierCurve {
    slice_width: f64,
    max_relative_se: f64,
    anchor: Option<Knot>,
    slices: BTreeMap<u64, SliceStats>,
    merges: u64,
}

impl TierCurve {
    pub fn new(slice_width: f64, max_relative_se: f64, anchor: Option<Knot>) -> Self {
        assert!(slice_width > 0.0, "slice width must be positive");
        TierCurve {
            slice_width,
            max_relative_se,
            anchor,
            slices: BTreeMap::new(),
            merges: 0,
        }
    }

    pub fn anchor(&self) -> Option<Knot> {
        self.anchor
    }

    pub fn slice_width(&self) -> f64 {
        self.slice_width
    }

    pub fn slices(&self) -> impl Iterator<Item = &SliceStats> {
        self.slices.values()
    }

    pub fn merges(&self) -> u64 {
        self.merges
    }

    fn base_index(&self, lambda: f64) -> u64 {
        let k = (lambda / self.slice_width).floor();
        if k <= 0.0 {
            0
        } else {
            k.min(u64::MAX as f64 / 2.0) as u64
        }
    }

    /// Key of the live slice covering `lambda`, if any.
    fn covering(&self, lambda: f64) -> Option<u64> {
        let k = self.base_index(lambda);
        self.slices
            .range(..=k)
            .next_back()
            .filter(|(_, s)| s.hi > k)
            .map(|(lo, _)| *lo)
    }

    /// Adds one observation to the slice covering it, then restores monotonicity.
    pub fn insert(&mut self, lambda: f64, rt: f64) {
        debug_assert!(lambda >= 0.0 && rt >= 0.0);
        let key = match self.covering(lambda) {
            Some(lo) => lo,
            None => {
                let k = self.base_index(lambda);
                self.slices.insert(k, SliceStats::new(k));
                k
            }
        };
        self.slices
            .get_mut(&key)
            .expect("covering slice exists")
            .push(lambda, rt);
        self.aggregate();
    }

    /// Reliable barycenters in rate order.
    pub fn reliable(&self) -> Vec<Knot> {
        self.slices
            .values()
            .filter(|s| s.is_reliable(self.max_relative_se))
            .map(SliceStats::barycenter)
            .collect()
    }

    /// Merges slices until the reliable barycenters increase in both coordinates.
    pub fn aggregate(&mut self) {
        loop {
            let reliable: Vec<(u64, f64)> = self
                .slices
                .iter()
                .filter(|(_, s)| s.is_reliable(self.max_relative_se))
                .map(|(lo, s)| (*lo, s.barycenter().rt))
                .collect();
            let Some(pair) = reliable.windows(2).find(|w| w[1].1 <= w[0].1) else {
                break;
            };
            self.merge_range(pair[0].0, pair[1].0);
        }
    }

    /// Merges every slice whose key lies in `[first, last]`, keeping intervals contiguous.
    fn merge_range(&mut self, first: u64, last: u64) {
        let keys: Vec<u64> = self.slices.range(first..=last).map(|(k, _)| *k).collect();
        let mut merged = self.slices.remove(&first).expect("slice to merge exists");
        for key in &keys[1..] {
            let other = self.slices.remove(key).expect("slice to merge exists");
            merged.absorb(&other);
        }
        self.merges += 1;
        self.slices.insert(merged.lo, merged);
    }

    /// Knots used for interpolation: the anchor (while it sits strictly below the first reliable
    /// barycenter) followed by the reliable barycenters.
    pub fn knots(&self) -> Vec<Knot> {
        let reliable = self.reliable();
        let mut knots = Vec::with_capacity(reliable.len() + 1);
        if let Some(anchor) = self.anchor {
            let below_first = reliable
                .first()
                .is_none_or(|b| anchor.lambda < b.lambda && anchor.rt < b.rt);
            if below_first {
                knots.push(anchor);
            }
        }
        knots.extend(reliable);
        knots
    }

    /// The fitted curve, or `None` when there is neither an anchor nor a reliable slice.
    pub fn interpolant(&self) -> Option<Interpolant> {
        let knots = self.knots();
        (!knots.is_empty()).then(|| Interpolant::new(knots))
    }

    pub fn eval(&self, lambda: f64) -> Option<f64> {
        self.interpolant().map(|f| f.eval(lambda))
    }

    /// Rate limit implied by this tier for a response-time target; `+inf` without knowledge.
    pub fn invert(&self, target: f64) -> f64 {
        self.interpolant().map_or(f64::INFINITY, |f| f.invert(target))
    }
}

/// One regressogram per tier.
#[derive(Debug, Clone)]
pub struct CurveEstimate {
    pub tiers: Vec<TierCurve>,
}

impl CurveEstimate {
    pub fn new(slice_width: f64, max_relative_se: f64, anchors: &[Option<Knot>]) -> Self {
        CurveEstimate {
            tiers: anchors
                .iter()
                .map(|a| TierCurve::new(slice_width, max_relative_se, *a))
                .collect(),
        }
    }

    /// Knot lists per tier, for dumps and plots.
    pub fn snapshot(&self) -> Vec<Vec<Knot>> {
        self.tiers.iter().map(TierCurve::knots).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve() -> TierCurve {
        TierCurve::new(1.0, 0.2, None)
    }

    #[test]
    fn single_insert_sets_barycenter() {
        let mut c = curve();
        c.insert(2.0, 4.0);
        let s: Vec<_> = c.slices().collect();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].count(), 1);
        assert_eq!(s[0].barycenter(), Knot::new(2.0, 4.0));
        // one point has no standard error yet
        assert!(c.reliable().is_empty());
    }

    #[test]
    fn barycenter_is_arithmetic_mean() {
        let mut c = TierCurve::new(4.0, 0.2, None);
        c.insert(1.0, 2.0);
        c.insert(3.0, 4.0);
        let s = c.slices().next().unwrap();
        assert_eq!(s.barycenter(), Knot::new(2.0, 3.0));
    }

    #[test]
    fn noisy_slice_is_excluded() {
        // rt samples {1, 3}: mean 2, sd sqrt(2), se 1, relative se 0.5
        let mut c = curve();
        c.insert(0.5, 1.0);
        c.insert(0.5, 3.0);
        assert!(c.reliable().is_empty());

        // relative se of exactly 25%: mean 4, se 1 -> excluded
        let mut c = curve();
        c.insert(0.5, 3.0);
        c.insert(0.5, 5.0);
        let rse = c.slices().next().unwrap().relative_standard_error().unwrap();
        assert!((rse - 0.25).abs() < 1e-12);
        assert!(c.reliable().is_empty());

        // relative se 2.5% -> kept
        let mut c = curve();
        c.insert(0.5, 3.9);
        c.insert(0.5, 4.1);
        assert_eq!(c.reliable().len(), 1);
    }

    fn insert_many(c: &mut TierCurve, lambda: f64, rt: f64, m: usize) {
        // alternate +-1% so the slice is reliable with the requested mean
        for i in 0..m {
            let jitter = if i % 2 == 0 { 0.01 } else { -0.01 } * rt;
            c.insert(lambda, rt + jitter);
        }
    }

    #[test]
    fn non_monotone_neighbours_merge_by_weight() {
        let mut c = curve();
        insert_many(&mut c, 2.0, 5.0, 10);
        insert_many(&mut c, 4.0, 4.0, 30);
        assert_eq!(c.merges(), 1);
        let slices: Vec<_> = c.slices().collect();
        assert_eq!(slices.len(), 1);
        assert_eq!((slices[0].lo, slices[0].hi), (2, 5));
        let b = slices[0].barycenter();
        assert!((b.lambda - 3.5).abs() < 1e-12);
        assert!((b.rt - 4.25).abs() < 1e-12);
        // later inserts anywhere in the merged span land in the merged slice
        c.insert(3.2, 4.25);
        assert_eq!(c.slices().count(), 1);
    }

    #[test]
    fn monotone_list_is_left_alone() {
        let mut c = curve();
        insert_many(&mut c, 1.0, 2.0, 4);
        insert_many(&mut c, 3.0, 3.0, 4);
        insert_many(&mut c, 5.0, 6.0, 4);
        let before = c.reliable();
        c.aggregate();
        assert_eq!(c.reliable(), before);
        assert_eq!(c.merges(), 0);
    }

    #[test]
    fn interpolation_cases() {
        let f = Interpolant::new(vec![Knot::new(0.0, 1.0), Knot::new(10.0, 5.0)]);
        assert_eq!(f.eval(5.0), 3.0);
        assert_eq!(f.eval(10.0), 5.0);
        assert_eq!(f.eval(0.0), 1.0);
        let g = Interpolant::new(vec![Knot::new(0.0, 1.0), Knot::new(10.0, 2.0)]);
        assert!((g.eval(20.0) - 3.0).abs() < 1e-12);
        let single = Interpolant::new(vec![Knot::new(3.0, 2.0)]);
        assert_eq!(single.eval(100.0), 2.0);
    }

    #[test]
    fn inversion_cases() {
        let f = Interpolant::new(vec![Knot::new(0.0, 1.0), Knot::new(10.0, 5.0)]);
        assert_eq!(f.invert(5.0), 10.0);
        let g = Interpolant::new(vec![
            Knot::new(0.0, 1.0),
            Knot::new(4.0, 2.0),
            Knot::new(8.0, 6.0),
        ]);
        assert_eq!(g.invert(4.0), 6.0);
        let h = Interpolant::new(vec![Knot::new(0.0, 1.0), Knot::new(10.0, 2.0)]);
        assert!((h.invert(3.0) - 20.0).abs() < 1e-12);
        // below the anchor the tier is saturated even when idle
        assert_eq!(h.invert(0.5), 0.0);
        // a lone knot under the target imposes no limit
        let single = Interpolant::new(vec![Knot::new(0.0, 3.0)]);
        assert_eq!(single.invert(5.0), f64::INFINITY);
    }

    #[test]
    fn anchor_only_while_below_first_barycenter() {
        let mut c = TierCurve::new(1.0, 0.2, Some(Knot::new(0.0, 3.0)));
        assert_eq!(c.knots(), vec![Knot::new(0.0, 3.0)]);
        assert_eq!(c.invert(5.0), f64::INFINITY);
        insert_many(&mut c, 2.5, 2.9, 4);
        // barycenter below the anchor: the anchor would break monotonicity
        assert_eq!(c.knots().len(), 1);
        let mut c = TierCurve::new(1.0, 0.2, Some(Knot::new(0.0, 3.0)));
        insert_many(&mut c, 2.5, 4.0, 4);
        assert_eq!(c.knots()[0], Knot::new(0.0, 3.0));
        assert!((c.invert(5.0) - 5.0).abs() < 1e-9);
    }

    /// Batch oracle: recompute slice contents from the raw points and interval bounds.
    fn batch_barycenter(points: &[(f64, f64)], lo: u64, hi: u64, width: f64) -> (usize, f64, f64) {
        let inside: Vec<_> = points
            .iter()
            .filter(|(l, _)| {
                let k = (l / width).floor().max(0.0) as u64;
                k >= lo && k < hi
            })
            .collect();
        let n = inside.len();
        let ml = inside.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let mr = inside.iter().map(|p| p.1).sum::<f64>() / n as f64;
        (n, ml, mr)
    }

    proptest! {
        #[test]
        fn curve_invariants(points in prop::collection::vec((0.0f64..10.0, 0.5f64..8.0), 1..200)) {
            let width = 0.7;
            let mut c = TierCurve::new(width, 0.2, Some(Knot::new(0.0, 0.4)));
            for &(l, r) in &points {
                c.insert(l, r);
                let reliable = c.reliable();
                prop_assert!(reliable.windows(2).all(|w| w[1].lambda > w[0].lambda && w[1].rt > w[0].rt));
            }
            // intervals contiguous, disjoint and covering every inserted point
            let slices: Vec<_> = c.slices().collect();
            prop_assert!(slices.windows(2).all(|w| w[0].hi <= w[1].lo));
            for &(l, _) in &points {
                let k = (l / width).floor() as u64;
                prop_assert!(slices.iter().any(|s| s.lo <= k && k < s.hi));
            }
            // incremental sums agree with batch recomputation
            for s in &slices {
                let (n, ml, mr) = batch_barycenter(&points, s.lo, s.hi, width);
                prop_assert_eq!(n as u64, s.count());
                let b = s.barycenter();
                prop_assert!((b.lambda - ml).abs() <= 1e-9 * ml.abs().max(1.0));
                prop_assert!((b.rt - mr).abs() <= 1e-9 * mr.abs().max(1.0));
            }
        }

        #[test]
        fn invert_undoes_eval_inside_segments(
            steps in prop::collection::vec((0.1f64..5.0, 0.1f64..5.0), 1..8),
            frac in 0.0f64..1.0,
            pick in 0usize..8,
        ) {
            let mut knots = vec![Knot::new(0.0, 1.0)];
            for (dl, dr) in steps {
                let last = *knots.last().unwrap();
                knots.push(Knot::new(last.lambda + dl, last.rt + dr));
            }
            let f = Interpolant::new(knots.clone());
            let j = pick % (knots.len() - 1);
            let lambda = knots[j].lambda + frac * (knots[j + 1].lambda - knots[j].lambda);
            let back = f.invert(f.eval(lambda));
            prop_assert!((back - lambda).abs() <= 1e-9 * lambda.max(1.0));
        }
    }
}
