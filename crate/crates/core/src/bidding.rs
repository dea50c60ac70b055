//! Aggregate inverse demand and bid cost curves.
//!
//! Each group's optimal response `clamp(q + z − Vπ, 0, X)` is piecewise
//! linear in price with kinks at `w̲ = (q+z−X)/V` and `w̄ = (q+z)/V`.
//! Summing over groups gives a non-increasing piecewise-linear demand
//! `x̂(π)`; the bid curve is the integral of its inverse, a concave
//! piecewise quadratic with `u(0) = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiddingError {
    #[error("x = {x} outside curve domain [0, {max}]")]
    OutOfDomain { x: f64, max: f64 },
    #[error("{m} samples requested but the curve has {needed} anchor points (minimum 2)")]
    TooFewSamples { m: usize, needed: usize },
    #[error("V must be positive, got {0}")]
    BadV(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub price: f64,
    pub tag: Tag,
    pub group: usize,
}

/// Sorted `w̃` sequence: ascending price, lower tags before upper tags at
/// equal price, then by group. Duplicates are kept.
pub fn breakpoints(q: &[f64], z: &[f64], caps: &[f64], v: f64) -> Vec<Breakpoint> {
    let mut out = Vec::with_capacity(2 * q.len());
    for g in 0..q.len() {
        let b = q[g] + z[g];
        out.push(Breakpoint { price: (b - caps[g]) / v, tag: Tag::Lower, group: g });
        out.push(Breakpoint { price: b / v, tag: Tag::Upper, group: g });
    }
    out.sort_by(|a, b| {
        a.price.total_cmp(&b.price).then((a.tag == Tag::Upper).cmp(&(b.tag == Tag::Upper))).then(a.group.cmp(&b.group))
    });
    out
}

/// One linear piece `x̂ = intercept + slope·π` valid for `π ∈ (p_lo, p_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemandPiece {
    pub p_lo: f64,
    pub p_hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Aggregate demand as a function of price, built by the slope/intercept
/// recursion over the sorted breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseDemand {
    pub pieces: Vec<DemandPiece>,
    pub breakpoints: Vec<Breakpoint>,
}

pub fn inverse_demand(q: &[f64], z: &[f64], caps: &[f64], v: f64) -> InverseDemand {
    let bps = breakpoints(q, z, caps, v);
    let total: f64 = caps.iter().map(|c| c.max(0.0)).sum();
    let mut pieces = Vec::with_capacity(bps.len() + 1);
    let mut net: i64 = 0; // (#upper − #lower) seen so far
    let mut slope = 0.0;
    let mut intercept = total;
    let mut lo = f64::NEG_INFINITY;
    for bp in &bps {
        pieces.push(DemandPiece { p_lo: lo, p_hi: bp.price, slope, intercept });
        net += if bp.tag == Tag::Lower { -1 } else { 1 };
        let new_slope = v * net as f64;
        intercept += (slope - new_slope) * bp.price;
        slope = new_slope;
        lo = bp.price;
    }
    pieces.push(DemandPiece { p_lo: lo, p_hi: f64::INFINITY, slope, intercept });
    InverseDemand { pieces, breakpoints: bps }
}

impl InverseDemand {
    pub fn eval(&self, price: f64) -> f64 {
        let k = self.pieces.iter().position(|p| price <= p.p_hi).unwrap_or(self.pieces.len() - 1);
        let p = &self.pieces[k];
        if p.slope == 0.0 {
            p.intercept.max(0.0)
        } else {
            (p.intercept + p.slope * price).max(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Quadratic,
    Linear,
}

/// `u(x) = u_lo + marginal_lo·d + ½·curvature·d²` with `d = x − x_lo`, on
/// `[x_lo, x_hi]`. `curvature ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub x_lo: f64,
    pub x_hi: f64,
    pub u_lo: f64,
    pub marginal_lo: f64,
    pub curvature: f64,
}

impl Segment {
    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn value(&self, x: f64) -> f64 {
        let d = x - self.x_lo;
        self.u_lo + self.marginal_lo * d + 0.5 * self.curvature * d * d
    }

    pub fn marginal(&self, x: f64) -> f64 {
        self.marginal_lo + self.curvature * (x - self.x_lo)
    }

    pub fn u_hi(&self) -> f64 {
        self.value(self.x_hi)
    }

    pub fn marginal_hi(&self) -> f64 {
        self.marginal(self.x_hi)
    }

    /// Coefficients `(c0, c1, c2)` of `u(x) = c0 + c1·x + c2·x²` in absolute `x`.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        let c2 = 0.5 * self.curvature;
        let c1 = self.marginal_lo - self.curvature * self.x_lo;
        let c0 = self.u_lo - self.marginal_lo * self.x_lo + c2 * self.x_lo * self.x_lo;
        (c0, c1, c2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidCurve {
    pub kind: CurveKind,
    /// Ascending in `x` (descending in price). Positive widths only.
    pub segments: Vec<Segment>,
    pub domain_max: f64,
    pub breakpoints_price: Vec<f64>,
}

/// Integrates the inverse of the aggregate demand from `x = 0`, truncating
/// at zero price.
pub fn build_bid_curve(q: &[f64], z: &[f64], caps: &[f64], v: f64) -> Result<BidCurve, BiddingError> {
    if !(v > 0.0) {
        return Err(BiddingError::BadV(v));
    }
    let demand = inverse_demand(q, z, caps, v);
    let mut segments = Vec::new();
    let mut x_cur = 0.0;
    let mut u_cur = 0.0;
    for piece in demand.pieces.iter().rev() {
        if piece.slope == 0.0 {
            continue;
        }
        let lo = piece.p_lo.max(0.0);
        let hi = piece.p_hi;
        if !(hi > lo) {
            continue;
        }
        let width = -piece.slope * (hi - lo);
        if width <= 0.0 {
            continue;
        }
        let seg =
            Segment { x_lo: x_cur, x_hi: x_cur + width, u_lo: u_cur, marginal_lo: hi, curvature: 1.0 / piece.slope };
        u_cur = seg.u_hi();
        x_cur = seg.x_hi;
        segments.push(seg);
    }
    Ok(BidCurve {
        kind: CurveKind::Quadratic,
        segments,
        domain_max: x_cur,
        breakpoints_price: demand.breakpoints.iter().map(|b| b.price).collect(),
    })
}

/// Stepwise counterpart: each group bids its full cap at its threshold
/// price `(q+z)/V`; the curve integrates the resulting staircase.
pub fn build_linear_bid_curve(q: &[f64], z: &[f64], caps: &[f64], v: f64) -> Result<BidCurve, BiddingError> {
    if !(v > 0.0) {
        return Err(BiddingError::BadV(v));
    }
    let mut steps: Vec<(f64, f64, usize)> =
        (0..q.len()).map(|g| ((q[g] + z[g]) / v, caps[g], g)).filter(|&(w, x, _)| w > 0.0 && x > 0.0).collect();
    steps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
    let mut segments = Vec::with_capacity(steps.len());
    let (mut x_cur, mut u_cur) = (0.0, 0.0);
    for &(w, width, _) in &steps {
        let seg = Segment { x_lo: x_cur, x_hi: x_cur + width, u_lo: u_cur, marginal_lo: w, curvature: 0.0 };
        u_cur = seg.u_hi();
        x_cur = seg.x_hi;
        segments.push(seg);
    }
    let mut prices: Vec<f64> = (0..q.len()).map(|g| (q[g] + z[g]) / v).collect();
    prices.sort_by(f64::total_cmp);
    Ok(BidCurve { kind: CurveKind::Linear, segments, domain_max: x_cur, breakpoints_price: prices })
}

impl BidCurve {
    pub fn is_degenerate(&self) -> bool {
        self.segments.is_empty()
    }

    fn check(&self, x: f64) -> Result<(), BiddingError> {
        let tol = 1e-12 * (1.0 + self.domain_max);
        if !(x >= -tol && x <= self.domain_max + tol) {
            return Err(BiddingError::OutOfDomain { x, max: self.domain_max });
        }
        Ok(())
    }

    /// Index of the segment holding `x`, preferring the one that starts at
    /// `x` on a boundary. `None` on a degenerate curve.
    pub fn segment_index(&self, x: f64) -> Option<usize> {
        if self.segments.is_empty() {
            return None;
        }
        let k = self.segments.partition_point(|s| s.x_hi <= x);
        Some(k.min(self.segments.len() - 1))
    }

    pub fn value(&self, x: f64) -> Result<f64, BiddingError> {
        self.check(x)?;
        Ok(match self.segment_index(x) {
            None => 0.0,
            Some(k) => self.segments[k].value(x.clamp(0.0, self.domain_max)),
        })
    }

    /// Right derivative `h(x⁺)`; the left derivative at `domain_max`.
    pub fn marginal(&self, x: f64) -> Result<f64, BiddingError> {
        self.check(x)?;
        Ok(match self.segment_index(x) {
            None => 0.0,
            Some(k) => self.segments[k].marginal(x.clamp(0.0, self.domain_max)),
        })
    }

    /// Left derivative `h(x⁻)`; the right derivative at 0.
    pub fn left_marginal(&self, x: f64) -> Result<f64, BiddingError> {
        self.check(x)?;
        if self.segments.is_empty() {
            return Ok(0.0);
        }
        let k = self.segments.partition_point(|s| s.x_hi < x).min(self.segments.len() - 1);
        Ok(self.segments[k].marginal(x.clamp(0.0, self.domain_max)))
    }

    /// Curve demand at price `π`: the largest `x` with `h(x⁻) ≥ π`.
    pub fn demand(&self, price: f64) -> f64 {
        let mut x = 0.0;
        for s in &self.segments {
            if s.marginal_hi() >= price {
                x = s.x_hi;
                continue;
            }
            if s.marginal_lo > price && s.curvature < 0.0 {
                x = s.x_lo + (price - s.marginal_lo) / s.curvature;
            }
            break;
        }
        x
    }

    /// Points `0`, each segment boundary, and `domain_max`.
    pub fn anchors(&self) -> Vec<f64> {
        let mut v = vec![0.0];
        v.extend(self.segments.iter().map(|s| s.x_hi));
        v
    }

    /// `m` samples `(x, u(x))` in ascending `x`. All anchors are included;
    /// the rest are spread over segments in proportion to width.
    pub fn sample(&self, m: usize) -> Result<Vec<(f64, f64)>, BiddingError> {
        let anchors = self.anchors();
        let needed = anchors.len().max(2);
        if m < needed {
            return Err(BiddingError::TooFewSamples { m, needed });
        }
        if self.segments.is_empty() {
            return Ok(vec![(0.0, 0.0); m]);
        }
        let extra = m - anchors.len();
        let counts = apportion(extra, &self.segments.iter().map(Segment::width).collect::<Vec<_>>());
        let mut out = Vec::with_capacity(m);
        out.push((0.0, 0.0));
        for (s, &k) in self.segments.iter().zip(&counts) {
            for j in 1..=k {
                let x = s.x_lo + s.width() * j as f64 / (k + 1) as f64;
                out.push((x, s.value(x)));
            }
            out.push((s.x_hi, s.u_hi()));
        }
        Ok(out)
    }

    /// Samples with `extra` points beyond the anchors.
    pub fn sample_with_extra(&self, extra: usize) -> Vec<(f64, f64)> {
        let m = self.anchors().len().max(2) + extra;
        self.sample(m).expect("anchor count satisfied by construction")
    }
}

/// Largest-remainder split of `total` items proportional to `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(5, &[1.0, 1.0, 2.0]).iter().sum::<usize>(), 5);
        assert_eq!(apportion(4, &[1.0, 3.0]), vec![1, 3]);
        assert_eq!(apportion(3, &[0.0, 0.0]), vec![0, 0]);
    }

    #[test]
    fn coefficients_round_trip() {
        let s = Segment { x_lo: 2.0, x_hi: 5.0, u_lo: 7.0, marginal_lo: 3.0, curvature: -0.5 };
        let (c0, c1, c2) = s.coefficients();
        for x in [2.0, 3.3, 5.0] {
            assert!((c0 + c1 * x + c2 * x * x - s.value(x)).abs() < 1e-12);
        }
    }
}
