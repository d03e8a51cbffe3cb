//! Bjøntegaard delta rate with monotone cubic (PCHIP) interpolation of
//! `log10(rate)` as a function of quality.

use crate::error::{Error, Result};

/// One operating point of an RD curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub rate: f64,
    pub quality: f64,
}

/// Piecewise cubic Hermite interpolant with shape-preserving slopes.
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` strictly increasing, at least two knots.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Contract("interpolation needs at least two aligned knots".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Contract("interpolation knots must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                let (a, b) = (delta[k - 1], delta[k]);
                if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
                    d[k] = 0.0;
                } else {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / a + w2 / b);
                }
            }
            d[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip { x, y, d })
    }

    fn segment(&self, t: f64) -> usize {
        let k = self.x.partition_point(|&v| v <= t);
        k.clamp(1, self.x.len() - 1) - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (h00, h10) = (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s);
        let (h01, h11) = (-2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    /// Exact integral over `[a, b]` inside the knot range: two-point
    /// Gauss-Legendre per piece is exact for cubics.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let g = 0.5 / 3f64.sqrt();
        let mut total = 0.0;
        for k in 0..self.x.len() - 1 {
            let lo = a.max(self.x[k]);
            let hi = b.min(self.x[k + 1]);
            if hi <= lo {
                continue;
            }
            let (mid, half) = (0.5 * (lo + hi), hi - lo);
            // evaluate on this piece even at shared knots
            let at = |t: f64| {
                let h = self.x[k + 1] - self.x[k];
                let s = (t - self.x[k]) / h;
                let (h00, h10) = (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s);
                let (h01, h11) = (-2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
                h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
            };
            total += 0.5 * half * (at(mid - g * half) + at(mid + g * half));
        }
        total
    }
}

/// One-sided three-point end slope, limited to preserve shape.
fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

fn curve(points: &[CurvePoint], which: &str) -> Result<Pchip> {
    if points.len() < 4 {
        return Err(Error::Contract(format!("{which} curve needs at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|p| !(p.rate > 0.0) || !p.quality.is_finite()) {
        return Err(Error::Contract(format!("{which} curve has a non-positive rate or non-finite quality")));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.quality.total_cmp(&b.quality));
    Pchip::new(
        pts.iter().map(|p| p.quality).collect(),
        pts.iter().map(|p| p.rate.log10()).collect(),
    )
}

/// Average rate difference of `test` against `anchor` at equal quality, in
/// percent (negative means `test` needs fewer bits).
pub fn bd_rate(anchor: &[CurvePoint], test: &[CurvePoint]) -> Result<f64> {
    let a = curve(anchor, "anchor")?;
    let t = curve(test, "test")?;
    let lo = a.x[0].max(t.x[0]);
    let hi = a.x[a.x.len() - 1].min(t.x[t.x.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Contract(format!(
            "quality ranges do not overlap (anchor {:.4}..{:.4}, test {:.4}..{:.4})",
            a.x[0],
            a.x[a.x.len() - 1],
            t.x[0],
            t.x[t.x.len() - 1]
        )));
    }
    let avg = (t.integrate(lo, hi) - a.integrate(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}
