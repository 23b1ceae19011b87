//! Arc-length resampling of polylines along a natural cubic spline.
//!
//! A lane polyline is interpolated with a parametric natural cubic spline
//! (chord-length parameterization). Arc length along the spline is
//! accumulated with Gauss-Legendre quadrature and inverted with Newton
//! iterations so that output nodes sit at multiples of the requested
//! spacing measured along the curve. Polylines with fewer than four
//! points fall back to piecewise-linear resampling, and the original
//! endpoints are always emitted verbatim.

use super::Point;

/// 8-point Gauss-Legendre nodes/weights on [-1, 1].
const GL_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_W: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// One cubic per span per axis: `value(dt) = a + b*dt + c*dt^2 + d*dt^3`.
struct Cubic {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

impl Cubic {
    /// Natural cubic spline through `(t[i], y[i])`: second derivative is
    /// zero at both ends, solved with the Thomas algorithm.
    fn natural(t: &[f64], y: &[f64]) -> Cubic {
        let n = t.len();
        debug_assert!(n >= 3);
        let spans = n - 1;
        let h: Vec<f64> = (0..spans).map(|i| t[i + 1] - t[i]).collect();

        // Tridiagonal system for interior second derivatives m[1..n-1].
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            let mut c_prime = vec![0.0; n];
            let mut d_prime = vec![0.0; n];
            c_prime[1] = h[1] / diag[1];
            d_prime[1] = rhs[1] / diag[1];
            for i in 2..n - 1 {
                let denom = diag[i] - h[i - 1] * c_prime[i - 1];
                c_prime[i] = h[i] / denom;
                d_prime[i] = (rhs[i] - h[i - 1] * d_prime[i - 1]) / denom;
            }
            m[n - 2] = d_prime[n - 2];
            for i in (1..n - 2).rev() {
                m[i] = d_prime[i] - c_prime[i] * m[i + 1];
            }
        }

        let mut cubic = Cubic {
            a: Vec::with_capacity(spans),
            b: Vec::with_capacity(spans),
            c: Vec::with_capacity(spans),
            d: Vec::with_capacity(spans),
        };
        for i in 0..spans {
            cubic.a.push(y[i]);
            cubic.b.push((y[i + 1] - y[i]) / h[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0);
            cubic.c.push(m[i] / 2.0);
            cubic.d.push((m[i + 1] - m[i]) / (6.0 * h[i]));
        }
        cubic
    }

    fn eval(&self, span: usize, dt: f64) -> f64 {
        self.a[span] + dt * (self.b[span] + dt * (self.c[span] + dt * self.d[span]))
    }

    fn deriv(&self, span: usize, dt: f64) -> f64 {
        self.b[span] + dt * (2.0 * self.c[span] + dt * 3.0 * self.d[span])
    }
}

struct Spline2 {
    knots: Vec<f64>,
    x: Cubic,
    y: Cubic,
}

impl Spline2 {
    fn fit(points: &[Point]) -> Spline2 {
        let mut knots = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        knots.push(0.0);
        for pair in points.windows(2) {
            acc += super::dist(pair[0], pair[1]);
            knots.push(acc);
        }
        let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
        Spline2 { x: Cubic::natural(&knots, &xs), y: Cubic::natural(&knots, &ys), knots }
    }

    fn span_of(&self, t: f64) -> usize {
        // partition_point returns the first knot > t; spans are [k_i, k_{i+1}).
        let i = self.knots.partition_point(|&k| k <= t);
        i.saturating_sub(1).min(self.knots.len() - 2)
    }

    fn point_at(&self, t: f64) -> Point {
        let span = self.span_of(t);
        let dt = t - self.knots[span];
        [self.x.eval(span, dt), self.y.eval(span, dt)]
    }

    fn speed_at(&self, t: f64) -> f64 {
        let span = self.span_of(t);
        let dt = t - self.knots[span];
        self.x.deriv(span, dt).hypot(self.y.deriv(span, dt))
    }

    /// Arc length of [t0, t1] by 8-point Gauss-Legendre.
    fn arc_between(&self, t0: f64, t1: f64) -> f64 {
        let mid = 0.5 * (t0 + t1);
        let half = 0.5 * (t1 - t0);
        let mut acc = 0.0;
        for k in 0..GL_X.len() {
            acc += GL_W[k] * self.speed_at(mid + half * GL_X[k]);
        }
        acc * half
    }
}

/// Walks the cumulative arc-length table and returns the parameter where
/// the spline arc length from the start equals `target`.
fn invert_arc(spline: &Spline2, table: &[(f64, f64)], target: f64) -> f64 {
    let i = table.partition_point(|&(_, s)| s <= target).saturating_sub(1);
    let i = i.min(table.len() - 2);
    let (t_lo, s_lo) = table[i];
    let (t_hi, s_hi) = table[i + 1];
    let mut t = if s_hi > s_lo {
        t_lo + (t_hi - t_lo) * (target - s_lo) / (s_hi - s_lo)
    } else {
        t_lo
    };
    for _ in 0..4 {
        let err = s_lo + spline.arc_between(t_lo, t) - target;
        let speed = spline.speed_at(t);
        if speed <= 0.0 {
            break;
        }
        t = (t - err / speed).clamp(t_lo, t_hi);
    }
    t
}

/// Resamples a polyline at equidistant arc-length steps. Returns at least
/// two points; both original endpoints are kept exactly. Errors when the
/// polyline has zero total length.
pub(super) fn resample_polyline(points: &[Point], spacing: f64) -> Result<Vec<Point>, ()> {
    debug_assert!(points.len() >= 2 && spacing > 0.0);
    if points.len() < 4 {
        return resample_linear(points, spacing);
    }
    let spline = Spline2::fit(points);

    // Cumulative arc-length table at sub-span resolution.
    let mut table = vec![(0.0, 0.0)];
    let mut total = 0.0;
    for span in 0..spline.knots.len() - 1 {
        let (t0, t1) = (spline.knots[span], spline.knots[span + 1]);
        let subdivisions = (((t1 - t0) / spacing).ceil() as usize).clamp(1, 64) * 2;
        for k in 1..=subdivisions {
            let ta = t0 + (t1 - t0) * (k - 1) as f64 / subdivisions as f64;
            let tb = t0 + (t1 - t0) * k as f64 / subdivisions as f64;
            total += spline.arc_between(ta, tb);
            table.push((tb, total));
        }
    }
    if !(total > 0.0) {
        return Err(());
    }

    let mut out = vec![points[0]];
    let mut s = spacing;
    // Interior samples stay clear of the final endpoint so the last edge
    // never degenerates to (near-)zero length.
    while s < total - spacing * 1e-6 {
        let t = invert_arc(&spline, &table, s);
        out.push(spline.point_at(t));
        s += spacing;
    }
    out.push(*points.last().expect("polyline has >= 2 points"));
    Ok(out)
}

/// Piecewise-linear fallback for polylines too short to fit a cubic.
fn resample_linear(points: &[Point], spacing: f64) -> Result<Vec<Point>, ()> {
    let mut cum = vec![0.0];
    for pair in points.windows(2) {
        cum.push(cum.last().unwrap() + super::dist(pair[0], pair[1]));
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(());
    }
    let mut out = vec![points[0]];
    let mut s = spacing;
    while s < total - spacing * 1e-6 {
        let i = cum.partition_point(|&c| c <= s).saturating_sub(1).min(points.len() - 2);
        let frac = (s - cum[i]) / (cum[i + 1] - cum[i]);
        let (a, b) = (points[i], points[i + 1]);
        out.push([a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]);
        s += spacing;
    }
    out.push(*points.last().unwrap());
    Ok(out)
}
