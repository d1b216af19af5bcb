//! One-dimensional quadrature rules.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Gauss–Legendre rule on `[−1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes by Newton iteration on `P_n`, starting from the Chebyshev guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// `panels` equal panels on `[a, b]`, each with this rule.
    pub fn composite(&self, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| self.integrate(a + p as f64 * h, a + (p + 1) as f64 * h, &f))
            .sum()
    }

    /// All nodes and weights of the composite rule.
    pub fn composite_nodes(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (b - a) / panels as f64;
        (0..panels)
            .flat_map(|p| {
                self.mapped(a + p as f64 * h, a + (p + 1) as f64 * h)
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive Gauss–Legendre: bisect until the order-`n` and order-`2n` results
/// on a panel agree to `tol` (absolute, distributed over panels).
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    thread_local! {
        static RULES: (GaussLegendre, GaussLegendre) = (GaussLegendre::new(10), GaussLegendre::new(20));
    }
    RULES.with(|(lo, hi)| {
        let mut stack = vec![(a, b, 0u32)];
        let mut total = 0.0;
        let width = (b - a).abs().max(f64::MIN_POSITIVE);
        while let Some((x0, x1, depth)) = stack.pop() {
            let c = lo.integrate(x0, x1, f);
            let r = hi.integrate(x0, x1, f);
            let allowed = tol * (x1 - x0).abs() / width;
            if (c - r).abs() <= allowed.max(1e-15 * r.abs()) {
                total += r;
            } else if depth >= 48 {
                return Err(Error::Numerical(format!(
                    "adaptive quadrature did not converge on [{x0}, {x1}]: residual {}",
                    (c - r).abs()
                )));
            } else {
                let m = 0.5 * (x0 + x1);
                stack.push((x0, m, depth + 1));
                stack.push((m, x1, depth + 1));
            }
        }
        Ok(total)
    })
}

/// [`adaptive`] with the tolerance taken relative to a first 20-point
/// estimate of `∫|f|`.
pub fn adaptive_relative(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> Result<f64> {
    thread_local! {
        static GL: GaussLegendre = GaussLegendre::new(20);
    }
    let scale = GL.with(|gl| gl.integrate(a, b, |x| f(x).abs()));
    adaptive(f, a, b, rel * scale.max(f64::MIN_POSITIVE))
}

/// Double-exponential (tanh-sinh) rule on `[a, b]`. Tolerates integrable
/// endpoint singularities; the integrand is never evaluated at the endpoints
/// (nodes that round onto an endpoint are dropped). Levels are refined until
/// successive estimates agree to `tol` relative.
pub fn tanh_sinh(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let g = |dl: f64, dr: f64| {
        let x = if dl <= dr { a + dl } else { b - dr };
        if x <= a.min(b) || x >= a.max(b) {
            0.0
        } else {
            f(x)
        }
    };
    tanh_sinh_gaps(&g, a, b, tol)
}

/// [`tanh_sinh`] for an integrand given as a function of the distances
/// `(x − a, b − x)` to both endpoints. Both distances are exact at every node,
/// so singular factors such as `(b − x)^{−p}` can be evaluated without the
/// cancellation in `b − x`.
pub fn tanh_sinh_gaps(f: &dyn Fn(f64, f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let h = 0.5 * (b - a);
    let tmax = 4.0;
    let eval = |t: f64| -> (f64, f64) {
        let u = 0.5 * PI * t.sinh();
        let ch = u.cosh();
        let w = 0.5 * PI * t.cosh() / (ch * ch);
        let gap = h / (u.exp() * ch); // h(1 − tanh u) = h·e^{−u}/cosh u
        if gap <= 0.0 || !gap.is_finite() || w == 0.0 {
            return (0.0, 0.0);
        }
        let far = 2.0 * h - gap;
        let (p, q) = (f(gap, far), f(far, gap));
        (h * w * (p + q), h * w * (p.abs() + q.abs()))
    };
    let mut step = 0.5;
    let mid = h * 0.5 * PI * f(h, h);
    let (mut sum, mut mag) = (mid, mid.abs());
    let mut k = 1;
    while k as f64 * step <= tmax {
        let (v, m) = eval(k as f64 * step);
        sum += v;
        mag += m;
        k += 1;
    }
    let mut prev = sum * step;
    for _ in 0..12 {
        step *= 0.5;
        let mut k = 1;
        while k as f64 * step <= tmax {
            let (v, m) = eval(k as f64 * step);
            sum += v;
            mag += m;
            k += 2;
        }
        let cur = sum * step;
        // Accept at the requested tolerance or once the change is at the
        // rounding level of the accumulated sum.
        let noise = 64.0 * f64::EPSILON * mag * step;
        if (cur - prev).abs() <= (tol * cur.abs()).max(noise).max(1e-300) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Numerical(format!(
        "tanh-sinh quadrature did not reach tolerance {tol} on [{a}, {b}]"
    )))
}
