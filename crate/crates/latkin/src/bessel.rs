//! Bessel functions of the first kind with integer order.

use std::f64::consts::TAU;

/// `J_n(x)` for integer `n` and real `x`.
///
/// Power series for `|x| < 2`, Miller's backward recurrence normalised by
/// `J₀ + 2ΣJ_{2k} = 1` otherwise.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    // J_{−n} = (−1)^n J_n and J_n(−x) = (−1)^n J_n(x)
    let sign = |odd: bool| if odd { -1.0 } else { 1.0 };
    let na = n.unsigned_abs() as usize;
    let mut s = 1.0;
    if n < 0 {
        s *= sign(na % 2 == 1);
    }
    if x < 0.0 {
        s *= sign(na % 2 == 1);
    }
    s * bessel_j_nonneg(na, x.abs())
}

fn bessel_j_nonneg(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if x < 2.0 {
        return series(n, x);
    }
    miller(n, x)
}

fn series(n: usize, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut lead = 1.0;
    for k in 1..=n {
        lead *= h / k as f64;
        if lead == 0.0 {
            return 0.0;
        }
    }
    let q = -h * h;
    let mut term = lead;
    let mut sum = lead;
    for m in 1..200 {
        term *= q / (m as f64 * (m + n) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn miller(n: usize, x: f64) -> f64 {
    let top = (n as f64).max(x);
    let mut m = (top + 30.0 + (50.0 * top).sqrt()) as usize;
    m += m % 2;
    let (mut jp, mut j) = (0.0f64, 1e-300f64);
    let mut norm = 0.0;
    let mut want = 0.0;
    for k in (1..=m).rev() {
        // j = J_k, jp = J_{k+1} (unnormalised)
        let jm = 2.0 * k as f64 / x * j - jp;
        jp = j;
        j = jm;
        if k - 1 == n {
            want = j;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * j;
        }
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp *= 1e-250;
            want *= 1e-250;
            norm *= 1e-250;
        }
    }
    if n == 0 {
        want = j;
    }
    norm += j;
    want / norm
}

/// `J_n(x)` from `(1/2π)∫₀^{2π} cos(nθ − x sin θ) dθ` with the periodic
/// trapezoid rule on `nodes` points.
pub fn bessel_j_quadrature(n: i64, x: f64, nodes: usize) -> f64 {
    let h = TAU / nodes as f64;
    (0..nodes)
        .map(|j| {
            let t = j as f64 * h;
            (n as f64 * t - x * t.sin()).cos()
        })
        .sum::<f64>()
        / nodes as f64
}

/// Quadrature path with node doubling until two successive values agree.
pub fn bessel_j_adaptive(n: i64, x: f64) -> f64 {
    let mut nodes = 64usize;
    let mut prev = bessel_j_quadrature(n, x, nodes);
    while nodes < 1 << 16 {
        nodes *= 2;
        let cur = bessel_j_quadrature(n, x, nodes);
        if (cur - prev).abs() <= 1e-15 {
            return cur;
        }
        prev = cur;
    }
    prev
}
