//! Generic phase `φ(k;R,u) = Σ R_i cos(2π(k_i+u_i))` and its bookkeeping.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// `(R, u)` of a generic phase, stored canonically: `R_i ≥ 0`,
/// `u_i ∈ (−1/2, 1/2]`, and `u_i = 0` wherever `R_i = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
}

impl PhaseSpec {
    pub fn new(r: Vec<f64>, u: Vec<f64>) -> Self {
        assert_eq!(r.len(), u.len());
        let amps: Vec<Complex64> = r
            .iter()
            .zip(&u)
            .map(|(&r, &u)| Complex64::from_polar(r, TAU * u))
            .collect();
        Self::from_amplitudes(&amps)
    }

    pub fn zero(d: usize) -> Self {
        PhaseSpec {
            r: vec![0.0; d],
            u: vec![0.0; d],
        }
    }

    /// The phase whose per-axis complex amplitude is `z_i = R_i e^{i2πu_i}`.
    pub fn from_amplitudes(z: &[Complex64]) -> Self {
        PhaseSpec {
            r: z.iter().map(|z| z.norm()).collect(),
            u: z.iter().map(|&z| arg_convention(z) / TAU).collect(),
        }
    }

    pub fn amplitudes(&self) -> Vec<Complex64> {
        self.r
            .iter()
            .zip(&self.u)
            .map(|(&r, &u)| Complex64::from_polar(r, TAU * u))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }
}

/// `arg z ∈ (−π, π]` with `arg 0 = 0`.
pub fn arg_convention(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// `φ(k;R,u)`.
pub fn phi(k: &[f64], spec: &PhaseSpec) -> f64 {
    phi_raw(k, &spec.r, &spec.u)
}

pub fn phi_raw(k: &[f64], r: &[f64], u: &[f64]) -> f64 {
    k.iter()
        .zip(r.iter().zip(u))
        .map(|(&k, (&r, &u))| r * (TAU * (k + u)).cos())
        .sum()
}

/// The single phase equal to the sum of the given phases.
pub fn combine_phases(terms: &[PhaseSpec]) -> PhaseSpec {
    assert!(!terms.is_empty(), "combine_phases needs at least one term");
    let d = terms[0].dim();
    let mut z = vec![Complex64::new(0.0, 0.0); d];
    for t in terms {
        for (zi, a) in z.iter_mut().zip(t.amplitudes()) {
            *zi += a;
        }
    }
    PhaseSpec::from_amplitudes(&z)
}

/// `z₀(k) = 1 − e^{−i2πk}`, `z₁(k) = 1 + e^{−i2πk}`.
pub fn z_factor(xi: u8, k: f64) -> Complex64 {
    let e = Complex64::from_polar(1.0, -TAU * k);
    if xi == 0 {
        Complex64::new(1.0, 0.0) - e
    } else {
        Complex64::new(1.0, 0.0) + e
    }
}

/// The phase of `φ(k₀;R,u) − s(ω(k₀+k′) − ω(k₀+k′−k+ξ/2))` as a function of
/// `k₀`: amplitudes `R e^{i2πu} + s(e^{i2πk′} − e^{i2π(k′−k+ξ/2)})`, so that
/// `R̃_ℓ = |R_ℓ e^{i2π(u−k′)_ℓ} + s z_ξ(k_ℓ)|`.
pub fn shifted_phase(xi: u8, s: f64, spec: &PhaseSpec, kprime: &[f64], k: &[f64]) -> PhaseSpec {
    let half = 0.5 * xi as f64;
    let z: Vec<Complex64> = spec
        .amplitudes()
        .into_iter()
        .zip(kprime.iter().zip(k))
        .map(|(a, (&kp, &kk))| {
            a + s * (Complex64::from_polar(1.0, TAU * kp)
                - Complex64::from_polar(1.0, TAU * (kp - kk + half)))
        })
        .collect();
    PhaseSpec::from_amplitudes(&z)
}

/// Homogeneous inner phase: `R̃_ℓ = |s||z_ξ(k_ℓ)|` and
/// `ũ_ℓ = arg(s(e^{iπξ} − e^{i2πk_ℓ}))/2π`. As a function of `k₁` it equals
/// `−s(ω(k₁+ξ/2) − ω(k₁+k))` up to the constant `c₀` terms.
pub fn inner_phase(xi: u8, s: f64, k: &[f64]) -> PhaseSpec {
    let base = if xi == 0 { 1.0 } else { -1.0 };
    let z: Vec<Complex64> = k
        .iter()
        .map(|&kk| s * (Complex64::new(base, 0.0) - Complex64::from_polar(1.0, TAU * kk)))
        .collect();
    PhaseSpec::from_amplitudes(&z)
}

/// A point `X = (R, k′, u, σ, x)` of the control-map domain. `kprime` and `x`
/// are lattice indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub r: Vec<f64>,
    pub kprime: usize,
    pub u: Vec<f64>,
    pub sigma: i8,
    pub x: usize,
}

impl PhasePoint {
    pub fn spec(&self) -> PhaseSpec {
        PhaseSpec {
            r: self.r.clone(),
            u: self.u.clone(),
        }
    }
}
