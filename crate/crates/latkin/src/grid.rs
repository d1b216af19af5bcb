//! Periodic cubic lattice, its dual, and the Fourier transform pair.
//!
//! Sites and dual modes share one representation: a flat row-major index into
//! the centered box `Λ₁^d`, where `Λ₁ = {lo, …, lo + L − 1}` with
//! `lo = −⌊(L−1)/2⌋`. For odd `L` this is `{−(L−1)/2, …, (L−1)/2}`, for even
//! `L` it is `{−L/2+1, …, L/2}`. A dual mode with integer label `m` stands for
//! the momentum `k = m/L`. All index arithmetic is done on integers.

use crate::error::{structural, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Clone, Debug)]
pub struct Lattice {
    d: usize,
    l: usize,
    c0: f64,
    lo: i64,
    n: usize,
    coords: Vec<i64>,
    roots: Vec<Complex64>,
    omega: Vec<f64>,
    mom: Vec<f64>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.l == other.l && self.c0 == other.c0
    }
}

impl Lattice {
    pub fn new(d: usize, l: usize, c0: f64) -> Result<Self> {
        if d == 0 {
            return structural("lattice dimension must be positive");
        }
        if l < 2 {
            return structural(format!("lattice side must be at least 2, got {l}"));
        }
        let n = l.checked_pow(d as u32).filter(|&n| n <= 1 << 26);
        let Some(n) = n else {
            return structural(format!("lattice {l}^{d} is too large"));
        };
        let lo = -(((l - 1) / 2) as i64);
        let mut coords = vec![0i64; n * d];
        for idx in 0..n {
            let mut rem = idx;
            for a in (0..d).rev() {
                coords[idx * d + a] = lo + (rem % l) as i64;
                rem /= l;
            }
        }
        let roots = (0..l)
            .map(|j| Complex64::from_polar(1.0, TAU * j as f64 / l as f64))
            .collect();
        let mut lat = Lattice {
            d,
            l,
            c0,
            lo,
            n,
            coords,
            roots,
            omega: Vec::new(),
            mom: Vec::new(),
        };
        lat.mom = lat.coords.iter().map(|&c| c as f64 / l as f64).collect();
        lat.omega = (0..n).map(|m| lat.dispersion_at(lat.k(m))).collect();
        Ok(lat)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.l
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// Number of sites, equal to the number of dual modes.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Smallest centered coordinate.
    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn coords(&self, idx: usize) -> &[i64] {
        &self.coords[idx * self.d..(idx + 1) * self.d]
    }

    /// Reduces one integer coordinate into `Λ₁`.
    pub fn wrap1(&self, x: i64) -> i64 {
        (x - self.lo).rem_euclid(self.l as i64) + self.lo
    }

    /// Componentwise reduction of an integer vector into `Λ₁^d`.
    pub fn mod_site(&self, x: &[i64]) -> Vec<i64> {
        x.iter().map(|&v| self.wrap1(v)).collect()
    }

    /// Flat index of an arbitrary integer vector after reduction.
    pub fn index_of(&self, x: &[i64]) -> usize {
        debug_assert_eq!(x.len(), self.d);
        let l = self.l as i64;
        x.iter()
            .fold(0usize, |acc, &v| acc * self.l + (v - self.lo).rem_euclid(l) as usize)
    }

    fn combine(&self, a: usize, b: usize, sb: i64) -> usize {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let l = self.l as i64;
        let mut idx = 0usize;
        for i in 0..self.d {
            idx = idx * self.l + (ca[i] + sb * cb[i] - self.lo).rem_euclid(l) as usize;
        }
        idx
    }

    pub fn add(&self, a: usize, b: usize) -> usize {
        self.combine(a, b, 1)
    }

    pub fn sub(&self, a: usize, b: usize) -> usize {
        self.combine(a, b, -1)
    }

    pub fn neg(&self, a: usize) -> usize {
        let l = self.l as i64;
        self.coords(a)
            .iter()
            .fold(0usize, |acc, &v| acc * self.l + (-v - self.lo).rem_euclid(l) as usize)
    }

    /// `σ·a` for `σ = ±1`.
    pub fn signed(&self, sigma: i8, a: usize) -> usize {
        if sigma >= 0 {
            a
        } else {
            self.neg(a)
        }
    }

    /// Index of the origin.
    pub fn origin(&self) -> usize {
        self.index_of(&vec![0; self.d])
    }

    /// Momentum `k = m/L` of a dual mode.
    pub fn momentum(&self, m: usize) -> Vec<f64> {
        let l = self.l as f64;
        self.coords(m).iter().map(|&v| v as f64 / l).collect()
    }

    /// Momentum `k = m/L` as a borrowed slice.
    pub fn k(&self, m: usize) -> &[f64] {
        &self.mom[m * self.d..(m + 1) * self.d]
    }

    /// `m·y mod L`, the phase of `e^{i2πk·y}` in units of `2π/L`.
    pub fn phase_units(&self, m: usize, y: usize) -> usize {
        let s: i64 = self
            .coords(m)
            .iter()
            .zip(self.coords(y))
            .map(|(a, b)| a * b)
            .sum();
        s.rem_euclid(self.l as i64) as usize
    }

    /// `e^{i2πk·y}` with `k = m/L`, from an exact integer phase.
    pub fn fourier(&self, m: usize, y: usize) -> Complex64 {
        self.roots[self.phase_units(m, y)]
    }

    /// `e^{i2πj/L}`.
    pub fn root(&self, j: i64) -> Complex64 {
        self.roots[j.rem_euclid(self.l as i64) as usize]
    }

    /// Nearest-neighbour dispersion at a dual mode.
    pub fn dispersion(&self, m: usize) -> f64 {
        self.omega[m]
    }

    pub fn dispersion_table(&self) -> &[f64] {
        &self.omega
    }

    /// `ω(k) = c₀ − Σ cos(2πk_i)` at an arbitrary real momentum.
    pub fn dispersion_at(&self, k: &[f64]) -> f64 {
        dispersion(self.c0, k)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return structural(format!(
                "field has {len} entries but the lattice has {} sites",
                self.n
            ));
        }
        Ok(())
    }
}

/// `ω(k) = c₀ − Σ cos(2πk_i)`.
pub fn dispersion(c0: f64, k: &[f64]) -> f64 {
    c0 - k.iter().map(|&ki| (TAU * ki).cos()).sum::<f64>()
}

/// Regularized absolute value `⟨r⟩ = √(1 + r²)`.
pub fn regabs(r: f64) -> f64 {
    r.hypot(1.0)
}

/// A function on the sites `Λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteField {
    pub values: Vec<Complex64>,
}

/// A function on the dual modes `Λ*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    pub values: Vec<Complex64>,
}

macro_rules! field_common {
    ($t:ident) => {
        impl $t {
            pub fn new(values: Vec<Complex64>) -> Self {
                Self { values }
            }

            pub fn zeros(lat: &Lattice) -> Self {
                Self::new(vec![Complex64::new(0.0, 0.0); lat.len()])
            }

            pub fn constant(lat: &Lattice, c: f64) -> Self {
                Self::new(vec![Complex64::new(c, 0.0); lat.len()])
            }

            pub fn from_real(values: &[f64]) -> Self {
                Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
            }

            pub fn from_fn(lat: &Lattice, f: impl FnMut(usize) -> Complex64) -> Self {
                Self::new((0..lat.len()).map(f).collect())
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn real_parts(&self) -> Vec<f64> {
                self.values.iter().map(|z| z.re).collect()
            }

            pub fn max_imag(&self) -> f64 {
                self.values.iter().fold(0.0, |m, z| m.max(z.im.abs()))
            }

            pub fn is_real(&self, tol: f64) -> bool {
                self.max_imag() <= tol
            }

            pub fn sup_norm(&self) -> f64 {
                self.values.iter().fold(0.0, |m, z| m.max(z.norm()))
            }

            pub fn sup_distance(&self, other: &Self) -> f64 {
                self.values
                    .iter()
                    .zip(&other.values)
                    .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
            }

            pub fn scaled(&self, a: Complex64) -> Self {
                Self::new(self.values.iter().map(|z| z * a).collect())
            }
        }

        impl std::ops::Index<usize> for $t {
            type Output = Complex64;
            fn index(&self, i: usize) -> &Complex64 {
                &self.values[i]
            }
        }
    };
}

field_common!(SiteField);
field_common!(SpectralField);

/// Forward transform `f̂(k) = Σ_y e^{−i2πk·y} f(y)`.
pub fn dft(f: &SiteField, lat: &Lattice) -> Result<SpectralField> {
    lat.check(f.len())?;
    Ok(SpectralField::new(transform_factorized(lat, &f.values, -1)))
}

/// Inverse transform `ǧ(x) = L^{−d} Σ_k g(k) e^{i2πk·x}`.
pub fn idft(g: &SpectralField, lat: &Lattice) -> Result<SiteField> {
    lat.check(g.len())?;
    let mut v = transform_factorized(lat, &g.values, 1);
    let s = 1.0 / lat.len() as f64;
    v.iter_mut().for_each(|z| *z *= s);
    Ok(SiteField::new(v))
}

/// Forward transform by the full `O(L^{2d})` double sum.
pub fn dft_direct(f: &SiteField, lat: &Lattice) -> Result<SpectralField> {
    lat.check(f.len())?;
    Ok(SpectralField::new(transform_direct(lat, &f.values, -1)))
}

/// Inverse transform by the full `O(L^{2d})` double sum.
pub fn idft_direct(g: &SpectralField, lat: &Lattice) -> Result<SiteField> {
    lat.check(g.len())?;
    let s = 1.0 / lat.len() as f64;
    let v = transform_direct(lat, &g.values, 1)
        .into_iter()
        .map(|z| z * s)
        .collect();
    Ok(SiteField::new(v))
}

/// `out(a) = Σ_b e^{sign·i2π a·b/L} v(b)` by direct summation.
pub fn transform_direct(lat: &Lattice, v: &[Complex64], sign: i64) -> Vec<Complex64> {
    let n = lat.len();
    (0..n)
        .map(|a| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (b, vb) in v.iter().enumerate() {
                acc += lat.root(sign * lat.phase_units(a, b) as i64) * vb;
            }
            acc
        })
        .collect()
}

/// Same sum as [`transform_direct`], applied one axis at a time.
pub fn transform_factorized(lat: &Lattice, v: &[Complex64], sign: i64) -> Vec<Complex64> {
    let (d, l, lo) = (lat.dim(), lat.side(), lat.lo());
    let mut cur = v.to_vec();
    let mut line = vec![Complex64::new(0.0, 0.0); l];
    let twiddle: Vec<Complex64> = (0..l * l)
        .map(|ab| {
            let (a, b) = ((ab / l) as i64 + lo, (ab % l) as i64 + lo);
            lat.root(sign * a * b)
        })
        .collect();
    let mut stride = 1usize;
    for _ in 0..d {
        let block = stride * l;
        for start in (0..cur.len()).step_by(block) {
            for off in 0..stride {
                let base = start + off;
                for (a, out) in line.iter_mut().enumerate() {
                    let tw = &twiddle[a * l..(a + 1) * l];
                    let mut acc = Complex64::new(0.0, 0.0);
                    for b in 0..l {
                        acc += tw[b] * cur[base + b * stride];
                    }
                    *out = acc;
                }
                for a in 0..l {
                    cur[base + a * stride] = line[a];
                }
            }
        }
        stride *= l;
    }
    cur
}

/// `∫_{Λ*} dk f(k) = L^{−d} Σ_k f(k)`.
pub fn dual_mean(values: &[Complex64]) -> Complex64 {
    values.iter().sum::<Complex64>() / values.len() as f64
}
