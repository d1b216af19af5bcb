//! Collision operators: the direct cubic sums, the collision control map, and
//! the eight-term bilinear form evaluated through the control map.

use crate::error::{structural, Error, Result};
use crate::grid::{transform_factorized, Lattice, SpectralField};
use crate::interaction::{ModelParams, Potential};
use crate::par::{map_range, Exec};
use crate::phase::{inner_phase, phi_raw, PhasePoint, PhaseSpec};
use crate::quad::GaussLegendre;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `δ(Ω) = (1/2π)∫_{−a}^{a} e^{−isΩ} ds = sin(aΩ)/(πΩ)` with `a = λ^{−2}τ₀`.
pub fn delta_energy(omega: f64, lambda: f64, tau0: f64) -> f64 {
    window(omega, tau0 / (lambda * lambda))
}

#[inline]
fn window(omega: f64, a: f64) -> f64 {
    let x = a * omega;
    if x.abs() < 1e-4 {
        let x2 = x * x;
        a / PI * (1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0)))
    } else {
        x.sin() / (PI * omega)
    }
}

/// Gauss–Legendre settings for the `s` integral of the bilinear form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SQuadrature {
    pub panels: usize,
    pub order: usize,
    pub tol: f64,
}

impl Default for SQuadrature {
    fn default() -> Self {
        SQuadrature {
            panels: 32,
            order: 16,
            tol: 1e-8,
        }
    }
}

impl SQuadrature {
    pub fn validate(&self) -> Result<()> {
        if self.panels == 0 || !(4..=64).contains(&self.order) || !(self.tol > 0.0) {
            return Err(Error::Validation(format!(
                "s-quadrature needs panels ≥ 1, order in 4..=64 and tol > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Mode addition and subtraction tables.
#[derive(Clone, Debug)]
struct ModeTable {
    n: usize,
    add: Vec<u32>,
    sub: Vec<u32>,
}

impl ModeTable {
    fn new(lat: &Lattice) -> Self {
        let n = lat.len();
        if n > 2048 {
            return ModeTable {
                n,
                add: Vec::new(),
                sub: Vec::new(),
            };
        }
        let mut add = vec![0u32; n * n];
        let mut sub = vec![0u32; n * n];
        for a in 0..n {
            for b in 0..n {
                add[a * n + b] = lat.add(a, b) as u32;
                sub[a * n + b] = lat.sub(a, b) as u32;
            }
        }
        ModeTable { n, add, sub }
    }

    #[inline]
    fn add(&self, lat: &Lattice, a: usize, b: usize) -> usize {
        if self.add.is_empty() {
            lat.add(a, b)
        } else {
            self.add[a * self.n + b] as usize
        }
    }

    #[inline]
    fn sub(&self, lat: &Lattice, a: usize, b: usize) -> usize {
        if self.sub.is_empty() {
            lat.sub(a, b)
        } else {
            self.sub[a * self.n + b] as usize
        }
    }
}

/// Everything the collision operators need besides `W` and `τ₀`.
#[derive(Clone, Debug)]
pub struct CollisionConfig {
    pub model: ModelParams,
    pub pot: Potential,
    pub lat: Lattice,
    pub s_quadrature: SQuadrature,
    pub exec: Exec,
    table: ModeTable,
}

impl CollisionConfig {
    pub fn new(model: ModelParams, pot: Potential, lat: Lattice) -> Result<Self> {
        if pot.values().len() != lat.len() {
            return structural(format!(
                "potential has {} entries but the lattice has {} sites",
                pot.values().len(),
                lat.len()
            ));
        }
        let table = ModeTable::new(&lat);
        Ok(CollisionConfig {
            model,
            pot,
            lat,
            s_quadrature: SQuadrature::default(),
            exec: Exec::default(),
            table,
        })
    }

    pub fn with_s_quadrature(mut self, q: SQuadrature) -> Result<Self> {
        q.validate()?;
        self.s_quadrature = q;
        Ok(self)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_model(mut self, model: ModelParams) -> Self {
        self.model = model;
        self
    }

    /// `a = λ^{−2}τ₀`, the half width of the `s` window.
    pub fn window_width(&self, tau0: f64) -> f64 {
        tau0 / (self.model.lambda * self.model.lambda)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.lat.len() {
            return structural(format!(
                "field has {len} entries but the lattice has {} modes",
                self.lat.len()
            ));
        }
        Ok(())
    }
}

/// Real parts of `w` after checking that the imaginary parts are negligible.
pub fn real_values(w: &SpectralField, tol: f64) -> Result<Vec<f64>> {
    let scale = 1.0 + w.sup_norm();
    let im = w.max_imag();
    if !(im <= tol * scale) {
        return Err(Error::Validation(format!(
            "field is not real: max |Im| = {im:e}"
        )));
    }
    Ok(w.real_parts())
}

/// Summation with a running compensation term.
#[derive(Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

/// The weight multiplying the energy window for one collision triple:
/// `(V̂(k₁−k₂) + θV̂(k₁−k₃))² (θ·h_nls + q·h_cl)`.
#[inline]
fn triple_weight(cfg: &CollisionConfig, h: &[f64], k0: usize, k1: usize, k2: usize, k3: usize) -> f64 {
    let lat = &cfg.lat;
    let t = &cfg.table;
    let theta = cfg.model.theta();
    let q = cfg.model.q();
    let vh = cfg.pot.vhat_values();
    let vf = vh[t.sub(lat, k1, k2)] + theta * vh[t.sub(lat, k1, k3)];
    let (h0, h1, h2, h3) = (h[k0], h[k1], h[k2], h[k3]);
    let nls = h1 * h2 * h3 + h0 * h2 * h3 - h0 * h1 * h3 - h0 * h1 * h2;
    let cl = h2 * h3 - h0 * h1;
    vf * vf * (theta * nls + q * cl)
}

/// `C^λ(W,τ₀)(k₀) = θ·C_nls + q·C_cl` with `k₂ = k₀+k₁−k₃` eliminated.
pub fn collision_direct(w: &SpectralField, tau0: f64, cfg: &CollisionConfig) -> Result<SpectralField> {
    cfg.check_len(w.len())?;
    let h = real_values(w, 1e-12)?;
    Ok(SpectralField::from_real(&collision_direct_real(&h, tau0, cfg)))
}

/// [`collision_direct`] on real values, without validation.
pub fn collision_direct_real(h: &[f64], tau0: f64, cfg: &CollisionConfig) -> Vec<f64> {
    let lat = &cfg.lat;
    let n = lat.len();
    let a = cfg.window_width(tau0);
    if a == 0.0 || cfg.pot.is_zero() {
        return vec![0.0; n];
    }
    let om = lat.dispersion_table();
    let t = &cfg.table;
    let norm = PI / (n * n) as f64;
    map_range(cfg.exec, n, |k0| {
        let mut acc = Neumaier::default();
        for k1 in 0..n {
            let k01 = t.add(lat, k0, k1);
            for k3 in 0..n {
                let k2 = t.sub(lat, k01, k3);
                let wt = triple_weight(cfg, h, k0, k1, k2, k3);
                if wt == 0.0 {
                    continue;
                }
                let omega = om[k0] + om[k1] - om[k2] - om[k3];
                acc.add(window(omega, a) * wt);
            }
        }
        norm * acc.value()
    })
}

/// [`collision_direct_real`] in complex arithmetic. Real input gives real
/// output; any imaginary part in `w` is carried through rather than dropped.
pub fn collision_direct_complex(w: &[Complex64], tau0: f64, cfg: &CollisionConfig) -> Result<Vec<Complex64>> {
    cfg.check_len(w.len())?;
    let lat = &cfg.lat;
    let n = lat.len();
    let a = cfg.window_width(tau0);
    if a == 0.0 || cfg.pot.is_zero() {
        return Ok(vec![C0; n]);
    }
    let om = lat.dispersion_table();
    let t = &cfg.table;
    let theta = cfg.model.theta();
    let q = cfg.model.q();
    let vh = cfg.pot.vhat_values();
    let norm = PI / (n * n) as f64;
    Ok(map_range(cfg.exec, n, |k0| {
        let (mut re, mut im) = (Neumaier::default(), Neumaier::default());
        let h0 = w[k0];
        for k1 in 0..n {
            let k01 = t.add(lat, k0, k1);
            let h1 = w[k1];
            for k3 in 0..n {
                let k2 = t.sub(lat, k01, k3);
                let vf = vh[t.sub(lat, k1, k2)] + theta * vh[t.sub(lat, k1, k3)];
                if vf == 0.0 {
                    continue;
                }
                let (h2, h3) = (w[k2], w[k3]);
                let nls = h1 * h2 * h3 + h0 * h2 * h3 - h0 * h1 * h3 - h0 * h1 * h2;
                let cl = h2 * h3 - h0 * h1;
                let omega = om[k0] + om[k1] - om[k2] - om[k3];
                let v = (theta * nls + q * cl) * (vf * vf * window(omega, a));
                re.add(v.re);
                im.add(v.im);
            }
        }
        Complex64::new(re.value(), im.value()) * norm
    }))
}

/// `mass = ∫dk W(k)`, `energy = ∫dk ω(k)W(k)`.
pub fn functionals(w: &SpectralField, lat: &Lattice) -> (f64, f64) {
    let n = lat.len() as f64;
    let om = lat.dispersion_table();
    let mass = w.values.iter().map(|z| z.re).sum::<f64>() / n;
    let energy = w
        .values
        .iter()
        .zip(om)
        .map(|(z, o)| z.re * o)
        .sum::<f64>()
        / n;
    (mass, energy)
}

/// An evaluator of a function on `[0,T*]² × 𝒳_L` with two components, such as
/// the collision control map of a trajectory. Times are node indices.
pub trait ControlMap: Sync {
    fn lattice(&self) -> &Lattice;

    /// Number of time nodes the evaluator accepts.
    fn nodes(&self) -> usize;

    fn eval(&self, n: u8, t1: usize, t2: usize, x: &PhasePoint) -> Complex64;

    /// Values at every site `x` for fixed `(R, k′, u, σ)`.
    fn eval_sites(
        &self,
        n: u8,
        t1: usize,
        t2: usize,
        spec: &PhaseSpec,
        kprime: usize,
        sigma: i8,
    ) -> Vec<Complex64> {
        let lat = self.lattice();
        (0..lat.len())
            .map(|x| {
                let p = PhasePoint {
                    r: spec.r.clone(),
                    kprime,
                    u: spec.u.clone(),
                    sigma,
                    x,
                };
                self.eval(n, t1, t2, &p)
            })
            .collect()
    }
}

/// `F[W]^{(n)}_{t₁,t₂}(R,k′,u,σ,x) = ∫dk₀ e^{iφ(k₀;R,u)} W_{t₁}(σk₀)^{n−1}
/// W_{t₂}(k′+k₀) e^{i2πk₀·x}` for a sequence of fields `W_t`.
#[derive(Clone, Debug)]
pub struct FieldControlMap {
    lat: Lattice,
    fields: Vec<Vec<Complex64>>,
    neg: Vec<usize>,
}

impl FieldControlMap {
    pub fn new(lat: &Lattice, fields: &[SpectralField]) -> Result<Self> {
        if fields.is_empty() {
            return structural("control map needs at least one field");
        }
        for f in fields {
            if f.len() != lat.len() {
                return structural(format!(
                    "field has {} entries but the lattice has {} modes",
                    f.len(),
                    lat.len()
                ));
            }
        }
        Ok(FieldControlMap {
            lat: lat.clone(),
            fields: fields.iter().map(|f| f.values.clone()).collect(),
            neg: (0..lat.len()).map(|m| lat.neg(m)).collect(),
        })
    }

    pub fn single(lat: &Lattice, w: &SpectralField) -> Result<Self> {
        Self::new(lat, std::slice::from_ref(w))
    }

    fn amplitudes(&self, n: u8, t1: usize, t2: usize, spec: &PhaseSpec, kprime: usize, sigma: i8) -> Vec<Complex64> {
        let lat = &self.lat;
        let (w1, w2) = (&self.fields[t1], &self.fields[t2]);
        (0..lat.len())
            .map(|k0| {
                let ph = Complex64::from_polar(1.0, phi_raw(lat.k(k0), &spec.r, &spec.u));
                let a = w2[lat.add(kprime, k0)];
                if n == 2 {
                    let s = if sigma >= 0 { k0 } else { self.neg[k0] };
                    ph * w1[s] * a
                } else {
                    ph * a
                }
            })
            .collect()
    }
}

impl ControlMap for FieldControlMap {
    fn lattice(&self) -> &Lattice {
        &self.lat
    }

    fn nodes(&self) -> usize {
        self.fields.len()
    }

    fn eval(&self, n: u8, t1: usize, t2: usize, x: &PhasePoint) -> Complex64 {
        let amps = self.amplitudes(n, t1, t2, &x.spec(), x.kprime, x.sigma);
        let acc: Complex64 = amps
            .iter()
            .enumerate()
            .map(|(k0, a)| a * self.lat.fourier(k0, x.x))
            .sum();
        acc / self.lat.len() as f64
    }

    fn eval_sites(&self, n: u8, t1: usize, t2: usize, spec: &PhaseSpec, kprime: usize, sigma: i8) -> Vec<Complex64> {
        let amps = self.amplitudes(n, t1, t2, spec, kprime, sigma);
        let s = 1.0 / self.lat.len() as f64;
        let mut v = transform_factorized(&self.lat, &amps, 1);
        v.iter_mut().for_each(|z| *z *= s);
        v
    }
}

/// The identically zero evaluator.
#[derive(Clone, Debug)]
pub struct ZeroMap {
    pub lat: Lattice,
}

impl ControlMap for ZeroMap {
    fn lattice(&self) -> &Lattice {
        &self.lat
    }

    fn nodes(&self) -> usize {
        usize::MAX
    }

    fn eval(&self, _: u8, _: usize, _: usize, _: &PhasePoint) -> Complex64 {
        C0
    }

    fn eval_sites(&self, _: u8, _: usize, _: usize, _: &PhaseSpec, _: usize, _: i8) -> Vec<Complex64> {
        vec![C0; self.lat.len()]
    }
}

/// `α·G`.
pub struct ScaledMap<'a> {
    pub inner: &'a dyn ControlMap,
    pub alpha: Complex64,
}

impl ControlMap for ScaledMap<'_> {
    fn lattice(&self) -> &Lattice {
        self.inner.lattice()
    }

    fn nodes(&self) -> usize {
        self.inner.nodes()
    }

    fn eval(&self, n: u8, t1: usize, t2: usize, x: &PhasePoint) -> Complex64 {
        self.alpha * self.inner.eval(n, t1, t2, x)
    }

    fn eval_sites(&self, n: u8, t1: usize, t2: usize, spec: &PhaseSpec, kprime: usize, sigma: i8) -> Vec<Complex64> {
        let mut v = self.inner.eval_sites(n, t1, t2, spec, kprime, sigma);
        v.iter_mut().for_each(|z| *z *= self.alpha);
        v
    }
}

/// One evaluation request for a control map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlMapQuery {
    pub n: u8,
    pub t1: usize,
    pub t2: usize,
    pub x: PhasePoint,
}

pub fn control_map_eval(g: &dyn ControlMap, q: &ControlMapQuery) -> Result<Complex64> {
    check_point(g, q.n, &q.x)?;
    if q.t1 >= g.nodes() || q.t2 >= g.nodes() {
        return structural(format!(
            "time nodes ({}, {}) outside 0..{}",
            q.t1,
            q.t2,
            g.nodes()
        ));
    }
    Ok(g.eval(q.n, q.t1, q.t2, &q.x))
}

pub(crate) fn check_point(g: &dyn ControlMap, n: u8, x: &PhasePoint) -> Result<()> {
    let lat = g.lattice();
    if n != 1 && n != 2 {
        return structural(format!("component index must be 1 or 2, got {n}"));
    }
    if x.r.len() != lat.dim() || x.u.len() != lat.dim() {
        return structural("phase point has the wrong dimension");
    }
    if x.kprime >= lat.len() || x.x >= lat.len() {
        return structural("phase point index outside the lattice");
    }
    if x.sigma != 1 && x.sigma != -1 {
        return structural(format!("sigma must be ±1, got {}", x.sigma));
    }
    Ok(())
}

/// Which representation of the collision integrand to evaluate at fixed `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSide {
    Direct,
    Bilinear,
}

/// `½∫dk₁dk₃ e^{−isΩ}(V̂(k₁−k₂)+θV̂(k₁−k₃))²(θh_nls + q·h_cl)` at every `k₀`.
/// Integrating over `s ∈ [−λ^{−2}τ₀, λ^{−2}τ₀]` gives `C^λ(W,τ₀)`.
pub fn kernel_direct(h: &[f64], s: f64, cfg: &CollisionConfig) -> Vec<Complex64> {
    let lat = &cfg.lat;
    let n = lat.len();
    let om = lat.dispersion_table();
    let t = &cfg.table;
    let norm = 0.5 / (n * n) as f64;
    map_range(cfg.exec, n, |k0| {
        let mut acc = C0;
        for k1 in 0..n {
            let k01 = t.add(lat, k0, k1);
            for k3 in 0..n {
                let k2 = t.sub(lat, k01, k3);
                let wt = triple_weight(cfg, h, k0, k1, k2, k3);
                if wt == 0.0 {
                    continue;
                }
                let omega = om[k0] + om[k1] - om[k2] - om[k3];
                acc += Complex64::from_polar(wt, -s * omega);
            }
        }
        acc * norm
    })
}

/// `max_{k₀} ½∫dk₁dk₃` of the weight with every term made positive, the size of the fixed-`s` integrand before
/// cancellations. Used as the scale for relative comparisons, since the
/// kernels can vanish identically (e.g. fermions on `L = 2`).
pub fn kernel_magnitude(h: &[f64], cfg: &CollisionConfig) -> f64 {
    let lat = &cfg.lat;
    let n = lat.len();
    let t = &cfg.table;
    let vh = cfg.pot.vhat_values();
    let q = cfg.model.q();
    let per = map_range(cfg.exec, n, |k0| {
        let mut acc = 0.0;
        for k1 in 0..n {
            let k01 = t.add(lat, k0, k1);
            for k3 in 0..n {
                let k2 = t.sub(lat, k01, k3);
                let vf = vh[t.sub(lat, k1, k2)].abs() + vh[t.sub(lat, k1, k3)].abs();
                let (h0, h1, h2, h3) = (h[k0].abs(), h[k1].abs(), h[k2].abs(), h[k3].abs());
                let nls = h1 * h2 * h3 + h0 * h2 * h3 + h0 * h1 * h3 + h0 * h1 * h2;
                acc += vf * vf * (nls + q * (h2 * h3 + h0 * h1));
            }
        }
        acc
    });
    0.5 * per.into_iter().fold(0.0, f64::max) / (n * n) as f64
}

/// Tables of the bilinear form that do not depend on `s`.
struct BilinearTables {
    /// `𝒱(k,y)`, row `k`.
    script_v: Vec<f64>,
    /// `H_m(x) = 2Σ_{y′}V(x−y′)V(y′)e^{i2πm·y′}`, row `m`.
    h8: Vec<Complex64>,
}

impl BilinearTables {
    fn new(cfg: &CollisionConfig) -> Self {
        let lat = &cfg.lat;
        let n = lat.len();
        let theta = cfg.model.theta();
        let pot = &cfg.pot;
        let mut script_v = vec![0.0; n * n];
        for k in 0..n {
            for y in 0..n {
                script_v[k * n + y] = pot.script_v(lat, theta, k, y);
            }
        }
        let mut h8 = vec![C0; n * n];
        for m in 0..n {
            for &yp in pot.support() {
                let c = 2.0 * pot.v(yp) * lat.fourier(m, yp);
                for x in 0..n {
                    let vx = pot.v(cfg.table.sub(lat, x, yp));
                    if vx != 0.0 {
                        h8[m * n + x] += c * vx;
                    }
                }
            }
        }
        BilinearTables { script_v, h8 }
    }
}

/// `k′` argument of the `G^{(1)}` factor in the third term. The loss term
/// `h₀h₁` of the quadratic part needs `k′ = 0`.
const THIRD_TERM_AT_ORIGIN: bool = true;

/// The fixed-`s` integrand of the bilinear form `C̃λ[G_{t,t}, W]` at every
/// `k₀`, after the `k`, `y` and `y′` sums. Carries the same factor ½ as
/// [`kernel_direct`].
pub fn kernel_bilinear(g: &dyn ControlMap, t: usize, w: &[Complex64], s: f64, cfg: &CollisionConfig) -> Vec<Complex64> {
    let tables = BilinearTables::new(cfg);
    kernel_bilinear_with(g, t, w, s, cfg, &tables, THIRD_TERM_AT_ORIGIN)
}

fn kernel_bilinear_with(
    g: &dyn ControlMap,
    t: usize,
    w: &[Complex64],
    s: f64,
    cfg: &CollisionConfig,
    tables: &BilinearTables,
    third_at_origin: bool,
) -> Vec<Complex64> {
    let lat = &cfg.lat;
    let n = lat.len();
    let theta = cfg.model.theta();
    let q = cfg.model.q();
    let om = lat.dispersion_table();
    let c0 = lat.c0();
    let vconv = cfg.pot.vconv_values();
    let origin = lat.origin();
    let tb = &cfg.table;

    let per_k = map_range(cfg.exec, n, |k| {
        let kk = lat.k(k);
        let spec0 = inner_phase(0, s, kk);
        let spec1 = inner_phase(1, s, kk);
        let ga = g.eval_sites(2, t, t, &spec0, k, 1);
        let gb4 = g.eval_sites(1, t, t, &spec0, k, 1);
        let gb3 = if third_at_origin {
            g.eval_sites(1, t, t, &spec0, origin, 1)
        } else {
            gb4.clone()
        };
        let gc = g.eval_sites(2, t, t, &spec1, k, -1);

        let sv = &tables.script_v[k * n..(k + 1) * n];
        let mut ba = vec![C0; n];
        let mut bb3 = vec![C0; n];
        let mut bb4 = vec![C0; n];
        let mut b6 = vec![C0; n];
        let mut b7 = vec![C0; n];
        for y in 0..n {
            let e = lat.fourier(k, y);
            ba[y] = sv[y] * e * ga[y];
            bb3[y] = sv[y] * e * gb3[y];
            bb4[y] = sv[y] * e * gb4[y];
            b6[y] = vconv[y] * e * gc[y];
            b7[y] = vconv[y] * gc[y];
        }
        // Σ_y e^{−i2πk₀·y} b(y) for the first six terms, e^{+i2πk₀·y} for the seventh
        let sa = transform_factorized(lat, &ba, -1);
        let sb3 = transform_factorized(lat, &bb3, -1);
        let sb4 = transform_factorized(lat, &bb4, -1);
        let s6 = transform_factorized(lat, &b6, -1);
        let s7 = transform_factorized(lat, &b7, 1);

        let mut out = vec![C0; n];
        for k0 in 0..n {
            let km = tb.sub(lat, k0, k);
            let p0 = Complex64::from_polar(1.0, -s * (om[k0] - om[km]));
            let p1 = Complex64::from_polar(1.0, -s * (om[k0] - (2.0 * c0 - om[km])));
            let (w0, wk) = (w[k0], w[km]);
            let first = -2.0 * theta * sa[k0] * w0 + theta * sa[k0] * wk - q * sb3[k0] * w0 + q * sb4[k0] * wk;
            let mut s8 = C0;
            let m = tb.sub(lat, k, tb.add(lat, k0, k0));
            let h = &tables.h8[m * n..(m + 1) * n];
            if !cfg.pot.is_zero() {
                for x in 0..n {
                    if h[x] != C0 {
                        s8 += gc[x] * lat.fourier(k0, x) * h[x];
                    }
                }
            }
            let second = (theta * (s6[k0] + s7[k0]) + s8) * w0;
            out[k0] = p0 * first + p1 * second;
        }
        out
    });
    let norm = 0.5 / n as f64;
    let mut acc = vec![C0; n];
    for row in per_k {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|z| *z *= norm);
    acc
}

/// One value of either fixed-`s` integrand.
pub fn kernel_fixed_s(
    side: KernelSide,
    s: f64,
    w: &SpectralField,
    g: &dyn ControlMap,
    k0: usize,
    cfg: &CollisionConfig,
) -> Result<Complex64> {
    cfg.check_len(w.len())?;
    if k0 >= cfg.lat.len() {
        return structural(format!("mode index {k0} outside the lattice"));
    }
    Ok(match side {
        KernelSide::Direct => kernel_direct(&real_values(w, 1e-12)?, s, cfg)[k0],
        KernelSide::Bilinear => kernel_bilinear(g, 0, &w.values, s, cfg)[k0],
    })
}

/// Output of [`collision_bilinear`].
#[derive(Clone, Debug)]
pub struct BilinearResult {
    pub values: SpectralField,
    /// Largest difference between the order-`p` and order-`2p` rules on the
    /// audited panels.
    pub residual: f64,
}

/// `C̃λ(τ₀)[G_{t,t}, W]` with the `s` integral done by composite
/// Gauss–Legendre. Three panels are re-integrated at twice the order; a
/// difference above `tol·(1 + max|C̃|)` is an error.
pub fn collision_bilinear(
    g: &dyn ControlMap,
    t: usize,
    w: &SpectralField,
    tau0: f64,
    cfg: &CollisionConfig,
) -> Result<BilinearResult> {
    cfg.check_len(w.len())?;
    if !std::ptr::eq(g.lattice(), &cfg.lat) && g.lattice() != &cfg.lat {
        return structural("control map and collision config use different lattices");
    }
    let n = cfg.lat.len();
    let a = cfg.window_width(tau0);
    if a == 0.0 {
        return Ok(BilinearResult {
            values: SpectralField::zeros(&cfg.lat),
            residual: 0.0,
        });
    }
    let sq = cfg.s_quadrature;
    let tables = BilinearTables::new(cfg);
    let kernel = |s: f64| kernel_bilinear_with(g, t, &w.values, s, cfg, &tables, THIRD_TERM_AT_ORIGIN);

    let rule = GaussLegendre::new(sq.order);
    let mut total = vec![C0; n];
    let width = 2.0 * a / sq.panels as f64;
    let mut panel_sums = Vec::with_capacity(sq.panels);
    for p in 0..sq.panels {
        let lo = -a + p as f64 * width;
        let mut ps = vec![C0; n];
        for (s, wt) in rule.mapped(lo, lo + width) {
            for (acc, v) in ps.iter_mut().zip(kernel(s)) {
                *acc += wt * v;
            }
        }
        for (acc, v) in total.iter_mut().zip(&ps) {
            *acc += v;
        }
        panel_sums.push(ps);
    }

    let fine = GaussLegendre::new(2 * sq.order);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let audit: Vec<usize> = (0..3.min(sq.panels))
        .map(|_| rng.gen_range(0..sq.panels))
        .collect();
    let mut residual = 0.0f64;
    for &p in &audit {
        let lo = -a + p as f64 * width;
        let mut ps = vec![C0; n];
        for (s, wt) in fine.mapped(lo, lo + width) {
            for (acc, v) in ps.iter_mut().zip(kernel(s)) {
                *acc += wt * v;
            }
        }
        for (x, y) in ps.iter().zip(&panel_sums[p]) {
            residual = residual.max((x - y).norm());
        }
    }
    let scale = total.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if residual > sq.tol * (1.0 + scale) {
        return Err(Error::Numerical(format!(
            "s-quadrature residual {residual:e} exceeds tolerance {:e} (panels {}, order {})",
            sq.tol, sq.panels, sq.order
        )));
    }
    Ok(BilinearResult {
        values: SpectralField::new(total),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{ModelKind, PotentialKind, TauMode};
    use rand_chacha::ChaCha8Rng;

    fn config(kind: ModelKind, d: usize, l: usize, pot: &PotentialKind) -> CollisionConfig {
        let lat = Lattice::new(d, l, d as f64).unwrap();
        let pot = Potential::new(pot, &lat).unwrap();
        let model = ModelParams::new(kind, 1.0, TauMode::Constant { t0: 1.0 }, 0.3).unwrap();
        CollisionConfig::new(model, pot, lat).unwrap()
    }

    fn random_w(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(0.2..1.5)).collect()
    }

    #[test]
    fn delta_examples() {
        let (lambda, tau0) = (0.7, 1.3);
        let a = tau0 / (lambda * lambda);
        assert!((delta_energy(0.0, lambda, tau0) - a / PI).abs() < 1e-15);
        let om = 0.5 * PI / a;
        assert!((delta_energy(om, lambda, tau0) - 2.0 * a / (PI * PI)).abs() < 1e-14);
        for om in [1e-9, 1e-6, 3e-5, 0.2, 4.0] {
            assert_eq!(delta_energy(om, lambda, tau0), delta_energy(-om, lambda, tau0));
        }
        // continuity across the series cutoff
        let cut = 1e-4 / a;
        let below = delta_energy(cut * (1.0 - 1e-9), lambda, tau0);
        let above = delta_energy(cut * (1.0 + 1e-9), lambda, tau0);
        assert!((below - above).abs() < 1e-14 * a);
    }

    #[test]
    fn delta_matches_its_integral() {
        let rule = GaussLegendre::new(32);
        for (lambda, tau0, om) in [(1.0, 1.0, 0.3), (0.5, 0.2, 2.0), (2.0, 3.0, -1.1)] {
            let a: f64 = tau0 / (lambda * lambda);
            let integral = rule.composite(-a, a, 8, |s| (s * om).cos()) / (2.0 * PI);
            assert!((integral - delta_energy(om, lambda, tau0)).abs() < 1e-14);
        }
    }

    /// Triple loop over `(k₁,k₂,k₃)` with an explicit momentum test.
    fn collision_oracle(h: &[f64], tau0: f64, cfg: &CollisionConfig) -> Vec<f64> {
        let lat = &cfg.lat;
        let n = lat.len();
        let (q, theta) = (cfg.model.q(), cfg.model.theta());
        let vh = cfg.pot.vhat_values();
        let mut out = vec![0.0; n];
        for k0 in 0..n {
            let mut acc = 0.0;
            for k1 in 0..n {
                for k2 in 0..n {
                    for k3 in 0..n {
                        if lat.add(k0, k1) != lat.add(k2, k3) {
                            continue;
                        }
                        let om = lat.dispersion(k0) + lat.dispersion(k1) - lat.dispersion(k2) - lat.dispersion(k3);
                        let vf = vh[lat.sub(k1, k2)] + theta * vh[lat.sub(k1, k3)];
                        let (h0, h1, h2, h3) = (h[k0], h[k1], h[k2], h[k3]);
                        let nls = h1 * h2 * h3 + h0 * h2 * h3 - h0 * h1 * h3 - h0 * h1 * h2;
                        let cl = h2 * h3 - h0 * h1;
                        acc += delta_energy(om, cfg.model.lambda, tau0) * vf * vf * (theta * nls + q * cl);
                    }
                }
            }
            out[k0] = PI * acc / (n * n) as f64;
        }
        out
    }

    #[test]
    fn direct_matches_triple_loop() {
        let cfg = config(ModelKind::Dnls, 1, 3, &PotentialKind::Onsite);
        let h: Vec<f64> = (0..3)
            .map(|m| 1.0 + 0.5 * (2.0 * PI * cfg.lat.k(m)[0]).cos())
            .collect();
        let got = collision_direct_real(&h, 1.0, &cfg);
        let want = collision_oracle(&h, 1.0, &cfg);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in ModelKind::ALL {
            for (d, l) in [(1, 5), (2, 3), (2, 4)] {
                let cfg = config(kind, d, l, &PotentialKind::ExpDecay { rate: 0.8 });
                let h = random_w(cfg.lat.len(), &mut rng);
                let got = collision_direct_real(&h, 0.7, &cfg);
                let want = collision_oracle(&h, 0.7, &cfg);
                let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-12 * scale, "{kind:?} d={d} L={l}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn constant_field_and_zero_potential_give_zero() {
        for kind in ModelKind::ALL {
            let cfg = config(kind, 2, 3, &PotentialKind::NearestNeighbour);
            let c = collision_direct_real(&vec![0.8; 9], 1.0, &cfg);
            assert!(c.iter().all(|v| v.abs() < 1e-14), "{kind:?}: {c:?}");
            let cfg = config(kind, 2, 3, &PotentialKind::Zero);
            let c = collision_direct_real(&[0.3, 1.0, 2.0, 0.1, 0.5, 0.7, 0.9, 1.1, 1.3], 1.0, &cfg);
            assert!(c.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mass_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in ModelKind::ALL {
            let cfg = config(kind, 2, 4, &PotentialKind::ExpDecay { rate: 0.5 });
            for _ in 0..10 {
                let h = random_w(16, &mut rng);
                let c = collision_direct_real(&h, 0.9, &cfg);
                let total: f64 = c.iter().sum();
                let scale: f64 = c.iter().map(|v| v.abs()).sum();
                assert!(total.abs() <= 1e-12 * scale, "{kind:?}: {total:e} vs {scale:e}");
            }
        }
    }

    #[test]
    fn quadratic_term_is_absent_without_q() {
        // boson minus dnls isolates C_cl; check it against the expanded square
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let boson = config(ModelKind::Boson, 1, 5, &PotentialKind::NearestNeighbour);
        let dnls = boson.clone().with_model(ModelParams { kind: ModelKind::Dnls, ..boson.model });
        let h = random_w(5, &mut rng);
        let b = collision_direct_real(&h, 1.0, &boson);
        let d = collision_direct_real(&h, 1.0, &dnls);
        let lat = &boson.lat;
        let vh = boson.pot.vhat_values();
        for k0 in 0..5 {
            let mut acc = 0.0;
            for k1 in 0..5 {
                for k3 in 0..5 {
                    let k2 = lat.sub(lat.add(k0, k1), k3);
                    let (x, y) = (vh[lat.sub(k1, k2)], vh[lat.sub(k1, k3)]);
                    let om = lat.dispersion(k0) + lat.dispersion(k1) - lat.dispersion(k2) - lat.dispersion(k3);
                    acc += delta_energy(om, 1.0, 1.0) * (x * x + 2.0 * x * y + y * y) * (h[k2] * h[k3] - h[k0] * h[k1]);
                }
            }
            let want = PI * acc / 25.0;
            assert!((b[k0] - d[k0] - want).abs() < 1e-12, "{} vs {want}", b[k0] - d[k0]);
        }
    }

    #[test]
    fn control_map_examples() {
        let lat = Lattice::new(2, 3, 2.0).unwrap();
        let w = SpectralField::constant(&lat, 1.7);
        let g = FieldControlMap::single(&lat, &w).unwrap();
        for x in 0..9 {
            let p = PhasePoint {
                r: vec![0.0; 2],
                kprime: 4,
                u: vec![0.0; 2],
                sigma: -1,
                x,
            };
            let v = g.eval(1, 0, 0, &p);
            let want = if x == lat.origin() { 1.7 } else { 0.0 };
            assert!((v - want).norm() < 1e-14);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w1 = SpectralField::from_fn(&lat, |_| Complex64::new(rng.gen(), rng.gen()));
        let w2 = SpectralField::from_fn(&lat, |_| Complex64::new(rng.gen(), rng.gen()));
        let g = FieldControlMap::new(&lat, &[w1.clone(), w2.clone()]).unwrap();
        for _ in 0..20 {
            let spec = PhaseSpec::new(vec![rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)], vec![rng.gen(), rng.gen()]);
            let kp = rng.gen_range(0..9);
            let sigma = if rng.gen::<bool>() { 1 } else { -1 };
            let sites = g.eval_sites(2, 0, 1, &spec, kp, sigma);
            for x in 0..9 {
                let mut acc = C0;
                for k0 in 0..9 {
                    let k = lat.momentum(k0);
                    let ph = Complex64::from_polar(1.0, crate::phase::phi(&k, &spec));
                    let s = if sigma > 0 { k0 } else { lat.neg(k0) };
                    let e = Complex64::from_polar(1.0, 2.0 * PI * (0..2).map(|i| k[i] * lat.coords(x)[i] as f64).sum::<f64>());
                    acc += ph * w1[s] * w2[lat.add(kp, k0)] * e;
                }
                acc /= 9.0;
                let p = PhasePoint {
                    r: spec.r.clone(),
                    kprime: kp,
                    u: spec.u.clone(),
                    sigma,
                    x,
                };
                assert!((g.eval(2, 0, 1, &p) - acc).norm() < 1e-12);
                assert!((sites[x] - acc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn control_map_rejects_bad_queries() {
        let lat = Lattice::new(1, 4, 1.0).unwrap();
        let g = FieldControlMap::single(&lat, &SpectralField::constant(&lat, 1.0)).unwrap();
        let x = PhasePoint {
            r: vec![0.0],
            kprime: 0,
            u: vec![0.0],
            sigma: 1,
            x: 0,
        };
        let q = ControlMapQuery { n: 1, t1: 0, t2: 1, x: x.clone() };
        assert!(matches!(control_map_eval(&g, &q), Err(Error::Structural(_))));
        let q = ControlMapQuery { n: 3, t1: 0, t2: 0, x };
        assert!(control_map_eval(&g, &q).is_err());
    }

    fn max_rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm())) / scale
    }

    #[test]
    fn third_term_needs_origin_shift() {
        // Only the k′ = 0 reading of the third term reproduces the direct side.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = config(ModelKind::Boson, 1, 4, &PotentialKind::ExpDecay { rate: 0.6 });
        let h = random_w(4, &mut rng);
        let w = SpectralField::from_real(&h);
        let g = FieldControlMap::single(&cfg.lat, &w).unwrap();
        let tables = BilinearTables::new(&cfg);
        let direct = kernel_direct(&h, 0.37, &cfg);
        let good = kernel_bilinear_with(&g, 0, &w.values, 0.37, &cfg, &tables, true);
        let bad = kernel_bilinear_with(&g, 0, &w.values, 0.37, &cfg, &tables, false);
        assert!(max_rel(&good, &direct) < 1e-12);
        assert!(max_rel(&bad, &direct) > 1e-3);
    }

    #[test]
    fn fixed_s_kernels_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in ModelKind::ALL {
            for (d, l) in [(1, 2), (1, 3), (2, 3), (3, 2)] {
                let lat = Lattice::new(d, l, d as f64).unwrap();
                let pot = Potential::from_values(&lat, crate::interaction::random_symmetric_values(&lat, &mut rng)).unwrap();
                let model = ModelParams::new(kind, 1.0, TauMode::Memory, 0.3).unwrap();
                let cfg = CollisionConfig::new(model, pot, lat).unwrap();
                let h = random_w(cfg.lat.len(), &mut rng);
                let w = SpectralField::from_real(&h);
                let g = FieldControlMap::single(&cfg.lat, &w).unwrap();
                let scale = kernel_magnitude(&h, &cfg);
                for s in [0.0, 0.4, -1.3, 2.9] {
                    let a = kernel_direct(&h, s, &cfg);
                    let b = kernel_bilinear(&g, 0, &w.values, s, &cfg);
                    let r = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm())) / scale;
                    assert!(r < 1e-10, "{kind:?} d={d} L={l} s={s}: {r:e}");
                }
                let a = kernel_direct(&h, 0.8, &cfg);
                let b = kernel_direct(&h, -0.8, &cfg);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y.conj()).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn bilinear_matches_direct_collision() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in ModelKind::ALL {
            let cfg = config(kind, 1, 3, &PotentialKind::Onsite)
                .with_s_quadrature(SQuadrature { panels: 64, order: 16, tol: 1e-8 })
                .unwrap();
            let h = random_w(3, &mut rng);
            let w = SpectralField::from_real(&h);
            let g = FieldControlMap::single(&cfg.lat, &w).unwrap();
            let res = collision_bilinear(&g, 0, &w, 1.0, &cfg).unwrap();
            let direct = collision_direct_real(&h, 1.0, &cfg);
            let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (z, v) in res.values.values.iter().zip(&direct) {
                assert!((z.re - v).abs() <= 1e-6 * scale, "{kind:?}: {} vs {v}", z.re);
                assert!(z.im.abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn bilinear_with_zero_map_vanishes() {
        let cfg = config(ModelKind::Fermion, 1, 3, &PotentialKind::Onsite);
        let z = ZeroMap { lat: cfg.lat.clone() };
        let w = SpectralField::from_real(&[0.4, 0.9, 1.2]);
        let res = collision_bilinear(&z, 0, &w, 1.0, &cfg).unwrap();
        assert!(res.values.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn functional_examples() {
        let lat = Lattice::new(2, 3, 2.0).unwrap();
        let (m, _) = functionals(&SpectralField::constant(&lat, 0.6), &lat);
        assert!((m - 0.6).abs() < 1e-15);
        let star = 5;
        let w = SpectralField::from_fn(&lat, |k| Complex64::new(if k == star { 9.0 } else { 0.0 }, 0.0));
        let (m, e) = functionals(&w, &lat);
        assert!((m - 1.0).abs() < 1e-15);
        assert!((e - lat.dispersion(star)).abs() < 1e-15);
    }

    #[test]
    fn rejects_complex_input() {
        let cfg = config(ModelKind::Dnls, 1, 3, &PotentialKind::Onsite);
        let w = SpectralField::new(vec![Complex64::new(1.0, 0.1); 3]);
        assert!(matches!(collision_direct(&w, 1.0, &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn complex_sum_matches_real_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in [ModelKind::Dnls, ModelKind::Boson, ModelKind::Fermion] {
            let cfg = config(kind, 2, 3, &PotentialKind::ExpDecay { rate: 0.7 });
            let h = random_w(cfg.lat.len(), &mut rng);
            let w: Vec<Complex64> = h.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let a = collision_direct_real(&h, 0.8, &cfg);
            let b = collision_direct_complex(&w, 0.8, &cfg).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y.re).abs() <= 1e-14 * (1.0 + x.abs()));
                assert_eq!(y.im, 0.0);
            }
        }
    }
}
