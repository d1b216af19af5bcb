//! The weight `Φ`, sampled estimators of the weighted norms, the lattice-size
//! threshold `L_β`, the explicit constants, the error functional `E_β`, and
//! sampled checks of the weight inequalities.

use crate::collision::ControlMap;
use crate::error::{structural, Error, Result};
use crate::grid::{regabs, Lattice};
use crate::interaction::TauMode;
use crate::par::{map_range, Exec};
use crate::phase::{z_factor, PhasePoint, PhaseSpec};
use crate::quad::{adaptive, adaptive_relative, tanh_sinh_gaps, GaussLegendre};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::function::gamma::{gamma, ln_gamma};
use std::f64::consts::{E, PI, TAU};

/// Parameters of the weight: side `L`, exponent `β`, and the `γ` ramp
/// endpoints `a_L = (3/2)L^β`, `b_L = max(2L^β, L/8)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub l: usize,
    pub beta: f64,
    pub a_l: f64,
    pub b_l: f64,
}

impl WeightParams {
    pub fn new(l: usize, beta: f64) -> Result<Self> {
        if l < 2 {
            return Err(Error::Validation(format!("weight needs L ≥ 2, got {l}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Validation(format!("β must lie in (0,1), got {beta}")));
        }
        let lb = (l as f64).powf(beta);
        Ok(WeightParams {
            l,
            beta,
            a_l: 1.5 * lb,
            b_l: (2.0 * lb).max(l as f64 / 8.0),
        })
    }

    /// `L^β`.
    pub fn l_beta_power(&self) -> f64 {
        (self.l as f64).powf(self.beta)
    }

    pub fn gamma(&self, r: f64) -> f64 {
        let a = r.abs();
        if a <= self.a_l {
            0.0
        } else if a >= self.b_l {
            1.0 / 3.0
        } else {
            (a - self.a_l) / (3.0 * (self.b_l - self.a_l))
        }
    }

    /// `φ₁(r) = ⟨r⟩^{1/2}` up to `L^β`, then `φ₂(r) = ⟨L^β⟩^{1/2}/⟨|r|−L^β⟩^{β/2}`.
    pub fn varphi(&self, r: f64) -> f64 {
        let a = r.abs();
        let lb = self.l_beta_power();
        if a <= lb {
            regabs(a).sqrt()
        } else {
            regabs(lb).sqrt() / regabs(a - lb).powf(0.5 * self.beta)
        }
    }

    /// `Φ(R₁,x₁) = ⟨x₁⟩^{1/3−γ(R₁)} max(1, φ(R₁)/⟨x₁⟩^{1/2})`.
    pub fn phi(&self, r: f64, x: i64) -> f64 {
        let ax = regabs(x as f64);
        ax.powf(1.0 / 3.0 - self.gamma(r)) * (self.varphi(r) / ax.sqrt()).max(1.0)
    }

    /// `Φ^d(R,x) = ∏_j Φ(R_j,x_j)`.
    pub fn phi_d(&self, r: &[f64], x: &[i64]) -> f64 {
        r.iter().zip(x).map(|(&rj, &xj)| self.phi(rj, xj)).product()
    }

    fn wrap(&self, x: i64) -> i64 {
        let l = self.l as i64;
        let lo = -((l - 1) / 2);
        (x - lo).rem_euclid(l) + lo
    }

    fn site_range(&self) -> std::ops::Range<i64> {
        let l = self.l as i64;
        let lo = -((l - 1) / 2);
        lo..lo + l
    }
}

pub fn gamma_fn(r: f64, wp: &WeightParams) -> f64 {
    wp.gamma(r)
}

pub fn weight_phi1d(r: f64, x: i64, wp: &WeightParams) -> f64 {
    wp.phi(r, x)
}

/// `L_β(λ,τ₀) = max((4τ₀λ⁻²)^{1/β}, τ₀λ⁻²)`.
#[allow(non_snake_case)]
pub fn L_beta(lambda: f64, tau0: f64, beta: f64) -> f64 {
    let a = tau0 / (lambda * lambda);
    (4.0 * a).powf(1.0 / beta).max(a)
}

/// Largest `λ⁻²τ₀` for which `L ≥ L_β(λ,τ₀)`.
pub fn max_window_for(l: usize, beta: f64) -> f64 {
    let lf = l as f64;
    (0.25 * lf.powf(beta)).min(lf)
}

// ---------------------------------------------------------------------------
// Constants

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsTable {
    pub d: usize,
    pub beta: f64,
    pub pi_tilde: f64,
    pub c_beta1: f64,
    pub c_beta2: f64,
    pub c_3: f64,
    pub c_beta4: f64,
    pub c_5: f64,
    pub c_6: f64,
    /// The `β` at which the infimum defining `c_6` is attained.
    pub c_6_argmin: f64,
    pub c_beta6: f64,
    pub c_beta7: f64,
    pub c_beta8: f64,
    pub c_beta9: f64,
    pub eta: f64,
    pub alpha: f64,
    pub p_d: f64,
    /// `β ∈ (0, 1−2/d)`; outside this window several constants are not
    /// meaningful (negative or infinite).
    pub in_theorem_range: bool,
}

/// `c_{β,6} = 2 + 2^{d(1−β)/2+1}(1+2/(πβ))^d · 2/(d(1−β)−2)`.
pub fn c_beta6(d: usize, beta: f64) -> f64 {
    let df = d as f64;
    2.0 + 2f64.powf(0.5 * df * (1.0 - beta) + 1.0) * (1.0 + 2.0 / (PI * beta)).powf(df) * 2.0
        / (df * (1.0 - beta) - 2.0)
}

/// `c_{β,9} = 2^{7/6}√3⟨16^{1/(1−β)}/2⟩^{1/3}`.
pub fn c_beta9(beta: f64) -> f64 {
    2f64.powf(7.0 / 6.0) * 3f64.sqrt() * regabs(0.5 * 16f64.powf(1.0 / (1.0 - beta))).cbrt()
}

/// `Γ(a)/Γ(b)`, through log-gamma when both arguments are positive.
fn gamma_ratio(a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        (ln_gamma(a) - ln_gamma(b)).exp()
    } else {
        gamma(a) / gamma(b)
    }
}

/// `inf_{0<β<1−2/d} c_{β,6}` by a 10⁴-point grid followed by one 10⁴-point
/// refinement around the grid minimum. Returns `(value, argmin)`.
pub fn c6_infimum(d: usize) -> (f64, f64) {
    const N: usize = 10_000;
    let hi = 1.0 - 2.0 / d as f64;
    let scan = |a: f64, b: f64| -> (f64, f64, f64) {
        let h = (b - a) / (N + 1) as f64;
        let mut best = (f64::INFINITY, a);
        for j in 1..=N {
            let beta = a + j as f64 * h;
            let v = c_beta6(d, beta);
            if v < best.0 {
                best = (v, beta);
            }
        }
        (best.0, best.1, h)
    };
    let (_, b0, h) = scan(0.0, hi);
    let (v, b1, _) = scan((b0 - h).max(0.0), (b0 + h).min(hi));
    (v, b1)
}

impl ConstantsTable {
    pub fn new(d: usize, beta: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Validation(format!("the constants are defined for d ≥ 3, got {d}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Validation(format!("β must lie in (0,1), got {beta}")));
        }
        let df = d as f64;
        let pt = 0.5 * (1.0 - beta);
        let dp = df * pt;
        let in_theorem_range = beta < 1.0 - 2.0 / df;

        let c9 = c_beta9(beta);
        let q = 0.25 * df * (1.0 - beta);
        let c7 = 0.25 * (c9 * PI.sqrt() * gamma_ratio(q - 0.5, q)).powf(df);
        let c8 = (2.0 * df * c9.powf(df)).max(2.0 * c7 * (1.0 - 1.0 / df).powf(-df));
        let c6b = c_beta6(d, beta);
        let (c6, c6_argmin) = c6_infimum(d);
        let pre = 32.0 * (2f64.powf(2.0 * df / 3.0) + 3.0);
        let c2 = pre * c8;
        let c4 = pre * c9.powf(df);
        let s6 = 2f64.powf(df / 6.0);
        let c3 = s6 * (s6 + 3.0) * c6;
        let c5 = s6 * (s6 + 3.0) * 8.0;
        let c1 = c2.max(3f64.sqrt() / 6.0 * c3);

        let eta = (2.0 + 4.0 / (PI * beta)).powf(df) * 2f64.powf(-dp) / (dp - 1.0);
        let alpha = 1.0 + eta * (1.0 + (1.0 / (dp - 2.0).abs()).max(1.0));
        let p_d = if dp < 2.0 { 2.0 * dp - 2.0 } else { 2.0 };
        Ok(ConstantsTable {
            d,
            beta,
            pi_tilde: pt,
            c_beta1: c1,
            c_beta2: c2,
            c_3: c3,
            c_beta4: c4,
            c_5: c5,
            c_6: c6,
            c_6_argmin: c6_argmin,
            c_beta6: c6b,
            c_beta7: c7,
            c_beta8: c8,
            c_beta9: c9,
            eta,
            alpha,
            p_d,
            in_theorem_range,
        })
    }
}

pub fn constants(d: usize, beta: f64) -> Result<ConstantsTable> {
    ConstantsTable::new(d, beta)
}

// ---------------------------------------------------------------------------
// Error functional

/// `E_β(λ,τ,τ̃,T)`. Both windows equal gives 0; two constant windows give the
/// power-difference form; one memory kernel against a constant `T₀` gives the
/// `α_d T min(1, λ/√min(T,T₀))^{p_d}` form, with the logarithmic variant
/// at `dπ̃ = 2`.
pub fn error_term(lambda: f64, tau: TauMode, tau_tilde: TauMode, big_t: f64, d: usize, beta: f64) -> Result<f64> {
    if !(big_t >= 0.0) {
        return Err(Error::Validation(format!("T must be non-negative, got {big_t}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::Validation(format!("λ must be positive, got {lambda}")));
    }
    let c = ConstantsTable::new(d, beta)?;
    if !c.in_theorem_range {
        return Err(Error::Validation(format!(
            "β = {beta} is outside (0, 1−2/d) for d = {d}; the error term is undefined there"
        )));
    }
    let dp = d as f64 * c.pi_tilde;
    let t0 = match (tau, tau_tilde) {
        (a, b) if a == b => return Ok(0.0),
        (TauMode::Constant { t0: a }, TauMode::Constant { t0: b }) => {
            let e = dp - 1.0;
            return Ok(c.eta * big_t * (a.powf(-e) - b.powf(-e)).abs() * lambda.powf(2.0 * dp - 2.0));
        }
        (TauMode::Constant { t0 }, TauMode::Memory) | (TauMode::Memory, TauMode::Constant { t0 }) => t0,
        (TauMode::Memory, TauMode::Memory) => unreachable!(),
    };
    let m = big_t.min(t0);
    let ratio = if m > 0.0 { (lambda / m.sqrt()).min(1.0) } else { 1.0 };
    if (dp - 2.0).abs() < 1e-12 {
        Ok((1.0 + c.eta * (1.0 + (m / (lambda * lambda) + E).ln())) * big_t * ratio * ratio)
    } else {
        Ok(c.alpha * big_t * ratio.powf(c.p_d))
    }
}

// ---------------------------------------------------------------------------
// Norm estimators

/// Finite sample of the continuous part of `𝒳_L` used to estimate weighted
/// suprema. Estimates are lower bounds of the true norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub specs: Vec<PhaseSpec>,
    pub kprimes: Vec<usize>,
    pub sigmas: Vec<i8>,
}

impl SampleGrid {
    /// Deterministic grid plus `n_random` uniform points.
    ///
    /// Per axis, `R` runs over `(1+2L)^t − 1` for `t` on a uniform grid of
    /// `32·2^level` steps, together with `8·2^level` uniform points in
    /// `[L/8, 2L]`; `u` runs over `8·2^level` uniform points of `[0,1)`. In
    /// `d = 1` the grid is the tensor product; for `d > 1` all axes share the
    /// same `(R, u)`. Levels are nested, so raising `level` can only raise an
    /// estimate. `k′` is every mode when there are at most 64, otherwise the
    /// origin plus 63 fixed random modes.
    pub fn standard(lat: &Lattice, level: u32, n_random: usize, seed: u64) -> Self {
        let l = lat.side() as f64;
        let d = lat.dim();
        let nr = 32usize << level;
        let mut rs: Vec<f64> = (0..=nr)
            .map(|j| (1.0 + 2.0 * l).powf(j as f64 / nr as f64) - 1.0)
            .collect();
        let nb = 8usize << level;
        rs.extend((0..nb).map(|j| l / 8.0 + (2.0 * l - l / 8.0) * j as f64 / nb as f64));
        let nu = 8usize << level;
        let us: Vec<f64> = (0..nu).map(|i| i as f64 / nu as f64).collect();

        let mut specs = Vec::new();
        for &r in &rs {
            for &u in &us {
                specs.push(PhaseSpec::new(vec![r; d], vec![u; d]));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_random {
            let r = (0..d).map(|_| rng.gen_range(0.0..2.0 * l)).collect();
            let u = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            specs.push(PhaseSpec::new(r, u));
        }
        let n = lat.len();
        let kprimes = if n <= 64 {
            (0..n).collect()
        } else {
            let mut ks = vec![lat.origin()];
            while ks.len() < 64 {
                let k = rng.gen_range(0..n);
                if !ks.contains(&k) {
                    ks.push(k);
                }
            }
            ks
        };
        SampleGrid {
            specs,
            kprimes,
            sigmas: vec![1, -1],
        }
    }

    /// Number of `(R,u,k′,σ)` combinations; each is paired with every site.
    pub fn len(&self) -> usize {
        self.specs.len() * self.kprimes.len() * self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A sampled supremum and where it was attained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub n: u8,
    pub t1: usize,
    pub t2: usize,
    pub at: Option<PhasePoint>,
}

/// `max Φ^d(R,x)|G^{(n)}_{t₁,t₂}(X)|` over the grid.
pub fn phi_norm_estimate(
    g: &dyn ControlMap,
    wp: &WeightParams,
    n: u8,
    t1: usize,
    t2: usize,
    grid: &SampleGrid,
    exec: Exec,
) -> Result<NormEstimate> {
    if grid.is_empty() {
        return structural("norm estimate needs a non-empty sample grid");
    }
    let lat = g.lattice();
    if wp.l != lat.side() {
        return structural(format!("weight built for L = {} but lattice has L = {}", wp.l, lat.side()));
    }
    if t1 >= g.nodes() || t2 >= g.nodes() {
        return structural(format!("time nodes ({t1}, {t2}) outside 0..{}", g.nodes()));
    }
    for s in &grid.specs {
        if s.dim() != lat.dim() {
            return structural("sample grid dimension does not match the lattice");
        }
    }
    let per_spec = grid.kprimes.len() * grid.sigmas.len();
    let best = map_range(exec, grid.specs.len(), |i| {
        let spec = &grid.specs[i];
        let weights: Vec<f64> = (0..lat.len()).map(|x| wp.phi_d(&spec.r, lat.coords(x))).collect();
        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        for (j, &kp) in grid.kprimes.iter().enumerate() {
            for (m, &sigma) in grid.sigmas.iter().enumerate() {
                let vals = g.eval_sites(n, t1, t2, spec, kp, sigma);
                for (x, v) in vals.iter().enumerate() {
                    let w = weights[x] * v.norm();
                    if w > best.0 {
                        best = (w, j * grid.sigmas.len() + m, x);
                    }
                }
            }
        }
        best
    });
    let (mut value, mut at) = (f64::NEG_INFINITY, None);
    for (i, (v, combo, x)) in best.into_iter().enumerate() {
        if v > value {
            value = v;
            at = Some((i, combo, x));
        }
    }
    if !value.is_finite() {
        return Err(Error::Numerical("weighted norm estimate is not finite".into()));
    }
    let at = at.map(|(i, combo, x)| {
        let spec = &grid.specs[i];
        PhasePoint {
            r: spec.r.clone(),
            kprime: grid.kprimes[combo / grid.sigmas.len()],
            u: spec.u.clone(),
            sigma: grid.sigmas[combo % grid.sigmas.len()],
            x,
        }
    });
    debug_assert!(per_spec > 0);
    Ok(NormEstimate { value, n, t1, t2, at })
}

/// `‖G_{t₁,t₂}‖_max`: the larger of the two component norms.
pub fn max_norm_estimate(
    g: &dyn ControlMap,
    wp: &WeightParams,
    t1: usize,
    t2: usize,
    grid: &SampleGrid,
    exec: Exec,
) -> Result<NormEstimate> {
    let a = phi_norm_estimate(g, wp, 1, t1, t2, grid, exec)?;
    let b = phi_norm_estimate(g, wp, 2, t1, t2, grid, exec)?;
    Ok(if b.value > a.value { b } else { a })
}

/// `‖G‖_T` over the given time-node pairs.
pub fn t_norm_estimate(
    g: &dyn ControlMap,
    wp: &WeightParams,
    pairs: &[(usize, usize)],
    grid: &SampleGrid,
    exec: Exec,
) -> Result<NormEstimate> {
    let mut best: Option<NormEstimate> = None;
    for &(t1, t2) in pairs {
        let e = max_norm_estimate(g, wp, t1, t2, grid, exec)?;
        if best.as_ref().map_or(true, |b| e.value > b.value) {
            best = Some(e);
        }
    }
    best.ok_or_else(|| Error::Structural("time-pair grid is empty".into()))
}

/// Every pair `(t₁,t₂)` with both nodes on a stride through `0..nodes`,
/// always including the last node.
pub fn time_pairs(nodes: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut ts: Vec<usize> = (0..nodes).step_by(stride.max(1)).collect();
    if nodes > 0 && ts.last() != Some(&(nodes - 1)) {
        ts.push(nodes - 1);
    }
    let mut out = Vec::with_capacity(ts.len() * ts.len());
    for &a in &ts {
        for &b in &ts {
            out.push((a, b));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Inequality verifiers

/// Allowed excess of a sampled ratio over 1.
pub const RATIO_SLACK: f64 = 1e-9;

/// Outcome of one sampled inequality check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub lemma: String,
    pub samples: usize,
    pub max_ratio: f64,
    pub violations: usize,
    pub resampled: usize,
    pub worst_case_input: Value,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.max_ratio <= 1.0 + RATIO_SLACK
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub n_samples: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl VerifyOptions {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        VerifyOptions {
            n_samples,
            seed,
            exec: Exec::Parallel,
        }
    }
}

struct Sample {
    lhs: f64,
    rhs: f64,
    resampled: usize,
    input: Value,
}

fn sweep<F>(name: &str, tag: u64, opts: &VerifyOptions, f: F) -> Result<InequalityReport>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Sample> + Sync + Send,
{
    if opts.n_samples == 0 {
        return structural("inequality check needs at least one sample");
    }
    let base = opts.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let out = map_range(opts.exec, opts.n_samples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(base);
        rng.set_stream(i as u64);
        f(&mut rng)
    });
    let mut rep = InequalityReport {
        lemma: name.to_string(),
        samples: opts.n_samples,
        max_ratio: f64::NEG_INFINITY,
        violations: 0,
        resampled: 0,
        worst_case_input: Value::Null,
    };
    for s in out {
        let s = s?;
        let ratio = if s.lhs == 0.0 { 0.0 } else { s.lhs / s.rhs };
        if !ratio.is_finite() && !(ratio == f64::INFINITY) {
            return Err(Error::Numerical(format!("{name}: ratio is NaN at {}", s.input)));
        }
        rep.resampled += s.resampled;
        if ratio > 1.0 + RATIO_SLACK {
            rep.violations += 1;
        }
        if ratio > rep.max_ratio {
            rep.max_ratio = ratio;
            let mut input = s.input;
            input["lhs"] = json!(s.lhs);
            input["rhs"] = json!(s.rhs);
            rep.worst_case_input = input;
        }
    }
    Ok(rep)
}

/// A real amplitude spread over the regimes of `Φ`: zero, the `L^β`, `a_L`,
/// `b_L` breakpoints, and log-uniform magnitudes up to `4L`, with random sign.
fn draw_r(rng: &mut ChaCha8Rng, wp: &WeightParams) -> f64 {
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let u: f64 = rng.gen();
    let mag = if u < 0.1 {
        0.0
    } else if u < 0.3 {
        let b = [wp.l_beta_power(), wp.a_l, wp.b_l][rng.gen_range(0..3)];
        (b + rng.gen_range(-0.5..0.5)).max(0.0)
    } else {
        let lo = 1e-3f64.ln();
        let hi = (4.0 * wp.l as f64).ln();
        rng.gen_range(lo..hi).exp()
    };
    sign * mag
}

fn draw_site(rng: &mut ChaCha8Rng, wp: &WeightParams) -> i64 {
    rng.gen_range(wp.site_range())
}

fn draw_mode(rng: &mut ChaCha8Rng, wp: &WeightParams) -> f64 {
    rng.gen_range(wp.site_range()) as f64 / wp.l as f64
}

fn draw_sigma(rng: &mut ChaCha8Rng) -> i8 {
    if rng.gen_bool(0.5) {
        1
    } else {
        -1
    }
}

/// `|k − ξ/2 + n|` with `n` chosen so the argument lies in `(−1/2, 1/2]`.
fn dist_to_half(k: f64, xi: u8) -> f64 {
    let v = k - 0.5 * xi as f64;
    (v - (v - 0.5).ceil()).abs()
}

/// One axis of the three-weight ratio `Φ(r,x)/(Φ(R′,x̃)Φ(|s||z|,ỹ))`.
#[allow(clippy::too_many_arguments)]
fn axis_ratio(wp: &WeightParams, r: f64, rot: Complex64, z: Complex64, s: f64, x: i64, xt: i64, yt: i64) -> f64 {
    let rp = (r * rot + s * z).norm();
    wp.phi(r, x) / (wp.phi(rp, xt) * wp.phi(s.abs() * z.norm(), yt))
}

/// The pointwise three-weight bound with constant `c_{β,9}`.
pub fn check_three_weight_ratio(wp: &WeightParams, opts: &VerifyOptions) -> Result<InequalityReport> {
    let c9 = c_beta9(wp.beta);
    let h = wp.l_beta_power() / 4.0;
    let pt = 0.5 * (1.0 - wp.beta);
    sweep("three_weight_ratio", 1, opts, |rng| {
        let xi: u8 = rng.gen_range(0..2);
        let r = draw_r(rng, wp);
        let kp: f64 = rng.gen_range(-0.5..0.5);
        let u: f64 = rng.gen_range(-0.5..0.5);
        let k: f64 = if rng.gen_bool(1.0 / 16.0) {
            0.5 * xi as f64
        } else {
            rng.gen_range(-0.5..0.5)
        };
        let (x, y, yp) = (draw_site(rng, wp), draw_site(rng, wp), draw_site(rng, wp));
        let sigma = draw_sigma(rng);
        let s = rng.gen_range(-h..=h);
        let z = z_factor(xi, k);
        let rot = Complex64::from_polar(1.0, TAU * (u - kp));
        let xt = wp.wrap(x + sigma as i64 * y - yp);
        let yt = wp.wrap(y + yp);
        let lhs = axis_ratio(wp, r, rot, z, s, x, xt, yt);
        let sz = s.abs() * z.norm();
        let rhs = c9
            * (regabs(y as f64) * regabs(yp as f64)).powf(2.0 / 3.0)
            * regabs(r.abs() - sz).powf(-0.5).max(regabs(sz).powf(-pt));
        Ok(Sample {
            lhs,
            rhs,
            resampled: 0,
            input: json!({"xi": xi, "r": r, "k": k, "kprime": kp, "u": u, "x": x, "y": y,
                          "yprime": yp, "sigma": sigma, "s": s}),
        })
    })
}

/// Inputs shared by the `d`-dimensional ratio integrals.
struct RatioDraw {
    xi: u8,
    r: Vec<f64>,
    rot: Vec<Complex64>,
    x: Vec<i64>,
    xt: Vec<i64>,
    yt: Vec<i64>,
    ypow: f64,
    input: Value,
}

fn draw_ratio_inputs(rng: &mut ChaCha8Rng, wp: &WeightParams, d: usize) -> RatioDraw {
    let xi: u8 = rng.gen_range(0..2);
    let r: Vec<f64> = (0..d).map(|_| draw_r(rng, wp)).collect();
    let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let kp: Vec<f64> = (0..d).map(|_| draw_mode(rng, wp)).collect();
    let x: Vec<i64> = (0..d).map(|_| draw_site(rng, wp)).collect();
    let y: Vec<i64> = (0..d).map(|_| draw_site(rng, wp)).collect();
    let yp: Vec<i64> = (0..d).map(|_| draw_site(rng, wp)).collect();
    let sigma = draw_sigma(rng);
    let rot = u
        .iter()
        .zip(&kp)
        .map(|(&a, &b)| Complex64::from_polar(1.0, TAU * (a - b)))
        .collect();
    let xt = (0..d).map(|l| wp.wrap(x[l] + sigma as i64 * y[l] - yp[l])).collect();
    let yt = (0..d).map(|l| wp.wrap(y[l] + yp[l])).collect();
    let ypow = (0..d)
        .map(|l| (regabs(y[l] as f64) * regabs(yp[l] as f64)).powf(2.0 / 3.0))
        .product();
    let input = json!({"xi": xi, "r": r, "u": u, "kprime": kp, "x": x, "y": y, "yprime": yp,
                       "sigma": sigma});
    RatioDraw {
        xi,
        r,
        rot,
        x,
        xt,
        yt,
        ypow,
        input,
    }
}

/// `∫ds` over `|s| ≤ L^β/4` of the `d`-fold three-weight ratio at a fixed
/// mode `k` with no component at `ξ/2`, against `c_{β,7}∏(⟨y⟩⟨y′⟩)^{2/3}/|k−ξ/2|^{1/d}`.
pub fn check_ratio_s_integral(wp: &WeightParams, d: usize, opts: &VerifyOptions) -> Result<InequalityReport> {
    let c = ConstantsTable::new(d, wp.beta)?;
    let h = wp.l_beta_power() / 4.0;
    sweep("ratio_s_integral", 2, opts, |rng| {
        let dr = draw_ratio_inputs(rng, wp, d);
        let mut resampled = 0;
        let k: Vec<f64> = loop {
            let k: Vec<f64> = (0..d).map(|_| draw_mode(rng, wp)).collect();
            if k.iter().all(|&kl| dist_to_half(kl, dr.xi) > 0.0) {
                break k;
            }
            resampled += 1;
        };
        let z: Vec<Complex64> = k.iter().map(|&kl| z_factor(dr.xi, kl)).collect();
        let f = |s: f64| -> f64 {
            (0..d)
                .map(|l| axis_ratio(wp, dr.r[l], dr.rot[l], z[l], s, dr.x[l], dr.xt[l], dr.yt[l]))
                .product()
        };
        let lhs = kinked_integral(&f, -h, h, &[0.0], KINKED_TOL)?;
        let rhs = c.c_beta7 * dr.ypow
            / k.iter()
                .map(|&kl| dist_to_half(kl, dr.xi).powf(1.0 / d as f64))
                .product::<f64>();
        let mut input = dr.input;
        input["k"] = json!(k);
        Ok(Sample {
            lhs,
            rhs,
            resampled,
            input,
        })
    })
}

/// Relative tolerance of the integrals of piecewise-smooth ratio functions.
/// The kinks of `Φ` limit composite rules to second order, so this is far
/// looser than the smooth integrals; it is still many orders below the margins
/// the checks operate at.
pub const KINKED_TOL: f64 = 1e-7;

/// Integral of a continuous, piecewise-smooth function: composite 6-point
/// Gauss–Legendre over `[a, b]` split at `breaks`, with every piece
/// subdivided further until two successive results agree to `tol` relative.
fn kinked_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> Result<f64> {
    thread_local! {
        static GL: GaussLegendre = GaussLegendre::new(6);
    }
    let mut cuts = vec![a, b];
    cuts.extend(breaks.iter().copied().filter(|&c| c > a && c < b));
    cuts.sort_by(|x, y| x.total_cmp(y));
    cuts.dedup();
    GL.with(|gl| {
        let total = |m: usize| -> f64 { cuts.windows(2).map(|p| gl.composite(p[0], p[1], m, f)).sum() };
        let mut m = 4;
        let mut prev = total(m);
        while m < 1 << 14 {
            m *= 2;
            let cur = total(m);
            if (cur - prev).abs() <= tol * cur.abs().max(1e-300) {
                return Ok(cur);
            }
            prev = cur;
        }
        Err(Error::Numerical(format!("piecewise-smooth integral on [{a}, {b}] did not settle")))
    })
}

/// `∫ds` over `|s| ≤ λ⁻²τ₀` and `∫dk` over `Λ*` of the `d`-fold three-weight
/// ratio, for `L ≥ L_β(λ,τ₀)`, against `c_{β,8}∏(⟨y⟩⟨y′⟩)^{2/3}`.
pub fn check_ratio_sk_integral(wp: &WeightParams, d: usize, opts: &VerifyOptions) -> Result<InequalityReport> {
    let c = ConstantsTable::new(d, wp.beta)?;
    let amax = max_window_for(wp.l, wp.beta);
    let modes: Vec<f64> = wp.site_range().map(|m| m as f64 / wp.l as f64).collect();
    sweep("ratio_sk_integral", 3, opts, |rng| {
        let dr = draw_ratio_inputs(rng, wp, d);
        let lambda: f64 = rng.gen_range(0.2..2.0);
        let a = amax * rng.gen_range(1e-3..=1.0);
        let tau0 = a * lambda * lambda;
        let zs: Vec<Vec<Complex64>> = (0..2)
            .map(|xi| modes.iter().map(|&k| z_factor(xi, k)).collect())
            .collect();
        let z = &zs[dr.xi as usize];
        let f = |s: f64| -> f64 {
            (0..d)
                .map(|l| {
                    z.iter()
                        .map(|&zk| axis_ratio(wp, dr.r[l], dr.rot[l], zk, s, dr.x[l], dr.xt[l], dr.yt[l]))
                        .sum::<f64>()
                        / wp.l as f64
                })
                .product()
        };
        let lhs = kinked_integral(&f, -a, a, &[0.0], KINKED_TOL)?;
        let rhs = c.c_beta8 * dr.ypow;
        let mut input = dr.input;
        input["lambda"] = json!(lambda);
        input["tau0"] = json!(tau0);
        Ok(Sample {
            lhs,
            rhs,
            resampled: 0,
            input,
        })
    })
}

/// `∫₀^{1/2} |r − s sin πk|^{−(1−β)/2} dk`. Around the zero `k*` of
/// `r − s sin πk` the integrand is written through the distance `t = |k − k*|`
/// (`sin A − sin B = 2cos((A+B)/2) sin((A−B)/2)`), which avoids the
/// cancellation at the singularity.
pub fn singular_sine_integral(r: f64, s: f64, beta: f64) -> Result<f64> {
    let pt = 0.5 * (1.0 - beta);
    if r < s {
        let ks = (r / s).asin() / PI;
        let left = |_: f64, t: f64| (2.0 * s * (PI * (ks - 0.5 * t)).cos() * (0.5 * PI * t).sin()).abs().powf(-pt);
        let right = |t: f64, _: f64| (2.0 * s * (PI * (ks + 0.5 * t)).cos() * (0.5 * PI * t).sin()).abs().powf(-pt);
        let mut v = 0.0;
        if ks > 0.0 {
            v += tanh_sinh_gaps(&left, 0.0, ks, 1e-13)?;
        }
        v += tanh_sinh_gaps(&right, ks, 0.5, 1e-13)?;
        Ok(v)
    } else {
        // k = 1/2 − t: r − s cos πt = (r − s) + 2s sin²(πt/2).
        let f = |_: f64, t: f64| ((r - s) + 2.0 * s * (0.5 * PI * t).sin().powi(2)).powf(-pt);
        tanh_sinh_gaps(&f, 0.0, 0.5, 1e-13)
    }
}

/// The singular sine integral against `(1+2/(πβ))s^{−(1−β)/2}`.
pub fn check_singular_sine_integral(beta: f64, opts: &VerifyOptions) -> Result<InequalityReport> {
    let pt = 0.5 * (1.0 - beta);
    sweep("singular_sine_integral", 4, opts, |rng| {
        let s = rng.gen_range(1e-3f64.ln()..1e3f64.ln()).exp();
        let u: f64 = rng.gen();
        let r = if u < 0.1 {
            0.0
        } else if u < 0.2 {
            s
        } else if u < 0.8 {
            s * rng.gen_range(0.0..1.0)
        } else {
            s * rng.gen_range(1.0..4.0)
        };
        let lhs = singular_sine_integral(r, s, beta)?;
        let rhs = (1.0 + 2.0 / (PI * beta)) * s.powf(-pt);
        Ok(Sample {
            lhs,
            rhs,
            resampled: 0,
            input: json!({"r": r, "s": s, "beta": beta}),
        })
    })
}

/// `(1/L^d)Σ_{k∈Λ*} ∏_ℓ ⟨R_ℓ − |s||z_ξ(k_ℓ)|⟩^{−π̃}`, evaluated axis by axis.
fn lattice_window_density(r: &[f64], zabs: &[f64], s: f64, pt: f64, l: usize) -> f64 {
    r.iter()
        .map(|&rl| zabs.iter().map(|&z| regabs(rl - s.abs() * z).powf(-pt)).sum::<f64>() / l as f64)
        .product()
}

/// `∫₀^T dt |∫_{λ⁻²τ(T,t)}^{λ⁻²τ̃(T,t)} ds g(s)|` for a non-negative density
/// `g`, reduced to single integrals in `s`.
fn window_difference_integral(
    g: &dyn Fn(f64) -> f64,
    lambda: f64,
    tau: TauMode,
    tau_tilde: TauMode,
    big_t: f64,
) -> Result<f64> {
    let l2 = lambda * lambda;
    match (tau, tau_tilde) {
        (a, b) if a == b => Ok(0.0),
        (TauMode::Constant { t0: a }, TauMode::Constant { t0: b }) => {
            let (lo, hi) = (a.min(b) / l2, a.max(b) / l2);
            Ok(big_t * adaptive_relative(g, lo, hi, 1e-12)?)
        }
        (TauMode::Constant { t0 }, TauMode::Memory) | (TauMode::Memory, TauMode::Constant { t0 }) => {
            // t ↦ |G(λ⁻²T₀) − G(λ⁻²(T−t))|; swapping the order of integration
            // gives the weight min(T, λ²s) below λ⁻²T₀ and (T − λ²s)₊ above.
            let c = t0 / l2;
            let top = big_t / l2;
            let below = |s: f64| g(s) * big_t.min(l2 * s);
            let above = |s: f64| g(s) * (big_t - l2 * s);
            let mut v = 0.0;
            let kink = top.min(c);
            v += adaptive_relative(&below, 0.0, kink, 1e-12)?;
            if c > kink {
                v += adaptive_relative(&below, kink, c, 1e-12)?;
            }
            if top > c {
                v += adaptive_relative(&above, c, top, 1e-12)?;
            }
            Ok(v)
        }
        (TauMode::Memory, TauMode::Memory) => unreachable!(),
    }
}

fn draw_tau(rng: &mut ChaCha8Rng) -> TauMode {
    TauMode::Constant {
        t0: rng.gen_range(0.01..2.0),
    }
}

/// The `t`-integrated window difference of `∫dk ∏⟨R_ℓ − |s||z_ξ(k_ℓ)|⟩^{−π̃}`
/// against `E_β(λ,τ,τ̃,T)`, with `L ≥ L_β(λ, max(τ,τ̃)(T,0))`.
pub fn check_window_error_integral(wp: &WeightParams, d: usize, opts: &VerifyOptions) -> Result<InequalityReport> {
    ConstantsTable::new(d, wp.beta)?;
    let pt = 0.5 * (1.0 - wp.beta);
    let amax = max_window_for(wp.l, wp.beta);
    let modes: Vec<f64> = wp.site_range().map(|m| m as f64 / wp.l as f64).collect();
    let zabs: Vec<Vec<f64>> = (0..2)
        .map(|xi| modes.iter().map(|&k| z_factor(xi, k).norm()).collect())
        .collect();
    sweep("window_error_integral", 5, opts, |rng| {
        let xi: u8 = rng.gen_range(0..2);
        let r: Vec<f64> = (0..d).map(|_| draw_r(rng, wp).abs()).collect();
        let big_t: f64 = rng.gen_range(0.01..2.0);
        let (tau, tau_tilde) = match rng.gen_range(0..16) {
            0 => {
                let t = draw_tau(rng);
                (t, t)
            }
            1..=5 => (TauMode::Memory, draw_tau(rng)),
            6..=10 => (draw_tau(rng), TauMode::Memory),
            _ => (draw_tau(rng), draw_tau(rng)),
        };
        let tmax = tau.eval(big_t, 0.0).max(tau_tilde.eval(big_t, 0.0));
        let lambda = (tmax / amax).sqrt() * rng.gen_range(1.0..4.0);
        let z = &zabs[xi as usize];
        let g = |s: f64| lattice_window_density(&r, z, s, pt, wp.l);
        let lhs = window_difference_integral(&g, lambda, tau, tau_tilde, big_t)?;
        let rhs = error_term(lambda, tau, tau_tilde, big_t, d, wp.beta)?;
        Ok(Sample {
            lhs,
            rhs,
            resampled: 0,
            input: json!({"xi": xi, "r": r, "T": big_t, "lambda": lambda, "tau": tau,
                          "tau_tilde": tau_tilde}),
        })
    })
}

/// `∫_{−1/2}^{1/2} dk ⟨R − |s||z_ξ(k)|⟩^{−π̃}` over the continuous torus (the
/// same for both `ξ`), written as `(2/π)∫₀^{2s} ⟨R−y⟩^{−π̃}(4s²−y²)^{−1/2} dy`.
/// The range is bisected until every panel is at most twice as long as its
/// distance to the complex singularities `y = R ± i` and to `y = 2s`, so a
/// 12-point Gauss–Legendre rule is accurate to roughly `1e−14` on each. The
/// panel ending at `2s` is mapped by `y = 2s − v²` and kept within a quarter
/// of its distance to the peak.
pub fn torus_window_density(r: f64, s: f64, pt: f64) -> f64 {
    thread_local! {
        static GL: GaussLegendre = GaussLegendre::new(12);
    }
    let s = s.abs();
    if s == 0.0 {
        return regabs(r).powf(-pt);
    }
    let top = 2.0 * s;
    let peak_dist = |a: f64, b: f64| -> f64 {
        let gap = if r < a { a - r } else if r > b { r - b } else { 0.0 };
        gap.hypot(1.0)
    };
    let f = |y: f64| regabs(r - y).powf(-pt) / ((top - y) * (top + y)).sqrt();
    let g = |t: f64| {
        let y = top - t * t;
        2.0 * regabs(r - y).powf(-pt) / (top + y).sqrt()
    };
    GL.with(|gl| {
        let mut v = 0.0;
        let mut stack = vec![(0.0, top)];
        while let Some((a, b)) = stack.pop() {
            let len = b - a;
            let last = b == top;
            let near = if last { peak_dist(a, b) } else { peak_dist(a, b).min(top - b) };
            let limit = if last { 0.25 * near } else { 2.0 * near };
            if len > limit {
                let m = 0.5 * (a + b);
                stack.push((a, m));
                stack.push((m, b));
            } else if last {
                v += gl.integrate(0.0, len.sqrt(), g);
            } else {
                v += gl.integrate(a, b, f);
            }
        }
        2.0 / PI * v
    })
}

/// `Γ((1−π̃)/2)/(√π Γ(1−π̃/2))`: the large-`s` coefficient in
/// `torus_window_density ≈ C (2s)^{−π̃}`.
fn torus_density_coefficient(pt: f64) -> f64 {
    gamma_ratio(0.5 * (1.0 - pt), 1.0 - 0.5 * pt) / PI.sqrt()
}

/// `D(R) = ∫₀^∞ (⟨R−y⟩^{−π̃} − y^{−π̃}) dy`, the coefficient of the `1/s`
/// correction: `torus_window_density(R,s) = C(2s)^{−π̃} + D(R)/(πs) + O(s^{−1−π̃})`.
pub fn torus_density_offset(r: f64, pt: f64) -> Result<f64> {
    // y^{−p}(⟨R−y⟩^{−p}/y^{−p} − 1) with y − ⟨R−y⟩ formed without cancellation.
    let rmax = r.abs().max(1.0);
    let diff = |y: f64| -> f64 {
        let a = regabs(r - y);
        if y < 4.0 * rmax {
            return a.powf(-pt) - y.powf(-pt);
        }
        let delta = (2.0 * r * y - 1.0 - r * r) / (y + a);
        y.powf(-pt) * (pt * (delta / a).ln_1p()).exp_m1()
    };
    let top = 1e6 * rmax;
    let mut cuts = vec![0.0, 1.0, top];
    let mut w = 1.0;
    while w < top {
        for c in [r - w, r + w, w] {
            if c > 0.0 && c < top {
                cuts.push(c);
            }
        }
        w *= 8.0;
    }
    if r > 0.0 {
        cuts.push(r);
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut v = 0.0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a == 0.0 {
            v += tanh_sinh_gaps(&|dl, dr| diff(if dl <= dr { dl } else { b - dr }), a, b, 1e-13)?;
        } else {
            // absolute: near y = R the two powers cancel and a panel-relative
            // target would sit below the rounding floor
            v += adaptive(&diff, a, b, 1e-13)?;
        }
    }
    // ⟨R−y⟩^{−π̃} − y^{−π̃} ≈ π̃R y^{−1−π̃} beyond the cut.
    Ok(v + r * top.powf(-pt))
}

/// `∫_ℝ ds ∫_{𝕋^d} dk ∏_ℓ ⟨R_ℓ − |s||z_ξ(k_ℓ)|⟩^{−π̃}`. The `s` range is cut
/// at `S = 10⁶ max(1, R)` and integrated in `ln s` beyond `s = 1`; the tail
/// past `S` uses the two-term expansion of each factor, leaving an error of
/// relative order `1/S` in the tail.
pub fn full_line_window_integral(r: &[f64], pt: f64) -> Result<f64> {
    let d = r.len() as f64;
    let dp = d * pt;
    if dp <= 1.0 {
        return Err(Error::Validation(format!("the s-integral diverges for dπ̃ = {dp} ≤ 1")));
    }
    let rmax = r.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let cut = 1e6 * rmax;
    let dens = |s: f64| -> f64 {
        r.iter()
            .map(|&rl| torus_window_density(rl, s, pt))
            .product()
    };
    let near = adaptive_relative(&dens, 0.0, 1.0, 1e-10)?;
    let logd = |v: f64| {
        let s = v.exp();
        dens(s) * s
    };
    // up to s = 8 max R the density has peaks near s = R_ℓ/2; past that it is
    // a smooth power law in ln s and one adaptive pass covers the rest
    let mut far = 0.0;
    let mut lo = 0.0;
    let smooth = (8.0 * rmax).ln();
    let end = cut.ln();
    while lo < smooth {
        let hi = (lo + 2.0).min(smooth);
        far += adaptive_relative(&logd, lo, hi, 1e-10)?;
        lo = hi;
    }
    far += adaptive(&logd, smooth, end, 1e-10 * (near + far))?;
    let a = torus_density_coefficient(pt) * 2f64.powf(-pt);
    let mut b_sum = 0.0;
    for &rl in r {
        b_sum += torus_density_offset(rl, pt)? / PI;
    }
    let tail = a.powf(d) * cut.powf(1.0 - dp) / (dp - 1.0)
        + a.powf(d - 1.0) * b_sum * cut.powf(-(d - 1.0) * pt) / ((d - 1.0) * pt);
    let v = 2.0 * (near + far + tail);
    if !v.is_finite() {
        return Err(Error::Numerical("full-line window integral is not finite".into()));
    }
    Ok(v)
}

/// The full-line window integral (continuous `k`) against `c_{β,6}`.
pub fn check_full_line_integral(wp: &WeightParams, d: usize, opts: &VerifyOptions) -> Result<InequalityReport> {
    let c = ConstantsTable::new(d, wp.beta)?;
    let pt = c.pi_tilde;
    sweep("full_line_integral", 6, opts, |rng| {
        let xi: u8 = rng.gen_range(0..2);
        let r: Vec<f64> = (0..d).map(|_| draw_r(rng, wp).abs()).collect();
        let lhs = full_line_window_integral(&r, pt)?;
        Ok(Sample {
            lhs,
            rhs: c.c_beta6,
            resampled: 0,
            input: json!({"xi": xi, "r": r}),
        })
    })
}

/// `∫ds` over `|s| ≤ L^{1/7}/2` and `∫dk` over `Λ*` of `1/Φ^d(|s||z_ξ(k)|, x)`
/// against `c_6∏⟨x_j⟩^{1/6}`.
pub fn check_inverse_weight_integral(wp: &WeightParams, d: usize, opts: &VerifyOptions) -> Result<InequalityReport> {
    let c = ConstantsTable::new(d, wp.beta)?;
    let h = (wp.l as f64).powf(1.0 / 7.0) / 2.0;
    let modes: Vec<f64> = wp.site_range().map(|m| m as f64 / wp.l as f64).collect();
    let zabs: Vec<Vec<f64>> = (0..2)
        .map(|xi| modes.iter().map(|&k| z_factor(xi, k).norm()).collect())
        .collect();
    sweep("inverse_weight_integral", 7, opts, |rng| {
        let xi: u8 = rng.gen_range(0..2);
        let x: Vec<i64> = (0..d).map(|_| draw_site(rng, wp)).collect();
        let z = &zabs[xi as usize];
        let f = |s: f64| -> f64 {
            x.iter()
                .map(|&xj| z.iter().map(|&zk| 1.0 / wp.phi(s.abs() * zk, xj)).sum::<f64>() / wp.l as f64)
                .product()
        };
        let lhs = 2.0 * kinked_integral(&f, 0.0, h, &[], KINKED_TOL)?;
        let rhs = c.c_6 * x.iter().map(|&xj| regabs(xj as f64).powf(1.0 / 6.0)).product::<f64>();
        Ok(Sample {
            lhs,
            rhs,
            resampled: 0,
            input: json!({"xi": xi, "x": x}),
        })
    })
}

/// Runs every weight-inequality check. The one-dimensional checks use the
/// weight's `L` and `β`; the rest run in dimension `d`.
pub fn verify_weight_inequalities(wp: &WeightParams, d: usize, opts: &VerifyOptions) -> Result<Vec<InequalityReport>> {
    Ok(vec![
        check_three_weight_ratio(wp, opts)?,
        check_ratio_s_integral(wp, d, opts)?,
        check_ratio_sk_integral(wp, d, opts)?,
        check_singular_sine_integral(wp.beta, opts)?,
        check_window_error_integral(wp, d, opts)?,
        check_full_line_integral(wp, d, opts)?,
        check_inverse_weight_integral(wp, d, opts)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{FieldControlMap, ZeroMap};
    use crate::grid::SpectralField;
    use proptest::prelude::*;
    use rand::Rng;

    fn wp16() -> WeightParams {
        WeightParams::new(16, 0.3).unwrap()
    }

    #[test]
    fn gamma_shape() {
        let wp = wp16();
        assert_eq!(wp.gamma(0.0), 0.0);
        assert_eq!(wp.gamma(wp.b_l), 1.0 / 3.0);
        assert_eq!(wp.gamma(-wp.b_l), 1.0 / 3.0);
        assert_eq!(wp.gamma(wp.a_l), 0.0);
        let mut prev = 0.0;
        for i in 0..=2000 {
            let g = wp.gamma(i as f64 * 0.01);
            assert!((0.0..=1.0 / 3.0).contains(&g));
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn gamma_lipschitz_bound_for_large_lattices() {
        for beta in [0.1, 0.3, 0.5] {
            let lmin = 16f64.powf(1.0 / (1.0 - beta)).ceil() as usize;
            for l in [lmin, lmin + 7, 2 * lmin] {
                let wp = WeightParams::new(l, beta).unwrap();
                let lip = 1.0 / (3.0 * (wp.b_l - wp.a_l));
                assert!(lip <= 32.0 / (3.0 * l as f64) * (1.0 + 1e-12), "L={l} β={beta}");
            }
        }
    }

    #[test]
    fn phi_at_origin_is_one() {
        assert_eq!(wp16().phi(0.0, 0), 1.0);
    }

    #[test]
    fn phi_bounds_on_dense_grid() {
        for (l, beta) in [(16, 0.3), (32, 0.2), (64, 0.3), (128, 0.1)] {
            let wp = WeightParams::new(l, beta).unwrap();
            let top = regabs(l as f64 / 2.0).cbrt();
            for i in 0..4000 {
                let r = i as f64 * 4.0 * l as f64 / 4000.0;
                for x in wp.site_range() {
                    let p = wp.phi(r, x);
                    assert!(p >= 1.0 - 1e-15 && p <= top * (1.0 + 1e-12), "L={l} r={r} x={x} Φ={p}");
                }
            }
        }
    }

    #[test]
    fn varphi_monotonicity() {
        let wp = wp16();
        let lb = wp.l_beta_power();
        let cap = regabs(lb).sqrt();
        let mut prev = 0.0;
        for i in 0..=1000 {
            let r = lb * i as f64 / 1000.0;
            let v = wp.varphi(r);
            assert!(v > prev && v <= cap * (1.0 + 1e-15));
            prev = v;
        }
        for i in 1..=1000 {
            let r = lb + i as f64 * 0.05;
            let v = wp.varphi(r);
            assert!(v < prev && v <= cap);
            prev = v;
        }
    }

    #[test]
    fn phi_is_continuous_at_breakpoints() {
        let wp = wp16();
        for b in [wp.l_beta_power(), wp.a_l, wp.b_l] {
            for x in wp.site_range() {
                let lo = wp.phi(b * (1.0 - 1e-15), x);
                let hi = wp.phi(b * (1.0 + 1e-15), x);
                assert!((lo - hi).abs() < 1e-12, "b={b} x={x}");
            }
        }
    }

    proptest! {
        #[test]
        fn phi_is_symmetric(r in -64.0f64..64.0, x in -7i64..=8) {
            let wp = wp16();
            prop_assert_eq!(wp.phi(r, x), wp.phi(-r, x));
            let mx = wp.wrap(-x);
            if mx == -x {
                prop_assert_eq!(wp.phi(r, x), wp.phi(r, -x));
            }
        }

        #[test]
        fn l_beta_admits_any_lattice_above_threshold(l in 2usize..200, beta in 0.05f64..0.95, tau0 in 0.01f64..10.0) {
            let lambda = 2.0 * (tau0 / (l as f64).powf(beta)).sqrt() * 1.000001;
            prop_assert!(l as f64 >= L_beta(lambda, tau0, beta));
        }
    }

    #[test]
    fn l_beta_examples() {
        assert!((L_beta(1.0, 1.0, 0.5) - 16.0).abs() < 1e-12);
        assert!((L_beta(2.0, 4.0, 0.25) - 256.0).abs() < 1e-9);
        assert!(L_beta(1e3, 1e-3, 0.3) < 1e-8);
    }

    #[test]
    fn constants_positive_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let d = rng.gen_range(3..7usize);
            let beta = rng.gen_range(1e-3..(1.0 - 2.0 / d as f64 - 1e-3));
            let c = constants(d, beta).unwrap();
            assert!(c.in_theorem_range);
            for v in [
                c.c_beta1, c.c_beta2, c.c_3, c.c_beta4, c.c_5, c.c_6, c.c_beta6, c.c_beta7, c.c_beta8,
                c.c_beta9, c.eta, c.alpha, c.p_d,
            ] {
                assert!(v > 0.0 && v.is_finite(), "d={d} β={beta}: {c:?}");
            }
            assert!(c.c_6 <= c.c_beta6 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn c_beta6_blows_up_at_range_edge() {
        let mut prev = 0.0;
        for e in [1e-2, 1e-3, 1e-4, 1e-6] {
            let v = c_beta6(3, 1.0 / 3.0 - e);
            assert!(v > prev);
            prev = v;
        }
        assert!(prev > 1e6);
        let c = constants(3, 0.5).unwrap();
        assert!(!c.in_theorem_range);
    }

    #[test]
    fn error_term_cases() {
        let m = TauMode::Memory;
        let a = TauMode::Constant { t0: 0.5 };
        let b = TauMode::Constant { t0: 0.8 };
        assert_eq!(error_term(0.1, a, a, 1.0, 3, 0.2).unwrap(), 0.0);
        assert_eq!(error_term(0.1, m, m, 1.0, 3, 0.2).unwrap(), 0.0);
        assert_eq!(error_term(0.1, a, TauMode::Constant { t0: 0.5 }, 1.0, 3, 0.2).unwrap(), 0.0);

        // d=3, β=0.2: π̃ = 0.4, dπ̃ = 1.2.
        let (d, beta, lam, t) = (3usize, 0.2f64, 0.05f64, 1.5f64);
        let dp = 1.2;
        let eta = (2.0 + 4.0 / (PI * beta)).powi(3) * 2f64.powf(-dp) / (dp - 1.0);
        let alpha = 1.0 + eta * (1.0 + 1.0 / 0.8);
        let want = alpha * t * (lam / 0.5f64.sqrt()).powf(2.0 * dp - 2.0);
        let got = error_term(lam, m, a, t, d, beta).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        assert_eq!(got, error_term(lam, a, m, t, d, beta).unwrap());

        let want_b = eta * t * (0.5f64.powf(-0.2) - 0.8f64.powf(-0.2)).abs() * lam.powf(0.4);
        let got_b = error_term(lam, a, b, t, d, beta).unwrap();
        assert!((got_b - want_b).abs() <= 1e-12 * want_b);

        // dπ̃ = 2 at d = 5, β = 0.2.
        let c5 = constants(5, 0.2).unwrap();
        let want_d = (1.0 + c5.eta * (1.0 + (0.5 / (lam * lam) + E).ln())) * t * (lam * lam / 0.5);
        let got_d = error_term(lam, m, a, t, 5, 0.2).unwrap();
        assert!((got_d - want_d).abs() <= 1e-12 * want_d, "{got_d} vs {want_d}");

        assert!(error_term(lam, m, a, t, 3, 0.5).is_err());
        assert!(error_term(lam, m, a, -1.0, 3, 0.2).is_err());
    }

    #[test]
    fn error_term_vanishes_with_lambda_and_is_continuous() {
        let m = TauMode::Memory;
        for other in [TauMode::Constant { t0: 0.3 }, TauMode::Constant { t0: 2.0 }] {
            let mut prev = f64::INFINITY;
            for i in 0..200 {
                let lam = 0.5f64.powi(i);
                let v = error_term(lam, m, other, 1.0, 3, 0.2).unwrap();
                assert!(v <= prev);
                prev = v;
            }
            assert!(prev < 1e-3);
            // Continuity in (λ, T) across the min() switches.
            for i in 0..400 {
                let lam = 0.01 + i as f64 * 0.005;
                for j in 0..50 {
                    let t = 0.05 + j as f64 * 0.1;
                    let a = error_term(lam, m, other, t, 3, 0.2).unwrap();
                    let b = error_term(lam + 1e-9, m, other, t + 1e-9, 3, 0.2).unwrap();
                    assert!((a - b).abs() <= 1e-6 * a.max(1.0));
                }
            }
        }
    }

    #[test]
    fn singular_sine_examples() {
        for beta in [0.1, 0.3, 0.6] {
            let v = singular_sine_integral(0.0, 1.0, beta).unwrap();
            assert!(v <= 1.0 + 2.0 / (PI * beta));
            // r = 0 closed form: ∫₀^{1/2} sin(πk)^{−π̃} dk.
            let pt = 0.5 * (1.0 - beta);
            let want = gamma_ratio(0.5 * (1.0 - pt), 1.0 - 0.5 * pt) / (2.0 * PI.sqrt());
            assert!((v - want).abs() < 1e-10, "{v} vs {want}");
        }
    }

    #[test]
    fn torus_density_matches_direct_k_integral() {
        for (r, s) in [(0.0, 0.3), (1.5, 0.4), (2.0, 3.0), (0.7, 20.0), (5.0, 200.0)] {
            let pt = 0.35;
            let f = |k: f64| regabs(r - s * z_factor(0, k).norm()).powf(-pt);
            let ks = if r < 2.0 * s { (r / (2.0 * s)).asin() / PI } else { 0.25 };
            let direct = adaptive(&f, -0.5, -ks, 1e-13).unwrap()
                + adaptive(&f, -ks, ks, 1e-13).unwrap()
                + adaptive(&f, ks, 0.5, 1e-13).unwrap();
            let got = torus_window_density(r, s, pt);
            assert!((got - direct).abs() < 1e-10 * direct, "r={r} s={s}: {got} vs {direct}");
        }
        let c = torus_density_coefficient(0.35);
        for r in [0.0, 0.5, 3.0, 12.0] {
            let d = torus_density_offset(r, 0.35).unwrap();
            for s in [1e5f64, 1e7] {
                let want = c * (2.0 * s).powf(-0.35) + d / (PI * s);
                let rel = torus_window_density(r, s, 0.35) / want;
                assert!((rel - 1.0).abs() < 10.0 * (1.0 + r * r) / s, "r={r} s={s}: {rel}");
            }
        }
    }

    #[test]
    fn three_weight_ratio_degenerate_mode() {
        // z = 0 collapses the bound to its 1/⟨r⟩^{1/2} branch.
        let wp = wp16();
        let c9 = c_beta9(wp.beta);
        for r in [0.0, 0.5, 2.0, 5.0, 20.0] {
            for x in wp.site_range() {
                let z = z_factor(0, 0.0);
                let v = axis_ratio(&wp, r, Complex64::new(1.0, 0.0), z, 0.3, x, x, 0);
                assert!(v <= c9 * regabs(r).powf(-0.5).max(1.0));
            }
        }
    }

    #[test]
    fn small_sweep_has_no_violations() {
        let wp = wp16();
        let opts = VerifyOptions::new(40, 11);
        for rep in verify_weight_inequalities(&wp, 3, &opts).unwrap() {
            assert!(rep.passed(), "{}", serde_json::to_string(&rep).unwrap());
            assert_eq!(rep.samples, 40);
        }
    }

    #[test]
    fn sweep_is_reproducible() {
        let wp = wp16();
        let mut a = VerifyOptions::new(30, 5);
        let b = check_ratio_s_integral(&wp, 3, &a).unwrap();
        a.exec = Exec::Sequential;
        let c = check_ratio_s_integral(&wp, 3, &a).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn zero_map_has_zero_norm() {
        let lat = Lattice::new(1, 4, 0.0).unwrap();
        let wp = WeightParams::new(4, 0.3).unwrap();
        let grid = SampleGrid::standard(&lat, 0, 16, 1);
        let z = ZeroMap { lat: lat.clone() };
        let e = max_norm_estimate(&z, &wp, 0, 0, &grid, Exec::Parallel).unwrap();
        assert_eq!(e.value, 0.0);
        let empty = SampleGrid {
            specs: vec![],
            kprimes: vec![0],
            sigmas: vec![1],
        };
        assert!(phi_norm_estimate(&z, &wp, 1, 0, 0, &empty, Exec::Parallel).is_err());
    }

    #[test]
    fn constant_field_at_distinguished_point() {
        let lat = Lattice::new(1, 4, 0.0).unwrap();
        let wp = WeightParams::new(4, 0.3).unwrap();
        let w = SpectralField::constant(&lat, 0.7);
        let g = FieldControlMap::single(&lat, &w).unwrap();
        let grid = SampleGrid {
            specs: vec![PhaseSpec::zero(1)],
            kprimes: vec![lat.origin()],
            sigmas: vec![1],
        };
        let e = phi_norm_estimate(&g, &wp, 1, 0, 0, &grid, Exec::Sequential).unwrap();
        assert!((e.value - 0.7).abs() < 1e-14);
        assert_eq!(e.at.unwrap().x, lat.origin());
    }

    #[test]
    fn norm_estimate_grows_under_refinement() {
        let lat = Lattice::new(1, 4, 0.0).unwrap();
        let wp = WeightParams::new(4, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = SpectralField::from_fn(&lat, |_| Complex64::new(rng.gen_range(0.1..1.0), 0.0));
        let g = FieldControlMap::single(&lat, &w).unwrap();
        let mut prev = 0.0;
        for level in 0..3 {
            let grid = SampleGrid::standard(&lat, level, 100, 4);
            let e = max_norm_estimate(&g, &wp, 0, 0, &grid, Exec::Parallel).unwrap();
            assert!(e.value >= prev);
            prev = e.value;
        }
    }
}
