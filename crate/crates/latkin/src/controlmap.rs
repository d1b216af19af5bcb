//! The bilinear operators `J_τ` and `I_τ` acting on control maps, and the
//! residual of the evolution identity `F[W] = I_τ[F[W], F[W]]` along a solved
//! trajectory.

use crate::collision::{
    check_point, collision_bilinear, kernel_magnitude, CollisionConfig, ControlMap, FieldControlMap,
};
use crate::error::{structural, Error, Result};
use crate::grid::Lattice;
use crate::interaction::TauMode;
use crate::par::map_range;
use crate::phase::{inner_phase, phi_raw, shifted_phase, PhasePoint, PhaseSpec};
use crate::quad::GaussLegendre;
use crate::solver::Trajectory;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// `(n, t₁, t₂, X)` with the window that defines the operator. Times are
/// node indices of the trajectory grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorQuery {
    pub n: u8,
    pub t1: usize,
    pub t2: usize,
    pub x: PhasePoint,
    pub tau: TauMode,
}

/// A value together with the largest order-`p` against order-`2p` panel
/// difference seen while computing it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub value: Complex64,
    pub residual: f64,
}

/// Potential-dependent tables shared by all evaluations.
struct Tables {
    /// `𝒱(k,y)`, row `k`.
    script_v: Vec<f64>,
    vconv: Vec<f64>,
    support: Vec<(usize, f64)>,
}

impl Tables {
    fn new(cfg: &CollisionConfig) -> Self {
        let lat = &cfg.lat;
        let n = lat.len();
        let theta = cfg.model.theta();
        let mut script_v = vec![0.0; n * n];
        for k in 0..n {
            for y in 0..n {
                script_v[k * n + y] = cfg.pot.script_v(lat, theta, k, y);
            }
        }
        Tables {
            script_v,
            vconv: cfg.pot.vconv_values().to_vec(),
            support: cfg.pot.support().iter().map(|&y| (y, cfg.pot.v(y))).collect(),
        }
    }
}

fn check_times(times: &[f64], maps: &[&dyn ControlMap], cfg: &CollisionConfig) -> Result<()> {
    if times.is_empty() {
        return structural("empty time grid");
    }
    for m in maps {
        if m.lattice() != &cfg.lat {
            return structural("control map and collision config use different lattices");
        }
        if m.nodes() < times.len() {
            return structural(format!(
                "control map has {} time nodes, the grid has {}",
                m.nodes(),
                times.len()
            ));
        }
    }
    if times.len() > 1 {
        let h = times[1] - times[0];
        let uniform = times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * (1.0 + h));
        if !(h > 0.0) || !uniform {
            return structural("time grid must be uniform and increasing");
        }
    }
    Ok(())
}

fn check_query(q: &OperatorQuery, times: &[f64], g: &dyn ControlMap) -> Result<()> {
    check_point(g, q.n, &q.x)?;
    if q.t1 >= times.len() || q.t2 >= times.len() {
        return structural(format!(
            "time nodes ({}, {}) outside 0..{}",
            q.t1,
            q.t2,
            times.len()
        ));
    }
    Ok(())
}

/// Trapezoid weights on nodes `0..=m` of a uniform grid.
fn trapezoid(times: &[f64], m: usize) -> Vec<f64> {
    if m == 0 {
        return vec![0.0];
    }
    let h = times[1] - times[0];
    (0..=m)
        .map(|j| if j == 0 || j == m { 0.5 * h } else { h })
        .collect()
}

/// `Σ_k` of the eight terms at fixed `(t, s)`, times `½/|Λ*|`.
#[allow(clippy::too_many_arguments)]
fn integrand(
    g: &dyn ControlMap,
    gcal: &dyn ControlMap,
    n: u8,
    t1: usize,
    t: usize,
    x: &PhasePoint,
    spec: &PhaseSpec,
    s: f64,
    cfg: &CollisionConfig,
    tables: &Tables,
) -> Complex64 {
    let lat = &cfg.lat;
    let len = lat.len();
    let theta = cfg.model.theta();
    let q = cfg.model.q();
    let origin = lat.origin();
    let (kp, sigma, site) = (x.kprime, x.sigma, x.x);
    let kpm = lat.k(kp).to_vec();
    let mut total = C0;
    for k in 0..len {
        let kk = lat.k(k);
        let spec0 = inner_phase(0, s, kk);
        let spec1 = inner_phase(1, s, kk);
        let sh0 = shifted_phase(0, s, spec, &kpm, kk);
        let sh1 = shifted_phase(1, s, spec, &kpm, kk);

        let ga = g.eval_sites(2, t, t, &spec0, k, 1);
        let gb4 = g.eval_sites(1, t, t, &spec0, k, 1);
        let gb3 = g.eval_sites(1, t, t, &spec0, origin, 1);
        let gc = g.eval_sites(2, t, t, &spec1, k, -1);
        let ca = gcal.eval_sites(n, t1, t, &sh0, kp, sigma);
        let cb = gcal.eval_sites(n, t1, t, &sh0, lat.sub(kp, k), sigma);
        let cc = gcal.eval_sites(n, t1, t, &sh1, kp, sigma);

        let dk = lat.sub(k, kp);
        let sv = &tables.script_v[k * len..(k + 1) * len];
        let mut acc = C0;
        for y in 0..len {
            let xm = lat.sub(site, y);
            let e = lat.fourier(dk, y);
            if sv[y] != 0.0 {
                let b = -2.0 * theta * ga[y] * ca[xm] - q * gb3[y] * ca[xm]
                    + q * gb4[y] * cb[xm]
                    + theta * ga[y] * cb[xm];
                acc += sv[y] * e * b;
            }
            let vc = tables.vconv[y];
            if vc != 0.0 {
                acc += theta * vc * e * gc[y] * cc[xm];
                acc += theta * vc * lat.fourier(kp, y) * gc[y] * cc[lat.add(site, y)];
            }
        }
        for &(y, vy) in &tables.support {
            for &(yp, vyp) in &tables.support {
                let e = lat.fourier(kp, lat.sub(y, yp)) * lat.fourier(k, yp);
                acc += 2.0 * vy * vyp * e * gc[lat.add(y, yp)] * cc[lat.sub(lat.add(site, y), yp)];
            }
        }
        total += acc;
    }
    total * (0.5 / len as f64)
}

fn j_with(
    g: &dyn ControlMap,
    gcal: &dyn ControlMap,
    q: &OperatorQuery,
    times: &[f64],
    cfg: &CollisionConfig,
    tables: &Tables,
) -> Result<Evaluated> {
    if q.t2 == 0 {
        return Ok(Evaluated {
            value: C0,
            residual: 0.0,
        });
    }
    let sq = cfg.s_quadrature;
    let rule = GaussLegendre::new(sq.order);
    let fine = GaussLegendre::new(2 * sq.order);
    let spec = q.x.spec();
    let weights = trapezoid(times, q.t2);
    let f = |t: usize, s: f64| integrand(g, gcal, q.n, q.t1, t, &q.x, &spec, s, cfg, tables);
    let mut value = C0;
    let mut residual: f64 = 0.0;
    let mut widest = (0.0, 0);
    for (j, &wt) in weights.iter().enumerate() {
        let a = cfg.window_width(q.tau.eval(times[q.t2], times[j]));
        if a == 0.0 {
            continue;
        }
        if a > widest.0 {
            widest = (a, j);
        }
        let width = 2.0 * a / sq.panels as f64;
        let mut node = C0;
        for p in 0..sq.panels {
            let lo = -a + p as f64 * width;
            for (s, w) in rule.mapped(lo, lo + width) {
                node += w * f(j, s);
            }
        }
        value += wt * node;
    }
    let (a, j) = widest;
    if a > 0.0 {
        let width = 2.0 * a / sq.panels as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..3.min(sq.panels) {
            let lo = -a + rng.gen_range(0..sq.panels) as f64 * width;
            let coarse: Complex64 = rule.mapped(lo, lo + width).map(|(s, w)| w * f(j, s)).sum();
            let refined: Complex64 = fine.mapped(lo, lo + width).map(|(s, w)| w * f(j, s)).sum();
            residual = residual.max((coarse - refined).norm());
        }
        if residual > sq.tol * (1.0 + value.norm()) {
            return Err(Error::Numerical(format!(
                "s-quadrature residual {residual:e} exceeds tolerance {:e} in the J operator",
                sq.tol
            )));
        }
    }
    Ok(Evaluated { value, residual })
}

/// `J[G,𝒢]^{(n)}_{t₁,t₂}(X)`: the time integral over `[0,t₂]` (trapezoid on
/// the grid), the window integral in `s` (composite Gauss–Legendre from
/// `cfg.s_quadrature`), and the `k`, `y`, `y′` sums of the eight terms.
pub fn j_eval(
    g: &dyn ControlMap,
    gcal: &dyn ControlMap,
    q: &OperatorQuery,
    times: &[f64],
    cfg: &CollisionConfig,
) -> Result<Evaluated> {
    check_times(times, &[g, gcal], cfg)?;
    check_query(q, times, g)?;
    j_with(g, gcal, q, times, cfg, &Tables::new(cfg))
}

/// The pieces of `I_τ[G,𝒢]^{(n)}_{t₁,t₂}(X)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IParts {
    /// `𝒢^{(n)}_{0,0}(X)`.
    pub initial: Complex64,
    /// `(J_{0,t₂}, J_{t₁,t₂})` at `X`.
    pub direct: [Complex64; 2],
    /// `(J^{(2)}_{0,t₁}, J^{(2)}_{t₂,t₁})` at the reflected point; only for `n = 2`.
    pub reflected: Option<[Complex64; 2]>,
    pub value: Complex64,
    pub residual: f64,
}

/// `X̃ = (R, −σk′, σ(u−k′), σ, σx)`.
pub fn reflected_point(lat: &Lattice, x: &PhasePoint) -> PhasePoint {
    let sig = x.sigma as f64;
    PhasePoint {
        r: x.r.clone(),
        kprime: lat.signed(-x.sigma, x.kprime),
        u: x.u.iter().zip(lat.k(x.kprime)).map(|(u, k)| sig * (u - k)).collect(),
        sigma: x.sigma,
        x: lat.signed(x.sigma, x.x),
    }
}

fn i_with(
    g: &dyn ControlMap,
    gcal: &dyn ControlMap,
    q: &OperatorQuery,
    times: &[f64],
    cfg: &CollisionConfig,
    tables: &Tables,
) -> Result<IParts> {
    let lat = &cfg.lat;
    let initial = gcal.eval(q.n, 0, 0, &q.x);
    let at = |t1, t2, x: &PhasePoint| {
        let qq = OperatorQuery {
            n: q.n,
            t1,
            t2,
            x: x.clone(),
            tau: q.tau,
        };
        j_with(g, gcal, &qq, times, cfg, tables)
    };
    let j0 = at(0, q.t2, &q.x)?;
    let j1 = at(q.t1, q.t2, &q.x)?;
    let mut value = initial + 0.5 * (j0.value + j1.value);
    let mut residual = j0.residual.max(j1.residual);
    let reflected = if q.n == 2 {
        let xr = reflected_point(lat, &q.x);
        let r0 = at(0, q.t1, &xr)?;
        let r1 = at(q.t2, q.t1, &xr)?;
        let phase = lat.fourier(q.x.kprime, q.x.x).conj();
        value += 0.5 * phase * (r0.value + r1.value);
        residual = residual.max(r0.residual).max(r1.residual);
        Some([r0.value, r1.value])
    } else {
        None
    };
    Ok(IParts {
        initial,
        direct: [j0.value, j1.value],
        reflected,
        value,
        residual,
    })
}

/// `I_τ[G,𝒢]^{(n)}_{t₁,t₂}(X) = 𝒢_{0,0}(X) + ½(J_{0,t₂} + J_{t₁,t₂})(X)
/// + 1(n=2)·½e^{−i2πk′·x}(J^{(2)}_{0,t₁} + J^{(2)}_{t₂,t₁})(X̃)`.
pub fn i_eval(
    g: &dyn ControlMap,
    gcal: &dyn ControlMap,
    q: &OperatorQuery,
    times: &[f64],
    cfg: &CollisionConfig,
) -> Result<IParts> {
    check_times(times, &[g, gcal], cfg)?;
    check_query(q, times, g)?;
    i_with(g, gcal, q, times, cfg, &Tables::new(cfg))
}

/// Independent evaluation of `J[F[W],F[W]]` through the bilinear collision
/// form: `∫dk₀ e^{iφ(k₀;R,u)} W_{t₁}(σk₀)^{n−1} e^{i2πk₀·x} Σ_j w_j
/// C̃λ(τ(t₂,t_j))[F[W]_{t_j,t_j}, W_{t_j}](k₀+k′)` with the same quadratures.
pub fn time_integrated_collision(traj: &Trajectory, q: &OperatorQuery, cfg: &CollisionConfig) -> Result<Complex64> {
    let lat = &cfg.lat;
    let f = FieldControlMap::new(lat, &traj.fields)?;
    check_times(&traj.times, &[&f], cfg)?;
    check_query(q, &traj.times, &f)?;
    if q.t2 == 0 {
        return Ok(C0);
    }
    let n = lat.len();
    let mut acc = vec![C0; n];
    for (j, wt) in trapezoid(&traj.times, q.t2).into_iter().enumerate() {
        let tau = q.tau.eval(traj.times[q.t2], traj.times[j]);
        let c = collision_bilinear(&f, j, &traj.fields[j], tau, cfg)?;
        for (a, v) in acc.iter_mut().zip(&c.values.values) {
            *a += wt * v;
        }
    }
    let w1 = &traj.fields[q.t1].values;
    let mut total = C0;
    for k0 in 0..n {
        let mut a = Complex64::from_polar(1.0, phi_raw(lat.k(k0), &q.x.r, &q.x.u))
            * lat.fourier(k0, q.x.x)
            * acc[lat.add(k0, q.x.kprime)];
        if q.n == 2 {
            a *= w1[lat.signed(q.x.sigma, k0)];
        }
        total += a;
    }
    Ok(total / n as f64)
}

/// Error budget for `|F[W] − I_τ[F[W],F[W]]|` on a discrete trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FevoBudget {
    /// `max(1, sup_t ‖W_t‖_∞)`.
    pub field_bound: f64,
    /// Largest equation residual accepted by the solver.
    pub solver_residual: f64,
    /// `sup_{a,Ω} |Q_a[e^{−isΩ}] − 2sin(aΩ)/Ω|` for the `s` rule.
    pub s_quadrature_error: f64,
    /// Largest fixed-`s` kernel bound along the trajectory.
    pub kernel_bound: f64,
    pub total: f64,
}

/// Largest error of the composite `s` rule on `∫_{−a}^{a} e^{−isΩ} ds` over
/// the given half widths and `Ω ∈ [0, 4d]`, sampled on 4001 points.
pub fn s_quadrature_error(cfg: &CollisionConfig, widths: &[f64]) -> f64 {
    let sq = cfg.s_quadrature;
    let rule = GaussLegendre::new(sq.order);
    let omax = 4.0 * cfg.lat.dim() as f64;
    let mut err: f64 = 0.0;
    for &a in widths.iter().filter(|&&a| a > 0.0) {
        let nodes = rule.composite_nodes(-a, a, sq.panels);
        for i in 0..=4000 {
            let om = omax * i as f64 / 4000.0;
            let approx: f64 = nodes.iter().map(|(s, w)| w * (s * om).cos()).sum();
            let exact = if om == 0.0 { 2.0 * a } else { 2.0 * (a * om).sin() / om };
            err = err.max((approx - exact).abs());
        }
    }
    err
}

/// `2M^{n−1}(ρ + T*·ε_s·K) + 10^{−12}(1 + M^n)`, maximised over `n ∈ {1,2}`.
/// A discrete trajectory satisfies `W_t − W_0 = Σ_j w_j C(W_j)` up to the
/// solver residual `ρ`; `J` replaces the closed-form window by the `s` rule,
/// which moves each collision value by at most `ε_s K`.
pub fn fevo_budget(traj: &Trajectory, cfg: &CollisionConfig, tau: TauMode) -> FevoBudget {
    let m = traj.fields.iter().fold(1.0f64, |m, f| m.max(f.sup_norm()));
    let rho = traj.max_residual();
    let last = *traj.times.last().unwrap_or(&0.0);
    let mut widths: Vec<f64> = Vec::new();
    for &t2 in &traj.times {
        for &t in traj.times.iter().filter(|&&t| t <= t2) {
            widths.push(cfg.window_width(tau.eval(t2, t)));
        }
    }
    widths.sort_by(f64::total_cmp);
    widths.dedup();
    let eps = s_quadrature_error(cfg, &widths);
    let k = traj
        .fields
        .iter()
        .map(|f| kernel_magnitude(&f.real_parts(), cfg))
        .fold(0.0, f64::max);
    let total = 2.0 * m * (rho + last * eps * k) + 1e-12 * (1.0 + m * m);
    FevoBudget {
        field_bound: m,
        solver_residual: rho,
        s_quadrature_error: eps,
        kernel_bound: k,
        total,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FevoReport {
    pub queries: usize,
    pub max_residual: f64,
    pub budget: f64,
    pub pass: bool,
}

/// Uniform queries: `R` in `[0, 2L]^d`, `u` in `[0,1)^d`, any `k′`, `x`, `σ`,
/// `n` and pair of nodes.
pub fn random_queries(lat: &Lattice, nodes: usize, tau: TauMode, count: usize, seed: u64) -> Vec<OperatorQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = lat.dim();
    let l = lat.side() as f64;
    (0..count)
        .map(|_| OperatorQuery {
            n: rng.gen_range(1..=2),
            t1: rng.gen_range(0..nodes),
            t2: rng.gen_range(0..nodes),
            x: PhasePoint {
                r: (0..d).map(|_| rng.gen_range(0.0..2.0 * l)).collect(),
                kprime: rng.gen_range(0..lat.len()),
                u: (0..d).map(|_| rng.gen_range(0.0..1.0)).collect(),
                sigma: if rng.gen_bool(0.5) { 1 } else { -1 },
                x: rng.gen_range(0..lat.len()),
            },
            tau,
        })
        .collect()
}

/// `max_q |F[W](q) − I_τ[F[W],F[W]](q)|` against [`fevo_budget`]. Queries
/// run in parallel.
pub fn fevo_residual(traj: &Trajectory, queries: &[OperatorQuery], cfg: &CollisionConfig) -> Result<FevoReport> {
    let lat = &cfg.lat;
    let f = FieldControlMap::new(lat, &traj.fields)?;
    check_times(&traj.times, &[&f], cfg)?;
    for q in queries {
        check_query(q, &traj.times, &f)?;
        if q.tau != traj.tau {
            return structural("query window differs from the trajectory's window");
        }
    }
    let tables = Tables::new(cfg);
    let diffs = map_range(cfg.exec, queries.len(), |i| {
        let q = &queries[i];
        i_with(&f, &f, q, &traj.times, cfg, &tables).map(|p| (f.eval(q.n, q.t1, q.t2, &q.x) - p.value).norm())
    });
    let mut max_residual: f64 = 0.0;
    for d in diffs {
        max_residual = max_residual.max(d?);
    }
    let budget = fevo_budget(traj, cfg, traj.tau).total;
    Ok(FevoReport {
        queries: queries.len(),
        max_residual,
        budget,
        pass: max_residual <= budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{ScaledMap, SQuadrature, ZeroMap};
    use crate::grid::SpectralField;
    use crate::interaction::{ModelKind, ModelParams, Potential, PotentialKind};
    use crate::solver::{solve, InitialData, SolveConfig};

    fn config(kind: ModelKind, l: usize, pot: &PotentialKind, tau: TauMode) -> CollisionConfig {
        let lat = Lattice::new(1, l, 1.0).unwrap();
        let pot = Potential::new(pot, &lat).unwrap();
        let model = ModelParams::new(kind, 1.0, tau, 0.3).unwrap();
        CollisionConfig::new(model, pot, lat)
            .unwrap()
            .with_s_quadrature(SQuadrature {
                panels: 2,
                order: 16,
                tol: 1e-8,
            })
            .unwrap()
    }

    fn trajectory(cfg: &CollisionConfig, t_star: f64, steps: usize) -> Trajectory {
        let w = InitialData::BandLimited {
            amplitude: 0.6,
            max_site: 1,
            seed: 2,
            offset: 1.0,
            symmetric: false,
        }
        .generate(&cfg.lat)
        .unwrap();
        solve(&w, cfg, &SolveConfig::new(t_star, steps)).unwrap()
    }

    const KINDS: [ModelKind; 3] = [ModelKind::Dnls, ModelKind::Boson, ModelKind::Fermion];

    #[test]
    fn empty_time_integral_and_zero_map() {
        let cfg = config(ModelKind::Boson, 4, &PotentialKind::Onsite, TauMode::Memory);
        let tr = trajectory(&cfg, 0.2, 4);
        let f = FieldControlMap::new(&cfg.lat, &tr.fields).unwrap();
        let z = ZeroMap { lat: cfg.lat.clone() };
        for q in random_queries(&cfg.lat, tr.nodes(), TauMode::Memory, 10, 1) {
            let mut q0 = q.clone();
            q0.t2 = 0;
            assert_eq!(j_eval(&f, &f, &q0, &tr.times, &cfg).unwrap().value, C0);
            assert_eq!(j_eval(&z, &f, &q, &tr.times, &cfg).unwrap().value, C0);
            let p = i_eval(&z, &f, &q, &tr.times, &cfg).unwrap();
            assert_eq!(p.value, f.eval(q.n, 0, 0, &q.x));
            let mut q00 = q.clone();
            q00.t1 = 0;
            q00.t2 = 0;
            assert_eq!(i_eval(&f, &f, &q00, &tr.times, &cfg).unwrap().value, f.eval(q.n, 0, 0, &q.x));
        }
    }

    #[test]
    fn bilinear_in_both_arguments() {
        let cfg = config(ModelKind::Fermion, 4, &PotentialKind::NearestNeighbour, TauMode::Constant { t0: 0.5 });
        let tr = trajectory(&cfg, 0.2, 3);
        let f = FieldControlMap::new(&cfg.lat, &tr.fields).unwrap();
        let alpha = Complex64::new(0.7, -1.3);
        let sf = ScaledMap { inner: &f, alpha };
        for q in random_queries(&cfg.lat, tr.nodes(), tr.tau, 6, 5) {
            let base = j_eval(&f, &f, &q, &tr.times, &cfg).unwrap().value;
            let left = j_eval(&sf, &f, &q, &tr.times, &cfg).unwrap().value;
            let right = j_eval(&f, &sf, &q, &tr.times, &cfg).unwrap().value;
            let tol = 1e-12 * (1.0 + base.norm());
            assert!((left - alpha * base).norm() <= tol);
            assert!((right - alpha * base).norm() <= tol);
        }
    }

    #[test]
    fn reflected_terms_only_for_the_second_component() {
        let cfg = config(ModelKind::Dnls, 4, &PotentialKind::Onsite, TauMode::Memory);
        let tr = trajectory(&cfg, 0.2, 3);
        let f = FieldControlMap::new(&cfg.lat, &tr.fields).unwrap();
        for q in random_queries(&cfg.lat, tr.nodes(), tr.tau, 10, 8) {
            let p = i_eval(&f, &f, &q, &tr.times, &cfg).unwrap();
            assert_eq!(p.reflected.is_some(), q.n == 2);
        }
    }

    #[test]
    fn reflection_identity() {
        let cfg = config(ModelKind::Dnls, 5, &PotentialKind::Onsite, TauMode::Memory);
        let tr = trajectory(&cfg, 0.2, 3);
        let f = FieldControlMap::new(&cfg.lat, &tr.fields).unwrap();
        for q in random_queries(&cfg.lat, tr.nodes(), tr.tau, 20, 3) {
            let xr = reflected_point(&cfg.lat, &q.x);
            let lhs = f.eval(2, q.t2, q.t1, &xr);
            let rhs = cfg.lat.fourier(q.x.kprime, q.x.x) * f.eval(2, q.t1, q.t2, &q.x);
            assert!((lhs - rhs).norm() < 1e-12, "{lhs} {rhs}");
        }
    }

    #[test]
    fn agrees_with_time_integrated_collision() {
        for kind in KINDS {
            for tau in [TauMode::Memory, TauMode::Constant { t0: 0.5 }] {
                let cfg = config(kind, 4, &PotentialKind::NearestNeighbour, tau);
                let tr = trajectory(&cfg, 0.2, 4);
                let f = FieldControlMap::new(&cfg.lat, &tr.fields).unwrap();
                for q in random_queries(&cfg.lat, tr.nodes(), tau, 6, 11) {
                    let j = j_eval(&f, &f, &q, &tr.times, &cfg).unwrap().value;
                    let r = time_integrated_collision(&tr, &q, &cfg).unwrap();
                    assert!((j - r).norm() <= 1e-12 * (1.0 + r.norm()), "{kind:?} {tau:?}: {j} vs {r}");
                }
            }
        }
    }

    #[test]
    fn constant_field_is_reproduced() {
        let cfg = config(ModelKind::Boson, 4, &PotentialKind::Onsite, TauMode::Memory);
        let w = SpectralField::constant(&cfg.lat, 0.8);
        let tr = solve(&w, &cfg, &SolveConfig::new(0.2, 4)).unwrap();
        let qs = random_queries(&cfg.lat, tr.nodes(), tr.tau, 100, 4);
        let rep = fevo_residual(&tr, &qs, &cfg).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn zero_potential_residual() {
        let cfg = config(ModelKind::Dnls, 4, &PotentialKind::Zero, TauMode::Constant { t0: 1.0 });
        let tr = trajectory(&cfg, 0.2, 4);
        let qs = random_queries(&cfg.lat, tr.nodes(), tr.tau, 50, 6);
        let rep = fevo_residual(&tr, &qs, &cfg).unwrap();
        assert!(rep.max_residual <= 1e-12, "{rep:?}");
    }

    #[test]
    fn evolution_identity_on_a_solved_trajectory() {
        for tau in [TauMode::Memory, TauMode::Constant { t0: 1.0 }] {
            let cfg = config(ModelKind::Boson, 4, &PotentialKind::Onsite, tau);
            let tr = trajectory(&cfg, 0.2, 8);
            let qs = random_queries(&cfg.lat, tr.nodes(), tau, 30, 9);
            let rep = fevo_residual(&tr, &qs, &cfg).unwrap();
            assert!(rep.pass, "{tau:?}: {rep:?}");
        }
    }

    #[test]
    fn s_rule_error_vanishes_for_narrow_windows() {
        let cfg = config(ModelKind::Dnls, 4, &PotentialKind::Onsite, TauMode::Memory);
        assert!(s_quadrature_error(&cfg, &[0.1, 0.2]) < 1e-14);
        assert_eq!(s_quadrature_error(&cfg, &[0.0]), 0.0);
    }

    #[test]
    fn rejects_mismatched_queries() {
        let cfg = config(ModelKind::Dnls, 4, &PotentialKind::Onsite, TauMode::Memory);
        let tr = trajectory(&cfg, 0.2, 2);
        let f = FieldControlMap::new(&cfg.lat, &tr.fields).unwrap();
        let mut q = random_queries(&cfg.lat, tr.nodes(), tr.tau, 1, 0).remove(0);
        q.t2 = 7;
        assert!(matches!(j_eval(&f, &f, &q, &tr.times, &cfg), Err(Error::Structural(_))));
        q.t2 = 1;
        q.tau = TauMode::Constant { t0: 1.0 };
        assert!(matches!(fevo_residual(&tr, &[q], &cfg), Err(Error::Structural(_))));
    }
}
