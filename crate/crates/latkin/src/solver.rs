//! Time integration of `W_T = W₀ + ∫₀^T dt C^λ(W_t, τ(T,t))`, the hypothesis
//! preflight, a posteriori bound monitors, and the memory-versus-constant
//! window comparison.

use crate::collision::{collision_direct_complex, functionals, CollisionConfig, FieldControlMap};
use crate::error::{structural, Error, Result};
use crate::grid::{regabs, Lattice, SpectralField};
use crate::interaction::{sobolev_norm, sup_sobolev_norm, ModelParams, TauMode};
use crate::weights::{constants, error_term, max_norm_estimate, L_beta, SampleGrid, WeightParams};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    Mass,
    Energy,
    Realness,
    SupBound,
    FNorm,
}

fn default_picard_tol() -> f64 {
    1e-13
}

fn default_picard_max_iter() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(rename = "Tstar")]
    pub t_star: f64,
    pub n_steps: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
    #[serde(default)]
    pub monitor: Vec<Monitor>,
}

impl SolveConfig {
    pub fn new(t_star: f64, n_steps: usize) -> Self {
        SolveConfig {
            t_star,
            n_steps,
            picard_tol: default_picard_tol(),
            picard_max_iter: default_picard_max_iter(),
            monitor: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_star > 0.0 && self.t_star.is_finite()) {
            return Err(Error::Validation(format!("Tstar must be positive, got {}", self.t_star)));
        }
        if self.n_steps == 0 {
            return Err(Error::Validation("n_steps must be at least 1".into()));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iter == 0 {
            return Err(Error::Validation(
                "picard_tol must be positive and picard_max_iter at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.t_star / self.n_steps as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Volterra,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    pub sup_norm: f64,
    pub im_max: f64,
    pub picard_iters: usize,
    /// Sup-norm residual of the discrete equation at the accepted field.
    pub residual: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Real parts of the computed fields.
    pub fields: Vec<SpectralField>,
    pub diagnostics: Vec<NodeDiagnostics>,
    pub tau: TauMode,
    pub scheme: Scheme,
}

impl Trajectory {
    pub fn nodes(&self) -> usize {
        self.times.len()
    }

    pub fn step(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn last(&self) -> &SpectralField {
        self.fields.last().expect("trajectory has at least one node")
    }

    pub fn max_imag(&self) -> f64 {
        self.diagnostics.iter().fold(0.0, |m, d| m.max(d.im_max))
    }

    pub fn max_residual(&self) -> f64 {
        self.diagnostics.iter().fold(0.0, |m, d| m.max(d.residual))
    }

    /// `max_n ‖W_{T_n} − W̃_{T_n}‖_∞` over common nodes; `other` may be on a
    /// grid refined by an integer factor.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        let (a, b) = if self.nodes() <= other.nodes() {
            (self, other)
        } else {
            (other, self)
        };
        let (na, nb) = (a.nodes() - 1, b.nodes() - 1);
        if na == 0 || nb % na != 0 {
            return structural("trajectories are not on nested time grids");
        }
        let r = nb / na;
        Ok((0..=na).fold(0.0, |m, i| m.max(a.fields[i].sup_distance(&b.fields[i * r]))))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["step", "time", "mass", "energy", "sup_norm", "im_max", "picard_iters", "residual"])
            .map_err(csv_err)?;
        for d in &self.diagnostics {
            w.write_record(&[
                d.step.to_string(),
                format!("{:e}", d.time),
                format!("{:e}", d.mass),
                format!("{:e}", d.energy),
                format!("{:e}", d.sup_norm),
                format!("{:e}", d.im_max),
                d.picard_iters.to_string(),
                format!("{:e}", d.residual),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Field values at the requested nodes.
    pub fn field_dump(&self, nodes: &[usize]) -> Result<Value> {
        let mut out = Vec::new();
        for &n in nodes {
            let Some(f) = self.fields.get(n) else {
                return structural(format!("node {n} outside the trajectory"));
            };
            out.push(json!({"node": n, "time": self.times[n], "values": f.real_parts()}));
        }
        Ok(Value::Array(out))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn node_diag(
    step: usize,
    time: f64,
    w: &[Complex64],
    lat: &Lattice,
    iters: usize,
    residual: f64,
) -> Result<NodeDiagnostics> {
    if w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical(format!("non-finite field at step {step} (t = {time})")));
    }
    let f = SpectralField::new(w.to_vec());
    let (mass, energy) = functionals(&f, lat);
    let re = f.real_parts();
    Ok(NodeDiagnostics {
        step,
        time,
        mass,
        energy,
        sup_norm: f.sup_norm(),
        im_max: f.max_imag(),
        picard_iters: iters,
        residual,
        min: re.iter().cloned().fold(f64::INFINITY, f64::min),
        max: re.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn sup_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

fn time_grid(scfg: &SolveConfig) -> Vec<f64> {
    let n = scfg.n_steps;
    let h = scfg.step();
    let mut t: Vec<f64> = (0..=n).map(|j| j as f64 * h).collect();
    t[n] = scfg.t_star;
    t
}

fn check_input(w_in: &SpectralField, cfg: &CollisionConfig, scfg: &SolveConfig) -> Result<()> {
    scfg.validate()?;
    if w_in.len() != cfg.lat.len() {
        return structural(format!(
            "initial data has {} entries but the lattice has {} modes",
            w_in.len(),
            cfg.lat.len()
        ));
    }
    if !w_in.is_real(1e-12 * (1.0 + w_in.sup_norm())) {
        return Err(Error::Validation("initial data must be real".into()));
    }
    Ok(())
}

/// Trapezoid/Picard discretization on the uniform grid `T_n = nΔ`:
/// `W_n = W₀ + Δ[½C(W₀,τ(T_n,0)) + Σ_{0<j<n} C(W_j,τ(T_n,T_j)) + ½C(W_n,τ(T_n,T_n))]`.
/// The endpoint term is solved by Picard iteration; it vanishes for the
/// memory window, where `τ(T,T) = 0`. Kernel values are cached per node and
/// window, so a constant window evaluates each node once.
pub fn solve(w_in: &SpectralField, cfg: &CollisionConfig, scfg: &SolveConfig) -> Result<Trajectory> {
    check_input(w_in, cfg, scfg)?;
    let tau = cfg.model.tau;
    let times = time_grid(scfg);
    let h = scfg.step();
    let lat = &cfg.lat;
    let n_modes = lat.len();

    let w0: Vec<Complex64> = w_in.real_parts().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut fields: Vec<Vec<Complex64>> = vec![w0.clone()];
    let mut diags = vec![node_diag(0, 0.0, &w0, lat, 0, 0.0)?];
    let mut cache: Vec<Option<(f64, Vec<Complex64>)>> = vec![None];

    let kernel = |j: usize, t: f64, fields: &[Vec<Complex64>], cache: &mut Vec<Option<(f64, Vec<Complex64>)>>| -> Result<Vec<Complex64>> {
        if let Some((tc, v)) = &cache[j] {
            if *tc == t {
                return Ok(v.clone());
            }
        }
        let v = collision_direct_complex(&fields[j], t, cfg)?;
        cache[j] = Some((t, v.clone()));
        Ok(v)
    };

    for m in 1..times.len() {
        let tm = times[m];
        let mut known = w0.clone();
        for j in 0..m {
            let wt = if j == 0 { 0.5 * h } else { h };
            let c = kernel(j, tau.eval(tm, times[j]), &fields, &mut cache)?;
            for (k, v) in known.iter_mut().zip(&c) {
                *k += wt * v;
            }
        }
        let te = tau.eval(tm, tm);
        let (w, iters, residual) = if cfg.window_width(te) == 0.0 || cfg.pot.is_zero() {
            (known, 0, 0.0)
        } else {
            picard(&known, &fields[m - 1], te, h, cfg, scfg, m)?
        };
        diags.push(node_diag(m, tm, &w, lat, iters, residual)?);
        fields.push(w);
        cache.push(None);
    }
    debug_assert!(fields.iter().all(|f| f.len() == n_modes));
    Ok(finish(times, fields, diags, tau, Scheme::Volterra))
}

/// Solves `x = known + (Δ/2)C(x, τ_e)`. The accepted iterate is the one whose
/// residual `‖known + (Δ/2)C(x) − x‖_∞` was last measured.
fn picard(
    known: &[Complex64],
    guess: &[Complex64],
    te: f64,
    h: f64,
    cfg: &CollisionConfig,
    scfg: &SolveConfig,
    step: usize,
) -> Result<(Vec<Complex64>, usize, f64)> {
    let mut x = guess.to_vec();
    let mut damping = 1.0;
    let mut halved = false;
    let mut prev = f64::INFINITY;
    for it in 1..=scfg.picard_max_iter {
        let c = collision_direct_complex(&x, te, cfg)?;
        let next: Vec<Complex64> = known.iter().zip(&c).map(|(k, c)| k + 0.5 * h * c).collect();
        let res = sup_diff(&next, &x);
        if !res.is_finite() {
            return Err(Error::Numerical(format!("Picard iteration diverged at step {step}")));
        }
        if res <= scfg.picard_tol {
            return Ok((x, it, res));
        }
        if res > prev && !halved {
            damping = 0.5;
            halved = true;
        }
        for (xi, ni) in x.iter_mut().zip(&next) {
            *xi += damping * (ni - *xi);
        }
        prev = res;
    }
    Err(Error::Numerical(format!(
        "Picard iteration did not converge at step {step} within {} iterations: residual {prev:e}",
        scfg.picard_max_iter
    )))
}

fn finish(
    times: Vec<f64>,
    fields: Vec<Vec<Complex64>>,
    diagnostics: Vec<NodeDiagnostics>,
    tau: TauMode,
    scheme: Scheme,
) -> Trajectory {
    Trajectory {
        times,
        fields: fields
            .iter()
            .map(|f| SpectralField::new(f.iter().map(|z| Complex64::new(z.re, 0.0)).collect()))
            .collect(),
        diagnostics,
        tau,
        scheme,
    }
}

/// Classical four-stage Runge–Kutta on `dW/dT = C^λ(W, T₀)`; constant window only.
pub fn solve_rk4(w_in: &SpectralField, cfg: &CollisionConfig, scfg: &SolveConfig) -> Result<Trajectory> {
    check_input(w_in, cfg, scfg)?;
    let TauMode::Constant { t0 } = cfg.model.tau else {
        return Err(Error::Validation("the Runge–Kutta path needs a constant window".into()));
    };
    let times = time_grid(scfg);
    let h = scfg.step();
    let lat = &cfg.lat;
    let mut w: Vec<Complex64> = w_in.real_parts().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut fields = vec![w.clone()];
    let mut diags = vec![node_diag(0, 0.0, &w, lat, 0, 0.0)?];
    let axpy = |a: &[Complex64], s: f64, b: &[Complex64]| -> Vec<Complex64> {
        a.iter().zip(b).map(|(x, y)| x + s * y).collect()
    };
    for m in 1..times.len() {
        let k1 = collision_direct_complex(&w, t0, cfg)?;
        let k2 = collision_direct_complex(&axpy(&w, 0.5 * h, &k1), t0, cfg)?;
        let k3 = collision_direct_complex(&axpy(&w, 0.5 * h, &k2), t0, cfg)?;
        let k4 = collision_direct_complex(&axpy(&w, h, &k3), t0, cfg)?;
        for i in 0..w.len() {
            w[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        diags.push(node_diag(m, times[m], &w, lat, 0, 0.0)?);
        fields.push(w.clone());
    }
    Ok(finish(times, fields, diags, cfg.model.tau, Scheme::Rk4))
}

/// Sup distances between solutions on `n, 2n, 4n, …` steps and the ratios of
/// successive distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepHalving {
    pub steps: Vec<usize>,
    pub differences: Vec<f64>,
    pub contraction: Vec<f64>,
}

pub fn step_halving(
    w_in: &SpectralField,
    cfg: &CollisionConfig,
    scfg: &SolveConfig,
    levels: usize,
    scheme: Scheme,
) -> Result<StepHalving> {
    if levels < 3 {
        return structural("step halving needs at least three levels");
    }
    let mut trajs = Vec::new();
    let mut steps = Vec::new();
    for l in 0..levels {
        let mut s = scfg.clone();
        s.n_steps = scfg.n_steps << l;
        steps.push(s.n_steps);
        trajs.push(match scheme {
            Scheme::Volterra => solve(w_in, cfg, &s)?,
            Scheme::Rk4 => solve_rk4(w_in, cfg, &s)?,
        });
    }
    let differences: Vec<f64> = trajs
        .windows(2)
        .map(|w| w[0].sup_distance(&w[1]))
        .collect::<Result<_>>()?;
    let contraction = differences.windows(2).map(|d| d[0] / d[1]).collect();
    Ok(StepHalving {
        steps,
        differences,
        contraction,
    })
}

// ---------------------------------------------------------------------------
// Initial data

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldFile {
    d: usize,
    #[serde(rename = "L")]
    l: usize,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant {
        value: f64,
    },
    /// `offset + A Σ_{m∈ℤ^d} exp(−|k − c + m|²/2w²)`.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default)]
        offset: f64,
    },
    /// `scale / ⟨ω(k) − μ⟩`.
    Thermal {
        mu: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `offset + A Σ_{|x|_∞≤max_site} (a_x cos 2πk·x + b_x sin 2πk·x)` with
    /// uniform coefficients in `[−1,1]`, normalised by the number of terms.
    /// `symmetric` drops the sine terms.
    BandLimited {
        amplitude: f64,
        max_site: i64,
        seed: u64,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        symmetric: bool,
    },
    /// JSON `{"d", "L", "values"}`.
    File {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

impl InitialData {
    pub fn generate(&self, lat: &Lattice) -> Result<SpectralField> {
        let d = lat.dim();
        let values: Vec<f64> = match self {
            InitialData::Constant { value } => vec![*value; lat.len()],
            InitialData::Gaussian {
                amplitude,
                width,
                center,
                offset,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Validation(format!("Gaussian width must be positive, got {width}")));
                }
                let c = center.clone().unwrap_or_else(|| vec![0.0; d]);
                if c.len() != d {
                    return Err(Error::Validation("Gaussian center has the wrong dimension".into()));
                }
                (0..lat.len())
                    .map(|m| {
                        let k = lat.k(m);
                        let per_axis: f64 = (0..d)
                            .map(|i| {
                                (-3..=3)
                                    .map(|s| {
                                        let z = k[i] - c[i] + s as f64;
                                        (-z * z / (2.0 * width * width)).exp()
                                    })
                                    .sum::<f64>()
                            })
                            .product();
                        offset + amplitude * per_axis
                    })
                    .collect()
            }
            InitialData::Thermal { mu, scale } => (0..lat.len())
                .map(|m| scale / regabs(lat.dispersion(m) - mu))
                .collect(),
            InitialData::BandLimited {
                amplitude,
                max_site,
                seed,
                offset,
                symmetric,
            } => {
                if *max_site < 0 {
                    return Err(Error::Validation("max_site must be non-negative".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let sites: Vec<usize> = (0..lat.len())
                    .filter(|&y| lat.coords(y).iter().all(|c| c.abs() <= *max_site))
                    .collect();
                let coef: Vec<(f64, f64)> = sites
                    .iter()
                    .map(|_| {
                        let a = rng.gen_range(-1.0..1.0);
                        let b = rng.gen_range(-1.0..1.0);
                        (a, if *symmetric { 0.0 } else { b })
                    })
                    .collect();
                let norm = sites.len() as f64;
                (0..lat.len())
                    .map(|m| {
                        let k = lat.k(m);
                        let s: f64 = sites
                            .iter()
                            .zip(&coef)
                            .map(|(&y, &(a, b))| {
                                let ph: f64 = TAU
                                    * lat.coords(y).iter().zip(k).map(|(&c, &k)| c as f64 * k).sum::<f64>();
                                a * ph.cos() + b * ph.sin()
                            })
                            .sum();
                        offset + amplitude * s / norm
                    })
                    .collect()
            }
            InitialData::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read initial data {}: {e}", path.display())))?;
                let f: FieldFile = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("initial data {}: {e}", path.display())))?;
                if f.d != d || f.l != lat.side() || f.values.len() != lat.len() {
                    return Err(Error::Config(format!(
                        "initial data file holds d={}, L={}, {} values; the lattice needs d={}, L={}, {} values",
                        f.d,
                        f.l,
                        f.values.len(),
                        d,
                        lat.side(),
                        lat.len()
                    )));
                }
                f.values
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("initial data is not finite".into()));
        }
        Ok(SpectralField::from_real(&values))
    }
}

// ---------------------------------------------------------------------------
// Preflight

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub pass: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreflightReport {
    pub conditions: Vec<Condition>,
    pub f_in_max_norm: f64,
    pub m_v: f64,
}

impl PreflightReport {
    pub fn warnings(&self) -> Vec<String> {
        self.conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| {
                format!(
                    "{} not satisfied: {:?} vs {:?}{}",
                    c.name,
                    c.lhs,
                    c.rhs,
                    c.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
                )
            })
            .collect()
    }
}

/// The window used in the lattice-size condition: `T*` for the memory window,
/// `T₀` for a constant one.
pub fn effective_window(tau: TauMode, t_star: f64) -> f64 {
    match tau {
        TauMode::Memory => t_star,
        TauMode::Constant { t0 } => t0,
    }
}

/// Evaluates the hypotheses of the well-posedness and error theorems. Norms
/// are sampled estimates on `grid`. Failures are reported, never raised.
pub fn preflight(
    w_in: &SpectralField,
    cfg: &CollisionConfig,
    scfg: &SolveConfig,
    grid: &SampleGrid,
) -> Result<PreflightReport> {
    check_input(w_in, cfg, scfg)?;
    let lat = &cfg.lat;
    let d = lat.dim();
    let m = cfg.model;
    let tbar = effective_window(m.tau, scfg.t_star);
    let lb = L_beta(m.lambda, tbar, m.beta);
    let l = lat.side() as f64;
    let mut conditions = vec![
        Condition {
            name: "lattice_size".into(),
            lhs: Some(l),
            rhs: Some(lb),
            pass: l >= lb,
            note: None,
        },
        Condition {
            name: "beta_range".into(),
            lhs: Some(m.beta),
            rhs: Some(1.0 - 2.0 / d as f64),
            pass: d >= 3 && m.beta_in_range(d),
            note: (d < 3).then(|| "the theorems need d ≥ 3".to_string()),
        },
    ];
    let wp = WeightParams::new(lat.side(), m.beta)?;
    let fmap = FieldControlMap::single(lat, w_in)?;
    let f_in = max_norm_estimate(&fmap, &wp, 0, 0, grid, cfg.exec)?.value;
    let m_v = cfg.pot.m_v(lat);
    match constants(d, m.beta) {
        Ok(c) => {
            let rhs2 = 1.0 / (c.c_beta1 * m_v * (1.0 + f_in).powi(2));
            let rhs3 = 1.0 / (2.0 * c.c_beta2 * m_v * f_in);
            conditions.push(Condition {
                name: "existence_time".into(),
                lhs: Some(scfg.t_star),
                rhs: Some(rhs2),
                pass: scfg.t_star < rhs2,
                note: Some("uses a sampled lower estimate of ‖F[W_in]‖_max".into()),
            });
            conditions.push(Condition {
                name: "error_estimate_time".into(),
                lhs: Some(scfg.t_star),
                rhs: Some(rhs3),
                pass: scfg.t_star <= rhs3,
                note: Some("uses a sampled lower estimate of ‖F[W_in]‖_max".into()),
            });
        }
        Err(e) => {
            for name in ["existence_time", "error_estimate_time"] {
                conditions.push(Condition {
                    name: name.into(),
                    lhs: Some(scfg.t_star),
                    rhs: None,
                    pass: false,
                    note: Some(e.to_string()),
                });
            }
        }
    }
    Ok(PreflightReport {
        conditions,
        f_in_max_norm: f_in,
        m_v,
    })
}

// ---------------------------------------------------------------------------
// Bound monitors

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub step: usize,
    pub time: f64,
    pub sup_w: f64,
    pub sup_bound: f64,
    pub sup_margin: f64,
    /// Sampled `sup_{t₁,t₂≤T} ‖F[W]_{t₁,t₂}‖_max` over the strided node set.
    pub f_sup: f64,
    pub f_growth_bound: f64,
    pub f_growth_margin: f64,
    pub f_uniform_bound: f64,
    pub f_uniform_margin: f64,
    /// `‖W_T‖_{∞,1/3}`, bounded by `f_sup`.
    pub sobolev_w: f64,
    pub sobolev_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub rows: Vec<MonitorRow>,
    pub negative_margins: usize,
    pub caveat: String,
}

fn margin(lhs: f64, rhs: f64) -> f64 {
    if rhs.is_infinite() {
        1.0
    } else if rhs == 0.0 {
        if lhs == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        (rhs - lhs) / rhs
    }
}

/// Checks the sup-norm growth bound, the control-map norm propagation bound
/// and its uniform `2/√3` consequence at every node. Control-map norms are
/// sampled on `grid` at node pairs with the given stride.
pub fn bound_monitor(
    traj: &Trajectory,
    cfg: &CollisionConfig,
    grid: &SampleGrid,
    stride: usize,
) -> Result<MonitorReport> {
    let lat = &cfg.lat;
    let d = lat.dim();
    let m = cfg.model;
    let c = constants(d, m.beta)?;
    let wp = WeightParams::new(lat.side(), m.beta)?;
    let fmap = FieldControlMap::new(lat, &traj.fields)?;
    let nodes = traj.nodes();
    let diag: Vec<f64> = (0..nodes)
        .map(|j| max_norm_estimate(&fmap, &wp, j, j, grid, cfg.exec).map(|e| e.value))
        .collect::<Result<_>>()?;
    let mut strided: Vec<usize> = (0..nodes).step_by(stride.max(1)).collect();
    if strided.last() != Some(&(nodes - 1)) {
        strided.push(nodes - 1);
    }
    let mut pair = vec![vec![f64::NAN; nodes]; nodes];
    for &a in &strided {
        for &b in &strided {
            pair[a][b] = if a == b {
                diag[a]
            } else {
                max_norm_estimate(&fmap, &wp, a, b, grid, cfg.exec)?.value
            };
        }
    }
    let vh = cfg.pot.vhat_field();
    let v16 = sobolev_norm(&vh, 1.0 / 6.0, lat).powi(2);
    let m_v = cfg.pot.m_v(lat);
    let f_in = diag[0];
    let w_in = traj.fields[0].sup_norm();
    let h = traj.step();

    let mut rows = Vec::with_capacity(nodes);
    let mut integral = 0.0;
    let mut f_sup: f64 = 0.0;
    let mut negative = 0;
    for n in 0..nodes {
        if n > 0 {
            integral += 0.5 * h * (diag[n - 1] + diag[n]);
        }
        for &a in strided.iter().filter(|&&a| a <= n) {
            for &b in strided.iter().filter(|&&b| b <= n) {
                f_sup = f_sup.max(pair[a][b]);
            }
        }
        f_sup = f_sup.max(diag[n]);
        let t = traj.times[n];
        let sup_w = traj.fields[n].sup_norm();
        let sup_bound = w_in * (c.c_3 * v16 * integral).exp();
        let den = 1.0 - c.c_beta2 * m_v * f_in * t;
        let growth = if den > 0.0 { f_in / den.sqrt() } else { f64::INFINITY };
        let uniform = 2.0 / 3f64.sqrt() * f_in;
        let sob = sup_sobolev_norm(&traj.fields[n], 1.0 / 3.0, lat);
        let row = MonitorRow {
            step: n,
            time: t,
            sup_w,
            sup_bound,
            sup_margin: margin(sup_w, sup_bound),
            f_sup,
            f_growth_bound: growth,
            f_growth_margin: margin(f_sup, growth),
            f_uniform_bound: uniform,
            f_uniform_margin: margin(f_sup, uniform),
            sobolev_w: sob,
            sobolev_margin: margin(sob, f_sup),
        };
        negative += [row.sup_margin, row.f_growth_margin, row.f_uniform_margin, row.sobolev_margin]
            .iter()
            .filter(|&&x| x < -1e-12)
            .count();
        rows.push(row);
    }
    Ok(MonitorReport {
        rows,
        negative_margins: negative,
        caveat: "control-map norms are sampled lower estimates; the uniform bound assumes the \
                 existence-time hypothesis"
            .into(),
    })
}

// ---------------------------------------------------------------------------
// Window comparison

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub lambda: f64,
    pub d_sup: Option<f64>,
    pub d_sobolev: Option<f64>,
    pub e_beta: Option<f64>,
    pub l_beta: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauComparison {
    pub tau: TauMode,
    pub tau_tilde: TauMode,
    pub t_star: f64,
    pub rows: Vec<TauRow>,
    /// Least-squares slope of `log D_sup` against `log λ`.
    pub fitted_slope: Option<f64>,
    pub p_d: Option<f64>,
    /// `D_sup` strictly decreases as `λ` decreases.
    pub strictly_decreasing: bool,
    pub caveat: Option<String>,
}

/// Solves with windows `tau` and `tau_tilde` for each coupling and records the
/// sup and sup-Sobolev distances next to `E_β`.
pub fn compare_tau_modes(
    w_in: &SpectralField,
    cfg: &CollisionConfig,
    lambdas: &[f64],
    tau: TauMode,
    tau_tilde: TauMode,
    scfg: &SolveConfig,
) -> Result<TauComparison> {
    if lambdas.is_empty() {
        return Err(Error::Validation("compare_tau needs at least one coupling".into()));
    }
    let lat = &cfg.lat;
    let d = lat.dim();
    let beta = cfg.model.beta;
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let window = effective_window(tau, scfg.t_star).max(effective_window(tau_tilde, scfg.t_star));
        let l_beta = L_beta(lambda, window, beta);
        let run = || -> Result<(f64, f64)> {
            let model = |t| ModelParams::new(cfg.model.kind, lambda, t, beta);
            let a = solve(w_in, &cfg.clone().with_model(model(tau)?), scfg)?;
            let b = solve(w_in, &cfg.clone().with_model(model(tau_tilde)?), scfg)?;
            let mut ds: f64 = 0.0;
            let mut dsob: f64 = 0.0;
            for (x, y) in a.fields.iter().zip(&b.fields) {
                ds = ds.max(x.sup_distance(y));
                let diff = SpectralField::new(x.values.iter().zip(&y.values).map(|(p, q)| p - q).collect());
                dsob = dsob.max(sup_sobolev_norm(&diff, 1.0 / 3.0, lat));
            }
            Ok((ds, dsob))
        };
        let e_beta = error_term(lambda, tau, tau_tilde, scfg.t_star, d, beta).ok();
        match run() {
            Ok((ds, dsob)) => rows.push(TauRow {
                lambda,
                d_sup: Some(ds),
                d_sobolev: Some(dsob),
                e_beta,
                l_beta,
                error: None,
            }),
            Err(e) => rows.push(TauRow {
                lambda,
                d_sup: None,
                d_sobolev: None,
                e_beta,
                l_beta,
                error: Some(e.to_string()),
            }),
        }
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.d_sup.filter(|&x| x > 0.0).map(|x| (r.lambda.ln(), x.ln())))
        .collect();
    let fitted_slope = (pts.len() >= 2).then(|| {
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    });
    let mut by_lambda: Vec<&TauRow> = rows.iter().collect();
    by_lambda.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
    let strictly_decreasing = by_lambda.iter().all(|r| r.d_sup.is_some())
        && by_lambda
            .windows(2)
            .all(|w| w[1].d_sup.unwrap() < w[0].d_sup.unwrap());
    let uncertified = rows.iter().any(|r| (lat.side() as f64) < r.l_beta) || !cfg.model.beta_in_range(d);
    Ok(TauComparison {
        tau,
        tau_tilde,
        t_star: scfg.t_star,
        rows,
        fitted_slope,
        p_d: constants(d, beta).ok().map(|c| c.p_d),
        strictly_decreasing,
        caveat: uncertified.then(|| "L < L_β, theorem regime not certified".to_string()),
    })
}

/// Memory window against the constant window `T₀`.
pub fn compare_tau(
    w_in: &SpectralField,
    cfg: &CollisionConfig,
    lambdas: &[f64],
    t0: f64,
    scfg: &SolveConfig,
) -> Result<TauComparison> {
    compare_tau_modes(w_in, cfg, lambdas, TauMode::Memory, TauMode::Constant { t0 }, scfg)
}
