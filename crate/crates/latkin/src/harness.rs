//! Experiment configuration, run directories and the verification suites
//! behind the command-line driver.

use crate::collision::{
    collision_direct_real, kernel_bilinear, kernel_direct, kernel_magnitude, CollisionConfig, FieldControlMap,
};
use crate::controlmap::{fevo_residual, random_queries, FevoReport};
use crate::error::{Error, Result};
use crate::grid::{Lattice, SpectralField};
use crate::interaction::{random_symmetric_values, ModelKind, ModelParams, Potential, PotentialKind, TauMode};
use crate::par::Exec;
use crate::propagator::{verify_propagator_bounds, PropagatorSweep};
use crate::solver::{
    bound_monitor, compare_tau, preflight, solve, InitialData, Monitor, MonitorReport, PreflightReport, SolveConfig,
    TauComparison, Trajectory,
};
use crate::weights::{constants, verify_weight_inequalities, SampleGrid, VerifyOptions, WeightParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub c0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lambda: f64,
    pub tau: TauMode,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    #[serde(rename = "colG")]
    ColG,
    #[serde(rename = "fevo")]
    Fevo,
    #[serde(rename = "weights")]
    Weights,
    #[serde(rename = "propagator")]
    Propagator,
    #[serde(rename = "conservation")]
    Conservation,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::ColG => "colG",
            Suite::Fevo => "fevo",
            Suite::Weights => "weights",
            Suite::Propagator => "propagator",
            Suite::Conservation => "conservation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub suites: Vec<Suite>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    100
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Nodes whose fields are dumped; the default is the first and last.
    #[serde(default)]
    pub dump_nodes: Option<Vec<usize>>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            formats: default_formats(),
            dump_nodes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareTauConfig {
    pub lambdas: Vec<f64>,
    #[serde(rename = "T0")]
    pub t0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lattice: LatticeConfig,
    pub model: ModelConfig,
    pub potential: PotentialKind,
    pub initial_data: InitialData,
    pub solve: SolveConfig,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub compare_tau: Option<CompareTauConfig>,
    #[serde(default)]
    pub propagator: Option<PropagatorSweep>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.lattice.d, self.lattice.l, self.lattice.c0)
    }

    pub fn collision_config(&self, exec: Exec) -> Result<CollisionConfig> {
        let lat = self.lattice()?;
        let pot = Potential::new(&self.potential, &lat)?;
        let m = &self.model;
        let model = ModelParams::new(m.kind, m.lambda, m.tau, m.beta)?;
        Ok(CollisionConfig::new(model, pot, lat)?.with_exec(exec))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// `<out>/<first 16 hex digits of the hash>`.
    pub fn run_dir(&self, out: &Path) -> PathBuf {
        out.join(&self.hash()[..16])
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let dir = cfg.run_dir(out);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), &json!({"config": cfg.echo(), "hash": cfg.hash()}))?;
    Ok(dir)
}

fn preflight_grid(lat: &Lattice, seed: u64) -> SampleGrid {
    SampleGrid::standard(lat, 0, 64, seed)
}

// ---------------------------------------------------------------------------
// solve

pub struct SolveOutcome {
    pub dir: PathBuf,
    pub trajectory: Trajectory,
    pub preflight: PreflightReport,
    pub monitor: Option<MonitorReport>,
    pub warnings: Vec<String>,
}

/// Preflight, solve, monitors, exports. Failed theorem hypotheses become
/// warnings in the output.
pub fn run_solve(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<SolveOutcome> {
    let ccfg = cfg.collision_config(exec)?;
    let w = cfg.initial_data.generate(&ccfg.lat)?;
    cfg.solve.validate()?;
    let dir = prepare(cfg, out)?;
    let grid = preflight_grid(&ccfg.lat, cfg.seed);
    let pre = preflight(&w, &ccfg, &cfg.solve, &grid)?;
    let mut warnings = pre.warnings();
    let traj = solve(&w, &ccfg, &cfg.solve)?;

    let wants_bounds = cfg
        .solve
        .monitor
        .iter()
        .any(|m| matches!(m, Monitor::SupBound | Monitor::FNorm));
    let monitor = if wants_bounds {
        if ccfg.lat.dim() >= 3 {
            let rep = bound_monitor(&traj, &ccfg, &grid, (traj.nodes() / 8).max(1))?;
            if rep.negative_margins > 0 {
                warnings.push(format!("{} bound monitor margins are negative", rep.negative_margins));
            }
            Some(rep)
        } else {
            warnings.push("bound monitors need d ≥ 3 and were skipped".into());
            None
        }
    } else {
        None
    };

    let d0 = &traj.diagnostics[0];
    let mass_drift = traj.diagnostics.iter().fold(0.0f64, |m, d| m.max((d.mass - d0.mass).abs()));
    let energy_drift = traj
        .diagnostics
        .iter()
        .fold(0.0f64, |m, d| m.max((d.energy - d0.energy).abs()));
    let header = json!({
        "config": cfg.echo(),
        "hash": cfg.hash(),
        "seed": cfg.seed,
        "grid": {"d": ccfg.lat.dim(), "L": ccfg.lat.side(), "modes": ccfg.lat.len(),
                 "times": traj.times, "scheme": traj.scheme, "tau": traj.tau},
        "summary": {"mass_drift": mass_drift, "energy_drift": energy_drift,
                    "max_imag": traj.max_imag(), "max_residual": traj.max_residual()},
        "preflight": to_value(&pre),
        "monitor": monitor.as_ref().map(to_value),
        "warnings": warnings,
    });
    write_json(&dir.join("trajectory.json"), &header)?;
    if cfg.wants(Format::Csv) {
        traj.write_csv(&dir.join("trajectory.csv"))?;
    }
    if cfg.wants(Format::Json) {
        write_json(&dir.join("diagnostics.json"), &to_value(&traj.diagnostics))?;
    }
    let nodes = cfg
        .output
        .dump_nodes
        .clone()
        .unwrap_or_else(|| vec![0, traj.nodes() - 1]);
    let dump = traj.field_dump(&nodes)?;
    write_json(&dir.join("fields.json"), &json!({"config": cfg.echo(), "fields": dump}))?;
    Ok(SolveOutcome {
        dir,
        trajectory: traj,
        preflight: pre,
        monitor,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// verification suites

/// Direct against bilinear fixed-`s` kernels, relative to the kernel bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub cases: usize,
    pub max_relative_difference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `draws` random pairs of a positive field and a symmetric potential, each
/// compared at `s_values` random `s ∈ [−4, 4]`.
pub fn fixed_s_equivalence(
    lat: &Lattice,
    kind: ModelKind,
    draws: usize,
    s_values: usize,
    seed: u64,
    exec: Exec,
) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..draws {
        let pot = Potential::from_values(lat, random_symmetric_values(lat, &mut rng))?;
        let model = ModelParams::new(kind, 1.0, TauMode::Memory, 0.3)?;
        let cfg = CollisionConfig::new(model, pot, lat.clone())?.with_exec(exec);
        let h: Vec<f64> = (0..lat.len()).map(|_| rng.gen_range(0.2..1.5)).collect();
        let w = SpectralField::from_real(&h);
        let g = FieldControlMap::single(lat, &w)?;
        let scale = kernel_magnitude(&h, &cfg).max(f64::MIN_POSITIVE);
        for _ in 0..s_values {
            let s = rng.gen_range(-4.0..4.0);
            let a = kernel_direct(&h, s, &cfg);
            let b = kernel_bilinear(&g, 0, &w.values, s, &cfg);
            let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
            worst = worst.max(diff / scale);
            cases += 1;
        }
    }
    let tolerance = 1e-10;
    Ok(EquivalenceReport {
        cases,
        max_relative_difference: worst,
        tolerance,
        pass: worst <= tolerance,
    })
}

/// `|Σ_{k₀} C(W)(k₀)| ≤ 10^{−12} Σ|C(W)|` for random positive `W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub samples: usize,
    pub max_mass_ratio: f64,
    pub max_relative_energy_change: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn mass_conservation(cfg: &CollisionConfig, tau0: f64, samples: usize, seed: u64) -> ConservationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lat = &cfg.lat;
    let om = lat.dispersion_table();
    let (mut mass, mut energy): (f64, f64) = (0.0, 0.0);
    for _ in 0..samples {
        let h: Vec<f64> = (0..lat.len()).map(|_| rng.gen_range(0.1..2.0)).collect();
        let c = collision_direct_real(&h, tau0, cfg);
        let abs: f64 = c.iter().map(|v| v.abs()).sum();
        if abs == 0.0 {
            continue;
        }
        mass = mass.max(c.iter().sum::<f64>().abs() / abs);
        let e: f64 = c.iter().zip(om).map(|(c, w)| c * w).sum();
        let ea: f64 = c.iter().zip(om).map(|(c, w)| (c * w).abs()).sum();
        if ea > 0.0 {
            energy = energy.max(e.abs() / ea);
        }
    }
    let tolerance = 1e-12;
    ConservationReport {
        samples,
        max_mass_ratio: mass,
        max_relative_energy_change: energy,
        tolerance,
        pass: mass <= tolerance,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub pass: bool,
    pub report: Value,
}

pub struct VerifyOutcome {
    pub dir: PathBuf,
    pub results: Vec<SuiteResult>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }
}

fn run_suite(cfg: &ExperimentConfig, suite: Suite, samples: usize, exec: Exec) -> Result<(bool, Value)> {
    let ccfg = cfg.collision_config(exec)?;
    let lat = &ccfg.lat;
    let seed = cfg.seed;
    Ok(match suite {
        Suite::ColG => {
            let r = fixed_s_equivalence(lat, cfg.model.kind, samples.div_ceil(16).max(1), 16, seed, exec)?;
            (r.pass, to_value(&r))
        }
        Suite::Fevo => {
            let w = cfg.initial_data.generate(lat)?;
            let traj = solve(&w, &ccfg, &cfg.solve)?;
            let qs = random_queries(lat, traj.nodes(), traj.tau, samples, seed);
            let r: FevoReport = fevo_residual(&traj, &qs, &ccfg)?;
            (r.pass, to_value(&r))
        }
        Suite::Weights => {
            let wp = WeightParams::new(lat.side(), cfg.model.beta)?;
            let mut opts = VerifyOptions::new(samples, seed);
            opts.exec = exec;
            let reps = verify_weight_inequalities(&wp, lat.dim(), &opts)?;
            (reps.iter().all(|r| r.passed()), to_value(&reps))
        }
        Suite::Propagator => {
            let sweep = cfg.propagator.clone().unwrap_or_default();
            let r = verify_propagator_bounds(&sweep, exec)?;
            (r.passed(), to_value(&r))
        }
        Suite::Conservation => {
            let tau0 = match cfg.model.tau {
                TauMode::Constant { t0 } => t0,
                TauMode::Memory => cfg.solve.t_star,
            };
            let r = mass_conservation(&ccfg, tau0, samples, seed);
            (r.pass, to_value(&r))
        }
    })
}

/// Runs the configured suites and writes one JSON report per suite plus a
/// summary.
pub fn run_verify(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<VerifyOutcome> {
    cfg.collision_config(exec)?;
    let vc = cfg.verify.clone().unwrap_or(VerifyConfig {
        suites: Vec::new(),
        samples: default_samples(),
    });
    let dir = prepare(cfg, out)?;
    let mut results = Vec::new();
    for &suite in &vc.suites {
        let (pass, report) = run_suite(cfg, suite, vc.samples, exec)?;
        write_json(
            &dir.join(format!("{}.json", suite.name())),
            &json!({"config": cfg.echo(), "seed": cfg.seed, "suite": suite.name(), "pass": pass, "report": report}),
        )?;
        results.push(SuiteResult {
            suite: suite.name().into(),
            pass,
            report,
        });
    }
    let summary: Vec<Value> = results.iter().map(|r| json!({"suite": r.suite, "pass": r.pass})).collect();
    write_json(
        &dir.join("verify.json"),
        &json!({"config": cfg.echo(), "seed": cfg.seed, "suites": summary}),
    )?;
    Ok(VerifyOutcome { dir, results })
}

// ---------------------------------------------------------------------------
// compare-tau, propagator, constants

pub fn run_compare_tau(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<(PathBuf, TauComparison)> {
    let Some(ct) = &cfg.compare_tau else {
        return Err(Error::Config("compare-tau needs a `compare_tau` section with `lambdas` and `T0`".into()));
    };
    let ccfg = cfg.collision_config(exec)?;
    let w = cfg.initial_data.generate(&ccfg.lat)?;
    let dir = prepare(cfg, out)?;
    let rep = compare_tau(&w, &ccfg, &ct.lambdas, ct.t0, &cfg.solve)?;
    let mut text = String::from("lambda,D_sup,D_sobolev,E_beta,L_beta\n");
    let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
    for r in &rep.rows {
        text.push_str(&format!(
            "{:e},{},{},{},{:e}\n",
            r.lambda,
            opt(r.d_sup),
            opt(r.d_sobolev),
            opt(r.e_beta),
            r.l_beta
        ));
    }
    let footer = json!({
        "fitted_slope": rep.fitted_slope,
        "p_d": rep.p_d,
        "strictly_decreasing": rep.strictly_decreasing,
        "caveat": rep.caveat,
        "hash": cfg.hash(),
    });
    text.push_str(&format!("# {footer}\n"));
    if cfg.wants(Format::Csv) {
        fs::write(dir.join("compare_tau.csv"), text)?;
    }
    write_json(&dir.join("compare_tau.json"), &json!({"config": cfg.echo(), "report": to_value(&rep)}))?;
    Ok((dir, rep))
}

pub fn run_propagator(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<(PathBuf, bool)> {
    let sweep = cfg.propagator.clone().unwrap_or_default();
    let dir = prepare(cfg, out)?;
    let rep = verify_propagator_bounds(&sweep, exec)?;
    if cfg.wants(Format::Csv) {
        rep.write_csv(&dir.join("propagator.csv"))?;
    }
    let pass = rep.passed();
    write_json(
        &dir.join("propagator.json"),
        &json!({"config": cfg.echo(), "pass": pass, "report": to_value(&rep)}),
    )?;
    Ok((dir, pass))
}

/// The constants table for the configured `(d, β)`, written to
/// `constants.json` and returned.
pub fn run_constants(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, Value)> {
    let c = constants(cfg.lattice.d, cfg.model.beta)?;
    let dir = prepare(cfg, out)?;
    let v = json!({"config": cfg.echo(), "constants": to_value(&c)});
    write_json(&dir.join("constants.json"), &v)?;
    Ok((dir, v))
}

/// Writes `line` followed by a newline to `w`, ignoring broken pipes.
pub fn emit(w: &mut impl Write, line: &str) {
    let _ = writeln!(w, "{line}");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "lattice": {"d": 1, "L": 4, "c0": 1.0},
                "model": {"kind": "dnls", "lambda": 1.0, "tau": {"mode": "memory"}, "beta": 0.3},
                "potential": {"kind": "onsite"},
                "initial_data": {"kind": "constant", "value": 1.0},
                "solve": {"Tstar": 0.5, "n_steps": 4}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = ExperimentConfig::from_json(r#"{"lattice": {"d": 1, "L": 4, "c0": 1.0, "extra": 2}}"#).unwrap_err();
        match e {
            Error::Config(m) => assert!(m.contains("line"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_is_stable_and_seed_sensitive() {
        let a = minimal();
        let mut b = minimal();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.run_dir(Path::new("x")).file_name().unwrap().len(), 16);
    }

    #[test]
    fn minimal_solve_is_constant() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_solve(&minimal(), dir.path(), Exec::Parallel).unwrap();
        let w0 = &out.trajectory.fields[0];
        assert!(out.trajectory.fields.iter().all(|f| f.sup_distance(w0) <= 1e-12));
        for f in ["config.json", "trajectory.json", "trajectory.csv", "fields.json"] {
            assert!(out.dir.join(f).exists(), "{f}");
        }
        // d = 1 is outside the theorem range
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn outputs_do_not_depend_on_execution_mode() {
        let mut cfg = minimal();
        cfg.initial_data = InitialData::BandLimited {
            amplitude: 0.5,
            max_site: 1,
            seed: 3,
            offset: 1.0,
            symmetric: false,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_solve(&cfg, a.path(), Exec::Parallel).unwrap();
        let rb = run_solve(&cfg, b.path(), Exec::Sequential).unwrap();
        for f in ["trajectory.csv", "trajectory.json", "fields.json"] {
            assert_eq!(fs::read(ra.dir.join(f)).unwrap(), fs::read(rb.dir.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn empty_and_conservation_suites() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = minimal();
        cfg.verify = Some(VerifyConfig {
            suites: vec![],
            samples: 10,
        });
        let out = run_verify(&cfg, dir.path(), Exec::Parallel).unwrap();
        assert!(out.results.is_empty() && out.passed());
        cfg.verify = Some(VerifyConfig {
            suites: vec![Suite::Conservation, Suite::ColG],
            samples: 32,
        });
        cfg.model.kind = ModelKind::Boson;
        let out = run_verify(&cfg, dir.path(), Exec::Parallel).unwrap();
        assert!(out.passed(), "{:?}", out.results);
        assert!(out.dir.join("conservation.json").exists());
    }

    #[test]
    fn compare_tau_needs_its_section() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_compare_tau(&minimal(), dir.path(), Exec::Parallel),
            Err(Error::Config(_))
        ));
    }
}
