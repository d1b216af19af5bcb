//! Pair potential, its transform, and the model parameters.

use crate::error::{structural, Error, Result};
use crate::grid::{dft, idft, regabs, Lattice, SiteField, SpectralField};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Memory kernel `τ(T,t) = T − t` or constant window `τ ≡ T₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TauMode {
    Memory,
    Constant {
        #[serde(rename = "T0")]
        t0: f64,
    },
}

impl TauMode {
    pub fn eval(&self, big_t: f64, t: f64) -> f64 {
        match *self {
            TauMode::Memory => big_t - t,
            TauMode::Constant { t0 } => t0,
        }
    }

    /// Largest window over `0 ≤ t ≤ T ≤ T*`.
    pub fn max_over(&self, tstar: f64) -> f64 {
        match *self {
            TauMode::Memory => tstar,
            TauMode::Constant { t0 } => t0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dnls,
    Boson,
    Fermion,
}

impl ModelKind {
    /// `(q, θ)`.
    pub fn q_theta(self) -> (f64, f64) {
        match self {
            ModelKind::Dnls => (0.0, 1.0),
            ModelKind::Boson => (1.0, 1.0),
            ModelKind::Fermion => (1.0, -1.0),
        }
    }

    pub const ALL: [ModelKind; 3] = [ModelKind::Dnls, ModelKind::Boson, ModelKind::Fermion];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub lambda: f64,
    pub tau: TauMode,
    pub beta: f64,
}

impl ModelParams {
    pub fn new(kind: ModelKind, lambda: f64, tau: TauMode, beta: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Validation(format!("coupling must be positive, got {lambda}")));
        }
        if let TauMode::Constant { t0 } = tau {
            if !(t0 > 0.0) {
                return Err(Error::Validation(format!("T0 must be positive, got {t0}")));
            }
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Validation(format!("beta must lie in (0,1), got {beta}")));
        }
        Ok(ModelParams {
            kind,
            lambda,
            tau,
            beta,
        })
    }

    pub fn q(&self) -> f64 {
        self.kind.q_theta().0
    }

    pub fn theta(&self) -> f64 {
        self.kind.q_theta().1
    }

    /// Whether `β < 1 − 2/d`, the range in which the weight estimates apply.
    pub fn beta_in_range(&self, d: usize) -> bool {
        self.beta < 1.0 - 2.0 / d as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialKind {
    Onsite,
    NearestNeighbour,
    ExpDecay { rate: f64 },
    FromFile { path: String },
    Zero,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialFile {
    d: usize,
    #[serde(rename = "L")]
    l: usize,
    values: Vec<f64>,
}

/// A real, reflection-symmetric pair potential with its cached transform and
/// self-convolution.
#[derive(Clone, Debug)]
pub struct Potential {
    v: Vec<f64>,
    vhat: Vec<f64>,
    vconv: Vec<f64>,
    support: Vec<usize>,
    conv_support: Vec<usize>,
}

impl Potential {
    pub fn new(kind: &PotentialKind, lat: &Lattice) -> Result<Self> {
        let values: Vec<f64> = match kind {
            PotentialKind::Onsite => (0..lat.len())
                .map(|y| if y == lat.origin() { 1.0 } else { 0.0 })
                .collect(),
            PotentialKind::Zero => vec![0.0; lat.len()],
            PotentialKind::NearestNeighbour => (0..lat.len())
                .map(|y| {
                    let l1: i64 = lat.coords(y).iter().map(|c| c.abs()).sum();
                    if l1 == 1 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            PotentialKind::ExpDecay { rate } => (0..lat.len())
                .map(|y| {
                    let r2: i64 = lat.coords(y).iter().map(|c| c * c).sum();
                    (-rate * (r2 as f64).sqrt()).exp()
                })
                .collect(),
            PotentialKind::FromFile { path } => return Self::from_file(Path::new(path), lat),
        };
        Self::from_values(lat, values)
    }

    pub fn from_file(path: &Path, lat: &Lattice) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read potential file {}: {e}", path.display())))?;
        let file: PotentialFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("potential file {}: {e}", path.display())))?;
        if file.d != lat.dim() || file.l != lat.side() {
            return Err(Error::Config(format!(
                "potential file is for d={}, L={} but the lattice has d={}, L={}",
                file.d,
                file.l,
                lat.dim(),
                lat.side()
            )));
        }
        Self::from_values(lat, file.values).map_err(|e| match e {
            Error::Validation(m) | Error::Structural(m) => Error::Config(m),
            other => other,
        })
    }

    /// Builds a potential from values in row-major centered order. Fails on
    /// any asymmetry instead of symmetrising.
    pub fn from_values(lat: &Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lat.len() {
            return Err(Error::Validation(format!(
                "potential has {} values, expected {}",
                values.len(),
                lat.len()
            )));
        }
        for y in 0..lat.len() {
            let my = lat.neg(y);
            if values[y] != values[my] {
                return Err(Error::Validation(format!(
                    "potential is not reflection symmetric at site {:?}: V(y)={} but V(-y)={}",
                    lat.coords(y),
                    values[y],
                    values[my]
                )));
            }
        }
        let vhat_c = dft(&SiteField::from_real(&values), lat)?;
        if vhat_c.max_imag() > 1e-12 * (1.0 + vhat_c.sup_norm()) {
            return structural("potential transform is not real");
        }
        let vhat = vhat_c.real_parts();
        let n = lat.len();
        let mut vconv = vec![0.0; n];
        let support: Vec<usize> = (0..n).filter(|&y| values[y] != 0.0).collect();
        for (y, out) in vconv.iter_mut().enumerate() {
            *out = support
                .iter()
                .map(|&x| values[x] * values[lat.sub(y, x)])
                .sum();
        }
        let conv_support = (0..n).filter(|&y| vconv[y] != 0.0).collect();
        Ok(Potential {
            v: values,
            vhat,
            vconv,
            support,
            conv_support,
        })
    }

    pub fn v(&self, y: usize) -> f64 {
        self.v[y]
    }

    pub fn vhat(&self, k: usize) -> f64 {
        self.vhat[k]
    }

    pub fn vconv(&self, y: usize) -> f64 {
        self.vconv[y]
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn vhat_values(&self) -> &[f64] {
        &self.vhat
    }

    pub fn vconv_values(&self) -> &[f64] {
        &self.vconv
    }

    /// Sites where `V ≠ 0`.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Sites where `V*V ≠ 0`.
    pub fn conv_support(&self) -> &[usize] {
        &self.conv_support
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    pub fn vhat_field(&self) -> SpectralField {
        SpectralField::from_real(&self.vhat)
    }

    /// `𝒱(k,y) = 1(y=0)V̂(k)² + 2θV̂(k)V(y) + (V*V)(y)`.
    pub fn script_v(&self, lat: &Lattice, theta: f64, k: usize, y: usize) -> f64 {
        let vk = self.vhat[k];
        let diag = if y == lat.origin() { vk * vk } else { 0.0 };
        diag + 2.0 * theta * vk * self.v[y] + self.vconv[y]
    }

    /// `(v_i(k,y), w_i(y′))` for the eight terms of the bilinear operator.
    pub fn vw(
        &self,
        lat: &Lattice,
        theta: f64,
        i: usize,
        k: usize,
        y: usize,
        yp: usize,
    ) -> Result<(f64, f64)> {
        let o = lat.origin();
        let ind = |c: bool| if c { 1.0 } else { 0.0 };
        match i {
            1..=5 => Ok((self.script_v(lat, theta, k, y), ind(yp == o))),
            6 | 7 => Ok((self.vconv[y], ind(yp == o))),
            8 => Ok((2.0 * self.v[y], self.v[yp])),
            _ => structural(format!("bilinear term index must be in 1..=8, got {i}")),
        }
    }

    /// `M_V = ‖V̂‖²_{2/3}`.
    pub fn m_v(&self, lat: &Lattice) -> f64 {
        let n = sobolev_norm(&self.vhat_field(), 2.0 / 3.0, lat);
        n * n
    }

    /// Both sides of `Σ_{y,y′} (∏⟨y_j⟩⟨y′_j⟩)^p sup_k |v_i||w_i| ≤ (2^{pd}+3)‖V̂‖²_p`.
    pub fn term_weight_bound(&self, lat: &Lattice, theta: f64, i: usize, p: f64) -> Result<(f64, f64)> {
        let w = site_weights(lat, p);
        let n = lat.len();
        let sup_v: Vec<f64> = (0..n)
            .map(|y| {
                (0..n)
                    .map(|k| self.vw(lat, theta, i, k, y, lat.origin()).map(|t| t.0.abs()))
                    .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
            })
            .collect::<Result<_>>()?;
        let wv: Vec<f64> = (0..n)
            .map(|yp| self.vw(lat, theta, i, 0, lat.origin(), yp).map(|t| t.1.abs()))
            .collect::<Result<_>>()?;
        let a: f64 = (0..n).map(|y| w[y] * sup_v[y]).sum();
        let b: f64 = (0..n).map(|yp| w[yp] * wv[yp]).sum();
        let norm = sobolev_norm(&self.vhat_field(), p, lat);
        let rhs = (2f64.powf(p * lat.dim() as f64) + 3.0) * norm * norm;
        Ok((a * b, rhs))
    }
}

/// `∏_j ⟨y_j⟩^p` for every site.
pub fn site_weights(lat: &Lattice, p: f64) -> Vec<f64> {
    (0..lat.len())
        .map(|y| {
            lat.coords(y)
                .iter()
                .map(|&c| regabs(c as f64).powf(p))
                .product()
        })
        .collect()
}

/// `‖f‖_p = Σ_y ∏⟨y_j⟩^p |f̌(y)|`.
pub fn sobolev_norm(f: &SpectralField, p: f64, lat: &Lattice) -> f64 {
    let fc = idft(f, lat).expect("field size matches lattice");
    site_weights(lat, p)
        .iter()
        .zip(&fc.values)
        .map(|(w, z)| w * z.norm())
        .sum()
}

/// `sup_y ∏⟨y_j⟩^p |f̌(y)|`.
pub fn sup_sobolev_norm(f: &SpectralField, p: f64, lat: &Lattice) -> f64 {
    let fc = idft(f, lat).expect("field size matches lattice");
    site_weights(lat, p)
        .iter()
        .zip(&fc.values)
        .fold(0.0, |m, (w, z)| m.max(w * z.norm()))
}

/// A random symmetric potential, used by tests and verification sweeps.
pub fn random_symmetric_values(lat: &Lattice, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut v = vec![0.0; lat.len()];
    for y in 0..lat.len() {
        let my = lat.neg(y);
        if my >= y {
            let a = rng.gen_range(-1.0..1.0);
            v[y] = a;
            v[my] = a;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dft_direct;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    #[test]
    fn onsite_and_nearest_neighbour() {
        let lat = Lattice::new(2, 3, 0.0).unwrap();
        let p = Potential::new(&PotentialKind::Onsite, &lat).unwrap();
        assert!(p.vhat_values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let lat = Lattice::new(1, 5, 0.0).unwrap();
        let p = Potential::new(&PotentialKind::NearestNeighbour, &lat).unwrap();
        for m in 0..5 {
            let k = lat.momentum(m)[0];
            assert!((p.vhat(m) - 2.0 * (TAU * k).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn exp_decay_matches_direct_transform() {
        let lat = Lattice::new(2, 4, 0.0).unwrap();
        let p = Potential::new(&PotentialKind::ExpDecay { rate: 1.0 }, &lat).unwrap();
        let direct = dft_direct(&SiteField::from_real(p.values()), &lat).unwrap();
        for m in 0..lat.len() {
            assert!((direct[m] - Complex64::new(p.vhat(m), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let lat = Lattice::new(1, 5, 0.0).unwrap();
        let err = Potential::from_values(&lat, vec![0.0, 1.0, 1.0, 0.5, 0.0]).unwrap_err();
        assert!(err.to_string().contains("[-1]") || err.to_string().contains("[1]"));
    }

    #[test]
    fn script_v_examples() {
        let lat = Lattice::new(2, 3, 0.0).unwrap();
        let p = Potential::new(&PotentialKind::Onsite, &lat).unwrap();
        let o = lat.origin();
        for k in 0..lat.len() {
            assert_eq!(p.script_v(&lat, 1.0, k, o), 4.0);
            for y in (0..lat.len()).filter(|&y| y != o) {
                assert_eq!(p.script_v(&lat, 1.0, k, y), 0.0);
                assert_eq!(p.script_v(&lat, -1.0, k, y), 0.0);
            }
        }
        assert_eq!(p.vw(&lat, 1.0, 7, 0, o, o).unwrap(), (1.0, 1.0));
        assert_eq!(p.vw(&lat, 1.0, 8, 0, o, o).unwrap(), (2.0, 1.0));
        assert!(p.vw(&lat, 1.0, 9, 0, o, o).is_err());
    }

    #[test]
    fn script_v_is_the_transform_of_the_squared_factor() {
        // Σ_y 𝒱(k,y) e^{i2πk′·y} = ∫dk₁ (V̂(k+k₁−k′)… ) expanded by brute force:
        // (∫dk₁ (V̂(k₁+c) + θV̂(k))² e^{i2πk₁·y})* = e^{i2πc·y} 𝒱(k,y), c = k − k₀.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (d, l) in [(1usize, 5usize), (2, 3), (2, 4)] {
            let lat = Lattice::new(d, l, 0.0).unwrap();
            let p = Potential::from_values(&lat, random_symmetric_values(&lat, &mut rng)).unwrap();
            for theta in [1.0, -1.0] {
                for k in 0..lat.len() {
                    for k0 in 0..lat.len() {
                        let c = lat.sub(k, k0);
                        for y in 0..lat.len() {
                            let mut acc = Complex64::new(0.0, 0.0);
                            for k1 in 0..lat.len() {
                                let f = p.vhat(lat.add(k1, c)) + theta * p.vhat(k);
                                acc += f * f * lat.fourier(k1, y);
                            }
                            let lhs = acc.conj() / lat.len() as f64;
                            let rhs = lat.fourier(c, y) * p.script_v(&lat, theta, k, y);
                            assert!((lhs - rhs).norm() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sobolev_examples() {
        let lat = Lattice::new(2, 4, 0.0).unwrap();
        let one = SpectralField::constant(&lat, 1.0);
        for p in [0.0, 1.0 / 3.0, 2.0] {
            assert!((sobolev_norm(&one, p, &lat) - 1.0).abs() < 1e-14);
        }
        let pot = Potential::new(&PotentialKind::Onsite, &lat).unwrap();
        assert!((pot.m_v(&lat) - 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = SpectralField::new(
            (0..lat.len())
                .map(|_| Complex64::new(rand::Rng::gen_range(&mut rng, -1.0..1.0), 0.3))
                .collect(),
        );
        let mut oracle = 0.0;
        for y in 0..lat.len() {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..lat.len() {
                let k = lat.momentum(m);
                let yc = lat.coords(y);
                let ph: f64 = k.iter().zip(yc).map(|(a, &b)| a * b as f64).sum();
                acc += f[m] * Complex64::from_polar(1.0, TAU * ph);
            }
            acc /= lat.len() as f64;
            let w: f64 = yc_weight(&lat, y, 1.0 / 3.0);
            oracle += w * acc.norm();
        }
        let got = sobolev_norm(&f, 1.0 / 3.0, &lat);
        assert!((got - oracle).abs() < 1e-12 * oracle);
        assert!(sup_sobolev_norm(&f, 1.0 / 3.0, &lat) <= got);
    }

    fn yc_weight(lat: &Lattice, y: usize, p: f64) -> f64 {
        lat.coords(y)
            .iter()
            .map(|&c| (1.0 + (c * c) as f64).sqrt().powf(p))
            .product()
    }

    #[test]
    fn term_weight_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in 1..=3 {
            let lat = Lattice::new(d, 3, 0.0).unwrap();
            for _ in 0..100 {
                let p = Potential::from_values(&lat, random_symmetric_values(&lat, &mut rng)).unwrap();
                for theta in [1.0, -1.0] {
                    for i in 1..=8 {
                        for pw in [1.0 / 6.0, 2.0 / 3.0] {
                            let (lhs, rhs) = p.term_weight_bound(&lat, theta, i, pw).unwrap();
                            assert!(lhs <= rhs * (1.0 + 1e-12), "i={i} p={pw}: {lhs} > {rhs}");
                        }
                    }
                }
            }
        }
    }
}
