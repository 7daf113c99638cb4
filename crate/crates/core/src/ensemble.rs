//! Central states, initial ensembles, experiment configuration and
//! ensemble statistics.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graphs::{BernoulliScheme, CouplingGraph, CouplingKind, InteractionGraph, MatchingCatalog};
use crate::measures;
use crate::rules::{Driver, Evolution, RuleKind, Tolerances, TrajectoryRecord};
use crate::symstate::{GateParams, NetworkSpec, SymmetricState};

const CS2_HEAD: [f64; 8] = [0.02352335, 0.08, 0.28, 0.12, 0.12, 0.28, 0.08, 0.11647665];
const CS3_HEAD: [f64; 8] = [0.04340705, 0.12, 0.09, 0.15, 0.3, 0.14, 0.23, 0.02659295];
const COLD: f64 = 0.1;
const HOT: f64 = 0.4;

/// Reference product state seeding an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CentralStateKind {
    /// One excited qubit, the rest in the ground state.
    #[serde(rename = "CSP")]
    Csp,
    /// One hot qubit among cold ones.
    #[serde(rename = "CS1")]
    Cs1,
    #[serde(rename = "CS2")]
    Cs2,
    #[serde(rename = "CS3")]
    Cs3,
}

impl CentralStateKind {
    pub const ALL: [CentralStateKind; 4] = [Self::Csp, Self::Cs1, Self::Cs2, Self::Cs3];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Csp => "CSP",
            Self::Cs1 => "CS1",
            Self::Cs2 => "CS2",
            Self::Cs3 => "CS3",
        }
    }

    /// Population vector for `n` qubits. The excited or hot qubit sits at
    /// index 0.
    pub fn populations(&self, n: usize) -> Result<Vec<f64>> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::QubitCount {
                n,
                reason: "central states need an even number of qubits",
            });
        }
        let p = match self {
            Self::Csp => {
                let mut p = vec![0.0; n];
                p[0] = 1.0;
                p
            }
            Self::Cs1 => {
                let mut p = vec![COLD; n];
                p[0] = HOT;
                p
            }
            Self::Cs2 | Self::Cs3 => {
                if n < 8 {
                    return Err(Error::QubitCount {
                        n,
                        reason: "CS2 and CS3 need at least 8 qubits",
                    });
                }
                let head = if *self == Self::Cs2 { CS2_HEAD } else { CS3_HEAD };
                let mut p = vec![COLD; n];
                p[..8].copy_from_slice(&head);
                let target_sum = (n - 1) as f64 * COLD + HOT;
                let sum: f64 = p.iter().sum();
                let entropy: f64 = p.iter().map(|&x| measures::binary_entropy(x)).sum();
                let reference: f64 = Self::Cs1.populations(n)?.iter().map(|&x| measures::binary_entropy(x)).sum();
                if (sum - target_sum).abs() > 1e-9 || (entropy - reference).abs() > 1e-4 {
                    return Err(Error::Invariant(format!(
                        "{} violates the energy or entropy match",
                        self.label()
                    )));
                }
                p
            }
        };
        Ok(p)
    }
}

impl fmt::Display for CentralStateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CentralStateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CSP" => Ok(Self::Csp),
            "CS1" => Ok(Self::Cs1),
            "CS2" => Ok(Self::Cs2),
            "CS3" => Ok(Self::Cs3),
            other => Err(Error::Config(format!("unknown central state {other:?}"))),
        }
    }
}

/// Rule field of a config: an update rule or the Bernoulli replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleSetting {
    Rule(RuleKind),
    Bernoulli,
}

impl fmt::Display for RuleSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleSetting::Rule(r) => write!(f, "{r}"),
            RuleSetting::Bernoulli => f.write_str("bernoulli"),
        }
    }
}

impl FromStr for RuleSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("bernoulli") {
            Ok(RuleSetting::Bernoulli)
        } else {
            s.parse().map(RuleSetting::Rule)
        }
    }
}

impl Serialize for RuleSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RuleSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

mod connectivity {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(k: &CouplingKind, s: S) -> std::result::Result<S::Ok, S::Error> {
        match k {
            CouplingKind::Ring => s.serialize_i64(2),
            CouplingKind::Circulant4 => s.serialize_i64(4),
            CouplingKind::Complete => s.serialize_str("full"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CouplingKind, D::Error> {
        let text = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            Raw::Str(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Flat experiment configuration; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_qubits: usize,
    #[serde(with = "connectivity")]
    pub connectivity: CouplingKind,
    pub central_state: CentralStateKind,
    pub rule: RuleSetting,
    pub theta: f64,
    pub phi: f64,
    pub omega: f64,
    pub ensemble_size: usize,
    pub init_depth: usize,
    pub total_layers: usize,
    pub seed: u64,
    /// Pair and mutual-information records every this many layers; 0 turns
    /// them off. Defaults to 1, or 5 at 14 qubits.
    pub record_pairs_every: Option<usize>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let gate = GateParams::default();
        Self {
            n_qubits: 12,
            connectivity: CouplingKind::Ring,
            central_state: CentralStateKind::Cs1,
            rule: RuleSetting::Rule(RuleKind::R1),
            theta: gate.theta,
            phi: gate.phi,
            omega: gate.omega,
            ensemble_size: 100,
            init_depth: 10,
            total_layers: 500,
            seed: 0,
            record_pairs_every: None,
            output_dir: PathBuf::from("out"),
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.json` or TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        NetworkSpec::new(self.n_qubits, self.gate()).map_err(|e| Error::Config(e.to_string()))?;
        if self.total_layers <= self.init_depth {
            return Err(Error::Config(format!(
                "total_layers ({}) must exceed init_depth ({})",
                self.total_layers, self.init_depth
            )));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        for (name, v) in [("theta", self.theta), ("phi", self.phi), ("omega", self.omega)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        self.central_state
            .populations(self.n_qubits)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn gate(&self) -> GateParams {
        GateParams::new(self.theta, self.phi, self.omega)
    }

    pub fn pairs_cadence(&self) -> usize {
        self.record_pairs_every
            .unwrap_or(if self.n_qubits >= 14 { 5 } else { 1 })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Driver for this config; the Bernoulli replay needs a scheme.
    pub fn driver(&self, scheme: Option<BernoulliScheme>) -> Result<Driver> {
        match (self.rule, scheme) {
            (RuleSetting::Rule(r), _) => Ok(Driver::Rule(r)),
            (RuleSetting::Bernoulli, Some(s)) => Ok(Driver::Bernoulli(s)),
            (RuleSetting::Bernoulli, None) => Err(Error::Config(
                "rule = \"bernoulli\" needs an emergent network".into(),
            )),
        }
    }
}

/// Matching catalogs of one network size.
#[derive(Debug, Clone)]
pub struct Catalogs {
    pub coupling: MatchingCatalog,
    pub init: MatchingCatalog,
}

impl Catalogs {
    pub fn new(n: usize, kind: CouplingKind) -> Result<Self> {
        let init = MatchingCatalog::enumerate(&CouplingGraph::new(n, CouplingKind::Complete)?)?;
        let coupling = if kind == CouplingKind::Complete {
            init.clone()
        } else {
            MatchingCatalog::enumerate(&CouplingGraph::new(n, kind)?)?
        };
        Ok(Self { coupling, init })
    }
}

/// Generator of trial `trial`: one stream per trial, shared by
/// initialisation and evolution.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Central state evolved through `depth` random complete-graph layers.
pub fn generate_member(
    populations: &[f64],
    init_catalog: &MatchingCatalog,
    depth: usize,
    gate: &GateParams,
    seed: u64,
    trial: usize,
) -> Result<(SymmetricState, Vec<InteractionGraph>)> {
    let mut rng = trial_rng(seed, trial);
    let mut state = SymmetricState::product(populations)?;
    let mut circuit = Vec::with_capacity(depth);
    for _ in 0..depth {
        let m = init_catalog.random(&mut rng);
        state.apply_layer(&m.pairs, gate)?;
        circuit.push(m);
    }
    Ok((state, circuit))
}

pub fn generate_ensemble(
    kind: CentralStateKind,
    n: usize,
    count: usize,
    depth: usize,
    seed: u64,
    gate: &GateParams,
) -> Result<Vec<(SymmetricState, Vec<InteractionGraph>)>> {
    if count == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let populations = kind.populations(n)?;
    let init = MatchingCatalog::enumerate(&CouplingGraph::new(n, CouplingKind::Complete)?)?;
    (0..count)
        .map(|t| generate_member(&populations, &init, depth, gate, seed, t))
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Runs every trial in memory, in trial order.
pub fn simulate(config: &ExperimentConfig, driver: &Driver) -> Result<Vec<TrajectoryRecord>> {
    config.validate()?;
    let catalogs = Catalogs::new(config.n_qubits, config.connectivity)?;
    simulate_with(config, driver, &catalogs)
}

pub fn simulate_with(config: &ExperimentConfig, driver: &Driver, catalogs: &Catalogs) -> Result<Vec<TrajectoryRecord>> {
    if let Driver::Bernoulli(scheme) = driver {
        if let Some(&(i, _)) = scheme.probabilities.iter().find(|(i, _)| *i >= catalogs.coupling.len()) {
            return Err(Error::MatchingIndex {
                index: i,
                len: catalogs.coupling.len(),
            });
        }
    }
    let populations = config.central_state.populations(config.n_qubits)?;
    let evo = Evolution {
        gate: config.gate(),
        catalog: &catalogs.coupling,
        init_catalog: &catalogs.init,
        init_depth: config.init_depth,
        total_layers: config.total_layers,
        record_pairs_every: config.pairs_cadence(),
        tolerances: Tolerances::default(),
    };
    let run = |t: usize| {
        let mut rng = trial_rng(config.seed, t);
        let rec = evo.run(t, &populations, driver, &mut rng);
        log::debug!("trial {t} finished");
        rec
    };
    pool(config.workers)?.install(|| (0..config.ensemble_size).into_par_iter().map(run).collect())
}

/// Per-layer observable averaged by `ensemble_average`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Z,
    Tau,
    WEx,
    DwEx,
    /// Fraction of non-CP propagators.
    NonCp,
    DTotal,
    TTotal,
    CTotal,
    Clustering,
    Disparity,
}

impl Quantity {
    pub const ALL: [Quantity; 10] = [
        Self::Z,
        Self::Tau,
        Self::WEx,
        Self::DwEx,
        Self::NonCp,
        Self::DTotal,
        Self::TTotal,
        Self::CTotal,
        Self::Clustering,
        Self::Disparity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Z => "z",
            Self::Tau => "tau_z",
            Self::WEx => "w_ex",
            Self::DwEx => "dw_ex",
            Self::NonCp => "non_cp",
            Self::DTotal => "D_total",
            Self::TTotal => "T_total",
            Self::CTotal => "C_total",
            Self::Clustering => "clustering",
            Self::Disparity => "disparity",
        }
    }

    pub fn per_qubit(&self) -> bool {
        matches!(self, Self::Z | Self::Tau | Self::WEx | Self::DwEx | Self::NonCp)
    }

    fn values(&self, layer: &crate::rules::LayerRecord) -> Vec<f64> {
        match self {
            Self::Z => layer.z.clone(),
            Self::Tau => layer.tau.clone(),
            Self::WEx => layer.w_ex.clone(),
            Self::DwEx => layer.dw_ex.clone(),
            Self::NonCp => layer.cp_ok.iter().map(|&ok| if ok { 0.0 } else { 1.0 }).collect(),
            Self::DTotal => vec![layer.d_total],
            Self::TTotal => vec![layer.t_total],
            Self::CTotal => vec![layer.c_total.unwrap_or(f64::NAN)],
            Self::Clustering => vec![layer.clustering.unwrap_or(f64::NAN)],
            Self::Disparity => vec![layer.disparity.unwrap_or(f64::NAN)],
        }
    }
}

/// Window statistics of one quantity over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub quantity: Quantity,
    pub window: (usize, usize),
    /// Mean over members of each member's window mean.
    pub mean: f64,
    /// Standard deviation of all pooled samples.
    pub std: f64,
    /// Mean over members of each member's standard deviation across
    /// qubits and window layers.
    pub member_std: f64,
    /// Window mean of every qubit over all members; empty for network-level
    /// quantities.
    pub per_qubit: Vec<f64>,
    pub samples: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Checks that `window` lies inside every record.
pub fn check_window(records: &[TrajectoryRecord], window: (usize, usize)) -> Result<()> {
    let last = records
        .iter()
        .map(|r| r.layers.len().saturating_sub(1))
        .min()
        .ok_or_else(|| Error::Data("empty ensemble".into()))?;
    if window.0 > window.1 || window.1 > last {
        return Err(Error::Config(format!(
            "window {}:{} outside recorded layers 0:{last}",
            window.0, window.1
        )));
    }
    Ok(())
}

/// Statistics over members and layers `window.0..=window.1`. Missing
/// values are skipped.
pub fn ensemble_average(records: &[TrajectoryRecord], quantity: Quantity, window: (usize, usize)) -> Result<EnsembleStats> {
    check_window(records, window)?;
    let n = records[0].n_qubits;
    let mut member_means = Vec::new();
    let mut member_stds = Vec::new();
    let mut pooled = Vec::new();
    let mut per_qubit = vec![(0.0, 0usize); n];
    for rec in records {
        let mut samples = Vec::new();
        for layer in &rec.layers[window.0..=window.1] {
            for (q, v) in quantity.values(layer).into_iter().enumerate() {
                if v.is_finite() {
                    samples.push(v);
                    if quantity.per_qubit() {
                        per_qubit[q].0 += v;
                        per_qubit[q].1 += 1;
                    }
                }
            }
        }
        if samples.is_empty() {
            continue;
        }
        let (m, s) = mean_std(&samples);
        member_means.push(m);
        member_stds.push(s);
        pooled.extend(samples);
    }
    if pooled.is_empty() {
        return Err(Error::Data(format!("no {} samples in the window", quantity.name())));
    }
    let (_, std) = mean_std(&pooled);
    Ok(EnsembleStats {
        quantity,
        window,
        mean: member_means.iter().sum::<f64>() / member_means.len() as f64,
        std,
        member_std: member_stds.iter().sum::<f64>() / member_stds.len() as f64,
        per_qubit: if quantity.per_qubit() {
            per_qubit
                .iter()
                .map(|&(s, c)| if c > 0 { s / c as f64 } else { f64::NAN })
                .collect()
        } else {
            Vec::new()
        },
        samples: pooled.len(),
    })
}

/// `(x - baseline) / baseline`; `None` for a zero baseline.
pub fn relative_difference(x: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0 && baseline.is_finite()).then(|| (x - baseline) / baseline)
}
