//! On-disk datasets: `trajectory.csv`, `pairs.csv`, `layers.csv` and
//! `meta.json` in one directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{self, Catalogs, ExperimentConfig};
use crate::error::{Error, Result};
use crate::graphs::{BernoulliScheme, CouplingKind, MatchingCatalog};
use crate::maps::PartnerObservation;
use crate::measures;
use crate::rules::{Driver, InvariantReport, LayerRecord, PairRecord, TrajectoryRecord};
use crate::symstate::GateParams;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const LAYERS_FILE: &str = "layers.csv";
pub const META_FILE: &str = "meta.json";

pub const TRAJECTORY_SCHEMA: &str = "pcnet.trajectory.v1";
pub const PAIRS_SCHEMA: &str = "pcnet.pairs.v1";
pub const LAYERS_SCHEMA: &str = "pcnet.layers.v1";
pub const META_SCHEMA: &str = "pcnet.meta.v1";

const TRAJECTORY_COLUMNS: [&str; 9] = ["trial", "layer", "qubit", "p", "z", "tau_z", "cp_ok", "w_ex", "dw_ex"];
const PAIRS_COLUMNS: [&str; 7] = ["trial", "layer", "qa", "qb", "cxx", "czz", "mij"];
const LAYERS_COLUMNS: [&str; 8] = [
    "trial",
    "layer",
    "matching_index",
    "D_total",
    "T_total",
    "C_total",
    "clustering",
    "disparity",
];

/// Twelve significant digits in scientific notation.
pub fn format_f64(x: f64) -> String {
    format!("{x:.11e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub gate: GateParams,
    pub n_qubits: usize,
    pub connectivity: String,
    pub central_state: String,
    /// Rule label; Bernoulli replays carry their scheme below.
    pub rule: String,
    pub populations: Vec<f64>,
    pub pbar: f64,
    /// Mean propagator shift of the thermalising map.
    pub tau_bar: f64,
    pub catalog_hash: String,
    pub catalog_len: usize,
    pub init_catalog_hash: String,
    pub members: usize,
    pub init_depth: usize,
    pub total_layers: usize,
    pub record_pairs_every: usize,
    pub bernoulli: Option<BernoulliScheme>,
    pub invariants: Vec<InvariantReport>,
}

impl DatasetMeta {
    pub fn new(config: &ExperimentConfig, driver: &Driver, catalogs: &Catalogs, records: &[TrajectoryRecord]) -> Result<Self> {
        let populations = config.central_state.populations(config.n_qubits)?;
        let reference = measures::ThermalReference::from_populations(&populations)?;
        let gate = config.gate();
        Ok(Self {
            schema: META_SCHEMA.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            gate,
            n_qubits: config.n_qubits,
            connectivity: config.connectivity.label().to_string(),
            central_state: config.central_state.label().to_string(),
            rule: driver.label(),
            pbar: reference.pbar,
            tau_bar: gate.sin2() * reference.zbar,
            populations,
            catalog_hash: catalogs.coupling.hash(),
            catalog_len: catalogs.coupling.len(),
            init_catalog_hash: catalogs.init.hash(),
            members: records.len(),
            init_depth: config.init_depth,
            total_layers: config.total_layers,
            record_pairs_every: config.pairs_cadence(),
            bernoulli: match driver {
                Driver::Bernoulli(s) => Some(s.clone()),
                Driver::Rule(_) => None,
            },
            invariants: records.iter().map(|r| r.invariants).collect(),
        })
    }
}

fn create(dir: &Path, name: &str, schema: &str, columns: &[&str]) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    writeln!(w, "#schema={schema}")?;
    writeln!(w, "{}", columns.join(","))?;
    Ok(w)
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, meta: &DatasetMeta, records: &[TrajectoryRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut traj = create(dir, TRAJECTORY_FILE, TRAJECTORY_SCHEMA, &TRAJECTORY_COLUMNS)?;
    let mut pairs = create(dir, PAIRS_FILE, PAIRS_SCHEMA, &PAIRS_COLUMNS)?;
    let mut layers = create(dir, LAYERS_FILE, LAYERS_SCHEMA, &LAYERS_COLUMNS)?;
    for rec in records {
        let t = rec.trial;
        for l in &rec.layers {
            for q in 0..rec.n_qubits {
                let z = l.z[q];
                writeln!(
                    traj,
                    "{t},{},{q},{},{},{},{},{},{}",
                    l.layer,
                    format_f64((1.0 - z) / 2.0),
                    format_f64(z),
                    format_f64(l.tau[q]),
                    u8::from(l.cp_ok[q]),
                    format_f64(l.w_ex[q]),
                    format_f64(l.dw_ex[q]),
                )?;
            }
            if let Some(prs) = &l.pairs {
                for p in prs {
                    writeln!(
                        pairs,
                        "{t},{},{},{},{},{},{}",
                        l.layer,
                        p.qa,
                        p.qb,
                        format_f64(p.cxx),
                        format_f64(p.czz),
                        format_f64(p.mij)
                    )?;
                }
            }
            writeln!(
                layers,
                "{t},{},{},{},{},{},{},{}",
                l.layer,
                l.matching_index.map(|i| i.to_string()).unwrap_or_default(),
                format_f64(l.d_total),
                format_f64(l.t_total),
                format_opt(l.c_total),
                format_opt(l.clustering),
                format_opt(l.disparity),
            )?;
        }
    }
    traj.flush()?;
    pairs.flush()?;
    layers.flush()?;
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(dir.join(META_FILE), json + "\n")?;
    Ok(())
}

/// Simulates `config` and writes the dataset to `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig, driver: &Driver) -> Result<(DatasetMeta, Vec<TrajectoryRecord>)> {
    config.validate()?;
    let catalogs = Catalogs::new(config.n_qubits, config.connectivity)?;
    let records = ensemble::simulate_with(config, driver, &catalogs)?;
    let meta = DatasetMeta::new(config, driver, &catalogs, &records)?;
    write_dataset(&config.output_dir, &meta, &records)?;
    Ok((meta, records))
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub meta: DatasetMeta,
    pub records: Vec<TrajectoryRecord>,
}

fn open_csv(dir: &Path, name: &str, schema: &str, columns: &[&str]) -> Result<csv::Reader<BufReader<File>>> {
    let path = dir.join(name);
    let mut reader = BufReader::new(File::open(&path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let found = first.trim().strip_prefix("#schema=").unwrap_or("");
    if found != schema {
        return Err(Error::Data(format!(
            "{}: schema {found:?}, expected {schema:?}",
            path.display()
        )));
    }
    let mut csv = csv::ReaderBuilder::new().from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    if header != columns {
        return Err(Error::Data(format!("{}: unexpected columns {header:?}", path.display())));
    }
    Ok(csv)
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    row.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("bad {name} value {:?}", row.get(i))))
}

fn opt_field(row: &csv::StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
    match row.get(i) {
        Some("") => Ok(None),
        _ => field(row, i, name).map(Some),
    }
}

fn partner_of(catalog: &MatchingCatalog, index: usize, q: usize) -> Result<usize> {
    catalog
        .pairs_u8(index)
        .iter()
        .find_map(|&(a, b)| {
            let (a, b) = (a as usize, b as usize);
            if a == q {
                Some(b)
            } else if b == q {
                Some(a)
            } else {
                None
            }
        })
        .ok_or_else(|| Error::Data(format!("qubit {q} unpaired in matching {index}")))
}

fn layer_mut(records: &mut [TrajectoryRecord], t: usize, l: usize) -> Result<&mut LayerRecord> {
    records
        .get_mut(t)
        .and_then(|r| r.layers.get_mut(l))
        .ok_or_else(|| Error::Data(format!("row for trial {t} layer {l} outside the dataset")))
}

/// Reads a dataset written by [`write_dataset`]. Partner data are rebuilt
/// from the matchings and the recorded shifts.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
    if meta.schema != META_SCHEMA {
        return Err(Error::Data(format!("meta schema {:?}, expected {META_SCHEMA:?}", meta.schema)));
    }
    let n = meta.n_qubits;
    let kind: CouplingKind = meta.connectivity.parse()?;
    let catalogs = Catalogs::new(n, kind)?;
    if catalogs.coupling.hash() != meta.catalog_hash {
        return Err(Error::Data("matching catalog hash mismatch".into()));
    }
    let gate = meta.gate;
    let layers_per = meta.total_layers + 1;
    let empty_layer = |layer| LayerRecord {
        layer,
        matching_index: None,
        constrained: layer > meta.init_depth,
        z: vec![f64::NAN; n],
        tau: vec![f64::NAN; n],
        cp_ok: vec![true; n],
        w_ex: vec![f64::NAN; n],
        dw_ex: vec![f64::NAN; n],
        partners: vec![None; n],
        partner_index: vec![None; n],
        d_total: f64::NAN,
        t_total: f64::NAN,
        pairs: None,
        c_total: None,
        clustering: None,
        disparity: None,
    };
    let mut records: Vec<TrajectoryRecord> = (0..meta.members)
        .map(|t| TrajectoryRecord {
            trial: t,
            n_qubits: n,
            init_depth: meta.init_depth,
            gate,
            initial_populations: meta.populations.clone(),
            pbar: meta.pbar,
            layers: (0..layers_per).map(empty_layer).collect(),
            invariants: meta.invariants.get(t).copied().unwrap_or_default(),
        })
        .collect();
    let mut seen = 0usize;
    for row in open_csv(dir, TRAJECTORY_FILE, TRAJECTORY_SCHEMA, &TRAJECTORY_COLUMNS)?.records() {
        let row = row?;
        let t: usize = field(&row, 0, "trial")?;
        let l: usize = field(&row, 1, "layer")?;
        let q: usize = field(&row, 2, "qubit")?;
        if q >= n {
            return Err(Error::Data(format!("qubit {q} out of range")));
        }
        let layer = layer_mut(&mut records, t, l)?;
        layer.z[q] = field(&row, 4, "z")?;
        layer.tau[q] = field(&row, 5, "tau_z")?;
        layer.cp_ok[q] = field::<u8>(&row, 6, "cp_ok")? == 1;
        layer.w_ex[q] = field(&row, 7, "w_ex")?;
        layer.dw_ex[q] = field(&row, 8, "dw_ex")?;
        seen += 1;
    }
    if seen != meta.members * layers_per * n {
        return Err(Error::Data(format!(
            "{TRAJECTORY_FILE} has {seen} rows, expected {}",
            meta.members * layers_per * n
        )));
    }
    for row in open_csv(dir, LAYERS_FILE, LAYERS_SCHEMA, &LAYERS_COLUMNS)?.records() {
        let row = row?;
        let t: usize = field(&row, 0, "trial")?;
        let l: usize = field(&row, 1, "layer")?;
        let layer = layer_mut(&mut records, t, l)?;
        layer.matching_index = match row.get(2) {
            Some("") => None,
            _ => Some(field(&row, 2, "matching_index")?),
        };
        layer.d_total = field(&row, 3, "D_total")?;
        layer.t_total = field(&row, 4, "T_total")?;
        layer.c_total = opt_field(&row, 5, "C_total")?;
        layer.clustering = opt_field(&row, 6, "clustering")?;
        layer.disparity = opt_field(&row, 7, "disparity")?;
    }
    for row in open_csv(dir, PAIRS_FILE, PAIRS_SCHEMA, &PAIRS_COLUMNS)?.records() {
        let row = row?;
        let t: usize = field(&row, 0, "trial")?;
        let l: usize = field(&row, 1, "layer")?;
        let layer = layer_mut(&mut records, t, l)?;
        layer.pairs.get_or_insert_with(Vec::new).push(PairRecord {
            qa: field(&row, 2, "qa")?,
            qb: field(&row, 3, "qb")?,
            cxx: field(&row, 4, "cxx")?,
            czz: field(&row, 5, "czz")?,
            mij: field(&row, 6, "mij")?,
        });
    }

    let (s2, s2t) = (gate.sin2(), gate.sin_2theta());
    for rec in &mut records {
        for l in 1..rec.layers.len() {
            let (before, after) = rec.layers.split_at_mut(l);
            let prev = &before[l - 1];
            let cur = &mut after[0];
            let Some(index) = cur.matching_index else {
                return Err(Error::Data(format!("trial {} layer {l} lacks a matching index", rec.trial)));
            };
            let catalog = if cur.constrained { &catalogs.coupling } else { &catalogs.init };
            if index >= catalog.len() {
                return Err(Error::MatchingIndex { index, len: catalog.len() });
            }
            for q in 0..n {
                let r = partner_of(catalog, index, q)?;
                let partner_z = prev.z[r];
                let coupling = if s2t == 0.0 { 0.0 } else { (cur.tau[q] - partner_z * s2) / s2t };
                cur.partner_index[q] = Some(r);
                cur.partners[q] = Some(PartnerObservation { partner_z, coupling });
            }
        }
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        meta,
        records,
    })
}
