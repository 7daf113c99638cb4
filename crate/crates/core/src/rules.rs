//! Adaptive circuit engine: choose each layer's interaction graph from the
//! current state and record the resulting trajectory.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{BernoulliScheme, CouplingGraph, InteractionGraph, MatchingCatalog};
use crate::maps::{self, PartnerObservation};
use crate::measures::{self, MiMatrix};
use crate::symstate::{GateParams, PairReduced, SymmetricState};

/// Update rule for constrained layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    /// Uniformly random allowed matching.
    R1,
    /// Maximise the summed trace distance to the thermal reference.
    R2,
    /// Maximise the total change in extractable work.
    R3,
    /// Greedy pairing led by the previous layer's work gains.
    R4,
    /// Pair by mimicking the best-performing neighbour's population gap.
    R5,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [RuleKind::R1, RuleKind::R2, RuleKind::R3, RuleKind::R4, RuleKind::R5];
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R1" => Ok(RuleKind::R1),
            "R2" => Ok(RuleKind::R2),
            "R3" => Ok(RuleKind::R3),
            "R4" => Ok(RuleKind::R4),
            "R5" => Ok(RuleKind::R5),
            other => Err(Error::Config(format!("unknown rule {other:?}"))),
        }
    }
}

/// What picks the constrained layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Driver {
    Rule(RuleKind),
    /// I.i.d. replay of an emergent matching distribution.
    Bernoulli(BernoulliScheme),
}

impl Driver {
    pub fn label(&self) -> String {
        match self {
            Driver::Rule(r) => r.to_string(),
            Driver::Bernoulli(_) => "bernoulli".into(),
        }
    }
}

/// State carried between layers by the adaptive rules.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleContext {
    pub pbar: f64,
    /// Work change of every qubit across the previous layer.
    pub prev_dw: Vec<f64>,
    /// Partner of every qubit at the previous layer.
    pub prev_partners: Vec<Option<usize>>,
}

impl RuleContext {
    pub fn new(pbar: f64, n: usize) -> Self {
        Self {
            pbar,
            prev_dw: vec![0.0; n],
            prev_partners: vec![None; n],
        }
    }
}

/// Pre-gate pair states and one-layer predictions for every coupling edge.
#[derive(Debug, Clone)]
pub struct EdgePredictions {
    n: usize,
    entries: Vec<Option<(PairReduced, f64, f64)>>,
}

impl EdgePredictions {
    pub fn for_edges(state: &SymmetricState, edges: &[(usize, usize)], gate: &GateParams) -> Result<Self> {
        let n = state.n_qubits();
        let mut entries = vec![None; n * n];
        for &(a, b) in edges {
            let (lo, hi) = (a.min(b), a.max(b));
            let pair = state.pair_reduced(lo, hi)?;
            let z_lo = maps::predicted_z(&pair, lo, gate);
            let z_hi = maps::predicted_z(&pair, hi, gate);
            entries[lo * n + hi] = Some((pair, z_lo, z_hi));
        }
        Ok(Self { n, entries })
    }

    pub fn for_coupling(state: &SymmetricState, coupling: &CouplingGraph, gate: &GateParams) -> Result<Self> {
        Self::for_edges(state, &coupling.edges(), gate)
    }

    fn entry(&self, a: usize, b: usize) -> &(PairReduced, f64, f64) {
        let (lo, hi) = (a.min(b), a.max(b));
        self.entries[lo * self.n + hi]
            .as_ref()
            .expect("edge prediction requested for an uncached pair")
    }

    pub fn pair(&self, a: usize, b: usize) -> &PairReduced {
        &self.entry(a, b).0
    }

    /// Predicted `(z_a, z_b)` after a gate on `(a, b)`.
    pub fn predicted(&self, a: usize, b: usize) -> (f64, f64) {
        let (_, z_lo, z_hi) = *self.entry(a, b);
        if a < b {
            (z_lo, z_hi)
        } else {
            (z_hi, z_lo)
        }
    }

    /// Predicted `z` of every qubit under `pairs`; unpaired qubits keep
    /// their current value from `current`.
    pub fn predict(&self, pairs: &[(usize, usize)], current: &[f64]) -> Vec<f64> {
        let mut z = current.to_vec();
        for &(a, b) in pairs {
            let (za, zb) = self.predicted(a, b);
            z[a] = za;
            z[b] = zb;
        }
        z
    }
}

/// Predicted Bloch `z` of every qubit after one layer, from pair summaries
/// only.
pub fn predict_layer(state: &SymmetricState, matching: &InteractionGraph, gate: &GateParams) -> Result<Vec<f64>> {
    let cache = EdgePredictions::for_edges(state, &matching.pairs, gate)?;
    Ok(cache.predict(&matching.pairs, &state.bloch_z().z))
}

fn z_to_p(z: &[f64]) -> Vec<f64> {
    z.iter().map(|z| 0.5 * (1.0 - z)).collect()
}

/// `sum_q |p_q' - pbar| / 2`.
pub fn score_r2(predicted_z: &[f64], pbar: f64) -> f64 {
    predicted_z
        .iter()
        .map(|z| 0.5 * (0.5 * (1.0 - z) - pbar).abs())
        .sum()
}

fn total_work(p: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (j, t) in measures::reference_temperatures(p).into_iter().enumerate() {
        let t = t.ok_or(Error::SingularTemperature(0.5))?;
        sum += measures::extractable_work(p[j], t)?;
    }
    Ok(sum)
}

/// Total change in extractable work, each side with its own reference
/// temperatures.
pub fn score_r3(predicted_z: &[f64], current_z: &[f64]) -> Result<f64> {
    Ok(total_work(&z_to_p(predicted_z))? - total_work(&z_to_p(current_z))?)
}

/// First index of the largest score; `NaN` never wins.
pub fn argmax_first(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Scores of every catalog entry under R2 or R3.
pub fn catalog_scores(
    rule: RuleKind,
    cache: &EdgePredictions,
    catalog: &MatchingCatalog,
    current_z: &[f64],
    pbar: f64,
) -> Vec<f64> {
    let mut pairs = Vec::with_capacity(current_z.len() / 2);
    (0..catalog.len())
        .map(|i| {
            pairs.clear();
            pairs.extend(catalog.pairs_u8(i).iter().map(|&(a, b)| (a as usize, b as usize)));
            let z = cache.predict(&pairs, current_z);
            match rule {
                RuleKind::R2 => score_r2(&z, pbar),
                RuleKind::R3 => score_r3(&z, current_z).unwrap_or(f64::NEG_INFINITY),
                _ => f64::NEG_INFINITY,
            }
        })
        .collect()
}

fn key(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

/// Qubits by `prev_dw`, descending (R4) or ascending (R5); ties to the
/// lower index.
fn ordered_qubits(prev_dw: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..prev_dw.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (key(prev_dw[a]), key(prev_dw[b]));
        let ord = if descending { y.total_cmp(&x) } else { x.total_cmp(&y) };
        ord.then(a.cmp(&b))
    });
    order
}

/// Predicted work change of `q` with the rest of the network frozen:
/// committed pairs and the candidate pair at their predictions, every other
/// qubit at its current population.
fn frozen_delta_w(q: usize, env_p: &[f64], current_w_q: f64) -> f64 {
    let n = env_p.len();
    let mut sum = 0.0;
    for (i, &p) in env_p.iter().enumerate() {
        if i != q {
            match measures::effective_temperature(p) {
                Ok(t) => sum += t,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
    }
    let t_ref = sum / (n - 1) as f64;
    match measures::extractable_work(env_p[q], t_ref) {
        Ok(w) => key(w - current_w_q),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Unpaired neighbours of `q` whose pairing leaves a completable remainder.
fn open_partners(coupling: &CouplingGraph, q: usize, used: u32) -> Vec<usize> {
    coupling
        .neighbours(q)
        .filter(|&w| used >> w & 1 == 0)
        .filter(|&w| coupling.completable(used | 1 << q | 1 << w))
        .collect()
}

/// Greedy construction led by the previous layer's largest work gains.
pub fn choose_r4(
    state: &SymmetricState,
    cache: &EdgePredictions,
    ctx: &RuleContext,
    catalog: &MatchingCatalog,
) -> Result<InteractionGraph> {
    let coupling = catalog.coupling();
    let p_now = state.populations();
    let w_now = measures::work_profile(&p_now);
    let mut env_p = p_now.clone();
    let mut used = 0u32;
    let mut pairs = Vec::with_capacity(p_now.len() / 2);
    for q in ordered_qubits(&ctx.prev_dw, true) {
        if used >> q & 1 == 1 {
            continue;
        }
        let candidates = open_partners(coupling, q, used);
        let scores = candidates.iter().map(|&w| {
            let (zq, zw) = cache.predicted(q, w);
            let mut trial = env_p.clone();
            trial[q] = 0.5 * (1.0 - zq);
            trial[w] = 0.5 * (1.0 - zw);
            frozen_delta_w(q, &trial, w_now[q])
        });
        let pick = argmax_first(scores).map(|k| candidates[k]).ok_or_else(|| {
            Error::NoMatching(format!("qubit {q} has no completable partner"))
        })?;
        let (zq, zw) = cache.predicted(q, pick);
        env_p[q] = 0.5 * (1.0 - zq);
        env_p[pick] = 0.5 * (1.0 - zw);
        used |= 1 << q | 1 << pick;
        pairs.push((q, pick));
    }
    finish(catalog, &pairs)
}

/// Mimicry: each qubit, weakest first, copies the population gap its best
/// neighbour exploited on the previous layer.
pub fn choose_r5(state: &SymmetricState, ctx: &RuleContext, catalog: &MatchingCatalog) -> Result<InteractionGraph> {
    let coupling = catalog.coupling();
    let p = state.populations();
    let mut used = 0u32;
    let mut pairs = Vec::with_capacity(p.len() / 2);
    for q in ordered_qubits(&ctx.prev_dw, false) {
        if used >> q & 1 == 1 {
            continue;
        }
        let best_neighbour = {
            let nbrs: Vec<usize> = coupling.neighbours(q).collect();
            argmax_first(nbrs.iter().map(|&w| key(ctx.prev_dw[w]))).map(|k| nbrs[k])
        };
        let gap = best_neighbour
            .and_then(|r| ctx.prev_partners[r].map(|s| p[r] - p[s]))
            .unwrap_or(0.0);
        let target = p[q] - gap;
        let candidates = open_partners(coupling, q, used);
        let pick = argmax_first(candidates.iter().map(|&w| -(p[w] - target).abs()))
            .map(|k| candidates[k])
            .ok_or_else(|| Error::NoMatching(format!("qubit {q} has no completable partner")))?;
        used |= 1 << q | 1 << pick;
        pairs.push((q, pick));
    }
    finish(catalog, &pairs)
}

fn finish(catalog: &MatchingCatalog, pairs: &[(usize, usize)]) -> Result<InteractionGraph> {
    let index = catalog
        .index_of(pairs)
        .ok_or_else(|| Error::Invariant(format!("constructed pairs {pairs:?} are not a catalog matching")))?;
    catalog.get(index)
}

/// Next layer's interaction graph. `cache` must cover every coupling edge
/// for R2 to R5.
pub fn choose_matching<R: Rng + ?Sized>(
    driver: &Driver,
    state: &SymmetricState,
    cache: Option<&EdgePredictions>,
    ctx: &RuleContext,
    catalog: &MatchingCatalog,
    rng: &mut R,
) -> Result<InteractionGraph> {
    let need_cache = || {
        cache.ok_or_else(|| Error::Invariant("adaptive rule called without edge predictions".into()))
    };
    match driver {
        Driver::Rule(RuleKind::R1) => Ok(catalog.random(rng)),
        Driver::Bernoulli(scheme) => catalog.get(scheme.sample(rng)),
        Driver::Rule(rule @ (RuleKind::R2 | RuleKind::R3)) => {
            let z = state.bloch_z().z;
            let scores = catalog_scores(*rule, need_cache()?, catalog, &z, ctx.pbar);
            let best = argmax_first(scores).ok_or_else(|| Error::NoMatching("empty catalog".into()))?;
            catalog.get(best)
        }
        Driver::Rule(RuleKind::R4) => choose_r4(state, need_cache()?, ctx, catalog),
        Driver::Rule(RuleKind::R5) => choose_r5(state, ctx, catalog),
    }
}

/// Pair-level record at one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub qa: usize,
    pub qb: usize,
    pub cxx: f64,
    pub czz: f64,
    pub mij: f64,
}

/// Observables after one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub layer: usize,
    /// Catalog index; initialisation layers index the complete-graph catalog.
    pub matching_index: Option<usize>,
    pub constrained: bool,
    pub z: Vec<f64>,
    /// `z(l) - cos^2(theta) z(l-1)`; `NaN` at layer 0.
    pub tau: Vec<f64>,
    pub cp_ok: Vec<bool>,
    pub w_ex: Vec<f64>,
    pub dw_ex: Vec<f64>,
    /// Pre-gate partner data of every qubit; `None` at layer 0.
    pub partners: Vec<Option<PartnerObservation>>,
    pub partner_index: Vec<Option<usize>>,
    pub d_total: f64,
    pub t_total: f64,
    pub pairs: Option<Vec<PairRecord>>,
    pub c_total: Option<f64>,
    pub clustering: Option<f64>,
    pub disparity: Option<f64>,
}

impl LayerRecord {
    pub fn populations(&self) -> Vec<f64> {
        z_to_p(&self.z)
    }
}

/// Largest deviations of the conserved quantities seen during a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InvariantReport {
    pub max_trace_error: f64,
    pub max_charge_drift: f64,
    pub max_purity_drift: f64,
    /// Between `tau` from successive `z` and from the pre-gate pair state.
    pub max_tau_gap: f64,
    pub max_single_qubit_coherence: f64,
    pub max_hermiticity_error: f64,
}

/// Tolerances enforced while recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub trace: f64,
    pub charge: f64,
    pub purity: f64,
    pub tau: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            trace: 1e-12,
            charge: 1e-10,
            purity: 1e-10,
            tau: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub trial: usize,
    pub n_qubits: usize,
    pub init_depth: usize,
    pub gate: GateParams,
    pub initial_populations: Vec<f64>,
    pub pbar: f64,
    /// Layers `0..=total_layers`.
    pub layers: Vec<LayerRecord>,
    pub invariants: InvariantReport,
}

impl TrajectoryRecord {
    /// Matching indices of the constrained layers.
    pub fn constrained_matchings(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.constrained)
            .filter_map(|l| l.matching_index)
            .collect()
    }

    pub fn partner_series(&self) -> maps::PartnerSeries {
        self.layers.iter().map(|l| l.partners.clone()).collect()
    }

    /// Positive work-change runs over the constrained layers.
    pub fn work_runs(&self) -> Vec<usize> {
        let n = self.n_qubits;
        (0..n)
            .flat_map(|q| {
                let series: Vec<f64> = self
                    .layers
                    .iter()
                    .filter(|l| l.constrained)
                    .map(|l| l.dw_ex[q])
                    .collect();
                measures::positive_runs(&series)
            })
            .collect()
    }
}

/// Fixed parameters of a trajectory.
#[derive(Debug, Clone)]
pub struct Evolution<'a> {
    pub gate: GateParams,
    /// Catalog of the constrained layers.
    pub catalog: &'a MatchingCatalog,
    /// Complete-graph catalog of the initialisation layers.
    pub init_catalog: &'a MatchingCatalog,
    pub init_depth: usize,
    pub total_layers: usize,
    /// Pair records every this many layers; 0 disables them.
    pub record_pairs_every: usize,
    pub tolerances: Tolerances,
}

impl Evolution<'_> {
    /// Initialisation through `init_depth` random complete-graph layers, then
    /// constrained layers up to `total_layers`.
    pub fn run<R: Rng + ?Sized>(
        &self,
        trial: usize,
        populations: &[f64],
        driver: &Driver,
        rng: &mut R,
    ) -> Result<TrajectoryRecord> {
        let n = populations.len();
        if self.catalog.coupling().n_qubits() != n || self.init_catalog.coupling().n_qubits() != n {
            return Err(Error::Config("catalog size does not match the network".into()));
        }
        if self.total_layers < self.init_depth {
            return Err(Error::Config(format!(
                "total_layers {} is below init_depth {}",
                self.total_layers, self.init_depth
            )));
        }
        let mut state = SymmetricState::product(populations)?;
        let reference = measures::ThermalReference::from_populations(populations)?;
        let e0: f64 = populations.iter().map(|p| 1.0 - 2.0 * p).sum();
        let purity0 = state.subspace_purities();
        let mut recorder = Recorder {
            evo: self,
            e0,
            purity0,
            pbar: reference.pbar,
            report: InvariantReport::default(),
        };
        let mut layers = Vec::with_capacity(self.total_layers + 1);
        layers.push(recorder.snapshot(&state, 0, None, None, vec![None; n])?);
        let mut ctx = RuleContext::new(reference.pbar, n);
        for layer in 1..=self.total_layers {
            let constrained = layer > self.init_depth;
            let adaptive = matches!(driver, Driver::Rule(r) if *r != RuleKind::R1);
            let (matching, cache) = if constrained {
                let cache = if adaptive {
                    Some(EdgePredictions::for_coupling(&state, self.catalog.coupling(), &self.gate)?)
                } else {
                    None
                };
                let m = choose_matching(driver, &state, cache.as_ref(), &ctx, self.catalog, rng)?;
                (m, cache)
            } else {
                (self.init_catalog.random(rng), None)
            };
            let cache = match cache {
                Some(c) => c,
                None => EdgePredictions::for_edges(&state, &matching.pairs, &self.gate)?,
            };
            let prev = layers.last().expect("layer 0 recorded");
            let mut partners = vec![None; n];
            let mut partner_index = vec![None; n];
            for &(a, b) in &matching.pairs {
                let pair = cache.pair(a, b);
                for (q, r) in [(a, b), (b, a)] {
                    partners[q] = Some(PartnerObservation {
                        partner_z: prev.z[r],
                        coupling: maps::signed_coupling(pair, q, &self.gate),
                    });
                    partner_index[q] = Some(r);
                }
            }
            state.apply_layer(&matching.pairs, &self.gate)?;
            let mut rec = recorder.snapshot(&state, layer, Some(prev), Some(matching.index), partners)?;
            rec.constrained = constrained;
            rec.partner_index = partner_index.clone();
            ctx.prev_dw.clone_from(&rec.dw_ex);
            ctx.prev_partners = partner_index;
            layers.push(rec);
        }
        recorder.check_purity(&state)?;
        Ok(TrajectoryRecord {
            trial,
            n_qubits: n,
            init_depth: self.init_depth,
            gate: self.gate,
            initial_populations: populations.to_vec(),
            pbar: reference.pbar,
            layers,
            invariants: recorder.report,
        })
    }
}

struct Recorder<'a> {
    evo: &'a Evolution<'a>,
    e0: f64,
    purity0: Vec<f64>,
    pbar: f64,
    report: InvariantReport,
}

impl Recorder<'_> {
    fn snapshot(
        &mut self,
        state: &SymmetricState,
        layer: usize,
        prev: Option<&LayerRecord>,
        matching_index: Option<usize>,
        partners: Vec<Option<PartnerObservation>>,
    ) -> Result<LayerRecord> {
        let gate = &self.evo.gate;
        let tol = &self.evo.tolerances;
        let p = state.populations();
        let z: Vec<f64> = p.iter().map(|p| 1.0 - 2.0 * p).collect();

        let trace_err = (state.trace() - 1.0).abs();
        let charge_drift = (z.iter().sum::<f64>() - self.e0).abs();
        self.report.max_trace_error = self.report.max_trace_error.max(trace_err);
        self.report.max_charge_drift = self.report.max_charge_drift.max(charge_drift);
        self.report.max_single_qubit_coherence = self
            .report
            .max_single_qubit_coherence
            .max(state.max_single_qubit_coherence());
        if trace_err > tol.trace {
            return Err(Error::Invariant(format!("trace drifted by {trace_err:e} at layer {layer}")));
        }
        if charge_drift > tol.charge {
            return Err(Error::Invariant(format!("charge drifted by {charge_drift:e} at layer {layer}")));
        }

        let w_ex = measures::work_profile(&p);
        let (tau, cp_ok, dw_ex) = match prev {
            Some(prev) => {
                let tau: Vec<f64> = z
                    .iter()
                    .zip(&prev.z)
                    .map(|(zn, zp)| maps::propagator_from_z(*zp, *zn, gate).tau_z)
                    .collect();
                for (q, obs) in partners.iter().enumerate() {
                    if let Some(obs) = obs {
                        let gap = (tau[q] - maps::tau_from_pair(obs.partner_z, obs.coupling, gate)).abs();
                        self.report.max_tau_gap = self.report.max_tau_gap.max(gap);
                        if gap > tol.tau {
                            return Err(Error::Invariant(format!(
                                "propagator shift disagrees with pair prediction by {gap:e} at layer {layer}"
                            )));
                        }
                    }
                }
                let cp = tau
                    .iter()
                    .map(|&t| maps::cp_check(&maps::PhaseCovMap::z_only(gate.cos2(), t)).is_cp)
                    .collect();
                let dw = w_ex.iter().zip(&prev.w_ex).map(|(a, b)| a - b).collect();
                (tau, cp, dw)
            }
            None => (vec![f64::NAN; z.len()], vec![true; z.len()], vec![0.0; z.len()]),
        };

        let every = self.evo.record_pairs_every;
        let (pairs, c_total, clustering, disparity) = if every > 0 && layer.is_multiple_of(every) {
            let all = state.all_pairs();
            let mi = MiMatrix::from_pairs(state.n_qubits(), &all);
            let records = all
                .iter()
                .map(|pr| {
                    let s = pr.summary_for(pr.lo);
                    PairRecord {
                        qa: pr.lo,
                        qb: pr.hi,
                        cxx: s.cxx,
                        czz: s.czz,
                        mij: mi.get(pr.lo, pr.hi),
                    }
                })
                .collect();
            (
                Some(records),
                Some(measures::total_correlation(&all)),
                mi.clustering(),
                mi.disparity(),
            )
        } else {
            (None, None, None, None)
        };
        if pairs.is_some() {
            self.check_purity(state)?;
        }

        Ok(LayerRecord {
            layer,
            matching_index,
            constrained: false,
            d_total: measures::total_relative_entropy(&p, self.pbar),
            t_total: measures::total_trace_distance(&p, self.pbar),
            z,
            tau,
            cp_ok,
            w_ex,
            dw_ex,
            partners,
            partner_index: vec![None; state.n_qubits()],
            pairs,
            c_total,
            clustering,
            disparity,
        })
    }

    fn check_purity(&mut self, state: &SymmetricState) -> Result<()> {
        let drift = state
            .subspace_purities()
            .iter()
            .zip(&self.purity0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.report.max_purity_drift = self.report.max_purity_drift.max(drift);
        self.report.max_hermiticity_error = self.report.max_hermiticity_error.max(state.hermiticity_error());
        if drift > self.evo.tolerances.purity {
            return Err(Error::Invariant(format!("block purity drifted by {drift:e}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::CouplingKind;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g() -> GateParams {
        GateParams::default()
    }

    fn catalog(n: usize, kind: CouplingKind) -> MatchingCatalog {
        MatchingCatalog::enumerate(&CouplingGraph::new(n, kind).unwrap()).unwrap()
    }

    #[test]
    fn uncorrelated_prediction() {
        let s = SymmetricState::product(&[0.1, 0.4, 0.3, 0.3]).unwrap();
        let m = InteractionGraph {
            pairs: vec![(0, 1), (2, 3)],
            index: 0,
        };
        let z = predict_layer(&s, &m, &g()).unwrap();
        assert_abs_diff_eq!(z[0], 0.7740636372927805, epsilon = 1e-12);
    }

    #[test]
    fn r2_examples() {
        assert_eq!(score_r2(&[0.75; 6], 0.125), 0.0);
        let mut z = vec![0.8; 12];
        z[0] = 0.2;
        assert_abs_diff_eq!(score_r2(&z, 0.125), 0.275, epsilon = 1e-12);
        let mut shuffled = z.clone();
        shuffled.swap(0, 7);
        assert_abs_diff_eq!(score_r2(&z, 0.125), score_r2(&shuffled, 0.125), epsilon = 1e-15);
    }

    #[test]
    fn r3_examples() {
        let z = [0.8, 0.1, 0.3, 0.5];
        assert_eq!(score_r3(&z, &z).unwrap(), 0.0);
        let flat = [0.6; 6];
        assert!(score_r3(&flat, &flat).unwrap().abs() <= 1e-9);
        assert!(score_r3(&[0.0, 0.4], &[0.2, 0.2]).is_err());
    }

    #[test]
    fn argmax_ties_go_to_first() {
        assert_eq!(argmax_first([1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first([f64::NAN, 0.0]), Some(1));
        assert_eq!(argmax_first([f64::NEG_INFINITY, f64::NEG_INFINITY]), Some(0));
        assert_eq!(argmax_first(std::iter::empty()), None);
        let shifted: Vec<f64> = [1.0, 3.0, 3.0, 2.0].iter().map(|x| x + 10.0).collect();
        assert_eq!(argmax_first(shifted), Some(1));
    }

    #[test]
    fn ordering_breaks_ties_by_index() {
        assert_eq!(ordered_qubits(&[0.1, 0.3, 0.3, -0.2], true), vec![1, 2, 0, 3]);
        assert_eq!(ordered_qubits(&[0.1, 0.3, 0.3, -0.2], false), vec![3, 0, 1, 2]);
        assert_eq!(ordered_qubits(&[f64::NAN, 0.0], true), vec![1, 0]);
    }

    #[test]
    fn r5_hand_trace() {
        // populations 0.1, 0.4, 0.25, 0.2 on the complete graph K4.
        // prev_dw ascending: q3 (-0.3), q0 (-0.1), q2 (0.05), q1 (0.2).
        // q3's neighbours {0,1,2}: best prev_dw is q1, whose previous partner
        // was q0: gap = 0.4 - 0.1 = 0.3, target = 0.2 - 0.3 = -0.1.
        // Closest unpaired population: q0 (0.1). Remaining pair (1, 2).
        let s = SymmetricState::product(&[0.1, 0.4, 0.25, 0.2]).unwrap();
        let cat = catalog(4, CouplingKind::Complete);
        let ctx = RuleContext {
            pbar: 0.2375,
            prev_dw: vec![-0.1, 0.2, 0.05, -0.3],
            prev_partners: vec![Some(1), Some(0), Some(3), Some(2)],
        };
        let m = choose_r5(&s, &ctx, &cat).unwrap();
        assert_eq!(m.pairs, vec![(0, 3), (1, 2)]);
    }

    #[test]
    fn r5_equal_populations_fall_back_to_index() {
        let s = SymmetricState::product(&[0.2; 6]).unwrap();
        let cat = catalog(6, CouplingKind::Complete);
        let ctx = RuleContext::new(0.2, 6);
        let m = choose_r5(&s, &ctx, &cat).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    /// Brute-force reading of the greedy criterion on K4: the leader takes
    /// the partner that maximises its own frozen-environment work change,
    /// which fixes the other pair.
    #[test]
    fn r4_matches_brute_force_on_k4() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cat = catalog(4, CouplingKind::Complete);
        for _ in 0..50 {
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.45)).collect();
            let mut s = SymmetricState::product(&p).unwrap();
            s.apply_layer(&cat.random(&mut rng).pairs, &g()).unwrap();
            let prev_dw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ctx = RuleContext {
                pbar: 0.25,
                prev_dw: prev_dw.clone(),
                prev_partners: vec![None; 4],
            };
            let cache = EdgePredictions::for_coupling(&s, cat.coupling(), &g()).unwrap();
            let got = choose_r4(&s, &cache, &ctx, &cat).unwrap();

            let leader = ordered_qubits(&prev_dw, true)[0];
            let p_now = s.populations();
            let w_now = measures::work_profile(&p_now);
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for m in cat.iter() {
                let partner = m.partners()[leader];
                let mut env = p_now.clone();
                let (za, zb) = cache.predicted(leader, partner);
                env[leader] = 0.5 * (1.0 - za);
                env[partner] = 0.5 * (1.0 - zb);
                let t: f64 = (0..4)
                    .filter(|&i| i != leader)
                    .map(|i| measures::effective_temperature(env[i]).unwrap())
                    .sum::<f64>()
                    / 3.0;
                let dw = measures::extractable_work(env[leader], t).unwrap() - w_now[leader];
                if dw > best.0 || (dw == best.0 && partner < best.1) {
                    best = (dw, partner);
                }
            }
            assert_eq!(got.partners()[leader], best.1);
        }
    }

    #[test]
    fn r4_ring_first_choice_fixes_layer() {
        let s = SymmetricState::product(&[0.1, 0.4, 0.1, 0.1, 0.3, 0.1]).unwrap();
        let cat = catalog(6, CouplingKind::Ring);
        let cache = EdgePredictions::for_coupling(&s, cat.coupling(), &g()).unwrap();
        let ctx = RuleContext::new(0.183, 6);
        let m = choose_r4(&s, &cache, &ctx, &cat).unwrap();
        m.validate(cat.coupling()).unwrap();
        assert_eq!(choose_r4(&s, &cache, &ctx, &cat).unwrap(), m);
    }

    #[test]
    fn r2_r3_equal_brute_force_on_c4() {
        let cat = catalog(8, CouplingKind::Circulant4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = vec![0.1; 8];
        p[0] = 0.4;
        let mut s = SymmetricState::product(&p).unwrap();
        let full = catalog(8, CouplingKind::Complete);
        for _ in 0..6 {
            s.apply_layer(&full.random(&mut rng).pairs, &g()).unwrap();
        }
        let ctx = RuleContext::new(0.125, 8);
        let cache = EdgePredictions::for_coupling(&s, cat.coupling(), &g()).unwrap();
        let z = s.bloch_z().z;
        for rule in [RuleKind::R2, RuleKind::R3] {
            let chosen = choose_matching(&Driver::Rule(rule), &s, Some(&cache), &ctx, &cat, &mut rng).unwrap();
            let mut best = (f64::NEG_INFINITY, 0);
            for m in cat.iter() {
                // full-state evolution as the brute-force reference
                let mut t = s.clone();
                t.apply_layer(&m.pairs, &g()).unwrap();
                let zt = t.bloch_z().z;
                let score = match rule {
                    RuleKind::R2 => score_r2(&zt, 0.125),
                    _ => score_r3(&zt, &z).unwrap(),
                };
                if score > best.0 + 1e-12 {
                    best = (score, m.index);
                }
            }
            assert_eq!(chosen.index, best.1, "{rule}");
        }
    }

    #[test]
    fn ring_r2_picks_strictly_better_candidate() {
        let cat = catalog(6, CouplingKind::Ring);
        let s = SymmetricState::product(&[0.4, 0.1, 0.2, 0.1, 0.3, 0.05]).unwrap();
        let cache = EdgePredictions::for_coupling(&s, cat.coupling(), &g()).unwrap();
        let z = s.bloch_z().z;
        let scores = catalog_scores(RuleKind::R2, &cache, &cat, &z, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ctx = RuleContext::new(0.15, 6);
        let m = choose_matching(&Driver::Rule(RuleKind::R2), &s, Some(&cache), &ctx, &cat, &mut rng).unwrap();
        assert!(scores[0] != scores[1]);
        assert_eq!(m.index, if scores[0] > scores[1] { 0 } else { 1 });
    }

    fn short_run(driver: Driver, seed: u64) -> TrajectoryRecord {
        let cat = catalog(6, CouplingKind::Ring);
        let init = catalog(6, CouplingKind::Complete);
        let evo = Evolution {
            gate: g(),
            catalog: &cat,
            init_catalog: &init,
            init_depth: 3,
            total_layers: 20,
            record_pairs_every: 2,
            tolerances: Tolerances::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        evo.run(0, &[0.4, 0.1, 0.1, 0.1, 0.1, 0.1], &driver, &mut rng).unwrap()
    }

    #[test]
    fn trajectory_is_deterministic() {
        for rule in RuleKind::ALL {
            let a = short_run(Driver::Rule(rule), 9);
            let b = short_run(Driver::Rule(rule), 9);
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }

    #[test]
    fn trajectory_shape_and_sum_rule() {
        let rec = short_run(Driver::Rule(RuleKind::R3), 2);
        assert_eq!(rec.layers.len(), 21);
        assert!(rec.layers[..=3].iter().all(|l| !l.constrained));
        assert!(rec.layers[4..].iter().all(|l| l.constrained));
        assert_eq!(rec.constrained_matchings().len(), 17);
        let e: f64 = rec.initial_populations.iter().map(|p| 1.0 - 2.0 * p).sum();
        for l in &rec.layers[1..] {
            let s: f64 = l.tau.iter().sum();
            assert_abs_diff_eq!(s, g().sin2() * e, epsilon = 1e-10);
        }
        assert!(rec.layers[2].pairs.is_some());
        assert!(rec.layers[3].pairs.is_none());
        assert!(rec.invariants.max_tau_gap <= 1e-10);
    }

    #[test]
    fn zero_constrained_layers_only_snapshot() {
        let cat = catalog(4, CouplingKind::Ring);
        let init = catalog(4, CouplingKind::Complete);
        let evo = Evolution {
            gate: g(),
            catalog: &cat,
            init_catalog: &init,
            init_depth: 0,
            total_layers: 0,
            record_pairs_every: 1,
            tolerances: Tolerances::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = evo.run(0, &[0.4, 0.1, 0.1, 0.1], &Driver::Rule(RuleKind::R1), &mut rng).unwrap();
        assert_eq!(rec.layers.len(), 1);
        assert_eq!(rec.layers[0].matching_index, None);
    }

    #[test]
    fn bernoulli_driver_replays_scheme() {
        let cat = catalog(6, CouplingKind::Ring);
        let mut net = crate::graphs::EmergentNetwork::new(&cat);
        net.observe(&cat, 1).unwrap();
        let scheme = BernoulliScheme::from_emergent(&net).unwrap();
        let rec = short_run(Driver::Bernoulli(scheme), 3);
        assert!(rec.constrained_matchings().iter().all(|&i| i == 1));
    }
}
