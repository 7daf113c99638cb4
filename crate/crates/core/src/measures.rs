//! Thermodynamic and information-theoretic diagnostics. All logarithms are
//! natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symstate::{PairReduced, SymmetricState};

/// Populations are clamped to `[EPS, 1 - EPS]` before any logarithm.
pub const EPS: f64 = 1e-12;

#[inline]
pub fn clamp_p(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Max-entropy product state at fixed charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalReference {
    pub pbar: f64,
    pub zbar: f64,
}

impl ThermalReference {
    /// From the conserved charge `E = sum_q z_q` of `n` qubits.
    pub fn from_charge(e: f64, n: usize) -> Result<Self> {
        let zbar = e / n as f64;
        let pbar = 0.5 * (1.0 - zbar);
        if !(0.0..=1.0).contains(&pbar) {
            return Err(Error::Population {
                qubit: usize::MAX,
                value: pbar,
            });
        }
        Ok(Self { pbar, zbar })
    }

    pub fn from_populations(populations: &[f64]) -> Result<Self> {
        let e: f64 = populations.iter().map(|p| 1.0 - 2.0 * p).sum();
        Self::from_charge(e, populations.len())
    }
}

pub fn binary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    for x in [p, 1.0 - p] {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

/// `D(p || q)` between diagonal qubits, both clamped.
pub fn binary_relative_entropy(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_p(p), clamp_p(q));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// `sum_q |p_q - pbar| / 2`.
pub fn total_trace_distance(populations: &[f64], pbar: f64) -> f64 {
    populations.iter().map(|p| 0.5 * (p - pbar).abs()).sum()
}

/// Sum of single-qubit relative entropies to the thermal reference.
/// A pure reference with any mismatched population gives `+inf`.
pub fn total_relative_entropy(populations: &[f64], pbar: f64) -> f64 {
    if (pbar == 0.0 || pbar == 1.0) && populations.iter().any(|&p| p != pbar) {
        return f64::INFINITY;
    }
    populations
        .iter()
        .map(|&p| binary_relative_entropy(p, pbar))
        .sum()
}

/// `T(p) = 1 / ln((1 - p) / p)`; negative above one half.
pub fn effective_temperature(p: f64) -> Result<f64> {
    let p = clamp_p(p);
    let l = ((1.0 - p) / p).ln();
    if l == 0.0 {
        return Err(Error::SingularTemperature(p));
    }
    Ok(1.0 / l)
}

/// Mean temperature of every qubit but `j`.
pub fn reference_temperature(populations: &[f64], j: usize) -> Result<f64> {
    let n = populations.len();
    if j >= n {
        return Err(Error::QubitIndex { index: j, n });
    }
    if n < 2 {
        return Err(Error::Data("reference temperature needs two qubits".into()));
    }
    let mut sum = 0.0;
    for (i, &p) in populations.iter().enumerate() {
        if i != j {
            sum += effective_temperature(p)?;
        }
    }
    Ok(sum / (n - 1) as f64)
}

/// `reference_temperature` for every qubit from one temperature sum;
/// `None` where another qubit sits at the singular point.
pub fn reference_temperatures(populations: &[f64]) -> Vec<Option<f64>> {
    let n = populations.len();
    let temps: Vec<Option<f64>> = populations
        .iter()
        .map(|&p| effective_temperature(p).ok())
        .collect();
    let singular = temps.iter().filter(|t| t.is_none()).count();
    let sum: f64 = temps.iter().flatten().sum();
    temps
        .iter()
        .map(|t| match (t, singular) {
            (Some(t), 0) => Some((sum - t) / (n - 1) as f64),
            (None, 1) => Some(sum / (n - 1) as f64),
            _ => None,
        })
        .collect()
}

/// Excited population of a qubit thermal at `t`.
pub fn thermal_population(t: f64) -> f64 {
    1.0 / (1.0 + (1.0 / t).exp())
}

/// `W = T D(p || p_th(T))`. Negative `T` gives a signed (negative) value.
pub fn extractable_work(p: f64, t_ref: f64) -> Result<f64> {
    if !t_ref.is_finite() || t_ref == 0.0 {
        return Err(Error::SingularTemperature(t_ref));
    }
    Ok(t_ref * binary_relative_entropy(p, thermal_population(t_ref)))
}

/// `W^ex` of every qubit against its own reference temperature; `NaN` where
/// the reference is singular.
pub fn work_profile(populations: &[f64]) -> Vec<f64> {
    populations
        .iter()
        .zip(reference_temperatures(populations))
        .map(|(&p, t)| t.and_then(|t| extractable_work(p, t).ok()).unwrap_or(f64::NAN))
        .collect()
}

/// Work values obtained at negative reference temperature.
pub fn is_work_anomalous(w: f64) -> bool {
    w < 0.0
}

/// Lengths of maximal runs of strictly positive values.
pub fn positive_runs(series: &[f64]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = 0;
    for &x in series {
        if x > 0.0 {
            current += 1;
        } else if current > 0 {
            runs.push(current);
            current = 0;
        }
    }
    if current > 0 {
        runs.push(current);
    }
    runs
}

/// Mode of the run-length histogram times its frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistenceStat {
    pub l_mode: usize,
    pub frequency: usize,
    pub l_stat: usize,
}

pub fn persistence_stat(runs: &[usize]) -> PersistenceStat {
    let mut hist = std::collections::BTreeMap::<usize, usize>::new();
    for &r in runs {
        *hist.entry(r).or_default() += 1;
    }
    let (l_mode, frequency) = hist
        .iter()
        .fold((0, 0), |best, (&l, &f)| if f >= best.1 { (l, f) } else { best });
    PersistenceStat {
        l_mode,
        frequency,
        l_stat: l_mode * frequency,
    }
}

/// Per-qubit work series and their positive runs.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkLedger {
    /// `w[layer][qubit]`.
    pub w: Vec<Vec<f64>>,
    /// `dw[layer][qubit]`, with `dw[0]` zero.
    pub dw: Vec<Vec<f64>>,
}

impl WorkLedger {
    pub fn from_populations(series: &[Vec<f64>]) -> Self {
        let w: Vec<Vec<f64>> = series.iter().map(|p| work_profile(p)).collect();
        let dw = w
            .iter()
            .enumerate()
            .map(|(l, row)| {
                if l == 0 {
                    vec![0.0; row.len()]
                } else {
                    row.iter().zip(&w[l - 1]).map(|(a, b)| a - b).collect()
                }
            })
            .collect();
        Self { w, dw }
    }

    /// Runs of every qubit counted from layer `from` on.
    pub fn runs(&self, from: usize) -> Vec<usize> {
        let n = self.dw.first().map_or(0, Vec::len);
        (0..n)
            .flat_map(|q| {
                let series: Vec<f64> = self.dw.iter().skip(from).map(|row| row[q]).collect();
                positive_runs(&series)
            })
            .collect()
    }
}

/// Von Neumann entropy of a spectrum, ignoring non-positive eigenvalues.
pub fn spectrum_entropy(eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| -l * l.ln())
        .sum()
}

/// Entropy roundoff; smaller mutual information is reported as zero.
pub const MI_FLOOR: f64 = 1e-13;

/// `M = (S_a + S_b - S_ab) / 2`.
pub fn pair_mutual_information(pair: &PairReduced) -> f64 {
    let s_a = binary_entropy(0.5 * (1.0 - pair.z_lo()));
    let s_b = binary_entropy(0.5 * (1.0 - pair.z_hi()));
    let s_ab = spectrum_entropy(&pair.eigenvalues());
    let m = 0.5 * (s_a + s_b - s_ab);
    if m < MI_FLOOR {
        0.0
    } else {
        m
    }
}

/// Symmetric mutual-information matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiMatrix {
    pub n: usize,
    /// Row-major `n x n`.
    pub data: Vec<f64>,
}

impl MiMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_pairs(n: usize, pairs: &[PairReduced]) -> Self {
        let mut m = Self::zeros(n);
        for p in pairs {
            m.set(p.lo, p.hi, pair_mutual_information(p));
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    fn square(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * self.get(k, j);
                }
            }
        }
        out
    }

    /// `Tr[M^3] / sum_{j != k} [M^2]_jk`; `None` when the denominator vanishes.
    pub fn clustering(&self) -> Option<f64> {
        let n = self.n;
        let m2 = self.square();
        let mut trace = 0.0;
        let mut denom = 0.0;
        for i in 0..n {
            for j in 0..n {
                trace += m2[i * n + j] * self.get(j, i);
                if i != j {
                    denom += m2[i * n + j];
                }
            }
        }
        (denom > 0.0).then(|| trace / denom)
    }

    /// `Y_i = sum_j M_ij^2 / (sum_j M_ij)^2`; `None` for an isolated vertex.
    pub fn vertex_disparity(&self, i: usize) -> Option<f64> {
        let row = &self.data[i * self.n..(i + 1) * self.n];
        let s: f64 = row.iter().sum();
        (s > 0.0).then(|| row.iter().map(|w| w * w).sum::<f64>() / (s * s))
    }

    /// Mean disparity over vertices with nonzero strength.
    pub fn disparity(&self) -> Option<f64> {
        let vals: Vec<f64> = (0..self.n).filter_map(|i| self.vertex_disparity(i)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn mi_matrix(state: &SymmetricState) -> MiMatrix {
    MiMatrix::from_pairs(state.n_qubits(), &state.all_pairs())
}

/// `sum_{a<b} |C^xx_ab| / 4`.
pub fn total_correlation(pairs: &[PairReduced]) -> f64 {
    0.25 * pairs.iter().map(|p| (2.0 * p.coherence.re).abs()).sum::<f64>()
}

pub fn total_correlation_of(state: &SymmetricState) -> f64 {
    total_correlation(&state.all_pairs())
}

/// Off-diagonal weight of one excitation block against the purity it must
/// account for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityBudget {
    /// `sum_{m != k} |rho_mk|^2`.
    pub lhs: f64,
    /// `sum_m l_m^2 - sum_m |rho_mm|^2` with `l_m` the initial diagonal.
    pub rhs: f64,
}

impl PurityBudget {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

pub fn purity_budget(state: &SymmetricState, initial_populations: &[f64]) -> Result<Vec<PurityBudget>> {
    let n = state.n_qubits();
    if initial_populations.len() != n {
        return Err(Error::Data(format!(
            "{} initial populations for {n} qubits",
            initial_populations.len()
        )));
    }
    Ok((0..=n)
        .map(|block| {
            let labels = state.basis().labels(block);
            let d = labels.len();
            let data = state.block(block);
            let initial: f64 = labels
                .iter()
                .map(|&label| {
                    initial_populations
                        .iter()
                        .enumerate()
                        .map(|(q, &p)| if label >> q & 1 == 1 { p } else { 1.0 - p })
                        .product::<f64>()
                        .powi(2)
                })
                .sum();
            let total: f64 = data.iter().map(|z| z.norm_sqr()).sum();
            let diag: f64 = (0..d).map(|k| data[k * d + k].norm_sqr()).sum();
            PurityBudget {
                lhs: total - diag,
                rhs: initial - diag,
            }
        })
        .collect())
}
