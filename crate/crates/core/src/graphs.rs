//! Coupling graphs, perfect-matching catalogs, emergent networks and
//! Bernoulli circuits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hardware connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CouplingKind {
    /// Nearest neighbours on a ring (`C = 2`).
    Ring,
    /// Next-nearest neighbours on a ring (`C = 4`).
    Circulant4,
    Complete,
}

impl CouplingKind {
    /// Config spelling: `2`, `4` or `full`.
    pub fn label(&self) -> &'static str {
        match self {
            CouplingKind::Ring => "2",
            CouplingKind::Circulant4 => "4",
            CouplingKind::Complete => "full",
        }
    }
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2" | "ring" | "c2" => Ok(CouplingKind::Ring),
            "4" | "c4" | "circulant" => Ok(CouplingKind::Circulant4),
            "full" | "complete" => Ok(CouplingKind::Complete),
            other => Err(Error::Config(format!(
                "connectivity must be 2, 4 or full, got {other:?}"
            ))),
        }
    }
}

/// Undirected coupling graph on `n` qubits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingGraph {
    n: usize,
    kind: CouplingKind,
    adjacency: Vec<Vec<bool>>,
}

impl CouplingGraph {
    pub fn new(n: usize, kind: CouplingKind) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::QubitCount {
                n,
                reason: "coupling graphs need an even number of qubits",
            });
        }
        if n > 32 {
            return Err(Error::QubitCount {
                n,
                reason: "coupling graphs are limited to 32 qubits",
            });
        }
        let mut adjacency = vec![vec![false; n]; n];
        let reach = match kind {
            CouplingKind::Ring => 1,
            CouplingKind::Circulant4 => 2,
            CouplingKind::Complete => n,
        };
        for (i, row) in adjacency.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let gap = (i + n - j) % n;
                let dist = gap.min(n - gap);
                *cell = i != j && dist <= reach;
            }
        }
        Ok(Self { n, kind, adjacency })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    #[inline]
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && b < self.n && self.adjacency[a][b]
    }

    /// Neighbours of `q` in ascending order.
    pub fn neighbours(&self, q: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[q]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e)
            .map(|(j, _)| j)
    }

    /// Edges `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|a| (a + 1..self.n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.adjacency[a][b])
            .collect()
    }

    /// Whether the qubits not set in `used` admit a perfect matching.
    pub fn completable(&self, used: u32) -> bool {
        let full = if self.n == 32 { u32::MAX } else { (1u32 << self.n) - 1 };
        if self.kind == CouplingKind::Complete {
            return (full & !used).count_ones().is_multiple_of(2);
        }
        self.complete_from(used, full)
    }

    fn complete_from(&self, used: u32, full: u32) -> bool {
        let free = full & !used;
        if free == 0 {
            return true;
        }
        let v = free.trailing_zeros() as usize;
        self.neighbours(v)
            .filter(|&w| free >> w & 1 == 1)
            .any(|w| self.complete_from(used | 1 << v | 1 << w, full))
    }
}

/// One circuit layer: `N/2` disjoint pairs `(a, b)`, `a < b`, sorted by `a`,
/// with its position in the canonical catalog order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionGraph {
    pub pairs: Vec<(usize, usize)>,
    pub index: usize,
}

impl InteractionGraph {
    /// `partner[q]` for every qubit.
    pub fn partners(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; 2 * self.pairs.len()];
        for &(a, b) in &self.pairs {
            out[a] = b;
            out[b] = a;
        }
        out
    }

    /// Checks that the pairs partition `0..n` using coupling edges only.
    pub fn validate(&self, coupling: &CouplingGraph) -> Result<()> {
        let n = coupling.n_qubits();
        if self.pairs.len() * 2 != n {
            return Err(Error::Invariant(format!(
                "matching has {} pairs for {n} qubits",
                self.pairs.len()
            )));
        }
        let mut seen = vec![false; n];
        for &(a, b) in &self.pairs {
            if a >= b || !coupling.has_edge(a, b) || seen[a] || seen[b] {
                return Err(Error::Invariant(format!(
                    "pair ({a}, {b}) breaks the matching on {:?}",
                    coupling.kind()
                )));
            }
            seen[a] = true;
            seen[b] = true;
        }
        Ok(())
    }
}

/// All perfect matchings of a coupling graph in lexicographic order of
/// their sorted pair lists.
#[derive(Debug, Clone)]
pub struct MatchingCatalog {
    coupling: CouplingGraph,
    /// Flattened partner pairs, `n/2` per matching.
    flat: Vec<(u8, u8)>,
}

impl MatchingCatalog {
    pub fn enumerate(coupling: &CouplingGraph) -> Result<Self> {
        let n = coupling.n_qubits();
        let mut flat = Vec::new();
        let mut stack = Vec::with_capacity(n / 2);
        let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
        enumerate_into(coupling, 0, full, &mut stack, &mut flat);
        if flat.is_empty() {
            return Err(Error::NoMatching(format!(
                "{n} qubits with connectivity {}",
                coupling.kind()
            )));
        }
        Ok(Self {
            coupling: coupling.clone(),
            flat,
        })
    }

    pub fn coupling(&self) -> &CouplingGraph {
        &self.coupling
    }

    fn stride(&self) -> usize {
        self.coupling.n_qubits() / 2
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Raw pairs of matching `index`.
    pub fn pairs_u8(&self, index: usize) -> &[(u8, u8)] {
        let s = self.stride();
        &self.flat[index * s..(index + 1) * s]
    }

    pub fn get(&self, index: usize) -> Result<InteractionGraph> {
        if index >= self.len() {
            return Err(Error::MatchingIndex {
                index,
                len: self.len(),
            });
        }
        Ok(InteractionGraph {
            pairs: self
                .pairs_u8(index)
                .iter()
                .map(|&(a, b)| (a as usize, b as usize))
                .collect(),
            index,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = InteractionGraph> + '_ {
        (0..self.len()).map(|i| self.get(i).expect("index in range"))
    }

    /// Catalog position of a set of pairs, in any order or orientation.
    pub fn index_of(&self, pairs: &[(usize, usize)]) -> Option<usize> {
        let mut key: Vec<(u8, u8)> = pairs
            .iter()
            .map(|&(a, b)| (a.min(b) as u8, a.max(b) as u8))
            .collect();
        key.sort_unstable();
        let s = self.stride();
        if key.len() != s {
            return None;
        }
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.pairs_u8(mid).cmp(&key[..]) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Uniform draw. On the complete graph a random permutation paired
    /// adjacently, otherwise a uniform catalog index.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> InteractionGraph {
        let index = if self.coupling.kind() == CouplingKind::Complete {
            let mut perm: Vec<usize> = (0..self.coupling.n_qubits()).collect();
            perm.shuffle(rng);
            let pairs: Vec<(usize, usize)> = perm.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            self.index_of(&pairs).expect("complete catalog holds every matching")
        } else {
            rng.random_range(0..self.len())
        };
        self.get(index).expect("index in range")
    }

    /// SHA-256 of the catalog contents, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}:{}\n", self.coupling.n_qubits(), self.coupling.kind()));
        for i in 0..self.len() {
            let line: Vec<String> = self
                .pairs_u8(i)
                .iter()
                .map(|(a, b)| format!("{a}-{b}"))
                .collect();
            h.update(line.join(","));
            h.update("\n");
        }
        hex::encode(h.finalize())
    }
}

fn enumerate_into(
    coupling: &CouplingGraph,
    used: u32,
    full: u32,
    stack: &mut Vec<(u8, u8)>,
    out: &mut Vec<(u8, u8)>,
) {
    let free = full & !used;
    if free == 0 {
        out.extend_from_slice(stack);
        return;
    }
    let v = free.trailing_zeros() as usize;
    for w in coupling.neighbours(v) {
        if free >> w & 1 == 1 {
            stack.push((v as u8, w as u8));
            enumerate_into(coupling, used | 1 << v | 1 << w, full, stack, out);
            stack.pop();
        }
    }
}

/// `(n - 1)!!`, the number of perfect matchings of the complete graph.
pub fn double_factorial_odd(n: usize) -> u64 {
    (1..n as u64).step_by(2).product::<u64>().max(1)
}

/// Interaction frequencies accumulated over trajectories.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EmergentNetwork {
    pub n_qubits: usize,
    pub connectivity: Option<CouplingKind>,
    pub edge_counts: BTreeMap<(usize, usize), u64>,
    pub matching_counts: BTreeMap<usize, u64>,
    pub layers_observed: u64,
}

#[derive(Serialize, Deserialize)]
struct EmergentJson {
    edges: Vec<(usize, usize, u64)>,
    matchings: Vec<(usize, u64)>,
    layers: u64,
    #[serde(default)]
    n_qubits: Option<usize>,
    #[serde(default)]
    connectivity: Option<String>,
}

impl EmergentNetwork {
    pub fn new(catalog: &MatchingCatalog) -> Self {
        Self {
            n_qubits: catalog.coupling().n_qubits(),
            connectivity: Some(catalog.coupling().kind()),
            ..Self::default()
        }
    }

    /// Counts every layer of every trajectory.
    pub fn accumulate<'a, I>(catalog: &MatchingCatalog, trajectories: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut net = Self::new(catalog);
        for traj in trajectories {
            for &index in traj {
                net.observe(catalog, index)?;
            }
        }
        Ok(net)
    }

    pub fn observe(&mut self, catalog: &MatchingCatalog, index: usize) -> Result<()> {
        if index >= catalog.len() {
            return Err(Error::MatchingIndex {
                index,
                len: catalog.len(),
            });
        }
        for &(a, b) in catalog.pairs_u8(index) {
            *self.edge_counts.entry((a as usize, b as usize)).or_default() += 1;
        }
        *self.matching_counts.entry(index).or_default() += 1;
        self.layers_observed += 1;
        Ok(())
    }

    /// Adds independently accumulated counts.
    pub fn merge(&mut self, other: &EmergentNetwork) -> Result<()> {
        if self.layers_observed > 0 && other.layers_observed > 0 {
            if self.n_qubits != other.n_qubits || self.connectivity != other.connectivity {
                return Err(Error::Data(
                    "cannot merge emergent networks of different coupling graphs".into(),
                ));
            }
        } else if self.layers_observed == 0 {
            self.n_qubits = other.n_qubits;
            self.connectivity = other.connectivity;
        }
        for (k, v) in &other.edge_counts {
            *self.edge_counts.entry(*k).or_default() += v;
        }
        for (k, v) in &other.matching_counts {
            *self.matching_counts.entry(*k).or_default() += v;
        }
        self.layers_observed += other.layers_observed;
        Ok(())
    }

    /// Observed frequency of every catalog entry.
    pub fn matching_frequencies(&self, catalog_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; catalog_len];
        if self.layers_observed == 0 {
            return out;
        }
        for (&i, &c) in &self.matching_counts {
            if i < catalog_len {
                out[i] = c as f64 / self.layers_observed as f64;
            }
        }
        out
    }

    /// Edge weights normalised so the weights at each vertex sum to one.
    /// Returns `(a, b, w_a, w_b)` with `w_a` the share of `a`'s interactions.
    pub fn vertex_normalized_weights(&self) -> Vec<(usize, usize, f64, f64)> {
        let mut strength = vec![0u64; self.n_qubits];
        for (&(a, b), &c) in &self.edge_counts {
            strength[a] += c;
            strength[b] += c;
        }
        self.edge_counts
            .iter()
            .map(|(&(a, b), &c)| {
                (
                    a,
                    b,
                    c as f64 / strength[a] as f64,
                    c as f64 / strength[b] as f64,
                )
            })
            .collect()
    }

    /// Sum and marginalisation identities between the two count maps.
    pub fn check_consistency(&self, catalog: &MatchingCatalog) -> Result<()> {
        let total: u64 = self.matching_counts.values().sum();
        if total != self.layers_observed {
            return Err(Error::Invariant(format!(
                "matching counts sum to {total}, expected {}",
                self.layers_observed
            )));
        }
        let mut edges: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (&i, &c) in &self.matching_counts {
            if i >= catalog.len() {
                return Err(Error::MatchingIndex {
                    index: i,
                    len: catalog.len(),
                });
            }
            for &(a, b) in catalog.pairs_u8(i) {
                *edges.entry((a as usize, b as usize)).or_default() += c;
            }
        }
        if edges != self.edge_counts {
            return Err(Error::Invariant(
                "edge counts disagree with matching counts".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = EmergentJson {
            edges: self
                .edge_counts
                .iter()
                .map(|(&(a, b), &c)| (a, b, c))
                .collect(),
            matchings: self.matching_counts.iter().map(|(&i, &c)| (i, c)).collect(),
            layers: self.layers_observed,
            n_qubits: Some(self.n_qubits),
            connectivity: self.connectivity.map(|k| k.label().to_string()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EmergentJson = serde_json::from_str(text)?;
        let connectivity = doc
            .connectivity
            .as_deref()
            .map(CouplingKind::from_str)
            .transpose()?;
        let n_from_edges = doc.edges.iter().map(|&(_, b, _)| b + 1).max().unwrap_or(0);
        let mut net = Self {
            n_qubits: doc.n_qubits.unwrap_or(n_from_edges),
            connectivity,
            edge_counts: BTreeMap::new(),
            matching_counts: BTreeMap::new(),
            layers_observed: doc.layers,
        };
        for (a, b, c) in doc.edges {
            *net.edge_counts.entry((a.min(b), a.max(b))).or_default() += c;
        }
        for (i, c) in doc.matchings {
            *net.matching_counts.entry(i).or_default() += c;
        }
        Ok(net)
    }
}

/// I.i.d. layer distribution over catalog entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SchemeRepr", into = "SchemeRepr")]
pub struct BernoulliScheme {
    /// `(matching index, probability)`, ascending by index.
    pub probabilities: Vec<(usize, f64)>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    probabilities: Vec<(usize, f64)>,
}

impl From<SchemeRepr> for BernoulliScheme {
    fn from(r: SchemeRepr) -> Self {
        Self::from_probabilities(r.probabilities)
    }
}

impl From<BernoulliScheme> for SchemeRepr {
    fn from(s: BernoulliScheme) -> Self {
        Self {
            probabilities: s.probabilities,
        }
    }
}

impl BernoulliScheme {
    pub fn from_emergent(emergent: &EmergentNetwork) -> Result<Self> {
        if emergent.layers_observed == 0 {
            return Err(Error::EmptyEmergent);
        }
        let total: u64 = emergent.matching_counts.values().sum();
        if total == 0 {
            return Err(Error::EmptyEmergent);
        }
        let probabilities: Vec<(usize, f64)> = emergent
            .matching_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&i, &c)| (i, c as f64 / total as f64))
            .collect();
        Ok(Self::from_probabilities(probabilities))
    }

    fn from_probabilities(probabilities: Vec<(usize, f64)>) -> Self {
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|&(_, p)| {
                acc += p;
                acc
            })
            .collect();
        Self {
            probabilities,
            cumulative,
        }
    }

    /// Probability of matching `index`.
    pub fn probability(&self, index: usize) -> f64 {
        self.probabilities
            .iter()
            .find(|(i, _)| *i == index)
            .map_or(0.0, |&(_, p)| p)
    }

    /// For two-matching catalogs, the probability of the first one.
    pub fn p_b(&self) -> f64 {
        self.probability(0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.probabilities[k.min(self.probabilities.len() - 1)].0
    }
}
