//! Block-diagonal density matrices for excitation-number-preserving networks.
//!
//! Every gate commutes with the total excitation number, so a state that
//! starts as a product of diagonal qubits stays block diagonal with one block
//! per excitation number `n`. Block `n` is stored as a dense row-major
//! `C(N,n) x C(N,n)` complex matrix over the basis labels with exactly `n`
//! set bits, sorted ascending. Bit `i` of a label set means qubit `i` is
//! excited.
//!
//! The two-qubit gate acts on the ordered sub-basis
//! (lower-index qubit excited, higher-index qubit excited). That ordering fixes
//! the sign with which `C^xx` enters the single-qubit propagators.

pub mod dense;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported network: block storage grows as `C(2N, N)`.
pub const MAX_QUBITS: usize = 14;
pub const MIN_NETWORK_QUBITS: usize = 4;

const ROW_CHUNK: usize = 64;

/// Parameters of the excitation-preserving two-qubit gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub theta: f64,
    pub phi: f64,
    pub omega: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            theta: PI / 15.0,
            phi: 0.0,
            omega: 0.0,
        }
    }
}

impl GateParams {
    pub fn new(theta: f64, phi: f64, omega: f64) -> Self {
        Self { theta, phi, omega }
    }

    pub fn with_theta(theta: f64) -> Self {
        Self {
            theta,
            ..Self::default()
        }
    }

    /// The 2x2 block acting on (lower qubit excited, higher qubit excited).
    pub fn matrix(&self) -> [[Complex64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        let sum = 0.5 * (self.phi + self.omega);
        let diff = 0.5 * (self.phi - self.omega);
        [
            [
                Complex64::from_polar(c, -sum),
                -Complex64::from_polar(s, diff),
            ],
            [
                Complex64::from_polar(s, -diff),
                Complex64::from_polar(c, sum),
            ],
        ]
    }

    /// Parameters of `U^dagger`.
    pub fn inverse(&self) -> Self {
        Self {
            theta: -self.theta,
            phi: -self.omega,
            omega: -self.phi,
        }
    }

    pub fn is_phase_free(&self) -> bool {
        self.phi == 0.0 && self.omega == 0.0
    }

    /// `lambda_z = cos^2(theta)`.
    pub fn cos2(&self) -> f64 {
        self.theta.cos().powi(2)
    }

    pub fn sin2(&self) -> f64 {
        self.theta.sin().powi(2)
    }

    pub fn sin_2theta(&self) -> f64 {
        (2.0 * self.theta).sin()
    }
}

/// Size and gate of a simulated network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n_qubits: usize,
    pub gate: GateParams,
}

impl NetworkSpec {
    pub fn new(n_qubits: usize, gate: GateParams) -> Result<Self> {
        if !n_qubits.is_multiple_of(2) {
            return Err(Error::QubitCount {
                n: n_qubits,
                reason: "network size must be even",
            });
        }
        if !(MIN_NETWORK_QUBITS..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::QubitCount {
                n: n_qubits,
                reason: "network size must lie in [4, 14]",
            });
        }
        Ok(Self { n_qubits, gate })
    }
}

/// Basis labels of each excitation block and the reverse lookup
/// label -> position within its block.
#[derive(Debug)]
pub struct Basis {
    n_qubits: usize,
    labels: Vec<Vec<u32>>,
    position: Vec<u32>,
}

impl Basis {
    fn new(n_qubits: usize) -> Self {
        let mut labels = vec![Vec::new(); n_qubits + 1];
        let mut position = vec![0u32; 1 << n_qubits];
        for label in 0..(1u32 << n_qubits) {
            let block = &mut labels[label.count_ones() as usize];
            position[label as usize] = block.len() as u32;
            block.push(label);
        }
        Self {
            n_qubits,
            labels,
            position,
        }
    }

    /// Shared basis for `n_qubits`; built once per size.
    pub fn shared(n_qubits: usize) -> Arc<Basis> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Basis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("basis cache poisoned");
        guard
            .entry(n_qubits)
            .or_insert_with(|| Arc::new(Basis::new(n_qubits)))
            .clone()
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn labels(&self, block: usize) -> &[u32] {
        &self.labels[block]
    }

    #[inline]
    pub fn position(&self, label: u32) -> usize {
        self.position[label as usize] as usize
    }
}

/// Reduced two-qubit state of the pair `(lo, hi)`, `lo < hi`.
///
/// Populations are indexed by which qubit is excited; `coherence` is
/// `<lo excited| rho |hi excited>`. All other matrix elements vanish by
/// symmetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairReduced {
    pub lo: usize,
    pub hi: usize,
    pub p_none: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub p_both: f64,
    pub coherence: Complex64,
}

impl PairReduced {
    pub fn z_lo(&self) -> f64 {
        1.0 - 2.0 * (self.p_lo + self.p_both)
    }

    pub fn z_hi(&self) -> f64 {
        1.0 - 2.0 * (self.p_hi + self.p_both)
    }

    /// Eigenvalues of the 4x4 reduced density matrix.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let mean = 0.5 * (self.p_lo + self.p_hi);
        let half_gap = 0.5 * (self.p_lo - self.p_hi);
        let radius = (half_gap * half_gap + self.coherence.norm_sqr()).sqrt();
        [self.p_none, self.p_both, mean + radius, mean - radius]
    }

    /// Magnitude of the Pauli components excluded from the symmetric form,
    /// i.e. the `sigma_x sigma_y - sigma_y sigma_x` coefficient.
    pub fn forbidden_residual(&self) -> f64 {
        2.0 * self.coherence.im.abs()
    }

    /// Summary with `a` reported first.
    pub fn summary_for(&self, a: usize) -> TwoQubitSummary {
        let (z_a, z_b) = if a == self.lo {
            (self.z_lo(), self.z_hi())
        } else {
            (self.z_hi(), self.z_lo())
        };
        TwoQubitSummary {
            z_a,
            z_b,
            czz: self.p_none + self.p_both - self.p_lo - self.p_hi,
            cxx: 2.0 * self.coherence.re,
        }
    }
}

/// Pauli parameterization `(z_a, z_b, C^zz, C^xx)` of a symmetric pair state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitSummary {
    pub z_a: f64,
    pub z_b: f64,
    pub czz: f64,
    pub cxx: f64,
}

impl TwoQubitSummary {
    /// 4x4 matrix in the basis `|x_a x_b>` with index `2 x_a + x_b`.
    pub fn density_matrix(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = 0.25 * (1.0 + self.z_a + self.z_b + self.czz);
        m[1][1] = 0.25 * (1.0 + self.z_a - self.z_b - self.czz);
        m[2][2] = 0.25 * (1.0 - self.z_a + self.z_b - self.czz);
        m[3][3] = 0.25 * (1.0 - self.z_a - self.z_b + self.czz);
        m[1][2] = 0.5 * self.cxx;
        m[2][1] = 0.5 * self.cxx;
        m
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let m = self.density_matrix();
        let mean = 0.5 * (m[1][1] + m[2][2]);
        let half_gap = 0.5 * (m[1][1] - m[2][2]);
        let radius = (half_gap * half_gap + m[1][2] * m[1][2]).sqrt();
        [m[0][0], m[3][3], mean + radius, mean - radius]
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        self.eigenvalues().iter().all(|&l| l >= -tol)
    }
}

/// Single-qubit Bloch z components of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochZVector {
    pub z: Vec<f64>,
}

impl BlochZVector {
    pub fn populations(&self) -> Vec<f64> {
        self.z.iter().map(|z| 0.5 * (1.0 - z)).collect()
    }

    /// Conserved charge `E = sum_q z_q`.
    pub fn charge(&self) -> f64 {
        self.z.iter().sum()
    }
}

/// Exact N-qubit state stored as one dense block per excitation number.
#[derive(Debug, Clone)]
pub struct SymmetricState {
    basis: Arc<Basis>,
    blocks: Vec<Vec<Complex64>>,
}

impl SymmetricState {
    /// Product of diagonal qubits with excited populations `populations`.
    pub fn product(populations: &[f64]) -> Result<Self> {
        let n = populations.len();
        if !n.is_multiple_of(2) || n == 0 {
            return Err(Error::QubitCount {
                n,
                reason: "network size must be even and nonzero",
            });
        }
        if n > MAX_QUBITS {
            return Err(Error::QubitCount {
                n,
                reason: "block storage refused above 14 qubits",
            });
        }
        for (qubit, &value) in populations.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Population { qubit, value });
            }
        }
        let basis = Basis::shared(n);
        let blocks = (0..=n)
            .map(|block| {
                let labels = basis.labels(block);
                let d = labels.len();
                let mut data = vec![Complex64::new(0.0, 0.0); d * d];
                for (k, &label) in labels.iter().enumerate() {
                    let weight: f64 = populations
                        .iter()
                        .enumerate()
                        .map(|(q, &p)| if label >> q & 1 == 1 { p } else { 1.0 - p })
                        .product();
                    data[k * d + k] = Complex64::new(weight, 0.0);
                }
                data
            })
            .collect();
        Ok(Self { basis, blocks })
    }

    pub fn n_qubits(&self) -> usize {
        self.basis.n_qubits
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// Row-major data of excitation block `n`.
    pub fn block(&self, n: usize) -> &[Complex64] {
        &self.blocks[n]
    }

    pub fn block_dim(&self, n: usize) -> usize {
        self.basis.labels(n).len()
    }

    /// Number of stored complex entries, `C(2N, N)`.
    pub fn stored_entries(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn trace(&self) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(n, data)| {
                let d = self.block_dim(n);
                (0..d).map(|k| data[k * d + k].re).sum::<f64>()
            })
            .sum()
    }

    fn check_qubit(&self, index: usize) -> Result<()> {
        if index >= self.n_qubits() {
            Err(Error::QubitIndex {
                index,
                n: self.n_qubits(),
            })
        } else {
            Ok(())
        }
    }

    /// Validates a layer and returns its pairs as `(lo, hi)`.
    fn normalize_pairs(&self, pairs: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
        let mut used = 0u32;
        let mut out = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            self.check_qubit(a)?;
            self.check_qubit(b)?;
            if a == b {
                return Err(Error::Pair {
                    a,
                    b,
                    reason: "a gate needs two distinct qubits",
                });
            }
            let mask = (1u32 << a) | (1u32 << b);
            if used & mask != 0 {
                return Err(Error::Pair {
                    a,
                    b,
                    reason: "pairs within one layer must be disjoint",
                });
            }
            used |= mask;
            out.push((a.min(b), a.max(b)));
        }
        Ok(out)
    }

    /// Applies the gate to the pair `(a, b)`.
    pub fn apply_pair_gate(&mut self, a: usize, b: usize, gate: &GateParams) -> Result<()> {
        self.apply_layer(&[(a, b)], gate)
    }

    /// Applies one gate per disjoint pair: `rho -> L rho L^dagger`.
    ///
    /// Left multiplication sweeps row pairs in column chunks; right
    /// multiplication sweeps column pairs within each row.
    pub fn apply_layer(&mut self, pairs: &[(usize, usize)], gate: &GateParams) -> Result<()> {
        let pairs = self.normalize_pairs(pairs)?;
        if pairs.is_empty() {
            return Ok(());
        }
        let basis = self.basis.clone();
        for (n, data) in self.blocks.iter_mut().enumerate() {
            let labels = basis.labels(n);
            let d = labels.len();
            if d < 2 {
                continue;
            }
            let sweeps: Vec<Vec<(usize, usize)>> = pairs
                .iter()
                .map(|&(lo, hi)| {
                    let flip = (1u32 << lo) | (1u32 << hi);
                    labels
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l >> lo & 1 == 1 && l >> hi & 1 == 0)
                        .map(|(i, &l)| (i, basis.position(l ^ flip)))
                        .collect()
                })
                .collect();
            conjugate_block(data, d, &sweeps, gate);
        }
        Ok(())
    }

    /// `z_q = Tr[rho_q sigma_z]`.
    pub fn qubit_bloch_z(&self, q: usize) -> Result<f64> {
        self.check_qubit(q)?;
        Ok(1.0 - 2.0 * self.populations()[q])
    }

    /// Excited populations of every qubit, from one pass over the diagonals.
    pub fn populations(&self) -> Vec<f64> {
        let n = self.n_qubits();
        let mut p = vec![0.0; n];
        for (block, data) in self.blocks.iter().enumerate() {
            let labels = self.basis.labels(block);
            let d = labels.len();
            for (k, &label) in labels.iter().enumerate() {
                let w = data[k * d + k].re;
                let mut bits = label;
                while bits != 0 {
                    let q = bits.trailing_zeros() as usize;
                    p[q] += w;
                    bits &= bits - 1;
                }
            }
        }
        p
    }

    pub fn bloch_z(&self) -> BlochZVector {
        BlochZVector {
            z: self.populations().iter().map(|p| 1.0 - 2.0 * p).collect(),
        }
    }

    /// Largest single-qubit coherence `|<0|rho_q|1>|`.
    ///
    /// `rho_q`'s off-diagonal collects elements between blocks whose
    /// excitation numbers differ by one; block storage holds none, so this is
    /// identically zero. The dense oracle checks the same quantity
    /// numerically.
    pub fn max_single_qubit_coherence(&self) -> f64 {
        0.0
    }

    /// Reduced state of the pair `{a, b}`.
    pub fn pair_reduced(&self, a: usize, b: usize) -> Result<PairReduced> {
        self.check_qubit(a)?;
        self.check_qubit(b)?;
        if a == b {
            return Err(Error::Pair {
                a,
                b,
                reason: "pair summary needs two distinct qubits",
            });
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let mut p = [0.0f64; 4];
        let mut coherence = Complex64::new(0.0, 0.0);
        let flip = (1u32 << lo) | (1u32 << hi);
        for (block, data) in self.blocks.iter().enumerate() {
            let labels = self.basis.labels(block);
            let d = labels.len();
            for (k, &label) in labels.iter().enumerate() {
                let bit_lo = (label >> lo & 1) as usize;
                let bit_hi = (label >> hi & 1) as usize;
                p[bit_lo | bit_hi << 1] += data[k * d + k].re;
                if bit_lo == 1 && bit_hi == 0 {
                    let j = self.basis.position(label ^ flip);
                    coherence += data[k * d + j];
                }
            }
        }
        Ok(PairReduced {
            lo,
            hi,
            p_none: p[0],
            p_lo: p[1],
            p_hi: p[2],
            p_both: p[3],
            coherence,
        })
    }

    pub fn pair_summary(&self, a: usize, b: usize) -> Result<TwoQubitSummary> {
        Ok(self.pair_reduced(a, b)?.summary_for(a))
    }

    /// Reduced states of every pair `a < b`, in row-major upper-triangle order.
    pub fn all_pairs(&self) -> Vec<PairReduced> {
        let n = self.n_qubits();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for a in 0..n {
            for b in a + 1..n {
                out.push(self.pair_reduced(a, b).expect("indices in range"));
            }
        }
        out
    }

    /// `gamma_(n) = Tr[rho_(n)^2]` for every block.
    pub fn subspace_purities(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|data| data.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    /// Largest deviation from Hermiticity over all blocks.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (n, data) in self.blocks.iter().enumerate() {
            let d = self.block_dim(n);
            for i in 0..d {
                for j in i..d {
                    worst = worst.max((data[i * d + j] - data[j * d + i].conj()).norm());
                }
            }
        }
        worst
    }

    /// Smallest eigenvalue over all blocks. Costs a full Hermitian
    /// eigendecomposition per block; meant for tests.
    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(n, data)| {
                let d = self.block_dim(n);
                let m = DMatrix::from_row_slice(d, d, data);
                m.symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Full `2^N x 2^N` row-major matrix indexed by label.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let dim = 1usize << self.n_qubits();
        let mut out = vec![Complex64::new(0.0, 0.0); dim * dim];
        for (n, data) in self.blocks.iter().enumerate() {
            let labels = self.basis.labels(n);
            let d = labels.len();
            for (i, &li) in labels.iter().enumerate() {
                for (j, &lj) in labels.iter().enumerate() {
                    out[li as usize * dim + lj as usize] = data[i * d + j];
                }
            }
        }
        out
    }
}

/// 2x2 mixing of a pair of amplitudes.
trait Mixer: Copy {
    fn mix(self, a: Complex64, b: Complex64) -> (Complex64, Complex64);
}

#[derive(Clone, Copy)]
struct RealRotation {
    c: f64,
    s: f64,
}

impl Mixer for RealRotation {
    #[inline(always)]
    fn mix(self, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        (a * self.c - b * self.s, a * self.s + b * self.c)
    }
}

#[derive(Clone, Copy)]
struct ComplexBlock([[Complex64; 2]; 2]);

impl Mixer for ComplexBlock {
    #[inline(always)]
    fn mix(self, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        let m = self.0;
        (m[0][0] * a + m[0][1] * b, m[1][0] * a + m[1][1] * b)
    }
}

/// `rho -> L rho L^dagger` on one block.
fn conjugate_block(data: &mut [Complex64], d: usize, sweeps: &[Vec<(usize, usize)>], gate: &GateParams) {
    if gate.is_phase_free() {
        let (s, c) = gate.theta.sin_cos();
        let m = RealRotation { c, s };
        row_sweep(data, d, sweeps, m);
        column_sweep(data, d, sweeps, m);
    } else {
        let u = gate.matrix();
        let v = [
            [u[0][0].conj(), u[0][1].conj()],
            [u[1][0].conj(), u[1][1].conj()],
        ];
        row_sweep(data, d, sweeps, ComplexBlock(u));
        column_sweep(data, d, sweeps, ComplexBlock(v));
    }
}

/// Mixes row pairs `(i, j)` of every sweep, column chunk by column chunk so
/// all sweeps reuse the cached chunk.
fn row_sweep<M: Mixer>(data: &mut [Complex64], d: usize, sweeps: &[Vec<(usize, usize)>], m: M) {
    let mut c0 = 0;
    while c0 < d {
        let c1 = (c0 + ROW_CHUNK).min(d);
        for sweep in sweeps {
            for &(i, j) in sweep {
                // i < j: the partner label carries the higher bit.
                let (head, tail) = data.split_at_mut(j * d);
                let ri = &mut head[i * d + c0..i * d + c1];
                let rj = &mut tail[c0..c1];
                for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
                    (*x, *y) = m.mix(*x, *y);
                }
            }
        }
        c0 = c1;
    }
}

/// Mixes column pairs, one row at a time so the gathered pairs stay in L1.
fn column_sweep<M: Mixer>(data: &mut [Complex64], d: usize, sweeps: &[Vec<(usize, usize)>], m: M) {
    for row in data.chunks_exact_mut(d) {
        for sweep in sweeps {
            for &(i, j) in sweep {
                (row[i], row[j]) = m.mix(row[i], row[j]);
            }
        }
    }
}
