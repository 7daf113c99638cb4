//! Full Hilbert-space evolution used to cross-check the block representation.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::GateParams;
use crate::error::{Error, Result};

pub const MAX_DENSE_QUBITS: usize = 6;

/// 4x4 gate on two qubits, indexed by `x_lo + 2 x_hi`.
pub fn two_qubit_gate(gate: &GateParams) -> [[Complex64; 4]; 4] {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let u = gate.matrix();
    [
        [one, zero, zero, zero],
        [zero, u[0][0], u[0][1], zero],
        [zero, u[1][0], u[1][1], zero],
        [zero, zero, zero, one],
    ]
}

/// Embeds the 4x4 gate on qubits `(a, b)` into the `2^n` space.
pub fn embed(n: usize, a: usize, b: usize, gate: &GateParams) -> DMatrix<Complex64> {
    let (lo, hi) = (a.min(b), a.max(b));
    let g = two_qubit_gate(gate);
    let dim = 1usize << n;
    let mut out = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let local_col = (col >> lo & 1) | (col >> hi & 1) << 1;
        let rest = col & !(1 << lo) & !(1 << hi);
        for (local_row, g_row) in g.iter().enumerate() {
            let row = rest | (local_row & 1) << lo | (local_row >> 1) << hi;
            out[(row, col)] = g_row[local_col];
        }
    }
    out
}

/// Diagonal product state followed by `layers`, as a row-major `2^n x 2^n`
/// matrix indexed by basis label.
pub fn dense_oracle_evolve(
    populations: &[f64],
    layers: &[Vec<(usize, usize)>],
    gate: &GateParams,
) -> Result<Vec<Complex64>> {
    let n = populations.len();
    if n > MAX_DENSE_QUBITS {
        return Err(Error::QubitCount {
            n,
            reason: "dense oracle limited to 6 qubits",
        });
    }
    let dim = 1usize << n;
    let mut rho = DMatrix::<Complex64>::zeros(dim, dim);
    for label in 0..dim {
        let w: f64 = populations
            .iter()
            .enumerate()
            .map(|(q, &p)| if label >> q & 1 == 1 { p } else { 1.0 - p })
            .product();
        rho[(label, label)] = Complex64::new(w, 0.0);
    }
    for layer in layers {
        for &(a, b) in layer {
            if a >= n || b >= n || a == b {
                return Err(Error::Pair {
                    a,
                    b,
                    reason: "invalid pair for dense oracle",
                });
            }
            let u = embed(n, a, b, gate);
            rho = &u * rho * u.adjoint();
        }
    }
    Ok((0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .map(|(i, j)| rho[(i, j)])
        .collect())
}

/// Off-diagonal magnitude of qubit `q`'s reduced state.
pub fn single_qubit_coherence(rho: &[Complex64], n: usize, q: usize) -> f64 {
    let dim = 1usize << n;
    let mut acc = Complex64::new(0.0, 0.0);
    for label in 0..dim {
        if label >> q & 1 == 0 {
            acc += rho[label * dim + (label | 1 << q)];
        }
    }
    acc.norm()
}
