//! Phase-covariant single-qubit maps: propagators between circuit layers,
//! the thermalizing family, complete-positivity tests and ensemble
//! noise reduction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symstate::{GateParams, PairReduced};

/// Slack on the complete-positivity margin.
pub const CP_TOLERANCE: f64 = 1e-12;

/// Map on Pauli components: xy dilation `lambda` with rotation `phi`, z
/// dilation `lambda_z` and z shift `tau_z`. `lambda` and `phi` are `None`
/// when they cannot be observed from diagonal single-qubit states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCovMap {
    pub lambda: Option<f64>,
    pub phi: Option<f64>,
    pub lambda_z: f64,
    pub tau_z: f64,
}

impl PhaseCovMap {
    pub fn z_only(lambda_z: f64, tau_z: f64) -> Self {
        Self {
            lambda: None,
            phi: None,
            lambda_z,
            tau_z,
        }
    }

    /// The 4x4 action on `(1, x, y, z)`, with unset entries taken as zero.
    pub fn matrix(&self) -> [[f64; 4]; 4] {
        let l = self.lambda.unwrap_or(0.0);
        let (s, c) = self.phi.unwrap_or(0.0).sin_cos();
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, l * c, -l * s, 0.0],
            [0.0, l * s, l * c, 0.0],
            [self.tau_z, 0.0, 0.0, self.lambda_z],
        ]
    }

    pub fn apply_z(&self, z: f64) -> f64 {
        self.lambda_z * z + self.tau_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpVerdict {
    pub is_cp: bool,
    /// `(1 - lambda_z) - |tau_z|`; negative when broken.
    pub margin: f64,
}

/// `tau_z = z_next - cos^2(theta) z_prev`.
pub fn propagator_from_z(z_prev: f64, z_next: f64, gate: &GateParams) -> PhaseCovMap {
    let lz = gate.cos2();
    PhaseCovMap::z_only(lz, z_next - lz * z_prev)
}

/// `tau_z = z_b sin^2(theta) + coupling sin(2 theta)`.
///
/// `coupling` is `C^xx` signed for the receiving qubit: `+C^xx` for the
/// lower index of the pair and `-C^xx` for the higher one.
pub fn tau_from_pair(z_b: f64, coupling: f64, gate: &GateParams) -> f64 {
    z_b * gate.sin2() + coupling * gate.sin_2theta()
}

/// Signed coupling of `qubit` within `pair`, including the gate phase.
pub fn signed_coupling(pair: &PairReduced, qubit: usize, gate: &GateParams) -> f64 {
    let rotated = pair.coherence * num_complex::Complex64::from_polar(1.0, -gate.phi);
    let c = 2.0 * rotated.re;
    if qubit == pair.lo {
        c
    } else {
        -c
    }
}

/// One-step prediction of `z` for `qubit` from its pair state.
pub fn predicted_z(pair: &PairReduced, qubit: usize, gate: &GateParams) -> f64 {
    let (z_self, z_partner) = if qubit == pair.lo {
        (pair.z_lo(), pair.z_hi())
    } else {
        (pair.z_hi(), pair.z_lo())
    };
    gate.cos2() * z_self + tau_from_pair(z_partner, signed_coupling(pair, qubit, gate), gate)
}

/// Verdict for the fixed-gate family: `|tau_z| <= 1 - lambda_z`.
pub fn cp_check(map: &PhaseCovMap) -> CpVerdict {
    let margin = (1.0 - map.lambda_z) - map.tau_z.abs();
    CpVerdict {
        is_cp: margin >= -CP_TOLERANCE,
        margin,
    }
}

/// Both general conditions `|lambda_z| + |tau_z| <= 1` and
/// `4 lambda^2 + tau_z^2 <= (1 + lambda_z)^2`. An unset `lambda` takes the
/// value `sqrt(|lambda_z|)` realised by the gate.
pub fn general_cp_conditions(map: &PhaseCovMap) -> (bool, bool) {
    let lambda = map.lambda.unwrap_or_else(|| map.lambda_z.abs().sqrt());
    let first = map.lambda_z.abs() + map.tau_z.abs() <= 1.0 + CP_TOLERANCE;
    let second = 4.0 * lambda * lambda + map.tau_z * map.tau_z
        <= (1.0 + map.lambda_z).powi(2) + 4.0 * CP_TOLERANCE;
    (first, second)
}

/// Channel relaxing every qubit to `z* = E / N`.
pub fn thermalizing_map(e: f64, n: usize, gate: &GateParams) -> Result<PhaseCovMap> {
    if n == 0 || e.abs() > n as f64 {
        return Err(Error::Data(format!("charge {e} impossible for {n} qubits")));
    }
    let lz = gate.cos2();
    Ok(PhaseCovMap::z_only(lz, e / n as f64 * (1.0 - lz)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub z: f64,
    /// False when `|z| > 1`: no state is invariant.
    pub is_state: bool,
}

/// `z* = tau_z / (1 - lambda_z)`.
pub fn map_fixed_point(map: &PhaseCovMap) -> Result<FixedPoint> {
    if map.lambda_z == 1.0 {
        return Err(Error::NoFixedPoint);
    }
    let z = map.tau_z / (1.0 - map.lambda_z);
    Ok(FixedPoint {
        z,
        is_state: z.abs() <= 1.0,
    })
}

/// `k` collisions with fresh partners at `z*`.
pub fn collision_relaxation(z0: f64, z_star: f64, gate: &GateParams, k: u32) -> f64 {
    gate.cos2().powi(k as i32) * (z0 - z_star) + z_star
}

/// Smallest positive `C^xx` that breaks complete positivity against a
/// partner at `z_b`; `None` when it would exceed one half.
pub fn min_cxx_for_ncp(z_b: f64, gate: &GateParams) -> Option<f64> {
    let v = gate.sin2() * (1.0 - z_b) / gate.sin_2theta();
    (v.abs() <= 0.5).then_some(v.max(0.0))
}

/// Partner data a qubit interacted with across one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartnerObservation {
    pub partner_z: f64,
    /// Coupling signed for the receiving qubit.
    pub coupling: f64,
}

/// Per-layer, per-qubit observations of one ensemble member:
/// `series[layer][qubit]`.
pub type PartnerSeries = Vec<Vec<Option<PartnerObservation>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseReducedMap {
    pub map: PhaseCovMap,
    pub verdict: CpVerdict,
    /// Members that contributed.
    pub count: usize,
}

/// Propagators built from ensemble-averaged partner `z` and coupling at
/// every `(layer, qubit)`. Members are averaged over whatever partners they
/// realised.
pub fn noise_reduced_propagators(
    members: &[&PartnerSeries],
    gate: &GateParams,
) -> Result<Vec<Vec<Option<NoiseReducedMap>>>> {
    if members.len() < 2 {
        return Err(Error::Data(
            "noise reduction needs at least two ensemble members".into(),
        ));
    }
    let layers = members[0].len();
    let n = members[0].first().map_or(0, Vec::len);
    if members
        .iter()
        .any(|m| m.len() != layers || m.iter().any(|row| row.len() != n))
    {
        return Err(Error::Data("ensemble members are not layer-aligned".into()));
    }
    let lz = gate.cos2();
    Ok((0..layers)
        .map(|l| {
            (0..n)
                .map(|q| {
                    let obs: Vec<PartnerObservation> =
                        members.iter().filter_map(|m| m[l][q]).collect();
                    if obs.is_empty() {
                        return None;
                    }
                    let k = obs.len() as f64;
                    let zb = obs.iter().map(|o| o.partner_z).sum::<f64>() / k;
                    let c = obs.iter().map(|o| o.coupling).sum::<f64>() / k;
                    let map = PhaseCovMap::z_only(lz, tau_from_pair(zb, c, gate));
                    Some(NoiseReducedMap {
                        map,
                        verdict: cp_check(&map),
                        count: obs.len(),
                    })
                })
                .collect()
        })
        .collect())
}

/// Fraction of non-CP maps among layers `from..=to`.
pub fn non_cp_fraction(maps: &[Vec<Option<NoiseReducedMap>>], from: usize, to: usize) -> Option<f64> {
    let mut total = 0usize;
    let mut broken = 0usize;
    for row in maps.iter().take(to + 1).skip(from) {
        for m in row.iter().flatten() {
            total += 1;
            broken += usize::from(!m.verdict.is_cp);
        }
    }
    (total > 0).then(|| broken as f64 / total as f64)
}
