//! The ℭ_N state family, connectedness checks, and a brute-force search for
//! entanglement persistence.
//!
//! Persistence here is operational: the fewest single-qubit measurements
//! after which every outcome branch is a full product state.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{build_cluster, build_schedule};
use crate::error::{capacity, Error, Result};
use crate::gates::u_bell;
use crate::state::{
    kernel, schmidt_rank, state_fidelity, Basis, OutcomeSource, StateVector, IMPOSSIBLE_PROB,
    RANK_TOL,
};

pub const MAX_MPMC_QUBITS: usize = 20;
pub const MAX_CONNECTEDNESS_QUBITS: usize = 14;
pub const MAX_PERSISTENCE_QUBITS: usize = 10;
pub const MAX_EXPANSION_QUBITS: usize = 12;
/// A branch is product when every single-qubit cut has second Schmidt
/// coefficient below this.
pub const PRODUCT_TOL: f64 = 1e-8;
/// Default number of random basis assignments tried per qubit subset.
pub const DEFAULT_GENERAL_SAMPLES: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Two layers of U^Bell gates on ∣0…0⟩.
    Layered,
    /// ℭₙ = (ℭₙ₋₁∣0⟩ + ℭ⊥ₙ₋₁∣1⟩)/√2, ℭ⊥ₙ = (ℭₙ₋₁∣1⟩ + ℭ⊥ₙ₋₁∣0⟩)/√2.
    Recursive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpmcState {
    pub n: usize,
    pub construction: Construction,
    pub state: StateVector,
}

fn check_n(n: usize, limit: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 qubits, got {n}")));
    }
    capacity("qubits", n, limit)
}

/// U^Bell on (0,1), (2,3), … and then on (1,2), (3,4), …. For odd n the
/// last qubit only joins through the second layer.
pub fn build_mpmc_layered(n: usize) -> Result<MpmcState> {
    check_n(n, MAX_MPMC_QUBITS)?;
    let mut state = StateVector::zero(n)?;
    for start in [0, 1] {
        for i in (start..n - 1).step_by(2) {
            state.apply_gate(&u_bell(i, i + 1))?;
        }
    }
    Ok(MpmcState {
        n,
        construction: Construction::Layered,
        state,
    })
}

/// Returns (ℭₙ, ℭ⊥ₙ) seeded by ℭ₂ = (∣00⟩+∣11⟩)/√2, ℭ⊥₂ = (∣01⟩−∣10⟩)/√2.
pub fn build_mpmc_recursive(n: usize) -> Result<(MpmcState, MpmcState)> {
    check_n(n, MAX_MPMC_QUBITS)?;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let mut c = vec![C64::new(r, 0.0), z, z, C64::new(r, 0.0)];
    let mut p = vec![z, C64::new(r, 0.0), C64::new(-r, 0.0), z];
    for _ in 2..n {
        let mut nc = Vec::with_capacity(2 * c.len());
        let mut np = Vec::with_capacity(2 * c.len());
        for (a, b) in c.iter().zip(&p) {
            nc.extend([a * r, b * r]);
            np.extend([b * r, a * r]);
        }
        c = nc;
        p = np;
    }
    let wrap = |amps| -> Result<MpmcState> {
        Ok(MpmcState {
            n,
            construction: Construction::Recursive,
            state: StateVector::from_amplitudes(amps)?,
        })
    };
    Ok((wrap(c)?, wrap(p)?))
}

/// Nearest-neighbour cluster on a line of `n` qubits.
pub fn cluster_chain(n: usize) -> Result<StateVector> {
    build_cluster(&build_schedule(n, 1)?)
}

/// Layered vs recursive fidelity and ⟨ℭₙ∣ℭ⊥ₙ⟩ for one n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureRow {
    pub n: usize,
    pub construction_fidelity: f64,
    pub orthogonality: f64,
    pub nonzero_amplitudes_layered: usize,
    pub nonzero_amplitudes_recursive: usize,
}

pub fn structure_row(n: usize) -> Result<StructureRow> {
    let layered = build_mpmc_layered(n)?;
    let (rec, perp) = build_mpmc_recursive(n)?;
    Ok(StructureRow {
        n,
        construction_fidelity: state_fidelity(&layered.state, &rec.state)?,
        orthogonality: rec.state.inner(&perp.state)?.norm(),
        nonzero_amplitudes_layered: count_nonzero(&layered.state),
        nonzero_amplitudes_recursive: count_nonzero(&rec.state),
    })
}

fn count_nonzero(s: &StateVector) -> usize {
    s.amplitudes().iter().filter(|a| a.norm() > 1e-12).count()
}

/// Number of product terms in the recursive expansion of ℭₙ, i.e. its
/// non-zero computational amplitudes. This counts terms of one particular
/// decomposition and says nothing about minimality.
pub fn mpsd_expansion_count(n: usize) -> Result<usize> {
    check_n(n, MAX_EXPANSION_QUBITS)?;
    Ok(count_nonzero(&build_mpmc_recursive(n)?.0.state))
}

// --- connectedness -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectednessBranch {
    /// σᶻ outcomes of the other qubits, ascending qubit order.
    pub outcomes: Vec<u8>,
    pub probability: f64,
    pub schmidt: [f64; 2],
    /// Largest fidelity of the residual pair with a maximally entangled state.
    pub max_entangled_fidelity: f64,
    pub maximally_entangled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectednessReport {
    pub n: usize,
    pub pair: (usize, usize),
    pub branches: Vec<ConnectednessBranch>,
    pub zero_probability_branches: usize,
    /// Every branch with non-zero probability is maximally entangled.
    pub passed: bool,
}

pub const CONNECTEDNESS_TOL: f64 = 1e-8;

/// Measure every qubit outside `pair` in σᶻ and inspect the remaining pair
/// in every branch.
pub fn connectedness_check(
    state: &StateVector,
    pair: (usize, usize),
) -> Result<ConnectednessReport> {
    let n = state.n_qubits();
    capacity("connectedness qubits", n, MAX_CONNECTEDNESS_QUBITS)?;
    let (a, b) = pair;
    if a >= n || b >= n || a == b {
        return Err(Error::Argument(format!(
            "bad pair ({a}, {b}) for {n} qubits"
        )));
    }
    let others: Vec<usize> = (0..n).filter(|&q| q != a && q != b).collect();
    let m = others.len();
    let results: Vec<Option<ConnectednessBranch>> = (0..1usize << m)
        .into_par_iter()
        .map(|k| {
            let outcomes: Vec<u8> = (0..m).map(|i| ((k >> (m - 1 - i)) & 1) as u8).collect();
            let mut v = state.amplitudes().to_vec();
            let mut width = n;
            for (q, &o) in others.iter().zip(&outcomes).rev() {
                v = kernel::contract(&v, width, *q, &Basis::Z.eigenvector(o));
                width -= 1;
            }
            // remaining order is (min(a,b), max(a,b)); Schmidt values do not care
            let probability: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            if probability <= IMPOSSIBLE_PROB {
                return None;
            }
            let det = (v[0] * v[3] - v[1] * v[2]).norm() / probability;
            let disc = (1.0 - 4.0 * det * det).max(0.0).sqrt();
            let s1 = ((1.0 + disc) / 2.0).sqrt();
            let s2 = det / s1;
            let fid = (s1 + s2).powi(2) / 2.0;
            let half = std::f64::consts::FRAC_1_SQRT_2;
            Some(ConnectednessBranch {
                outcomes,
                probability,
                schmidt: [s1, s2],
                max_entangled_fidelity: fid,
                maximally_entangled: (s1 - half).abs() < CONNECTEDNESS_TOL
                    && (s2 - half).abs() < CONNECTEDNESS_TOL,
            })
        })
        .collect();
    let zero = results.iter().filter(|r| r.is_none()).count();
    let branches: Vec<ConnectednessBranch> = results.into_iter().flatten().collect();
    let passed = branches.iter().all(|b| b.maximally_entangled);
    Ok(ConnectednessReport {
        n,
        pair,
        branches,
        zero_probability_branches: zero,
        passed,
    })
}

/// Connectedness for every unordered pair, in lexicographic pair order.
pub fn connectedness_matrix(state: &StateVector) -> Result<Vec<ConnectednessReport>> {
    let n = state.n_qubits();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            out.push(connectedness_check(state, (a, b))?);
        }
    }
    Ok(out)
}

// --- persistence -------------------------------------------------------------

/// A projective single-qubit measurement basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementBasis {
    Pauli(Basis),
    /// Outcome 0 is cos(θ/2)∣0⟩ + e^{iφ} sin(θ/2)∣1⟩.
    Bloch {
        theta: f64,
        phi: f64,
    },
}

impl MeasurementBasis {
    pub fn eigenvector(&self, outcome: u8) -> [C64; 2] {
        match *self {
            MeasurementBasis::Pauli(b) => b.eigenvector(outcome),
            MeasurementBasis::Bloch { theta, phi } => {
                let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
                if outcome == 0 {
                    [C64::new(c, 0.0), C64::from_polar(s, phi)]
                } else {
                    [C64::from_polar(-s, -phi), C64::new(c, 0.0)]
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BasisSet {
    Pauli,
    /// Pauli search followed by `count` random bases per qubit subset.
    SampledGeneral {
        count: usize,
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessMeasurement {
    pub qubit: usize,
    pub basis: MeasurementBasis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchCertificate {
    pub outcomes: Vec<u8>,
    pub probability: f64,
    /// Largest second Schmidt coefficient over single-qubit cuts; zero for
    /// skipped zero-probability branches.
    pub max_second_schmidt: f64,
    pub zero_probability: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistenceReport {
    pub n: usize,
    pub basis_set: BasisSet,
    pub max_k: usize,
    /// `None` when nothing up to `max_k` works.
    pub min_measurements_found: Option<usize>,
    /// Minimum over Pauli bases only (exact).
    pub pauli_minimum: Option<usize>,
    pub witness: Vec<WitnessMeasurement>,
    pub certificates: Vec<BranchCertificate>,
    /// True when the reported minimum is exact for its basis family.
    pub exhaustive: bool,
    pub candidates_checked: u64,
}

impl PersistenceReport {
    pub fn found_label(&self) -> String {
        match self.min_measurements_found {
            Some(k) => k.to_string(),
            None => format!("not found (≥ {})", self.max_k + 1),
        }
    }
}

/// Contract the measured qubits for one outcome string; returns the
/// unnormalized residual vector on the unmeasured qubits.
fn branch_vector(
    amps: &[C64],
    n: usize,
    witness: &[WitnessMeasurement],
    outcomes: &[u8],
) -> Vec<C64> {
    let mut order: Vec<usize> = (0..witness.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(witness[i].qubit));
    let mut v = amps.to_vec();
    let mut width = n;
    for i in order {
        v = kernel::contract(
            &v,
            width,
            witness[i].qubit,
            &witness[i].basis.eigenvector(outcomes[i]),
        );
        width -= 1;
    }
    v
}

fn max_second_schmidt(v: &[C64]) -> f64 {
    let width = v.len().trailing_zeros() as usize;
    (0..width)
        .map(|q| kernel::second_schmidt_single(v, width, q))
        .fold(0.0, f64::max)
}

/// Does every branch of `witness` leave a product state?
fn all_branches_product(amps: &[C64], n: usize, witness: &[WitnessMeasurement]) -> bool {
    let k = witness.len();
    (0..1usize << k).all(|b| {
        let outcomes: Vec<u8> = (0..k).map(|i| ((b >> (k - 1 - i)) & 1) as u8).collect();
        let v = branch_vector(amps, n, witness, &outcomes);
        let p: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        p <= IMPOSSIBLE_PROB || max_second_schmidt(&v) < PRODUCT_TOL
    })
}

fn certificates(amps: &[C64], n: usize, witness: &[WitnessMeasurement]) -> Vec<BranchCertificate> {
    let k = witness.len();
    (0..1usize << k)
        .map(|b| {
            let outcomes: Vec<u8> = (0..k).map(|i| ((b >> (k - 1 - i)) & 1) as u8).collect();
            let v = branch_vector(amps, n, witness, &outcomes);
            let p: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            let zero = p <= IMPOSSIBLE_PROB;
            BranchCertificate {
                outcomes,
                probability: p,
                max_second_schmidt: if zero { 0.0 } else { max_second_schmidt(&v) },
                zero_probability: zero,
            }
        })
        .collect()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Lexicographically first Pauli witness of size exactly `k`, if any.
fn pauli_witness_of_size(state: &StateVector, k: usize) -> (Option<Vec<WitnessMeasurement>>, u64) {
    let n = state.n_qubits();
    let amps = state.amplitudes();
    let subsets = combinations(n, k);
    let per = 3usize.pow(k as u32);
    let total = subsets.len() * per;
    let found = (0..total).into_par_iter().find_first(|&c| {
        let witness = pauli_candidate(&subsets[c / per], c % per);
        all_branches_product(amps, n, &witness)
    });
    let checked = found.map_or(total, |c| c + 1) as u64;
    (
        found.map(|c| pauli_candidate(&subsets[c / per], c % per)),
        checked,
    )
}

fn pauli_candidate(subset: &[usize], mut code: usize) -> Vec<WitnessMeasurement> {
    let k = subset.len();
    let mut bases = vec![Basis::X; k];
    for i in (0..k).rev() {
        bases[i] = Basis::ALL[code % 3];
        code /= 3;
    }
    subset
        .iter()
        .zip(bases)
        .map(|(&qubit, b)| WitnessMeasurement {
            qubit,
            basis: MeasurementBasis::Pauli(b),
        })
        .collect()
}

fn random_basis(rng: &mut ChaCha8Rng) -> MeasurementBasis {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    MeasurementBasis::Bloch {
        theta: (1.0 - 2.0 * u).clamp(-1.0, 1.0).acos(),
        phi: 2.0 * PI * v,
    }
}

/// Smallest k ≤ `max_k` such that measuring some k qubits (Pauli bases
/// exhaustively, optionally followed by random general bases) leaves a
/// product state in every branch.
pub fn persistence_search(
    state: &StateVector,
    basis_set: BasisSet,
    max_k: usize,
) -> Result<PersistenceReport> {
    let n = state.n_qubits();
    capacity("persistence qubits", n, MAX_PERSISTENCE_QUBITS)?;
    let max_k = max_k.min(n);
    let amps = state.amplitudes();
    let mut checked = 0u64;
    let mut pauli = None;
    for k in 0..=max_k {
        let (w, c) = pauli_witness_of_size(state, k);
        checked += c;
        if let Some(w) = w {
            pauli = Some((k, w));
            break;
        }
    }
    let pauli_minimum = pauli.as_ref().map(|(k, _)| *k);
    let mut best = pauli;
    let mut exhaustive = true;
    if let BasisSet::SampledGeneral { count, seed } = basis_set {
        exhaustive = false;
        let upper = best.as_ref().map_or(max_k + 1, |(k, _)| *k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        'sizes: for k in 1..upper {
            for subset in combinations(n, k) {
                let samples: Vec<Vec<WitnessMeasurement>> = (0..count)
                    .map(|_| {
                        subset
                            .iter()
                            .map(|&qubit| WitnessMeasurement {
                                qubit,
                                basis: random_basis(&mut rng),
                            })
                            .collect()
                    })
                    .collect();
                let hit = samples
                    .par_iter()
                    .position_first(|w| all_branches_product(amps, n, w));
                checked += hit.map_or(count, |i| i + 1) as u64;
                if let Some(i) = hit {
                    best = Some((k, samples[i].clone()));
                    break 'sizes;
                }
            }
        }
    }
    let (min, witness) = match best {
        Some((k, w)) => (Some(k), w),
        None => (None, Vec::new()),
    };
    let certificates = certificates(amps, n, &witness);
    Ok(PersistenceReport {
        n,
        basis_set,
        max_k,
        min_measurements_found: min,
        pauli_minimum,
        witness,
        certificates,
        exhaustive: exhaustive && min.is_some(),
        candidates_checked: checked,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub branches: usize,
    pub zero_probability_branches: usize,
    /// Every realized branch has single-qubit Schmidt rank 1 on every qubit.
    pub all_product: bool,
    pub max_rank: usize,
}

/// Re-run a witness through ordinary measurements and Schmidt ranks.
pub fn replay_witness(state: &StateVector, witness: &[WitnessMeasurement]) -> Result<ReplayReport> {
    let n = state.n_qubits();
    let k = witness.len();
    let mut zero = 0;
    let mut max_rank = 1;
    for b in 0..1usize << k {
        let mut s = state.clone();
        let mut impossible = false;
        for (i, w) in witness.iter().enumerate() {
            let outcome = ((b >> (k - 1 - i)) & 1) as u8;
            let r = match w.basis {
                MeasurementBasis::Pauli(basis) => s
                    .measure(w.qubit, basis, &mut OutcomeSource::forced([outcome]))
                    .map(|_| ()),
                MeasurementBasis::Bloch { .. } => s
                    .project_onto(w.qubit, &w.basis.eigenvector(outcome))
                    .map(|_| ()),
            };
            match r {
                Ok(()) => {}
                Err(Error::ImpossibleBranch { .. }) => {
                    impossible = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if impossible {
            zero += 1;
            continue;
        }
        if n > 1 {
            for q in 0..n {
                max_rank = max_rank.max(schmidt_rank(&s, &[q], RANK_TOL)?);
            }
        }
    }
    Ok(ReplayReport {
        branches: 1 << k,
        zero_probability_branches: zero,
        all_product: max_rank == 1,
        max_rank,
    })
}

/// One line of the persistence comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistenceRow {
    pub family: String,
    pub n: usize,
    pub found: Option<usize>,
    pub exhaustive: bool,
    /// N − 1 for the ℭ family, ⌊N/2⌋ for the cluster chain.
    pub claimed: usize,
    pub witness_replays: bool,
}

impl PersistenceRow {
    pub fn agrees(&self) -> bool {
        self.found == Some(self.claimed)
    }
}

pub fn persistence_row(
    family: &str,
    state: &StateVector,
    claimed: usize,
    basis_set: BasisSet,
) -> Result<(PersistenceRow, PersistenceReport)> {
    let n = state.n_qubits();
    let report = persistence_search(state, basis_set, n)?;
    let replay = replay_witness(state, &report.witness)?;
    Ok((
        PersistenceRow {
            family: family.to_string(),
            n,
            found: report.min_measurements_found,
            exhaustive: report.exhaustive,
            claimed,
            witness_replays: replay.all_product,
        },
        report,
    ))
}
