//! Dense state vectors over qubit registers.
//!
//! Amplitude indexing puts qubit 0 in the most significant bit, so a ket
//! written left to right as ∣q₀ q₁ … q₋₁⟩ is the binary expansion of its
//! amplitude index. All other modules rely on this convention.
//!
//! Measurement outcomes are labelled by bits: outcome 0 is the +1 eigenstate
//! of the measured Pauli, outcome 1 the −1 eigenstate. For σˣ that means
//! outcome 0 is ∣+⟩ = (∣0⟩ + ∣1⟩)/√2 and outcome 1 is (∣0⟩ − ∣1⟩)/√2.

use std::collections::VecDeque;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{capacity, Error, Result};
use crate::gates::GateSpec;

/// Hard upper limit on register size (2^26 amplitudes ≈ 1 GiB).
pub const MAX_QUBITS: usize = 26;
/// Normalization tolerance.
pub const NORM_TOL: f64 = 1e-10;
/// Default singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-8;
/// Forced outcomes at or below this probability are impossible branches.
pub const IMPOSSIBLE_PROB: f64 = 1e-12;

const PAR_THRESHOLD: usize = 1 << 14;

/// Single-qubit states used to build product inputs.
///
/// `Minus` follows the sign convention (−∣0⟩ + ∣1⟩)/√2; it is the same ray
/// as the σˣ outcome-1 eigenvector but differs from it by a global sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductLabel {
    Zero,
    One,
    Plus,
    Minus,
}

impl ProductLabel {
    pub fn amplitudes(self) -> [C64; 2] {
        let r = C64::new(FRAC_1_SQRT_2, 0.0);
        match self {
            ProductLabel::Zero => [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            ProductLabel::One => [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            ProductLabel::Plus => [r, r],
            ProductLabel::Minus => [-r, r],
        }
    }
}

/// Pauli measurement bases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    /// Eigenvector for `outcome` (0 ↦ eigenvalue +1, 1 ↦ eigenvalue −1).
    pub fn eigenvector(self, outcome: u8) -> [C64; 2] {
        let r = FRAC_1_SQRT_2;
        let s = if outcome == 0 { 1.0 } else { -1.0 };
        match (self, outcome) {
            (Basis::Z, 0) => [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            (Basis::Z, _) => [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            (Basis::X, _) => [C64::new(r, 0.0), C64::new(s * r, 0.0)],
            (Basis::Y, _) => [C64::new(r, 0.0), C64::new(0.0, s * r)],
        }
    }
}

/// Where measurement outcomes come from.
#[derive(Clone, Debug)]
pub enum OutcomeSource {
    /// Born-rule sampling from a seeded generator.
    Seeded(ChaCha8Rng),
    /// Outcomes consumed in order; running out is an argument error.
    Forced(VecDeque<u8>),
}

impl OutcomeSource {
    pub fn seeded(seed: u64) -> Self {
        OutcomeSource::Seeded(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn forced<I: IntoIterator<Item = u8>>(bits: I) -> Self {
        OutcomeSource::Forced(bits.into_iter().collect())
    }

    /// Pick an outcome given the probability of outcome 0.
    pub fn draw(&mut self, qubit: usize, p0: f64) -> Result<u8> {
        match self {
            OutcomeSource::Seeded(rng) => {
                let u: f64 = rng.random();
                Ok(if u < p0 { 0 } else { 1 })
            }
            OutcomeSource::Forced(queue) => {
                let bit = queue.pop_front().ok_or_else(|| {
                    Error::Argument(format!("no forced outcome left for qubit {qubit}"))
                })?;
                if bit > 1 {
                    return Err(Error::Argument(format!(
                        "forced outcome {bit} is not a bit"
                    )));
                }
                Ok(bit)
            }
        }
    }
}

/// The result of one projective measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub qubit: usize,
    pub basis: Basis,
    pub outcome: u8,
    /// Born probability of `outcome` before the measurement.
    pub probability: f64,
}

/// A normalized pure state on `n_qubits` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// ∣0…0⟩ on `n` qubits.
    pub fn zero(n: usize) -> Result<Self> {
        Self::basis_state(n, 0)
    }

    pub fn basis_state(n: usize, index: usize) -> Result<Self> {
        check_size(n)?;
        if index >= 1 << n {
            return Err(Error::Argument(format!(
                "basis index {index} out of range for {n} qubits"
            )));
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { n_qubits: n, amps })
    }

    /// Wrap an amplitude vector that must already be normalized.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let n = qubits_for_len(amps.len())?;
        let norm = norm_sqr(&amps);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!(
                "state norm² is {norm}, expected 1"
            )));
        }
        Ok(Self { n_qubits: n, amps })
    }

    /// Wrap and rescale a non-zero amplitude vector.
    pub fn normalized(mut amps: Vec<C64>) -> Result<Self> {
        let n = qubits_for_len(amps.len())?;
        let norm = norm_sqr(&amps);
        if norm <= f64::MIN_POSITIVE {
            return Err(Error::Validation("cannot normalize the zero vector".into()));
        }
        let s = 1.0 / norm.sqrt();
        amps.iter_mut().for_each(|a| *a *= s);
        Ok(Self { n_qubits: n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amps)
    }

    /// ⟨self∣other⟩.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.n_qubits != other.n_qubits {
            return Err(size_mismatch(self.n_qubits, other.n_qubits));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// self ⊗ other, with `other` occupying the trailing (least significant)
    /// qubit positions.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        check_size(self.n_qubits + other.n_qubits)?;
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for a in &self.amps {
            amps.extend(other.amps.iter().map(|b| a * b));
        }
        Ok(StateVector {
            n_qubits: self.n_qubits + other.n_qubits,
            amps,
        })
    }

    /// Multiply every amplitude by e^{iθ}.
    pub fn with_global_phase(mut self, theta: f64) -> Self {
        let ph = C64::from_polar(1.0, theta);
        self.amps.iter_mut().for_each(|a| *a *= ph);
        self
    }

    pub fn apply_gate(&mut self, gate: &GateSpec) -> Result<()> {
        for &t in gate.targets() {
            self.check_qubit(t)?;
        }
        match gate.targets() {
            [q] => kernel::apply_1q(&mut self.amps, self.n_qubits, *q, &gate.matrix_2x2()),
            [a, b] => kernel::apply_2q(&mut self.amps, self.n_qubits, *a, *b, &gate.matrix_4x4()),
            _ => unreachable!("GateSpec guarantees one or two targets"),
        }
        Ok(())
    }

    /// Probability of `outcome` when measuring `qubit` in `basis`.
    pub fn probability(&self, qubit: usize, basis: Basis, outcome: u8) -> Result<f64> {
        self.check_qubit(qubit)?;
        Ok(kernel::outcome_probability(
            &self.amps,
            self.n_qubits,
            qubit,
            &basis.eigenvector(outcome),
        ))
    }

    /// Projective Pauli measurement with collapse and renormalization.
    pub fn measure(
        &mut self,
        qubit: usize,
        basis: Basis,
        source: &mut OutcomeSource,
    ) -> Result<MeasurementRecord> {
        let p0 = self.probability(qubit, basis, 0)?;
        let outcome = source.draw(qubit, p0)?;
        let probability = if outcome == 0 { p0 } else { 1.0 - p0 };
        self.collapse(qubit, &basis.eigenvector(outcome), probability, outcome)?;
        Ok(MeasurementRecord {
            qubit,
            basis,
            outcome,
            probability,
        })
    }

    /// Project `qubit` onto an arbitrary normalized single-qubit vector and
    /// renormalize. Returns the Born probability of that projection.
    pub fn project_onto(&mut self, qubit: usize, vector: &[C64; 2]) -> Result<f64> {
        self.check_qubit(qubit)?;
        let p = kernel::outcome_probability(&self.amps, self.n_qubits, qubit, vector);
        self.collapse(qubit, vector, p, 0)?;
        Ok(p)
    }

    fn collapse(&mut self, qubit: usize, vector: &[C64; 2], p: f64, outcome: u8) -> Result<()> {
        if p <= IMPOSSIBLE_PROB {
            return Err(Error::ImpossibleBranch {
                qubit,
                outcome,
                probability: p,
            });
        }
        kernel::project(&mut self.amps, self.n_qubits, qubit, vector);
        let s = 1.0 / p.sqrt();
        self.amps.iter_mut().for_each(|a| *a *= s);
        Ok(())
    }

    pub(crate) fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            Err(Error::Argument(format!(
                "qubit {q} out of range for a {}-qubit state",
                self.n_qubits
            )))
        } else {
            Ok(())
        }
    }
}

/// Tensor product of single-qubit labels, first label on qubit 0.
pub fn init_product_state(n: usize, labels: &[ProductLabel]) -> Result<StateVector> {
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{} labels given for {n} qubits",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Argument("a state needs at least one qubit".into()));
    }
    check_size(n)?;
    let mut amps = vec![C64::new(1.0, 0.0)];
    for label in labels {
        let [a0, a1] = label.amplitudes();
        amps = amps.iter().flat_map(|a| [a * a0, a * a1]).collect();
    }
    Ok(StateVector { n_qubits: n, amps })
}

/// |⟨a∣b⟩|².
pub fn state_fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr())
}

/// A reduced density matrix on an ordered list of qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub subsystem: Vec<usize>,
    pub entries: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = &self.entries - self.entries.adjoint();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .entries
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// ⟨ψ∣ρ∣ψ⟩ for a pure state on the same subsystem.
    pub fn expectation(&self, psi: &StateVector) -> Result<f64> {
        if psi.amplitudes().len() != self.entries.nrows() {
            return Err(size_mismatch(self.subsystem.len(), psi.n_qubits()));
        }
        let a = psi.amplitudes();
        let mut acc = C64::new(0.0, 0.0);
        for (r, ar) in a.iter().enumerate() {
            for (c, ac) in a.iter().enumerate() {
                acc += ar.conj() * self.entries[(r, c)] * ac;
            }
        }
        Ok(acc.re)
    }
}

/// Partial trace onto `keep`; `keep[0]` becomes the most significant qubit
/// of the result.
pub fn reduced_density(state: &StateVector, keep: &[usize]) -> Result<DensityMatrix> {
    if keep.is_empty() {
        return Err(Error::Argument("keep list is empty".into()));
    }
    validate_qubit_list(state, keep)?;
    let m = bipartition_matrix(state, keep);
    Ok(DensityMatrix {
        subsystem: keep.to_vec(),
        entries: &m * m.adjoint(),
    })
}

/// Schmidt coefficients across `partition | complement`, descending.
pub fn schmidt_coefficients(state: &StateVector, partition: &[usize]) -> Result<Vec<f64>> {
    if partition.is_empty() || partition.len() >= state.n_qubits() {
        return Err(Error::Argument(format!(
            "partition of size {} is not a proper subset of {} qubits",
            partition.len(),
            state.n_qubits()
        )));
    }
    validate_qubit_list(state, partition)?;
    let m = bipartition_matrix(state, partition);
    let mut s: Vec<f64> = m
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Number of Schmidt coefficients above `tol`.
pub fn schmidt_rank(state: &StateVector, partition: &[usize], tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::Argument(format!(
            "rank tolerance must be positive, got {tol}"
        )));
    }
    Ok(schmidt_coefficients(state, partition)?
        .into_iter()
        .filter(|&s| s > tol)
        .count())
}

/// Rows indexed by the `rows` qubits (in order), columns by the rest.
fn bipartition_matrix(state: &StateVector, rows: &[usize]) -> DMatrix<C64> {
    let n = state.n_qubits();
    let cols: Vec<usize> = (0..n).filter(|q| !rows.contains(q)).collect();
    let mut m = DMatrix::zeros(1 << rows.len(), 1 << cols.len());
    for (idx, amp) in state.amplitudes().iter().enumerate() {
        let r = gather_bits(idx, n, rows);
        let c = gather_bits(idx, n, &cols);
        m[(r, c)] = *amp;
    }
    m
}

/// Collect the bits of `idx` at the given qubit positions, first qubit most
/// significant.
pub(crate) fn gather_bits(idx: usize, n: usize, qubits: &[usize]) -> usize {
    qubits
        .iter()
        .fold(0, |acc, &q| (acc << 1) | ((idx >> (n - 1 - q)) & 1))
}

fn validate_qubit_list(state: &StateVector, qubits: &[usize]) -> Result<()> {
    for (i, &q) in qubits.iter().enumerate() {
        state.check_qubit(q)?;
        if qubits[..i].contains(&q) {
            return Err(Error::Argument(format!("qubit {q} listed twice")));
        }
    }
    Ok(())
}

fn check_size(n: usize) -> Result<()> {
    capacity("n_qubits", n, MAX_QUBITS)
}

fn qubits_for_len(len: usize) -> Result<usize> {
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::Argument(format!(
            "amplitude count {len} is not 2^n with n ≥ 1"
        )));
    }
    let n = len.trailing_zeros() as usize;
    check_size(n)?;
    Ok(n)
}

fn size_mismatch(a: usize, b: usize) -> Error {
    Error::Argument(format!("qubit count mismatch: {a} vs {b}"))
}

fn norm_sqr(amps: &[C64]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum()
}

/// Slice-level kernels shared with the search routines, which work on
/// unnormalized branch vectors.
pub(crate) mod kernel {
    use super::*;

    #[inline]
    fn stride(n: usize, q: usize) -> usize {
        1 << (n - 1 - q)
    }

    pub fn apply_1q(amps: &mut [C64], n: usize, q: usize, m: &[[C64; 2]; 2]) {
        let s = stride(n, q);
        let body = |blk: &mut [C64]| {
            let (lo, hi) = blk.split_at_mut(s);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a0, *a1);
                *a0 = m[0][0] * x + m[0][1] * y;
                *a1 = m[1][0] * x + m[1][1] * y;
            }
        };
        if amps.len() >= PAR_THRESHOLD {
            amps.par_chunks_mut(2 * s).for_each(body);
        } else {
            amps.chunks_mut(2 * s).for_each(body);
        }
    }

    /// `m` is row-major over the local basis ∣q_a q_b⟩.
    pub fn apply_2q(amps: &mut [C64], n: usize, a: usize, b: usize, m: &[C64; 16]) {
        let (sa, sb) = (stride(n, a), stride(n, b));
        let diagonal = (0..4).all(|r| (0..4).all(|c| r == c || m[4 * r + c] == C64::new(0.0, 0.0)));
        if diagonal {
            let d = [m[0], m[5], m[10], m[15]];
            let body = |(i, amp): (usize, &mut C64)| {
                let k = (((i & sa) != 0) as usize) << 1 | ((i & sb) != 0) as usize;
                *amp *= d[k];
            };
            if amps.len() >= PAR_THRESHOLD {
                amps.par_iter_mut().enumerate().for_each(body);
            } else {
                amps.iter_mut().enumerate().for_each(body);
            }
            return;
        }
        let block = 2 * sa.max(sb);
        let body = |blk: &mut [C64]| {
            for i in 0..blk.len() {
                if i & (sa | sb) != 0 {
                    continue;
                }
                let idx = [i, i | sb, i | sa, i | sa | sb];
                let v = idx.map(|k| blk[k]);
                for (r, &k) in idx.iter().enumerate() {
                    blk[k] = m[4 * r] * v[0]
                        + m[4 * r + 1] * v[1]
                        + m[4 * r + 2] * v[2]
                        + m[4 * r + 3] * v[3];
                }
            }
        };
        if amps.len() >= PAR_THRESHOLD {
            amps.par_chunks_mut(block).for_each(body);
        } else {
            amps.chunks_mut(block).for_each(body);
        }
    }

    pub fn outcome_probability(amps: &[C64], n: usize, q: usize, e: &[C64; 2]) -> f64 {
        let s = stride(n, q);
        let (e0, e1) = (e[0].conj(), e[1].conj());
        amps.chunks(2 * s)
            .map(|blk| {
                let (lo, hi) = blk.split_at(s);
                lo.iter()
                    .zip(hi)
                    .map(|(x, y)| (e0 * x + e1 * y).norm_sqr())
                    .sum::<f64>()
            })
            .sum()
    }

    /// Apply ∣e⟩⟨e∣ on qubit `q` without renormalizing.
    pub fn project(amps: &mut [C64], n: usize, q: usize, e: &[C64; 2]) {
        let s = stride(n, q);
        let (c0, c1) = (e[0].conj(), e[1].conj());
        for blk in amps.chunks_mut(2 * s) {
            let (lo, hi) = blk.split_at_mut(s);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let c = c0 * *x + c1 * *y;
                *x = e[0] * c;
                *y = e[1] * c;
            }
        }
    }

    /// ⟨e∣_q applied to an n-qubit vector, giving an (n−1)-qubit vector.
    pub fn contract(amps: &[C64], n: usize, q: usize, e: &[C64; 2]) -> Vec<C64> {
        let s = stride(n, q);
        let (c0, c1) = (e[0].conj(), e[1].conj());
        let mut out = Vec::with_capacity(amps.len() / 2);
        for blk in amps.chunks(2 * s) {
            let (lo, hi) = blk.split_at(s);
            out.extend(lo.iter().zip(hi).map(|(x, y)| c0 * x + c1 * y));
        }
        out
    }

    /// Second Schmidt coefficient of the cut {q} | rest, for a vector of
    /// any norm (the result is relative to the norm).
    ///
    /// Uses a Gram-Schmidt QR of the two rows so that a coefficient near
    /// zero comes out with absolute rather than square-root accuracy.
    pub fn second_schmidt_single(amps: &[C64], n: usize, q: usize) -> f64 {
        let s = stride(n, q);
        let mut r0 = Vec::with_capacity(amps.len() / 2);
        let mut r1 = Vec::with_capacity(amps.len() / 2);
        for blk in amps.chunks(2 * s) {
            let (lo, hi) = blk.split_at(s);
            r0.extend_from_slice(lo);
            r1.extend_from_slice(hi);
        }
        let n0: f64 = r0.iter().map(|z| z.norm_sqr()).sum();
        let n1: f64 = r1.iter().map(|z| z.norm_sqr()).sum();
        let total = n0 + n1;
        if total <= f64::MIN_POSITIVE {
            return 0.0;
        }
        let (a, b, na) = if n0 >= n1 {
            (&r0, &r1, n0)
        } else {
            (&r1, &r0, n1)
        };
        let r11 = na.sqrt();
        let r12: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>() / r11;
        let r22 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (y - x * (r12 / r11)).norm_sqr())
            .sum::<f64>()
            .sqrt();
        // singular values of [[r11, r12], [0, r22]]
        let det = r11 * r22;
        let disc = (total * total - 4.0 * det * det).max(0.0).sqrt();
        let s1 = ((total + disc) / 2.0).sqrt();
        (det / s1) / total.sqrt()
    }

    pub fn is_product(amps: &[C64], n: usize, tol: f64) -> bool {
        (0..n).all(|q| second_schmidt_single(amps, n, q) < tol)
    }
}
