//! Measurement-based programs: entangling gates, Pauli-basis measurements
//! and outcome-conditioned Pauli corrections.
//!
//! X-measurement outcome 0 is ∣+⟩ and outcome 1 is (∣0⟩ − ∣1⟩)/√2, the same
//! labelling as [`crate::state::Basis::eigenvector`].

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{capacity, Error, Result};
use crate::gates::{self, GateSpec};
use crate::state::{
    init_product_state, kernel, reduced_density, Basis, MeasurementRecord, OutcomeSource,
    ProductLabel, StateVector, MAX_QUBITS,
};

pub const MAX_BRANCH_MEASUREMENTS: usize = 12;
pub const MAX_TOMOGRAPHY_QUBITS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ControlIn,
    TargetIn,
    ControlOut,
    TargetOut,
    /// Prepared in the given state before the first step.
    Ancilla(ProductLabel),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitRole {
    pub qubit: usize,
    pub role: Role,
}

/// `sign · P₁ P₂ … Pₘ`; the rightmost factor acts first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliString {
    pub sign: i8,
    pub factors: Vec<(usize, Basis)>,
}

impl PauliString {
    pub fn identity() -> Self {
        Self {
            sign: 1,
            factors: Vec::new(),
        }
    }

    pub fn new(sign: i8, factors: &[(usize, Basis)]) -> Self {
        Self {
            sign,
            factors: factors.to_vec(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.sign != 1 && self.sign != -1 {
            return Err(Error::Validation(format!(
                "Pauli sign must be ±1, got {}",
                self.sign
            )));
        }
        for &(q, _) in &self.factors {
            if q >= n {
                return Err(Error::Validation(format!(
                    "Pauli factor on qubit {q} ≥ {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        for &(q, p) in self.factors.iter().rev() {
            state.apply_gate(&pauli_gate(q, p))?;
        }
        if self.sign < 0 {
            *state = std::mem::replace(state, StateVector::zero(1)?)
                .with_global_phase(std::f64::consts::PI);
        }
        Ok(())
    }
}

fn pauli_gate(q: usize, p: Basis) -> GateSpec {
    match p {
        Basis::X => gates::pauli_x(q),
        Basis::Y => gates::pauli_y(q),
        Basis::Z => gates::pauli_z(q),
    }
}

/// A Pauli correction chosen by earlier outcomes. `table[k]` is used when
/// the outcome bits of `inputs`, read first-input-most-significant, equal k.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedforwardRule {
    pub inputs: Vec<String>,
    pub table: Vec<PauliString>,
}

impl FeedforwardRule {
    pub fn select(&self, outcomes: &BTreeMap<String, u8>) -> Result<&PauliString> {
        let mut k = 0usize;
        for label in &self.inputs {
            let bit = outcomes.get(label).ok_or_else(|| {
                Error::Validation(format!("feedforward reads unrecorded outcome {label:?}"))
            })?;
            k = (k << 1) | *bit as usize;
        }
        Ok(&self.table[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Step {
    Entangle {
        gate: GateSpec,
    },
    Measure {
        qubit: usize,
        basis: Basis,
        label: String,
    },
    Feedforward(FeedforwardRule),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProgram", into = "RawProgram")]
pub struct MbqcProgram {
    pub name: String,
    pub n: usize,
    pub roles: Vec<QubitRole>,
    pub steps: Vec<Step>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProgram {
    #[serde(default)]
    name: String,
    n: usize,
    roles: Vec<QubitRole>,
    steps: Vec<Step>,
}

impl TryFrom<RawProgram> for MbqcProgram {
    type Error = Error;

    fn try_from(r: RawProgram) -> Result<Self> {
        let p = MbqcProgram {
            name: r.name,
            n: r.n,
            roles: r.roles,
            steps: r.steps,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<MbqcProgram> for RawProgram {
    fn from(p: MbqcProgram) -> Self {
        RawProgram {
            name: p.name,
            n: p.n,
            roles: p.roles,
            steps: p.steps,
        }
    }
}

impl MbqcProgram {
    fn qubits_with(&self, want: fn(&Role) -> bool) -> Vec<usize> {
        self.roles
            .iter()
            .filter(|r| want(&r.role))
            .map(|r| r.qubit)
            .collect()
    }

    /// Logical input wires, control first.
    pub fn logical_inputs(&self) -> Vec<usize> {
        let mut v = self.qubits_with(|r| *r == Role::ControlIn);
        v.extend(self.qubits_with(|r| *r == Role::TargetIn));
        v
    }

    /// Logical output wires, control first.
    pub fn logical_outputs(&self) -> Vec<usize> {
        let mut v = self.qubits_with(|r| *r == Role::ControlOut);
        v.extend(self.qubits_with(|r| *r == Role::TargetOut));
        v
    }

    pub fn ancillas(&self) -> Vec<(usize, ProductLabel)> {
        self.roles
            .iter()
            .filter_map(|r| match r.role {
                Role::Ancilla(l) => Some((r.qubit, l)),
                _ => None,
            })
            .collect()
    }

    pub fn measurements(&self) -> Vec<(usize, Basis, &str)> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Measure {
                    qubit,
                    basis,
                    label,
                } => Some((*qubit, *basis, label.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn n_entangling(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Entangle { gate } if gate.targets().len() == 2))
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("program needs at least one qubit".into()));
        }
        capacity("program qubits", self.n, MAX_QUBITS)?;
        let mut prepared = BTreeSet::new();
        for r in &self.roles {
            if r.qubit >= self.n {
                return Err(Error::Validation(format!(
                    "role on qubit {} ≥ n = {}",
                    r.qubit, self.n
                )));
            }
            if matches!(r.role, Role::Ancilla(_) | Role::ControlIn | Role::TargetIn)
                && !prepared.insert(r.qubit)
            {
                return Err(Error::Validation(format!(
                    "qubit {} has more than one input or ancilla role",
                    r.qubit
                )));
            }
        }
        let mut measured = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                Step::Entangle { gate } => {
                    if let Some(&q) = gate.targets().iter().find(|&&q| q >= self.n) {
                        return Err(Error::Validation(format!(
                            "step {i}: gate on qubit {q} ≥ {}",
                            self.n
                        )));
                    }
                }
                Step::Measure { qubit, label, .. } => {
                    if *qubit >= self.n {
                        return Err(Error::Validation(format!(
                            "step {i}: measure qubit {qubit} ≥ {}",
                            self.n
                        )));
                    }
                    if !measured.insert(*qubit) {
                        return Err(Error::Validation(format!("qubit {qubit} measured twice")));
                    }
                    if !labels.insert(label.clone()) {
                        return Err(Error::Validation(format!(
                            "measurement label {label:?} reused"
                        )));
                    }
                }
                Step::Feedforward(rule) => {
                    for inp in &rule.inputs {
                        if !labels.contains(inp) {
                            return Err(Error::Validation(format!(
                                "step {i}: feedforward reads {inp:?} before it is measured"
                            )));
                        }
                    }
                    if rule.table.len() != 1 << rule.inputs.len() {
                        return Err(Error::Validation(format!(
                            "step {i}: feedforward table has {} entries for {} inputs",
                            rule.table.len(),
                            rule.inputs.len()
                        )));
                    }
                    for p in &rule.table {
                        p.validate(self.n)?;
                    }
                }
            }
        }
        Ok(())
    }
}

// --- execution -------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardMode {
    /// Apply each correction to the state when it is issued.
    #[default]
    Physical,
    /// Accumulate corrections in a Pauli frame and apply it only when a
    /// later gate or measurement needs the true state, or at the end.
    FrameTracking,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchResult {
    pub outcomes: Vec<u8>,
    pub records: Vec<MeasurementRecord>,
    /// Exact Born probability of the whole outcome string.
    pub probability: f64,
    /// For zero-probability branches, the state just before the impossible
    /// outcome.
    pub post_state: StateVector,
    pub zero_probability: bool,
    pub logical_fidelity: Option<f64>,
}

/// Per-qubit X^x Z^z with a global phase i^phase; the operator is
/// i^phase · Π X^{x_q} Z^{z_q}.
#[derive(Clone, Debug, Default)]
struct PauliFrame {
    bits: BTreeMap<usize, (bool, bool)>,
    phase: u8,
}

impl PauliFrame {
    fn left_multiply(&mut self, p: &PauliString) {
        if p.sign < 0 {
            self.phase = (self.phase + 2) % 4;
        }
        for &(q, b) in p.factors.iter().rev() {
            let (x, z) = self.bits.entry(q).or_insert((false, false));
            match b {
                Basis::X => *x ^= true,
                Basis::Z => {
                    if *x {
                        self.phase = (self.phase + 2) % 4;
                    }
                    *z ^= true;
                }
                Basis::Y => {
                    // Y = i·X·Z, and Z·X^x = (−1)^x X^x Z
                    self.phase = (self.phase + 1 + if *x { 2 } else { 0 }) % 4;
                    *x ^= true;
                    *z ^= true;
                }
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.phase == 0 && self.bits.values().all(|&(x, z)| !x && !z)
    }

    fn flush(&mut self, state: &mut StateVector) -> Result<()> {
        for (&q, &(x, z)) in &self.bits {
            if z {
                state.apply_gate(&gates::pauli_z(q))?;
            }
            if x {
                state.apply_gate(&gates::pauli_x(q))?;
            }
        }
        if self.phase != 0 {
            let theta = self.phase as f64 * std::f64::consts::FRAC_PI_2;
            *state = std::mem::replace(state, StateVector::zero(1)?).with_global_phase(theta);
        }
        *self = PauliFrame::default();
        Ok(())
    }
}

/// Build the full register: program qubits first, then the spectator
/// qubits of `input` beyond its first `inputs.len()` wires.
pub fn prepare_with(
    program: &MbqcProgram,
    inputs: &[usize],
    input: &StateVector,
) -> Result<StateVector> {
    program.validate()?;
    let k = inputs.len();
    if input.n_qubits() < k {
        return Err(Error::Argument(format!(
            "input state has {} qubits, program needs {k} logical inputs",
            input.n_qubits()
        )));
    }
    let ancillas = program.ancillas();
    for q in 0..program.n {
        let is_in = inputs.contains(&q);
        let is_anc = ancillas.iter().any(|(a, _)| *a == q);
        if is_in == is_anc {
            return Err(Error::Validation(format!(
                "qubit {q} must be either a logical input or an ancilla"
            )));
        }
    }
    let s = input.n_qubits() - k;
    let n = program.n;
    capacity("program plus spectator qubits", n + s, MAX_QUBITS)?;
    let anc_amps: Vec<(usize, [C64; 2])> =
        ancillas.iter().map(|(q, l)| (*q, l.amplitudes())).collect();
    let src = input.amplitudes();
    let total = n + s;
    let amps = (0..1usize << total)
        .map(|x| {
            let bit = |q: usize| (x >> (total - 1 - q)) & 1;
            let mut idx = 0usize;
            for &q in inputs {
                idx = (idx << 1) | bit(q);
            }
            idx = (idx << s) | (x & ((1 << s) - 1));
            anc_amps
                .iter()
                .fold(src[idx], |acc, (q, a)| acc * a[bit(*q)])
        })
        .collect();
    StateVector::from_amplitudes(amps)
}

/// [`prepare_with`] using the program's control/target input roles.
pub fn prepare(program: &MbqcProgram, input: &StateVector) -> Result<StateVector> {
    prepare_with(program, &program.logical_inputs(), input)
}

/// Run the steps on an already prepared register (which may carry extra
/// spectator qubits after the program's own).
pub fn run_program(
    program: &MbqcProgram,
    register: &StateVector,
    source: &mut OutcomeSource,
    mode: FeedforwardMode,
) -> Result<BranchResult> {
    execute(program, register.clone(), source, mode, false)
}

fn execute(
    program: &MbqcProgram,
    mut state: StateVector,
    source: &mut OutcomeSource,
    mode: FeedforwardMode,
    allow_impossible: bool,
) -> Result<BranchResult> {
    program.validate()?;
    if state.n_qubits() < program.n {
        return Err(Error::Argument(format!(
            "register has {} qubits, program needs {}",
            state.n_qubits(),
            program.n
        )));
    }
    let mut frame = PauliFrame::default();
    let mut records = Vec::new();
    let mut by_label = BTreeMap::new();
    let mut probability = 1.0;
    for step in &program.steps {
        match step {
            Step::Entangle { gate } => {
                if !frame.is_empty() {
                    frame.flush(&mut state)?;
                }
                state.apply_gate(gate)?;
            }
            Step::Measure {
                qubit,
                basis,
                label,
            } => {
                if !frame.is_empty() {
                    frame.flush(&mut state)?;
                }
                match state.measure(*qubit, *basis, source) {
                    Ok(rec) => {
                        probability *= rec.probability;
                        by_label.insert(label.clone(), rec.outcome);
                        records.push(rec);
                    }
                    Err(Error::ImpossibleBranch {
                        qubit,
                        outcome,
                        probability: p,
                    }) if allow_impossible => {
                        records.push(MeasurementRecord {
                            qubit,
                            basis: *basis,
                            outcome,
                            probability: p,
                        });
                        return Ok(BranchResult {
                            outcomes: records.iter().map(|r| r.outcome).collect(),
                            records,
                            probability: 0.0,
                            post_state: state,
                            zero_probability: true,
                            logical_fidelity: None,
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
            Step::Feedforward(rule) => {
                let p = rule.select(&by_label)?;
                match mode {
                    FeedforwardMode::Physical => p.apply(&mut state)?,
                    FeedforwardMode::FrameTracking => frame.left_multiply(p),
                }
            }
        }
    }
    frame.flush(&mut state)?;
    Ok(BranchResult {
        outcomes: records.iter().map(|r| r.outcome).collect(),
        records,
        probability,
        post_state: state,
        zero_probability: false,
        logical_fidelity: None,
    })
}

/// Every outcome string, in binary order of the outcomes.
pub fn enumerate_branches(
    program: &MbqcProgram,
    register: &StateVector,
    mode: FeedforwardMode,
) -> Result<Vec<BranchResult>> {
    let m = program.measurements().len();
    capacity("branch measurements", m, MAX_BRANCH_MEASUREMENTS)?;
    (0..1usize << m)
        .into_par_iter()
        .map(|k| {
            let bits = (0..m).map(|i| ((k >> (m - 1 - i)) & 1) as u8);
            let mut src = OutcomeSource::forced(bits);
            let mut b = execute(program, register.clone(), &mut src, mode, true)?;
            if b.zero_probability {
                // report the full requested string even if execution stopped early
                b.outcomes = (0..m).map(|i| ((k >> (m - 1 - i)) & 1) as u8).collect();
            }
            Ok(b)
        })
        .collect()
}

/// Fidelity of the branch's output wires (plus trailing spectators) with
/// `ideal`, whose qubits are ordered [outputs..., spectators...].
pub fn logical_fidelity(
    program: &MbqcProgram,
    outputs: &[usize],
    branch: &BranchResult,
    ideal: &StateVector,
) -> Result<f64> {
    let total = branch.post_state.n_qubits();
    let mut keep = outputs.to_vec();
    keep.extend(program.n..total);
    if keep.len() != ideal.n_qubits() {
        return Err(Error::Argument(format!(
            "ideal state has {} qubits, expected {}",
            ideal.n_qubits(),
            keep.len()
        )));
    }
    reduced_density(&branch.post_state, &keep)?.expectation(ideal)
}

// --- the two C-NOT protocols -------------------------------------------------

/// Four qubits: target input on 0, ancilla ∣−⟩ on 1, ancilla ∣+⟩ on 2
/// (target output), control on 3. CZ(0,1), CZ(3,1), CZ(1,2); measure 0 and
/// 1 in X giving l and m; correct with (Z₂Z₃)^l (X₂)^m.
pub fn cnot_standard_program() -> MbqcProgram {
    use Basis::{X, Z};
    let ff = |l: u8, m: u8| {
        let mut f = Vec::new();
        if l == 1 {
            f.extend([(2, Z), (3, Z)]);
        }
        if m == 1 {
            f.push((2, X));
        }
        PauliString::new(1, &f)
    };
    MbqcProgram {
        name: "cnot_standard".into(),
        n: 4,
        roles: vec![
            QubitRole {
                qubit: 0,
                role: Role::TargetIn,
            },
            QubitRole {
                qubit: 1,
                role: Role::Ancilla(ProductLabel::Minus),
            },
            QubitRole {
                qubit: 2,
                role: Role::Ancilla(ProductLabel::Plus),
            },
            QubitRole {
                qubit: 2,
                role: Role::TargetOut,
            },
            QubitRole {
                qubit: 3,
                role: Role::ControlIn,
            },
            QubitRole {
                qubit: 3,
                role: Role::ControlOut,
            },
        ],
        steps: vec![
            Step::Entangle {
                gate: gates::cz_xmon(0, 1),
            },
            Step::Entangle {
                gate: gates::cz_xmon(3, 1),
            },
            Step::Entangle {
                gate: gates::cz_xmon(1, 2),
            },
            Step::Measure {
                qubit: 0,
                basis: X,
                label: "l".into(),
            },
            Step::Measure {
                qubit: 1,
                basis: X,
                label: "m".into(),
            },
            Step::Feedforward(FeedforwardRule {
                inputs: vec!["l".into(), "m".into()],
                table: vec![ff(0, 0), ff(0, 1), ff(1, 0), ff(1, 1)],
            }),
        ],
    }
}

/// Three qubits: target input on 0, ancilla ∣0⟩ on 1 (target output),
/// control on 2. U^Bell(0,1), then CZ(2,1), then H on 1; measure 0 in X
/// giving s; correct with −X₁Z₂ for s = 0 and −Z₁ for s = 1.
pub fn cnot_efficient_program() -> MbqcProgram {
    use Basis::{X, Z};
    MbqcProgram {
        name: "cnot_efficient".into(),
        n: 3,
        roles: vec![
            QubitRole {
                qubit: 0,
                role: Role::TargetIn,
            },
            QubitRole {
                qubit: 1,
                role: Role::Ancilla(ProductLabel::Zero),
            },
            QubitRole {
                qubit: 1,
                role: Role::TargetOut,
            },
            QubitRole {
                qubit: 2,
                role: Role::ControlIn,
            },
            QubitRole {
                qubit: 2,
                role: Role::ControlOut,
            },
        ],
        steps: vec![
            Step::Entangle {
                gate: gates::u_bell(0, 1),
            },
            Step::Entangle {
                gate: gates::cz_xmon(2, 1),
            },
            Step::Entangle {
                gate: gates::hadamard(1),
            },
            Step::Measure {
                qubit: 0,
                basis: X,
                label: "s".into(),
            },
            Step::Feedforward(FeedforwardRule {
                inputs: vec!["s".into()],
                table: vec![
                    PauliString::new(-1, &[(1, X), (2, Z)]),
                    PauliString::new(-1, &[(1, Z)]),
                ],
            }),
        ],
    }
}

/// CNOT with the first qubit as control, on the basis order ∣c t⟩.
pub fn cnot_matrix() -> DMatrix<C64> {
    let mut m = DMatrix::zeros(4, 4);
    for (r, c) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
        m[(r, c)] = C64::new(1.0, 0.0);
    }
    m
}

fn cnot_gate() -> GateSpec {
    GateSpec::new(
        "CNOT",
        vec![0, 1],
        cnot_matrix().transpose().iter().copied().collect(),
    )
    .expect("CNOT is unitary")
}

pub const INPUT_LABELS: [ProductLabel; 4] = [
    ProductLabel::Zero,
    ProductLabel::One,
    ProductLabel::Plus,
    ProductLabel::Minus,
];

pub fn label_symbol(l: ProductLabel) -> &'static str {
    match l {
        ProductLabel::Zero => "0",
        ProductLabel::One => "1",
        ProductLabel::Plus => "+",
        ProductLabel::Minus => "-",
    }
}

/// One CSV row per (input, branch).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub program: String,
    /// Control then target, e.g. `"1,+"`.
    pub input: String,
    pub outcomes: String,
    pub probability: f64,
    pub fidelity: f64,
    pub zero_probability: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnotVerification {
    pub program: String,
    pub n_qubits: usize,
    pub n_measurements: usize,
    pub rows: Vec<BranchRow>,
    pub min_fidelity: f64,
    pub max_probability_sum_error: f64,
}

/// Run every input in {0,1,+,−}² (or only computational ones) through
/// every branch and compare with the ideal C-NOT output.
pub fn verify_cnot(
    program: &MbqcProgram,
    inputs: &[ProductLabel],
    mode: FeedforwardMode,
) -> Result<CnotVerification> {
    let outputs = program.logical_outputs();
    let cnot = cnot_gate();
    let mut rows = Vec::new();
    let mut min_fidelity: f64 = 1.0;
    let mut max_err: f64 = 0.0;
    for &c in inputs {
        for &t in inputs {
            let logical = init_product_state(2, &[c, t])?;
            let mut ideal = logical.clone();
            ideal.apply_gate(&cnot)?;
            let register = prepare(program, &logical)?;
            let branches = enumerate_branches(program, &register, mode)?;
            let total: f64 = branches.iter().map(|b| b.probability).sum();
            max_err = max_err.max((total - 1.0).abs());
            for b in branches {
                let fidelity = if b.zero_probability {
                    f64::NAN
                } else {
                    let f = logical_fidelity(program, &outputs, &b, &ideal)?;
                    min_fidelity = min_fidelity.min(f);
                    f
                };
                rows.push(BranchRow {
                    program: program.name.clone(),
                    input: format!("{},{}", label_symbol(c), label_symbol(t)),
                    outcomes: b.outcomes.iter().map(|o| o.to_string()).collect(),
                    probability: b.probability,
                    fidelity,
                    zero_probability: b.zero_probability,
                });
            }
        }
    }
    Ok(CnotVerification {
        program: program.name.clone(),
        n_qubits: program.n,
        n_measurements: program.measurements().len(),
        rows,
        min_fidelity,
        max_probability_sum_error: max_err,
    })
}

// --- process tomography ------------------------------------------------------

/// Choi matrix J = Σᵢⱼ ∣i⟩⟨j∣ ⊗ E(∣i⟩⟨j∣), reference factor first.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessMatrix {
    pub logical_qubits: usize,
    pub entries: DMatrix<C64>,
}

impl ProcessMatrix {
    pub fn dim(&self) -> usize {
        1 << self.logical_qubits
    }

    pub fn from_unitary(u: &DMatrix<C64>) -> Result<Self> {
        let d = u.nrows();
        if !d.is_power_of_two() || u.ncols() != d {
            return Err(Error::Argument("unitary must be 2^k × 2^k".into()));
        }
        let mut v = DMatrix::zeros(d * d, 1);
        for i in 0..d {
            for o in 0..d {
                v[(i * d + o, 0)] = u[(o, i)];
            }
        }
        Ok(Self {
            logical_qubits: d.trailing_zeros() as usize,
            entries: &v * v.adjoint(),
        })
    }

    /// Tr(J₁J₂)/d², which is the process fidelity when either is pure.
    pub fn process_fidelity(&self, other: &ProcessMatrix) -> Result<f64> {
        if self.logical_qubits != other.logical_qubits {
            return Err(Error::Argument("process dimension mismatch".into()));
        }
        let d2 = (self.dim() * self.dim()) as f64;
        Ok((&self.entries * &other.entries).trace().re / d2)
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.entries - self.entries.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.entries + self.entries.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// max |Tr_out J − I|.
    pub fn trace_preservation_error(&self) -> f64 {
        let d = self.dim();
        let mut err: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let s: C64 = (0..d).map(|o| self.entries[(r * d + o, c * d + o)]).sum();
                let e = if r == c { 1.0 } else { 0.0 };
                err = err.max((s - C64::new(e, 0.0)).norm());
            }
        }
        err
    }
}

/// Choi matrix of the logical channel `logical_in → logical_out`, averaged
/// over all measurement branches. The input wires are fed one half of a
/// maximally entangled state whose other half is kept as a reference.
pub fn process_tomography(
    program: &MbqcProgram,
    logical_in: &[usize],
    logical_out: &[usize],
    mode: FeedforwardMode,
) -> Result<ProcessMatrix> {
    let k = logical_in.len();
    if k != logical_out.len() {
        return Err(Error::Argument(format!(
            "{k} logical inputs but {} outputs",
            logical_out.len()
        )));
    }
    if k == 0 {
        return Err(Error::Argument("no logical wires".into()));
    }
    capacity("tomography qubits", k, MAX_TOMOGRAPHY_QUBITS)?;
    let d = 1usize << k;
    let amp = C64::new(1.0 / (d as f64).sqrt(), 0.0);
    let mut phi = vec![C64::new(0.0, 0.0); d * d];
    for i in 0..d {
        phi[i * d + i] = amp;
    }
    let phi = StateVector::from_amplitudes(phi)?;
    let register = prepare_with(program, logical_in, &phi)?;
    let branches = enumerate_branches(program, &register, mode)?;
    let total = register.n_qubits();
    let mut keep: Vec<usize> = (program.n..total).collect();
    keep.extend_from_slice(logical_out);
    let mut j = DMatrix::zeros(d * d, d * d);
    for b in branches.iter().filter(|b| !b.zero_probability) {
        let rho = reduced_density(&b.post_state, &keep)?;
        j += rho.entries * C64::new(b.probability * d as f64, 0.0);
    }
    Ok(ProcessMatrix {
        logical_qubits: k,
        entries: j,
    })
}

/// The state of one outcome branch with the feedforward steps removed.
pub fn raw_branch(
    program: &MbqcProgram,
    register: &StateVector,
    outcomes: &[u8],
) -> Result<StateVector> {
    let truncated = MbqcProgram {
        steps: program
            .steps
            .iter()
            .filter(|s| !matches!(s, Step::Feedforward(_)))
            .cloned()
            .collect(),
        ..program.clone()
    };
    let mut src = OutcomeSource::forced(outcomes.iter().copied());
    Ok(run_program(&truncated, register, &mut src, FeedforwardMode::Physical)?.post_state)
}

/// True when every single-qubit cut of the (possibly unnormalized) vector
/// has rank one.
pub fn is_product_state(state: &StateVector, tol: f64) -> bool {
    kernel::is_product(state.amplitudes(), state.n_qubits(), tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::state_fidelity;
    use proptest::prelude::*;

    const COMPUTATIONAL: [ProductLabel; 2] = [ProductLabel::Zero, ProductLabel::One];

    fn run_forced(p: &MbqcProgram, c: ProductLabel, t: ProductLabel, outs: &[u8]) -> BranchResult {
        let reg = prepare(p, &init_product_state(2, &[c, t]).unwrap()).unwrap();
        run_program(
            p,
            &reg,
            &mut OutcomeSource::forced(outs.iter().copied()),
            FeedforwardMode::Physical,
        )
        .unwrap()
    }

    fn out_fidelity(p: &MbqcProgram, b: &BranchResult, c: u8, t: u8) -> f64 {
        let lab = |x: u8| {
            if x == 0 {
                ProductLabel::Zero
            } else {
                ProductLabel::One
            }
        };
        let ideal = init_product_state(2, &[lab(c), lab(t)]).unwrap();
        logical_fidelity(p, &p.logical_outputs(), b, &ideal).unwrap()
    }

    #[test]
    fn program_shapes() {
        let s = cnot_standard_program();
        assert_eq!(s.n_entangling(), 3);
        assert_eq!(s.measurements().len(), 2);
        assert_eq!(s.logical_inputs(), vec![3, 0]);
        assert_eq!(s.logical_outputs(), vec![3, 2]);
        let e = cnot_efficient_program();
        assert_eq!(e.n, 3);
        assert_eq!(e.measurements().len(), 1);
    }

    #[test]
    fn standard_zero_zero_example() {
        let p = cnot_standard_program();
        let b = run_forced(&p, ProductLabel::Zero, ProductLabel::Zero, &[0, 0]);
        assert!((out_fidelity(&p, &b, 0, 0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn efficient_one_one_example() {
        let p = cnot_efficient_program();
        let b = run_forced(&p, ProductLabel::One, ProductLabel::One, &[0]);
        assert!((out_fidelity(&p, &b, 1, 0) - 1.0).abs() < 1e-10);
        // full register is ∣s⟩ₓ ∣i⊕j⟩ ∣j⟩ up to phase
        let expect = init_product_state(
            3,
            &[ProductLabel::Plus, ProductLabel::Zero, ProductLabel::One],
        )
        .unwrap();
        assert!((state_fidelity(&b.post_state, &expect).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn no_measurement_program_is_unitary() {
        let p = MbqcProgram {
            name: "bell".into(),
            n: 2,
            roles: vec![
                QubitRole {
                    qubit: 0,
                    role: Role::Ancilla(ProductLabel::Zero),
                },
                QubitRole {
                    qubit: 1,
                    role: Role::Ancilla(ProductLabel::Zero),
                },
            ],
            steps: vec![Step::Entangle {
                gate: gates::u_bell(0, 1),
            }],
        };
        let reg = prepare_with(&p, &[], &StateVector::zero(1).unwrap());
        // no logical inputs but one spectator qubit
        let reg = reg.unwrap();
        let b = run_program(
            &p,
            &reg,
            &mut OutcomeSource::seeded(0),
            FeedforwardMode::Physical,
        )
        .unwrap();
        assert_eq!(b.probability, 1.0);
        assert!(b.records.is_empty());
    }

    #[test]
    fn standard_truth_table_all_branches() {
        let v = verify_cnot(
            &cnot_standard_program(),
            &INPUT_LABELS,
            FeedforwardMode::Physical,
        )
        .unwrap();
        assert_eq!(v.rows.len(), 16 * 4);
        assert!(v.min_fidelity > 1.0 - 1e-9, "{}", v.min_fidelity);
        assert!(v.max_probability_sum_error < 1e-9);
    }

    #[test]
    fn efficient_truth_table_all_branches() {
        let v = verify_cnot(
            &cnot_efficient_program(),
            &INPUT_LABELS,
            FeedforwardMode::Physical,
        )
        .unwrap();
        assert_eq!(v.rows.len(), 16 * 2);
        assert!(v.min_fidelity > 1.0 - 1e-9, "{}", v.min_fidelity);
    }

    #[test]
    fn frame_tracking_agrees_with_physical() {
        for p in [cnot_standard_program(), cnot_efficient_program()] {
            for c in INPUT_LABELS {
                for t in INPUT_LABELS {
                    let reg = prepare(&p, &init_product_state(2, &[c, t]).unwrap()).unwrap();
                    let a = enumerate_branches(&p, &reg, FeedforwardMode::Physical).unwrap();
                    let b = enumerate_branches(&p, &reg, FeedforwardMode::FrameTracking).unwrap();
                    for (x, y) in a.iter().zip(&b) {
                        let dev = x
                            .post_state
                            .amplitudes()
                            .iter()
                            .zip(y.post_state.amplitudes())
                            .map(|(u, v)| (u - v).norm())
                            .fold(0.0, f64::max);
                        assert!(dev < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn frame_phase_bookkeeping_for_y() {
        // Y·X·Z·Y·X on one qubit, checked against physical application
        use Basis::{X, Y, Z};
        let strings = [
            PauliString::new(1, &[(0, Y), (0, X)]),
            PauliString::new(-1, &[(0, Z), (1, Y)]),
            PauliString::new(1, &[(0, Y), (1, X), (1, Z)]),
        ];
        let base = init_product_state(2, &[ProductLabel::Plus, ProductLabel::One]).unwrap();
        let base = StateVector::normalized(
            base.amplitudes()
                .iter()
                .enumerate()
                .map(|(i, a)| a * C64::new(1.0 + i as f64, 0.3 * i as f64))
                .collect(),
        )
        .unwrap();
        let mut phys = base.clone();
        let mut frame = PauliFrame::default();
        for s in &strings {
            s.apply(&mut phys).unwrap();
            frame.left_multiply(s);
        }
        let mut tracked = base;
        frame.flush(&mut tracked).unwrap();
        for (a, b) in phys.amplitudes().iter().zip(tracked.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn standard_raw_branch_differs_by_correction() {
        let p = cnot_standard_program();
        for (c, t) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
            let lab = |x: u8| {
                if x == 0 {
                    ProductLabel::Zero
                } else {
                    ProductLabel::One
                }
            };
            let reg = prepare(&p, &init_product_state(2, &[lab(c), lab(t)]).unwrap()).unwrap();
            let mut raw = raw_branch(&p, &reg, &[1, 1]).unwrap();
            let b = BranchResult {
                outcomes: vec![1, 1],
                records: vec![],
                probability: 0.25,
                post_state: raw.clone(),
                zero_probability: false,
                logical_fidelity: None,
            };
            assert!(out_fidelity(&p, &b, c, c ^ t) < 0.5);
            PauliString::new(1, &[(2, Basis::Z), (3, Basis::Z), (2, Basis::X)])
                .apply(&mut raw)
                .unwrap();
            let b = BranchResult {
                post_state: raw,
                ..b
            };
            assert!((out_fidelity(&p, &b, c, c ^ t) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn efficient_gate_order_matters() {
        let mut p = cnot_efficient_program();
        p.steps.swap(0, 1);
        let v = verify_cnot(&p, &COMPUTATIONAL, FeedforwardMode::Physical).unwrap();
        assert!(v.min_fidelity < 1.0 - 1e-3);
    }

    #[test]
    fn branch_probabilities() {
        let e = cnot_efficient_program();
        let reg = prepare(
            &e,
            &init_product_state(2, &[ProductLabel::One, ProductLabel::One]).unwrap(),
        )
        .unwrap();
        let b = enumerate_branches(&e, &reg, FeedforwardMode::Physical).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|x| (x.probability - 0.5).abs() < 1e-12));

        for p in [cnot_standard_program(), cnot_efficient_program()] {
            let v = verify_cnot(&p, &COMPUTATIONAL, FeedforwardMode::Physical).unwrap();
            let expect = 0.5f64.powi(v.n_measurements as i32);
            assert!(v
                .rows
                .iter()
                .all(|r| (r.probability - expect).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_probability_branch_is_flagged() {
        let p = MbqcProgram {
            name: "x_on_plus".into(),
            n: 1,
            roles: vec![QubitRole {
                qubit: 0,
                role: Role::Ancilla(ProductLabel::Plus),
            }],
            steps: vec![Step::Measure {
                qubit: 0,
                basis: Basis::X,
                label: "a".into(),
            }],
        };
        let reg = prepare_with(&p, &[], &StateVector::zero(1).unwrap()).unwrap();
        let b = enumerate_branches(&p, &reg, FeedforwardMode::Physical).unwrap();
        assert!((b[0].probability - 1.0).abs() < 1e-12 && !b[0].zero_probability);
        assert!(b[1].zero_probability && b[1].probability == 0.0);
        assert!(matches!(
            run_program(
                &p,
                &reg,
                &mut OutcomeSource::forced([1]),
                FeedforwardMode::Physical
            ),
            Err(Error::ImpossibleBranch { .. })
        ));
    }

    #[test]
    fn process_fidelity_of_both_protocols() {
        let ideal = ProcessMatrix::from_unitary(&cnot_matrix()).unwrap();
        for p in [cnot_standard_program(), cnot_efficient_program()] {
            let j = process_tomography(
                &p,
                &p.logical_inputs(),
                &p.logical_outputs(),
                FeedforwardMode::Physical,
            )
            .unwrap();
            assert!(j.process_fidelity(&ideal).unwrap() > 1.0 - 1e-8);
            assert!(j.hermiticity_error() < 1e-8);
            assert!(j.min_eigenvalue() > -1e-8);
            assert!(j.trace_preservation_error() < 1e-8);
        }
    }

    #[test]
    fn identity_program_gives_identity_channel() {
        let p = MbqcProgram {
            name: "id".into(),
            n: 1,
            roles: vec![
                QubitRole {
                    qubit: 0,
                    role: Role::ControlIn,
                },
                QubitRole {
                    qubit: 0,
                    role: Role::ControlOut,
                },
            ],
            steps: vec![],
        };
        let j = process_tomography(&p, &[0], &[0], FeedforwardMode::Physical).unwrap();
        let id = ProcessMatrix::from_unitary(&DMatrix::identity(2, 2)).unwrap();
        assert!((&j.entries - &id.entries).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn entangled_input_is_preserved() {
        // control ⊗ target ⊗ reference with control and reference in a Bell
        // pair; the C-NOT must give a GHZ state on (control, target, ref)
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![C64::new(0.0, 0.0); 8];
        amps[0b000] = C64::new(r, 0.0);
        amps[0b101] = C64::new(r, 0.0);
        let input = StateVector::from_amplitudes(amps).unwrap();
        let mut ghz = vec![C64::new(0.0, 0.0); 8];
        ghz[0b000] = C64::new(r, 0.0);
        ghz[0b111] = C64::new(r, 0.0);
        let ghz = StateVector::from_amplitudes(ghz).unwrap();
        for p in [cnot_standard_program(), cnot_efficient_program()] {
            let reg = prepare(&p, &input).unwrap();
            for b in enumerate_branches(&p, &reg, FeedforwardMode::Physical).unwrap() {
                let f = logical_fidelity(&p, &p.logical_outputs(), &b, &ghz).unwrap();
                assert!(f > 1.0 - 1e-9, "{}: {f}", p.name);
            }
        }
    }

    #[test]
    fn program_json_round_trip_and_validation() {
        let p = cnot_standard_program();
        let js = serde_json::to_value(&p).unwrap();
        assert_eq!(js["steps"][3]["type"], "measure");
        assert_eq!(js["steps"][5]["type"], "feedforward");
        let back: MbqcProgram = serde_json::from_value(js.clone()).unwrap();
        assert_eq!(back, p);

        let mut bad = js.clone();
        bad["steps"][4]["qubit"] = serde_json::json!(0);
        assert!(serde_json::from_value::<MbqcProgram>(bad).is_err());

        let mut early = p.clone();
        early.steps.swap(4, 5);
        assert!(early.validate().is_err());
    }

    #[test]
    fn seeded_runs_are_deterministic() {
        let p = cnot_standard_program();
        let reg = prepare(
            &p,
            &init_product_state(2, &[ProductLabel::Plus, ProductLabel::One]).unwrap(),
        )
        .unwrap();
        let run = |seed| {
            let mut src = OutcomeSource::seeded(seed);
            (0..20)
                .map(|_| {
                    run_program(&p, &reg, &mut src, FeedforwardMode::Physical)
                        .unwrap()
                        .outcomes
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }

    proptest! {
        #[test]
        fn random_inputs_follow_cnot(seed in any::<u64>(), which in 0usize..2) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let amps: Vec<C64> = (0..4).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let input = StateVector::normalized(amps).unwrap();
            let p = if which == 0 { cnot_standard_program() } else { cnot_efficient_program() };
            let mut ideal = input.clone();
            ideal.apply_gate(&cnot_gate()).unwrap();
            let reg = prepare(&p, &input).unwrap();
            let b = run_program(&p, &reg, &mut OutcomeSource::seeded(seed), FeedforwardMode::Physical).unwrap();
            let f = logical_fidelity(&p, &p.logical_outputs(), &b, &ideal).unwrap();
            prop_assert!(f > 1.0 - 1e-9);
        }
    }
}
