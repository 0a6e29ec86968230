//! Gate definitions, the U^Bell gate in its three forms, and the
//! searches that cross-validate them.
//!
//! The two-qubit basis order is (∣00⟩, ∣01⟩, ∣10⟩, ∣11⟩) with the first
//! target as the most significant bit, matching [`crate::state`].

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use nalgebra::{DMatrix, Matrix2, Matrix4};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNITARY_TOL: f64 = 1e-10;
/// Maximum deviation after phase alignment for two unitaries to be "equal".
pub const PHASE_EQUIV_TOL: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// A named one- or two-qubit unitary bound to target qubits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGate", into = "RawGate")]
pub struct GateSpec {
    name: String,
    targets: Vec<usize>,
    /// Row-major, dimension 2^|targets|.
    matrix: Vec<C64>,
}

impl GateSpec {
    pub fn new(name: impl Into<String>, targets: Vec<usize>, matrix: Vec<C64>) -> Result<Self> {
        let name = name.into();
        let k = targets.len();
        if !(1..=2).contains(&k) {
            return Err(Error::Argument(format!(
                "gate {name} has {k} targets; only 1 or 2 are supported"
            )));
        }
        if k == 2 && targets[0] == targets[1] {
            return Err(Error::Argument(format!(
                "gate {name} has duplicate target {}",
                targets[0]
            )));
        }
        let dim = 1 << k;
        if matrix.len() != dim * dim {
            return Err(Error::Argument(format!(
                "gate {name} needs {} matrix entries, got {}",
                dim * dim,
                matrix.len()
            )));
        }
        let err = unitarity_error(&DMatrix::from_row_slice(dim, dim, &matrix));
        if !(err <= UNITARY_TOL) {
            return Err(Error::Validation(format!(
                "gate {name} is not unitary (max |U†U − I| = {err:e})"
            )));
        }
        Ok(Self {
            name,
            targets,
            matrix,
        })
    }

    fn trusted(name: &str, targets: Vec<usize>, matrix: Vec<C64>) -> Self {
        debug_assert!(Self::new(name, targets.clone(), matrix.clone()).is_ok());
        Self {
            name: name.to_string(),
            targets,
            matrix,
        }
    }

    pub fn from_matrix2(name: &str, q: usize, m: &Matrix2<C64>) -> Result<Self> {
        Self::new(name, vec![q], row_major(m.as_slice(), 2))
    }

    pub fn from_matrix4(name: &str, a: usize, b: usize, m: &Matrix4<C64>) -> Result<Self> {
        Self::new(name, vec![a, b], row_major(m.as_slice(), 4))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn matrix(&self) -> &[C64] {
        &self.matrix
    }

    /// The same unitary on different targets.
    pub fn on(&self, targets: &[usize]) -> Result<Self> {
        if targets.len() != self.targets.len() {
            return Err(Error::Argument(format!(
                "gate {} acts on {} qubits, {} targets given",
                self.name,
                self.targets.len(),
                targets.len()
            )));
        }
        Self::new(self.name.clone(), targets.to_vec(), self.matrix.clone())
    }

    pub fn matrix_2x2(&self) -> [[C64; 2]; 2] {
        let m = &self.matrix;
        [[m[0], m[1]], [m[2], m[3]]]
    }

    pub fn matrix_4x4(&self) -> [C64; 16] {
        let mut out = [ZERO; 16];
        out.copy_from_slice(&self.matrix);
        out
    }

    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        let d = 1 << self.targets.len();
        DMatrix::from_row_slice(d, d, &self.matrix)
    }

    /// Two-qubit matrix on the local wires (0, 1), where a single-qubit
    /// gate sits on `wire`.
    pub fn local4(&self, wire: usize) -> Matrix4<C64> {
        match self.targets.len() {
            1 => embed1(&Matrix2::from_row_slice(&self.matrix), wire),
            _ => Matrix4::from_row_slice(&self.matrix),
        }
    }
}

/// Wire format: `{name, targets, matrix: [[[re, im], ...], ...]}`.
#[derive(Serialize, Deserialize)]
struct RawGate {
    name: String,
    targets: Vec<usize>,
    matrix: Vec<Vec<[f64; 2]>>,
}

impl TryFrom<RawGate> for GateSpec {
    type Error = Error;

    fn try_from(raw: RawGate) -> Result<Self> {
        let dim = raw.matrix.len();
        if raw.matrix.iter().any(|row| row.len() != dim) {
            return Err(Error::Argument(format!(
                "gate {} matrix is not square",
                raw.name
            )));
        }
        let flat = raw
            .matrix
            .iter()
            .flatten()
            .map(|&[re, im]| C64::new(re, im))
            .collect();
        GateSpec::new(raw.name, raw.targets, flat)
    }
}

impl From<GateSpec> for RawGate {
    fn from(g: GateSpec) -> Self {
        let d = 1 << g.targets.len();
        let matrix = g
            .matrix
            .chunks(d)
            .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        RawGate {
            name: g.name,
            targets: g.targets,
            matrix,
        }
    }
}

fn row_major(col_major: &[C64], d: usize) -> Vec<C64> {
    (0..d * d).map(|k| col_major[(k % d) * d + k / d]).collect()
}

/// Max-entry deviation of U†U from the identity.
pub fn unitarity_error(u: &DMatrix<C64>) -> f64 {
    let p = u.adjoint() * u;
    let n = p.nrows();
    let mut err: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let e = if r == c { ONE } else { ZERO };
            err = err.max((p[(r, c)] - e).norm());
        }
    }
    err
}

pub fn unitarity_error4(u: &Matrix4<C64>) -> f64 {
    (u.adjoint() * u - Matrix4::identity())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

// --- single-qubit matrices -------------------------------------------------

pub fn pauli_x_matrix() -> Matrix2<C64> {
    Matrix2::new(ZERO, ONE, ONE, ZERO)
}

pub fn pauli_y_matrix() -> Matrix2<C64> {
    Matrix2::new(ZERO, -I, I, ZERO)
}

pub fn pauli_z_matrix() -> Matrix2<C64> {
    Matrix2::new(ONE, ZERO, ZERO, -ONE)
}

pub fn hadamard_matrix() -> Matrix2<C64> {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    Matrix2::new(r, r, r, -r)
}

/// Place a single-qubit matrix on `wire` (0 = most significant) of a pair.
pub fn embed1(m: &Matrix2<C64>, wire: usize) -> Matrix4<C64> {
    let id = Matrix2::<C64>::identity();
    if wire == 0 {
        m.kronecker(&id).fixed_view::<4, 4>(0, 0).into_owned()
    } else {
        id.kronecker(m).fixed_view::<4, 4>(0, 0).into_owned()
    }
}

pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    a.kronecker(b).fixed_view::<4, 4>(0, 0).into_owned()
}

// --- gate constructors -----------------------------------------------------

pub fn hadamard(q: usize) -> GateSpec {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    GateSpec::trusted("H", vec![q], vec![r, r, r, -r])
}

pub fn pauli_x(q: usize) -> GateSpec {
    GateSpec::trusted("X", vec![q], vec![ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y(q: usize) -> GateSpec {
    GateSpec::trusted("Y", vec![q], vec![ZERO, -I, I, ZERO])
}

pub fn pauli_z(q: usize) -> GateSpec {
    GateSpec::trusted("Z", vec![q], vec![ONE, ZERO, ZERO, -ONE])
}

pub fn identity(q: usize) -> GateSpec {
    GateSpec::trusted("I", vec![q], vec![ONE, ZERO, ZERO, ONE])
}

pub fn cz_xmon_matrix() -> Matrix4<C64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(-ONE, ONE, ONE, ONE))
}

/// Controlled phase in the Xmon convention: only ∣00⟩ picks up a sign.
/// Symmetric in its two targets.
pub fn cz_xmon(a: usize, b: usize) -> GateSpec {
    let mut m = vec![ZERO; 16];
    m[0] = -ONE;
    m[5] = ONE;
    m[10] = ONE;
    m[15] = ONE;
    GateSpec::trusted("CZ", vec![a, b], m)
}

/// The Bell-generating gate, defined by its column images:
/// ∣00⟩ → (∣00⟩+∣11⟩)/√2, ∣01⟩ → (∣01⟩+∣10⟩)/√2,
/// ∣10⟩ → (∣10⟩−∣01⟩)/√2, ∣11⟩ → (∣11⟩−∣00⟩)/√2.
pub fn u_bell_matrix() -> Matrix4<C64> {
    let r = FRAC_1_SQRT_2;
    #[rustfmt::skip]
    let m = Matrix4::new(
        r,   0.0, 0.0, -r,
        0.0, r,   -r,  0.0,
        0.0, r,   r,   0.0,
        r,   0.0, 0.0, r,
    );
    m.map(|x| C64::new(x, 0.0))
}

pub fn u_bell(a: usize, b: usize) -> GateSpec {
    GateSpec::trusted(
        "UBell",
        vec![a, b],
        row_major(u_bell_matrix().as_slice(), 4),
    )
}

// --- XY Hamiltonian form ---------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XYHamiltonianParams {
    pub j1: f64,
    pub j2: f64,
    pub xi_tau: f64,
}

impl XYHamiltonianParams {
    /// J1 = 5/4, J2 = 1, ξτ = π.
    pub fn bell_point() -> Self {
        Self {
            j1: 1.25,
            j2: 1.0,
            xi_tau: std::f64::consts::PI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j1.is_finite() && self.j2.is_finite() && self.xi_tau.is_finite()) {
            return Err(Error::Validation("XY parameters must be finite".into()));
        }
        if !(self.xi_tau > 0.0) {
            return Err(Error::Validation(format!(
                "xi_tau must be positive, got {}",
                self.xi_tau
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitOrder {
    AsWritten,
    Exchanged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum J2Sign {
    AsWritten,
    Flipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaYSign {
    Standard,
    Inverted,
}

/// How to read J1 σˣ⊗σʸ − J2 σʸ⊗σˣ as a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConventionChoice {
    pub order: QubitOrder,
    pub j2_sign: J2Sign,
    pub sigma_y: SigmaYSign,
}

impl ConventionChoice {
    pub const AS_WRITTEN: ConventionChoice = ConventionChoice {
        order: QubitOrder::AsWritten,
        j2_sign: J2Sign::AsWritten,
        sigma_y: SigmaYSign::Standard,
    };

    /// All eight conventions in search order.
    pub fn all() -> Vec<ConventionChoice> {
        let mut out = Vec::with_capacity(8);
        for order in [QubitOrder::AsWritten, QubitOrder::Exchanged] {
            for j2_sign in [J2Sign::AsWritten, J2Sign::Flipped] {
                for sigma_y in [SigmaYSign::Standard, SigmaYSign::Inverted] {
                    out.push(ConventionChoice {
                        order,
                        j2_sign,
                        sigma_y,
                    });
                }
            }
        }
        out
    }
}

impl fmt::Display for ConventionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = match self.order {
            QubitOrder::AsWritten => "order=jk",
            QubitOrder::Exchanged => "order=kj",
        };
        let s = match self.j2_sign {
            J2Sign::AsWritten => "j2=-",
            J2Sign::Flipped => "j2=+",
        };
        let y = match self.sigma_y {
            SigmaYSign::Standard => "sy=std",
            SigmaYSign::Inverted => "sy=inv",
        };
        write!(f, "{o},{s},{y}")
    }
}

pub fn swap_matrix() -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    m[(0, 0)] = ONE;
    m[(1, 2)] = ONE;
    m[(2, 1)] = ONE;
    m[(3, 3)] = ONE;
    m
}

/// J1 σˣ⊗σʸ − J2 σʸ⊗σˣ under `conv`.
pub fn xy_hamiltonian(j1: f64, j2: f64, conv: ConventionChoice) -> Matrix4<C64> {
    let sx = pauli_x_matrix();
    let sy = match conv.sigma_y {
        SigmaYSign::Standard => pauli_y_matrix(),
        SigmaYSign::Inverted => -pauli_y_matrix(),
    };
    let s2 = match conv.j2_sign {
        J2Sign::AsWritten => -1.0,
        J2Sign::Flipped => 1.0,
    };
    let h = kron2(&sx, &sy) * C64::new(j1, 0.0) + kron2(&sy, &sx) * C64::new(s2 * j2, 0.0);
    match conv.order {
        QubitOrder::AsWritten => h,
        QubitOrder::Exchanged => {
            let sw = swap_matrix();
            sw * h * sw
        }
    }
}

/// exp(−i·ξτ·H) for the XY Hamiltonian. Shared by the gate library and the
/// Rabi-chain reference propagator.
pub fn xy_propagator(j1: f64, j2: f64, xi_tau: f64, conv: ConventionChoice) -> Matrix4<C64> {
    (xy_hamiltonian(j1, j2, conv) * C64::new(0.0, -xi_tau)).exp()
}

pub fn u_bell_from_xy(params: &XYHamiltonianParams, conv: ConventionChoice) -> Result<GateSpec> {
    params.validate()?;
    let u = xy_propagator(params.j1, params.j2, params.xi_tau, conv);
    GateSpec::from_matrix4("UBell_xy", 0, 1, &u)
}

/// Max-entry deviation between `a` and e^{iφ}`b`, with φ = arg Tr(b†a).
pub fn phase_aligned_deviation<R: nalgebra::Dim, C: nalgebra::Dim, S1, S2>(
    a: &nalgebra::Matrix<C64, R, C, S1>,
    b: &nalgebra::Matrix<C64, R, C, S2>,
) -> f64
where
    S1: nalgebra::Storage<C64, R, C>,
    S2: nalgebra::Storage<C64, R, C>,
{
    let overlap: C64 = a.iter().zip(b.iter()).map(|(x, y)| y.conj() * x).sum();
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        ONE
    };
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - phase * y).norm())
        .fold(0.0, f64::max)
}

/// |Tr(U†V)|² / d².
pub fn gate_fidelity(u: &Matrix4<C64>, v: &Matrix4<C64>) -> f64 {
    (u.adjoint() * v).trace().norm_sqr() / 16.0
}

fn sub_block(m: &Matrix4<C64>, idx: [usize; 2]) -> Matrix2<C64> {
    Matrix2::from_fn(|r, c| m[(idx[r], idx[c])])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConventionEntry {
    pub convention: ConventionChoice,
    /// Full 4×4 deviation after phase alignment.
    pub deviation: f64,
    /// Deviation restricted to the {∣00⟩,∣11⟩} block, own phase.
    pub block_even: f64,
    /// Deviation restricted to the {∣01⟩,∣10⟩} block, own phase.
    pub block_odd: f64,
    pub matches: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConventionReport {
    pub params: XYHamiltonianParams,
    pub entries: Vec<ConventionEntry>,
    /// First matching convention in search order.
    pub selected: Option<ConventionChoice>,
    /// Smallest-deviation convention; equals `selected` when one matches.
    pub best: ConventionChoice,
}

impl ConventionReport {
    pub fn matching(&self) -> Vec<ConventionChoice> {
        self.entries
            .iter()
            .filter(|e| e.matches)
            .map(|e| e.convention)
            .collect()
    }
}

/// Try every convention at the given parameters against the U^Bell matrix.
pub fn convention_search(params: &XYHamiltonianParams) -> Result<ConventionReport> {
    params.validate()?;
    let target = u_bell_matrix();
    let entries: Vec<ConventionEntry> = ConventionChoice::all()
        .into_iter()
        .map(|conv| {
            let u = xy_propagator(params.j1, params.j2, params.xi_tau, conv);
            let deviation = phase_aligned_deviation(&u, &target);
            ConventionEntry {
                convention: conv,
                deviation,
                block_even: phase_aligned_deviation(
                    &sub_block(&u, [0, 3]),
                    &sub_block(&target, [0, 3]),
                ),
                block_odd: phase_aligned_deviation(
                    &sub_block(&u, [1, 2]),
                    &sub_block(&target, [1, 2]),
                ),
                matches: deviation < PHASE_EQUIV_TOL,
            }
        })
        .collect();
    let selected = entries.iter().find(|e| e.matches).map(|e| e.convention);
    let best = entries
        .iter()
        .min_by(|a, b| a.deviation.total_cmp(&b.deviation))
        .map(|e| e.convention)
        .expect("eight conventions");
    Ok(ConventionReport {
        params: *params,
        entries,
        selected,
        best: selected.unwrap_or(best),
    })
}

/// Convention search at J1 = 5/4, J2 = 1, ξτ = π.
pub fn u_bell_convention_search() -> ConventionReport {
    convention_search(&XYHamiltonianParams::bell_point()).expect("fixed parameters are valid")
}

// --- circuit decomposition -------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimitiveGate {
    H,
    #[serde(rename = "CZ")]
    Cz,
    Z,
}

impl PrimitiveGate {
    pub const ALL: [PrimitiveGate; 3] = [PrimitiveGate::H, PrimitiveGate::Cz, PrimitiveGate::Z];

    fn is_two_qubit(self) -> bool {
        self == PrimitiveGate::Cz
    }

    fn on_wire(self, wire: usize) -> GateSpec {
        match self {
            PrimitiveGate::H => hadamard(wire),
            PrimitiveGate::Z => pauli_z(wire),
            PrimitiveGate::Cz => cz_xmon(0, 1),
        }
    }
}

pub type Census = BTreeMap<PrimitiveGate, usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitDecomposition {
    /// Gates on wires 0 and 1, applied first to last.
    pub steps: Vec<GateSpec>,
    #[serde(with = "matrix4_serde")]
    pub equivalent_matrix: Matrix4<C64>,
    pub census: Census,
    /// Phase-aligned deviation from the target.
    pub deviation: f64,
    pub candidates_tried: usize,
}

impl CircuitDecomposition {
    pub fn matches(&self) -> bool {
        self.deviation < PHASE_EQUIV_TOL
    }

    /// As-soon-as-possible layering: each gate goes one layer after the
    /// last layer touching any of its wires.
    pub fn layers(&self) -> Vec<Vec<usize>> {
        asap_layers(&self.steps)
    }
}

/// Result of a census-constrained search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSearch {
    pub requested_census: Census,
    /// Best candidate with exactly the requested census.
    pub best: CircuitDecomposition,
    /// When nothing with the requested census matches: the smallest
    /// augmented census that does, with its first matching circuit.
    pub augmented: Option<CircuitDecomposition>,
}

impl DecompositionSearch {
    pub fn found_with_requested_census(&self) -> bool {
        self.best.matches()
    }

    /// The matching circuit, from the requested or the augmented census.
    pub fn matching(&self) -> Option<&CircuitDecomposition> {
        if self.best.matches() {
            Some(&self.best)
        } else {
            self.augmented.as_ref()
        }
    }
}

pub fn asap_layers(steps: &[GateSpec]) -> Vec<Vec<usize>> {
    let mut wire_depth: BTreeMap<usize, usize> = BTreeMap::new();
    let mut layers: Vec<Vec<usize>> = Vec::new();
    for (i, g) in steps.iter().enumerate() {
        let d = g
            .targets()
            .iter()
            .map(|t| wire_depth.get(t).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        if layers.len() <= d {
            layers.resize(d + 1, Vec::new());
        }
        layers[d].push(i);
        for &t in g.targets() {
            wire_depth.insert(t, d + 1);
        }
    }
    layers
}

/// Largest total gate count the search will enumerate.
pub const MAX_SEARCH_GATES: usize = 9;
/// Maximum number of gates added when augmenting a census.
pub const MAX_AUGMENT: usize = 3;

/// Search all orderings and wire placements of `census` for a two-qubit
/// circuit equal to `target` up to global phase. If none exists, retry with
/// censuses enlarged by 1, 2, … gates (up to [`MAX_AUGMENT`]).
pub fn search_decomposition(target: &Matrix4<C64>, census: &Census) -> Result<DecompositionSearch> {
    let total: usize = census.values().sum();
    if total > MAX_SEARCH_GATES {
        return Err(Error::Capacity {
            what: "decomposition gates",
            requested: total,
            limit: MAX_SEARCH_GATES,
        });
    }
    let best = search_census(target, census, false);
    let mut augmented = None;
    if !best.matches() {
        'outer: for extra in 1..=MAX_AUGMENT.min(MAX_SEARCH_GATES - total) {
            for add in compositions(extra) {
                let mut c = census.clone();
                for (g, k) in PrimitiveGate::ALL.iter().zip(add) {
                    if k > 0 {
                        *c.entry(*g).or_insert(0) += k;
                    }
                }
                let found = search_census(target, &c, true);
                if found.matches() {
                    augmented = Some(found);
                    break 'outer;
                }
            }
        }
    }
    Ok(DecompositionSearch {
        requested_census: census.clone(),
        best,
        augmented,
    })
}

/// Decomposition of U^Bell into three Hadamards, two CZ and one σᶻ.
pub fn u_bell_decomposition() -> DecompositionSearch {
    let census: Census = [
        (PrimitiveGate::H, 3),
        (PrimitiveGate::Cz, 2),
        (PrimitiveGate::Z, 1),
    ]
    .into_iter()
    .collect();
    search_decomposition(&u_bell_matrix(), &census).expect("six gates is within the search limit")
}

/// Ways of writing `total` as an ordered triple of counts.
fn compositions(total: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..=total {
        for b in 0..=total - a {
            out.push([a, b, total - a - b]);
        }
    }
    // fewer distinct kinds added first, then lexicographic
    out.sort_by_key(|v| (v.iter().filter(|&&x| x > 0).count(), std::cmp::Reverse(*v)));
    out
}

fn search_census(
    target: &Matrix4<C64>,
    census: &Census,
    stop_at_first: bool,
) -> CircuitDecomposition {
    let mut items: Vec<PrimitiveGate> = census
        .iter()
        .flat_map(|(g, &k)| std::iter::repeat_n(*g, k))
        .collect();
    items.sort();
    let mut best: Option<(f64, Vec<(PrimitiveGate, usize)>, Matrix4<C64>)> = None;
    let mut tried = 0usize;
    let mut perm = items.clone();
    loop {
        let singles = perm.iter().filter(|g| !g.is_two_qubit()).count();
        for wires in 0..(1usize << singles) {
            let mut placed = Vec::with_capacity(perm.len());
            let mut bit = 0;
            for &g in &perm {
                let w = if g.is_two_qubit() {
                    0
                } else {
                    bit += 1;
                    (wires >> (singles - bit)) & 1
                };
                placed.push((g, w));
            }
            let u = compose(&placed);
            let dev = phase_aligned_deviation(&u, target);
            tried += 1;
            if best.as_ref().is_none_or(|(d, _, _)| dev < *d - 1e-15) {
                best = Some((dev, placed, u));
            }
            if stop_at_first && dev < PHASE_EQUIV_TOL {
                break;
            }
        }
        if stop_at_first && best.as_ref().is_some_and(|(d, _, _)| *d < PHASE_EQUIV_TOL) {
            break;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let (deviation, placed, u) = best.unwrap_or((
        phase_aligned_deviation(&Matrix4::identity(), target),
        Vec::new(),
        Matrix4::identity(),
    ));
    CircuitDecomposition {
        steps: placed.iter().map(|&(g, w)| g.on_wire(w)).collect(),
        equivalent_matrix: u,
        census: census.clone(),
        deviation,
        candidates_tried: tried,
    }
}

fn compose(placed: &[(PrimitiveGate, usize)]) -> Matrix4<C64> {
    let h = hadamard_matrix();
    let z = pauli_z_matrix();
    let cz = cz_xmon_matrix();
    placed.iter().fold(Matrix4::identity(), |acc, &(g, w)| {
        let m = match g {
            PrimitiveGate::H => embed1(&h, w),
            PrimitiveGate::Z => embed1(&z, w),
            PrimitiveGate::Cz => cz,
        };
        m * acc
    })
}

/// Lexicographic next permutation; false when `v` was the last one.
fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Serialize a 4×4 complex matrix as row-major `[[[re, im], ...], ...]`.
pub mod matrix4_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &Matrix4<C64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..4)
            .map(|r| (0..4).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Matrix4<C64>, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
            return Err(serde::de::Error::custom("expected a 4×4 matrix"));
        }
        Ok(Matrix4::from_fn(|r, c| {
            C64::new(rows[r][c][0], rows[r][c][1])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{init_product_state, ProductLabel, StateVector};
    use proptest::prelude::*;

    fn max_dev4(a: &Matrix4<C64>, b: &Matrix4<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn cz_examples() {
        let mut s = StateVector::basis_state(2, 1).unwrap();
        s.apply_gate(&cz_xmon(0, 1)).unwrap();
        assert_eq!(s.amplitudes()[1], ONE);
        let cz = cz_xmon_matrix();
        assert!(max_dev4(&(cz * cz), &Matrix4::identity()) < 1e-12);
        // exchange symmetry
        assert!(max_dev4(&(swap_matrix() * cz * swap_matrix()), &cz) < 1e-15);
    }

    #[test]
    fn cz_commutes_with_z() {
        let cz = cz_xmon_matrix();
        for w in 0..2 {
            let z = embed1(&pauli_z_matrix(), w);
            assert!(max_dev4(&(cz * z), &(z * cz)) < 1e-12);
        }
    }

    #[test]
    fn u_bell_columns() {
        let r = FRAC_1_SQRT_2;
        let mut s = StateVector::zero(2).unwrap();
        s.apply_gate(&u_bell(0, 1)).unwrap();
        let a = s.amplitudes();
        assert!((a[0].re - r).abs() < 1e-15 && (a[3].re - r).abs() < 1e-15);
        let mut s = StateVector::basis_state(2, 2).unwrap();
        s.apply_gate(&u_bell(0, 1)).unwrap();
        let a = s.amplitudes();
        assert!((a[2].re - r).abs() < 1e-15 && (a[1].re + r).abs() < 1e-15);
        assert!(unitarity_error4(&u_bell_matrix()) < 1e-12);
    }

    #[test]
    fn u_bell_gram_matrix_is_identity() {
        let u = u_bell_matrix();
        let g = u.adjoint() * u;
        assert!(max_dev4(&g, &Matrix4::identity()) < 1e-12);
    }

    #[test]
    fn non_unitary_and_duplicate_targets_rejected() {
        let bad = vec![ONE, ONE, ZERO, ONE];
        assert!(matches!(
            GateSpec::new("bad", vec![0], bad),
            Err(Error::Validation(_))
        ));
        let m = cz_xmon(0, 1).matrix().to_vec();
        assert!(matches!(
            GateSpec::new("cz", vec![1, 1], m),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn gate_json_round_trip() {
        let g = u_bell(2, 0);
        let js = serde_json::to_string(&g).unwrap();
        let back: GateSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(g, back);
        let not_unitary = r#"{"name":"x","targets":[0],"matrix":[[[1,0],[1,0]],[[0,0],[1,0]]]}"#;
        assert!(serde_json::from_str::<GateSpec>(not_unitary).is_err());
    }

    #[test]
    fn xy_zero_coupling_is_identity() {
        let p = XYHamiltonianParams {
            j1: 0.0,
            j2: 0.0,
            xi_tau: 1.0,
        };
        for conv in ConventionChoice::all() {
            let g = u_bell_from_xy(&p, conv).unwrap();
            let u = g.local4(0);
            assert!(max_dev4(&u, &Matrix4::identity()) < 1e-14);
        }
    }

    #[test]
    fn xy_even_block_matches_closed_form() {
        // σˣσʸ and σʸσˣ both act on {∣00⟩,∣11⟩} as multiples of σʸ; with
        // J1 = 5/4, J2 = 1 the block generator is σʸ/4 and ξτ = π gives
        // exp(−iπσʸ/4) = [[1,−1],[1,1]]/√2 exactly.
        let u = xy_propagator(
            1.25,
            1.0,
            std::f64::consts::PI,
            ConventionChoice::AS_WRITTEN,
        );
        let r = FRAC_1_SQRT_2;
        let expect = [[r, -r], [r, r]];
        for (i, a) in [0usize, 3].iter().enumerate() {
            for (j, b) in [0usize, 3].iter().enumerate() {
                assert!((u[(*a, *b)] - C64::new(expect[i][j], 0.0)).norm() < 1e-12);
            }
        }
        let mut s = StateVector::zero(2).unwrap();
        s.apply_gate(&GateSpec::from_matrix4("u", 0, 1, &u).unwrap())
            .unwrap();
        assert!(
            (s.amplitudes()[0].re - r).abs() < 1e-12 && (s.amplitudes()[3].re - r).abs() < 1e-12
        );
    }

    #[test]
    fn xy_odd_block_closed_form() {
        // on {∣01⟩,∣10⟩} the generator is −(J1 + J2)·σʸ
        let theta = (1.25 + 1.0) * std::f64::consts::PI;
        let u = xy_propagator(
            1.25,
            1.0,
            std::f64::consts::PI,
            ConventionChoice::AS_WRITTEN,
        );
        let (c, s) = (theta.cos(), theta.sin());
        assert!((u[(1, 1)] - C64::new(c, 0.0)).norm() < 1e-12);
        assert!((u[(2, 2)] - C64::new(c, 0.0)).norm() < 1e-12);
        assert!((u[(1, 2)].re.abs() - s.abs()).abs() < 1e-12);
    }

    #[test]
    fn convention_search_result() {
        let rep = u_bell_convention_search();
        assert_eq!(rep.entries.len(), 8);
        let matching = rep.matching();
        assert_eq!(
            matching,
            vec![
                ConventionChoice {
                    order: QubitOrder::Exchanged,
                    j2_sign: J2Sign::AsWritten,
                    sigma_y: SigmaYSign::Standard
                },
                ConventionChoice {
                    order: QubitOrder::Exchanged,
                    j2_sign: J2Sign::Flipped,
                    sigma_y: SigmaYSign::Standard
                },
            ]
        );
        assert_eq!(rep.selected, Some(matching[0]));
        for e in &rep.entries {
            if e.matches {
                assert!(e.deviation < 1e-9);
            } else {
                assert!(e.deviation > 1.0);
            }
        }
        // σʸ inversion negates the whole generator, so it breaks the even
        // block too
        let as_written = rep.entries[0].clone();
        let inverted = rep.entries[1].clone();
        assert!(as_written.block_even < 1e-12);
        assert!(inverted.block_even > 0.1);
        assert!(as_written.block_odd > 0.1);
    }

    #[test]
    fn decomposition_of_u_bell() {
        let search = u_bell_decomposition();
        assert!(search.found_with_requested_census());
        assert!(search.augmented.is_none());
        let d = &search.best;
        assert_eq!(d.steps.len(), 6);
        assert_eq!(d.steps.iter().filter(|g| g.name() == "H").count(), 3);
        assert_eq!(d.steps.iter().filter(|g| g.name() == "CZ").count(), 2);
        assert_eq!(d.steps.iter().filter(|g| g.name() == "Z").count(), 1);
        assert!(phase_aligned_deviation(&d.equivalent_matrix, &u_bell_matrix()) < 1e-9);
        assert!(gate_fidelity(&d.equivalent_matrix, &u_bell_matrix()) > 1.0 - 1e-9);
        assert!(unitarity_error4(&d.equivalent_matrix) < 1e-12);

        // replay on a state vector
        let mut s = StateVector::zero(2).unwrap();
        for g in &d.steps {
            s.apply_gate(g).unwrap();
        }
        let r = FRAC_1_SQRT_2;
        let bell =
            StateVector::from_amplitudes(vec![C64::new(r, 0.0), ZERO, ZERO, C64::new(r, 0.0)])
                .unwrap();
        assert!((crate::state::state_fidelity(&s, &bell).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(d.layers().len(), 5);
    }

    #[test]
    fn decomposition_fallback_augments_census() {
        // a single Hadamard can never equal the identity; two can
        let census: Census = [(PrimitiveGate::H, 1)].into_iter().collect();
        let search = search_decomposition(&Matrix4::identity(), &census).unwrap();
        assert!(!search.found_with_requested_census());
        let aug = search.augmented.expect("augmented census");
        assert_eq!(
            aug.census,
            [(PrimitiveGate::H, 2)].into_iter().collect::<Census>()
        );
        assert!(aug.matches());
    }

    #[test]
    fn next_permutation_counts_multiset() {
        let mut v = vec![0, 0, 0, 1, 1, 2];
        let mut count = 1;
        while next_permutation(&mut v) {
            count += 1;
        }
        assert_eq!(count, 60);
    }

    #[test]
    fn asap_layering() {
        let steps = vec![hadamard(0), hadamard(1), cz_xmon(0, 1), pauli_z(0)];
        assert_eq!(asap_layers(&steps), vec![vec![0, 1], vec![2], vec![3]]);
    }

    #[test]
    fn product_label_minus_sign() {
        let m = init_product_state(1, &[ProductLabel::Minus]).unwrap();
        let mut x = m.clone();
        x.apply_gate(&pauli_x(0)).unwrap();
        // X∣−⟩ = −∣−⟩
        assert!((crate::state::state_fidelity(&m, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((m.inner(&x).unwrap().re + 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn xy_exponential_consistency(j1 in -3.0f64..3.0, j2 in -3.0f64..3.0, ci in 0usize..8) {
            let conv = ConventionChoice::all()[ci];
            let pi = std::f64::consts::PI;
            let a = xy_propagator(j1, j2, pi, conv);
            let b = xy_propagator(j1 / 2.0, j2 / 2.0, 2.0 * pi, conv);
            prop_assert!(max_dev4(&a, &b) < 1e-10);
            prop_assert!(unitarity_error4(&a) < 1e-10);
        }

        #[test]
        fn every_constructed_gate_is_unitary(q in 0usize..5, j1 in -2.0f64..2.0, j2 in -2.0f64..2.0, t in 0.01f64..7.0) {
            for g in [hadamard(q), pauli_x(q), pauli_y(q), pauli_z(q), cz_xmon(q, q + 1), u_bell(q + 1, q)] {
                prop_assert!(unitarity_error(&g.to_dmatrix()) < UNITARY_TOL);
            }
            let p = XYHamiltonianParams { j1, j2, xi_tau: t };
            for conv in ConventionChoice::all() {
                let g = u_bell_from_xy(&p, conv).unwrap();
                prop_assert!(unitarity_error(&g.to_dmatrix()) < UNITARY_TOL);
            }
        }
    }
}
