//! Multiplicative fidelity and critical-path timing estimates.
//!
//! Durations are in microseconds. A measurement element covers readout
//! plus classical feedforward latency (`t_meas_ff`); the matching
//! feedforward element only contributes its fidelity.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::lattice_layers;
use crate::error::{Error, Result};
use crate::gates::{u_bell_decomposition, PrimitiveGate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasParallelism {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceModel {
    pub f_cz: f64,
    pub t_cz: f64,
    pub f_meas: f64,
    pub f_ff: f64,
    pub t_meas_ff: f64,
    /// Not a measured number: calibrated so that the U^Bell estimate lands
    /// near 98.8%.
    pub f_1q: f64,
    pub t_1q: f64,
    pub meas_parallelism: MeasParallelism,
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel {
            f_cz: 0.995,
            t_cz: 0.05,
            f_meas: 0.99,
            f_ff: 0.99,
            t_meas_ff: 2.0,
            f_1q: 0.9995,
            t_1q: 0.02,
            meas_parallelism: MeasParallelism::Sequential,
        }
    }
}

impl DeviceModel {
    pub fn perfect() -> Self {
        DeviceModel {
            f_cz: 1.0,
            f_meas: 1.0,
            f_ff: 1.0,
            f_1q: 1.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("f_cz", self.f_cz),
            ("f_meas", self.f_meas),
            ("f_ff", self.f_ff),
            ("f_1q", self.f_1q),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Validation(format!("{name} = {f} is outside (0, 1]")));
            }
        }
        for (name, t) in [
            ("t_cz", self.t_cz),
            ("t_meas_ff", self.t_meas_ff),
            ("t_1q", self.t_1q),
        ] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Validation(format!(
                    "{name} = {t} must be a finite non-negative duration"
                )));
            }
        }
        Ok(())
    }

    /// Set one field by name from a string, as given on a command line.
    pub fn set_field(&mut self, name: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::Argument(format!("{name}: expected a number, got {value:?}")))
        };
        match name {
            "f_cz" => self.f_cz = num()?,
            "t_cz" => self.t_cz = num()?,
            "f_meas" => self.f_meas = num()?,
            "f_ff" => self.f_ff = num()?,
            "t_meas_ff" => self.t_meas_ff = num()?,
            "f_1q" => self.f_1q = num()?,
            "t_1q" => self.t_1q = num()?,
            "meas_parallelism" => {
                self.meas_parallelism = match value {
                    "sequential" => MeasParallelism::Sequential,
                    "parallel" => MeasParallelism::Parallel,
                    _ => {
                        return Err(Error::Argument(format!(
                            "meas_parallelism: unknown mode {value:?}"
                        )))
                    }
                }
            }
            _ => return Err(Error::Argument(format!("unknown device field {name:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GateKind {
    Cz,
    H,
    X,
    Y,
    Z,
    Measure,
    Feedforward,
}

impl GateKind {
    pub fn fidelity(self, d: &DeviceModel) -> f64 {
        match self {
            GateKind::Cz => d.f_cz,
            GateKind::H | GateKind::X | GateKind::Y | GateKind::Z => d.f_1q,
            GateKind::Measure => d.f_meas,
            GateKind::Feedforward => d.f_ff,
        }
    }

    pub fn duration(self, d: &DeviceModel) -> f64 {
        match self {
            GateKind::Cz => d.t_cz,
            GateKind::H | GateKind::X | GateKind::Y | GateKind::Z => d.t_1q,
            GateKind::Measure => d.t_meas_ff,
            GateKind::Feedforward => 0.0,
        }
    }

    pub fn is_single_qubit(self) -> bool {
        matches!(self, GateKind::H | GateKind::X | GateKind::Y | GateKind::Z)
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Cz => "CZ",
            GateKind::H => "H",
            GateKind::X => "X",
            GateKind::Y => "Y",
            GateKind::Z => "Z",
            GateKind::Measure => "measure",
            GateKind::Feedforward => "feedforward",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "CZ" | "cz" => GateKind::Cz,
            "H" | "h" => GateKind::H,
            "X" | "x" => GateKind::X,
            "Y" | "y" => GateKind::Y,
            "Z" | "z" => GateKind::Z,
            "measure" | "meas" | "M" => GateKind::Measure,
            "feedforward" | "ff" | "F" => GateKind::Feedforward,
            _ => return Err(Error::Argument(format!("unknown gate kind {s:?}"))),
        })
    }
}

impl TryFrom<String> for GateKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GateKind> for String {
    fn from(g: GateKind) -> String {
        g.name().to_string()
    }
}

impl From<PrimitiveGate> for GateKind {
    fn from(g: PrimitiveGate) -> Self {
        match g {
            PrimitiveGate::H => GateKind::H,
            PrimitiveGate::Cz => GateKind::Cz,
            PrimitiveGate::Z => GateKind::Z,
        }
    }
}

pub type GateCensus = BTreeMap<GateKind, usize>;

/// Gates grouped into layers that run concurrently; the census is implied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSchedule {
    pub name: String,
    pub n_qubits: usize,
    pub layers: Vec<Vec<GateKind>>,
}

impl ProtocolSchedule {
    pub fn new(name: &str, n_qubits: usize, layers: Vec<Vec<GateKind>>) -> Self {
        ProtocolSchedule {
            name: name.to_string(),
            n_qubits,
            layers,
        }
    }

    /// Layers given as gate-kind names.
    pub fn parse(name: &str, n_qubits: usize, layers: &[Vec<&str>]) -> Result<Self> {
        let layers = layers
            .iter()
            .map(|l| l.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(Self::new(name, n_qubits, layers))
    }

    pub fn census(&self) -> GateCensus {
        let mut c = GateCensus::new();
        for g in self.layers.iter().flatten() {
            *c.entry(*g).or_insert(0) += 1;
        }
        c
    }

    pub fn n_measurements(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .filter(|g| **g == GateKind::Measure)
            .count()
    }

    /// Run `other` after `self`.
    pub fn then(&self, other: &ProtocolSchedule) -> ProtocolSchedule {
        ProtocolSchedule {
            name: format!("{}+{}", self.name, other.name),
            n_qubits: self.n_qubits.max(other.n_qubits),
            layers: self.layers.iter().chain(&other.layers).cloned().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolCost {
    pub name: String,
    pub gate_census: GateCensus,
    pub n_qubits: usize,
    pub n_measurements: usize,
    pub estimated_fidelity: f64,
    /// μs, critical path.
    pub estimated_time: f64,
    pub layer_times: Vec<f64>,
    /// The census includes single-qubit gates, whose default fidelity is a
    /// calibrated value rather than a device number.
    pub f_1q_calibrated: bool,
}

fn layer_time(layer: &[GateKind], d: &DeviceModel) -> f64 {
    let others = layer
        .iter()
        .filter(|g| **g != GateKind::Measure)
        .map(|g| g.duration(d))
        .fold(0.0, f64::max);
    let m = layer.iter().filter(|g| **g == GateKind::Measure).count();
    let meas = match (m, d.meas_parallelism) {
        (0, _) => 0.0,
        (m, MeasParallelism::Sequential) => m as f64 * d.t_meas_ff,
        (_, MeasParallelism::Parallel) => d.t_meas_ff,
    };
    others.max(meas)
}

pub fn estimate(schedule: &ProtocolSchedule, device: &DeviceModel) -> Result<ProtocolCost> {
    device.validate()?;
    let census = schedule.census();
    let estimated_fidelity = census
        .iter()
        .map(|(g, &k)| g.fidelity(device).powi(k as i32))
        .product();
    let layer_times: Vec<f64> = schedule
        .layers
        .iter()
        .map(|l| layer_time(l, device))
        .collect();
    Ok(ProtocolCost {
        name: schedule.name.clone(),
        f_1q_calibrated: census.keys().any(|g| g.is_single_qubit()),
        n_measurements: schedule.n_measurements(),
        gate_census: census,
        n_qubits: schedule.n_qubits,
        estimated_fidelity,
        estimated_time: layer_times.iter().sum(),
        layer_times,
    })
}

/// One layer of CZ per non-empty lattice layer.
pub fn cluster_schedule(h: usize, l: usize) -> ProtocolSchedule {
    let layers = lattice_layers(h, l)
        .into_iter()
        .filter(|l| !l.is_empty())
        .map(|l| vec![GateKind::Cz; l.len()])
        .collect();
    ProtocolSchedule::new(&format!("cluster {h}x{l}"), h * l, layers)
}

/// Three sequential CZ on the shared ancilla, then both measurements with
/// their feedforward.
pub fn cnot_standard_schedule() -> ProtocolSchedule {
    use GateKind::*;
    ProtocolSchedule::new(
        "cnot standard",
        4,
        vec![
            vec![Cz],
            vec![Cz],
            vec![Cz],
            vec![Measure, Feedforward, Measure, Feedforward],
        ],
    )
}

/// ASAP layers of the U^Bell decomposition found by the gate search.
pub fn ubell_schedule() -> Result<ProtocolSchedule> {
    let search = u_bell_decomposition();
    let dec = search
        .matching()
        .ok_or_else(|| Error::Validation("no U^Bell decomposition found".into()))?;
    let layers = dec
        .layers()
        .into_iter()
        .map(|l| {
            l.into_iter()
                .map(|i| dec.steps[i].name().parse::<GateKind>())
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(ProtocolSchedule::new("ubell", 2, layers))
}

/// U^Bell, one CZ, one measurement with feedforward. The output Hadamard
/// is not costed, so the fidelity is ubell · f_cz · f_meas · f_ff.
pub fn cnot_efficient_schedule() -> Result<ProtocolSchedule> {
    use GateKind::*;
    let tail = ProtocolSchedule::new("", 3, vec![vec![Cz], vec![Measure, Feedforward]]);
    let mut s = ubell_schedule()?.then(&tail);
    s.name = "cnot efficient".into();
    Ok(s)
}

pub fn ubell_cost(device: &DeviceModel) -> Result<ProtocolCost> {
    estimate(&ubell_schedule()?, device)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub standard: ProtocolCost,
    pub efficient: ProtocolCost,
    pub ubell: ProtocolCost,
    /// (standard − efficient) / standard qubit count.
    pub ancilla_reduction: f64,
    /// |efficient − ubell · f_cz · f_meas · f_ff|.
    pub composition_error: f64,
}

pub fn compare_protocols(device: &DeviceModel) -> Result<ComparisonReport> {
    let standard = estimate(&cnot_standard_schedule(), device)?;
    let efficient = estimate(&cnot_efficient_schedule()?, device)?;
    let ubell = ubell_cost(device)?;
    let composed = ubell.estimated_fidelity * device.f_cz * device.f_meas * device.f_ff;
    Ok(ComparisonReport {
        ancilla_reduction: (standard.n_qubits - efficient.n_qubits) as f64
            / standard.n_qubits as f64,
        composition_error: (efficient.estimated_fidelity - composed).abs(),
        standard,
        efficient,
        ubell,
    })
}

/// How many C-NOTs fit in `total_qubits`: (standard, efficient).
pub fn capacity_planner(total_qubits: usize) -> Result<(usize, usize)> {
    if total_qubits < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 qubits, got {total_qubits}"
        )));
    }
    Ok((total_qubits / 4, total_qubits / 3))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityPlan {
    pub total_qubits: usize,
    pub standard_cnots: usize,
    pub efficient_cnots: usize,
    /// Product of the per-C-NOT estimates.
    pub standard_fidelity: f64,
    pub efficient_fidelity: f64,
    /// Lattice used for the cluster-generation factor (most square h × l).
    pub lattice: (usize, usize),
    pub cluster_fidelity: f64,
    pub standard_fidelity_with_cluster: f64,
    pub efficient_fidelity_with_cluster: f64,
}

fn squarest(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && !n.is_multiple_of(h) {
        h -= 1;
    }
    (h.max(1), n / h.max(1))
}

/// Capacity together with the chained fidelity, both without and with the
/// cost of generating a cluster over the whole array.
pub fn capacity_plan(total_qubits: usize, device: &DeviceModel) -> Result<CapacityPlan> {
    let (s, e) = capacity_planner(total_qubits)?;
    let cmp = compare_protocols(device)?;
    let lattice = squarest(total_qubits);
    let cluster = estimate(&cluster_schedule(lattice.0, lattice.1), device)?.estimated_fidelity;
    let fs = cmp.standard.estimated_fidelity.powi(s as i32);
    let fe = cmp.efficient.estimated_fidelity.powi(e as i32);
    Ok(CapacityPlan {
        total_qubits,
        standard_cnots: s,
        efficient_cnots: e,
        standard_fidelity: fs,
        efficient_fidelity: fe,
        lattice,
        cluster_fidelity: cluster,
        standard_fidelity_with_cluster: fs * cluster,
        efficient_fidelity_with_cluster: fe * cluster,
    })
}
