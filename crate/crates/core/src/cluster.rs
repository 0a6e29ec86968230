//! Cluster states on h×l lattices built with four parallel CZ layers.
//!
//! Sites are 1-based `(j, k)` with `j` the column and `k` the row; site
//! `(j, k)` lives on qubit `(k−1)·h + (j−1)`. Edges are directed from the
//! lower-coordinate end (control) to its +x or +y neighbour (target).
//!
//! With the Xmon CZ phasing ∣00⟩ instead of ∣11⟩, the product of all CZs on
//! ∣+…+⟩ is not the cluster state. Starting every site that controls exactly
//! one edge in ∣−⟩ instead fixes this: the combined effect is a sign flip on
//! each component with control bit 0 and target bit 1, which is the
//! defining phase of the cluster.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{capacity, Error, Result};
use crate::gates::cz_xmon;
use crate::state::{init_product_state, state_fidelity, ProductLabel, StateVector, MAX_QUBITS};

/// Reference construction is O(2^n · edges); keep it bounded.
pub const MAX_REFERENCE_SITES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Site {
    pub j: usize,
    pub k: usize,
}

impl Site {
    pub fn new(j: usize, k: usize) -> Self {
        Self { j, k }
    }

    pub fn index(self, h: usize) -> usize {
        (self.k - 1) * h + (self.j - 1)
    }
}

impl From<[usize; 2]> for Site {
    fn from([j, k]: [usize; 2]) -> Self {
        Site { j, k }
    }
}

impl From<Site> for [usize; 2] {
    fn from(s: Site) -> Self {
        [s.j, s.k]
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.j, self.k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub control: Site,
    pub target: Site,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitSign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl InitSign {
    fn label(self) -> ProductLabel {
        match self {
            InitSign::Plus => ProductLabel::Plus,
            InitSign::Minus => ProductLabel::Minus,
        }
    }
}

/// Four CZ layers plus the initial ± assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct LatticeSchedule {
    pub h: usize,
    pub l: usize,
    pub layers: Vec<Vec<Edge>>,
    pub init: BTreeMap<Site, InitSign>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    h: usize,
    l: usize,
    layers: Vec<Vec<Edge>>,
    init: BTreeMap<String, InitSign>,
}

impl TryFrom<RawSchedule> for LatticeSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        let mut init = BTreeMap::new();
        for (key, sign) in raw.init {
            let parts: Vec<&str> = key.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Argument(format!("bad site key {key:?}")))
            };
            if parts.len() != 2 {
                return Err(Error::Argument(format!("bad site key {key:?}")));
            }
            init.insert(Site::new(parse(parts[0])?, parse(parts[1])?), sign);
        }
        let s = LatticeSchedule {
            h: raw.h,
            l: raw.l,
            layers: raw.layers,
            init,
        };
        s.validate()?;
        Ok(s)
    }
}

impl From<LatticeSchedule> for RawSchedule {
    fn from(s: LatticeSchedule) -> Self {
        RawSchedule {
            h: s.h,
            l: s.l,
            layers: s.layers,
            init: s
                .init
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

/// Every nearest-neighbour directed edge, x-edges first.
pub fn lattice_edges(h: usize, l: usize) -> Vec<Edge> {
    let mut out = Vec::new();
    for k in 1..=l {
        for j in 1..h {
            out.push(Edge {
                control: Site::new(j, k),
                target: Site::new(j + 1, k),
            });
        }
    }
    for k in 1..l {
        for j in 1..=h {
            out.push(Edge {
                control: Site::new(j, k),
                target: Site::new(j, k + 1),
            });
        }
    }
    out
}

/// Number of edges each site controls (0, 1 or 2).
fn control_counts(h: usize, l: usize) -> BTreeMap<Site, usize> {
    let mut counts: BTreeMap<Site, usize> = sites(h, l).map(|s| (s, 0)).collect();
    for e in lattice_edges(h, l) {
        *counts.get_mut(&e.control).expect("site in lattice") += 1;
    }
    counts
}

fn sites(h: usize, l: usize) -> impl Iterator<Item = Site> {
    (1..=l).flat_map(move |k| (1..=h).map(move |j| Site::new(j, k)))
}

impl LatticeSchedule {
    pub fn n_sites(&self) -> usize {
        self.h * self.l
    }

    pub fn n_edges(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    /// Number of layers that contain at least one gate.
    pub fn depth(&self) -> usize {
        self.layers.iter().filter(|l| !l.is_empty()).count()
    }

    /// Full check, including the ± initialization rule.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        let counts = control_counts(self.h, self.l);
        for (site, n) in counts {
            let want = if n % 2 == 1 {
                InitSign::Minus
            } else {
                InitSign::Plus
            };
            if self.init[&site] != want {
                return Err(Error::Validation(format!(
                    "site ({site}) controls {n} edges and must start in {want:?}"
                )));
            }
        }
        Ok(())
    }

    /// Lattice size, layer count, edge cover and per-layer disjointness,
    /// plus an init entry for every site. The ± rule is not checked.
    pub fn validate_structure(&self) -> Result<()> {
        if self.h == 0 || self.l == 0 {
            return Err(Error::Argument(format!(
                "lattice must be at least 1×1, got {}×{}",
                self.h, self.l
            )));
        }
        capacity("lattice sites", self.h * self.l, MAX_QUBITS)?;
        if self.layers.len() != 4 {
            return Err(Error::Validation(format!(
                "expected 4 layers, found {}",
                self.layers.len()
            )));
        }
        let expected: BTreeSet<Edge> = lattice_edges(self.h, self.l).into_iter().collect();
        let mut seen = BTreeSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut used = BTreeSet::new();
            for e in layer {
                if !expected.contains(e) {
                    return Err(Error::Validation(format!(
                        "layer {i}: ({}) → ({}) is not a lattice edge",
                        e.control, e.target
                    )));
                }
                if !seen.insert(*e) {
                    return Err(Error::Validation(format!(
                        "edge ({}) → ({}) scheduled twice",
                        e.control, e.target
                    )));
                }
                for s in [e.control, e.target] {
                    if !used.insert(s) {
                        return Err(Error::Validation(format!(
                            "layer {i}: site ({s}) used by two gates"
                        )));
                    }
                }
            }
        }
        if seen.len() != expected.len() {
            return Err(Error::Validation(format!(
                "{} of {} lattice edges scheduled",
                seen.len(),
                expected.len()
            )));
        }
        let all: BTreeSet<Site> = sites(self.h, self.l).collect();
        let keys: BTreeSet<Site> = self.init.keys().copied().collect();
        if keys != all {
            return Err(Error::Validation(
                "init map must list every site exactly once".into(),
            ));
        }
        Ok(())
    }
}

/// Layers: x-edges from odd columns, x-edges from even columns, y-edges from
/// odd rows, y-edges from even rows. No size limit; nothing is simulated.
pub fn lattice_layers(h: usize, l: usize) -> Vec<Vec<Edge>> {
    let mut layers = vec![Vec::new(); 4];
    for e in lattice_edges(h, l) {
        let layer = if e.target.j != e.control.j {
            if e.control.j % 2 == 1 {
                0
            } else {
                1
            }
        } else if e.control.k % 2 == 1 {
            2
        } else {
            3
        };
        layers[layer].push(e);
    }
    layers
}

pub fn build_schedule(h: usize, l: usize) -> Result<LatticeSchedule> {
    if h == 0 || l == 0 {
        return Err(Error::Argument(format!(
            "lattice must be at least 1×1, got {h}×{l}"
        )));
    }
    capacity("lattice sites", h * l, MAX_QUBITS)?;
    let layers = lattice_layers(h, l);
    let init = control_counts(h, l)
        .into_iter()
        .map(|(s, n)| {
            let sign = if n % 2 == 1 {
                InitSign::Minus
            } else {
                InitSign::Plus
            };
            (s, sign)
        })
        .collect();
    let schedule = LatticeSchedule { h, l, layers, init };
    debug_assert!(schedule.validate().is_ok());
    Ok(schedule)
}

/// Prepare the ± product state and apply the CZ layers in order.
pub fn build_cluster(schedule: &LatticeSchedule) -> Result<StateVector> {
    Ok(build_cluster_traced(schedule)?.0)
}

/// Like [`build_cluster`], also returning the state norm after each layer.
/// Only the schedule structure is validated, so callers may experiment with
/// non-standard init maps.
pub fn build_cluster_traced(schedule: &LatticeSchedule) -> Result<(StateVector, Vec<f64>)> {
    schedule.validate_structure()?;
    let h = schedule.h;
    let labels: Vec<ProductLabel> = sites(h, schedule.l)
        .map(|s| schedule.init[&s].label())
        .collect();
    let mut state = init_product_state(schedule.n_sites(), &labels)?;
    let mut norms = Vec::with_capacity(4);
    for layer in &schedule.layers {
        for e in layer {
            state.apply_gate(&cz_xmon(e.control.index(h), e.target.index(h)))?;
        }
        norms.push(state.norm_sqr().sqrt());
    }
    Ok((state, norms))
}

/// Direct evaluation: ∣+…+⟩ with a sign flip on every component that has
/// control bit 0 and target bit 1 across some edge.
pub fn reference_cluster(h: usize, l: usize) -> Result<StateVector> {
    if h == 0 || l == 0 {
        return Err(Error::Argument(format!(
            "lattice must be at least 1×1, got {h}×{l}"
        )));
    }
    let n = h * l;
    capacity("reference lattice sites", n, MAX_REFERENCE_SITES)?;
    let pairs: Vec<(usize, usize)> = lattice_edges(h, l)
        .into_iter()
        .map(|e| (n - 1 - e.control.index(h), n - 1 - e.target.index(h)))
        .collect();
    let a = (0.5f64).powf(n as f64 / 2.0);
    let amps = (0..1usize << n)
        .map(|x| {
            let flips = pairs
                .iter()
                .filter(|&&(c, t)| (x >> c) & 1 == 0 && (x >> t) & 1 == 1)
                .count();
            C64::new(if flips % 2 == 0 { a } else { -a }, 0.0)
        })
        .collect();
    StateVector::normalized(amps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub h: usize,
    pub l: usize,
    pub edges: usize,
    pub layer_sizes: Vec<usize>,
    pub layer_norms: Vec<f64>,
    pub fidelity: f64,
    pub passed: bool,
}

pub const CLUSTER_FIDELITY_TOL: f64 = 1e-9;

pub fn verify_cluster(h: usize, l: usize) -> Result<VerificationReport> {
    let schedule = build_schedule(h, l)?;
    let reference = reference_cluster(h, l)?;
    let (state, layer_norms) = build_cluster_traced(&schedule)?;
    let fidelity = state_fidelity(&state, &reference)?;
    Ok(VerificationReport {
        h,
        l,
        edges: schedule.n_edges(),
        layer_sizes: schedule.layer_sizes(),
        layer_norms,
        fidelity,
        passed: fidelity >= 1.0 - CLUSTER_FIDELITY_TOL,
    })
}
