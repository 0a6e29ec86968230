//! Two coupled quantum Rabi systems driven into an effective XY exchange.
//!
//! Each site is ω_q σᶻ/2 + ω_r a†a + g σˣ(a + a†), truncated to its two
//! lowest levels. The driven interaction-picture dynamics are integrated
//! with a fourth-order Magnus scheme and compared against the exponential
//! of J1 σˣσʸ − J2 σʸσˣ.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2, Matrix4, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{
    gate_fidelity, kron2, pauli_x_matrix, swap_matrix, u_bell_convention_search, unitarity_error4,
    xy_propagator, ConventionChoice, QubitOrder,
};

/// Relative change allowed when the Fock cutoff grows by 10.
pub const CUTOFF_TOL: f64 = 1e-8;
pub const MAX_FOCK_CUTOFF: usize = 320;
/// Number of levels whose energies and z elements are reported.
pub const REPORTED_LEVELS: usize = 4;
pub const HALVING_TOL: f64 = 1e-6;
pub const UNITARITY_TOL: f64 = 1e-8;
/// Allowed non-monotonic ripple in 1 − F across a sweep.
pub const SWEEP_RIPPLE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiSiteParams {
    pub omega_q: f64,
    pub omega_r: f64,
    pub g: f64,
    pub fock_cutoff: usize,
}

impl RabiSiteParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_q > 0.0 && self.omega_r > 0.0)
            || !self.omega_q.is_finite()
            || !self.omega_r.is_finite()
        {
            return Err(Error::Validation(format!(
                "frequencies must be positive, got omega_q = {}, omega_r = {}",
                self.omega_q, self.omega_r
            )));
        }
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(Error::Validation(format!(
                "coupling g = {} must be finite and ≥ 0",
                self.g
            )));
        }
        if self.fock_cutoff < 10 {
            return Err(Error::Validation(format!(
                "fock_cutoff = {} is below 10",
                self.fock_cutoff
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrsSpectrum {
    pub params: RabiSiteParams,
    /// Lowest [`REPORTED_LEVELS`] energies, ascending.
    pub eigenvalues: Vec<f64>,
    /// ⟨j∣(a + a†)²∣j⟩ for the same levels.
    pub z_elements: Vec<f64>,
    /// ⟨0∣(a + a†)∣1⟩, sign fixed to be ≥ 0.
    pub chi_01: f64,
    /// (λ₂ − λ₁) − (λ₁ − λ₀).
    pub anharmonicity: f64,
    /// Cutoff at which the convergence check passed.
    pub cutoff_used: usize,
    /// Largest relative change of any reported quantity at cutoff + 10.
    pub cutoff_change: f64,
}

fn qrs_hamiltonian(p: &RabiSiteParams, n: usize) -> DMatrix<f64> {
    // basis index s·n + k, s = 0 the σᶻ = +1 state
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    for s in 0..2 {
        let sz = if s == 0 { 1.0 } else { -1.0 };
        for k in 0..n {
            let i = s * n + k;
            h[(i, i)] = p.omega_q * sz / 2.0 + p.omega_r * k as f64;
            if k + 1 < n {
                let j = (1 - s) * n + k + 1;
                let c = p.g * ((k + 1) as f64).sqrt();
                h[(i, j)] = c;
                h[(j, i)] = c;
            }
        }
    }
    h
}

/// (a + a†) acting on the cavity factor of `v`.
fn apply_x(v: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for s in 0..2 {
        for k in 0..n {
            let i = s * n + k;
            if k + 1 < n {
                let c = ((k + 1) as f64).sqrt();
                out[i] += c * v[i + 1];
                out[i + 1] += c * v[i];
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn spectrum_at(p: &RabiSiteParams, n: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let eig = SymmetricEigen::new(qrs_hamiltonian(p, n));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let levels = REPORTED_LEVELS.min(order.len());
    let vecs: Vec<Vec<f64>> = order[..levels]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let energies = order[..levels]
        .iter()
        .map(|&i| eig.eigenvalues[i])
        .collect();
    let z = vecs
        .iter()
        .map(|v| {
            let xv = apply_x(v, n);
            dot(&xv, &xv)
        })
        .collect();
    let chi = dot(&vecs[0], &apply_x(&vecs[1], n)).abs();
    (energies, z, chi)
}

fn rel_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale.max(1e-12)
    }
}

/// Diagonalize in the truncated qubit ⊗ Fock basis. The cutoff is doubled
/// until every reported quantity changes by less than [`CUTOFF_TOL`] when
/// ten more Fock states are added.
pub fn diagonalize_qrs(params: &RabiSiteParams) -> Result<QrsSpectrum> {
    params.validate()?;
    let mut n = params.fock_cutoff;
    let mut history = Vec::new();
    loop {
        let (e, z, chi) = spectrum_at(params, n);
        let (e2, z2, chi2) = spectrum_at(params, n + 10);
        let change = e
            .iter()
            .zip(&e2)
            .chain(z.iter().zip(&z2))
            .map(|(a, b)| rel_change(*a, *b))
            .fold(rel_change(chi, chi2), f64::max);
        history.push((n, change));
        if change < CUTOFF_TOL {
            return Ok(QrsSpectrum {
                params: *params,
                anharmonicity: (e[2] - e[1]) - (e[1] - e[0]),
                eigenvalues: e,
                z_elements: z,
                chi_01: chi,
                cutoff_used: n,
                cutoff_change: change,
            });
        }
        if 2 * n > MAX_FOCK_CUTOFF {
            let trail: Vec<String> = history
                .iter()
                .map(|(n, c)| format!("{n}: {c:.3e}"))
                .collect();
            return Err(Error::Convergence(format!(
                "QRS spectrum did not converge up to cutoff {n} (relative change by cutoff: {})",
                trail.join(", ")
            )));
        }
        n *= 2;
    }
}

/// Effective two-level model of two adjacent sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSiteEffective {
    pub chi: [f64; 2],
    /// (z₀₀, z₁₁) per site.
    pub z: [[f64; 2]; 2],
    /// (η₀, η₁) per site, ηₖ = λₖ + 2P zₖₖ.
    pub eta: [[f64; 2]; 2],
    pub p: [f64; 2],
    pub q: [f64; 2],
    /// −2χ₁χ₂√(P₁P₂).
    pub coupling_static: f64,
    /// −2χ₁χ₂√(Q₁Q₂), multiplied by Φ̄(t) in the Hamiltonian.
    pub coupling_drive: f64,
    #[serde(rename = "Delta")]
    pub delta_big: f64,
    #[serde(rename = "delta")]
    pub delta_small: f64,
    /// Δ ≈ 0 or |Δ| ≈ |δ|: the two drive tones cannot be told apart.
    pub degenerate: bool,
}

impl TwoSiteEffective {
    /// (γ₊, γ₋) = ξ(J1 ± J2) / (χ₁χ₂√(Q₁Q₂)).
    pub fn gammas(&self, j1: f64, j2: f64, xi: f64) -> Result<(f64, f64)> {
        let denom = self.chi[0] * self.chi[1] * (self.q[0] * self.q[1]).sqrt();
        let (a, b) = (xi * (j1 + j2), xi * (j1 - j2));
        if denom == 0.0 {
            if a == 0.0 && b == 0.0 {
                return Ok((0.0, 0.0));
            }
            return Err(Error::Argument(
                "drive amplitudes need χ₁χ₂√(Q₁Q₂) ≠ 0".into(),
            ));
        }
        Ok((a / denom, b / denom))
    }
}

pub fn build_two_site(
    s1: &QrsSpectrum,
    s2: &QrsSpectrum,
    p: [f64; 2],
    q: [f64; 2],
) -> Result<TwoSiteEffective> {
    for v in p.iter().chain(&q) {
        if !(*v >= 0.0 && v.is_finite()) {
            return Err(Error::Validation(format!(
                "P and Q must be finite and ≥ 0, got {v}"
            )));
        }
    }
    let z = [
        [s1.z_elements[0], s1.z_elements[1]],
        [s2.z_elements[0], s2.z_elements[1]],
    ];
    let eta = [
        [
            s1.eigenvalues[0] + 2.0 * p[0] * z[0][0],
            s1.eigenvalues[1] + 2.0 * p[0] * z[0][1],
        ],
        [
            s2.eigenvalues[0] + 2.0 * p[1] * z[1][0],
            s2.eigenvalues[1] + 2.0 * p[1] * z[1][1],
        ],
    ];
    let chi = [s1.chi_01, s2.chi_01];
    let d1 = eta[0][0] - eta[0][1];
    let d2 = eta[1][0] - eta[1][1];
    let big = d1 - d2;
    let small = d1 + d2;
    let scale = small.abs().max(1.0);
    Ok(TwoSiteEffective {
        chi,
        z,
        eta,
        p,
        q,
        coupling_static: -2.0 * chi[0] * chi[1] * (p[0] * p[1]).sqrt(),
        coupling_drive: -2.0 * chi[0] * chi[1] * (q[0] * q[1]).sqrt(),
        delta_big: big,
        delta_small: small,
        degenerate: big.abs() < 1e-9 * scale || (big.abs() - small.abs()).abs() < 1e-9 * scale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationOptions {
    /// Magnus steps per period of the fastest frequency 2(|Δ| + |δ|).
    pub steps_per_period: usize,
    /// Keep the Q Φ̄(t) z-shift terms.
    pub include_diagonal: bool,
    /// Re-run with half the step and fail if the result moves by more
    /// than [`HALVING_TOL`].
    pub check_halving: bool,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            steps_per_period: 16,
            include_diagonal: true,
            check_halving: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivenPropagator {
    /// Site-level propagator, basis ∣k₁k₂⟩ with kₗ the QRS level.
    #[serde(with = "crate::gates::matrix4_serde")]
    pub raw: Matrix4<C64>,
    pub xi: f64,
    pub tau: f64,
    pub steps: usize,
    /// Max-entry change against the half-step run; 0 when not checked.
    pub halving_change: f64,
    pub unitarity_error: f64,
}

impl DrivenPropagator {
    /// Logical qubit ∣0⟩ is the excited QRS level; an exchanged qubit order
    /// additionally swaps the sites.
    pub fn logical(&self, order: QubitOrder) -> Matrix4<C64> {
        relabel(&self.raw, order)
    }
}

pub fn relabel(u: &Matrix4<C64>, order: QubitOrder) -> Matrix4<C64> {
    let x = pauli_x_matrix();
    let xx = kron2(&x, &x);
    let m = xx * u * xx;
    match order {
        QubitOrder::AsWritten => m,
        QubitOrder::Exchanged => {
            let s = swap_matrix();
            s * m * s
        }
    }
}

struct Drive {
    delta_big: f64,
    delta_small: f64,
    gp: f64,
    gm: f64,
    c_static: f64,
    c_drive: f64,
    diag: Option<[f64; 4]>,
}

/// The Hamiltonian never mixes {∣00⟩,∣11⟩} with {∣01⟩,∣10⟩}; each block is
/// integrated on its own.
const BLOCKS: [[usize; 2]; 2] = [[0, 3], [1, 2]];

impl Drive {
    /// (even, odd) blocks of H(t).
    fn blocks(&self, t: f64) -> [Matrix2<C64>; 2] {
        let phi = self.gp * (self.delta_big * t - PI / 2.0).cos()
            + self.gm * (self.delta_small * t + PI / 2.0).cos();
        let c = self.c_static + self.c_drive * phi;
        // ∣11⟩⟨00∣ and ∣10⟩⟨01∣ plus conjugates
        let b = C64::from_polar(c, -self.delta_small * t);
        let a = C64::from_polar(c, -self.delta_big * t);
        let d = self.diag.map_or([0.0; 4], |d| d.map(|x| phi * x));
        [
            Matrix2::new(C64::new(d[0], 0.0), b.conj(), b, C64::new(d[3], 0.0)),
            Matrix2::new(C64::new(d[1], 0.0), a.conj(), a, C64::new(d[2], 0.0)),
        ]
    }
}

/// exp(−iK) for Hermitian 2×2 K.
fn expm_herm2(k: &Matrix2<C64>) -> Matrix2<C64> {
    let m = 0.5 * (k[(0, 0)].re + k[(1, 1)].re);
    let kz = 0.5 * (k[(0, 0)].re - k[(1, 1)].re);
    let off = k[(1, 0)];
    let r = (kz * kz + off.norm_sqr()).sqrt();
    let sinc = if r < 1e-8 {
        1.0 - r * r / 6.0
    } else {
        r.sin() / r
    };
    let traceless = k - Matrix2::identity() * C64::new(m, 0.0);
    let u = Matrix2::identity() * C64::new(r.cos(), 0.0) - traceless * C64::new(0.0, sinc);
    u * C64::from_polar(1.0, -m)
}

fn magnus(drive: &Drive, tau: f64, steps: usize) -> Matrix4<C64> {
    let h = tau / steps as f64;
    let c = 3f64.sqrt() / 6.0;
    let k = 3f64.sqrt() / 12.0 * h * h;
    let mut u = [Matrix2::<C64>::identity(); 2];
    for i in 0..steps {
        let t = i as f64 * h;
        let b1 = drive.blocks(t + (0.5 - c) * h);
        let b2 = drive.blocks(t + (0.5 + c) * h);
        for blk in 0..2 {
            let (h1, h2) = (&b1[blk], &b2[blk]);
            // Ω = −iK with K = h/2 (H1 + H2) − ik [H2, H1]
            let comm = h2 * h1 - h1 * h2;
            let kmat = (h1 + h2) * C64::new(h / 2.0, 0.0) - comm * C64::new(0.0, k);
            u[blk] = expm_herm2(&kmat) * u[blk];
        }
    }
    let mut full = Matrix4::zeros();
    for (blk, idx) in BLOCKS.iter().enumerate() {
        for r in 0..2 {
            for c in 0..2 {
                full[(idx[r], idx[c])] = u[blk][(r, c)];
            }
        }
    }
    full
}

/// Integrate the driven interaction-picture Hamiltonian over τ = π/ξ.
pub fn integrate_driven(
    eff: &TwoSiteEffective,
    j1: f64,
    j2: f64,
    xi: f64,
    opts: &IntegrationOptions,
) -> Result<DrivenPropagator> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::Argument(format!("xi = {xi} must be positive")));
    }
    if opts.steps_per_period == 0 {
        return Err(Error::Argument("steps_per_period must be ≥ 1".into()));
    }
    let (gp, gm) = eff.gammas(j1, j2, xi)?;
    let diag = opts.include_diagonal.then(|| {
        let d = |k1: usize, k2: usize| 2.0 * (eff.q[0] * eff.z[0][k1] + eff.q[1] * eff.z[1][k2]);
        [d(0, 0), d(0, 1), d(1, 0), d(1, 1)]
    });
    let drive = Drive {
        delta_big: eff.delta_big,
        delta_small: eff.delta_small,
        gp,
        gm,
        c_static: eff.coupling_static,
        c_drive: eff.coupling_drive,
        diag,
    };
    let tau = PI / xi;
    let omega_max = 2.0 * (eff.delta_big.abs() + eff.delta_small.abs());
    let h0 = if omega_max > 0.0 {
        2.0 * PI / omega_max / opts.steps_per_period as f64
    } else {
        tau / opts.steps_per_period as f64
    };
    let steps = ((tau / h0).ceil() as usize).max(1);
    let u = magnus(&drive, tau, steps);
    let halving_change = if opts.check_halving {
        let fine = magnus(&drive, tau, 2 * steps);
        let change = (fine - u).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if change > HALVING_TOL {
            return Err(Error::Integration(format!(
                "propagator moved by {change:.3e} when halving the step ({steps} steps at ξ = {xi:.3e})"
            )));
        }
        change
    } else {
        0.0
    };
    let unitarity_error = unitarity_error4(&u);
    if unitarity_error > UNITARITY_TOL {
        return Err(Error::Integration(format!(
            "propagator unitarity error {unitarity_error:.3e} exceeds {UNITARITY_TOL:e}"
        )));
    }
    Ok(DrivenPropagator {
        raw: u,
        xi,
        tau,
        steps,
        halving_change,
        unitarity_error,
    })
}

/// Exact exponential of the RWA Hamiltonian ξ(J1 σˣσʸ − J2 σʸσˣ) over ξτ.
pub fn rwa_reference(j1: f64, j2: f64, xi_tau: f64, conv: ConventionChoice) -> Matrix4<C64> {
    xy_propagator(j1, j2, xi_tau, conv)
}

/// The convention under which the XY exponential reproduces U^Bell.
pub fn selected_convention() -> ConventionChoice {
    u_bell_convention_search().best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub xi: f64,
    pub xi_over_delta: f64,
    #[serde(rename = "Delta")]
    pub delta_big: f64,
    #[serde(rename = "delta")]
    pub delta_small: f64,
    pub fidelity: f64,
    pub infidelity: f64,
    /// Same integration with the z-shift drive terms removed.
    pub fidelity_no_diagonal: f64,
    pub steps: usize,
    pub halving_change: f64,
    pub unitarity_error: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub j1: f64,
    pub j2: f64,
    pub convention: ConventionChoice,
    pub rows: Vec<SweepRow>,
    /// 1 − F does not grow as ξ shrinks, up to [`SWEEP_RIPPLE`].
    pub monotone: bool,
    pub anomalies: Vec<String>,
}

/// Fidelity of the driven propagator to the RWA exponential for each ξ.
/// `xi_values` must be positive and ascending.
pub fn rwa_validity_sweep(
    eff: &TwoSiteEffective,
    j1: f64,
    j2: f64,
    xi_values: &[f64],
    opts: &IntegrationOptions,
) -> Result<SweepReport> {
    if xi_values.is_empty() {
        return Err(Error::Argument("no xi values".into()));
    }
    if xi_values.iter().any(|x| !(*x > 0.0 && x.is_finite()))
        || xi_values.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Argument(
            "xi values must be positive and strictly ascending".into(),
        ));
    }
    let conv = selected_convention();
    let target = rwa_reference(j1, j2, PI, conv);
    let rows: Vec<SweepRow> = xi_values
        .par_iter()
        .map(|&xi| -> Result<SweepRow> {
            let start = Instant::now();
            let u = integrate_driven(eff, j1, j2, xi, opts)?;
            let plain = IntegrationOptions {
                include_diagonal: false,
                check_halving: false,
                ..*opts
            };
            let v = integrate_driven(eff, j1, j2, xi, &plain)?;
            let fidelity = gate_fidelity(&target, &u.logical(conv.order));
            Ok(SweepRow {
                xi,
                xi_over_delta: xi / eff.delta_big.abs(),
                delta_big: eff.delta_big,
                delta_small: eff.delta_small,
                fidelity,
                infidelity: 1.0 - fidelity,
                fidelity_no_diagonal: gate_fidelity(&target, &v.logical(conv.order)),
                steps: u.steps,
                halving_change: u.halving_change,
                unitarity_error: u.unitarity_error,
                wall_time: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;
    let mut anomalies = Vec::new();
    for w in rows.windows(2) {
        if w[0].infidelity > w[1].infidelity + SWEEP_RIPPLE {
            anomalies.push(format!(
                "1 - F rises from {:.3e} at xi = {:.3e} to {:.3e} at xi = {:.3e}",
                w[1].infidelity, w[1].xi, w[0].infidelity, w[0].xi
            ));
        }
    }
    if eff.degenerate {
        anomalies.push("Delta and delta are not separated; drive tones overlap".into());
    }
    Ok(SweepReport {
        j1,
        j2,
        convention: conv,
        monotone: anomalies.iter().all(|a| !a.starts_with("1 - F")),
        rows,
        anomalies,
    })
}

/// Everything needed for a sweep, as read from a JSON config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiConfig {
    pub site1: RabiSiteParams,
    pub site2: RabiSiteParams,
    pub p: [f64; 2],
    pub q: [f64; 2],
    pub j1: f64,
    pub j2: f64,
    /// Sweep points as ξ/|Δ|, any order.
    pub xi_over_delta: Vec<f64>,
    pub integration: IntegrationOptions,
}

impl Default for RabiConfig {
    fn default() -> Self {
        let site = |omega_q| RabiSiteParams {
            omega_q,
            omega_r: 1.0,
            g: 0.3,
            fock_cutoff: 30,
        };
        RabiConfig {
            site1: site(1.0),
            site2: site(1.05),
            p: [1e-6, 1e-6],
            q: [0.01, 0.01],
            j1: 1.25,
            j2: 1.0,
            xi_over_delta: vec![1e-1, 1e-2, 1e-3],
            integration: IntegrationOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiRun {
    pub spectra: [QrsSpectrum; 2],
    pub effective: TwoSiteEffective,
    pub sweep: SweepReport,
}

pub fn run_rabi(cfg: &RabiConfig) -> Result<RabiRun> {
    let s1 = diagonalize_qrs(&cfg.site1)?;
    let s2 = diagonalize_qrs(&cfg.site2)?;
    let eff = build_two_site(&s1, &s2, cfg.p, cfg.q)?;
    if eff.delta_big == 0.0 {
        return Err(Error::Validation(
            "Delta = 0: identical sites cannot be driven selectively".into(),
        ));
    }
    let mut xis: Vec<f64> = cfg
        .xi_over_delta
        .iter()
        .map(|r| r * eff.delta_big.abs())
        .collect();
    xis.sort_by(f64::total_cmp);
    let sweep = rwa_validity_sweep(&eff, cfg.j1, cfg.j2, &xis, &cfg.integration)?;
    Ok(RabiRun {
        spectra: [s1, s2],
        effective: eff,
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{phase_aligned_deviation, u_bell_matrix, XYHamiltonianParams};

    fn site(omega_q: f64, g: f64) -> RabiSiteParams {
        RabiSiteParams {
            omega_q,
            omega_r: 1.0,
            g,
            fock_cutoff: 30,
        }
    }

    /// Eigenvalues below `x` of a symmetric tridiagonal matrix.
    fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..d.len() {
            let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] };
            q = d[i] - x - if i == 0 { 0.0 } else { off / q };
            if q == 0.0 {
                q = 1e-300;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn bisect(d: &[f64], e: &[f64], k: usize) -> f64 {
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sturm_count(d, e, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Lowest levels from the two parity chains ∣s,0⟩–∣s̄,1⟩–∣s,2⟩–….
    fn oracle_levels(p: &RabiSiteParams, n: usize, levels: usize) -> Vec<f64> {
        let mut all = Vec::new();
        for s0 in [0usize, 1] {
            let d: Vec<f64> = (0..n)
                .map(|k| {
                    let s = (s0 + k) % 2;
                    let sz = if s == 0 { 1.0 } else { -1.0 };
                    p.omega_q * sz / 2.0 + p.omega_r * k as f64
                })
                .collect();
            let e: Vec<f64> = (0..n - 1).map(|k| p.g * ((k + 1) as f64).sqrt()).collect();
            for k in 0..levels {
                all.push(bisect(&d, &e, k));
            }
        }
        all.sort_by(f64::total_cmp);
        all.truncate(levels);
        all
    }

    #[test]
    fn spectrum_matches_sturm_oracle() {
        for g in [0.1, 0.3, 0.5] {
            let p = site(1.0, g);
            let s = diagonalize_qrs(&p).unwrap();
            let o = oracle_levels(&p, 60, REPORTED_LEVELS);
            for (a, b) in s.eigenvalues.iter().zip(&o) {
                assert!((a - b).abs() < 1e-10, "g={g}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn decoupled_limit() {
        let p = RabiSiteParams {
            omega_q: 0.8,
            ..site(0.8, 0.0)
        };
        let s = diagonalize_qrs(&p).unwrap();
        let expect = [-0.4, 0.4, 0.6, 1.4];
        for (a, b) in s.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.chi_01.abs() < 1e-14);
        assert!((s.z_elements[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ultrastrong_ground_state_anchor() {
        let p = site(1.0, 0.5);
        let s = diagonalize_qrs(&p).unwrap();
        let o = oracle_levels(&p, 60, 1)[0];
        assert!((s.eigenvalues[0] - o).abs() < 1e-10);
        assert!(s.eigenvalues[0] < -0.25);
        assert!((s.eigenvalues[0] + 0.633294235462).abs() < 1e-10);
        assert!(s.anharmonicity.abs() > 1e-3);
    }

    #[test]
    fn working_point_values() {
        // frozen from an independent dense diagonalization
        let s1 = diagonalize_qrs(&site(1.0, 0.3)).unwrap();
        let s2 = diagonalize_qrs(&site(1.05, 0.3)).unwrap();
        assert!((s1.chi_01 - 0.9022).abs() < 1e-3);
        assert!(
            (s1.z_elements[0] - 1.1445).abs() < 1e-3 && (s1.z_elements[1] - 2.5828).abs() < 1e-3
        );
        assert!((s2.chi_01 - 0.9206).abs() < 1e-3);
        assert!(
            (s2.z_elements[0] - 1.1398).abs() < 1e-3 && (s2.z_elements[1] - 2.6626).abs() < 1e-3
        );
        let eff = build_two_site(&s1, &s2, [1e-6; 2], [0.01; 2]).unwrap();
        assert!((eff.delta_big - 0.020136).abs() < 1e-5, "{}", eff.delta_big);
        assert!(
            (eff.delta_small + 1.42583).abs() < 1e-4,
            "{}",
            eff.delta_small
        );
        assert!(!eff.degenerate);
    }

    #[test]
    fn cutoff_convergence() {
        let p = site(1.0, 0.3);
        let s = diagonalize_qrs(&p).unwrap();
        assert!(s.cutoff_change < CUTOFF_TOL);
        let bigger = diagonalize_qrs(&RabiSiteParams {
            fock_cutoff: s.cutoff_used + 10,
            ..p
        })
        .unwrap();
        for (a, b) in s.eigenvalues.iter().zip(&bigger.eigenvalues) {
            assert!(rel_change(*a, *b) < CUTOFF_TOL);
        }
        assert!(rel_change(s.chi_01, bigger.chi_01) < CUTOFF_TOL);
    }

    #[test]
    fn convergence_failure_is_reported() {
        let p = RabiSiteParams {
            g: 40.0,
            fock_cutoff: 10,
            ..site(1.0, 40.0)
        };
        assert!(matches!(diagonalize_qrs(&p), Err(Error::Convergence(_))));
    }

    #[test]
    fn invalid_params() {
        assert!(matches!(
            diagonalize_qrs(&RabiSiteParams {
                fock_cutoff: 5,
                ..site(1.0, 0.3)
            }),
            Err(Error::Validation(_))
        ));
        assert!(diagonalize_qrs(&site(-1.0, 0.3)).is_err());
    }

    #[test]
    fn identical_sites_are_degenerate() {
        let s = diagonalize_qrs(&site(1.0, 0.3)).unwrap();
        let eff = build_two_site(&s, &s, [1e-6; 2], [0.01; 2]).unwrap();
        assert_eq!(eff.delta_big, 0.0);
        assert!(eff.degenerate);
    }

    #[test]
    fn zero_p_q_leaves_free_evolution() {
        let s1 = diagonalize_qrs(&site(1.0, 0.3)).unwrap();
        let s2 = diagonalize_qrs(&site(1.05, 0.3)).unwrap();
        let eff = build_two_site(&s1, &s2, [0.0; 2], [0.0; 2]).unwrap();
        assert_eq!((eff.coupling_static, eff.coupling_drive), (0.0, 0.0));
        let xi = 1e-1 * eff.delta_big.abs();
        let u = integrate_driven(&eff, 0.0, 0.0, xi, &IntegrationOptions::default()).unwrap();
        assert!((u.raw - Matrix4::identity())
            .iter()
            .all(|z| z.norm() < 1e-12));
        assert!(matches!(
            integrate_driven(&eff, 1.0, 0.5, xi, &IntegrationOptions::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn reference_matches_gate_library() {
        let conv = selected_convention();
        let r = rwa_reference(1.25, 1.0, PI, conv);
        assert!(phase_aligned_deviation(&r, &u_bell_matrix()) < 1e-9);
        assert!(unitarity_error4(&r) < 1e-12);
        let g = crate::gates::u_bell_from_xy(&XYHamiltonianParams::bell_point(), conv).unwrap();
        let m = Matrix4::from_row_slice(&g.matrix_4x4());
        assert_eq!(m, r);
    }

    #[test]
    fn equal_couplings_freeze_even_block() {
        let h = crate::gates::xy_hamiltonian(0.7, 0.7, ConventionChoice::AS_WRITTEN);
        for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert!(h[(i, j)].norm() < 1e-15);
        }
    }

    #[test]
    fn closed_form_block_exponential() {
        let ks = [
            Matrix2::new(
                C64::new(0.3, 0.0),
                C64::new(0.2, -0.7),
                C64::new(0.2, 0.7),
                C64::new(-1.1, 0.0),
            ),
            Matrix2::new(
                C64::new(2.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(2.0, 0.0),
            ),
            Matrix2::new(
                C64::new(0.0, 0.0),
                C64::new(1e-9, 0.0),
                C64::new(1e-9, 0.0),
                C64::new(0.0, 0.0),
            ),
        ];
        for k in ks {
            let want = (k * C64::new(0.0, -1.0)).exp();
            assert!((expm_herm2(&k) - want).iter().all(|z| z.norm() < 1e-14));
        }
    }

    #[test]
    fn block_integrator_matches_dense_magnus() {
        let s1 = diagonalize_qrs(&site(1.0, 0.3)).unwrap();
        let s2 = diagonalize_qrs(&site(1.05, 0.3)).unwrap();
        let eff = build_two_site(&s1, &s2, [1e-6; 2], [0.01; 2]).unwrap();
        let xi = 0.3 * eff.delta_big.abs();
        let (gp, gm) = eff.gammas(1.25, 1.0, xi).unwrap();
        let drive = Drive {
            delta_big: eff.delta_big,
            delta_small: eff.delta_small,
            gp,
            gm,
            c_static: eff.coupling_static,
            c_drive: eff.coupling_drive,
            diag: Some([0.1, -0.2, 0.3, 0.05]),
        };
        let full = |t: f64| {
            let b = drive.blocks(t);
            let mut m = Matrix4::<C64>::zeros();
            for (blk, idx) in BLOCKS.iter().enumerate() {
                for r in 0..2 {
                    for c in 0..2 {
                        m[(idx[r], idx[c])] = b[blk][(r, c)];
                    }
                }
            }
            m
        };
        let (tau, steps) = (PI / xi, 400);
        let h = tau / steps as f64;
        let c = 3f64.sqrt() / 6.0;
        let mut dense = Matrix4::<C64>::identity();
        for i in 0..steps {
            let t = i as f64 * h;
            let (h1, h2) = (full(t + (0.5 - c) * h), full(t + (0.5 + c) * h));
            let omega = (h1 + h2) * C64::new(0.0, -h / 2.0)
                - (h2 * h1 - h1 * h2) * C64::new(3f64.sqrt() / 12.0 * h * h, 0.0);
            dense = omega.exp() * dense;
        }
        let fast = magnus(&drive, tau, steps);
        assert!((fast - dense).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn relabel_is_an_involution() {
        let u = u_bell_matrix();
        for o in [QubitOrder::AsWritten, QubitOrder::Exchanged] {
            assert!((relabel(&relabel(&u, o), o) - u)
                .iter()
                .all(|z| z.norm() < 1e-15));
        }
    }

    #[test]
    fn coarse_sweep_trend() {
        let cfg = RabiConfig {
            xi_over_delta: vec![1e-1, 3e-2, 1e-2],
            ..Default::default()
        };
        let run = run_rabi(&cfg).unwrap();
        let rows = &run.sweep.rows;
        assert!(run.sweep.monotone, "{:?}", run.sweep.anomalies);
        // sorted ascending in ξ
        assert!(rows[0].xi < rows[2].xi);
        assert!(rows[0].infidelity < rows[2].infidelity);
        assert!(rows[2].infidelity > 10.0 * rows[0].infidelity);
        for r in rows {
            assert!(r.unitarity_error < UNITARITY_TOL);
            assert!(r.halving_change < HALVING_TOL);
        }
        // frozen from an independent Magnus integration
        assert!(
            (rows[0].fidelity - 0.9933).abs() < 2e-3,
            "{}",
            rows[0].fidelity
        );
        assert!(
            (rows[2].fidelity - 0.658).abs() < 1e-2,
            "{}",
            rows[2].fidelity
        );
    }

    #[test]
    fn sweep_rejects_bad_xi() {
        let s1 = diagonalize_qrs(&site(1.0, 0.3)).unwrap();
        let s2 = diagonalize_qrs(&site(1.05, 0.3)).unwrap();
        let eff = build_two_site(&s1, &s2, [1e-6; 2], [0.01; 2]).unwrap();
        let o = IntegrationOptions::default();
        assert!(rwa_validity_sweep(&eff, 1.25, 1.0, &[0.2, 0.1], &o).is_err());
        assert!(rwa_validity_sweep(&eff, 1.25, 1.0, &[-0.1], &o).is_err());
        assert!(rwa_validity_sweep(&eff, 1.25, 1.0, &[], &o).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: RabiConfig = serde_json::from_str(r#"{"j1": 2.0}"#).unwrap();
        assert_eq!(c.j1, 2.0);
        assert_eq!(c.site2.omega_q, 1.05);
        assert!(serde_json::from_str::<RabiConfig>(r#"{"j3": 2.0}"#).is_err());
    }
}
