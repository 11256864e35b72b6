//! Tilted-ferromagnet preparation, sector-resolved unitary evolution and the
//! collective dephasing channel with jump operator √Γ Σ σz.
//!
//! Because every Hamiltonian here conserves Σ σz, the dissipator acts on the
//! coherence between magnetization sectors m and m′ as a pure decay
//! exp(−2Γt (m−m′)²) that commutes with the unitary part. The channel is
//! therefore applied exactly, after the unitary evolution. The Runge–Kutta
//! integrator in [`lindblad_oracle`] exists to check that identity on small
//! chains.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianSpec, SectorSpectrum};
use crate::spin::basis::{dim, site_bit, up_count, SiteSet};
use crate::spin::density::{cross_partial_trace, local_up_counts, partial_trace, SubsystemDensity};
use crate::spin::PureState;
use crate::{CMatrix, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct QuenchScenario {
    /// `None` means free evolution under dephasing only.
    pub hamiltonian: Option<HamiltonianSpec>,
    /// Tilt angle θ ∈ [0, π].
    pub theta: f64,
    /// Dephasing rate Γ [1/s].
    pub gamma: f64,
    pub times: Vec<f64>,
    /// Insert a global π pulse about x at t/2.
    pub echo: bool,
}

impl QuenchScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::domain(format!(
                "gamma must be ≥ 0, got {}",
                self.gamma
            )));
        }
        check_theta(self.theta)?;
        if self.times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::domain("times must be finite and ≥ 0"));
        }
        Ok(())
    }
}

/// Γ = 1 / (2 T_coh).
pub fn gamma_from_coherence_time(t_coh: f64) -> f64 {
    1.0 / (2.0 * t_coh)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=std::f64::consts::PI + 1e-12).contains(&theta) {
        return Err(Error::domain(format!(
            "theta must lie in [0, π], got {theta}"
        )));
    }
    Ok(())
}

/// exp(iθσy/2) in the (|↑⟩, |↓⟩) = (|0⟩, |1⟩) basis.
pub fn tilt_rotation(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    [[c, s], [-s, c]]
}

/// ⊗_i (cos(θ/2)|↓⟩ + sin(θ/2)|↑⟩): every spin of |↓…↓⟩ rotated by exp(iθσy/2).
pub fn prepare_tilted(n_sites: usize, theta: f64) -> Result<PureState> {
    let r = tilt_rotation(theta);
    // rotation applied to |↓⟩ = (0, 1)
    let up_amp = r[0][1];
    let down_amp = r[1][1];
    let amps = DVector::from_iterator(
        dim(n_sites),
        (0..dim(n_sites)).map(|idx| {
            let downs = idx.count_ones() as i32;
            let ups = n_sites as i32 - downs;
            C64::new(up_amp.powi(ups) * down_amp.powi(downs), 0.0)
        }),
    );
    PureState::new(n_sites, amps)
}

/// Closed form for the asymmetry of any N_A-site block of a tilted product
/// state: −ln Σ_k [C(N_A,k) p^k (1−p)^{N_A−k}]², p = sin²(θ/2).
pub fn tilted_ea_closed_form(n_a: usize, theta: f64) -> f64 {
    let p = (theta / 2.0).sin().powi(2);
    let mut binom = 1.0;
    let mut sum = 0.0;
    for k in 0..=n_a {
        if k > 0 {
            binom *= (n_a - k + 1) as f64 / k as f64;
        }
        let w = binom * p.powi(k as i32) * (1.0 - p).powi((n_a - k) as i32);
        sum += w * w;
    }
    -sum.ln()
}

/// Initial state expanded in the eigenbasis, ready to be propagated to any time.
#[derive(Debug, Clone)]
pub struct SpectralExpansion<'a> {
    spectrum: &'a SectorSpectrum,
    /// c_k = V_kᵀ ψ_k per sector.
    coefficients: Vec<DVector<C64>>,
}

fn split_complex(v: &DVector<C64>) -> (DVector<f64>, DVector<f64>) {
    (v.map(|z| z.re), v.map(|z| z.im))
}

fn join_complex(re: &DVector<f64>, im: &DVector<f64>) -> DVector<C64> {
    re.zip_map(im, C64::new)
}

impl<'a> SpectralExpansion<'a> {
    pub fn new(spectrum: &'a SectorSpectrum, psi0: &PureState) -> Result<Self> {
        if spectrum.n_sites != psi0.n_sites() {
            return Err(Error::domain(format!(
                "spectrum has {} sites, state has {}",
                spectrum.n_sites,
                psi0.n_sites()
            )));
        }
        let amps = psi0.amplitudes();
        let coefficients = spectrum
            .sectors
            .iter()
            .map(|sec| {
                let local = DVector::from_iterator(sec.dim(), sec.indices.iter().map(|&i| amps[i]));
                let (re, im) = split_complex(&local);
                join_complex(&sec.vectors.tr_mul(&re), &sec.vectors.tr_mul(&im))
            })
            .collect();
        Ok(Self {
            spectrum,
            coefficients,
        })
    }

    pub fn coefficients(&self) -> &[DVector<C64>] {
        &self.coefficients
    }

    /// ψ(t) = Σ_k V_k e^{−iE_k t} c_k
    pub fn at(&self, t: f64) -> PureState {
        let n = self.spectrum.n_sites;
        let mut out = DVector::zeros(dim(n));
        for (sec, c) in self.spectrum.sectors.iter().zip(&self.coefficients) {
            let phased = DVector::from_iterator(
                sec.dim(),
                c.iter()
                    .zip(sec.energies.iter())
                    .map(|(ck, &e)| ck * C64::from_polar(1.0, -e * t)),
            );
            let (re, im) = split_complex(&phased);
            let back = join_complex(&(&sec.vectors * re), &(&sec.vectors * im));
            for (&idx, amp) in sec.indices.iter().zip(back.iter()) {
                out[idx] = *amp;
            }
        }
        PureState::from_raw(n, out)
    }
}

/// ψ(t) = e^{−iHt} ψ0, sector by sector.
pub fn evolve_pure(spectrum: &SectorSpectrum, psi0: &PureState, t: f64) -> Result<PureState> {
    Ok(SpectralExpansion::new(spectrum, psi0)?.at(t))
}

/// X^{⊗N}: flips every spin.
pub fn global_flip(psi: &PureState) -> PureState {
    let d = psi.amplitudes().len();
    let amps = psi.amplitudes();
    PureState::from_raw(
        psi.n_sites(),
        DVector::from_iterator(d, (0..d).map(|i| amps[i ^ (d - 1)])),
    )
}

/// U(t/2) X^{⊗N} U(t/2) ψ0
pub fn echo_evolve(spectrum: &SectorSpectrum, psi0: &PureState, t: f64) -> Result<PureState> {
    let half = evolve_pure(spectrum, psi0, t / 2.0)?;
    evolve_pure(spectrum, &global_flip(&half), t / 2.0)
}

/// exp(−2Γt Δm²): surviving fraction of a coherence between sectors whose
/// magnetizations differ by Δm.
#[inline]
pub fn coherence_factor(gamma: f64, t: f64, delta_m: f64) -> f64 {
    (-2.0 * gamma * t * delta_m * delta_m).exp()
}

/// Multiply ρ_A elementwise by exp(−2Γt (k_a − k_b)²).
///
/// Two basis states of the full chain that share an environment
/// configuration differ in total magnetization exactly by the difference of
/// their subsystem up counts, so the global mask reduces to a mask on ρ_A.
pub fn apply_dephasing_mask(rho: &CMatrix, gamma: f64, t: f64) -> CMatrix {
    let d = rho.nrows();
    let n_a = d.trailing_zeros() as usize;
    let ups = local_up_counts(n_a);
    let max_dm = n_a + 1;
    let factors: Vec<f64> = (0..max_dm)
        .map(|dm| coherence_factor(gamma, t, dm as f64))
        .collect();
    CMatrix::from_fn(d, d, |a, b| rho[(a, b)] * factors[ups[a].abs_diff(ups[b])])
}

/// ρ_A(t) = Σ_{m,m′} e^{−2Γt(m−m′)²} Tr_Ā |ψ_m⟩⟨ψ_m′| for an already
/// unitarily evolved ψ(t).
pub fn dephased_subsystem_state(
    psi_t: &PureState,
    gamma: f64,
    t: f64,
    sites: &SiteSet,
) -> Result<SubsystemDensity> {
    if !(gamma >= 0.0) || !(t >= 0.0) {
        return Err(Error::domain(format!(
            "need Γ ≥ 0 and t ≥ 0, got Γ={gamma}, t={t}"
        )));
    }
    let rho = partial_trace(psi_t, sites)?;
    if gamma == 0.0 || t == 0.0 {
        return Ok(rho);
    }
    let masked = apply_dephasing_mask(rho.matrix(), gamma, t);
    Ok(SubsystemDensity::from_parts(sites.clone(), masked))
}

/// Same channel evaluated literally as a double sum of sector cross traces.
/// Quadratic in the number of sectors; kept as an independent route.
pub fn dephased_subsystem_state_by_sectors(
    psi_t: &PureState,
    gamma: f64,
    t: f64,
    sites: &SiteSet,
) -> Result<SubsystemDensity> {
    let n = psi_t.n_sites();
    let parts: Vec<DVector<C64>> = (0..=n).map(|up| psi_t.sector_component(up)).collect();
    let mut rho = CMatrix::zeros(sites.dim(), sites.dim());
    for (m, pm) in parts.iter().enumerate() {
        if pm.norm_squared() == 0.0 {
            continue;
        }
        for (mp, pmp) in parts.iter().enumerate() {
            if pmp.norm_squared() == 0.0 {
                continue;
            }
            let f = coherence_factor(gamma, t, m as f64 - mp as f64);
            rho += cross_partial_trace(pm, pmp, sites)? * C64::new(f, 0.0);
        }
    }
    Ok(SubsystemDensity::from_parts(sites.clone(), rho))
}

/// Dephasing with the interactions switched off.
pub fn pure_dephasing_subsystem(
    psi0: &PureState,
    gamma: f64,
    t: f64,
    sites: &SiteSet,
) -> Result<SubsystemDensity> {
    dephased_subsystem_state(psi0, gamma, t, sites)
}

/// Bundles the optional spectrum with the echo flag so callers can evolve any
/// initial state to any time without caring which scenario they are in.
#[derive(Debug, Clone)]
pub struct Evolver {
    pub n_sites: usize,
    pub spectrum: Option<SectorSpectrum>,
    pub echo: bool,
}

impl Evolver {
    pub fn new(n_sites: usize, hamiltonian: Option<&HamiltonianSpec>, echo: bool) -> Result<Self> {
        let spectrum = match hamiltonian {
            Some(h) => {
                if h.n_sites != n_sites {
                    return Err(Error::domain("Hamiltonian size does not match n_sites"));
                }
                Some(crate::hamiltonian::sector_eigendecomposition(h)?)
            }
            None => None,
        };
        Ok(Self {
            n_sites,
            spectrum,
            echo,
        })
    }

    pub fn evolve(&self, psi0: &PureState, t: f64) -> Result<PureState> {
        match (&self.spectrum, self.echo) {
            (None, false) => Ok(psi0.clone()),
            (None, true) => Ok(global_flip(psi0)),
            (Some(s), false) => evolve_pure(s, psi0, t),
            (Some(s), true) => echo_evolve(s, psi0, t),
        }
    }

    /// States at every time in `times`, reusing one eigenbasis expansion.
    pub fn trajectory(&self, psi0: &PureState, times: &[f64]) -> Result<Vec<PureState>> {
        match (&self.spectrum, self.echo) {
            (Some(s), false) => {
                let exp = SpectralExpansion::new(s, psi0)?;
                Ok(times.iter().map(|&t| exp.at(t)).collect())
            }
            _ => times.iter().map(|&t| self.evolve(psi0, t)).collect(),
        }
    }
}

/// Brute-force reference: integrate
/// dρ/dt = −i[H,ρ] + Γ(LρL − ½{L²,ρ}), L = Σ σz,
/// on the full 2^N × 2^N density matrix with fixed-step RK4.
pub fn lindblad_oracle(
    spec: &HamiltonianSpec,
    gamma: f64,
    psi0: &PureState,
    t: f64,
    n_steps: usize,
) -> Result<CMatrix> {
    let n = spec.n_sites;
    if n > 6 {
        return Err(Error::Config(format!(
            "lindblad_oracle supports N ≤ 6, got {n}"
        )));
    }
    if psi0.n_sites() != n {
        return Err(Error::domain("state and Hamiltonian sizes differ"));
    }
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be ≥ 1".into()));
    }
    let d = dim(n);
    let cols = spec.connections();
    let dt = t / n_steps as f64;
    let rate = generator_rate(spec, gamma);
    if rate * dt > 0.1 {
        return Err(Error::Config(format!(
            "step too large: ‖generator‖·dt = {:.3} > 0.1; use at least {} steps",
            rate * dt,
            (rate * t / 0.1).ceil() as usize
        )));
    }
    let z: Vec<f64> = (0..d)
        .map(|i| {
            (0..n)
                .map(|s| if site_bit(i, s, n) == 0 { 1.0 } else { -1.0 })
                .sum()
        })
        .collect();
    let decay = DMatrix::from_fn(d, d, |a, b| 0.5 * gamma * (z[a] - z[b]).powi(2));

    let rhs = |rho: &CMatrix| -> CMatrix {
        // H ρ and ρ H from the sparse column lists (H is real symmetric)
        let mut hr = CMatrix::zeros(d, d);
        let mut rh = CMatrix::zeros(d, d);
        for (k, col) in cols.iter().enumerate() {
            for &(i, v) in col {
                // (Hρ)_{i,·} += H_{ik} ρ_{k,·};  (ρH)_{·,k} += ρ_{·,i} H_{ik}
                for j in 0..d {
                    hr[(i, j)] += rho[(k, j)] * v;
                    rh[(j, k)] += rho[(j, i)] * v;
                }
            }
        }
        let mi = C64::new(0.0, -1.0);
        CMatrix::from_fn(d, d, |a, b| {
            mi * (hr[(a, b)] - rh[(a, b)]) - rho[(a, b)] * decay[(a, b)]
        })
    };

    let amps = psi0.amplitudes();
    let mut rho = amps * amps.adjoint();
    let half = C64::new(dt / 2.0, 0.0);
    let full = C64::new(dt, 0.0);
    let sixth = C64::new(dt / 6.0, 0.0);
    let two = C64::new(2.0, 0.0);
    for _ in 0..n_steps {
        let k1 = rhs(&rho);
        let k2 = rhs(&(&rho + &k1 * half));
        let k3 = rhs(&(&rho + &k2 * half));
        let k4 = rhs(&(&rho + &k3 * full));
        rho += (k1 + k2 * two + k3 * two + k4) * sixth;
    }
    Ok(rho)
}

/// Bound on the generator norm: max row sum of |H| plus the fastest
/// coherence decay rate Γ(2N)²/2.
fn generator_rate(spec: &HamiltonianSpec, gamma: f64) -> f64 {
    let d = dim(spec.n_sites);
    let mut row_sums = vec![0.0; d];
    for col in spec.connections() {
        for (r, v) in col {
            row_sums[r] += v.abs();
        }
    }
    let h_norm = row_sums.into_iter().fold(0.0f64, f64::max);
    let n = spec.n_sites as f64;
    h_norm + 2.0 * gamma * n * n
}

/// Smallest RK4 step count that keeps ‖generator‖·dt at or below `target`.
pub fn oracle_steps(spec: &HamiltonianSpec, gamma: f64, t: f64, target: f64) -> usize {
    ((generator_rate(spec, gamma) * t / target).ceil() as usize).max(1)
}

/// Partial trace of a full density matrix (oracle side only).
pub fn partial_trace_dense(rho: &CMatrix, sites: &SiteSet) -> CMatrix {
    let d = rho.nrows();
    let mut out = CMatrix::zeros(sites.dim(), sites.dim());
    let split: Vec<(usize, usize)> = (0..d).map(|i| sites.split_index(i)).collect();
    for i in 0..d {
        let (a, e) = split[i];
        for j in 0..d {
            let (b, f) = split[j];
            if e == f {
                out[(a, b)] += rho[(i, j)];
            }
        }
    }
    out
}

/// ⟨Q⟩ of a full density matrix.
pub fn mean_charge_dense(rho: &CMatrix) -> f64 {
    let d = rho.nrows();
    let n = d.trailing_zeros() as usize;
    (0..d)
        .map(|i| rho[(i, i)].re * (up_count(i, n) as f64 - n as f64 / 2.0))
        .sum()
}
