//! Simulated randomized-measurement experiment: Haar-random single-qubit
//! rotations on every site followed by projective z measurements of the
//! (dephased) state.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{coherence_factor, prepare_tilted, Evolver};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::spin::basis::{dim, site_bit};
use crate::spin::PureState;
use crate::C64;

const UNITARY_TOL: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-8;

pub type Mat2 = [[C64; 2]; 2];

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUnitary {
    pub site: usize,
    pub entries: Mat2,
}

impl LocalUnitary {
    pub fn new(site: usize, entries: Mat2) -> Result<Self> {
        let defect = unitarity_defect(&entries);
        if defect > UNITARY_TOL {
            return Err(Error::domain(format!(
                "local unitary on site {site} not unitary (defect {defect:e})"
            )));
        }
        Ok(Self { site, entries })
    }

    pub fn identity(site: usize) -> Self {
        let one = C64::new(1.0, 0.0);
        Self {
            site,
            entries: [[one, zero()], [zero(), one]],
        }
    }
}

/// max |U†U − I|
pub fn unitarity_defect(u: &Mat2) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let acc: C64 = u.iter().map(|row| row[i].conj() * row[j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).norm());
        }
    }
    worst
}

/// Haar-random 2×2 unitary: Gram–Schmidt on the columns of a complex
/// Ginibre matrix. Gram–Schmidt yields an R factor with positive real
/// diagonal, which is the phase convention that makes Q Haar distributed.
pub fn sample_cue<R: Rng + ?Sized>(rng: &mut R) -> Mat2 {
    let mut gauss = || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    };
    let (a0, a1, b0, b1) = (gauss(), gauss(), gauss(), gauss());
    let n0 = (a0.norm_sqr() + a1.norm_sqr()).sqrt();
    let (q00, q10) = (a0 / n0, a1 / n0);
    let proj = q00.conj() * b0 + q10.conj() * b1;
    let (v0, v1) = (b0 - proj * q00, b1 - proj * q10);
    let n1 = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
    let (q01, q11) = (v0 / n1, v1 / n1);
    [[q00, q01], [q10, q11]]
}

/// One random-unitary setting and the shots taken with it.
#[derive(Debug, Clone, PartialEq)]
pub struct RMRecord {
    pub unitaries: Vec<LocalUnitary>,
    /// Measured basis indices (site 0 is the most significant bit).
    pub bitstrings: Vec<usize>,
}

impl RMRecord {
    pub fn n_sites(&self) -> usize {
        self.unitaries.len()
    }

    pub fn n_shots(&self) -> usize {
        self.bitstrings.len()
    }

    /// Outcome bit of `site` in shot `m`.
    pub fn bit(&self, m: usize, site: usize) -> usize {
        site_bit(self.bitstrings[m], site, self.n_sites())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RMHeader {
    pub n_sites: usize,
    pub theta: f64,
    /// Evolution time [s].
    pub time: f64,
    pub scenario: String,
    pub gamma: f64,
    pub seed: u64,
    pub n_u: usize,
    pub n_m: usize,
    pub realization: Option<usize>,
    pub version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RMDataset {
    pub header: RMHeader,
    pub records: Vec<RMRecord>,
}

impl RMDataset {
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if self.records.len() != h.n_u {
            return Err(Error::domain(format!(
                "header declares {} unitaries, found {}",
                h.n_u,
                self.records.len()
            )));
        }
        for (r, rec) in self.records.iter().enumerate() {
            if rec.unitaries.len() != h.n_sites {
                return Err(Error::domain(format!(
                    "record {r} covers {} sites",
                    rec.unitaries.len()
                )));
            }
            if rec.bitstrings.len() != h.n_m {
                return Err(Error::domain(format!(
                    "record {r} has {} shots",
                    rec.bitstrings.len()
                )));
            }
            if rec.bitstrings.iter().any(|&s| s >= dim(h.n_sites)) {
                return Err(Error::domain(format!(
                    "record {r} has an out-of-range bitstring"
                )));
            }
        }
        Ok(())
    }
}

/// Apply U on `site` in place.
fn apply_local(amps: &mut [C64], n_sites: usize, site: usize, u: &Mat2) {
    let stride = 1usize << (n_sites - 1 - site);
    let d = amps.len();
    let mut base = 0;
    while base < d {
        for i in base..base + stride {
            let (x0, x1) = (amps[i], amps[i + stride]);
            amps[i] = u[0][0] * x0 + u[0][1] * x1;
            amps[i + stride] = u[1][0] * x0 + u[1][1] * x1;
        }
        base += 2 * stride;
    }
}

fn apply_all(amps: &mut [C64], n_sites: usize, unitaries: &[LocalUnitary]) {
    for u in unitaries {
        apply_local(amps, n_sites, u.site, &u.entries);
    }
}

/// p(s) = ⟨s|U ρ(t) U†|s⟩ with ρ(t) the dephased state, evaluated from the
/// sector components of ψ(t) without forming ρ(t):
/// p(s) = Σ_{m,m′} e^{−2Γt(m−m′)²} (Uψ_m)(s) conj((Uψ_m′)(s)).
pub fn measurement_distribution(
    psi_t: &PureState,
    gamma: f64,
    t: f64,
    unitaries: &[LocalUnitary],
) -> Result<Vec<f64>> {
    let n = psi_t.n_sites();
    if unitaries.len() != n {
        return Err(Error::domain(format!(
            "{} unitaries for {n} sites",
            unitaries.len()
        )));
    }
    let mut covered = vec![false; n];
    for u in unitaries {
        if u.site >= n || std::mem::replace(&mut covered[u.site], true) {
            return Err(Error::domain(format!(
                "unitary site {} invalid or repeated",
                u.site
            )));
        }
    }
    if gamma * t == 0.0 {
        let mut amps: Vec<C64> = psi_t.amplitudes().iter().copied().collect();
        apply_all(&mut amps, n, unitaries);
        return Ok(amps.iter().map(|a| a.norm_sqr()).collect());
    }
    let rotated: Vec<(usize, Vec<C64>)> = (0..=n)
        .filter_map(|up| {
            let comp = psi_t.sector_component(up);
            if comp.norm_squared() == 0.0 {
                return None;
            }
            let mut amps: Vec<C64> = comp.iter().copied().collect();
            apply_all(&mut amps, n, unitaries);
            Some((up, amps))
        })
        .collect();
    let d = dim(n);
    let mut p = vec![0.0; d];
    for (i, (up_i, ai)) in rotated.iter().enumerate() {
        for (s, a) in ai.iter().enumerate() {
            p[s] += a.norm_sqr();
        }
        for (up_j, aj) in rotated.iter().skip(i + 1) {
            let f = 2.0 * coherence_factor(gamma, t, *up_i as f64 - *up_j as f64);
            if f < 1e-300 {
                continue;
            }
            for s in 0..d {
                p[s] += f * (ai[s] * aj[s].conj()).re;
            }
        }
    }
    // round-off can leave tiny negatives
    for x in &mut p {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    Ok(p)
}

/// N_M i.i.d. basis-index draws from `distribution`.
pub fn sample_bitstrings<R: Rng + ?Sized>(
    distribution: &[f64],
    n_m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if distribution.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::domain("distribution has negative or NaN entries"));
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::domain(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    let mut cdf = Vec::with_capacity(distribution.len());
    let mut acc = 0.0;
    for p in distribution {
        acc += p / total;
        cdf.push(acc);
    }
    let last_nonzero = distribution.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    Ok((0..n_m)
        .map(|_| {
            let u: f64 = rng.random();
            cdf.partition_point(|&c| c <= u).min(last_nonzero)
        })
        .collect())
}

/// Everything needed to run the measurement protocol on one prepared quench.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentSetup<'a> {
    pub evolver: &'a Evolver,
    pub theta: f64,
    pub gamma: f64,
    pub scenario: &'a str,
    pub realization: Option<usize>,
    pub config_hash: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub n_u: usize,
    pub n_m: usize,
}

impl Budget {
    /// Default measurement budget for time series.
    pub const DEFAULT: Budget = Budget { n_u: 500, n_m: 30 };
    /// Budget for the t = 0 angle scan.
    pub const INITIAL_STATE: Budget = Budget { n_u: 200, n_m: 100 };
}

/// One record: sample unitaries then shots, all from stream `r` of `seed`.
pub fn simulate_record(
    psi_t: &PureState,
    gamma: f64,
    t: f64,
    n_m: usize,
    seed: u64,
    r: usize,
) -> Result<RMRecord> {
    let n = psi_t.n_sites();
    let mut rng = stream_rng(seed, r as u64);
    let unitaries: Vec<LocalUnitary> = (0..n)
        .map(|site| LocalUnitary {
            site,
            entries: sample_cue(&mut rng),
        })
        .collect();
    let dist = measurement_distribution(psi_t, gamma, t, &unitaries)?;
    let bitstrings = sample_bitstrings(&dist, n_m, &mut rng)?;
    Ok(RMRecord {
        unitaries,
        bitstrings,
    })
}

/// Evolve the tilted state to `t` once, then generate N_U records in parallel.
pub fn run_rm_experiment(
    setup: &ExperimentSetup<'_>,
    t: f64,
    budget: Budget,
    seed: u64,
) -> Result<RMDataset> {
    if budget.n_u == 0 || budget.n_m == 0 {
        return Err(Error::Config("measurement budget must be positive".into()));
    }
    let n = setup.evolver.n_sites;
    let psi0 = prepare_tilted(n, setup.theta)?;
    let psi_t = setup.evolver.evolve(&psi0, t)?;
    let records = (0..budget.n_u)
        .into_par_iter()
        .map(|r| simulate_record(&psi_t, setup.gamma, t, budget.n_m, seed, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(RMDataset {
        header: RMHeader {
            n_sites: n,
            theta: setup.theta,
            time: t,
            scenario: setup.scenario.to_string(),
            gamma: setup.gamma,
            seed,
            n_u: budget.n_u,
            n_m: budget.n_m,
            realization: setup.realization,
            version: crate::VERSION.to_string(),
            config_hash: setup.config_hash.to_string(),
        },
        records,
    })
}

/// Full-state density of a pure vector, used by tests and small validations.
pub fn outer(psi: &DVector<C64>) -> crate::CMatrix {
    psi * psi.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cue_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let u = sample_cue(&mut rng);
            assert!(unitarity_defect(&u) < 1e-12);
        }
    }

    #[test]
    fn cue_moments() {
        // Haar on U(2): E|U00|² = 1/2, E|U00|⁴ = 1/3
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let (mut m2, mut m4) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_cue(&mut rng)[0][0].norm_sqr();
            m2 += x;
            m4 += x * x;
        }
        assert!((m2 / n as f64 - 0.5).abs() < 0.005);
        assert!((m4 / n as f64 - 1.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn identity_on_all_down_is_point_mass() {
        let psi = prepare_tilted(4, 0.0).unwrap();
        let us: Vec<_> = (0..4).map(LocalUnitary::identity).collect();
        let p = measurement_distribution(&psi, 0.0, 0.0, &us).unwrap();
        assert_eq!(p[15], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
        let shots = sample_bitstrings(&p, 50, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(shots.iter().all(|&s| s == 15));
    }

    #[test]
    fn coin_flip_frequency() {
        let shots =
            sample_bitstrings(&[0.5, 0.5], 100_000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let ones = shots.iter().filter(|&&s| s == 1).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() < 0.005);
    }

    #[test]
    fn unnormalized_distribution_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(sample_bitstrings(&[0.5, 0.6], 3, &mut rng).is_err());
        assert!(sample_bitstrings(&[1.1, -0.1], 3, &mut rng).is_err());
    }

    #[test]
    fn unitaries_must_cover_sites() {
        let psi = prepare_tilted(3, 1.0).unwrap();
        let us: Vec<_> = (0..2).map(LocalUnitary::identity).collect();
        assert!(measurement_distribution(&psi, 0.0, 0.0, &us).is_err());
        let dup = vec![
            LocalUnitary::identity(0),
            LocalUnitary::identity(0),
            LocalUnitary::identity(2),
        ];
        assert!(measurement_distribution(&psi, 0.0, 0.0, &dup).is_err());
    }

    #[test]
    fn local_unitary_checked() {
        let one = C64::new(1.0, 0.0);
        assert!(LocalUnitary::new(0, [[one, one], [zero(), one]]).is_err());
    }
}
