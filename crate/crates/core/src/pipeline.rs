//! End-to-end exact curves and the dataset-to-estimate path.

use rayon::prelude::*;

use crate::dynamics::{apply_dephasing_mask, prepare_tilted, Evolver};
use crate::ensemble::{frobenius_distance_matrices, DiagonalEnsemble};
use crate::error::{Error, Result};
use crate::protocol::RMDataset;
use crate::shadows::SubsystemAnalysis;
use crate::spin::density::{ea_of_matrix, partial_trace};
use crate::spin::{SiteSet, SubsystemDensity};
use crate::stats::{average_series, jackknife_sigma, AveragingAxis, EstimateSeries};
use crate::CMatrix;

/// Largest chain the exact pipeline accepts.
pub const MAX_PIPELINE_SITES: usize = 14;

/// Exact EA, FD and charge populations on a grid of (θ, subsystem, t).
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub descriptor: String,
    pub gamma: f64,
    pub thetas: Vec<f64>,
    pub subsystems: Vec<SiteSet>,
    pub times: Vec<f64>,
    /// `ea[θ][subsystem][t]`
    pub ea: Vec<Vec<Vec<f64>>>,
    /// Present when the scenario has a Hamiltonian (and so a diagonal ensemble).
    pub fd: Option<Vec<Vec<Vec<f64>>>>,
    /// `populations[θ][subsystem][t][k]`, probability of k local up spins.
    pub populations: Vec<Vec<Vec<Vec<f64>>>>,
}

impl ScenarioResult {
    pub fn ea_series(&self, theta: usize, subsystem: usize) -> EstimateSeries {
        EstimateSeries::exact(
            format!(
                "theta={} A={}",
                self.thetas[theta],
                self.subsystems[subsystem].label()
            ),
            self.times.clone(),
            self.ea[theta][subsystem].clone(),
        )
    }

    pub fn fd_series(&self, theta: usize, subsystem: usize) -> Option<EstimateSeries> {
        self.fd.as_ref().map(|fd| {
            EstimateSeries::exact(
                format!(
                    "theta={} A={}",
                    self.thetas[theta],
                    self.subsystems[subsystem].label()
                ),
                self.times.clone(),
                fd[theta][subsystem].clone(),
            )
        })
    }

    /// EA averaged over all subsystems.
    pub fn mean_ea(&self, theta: usize) -> EstimateSeries {
        let all: Vec<EstimateSeries> = (0..self.subsystems.len())
            .map(|s| self.ea_series(theta, s))
            .collect();
        average_series(
            &all,
            AveragingAxis::Subsystem,
            format!("theta={} avg", self.thetas[theta]),
        )
        .expect("series share the scenario grid")
    }

    pub fn mean_fd(&self, theta: usize) -> Option<EstimateSeries> {
        let all: Vec<EstimateSeries> = (0..self.subsystems.len())
            .map(|s| self.fd_series(theta, s))
            .collect::<Option<_>>()?;
        Some(
            average_series(
                &all,
                AveragingAxis::Subsystem,
                format!("theta={} avg", self.thetas[theta]),
            )
            .expect("series share the scenario grid"),
        )
    }
}

fn validate_inputs(
    evolver: &Evolver,
    thetas: &[f64],
    subsystems: &[SiteSet],
    times: &[f64],
) -> Result<()> {
    if evolver.n_sites > MAX_PIPELINE_SITES {
        return Err(Error::Config(format!(
            "exact pipeline limited to {MAX_PIPELINE_SITES} sites, got {}",
            evolver.n_sites
        )));
    }
    if thetas.is_empty() || subsystems.is_empty() || times.is_empty() {
        return Err(Error::domain("need at least one angle, subsystem and time"));
    }
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::domain("times must be finite and non-negative"));
    }
    if let Some(s) = subsystems.iter().find(|s| s.n_sites() != evolver.n_sites) {
        return Err(Error::domain(format!(
            "subsystem {} does not fit the chain",
            s.label()
        )));
    }
    Ok(())
}

/// Undephased ρ_A(t) for every (t, subsystem) and the diagonal ensemble, for one θ.
struct ThetaTrajectory {
    /// `[t][subsystem]`
    states: Vec<Vec<CMatrix>>,
    de: Option<Vec<SubsystemDensity>>,
}

fn theta_trajectory(
    evolver: &Evolver,
    theta: f64,
    subsystems: &[SiteSet],
    times: &[f64],
) -> Result<ThetaTrajectory> {
    let psi0 = prepare_tilted(evolver.n_sites, theta)?;
    let de = match &evolver.spectrum {
        Some(spectrum) => {
            let ens = DiagonalEnsemble::new(spectrum, &psi0)?;
            Some(
                subsystems
                    .iter()
                    .map(|s| ens.subsystem(s))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    let states = evolver
        .trajectory(&psi0, times)?
        .par_iter()
        .map(|psi| {
            subsystems
                .iter()
                .map(|s| partial_trace(psi, s).map(SubsystemDensity::into_matrix))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThetaTrajectory { states, de })
}

fn local_populations(rho: &CMatrix) -> Vec<f64> {
    let d = rho.nrows();
    let n_a = d.trailing_zeros() as usize;
    let mut p = vec![0.0; n_a + 1];
    for a in 0..d {
        p[n_a - a.count_ones() as usize] += rho[(a, a)].re;
    }
    p
}

type Curves = (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>);

fn curves_at_gamma(traj: &ThetaTrajectory, gamma: f64, times: &[f64]) -> Result<Curves> {
    let n_sub = traj.states.first().map_or(0, Vec::len);
    let mut ea = vec![Vec::with_capacity(times.len()); n_sub];
    let mut fd = traj
        .de
        .as_ref()
        .map(|_| vec![Vec::with_capacity(times.len()); n_sub]);
    let mut pops = vec![Vec::with_capacity(times.len()); n_sub];
    for (k, &t) in times.iter().enumerate() {
        for s in 0..n_sub {
            let pure = &traj.states[k][s];
            let rho = if gamma * t > 0.0 {
                apply_dephasing_mask(pure, gamma, t)
            } else {
                pure.clone()
            };
            ea[s].push(ea_of_matrix(&rho)?);
            if let (Some(fd), Some(de)) = (fd.as_mut(), traj.de.as_ref()) {
                fd[s].push(frobenius_distance_matrices(&rho, de[s].matrix()));
            }
            pops[s].push(local_populations(&rho));
        }
    }
    Ok((ea, fd, pops))
}

fn assemble(
    descriptor: &str,
    gamma: f64,
    thetas: &[f64],
    subsystems: &[SiteSet],
    times: &[f64],
    per_theta: Vec<Curves>,
) -> ScenarioResult {
    let has_fd = per_theta.iter().all(|c| c.1.is_some());
    let mut ea = Vec::new();
    let mut fd = Vec::new();
    let mut populations = Vec::new();
    for (e, f, p) in per_theta {
        ea.push(e);
        if let Some(f) = f {
            fd.push(f);
        }
        populations.push(p);
    }
    ScenarioResult {
        descriptor: descriptor.to_string(),
        gamma,
        thetas: thetas.to_vec(),
        subsystems: subsystems.to_vec(),
        times: times.to_vec(),
        ea,
        fd: has_fd.then_some(fd),
        populations,
    }
}

/// Exact curves for one scenario.
pub fn run_scenario(
    evolver: &Evolver,
    descriptor: &str,
    gamma: f64,
    thetas: &[f64],
    subsystems: &[SiteSet],
    times: &[f64],
) -> Result<ScenarioResult> {
    Ok(
        dephasing_sweep(evolver, descriptor, &[gamma], thetas, subsystems, times)?
            .pop()
            .expect("one result per rate"),
    )
}

/// One result per dephasing rate, sharing the unitary evolution.
pub fn dephasing_sweep(
    evolver: &Evolver,
    descriptor: &str,
    gammas: &[f64],
    thetas: &[f64],
    subsystems: &[SiteSet],
    times: &[f64],
) -> Result<Vec<ScenarioResult>> {
    validate_inputs(evolver, thetas, subsystems, times)?;
    if gammas.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::domain(
            "dephasing rates must be finite and non-negative",
        ));
    }
    let trajectories = thetas
        .par_iter()
        .map(|&theta| theta_trajectory(evolver, theta, subsystems, times))
        .collect::<Result<Vec<_>>>()?;
    gammas
        .iter()
        .map(|&gamma| {
            let per_theta = trajectories
                .par_iter()
                .map(|traj| curves_at_gamma(traj, gamma, times))
                .collect::<Result<Vec<_>>>()?;
            Ok(assemble(
                descriptor, gamma, thetas, subsystems, times, per_theta,
            ))
        })
        .collect()
}

/// Average the subsystem-mean curves of independent disorder realizations
/// for angle index `theta`.
pub fn disorder_mean_ea(results: &[ScenarioResult], theta: usize) -> Result<EstimateSeries> {
    let per: Vec<EstimateSeries> = results.iter().map(|r| r.mean_ea(theta)).collect();
    average_series(&per, AveragingAxis::Disorder, "disorder mean")
}

/// Value, jackknife error and the leave-one-out replicates behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub value: Option<f64>,
    pub error: Option<f64>,
    pub replicates: Vec<Option<f64>>,
}

impl PointEstimate {
    fn from_fn(full: Result<f64>, n: usize, loo: impl Fn(usize) -> Result<f64> + Sync) -> Self {
        let value = full.ok();
        let replicates: Vec<Option<f64>> = (0..n).into_par_iter().map(|r| loo(r).ok()).collect();
        let error = match (
            value,
            replicates.iter().copied().collect::<Option<Vec<f64>>>(),
        ) {
            (Some(_), Some(reps)) => jackknife_sigma(&reps).ok(),
            _ => None,
        };
        Self {
            value,
            error,
            replicates,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubsystemEstimate {
    pub sites: SiteSet,
    pub ea: PointEstimate,
    pub fd: Option<PointEstimate>,
}

/// Shadow estimates of EA (and FD when a diagonal ensemble is supplied) for
/// each subsystem, all derived from the same dataset.
pub fn estimate_subsystems(
    ds: &RMDataset,
    subsystems: &[SiteSet],
    reference: Option<&[SubsystemDensity]>,
) -> Result<Vec<SubsystemEstimate>> {
    ds.validate()?;
    if let Some(r) = reference {
        if r.len() != subsystems.len() {
            return Err(Error::domain("one reference state per subsystem required"));
        }
    }
    if ds.header.n_u < 3 {
        return Err(Error::domain("jackknife errors need at least 3 unitaries"));
    }
    subsystems
        .iter()
        .enumerate()
        .map(|(i, sites)| {
            let analysis = SubsystemAnalysis::from_dataset(ds, sites, reference.map(|r| &r[i]))?;
            let n = analysis.n_u();
            let ea = PointEstimate::from_fn(analysis.ea(), n, |r| analysis.ea_without(r));
            let fd = analysis
                .has_reference()
                .then(|| PointEstimate::from_fn(analysis.fd(), n, |r| analysis.fd_without(r)));
            Ok(SubsystemEstimate {
                sites: sites.clone(),
                ea,
                fd,
            })
        })
        .collect()
}

/// Assemble a time series from point estimates taken at `times`.
pub fn series_from_points(
    label: impl Into<String>,
    times: &[f64],
    points: &[PointEstimate],
) -> EstimateSeries {
    EstimateSeries {
        label: label.into(),
        times: times.to_vec(),
        values: points.iter().map(|p| p.value).collect(),
        errors: points.iter().map(|p| p.error).collect(),
        n_excluded: points
            .iter()
            .map(|p| usize::from(p.value.is_none()))
            .collect(),
        replicates: points.iter().map(|p| p.replicates.clone()).collect(),
    }
}
