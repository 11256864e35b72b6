use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use qmpe_core::dataset::{load_dataset, save_dataset};
use qmpe_core::dynamics::{prepare_tilted, Evolver};
use qmpe_core::ensemble::DiagonalEnsemble;
use qmpe_core::hamiltonian::write_fields;
use qmpe_core::pipeline::{
    disorder_mean_ea, estimate_subsystems, run_scenario, series_from_points,
};
use qmpe_core::protocol::{run_rm_experiment, ExperimentSetup, RMDataset};
use qmpe_core::rng::derive_seed;
use qmpe_core::spin::{SiteSet, SubsystemDensity};
use qmpe_core::stats::{
    average_series, detect_crossing, AveragingAxis, CrossingRule, EstimateSeries,
};
use qmpe_core::VERSION;

use crate::config::{RunConfig, MEASURE_STREAM};
use crate::error::CliError;
use crate::table::{self, Manifest, Row, MEAN};

fn manifest(cfg: &RunConfig, command: &str) -> Manifest {
    Manifest {
        command: command.into(),
        version: VERSION.into(),
        scenario: cfg.scenario.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
}

fn core(stage: &str) -> impl Fn(qmpe_core::Error) -> CliError + '_ {
    move |e| CliError::from_core(e, stage)
}

fn series_rows(
    source: &str,
    realization: Option<String>,
    theta: f64,
    subsystem: &str,
    ea: &EstimateSeries,
    fd: Option<&EstimateSeries>,
) -> Vec<Row> {
    (0..ea.len())
        .map(|k| Row {
            source: source.into(),
            realization: realization.clone(),
            t: ea.times[k],
            theta,
            subsystem: subsystem.into(),
            ea: ea.values[k],
            ea_err: ea.errors[k],
            fd: fd.and_then(|f| f.values[k]),
            fd_err: fd.and_then(|f| f.errors[k]),
            n_excluded: ea.n_excluded[k].max(fd.map_or(0, |f| f.n_excluded[k])),
        })
        .collect()
}

/// Exact curves for every realization, subsystem and tilt; writes
/// `oracle.csv` (and the disorder fields used).
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    create_dir(out)?;
    let thetas = cfg.thetas();
    let subsystems = cfg.subsystems()?;
    let times = cfg.time_grid()?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for r in 0..cfg.disorder_realizations() {
        let spec = cfg.hamiltonian(r)?;
        if let (Some(spec), Some(_)) = (&spec, &cfg.disorder) {
            let path = out.join(format!("fields-r{r}.txt"));
            write_fields(&path, &spec.fields).map_err(core(&path.display().to_string()))?;
        }
        let ev = Evolver::new(cfg.model.n_sites, spec.as_ref(), cfg.model.echo)
            .map_err(core("model"))?;
        let res = run_scenario(
            &ev,
            &cfg.scenario,
            cfg.gamma(),
            &thetas,
            &subsystems,
            &times,
        )
        .map_err(core("simulate"))?;
        let tag = cfg.realization_tag(r).map(|r| r.to_string());
        for (k, &theta) in thetas.iter().enumerate() {
            for (s, sites) in subsystems.iter().enumerate() {
                let fd = res.fd_series(k, s);
                rows.extend(series_rows(
                    "oracle",
                    tag.clone(),
                    theta,
                    &sites.label(),
                    &res.ea_series(k, s),
                    fd.as_ref(),
                ));
            }
            let fd = res.mean_fd(k);
            rows.extend(series_rows(
                "oracle",
                tag.clone(),
                theta,
                MEAN,
                &res.mean_ea(k),
                fd.as_ref(),
            ));
        }
        results.push(res);
    }
    if results.len() > 1 {
        for (k, &theta) in thetas.iter().enumerate() {
            let ea = disorder_mean_ea(&results, k).map_err(core("disorder average"))?;
            let fd = match results
                .iter()
                .map(|r| r.mean_fd(k))
                .collect::<Option<Vec<_>>>()
            {
                Some(curves) => Some(
                    average_series(&curves, AveragingAxis::Disorder, MEAN)
                        .map_err(core("disorder average"))?,
                ),
                None => None,
            };
            rows.extend(series_rows(
                "oracle",
                Some(MEAN.into()),
                theta,
                MEAN,
                &ea,
                fd.as_ref(),
            ));
        }
    }
    let path = out.join("oracle.csv");
    table::save(&path, &manifest(cfg, "simulate"), &rows)?;
    Ok(path)
}

/// One rmds-1 file per (realization, tilt, time) under `datasets/`.
pub fn measure(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dir = out.join("datasets");
    create_dir(&dir)?;
    let thetas = cfg.thetas();
    let times = cfg.measure_times()?;
    let hash = cfg.hash();
    let mut paths = Vec::new();
    for r in 0..cfg.disorder_realizations() {
        let ev = cfg.evolver(r)?;
        for (k, &theta) in thetas.iter().enumerate() {
            let setup = ExperimentSetup {
                evolver: &ev,
                theta,
                gamma: cfg.gamma(),
                scenario: &cfg.scenario,
                realization: cfg.realization_tag(r),
                config_hash: &hash,
            };
            for (j, &t) in times.iter().enumerate() {
                let seed = derive_seed(cfg.seed, &[MEASURE_STREAM, r as u64, k as u64, j as u64]);
                let ds = run_rm_experiment(&setup, t, cfg.budget_at(t), seed)
                    .map_err(core("measure"))?;
                let path = dir.join(format!("r{r:02}-theta{k:02}-t{j:03}.rmds"));
                save_dataset(&ds, &path).map_err(core(&path.display().to_string()))?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}

/// Directories expand to their `*.rmds` files in name order.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p.display(), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "rmds"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Config("no datasets given".into()));
    }
    Ok(files)
}

struct Loaded {
    path: PathBuf,
    ds: RMDataset,
}

/// Diagonal-ensemble references for one (realization, θ).
fn references(
    cfg: &RunConfig,
    realization: usize,
    theta: f64,
    subsystems: &[SiteSet],
    cache: &mut BTreeMap<usize, Evolver>,
) -> Result<Vec<SubsystemDensity>, CliError> {
    if !cfg.model.hamiltonian {
        return Err(CliError::Config(
            "--de needs a Hamiltonian (model.hamiltonian = true)".into(),
        ));
    }
    if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(realization) {
        slot.insert(cfg.evolver(realization)?);
    }
    let spectrum = cache[&realization]
        .spectrum
        .as_ref()
        .expect("Hamiltonian present");
    let psi0 = prepare_tilted(cfg.model.n_sites, theta).map_err(core("diagonal ensemble"))?;
    let de = DiagonalEnsemble::new(spectrum, &psi0).map_err(core("diagonal ensemble"))?;
    subsystems
        .iter()
        .map(|s| de.subsystem(s).map_err(core("diagonal ensemble")))
        .collect()
}

pub struct EstimateOutcome {
    pub path: PathBuf,
    pub rows: Vec<Row>,
}

/// Shadow estimates for every dataset, subsystem averages and (with several
/// realizations) the disorder average; writes `estimate.csv`.
pub fn estimate(
    cfg: &RunConfig,
    inputs: &[PathBuf],
    with_de: bool,
    out: &Path,
) -> Result<EstimateOutcome, CliError> {
    let files = expand_inputs(inputs)?;
    let subsystems = cfg.subsystems()?;
    let hash = cfg.hash();
    let mut loaded = Vec::with_capacity(files.len());
    for path in files {
        let ds = load_dataset(&path).map_err(core(&path.display().to_string()))?;
        if ds.header.n_sites != cfg.model.n_sites {
            return Err(CliError::Data(format!(
                "{}: dataset has {} sites, configuration {}",
                path.display(),
                ds.header.n_sites,
                cfg.model.n_sites
            )));
        }
        if with_de && ds.header.config_hash != hash {
            eprintln!(
                "warning: {} was measured with configuration {}, references use {}",
                path.display(),
                ds.header.config_hash,
                hash
            );
        }
        loaded.push(Loaded { path, ds });
    }
    // group by (realization, θ); order by time within each group
    loaded.sort_by(|a, b| {
        let (ha, hb) = (&a.ds.header, &b.ds.header);
        ha.realization
            .cmp(&hb.realization)
            .then(ha.theta.total_cmp(&hb.theta))
            .then(ha.time.total_cmp(&hb.time))
    });
    let mut groups: Vec<Vec<&Loaded>> = Vec::new();
    for l in &loaded {
        match groups.last_mut() {
            Some(g)
                if g[0].ds.header.realization == l.ds.header.realization
                    && g[0].ds.header.theta == l.ds.header.theta =>
            {
                if g.last().unwrap().ds.header.time == l.ds.header.time {
                    return Err(CliError::Data(format!(
                        "{} and {} are the same (realization, θ, t) point",
                        g.last().unwrap().path.display(),
                        l.path.display()
                    )));
                }
                g.push(l)
            }
            _ => groups.push(vec![l]),
        }
    }

    let mut evolvers = BTreeMap::new();
    let mut rows = Vec::new();
    // θ bits → per-realization mean series, for the disorder average
    let mut by_theta: BTreeMap<u64, Vec<(EstimateSeries, Option<EstimateSeries>)>> =
        BTreeMap::new();
    for group in &groups {
        let header = &group[0].ds.header;
        let reference = if with_de {
            Some(references(
                cfg,
                header.realization.unwrap_or(0),
                header.theta,
                &subsystems,
                &mut evolvers,
            )?)
        } else {
            None
        };
        let times: Vec<f64> = group.iter().map(|l| l.ds.header.time).collect();
        let mut per_time = Vec::with_capacity(group.len());
        for l in group {
            let est = estimate_subsystems(&l.ds, &subsystems, reference.as_deref())
                .map_err(core(&l.path.display().to_string()))?;
            per_time.push(est);
        }
        let tag = header.realization.map(|r| r.to_string());
        let mut ea_series = Vec::new();
        let mut fd_series = Vec::new();
        for (s, sites) in subsystems.iter().enumerate() {
            let label = sites.label();
            let ea_pts: Vec<_> = per_time.iter().map(|e| e[s].ea.clone()).collect();
            let ea = series_from_points(&label, &times, &ea_pts);
            let fd = if with_de {
                let pts: Vec<_> = per_time
                    .iter()
                    .map(|e| e[s].fd.clone().expect("reference given"))
                    .collect();
                Some(series_from_points(&label, &times, &pts))
            } else {
                None
            };
            rows.extend(series_rows(
                "estimate",
                tag.clone(),
                header.theta,
                &label,
                &ea,
                fd.as_ref(),
            ));
            ea_series.push(ea);
            fd_series.extend(fd);
        }
        let mean_ea = average_series(&ea_series, AveragingAxis::Subsystem, MEAN)
            .map_err(core("subsystem average"))?;
        let mean_fd = if with_de {
            Some(
                average_series(&fd_series, AveragingAxis::Subsystem, MEAN)
                    .map_err(core("subsystem average"))?,
            )
        } else {
            None
        };
        rows.extend(series_rows(
            "estimate",
            tag,
            header.theta,
            MEAN,
            &mean_ea,
            mean_fd.as_ref(),
        ));
        if header.realization.is_some() {
            by_theta
                .entry(header.theta.to_bits())
                .or_default()
                .push((mean_ea, mean_fd));
        }
    }
    let mut thetas: Vec<f64> = by_theta.keys().map(|b| f64::from_bits(*b)).collect();
    thetas.sort_by(f64::total_cmp);
    for theta in thetas {
        let curves = &by_theta[&theta.to_bits()];
        if curves.len() < 2 {
            continue;
        }
        let ea: Vec<EstimateSeries> = curves.iter().map(|c| c.0.clone()).collect();
        let ea = average_series(&ea, AveragingAxis::Disorder, MEAN)
            .map_err(|e| CliError::Data(format!("disorder average: {e}")))?;
        let fd = match curves
            .iter()
            .map(|c| c.1.clone())
            .collect::<Option<Vec<_>>>()
        {
            Some(fd) => Some(
                average_series(&fd, AveragingAxis::Disorder, MEAN)
                    .map_err(|e| CliError::Data(format!("disorder average: {e}")))?,
            ),
            None => None,
        };
        rows.extend(series_rows(
            "estimate",
            Some(MEAN.into()),
            theta,
            MEAN,
            &ea,
            fd.as_ref(),
        ));
    }
    create_dir(out)?;
    let path = out.join("estimate.csv");
    table::save(&path, &manifest(cfg, "estimate"), &rows)?;
    Ok(EstimateOutcome { path, rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCheck {
    pub matched: usize,
    pub max_ea_pull: f64,
    pub max_fd_pull: Option<f64>,
    pub within_3_sigma: usize,
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-3)
}

/// Largest |estimate − oracle|/σ over points present in both tables.
pub fn cross_check(estimates: &[Row], oracle: &[Row]) -> CrossCheck {
    let mut index: BTreeMap<(Option<&str>, u64, &str), Vec<&Row>> = BTreeMap::new();
    for o in oracle {
        index
            .entry((
                o.realization.as_deref(),
                o.theta.to_bits(),
                o.subsystem.as_str(),
            ))
            .or_default()
            .push(o);
    }
    let mut out = CrossCheck {
        matched: 0,
        max_ea_pull: 0.0,
        max_fd_pull: None,
        within_3_sigma: 0,
    };
    for e in estimates {
        let Some(candidates) = index.get(&(
            e.realization.as_deref(),
            e.theta.to_bits(),
            e.subsystem.as_str(),
        )) else {
            continue;
        };
        let Some(o) = candidates.iter().find(|o| same_time(o.t, e.t)) else {
            continue;
        };
        if let (Some(v), Some(s), Some(x)) = (e.ea, e.ea_err, o.ea) {
            if s > 0.0 {
                let pull = (v - x).abs() / s;
                out.matched += 1;
                out.max_ea_pull = out.max_ea_pull.max(pull);
                if pull <= 3.0 {
                    out.within_3_sigma += 1;
                }
            }
        }
        if let (Some(v), Some(s), Some(x)) = (e.fd, e.fd_err, o.fd) {
            if s > 0.0 {
                let pull = (v - x).abs() / s;
                out.max_fd_pull = Some(out.max_fd_pull.unwrap_or(0.0).max(pull));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingReport {
    pub theta_high: f64,
    pub theta_low: f64,
    pub t_star: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    pub theta: f64,
    pub t: Vec<f64>,
    #[serde(rename = "EA")]
    pub ea: Vec<Option<f64>>,
    #[serde(rename = "EA_err")]
    pub ea_err: Vec<Option<f64>>,
    #[serde(rename = "FD")]
    pub fd: Vec<Option<f64>>,
    #[serde(rename = "FD_err")]
    pub fd_err: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub source: String,
    pub realization: Option<String>,
    pub subsystem: String,
    pub window: f64,
    pub crossings: Vec<CrossingReport>,
    pub verdict: String,
    pub series: Vec<SeriesReport>,
}

fn to_series(rows: &[&Row]) -> EstimateSeries {
    let n = rows.len();
    EstimateSeries {
        label: rows
            .first()
            .map(|r| r.subsystem.clone())
            .unwrap_or_default(),
        times: rows.iter().map(|r| r.t).collect(),
        values: rows.iter().map(|r| r.ea).collect(),
        errors: rows.iter().map(|r| r.ea_err).collect(),
        n_excluded: rows.iter().map(|r| r.n_excluded).collect(),
        replicates: vec![Vec::new(); n],
    }
}

fn pi_units(theta: f64) -> String {
    format!("{:.2}π", theta / std::f64::consts::PI)
}

pub fn verdict(crossings: &[CrossingReport], window: f64) -> String {
    let inside: Vec<&CrossingReport> = crossings
        .iter()
        .filter(|c| c.t_star.is_some_and(|t| t <= window))
        .collect();
    match inside.iter().map(|c| c.t_star.unwrap()).reduce(f64::min) {
        Some(t) => {
            let note = if inside.iter().all(|c| c.significant) {
                ""
            } else {
                " (not all significant)"
            };
            format!("QMPE: crossing at t* = {:.3} ms{note}", t * 1e3)
        }
        None => "no crossing within window".into(),
    }
}

/// Crossings of the largest tilt against every smaller one, per
/// (source, realization, subsystem) group.
pub fn report(
    rows: &[Row],
    rule: CrossingRule,
    window: Option<f64>,
) -> Result<Vec<GroupReport>, CliError> {
    // (source, realization, subsystem) → θ bits → rows
    type Groups<'a> = BTreeMap<(&'a str, Option<&'a str>, &'a str), BTreeMap<u64, Vec<&'a Row>>>;
    let mut groups: Groups = BTreeMap::new();
    for r in rows {
        groups
            .entry((
                r.source.as_str(),
                r.realization.as_deref(),
                r.subsystem.as_str(),
            ))
            .or_default()
            .entry(r.theta.to_bits())
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((source, realization, subsystem), by_theta) in groups {
        let mut curves: Vec<(f64, EstimateSeries)> = by_theta
            .into_values()
            .map(|mut rs| {
                rs.sort_by(|a, b| a.t.total_cmp(&b.t));
                (rs[0].theta, to_series(&rs))
            })
            .collect();
        curves.sort_by(|a, b| a.0.total_cmp(&b.0));
        let t_max = curves
            .iter()
            .flat_map(|c| c.1.times.iter().copied())
            .fold(0.0, f64::max);
        let window = window.unwrap_or(t_max);
        let (theta_high, high) = curves.last().expect("non-empty group").clone();
        let mut crossings = Vec::new();
        for (theta_low, low) in &curves[..curves.len() - 1] {
            let c = detect_crossing(&high, low, rule).map_err(|e| {
                CliError::Data(format!(
                    "{source}/{}/{subsystem}: θ = {} and {}: {e}",
                    realization.unwrap_or("-"),
                    pi_units(theta_high),
                    pi_units(*theta_low)
                ))
            })?;
            crossings.push(CrossingReport {
                theta_high,
                theta_low: *theta_low,
                t_star: c.map(|c| c.time),
                significant: c.is_some_and(|c| c.significant),
            });
        }
        let series = curves
            .iter()
            .map(|(theta, _)| {
                let mut rs = rows
                    .iter()
                    .filter(|r| {
                        r.source == source
                            && r.realization.as_deref() == realization
                            && r.subsystem == subsystem
                            && r.theta == *theta
                    })
                    .collect::<Vec<_>>();
                rs.sort_by(|a, b| a.t.total_cmp(&b.t));
                SeriesReport {
                    theta: *theta,
                    t: rs.iter().map(|r| r.t).collect(),
                    ea: rs.iter().map(|r| r.ea).collect(),
                    ea_err: rs.iter().map(|r| r.ea_err).collect(),
                    fd: rs.iter().map(|r| r.fd).collect(),
                    fd_err: rs.iter().map(|r| r.fd_err).collect(),
                }
            })
            .collect();
        out.push(GroupReport {
            source: source.into(),
            realization: realization.map(str::to_string),
            subsystem: subsystem.into(),
            window,
            verdict: verdict(&crossings, window),
            crossings,
            series,
        });
    }
    Ok(out)
}

/// Human-readable summary: one line per group, crossings indented below.
pub fn format_report(groups: &[GroupReport]) -> String {
    let mut s = String::new();
    for g in groups {
        s.push_str(&format!(
            "{} realization={} subsystem={}: {}\n",
            g.source,
            g.realization.as_deref().unwrap_or("-"),
            g.subsystem,
            g.verdict
        ));
        for c in &g.crossings {
            let t = c.t_star.map_or("none".to_string(), |t| {
                format!(
                    "{:.3} ms{}",
                    t * 1e3,
                    if c.significant {
                        ""
                    } else {
                        " (not significant)"
                    }
                )
            });
            s.push_str(&format!(
                "  θ = {} vs {}: t* = {t}\n",
                pi_units(c.theta_high),
                pi_units(c.theta_low)
            ));
        }
    }
    s
}
