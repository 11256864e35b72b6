//! Jackknife errors, subsystem enumeration, series averaging and crossing
//! detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::SiteSet;

/// How subsystems are drawn from the chain. Pool sites are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsystemMode {
    Connected,
    Pool(Vec<usize>),
}

/// All k-subsets of `items` in lexicographic order.
fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn enumerate_subsystems(
    n_sites: usize,
    n_a: usize,
    mode: &SubsystemMode,
) -> Result<Vec<SiteSet>> {
    if n_a == 0 {
        return Err(Error::domain("subsystem size must be positive"));
    }
    match mode {
        SubsystemMode::Connected => {
            if n_a > n_sites {
                return Err(Error::domain(format!(
                    "n_a = {n_a} exceeds chain length {n_sites}"
                )));
            }
            (0..=n_sites - n_a)
                .map(|i| SiteSet::new(n_sites, (i..i + n_a).collect()))
                .collect()
        }
        SubsystemMode::Pool(pool) => {
            let mut sorted = pool.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != pool.len() {
                return Err(Error::domain("pool contains duplicate sites"));
            }
            if let Some(&s) = sorted.iter().find(|&&s| s >= n_sites) {
                return Err(Error::domain(format!(
                    "pool site {s} outside chain of {n_sites}"
                )));
            }
            if n_a > sorted.len() {
                return Err(Error::domain(format!(
                    "n_a = {n_a} exceeds pool size {}",
                    sorted.len()
                )));
            }
            combinations(&sorted, n_a)
                .into_iter()
                .map(|c| SiteSet::new(n_sites, c))
                .collect()
        }
    }
}

/// √((N−1)/N Σ_r (θ_(r) − mean θ_(·))²)
pub fn jackknife_sigma(replicates: &[f64]) -> Result<f64> {
    let n = replicates.len();
    if n < 3 {
        return Err(Error::domain(format!(
            "jackknife needs at least 3 samples, got {n}"
        )));
    }
    let mean = replicates.iter().sum::<f64>() / n as f64;
    let ss: f64 = replicates.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok(((n - 1) as f64 / n as f64 * ss).sqrt())
}

/// Full-sample estimate and jackknife sigma of `statistic`, recomputing it
/// with each contribution left out in turn.
pub fn jackknife<T: Clone, F: Fn(&[T]) -> f64>(
    contributions: &[T],
    statistic: F,
) -> Result<(f64, f64)> {
    let n = contributions.len();
    if n < 3 {
        return Err(Error::domain(format!(
            "jackknife needs at least 3 samples, got {n}"
        )));
    }
    let full = statistic(contributions);
    let mut rest = Vec::with_capacity(n - 1);
    let replicates: Vec<f64> = (0..n)
        .map(|r| {
            rest.clear();
            rest.extend(contributions[..r].iter().cloned());
            rest.extend(contributions[r + 1..].iter().cloned());
            statistic(&rest)
        })
        .collect();
    Ok((full, jackknife_sigma(&replicates)?))
}

/// A time series of one estimated quantity.
///
/// `replicates[k]`, when non-empty, holds the leave-one-unitary-out values at
/// time k; subsystem averages recompute their jackknife from these.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimateSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub errors: Vec<Option<f64>>,
    pub n_excluded: Vec<usize>,
    pub replicates: Vec<Vec<Option<f64>>>,
}

impl EstimateSeries {
    /// Exact curve without errors.
    pub fn exact(label: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Self {
        let n = times.len();
        Self {
            label: label.into(),
            times,
            values: values.into_iter().map(Some).collect(),
            errors: vec![None; n],
            n_excluded: vec![0; n],
            replicates: vec![Vec::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.values.len() != n
            || self.errors.len() != n
            || self.n_excluded.len() != n
            || self.replicates.len() != n
        {
            return Err(Error::domain(format!(
                "series '{}' has ragged columns",
                self.label
            )));
        }
        if self.errors.iter().flatten().any(|e| !(*e >= 0.0)) {
            return Err(Error::domain(format!(
                "series '{}' has negative errors",
                self.label
            )));
        }
        Ok(())
    }

    /// Value or NaN, convenient for numeric checks.
    pub fn value_or_nan(&self, k: usize) -> f64 {
        self.values[k].unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AveragingAxis {
    /// Subsystems estimated from one dataset: jackknife over unitaries of the
    /// averaged statistic.
    Subsystem,
    /// Independent realizations: standard deviation of the mean.
    Disorder,
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300))
}

pub fn average_series(
    series: &[EstimateSeries],
    axis: AveragingAxis,
    label: impl Into<String>,
) -> Result<EstimateSeries> {
    let label = label.into();
    let Some(first) = series.first() else {
        return Err(Error::domain("no series to average"));
    };
    for s in series {
        s.validate()?;
        if !same_grid(&s.times, &first.times) {
            return Err(Error::domain(format!(
                "time grid of '{}' differs from '{}'",
                s.label, first.label
            )));
        }
    }
    if series.len() == 1 {
        let mut out = first.clone();
        out.label = label;
        return Ok(out);
    }
    let n_t = first.len();
    let mut out = EstimateSeries {
        label,
        times: first.times.clone(),
        values: Vec::with_capacity(n_t),
        errors: Vec::with_capacity(n_t),
        n_excluded: Vec::with_capacity(n_t),
        replicates: Vec::with_capacity(n_t),
    };
    for k in 0..n_t {
        match axis {
            AveragingAxis::Subsystem => {
                let n_rep = series
                    .iter()
                    .map(|s| s.replicates[k].len())
                    .max()
                    .unwrap_or(0);
                let usable: Vec<&EstimateSeries> = series
                    .iter()
                    .filter(|s| {
                        s.values[k].is_some()
                            && s.replicates[k].len() == n_rep
                            && s.replicates[k].iter().all(Option::is_some)
                    })
                    .collect();
                out.n_excluded.push(series.len() - usable.len());
                if usable.is_empty() {
                    out.values.push(None);
                    out.errors.push(None);
                    out.replicates.push(Vec::new());
                    continue;
                }
                let m = usable.len() as f64;
                let mean = usable.iter().map(|s| s.values[k].unwrap()).sum::<f64>() / m;
                let reps: Vec<f64> = (0..n_rep)
                    .map(|r| {
                        usable
                            .iter()
                            .map(|s| s.replicates[k][r].unwrap())
                            .sum::<f64>()
                            / m
                    })
                    .collect();
                out.values.push(Some(mean));
                out.errors.push(if n_rep >= 3 {
                    Some(jackknife_sigma(&reps)?)
                } else {
                    None
                });
                out.replicates.push(reps.into_iter().map(Some).collect());
            }
            AveragingAxis::Disorder => {
                let vals: Vec<f64> = series.iter().filter_map(|s| s.values[k]).collect();
                out.n_excluded.push(series.len() - vals.len());
                out.replicates.push(Vec::new());
                if vals.is_empty() {
                    out.values.push(None);
                    out.errors.push(None);
                    continue;
                }
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                out.values.push(Some(mean));
                out.errors.push(if vals.len() >= 2 {
                    let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                    Some((var / n).sqrt())
                } else {
                    None
                });
            }
        }
    }
    Ok(out)
}

/// Significance rule for crossings: separation must exceed
/// `sigma_multiplier` combined standard errors on both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingRule {
    pub sigma_multiplier: f64,
}

impl Default for CrossingRule {
    fn default() -> Self {
        Self {
            sigma_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// Interpolated crossing time.
    pub time: f64,
    /// First grid index at or after the crossing.
    pub index: usize,
    /// +1 when the first series starts above the second, −1 otherwise.
    pub initial_sign: f64,
    pub significant: bool,
}

/// First time the difference a − b changes sign relative to its initial
/// sign, linearly interpolated between grid points. Points where either
/// value is missing are skipped.
pub fn detect_crossing(
    a: &EstimateSeries,
    b: &EstimateSeries,
    rule: CrossingRule,
) -> Result<Option<Crossing>> {
    if !same_grid(&a.times, &b.times) {
        return Err(Error::domain("crossing detection needs a common time grid"));
    }
    let pts: Vec<(usize, f64, f64)> = (0..a.len())
        .filter_map(|k| {
            let d = a.values[k]? - b.values[k]?;
            let ea = a.errors[k].unwrap_or(0.0);
            let eb = b.errors[k].unwrap_or(0.0);
            Some((k, d, (ea * ea + eb * eb).sqrt()))
        })
        .collect();
    let Some(&(_, d0, _)) = pts.iter().find(|p| p.1 != 0.0) else {
        return Ok(None);
    };
    let sign0 = d0.signum();
    let start = pts.iter().position(|p| p.1 != 0.0).unwrap();
    let Some(j) = (start + 1..pts.len()).find(|&j| pts[j].1 * sign0 <= 0.0) else {
        return Ok(None);
    };
    let (k0, dp, _) = pts[j - 1];
    let (k1, dn, _) = pts[j];
    let (t0, t1) = (a.times[k0], a.times[k1]);
    let time = if dn == 0.0 {
        t1
    } else {
        t0 + dp / (dp - dn) * (t1 - t0)
    };
    let separated = |p: &(usize, f64, f64), sign: f64| p.1 * sign > rule.sigma_multiplier * p.2;
    let before = pts[..j].iter().any(|p| separated(p, sign0));
    let after = pts[j..].iter().any(|p| separated(p, -sign0));
    Ok(Some(Crossing {
        time,
        index: k1,
        initial_sign: sign0,
        significant: before && after,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn connected_windows() {
        let w = enumerate_subsystems(12, 4, &SubsystemMode::Connected).unwrap();
        assert_eq!(w.len(), 9);
        assert_eq!(w[0].label(), "1-2-3-4");
        assert_eq!(w[1].label(), "2-3-4-5");
        assert_eq!(w[8].label(), "9-10-11-12");
        assert!(enumerate_subsystems(3, 4, &SubsystemMode::Connected).is_err());
    }

    #[test]
    fn pool_subsets() {
        let pool = SubsystemMode::Pool((3..9).collect());
        let s = enumerate_subsystems(12, 4, &pool).unwrap();
        assert_eq!(s.len(), 15);
        assert_eq!(s[0].label(), "4-5-6-7");
        assert_eq!(s[14].label(), "6-7-8-9");
        let mut sorted = s.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, s);
        assert_eq!(enumerate_subsystems(12, 6, &pool).unwrap().len(), 1);
        assert!(enumerate_subsystems(12, 7, &pool).is_err());
        assert!(enumerate_subsystems(5, 2, &SubsystemMode::Pool(vec![1, 1, 2])).is_err());
    }

    #[test]
    fn jackknife_of_mean_is_standard_error() {
        let x: Vec<f64> = (0..57)
            .map(|i| ((i * 37 % 11) as f64).sin() * 3.0 + i as f64 * 0.01)
            .collect();
        let (est, sigma) = jackknife(&x, |v| v.iter().sum::<f64>() / v.len() as f64).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let s2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((est - mean).abs() < 1e-14);
        assert!((sigma - (s2 / n).sqrt()).abs() < 1e-12);
        let (_, zero) = jackknife(&[2.0; 10], |v| v.iter().sum::<f64>() / v.len() as f64).unwrap();
        assert_eq!(zero, 0.0);
        assert!(jackknife(&[1.0, 2.0], |v| v[0]).is_err());
    }

    fn series(label: &str, vals: &[f64]) -> EstimateSeries {
        EstimateSeries::exact(
            label,
            (0..vals.len()).map(|k| k as f64).collect(),
            vals.to_vec(),
        )
    }

    #[test]
    fn disorder_average() {
        let s: Vec<EstimateSeries> = [1.0, 2.0, 3.0, 4.0, 6.0]
            .iter()
            .map(|&v| series("r", &[v, 5.0]))
            .collect();
        let avg = average_series(&s, AveragingAxis::Disorder, "mean").unwrap();
        assert_eq!(avg.values[0], Some(3.2));
        let sd =
            ((2.2f64.powi(2) + 1.2f64.powi(2) + 0.2f64.powi(2) + 0.8f64.powi(2) + 2.8f64.powi(2))
                / 4.0)
                .sqrt();
        assert!((avg.errors[0].unwrap() - sd / 5f64.sqrt()).abs() < 1e-14);
        assert_eq!(avg.errors[1], Some(0.0));
        let single = average_series(&s[..1], AveragingAxis::Disorder, "x").unwrap();
        assert_eq!(single.values, s[0].values);
        let mut off = s[1].clone();
        off.times[1] = 1.5;
        assert!(average_series(&[s[0].clone(), off], AveragingAxis::Disorder, "x").is_err());
    }

    #[test]
    fn subsystem_average_uses_joint_replicates() {
        let mk = |v: f64, reps: Vec<Option<f64>>| EstimateSeries {
            label: "s".into(),
            times: vec![0.0],
            values: vec![Some(v)],
            errors: vec![Some(0.1)],
            n_excluded: vec![0],
            replicates: vec![reps],
        };
        let a = mk(1.0, vec![Some(1.0), Some(1.1), Some(0.9), Some(1.0)]);
        let b = mk(3.0, vec![Some(3.0), Some(2.9), Some(3.1), Some(3.0)]);
        // perfectly anticorrelated replicates cancel in the average
        let avg = average_series(&[a.clone(), b], AveragingAxis::Subsystem, "avg").unwrap();
        assert_eq!(avg.values[0], Some(2.0));
        assert!(avg.errors[0].unwrap() < 1e-14);
        let c = mk(5.0, vec![Some(5.0), None, Some(5.0), Some(5.0)]);
        let avg = average_series(&[a, c], AveragingAxis::Subsystem, "avg").unwrap();
        assert_eq!(avg.n_excluded[0], 1);
        assert_eq!(avg.values[0], Some(1.0));
    }

    #[test]
    fn linear_crossing() {
        let t: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let a = EstimateSeries::exact("a", t.clone(), t.iter().map(|x| 1.0 - x).collect());
        let b = EstimateSeries::exact("b", t.clone(), vec![0.5; t.len()]);
        let c = detect_crossing(&a, &b, CrossingRule::default())
            .unwrap()
            .unwrap();
        assert!((c.time - 0.5).abs() < 1e-12);
        assert!(c.significant);
        let swapped = detect_crossing(&b, &a, CrossingRule::default())
            .unwrap()
            .unwrap();
        assert!((swapped.time - c.time).abs() < 1e-15);
        assert_eq!(swapped.initial_sign, -c.initial_sign);
        let par = EstimateSeries::exact("p", t.clone(), vec![0.7; t.len()]);
        assert!(detect_crossing(&par, &b, CrossingRule::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn crossing_within_noise_is_not_significant() {
        let t = vec![0.0, 1.0, 2.0];
        let mut a = EstimateSeries::exact("a", t.clone(), vec![1.05, 1.0, 0.98]);
        a.errors = vec![Some(0.2); 3];
        let b = EstimateSeries::exact("b", t, vec![1.0; 3]);
        let c = detect_crossing(&a, &b, CrossingRule::default())
            .unwrap()
            .unwrap();
        assert!(!c.significant);
    }
}
