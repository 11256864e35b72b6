//! Classical shadows from randomized-measurement records and the
//! U-statistic estimators built on them.
//!
//! Pair sums over distinct records use
//! Σ_{r≠r′} Tr(ρ_r ρ_r′) = Tr(S²) − Σ_r Tr(ρ_r²) with S = Σ_r ρ_r,
//! which also gives every leave-one-record-out sum in O(1) per record.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::protocol::{Mat2, RMDataset, RMRecord};
use crate::spin::density::symmetrize_matrix;
use crate::spin::{SiteSet, SubsystemDensity};
use crate::{CMatrix, C64};

#[derive(Debug, Clone)]
pub struct SubsystemShadow {
    pub sites: SiteSet,
    pub matrix: CMatrix,
    pub record: usize,
}

/// 3 U†|s⟩⟨s|U − I
pub fn site_factor(u: &Mat2, s: usize) -> Mat2 {
    let mut f = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            f[i][j] = u[s][i].conj() * u[s][j] * 3.0;
        }
        f[i][i] -= 1.0;
    }
    f
}

/// Kronecker product of 2×2 factors, first factor on the most significant bit.
fn kron_factors(factors: &[Mat2]) -> CMatrix {
    let n = factors.len();
    let d = 1usize << n;
    CMatrix::from_fn(d, d, |a, b| {
        let mut acc = C64::new(1.0, 0.0);
        for (k, f) in factors.iter().enumerate() {
            let shift = n - 1 - k;
            acc *= f[(a >> shift) & 1][(b >> shift) & 1];
        }
        acc
    })
}

fn check_sites(record: &RMRecord, sites: &SiteSet) -> Result<()> {
    if sites.n_sites() != record.n_sites() {
        return Err(Error::domain(format!(
            "subsystem refers to {} sites, record has {}",
            sites.n_sites(),
            record.n_sites()
        )));
    }
    Ok(())
}

/// Snapshot of shot `m` restricted to `sites`.
pub fn shadow_single(record: &RMRecord, m: usize, sites: &SiteSet) -> Result<SubsystemShadow> {
    check_sites(record, sites)?;
    if m >= record.n_shots() {
        return Err(Error::domain(format!(
            "shot {m} out of range ({} shots)",
            record.n_shots()
        )));
    }
    let factors: Vec<Mat2> = sites
        .sites()
        .iter()
        .map(|&i| site_factor(&record.unitaries[i].entries, record.bit(m, i)))
        .collect();
    Ok(SubsystemShadow {
        sites: sites.clone(),
        matrix: kron_factors(&factors),
        record: usize::MAX,
    })
}

/// Mean of the single-shot snapshots of one record.
pub fn shadow_per_unitary_matrix(record: &RMRecord, sites: &SiteSet) -> Result<CMatrix> {
    check_sites(record, sites)?;
    let n_a = sites.len();
    let d = sites.dim();
    if record.n_shots() == 0 {
        return Err(Error::domain("record has no shots"));
    }
    // shots only enter through their local outcome pattern
    let mut counts = vec![0usize; d];
    for m in 0..record.n_shots() {
        let pattern = sites
            .sites()
            .iter()
            .fold(0usize, |acc, &i| (acc << 1) | record.bit(m, i));
        counts[pattern] += 1;
    }
    let table: Vec<[Mat2; 2]> = sites
        .sites()
        .iter()
        .map(|&i| {
            let u = &record.unitaries[i].entries;
            [site_factor(u, 0), site_factor(u, 1)]
        })
        .collect();
    let mut acc = CMatrix::zeros(d, d);
    let mut factors = Vec::with_capacity(n_a);
    for (pattern, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        factors.clear();
        for (k, t) in table.iter().enumerate() {
            factors.push(t[(pattern >> (n_a - 1 - k)) & 1]);
        }
        acc += kron_factors(&factors) * C64::new(c as f64, 0.0);
    }
    Ok(acc / C64::new(record.n_shots() as f64, 0.0))
}

pub fn shadow_per_unitary(record: &RMRecord, sites: &SiteSet) -> Result<SubsystemShadow> {
    Ok(SubsystemShadow {
        sites: sites.clone(),
        matrix: shadow_per_unitary_matrix(record, sites)?,
        record: usize::MAX,
    })
}

/// Per-unitary shadows of every record, in record order.
pub fn dataset_shadows(ds: &RMDataset, sites: &SiteSet) -> Result<Vec<SubsystemShadow>> {
    ds.records
        .par_iter()
        .enumerate()
        .map(|(r, rec)| {
            let mut s = shadow_per_unitary(rec, sites)?;
            s.record = r;
            Ok(s)
        })
        .collect()
}

/// Tr(A B) for Hermitian A, B.
#[inline]
fn herm_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.dotc(b).re
}

/// Sums needed for the second-moment U-statistic and its leave-one-out
/// versions.
#[derive(Debug, Clone)]
pub struct SecondMoment {
    n: usize,
    sum: CMatrix,
    /// Tr(ρ_r²)
    self_terms: Vec<f64>,
    /// Tr(S ρ_r)
    with_sum: Vec<f64>,
    trace_sum_sq: f64,
}

impl SecondMoment {
    pub fn new(mats: &[CMatrix]) -> Result<Self> {
        let Some(first) = mats.first() else {
            return Err(Error::domain("no shadows"));
        };
        let d = first.nrows();
        if mats.iter().any(|m| m.shape() != (d, d)) {
            return Err(Error::domain("shadows have mismatched shapes"));
        }
        // sequential so the result does not depend on thread scheduling
        let mut sum = CMatrix::zeros(d, d);
        for m in mats {
            sum += m;
        }
        let (self_terms, with_sum): (Vec<f64>, Vec<f64>) = mats
            .par_iter()
            .map(|m| (herm_inner(m, m), herm_inner(&sum, m)))
            .unzip();
        let trace_sum_sq = herm_inner(&sum, &sum);
        Ok(Self {
            n: mats.len(),
            sum,
            self_terms,
            with_sum,
            trace_sum_sq,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sum(&self) -> &CMatrix {
        &self.sum
    }

    /// Σ_{r≠r′} Tr(ρ_r ρ_r′)
    pub fn pair_sum(&self) -> f64 {
        self.trace_sum_sq - self.self_terms.iter().sum::<f64>()
    }

    /// Pair sum over all records except `r`.
    pub fn pair_sum_without(&self, r: usize) -> f64 {
        self.pair_sum() - 2.0 * (self.with_sum[r] - self.self_terms[r])
    }

    pub fn ustat(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::domain("U-statistic needs at least 2 unitaries"));
        }
        Ok(self.pair_sum() / (self.n * (self.n - 1)) as f64)
    }

    pub fn ustat_without(&self, r: usize) -> Result<f64> {
        if self.n < 3 {
            return Err(Error::domain(
                "leave-one-out U-statistic needs at least 3 unitaries",
            ));
        }
        let m = self.n - 1;
        Ok(self.pair_sum_without(r) / (m * (m - 1)) as f64)
    }
}

/// Literal O(N_U²) pair sum, kept as an independent check of the sum identity.
pub fn pairwise_trace_sum_direct(mats: &[CMatrix]) -> f64 {
    (0..mats.len())
        .into_par_iter()
        .map(|i| {
            mats.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, m)| herm_inner(&mats[i], m))
                .sum::<f64>()
        })
        .sum()
}

fn matrices(shadows: &[SubsystemShadow]) -> Vec<CMatrix> {
    shadows.iter().map(|s| s.matrix.clone()).collect()
}

fn symmetrized(mats: &[CMatrix]) -> Result<Vec<CMatrix>> {
    mats.par_iter().map(symmetrize_matrix).collect()
}

/// Unbiased estimate of Tr ρ_A².
pub fn purity_ustat(shadows: &[SubsystemShadow]) -> Result<f64> {
    if shadows.len() < 2 {
        return Err(Error::domain("U-statistic needs at least 2 unitaries"));
    }
    SecondMoment::new(&matrices(shadows))?.ustat()
}

fn ea_from_sums(pairs: f64, sym_pairs: f64, norm: f64) -> Result<f64> {
    if !(pairs > 0.0) || !(sym_pairs > 0.0) {
        return Err(Error::EstimateUndefined {
            purity: pairs / norm,
            symmetrized: sym_pairs / norm,
        });
    }
    Ok(pairs.ln() - sym_pairs.ln())
}

fn fd_from_parts(overlap_mean: f64, purity: f64, de_purity: f64) -> Result<f64> {
    let denominator = purity + de_purity;
    if !(denominator > 0.0) {
        return Err(Error::DistanceUndefined { denominator });
    }
    let ratio = (2.0 * overlap_mean / denominator).clamp(0.0, 1.0);
    Ok((1.0 - ratio).sqrt())
}

/// Everything the EA and FD estimators need for one subsystem, with
/// leave-one-unitary-out access for the jackknife.
#[derive(Debug, Clone)]
pub struct SubsystemAnalysis {
    pub sites: SiteSet,
    pub moments: SecondMoment,
    pub sym_moments: SecondMoment,
    reference: Option<Reference>,
}

#[derive(Debug, Clone)]
struct Reference {
    /// Tr(ρ_r ρ_DE)
    overlaps: Vec<f64>,
    overlap_total: f64,
    purity: f64,
}

impl SubsystemAnalysis {
    pub fn new(
        shadows: &[CMatrix],
        sites: SiteSet,
        reference: Option<&SubsystemDensity>,
    ) -> Result<Self> {
        if shadows.len() < 2 {
            return Err(Error::domain("need at least 2 unitaries"));
        }
        if shadows.iter().any(|m| m.nrows() != sites.dim()) {
            return Err(Error::domain("shadow dimension does not match subsystem"));
        }
        let moments = SecondMoment::new(shadows)?;
        let sym_moments = SecondMoment::new(&symmetrized(shadows)?)?;
        let reference = match reference {
            Some(de) => {
                if de.matrix().nrows() != sites.dim() {
                    return Err(Error::domain(
                        "reference state dimension does not match subsystem",
                    ));
                }
                let overlaps: Vec<f64> = shadows
                    .par_iter()
                    .map(|m| herm_inner(m, de.matrix()))
                    .collect();
                Some(Reference {
                    overlap_total: overlaps.iter().sum(),
                    overlaps,
                    purity: herm_inner(de.matrix(), de.matrix()),
                })
            }
            None => None,
        };
        Ok(Self {
            sites,
            moments,
            sym_moments,
            reference,
        })
    }

    pub fn from_dataset(
        ds: &RMDataset,
        sites: &SiteSet,
        reference: Option<&SubsystemDensity>,
    ) -> Result<Self> {
        let mats: Vec<CMatrix> = dataset_shadows(ds, sites)?
            .into_iter()
            .map(|s| s.matrix)
            .collect();
        Self::new(&mats, sites.clone(), reference)
    }

    pub fn n_u(&self) -> usize {
        self.moments.len()
    }

    pub fn has_reference(&self) -> bool {
        self.reference.is_some()
    }

    pub fn purity(&self) -> Result<f64> {
        self.moments.ustat()
    }

    pub fn sym_purity(&self) -> Result<f64> {
        self.sym_moments.ustat()
    }

    pub fn ea(&self) -> Result<f64> {
        let n = self.n_u();
        ea_from_sums(
            self.moments.pair_sum(),
            self.sym_moments.pair_sum(),
            (n * (n - 1)) as f64,
        )
    }

    pub fn ea_without(&self, r: usize) -> Result<f64> {
        let m = self.n_u() - 1;
        ea_from_sums(
            self.moments.pair_sum_without(r),
            self.sym_moments.pair_sum_without(r),
            (m * m.saturating_sub(1)) as f64,
        )
    }

    fn reference(&self) -> Result<&Reference> {
        self.reference
            .as_ref()
            .ok_or_else(|| Error::domain("no diagonal-ensemble reference supplied"))
    }

    pub fn fd(&self) -> Result<f64> {
        let rf = self.reference()?;
        let n = self.n_u() as f64;
        fd_from_parts(rf.overlap_total / n, self.moments.ustat()?, rf.purity)
    }

    pub fn fd_without(&self, r: usize) -> Result<f64> {
        let rf = self.reference()?;
        let m = (self.n_u() - 1) as f64;
        fd_from_parts(
            (rf.overlap_total - rf.overlaps[r]) / m,
            self.moments.ustat_without(r)?,
            rf.purity,
        )
    }
}

/// Entanglement-asymmetry estimate from per-unitary shadows.
pub fn ea_estimator(shadows: &[SubsystemShadow], sites: &SiteSet) -> Result<f64> {
    SubsystemAnalysis::new(&matrices(shadows), sites.clone(), None)?.ea()
}

/// Frobenius-distance estimate against a known reference state.
pub fn fd_estimator(shadows: &[SubsystemShadow], rho_de: &SubsystemDensity) -> Result<f64> {
    let tr = rho_de.trace();
    if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
        return Err(Error::domain(format!("reference trace {tr} is not 1")));
    }
    SubsystemAnalysis::new(&matrices(shadows), rho_de.sites().clone(), Some(rho_de))?.fd()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{sample_cue, LocalUnitary};
    use crate::spin::density::{ea_of_matrix, hermiticity_defect, max_abs};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn random_record(n: usize, shots: usize, rng: &mut ChaCha8Rng) -> RMRecord {
        use rand::Rng;
        RMRecord {
            unitaries: (0..n)
                .map(|site| LocalUnitary {
                    site,
                    entries: sample_cue(rng),
                })
                .collect(),
            bitstrings: (0..shots)
                .map(|_| rng.random_range(0..1usize << n))
                .collect(),
        }
    }

    #[test]
    fn identity_factor_is_diag_two_minus_one() {
        let rec = RMRecord {
            unitaries: vec![LocalUnitary::identity(0)],
            bitstrings: vec![0],
        };
        let s = shadow_single(&rec, 0, &SiteSet::all(1).unwrap()).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(2.0), c(0.0), c(0.0), c(-1.0)]);
        assert!(max_abs(&(s.matrix - expected)) < 1e-15);
    }

    #[test]
    fn shadows_have_unit_trace_and_are_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rec = random_record(4, 10, &mut rng);
        let sites = SiteSet::new(4, vec![0, 2, 3]).unwrap();
        for m in 0..10 {
            let s = shadow_single(&rec, m, &sites).unwrap();
            assert!((s.matrix.trace() - c(1.0)).norm() < 1e-10);
            assert!(hermiticity_defect(&s.matrix) < 1e-12);
        }
        assert!(shadow_single(&rec, 10, &sites).is_err());
    }

    #[test]
    fn per_unitary_is_mean_of_single_shots() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rec = random_record(3, 17, &mut rng);
        let sites = SiteSet::new(3, vec![0, 2]).unwrap();
        let mean = (0..17)
            .map(|m| shadow_single(&rec, m, &sites).unwrap().matrix)
            .fold(CMatrix::zeros(4, 4), |a, b| a + b)
            / c(17.0);
        let pooled = shadow_per_unitary_matrix(&rec, &sites).unwrap();
        assert!(max_abs(&(mean - pooled)) < 1e-12);

        let one = RMRecord {
            unitaries: rec.unitaries.clone(),
            bitstrings: vec![rec.bitstrings[0]],
        };
        let a = shadow_per_unitary_matrix(&one, &sites).unwrap();
        let b = shadow_single(&one, 0, &sites).unwrap().matrix;
        assert!(max_abs(&(a - b)) < 1e-14);
    }

    #[test]
    fn sum_identity_matches_direct_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sites = SiteSet::new(4, vec![1, 2]).unwrap();
        let mats: Vec<CMatrix> = (0..40)
            .map(|_| shadow_per_unitary_matrix(&random_record(4, 5, &mut rng), &sites).unwrap())
            .collect();
        let sm = SecondMoment::new(&mats).unwrap();
        let direct = pairwise_trace_sum_direct(&mats);
        assert!((sm.pair_sum() - direct).abs() < 1e-9 * direct.abs().max(1.0));
        for r in [0, 7, 39] {
            let rest: Vec<CMatrix> = mats
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != r)
                .map(|(_, m)| m.clone())
                .collect();
            let d = pairwise_trace_sum_direct(&rest);
            assert!((sm.pair_sum_without(r) - d).abs() < 1e-9 * d.abs().max(1.0));
        }
    }

    #[test]
    fn fixed_shadows_reduce_to_plugin() {
        // all shadows equal → U-statistics equal the exact moments
        let rho = CMatrix::from_row_slice(
            4,
            4,
            &[
                c(0.4),
                c(0.1),
                c(0.05),
                c(0.2),
                c(0.1),
                c(0.3),
                c(0.1),
                c(0.0),
                c(0.05),
                c(0.1),
                c(0.2),
                c(0.0),
                c(0.2),
                c(0.0),
                c(0.0),
                c(0.1),
            ],
        );
        let sites = SiteSet::all(2).unwrap();
        let shadows: Vec<SubsystemShadow> = (0..5)
            .map(|r| SubsystemShadow {
                sites: sites.clone(),
                matrix: rho.clone(),
                record: r,
            })
            .collect();
        let p = purity_ustat(&shadows).unwrap();
        assert!((p - herm_inner(&rho, &rho)).abs() < 1e-14);
        let ea = ea_estimator(&shadows, &sites).unwrap();
        assert!((ea - ea_of_matrix(&rho).unwrap()).abs() < 1e-12);
        assert!(purity_ustat(&shadows[..1]).is_err());
    }

    #[test]
    fn fd_pure_vs_maximally_mixed() {
        // shadows fixed at a pure state, reference maximally mixed at N_A = 2
        let sites = SiteSet::all(2).unwrap();
        let mut pure = CMatrix::zeros(4, 4);
        pure[(0, 0)] = c(1.0);
        let shadows: Vec<SubsystemShadow> = (0..4)
            .map(|r| SubsystemShadow {
                sites: sites.clone(),
                matrix: pure.clone(),
                record: r,
            })
            .collect();
        let mixed =
            SubsystemDensity::new(sites.clone(), CMatrix::identity(4, 4) * c(0.25)).unwrap();
        let fd = fd_estimator(&shadows, &mixed).unwrap();
        assert!((fd - (3.0f64 / 5.0).sqrt()).abs() < 1e-12);
        let same = SubsystemDensity::new(sites.clone(), pure.clone()).unwrap();
        assert_eq!(fd_estimator(&shadows, &same).unwrap(), 0.0);
    }

    #[test]
    fn fd_clamps_to_zero() {
        // anticorrelated shadows drive the purity U-statistic below the
        // cross term, so the ratio exceeds 1
        let sites = SiteSet::all(1).unwrap();
        let a = CMatrix::from_row_slice(2, 2, &[c(1.5), c(0.0), c(0.0), c(-0.5)]);
        let b = CMatrix::from_row_slice(2, 2, &[c(-0.5), c(0.0), c(0.0), c(1.5)]);
        let shadows: Vec<SubsystemShadow> = [&a, &a, &b, &b]
            .iter()
            .enumerate()
            .map(|(r, m)| SubsystemShadow {
                sites: sites.clone(),
                matrix: (*m).clone(),
                record: r,
            })
            .collect();
        let de = SubsystemDensity::new(sites.clone(), CMatrix::identity(2, 2) * c(0.5)).unwrap();
        let analysis = SubsystemAnalysis::new(&matrices(&shadows), sites, Some(&de)).unwrap();
        assert!(2.0 * 0.5 / (analysis.purity().unwrap() + 0.5) > 1.0);
        assert_eq!(fd_estimator(&shadows, &de).unwrap(), 0.0);
    }

    #[test]
    fn negative_moment_is_reported() {
        let sites = SiteSet::all(1).unwrap();
        let a = CMatrix::from_row_slice(2, 2, &[c(2.0), c(0.0), c(0.0), c(-1.0)]);
        let b = CMatrix::from_row_slice(2, 2, &[c(-1.0), c(0.0), c(0.0), c(2.0)]);
        let shadows = vec![
            SubsystemShadow {
                sites: sites.clone(),
                matrix: a,
                record: 0,
            },
            SubsystemShadow {
                sites: sites.clone(),
                matrix: b,
                record: 1,
            },
        ];
        assert!(matches!(
            ea_estimator(&shadows, &sites),
            Err(Error::EstimateUndefined { .. })
        ));
    }

    #[test]
    fn leave_one_out_matches_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sites = SiteSet::new(3, vec![0, 1]).unwrap();
        let mats: Vec<CMatrix> = (0..12)
            .map(|_| shadow_per_unitary_matrix(&random_record(3, 30, &mut rng), &sites).unwrap())
            .collect();
        let mut de = CMatrix::zeros(4, 4);
        de[(0, 0)] = c(0.5);
        de[(3, 3)] = c(0.5);
        let de = SubsystemDensity::new(sites.clone(), de).unwrap();
        let full = SubsystemAnalysis::new(&mats, sites.clone(), Some(&de)).unwrap();
        for r in 0..12 {
            let rest: Vec<CMatrix> = mats
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != r)
                .map(|(_, m)| m.clone())
                .collect();
            let refit = SubsystemAnalysis::new(&rest, sites.clone(), Some(&de)).unwrap();
            match (full.ea_without(r), refit.ea()) {
                (Ok(a), Ok(b)) => assert!((a - b).abs() < 1e-10),
                (Err(_), Err(_)) => {}
                other => panic!("mismatch {other:?}"),
            }
            assert!((full.fd_without(r).unwrap() - refit.fd().unwrap()).abs() < 1e-10);
        }
    }
}
