//! Reduced density matrices, charge-sector symmetrization and the exact
//! entanglement asymmetry.

use nalgebra::{DMatrix, DVector};

use super::basis::{dim, up_count, SiteSet};
use super::state::PureState;
use crate::error::{Error, Result};
use crate::{CMatrix, C64};

const HERMITIAN_TOL: f64 = 1e-10;

/// Hermitian operator on the sites of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemDensity {
    sites: SiteSet,
    matrix: CMatrix,
}

impl SubsystemDensity {
    /// Checks shape and Hermiticity. Positivity and unit trace are not
    /// required so shadow estimates fit the same type.
    pub fn new(sites: SiteSet, matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != sites.dim() || matrix.ncols() != sites.dim() {
            return Err(Error::domain(format!(
                "matrix is {}x{}, expected {}x{} for {} sites",
                matrix.nrows(),
                matrix.ncols(),
                sites.dim(),
                sites.dim(),
                sites.len()
            )));
        }
        let dev = hermiticity_defect(&matrix);
        if dev > HERMITIAN_TOL {
            return Err(Error::domain(format!(
                "matrix not Hermitian (defect {dev:e})"
            )));
        }
        Ok(Self { sites, matrix })
    }

    pub(crate) fn from_parts(sites: SiteSet, matrix: CMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), sites.dim());
        Self { sites, matrix }
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn n_a(&self) -> usize {
        self.sites.len()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// Trace of each charge block, indexed by local up-spin count.
    pub fn charge_populations(&self) -> Vec<f64> {
        let n_a = self.n_a();
        let mut pops = vec![0.0; n_a + 1];
        for a in 0..self.matrix.nrows() {
            pops[up_count(a, n_a)] += self.matrix[(a, a)].re;
        }
        pops
    }
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// max |M − M†|
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn n_qubits_of(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::domain(format!(
            "non-square matrix {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let d = m.nrows();
    if d == 0 || !d.is_power_of_two() {
        return Err(Error::domain(format!(
            "dimension {d} is not a power of two"
        )));
    }
    Ok(d.trailing_zeros() as usize)
}

/// Zero every entry that connects different charge sectors.
pub fn symmetrize_matrix(m: &CMatrix) -> Result<CMatrix> {
    let n_a = n_qubits_of(m)?;
    let d = m.nrows();
    let up: Vec<usize> = (0..d).map(|a| up_count(a, n_a)).collect();
    Ok(CMatrix::from_fn(d, d, |a, b| {
        if up[a] == up[b] {
            m[(a, b)]
        } else {
            C64::new(0.0, 0.0)
        }
    }))
}

/// ρ_{A,Q} = Σ_q Π_q ρ_A Π_q
pub fn symmetrize(rho: &SubsystemDensity) -> SubsystemDensity {
    let m = symmetrize_matrix(&rho.matrix).expect("SubsystemDensity is square by construction");
    SubsystemDensity::from_parts(rho.sites.clone(), m)
}

/// Tr(A B) without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    // column-major storage: walk b by columns
    for j in 0..n {
        for i in 0..n {
            acc += a[(j, i)] * b[(i, j)];
        }
    }
    acc
}

pub fn purity_matrix(m: &CMatrix) -> f64 {
    trace_product(m, m).re
}

/// Tr ρ²
pub fn purity(rho: &SubsystemDensity) -> f64 {
    purity_matrix(&rho.matrix)
}

/// log Tr ρ² − log Tr ρ_{A,Q}² for a raw matrix.
pub fn ea_of_matrix(m: &CMatrix) -> Result<f64> {
    let p = purity_matrix(m);
    let sym = symmetrize_matrix(m)?;
    let ps = purity_matrix(&sym);
    if !(p > 0.0) || !(ps > 0.0) {
        return Err(Error::domain(format!(
            "non-positive purity (Tr ρ² = {p}, Tr ρ_Q² = {ps})"
        )));
    }
    Ok(p.ln() - ps.ln())
}

/// Entanglement asymmetry (natural log).
pub fn exact_ea(rho: &SubsystemDensity) -> Result<f64> {
    ea_of_matrix(&rho.matrix)
}

/// Reshape a full amplitude vector into the (subsystem × environment) matrix.
fn bipartite_matrix(amps: &DVector<C64>, sites: &SiteSet) -> CMatrix {
    let env_dim = dim(sites.n_sites() - sites.len());
    let mut m = DMatrix::zeros(sites.dim(), env_dim);
    for (idx, &amp) in amps.iter().enumerate() {
        if amp != C64::new(0.0, 0.0) {
            let (a, e) = sites.split_index(idx);
            m[(a, e)] = amp;
        }
    }
    m
}

/// Tr_Ā |ψ⟩⟨φ| for two full-length amplitude vectors.
pub fn cross_partial_trace(
    psi: &DVector<C64>,
    phi: &DVector<C64>,
    sites: &SiteSet,
) -> Result<CMatrix> {
    let expected = dim(sites.n_sites());
    if psi.len() != expected || phi.len() != expected {
        return Err(Error::domain(format!(
            "amplitude lengths {} and {} do not match 2^{} = {expected}",
            psi.len(),
            phi.len(),
            sites.n_sites()
        )));
    }
    let mp = bipartite_matrix(psi, sites);
    let mq = bipartite_matrix(phi, sites);
    Ok(&mp * mq.adjoint())
}

/// Tr_Ā |ψ⟩⟨ψ|
pub fn partial_trace(psi: &PureState, sites: &SiteSet) -> Result<SubsystemDensity> {
    if psi.n_sites() != sites.n_sites() {
        return Err(Error::domain(format!(
            "state has {} sites, subsystem refers to {}",
            psi.n_sites(),
            sites.n_sites()
        )));
    }
    let m = bipartite_matrix(psi.amplitudes(), sites);
    Ok(SubsystemDensity::from_parts(
        sites.clone(),
        &m * m.adjoint(),
    ))
}

/// Local up-spin count of each subsystem basis index.
pub fn local_up_counts(n_a: usize) -> Vec<usize> {
    (0..dim(n_a)).map(|a| up_count(a, n_a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::basis::charge_sectors;
    use nalgebra::dmatrix;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn sites(n: usize, s: &[usize]) -> SiteSet {
        SiteSet::new(n, s.to_vec()).unwrap()
    }

    #[test]
    fn diagonal_unchanged_by_symmetrize() {
        let m = CMatrix::from_diagonal(&DVector::from_vec(vec![c(0.1), c(0.2), c(0.3), c(0.4)]));
        assert_eq!(symmetrize_matrix(&m).unwrap(), m);
    }

    #[test]
    fn x_eigenstate_symmetrizes_to_half_identity() {
        let m = dmatrix![c(0.5), c(0.5); c(0.5), c(0.5)];
        let s = symmetrize_matrix(&m).unwrap();
        assert_eq!(s, dmatrix![c(0.5), c(0.0); c(0.0), c(0.5)]);
    }

    #[test]
    fn symmetrize_rejects_non_square() {
        let m = CMatrix::zeros(2, 4);
        assert!(matches!(symmetrize_matrix(&m), Err(Error::Domain(_))));
        let m = CMatrix::zeros(3, 3);
        assert!(matches!(symmetrize_matrix(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_two_qubit_symmetrized_purity() {
        // ψ = ½(|00⟩+|01⟩+|10⟩+|11⟩); blocks of weight ¼, ½, ¼, all rank one
        let psi = PureState::normalized(2, DVector::from_element(4, c(1.0))).unwrap();
        let rho = partial_trace(&psi, &SiteSet::all(2).unwrap()).unwrap();
        let ps = purity(&symmetrize(&rho));
        assert!((ps - 3.0 / 8.0).abs() < 1e-14);
    }

    #[test]
    fn purity_examples() {
        let s1 = sites(1, &[0]);
        let pure =
            SubsystemDensity::new(s1.clone(), dmatrix![c(1.0), c(0.0); c(0.0), c(0.0)]).unwrap();
        assert!((purity(&pure) - 1.0).abs() < 1e-15);
        let mixed = SubsystemDensity::new(s1, dmatrix![c(0.75), c(0.0); c(0.0), c(0.25)]).unwrap();
        assert!((purity(&mixed) - 0.625).abs() < 1e-15);
        let mm = CMatrix::identity(16, 16) / c(16.0);
        assert!((purity_matrix(&mm) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn block_diagonal_has_zero_ea() {
        let m = CMatrix::from_diagonal(&DVector::from_vec(vec![c(0.4), c(0.3), c(0.2), c(0.1)]));
        let rho = SubsystemDensity::new(sites(2, &[0, 1]), m).unwrap();
        assert!(exact_ea(&rho).unwrap().abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_ea_is_domain_error() {
        let rho = SubsystemDensity::new(sites(1, &[0]), CMatrix::zeros(2, 2)).unwrap();
        assert!(exact_ea(&rho).is_err());
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = dmatrix![c(0.5), c(0.1); c(0.0), c(0.5)];
        assert!(SubsystemDensity::new(sites(1, &[0]), m).is_err());
    }

    #[test]
    fn product_state_reduces_to_pure() {
        let a = DVector::from_vec(vec![c(0.6), c(0.8)]);
        let b = DVector::from_vec(vec![C64::new(0.0, 1.0), c(0.0)]);
        let psi = PureState::new(2, a.kronecker(&b)).unwrap();
        let rho = partial_trace(&psi, &sites(2, &[0])).unwrap();
        assert!((purity(&rho) - 1.0).abs() < 1e-14);
        let expect = &a * a.adjoint();
        assert!(max_abs(&(rho.matrix() - expect)) < 1e-14);
    }

    #[test]
    fn bell_pair_marginal_is_maximally_mixed() {
        let mut v = DVector::zeros(4);
        v[0] = c(1.0);
        v[3] = c(1.0);
        let psi = PureState::normalized(2, v).unwrap();
        let rho = partial_trace(&psi, &sites(2, &[1])).unwrap();
        assert!(max_abs(&(rho.matrix() - CMatrix::identity(2, 2) * c(0.5))) < 1e-15);
    }

    #[test]
    fn ghz_two_site_marginal() {
        let mut v = DVector::zeros(8);
        v[0] = c(1.0);
        v[7] = c(1.0);
        let psi = PureState::normalized(3, v).unwrap();
        let rho = partial_trace(&psi, &sites(3, &[0, 1])).unwrap();
        let mut expect = CMatrix::zeros(4, 4);
        expect[(0, 0)] = c(0.5);
        expect[(3, 3)] = c(0.5);
        assert!(max_abs(&(rho.matrix() - expect)) < 1e-15);
        assert!((purity(&rho) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_site_mismatch() {
        let psi = PureState::basis(3, 0).unwrap();
        assert!(partial_trace(&psi, &sites(4, &[0])).is_err());
    }

    #[test]
    fn cross_trace_between_disjoint_environments_vanishes() {
        // N=2, A={site 1}: |00⟩ (sector up=2) vs |11⟩ (sector up=0)
        let mut m1 = DVector::zeros(4);
        m1[0] = C64::new(0.3, 0.1);
        let mut m2 = DVector::zeros(4);
        m2[3] = C64::new(-0.2, 0.7);
        let x = cross_partial_trace(&m1, &m2, &sites(2, &[0])).unwrap();
        assert_eq!(x, CMatrix::zeros(2, 2));
    }

    #[test]
    fn cross_trace_length_mismatch() {
        let a = DVector::zeros(4);
        let b = DVector::zeros(8);
        assert!(cross_partial_trace(&a, &b, &sites(2, &[0])).is_err());
    }

    #[test]
    fn cross_traces_sum_to_partial_trace() {
        let amps: Vec<C64> = (0..16)
            .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()))
            .collect();
        let psi = PureState::normalized(4, DVector::from_vec(amps)).unwrap();
        let a = sites(4, &[1, 2]);
        let sectors = charge_sectors(4).unwrap();
        let parts: Vec<_> = sectors
            .sectors
            .iter()
            .map(|s| psi.sector_component(s.up))
            .collect();
        let mut total = CMatrix::zeros(4, 4);
        for p in &parts {
            for q in &parts {
                total += cross_partial_trace(p, q, &a).unwrap();
            }
        }
        let direct = partial_trace(&psi, &a).unwrap();
        assert!(max_abs(&(total - direct.matrix())) < 1e-14);
        for p in &parts {
            let blk = cross_partial_trace(p, p, &a).unwrap();
            assert!(hermiticity_defect(&blk) < 1e-15);
            let ev = blk.symmetric_eigenvalues();
            assert!(ev.iter().all(|&e| e > -1e-14));
        }
    }
}
