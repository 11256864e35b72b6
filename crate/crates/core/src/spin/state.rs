use nalgebra::DVector;

use super::basis::{charge, dim, up_count, MAX_SITES};
use crate::error::{Error, Result};
use crate::C64;

const NORM_TOL: f64 = 1e-12;

/// Normalized state vector over the 2^N computational basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    n_sites: usize,
    amplitudes: DVector<C64>,
}

impl PureState {
    pub fn new(n_sites: usize, amplitudes: DVector<C64>) -> Result<Self> {
        Self::check_len(n_sites, amplitudes.len())?;
        let norm = amplitudes.norm_squared();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::domain(format!(
                "state not normalized: Σ|a|² = {norm}"
            )));
        }
        Ok(Self {
            n_sites,
            amplitudes,
        })
    }

    /// Rescales `amplitudes` to unit norm.
    pub fn normalized(n_sites: usize, amplitudes: DVector<C64>) -> Result<Self> {
        Self::check_len(n_sites, amplitudes.len())?;
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::domain("cannot normalize a zero vector"));
        }
        Ok(Self {
            n_sites,
            amplitudes: amplitudes / C64::new(norm, 0.0),
        })
    }

    /// Computational basis state.
    pub fn basis(n_sites: usize, index: usize) -> Result<Self> {
        Self::check_len(n_sites, dim(n_sites))?;
        if index >= dim(n_sites) {
            return Err(Error::domain(format!("basis index {index} out of range")));
        }
        let mut amps = DVector::zeros(dim(n_sites));
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self {
            n_sites,
            amplitudes: amps,
        })
    }

    pub(crate) fn from_raw(n_sites: usize, amplitudes: DVector<C64>) -> Self {
        debug_assert_eq!(amplitudes.len(), dim(n_sites));
        Self {
            n_sites,
            amplitudes,
        }
    }

    fn check_len(n_sites: usize, len: usize) -> Result<()> {
        if n_sites == 0 || n_sites > MAX_SITES {
            return Err(Error::domain(format!("n_sites {n_sites} out of range")));
        }
        if len != dim(n_sites) {
            return Err(Error::domain(format!(
                "expected {} amplitudes for {n_sites} sites, got {len}",
                dim(n_sites)
            )));
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amplitudes
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    /// Projection onto the sector with `up` up-spins, kept at full length.
    pub fn sector_component(&self, up: usize) -> DVector<C64> {
        let n = self.n_sites;
        DVector::from_iterator(
            self.amplitudes.len(),
            self.amplitudes.iter().enumerate().map(|(i, &a)| {
                if up_count(i, n) == up {
                    a
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
        )
    }

    /// Weight Σ|ψ_k|² in each magnetization sector, indexed by up count.
    pub fn sector_populations(&self) -> Vec<f64> {
        let mut pops = vec![0.0; self.n_sites + 1];
        for (i, a) in self.amplitudes.iter().enumerate() {
            pops[up_count(i, self.n_sites)] += a.norm_sqr();
        }
        pops
    }

    /// ⟨Q⟩ with Q = ½ Σ σ_z.
    pub fn mean_charge(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| a.norm_sqr() * charge(i, self.n_sites))
            .sum()
    }

    /// |⟨self|other⟩|²
    pub fn overlap_sqr(&self, other: &PureState) -> f64 {
        self.amplitudes.dotc(&other.amplitudes).norm_sqr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized() {
        let v = DVector::from_element(4, C64::new(1.0, 0.0));
        assert!(PureState::new(2, v.clone()).is_err());
        let s = PureState::normalized(2, v).unwrap();
        assert!((s.norm_squared() - 1.0).abs() < 1e-15);
        assert_eq!(s.sector_populations(), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn rejects_wrong_length() {
        let v = DVector::from_element(3, C64::new(1.0, 0.0));
        assert!(PureState::normalized(2, v).is_err());
    }

    #[test]
    fn all_down_charge() {
        let s = PureState::basis(5, 0b11111).unwrap();
        assert_eq!(s.mean_charge(), -2.5);
    }
}
