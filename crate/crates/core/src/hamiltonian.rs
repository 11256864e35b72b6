//! Long-range XY Hamiltonians with optional site-dependent longitudinal fields,
//! diagonalized block by block in the magnetization sectors.
//!
//! H = Σ_{i>j} J0 / (2|i−j|^α) (σx_i σx_j + σy_i σy_j) + Σ_i h_i σz_i
//!
//! The flip-flop term moves a single excitation between sites i and j with
//! amplitude J0/|i−j|^α. All pairs are coupled (open chain, no cutoff).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::spin::basis::{charge_sectors, dim, site_bit, MAX_SITES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub n_sites: usize,
    /// Coupling amplitude J0 [rad/s].
    pub j0: f64,
    /// Power-law exponent α.
    pub alpha: f64,
    /// Per-site field h_i [rad/s].
    pub fields: Vec<f64>,
}

impl HamiltonianSpec {
    fn validate(&self) -> Result<()> {
        if self.n_sites < 2 || self.n_sites > MAX_SITES {
            return Err(Error::domain(format!(
                "n_sites must be in 2..={MAX_SITES}, got {}",
                self.n_sites
            )));
        }
        if !(self.j0 >= 0.0) || !self.j0.is_finite() {
            return Err(Error::domain(format!(
                "J0 must be finite and ≥ 0, got {}",
                self.j0
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::domain(format!(
                "alpha must be ≥ 0, got {}",
                self.alpha
            )));
        }
        if self.fields.len() != self.n_sites {
            return Err(Error::domain(format!(
                "{} fields for {} sites",
                self.fields.len(),
                self.n_sites
            )));
        }
        if self.fields.iter().any(|h| !h.is_finite()) {
            return Err(Error::domain("non-finite field"));
        }
        Ok(())
    }

    /// Flip-flop amplitude between sites `i` and `j`.
    pub fn hopping(&self, i: usize, j: usize) -> f64 {
        let d = (i as f64 - j as f64).abs();
        self.j0 / d.powf(self.alpha)
    }

    /// ⟨index|H|index⟩ = Σ_i h_i z_i.
    pub fn diagonal(&self, index: usize) -> f64 {
        let n = self.n_sites;
        self.fields
            .iter()
            .enumerate()
            .map(|(i, h)| if site_bit(index, i, n) == 0 { *h } else { -*h })
            .sum()
    }

    /// ⟨bra|H|ket⟩ in the full computational basis.
    pub fn matrix_element(&self, bra: usize, ket: usize) -> f64 {
        if bra == ket {
            return self.diagonal(ket);
        }
        let diff = bra ^ ket;
        if diff.count_ones() != 2 {
            return 0.0;
        }
        let n = self.n_sites;
        let hi = n - 1 - (usize::BITS - 1 - diff.leading_zeros()) as usize;
        let lo = n - 1 - diff.trailing_zeros() as usize;
        // a flip-flop needs one up and one down among the two differing sites
        if site_bit(ket, hi, n) == site_bit(ket, lo, n) {
            return 0.0;
        }
        self.hopping(hi, lo)
    }

    /// Dense 2^N × 2^N matrix. Only meant for small validation systems.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let d = dim(self.n_sites);
        let mut h = DMatrix::zeros(d, d);
        for (ket, col) in (0..d).zip(self.connections()) {
            for (bra, amp) in col {
                h[(bra, ket)] += amp;
            }
        }
        h
    }

    /// Nonzero entries per column: (row, value).
    pub fn connections(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.n_sites;
        (0..dim(n))
            .map(|ket| {
                let mut col = vec![(ket, self.diagonal(ket))];
                for i in 0..n {
                    for j in (i + 1)..n {
                        if site_bit(ket, i, n) != site_bit(ket, j, n) {
                            let bra = ket ^ (1 << (n - 1 - i)) ^ (1 << (n - 1 - j));
                            col.push((bra, self.hopping(i, j)));
                        }
                    }
                }
                col
            })
            .collect()
    }

    /// Rough energy unit for tolerances: J0, or the largest field if J0 = 0.
    pub fn energy_scale(&self) -> f64 {
        let hmax = self.fields.iter().fold(0.0f64, |m, h| m.max(h.abs()));
        if self.j0 > 0.0 {
            self.j0
        } else if hmax > 0.0 {
            hmax
        } else {
            1.0
        }
    }

    pub fn has_fields(&self) -> bool {
        self.fields.iter().any(|&h| h != 0.0)
    }

    /// Block of H restricted to the sector with `up` up-spins, in the
    /// ascending basis-index order of that sector.
    pub fn sector_block(&self, up: usize, indices: &[usize]) -> DMatrix<f64> {
        let n = self.n_sites;
        debug_assert!(indices.iter().all(|&i| n - i.count_ones() as usize == up));
        let d = indices.len();
        let mut block = DMatrix::zeros(d, d);
        for (col, &ket) in indices.iter().enumerate() {
            block[(col, col)] = self.diagonal(ket);
            for i in 0..n {
                for j in (i + 1)..n {
                    if site_bit(ket, i, n) != site_bit(ket, j, n) {
                        let bra = ket ^ (1 << (n - 1 - i)) ^ (1 << (n - 1 - j));
                        let row = indices
                            .binary_search(&bra)
                            .expect("flip-flop stays in sector");
                        block[(row, col)] = self.hopping(i, j);
                    }
                }
            }
        }
        block
    }
}

/// Pure XY chain, all fields zero.
pub fn build_xy(n_sites: usize, j0: f64, alpha: f64) -> Result<HamiltonianSpec> {
    build_disordered(n_sites, j0, alpha, vec![0.0; n_sites])
}

/// XY chain plus Σ h_i σz_i.
pub fn build_disordered(
    n_sites: usize,
    j0: f64,
    alpha: f64,
    fields: Vec<f64>,
) -> Result<HamiltonianSpec> {
    let spec = HamiltonianSpec {
        n_sites,
        j0,
        alpha,
        fields,
    };
    spec.validate()?;
    Ok(spec)
}

/// Draw h_i i.i.d. uniform on [0, w·J0].
pub fn sample_disorder<R: Rng + ?Sized>(
    n_sites: usize,
    w: f64,
    j0: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::domain(format!(
            "disorder strength must be > 0, got {w}"
        )));
    }
    if !(j0 >= 0.0) {
        return Err(Error::domain(format!("J0 must be ≥ 0, got {j0}")));
    }
    let dist = Uniform::new_inclusive(0.0, w * j0).map_err(|e| Error::domain(e.to_string()))?;
    Ok((0..n_sites).map(|_| dist.sample(rng)).collect())
}

/// One value per line in rad/s; blank lines and `#` comments ignored.
pub fn parse_fields(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::parse(lineno + 1, format!("not a number: '{t}'")))?;
        out.push(v);
    }
    Ok(out)
}

pub fn format_fields(fields: &[f64]) -> String {
    let mut s = String::new();
    for h in fields {
        let _ = writeln!(s, "{}", fmt_f64(*h));
    }
    s
}

pub fn read_fields(path: &Path) -> Result<Vec<f64>> {
    parse_fields(&std::fs::read_to_string(path)?)
}

pub fn write_fields(path: &Path, fields: &[f64]) -> Result<()> {
    std::fs::write(path, format_fields(fields))?;
    Ok(())
}

/// Eigenpairs of one magnetization block.
#[derive(Debug, Clone)]
pub struct SectorEigen {
    pub up: usize,
    /// Basis indices spanning the sector, ascending.
    pub indices: Vec<usize>,
    /// Ascending eigenvalues [rad/s].
    pub energies: DVector<f64>,
    /// Orthonormal eigenvectors as columns, real because every block is real symmetric.
    pub vectors: DMatrix<f64>,
}

impl SectorEigen {
    pub fn dim(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone)]
pub struct SectorSpectrum {
    pub n_sites: usize,
    /// Energy unit used for degeneracy tolerances.
    pub energy_scale: f64,
    /// Ordered by up-spin count.
    pub sectors: Vec<SectorEigen>,
}

impl SectorSpectrum {
    pub fn all_energies(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self
            .sectors
            .iter()
            .flat_map(|s| s.energies.iter().copied())
            .collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

fn sorted_eigen(block: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = block.nrows();
    let eig = block.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (energies, vectors)
}

pub fn sector_eigendecomposition(spec: &HamiltonianSpec) -> Result<SectorSpectrum> {
    spec.validate()?;
    let index = charge_sectors(spec.n_sites)?;
    let sectors = index
        .sectors
        .into_par_iter()
        .map(|sector| {
            let block = spec.sector_block(sector.up, &sector.indices);
            let (energies, vectors) = sorted_eigen(block);
            SectorEigen {
                up: sector.up,
                indices: sector.indices,
                energies,
                vectors,
            }
        })
        .collect();
    Ok(SectorSpectrum {
        n_sites: spec.n_sites,
        energy_scale: spec.energy_scale(),
        sectors,
    })
}
