//! Diagonal ensemble of a quench and the Frobenius distance to it.
//!
//! Within each charge sector the ensemble is V B Vᵀ, where B is block
//! diagonal over groups of (numerically) degenerate eigenvalues with blocks
//! c_G c_G†. Projecting onto eigenspaces rather than individual eigenvectors
//! keeps the result independent of the basis chosen inside a degenerate
//! eigenspace.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use crate::dynamics::SpectralExpansion;
use crate::error::{Error, Result};
use crate::hamiltonian::SectorSpectrum;
use crate::numfmt::fmt_f64;
use crate::spin::density::purity_matrix;
use crate::spin::{PureState, SiteSet, SubsystemDensity};
use crate::{CMatrix, C64};

/// Relative degeneracy tolerance, multiplied by energy scale and chain length.
pub const DEGENERACY_RTOL: f64 = 1e-9;

/// Split ascending energies into runs whose neighbouring gaps are ≤ `tol`.
pub fn degenerate_groups(energies: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=energies.len() {
        if k == energies.len() || energies[k] - energies[k - 1] > tol {
            if k > start {
                groups.push(start..k);
            }
            start = k;
        }
    }
    groups
}

#[derive(Debug, Clone)]
struct SectorBlock {
    indices: Vec<usize>,
    matrix: CMatrix,
}

/// Full-chain diagonal ensemble stored as one dense block per charge sector.
#[derive(Debug, Clone)]
pub struct DiagonalEnsemble {
    n_sites: usize,
    blocks: Vec<SectorBlock>,
}

impl DiagonalEnsemble {
    pub fn new(spectrum: &SectorSpectrum, psi0: &PureState) -> Result<Self> {
        let expansion = SpectralExpansion::new(spectrum, psi0)?;
        let tol = DEGENERACY_RTOL * spectrum.energy_scale * spectrum.n_sites as f64;
        let blocks = spectrum
            .sectors
            .par_iter()
            .zip(expansion.coefficients().par_iter())
            .filter(|(_, c)| c.norm_squared() > 0.0)
            .map(|(sec, c)| {
                let d = sec.dim();
                let energies: Vec<f64> = sec.energies.iter().copied().collect();
                let mut b_re = DMatrix::<f64>::zeros(d, d);
                let mut b_im = DMatrix::<f64>::zeros(d, d);
                for g in degenerate_groups(&energies, tol) {
                    for i in g.clone() {
                        for j in g.clone() {
                            let z = c[i] * c[j].conj();
                            b_re[(i, j)] = z.re;
                            b_im[(i, j)] = z.im;
                        }
                    }
                }
                let v = &sec.vectors;
                let re = v * b_re * v.transpose();
                let matrix = if b_im.iter().any(|&x| x != 0.0) {
                    let im = v * b_im * v.transpose();
                    re.zip_map(&im, C64::new)
                } else {
                    re.map(|x| C64::new(x, 0.0))
                };
                SectorBlock {
                    indices: sec.indices.clone(),
                    matrix,
                }
            })
            .collect();
        Ok(Self {
            n_sites: spectrum.n_sites,
            blocks,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.matrix.trace().re).sum()
    }

    /// Dense full-chain matrix; only sensible for small chains.
    pub fn full_matrix(&self) -> CMatrix {
        let d = crate::spin::basis::dim(self.n_sites);
        let mut m = CMatrix::zeros(d, d);
        for b in &self.blocks {
            for (p, &i) in b.indices.iter().enumerate() {
                for (q, &j) in b.indices.iter().enumerate() {
                    m[(i, j)] = b.matrix[(p, q)];
                }
            }
        }
        m
    }

    /// ρ_A^DE
    pub fn subsystem(&self, sites: &SiteSet) -> Result<SubsystemDensity> {
        if sites.n_sites() != self.n_sites {
            return Err(Error::domain("subsystem does not match ensemble size"));
        }
        let da = sites.dim();
        let mut out = CMatrix::zeros(da, da);
        for b in &self.blocks {
            // entries only survive the partial trace when environments agree
            let mut by_env: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
            for (p, &idx) in b.indices.iter().enumerate() {
                let (a, e) = sites.split_index(idx);
                by_env.entry(e).or_default().push((p, a));
            }
            for members in by_env.values() {
                for &(p, a) in members {
                    for &(q, a2) in members {
                        out[(a, a2)] += b.matrix[(p, q)];
                    }
                }
            }
        }
        Ok(SubsystemDensity::from_parts(sites.clone(), out))
    }
}

/// ρ_A^DE for one subsystem.
pub fn diagonal_ensemble(
    spectrum: &SectorSpectrum,
    psi0: &PureState,
    sites: &SiteSet,
) -> Result<SubsystemDensity> {
    DiagonalEnsemble::new(spectrum, psi0)?.subsystem(sites)
}

/// √(1 − clamp(2 Tr ρσ / (Tr ρ² + Tr σ²), 0, 1))
pub fn frobenius_distance_matrices(rho: &CMatrix, sigma: &CMatrix) -> f64 {
    let cross = rho.dotc(sigma).re;
    let denom = purity_matrix(rho) + purity_matrix(sigma);
    if !(denom > 0.0) {
        return 0.0;
    }
    let ratio = (2.0 * cross / denom).clamp(0.0, 1.0);
    (1.0 - ratio).sqrt()
}

pub fn exact_frobenius(rho_a: &SubsystemDensity, rho_de: &SubsystemDensity) -> Result<f64> {
    if rho_a.matrix().shape() != rho_de.matrix().shape() {
        return Err(Error::domain("states have different dimensions"));
    }
    Ok(frobenius_distance_matrices(rho_a.matrix(), rho_de.matrix()))
}

pub const MATRIX_FORMAT: &str = "dm-1";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixHeader {
    format: String,
    n_sites: usize,
    sites: String,
    dim: usize,
    #[serde(rename = "description")]
    _description: String,
}

/// dm-1: a JSON header line, then one line per row with the 2·dim reals of
/// that row (re/im interleaved).
pub fn write_matrix<W: Write>(rho: &SubsystemDensity, description: &str, mut w: W) -> Result<()> {
    let d = rho.matrix().nrows();
    writeln!(
        w,
        "{{\"format\":\"{MATRIX_FORMAT}\",\"n_sites\":{},\"sites\":\"{}\",\"dim\":{d},\"description\":{}}}",
        rho.sites().n_sites(),
        rho.sites().label(),
        serde_json::to_string(description).expect("string serialization cannot fail"),
    )?;
    for i in 0..d {
        let row: Vec<String> = (0..d)
            .flat_map(|j| {
                let z = rho.matrix()[(i, j)];
                [fmt_f64(z.re), fmt_f64(z.im)]
            })
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(r: R) -> Result<SubsystemDensity> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty matrix file"))??;
    let h: MatrixHeader =
        serde_json::from_str(&first).map_err(|e| Error::parse(1, e.to_string()))?;
    if h.format != MATRIX_FORMAT {
        return Err(Error::parse(
            1,
            format!("unsupported format {:?}", h.format),
        ));
    }
    let sites =
        SiteSet::parse_label(h.n_sites, &h.sites).map_err(|e| Error::parse(1, e.to_string()))?;
    if sites.dim() != h.dim {
        return Err(Error::parse(1, "dim does not match site set"));
    }
    let d = h.dim;
    let mut m = CMatrix::zeros(d, d);
    let mut row = 0;
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        if row >= d {
            return Err(Error::parse(lineno, "too many rows"));
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("bad number {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 2 * d {
            return Err(Error::parse(
                lineno,
                format!("expected {} reals, found {}", 2 * d, vals.len()),
            ));
        }
        for j in 0..d {
            m[(row, j)] = C64::new(vals[2 * j], vals[2 * j + 1]);
        }
        row += 1;
    }
    if row != d {
        return Err(Error::parse(
            row + 2,
            format!("expected {d} rows, found {row}"),
        ));
    }
    SubsystemDensity::new(sites, m)
}

pub fn save_matrix(rho: &SubsystemDensity, description: &str, path: &Path) -> Result<()> {
    write_matrix(
        rho,
        description,
        std::io::BufWriter::new(std::fs::File::create(path)?),
    )
}

pub fn load_matrix(path: &Path) -> Result<SubsystemDensity> {
    read_matrix(std::fs::File::open(path)?)
}
