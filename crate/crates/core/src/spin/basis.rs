//! Computational-basis bookkeeping.
//!
//! Site `i` (0-based here, 1-based in every file format) is stored in bit
//! `n_sites - 1 - i` of the basis index, so site 0 is the most significant
//! bit. Bit value 0 is spin up (σ_z = +1), bit value 1 is spin down.

use std::fmt;

use crate::error::{Error, Result};

pub const MAX_SITES: usize = 16;

#[inline]
pub fn dim(n_sites: usize) -> usize {
    1usize << n_sites
}

/// Bit of `site` inside a basis index of an `n_sites` register.
#[inline]
pub fn site_bit(index: usize, site: usize, n_sites: usize) -> usize {
    (index >> (n_sites - 1 - site)) & 1
}

/// Number of up spins (zero bits).
#[inline]
pub fn up_count(index: usize, n_sites: usize) -> usize {
    n_sites - index.count_ones() as usize
}

/// Eigenvalue of Q = ½ Σ σ_z on a basis state.
#[inline]
pub fn charge(index: usize, n_sites: usize) -> f64 {
    (n_sites as f64 - 2.0 * index.count_ones() as f64) / 2.0
}

pub fn index_to_bits(index: usize, n_sites: usize) -> Vec<u8> {
    (0..n_sites)
        .map(|i| site_bit(index, i, n_sites) as u8)
        .collect()
}

pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter()
        .fold(0usize, |acc, &b| (acc << 1) | (b as usize & 1))
}

/// One magnetization sector: basis states with `up` spins pointing up.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSector {
    pub up: usize,
    pub charge: f64,
    /// Basis indices in ascending order.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSectorIndex {
    pub n_sites: usize,
    /// Ordered by increasing up-spin count.
    pub sectors: Vec<ChargeSector>,
}

impl ChargeSectorIndex {
    pub fn sizes(&self) -> Vec<usize> {
        self.sectors.iter().map(|s| s.indices.len()).collect()
    }

    /// Position of every basis index inside its own sector.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; dim(self.n_sites)];
        for sector in &self.sectors {
            for (p, &idx) in sector.indices.iter().enumerate() {
                pos[idx] = p;
            }
        }
        pos
    }
}

pub fn charge_sectors(n_sites: usize) -> Result<ChargeSectorIndex> {
    if n_sites == 0 || n_sites > MAX_SITES {
        return Err(Error::domain(format!(
            "charge_sectors: n_sites must be in 1..={MAX_SITES}, got {n_sites}"
        )));
    }
    let mut sectors: Vec<ChargeSector> = (0..=n_sites)
        .map(|up| ChargeSector {
            up,
            charge: up as f64 - n_sites as f64 / 2.0,
            indices: Vec::new(),
        })
        .collect();
    for idx in 0..dim(n_sites) {
        sectors[up_count(idx, n_sites)].indices.push(idx);
    }
    Ok(ChargeSectorIndex { n_sites, sectors })
}

/// A sorted, duplicate-free set of sites inside an `n_sites` chain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteSet {
    n_sites: usize,
    sites: Vec<usize>,
}

impl SiteSet {
    /// `sites` are 0-based and must be strictly increasing.
    pub fn new(n_sites: usize, sites: Vec<usize>) -> Result<Self> {
        if n_sites == 0 || n_sites > MAX_SITES {
            return Err(Error::domain(format!("n_sites {n_sites} out of range")));
        }
        if sites.is_empty() {
            return Err(Error::domain("empty site set"));
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain(format!(
                "sites must be strictly increasing (no duplicates): {sites:?}"
            )));
        }
        if let Some(&s) = sites.iter().find(|&&s| s >= n_sites) {
            return Err(Error::domain(format!(
                "site {s} out of range for {n_sites} sites"
            )));
        }
        Ok(Self { n_sites, sites })
    }

    /// Build from 1-based labels as they appear in config and data files.
    pub fn from_one_based(n_sites: usize, sites: &[usize]) -> Result<Self> {
        if sites.contains(&0) {
            return Err(Error::domain("site labels are 1-based"));
        }
        Self::new(n_sites, sites.iter().map(|s| s - 1).collect())
    }

    pub fn all(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, (0..n_sites).collect())
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dim(&self) -> usize {
        dim(self.sites.len())
    }

    /// Complementary sites, in increasing order.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.n_sites)
            .filter(|s| self.sites.binary_search(s).is_err())
            .collect()
    }

    /// Split a full basis index into (subsystem index, environment index),
    /// both using the site-0-is-MSB convention on their own registers.
    pub fn split_index(&self, index: usize) -> (usize, usize) {
        let mut a = 0;
        let mut e = 0;
        let mut ai = 0;
        for site in 0..self.n_sites {
            let bit = site_bit(index, site, self.n_sites);
            if ai < self.sites.len() && self.sites[ai] == site {
                a = (a << 1) | bit;
                ai += 1;
            } else {
                e = (e << 1) | bit;
            }
        }
        (a, e)
    }

    /// `1-2-3-4` style label with 1-based sites.
    pub fn label(&self) -> String {
        self.sites
            .iter()
            .map(|s| (s + 1).to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn parse_label(n_sites: usize, label: &str) -> Result<Self> {
        let sites = label
            .split('-')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::domain(format!("bad site label '{label}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_one_based(n_sites, &sites)
    }
}

impl fmt::Display for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.label().replace('-', ","))
    }
}
