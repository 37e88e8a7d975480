//! Aerosol mixing-state diversity metrics and the black-carbon coating
//! volume ratio.

use std::path::Path;

use crate::error::{Error, Result};

/// Per-particle species masses, one row per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePopulation {
    masses: Vec<Vec<f64>>,
    species: usize,
}

impl ParticlePopulation {
    pub fn new(masses: Vec<Vec<f64>>) -> Result<Self> {
        let species = masses.first().map(Vec::len).unwrap_or(0);
        if masses.is_empty() || species == 0 {
            return Err(Error::Domain("population needs at least one particle and one species".into()));
        }
        for (i, row) in masses.iter().enumerate() {
            if row.len() != species {
                return Err(Error::Domain(format!(
                    "particle {i} has {} species, expected {species}",
                    row.len()
                )));
            }
            if let Some(m) = row.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
                return Err(Error::Domain(format!("particle {i} has invalid mass {m}")));
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Domain(format!("particle {i} has zero total mass")));
            }
        }
        Ok(ParticlePopulation { masses, species })
    }

    pub fn masses(&self) -> &[Vec<f64>] {
        &self.masses
    }

    pub fn num_particles(&self) -> usize {
        self.masses.len()
    }

    pub fn num_species(&self) -> usize {
        self.species
    }

    /// Merge species columns: output column `k` is the sum of the input
    /// columns listed in `groups[k]`. Every input column must appear in
    /// exactly one group.
    pub fn merge_species(&self, groups: &[Vec<usize>]) -> Result<Self> {
        let mut seen = vec![false; self.species];
        for &c in groups.iter().flatten() {
            if c >= self.species || std::mem::replace(&mut seen[c], true) {
                return Err(Error::Domain(format!("species column {c} is out of range or grouped twice")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Domain("every species column must belong to a group".into()));
        }
        let masses = self
            .masses
            .iter()
            .map(|row| groups.iter().map(|g| g.iter().map(|&c| row[c]).sum()).collect())
            .collect();
        ParticlePopulation::new(masses)
    }

    /// One particle per row, one column per species mass, header row of
    /// species names.
    pub fn from_csv(path: &Path) -> Result<(Vec<String>, Self)> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let row = rec
                .iter()
                .map(|cell| parse_mass(cell, i + 2))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Data(format!("{} contains no particles", path.display())));
        }
        Ok((header, ParticlePopulation::new(rows)?))
    }
}

/// Paired particle and core diameters from a CSV with `dp` and `dc` columns.
pub fn read_diameters(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let (ip, ic) = (col("dp")?, col("dc")?);
    let (mut dp, mut dc) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        dp.push(parse_mass(&rec[ip], i + 2)?);
        dc.push(parse_mass(&rec[ic], i + 2)?);
    }
    Ok((dp, dc))
}

fn parse_mass(cell: &str, line: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse `{cell}` as a number")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {line}: non-finite value `{cell}`")));
    }
    Ok(v)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Species groupings for the two mixing-state indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeciesGrouping {
    /// Every species counted separately.
    Abundance,
    /// Absorbing species (column `absorbing`) versus everything else merged.
    Optical { absorbing: usize },
}

impl SpeciesGrouping {
    pub fn groups(self, species: usize) -> Result<Vec<Vec<usize>>> {
        match self {
            SpeciesGrouping::Abundance => Ok((0..species).map(|c| vec![c]).collect()),
            SpeciesGrouping::Optical { absorbing } if absorbing < species => {
                let rest: Vec<usize> = (0..species).filter(|&c| c != absorbing).collect();
                Ok(if rest.is_empty() {
                    vec![vec![absorbing]]
                } else {
                    vec![vec![absorbing], rest]
                })
            }
            SpeciesGrouping::Optical { absorbing } => Err(Error::Domain(format!(
                "absorbing column {absorbing} out of range for {species} species"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiResult {
    pub chi: f64,
    pub d_alpha: f64,
    pub d_gamma: f64,
    pub h_alpha: f64,
    pub h_gamma: f64,
    pub per_particle_h: Vec<f64>,
    /// Set when the bulk holds a single effective species (D_gamma = 1);
    /// chi is then reported as 1.
    pub degenerate: bool,
}

/// Shannon entropy of a composition given as non-negative weights, with
/// 0 ln 0 = 0.
fn entropy(weights: impl Iterator<Item = f64> + Clone) -> f64 {
    let total: f64 = weights.clone().sum();
    -weights
        .filter(|&w| w > 0.0)
        .map(|w| {
            let p = w / total;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn mixing_state_index(pop: &ParticlePopulation) -> ChiResult {
    let masses = pop.masses();
    let per_particle_h: Vec<f64> = masses.iter().map(|row| entropy(row.iter().copied())).collect();
    let particle_mass: Vec<f64> = masses.iter().map(|row| row.iter().sum()).collect();
    let total: f64 = particle_mass.iter().sum();
    let h_alpha = per_particle_h
        .iter()
        .zip(&particle_mass)
        .map(|(h, m)| h * m / total)
        .sum::<f64>();
    let bulk: Vec<f64> = (0..pop.num_species())
        .map(|a| masses.iter().map(|row| row[a]).sum())
        .collect();
    let h_gamma = entropy(bulk.iter().copied());
    let d_alpha = h_alpha.exp();
    let d_gamma = h_gamma.exp();
    // a single-species bulk gives H_gamma exactly 0 (only p = 1 contributes)
    let degenerate = h_gamma <= 0.0;
    let chi = if degenerate {
        1.0
    } else {
        ((d_alpha - 1.0) / (d_gamma - 1.0)).clamp(0.0, 1.0)
    };
    ChiResult {
        chi,
        d_alpha,
        d_gamma,
        h_alpha,
        h_gamma,
        per_particle_h,
        degenerate,
    }
}

/// Population coating volume ratio: sum Dp^3 / sum Dc^3 - 1.
pub fn coating_volume_ratio(dp: &[f64], dc: &[f64]) -> Result<f64> {
    if dp.len() != dc.len() || dp.is_empty() {
        return Err(Error::Domain(format!(
            "diameter lists must have equal non-zero length, got {} and {}",
            dp.len(),
            dc.len()
        )));
    }
    for (i, (&p, &c)) in dp.iter().zip(dc).enumerate() {
        if !(c > 0.0) || !p.is_finite() || !c.is_finite() {
            return Err(Error::Domain(format!("particle {i}: diameters must be positive and finite")));
        }
        if p < c {
            return Err(Error::Domain(format!(
                "particle {i}: coated diameter {p} is smaller than core diameter {c}"
            )));
        }
    }
    let cube = |v: &[f64]| v.iter().map(|d| d * d * d).sum::<f64>();
    Ok(cube(dp) / cube(dc) - 1.0)
}
