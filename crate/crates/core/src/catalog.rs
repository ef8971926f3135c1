//! Named maps used by the experiments.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::map::{ProductMap, RationalMap};
use crate::point::ProjectivePoint;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CatalogMap {
    Rational { map: RationalMap },
    Product { map: ProductMap },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub formula: &'static str,
    pub degree: usize,
    pub topological_degree: usize,
    /// Projective dimension of the phase space.
    pub dimension: usize,
    pub default_root: [f64; 2],
    pub map: CatalogMap,
}

impl CatalogEntry {
    pub fn rational(&self) -> Option<&RationalMap> {
        match &self.map {
            CatalogMap::Rational { map } => Some(map),
            CatalogMap::Product { .. } => None,
        }
    }

    pub fn root(&self) -> ProjectivePoint {
        ProjectivePoint::from_affine(Complex64::new(self.default_root[0], self.default_root[1]))
    }
}

const NAMES: [&str; 8] = [
    "power2",
    "power3",
    "power4",
    "chebyshev2",
    "lattes4",
    "quad03i",
    "quadm1",
    "product22",
];

fn rational(name: &'static str, formula: &'static str, map: RationalMap) -> CatalogEntry {
    CatalogEntry {
        name,
        formula,
        degree: map.degree(),
        topological_degree: map.topological_degree(),
        dimension: 1,
        default_root: [3.0, 0.0],
        map: CatalogMap::Rational { map },
    }
}

/// Entry by name.
pub fn lookup(name: &str) -> Result<CatalogEntry> {
    let c = |re, im| Complex64::new(re, im);
    Ok(match name {
        "power2" => rational("power2", "z^2", RationalMap::power(2)?),
        "power3" => rational("power3", "z^3", RationalMap::power(3)?),
        "power4" => rational("power4", "z^4", RationalMap::power(4)?),
        "chebyshev2" => rational("chebyshev2", "z^2 - 2", RationalMap::chebyshev()),
        "lattes4" => rational(
            "lattes4",
            "(z^2 + 1)^2 / (4 z (z^2 - 1))",
            RationalMap::lattes4(),
        ),
        "quad03i" => rational(
            "quad03i",
            "z^2 + 0.3i",
            RationalMap::quadratic(c(0.0, 0.3))?,
        ),
        "quadm1" => rational("quadm1", "z^2 - 1", RationalMap::quadratic(c(-1.0, 0.0))?),
        "product22" => {
            let sq = RationalMap::power(2)?;
            let map = ProductMap::new(sq.clone(), sq)?;
            CatalogEntry {
                name: "product22",
                formula: "(z^2, w^2)",
                degree: 2,
                topological_degree: map.topological_degree(),
                dimension: 2,
                default_root: [3.0, 0.0],
                map: CatalogMap::Product { map },
            }
        }
        other => {
            return Err(LabError::InvalidMap(format!(
                "unknown catalog entry {other:?}; known: {}",
                NAMES.join(", ")
            )))
        }
    })
}

/// All entries in a fixed order.
pub fn catalog_list() -> Vec<CatalogEntry> {
    NAMES
        .iter()
        .map(|n| lookup(n).expect("catalog entries are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_is_stable() {
        let names: Vec<&str> = catalog_list().iter().map(|e| e.name).collect();
        assert_eq!(names, NAMES);
        assert!(names.len() >= 7);
        assert!(lookup("nope").is_err());
    }

    #[test]
    fn degrees() {
        let l = lookup("lattes4").unwrap();
        assert_eq!((l.degree, l.topological_degree), (4, 4));
        let p = lookup("product22").unwrap();
        assert_eq!((p.topological_degree, p.dimension), (4, 2));
        assert!(p.rational().is_none());
    }
}
