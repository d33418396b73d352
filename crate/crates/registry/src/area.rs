//! Fixed lat/lon grid used for public area counts.

use std::fmt;

use celltrace_core::GeoCoordinate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cell side in degrees.
pub const CELL_DEGREES: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AreaError {
    #[error("bounding box must be four comma-separated numbers south,west,north,east")]
    Format,
    #[error("bounding box is inverted: south {south} > north {north} or west {west} > east {east}")]
    Inverted {
        south: f64,
        west: f64,
        north: f64,
        east: f64,
    },
    #[error("bounding box corner out of range: {0}")]
    Range(#[from] celltrace_core::geo::GeoError),
}

/// `floor(lat / 0.01), floor(lon / 0.01)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AreaCell {
    pub lat_index: i64,
    pub lon_index: i64,
}

impl AreaCell {
    pub fn of(c: GeoCoordinate) -> Self {
        AreaCell {
            lat_index: index(c.lat()),
            lon_index: index(c.lon()),
        }
    }

    /// South-west corner, in degrees.
    pub fn south_west(&self) -> (f64, f64) {
        (
            self.lat_index as f64 * CELL_DEGREES,
            self.lon_index as f64 * CELL_DEGREES,
        )
    }
}

impl fmt::Display for AreaCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lat_index, self.lon_index)
    }
}

fn index(deg: f64) -> i64 {
    (deg / CELL_DEGREES).floor() as i64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl BoundingBox {
    pub fn new(south: f64, west: f64, north: f64, east: f64) -> Result<Self, AreaError> {
        GeoCoordinate::new(south, west)?;
        GeoCoordinate::new(north, east)?;
        if south > north || west > east {
            return Err(AreaError::Inverted {
                south,
                west,
                north,
                east,
            });
        }
        Ok(BoundingBox {
            south,
            west,
            north,
            east,
        })
    }

    /// Parses `south,west,north,east`.
    pub fn parse(s: &str) -> Result<Self, AreaError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| AreaError::Format)?;
        let [south, west, north, east] = parts[..] else {
            return Err(AreaError::Format);
        };
        BoundingBox::new(south, west, north, east)
    }

    /// True when the cell's extent overlaps the box.
    pub fn intersects(&self, cell: &AreaCell) -> bool {
        (index(self.south)..=index(self.north)).contains(&cell.lat_index)
            && (index(self.west)..=index(self.east)).contains(&cell.lon_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(lat: f64, lon: f64) -> GeoCoordinate {
        GeoCoordinate::new(lat, lon).unwrap()
    }

    #[test]
    fn cells() {
        assert_eq!(
            AreaCell::of(geo(23.8103, 90.4125)),
            AreaCell {
                lat_index: 2381,
                lon_index: 9041
            }
        );
        assert_eq!(
            AreaCell::of(geo(-0.001, -0.001)),
            AreaCell {
                lat_index: -1,
                lon_index: -1
            }
        );
        assert_eq!(
            AreaCell {
                lat_index: 2381,
                lon_index: -5
            }
            .to_string(),
            "2381:-5"
        );
    }

    #[test]
    fn boxes() {
        let b = BoundingBox::parse("23.80,90.40,23.82,90.42").unwrap();
        assert!(b.intersects(&AreaCell::of(geo(23.8103, 90.4125))));
        assert!(!b.intersects(&AreaCell::of(geo(23.9, 90.4125))));
        assert!(matches!(BoundingBox::parse("1,1,0,2"), Err(AreaError::Inverted { .. })));
        assert!(matches!(BoundingBox::parse("1,1,2"), Err(AreaError::Format)));
        assert!(matches!(BoundingBox::parse("a,1,2,3"), Err(AreaError::Format)));
        assert!(matches!(BoundingBox::parse("0,0,91,1"), Err(AreaError::Range(_))));
    }
}
