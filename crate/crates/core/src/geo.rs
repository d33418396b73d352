//! Coordinate types, distance functions and time bucketing.
//!
//! Two coordinate systems are kept apart on purpose: [`PlanarPoint`] lives in
//! the simulation plane (1.0 = 100 m) and [`GeoCoordinate`] is a WGS84-style
//! latitude/longitude pair. There is no implicit conversion between them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius of the spherical model, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default width of a time bucket, in seconds.
pub const DEFAULT_BUCKET_WIDTH: i64 = 300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("coordinate is not finite")]
    NonFinite,
    #[error("bucket width must be positive, got {0}")]
    BucketWidth(i64),
}

/// A point in the scaled simulation plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const ORIGIN: PlanarPoint = PlanarPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    pub fn try_new(x: f64, y: f64) -> Result<Self, GeoError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(GeoError::NonFinite);
        }
        Ok(PlanarPoint { x, y })
    }

    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

/// Latitude/longitude in degrees. Ranges are checked on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoCoordinate {
    lat: f64,
    lon: f64,
}

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::Longitude(lon));
        }
        Ok(GeoCoordinate { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Unit vector on the sphere, scaled to meters.
    pub(crate) fn to_ecef(self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [
            EARTH_RADIUS_M * lat.cos() * lon.cos(),
            EARTH_RADIUS_M * lat.cos() * lon.sin(),
            EARTH_RADIUS_M * lat.sin(),
        ]
    }
}

impl<'de> Deserialize<'de> for GeoCoordinate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lat: f64,
            lon: f64,
        }
        let raw = Raw::deserialize(d)?;
        GeoCoordinate::new(raw.lat, raw.lon).map_err(serde::de::Error::custom)
    }
}

/// A fixed-width time window, `index = floor(epoch_seconds / width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeBucket {
    pub index: i64,
    pub width: i64,
}

pub fn euclidean_distance(a: PlanarPoint, b: PlanarPoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
// Kept out of line: an inlined copy can be optimised into code that differs
// in the last bit, and the grid join must agree exactly with the reference.
#[inline(never)]
pub fn haversine_distance(a: GeoCoordinate, b: GeoCoordinate) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let (sl, so) = ((dlat / 2.0).sin(), (dlon / 2.0).sin());
    let h = sl * sl + lat1.cos() * lat2.cos() * so * so;
    // clamp guards asin against rounding just above 1 for antipodal points
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

pub fn time_bucket(timestamp: i64, width: i64) -> Result<TimeBucket, GeoError> {
    if width <= 0 {
        return Err(GeoError::BucketWidth(width));
    }
    Ok(TimeBucket {
        index: timestamp.div_euclid(width),
        width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geo(lat: f64, lon: f64) -> GeoCoordinate {
        GeoCoordinate::new(lat, lon).unwrap()
    }

    #[test]
    fn euclidean_examples() {
        let o = PlanarPoint::ORIGIN;
        assert_eq!(euclidean_distance(o, o), 0.0);
        assert_eq!(euclidean_distance(o, PlanarPoint::new(3.0, 4.0)), 5.0);
        let d = euclidean_distance(PlanarPoint::new(0.01, 0.0), PlanarPoint::new(0.04, 0.0));
        assert!((d - 0.03).abs() < 1e-15);
    }

    #[test]
    fn haversine_examples() {
        assert_eq!(haversine_distance(geo(0.0, 0.0), geo(0.0, 0.0)), 0.0);
        let meridian = haversine_distance(geo(0.0, 0.0), geo(1.0, 0.0));
        assert!((meridian - 111_194.9).abs() < 0.1, "{meridian}");
        // Warsaw -> Rome; reference value from a 40-digit evaluation of the
        // haversine formula with R = 6371 km.
        let wr = haversine_distance(geo(52.2296, 21.0122), geo(41.8919, 12.5113));
        assert!((wr - 1_315_506.103).abs() < 1.0, "{wr}");
    }

    #[test]
    fn coordinate_ranges() {
        assert_eq!(GeoCoordinate::new(91.0, 0.0), Err(GeoError::Latitude(91.0)));
        assert_eq!(GeoCoordinate::new(0.0, -180.5), Err(GeoError::Longitude(-180.5)));
        assert_eq!(GeoCoordinate::new(f64::NAN, 0.0), Err(GeoError::NonFinite));
        assert!(serde_json::from_str::<GeoCoordinate>(r#"{"lat":95,"lon":0}"#).is_err());
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(time_bucket(0, 300).unwrap().index, 0);
        assert_eq!(time_bucket(299, 300).unwrap().index, 0);
        assert_eq!(time_bucket(300, 300).unwrap().index, 1);
        assert_eq!(time_bucket(-1, 300).unwrap().index, -1);
        assert_eq!(time_bucket(10, 0), Err(GeoError::BucketWidth(0)));
        assert_eq!(time_bucket(10, -5), Err(GeoError::BucketWidth(-5)));
    }

    fn planar() -> impl Strategy<Value = PlanarPoint> {
        (-1e3..1e3f64, -1e3..1e3f64).prop_map(|(x, y)| PlanarPoint::new(x, y))
    }

    fn coord() -> impl Strategy<Value = GeoCoordinate> {
        (-90.0..=90.0f64, -180.0..=180.0f64).prop_map(|(a, o)| geo(a, o))
    }

    proptest! {
        #[test]
        fn euclidean_metric(a in planar(), b in planar(), c in planar()) {
            let ab = euclidean_distance(a, b);
            prop_assert_eq!(ab, euclidean_distance(b, a));
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(euclidean_distance(a, a), 0.0);
            let slack = 1e-9 * (1.0 + ab);
            prop_assert!(euclidean_distance(a, c) <= ab + euclidean_distance(b, c) + slack);
        }

        #[test]
        fn haversine_symmetric(a in coord(), b in coord()) {
            let ab = haversine_distance(a, b);
            prop_assert!((ab - haversine_distance(b, a)).abs() < 1e-6);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(haversine_distance(a, a), 0.0);
        }

        #[test]
        fn bucket_monotone(t1 in -1_000_000i64..1_000_000, dt in 0i64..100_000, w in 1i64..5_000) {
            let a = time_bucket(t1, w).unwrap();
            let b = time_bucket(t1 + dt, w).unwrap();
            prop_assert!(a.index <= b.index);
        }
    }
}
