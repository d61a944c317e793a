//! Geographic coordinates and great-circle distance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for every distance computation in this crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinateError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside (-180, 180]")]
    Longitude(f64),
}

/// A WGS84 position in decimal degrees.
///
/// Latitude lies in `[-90, 90]` and longitude in `(-180, 180]`. The half-open
/// longitude range gives the antimeridian a single representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoordinate", into = "RawCoordinate")]
pub struct Coordinate {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawCoordinate {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawCoordinate> for Coordinate {
    type Error = CoordinateError;
    fn try_from(raw: RawCoordinate) -> Result<Self, Self::Error> {
        Coordinate::new(raw.lat, raw.lon)
    }
}

impl From<Coordinate> for RawCoordinate {
    fn from(c: Coordinate) -> Self {
        RawCoordinate { lat: c.lat, lon: c.lon }
    }
}

impl Coordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, CoordinateError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(CoordinateError::Latitude(lat));
        }
        if !(lon > -180.0 && lon <= 180.0) {
            return Err(CoordinateError::Longitude(lon));
        }
        Ok(Coordinate { lat, lon })
    }

    /// Like [`Coordinate::new`], but maps a longitude of exactly -180 onto
    /// +180. Knowledge bases emit both spellings of the antimeridian.
    pub fn normalized(lat: f64, lon: f64) -> Result<Self, CoordinateError> {
        if lon == -180.0 {
            Coordinate::new(lat, 180.0)
        } else {
            Coordinate::new(lat, lon)
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in kilometres using the haversine formula.
///
/// ```
/// use xmc_core::geo::{haversine_km, Coordinate};
///
/// let hannover = Coordinate::new(52.37, 9.73).unwrap();
/// let berlin = Coordinate::new(52.52, 13.40).unwrap();
/// let d = haversine_km(hannover, berlin);
/// assert!((d - 249.0).abs() < 1.0);
/// ```
pub fn haversine_km(a: Coordinate, b: Coordinate) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    // h can drift a hair above 1 for antipodes.
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(lat: f64, lon: f64) -> Coordinate {
        Coordinate::new(lat, lon).unwrap()
    }

    #[test]
    fn same_point_is_zero() {
        assert_eq!(haversine_km(c(52.37, 9.73), c(52.37, 9.73)), 0.0);
    }

    #[test]
    fn antipodes_are_half_circumference() {
        let d = haversine_km(c(0.0, 0.0), c(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((d - 20015.1).abs() < 0.1);
        let d = haversine_km(c(90.0, 0.0), c(-90.0, 0.0));
        assert!((d - 20015.1).abs() < 0.1);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Coordinate::new(90.1, 0.0).is_err());
        assert!(Coordinate::new(-90.1, 0.0).is_err());
        assert!(Coordinate::new(0.0, -180.0).is_err());
        assert!(Coordinate::new(0.0, 180.0).is_ok());
        assert!(Coordinate::new(f64::NAN, 0.0).is_err());
        assert_eq!(Coordinate::normalized(1.0, -180.0).unwrap().lon(), 180.0);
    }

    #[test]
    fn deserialize_validates() {
        let ok: Coordinate = serde_json::from_str(r#"{"lat":1.5,"lon":2.5}"#).unwrap();
        assert_eq!(ok, c(1.5, 2.5));
        assert!(serde_json::from_str::<Coordinate>(r#"{"lat":100,"lon":0}"#).is_err());
    }

    fn coord() -> impl Strategy<Value = Coordinate> {
        (-90.0f64..=90.0, -179.999f64..=180.0).prop_map(|(lat, lon)| c(lat, lon))
    }

    proptest! {
        #[test]
        fn symmetric_and_non_negative(a in coord(), b in coord()) {
            let ab = haversine_km(a, b);
            let ba = haversine_km(b, a);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ab <= std::f64::consts::PI * EARTH_RADIUS_KM + 1e-9);
        }

        #[test]
        fn triangle_inequality(a in coord(), b in coord(), m in coord()) {
            prop_assert!(haversine_km(a, b) <= haversine_km(a, m) + haversine_km(m, b) + 1e-6);
        }
    }
}
