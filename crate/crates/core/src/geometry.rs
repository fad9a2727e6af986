//! Points on the sphere, central angles and area-uniform sampling.
//!
//! All angles are radians. Longitudes live in the half-open range `[-pi, pi)`,
//! latitudes in the closed range `[-pi/2, pi/2]`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LAT_TOLERANCE: f64 = 1e-12;

/// A point on the sphere given by longitude and latitude in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    lon: f64,
    lat: f64,
}

impl SphericalPoint {
    /// Builds a point, wrapping `lon` into `[-pi, pi)`.
    ///
    /// Latitudes further than `1e-12` outside `[-pi/2, pi/2]` are rejected.
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() {
            return Err(Error::NonFiniteCoordinate(lon));
        }
        if !lat.is_finite() {
            return Err(Error::NonFiniteCoordinate(lat));
        }
        if lat.abs() > FRAC_PI_2 + LAT_TOLERANCE {
            return Err(Error::LatOutOfRange { lat, row: None });
        }
        Ok(Self {
            lon: normalize_lon(lon),
            lat: lat.clamp(-FRAC_PI_2, FRAC_PI_2),
        })
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    /// Unit vector `(cos lat cos lon, cos lat sin lon, sin lat)`.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (sin_lat, cos_lat) = self.lat.sin_cos();
        let (sin_lon, cos_lon) = self.lon.sin_cos();
        [cos_lat * cos_lon, cos_lat * sin_lon, sin_lat]
    }

    /// Inverse of [`to_unit_vector`](Self::to_unit_vector); the input need not be normalized.
    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = (v[2] / norm).clamp(-1.0, 1.0);
        Self {
            lon: normalize_lon(v[1].atan2(v[0])),
            lat: z.asin(),
        }
    }
}

/// Shorthand for [`SphericalPoint::new`].
pub fn make_point(lon_rad: f64, lat_rad: f64) -> Result<SphericalPoint> {
    SphericalPoint::new(lon_rad, lat_rad)
}

fn normalize_lon(lon: f64) -> f64 {
    if (-PI..PI).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to TAU
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Central angle between two points by the spherical law of cosines.
pub fn central_angle(p1: &SphericalPoint, p2: &SphericalPoint) -> f64 {
    let cos_angle = p1.lat.sin() * p2.lat.sin()
        + p1.lat.cos() * p2.lat.cos() * (p1.lon - p2.lon).cos();
    cos_angle.clamp(-1.0, 1.0).acos()
}

/// Great-circle distance `radius * central_angle(p1, p2)`.
pub fn great_circle_distance(p1: &SphericalPoint, p2: &SphericalPoint, radius: f64) -> Result<f64> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::NonPositiveRadius(radius));
    }
    Ok(radius * central_angle(p1, p2))
}

/// Draws `n` points uniformly by area: `lon = 2 pi u - pi`, `lat = asin(2v - 1)`.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<SphericalPoint> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            SphericalPoint {
                lon: normalize_lon(TAU * u - PI),
                lat: (2.0 * v - 1.0).clamp(-1.0, 1.0).asin(),
            }
        })
        .collect()
}
