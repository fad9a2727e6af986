//! Deterministic multi-scale position encoders.
//!
//! Each trigonometric encoder divides the raw angles by a geometric ladder of
//! scale factors `f_s = r_min * (r_max / r_min)^(s / (S - 1))` and lays out the
//! resulting features scale-major, lowest `s` first. The term order inside one
//! scale block is fixed (see [`Variant`]) so that concatenations and stored
//! checkpoints stay bit-exact.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{central_angle, SphericalPoint};

/// Encoder family.
///
/// Per-scale layouts, with `lat_s = lat / f_s` and `lon_s = lon / f_s`:
///
/// * `SphereC`: `[sin lat_s, cos lat_s cos lon_s, cos lat_s sin lon_s]`
/// * `SphereM`: `[sin lat_s, cos lat_s cos lon, cos lat cos lon_s, cos lat_s sin lon, cos lat sin lon_s]`
/// * `Grid`: `[sin lat_s, cos lat_s, sin lon_s, cos lon_s]`
/// * `SphereCPlus` / `SphereMPlus`: the full `SphereC` / `SphereM` vector followed by the
///   `Grid` terms it does not already contain, i.e. `[cos lat_s, sin lon_s, cos lon_s]` per scale
/// * `SphereDfs`: all latitude singles, then all longitude singles, then the
///   four products `cos*cos, cos*sin, sin*cos, sin*sin` for every `(n, m)` with `n` outer
/// * `Wrap`: `Grid` with a single unscaled level
/// * `Rbf`: Gaussian kernel of the central angle to each anchor
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "sphereC")]
    SphereC,
    #[serde(rename = "sphereCplus", alias = "sphereC+")]
    SphereCPlus,
    #[serde(rename = "sphereM")]
    SphereM,
    #[serde(rename = "sphereMplus", alias = "sphereM+")]
    SphereMPlus,
    #[serde(rename = "sphereDFS")]
    SphereDfs,
    #[serde(rename = "grid")]
    Grid,
    #[serde(rename = "wrap")]
    Wrap,
    #[serde(rename = "rbf")]
    Rbf,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::SphereC,
        Variant::SphereCPlus,
        Variant::SphereM,
        Variant::SphereMPlus,
        Variant::SphereDfs,
        Variant::Grid,
        Variant::Wrap,
        Variant::Rbf,
    ];

    /// The five spherical variants.
    pub const SPHERE2VEC: [Variant; 5] = [
        Variant::SphereC,
        Variant::SphereCPlus,
        Variant::SphereM,
        Variant::SphereMPlus,
        Variant::SphereDfs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SphereC => "sphereC",
            Variant::SphereCPlus => "sphereCplus",
            Variant::SphereM => "sphereM",
            Variant::SphereMPlus => "sphereMplus",
            Variant::SphereDfs => "sphereDFS",
            Variant::Grid => "grid",
            Variant::Wrap => "wrap",
            Variant::Rbf => "rbf",
        }
    }

    pub fn is_trigonometric(self) -> bool {
        self != Variant::Rbf
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphereC" => Ok(Variant::SphereC),
            "sphereCplus" | "sphereC+" => Ok(Variant::SphereCPlus),
            "sphereM" => Ok(Variant::SphereM),
            "sphereMplus" | "sphereM+" => Ok(Variant::SphereMPlus),
            "sphereDFS" => Ok(Variant::SphereDfs),
            "grid" => Ok(Variant::Grid),
            "wrap" => Ok(Variant::Wrap),
            "rbf" => Ok(Variant::Rbf),
            other => Err(Error::InvalidSpec(format!("unknown variant {other:?}"))),
        }
    }
}

/// Anchors and kernel width of the `rbf` baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfState {
    anchors: Vec<SphericalPoint>,
    sigma: f64,
}

impl RbfState {
    pub fn new(anchors: Vec<SphericalPoint>, sigma: f64) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::InvalidSpec("rbf needs at least one anchor".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("rbf sigma must be positive, got {sigma}")));
        }
        Ok(Self { anchors, sigma })
    }

    /// Draws `m` anchors uniformly at random from `points`, without replacement
    /// when `m <= points.len()`.
    pub fn from_points<R: Rng + ?Sized>(
        points: &[SphericalPoint],
        m: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let anchors = if m <= points.len() {
            index::sample(rng, points.len(), m)
                .into_iter()
                .map(|i| points[i])
                .collect()
        } else {
            (0..m)
                .map(|_| points[rng.random_range(0..points.len())])
                .collect()
        };
        Self::new(anchors, sigma)
    }

    pub fn anchors(&self) -> &[SphericalPoint] {
        &self.anchors
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Deserialize)]
struct RawSpec {
    variant: Variant,
    scales: usize,
    r_min: f64,
    #[serde(default = "default_r_max")]
    r_max: f64,
    #[serde(default)]
    rbf: Option<RbfState>,
}

fn default_r_max() -> f64 {
    1.0
}

/// Encoder variant plus its scale parameters.
///
/// Serializes as `{"variant", "scales", "r_min", "r_max"}`, with an extra
/// `"rbf"` object carrying anchors and `sigma` for the `rbf` variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct EncoderSpec {
    variant: Variant,
    scales: usize,
    r_min: f64,
    r_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rbf: Option<RbfState>,
}

impl TryFrom<RawSpec> for EncoderSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let spec = if raw.variant == Variant::Rbf {
            let rbf = raw
                .rbf
                .ok_or_else(|| Error::InvalidSpec("rbf variant requires rbf state".into()))?;
            Self::rbf(rbf)
        } else {
            Self::new(raw.variant, raw.scales, raw.r_min)?.with_r_max(raw.r_max)?
        };
        Ok(spec)
    }
}

impl EncoderSpec {
    /// Trigonometric encoder with `r_max = 1`. `Wrap` always uses one scale.
    pub fn new(variant: Variant, scales: usize, r_min: f64) -> Result<Self> {
        if variant == Variant::Rbf {
            return Err(Error::InvalidSpec(
                "rbf is built with EncoderSpec::rbf".into(),
            ));
        }
        let scales = if variant == Variant::Wrap { 1 } else { scales };
        let spec = Self {
            variant,
            scales,
            r_min,
            r_max: 1.0,
            rbf: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_r_max(mut self, r_max: f64) -> Result<Self> {
        self.r_max = r_max;
        self.validate()?;
        Ok(self)
    }

    pub fn rbf(state: RbfState) -> Self {
        Self {
            variant: Variant::Rbf,
            scales: 1,
            r_min: 1.0,
            r_max: 1.0,
            rbf: Some(state),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return Err(Error::InvalidSpec("scales must be >= 1".into()));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.r_min) || !positive(self.r_max) {
            return Err(Error::InvalidSpec(format!(
                "scale factors must be positive, got r_min={} r_max={}",
                self.r_min, self.r_max
            )));
        }
        if self.r_min > self.r_max {
            return Err(Error::InvalidSpec(format!(
                "r_min {} exceeds r_max {}",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn rbf_state(&self) -> Option<&RbfState> {
        self.rbf.as_ref()
    }

    pub fn output_dim(&self) -> usize {
        output_dim(self)
    }

    pub fn encode(&self, p: &SphericalPoint) -> PositionEncoding {
        position_encode(self, p)
    }
}

/// Geometric scale ladder from `r_min` to `r_max`; `[1.0]` for a single scale.
pub fn scale_factors(spec: &EncoderSpec) -> Vec<f64> {
    let s = spec.scales;
    if s == 1 {
        return vec![1.0];
    }
    let g = spec.r_max / spec.r_min;
    let mut factors: Vec<f64> = (0..s)
        .map(|i| spec.r_min * g.powf(i as f64 / (s - 1) as f64))
        .collect();
    factors[0] = spec.r_min;
    factors[s - 1] = spec.r_max;
    factors
}

pub fn output_dim(spec: &EncoderSpec) -> usize {
    let s = spec.scales;
    match spec.variant {
        Variant::SphereC => 3 * s,
        Variant::SphereCPlus => 6 * s,
        Variant::SphereM => 5 * s,
        Variant::SphereMPlus => 8 * s,
        Variant::SphereDfs => 4 * s * s + 4 * s,
        Variant::Grid => 4 * s,
        Variant::Wrap => 4,
        Variant::Rbf => spec.rbf.as_ref().map_or(0, |r| r.anchors.len()),
    }
}

/// Output of a position encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionEncoding(Vec<f64>);

impl PositionEncoding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for PositionEncoding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn position_encode(spec: &EncoderSpec, p: &SphericalPoint) -> PositionEncoding {
    let mut out = Vec::with_capacity(output_dim(spec));
    encode_into(spec, p, &mut out);
    PositionEncoding(out)
}

/// Appends the encoding of `p` to `out`.
pub fn encode_into(spec: &EncoderSpec, p: &SphericalPoint, out: &mut Vec<f64>) {
    let (lon, lat) = (p.lon(), p.lat());
    match spec.variant {
        Variant::SphereC => sphere_c(&scale_factors(spec), lon, lat, out),
        Variant::SphereM => sphere_m(&scale_factors(spec), lon, lat, out),
        Variant::Grid | Variant::Wrap => grid(&scale_factors(spec), lon, lat, out),
        Variant::SphereCPlus => {
            let f = scale_factors(spec);
            sphere_c(&f, lon, lat, out);
            grid_without_sin_lat(&f, lon, lat, out);
        }
        Variant::SphereMPlus => {
            let f = scale_factors(spec);
            sphere_m(&f, lon, lat, out);
            grid_without_sin_lat(&f, lon, lat, out);
        }
        Variant::SphereDfs => sphere_dfs(&scale_factors(spec), lon, lat, out),
        Variant::Rbf => {
            let state = spec.rbf.as_ref().expect("rbf spec always carries state");
            let denom = 2.0 * state.sigma * state.sigma;
            out.extend(state.anchors.iter().map(|a| {
                let d = central_angle(p, a);
                (-d * d / denom).exp()
            }));
        }
    }
}

// Every trigonometric term goes through this one call so that terms shared
// between variants are bitwise identical regardless of inlining.
#[inline(never)]
fn sin_cos(x: f64) -> (f64, f64) {
    x.sin_cos()
}

fn sphere_c(factors: &[f64], lon: f64, lat: f64, out: &mut Vec<f64>) {
    for &f in factors {
        let (sin_lat, cos_lat) = sin_cos(lat / f);
        let (sin_lon, cos_lon) = sin_cos(lon / f);
        out.extend([sin_lat, cos_lat * cos_lon, cos_lat * sin_lon]);
    }
}

fn sphere_m(factors: &[f64], lon: f64, lat: f64, out: &mut Vec<f64>) {
    let (sin_lon_top, cos_lon_top) = sin_cos(lon);
    let (_, cos_lat_top) = sin_cos(lat);
    for &f in factors {
        let (sin_lat, cos_lat) = sin_cos(lat / f);
        let (sin_lon, cos_lon) = sin_cos(lon / f);
        out.extend([
            sin_lat,
            cos_lat * cos_lon_top,
            cos_lat_top * cos_lon,
            cos_lat * sin_lon_top,
            cos_lat_top * sin_lon,
        ]);
    }
}

fn grid(factors: &[f64], lon: f64, lat: f64, out: &mut Vec<f64>) {
    for &f in factors {
        let (sin_lat, cos_lat) = sin_cos(lat / f);
        let (sin_lon, cos_lon) = sin_cos(lon / f);
        out.extend([sin_lat, cos_lat, sin_lon, cos_lon]);
    }
}

// sin lat_s is already the first term of every sphereC / sphereM block
fn grid_without_sin_lat(factors: &[f64], lon: f64, lat: f64, out: &mut Vec<f64>) {
    for &f in factors {
        let (_, cos_lat) = sin_cos(lat / f);
        let (sin_lon, cos_lon) = sin_cos(lon / f);
        out.extend([cos_lat, sin_lon, cos_lon]);
    }
}

/// Indices of `Grid` terms that the plus variants keep (all but `sin lat_s`).
pub fn grid_union_indices(scales: usize) -> impl Iterator<Item = usize> {
    (0..4 * scales).filter(|i| i % 4 != 0)
}

fn sphere_dfs(factors: &[f64], lon: f64, lat: f64, out: &mut Vec<f64>) {
    let lat_terms: Vec<(f64, f64)> = factors.iter().map(|f| sin_cos(lat / f)).collect();
    let lon_terms: Vec<(f64, f64)> = factors.iter().map(|f| sin_cos(lon / f)).collect();
    for &(s, c) in &lat_terms {
        out.extend([s, c]);
    }
    for &(s, c) in &lon_terms {
        out.extend([s, c]);
    }
    for &(sin_lat, cos_lat) in &lat_terms {
        for &(sin_lon, cos_lon) in &lon_terms {
            out.extend([
                cos_lat * cos_lon,
                cos_lat * sin_lon,
                sin_lat * cos_lon,
                sin_lat * sin_lon,
            ]);
        }
    }
}

pub fn inner_product(e1: &PositionEncoding, e2: &PositionEncoding) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::LengthMismatch {
            expected: e1.len(),
            actual: e2.len(),
        });
    }
    Ok(e1.0.iter().zip(&e2.0).map(|(a, b)| a * b).sum())
}
