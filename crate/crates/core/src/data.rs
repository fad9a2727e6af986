//! Dataset CSV I/O and von Mises-Fisher synthetic ground truth.
//!
//! Files store degrees; everything in memory is radians.

use std::f64::consts::{LN_2, PI, TAU};
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::rank_descending;
use crate::geometry::{make_point, SphericalPoint};

pub const CSV_HEADER: [&str; 4] = ["sample_id", "lon_deg", "lat_deg", "class_id"];

/// Converts a GPS-style degree pair into a validated point.
pub fn point_from_degrees(lon_deg: f64, lat_deg: f64) -> Result<SphericalPoint> {
    make_point(lon_deg.to_radians(), lat_deg.to_radians())
}

pub fn point_to_degrees(p: &SphericalPoint) -> (f64, f64) {
    (p.lon().to_degrees(), p.lat().to_degrees())
}

/// One presence-only observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub sample_id: String,
    pub point: SphericalPoint,
    pub class_id: usize,
}

/// Records plus the declared class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub records: Vec<ObservationRecord>,
}

impl Dataset {
    pub fn points(&self) -> Vec<SphericalPoint> {
        self.records.iter().map(|r| r.point).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.class_id).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

fn parse_error(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

/// Parses the dataset format: a `# classes: c` comment, the header
/// `sample_id,lon_deg,lat_deg,class_id`, then one row per observation.
/// Row numbers in errors are 1-based file lines.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut num_classes = None;
    for (i, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        if let Some(value) = comment.trim().strip_prefix("classes:") {
            if num_classes.is_some() {
                return Err(parse_error(i + 1, "duplicate classes declaration"));
            }
            let c: usize = value
                .trim()
                .parse()
                .map_err(|_| parse_error(i + 1, format!("bad class count {:?}", value.trim())))?;
            if c == 0 {
                return Err(parse_error(i + 1, "class count must be >= 1"));
            }
            num_classes = Some(c);
        }
    }
    let num_classes = num_classes.ok_or_else(|| parse_error(1, "missing `# classes: c` line"))?;

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header_line = reader.position().line().max(1) as usize;
    let headers = reader
        .headers()
        .map_err(|e| parse_error(header_line, e.to_string()))?
        .clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(parse_error(
            header_line,
            format!("expected header {}, got {:?}", CSV_HEADER.join(","), headers),
        ));
    }

    let mut records = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_error(row, e.to_string())
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let number = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_error(row, format!("bad {} {:?}", CSV_HEADER[i], field(i))))
        };
        let lon_deg = number(1)?;
        let lat_deg = number(2)?;
        let class_id: usize = field(3)
            .parse()
            .map_err(|_| parse_error(row, format!("bad class_id {:?}", field(3))))?;
        let point = point_from_degrees(lon_deg, lat_deg).map_err(|e| match e {
            Error::LatOutOfRange { lat, .. } => Error::LatOutOfRange {
                lat,
                row: Some(row),
            },
            other => other,
        })?;
        if class_id >= num_classes {
            return Err(Error::ClassIdOutOfRange {
                class_id,
                num_classes,
                row: Some(row),
            });
        }
        records.push(ObservationRecord {
            sample_id: field(0).to_string(),
            point,
            class_id,
        });
    }
    Ok(Dataset {
        num_classes,
        records,
    })
}

pub fn to_csv_string(dataset: &Dataset) -> Result<String> {
    let mut out = format!("# classes: {}\n", dataset.num_classes).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let to_err = |e: csv::Error| Error::InvalidConfig(e.to_string());
        w.write_record(CSV_HEADER).map_err(to_err)?;
        for r in &dataset.records {
            let (lon, lat) = point_to_degrees(&r.point);
            w.write_record([
                r.sample_id.clone(),
                lon.to_string(),
                lat.to_string(),
                r.class_id.to_string(),
            ])
            .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
    }
    Ok(String::from_utf8(out).expect("csv output is utf-8"))
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_csv_string(dataset)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct RawComponent {
    lon_deg: f64,
    lat_deg: f64,
    kappa: f64,
    weight: f64,
}

/// One vMF component; serialized with its center in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComponent", into = "RawComponent")]
pub struct VmfComponent {
    pub center: SphericalPoint,
    pub kappa: f64,
    pub weight: f64,
}

impl TryFrom<RawComponent> for VmfComponent {
    type Error = Error;

    fn try_from(raw: RawComponent) -> Result<Self> {
        Ok(Self {
            center: point_from_degrees(raw.lon_deg, raw.lat_deg)?,
            kappa: raw.kappa,
            weight: raw.weight,
        })
    }
}

impl From<VmfComponent> for RawComponent {
    fn from(c: VmfComponent) -> Self {
        let (lon_deg, lat_deg) = point_to_degrees(&c.center);
        Self {
            lon_deg,
            lat_deg,
            kappa: c.kappa,
            weight: c.weight,
        }
    }
}

impl VmfComponent {
    pub fn new(center: SphericalPoint, kappa: f64, weight: f64) -> Self {
        Self {
            center,
            kappa,
            weight,
        }
    }
}

/// Per-class vMF mixtures and the number of points drawn for each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfMixtureSpec {
    pub classes: Vec<Vec<VmfComponent>>,
    pub points_per_class: usize,
}

impl VmfMixtureSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one class".into()));
        }
        for (c, comps) in self.classes.iter().enumerate() {
            if comps.is_empty() {
                return Err(Error::InvalidConfig(format!("class {c} has no components")));
            }
            for comp in comps {
                if !(comp.kappa >= 0.0 && comp.kappa.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "class {c}: kappa must be finite and >= 0, got {}",
                        comp.kappa
                    )));
                }
                if !(comp.weight > 0.0 && comp.weight.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "class {c}: weights must be positive, got {}",
                        comp.weight
                    )));
                }
            }
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "class {c}: weights sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

fn orthonormal_basis(mu: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    // pick the axis least aligned with mu
    let axis = if mu[0].abs() <= mu[1].abs() && mu[0].abs() <= mu[2].abs() {
        [1.0, 0.0, 0.0]
    } else if mu[1].abs() <= mu[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let e1 = normalize(cross(mu, axis));
    let e2 = cross(mu, e1);
    (e1, e2)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Draws one point from vMF(`center`, `kappa`) on the unit sphere.
///
/// The cosine to the mean direction is drawn by inverting its CDF on the
/// 2-sphere (Wood's algorithm needs no rejection step in three dimensions),
/// then combined with a uniform tangent direction.
pub fn sample_vmf<R: Rng + ?Sized>(rng: &mut R, center: &SphericalPoint, kappa: f64) -> SphericalPoint {
    let u: f64 = rng.random();
    let w = if kappa == 0.0 {
        2.0 * u - 1.0
    } else {
        1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa
    }
    .clamp(-1.0, 1.0);
    let theta = TAU * rng.random::<f64>();
    let mu = center.to_unit_vector();
    let (e1, e2) = orthonormal_basis(mu);
    let r = (1.0 - w * w).max(0.0).sqrt();
    let (s, c) = theta.sin_cos();
    let x = [
        w * mu[0] + r * (c * e1[0] + s * e2[0]),
        w * mu[1] + r * (c * e1[1] + s * e2[1]),
        w * mu[2] + r * (c * e1[2] + s * e2[2]),
    ];
    SphericalPoint::from_unit_vector(x)
}

/// Number of training points for a class of `n` samples under the 80/20 split.
pub fn train_count(n: usize) -> usize {
    (n * 4 + 2) / 5
}

/// Samples `points_per_class` points per class and splits each class 80/20
/// into train and test after a seeded shuffle.
pub fn synth_vmf_dataset<R: Rng + ?Sized>(spec: &VmfMixtureSpec, rng: &mut R) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class_id, comps) in spec.classes.iter().enumerate() {
        let picker = WeightedIndex::new(comps.iter().map(|c| c.weight))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut records: Vec<ObservationRecord> = (0..spec.points_per_class)
            .map(|i| {
                let comp = &comps[picker.sample(rng)];
                ObservationRecord {
                    sample_id: format!("c{class_id}_{i}"),
                    point: sample_vmf(rng, &comp.center, comp.kappa),
                    class_id,
                }
            })
            .collect();
        records.shuffle(rng);
        let split = train_count(records.len());
        test.extend(records.drain(split..));
        train.extend(records);
    }
    train.shuffle(rng);
    test.shuffle(rng);
    let num_classes = spec.num_classes();
    Ok((
        Dataset {
            num_classes,
            records: train,
        },
        Dataset {
            num_classes,
            records: test,
        },
    ))
}

/// `ln C(kappa)` for the vMF normalizer `C(kappa) = kappa / (4 pi sinh kappa)`.
pub fn vmf_log_normalizer(kappa: f64) -> f64 {
    let ln_4pi = (4.0 * PI).ln();
    if kappa == 0.0 {
        return -ln_4pi;
    }
    let ln_sinh = kappa + (-(-2.0 * kappa).exp()).ln_1p() - LN_2;
    kappa.ln() - ln_4pi - ln_sinh
}

/// Log of the mixture density of one class at `p`. Weights are normalized
/// to sum to one before use.
pub fn class_log_density(components: &[VmfComponent], p: &SphericalPoint) -> f64 {
    let x = p.to_unit_vector();
    let total_weight: f64 = components.iter().map(|c| c.weight).sum();
    let terms: Vec<f64> = components
        .iter()
        .map(|c| {
            let mu = c.center.to_unit_vector();
            let cos = x[0] * mu[0] + x[1] * mu[1] + x[2] * mu[2];
            (c.weight / total_weight).ln() + vmf_log_normalizer(c.kappa) + c.kappa * cos
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn class_density(components: &[VmfComponent], p: &SphericalPoint) -> f64 {
    class_log_density(components, p).exp()
}

/// Classes ranked by their exact mixture density at `p`, highest first;
/// ties go to the lower class id.
pub fn bayes_oracle(spec: &VmfMixtureSpec, p: &SphericalPoint) -> Vec<usize> {
    let scores: Vec<f64> = spec
        .classes
        .iter()
        .map(|comps| class_log_density(comps, p))
        .collect();
    rank_descending(&scores)
}

fn component_deg(lon_deg: f64, lat_deg: f64, kappa: f64) -> VmfComponent {
    VmfComponent::new(
        point_from_degrees(lon_deg, lat_deg).expect("preset centers are valid"),
        kappa,
        1.0,
    )
}

/// Two single-component classes centered on antipodal points of the equator.
pub fn antipodal_preset(kappa: f64, points_per_class: usize) -> VmfMixtureSpec {
    VmfMixtureSpec {
        classes: vec![
            vec![component_deg(0.0, 0.0, kappa)],
            vec![component_deg(180.0, 0.0, kappa)],
        ],
        points_per_class,
    }
}

/// Six classes: two tight ones above 70 deg north (kappa 100) on opposite
/// meridians, four broader ones (kappa 20) in the mid latitudes.
pub fn polar_preset(points_per_class: usize) -> VmfMixtureSpec {
    VmfMixtureSpec {
        classes: vec![
            vec![component_deg(0.0, 78.0, 100.0)],
            vec![component_deg(180.0, 78.0, 100.0)],
            vec![component_deg(-90.0, 40.0, 20.0)],
            vec![component_deg(90.0, 40.0, 20.0)],
            vec![component_deg(0.0, -40.0, 20.0)],
            vec![component_deg(180.0, -40.0, 20.0)],
        ],
        points_per_class,
    }
}

/// Named synthetic mixtures available to the CLI.
pub fn synthetic_preset(name: &str, points_per_class: Option<usize>) -> Result<VmfMixtureSpec> {
    match name {
        "antipodal" => Ok(antipodal_preset(50.0, points_per_class.unwrap_or(625))),
        "polar" => Ok(polar_preset(points_per_class.unwrap_or(400))),
        other => Err(Error::InvalidConfig(format!(
            "unknown synthetic preset {other:?} (expected antipodal or polar)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{central_angle, sample_uniform_sphere};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    fn single(center: SphericalPoint, kappa: f64) -> Vec<VmfComponent> {
        vec![VmfComponent::new(center, kappa, 1.0)]
    }

    #[test]
    fn csv_rows() {
        let text = "# classes: 2\nsample_id,lon_deg,lat_deg,class_id\na,0,0,0\nb,540,0,1\n";
        let ds = parse_csv(text).unwrap();
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.records[0].sample_id, "a");
        assert_eq!(ds.records[0].point, make_point(0.0, 0.0).unwrap());
        assert!((ds.records[1].point.lon() + PI).abs() < 1e-12);
        assert_eq!(ds.records[1].class_id, 1);
    }

    #[test]
    fn csv_errors_carry_rows() {
        let base = "# classes: 2\nsample_id,lon_deg,lat_deg,class_id\na,0,0,0\n";
        let lat = format!("{base}c,0,91,0\n");
        assert!(matches!(
            parse_csv(&lat),
            Err(Error::LatOutOfRange { row: Some(4), .. })
        ));
        let class = format!("{base}c,0,0,2\n");
        assert!(matches!(
            parse_csv(&class),
            Err(Error::ClassIdOutOfRange { row: Some(4), .. })
        ));
        let junk = format!("{base}c,east,0,0\n");
        assert!(matches!(parse_csv(&junk), Err(Error::Parse { row: 4, .. })));
        let short = format!("{base}c,1\n");
        assert!(matches!(parse_csv(&short), Err(Error::Parse { row: 4, .. })));
        assert!(parse_csv("sample_id,lon_deg,lat_deg,class_id\n").is_err());
        assert!(parse_csv("# classes: 2\nid,lon,lat,class\n").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let records = sample_uniform_sphere(&mut rng, 200)
            .into_iter()
            .enumerate()
            .map(|(i, p)| ObservationRecord {
                sample_id: format!("id,{i}"),
                point: p,
                class_id: i % 3,
            })
            .collect();
        let ds = Dataset { num_classes: 3, records };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.num_classes, 3);
        for (a, b) in ds.records.iter().zip(&back.records) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.class_id, b.class_id);
            assert!((a.point.lon() - b.point.lon()).abs() < 1e-12);
            assert!((a.point.lat() - b.point.lat()).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_csv("/nonexistent/x.csv"), Err(Error::Io { .. })));
    }

    fn spec_with(classes: Vec<Vec<VmfComponent>>, n: usize) -> VmfMixtureSpec {
        VmfMixtureSpec {
            classes,
            points_per_class: n,
        }
    }

    #[test]
    fn zero_kappa_is_uniform() {
        let origin = make_point(0.0, 0.0).unwrap();
        let spec = spec_with(vec![single(origin, 0.0)], 50_000);
        let (train, test) = synth_vmf_dataset(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let pts: Vec<_> = train.points().into_iter().chain(test.points()).collect();
        let frac = pts.iter().filter(|p| p.lat() > FRAC_PI_3).count() as f64 / pts.len() as f64;
        let expected = (1.0 - FRAC_PI_3.sin()) / 2.0;
        assert!((frac - expected).abs() < 0.005, "{frac} vs {expected}");
    }

    #[test]
    fn large_kappa_concentrates() {
        let center = make_point(1.0, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let inside = (0..n)
            .filter(|_| central_angle(&sample_vmf(&mut rng, &center, 1e4), &center) < 0.05)
            .count();
        assert!(inside as f64 >= 0.99 * n as f64, "{inside}");
    }

    #[test]
    fn vmf_angle_matches_closed_form_cdf() {
        // P(cos angle >= t) = (e^k - e^{k t}) / (e^k - e^{-k})
        let center = make_point(-2.0, -1.1).unwrap();
        let kappa = 5.0;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 40_000;
        let t = 0.8;
        let hits = (0..n)
            .filter(|_| {
                let p = sample_vmf(&mut rng, &center, kappa);
                central_angle(&p, &center).cos() >= t
            })
            .count() as f64
            / n as f64;
        let exact = (kappa.exp() - (kappa * t).exp()) / (kappa.exp() - (-kappa).exp());
        assert!((hits - exact).abs() < 0.01, "{hits} vs {exact}");
    }

    #[test]
    fn mean_direction_converges() {
        let center = make_point(2.5, -0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sum = [0.0; 3];
        for _ in 0..10_000 {
            let v = sample_vmf(&mut rng, &center, 20.0).to_unit_vector();
            for k in 0..3 {
                sum[k] += v[k];
            }
        }
        let mean = SphericalPoint::from_unit_vector(sum);
        assert!(central_angle(&mean, &center) < 0.05);
    }

    #[test]
    fn synth_is_deterministic_and_split() {
        let spec = spec_with(
            vec![
                single(make_point(0.0, 0.0).unwrap(), 10.0),
                single(make_point(PI, 0.0).unwrap(), 10.0),
            ],
            625,
        );
        let a = synth_vmf_dataset(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = synth_vmf_dataset(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let (train, test) = a;
        assert_eq!(train.len(), 1000);
        assert_eq!(test.len(), 250);
        for c in 0..2 {
            assert_eq!(train.records.iter().filter(|r| r.class_id == c).count(), 500);
        }
    }

    #[test]
    fn spec_validation() {
        let p = make_point(0.0, 0.0).unwrap();
        let bad_weights = spec_with(
            vec![vec![VmfComponent::new(p, 1.0, 0.3), VmfComponent::new(p, 1.0, 0.3)]],
            10,
        );
        assert!(bad_weights.validate().is_err());
        assert!(spec_with(vec![single(p, -1.0)], 10).validate().is_err());
        assert!(spec_with(vec![single(p, f64::INFINITY)], 10).validate().is_err());
        assert!(spec_with(vec![], 10).validate().is_err());
    }

    #[test]
    fn spec_json_uses_degrees() {
        let spec = spec_with(vec![single(make_point(FRAC_PI_2, 0.0).unwrap(), 50.0)], 5);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains(r#""lon_deg":90.0"#), "{json}");
        let back: VmfMixtureSpec = serde_json::from_str(&json).unwrap();
        assert!((back.classes[0][0].center.lon() - FRAC_PI_2).abs() < 1e-15);
        assert!(serde_json::from_str::<VmfMixtureSpec>(
            r#"{"classes":[[{"lon_deg":0,"lat_deg":95,"kappa":1,"weight":1}]],"points_per_class":3}"#
        )
        .is_err());
    }

    #[test]
    fn oracle_prefers_nearby_center() {
        let a = make_point(0.3, 0.2).unwrap();
        let anti = SphericalPoint::from_unit_vector({
            let v = a.to_unit_vector();
            [-v[0], -v[1], -v[2]]
        });
        let spec = spec_with(vec![single(anti, 5.0), single(a, 5.0), single(anti, 30.0)], 1);
        assert_eq!(bayes_oracle(&spec, &a)[0], 1);
    }

    #[test]
    fn oracle_ties_rank_by_class_id() {
        let spec = spec_with(
            vec![
                single(make_point(1.0, 0.0).unwrap(), 0.0),
                single(make_point(-1.0, 0.5).unwrap(), 0.0),
                single(make_point(2.0, -0.5).unwrap(), 0.0),
            ],
            1,
        );
        assert_eq!(bayes_oracle(&spec, &make_point(0.1, 0.1).unwrap()), vec![0, 1, 2]);
    }

    #[test]
    fn densities_integrate_to_one() {
        let comps = vec![
            VmfComponent::new(make_point(0.5, 0.5).unwrap(), 4.0, 0.7),
            VmfComponent::new(make_point(-2.0, -0.3).unwrap(), 0.0, 0.3),
        ];
        let kappas = [0.0, 0.5, 3.0, 12.0];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts = sample_uniform_sphere(&mut rng, 200_000);
        let area = 4.0 * PI;
        let integrate = |c: &[VmfComponent]| {
            area * pts.iter().map(|p| class_density(c, p)).sum::<f64>() / pts.len() as f64
        };
        for k in kappas {
            let integral = integrate(&single(make_point(1.0, 1.0).unwrap(), k));
            assert!((integral - 1.0).abs() < 0.01, "kappa {k}: {integral}");
        }
        assert!((integrate(&comps) - 1.0).abs() < 0.01);
    }

    #[test]
    fn log_normalizer_matches_direct_formula() {
        for k in [1e-3f64, 0.5, 2.0, 30.0] {
            let direct = (k / (4.0 * PI * k.sinh())).ln();
            assert!((vmf_log_normalizer(k) - direct).abs() < 1e-12);
        }
        assert!(vmf_log_normalizer(1e4).is_finite());
    }

    #[test]
    fn oracle_invariant_to_weight_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers = sample_uniform_sphere(&mut rng, 6);
        let spec = spec_with(
            vec![
                vec![VmfComponent::new(centers[0], 3.0, 0.4), VmfComponent::new(centers[1], 8.0, 0.6)],
                vec![VmfComponent::new(centers[2], 1.0, 1.0)],
                vec![VmfComponent::new(centers[3], 6.0, 0.5), VmfComponent::new(centers[4], 2.0, 0.5)],
            ],
            1,
        );
        let mut scaled = spec.clone();
        for comps in scaled.classes.iter_mut() {
            for c in comps.iter_mut() {
                c.weight *= 7.5;
            }
        }
        for p in sample_uniform_sphere(&mut rng, 500) {
            assert_eq!(bayes_oracle(&spec, &p), bayes_oracle(&scaled, &p));
        }
    }

    #[test]
    fn presets_are_valid_and_named() {
        let a = synthetic_preset("antipodal", None).unwrap();
        a.validate().unwrap();
        assert_eq!((a.num_classes(), train_count(a.points_per_class)), (2, 500));
        let p = synthetic_preset("polar", Some(10)).unwrap();
        p.validate().unwrap();
        assert_eq!((p.num_classes(), p.points_per_class), (6, 10));
        for comps in &p.classes[..2] {
            assert!(comps[0].center.lat() > 70f64.to_radians() && comps[0].kappa == 100.0);
        }
        assert!(matches!(synthetic_preset("moon", None), Err(Error::InvalidConfig(_))));
    }
}
