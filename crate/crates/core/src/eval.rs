//! Geo-prior inference, combination with image-model probabilities, ranking
//! metrics and embedding clustering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SphericalPoint;
use crate::nnet::{sigmoid, LocationModel};

/// Per-class prior `sigma(Enc(p) . T[:, y])`, not normalized across classes.
pub fn geo_prior(model: &LocationModel, p: &SphericalPoint) -> Vec<f64> {
    model.logits(std::slice::from_ref(p)).row(0).mapv(sigmoid).to_vec()
}

/// Priors for many points at once, `n x c`.
pub fn geo_priors(model: &LocationModel, points: &[SphericalPoint]) -> Array2<f64> {
    model.logits(points).mapv(sigmoid)
}

/// Class indices sorted by descending score; equal scores keep ascending class id.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Elementwise product `P(y|x) P(y|I)`.
pub fn combined_scores(prior: &[f64], image_probs: &[f64]) -> Result<Vec<f64>> {
    if prior.len() != image_probs.len() {
        return Err(Error::LengthMismatch {
            expected: prior.len(),
            actual: image_probs.len(),
        });
    }
    if let Some(bad) = image_probs.iter().find(|p| p.is_nan() || **p < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "image probabilities must be non-negative, got {bad}"
        )));
    }
    Ok(prior.iter().zip(image_probs).map(|(a, b)| a * b).collect())
}

/// Ranking of classes by the product of the geo prior and the image probabilities.
pub fn combine_with_image(prior: &[f64], image_probs: &[f64]) -> Result<Vec<usize>> {
    Ok(rank_descending(&combined_scores(prior, image_probs)?))
}

/// Location-only rankings for every row of a prior or logit matrix.
pub fn rankings_from_scores(scores: ArrayView2<'_, f64>) -> Vec<Vec<usize>> {
    scores
        .rows()
        .into_iter()
        .map(|r| rank_descending(&r.to_vec()))
        .collect()
}

/// 1-based position of `label` in `ranking`.
pub fn rank_of(ranking: &[usize], label: usize) -> Result<usize> {
    ranking
        .iter()
        .position(|&c| c == label)
        .map(|i| i + 1)
        .ok_or(Error::ClassIdOutOfRange {
            class_id: label,
            num_classes: ranking.len(),
            row: None,
        })
}

fn check_pairs(rankings: &[Vec<usize>], labels: &[usize]) -> Result<()> {
    if rankings.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: rankings.len(),
            actual: labels.len(),
        });
    }
    if rankings.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Mean reciprocal rank of the true class.
pub fn mrr(rankings: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    check_pairs(rankings, labels)?;
    let mut total = 0.0;
    for (r, &y) in rankings.iter().zip(labels) {
        total += 1.0 / rank_of(r, y)? as f64;
    }
    Ok(total / rankings.len() as f64)
}

/// Fraction of samples whose true class is ranked first.
pub fn top1(rankings: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    check_pairs(rankings, labels)?;
    let hits = rankings
        .iter()
        .zip(labels)
        .filter(|(r, &y)| r.first() == Some(&y))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub lat_lo_deg: f64,
    pub lat_hi_deg: f64,
    pub n: usize,
    pub mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub lon_lo_deg: f64,
    pub lon_hi_deg: f64,
    pub lat_lo_deg: f64,
    pub lat_hi_deg: f64,
    pub n: usize,
    pub mrr: Option<f64>,
}

/// Cell size of a lat-lon grid, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub lon_step_deg: f64,
    pub lat_step_deg: f64,
}

impl Default for CellGrid {
    fn default() -> Self {
        Self {
            lon_step_deg: 45.0,
            lat_step_deg: 30.0,
        }
    }
}

impl CellGrid {
    fn counts(&self) -> Result<(usize, usize)> {
        let lon = divisions(360.0, self.lon_step_deg)
            .ok_or_else(|| Error::BadGrid(format!("{} deg does not divide 360", self.lon_step_deg)))?;
        let lat = divisions(180.0, self.lat_step_deg)
            .ok_or_else(|| Error::BadGrid(format!("{} deg does not divide 180", self.lat_step_deg)))?;
        Ok((lon, lat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub overall_mrr: f64,
    pub top1: f64,
    pub band_width_deg: f64,
    pub band_rows: Vec<BandRow>,
    pub cell_grid: CellGrid,
    pub cell_rows: Vec<CellRow>,
}

fn divisions(total: f64, step: f64) -> Option<usize> {
    if !(step > 0.0 && step.is_finite()) {
        return None;
    }
    let n = total / step;
    let rounded = n.round();
    ((n - rounded).abs() < 1e-9 && rounded >= 1.0).then_some(rounded as usize)
}

fn bin(value: f64, origin: f64, step: f64, count: usize) -> usize {
    (((value - origin) / step).floor().max(0.0) as usize).min(count - 1)
}

fn reciprocal_ranks(rankings: &[Vec<usize>], labels: &[usize]) -> Result<Vec<f64>> {
    rankings
        .iter()
        .zip(labels)
        .map(|(r, &y)| rank_of(r, y).map(|k| 1.0 / k as f64))
        .collect()
}

fn group_mrr(rr: &[f64], groups: &[usize], n_groups: usize) -> Vec<(usize, Option<f64>)> {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&g, &r) in groups.iter().zip(rr) {
        sums[g] += r;
        counts[g] += 1;
    }
    counts
        .into_iter()
        .zip(sums)
        .map(|(n, s)| (n, (n > 0).then(|| s / n as f64)))
        .collect()
}

/// MRR per latitude band `[-90, -90 + w), ..., [90 - w, 90]`.
pub fn latitude_band_report(
    points: &[SphericalPoint],
    rankings: &[Vec<usize>],
    labels: &[usize],
    band_width_deg: f64,
) -> Result<Vec<BandRow>> {
    let n_bands = divisions(180.0, band_width_deg).ok_or(Error::BadBandWidth(band_width_deg))?;
    check_pairs(rankings, labels)?;
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: points.len(),
        });
    }
    let rr = reciprocal_ranks(rankings, labels)?;
    let groups: Vec<usize> = points
        .iter()
        .map(|p| bin(p.lat().to_degrees(), -90.0, band_width_deg, n_bands))
        .collect();
    Ok(group_mrr(&rr, &groups, n_bands)
        .into_iter()
        .enumerate()
        .map(|(i, (n, mrr))| BandRow {
            lat_lo_deg: -90.0 + i as f64 * band_width_deg,
            lat_hi_deg: -90.0 + (i + 1) as f64 * band_width_deg,
            n,
            mrr,
        })
        .collect())
}

/// MRR per lat-lon cell; rows are ordered south to north, west to east.
pub fn cell_report(
    points: &[SphericalPoint],
    rankings: &[Vec<usize>],
    labels: &[usize],
    grid: CellGrid,
) -> Result<Vec<CellRow>> {
    let (n_lon, n_lat) = grid.counts()?;
    check_pairs(rankings, labels)?;
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: points.len(),
        });
    }
    let rr = reciprocal_ranks(rankings, labels)?;
    let groups: Vec<usize> = points
        .iter()
        .map(|p| {
            let i = bin(p.lon().to_degrees(), -180.0, grid.lon_step_deg, n_lon);
            let j = bin(p.lat().to_degrees(), -90.0, grid.lat_step_deg, n_lat);
            j * n_lon + i
        })
        .collect();
    Ok(group_mrr(&rr, &groups, n_lon * n_lat)
        .into_iter()
        .enumerate()
        .map(|(g, (n, mrr))| {
            let (i, j) = (g % n_lon, g / n_lon);
            CellRow {
                lon_lo_deg: -180.0 + i as f64 * grid.lon_step_deg,
                lon_hi_deg: -180.0 + (i + 1) as f64 * grid.lon_step_deg,
                lat_lo_deg: -90.0 + j as f64 * grid.lat_step_deg,
                lat_hi_deg: -90.0 + (j + 1) as f64 * grid.lat_step_deg,
                n,
                mrr,
            }
        })
        .collect())
}

/// Overall, per-band and per-cell metrics for one set of rankings.
pub fn evaluate(
    points: &[SphericalPoint],
    rankings: &[Vec<usize>],
    labels: &[usize],
    band_width_deg: f64,
    grid: CellGrid,
) -> Result<EvalReport> {
    Ok(EvalReport {
        n_samples: labels.len(),
        overall_mrr: mrr(rankings, labels)?,
        top1: top1(rankings, labels)?,
        band_width_deg,
        band_rows: latitude_band_report(points, rankings, labels, band_width_deg)?,
        cell_grid: grid,
        cell_rows: cell_report(points, rankings, labels, grid)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub lon_lo_deg: f64,
    pub lon_hi_deg: f64,
    pub lat_lo_deg: f64,
    pub lat_hi_deg: f64,
    pub delta_mrr: Option<f64>,
    pub n_a: usize,
    pub n_b: usize,
}

/// `MRR_a - MRR_b` per cell; `None` where either report has no samples.
pub fn cell_delta_mrr(a: &EvalReport, b: &EvalReport) -> Result<Vec<CellDelta>> {
    if a.cell_grid != b.cell_grid || a.cell_rows.len() != b.cell_rows.len() {
        return Err(Error::GridMismatch);
    }
    Ok(a.cell_rows
        .iter()
        .zip(&b.cell_rows)
        .map(|(ra, rb)| CellDelta {
            lon_lo_deg: ra.lon_lo_deg,
            lon_hi_deg: ra.lon_hi_deg,
            lat_lo_deg: ra.lat_lo_deg,
            lat_hi_deg: ra.lat_hi_deg,
            delta_mrr: ra.mrr.zip(rb.mrr).map(|(x, y)| x - y),
            n_a: ra.n,
            n_b: rb.n,
        })
        .collect())
}

/// Average-linkage agglomerative clustering with Euclidean distance.
///
/// Merges the closest pair of active clusters until `n_clusters` remain. Ties
/// go to the lexicographically smallest `(i, j)` pair of cluster
/// representatives, where a cluster is represented by its lowest row index.
/// Labels are numbered by first appearance in row order.
pub fn agglomerative_average(points: ArrayView2<'_, f64>, n_clusters: usize) -> Result<Vec<usize>> {
    let n = points.nrows();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::BadGrid(format!(
            "cannot form {n_clusters} clusters from {n} points"
        )));
    }
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = points
                .row(i)
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut active: Vec<usize> = (0..n).collect();

    while active.len() > n_clusters {
        let mut best = (f64::INFINITY, 0, 0);
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                let d = dist[i * n + j];
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (_, keep, gone) = best;
        let (sk, sg) = (size[keep] as f64, size[gone] as f64);
        for &k in &active {
            if k != keep && k != gone {
                let d = (sk * dist[keep * n + k] + sg * dist[gone * n + k]) / (sk + sg);
                dist[keep * n + k] = d;
                dist[k * n + keep] = d;
            }
        }
        size[keep] += size[gone];
        parent[gone] = keep;
        active.retain(|&k| k != gone);
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut label_of_root = BTreeMap::new();
    Ok((0..n)
        .map(|i| {
            let next = label_of_root.len();
            *label_of_root.entry(root(i)).or_insert(next)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCell {
    pub lon_deg: f64,
    pub lat_deg: f64,
    pub label: usize,
}

/// Centers of a `step x step` degree grid, south to north then west to east.
pub fn grid_centers(step_deg: f64) -> Result<Vec<SphericalPoint>> {
    let grid = CellGrid {
        lon_step_deg: step_deg,
        lat_step_deg: step_deg,
    };
    let (n_lon, n_lat) = grid.counts()?;
    let mut out = Vec::with_capacity(n_lon * n_lat);
    for j in 0..n_lat {
        for i in 0..n_lon {
            let lon = -180.0 + (i as f64 + 0.5) * step_deg;
            let lat = -90.0 + (j as f64 + 0.5) * step_deg;
            out.push(crate::data::point_from_degrees(lon, lat)?);
        }
    }
    Ok(out)
}

/// Clusters the location embeddings of every grid-cell center.
pub fn cluster_embeddings(
    model: &LocationModel,
    grid_step_deg: f64,
    n_clusters: usize,
) -> Result<Vec<ClusterCell>> {
    if n_clusters < 2 {
        return Err(Error::BadGrid(format!("need at least 2 clusters, got {n_clusters}")));
    }
    let centers = grid_centers(grid_step_deg)?;
    let embeddings = model.embed(&centers);
    let labels = agglomerative_average(embeddings.view(), n_clusters)?;
    Ok(centers
        .iter()
        .zip(labels)
        .map(|(p, label)| {
            let (lon_deg, lat_deg) = crate::data::point_to_degrees(p);
            ClusterCell {
                lon_deg,
                lat_deg,
                label,
            }
        })
        .collect())
}

/// Image-model probabilities keyed by sample id.
pub type ImageProbs = BTreeMap<String, Vec<f64>>;

pub fn load_image_probs(path: impl AsRef<Path>) -> Result<ImageProbs> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn bands_csv(rows: &[BandRow]) -> String {
    let mut s = String::from("lat_lo_deg,lat_hi_deg,n,mrr\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.lat_lo_deg, r.lat_hi_deg, r.n, opt(r.mrr));
    }
    s
}

pub fn cells_csv(rows: &[CellRow]) -> String {
    let mut s = String::from("lon_lo_deg,lon_hi_deg,lat_lo_deg,lat_hi_deg,n,mrr\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.lon_lo_deg, r.lon_hi_deg, r.lat_lo_deg, r.lat_hi_deg, r.n, opt(r.mrr)
        );
    }
    s
}

pub fn cell_delta_csv(rows: &[CellDelta]) -> String {
    let mut s = String::from("lon_lo_deg,lon_hi_deg,lat_lo_deg,lat_hi_deg,delta_mrr,n_a,n_b\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.lon_lo_deg, r.lon_hi_deg, r.lat_lo_deg, r.lat_hi_deg, opt(r.delta_mrr), r.n_a, r.n_b
        );
    }
    s
}

pub fn clusters_csv(cells: &[ClusterCell]) -> String {
    let mut s = String::from("lon_deg,lat_deg,label\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{}", c.lon_deg, c.lat_deg, c.label);
    }
    s
}
