//! Spatio-temporal panels: locations, observation frames, location
//! partitions and long-format CSV ingestion.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean Earth radius in kilometres, the default great-circle scale.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Planar distance in coordinate units.
    #[default]
    Euclidean,
    /// Haversine distance; `x1` is longitude and `x2` latitude, in degrees.
    GreatCircle { radius: f64 },
}

impl DistanceMetric {
    pub fn great_circle() -> Self {
        DistanceMetric::GreatCircle {
            radius: EARTH_RADIUS_KM,
        }
    }

    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match *self {
            DistanceMetric::Euclidean => (a[0] - b[0]).hypot(a[1] - b[1]),
            DistanceMetric::GreatCircle { radius } => {
                let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
                let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
                let dlat = lat2 - lat1;
                let dlon = lon2 - lon1;
                let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
                2.0 * radius * h.sqrt().min(1.0).asin()
            }
        }
    }
}

/// The observed sites `s_1, …, s_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSet {
    ids: Vec<String>,
    coords: Vec<[f64; 2]>,
    metric: DistanceMetric,
}

impl LocationSet {
    pub fn new(ids: Vec<String>, coords: Vec<[f64; 2]>, metric: DistanceMetric) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids but {} coordinate pairs",
                ids.len(),
                coords.len()
            )));
        }
        if ids.len() < 2 {
            return Err(Error::TooFewLocations {
                required: 2,
                got: ids.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidLocations(format!("duplicate id {id:?}")));
            }
        }
        for (id, c) in ids.iter().zip(&coords) {
            if !c[0].is_finite() || !c[1].is_finite() {
                return Err(Error::InvalidCoordinate {
                    id: id.clone(),
                    reason: "non-finite coordinate".into(),
                });
            }
            if let DistanceMetric::GreatCircle { .. } = metric {
                if c[1].abs() > 90.0 {
                    return Err(Error::InvalidCoordinate {
                        id: id.clone(),
                        reason: format!("latitude {} outside [-90, 90]", c[1]),
                    });
                }
            }
        }
        if let DistanceMetric::GreatCircle { radius } = metric {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::InvalidArgument(format!("sphere radius {radius}")));
            }
        }
        Ok(LocationSet { ids, coords, metric })
    }

    /// Locations with generated ids `"s1"`, `"s2"`, … under the Euclidean metric.
    pub fn from_coords(coords: Vec<[f64; 2]>) -> Result<Self> {
        let ids = (1..=coords.len()).map(|i| format!("s{i}")).collect();
        LocationSet::new(ids, coords, DistanceMetric::Euclidean)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.metric.distance(self.coords[i], self.coords[j])
    }

    pub fn distance_to(&self, i: usize, point: [f64; 2]) -> f64 {
        self.metric.distance(self.coords[i], point)
    }

    /// Sub-collection in the order of `indices`. May hold a single site.
    pub(crate) fn select(&self, indices: &[usize]) -> LocationSet {
        LocationSet {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            metric: self.metric,
        }
    }
}

/// Symmetric `p × p` matrix of distances between locations.
pub fn pairwise_distances(locs: &LocationSet) -> DMatrix<f64> {
    let p = locs.len();
    let mut d = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let v = locs.distance(i, j);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// A split of `{0, …, p-1}` into two disjoint sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub set1: Vec<usize>,
    pub set2: Vec<usize>,
}

impl Partition {
    /// Validates that the sets are disjoint, non-empty and cover `0..p`.
    pub fn new(set1: Vec<usize>, set2: Vec<usize>, p: usize) -> Result<Self> {
        if set1.is_empty() || set2.is_empty() {
            return Err(Error::InvalidArgument("partition sets must be non-empty".into()));
        }
        let mut seen = vec![false; p];
        for &i in set1.iter().chain(&set2) {
            if i >= p || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range or repeated in partition of {p}"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("partition does not cover all locations".into()));
        }
        Ok(Partition { set1, set2 })
    }

    pub fn p(&self) -> usize {
        self.set1.len() + self.set2.len()
    }

    pub fn swap(&self) -> Partition {
        Partition {
            set1: self.set2.clone(),
            set2: self.set1.clone(),
        }
    }
}

/// Uniformly random split with `|set1| = ⌊p/2⌋`, reproducible from `seed`.
/// Both sets are returned in ascending order.
pub fn random_partition(p: usize, seed: u64) -> Result<Partition> {
    if p < 4 {
        return Err(Error::TooFewLocations { required: 4, got: p });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.shuffle(&mut rng);
    let p1 = p / 2;
    let mut set1 = idx[..p1].to_vec();
    let mut set2 = idx[p1..].to_vec();
    set1.sort_unstable();
    set2.sort_unstable();
    Ok(Partition { set1, set2 })
}

/// Observable covariates `z_t(s_i)`, stored per location as `n × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub per_location: Vec<DMatrix<f64>>,
}

/// An `n × p` panel of observations with a missing-cell mask.
///
/// Missing cells hold `NaN` in [`obs`](Self::obs) and `true` in the mask;
/// no arithmetic ever reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalFrame {
    locations: LocationSet,
    times: Vec<String>,
    obs: DMatrix<f64>,
    missing: DMatrix<bool>,
    covariates: Option<Covariates>,
}

impl SpatioTemporalFrame {
    /// Builds a frame from an `n × p` matrix where `NaN` marks a missing cell.
    /// Every row and every column must be at least half observed.
    pub fn new(locations: LocationSet, obs: DMatrix<f64>) -> Result<Self> {
        let frame = Self::new_unchecked(locations, obs)?;
        frame.check_density()?;
        Ok(frame)
    }

    /// As [`new`](Self::new) without the half-observed density rule.
    pub(crate) fn new_unchecked(locations: LocationSet, obs: DMatrix<f64>) -> Result<Self> {
        let (n, p) = obs.shape();
        if p != locations.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} observation columns for {} locations",
                p,
                locations.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need n >= 2 time points, got {n}")));
        }
        if obs.iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidArgument("infinite observation".into()));
        }
        let missing = obs.map(|v| v.is_nan());
        Ok(SpatioTemporalFrame {
            locations,
            times: (1..=n).map(|t| t.to_string()).collect(),
            obs,
            missing,
            covariates: None,
        })
    }

    fn check_density(&self) -> Result<()> {
        let (n, p) = self.obs.shape();
        for t in 0..n {
            let seen = (0..p).filter(|&i| !self.missing[(t, i)]).count();
            if 2 * seen < p {
                return Err(Error::TooSparse(format!(
                    "time {} has {seen} of {p} locations observed",
                    self.times[t]
                )));
            }
        }
        for i in 0..p {
            let seen = (0..n).filter(|&t| !self.missing[(t, i)]).count();
            if 2 * seen < n {
                return Err(Error::TooSparse(format!(
                    "location {} has {seen} of {n} times observed",
                    self.locations.ids()[i]
                )));
            }
        }
        Ok(())
    }

    /// Replaces the time labels (default `"1"…"n"`).
    pub fn with_times(mut self, times: Vec<String>) -> Result<Self> {
        if times.len() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} time labels for n = {}",
                times.len(),
                self.n()
            )));
        }
        self.times = times;
        Ok(self)
    }

    /// Attaches covariates, one `n × m` matrix per location.
    pub fn with_covariates(mut self, names: Vec<String>, per_location: Vec<DMatrix<f64>>) -> Result<Self> {
        if per_location.len() != self.p() {
            return Err(Error::ShapeMismatch(format!(
                "covariates for {} locations, frame has {}",
                per_location.len(),
                self.p()
            )));
        }
        for (i, z) in per_location.iter().enumerate() {
            if z.nrows() != self.n() || z.ncols() != names.len() {
                return Err(Error::ShapeMismatch(format!(
                    "covariate block for location {} is {}x{}, expected {}x{}",
                    self.locations.ids()[i],
                    z.nrows(),
                    z.ncols(),
                    self.n(),
                    names.len()
                )));
            }
            for t in 0..self.n() {
                if !self.missing[(t, i)] && z.row(t).iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "missing covariates at observed cell (t = {}, id = {})",
                        self.times[t],
                        self.locations.ids()[i]
                    )));
                }
            }
        }
        self.covariates = Some(Covariates { names, per_location });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.obs.nrows()
    }

    pub fn p(&self) -> usize {
        self.obs.ncols()
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locations
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    /// Observation matrix; missing cells hold `NaN`.
    pub fn obs(&self) -> &DMatrix<f64> {
        &self.obs
    }

    pub fn missing(&self) -> &DMatrix<bool> {
        &self.missing
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        !self.missing[(t, i)]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    pub fn columns_complete(&self, cols: &[usize]) -> bool {
        cols.iter().all(|&i| self.missing.column(i).iter().all(|m| !m))
    }

    /// `n × |cols|` block of observations in the order of `cols`.
    pub fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        self.obs.select_columns(cols)
    }

    /// Frame restricted to the given locations, in the given order. The
    /// density rule is not re-checked.
    pub fn select_locations(&self, cols: &[usize]) -> SpatioTemporalFrame {
        SpatioTemporalFrame {
            locations: self.locations.select(cols),
            times: self.times.clone(),
            obs: self.obs.select_columns(cols),
            missing: self.missing.select_columns(cols),
            covariates: self.covariates.as_ref().map(|c| Covariates {
                names: c.names.clone(),
                per_location: cols.iter().map(|&i| c.per_location[i].clone()).collect(),
            }),
        }
    }

    /// Same frame with new observation values on the same mask. Values at
    /// masked cells are forced to `NaN`.
    pub(crate) fn with_values(&self, mut values: DMatrix<f64>) -> SpatioTemporalFrame {
        debug_assert_eq!(values.shape(), self.obs.shape());
        for (v, &m) in values.iter_mut().zip(self.missing.iter()) {
            if m {
                *v = f64::NAN;
            }
        }
        SpatioTemporalFrame {
            locations: self.locations.clone(),
            times: self.times.clone(),
            obs: values,
            missing: self.missing.clone(),
            covariates: self.covariates.clone(),
        }
    }

    /// Complete frame from fully observed values (mask cleared).
    pub(crate) fn with_complete_values(&self, values: DMatrix<f64>) -> SpatioTemporalFrame {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        SpatioTemporalFrame {
            locations: self.locations.clone(),
            times: self.times.clone(),
            missing: DMatrix::from_element(values.nrows(), values.ncols(), false),
            obs: values,
            covariates: self.covariates.clone(),
        }
    }

    pub(crate) fn without_covariates(mut self) -> SpatioTemporalFrame {
        self.covariates = None;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum TimeKey {
    Int(i64),
    Stamp(NaiveDateTime),
}

fn parse_time(raw: &str) -> Option<TimeKey> {
    if let Ok(v) = raw.parse::<i64>() {
        return Some(TimeKey::Int(v));
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0).map(TimeKey::Stamp);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(TimeKey::Stamp(dt));
        }
    }
    None
}

impl fmt::Display for TimeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeKey::Int(v) => write!(f, "{v}"),
            TimeKey::Stamp(dt) => write!(f, "{dt}"),
        }
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))
}

fn csv_error(path: &Path, record: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.display().to_string(),
            source,
        },
        other => Error::Parse {
            file: path.display().to_string(),
            record,
            message: format!("{other:?}"),
        },
    }
}

fn parse_error(path: &Path, record: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        record,
        message: message.into(),
    }
}

fn expect_header(path: &Path, headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(parse_error(
            path,
            0,
            format!("expected header starting with {expected:?}, got {got:?}"),
        ));
    }
    Ok(())
}

fn parse_f64(path: &Path, record: usize, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| parse_error(path, record, format!("non-numeric value {field:?}")))
}

/// Reads a locations CSV with header `id,x1,x2`.
pub fn load_locations(path: &Path, metric: DistanceMetric) -> Result<LocationSet> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, 0, e))?.clone();
    expect_header(path, &headers, &["id", "x1", "x2"])?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, k + 1, e))?;
        if rec.len() != 3 {
            return Err(parse_error(path, k + 1, "expected 3 fields"));
        }
        ids.push(rec[0].to_string());
        coords.push([parse_f64(path, k + 1, &rec[1])?, parse_f64(path, k + 1, &rec[2])?]);
    }
    LocationSet::new(ids, coords, metric)
}

struct LongRecord {
    time: TimeKey,
    raw_time: String,
    id: String,
    values: Vec<Option<f64>>,
}

fn read_long(path: &Path, fixed: &[&str]) -> Result<(Vec<String>, Vec<LongRecord>)> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, 0, e))?.clone();
    expect_header(path, &headers, fixed)?;
    let value_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut out = Vec::new();
    let mut kind: Option<std::mem::Discriminant<TimeKey>> = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, k + 1, e))?;
        if rec.len() != headers.len() {
            return Err(parse_error(path, k + 1, format!("expected {} fields", headers.len())));
        }
        let time = parse_time(&rec[0])
            .ok_or_else(|| parse_error(path, k + 1, format!("unparseable timestamp {:?}", &rec[0])))?;
        let disc = std::mem::discriminant(&time);
        if *kind.get_or_insert(disc) != disc {
            return Err(parse_error(path, k + 1, "mixed integer and date timestamps"));
        }
        let values = rec
            .iter()
            .skip(2)
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    parse_f64(path, k + 1, f).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LongRecord {
            time,
            raw_time: rec[0].to_string(),
            id: rec[1].to_string(),
            values,
        });
    }
    Ok((value_names, out))
}

/// Reads locations, long-format observations (`t,id,value`) and optional
/// long-format covariates (`t,id,z1,…,zm`) into a frame. Time index is the
/// rank of the distinct timestamps; absent `(t, id)` rows and empty values
/// are missing cells.
pub fn load_frame(
    locations_path: &Path,
    obs_path: &Path,
    covariates_path: Option<&Path>,
    metric: DistanceMetric,
) -> Result<SpatioTemporalFrame> {
    let locations = load_locations(locations_path, metric)?;
    let ids = locations.ids().to_vec();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let (_, records) = read_long(obs_path, &["t", "id", "value"])?;
    let mut keys: Vec<TimeKey> = records.iter().map(|r| r.time.clone()).collect();
    keys.sort();
    keys.dedup();
    let rank: HashMap<&TimeKey, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let (n, p) = (keys.len(), locations.len());

    let mut obs = DMatrix::from_element(n, p, f64::NAN);
    let mut seen = DMatrix::from_element(n, p, false);
    for rec in &records {
        let i = *index
            .get(rec.id.as_str())
            .ok_or_else(|| Error::UnknownLocation(rec.id.clone()))?;
        let t = rank[&rec.time];
        if seen[(t, i)] {
            return Err(Error::DuplicateCell {
                time: rec.time.to_string(),
                id: rec.id.clone(),
            });
        }
        seen[(t, i)] = true;
        if let Some(v) = rec.values[0] {
            if !v.is_finite() {
                return Err(parse_error(
                    obs_path,
                    0,
                    format!("non-finite value at {} {}", rec.time, rec.id),
                ));
            }
            obs[(t, i)] = v;
        }
    }
    let mut labels: Vec<Option<String>> = vec![None; n];
    for rec in &records {
        labels[rank[&rec.time]].get_or_insert_with(|| rec.raw_time.clone());
    }
    let labels = labels.into_iter().map(Option::unwrap_or_default).collect();
    let mut frame = SpatioTemporalFrame::new(locations, obs)?.with_times(labels)?;

    if let Some(cpath) = covariates_path {
        let (names, crecs) = read_long(cpath, &["t", "id"])?;
        if names.is_empty() {
            return Err(parse_error(cpath, 0, "covariate file has no value columns"));
        }
        let m = names.len();
        let mut blocks = vec![DMatrix::from_element(n, m, f64::NAN); p];
        let mut cseen = DMatrix::from_element(n, p, false);
        for rec in &crecs {
            let i = *index
                .get(rec.id.as_str())
                .ok_or_else(|| Error::UnknownLocation(rec.id.clone()))?;
            let t = *rank.get(&rec.time).ok_or_else(|| {
                parse_error(
                    cpath,
                    0,
                    format!("covariate time {} absent from observations", rec.time),
                )
            })?;
            if cseen[(t, i)] {
                return Err(Error::DuplicateCell {
                    time: rec.time.to_string(),
                    id: rec.id.clone(),
                });
            }
            cseen[(t, i)] = true;
            for (k, v) in rec.values.iter().enumerate() {
                blocks[i][(t, k)] = v.unwrap_or(f64::NAN);
            }
        }
        frame = frame.with_covariates(names, blocks)?;
    }
    Ok(frame)
}

pub(crate) fn write_err(path: &Path, e: csv::Error) -> Error {
    csv_error(path, 0, e)
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn save_locations(locs: &LocationSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    w.write_record(["id", "x1", "x2"]).map_err(|e| write_err(path, e))?;
    for (id, c) in locs.ids().iter().zip(locs.coords()) {
        w.write_record([id.clone(), c[0].to_string(), c[1].to_string()])
            .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Writes observations in long format with one row per `(t, id)`; missing
/// cells are written with an empty value.
pub fn save_observations(frame: &SpatioTemporalFrame, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    w.write_record(["t", "id", "value"]).map_err(|e| write_err(path, e))?;
    for t in 0..frame.n() {
        for (i, id) in frame.locations().ids().iter().enumerate() {
            let v = if frame.is_observed(t, i) {
                frame.obs()[(t, i)].to_string()
            } else {
                String::new()
            };
            w.write_record([frame.times()[t].as_str(), id.as_str(), v.as_str()])
                .map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn save_covariates(frame: &SpatioTemporalFrame, path: &Path) -> Result<()> {
    let cov = frame
        .covariates()
        .ok_or_else(|| Error::InvalidArgument("frame has no covariates".into()))?;
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    let mut header = vec!["t".to_string(), "id".to_string()];
    header.extend(cov.names.iter().cloned());
    w.write_record(&header).map_err(|e| write_err(path, e))?;
    for t in 0..frame.n() {
        for (i, id) in frame.locations().ids().iter().enumerate() {
            let z = cov.per_location[i].row(t);
            if z.iter().all(|v| v.is_nan()) {
                continue;
            }
            let mut rec = vec![frame.times()[t].clone(), id.clone()];
            rec.extend(z.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            w.write_record(&rec).map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Writes a frame to the three CSV files read by [`load_frame`].
pub fn save_frame(
    frame: &SpatioTemporalFrame,
    locations_path: &Path,
    obs_path: &Path,
    covariates_path: Option<&Path>,
) -> Result<()> {
    save_locations(frame.locations(), locations_path)?;
    save_observations(frame, obs_path)?;
    if let Some(cp) = covariates_path {
        save_covariates(frame, cp)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    const LOCS: &str = "id,x1,x2\na,0,0\nb,1,0\nc,0,1\n";

    #[test]
    fn loads_complete_frame() {
        let dir = tempfile::tempdir().unwrap();
        let l = write(dir.path(), "l.csv", LOCS);
        let mut body = String::from("t,id,value\n");
        for t in 1..=4 {
            for id in ["a", "b", "c"] {
                body.push_str(&format!("{t},{id},{}.5\n", t));
            }
        }
        let o = write(dir.path(), "o.csv", &body);
        let frame = load_frame(&l, &o, None, DistanceMetric::Euclidean).unwrap();
        assert_eq!((frame.n(), frame.p()), (4, 3));
        assert!(frame.is_complete());
    }

    #[test]
    fn absent_row_becomes_missing() {
        let dir = tempfile::tempdir().unwrap();
        let l = write(dir.path(), "l.csv", LOCS);
        let mut body = String::from("t,id,value\n");
        for t in 1..=4 {
            for id in ["a", "b", "c"] {
                if !(t == 2 && id == "b") {
                    body.push_str(&format!("{t},{id},1\n"));
                }
            }
        }
        let o = write(dir.path(), "o.csv", &body);
        let frame = load_frame(&l, &o, None, DistanceMetric::Euclidean).unwrap();
        assert!(frame.missing()[(1, 1)]);
        assert!(frame.obs()[(1, 1)].is_nan());
        assert_eq!(frame.missing_count(), 1);
    }

    #[test]
    fn unknown_and_duplicate_and_bad_value() {
        let dir = tempfile::tempdir().unwrap();
        let l = write(dir.path(), "l.csv", LOCS);
        let o = write(dir.path(), "o.csv", "t,id,value\n1,zz,1\n");
        assert!(matches!(
            load_frame(&l, &o, None, DistanceMetric::Euclidean),
            Err(Error::UnknownLocation(id)) if id == "zz"
        ));
        let o = write(dir.path(), "o.csv", "t,id,value\n1,a,1\n1,a,2\n");
        assert!(matches!(
            load_frame(&l, &o, None, DistanceMetric::Euclidean),
            Err(Error::DuplicateCell { .. })
        ));
        let o = write(dir.path(), "o.csv", "t,id,value\n1,a,abc\n");
        assert!(matches!(
            load_frame(&l, &o, None, DistanceMetric::Euclidean),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn iso_dates_are_ranked() {
        let dir = tempfile::tempdir().unwrap();
        let l = write(dir.path(), "l.csv", LOCS);
        let mut body = String::from("t,id,value\n");
        for (k, d) in ["2020-03-01", "2020-01-01", "2020-02-01"].iter().enumerate() {
            for id in ["a", "b", "c"] {
                body.push_str(&format!("{d},{id},{k}\n"));
            }
        }
        let o = write(dir.path(), "o.csv", &body);
        let frame = load_frame(&l, &o, None, DistanceMetric::Euclidean).unwrap();
        assert_eq!(frame.obs()[(0, 0)], 1.0);
        assert_eq!(frame.obs()[(2, 0)], 0.0);
        assert_eq!(frame.times()[0], "2020-01-01");
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let part = random_partition(5, 11).unwrap();
        assert_eq!((part.set1.len(), part.set2.len()), (2, 3));
        assert_eq!(part, random_partition(5, 11).unwrap());
        let part = random_partition(4, 3).unwrap();
        let mut all: Vec<usize> = part.set1.iter().chain(&part.set2).copied().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(matches!(random_partition(3, 0), Err(Error::TooFewLocations { .. })));
    }

    #[test]
    fn distances() {
        let locs = LocationSet::from_coords(vec![[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let d = pairwise_distances(&locs);
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 0)], 5.0);
        assert_eq!(d[(0, 0)], 0.0);

        let gc = DistanceMetric::GreatCircle { radius: 1.0 };
        let v = gc.distance([0.0, 0.0], [180.0, 0.0]);
        assert!((v - std::f64::consts::PI).abs() < 1e-12);

        let bad = LocationSet::new(
            vec!["a".into(), "b".into()],
            vec![[0.0, 91.0], [0.0, 0.0]],
            DistanceMetric::great_circle(),
        );
        assert!(matches!(bad, Err(Error::InvalidCoordinate { .. })));
    }

    #[test]
    fn sparse_rows_rejected() {
        let locs = LocationSet::from_coords(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let obs = DMatrix::from_row_slice(2, 3, &[1.0, f64::NAN, f64::NAN, 1.0, 2.0, 3.0]);
        assert!(matches!(SpatioTemporalFrame::new(locs, obs), Err(Error::TooSparse(_))));
    }
}
