//! Landmark-retrieval evaluation: ground-truth readers, average precision
//! and mean average precision.
//!
//! AP follows the benchmark authors' `compute_ap`: junk images are dropped
//! from the ranking, and each step contributes `recall_delta * (p_prev + p) / 2`
//! with the running precision starting at 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregation::Descriptor;
use crate::error::{CrowError, Result};
use crate::search::{query, query_expand, Index, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Relevance judgements for one query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub query_id: String,
    pub image_id: String,
    pub bbox: Option<BoundingBox>,
    pub good: BTreeSet<String>,
    pub ok: BTreeSet<String>,
    pub junk: BTreeSet<String>,
}

impl GroundTruth {
    pub fn is_positive(&self, id: &str) -> bool {
        self.good.contains(id) || self.ok.contains(id)
    }

    pub fn positive_count(&self) -> usize {
        self.good.len() + self.ok.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive_count() == 0 {
            return Err(CrowError::Data(format!(
                "query '{}' has no good or ok images",
                self.query_id
            )));
        }
        let overlap = self
            .good
            .intersection(&self.ok)
            .chain(self.good.intersection(&self.junk))
            .chain(self.ok.intersection(&self.junk))
            .next();
        if let Some(id) = overlap {
            return Err(CrowError::Data(format!(
                "query '{}': image '{id}' appears in more than one of good/ok/junk",
                self.query_id
            )));
        }
        Ok(())
    }
}

/// Strips `oxc1_`-style collection prefixes used in Oxford query files.
fn normalize_image_id(raw: &str) -> &str {
    if let Some(rest) = raw.strip_prefix("oxc") {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && rest.as_bytes().get(digits) == Some(&b'_') {
            return &rest[digits + 1..];
        }
    }
    raw
}

fn read_id_set(path: &Path, query: &str) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CrowError::MissingFile(path.to_path_buf()),
        _ => CrowError::Io(e),
    })?;
    let mut set = BTreeSet::new();
    for line in text.lines() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        if !set.insert(id.to_string()) {
            warn!("{query}: duplicate id '{id}' in {}", path.display());
        }
    }
    Ok(set)
}

fn parse_query_line(text: &str, location: &str) -> Result<(String, BoundingBox)> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| CrowError::Parse {
            location: location.to_string(),
            message: "empty query file".into(),
        })?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(CrowError::Parse {
            location: location.to_string(),
            message: format!(
                "expected 'image-id x1 y1 x2 y2', got {} fields",
                fields.len()
            ),
        });
    }
    let mut coords = [0.0f64; 4];
    for (c, f) in coords.iter_mut().zip(&fields[1..]) {
        *c = f
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CrowError::Parse {
                location: location.to_string(),
                message: format!("malformed bounding-box coordinate '{f}'"),
            })?;
    }
    let bbox = BoundingBox {
        x1: coords[0],
        y1: coords[1],
        x2: coords[2],
        y2: coords[3],
    };
    if bbox.x2 < bbox.x1 || bbox.y2 < bbox.y1 {
        return Err(CrowError::Parse {
            location: location.to_string(),
            message: "bounding box has negative extent".into(),
        });
    }
    Ok((normalize_image_id(fields[0]).to_string(), bbox))
}

/// Reads an Oxford/Paris ground-truth directory: for every
/// `<q>_query.txt` there must be `<q>_good.txt`, `<q>_ok.txt` and
/// `<q>_junk.txt`. Queries are returned sorted by name.
pub fn parse_groundtruth(dir: &Path) -> Result<Vec<GroundTruth>> {
    if !dir.is_dir() {
        return Err(CrowError::MissingFile(dir.to_path_buf()));
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(q) = name.strip_suffix("_query.txt") {
            names.push(q.to_string());
        }
    }
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for q in names {
        let qpath = dir.join(format!("{q}_query.txt"));
        let text = fs::read_to_string(&qpath)?;
        let (image_id, bbox) = parse_query_line(&text, &qpath.display().to_string())?;
        let gt = GroundTruth {
            good: read_id_set(&dir.join(format!("{q}_good.txt")), &q)?,
            ok: read_id_set(&dir.join(format!("{q}_ok.txt")), &q)?,
            junk: read_id_set(&dir.join(format!("{q}_junk.txt")), &q)?,
            query_id: q,
            image_id,
            bbox: Some(bbox),
        };
        gt.validate()?;
        out.push(gt);
    }
    Ok(out)
}

/// Builds Holidays-style ground truth from image ids such as `100200`
/// (a trailing extension is ignored). Images sharing `id / 100` form a
/// group; the member with `id % 100 == 0` is the query, the rest are its
/// positives, and the query image itself is junk.
pub fn holidays_groundtruth<S: AsRef<str>>(image_ids: &[S]) -> Result<Vec<GroundTruth>> {
    let mut groups: BTreeMap<u64, Vec<(u64, String)>> = BTreeMap::new();
    for raw in image_ids {
        let raw = raw.as_ref().trim();
        if raw.is_empty() {
            continue;
        }
        let id = raw.rsplit_once('.').map_or(raw, |(stem, _)| stem);
        let number: u64 = id.parse().map_err(|_| CrowError::Parse {
            location: "holidays image list".into(),
            message: format!("image id '{raw}' is not numeric"),
        })?;
        groups
            .entry(number / 100)
            .or_default()
            .push((number, id.to_string()));
    }
    let mut out = Vec::new();
    for (group, mut members) in groups {
        members.sort();
        members.dedup();
        let Some(qpos) = members.iter().position(|(n, _)| n % 100 == 0) else {
            warn!("holidays group {group} has no query image");
            continue;
        };
        let query_image = members[qpos].1.clone();
        let good: BTreeSet<String> = members
            .iter()
            .filter(|(_, id)| *id != query_image)
            .map(|(_, id)| id.clone())
            .collect();
        if good.is_empty() {
            warn!("holidays query {query_image} has no relevant images");
            continue;
        }
        out.push(GroundTruth {
            query_id: query_image.clone(),
            image_id: query_image.clone(),
            bbox: None,
            good,
            ok: BTreeSet::new(),
            junk: BTreeSet::from([query_image]),
        });
    }
    Ok(out)
}

/// Reads a Holidays image list: a text file with one image name per line,
/// or a directory whose file names are the images.
pub fn read_holidays(path: &Path) -> Result<Vec<GroundTruth>> {
    if path.is_dir() {
        let mut names = Vec::new();
        for entry in fs::read_dir(path)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        holidays_groundtruth(&names)
    } else if path.is_file() {
        let text = fs::read_to_string(path)?;
        let names: Vec<&str> = text.lines().collect();
        holidays_groundtruth(&names)
    } else {
        Err(CrowError::MissingFile(path.to_path_buf()))
    }
}

/// Trapezoidal average precision of a ranking of image ids.
pub fn average_precision_ids<'a>(
    ranked: impl IntoIterator<Item = &'a str>,
    gt: &GroundTruth,
) -> f64 {
    let positives = gt.positive_count();
    if positives == 0 {
        return 0.0;
    }
    let total = positives as f64;
    let mut ap = 0.0f64;
    let mut old_recall = 0.0f64;
    let mut old_precision = 1.0f64;
    let mut hits = 0usize;
    let mut seen = 0usize;
    for id in ranked {
        if gt.junk.contains(id) {
            continue;
        }
        if gt.is_positive(id) {
            hits += 1;
        }
        seen += 1;
        let recall = hits as f64 / total;
        let precision = hits as f64 / seen as f64;
        ap += (recall - old_recall) * (old_precision + precision) / 2.0;
        old_recall = recall;
        old_precision = precision;
    }
    ap
}

pub fn average_precision(ranked: &RankedList, gt: &GroundTruth) -> f64 {
    average_precision_ids(ranked.ids(), gt)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, f64>,
    pub map: f64,
    pub query_expansion: Option<usize>,
    pub index_size: usize,
    pub config: Option<String>,
}

impl EvalReport {
    /// JSON with APs and mAP rounded to 6 decimals.
    pub fn to_json(&self) -> serde_json::Value {
        let round = |v: f64| (v * 1e6).round() / 1e6;
        let per_query: serde_json::Map<String, serde_json::Value> = self
            .per_query
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(round(*v))))
            .collect();
        serde_json::json!({
            "map": round(self.map),
            "queries": self.per_query.len(),
            "query_expansion": self.query_expansion,
            "index_size": self.index_size,
            "config": self.config,
            "per_query": per_query,
        })
    }
}

fn find_query<'a>(
    by_id: &HashMap<&str, &'a Descriptor>,
    gt: &GroundTruth,
) -> Option<&'a Descriptor> {
    by_id
        .get(gt.query_id.as_str())
        .or_else(|| by_id.get(gt.image_id.as_str()))
        .copied()
}

/// Runs every ground-truth query against `idx` and averages the APs.
/// Query descriptors are matched by query id, then by query image id.
pub fn evaluate(
    idx: &Index,
    queries: &[Descriptor],
    groundtruth: &[GroundTruth],
    qe: Option<usize>,
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &Descriptor> = queries.iter().map(|d| (d.id.as_str(), d)).collect();
    let missing: Vec<String> = groundtruth
        .iter()
        .filter(|gt| find_query(&by_id, gt).is_none())
        .map(|gt| gt.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CrowError::MissingQueries(missing));
    }
    let aps: Vec<(String, f64)> = groundtruth
        .par_iter()
        .map(|gt| {
            gt.validate()?;
            let q = find_query(&by_id, gt).expect("checked above");
            let ranked = match qe {
                Some(m) => query_expand(idx, q, m, None)?,
                None => query(idx, q, None)?,
            };
            Ok((gt.query_id.clone(), average_precision(&ranked, gt)))
        })
        .collect::<Result<_>>()?;
    let mut per_query = BTreeMap::new();
    for (id, ap) in aps {
        if per_query.insert(id.clone(), ap).is_some() {
            return Err(CrowError::DuplicateId(id));
        }
    }
    let map = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(EvalReport {
        per_query,
        map,
        query_expansion: qe,
        index_size: idx.len(),
        config: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(good: &[&str], junk: &[&str]) -> GroundTruth {
        GroundTruth {
            query_id: "q".into(),
            image_id: "q".into(),
            good: good.iter().map(|s| s.to_string()).collect(),
            junk: junk.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn perfect_and_swapped() {
        let g = gt(&["p"], &[]);
        assert_eq!(average_precision_ids(["p", "n"], &g), 1.0);
        assert_eq!(average_precision_ids(["n", "p"], &g), 0.25);
    }

    #[test]
    fn junk_is_ignored() {
        let g = gt(&["p1", "p2"], &["j"]);
        let with = average_precision_ids(["p1", "j", "n", "p2"], &g);
        let without = average_precision_ids(["p1", "n", "p2"], &g);
        assert_eq!(with, without);
    }

    #[test]
    fn missing_positive_lowers_ap() {
        let g = gt(&["p1", "p2"], &[]);
        assert!(average_precision_ids(["p1", "n"], &g) < 1.0);
    }

    #[test]
    fn oxford_prefix_stripping() {
        assert_eq!(
            normalize_image_id("oxc1_all_souls_000013"),
            "all_souls_000013"
        );
        assert_eq!(
            normalize_image_id("paris_defense_000605"),
            "paris_defense_000605"
        );
        assert_eq!(normalize_image_id("oxcart_1"), "oxcart_1");
    }

    #[test]
    fn query_line_errors() {
        assert!(parse_query_line("img 1 2 3\n", "f").is_err());
        assert!(parse_query_line("img 1 2 x 4\n", "f").is_err());
        assert!(parse_query_line("img 5 2 3 4\n", "f").is_err());
        let (id, b) = parse_query_line("oxc1_a 1 2.5 3 4\n", "f").unwrap();
        assert_eq!(id, "a");
        assert_eq!(b.y1, 2.5);
    }

    #[test]
    fn validation() {
        assert!(gt(&[], &["j"]).validate().is_err());
        assert!(gt(&["a"], &["a"]).validate().is_err());
        assert!(gt(&["a"], &["b"]).validate().is_ok());
    }

    #[test]
    fn holidays_groups() {
        let ids = [
            "100000.jpg",
            "100001.jpg",
            "100002.jpg",
            "100100.jpg",
            "100101.jpg",
            "100200.jpg",
        ];
        let gts = holidays_groundtruth(&ids).unwrap();
        assert_eq!(gts.len(), 2);
        assert_eq!(gts[0].query_id, "100000");
        assert_eq!(gts[0].good.len(), 2);
        assert!(gts[0].junk.contains("100000"));
        assert!(holidays_groundtruth(&["abc.jpg"]).is_err());
    }
}
