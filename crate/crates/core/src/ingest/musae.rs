//! The MUSAE social-network release layout, one region per directory:
//!
//! * `*_edges.csv` with header `from,to`
//! * `*_features.json`: an object mapping node id (as a string) to a list of
//!   integer feature ids
//! * `*_target.csv` with an `id` column, an optional `new_id` column and the
//!   label column. When `new_id` exists it is the node id used by the edge
//!   and feature files.
//!
//! Features become multi-hot rows, edges are stored in both directions.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use super::IngestError;
use crate::graph::{build_bundle_with_classes, GraphBundle};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MusaeOptions {
    /// Target column holding the class.
    pub label_column: String,
    /// Width of the multi-hot vocabulary. `None` uses the largest feature id
    /// in the file plus one; set it to share a vocabulary across regions.
    pub feature_dim: Option<usize>,
}

impl Default for MusaeOptions {
    fn default() -> Self {
        Self {
            label_column: "mature".to_string(),
            feature_dim: None,
        }
    }
}

fn find(dir: &Path, suffix: &str) -> Result<PathBuf, IngestError> {
    let entries = fs::read_dir(dir).map_err(|e| IngestError::io(dir, e))?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(suffix))
        })
        .collect();
    hits.sort();
    match hits.len() {
        1 => Ok(hits.pop().expect("one hit")),
        0 => Err(IngestError::Missing {
            path: dir.to_path_buf(),
            message: format!("no file ending in `{suffix}`"),
        }),
        _ => Err(IngestError::Missing {
            path: dir.to_path_buf(),
            message: format!("several files end in `{suffix}`; keep one region per directory"),
        }),
    }
}

fn parse_label(raw: &str) -> Option<LabelValue> {
    match raw.to_ascii_lowercase().as_str() {
        "true" => Some(LabelValue::Int(1)),
        "false" => Some(LabelValue::Int(0)),
        s => match s.parse::<usize>() {
            Ok(i) => Some(LabelValue::Int(i)),
            Err(_) => (!s.is_empty()).then(|| LabelValue::Text(raw.to_string())),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum LabelValue {
    Int(usize),
    Text(String),
}

/// Parse one MUSAE region directory.
pub fn parse_musae(dir: &Path, opts: &MusaeOptions) -> Result<GraphBundle, IngestError> {
    // Targets.
    let path = find(dir, "_target.csv")?;
    let file = File::open(&path).map_err(|e| IngestError::io(&path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| IngestError::malformed(&path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("new_id")
        .or_else(|| col("id"))
        .ok_or_else(|| IngestError::malformed(&path, 1, "no `id` or `new_id` column"))?;
    let label_col = col(&opts.label_column).ok_or_else(|| {
        IngestError::malformed(&path, 1, format!("no `{}` column", opts.label_column))
    })?;
    let mut raw_labels: BTreeMap<usize, LabelValue> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::malformed(&path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: usize = rec
            .get(id_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IngestError::malformed(&path, line, "bad node id"))?;
        let label = rec
            .get(label_col)
            .and_then(parse_label)
            .ok_or_else(|| IngestError::malformed(&path, line, "bad label"))?;
        if raw_labels.insert(id, label).is_some() {
            return Err(IngestError::malformed(&path, line, format!("node {id} listed twice")));
        }
    }
    let n = raw_labels.len();
    if let Some((&max, _)) = raw_labels.iter().next_back() {
        if max + 1 != n {
            return Err(IngestError::malformed(
                &path,
                0,
                format!("node ids are not dense: {n} rows but largest id {max}"),
            ));
        }
    }
    let mut classes: Vec<&LabelValue> = raw_labels.values().collect();
    classes.sort();
    classes.dedup();
    let all_int = classes.iter().all(|c| matches!(c, LabelValue::Int(_)));
    let labels: Vec<usize> = if all_int {
        raw_labels
            .values()
            .map(|v| match v {
                LabelValue::Int(i) => *i,
                LabelValue::Text(_) => unreachable!("all labels are integers"),
            })
            .collect()
    } else {
        let index: HashMap<&LabelValue, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        raw_labels.values().map(|v| index[v]).collect()
    };
    let class_count = labels.iter().max().map_or(0, |m| m + 1).max(2);

    // Features.
    let fpath = find(dir, "_features.json")?;
    let text = fs::read_to_string(&fpath).map_err(|e| IngestError::io(&fpath, e))?;
    let map: HashMap<String, Vec<usize>> = serde_json::from_str(&text)
        .map_err(|e| IngestError::malformed(&fpath, e.line() as u64, e.to_string()))?;
    let mut lists: Vec<Option<&Vec<usize>>> = vec![None; n];
    for (k, ids) in &map {
        let v: usize = k
            .parse()
            .map_err(|_| IngestError::malformed(&fpath, 0, format!("key `{k}` is not a node id")))?;
        if v >= n {
            return Err(IngestError::malformed(&fpath, 0, format!("node {v} has no target row")));
        }
        lists[v] = Some(ids);
    }
    let max_id = map.values().flatten().copied().max();
    let d = match opts.feature_dim {
        Some(d) => {
            if let Some(m) = max_id.filter(|&m| m >= d) {
                return Err(IngestError::malformed(
                    &fpath,
                    0,
                    format!("feature id {m} exceeds feature_dim {d}"),
                ));
            }
            d
        }
        None => max_id.map_or(1, |m| m + 1),
    };
    let mut x = Matrix::zeros(n, d);
    for (v, ids) in lists.iter().enumerate() {
        let ids = ids.ok_or_else(|| IngestError::Missing {
            path: fpath.clone(),
            message: format!("node {v} has no feature entry"),
        })?;
        for &f in ids {
            x.set(v, f, 1.0);
        }
    }

    // Edges.
    let epath = find(dir, "_edges.csv")?;
    let file = File::open(&epath).map_err(|e| IngestError::io(&epath, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let h = rdr
        .headers()
        .map_err(|e| IngestError::malformed(&epath, 1, e.to_string()))?;
    if h.iter().collect::<Vec<_>>() != ["from", "to"] {
        return Err(IngestError::malformed(&epath, 1, "expected header `from,to`"));
    }
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::malformed(&epath, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = |i: usize| -> Result<usize, IngestError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| IngestError::malformed(&epath, line, "bad node id"))
        };
        let (a, b) = (parse(0)?, parse(1)?);
        for v in [a, b] {
            if v >= n {
                return Err(IngestError::Missing {
                    path: epath.clone(),
                    message: format!("line {line}: node {v} has no features or target"),
                });
            }
        }
        edges.push((a, b));
        edges.push((b, a));
    }
    Ok(build_bundle_with_classes(&edges, x, labels, None, class_count)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) {
        fs::write(dir.join("musae_XX_edges.csv"), "from,to\n0,1\n1,2\n2,0\n1,0\n").unwrap();
        fs::write(
            dir.join("musae_XX_features.json"),
            r#"{"0":[0,3],"1":[2],"2":[],"3":[1,3]}"#,
        )
        .unwrap();
        fs::write(
            dir.join("musae_XX_target.csv"),
            "id,days,mature,views,partner,new_id\n900,1,True,5,False,2\n901,1,False,5,False,0\n902,1,True,5,False,1\n903,1,False,5,False,3\n",
        )
        .unwrap();
    }

    #[test]
    fn toy_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let b = parse_musae(dir.path(), &MusaeOptions::default()).unwrap();
        assert_eq!(b.num_nodes(), 4);
        assert_eq!(b.feature_dim(), 4);
        assert_eq!(b.features().row(0), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(b.features().row(1), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(b.features().row(2), &[0.0; 4]);
        assert_eq!(b.labels(), &[0, 1, 1, 0]);
        assert_eq!(b.class_count(), 2);
        assert!(b.is_symmetric());
        assert_eq!(b.num_edges(), 6);
    }

    #[test]
    fn shared_vocabulary_and_missing_node() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let opts = MusaeOptions {
            feature_dim: Some(10),
            ..MusaeOptions::default()
        };
        assert_eq!(parse_musae(dir.path(), &opts).unwrap().feature_dim(), 10);
        fs::write(dir.path().join("musae_XX_edges.csv"), "from,to\n0,7\n").unwrap();
        assert!(matches!(
            parse_musae(dir.path(), &MusaeOptions::default()),
            Err(IngestError::Missing { .. })
        ));
    }
}
