//! Feature CSVs: `sample_id,subject_id,label,roi_tag,descriptor,v0..vN`.
//! Values are written in Rust's shortest round-trip form, so a reload
//! reproduces the matrix bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learn::SampleKey;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub descriptor: String,
    pub keys: Vec<SampleKey>,
    pub roi_tags: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

const FIXED: [&str; 5] = ["sample_id", "subject_id", "label", "roi_tag", "descriptor"];

impl FeatureTable {
    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            super::create_dir(dir)?;
        }
        let d = self.n_features();
        if self.rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!("{}: ragged feature rows", self.descriptor)));
        }
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = FIXED
            .iter()
            .map(|s| s.to_string())
            .chain((0..d).map(|i| format!("v{i}")))
            .collect();
        w.write_record(&header)?;
        for ((k, tag), row) in self.keys.iter().zip(&self.roi_tags).zip(&self.rows) {
            let mut rec = vec![
                k.sample_id.clone(),
                k.subject_id.clone(),
                (k.label as u8).to_string(),
                tag.clone(),
                self.descriptor.clone(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        if header.len() < FIXED.len() || header.iter().zip(FIXED).any(|(a, b)| a != b) {
            return Err(Error::InvalidArgument(format!("{}: not a feature CSV", path.display())));
        }
        let bad = |what: &str| Error::InvalidArgument(format!("{}: bad {what}", path.display()));
        let mut table = FeatureTable {
            descriptor: String::new(),
            keys: Vec::new(),
            roi_tags: Vec::new(),
            rows: Vec::new(),
        };
        for rec in reader.records() {
            let rec = rec?;
            let label = match &rec[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("label")),
            };
            if table.keys.is_empty() {
                table.descriptor = rec[4].to_string();
            } else if rec[4] != table.descriptor {
                return Err(bad("descriptor column (mixed descriptors)"));
            }
            table.keys.push(SampleKey {
                sample_id: rec[0].to_string(),
                subject_id: rec[1].to_string(),
                label,
            });
            table.roi_tags.push(rec[3].to_string());
            let row = rec
                .iter()
                .skip(FIXED.len())
                .map(|v| v.parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<Vec<_>>>()?;
            table.rows.push(row);
        }
        Ok(table)
    }

    /// Inner join on `sample_id`, columns concatenated in argument order and
    /// rows kept in the order of the first table.
    pub fn join(tables: &[FeatureTable]) -> Result<FeatureTable> {
        let (first, rest) = tables
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("no feature tables".into()))?;
        if rest.is_empty() {
            return Ok(first.clone());
        }
        let index: Vec<BTreeMap<&str, usize>> = rest
            .iter()
            .map(|t| t.keys.iter().enumerate().map(|(i, k)| (k.sample_id.as_str(), i)).collect())
            .collect();
        let mut out = FeatureTable {
            descriptor: tables.iter().map(|t| t.descriptor.as_str()).collect::<Vec<_>>().join("+"),
            keys: Vec::new(),
            roi_tags: Vec::new(),
            rows: Vec::new(),
        };
        'rows: for (i, k) in first.keys.iter().enumerate() {
            let mut row = first.rows[i].clone();
            let mut tags = vec![first.roi_tags[i].clone()];
            for (t, idx) in rest.iter().zip(&index) {
                let Some(&j) = idx.get(k.sample_id.as_str()) else {
                    continue 'rows;
                };
                if t.keys[j] != *k {
                    return Err(Error::InvalidArgument(format!(
                        "sample {} has different subject or label across feature files",
                        k.sample_id
                    )));
                }
                row.extend_from_slice(&t.rows[j]);
                tags.push(t.roi_tags[j].clone());
            }
            out.keys.push(k.clone());
            out.roi_tags.push(tags.join("+"));
            out.rows.push(row);
        }
        let dropped = first.keys.len() - out.keys.len();
        if dropped > 0 {
            log::warn!("join dropped {dropped} samples missing from some feature file");
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(id: &str, label: bool) -> SampleKey {
        SampleKey {
            sample_id: id.into(),
            subject_id: format!("subj_{id}"),
            label,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let t = FeatureTable {
            descriptor: "LBP".into(),
            keys: vec![key("a", true), key("b", false)],
            roi_tags: vec!["StandardRect".into(); 2],
            rows: vec![vec![0.1 + 0.2, 1e-300, -0.0], vec![1.0 / 3.0, f64::MAX, 5e-324]],
        };
        let p = dir.path().join("f.csv");
        t.write(&p).unwrap();
        let back = FeatureTable::read(&p).unwrap();
        assert_eq!(back, t);
        for (a, b) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn join_is_inner_and_ordered() {
        let a = FeatureTable {
            descriptor: "LBP".into(),
            keys: vec![key("a", true), key("b", false), key("c", true)],
            roi_tags: vec!["X".into(); 3],
            rows: vec![vec![1.0], vec![2.0], vec![3.0]],
        };
        let b = FeatureTable {
            descriptor: "HOG".into(),
            keys: vec![key("c", true), key("a", true)],
            roi_tags: vec!["Y".into(); 2],
            rows: vec![vec![30.0], vec![10.0]],
        };
        let j = FeatureTable::join(&[a, b.clone()]).unwrap();
        assert_eq!(j.descriptor, "LBP+HOG");
        assert_eq!(j.rows, vec![vec![1.0, 10.0], vec![3.0, 30.0]]);
        assert_eq!(j.roi_tags[0], "X+Y");

        let mut clash = b;
        clash.keys[0].label = false;
        let a2 = FeatureTable {
            descriptor: "LBP".into(),
            keys: vec![key("c", true)],
            roi_tags: vec!["X".into()],
            rows: vec![vec![1.0]],
        };
        assert!(FeatureTable::join(&[a2, clash]).is_err());
    }
}
