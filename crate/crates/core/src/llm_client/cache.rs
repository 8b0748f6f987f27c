//! JSON-lines store of view samples, one record per (date, ticker).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::views::{provide_views, AssetContext, SamplingConfig, ViewError, ViewLibrary, ViewProvider, ViewSamples};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: line {line}: {reason}")]
    Integrity { path: PathBuf, line: usize, reason: String },
    #[error("cache does not cover {} (date, ticker) pairs, first {}", missing.len(), missing.first().map(|(d, t)| format!("{d} {t}")).unwrap_or_default())]
    Coverage { missing: Vec<(NaiveDate, String)> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    View(#[from] ViewError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub date: NaiveDate,
    pub ticker: String,
    pub samples: Vec<f64>,
}

/// In-memory view of a cache file plus an append handle. Single writer.
#[derive(Debug)]
pub struct ViewCache {
    path: PathBuf,
    records: BTreeMap<(NaiveDate, String), Vec<f64>>,
    appended: usize,
}

impl ViewCache {
    /// Read `path`, creating nothing if it does not exist yet.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        if path.exists() {
            let io = |source| CacheError::Io {
                path: path.clone(),
                source,
            };
            let file = File::open(&path).map_err(io)?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let integrity = |reason: String| CacheError::Integrity {
                    path: path.clone(),
                    line: i + 1,
                    reason,
                };
                let record: CacheRecord = serde_json::from_str(&line).map_err(|e| integrity(e.to_string()))?;
                if record.samples.len() < 2 || record.samples.iter().any(|x| !x.is_finite()) {
                    return Err(integrity("record needs at least two finite samples".into()));
                }
                let key = (record.date, record.ticker);
                if records.contains_key(&key) {
                    return Err(integrity(format!("duplicate record for {} {}", key.0, key.1)));
                }
                records.insert(key, record.samples);
            }
        }
        Ok(Self {
            path,
            records,
            appended: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records written through this handle since it was opened.
    pub fn appended(&self) -> usize {
        self.appended
    }

    pub fn get(&self, date: NaiveDate, ticker: &str) -> Option<&[f64]> {
        self.records.get(&(date, ticker.to_string())).map(Vec::as_slice)
    }

    /// Append records in order, flushing once at the end.
    pub fn append(&mut self, records: &[CacheRecord]) -> Result<(), CacheError> {
        if records.is_empty() {
            return Ok(());
        }
        let io = |source| CacheError::Io {
            path: self.path.clone(),
            source,
        };
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?;
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).expect("cache record serializes"));
            buf.push('\n');
        }
        file.write_all(buf.as_bytes()).map_err(io)?;
        file.flush().map_err(io)?;
        for r in records {
            self.records.insert((r.date, r.ticker.clone()), r.samples.clone());
        }
        self.appended += records.len();
        Ok(())
    }

    fn lookup(&self, date: NaiveDate, ticker: &str, n_samples: usize) -> Result<Option<Vec<f64>>, CacheError> {
        match self.get(date, ticker) {
            None => Ok(None),
            Some(s) if s.len() == n_samples => Ok(Some(s.to_vec())),
            Some(s) => Err(CacheError::Integrity {
                path: self.path.clone(),
                line: 0,
                reason: format!("{date} {ticker}: cached {} samples, run expects {n_samples}", s.len()),
            }),
        }
    }

    /// Samples for every (date, ticker); coverage error listing the gaps.
    pub fn library(&self, dates: &[NaiveDate], tickers: &[String], n_samples: usize) -> Result<ViewLibrary, CacheError> {
        let mut lib = ViewLibrary::default();
        let mut missing = Vec::new();
        for &d in dates {
            let mut per_asset = Vec::with_capacity(tickers.len());
            for t in tickers {
                match self.lookup(d, t, n_samples)? {
                    Some(s) => per_asset.push(s),
                    None => missing.push((d, t.clone())),
                }
            }
            if per_asset.len() == tickers.len() {
                lib.insert(ViewSamples::new(d, tickers.to_vec(), per_asset)?);
            }
        }
        if !missing.is_empty() {
            return Err(CacheError::Coverage { missing });
        }
        Ok(lib)
    }
}

/// Serve samples from the cache, querying the provider only for missing
/// tickers and appending what it returns.
pub fn cached_batch(
    provider: &dyn ViewProvider,
    as_of: NaiveDate,
    contexts: &[AssetContext],
    sampling: &SamplingConfig,
    cache: &mut ViewCache,
) -> Result<ViewSamples, CacheError> {
    let n = sampling.n_samples;
    let mut per_asset: Vec<Option<Vec<f64>>> = Vec::with_capacity(contexts.len());
    let mut missing = Vec::new();
    for c in contexts {
        let hit = cache.lookup(as_of, &c.meta.ticker, n)?;
        if hit.is_none() {
            missing.push(c.clone());
        }
        per_asset.push(hit);
    }
    if !missing.is_empty() {
        let fresh = provide_views(provider, as_of, &missing, sampling)?;
        let records: Vec<CacheRecord> = fresh
            .tickers
            .iter()
            .zip(&fresh.per_asset)
            .map(|(t, s)| CacheRecord {
                date: as_of,
                ticker: t.clone(),
                samples: s.clone(),
            })
            .collect();
        cache.append(&records)?;
        let mut fresh_iter = fresh.per_asset.into_iter();
        for slot in per_asset.iter_mut().filter(|s| s.is_none()) {
            *slot = fresh_iter.next();
        }
    }
    let tickers = contexts.iter().map(|c| c.meta.ticker.clone()).collect();
    let per_asset = per_asset.into_iter().map(|s| s.expect("every slot filled")).collect();
    Ok(ViewSamples::new(as_of, tickers, per_asset)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 9, 3).unwrap()
    }

    #[test]
    fn truncated_line_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("views.jsonl");
        std::fs::write(
            &path,
            "{\"date\":\"2024-09-03\",\"ticker\":\"A\",\"samples\":[0.1,0.2]}\n{\"date\":\"2024-09-03\",\"ticker\":\"B\",\"samp",
        )
        .unwrap();
        match ViewCache::open(&path) {
            Err(CacheError::Integrity { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_records_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("views.jsonl");
        let line = "{\"date\":\"2024-09-03\",\"ticker\":\"A\",\"samples\":[0.1,0.2]}\n";
        std::fs::write(&path, line.repeat(2)).unwrap();
        assert!(matches!(ViewCache::open(&path), Err(CacheError::Integrity { line: 2, .. })));
    }

    #[test]
    fn sample_count_mismatch_is_not_requeried() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = ViewCache::open(dir.path().join("v.jsonl")).unwrap();
        cache
            .append(&[CacheRecord {
                date: date(),
                ticker: "A".into(),
                samples: vec![0.1, 0.2],
            }])
            .unwrap();
        let err = cache.library(&[date()], &["A".to_string()], 3).unwrap_err();
        assert!(matches!(err, CacheError::Integrity { .. }));
        let err = cache.library(&[date()], &["B".to_string()], 2).unwrap_err();
        assert!(matches!(err, CacheError::Coverage { ref missing } if missing.len() == 1));
    }

    proptest! {
        #[test]
        fn records_round_trip_exactly(samples in proptest::collection::vec(-100.0f64..100.0, 2..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("v.jsonl");
            let mut cache = ViewCache::open(&path).unwrap();
            cache.append(&[CacheRecord { date: date(), ticker: "X".into(), samples: samples.clone() }]).unwrap();
            let reread = ViewCache::open(&path).unwrap();
            prop_assert_eq!(reread.get(date(), "X").unwrap(), &samples[..]);
        }
    }
}
