use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::features::{ExtractConfig, Sample};

/// Extracted (unnormalized) samples of a corpus and how they were cut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStore {
    pub extract: ExtractConfig,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    extract: ExtractConfig,
    samples: usize,
}

/// JSON lines: a header line, then one sample per line.
pub fn save_feature_store(store: &FeatureStore, path: &Path) -> Result<(), DatasetError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = StoreHeader {
        extract: store.extract.clone(),
        samples: store.samples.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("plain struct"))?;
    for s in &store.samples {
        writeln!(out, "{}", serde_json::to_string(s).expect("plain struct"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_feature_store(path: &Path) -> Result<FeatureStore, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
    let name = path.display().to_string();
    let bad = |line: u64, e: serde_json::Error| DatasetError::Malformed {
        file: name.clone(),
        line,
        detail: e.to_string(),
    };
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or(DatasetError::EmptyCorpus)??;
    let header: StoreHeader = serde_json::from_str(&first).map_err(|e| bad(1, e))?;
    let mut samples = Vec::with_capacity(header.samples);
    for (i, line) in lines.enumerate() {
        samples.push(serde_json::from_str(&line?).map_err(|e| bad(i as u64 + 2, e))?);
    }
    if samples.len() != header.samples {
        return Err(DatasetError::Malformed {
            file: name,
            line: samples.len() as u64 + 1,
            detail: format!("header announces {} samples, found {}", header.samples, samples.len()),
        });
    }
    Ok(FeatureStore {
        extract: header.extract,
        samples,
    })
}

/// `user,session,window,t_end,e0..e{D-1}` rows.
pub fn write_embeddings_csv<W: Write>(samples: &[Sample], embeddings: &[Vec<f64>], out: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| DatasetError::Io(e.to_string());
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut header = vec!["user".to_string(), "session".into(), "window".into(), "t_end".into()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(err)?;
    for (s, e) in samples.iter().zip(embeddings) {
        let mut row = vec![s.user.clone(), s.session.clone(), s.window.to_string(), s.t_end.to_string()];
        row.extend(e.iter().map(f64::to_string));
        w.write_record(&row).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synthesize, SynthSpec};
    use crate::features::{extract_session, Sensor};

    #[test]
    fn store_round_trip() {
        let corpus = synthesize(&SynthSpec::new(2, 2, 5.0, 1)).unwrap();
        let extract = ExtractConfig {
            window: 20,
            sensors: vec![Sensor::Accelerometer],
            ..Default::default()
        };
        let samples: Vec<Sample> = corpus
            .sessions
            .values()
            .flat_map(|s| extract_session(&s.events, s.imu.as_ref(), &extract).unwrap())
            .collect();
        let store = FeatureStore { extract, samples };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.jsonl");
        save_feature_store(&store, &path).unwrap();
        assert_eq!(load_feature_store(&path).unwrap(), store);

        let mut buf = Vec::new();
        let emb = vec![vec![0.5, 1.5]; store.samples.len()];
        write_embeddings_csv(&store.samples, &emb, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("user,session,window,t_end,e0,e1\n"));
    }
}
