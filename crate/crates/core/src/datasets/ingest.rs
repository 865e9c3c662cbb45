use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{Corpus, DatasetError, Dropped, Manifest, Session};
use crate::features::{EventLog, ImuLog, ImuSample, KeyEvent, Sensor};

type Key = (String, String);

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn malformed(file: &str, rec: &csv::StringRecord, detail: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        file: file.into(),
        line: rec.position().map_or(0, |p| p.line()),
        detail: detail.into(),
    }
}

fn field<'a>(file: &str, rec: &'a csv::StringRecord, i: usize, name: &str) -> Result<&'a str, DatasetError> {
    match rec.get(i) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(malformed(file, rec, format!("missing {name}"))),
    }
}

fn number<T: std::str::FromStr>(file: &str, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, DatasetError> {
    let s = field(file, rec, i, name)?;
    s.parse().map_err(|_| malformed(file, rec, format!("{name} {s:?} is not a number")))
}

fn read_keystrokes<R: Read>(r: R, manifest: &Manifest) -> Result<BTreeMap<Key, Vec<KeyEvent>>, DatasetError> {
    let file = manifest.keystroke_file.as_str();
    let mut out: BTreeMap<Key, Vec<KeyEvent>> = BTreeMap::new();
    for rec in reader(r).records() {
        let rec = rec.map_err(|e| DatasetError::Malformed {
            file: file.into(),
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let user = field(file, &rec, 0, "user")?.to_string();
        let session = field(file, &rec, 1, "session")?.to_string();
        let code = number(file, &rec, 2, "key_code")?;
        let press: f64 = number(file, &rec, 3, "press_time")?;
        let release = if manifest.release_times {
            Some(number::<f64>(file, &rec, 4, "release_time")?)
        } else {
            None
        };
        if !press.is_finite() || release.is_some_and(|r| !r.is_finite()) {
            return Err(malformed(file, &rec, "non-finite time"));
        }
        out.entry((user, session)).or_default().push(KeyEvent { code, press, release });
    }
    Ok(out)
}

fn read_imu<R: Read>(r: R, file: &str) -> Result<BTreeMap<Key, BTreeMap<Sensor, Vec<ImuSample>>>, DatasetError> {
    let mut out: BTreeMap<Key, BTreeMap<Sensor, Vec<ImuSample>>> = BTreeMap::new();
    for rec in reader(r).records() {
        let rec = rec.map_err(|e| DatasetError::Malformed {
            file: file.into(),
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let user = field(file, &rec, 0, "user")?.to_string();
        let session = field(file, &rec, 1, "session")?.to_string();
        let sensor: Sensor = field(file, &rec, 2, "sensor")?
            .parse()
            .map_err(|e: crate::features::FeatureError| malformed(file, &rec, e.to_string()))?;
        let s = ImuSample {
            t: number(file, &rec, 3, "timestamp")?,
            x: number(file, &rec, 4, "x")?,
            y: number(file, &rec, 5, "y")?,
            z: number(file, &rec, 6, "z")?,
        };
        if ![s.t, s.x, s.y, s.z].iter().all(|v| v.is_finite()) {
            return Err(malformed(file, &rec, "non-finite value"));
        }
        out.entry((user, session)).or_default().entry(sensor).or_default().push(s);
    }
    Ok(out)
}

/// Builds a corpus from in-memory readers. Sessions failing validation or
/// missing a required sensor are dropped and reported, as are users left
/// with no session.
pub fn ingest_readers<K: Read, I: Read>(keystroke: K, imu: Option<I>, manifest: &Manifest) -> Result<Corpus, DatasetError> {
    let events = read_keystrokes(keystroke, manifest)?;
    let mut imu = match (imu, &manifest.imu_file) {
        (Some(r), Some(name)) => read_imu(r, name)?,
        (Some(r), None) => read_imu(r, "imu")?,
        (None, _) => BTreeMap::new(),
    };
    if events.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let all_users: BTreeSet<String> = events.keys().map(|(u, _)| u.clone()).collect();
    let mut sessions = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut drop = |(u, s): &Key, reason: String| {
        dropped.push(Dropped {
            user: u.clone(),
            session: Some(s.clone()),
            reason,
        })
    };
    for (key, mut evs) in events {
        evs.sort_by(|a, b| a.press.total_cmp(&b.press));
        let log = match EventLog::new(key.0.clone(), key.1.clone(), evs) {
            Ok(l) => l,
            Err(e) => {
                drop(&key, e.to_string());
                continue;
            }
        };
        let streams = imu.remove(&key);
        let imu_log = if manifest.sensors.is_empty() {
            None
        } else {
            let mut streams = streams.unwrap_or_default();
            let mut log = ImuLog::new();
            let mut problem = None;
            for &sensor in &manifest.sensors {
                match streams.remove(&sensor) {
                    None => problem = Some(format!("missing {sensor} stream")),
                    Some(mut samples) => {
                        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
                        if let Err(e) = log.set(sensor, samples) {
                            problem = Some(e.to_string());
                        }
                    }
                }
                if problem.is_some() {
                    break;
                }
            }
            if let Some(reason) = problem {
                drop(&key, reason);
                continue;
            }
            Some(log)
        };
        sessions.insert(key, Session { events: log, imu: imu_log });
    }
    for key in imu.keys() {
        drop(key, "IMU data without keystrokes".into());
    }
    let kept: BTreeSet<&String> = sessions.keys().map(|(u, _)| u).collect();
    for u in all_users.iter().filter(|u| !kept.contains(u)) {
        dropped.push(Dropped {
            user: u.clone(),
            session: None,
            reason: "no usable session".into(),
        });
    }
    if sessions.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    Ok(Corpus {
        manifest: manifest.clone(),
        sessions,
        dropped,
    })
}

/// Reads the files named by `manifest` from `dir`.
pub fn ingest(dir: &Path, manifest: &Manifest) -> Result<Corpus, DatasetError> {
    let open = |name: &str| File::open(dir.join(name)).map_err(|e| DatasetError::Io(format!("{}: {e}", dir.join(name).display())));
    let ks = open(&manifest.keystroke_file)?;
    let imu = manifest.imu_file.as_deref().map(open).transpose()?;
    ingest_readers(ks, imu, manifest)
}

/// Writes `manifest.toml` plus the keystroke and IMU files it names.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    let m = &corpus.manifest;
    std::fs::write(dir.join("manifest.toml"), m.to_toml())?;
    let csv_err = |e: csv::Error| DatasetError::Io(e.to_string());

    let mut w = csv::Writer::from_path(dir.join(&m.keystroke_file)).map_err(csv_err)?;
    let mut header = vec!["user", "session", "key_code", "press_time"];
    if m.release_times {
        header.push("release_time");
    }
    w.write_record(&header).map_err(csv_err)?;
    for ((u, s), sess) in &corpus.sessions {
        for e in sess.events.events() {
            let mut row = vec![u.clone(), s.clone(), e.code.to_string(), e.press.to_string()];
            if m.release_times {
                row.push(e.release.map(|r| r.to_string()).unwrap_or_default());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;

    if let Some(name) = &m.imu_file {
        let mut w = csv::Writer::from_path(dir.join(name)).map_err(csv_err)?;
        w.write_record(["user", "session", "sensor", "timestamp", "x", "y", "z"])
            .map_err(csv_err)?;
        for ((u, s), sess) in &corpus.sessions {
            let Some(imu) = &sess.imu else { continue };
            for sensor in Sensor::ALL {
                for p in imu.samples(sensor) {
                    w.write_record([
                        u.clone(),
                        s.clone(),
                        sensor.to_string(),
                        p.t.to_string(),
                        p.x.to_string(),
                        p.y.to_string(),
                        p.z.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const KS: &str = "user,session,key_code,press_time,release_time
u1,s1,97,0.0,0.1
u1,s1,98,0.3,0.35
u1,s2,97,0.0,0.1
u2,s1,99,1.0,1.2
u2,s2,99,1.0,1.2
u3,s1,97,0.5,0.6
u3,s2,97,0.5,0.6
";

    fn manifest() -> Manifest {
        Manifest::default()
    }

    #[test]
    fn fixture_has_six_sessions() {
        let c = ingest_readers(KS.as_bytes(), None::<&[u8]>, &manifest()).unwrap();
        assert_eq!(c.sessions.len(), 6);
        assert_eq!(c.users(), vec!["u1", "u2", "u3"]);
        assert!(c.dropped.is_empty());
    }

    #[test]
    fn empty_file_is_an_error() {
        assert_eq!(
            ingest_readers("".as_bytes(), None::<&[u8]>, &manifest()).unwrap_err(),
            DatasetError::EmptyCorpus
        );
        let header_only = "user,session,key_code,press_time,release_time\n";
        assert!(ingest_readers(header_only.as_bytes(), None::<&[u8]>, &manifest()).is_err());
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = "user,session,key_code,press_time,release_time\nu1,s1,97,0.0,0.1\nu1,s1,x,0.2,0.3\n";
        match ingest_readers(bad.as_bytes(), None::<&[u8]>, &manifest()) {
            Err(DatasetError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn press_only_source_forces_reduced_schema() {
        let m = Manifest::from_toml("name = \"humidb\"\nrelease_times = false\n").unwrap();
        let text = "user,session,key_code,press_time\nu1,s1,97,0.0\nu1,s1,98,0.2\n";
        let c = ingest_readers(text.as_bytes(), None::<&[u8]>, &m).unwrap();
        let log = &c.sessions[&("u1".to_string(), "s1".to_string())].events;
        assert!(log.events().iter().all(|e| e.release.is_none()));
        assert_eq!(m.keystroke_schema(), crate::features::SchemaKind::HumidbKeystroke);
    }

    #[test]
    fn sessions_missing_sensors_are_dropped() {
        let m = Manifest {
            imu_file: Some("imu.csv".into()),
            sensors: vec![Sensor::Accelerometer, Sensor::Gyroscope],
            ..manifest()
        };
        let imu = "user,session,sensor,timestamp,x,y,z
u1,s1,accelerometer,0.0,1,2,3
u1,s1,gyroscope,0.0,1,2,3
u2,s1,accelerometer,0.0,1,2,3
";
        let c = ingest_readers(KS.as_bytes(), Some(imu.as_bytes()), &m).unwrap();
        assert_eq!(c.sessions.len(), 1);
        assert_eq!(c.dropped_users(), 2);
        assert!(c.dropped.iter().any(|d| d.reason.contains("gyroscope")));
    }

    #[test]
    fn write_then_ingest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = ingest_readers(KS.as_bytes(), None::<&[u8]>, &manifest()).unwrap();
        write_corpus(dir.path(), &c).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        let back = ingest(dir.path(), &Manifest::from_toml(&text).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
