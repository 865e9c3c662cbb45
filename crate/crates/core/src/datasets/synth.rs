use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, Manifest, Session};
use crate::features::{EventLog, ImuLog, ImuSample, KeyEvent, Sensor};

/// Intra-user noise scale: log-space sd of timings, additive sd of IMU axes.
const NOISE: f64 = 0.1;
const BASE_HOLD: f64 = 0.1;
const BASE_GAP: f64 = 0.18;
const BASE_FREQ: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    pub sessions: usize,
    /// Inter-user profile dispersion in units of the intra-user noise scale.
    pub theta: f64,
    pub seed: u64,
    pub keys_per_session: usize,
    /// IMU samples per second.
    pub sample_rate: f64,
}

impl SynthSpec {
    pub fn new(users: usize, sessions: usize, theta: f64, seed: u64) -> Self {
        Self {
            users,
            sessions,
            theta,
            seed,
            keys_per_session: 100,
            sample_rate: 50.0,
        }
    }
}

struct Axis {
    bias: f64,
    amplitude: f64,
    freq: f64,
    phase: f64,
}

struct Profile {
    hold: f64,
    gap: f64,
    /// Per-key log-space hold offsets for `a..z` and space.
    key_hold: [f64; 27],
    axes: Vec<[Axis; 3]>,
}

fn key_slot(code: u32) -> usize {
    if code == 32 {
        26
    } else {
        (code - 97) as usize
    }
}

fn profile<R: Rng>(rng: &mut R, theta: f64) -> Profile {
    let spread = theta * NOISE;
    let mut z = || rng.sample::<f64, _>(StandardNormal);
    let hold = BASE_HOLD.ln() + spread * z();
    let gap = BASE_GAP.ln() + spread * z();
    let key_hold = std::array::from_fn(|_| 0.5 * spread * z());
    let axes = Sensor::ALL
        .iter()
        .map(|_| {
            std::array::from_fn(|_| Axis {
                bias: spread * z(),
                amplitude: (1.0 + spread * z()).abs(),
                freq: (BASE_FREQ * (1.0 + 0.5 * spread * z())).abs().max(0.2),
                phase: 0.0,
            })
        })
        .collect::<Vec<_>>();
    let mut p = Profile { hold, gap, key_hold, axes };
    for s in &mut p.axes {
        for a in s.iter_mut() {
            a.phase = rng.random::<f64>() * TAU;
        }
    }
    p
}

fn session<R: Rng>(rng: &mut R, p: &Profile, spec: &SynthSpec, user: &str, name: &str) -> Result<Session, DatasetError> {
    let lognormal = |mu: f64| LogNormal::new(mu, NOISE).expect("positive sd");
    let mut t = 0.5;
    let mut events = Vec::with_capacity(spec.keys_per_session);
    for i in 0..spec.keys_per_session {
        let code = if rng.random::<f64>() < 0.15 {
            32
        } else {
            rng.random_range(97..=122)
        };
        if i > 0 {
            t += lognormal(p.gap).sample(rng);
        }
        let hold = lognormal(p.hold + p.key_hold[key_slot(code)]).sample(rng);
        events.push(KeyEvent {
            code,
            press: t,
            release: Some(t + hold),
        });
    }
    let log = EventLog::new(user, name, events)?;
    let end = log.span().expect("non-empty").1 + 0.5;
    let noise = Normal::new(0.0, NOISE).expect("positive sd");
    let mut imu = ImuLog::new();
    let n = (end * spec.sample_rate).ceil() as usize;
    for (s, axes) in Sensor::ALL.iter().zip(&p.axes) {
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 / spec.sample_rate;
                let v = |a: &Axis, e: f64| a.bias + a.amplitude * (TAU * a.freq * t + a.phase).sin() + e;
                ImuSample {
                    t,
                    x: v(&axes[0], noise.sample(rng)),
                    y: v(&axes[1], noise.sample(rng)),
                    z: v(&axes[2], noise.sample(rng)),
                }
            })
            .collect();
        imu.set(*s, samples)?;
    }
    Ok(Session {
        events: log,
        imu: Some(imu),
    })
}

/// Keystroke + three-sensor IMU corpus of `users × sessions` sessions.
///
/// Each user draws one latent profile; sessions add log-normal timing noise
/// and Gaussian IMU noise around it. `theta` scales how far profiles spread
/// relative to that noise.
pub fn synthesize(spec: &SynthSpec) -> Result<Corpus, DatasetError> {
    if spec.users < 2 || spec.sessions < 2 {
        return Err(DatasetError::InvalidSpec(format!(
            "need U ≥ 2 and S ≥ 2, got U={} S={}",
            spec.users, spec.sessions
        )));
    }
    if !(spec.theta >= 0.0 && spec.theta.is_finite()) || spec.keys_per_session < 3 || !(spec.sample_rate > 0.0) {
        return Err(DatasetError::InvalidSpec(
            "theta ≥ 0, at least 3 keys and a positive sample rate required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sessions = BTreeMap::new();
    for u in 0..spec.users {
        let user = format!("u{u:03}");
        let p = profile(&mut rng, spec.theta);
        for s in 0..spec.sessions {
            let name = format!("s{s:02}");
            sessions.insert((user.clone(), name.clone()), session(&mut rng, &p, spec, &user, &name)?);
        }
    }
    Ok(Corpus {
        manifest: Manifest {
            name: "synthetic".into(),
            imu_file: Some("imu.csv".into()),
            sensors: Sensor::ALL.to_vec(),
            ..Manifest::default()
        },
        sessions,
        dropped: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let spec = SynthSpec::new(8, 4, 5.0, 11);
        let c = synthesize(&spec).unwrap();
        assert_eq!(c.sessions.len(), 32);
        assert!(c
            .sessions
            .values()
            .all(|s| s.imu.as_ref().is_some_and(|i| Sensor::ALL.iter().all(|&x| i.has(x)))));
        assert_eq!(synthesize(&spec).unwrap(), c);
        assert_ne!(synthesize(&SynthSpec::new(8, 4, 5.0, 12)).unwrap(), c);
    }

    #[test]
    fn invalid_counts() {
        assert!(synthesize(&SynthSpec::new(1, 4, 5.0, 0)).is_err());
        assert!(synthesize(&SynthSpec::new(4, 1, 5.0, 0)).is_err());
        assert!(synthesize(&SynthSpec::new(4, 4, -1.0, 0)).is_err());
    }
}
