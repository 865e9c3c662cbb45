use super::{EventLog, FeatureError, FeatureSchema, FeatureSequence, KeyEvent, SchemaKind};

/// Keystroke rows per sequence unless configured otherwise.
pub const DEFAULT_WINDOW: usize = 50;

/// Timing features of key `i` relative to key `j > i`.
struct Gram {
    du: f64,
    ud: f64,
    dd: f64,
    uu: f64,
}

fn gram(a: &KeyEvent, b: &KeyEvent) -> Gram {
    let (ra, rb) = (a.release.unwrap_or(a.press), b.release.unwrap_or(b.press));
    Gram {
        du: rb - a.press,
        ud: b.press - ra,
        dd: b.press - a.press,
        uu: rb - ra,
    }
}

fn ascii(code: u32) -> f64 {
    (code as f64 / 255.0).clamp(0.0, 1.0)
}

/// Per-key hold latency, di-gram and tri-gram timings and normalized key code.
///
/// Row `i` looks forward: di-grams pair key `i` with `i + 1`, tri-grams span
/// keys `i..=i + 2`. Missing partners leave zeros, as do padding rows past
/// the end of the log. Logs longer than `window` keep their first `window` keys.
pub fn extract_keystroke_features(log: &EventLog, schema: &FeatureSchema, window: usize) -> Result<FeatureSequence, FeatureError> {
    if window == 0 {
        return Err(FeatureError::ZeroWindow);
    }
    let events = log.events();
    if events.is_empty() {
        return Err(FeatureError::EmptyLog(log.session.clone()));
    }
    let full = match schema.kind {
        SchemaKind::FullKeystroke => true,
        SchemaKind::HumidbKeystroke => false,
        SchemaKind::Imu => {
            return Err(FeatureError::WrongSchema {
                schema: schema.name(),
                wanted: "keystroke",
            })
        }
    };
    let events = &events[..events.len().min(window)];
    if full && !events.iter().all(|e| e.release.is_some()) {
        return Err(FeatureError::MissingRelease(log.session.clone()));
    }

    let m = schema.channels();
    let mut values = vec![0.0; window * m];
    for (i, e) in events.iter().enumerate() {
        let row = &mut values[i * m..(i + 1) * m];
        let di = events.get(i + 1).map(|b| gram(e, b));
        let tri = events.get(i + 2).map(|c| gram(e, c));
        if full {
            row[0] = e.release.expect("checked") - e.press;
            if let Some(g) = di {
                row[1..5].copy_from_slice(&[g.du, g.ud, g.dd, g.uu]);
            }
            if let Some(g) = tri {
                row[5..9].copy_from_slice(&[g.du, g.ud, g.dd, g.uu]);
            }
            row[9] = ascii(e.code);
        } else {
            row[0] = di.map_or(0.0, |g| g.dd);
            row[1] = tri.map_or(0.0, |g| g.dd);
            row[2] = ascii(e.code);
        }
    }
    Ok(FeatureSequence {
        rows: window,
        schema: schema.clone(),
        user: log.user.clone(),
        session: log.session.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(code: u32, press: f64, release: Option<f64>) -> KeyEvent {
        KeyEvent { code, press, release }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn single_event_has_no_gram_features() {
        let log = EventLog::new("u", "s", vec![ev(65, 0.0, Some(0.1))]).unwrap();
        let seq = extract_keystroke_features(&log, &FeatureSchema::full_keystroke(), 50).unwrap();
        assert_eq!(seq.rows, 50);
        assert_eq!(seq.values.len(), 500);
        let want = [0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 65.0 / 255.0];
        for (g, w) in seq.row(0).iter().zip(want) {
            assert!(close(*g, w));
        }
        assert!(seq.values[10..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn digram_timings() {
        let log = EventLog::new("u", "s", vec![ev(65, 0.0, Some(0.1)), ev(66, 0.15, Some(0.3))]).unwrap();
        let seq = extract_keystroke_features(&log, &FeatureSchema::full_keystroke(), 4).unwrap();
        let r = seq.row(0);
        assert!(close(r[1], 0.30), "DU");
        assert!(close(r[2], 0.05), "UD");
        assert!(close(r[3], 0.15), "DD");
        assert!(close(r[4], 0.20), "UU");
        // Second key has no forward partner.
        assert!(seq.row(1)[1..9].iter().all(|&v| v == 0.0));
        assert!(close(seq.row(1)[0], 0.15));
    }

    #[test]
    fn trigram_timings() {
        let log = EventLog::new(
            "u",
            "s",
            vec![ev(65, 0.0, Some(0.1)), ev(66, 0.15, Some(0.3)), ev(67, 0.4, Some(0.45))],
        )
        .unwrap();
        let seq = extract_keystroke_features(&log, &FeatureSchema::full_keystroke(), 3).unwrap();
        let r = seq.row(0);
        assert!(close(r[5], 0.45), "DU_tri");
        assert!(close(r[6], 0.30), "UD_tri");
        assert!(close(r[7], 0.40), "DD_tri");
        assert!(close(r[8], 0.35), "UU_tri");
    }

    #[test]
    fn humidb_subset_without_release_times() {
        let log = EventLog::new("u", "s", vec![ev(97, 0.0, None), ev(98, 0.2, None), ev(99, 0.5, None)]).unwrap();
        assert!(matches!(
            extract_keystroke_features(&log, &FeatureSchema::full_keystroke(), 5),
            Err(FeatureError::MissingRelease(_))
        ));
        let seq = extract_keystroke_features(&log, &FeatureSchema::humidb_keystroke(), 5).unwrap();
        assert_eq!(seq.cols(), 3);
        assert!(close(seq.get(0, 0), 0.2));
        assert!(close(seq.get(0, 1), 0.5));
        assert!(close(seq.get(0, 2), 97.0 / 255.0));
        assert!(close(seq.get(1, 0), 0.3));
        assert_eq!(seq.get(1, 1), 0.0);
    }

    #[test]
    fn truncates_long_logs_and_clamps_codes() {
        let events = (0..10).map(|i| ev(300, i as f64, Some(i as f64 + 0.5))).collect();
        let log = EventLog::new("u", "s", events).unwrap();
        let seq = extract_keystroke_features(&log, &FeatureSchema::full_keystroke(), 4).unwrap();
        assert_eq!(seq.rows, 4);
        assert_eq!(seq.get(3, 9), 1.0);
        // Truncation happens before pairing, so the last row has no partner.
        assert_eq!(seq.get(3, 3), 0.0);
    }

    #[test]
    fn errors() {
        let empty = EventLog::new("u", "s", vec![]).unwrap();
        assert!(matches!(
            extract_keystroke_features(&empty, &FeatureSchema::full_keystroke(), 5),
            Err(FeatureError::EmptyLog(_))
        ));
        let log = EventLog::new("u", "s", vec![ev(65, 0.0, Some(0.1))]).unwrap();
        assert!(extract_keystroke_features(&log, &FeatureSchema::imu(&[]), 5).is_err());
        assert!(extract_keystroke_features(&log, &FeatureSchema::full_keystroke(), 0).is_err());
    }

    proptest! {
        // Non-overlapping typing: each key released before the next is pressed.
        #[test]
        fn timings_nonnegative_for_sequential_typing(
            keys in prop::collection::vec((1u32..200, 0.01f64..0.3, 0.01f64..0.5), 1..40),
            window in 1usize..60,
        ) {
            let mut t = 0.0;
            let mut events = Vec::new();
            for (code, hold, gap) in keys {
                events.push(ev(code, t, Some(t + hold)));
                t += hold + gap;
            }
            let log = EventLog::new("u", "s", events).unwrap();
            let seq = extract_keystroke_features(&log, &FeatureSchema::full_keystroke(), window).unwrap();
            prop_assert_eq!(seq.values.len(), window * 10);
            prop_assert!(seq.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}
