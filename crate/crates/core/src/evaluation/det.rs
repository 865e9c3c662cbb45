use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EvalError, ProtocolScores};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Error rates at every distinct score, ascending in threshold.
///
/// The first point sits below every score (threshold `-inf`, nothing accepted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
    pub eer: f64,
    pub eer_threshold: f64,
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Count of sorted values `<= t`.
fn count_le(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&v| v <= t)
}

pub fn compute_det(genuine: &[f64], impostor: &[f64]) -> Result<DetCurve, EvalError> {
    if genuine.is_empty() {
        return Err(EvalError::EmptyScores("genuine"));
    }
    if impostor.is_empty() {
        return Err(EvalError::EmptyScores("impostor"));
    }
    let (g, im) = (sorted(genuine), sorted(impostor));
    let mut thresholds: Vec<f64> = g.iter().chain(&im).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (ng, ni) = (g.len() as f64, im.len() as f64);
    let mut points = vec![DetPoint {
        threshold: f64::NEG_INFINITY,
        far: 0.0,
        frr: 1.0,
    }];
    points.extend(thresholds.iter().map(|&t| DetPoint {
        threshold: t,
        far: count_le(&im, t) as f64 / ni,
        frr: 1.0 - count_le(&g, t) as f64 / ng,
    }));

    // FAR - FRR rises from -1 to +1; interpolate at its first non-negative point.
    let j = points.iter().position(|p| p.far >= p.frr).expect("last point has FRR 0");
    let cur = points[j];
    let (eer, eer_threshold) = if cur.far == cur.frr {
        (cur.far, cur.threshold)
    } else {
        let prev = points[j - 1];
        let (d0, d1) = (prev.far - prev.frr, cur.far - cur.frr);
        let lambda = -d0 / (d1 - d0);
        let eer = prev.far + lambda * (cur.far - prev.far);
        let t = if prev.threshold.is_finite() {
            prev.threshold + lambda * (cur.threshold - prev.threshold)
        } else {
            cur.threshold
        };
        (eer, t)
    };
    Ok(DetCurve {
        points,
        eer,
        eer_threshold,
    })
}

/// Mean over claimed identities of each identity's own EER.
/// Identities without both genuine and impostor attempts are skipped.
pub fn per_user_eer(scores: &ProtocolScores) -> Result<f64, EvalError> {
    let mut by_user: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &scores.records {
        let e = by_user.entry(&r.claimed).or_default();
        if r.genuine { &mut e.0 } else { &mut e.1 }.push(r.score);
    }
    let eers: Vec<f64> = by_user
        .values()
        .filter(|(g, i)| !g.is_empty() && !i.is_empty())
        .map(|(g, i)| compute_det(g, i).map(|c| c.eer))
        .collect::<Result<_, _>>()?;
    if eers.is_empty() {
        return Err(EvalError::NoComparisons("per-user"));
    }
    Ok(eers.iter().sum::<f64>() / eers.len() as f64)
}

pub fn write_det_csv<W: Write>(curve: &DetCurve, mut out: W) -> Result<(), EvalError> {
    writeln!(out, "threshold,far,frr")?;
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.threshold, p.far, p.frr)?;
    }
    Ok(())
}

/// FRR against FAR on linear axes, with the EER point marked.
pub fn write_det_svg<W: Write>(curve: &DetCurve, mut out: W) -> Result<(), EvalError> {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let x = |far: f64| PAD + far * SIZE;
    let y = |frr: f64| PAD + (1.0 - frr) * SIZE;
    let mut path = String::new();
    for (i, p) in curve.points.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(path, "{cmd}{:.2},{:.2} ", x(p.far), y(p.frr));
    }
    let full = SIZE + 2.0 * PAD;
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    )?;
    writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    )?;
    writeln!(
        out,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="grey" stroke-dasharray="4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    )?;
    writeln!(
        out,
        r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        path.trim_end()
    )?;
    writeln!(
        out,
        r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="crimson"/>"#,
        x(curve.eer),
        y(curve.eer)
    )?;
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">FAR</text>"#,
        PAD + SIZE / 2.0,
        full - 10.0
    )?;
    writeln!(
        out,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">FRR</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    )?;
    writeln!(
        out,
        r#"<text x="{}" y="24" font-size="12" text-anchor="middle">EER {:.4}</text>"#,
        PAD + SIZE / 2.0,
        curve.eer
    )?;
    writeln!(out, "</svg>")?;
    Ok(())
}
