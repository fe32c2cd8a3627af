//! Tabular outputs of the screening and evaluation stages, forest-plot data
//! and a static SVG forest plot.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::dist::normal_quantile;
use crate::error::{Result, SurrError};
use crate::pipeline::{MarkerScreen, ScreenReport};
use crate::rank::WithinStudyEstimate;
use crate::signature::EvaluationReport;
use crate::meta::PooledResult;

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| SurrError::io(path, e))?))
}

pub fn write_screen_results<W: Write>(w: W, report: &ScreenReport) -> Result<()> {
    let mut w = writer(w);
    w.write_record([
        "marker", "mu_hat", "tau2_hat", "se", "ci_low", "ci_high", "pi_low", "pi_high", "p_lower",
        "p_upper", "p_tost", "p_adjusted", "significant", "n_studies", "status",
    ])?;
    for m in &report.markers {
        let e = &m.equivalence;
        let p = m.pooled.as_ref();
        w.write_record([
            e.marker_id.clone(),
            opt(p.map(|p| p.mu_hat)),
            opt(p.map(|p| p.tau2_hat)),
            opt(p.map(|p| p.se_pooled)),
            opt(p.map(|p| p.ci_low)),
            opt(p.map(|p| p.ci_high)),
            opt(p.and_then(|p| p.pi_low)),
            opt(p.and_then(|p| p.pi_high)),
            num(e.p_lower),
            num(e.p_upper),
            num(e.p_tost),
            num(e.p_adjusted),
            e.significant.to_string(),
            m.estimates.len().to_string(),
            m.failure.clone().unwrap_or_else(|| "ok".into()),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

struct ForestRow {
    label: String,
    kind: &'static str,
    estimate: f64,
    se: Option<f64>,
    low: f64,
    high: f64,
    weight: Option<f64>,
    n: Option<usize>,
}

fn forest_rows(estimates: &[WithinStudyEstimate], pooled: &PooledResult) -> Vec<ForestRow> {
    let z = normal_quantile(0.5 + pooled.ci_level / 2.0);
    let mut rows: Vec<ForestRow> = estimates
        .iter()
        .zip(&pooled.weights)
        .map(|(e, &w)| ForestRow {
            label: e.study_id.clone(),
            kind: "study",
            estimate: e.delta,
            se: Some(e.se_delta()),
            low: e.delta - z * e.se_delta(),
            high: e.delta + z * e.se_delta(),
            weight: Some(w),
            n: Some(e.n_effective),
        })
        .collect();
    rows.push(ForestRow {
        label: "pooled".into(),
        kind: "pooled",
        estimate: pooled.mu_hat,
        se: Some(pooled.se_pooled),
        low: pooled.ci_low,
        high: pooled.ci_high,
        weight: Some(1.0),
        n: Some(estimates.iter().map(|e| e.n_effective).sum()),
    });
    if let (Some(lo), Some(hi)) = (pooled.pi_low, pooled.pi_high) {
        rows.push(ForestRow {
            label: "prediction".into(),
            kind: "prediction",
            estimate: pooled.mu_hat,
            se: None,
            low: lo,
            high: hi,
            weight: None,
            n: None,
        });
    }
    rows
}

/// Forest-plot data for one pooled marker. Returns `false` for unpooled markers.
pub fn write_forest<W: Write>(w: W, marker: &MarkerScreen) -> Result<bool> {
    let Some(pooled) = &marker.pooled else {
        return Ok(false);
    };
    let mut w = writer(w);
    w.write_record(["label", "kind", "estimate", "se", "ci_low", "ci_high", "weight", "n", "u_y", "u_s"])?;
    for (i, r) in forest_rows(&marker.estimates, pooled).into_iter().enumerate() {
        let est = marker.estimates.get(i).filter(|_| r.kind == "study");
        w.write_record([
            r.label,
            r.kind.to_string(),
            num(r.estimate),
            opt(r.se),
            num(r.low),
            num(r.high),
            opt(r.weight),
            r.n.map_or_else(|| "NA".into(), |n| n.to_string()),
            opt(est.map(|e| e.u_y)),
            opt(est.map(|e| e.u_s)),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(true)
}

/// Static forest plot with the equivalence margin shaded.
pub fn forest_svg(title: &str, estimates: &[WithinStudyEstimate], pooled: &PooledResult, epsilon: f64) -> String {
    let rows = forest_rows(estimates, pooled);
    let (width, row_h, left, right, top) = (640.0, 22.0, 150.0, 40.0, 40.0);
    let height = top + row_h * (rows.len() as f64 + 1.0);
    let lo = rows.iter().map(|r| r.low).fold(-epsilon, f64::min) * 1.1;
    let hi = rows.iter().map(|r| r.high).fold(epsilon, f64::max) * 1.1;
    let x = |v: f64| left + (v - lo) / (hi - lo) * (width - left - right);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="10" y="20" font-weight="bold">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{top}" width="{:.2}" height="{:.2}" fill="#e8f0e8"/>"##,
        x(-epsilon),
        x(epsilon) - x(-epsilon),
        row_h * rows.len() as f64
    );
    let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{top}" x2="{0:.2}" y2="{1:.2}" stroke="gray" stroke-dasharray="3,3"/>"#, x(0.0), top + row_h * rows.len() as f64);
    for (i, r) in rows.iter().enumerate() {
        let y = top + row_h * (i as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="10" y="{:.2}">{}</text>"#, y + 4.0, escape(&r.label));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#, x(r.low), x(r.high));
        match r.kind {
            "study" => {
                let size = 3.0 + 6.0 * r.weight.unwrap_or(0.0).sqrt();
                let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="{size:.2}" height="{size:.2}"/>"#, x(r.estimate) - size / 2.0, y - size / 2.0);
            }
            "pooled" => {
                let _ = writeln!(
                    s,
                    r#"<polygon points="{:.2},{y:.2} {:.2},{:.2} {:.2},{y:.2} {:.2},{:.2}"/>"#,
                    x(r.low), x(r.estimate), y - 6.0, x(r.high), x(r.estimate), y + 6.0
                );
            }
            _ => {}
        }
    }
    let axis_y = top + row_h * rows.len() as f64 + 14.0;
    for v in [lo / 1.1, -epsilon, 0.0, epsilon, hi / 1.1] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{axis_y:.2}" text-anchor="middle">{v:.3}</text>"#, x(v));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Marker name made safe for use in a file name.
pub fn file_stem(marker: &str) -> String {
    marker
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Writes `screen_results.csv`, `signature.json` and forest data (plus SVG
/// when requested) for the `top_k` markers with the smallest raw p-values.
pub fn write_screen_outputs(dir: &Path, report: &ScreenReport, top_k: usize, svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SurrError::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join("screen_results.csv");
    write_screen_results(create(&path)?, report)?;
    written.push(path);

    let path = dir.join("signature.json");
    let mut f = create(&path)?;
    f.write_all(report.signature.to_json()?.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .and_then(|_| f.flush())
        .map_err(|e| SurrError::io(&path, e))?;
    written.push(path);

    for i in report.ranked().into_iter().filter(|&i| report.markers[i].pooled.is_some()).take(top_k) {
        let m = &report.markers[i];
        let stem = file_stem(&m.equivalence.marker_id);
        let path = dir.join(format!("forest_{stem}.csv"));
        write_forest(create(&path)?, m)?;
        written.push(path);
        if svg {
            let path = dir.join(format!("forest_{stem}.svg"));
            let body = forest_svg(&m.equivalence.marker_id, &m.estimates, m.pooled.as_ref().expect("filtered"), report.epsilon);
            fs::write(&path, body).map_err(|e| SurrError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn write_evaluation<W: Write>(w: W, report: &EvaluationReport) -> Result<()> {
    let mut w = writer(w);
    w.write_record([
        "row", "study", "n", "u_y", "u_s", "delta", "se", "ci_low", "ci_high", "weight", "p_value",
    ])?;
    let pooled = &report.pooled;
    let rows = forest_rows(&report.studies, pooled);
    for (r, (e, p)) in rows.iter().zip(report.studies.iter().zip(&report.study_p)) {
        w.write_record([
            "study".to_string(),
            e.study_id.clone(),
            e.n_effective.to_string(),
            num(e.u_y),
            num(e.u_s),
            num(e.delta),
            num(e.se_delta()),
            num(r.low),
            num(r.high),
            opt(r.weight),
            num(*p),
        ])?;
    }
    w.write_record([
        "pooled".to_string(),
        "NA".into(),
        report.studies.iter().map(|e| e.n_effective).sum::<usize>().to_string(),
        "NA".into(),
        "NA".into(),
        num(pooled.mu_hat),
        num(pooled.se_pooled),
        num(pooled.ci_low),
        num(pooled.ci_high),
        "1".into(),
        num(report.tost.p_tost),
    ])?;
    if let (Some(lo), Some(hi)) = (pooled.pi_low, pooled.pi_high) {
        w.write_record([
            "prediction", "NA", "NA", "NA", "NA", &num(pooled.mu_hat), "NA", &num(lo), &num(hi), "NA", "NA",
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_metrics<W: Write>(w: W, report: &EvaluationReport) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["metric", "value", "ci_low", "ci_high", "note"])?;
    for m in &report.metrics {
        w.write_record([m.metric.clone(), opt(m.value), opt(m.ci_low), opt(m.ci_high), m.note.clone()])?;
    }
    w.write_record(["epsilon".to_string(), num(report.epsilon), "NA".into(), "NA".into(), String::new()])?;
    w.write_record(["tau2_hat".to_string(), num(report.pooled.tau2_hat), "NA".into(), "NA".into(), String::new()])?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `evaluate_results.csv`, `metrics.csv` and, when requested, an SVG
/// forest plot of the composite.
pub fn write_evaluate_outputs(dir: &Path, report: &EvaluationReport, svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SurrError::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join("evaluate_results.csv");
    write_evaluation(create(&path)?, report)?;
    written.push(path);
    let path = dir.join("metrics.csv");
    write_metrics(create(&path)?, report)?;
    written.push(path);
    if svg {
        let path = dir.join("forest_signature.svg");
        let body = forest_svg("signature", &report.studies, &report.pooled, report.epsilon);
        fs::write(&path, body).map_err(|e| SurrError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
