use std::fmt::Write;

use super::TrialReport;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::lse::LseErrors;
use crate::placement::PlacementSearchResult;

/// Rows are the estimated quantities, columns the noise settings in input order.
pub fn table1_csv(rows: &[LseErrors]) -> String {
    let mut out = String::from("quantity");
    for r in rows {
        out.push(',');
        out.push_str(&r.noise);
    }
    out.push('\n');
    type Quantity = (&'static str, fn(&LseErrors) -> f64);
    let quantities: [Quantity; 4] = [
        ("voltage_magnitude_pu", |r| r.v_mag_pu),
        ("voltage_angle_deg", |r| r.v_ang_deg),
        ("power_flow_mw", |r| r.flow_mw),
        ("power_injection_mw", |r| r.injection_mw),
    ];
    for (name, get) in quantities {
        out.push_str(name);
        for r in rows {
            write!(out, ",{:.6e}", get(r)).expect("string write");
        }
        out.push('\n');
    }
    out
}

/// One row per model in the comparison order; SVR is listed as `n/a`.
pub fn table3_csv(reports: &[TrialReport]) -> Result<String> {
    let order = [
        Some(EstimatorKind::Lr),
        None,
        Some(EstimatorKind::Direct),
        Some(EstimatorKind::Indirect),
        Some(EstimatorKind::Pic),
    ];
    let missing: Vec<String> = order
        .iter()
        .flatten()
        .filter(|k| !reports.iter().any(|r| r.kind == **k))
        .map(|k| format!("{k}.json"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let mut out = String::from("model,rmse_mean_mw,rmse_std_mw,trials,subset_size\n");
    for kind in order {
        match kind {
            None => out.push_str("SVR,n/a,n/a,n/a,n/a\n"),
            Some(k) => {
                let r = reports.iter().find(|r| r.kind == k).expect("checked");
                writeln!(
                    out,
                    "{},{:.6},{:.6},{},{}",
                    k.title(),
                    r.rmse_mean,
                    r.rmse_std,
                    r.trials,
                    r.subset_size
                )
                .expect("string write");
            }
        }
    }
    Ok(out)
}

pub fn sweep_csv(results: &[PlacementSearchResult]) -> String {
    let mut out = String::from("model,step,pmu_count,bus,validation_rmse_mw\n");
    for r in results {
        for s in &r.sequence {
            let bus = s.bus.map(|b| b.to_string()).unwrap_or_else(|| "start".into());
            writeln!(
                out,
                "{},{},{},{},{:.6}",
                r.kind, s.step, s.pmu_count, bus, s.validation_rmse
            )
            .expect("string write");
        }
    }
    out
}

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Line chart of validation RMSE against PMU count, one series per estimator.
pub fn sweep_svg(results: &[PlacementSearchResult]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 140.0, 20.0, 50.0);
    let points: Vec<(f64, f64)> = results
        .iter()
        .flat_map(|r| r.sequence.iter().map(|s| (s.pmu_count as f64, s.validation_rmse)))
        .collect();
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| points.iter().map(pick).fold(init, f);
    let (mut x0, mut x1) = (
        fold(f64::min, f64::INFINITY, |p| p.0),
        fold(f64::max, f64::NEG_INFINITY, |p| p.0),
    );
    let mut y1 = fold(f64::max, f64::NEG_INFINITY, |p| p.1);
    if points.is_empty() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let y1 = if y1 > 0.0 { y1 * 1.1 } else { 1.0 };
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - y / y1 * ph;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    )
    .unwrap();
    for i in 0..=4 {
        let y = y1 * i as f64 / 4.0;
        writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            left - 6.0,
            sy(y) + 4.0,
            y
        )
        .unwrap();
    }
    let mut x = x0.ceil();
    while x <= x1 {
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            sx(x),
            top + ph + 16.0,
            x
        )
        .unwrap();
        x += ((x1 - x0) / 10.0).ceil().max(1.0);
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">PMU count</text>"#,
        left + pw / 2.0,
        h - 10.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">validation RMSE (MW)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    )
    .unwrap();
    for (i, r) in results.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = r
            .sequence
            .iter()
            .map(|s| format!("{:.1},{:.1}", sx(s.pmu_count as f64), sy(s.validation_rmse)))
            .collect();
        writeln!(
            svg,
            r#"<polyline class="series" data-model="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            r.kind,
            pts.join(" ")
        )
        .unwrap();
        let ly = top + 14.0 + 18.0 * i as f64;
        writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 12.0,
            left + pw + 32.0,
            left + pw + 38.0,
            ly + 4.0,
            r.kind.title()
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
