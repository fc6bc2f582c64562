//! CSV reports and SVG box plots.
//!
//! Box plots use type-7 quartiles, whiskers at the most extreme observations
//! within 1.5 IQR of the box, and one dot per outlier. Each box embeds its
//! statistics in an XML comment so the figure can be checked without parsing
//! geometry.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;
use crate::numeric::quantile_sorted;
use crate::regression::{BandwidthSearchReport, LagSearchReport};
use crate::sampler::Prediction;
use crate::simulation::ExperimentReport;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `replicate,method,rmse,h_chosen,lag_chosen,seed,error`; empty fields for
/// missing values.
pub fn write_experiment_csv(report: &ExperimentReport, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["replicate", "method", "rmse", "h_chosen", "lag_chosen", "seed", "error"])?;
    for r in &report.rows {
        w.write_record([
            r.replicate.to_string(),
            r.method.clone(),
            opt(r.rmse),
            opt(r.h_chosen),
            opt(r.lag_chosen),
            r.seed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One `grid` row per bandwidth (`index,h,inclusion,statistic,votes,failure`)
/// followed by a `choice` row.
pub fn write_bandwidth_report_csv(report: &BandwidthSearchReport, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "kind",
        "index",
        "lag",
        "h",
        "inclusion",
        "statistic",
        "votes",
        "failure",
    ])?;
    for i in 0..report.grid.len() {
        w.write_record([
            "grid".to_string(),
            i.to_string(),
            report.lag.to_string(),
            report.grid[i].to_string(),
            report.inclusion[i].to_string(),
            report.statistics[i].to_string(),
            report.votes[i].to_string(),
            report.failures[i].clone().unwrap_or_default(),
        ])?;
    }
    let c = report.chosen_index;
    w.write_record([
        "choice".to_string(),
        c.to_string(),
        report.lag.to_string(),
        report.chosen.to_string(),
        report.inclusion[c].to_string(),
        report.statistics[c].to_string(),
        report.votes[c].to_string(),
        String::new(),
    ])?;
    w.flush()?;
    Ok(())
}

/// One `grid` row per lag (`index,lag,h,statistic`) followed by a `choice`
/// row.
pub fn write_lag_report_csv(report: &LagSearchReport, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "index", "lag", "h", "statistic"])?;
    let row = |kind: &str, i: usize| {
        [
            kind.to_string(),
            i.to_string(),
            report.grid[i].to_string(),
            opt(report.bandwidths[i]),
            report.statistics[i].to_string(),
        ]
    };
    for i in 0..report.grid.len() {
        w.write_record(row("grid", i))?;
    }
    w.write_record(row("choice", report.chosen_index))?;
    w.flush()?;
    Ok(())
}

/// Prediction table: the query columns followed by `mean` and one column per
/// band level (`q05`, `q50`, ...).
pub fn write_predictions_csv(
    names: &[String],
    rows: &[Vec<f64>],
    prediction: &Prediction,
    writer: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = names.to_vec();
    header.push("mean".into());
    header.extend(
        prediction
            .levels
            .iter()
            .map(|l| format!("q{:02}", (l * 100.0).round() as u32)),
    );
    w.write_record(&header)?;
    for (i, row) in rows.iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(prediction.mean[i].to_string());
        rec.extend(prediction.bands.iter().map(|b| b[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Five-number box summary with outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    /// `None` for an empty sample; non-finite values are ignored.
    pub fn compute(values: &[f64]) -> Option<BoxStats> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let median = quantile_sorted(&v, 0.5);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|&x| x >= lo && x <= hi).collect();
        Some(BoxStats {
            n: v.len(),
            q1,
            median,
            q3,
            lower_whisker: inside[0],
            upper_whisker: inside[inside.len() - 1],
            outliers: v.into_iter().filter(|&x| x < lo || x > hi).collect(),
        })
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG 1.1 box plot of one box per group, groups in the given order. Groups
/// with no finite value get a label and no box.
pub fn box_plot_svg(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let stats: Vec<Option<BoxStats>> = groups.iter().map(|(_, v)| BoxStats::compute(v)).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in stats.iter().flatten() {
        let min = s.outliers.iter().copied().fold(s.lower_whisker, f64::min);
        let max = s.outliers.iter().copied().fold(s.upper_whisker, f64::max);
        lo = lo.min(min);
        hi = hi.max(max);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let y = |v: f64| MARGIN_T + plot_h * (hi - v) / (hi - lo);
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / groups.len().max(1) as f64;
    let half = (slot * 0.3).min(40.0);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, "<!-- quartiles: type 7; whiskers: 1.5 IQR -->");
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        escape(y_label)
    );
    let axis_x = MARGIN_L - 5.0;
    let _ = writeln!(
        s,
        r#"<line x1="{axis_x}" y1="{}" x2="{axis_x}" y2="{}" stroke="black"/>"#,
        MARGIN_T,
        HEIGHT - MARGIN_B
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{yy:.2}" x2="{axis_x}" y2="{yy:.2}" stroke="black"/>"#,
            axis_x - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#,
            axis_x - 6.0,
            yy + 3.0
        );
    }
    for (i, ((name, _), st)) in groups.iter().zip(&stats).enumerate() {
        let cx = MARGIN_L + slot * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            HEIGHT - MARGIN_B + 18.0,
            escape(name)
        );
        let Some(b) = st else {
            let _ = writeln!(s, "<!-- box group=\"{}\" n=0 -->", escape(name));
            continue;
        };
        let outliers: Vec<String> = b.outliers.iter().map(|o| o.to_string()).collect();
        let _ = writeln!(
            s,
            "<!-- box group=\"{}\" n={} q1={} median={} q3={} whisker_low={} whisker_high={} outliers=[{}] -->",
            escape(name),
            b.n,
            b.q1,
            b.median,
            b.q3,
            b.lower_whisker,
            b.upper_whisker,
            outliers.join(",")
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(b.upper_whisker),
            y(b.q3)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(b.q1),
            y(b.lower_whisker)
        );
        for w in [b.lower_whisker, b.upper_whisker] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                y(w),
                cx + half / 2.0,
                y(w)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#cfe0f3" stroke="black"/>"##,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            y(b.median),
            cx + half,
            y(b.median)
        );
        for &o in &b.outliers {
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#,
                y(o)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Box plot of per-method RMSEs from an experiment, methods in run order.
pub fn experiment_box_plot(report: &ExperimentReport) -> String {
    let groups: Vec<(String, Vec<f64>)> = report.methods.iter().map(|m| (m.clone(), report.rmses(m))).collect();
    let title = format!(
        "{} (n = {}, {} replicates)",
        report.sim.function, report.sim.subjects, report.replicates
    );
    box_plot_svg(&title, "test RMSE", &groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_stats_small_sample() {
        // Sorted 1..=8: type-7 quartiles at positions 1.75, 3.5, 5.25.
        let b = BoxStats::compute(&[8.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.75, 4.5, 6.25));
        assert_eq!((b.lower_whisker, b.upper_whisker), (1.0, 8.0));
        assert!(b.outliers.is_empty());
    }

    #[test]
    fn outliers_leave_whiskers() {
        let b = BoxStats::compute(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.q3), (2.0, 4.0));
        assert_eq!(b.upper_whisker, 4.0);
        assert_eq!(b.outliers, vec![100.0]);
    }

    #[test]
    fn constant_and_empty_samples() {
        let b = BoxStats::compute(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((b.q1, b.q3, b.lower_whisker, b.upper_whisker), (2.0, 2.0, 2.0, 2.0));
        assert!(BoxStats::compute(&[]).is_none());
        assert!(BoxStats::compute(&[f64::NAN]).is_none());
    }

    #[test]
    fn svg_has_one_box_per_group() {
        let groups = vec![
            ("a".to_string(), vec![1.0, 2.0, 3.0]),
            ("b<c".to_string(), vec![0.5, 9.0, 1.0, 1.2]),
            ("empty".to_string(), vec![]),
        ];
        let svg = box_plot_svg("t & t", "rmse", &groups);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect x=").count(), 2);
        assert!(svg.contains("group=\"b&lt;c\""));
        assert!(svg.contains("group=\"empty\" n=0"));
        assert!(svg.contains("t &amp; t"));
        assert!(svg.contains("median=2 "));
    }
}
