//! CSV emission and reading, per-kernel summaries, and SVG curve plots.
//!
//! All floats are printed with Rust's shortest round-trip representation, so
//! re-parsing a CSV reproduces the exact f64 values that were written.

use std::io::Write;
use std::path::Path;

use super::{HarnessError, SeedOutcome};

pub const CURVES_HEADER: &str = "seed,num_samples,smse,msll,nlpd,rmse,mae,wall_time_s";

/// One parsed row of a curves CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub seed: u64,
    pub num_samples: usize,
    pub smse: f64,
    pub msll: f64,
    pub nlpd: f64,
    pub rmse: f64,
    pub mae: f64,
    pub wall_time_s: f64,
}

/// Writes one `seed,num_samples,...` row per metrics record, seeds in input
/// order. Failed seeds contribute no rows.
pub fn write_curves_csv(path: &Path, outcomes: &[SeedOutcome]) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(CURVES_HEADER);
    out.push('\n');
    for outcome in outcomes {
        for r in &outcome.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                outcome.seed, r.num_samples, r.smse, r.msll, r.nlpd, r.rmse, r.mae, r.wall_time_s
            ));
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurveRow>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CURVES_HEADER => {}
        other => {
            return Err(HarnessError::Config(format!(
                "{} is not a curves CSV (header {other:?})",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(HarnessError::Config(format!(
                "{} line {}: expected 8 fields, got {}",
                path.display(),
                idx + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64, HarnessError> {
            s.parse().map_err(|_| {
                HarnessError::Config(format!("{} line {}: bad float {s:?}", path.display(), idx + 2))
            })
        };
        rows.push(CurveRow {
            seed: fields[0].parse().map_err(|_| {
                HarnessError::Config(format!("{} line {}: bad seed", path.display(), idx + 2))
            })?,
            num_samples: fields[1].parse().map_err(|_| {
                HarnessError::Config(format!("{} line {}: bad sample count", path.display(), idx + 2))
            })?,
            smse: parse_f(fields[2])?,
            msll: parse_f(fields[3])?,
            nlpd: parse_f(fields[4])?,
            rmse: parse_f(fields[5])?,
            mae: parse_f(fields[6])?,
            wall_time_s: parse_f(fields[7])?,
        });
    }
    Ok(rows)
}

/// Curve-averaged metrics of one seed: the mean of each metric over the
/// sample-count axis, i.e. the averaged area under the metric curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveAverage {
    pub smse: f64,
    pub msll: f64,
    pub nlpd: f64,
    pub rmse: f64,
    pub mae: f64,
}

pub fn curve_average(records: &[crate::metrics::MetricsRecord]) -> Option<CurveAverage> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    Some(CurveAverage {
        smse: records.iter().map(|r| r.smse).sum::<f64>() / n,
        msll: records.iter().map(|r| r.msll).sum::<f64>() / n,
        nlpd: records.iter().map(|r| r.nlpd).sum::<f64>() / n,
        rmse: records.iter().map(|r| r.rmse).sum::<f64>() / n,
        mae: records.iter().map(|r| r.mae).sum::<f64>() / n,
    })
}

/// Mean and standard deviation of curve-averaged metrics across seeds.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub label: String,
    pub n_seeds: usize,
    pub mean: CurveAverage,
    pub std: CurveAverage,
}

pub fn summarize(label: &str, outcomes: &[SeedOutcome]) -> Option<SummaryRow> {
    let averages: Vec<CurveAverage> =
        outcomes.iter().filter_map(|o| curve_average(&o.records)).collect();
    if averages.is_empty() {
        return None;
    }
    let n = averages.len() as f64;
    let mean_of = |f: fn(&CurveAverage) -> f64| averages.iter().map(f).sum::<f64>() / n;
    let mean = CurveAverage {
        smse: mean_of(|a| a.smse),
        msll: mean_of(|a| a.msll),
        nlpd: mean_of(|a| a.nlpd),
        rmse: mean_of(|a| a.rmse),
        mae: mean_of(|a| a.mae),
    };
    let std_of = |f: fn(&CurveAverage) -> f64, m: f64| {
        (averages.iter().map(|a| (f(a) - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    let std = CurveAverage {
        smse: std_of(|a| a.smse, mean.smse),
        msll: std_of(|a| a.msll, mean.msll),
        nlpd: std_of(|a| a.nlpd, mean.nlpd),
        rmse: std_of(|a| a.rmse, mean.rmse),
        mae: std_of(|a| a.mae, mean.mae),
    };
    Some(SummaryRow { label: label.to_string(), n_seeds: averages.len(), mean, std })
}

pub const SUMMARY_HEADER: &str = "label,n_seeds,smse_mean,smse_std,msll_mean,msll_std,nlpd_mean,nlpd_std,rmse_mean,rmse_std,mae_mean,mae_std";

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            r.n_seeds,
            r.mean.smse,
            r.std.smse,
            r.mean.msll,
            r.std.msll,
            r.mean.nlpd,
            r.std.nlpd,
            r.mean.rmse,
            r.std.rmse,
            r.mean.mae,
            r.std.mae
        ));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Renders metric-vs-samples curves (one polyline per seed) from a curves CSV
/// into a standalone SVG.
pub fn plot_metric_svg(rows: &[CurveRow], metric: &str, out: &Path) -> Result<(), HarnessError> {
    let pick = |r: &CurveRow| -> f64 {
        match metric {
            "smse" => r.smse,
            "msll" => r.msll,
            "nlpd" => r.nlpd,
            "rmse" => r.rmse,
            "mae" => r.mae,
            _ => f64::NAN,
        }
    };
    if rows.is_empty() {
        return Err(HarnessError::Config("cannot plot an empty CSV".into()));
    }

    let (width, height, margin) = (640.0, 420.0, 50.0);
    let x_lo = rows.iter().map(|r| r.num_samples).min().unwrap() as f64;
    let x_hi = rows.iter().map(|r| r.num_samples).max().unwrap() as f64;
    let y_lo = rows.iter().map(&pick).fold(f64::INFINITY, f64::min);
    let y_hi = rows.iter().map(&pick).fold(f64::NEG_INFINITY, f64::max);
    let x_span = (x_hi - x_lo).max(1.0);
    let y_span = (y_hi - y_lo).max(1e-12);
    let sx = |v: f64| margin + (v - x_lo) / x_span * (width - 2.0 * margin);
    let sy = |v: f64| height - margin - (v - y_lo) / y_span * (height - 2.0 * margin);

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
        "#7f7f7f", "#bcbd22", "#17becf"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">samples</text>\n",
        width / 2.0,
        height - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 14 {})\">{metric}</text>\n",
        height / 2.0,
        height / 2.0
    ));
    for (label, v) in [(y_lo, y_lo), (y_hi, y_hi)] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{label:.3}</text>\n",
            margin - 4.0,
            sy(v) + 4.0
        ));
    }
    for v in [x_lo, x_hi] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{v:.0}</text>\n",
            sx(v),
            height - margin + 16.0
        ));
    }

    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for (i, seed) in seeds.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.seed == *seed)
            .map(|r| format!("{:.2},{:.2}", sx(r.num_samples as f64), sy(pick(r))))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            palette[i % palette.len()],
            pts.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(out, svg)?;
    Ok(())
}
