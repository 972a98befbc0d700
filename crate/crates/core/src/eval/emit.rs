use super::{EvalError, ExperimentReport, PhaseMeans, SweepSeries, TableFamily};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Table,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Table => "txt",
        }
    }
}

fn columns(family: TableFamily) -> &'static [&'static str] {
    match family {
        TableFamily::Completion => &["training_cycles", "max_cycles", "success_pct"],
        TableFamily::Obstacles => &[
            "max_cycles",
            "dl_pct",
            "rb_pct",
            "success_pct",
            "any_hit_pct",
            "all_hit_pct",
        ],
        TableFamily::Search => &[
            "training_cycles",
            "initial_sweep",
            "rl_search",
            "posterior_sweep",
            "total_cycles",
            "success_pct",
            "success_initial_sweep",
            "success_rl_search",
            "success_posterior_sweep",
            "success_total_cycles",
        ],
    }
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn training(r: &ExperimentReport) -> String {
    r.training_cycles.map(|c| c.to_string()).unwrap_or_else(|| "-".into())
}

fn row(r: &ExperimentReport) -> Vec<String> {
    let phases = |p: Option<&PhaseMeans>| -> Vec<String> {
        match p {
            Some(p) => [p.initial_sweep, p.rl_search, p.posterior_sweep, p.total]
                .map(fmt2)
                .to_vec(),
            None => vec!["-".into(); 4],
        }
    };
    match r.family {
        TableFamily::Completion => vec![training(r), r.spec.max_cycles.to_string(), fmt2(r.success_rate)],
        TableFamily::Obstacles => vec![
            r.spec.max_cycles.to_string(),
            fmt2(r.dl_percent),
            fmt2(r.rb_percent),
            fmt2(r.success_rate),
            fmt2(r.any_hit_rate),
            fmt2(r.all_hit_rate),
        ],
        TableFamily::Search => {
            let mut v = vec![training(r)];
            v.extend(phases(Some(&r.phases_all)));
            v.push(fmt2(r.success_rate));
            v.extend(phases(r.phases_success.as_ref()));
            v
        }
    }
}

fn non_empty(reports: &[ExperimentReport]) -> Result<&ExperimentReport, EvalError> {
    let first = reports.first().ok_or(EvalError::Empty)?;
    if reports.iter().any(|r| r.n_episodes == 0 || r.episodes.is_empty()) {
        return Err(EvalError::Empty);
    }
    Ok(first)
}

fn check(reports: &[ExperimentReport]) -> Result<TableFamily, EvalError> {
    let first = non_empty(reports)?;
    if reports.iter().any(|r| r.family != first.family) {
        return Err(EvalError::Invalid(
            "reports in one table must share a column layout".into(),
        ));
    }
    Ok(first.family)
}

/// Renders reports as one table; every report becomes one row.
pub fn render_report(reports: &[ExperimentReport], format: ReportFormat) -> Result<String, EvalError> {
    let family = check(reports)?;
    let cols = columns(family);
    let mut out = String::new();
    match format {
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(reports).map_err(|e| EvalError::Invalid(e.to_string()))?;
            out.push('\n');
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| EvalError::Invalid(e.to_string());
            w.write_record(cols).map_err(csv_err)?;
            for r in reports {
                w.write_record(row(r)).map_err(csv_err)?;
            }
            out = String::from_utf8(w.into_inner().map_err(|e| EvalError::Invalid(e.to_string()))?)
                .expect("csv output is utf-8");
        }
        ReportFormat::Table => {
            let rows: Vec<Vec<String>> = reports.iter().map(row).collect();
            let widths: Vec<usize> = (0..cols.len())
                .map(|i| {
                    rows.iter()
                        .map(|r| r[i].len())
                        .chain([cols[i].len()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |cells: &[String]| {
                let mut s = String::new();
                for (i, c) in cells.iter().enumerate() {
                    if i > 0 {
                        s.push_str("  ");
                    }
                    let _ = write!(s, "{c:>w$}", w = widths[i]);
                }
                s.trim_end().to_string()
            };
            let header: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{}", line(&header));
            let _ = writeln!(
                out,
                "{}",
                widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ")
            );
            for r in &rows {
                let _ = writeln!(out, "{}", line(r));
            }
            out.push('\n');
            for (i, r) in reports.iter().enumerate() {
                let seeds = r.seeds();
                let _ = writeln!(
                    out,
                    "row {}: {} episodes, seeds {}..={}, scenario {}",
                    i + 1,
                    r.n_episodes,
                    seeds.start,
                    seeds.end - 1,
                    serde_json::to_string(&r.spec).map_err(|e| EvalError::Invalid(e.to_string()))?
                );
            }
        }
    }
    Ok(out)
}

/// Writes `report.<ext>` for each format into `dir`.
pub fn emit_report(
    reports: &[ExperimentReport],
    formats: &[ReportFormat],
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &f in formats {
        let path = dir.join(format!("report.{}", f.extension()));
        std::fs::write(&path, render_report(reports, f)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn render_series(series: &SweepSeries) -> Result<String, EvalError> {
    non_empty(&series.reports)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| EvalError::Invalid(e.to_string());
    w.write_record([
        "obstacles",
        "success_pct",
        "any_hit_pct",
        "all_hit_pct",
        "dl_pct",
        "mean_total_cycles",
    ])
    .map_err(csv_err)?;
    for (c, r) in series.counts.iter().zip(&series.reports) {
        w.write_record([
            c.to_string(),
            fmt2(r.success_rate),
            fmt2(r.any_hit_rate),
            fmt2(r.all_hit_rate),
            fmt2(r.dl_percent),
            fmt2(r.mean_total_cycles),
        ])
        .map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| EvalError::Invalid(e.to_string()))?).expect("utf-8"))
}

/// Line chart of success and hit rates against obstacle count.
pub fn render_series_svg(series: &SweepSeries) -> Result<String, EvalError> {
    non_empty(&series.reports)?;
    let (w, h, m) = (480.0, 320.0, 48.0);
    let max_c = series.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let x = |c: usize| m + (w - 2.0 * m) * c as f64 / max_c;
    let y = |p: f64| h - m - (h - 2.0 * m) * p / 100.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        t = m,
        b = h - m,
        r = w - m
    );
    for p in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{p}</text>"#,
            m - 4.0,
            y(p) + 3.0
        );
    }
    for &c in &series.counts {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-size="10" text-anchor="middle">{c}</text>"#,
            x(c),
            h - m + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">obstacles</text>"#,
        w / 2.0,
        h - 8.0
    );
    for (name, color, vals) in [
        ("success %", "#1f77b4", series.success_rates()),
        ("hit %", "#d62728", series.any_hit_rates()),
    ] {
        let pts: Vec<String> = series
            .counts
            .iter()
            .zip(&vals)
            .map(|(&c, &v)| format!("{:.1},{:.1}", x(c), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"><title>{name}</title></polyline>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (px, py) = p.split_once(',').expect("point");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
        }
    }
    let _ = writeln!(
        s,
        r##"<text x="{}" y="20" font-size="11" fill="#1f77b4">success %</text>"##,
        m + 8.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="34" font-size="11" fill="#d62728">hit %</text>"##,
        m + 8.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `sweep.csv`, `sweep.json` and `sweep.svg` into `dir`.
pub fn emit_series(series: &SweepSeries, dir: &Path) -> Result<Vec<std::path::PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(series).map_err(|e| EvalError::Invalid(e.to_string()))? + "\n";
    let files = [
        ("sweep.csv", render_series(series)?),
        ("sweep.json", json),
        ("sweep.svg", render_series_svg(series)?),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}
