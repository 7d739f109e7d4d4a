use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::results::{read_csv, summarize, ResultRow, SummaryRow};
use super::HarnessError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Cross-target curves per domain: method -> rows with `target_task = "all"`
/// computed over that domain's targets only.
pub fn domain_curves(rows: &[ResultRow]) -> BTreeMap<String, BTreeMap<String, Vec<SummaryRow>>> {
    let mut by_domain: BTreeMap<String, Vec<ResultRow>> = BTreeMap::new();
    for r in rows {
        let domain = r.target_task.split(':').next().unwrap_or("unknown").to_string();
        by_domain.entry(domain).or_default().push(r.clone());
    }
    by_domain
        .into_iter()
        .map(|(domain, rows)| {
            let mut curves: BTreeMap<String, Vec<SummaryRow>> = BTreeMap::new();
            for s in summarize(&rows).into_iter().filter(|s| s.target_task == "all") {
                curves.entry(s.method.clone()).or_default().push(s);
            }
            (domain, curves)
        })
        .collect()
}

fn fmt_num(v: f64) -> String {
    format!("{v:.2}")
}

/// SVG with one line per method and a shaded 95% band.
pub fn render_svg(title: &str, curves: &BTreeMap<String, Vec<SummaryRow>>) -> String {
    let points = curves.values().flatten();
    let (mut x_max, mut y_lo, mut y_hi) = (1usize, f64::INFINITY, f64::NEG_INFINITY);
    for s in points {
        x_max = x_max.max(s.episode);
        y_lo = y_lo.min(s.mean - s.ci95);
        y_hi = y_hi.max(s.mean + s.ci95);
    }
    if !(y_hi > y_lo) {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let sx = |e: usize| {
        let span = (x_max.max(2) - 1) as f64;
        MARGIN + (e.saturating_sub(1)) as f64 / span * (WIDTH - 2.0 * MARGIN)
    };
    let sy = |v: f64| HEIGHT - MARGIN - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#,
        WIDTH / 2.0
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    for e in 1..=x_max {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{e}</text>"#,
            fmt_num(sx(e)),
            y0 + 16.0
        );
    }
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            x0 - 6.0,
            fmt_num(sy(v) + 4.0),
            fmt_num(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">episode</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );

    for (i, (method, rows)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut band = String::new();
        for (k, s) in rows.iter().enumerate() {
            let cmd = if k == 0 { 'M' } else { 'L' };
            let _ = write!(
                band,
                "{cmd}{} {} ",
                fmt_num(sx(s.episode)),
                fmt_num(sy(s.mean + s.ci95))
            );
        }
        for s in rows.iter().rev() {
            let _ = write!(band, "L{} {} ", fmt_num(sx(s.episode)), fmt_num(sy(s.mean - s.ci95)));
        }
        let _ = writeln!(
            svg,
            r#"<path class="band" d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band
        );
        let line: Vec<String> = rows
            .iter()
            .map(|s| format!("{},{}", fmt_num(sx(s.episode)), fmt_num(sy(s.mean))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{method}</text>"#,
            x1 - 90.0,
            fmt_num(ly)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads a results CSV and writes one `<domain>.svg` per domain into `out`.
pub fn emit_plots(results: &Path, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let file = std::fs::File::open(results).map_err(|e| HarnessError::io(results, e))?;
    let rows: Vec<ResultRow> = read_csv(file)?;
    if rows.is_empty() {
        return Err(HarnessError::NoData(results.display().to_string()));
    }
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut written = Vec::new();
    for (domain, curves) in domain_curves(&rows) {
        let path = out.join(format!("{domain}.svg"));
        let svg = render_svg(&format!("{domain}: mean return per episode (95% CI)"), &curves);
        std::fs::write(&path, svg).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
