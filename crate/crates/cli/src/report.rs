//! Result tables and charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chunkdelay::SweepRow;

pub const SWEEP_HEADER: [&str; 7] = [
    "method",
    "delta",
    "success_rate",
    "episodes",
    "mean_arrival",
    "mean_final_error",
    "failures",
];

/// One row of a sweep table as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub method: String,
    pub delta: f64,
    pub success_rate: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.delta.to_string(),
            r.success_rate.to_string(),
            r.episodes.to_string(),
            opt(r.mean_arrival),
            opt(r.mean_final_error),
            r.failures.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Pooled success over several delays: `(method, deltas, success_rate, episodes)`.
pub fn pooled(rows: &[SweepRow]) -> Vec<(String, Vec<f64>, f64, usize)> {
    let mut by: BTreeMap<&str, (Vec<f64>, f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let e = by.entry(&r.method).or_insert_with(|| {
            order.push(r.method.as_str());
            (Vec::new(), 0.0, 0)
        });
        e.0.push(r.delta);
        e.1 += r.success_rate * r.episodes as f64;
        e.2 += r.episodes;
    }
    order
        .into_iter()
        .map(|m| {
            let (ds, s, n) = &by[m];
            let rate = if *n == 0 { 0.0 } else { s / *n as f64 };
            (m.to_string(), ds.clone(), rate, *n)
        })
        .collect()
}

pub fn pooled_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "deltas", "success_rate", "episodes"])?;
    for (m, ds, rate, n) in pooled(rows) {
        let ds: Vec<String> = ds.iter().map(f64::to_string).collect();
        w.write_record([m, ds.join(";"), rate.to_string(), n.to_string()])?;
    }
    Ok(w.into_inner()?)
}

/// Reads the columns a chart needs from a sweep CSV.
pub fn read_plot_rows(text: &str) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column `{name}`"))
    };
    let (m, d, s) = (col("method")?, col("delta")?, col("success_rate")?);
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize, name: &str| -> Result<f64> {
            let v = rec.get(c).unwrap_or("");
            v.parse()
                .with_context(|| format!("row {}: column `{name}` is not a number: `{v}`", i + 1))
        };
        rows.push(PlotRow {
            method: rec.get(m).unwrap_or("").to_string(),
            delta: num(d, "delta")?,
            success_rate: num(s, "success_rate")?,
        });
    }
    if rows.is_empty() {
        bail!("no rows");
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Bars,
    Lines,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Success rate against delay, one series per method, in first-seen order.
/// Output depends only on the rows, so equal input gives equal bytes.
pub fn render_svg(rows: &[PlotRow], title: &str, kind: ChartKind) -> Result<String> {
    if rows.is_empty() {
        bail!("no rows");
    }
    let mut methods: Vec<&str> = Vec::new();
    let mut deltas: Vec<f64> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !deltas.iter().any(|d| d.to_bits() == r.delta.to_bits()) {
            deltas.push(r.delta);
        }
    }
    deltas.sort_by(f64::total_cmp);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let slot = plot_w / deltas.len() as f64;
    let x_center = |i: usize| LEFT + slot * (i as f64 + 0.5);
    let y = |rate: f64| TOP + plot_h * (1.0 - rate.clamp(0.0, 1.0));
    let di = |d: f64| {
        deltas
            .iter()
            .position(|x| x.to_bits() == d.to_bits())
            .unwrap()
    };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )?;
    writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    )?;
    for k in 0..=4 {
        let rate = k as f64 / 4.0;
        writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#dddddd"/>"##,
            y(rate),
            LEFT + plot_w
        )?;
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{rate:.2}</text>"#,
            LEFT - 6.0,
            y(rate) + 4.0
        )?;
    }
    for (i, d) in deltas.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{d}</text>"#,
            x_center(i),
            TOP + plot_h + 18.0
        )?;
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">delay (s)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    )?;
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">success rate</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )?;

    for (mi, m) in methods.iter().enumerate() {
        let color = COLORS[mi % COLORS.len()];
        let mut pts: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.method == *m)
            .map(|r| (di(r.delta), r.success_rate))
            .collect();
        pts.sort_by_key(|p| p.0);
        match kind {
            ChartKind::Bars => {
                let bw = slot * 0.8 / methods.len() as f64;
                for (i, rate) in &pts {
                    let x = x_center(*i) - slot * 0.4 + bw * mi as f64;
                    writeln!(
                        s,
                        r#"<rect class="bar" x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{color}"/>"#,
                        y(*rate),
                        TOP + plot_h - y(*rate)
                    )?;
                }
            }
            ChartKind::Lines => {
                let path: Vec<String> = pts
                    .iter()
                    .map(|(i, r)| format!("{:.1},{:.1}", x_center(*i), y(*r)))
                    .collect();
                writeln!(
                    s,
                    r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    path.join(" ")
                )?;
                for (i, r) in &pts {
                    writeln!(
                        s,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#,
                        x_center(*i),
                        y(*r)
                    )?;
                }
            }
        }
        let ly = TOP + 10.0 + 20.0 * mi as f64;
        let lx = WIDTH - RIGHT + 16.0;
        writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{color}"/>"#,
            ly - 10.0
        )?;
        writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#,
            lx + 18.0,
            escape(m)
        )?;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, delta: f64, rate: f64) -> SweepRow {
        SweepRow {
            method: method.into(),
            delta,
            success_rate: rate,
            episodes: 10,
            per_seed: vec![rate],
            mean_arrival: Some(1.5),
            mean_final_error: None,
            failures: 0,
            first_failure: None,
        }
    }

    fn grid() -> Vec<SweepRow> {
        let mut rows = Vec::new();
        for m in ["dp", "da-dp"] {
            for (i, d) in [0.0, 0.05, 0.1, 0.2].into_iter().enumerate() {
                rows.push(row(m, d, 1.0 - 0.2 * i as f64));
            }
        }
        rows
    }

    #[test]
    fn csv_round_trip_and_bar_count() {
        let text = String::from_utf8(sweep_csv(&grid()).unwrap()).unwrap();
        assert!(text.starts_with(
            "method,delta,success_rate,episodes,mean_arrival,mean_final_error,failures\n"
        ));
        let rows = read_plot_rows(&text).unwrap();
        assert_eq!(rows.len(), 8);
        let svg = render_svg(&rows, "t", ChartKind::Bars).unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 8);
        assert_eq!(svg, render_svg(&rows, "t", ChartKind::Bars).unwrap());
    }

    #[test]
    fn empty_csv_is_an_error() {
        let text = SWEEP_HEADER.join(",") + "\n";
        let e = read_plot_rows(&text).unwrap_err();
        assert_eq!(e.to_string(), "no rows");
        assert!(render_svg(&[], "t", ChartKind::Lines).is_err());
    }

    #[test]
    fn schema_mismatch_names_the_column() {
        let e = read_plot_rows("method,delta\ndp,0\n").unwrap_err();
        assert!(e.to_string().contains("success_rate"), "{e}");
        let e = read_plot_rows("method,delta,success_rate\ndp,x,1\n").unwrap_err();
        assert!(e.to_string().contains("delta"), "{e}");
    }

    #[test]
    fn line_chart_has_one_series_per_method() {
        let rows =
            read_plot_rows(&String::from_utf8(sweep_csv(&grid()).unwrap()).unwrap()).unwrap();
        let svg = render_svg(&rows, "a < b", ChartKind::Lines).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn pooling_weights_by_episodes() {
        let rows = vec![
            row("dp", 0.0, 1.0),
            row("dp", 0.1, 0.0),
            row("da", 0.1, 0.5),
        ];
        let p = pooled(&rows);
        assert_eq!(p[0].0, "dp");
        assert_eq!(p[0].2, 0.5);
        assert_eq!(p[0].3, 20);
        assert_eq!(p[1].1, vec![0.1]);
    }
}
