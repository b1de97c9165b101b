//! SVG line charts of PEHE against annotation level, one panel per
//! (benchmark, sampling) pair found in a results CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::eval::{mean_ci, RESULTS_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub benchmark: String,
    pub sampling: String,
    pub method: EstimatorKind,
    pub level: usize,
    pub pehe: Option<f64>,
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::format("results", format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::format("results", format!("row {i}: bad {what}"));
        let pehe = match &rec[7] {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("pehe"))?),
        };
        rows.push(ResultRow {
            benchmark: rec[0].to_string(),
            sampling: rec[1].to_string(),
            method: EstimatorKind::parse(&rec[2]).map_err(|_| bad("method"))?,
            level: rec[3].parse().map_err(|_| bad("level"))?,
            pehe,
        });
    }
    if rows.is_empty() {
        return Err(Error::format("results", "no cells".to_string()));
    }
    Ok(rows)
}

/// One point of a series: level, mean PEHE, CI half-width (0 with a
/// single run).
pub type Point = (usize, f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub benchmark: String,
    pub sampling: String,
    pub series: BTreeMap<EstimatorKind, Vec<Point>>,
}

impl Panel {
    pub fn name(&self) -> String {
        format!("{}_{}", self.benchmark, self.sampling)
    }
}

type Grouped = BTreeMap<(String, String), BTreeMap<EstimatorKind, BTreeMap<usize, Vec<f64>>>>;

/// Groups rows into panels and averages runs. Failed cells are skipped.
pub fn panels(rows: &[ResultRow]) -> Vec<Panel> {
    let mut groups = Grouped::new();
    for r in rows {
        let vals = groups
            .entry((r.benchmark.clone(), r.sampling.clone()))
            .or_default()
            .entry(r.method)
            .or_default()
            .entry(r.level)
            .or_default();
        if let Some(p) = r.pehe {
            vals.push(p);
        }
    }
    groups
        .into_iter()
        .map(|((benchmark, sampling), methods)| Panel {
            benchmark,
            sampling,
            series: methods
                .into_iter()
                .map(|(m, levels)| {
                    let pts = levels
                        .into_iter()
                        .filter_map(|(l, v)| mean_ci(&v).map(|(mean, ci)| (l, mean, ci.unwrap_or(0.0))))
                        .collect();
                    (m, pts)
                })
                .filter(|(_, pts): &(EstimatorKind, Vec<Point>)| !pts.is_empty())
                .collect(),
        })
        .collect()
}

fn color(m: EstimatorKind) -> &'static str {
    match m {
        EstimatorKind::PlugIn => "#4c72b0",
        EstimatorKind::InfoExtraction => "#dd8452",
        EstimatorKind::DirectRegression => "#55a868",
        EstimatorKind::Adjusted => "#c44e52",
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

/// Renders a panel: log-scaled x axis, linear y axis from 0, a polyline of
/// mean PEHE per method and a translucent polygon for its confidence band.
pub fn render_svg(panel: &Panel) -> String {
    let pts = panel.series.values().flatten();
    let lmin = pts.clone().map(|p| p.0).min().unwrap_or(1).max(1) as f64;
    let lmax = pts.clone().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let (lo, hi) = if lmax > lmin {
        (lmin.ln(), lmax.ln())
    } else {
        (lmin.ln() - 0.5, lmin.ln() + 0.5)
    };
    let ytop = pts.map(|p| p.1 + p.2).fold(0.0, f64::max);
    let step = if ytop > 0.0 { nice_step(ytop) } else { 0.2 };
    let ymax = ((ytop / step).floor() + 1.0) * step;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |l: f64| LEFT + (l.max(1.0).ln() - lo) / (hi - lo) * pw;
    let sy = |v: f64| TOP + ph - v / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{} / {} sampling</text>"#,
        LEFT + pw / 2.0,
        panel.benchmark,
        panel.sampling
    );

    // Axes and ticks.
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT:.1},{TOP:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    let mut levels: Vec<usize> = panel.series.values().flatten().map(|p| p.0).collect();
    levels.sort_unstable();
    levels.dedup();
    for l in levels {
        let x = sx(l as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{l}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 19.0
        );
    }
    let mut v = 0.0;
    while v <= ymax + step * 1e-9 {
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
        v += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">annotated records (log scale)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">PEHE</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, (m, pts)) in panel.series.iter().enumerate() {
        let c = color(*m);
        let upper = pts.iter().map(|p| format!("{:.1},{:.1}", sx(p.0 as f64), sy(p.1 + p.2)));
        let lower = pts.iter().rev().map(|p| format!("{:.1},{:.1}", sx(p.0 as f64), sy((p.1 - p.2).max(0.0))));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.0 as f64), sy(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 20.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            m.as_str()
        );
    }
    s.push_str("</svg>\n");
    s
}
