//! Dependency-free SVG charts and a small HTML report shell. Everything is
//! emitted as strings so reports stay self-contained single files.

use std::collections::BTreeSet;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 52.0;

const PALETTE: [&str; 4] = ["#2f6f9f", "#d1495b", "#3a7d44", "#8e6c8a"];

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Line,
    Scatter,
}

/// An x/y chart with numeric axes. Month-style axes pass explicit tick labels.
#[derive(Debug, Clone)]
pub struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    kind: ChartKind,
    series: Vec<Series>,
    x_ticks: Option<Vec<(f64, String)>>,
    markers: Vec<(f64, f64)>,
}

impl Chart {
    pub fn new(kind: ChartKind, title: &str, x_label: &str, y_label: &str) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            kind,
            series: Vec::new(),
            x_ticks: None,
            markers: Vec::new(),
        }
    }

    pub fn add_series(&mut self, name: &str, points: Vec<(f64, f64)>) {
        self.series.push(Series { name: name.into(), points });
    }

    /// Replaces numeric x ticks with explicit (position, label) pairs.
    pub fn set_x_ticks(&mut self, ticks: Vec<(f64, String)>) {
        self.x_ticks = Some(ticks);
    }

    /// Points drawn as emphasized circles on top of all series.
    pub fn add_markers(&mut self, points: Vec<(f64, f64)>) {
        self.markers.extend(points);
    }

    pub fn to_svg(&self) -> String {
        let all: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .chain(self.markers.iter().copied())
            .collect();
        let mut svg = svg_open(&self.title);
        if all.is_empty() {
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">no data</text>",
                WIDTH / 2.0,
                HEIGHT / 2.0
            ));
            svg.push_str("</svg>\n");
            return svg;
        }
        let (x_min, x_max) = expand(min_max(all.iter().map(|p| p.0)));
        let (y_min, y_max) = expand(min_max(all.iter().map(|p| p.1)));
        let y_min = if y_min > 0.0 && y_min / (y_max - y_min).max(1e-12) < 2.0 { 0.0 } else { y_min };
        let to_x = |v: f64| MARGIN_L + (v - x_min) / (x_max - x_min) * plot_w();
        let to_y = |v: f64| MARGIN_T + plot_h() - (v - y_min) / (y_max - y_min) * plot_h();

        svg.push_str(&axes());
        for (pos, label) in ticks(y_min, y_max, 5) {
            let y = to_y(pos);
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>",
                MARGIN_L,
                MARGIN_L + plot_w()
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{label}</text>",
                MARGIN_L - 6.0,
                y + 4.0
            ));
        }
        let x_tick_list = match &self.x_ticks {
            Some(t) => thin(t, 12),
            None => ticks(x_min, x_max, 6),
        };
        for (pos, label) in &x_tick_list {
            if *pos < x_min - 1e-9 || *pos > x_max + 1e-9 {
                continue;
            }
            let x = to_x(*pos);
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#bbb\"/>",
                MARGIN_T + plot_h(),
                MARGIN_T + plot_h() + 4.0
            ));
            svg.push_str(&format!(
                "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
                MARGIN_T + plot_h() + 16.0,
                xml_escape(label)
            ));
        }

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            match self.kind {
                ChartKind::Line => {
                    let pts: Vec<String> = s
                        .points
                        .iter()
                        .map(|&(x, y)| format!("{:.1},{:.1}", to_x(x), to_y(y)))
                        .collect();
                    svg.push_str(&format!(
                        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>",
                        pts.join(" ")
                    ));
                }
                ChartKind::Scatter => {
                    for &(x, y) in &s.points {
                        svg.push_str(&format!(
                            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.75\"/>",
                            to_x(x),
                            to_y(y)
                        ));
                    }
                }
            }
            svg.push_str(&legend_entry(i, &s.name));
        }
        for &(x, y) in &self.markers {
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"5\" fill=\"none\" stroke=\"#d1495b\" stroke-width=\"2\"/>",
                to_x(x),
                to_y(y)
            ));
        }
        svg.push_str(&axis_labels(&self.x_label, &self.y_label));
        svg.push_str("</svg>\n");
        svg
    }
}

/// A labeled vertical bar chart; selected bars can be highlighted.
#[derive(Debug, Clone)]
pub struct BarChart {
    title: String,
    y_label: String,
    bars: Vec<(String, f64)>,
    highlights: BTreeSet<usize>,
}

impl BarChart {
    pub fn new(title: &str, y_label: &str) -> Self {
        BarChart { title: title.into(), y_label: y_label.into(), bars: Vec::new(), highlights: BTreeSet::new() }
    }

    pub fn push(&mut self, label: &str, value: f64) {
        self.bars.push((label.into(), value));
    }

    pub fn highlight(&mut self, index: usize) {
        self.highlights.insert(index);
    }

    pub fn to_svg(&self) -> String {
        let mut svg = svg_open(&self.title);
        if self.bars.is_empty() {
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">no data</text>",
                WIDTH / 2.0,
                HEIGHT / 2.0
            ));
            svg.push_str("</svg>\n");
            return svg;
        }
        let top = self.bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-12);
        let (_, y_max) = expand((0.0, top));
        let to_y = |v: f64| MARGIN_T + plot_h() - v / y_max * plot_h();
        svg.push_str(&axes());
        for (pos, label) in ticks(0.0, y_max, 5) {
            let y = to_y(pos);
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>",
                MARGIN_L,
                MARGIN_L + plot_w()
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{label}</text>",
                MARGIN_L - 6.0,
                y + 4.0
            ));
        }
        let slot = plot_w() / self.bars.len() as f64;
        let bar_w = slot * 0.72;
        let label_every = (self.bars.len() + 15) / 16;
        for (i, (label, value)) in self.bars.iter().enumerate() {
            let x = MARGIN_L + i as f64 * slot + (slot - bar_w) / 2.0;
            let y = to_y(*value);
            let fill = if self.highlights.contains(&i) { "#d1495b" } else { "#2f6f9f" };
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" fill=\"{fill}\"/>",
                MARGIN_T + plot_h() - y
            ));
            if i % label_every == 0 {
                svg.push_str(&format!(
                    "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
                    x + bar_w / 2.0,
                    MARGIN_T + plot_h() + 16.0,
                    xml_escape(label)
                ));
            }
        }
        svg.push_str(&axis_labels("", &self.y_label));
        svg.push_str("</svg>\n");
        svg
    }
}

fn plot_w() -> f64 {
    WIDTH - MARGIN_L - MARGIN_R
}

fn plot_h() -> f64 {
    HEIGHT - MARGIN_T - MARGIN_B
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\">\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\
         <text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        xml_escape(title)
    )
}

fn axes() -> String {
    format!(
        "<line x1=\"{l:.1}\" y1=\"{t:.1}\" x2=\"{l:.1}\" y2=\"{b:.1}\" stroke=\"#333\"/>\
         <line x1=\"{l:.1}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"#333\"/>",
        l = MARGIN_L,
        t = MARGIN_T,
        b = MARGIN_T + plot_h(),
        r = MARGIN_L + plot_w()
    )
}

fn axis_labels(x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    if !x_label.is_empty() {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
            MARGIN_L + plot_w() / 2.0,
            HEIGHT - 10.0,
            xml_escape(x_label)
        ));
    }
    if !y_label.is_empty() {
        out.push_str(&format!(
            "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" \
             transform=\"rotate(-90 14 {:.1})\">{}</text>",
            MARGIN_T + plot_h() / 2.0,
            MARGIN_T + plot_h() / 2.0,
            xml_escape(y_label)
        ));
    }
    out
}

fn legend_entry(index: usize, name: &str) -> String {
    let x = MARGIN_L + 8.0 + index as f64 * 180.0;
    let color = PALETTE[index % PALETTE.len()];
    format!(
        "<rect x=\"{x:.1}\" y=\"30\" width=\"12\" height=\"12\" fill=\"{color}\"/>\
         <text x=\"{:.1}\" y=\"40\" font-size=\"11\">{}</text>",
        x + 16.0,
        xml_escape(name)
    )
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn expand((lo, hi): (f64, f64)) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = (hi - lo) * 0.04;
        (lo - pad, hi + pad)
    }
}

/// Round-numbered ticks covering [lo, hi] with roughly `target` steps.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<(f64, String)> {
    let range = (hi - lo).max(1e-12);
    let raw = range / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm <= 1.0 {
            1.0
        } else if norm <= 2.0 {
            2.0
        } else if norm <= 5.0 {
            5.0
        } else {
            10.0
        };
    let mut out = Vec::new();
    let mut v = (lo / step).ceil() * step;
    while v <= hi + step * 1e-9 {
        out.push((v, fmt_tick(v, step)));
        v += step;
    }
    out
}

fn fmt_tick(v: f64, step: f64) -> String {
    if v.abs() >= 1_000_000.0 && (v / 100_000.0).fract().abs() < 1e-9 {
        return format!("{}M", trim_zeros(&format!("{:.1}", v / 1_000_000.0)));
    }
    if v.abs() >= 1000.0 && (v / 100.0).fract().abs() < 1e-9 {
        return format!("{}k", trim_zeros(&format!("{:.1}", v / 1000.0)));
    }
    let decimals = (0..=6).find(|d| (step * 10f64.powi(*d)).fract().abs() < 1e-9).unwrap_or(6) as usize;
    format!("{v:.decimals$}")
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Keeps at most `max` evenly spaced entries so labels don't collide.
fn thin(ticks: &[(f64, String)], max: usize) -> Vec<(f64, String)> {
    if ticks.len() <= max {
        return ticks.to_vec();
    }
    let every = ticks.len().div_ceil(max);
    ticks.iter().step_by(every).cloned().collect()
}

#[derive(Debug, Clone)]
pub struct Section {
    pub heading: String,
    pub body: String,
}

impl Section {
    pub fn new(heading: &str, body: String) -> Self {
        Section { heading: heading.into(), body }
    }
}

/// Assembles a single self-contained page; section bodies are raw HTML
/// (tables and inline SVG from this module).
pub fn html_page(title: &str, sections: &[Section]) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">");
    out.push_str(&format!("<title>{}</title>", xml_escape(title)));
    out.push_str(
        "<style>body{font-family:sans-serif;max-width:880px;margin:24px auto;padding:0 12px;color:#222}\
         h1{font-size:22px}h2{font-size:17px;margin-top:28px}\
         table{border-collapse:collapse;margin:8px 0}\
         td,th{border:1px solid #999;padding:3px 9px;font-size:13px;text-align:right}\
         th{background:#eef2f5}td:first-child,th:first-child{text-align:left}\
         p{font-size:14px}</style></head><body>",
    );
    out.push_str(&format!("<h1>{}</h1>", xml_escape(title)));
    for s in sections {
        out.push_str(&format!("<h2>{}</h2>\n{}\n", xml_escape(&s.heading), s.body));
    }
    out.push_str("</body></html>\n");
    out
}

pub fn html_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::from("<table><tr>");
    for h in header {
        out.push_str(&format!("<th>{}</th>", xml_escape(h)));
    }
    out.push_str("</tr>");
    for row in rows {
        out.push_str("<tr>");
        for cell in row {
            out.push_str(&format!("<td>{}</td>", xml_escape(cell)));
        }
        out.push_str("</tr>");
    }
    out.push_str("</table>");
    out
}
