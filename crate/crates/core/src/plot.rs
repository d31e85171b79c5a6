//! Minimal SVG grouped bar chart.

use std::fmt::Write as _;

use crate::cue::{Cue, HistogramReport};

/// Groups of bars, one bar per series inside each group.
#[derive(Clone, Debug, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub series: Vec<String>,
    pub groups: Vec<(String, Vec<f64>)>,
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl BarChart {
    pub fn new(title: impl Into<String>, y_label: impl Into<String>, series: Vec<String>) -> Self {
        BarChart {
            title: title.into(),
            y_label: y_label.into(),
            series,
            groups: Vec::new(),
        }
    }

    pub fn push_group(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.groups.push((name.into(), values));
    }

    /// Render to a standalone SVG document. The y axis always includes zero.
    pub fn to_svg(&self) -> String {
        let (w, h) = (720.0, 420.0);
        let (left, right, top, bottom) = (70.0, 20.0, 40.0, 110.0);
        let plot_w = w - left - right;
        let plot_h = h - top - bottom;
        let values = self.groups.iter().flat_map(|g| g.1.iter().copied()).filter(|v| v.is_finite());
        let (mut lo, mut hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi - lo < 1e-9 {
            hi = lo + 1.0;
        }
        let pad = 0.05 * (hi - lo);
        hi += pad;
        if lo < 0.0 {
            lo -= pad;
        }
        let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            w / 2.0,
            escape(&self.title)
        );
        // horizontal grid with 5 ticks
        for i in 0..=5 {
            let v = lo + (hi - lo) * i as f64 / 5.0;
            let yy = y(v);
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
                left + plot_w,
                left - 6.0,
                yy + 4.0
            );
        }
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333"/>"##,
            y(0.0),
            left + plot_w,
            y(0.0)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            top + plot_h / 2.0,
            escape(&self.y_label)
        );
        let n_groups = self.groups.len().max(1) as f64;
        let group_w = plot_w / n_groups;
        let n_series = self.series.len().max(1) as f64;
        let bar_w = group_w * 0.8 / n_series;
        for (gi, (name, vals)) in self.groups.iter().enumerate() {
            let gx = left + group_w * gi as f64 + group_w * 0.1;
            for (si, &v) in vals.iter().enumerate() {
                if !v.is_finite() {
                    continue;
                }
                let (y0, y1) = (y(0.0), y(v));
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {v:.2}</title></rect>"#,
                    gx + bar_w * si as f64,
                    y0.min(y1),
                    bar_w,
                    (y0 - y1).abs(),
                    PALETTE[si % PALETTE.len()],
                    escape(self.series.get(si).map(String::as_str).unwrap_or(""))
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-30 {:.1} {:.1})">{}</text>"#,
                gx + group_w * 0.4,
                top + plot_h + 16.0,
                gx + group_w * 0.4,
                top + plot_h + 16.0,
                escape(name)
            );
        }
        for (si, name) in self.series.iter().enumerate() {
            let lx = left + 10.0 + 110.0 * si as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                h - 20.0,
                PALETTE[si % PALETTE.len()],
                lx + 14.0,
                h - 11.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Percent of cue occurrences per cue, one series for the whole corpus and one per split.
pub fn histogram_chart(title: &str, report: &HistogramReport) -> BarChart {
    let mut series = vec!["all".to_string()];
    series.extend(report.per_split.keys().map(|s| s.name().to_string()));
    let mut chart = BarChart::new(title, "share of cue occurrences (%)", series);
    let pct = |h: &crate::cue::CueHistogram, c: Cue| {
        let t = h.total_occurrences();
        if t == 0 {
            0.0
        } else {
            100.0 * h.count(c) as f64 / t as f64
        }
    };
    for cue in Cue::ALL {
        let mut values = vec![pct(&report.overall, cue)];
        values.extend(report.per_split.values().map(|h| pct(h, cue)));
        chart.push_group(cue.display_name(), values);
    }
    chart
}
