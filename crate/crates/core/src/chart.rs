//! Static SVG bar charts of report metrics, one bar per report row.

use std::fmt::Write as _;

use crate::eval::UpliftReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ItemsSold,
    SuccessfulProviders,
    TreatedProviders,
    SerLift,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::ItemsSold,
        Metric::SuccessfulProviders,
        Metric::TreatedProviders,
        Metric::SerLift,
    ];

    /// File stem of the chart.
    pub fn slug(self) -> &'static str {
        match self {
            Metric::ItemsSold => "items_sold",
            Metric::SuccessfulProviders => "successful_providers",
            Metric::TreatedProviders => "treated_providers",
            Metric::SerLift => "ser_lift",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::ItemsSold => "Uplift in items sold",
            Metric::SuccessfulProviders => "Uplift in successful providers",
            Metric::TreatedProviders => "Treated providers",
            Metric::SerLift => "SER lift",
        }
    }

    pub fn value(self, r: &UpliftReport) -> f64 {
        match self {
            Metric::ItemsSold => r.uplift_items_sold,
            Metric::SuccessfulProviders => r.uplift_successful_providers,
            Metric::TreatedProviders => r.n_treated_providers as f64,
            Metric::SerLift => r.ser_lift,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one metric; the axis spans zero and every value, so negative bars
/// hang below the baseline and zero values draw as zero-height bars.
pub fn render_bar_chart(metric: Metric, reports: &[UpliftReport]) -> String {
    let values: Vec<f64> = reports.iter().map(|r| metric.value(r)).collect();
    let mut hi = values.iter().copied().fold(0.0f64, f64::max);
    let mut lo = values.iter().copied().fold(0.0f64, f64::min);
    if hi == lo {
        hi = 1.0;
        lo = 0.0;
    }
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let y_of = |v: f64| MARGIN_TOP + (hi - v) / (hi - lo) * plot_h;
    let zero_y = y_of(0.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        metric.title()
    );
    // Axis and ticks.
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{:.2}" stroke="black"/>"#,
        MARGIN_TOP + plot_h
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 4.0,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<line class="baseline" x1="{MARGIN_LEFT}" y1="{zero_y:.2}" x2="{:.2}" y2="{zero_y:.2}" stroke="black"/>"#,
        WIDTH - MARGIN_RIGHT
    );

    if !reports.is_empty() {
        let slot = plot_w / reports.len() as f64;
        let bar_w = slot * 0.7;
        for (i, (r, &v)) in reports.iter().zip(&values).enumerate() {
            let x = MARGIN_LEFT + slot * i as f64 + (slot - bar_w) / 2.0;
            let y = y_of(v.max(0.0));
            let h = (y_of(v.min(0.0)) - y).abs();
            let name = escape(&r.strategy_name);
            let _ = writeln!(
                svg,
                r#"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{h:.2}" fill="{}"><title>{name}: {v}</title></rect>"#,
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{name}</text>"#,
                x + bar_w / 2.0,
                HEIGHT - MARGIN_BOTTOM + 18.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}
