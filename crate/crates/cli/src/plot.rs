//! Hand-written SVG line charts. Output depends only on the input numbers.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub manifest_hash: &'a str,
    /// One polyline per episode, indexed by step.
    pub series: Vec<Vec<f64>>,
    /// Horizontal reference lines, drawn red and dashed.
    pub references: Vec<f64>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl Chart<'_> {
    fn ranges(&self) -> (f64, f64, f64) {
        let n = self.series.iter().map(Vec::len).max().unwrap_or(1).max(2);
        let vals = self.series.iter().flatten().chain(&self.references).copied().filter(|v| v.is_finite());
        let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        ((n - 1) as f64, lo - pad, hi + pad)
    }

    pub fn render(&self) -> String {
        let (x_max, lo, hi) = self.ranges();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + pw * x / x_max;
        let sy = |y: f64| TOP + ph * (hi - y) / (hi - lo);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(s, "<!-- manifest: {} -->", esc(self.manifest_hash));
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            esc(self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
        );
        for i in 0..=TICKS {
            let y = lo + (hi - lo) * i as f64 / TICKS as f64;
            let x = x_max * i as f64 / TICKS as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(y) + 4.0,
                tick_label(y)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                sx(x),
                TOP + ph + 16.0,
                tick_label(x)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            esc(self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(self.y_label)
        );
        for line in &self.series {
            let pts: Vec<String> = line
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(i, &v)| format!("{:.2},{:.2}", sx(i as f64), sy(v)))
                .collect();
            let _ = writeln!(
                s,
                r##"<polyline fill="none" stroke="#1f4e9c" stroke-opacity="0.35" stroke-width="1.2" points="{}"/>"##,
                pts.join(" ")
            );
        }
        for &r in &self.references {
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="red" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                LEFT + pw,
                y = sy(r)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Distinct finite values in ascending order.
pub fn distinct(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> Chart<'static> {
        Chart {
            title: "Price <paths>",
            x_label: "step",
            y_label: "price",
            manifest_hash: "abc",
            series: vec![vec![700.0, 850.0, 950.0], vec![700.0, 800.0, 1000.0]],
            references: vec![1000.0],
        }
    }

    #[test]
    fn renders_lines_and_reference() {
        let svg = chart().render();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"stroke="red""#) && svg.contains("stroke-dasharray"));
        assert!(svg.contains("Price &lt;paths&gt;"));
        assert!(svg.contains("<!-- manifest: abc -->"));
        assert_eq!(svg, chart().render());
    }

    #[test]
    fn flat_and_empty_inputs_do_not_divide_by_zero() {
        let mut c = chart();
        c.series = vec![vec![5.0; 4]];
        c.references.clear();
        assert!(!c.render().contains("NaN"));
        c.series.clear();
        assert!(!c.render().contains("NaN"));
    }

    #[test]
    fn distinct_values() {
        assert_eq!(distinct([3.0, 1.0, 3.0, f64::NAN]), vec![1.0, 3.0]);
    }
}
