//! Minimal self-contained SVG plots in world coordinates (y up).

use std::fmt::Write as _;

use segekf_core::geometry::{Point2, Segment};

const SIZE: f64 = 640.0;
const MARGIN: f64 = 24.0;

pub struct Plot {
    min: Point2,
    max: Point2,
    items: Vec<String>,
    legend: Vec<(String, String)>,
}

impl Plot {
    /// A plot whose view box covers every given point.
    pub fn covering<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Self {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            if p.x.is_finite() && p.y.is_finite() {
                min = Point2::new(min.x.min(p.x), min.y.min(p.y));
                max = Point2::new(max.x.max(p.x), max.y.max(p.y));
            }
        }
        if !min.x.is_finite() {
            min = Point2::new(-1.0, -1.0);
            max = Point2::new(1.0, 1.0);
        }
        Self {
            min,
            max,
            items: Vec::new(),
            legend: Vec::new(),
        }
    }

    fn scale(&self) -> f64 {
        let span = (self.max.x - self.min.x).max(self.max.y - self.min.y).max(1e-6);
        (SIZE - 2.0 * MARGIN) / span
    }

    fn map(&self, p: Point2) -> (f64, f64) {
        let s = self.scale();
        (MARGIN + (p.x - self.min.x) * s, SIZE - MARGIN - (p.y - self.min.y) * s)
    }

    pub fn points(&mut self, pts: &[Point2], color: &str) {
        for p in pts {
            let (x, y) = self.map(*p);
            self.items.push(format!(
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{color}"/>"#
            ));
        }
    }

    pub fn segment(&mut self, s: Segment, color: &str, width: f64, dashed: bool) {
        let (x1, y1) = self.map(s.p1);
        let (x2, y2) = self.map(s.p2);
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        self.items.push(format!(
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{color}" stroke-width="{width}"{dash}/>"#
        ));
    }

    pub fn polyline(&mut self, pts: &[Point2], color: &str) {
        let mut coords = String::new();
        for p in pts {
            let (x, y) = self.map(*p);
            let _ = write!(coords, "{x:.2},{y:.2} ");
        }
        self.items.push(format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.trim_end()
        ));
    }

    pub fn legend(&mut self, label: &str, color: &str) {
        self.legend.push((label.to_string(), color.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        out.push('\n');
        out.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
        out.push('\n');
        for item in &self.items {
            out.push_str(item);
            out.push('\n');
        }
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let y = 16.0 + 14.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<text x="8" y="{y}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
                escape(label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
