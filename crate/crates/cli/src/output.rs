//! Deterministic CSV and SVG emission. Floats are written with Rust's
//! shortest round-trip formatting so identical runs produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use unpctl_core::{Error, Result};

pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "csv row width");
        self.rows.push(row);
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.header.join(",")).expect("vec write");
        for row in &self.rows {
            writeln!(buf, "{}", row.join(",")).expect("vec write");
        }
        write_bytes(path, &buf)
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

/// Minimal self-drawn SVG: polylines, circles and annular sectors on a
/// fixed viewport with linear world-to-view mapping.
pub struct Svg {
    width: f64,
    height: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Svg {
            width,
            height,
            x_range,
            y_range,
            body: String::new(),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * self.width;
        let sy = self.height - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * self.height;
        (sx, sy)
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], color: &str, width: f64) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (sx, sy) = self.map(x, y);
                format!("{:.2},{:.2}", sx, sy)
            })
            .collect();
        self.body.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
    }

    pub fn circle(&mut self, x: f64, y: f64, r_px: f64, color: &str) {
        let (sx, sy) = self.map(x, y);
        self.body.push_str(&format!(
            "<circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"{r_px:.2}\" fill=\"{color}\"/>\n"
        ));
    }

    /// Annular sector between radii (r0, r1) and angles (a0, a1), filled
    /// with a grayscale level in [0, 1] (1 = black).
    pub fn annular_sector(&mut self, r0: f64, r1: f64, a0: f64, a1: f64, level: f64) {
        let gray = (255.0 * (1.0 - level.clamp(0.0, 1.0))) as u8;
        let col = format!("#{gray:02x}{gray:02x}{gray:02x}");
        // approximate with straight segments along the arcs
        let steps = 24usize;
        let mut pts = Vec::new();
        for s in 0..=steps {
            let a = a0 + (a1 - a0) * s as f64 / steps as f64;
            pts.push((r1 * a.cos(), r1 * a.sin()));
        }
        for s in (0..=steps).rev() {
            let a = a0 + (a1 - a0) * s as f64 / steps as f64;
            pts.push((r0 * a.cos(), r0 * a.sin()));
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (sx, sy) = self.map(x, y);
                format!("{sx:.2},{sy:.2}")
            })
            .collect();
        self.body.push_str(&format!(
            "<polygon fill=\"{col}\" stroke=\"none\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
    }

    pub fn text(&mut self, x: f64, y: f64, s: &str) {
        let (sx, sy) = self.map(x, y);
        self.body.push_str(&format!(
            "<text x=\"{sx:.2}\" y=\"{sy:.2}\" font-size=\"11\" font-family=\"sans-serif\">{s}</text>\n"
        ));
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let doc = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
             viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        );
        write_bytes(path, doc.as_bytes())
    }
}
