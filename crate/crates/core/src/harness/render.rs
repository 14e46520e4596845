//! Plain SVG figures drawn from the exported CSVs. Coordinates are printed
//! with fixed precision so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::export::{
    read_bland_altman, read_curves, read_sweep, BlandAltmanTable, CurveTable, SweepPoint,
    BLAND_ALTMAN_CSV, CURVES_CSV, SWEEP_CSV,
};
use super::HarnessError;
use crate::acquisition::Mode;
use crate::stats::{confidence_check, CI_TOLERANCE_PERCENT, GOLD_AREA, GOLD_FLOW};

pub const FIG4_CURVES_SVG: &str = "fig4_curves.svg";
pub const FIG4_BLAND_ALTMAN_SVG: &str = "fig4_bland_altman.svg";
pub const FIG5_SWEEP_SVG: &str = "fig5_sweep.svg";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const CINE_COLOR: &str = "#1f77b4";
const EPI_COLOR: &str = "#d62728";
const SIZE_PALETTE: [&str; 10] = [
    "#440154", "#482878", "#3e4989", "#31688e", "#26828e", "#1f9e89", "#35b779", "#6ece58",
    "#b5de2b", "#fde725",
];

/// Step of roughly `span / 6` rounded to 1, 2 or 5 times a power of ten.
fn tick_step(span: f64) -> f64 {
    let raw = (span / 6.0).max(1e-12);
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

struct Plot {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

impl Plot {
    /// Axes covering the values padded by 5% and snapped to ticks.
    fn new(xs: (f64, f64), ys: (f64, f64)) -> Self {
        let snap = |(lo, hi): (f64, f64)| {
            let (lo, hi) = if !(lo.is_finite() && hi.is_finite()) {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 1.0, hi + 1.0)
            };
            let pad = 0.05 * (hi - lo);
            let step = tick_step(hi - lo + 2.0 * pad);
            (
                ((lo - pad) / step).floor() * step,
                ((hi + pad) / step).ceil() * step,
            )
        };
        Self {
            x: snap(xs),
            y: snap(ys),
            body: String::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), style: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" {style}/>"#,
            self.px(a.0),
            self.py(a.1),
            self.px(b.0),
            self.py(b.1)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
    }

    fn marker(&mut self, x: f64, y: f64, color: &str, square: bool) {
        let (cx, cy) = (self.px(x), self.py(y));
        if square {
            let _ = writeln!(
                self.body,
                r#"<rect x="{:.2}" y="{:.2}" width="7.00" height="7.00" fill="{color}"/>"#,
                cx - 3.5,
                cy - 3.5
            );
        } else {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3.50" fill="{color}"/>"#
            );
        }
    }

    fn hline(&mut self, y: f64, color: &str, dashed: bool, label: &str) {
        let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
        self.line(
            (self.x.0, y),
            (self.x.1, y),
            &format!(r#"stroke="{color}" stroke-width="1.5"{dash}"#),
        );
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" fill="{color}">{label}</text>"#,
            WIDTH - RIGHT - 4.0,
            self.py(y) - 4.0
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="12" fill="{color}">{s}</text>"#
        );
    }

    fn finish(self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24.00" font-size="15" text-anchor="middle">{title}</text>"#,
            WIDTH / 2.0
        );
        let (x0, x1) = (self.px(self.x.0), self.px(self.x.1));
        let (y0, y1) = (self.py(self.y.0), self.py(self.y.1));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for (axis, (lo, hi)) in [(0, self.x), (1, self.y)] {
            let step = tick_step(hi - lo);
            let first = (lo / step).ceil() as i64;
            let last = (hi / step + 1e-9).floor() as i64;
            for k in first..=last {
                let v = k as f64 * step;
                let digits = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
                let label = format!("{v:.digits$}");
                if axis == 0 {
                    let x = self.px(v);
                    let _ = writeln!(
                        s,
                        r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{label}</text>"#,
                        y0 + 5.0,
                        y0 + 18.0
                    );
                } else {
                    let y = self.py(v);
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{label}</text>"#,
                        x0 - 5.0,
                        x0 - 8.0,
                        y + 4.0
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{xlabel}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="16.00" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16.00 {:.2})">{ylabel}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// CINE and aligned EPI curves over the 32 cycle points, EPI with SD bars.
pub fn curves_svg(t: &CurveTable) -> String {
    let n = t.cine.len();
    let ys = extent(
        t.cine
            .iter()
            .copied()
            .chain(t.epi.iter().zip(&t.epi_sd).flat_map(|(q, s)| [q - s, q + s])),
    );
    let mut p = Plot::new((0.0, n.saturating_sub(1) as f64), ys);
    for (j, (q, s)) in t.epi.iter().zip(&t.epi_sd).enumerate() {
        let x = j as f64;
        p.line((x, q - s), (x, q + s), &format!(r#"stroke="{EPI_COLOR}" stroke-width="1""#));
    }
    let pts = |v: &[f64]| -> Vec<(f64, f64)> {
        v.iter().enumerate().map(|(j, &q)| (j as f64, q)).collect()
    };
    p.polyline(&pts(&t.cine), CINE_COLOR);
    p.polyline(&pts(&t.epi), EPI_COLOR);
    for (j, &q) in t.epi.iter().enumerate() {
        p.marker(j as f64, q, EPI_COLOR, true);
    }
    for (j, &q) in t.cine.iter().enumerate() {
        p.marker(j as f64, q, CINE_COLOR, false);
    }
    p.text(LEFT + 10.0, TOP + 16.0, "CINE", CINE_COLOR);
    p.text(LEFT + 10.0, TOP + 32.0, "EPI (mean ± SD)", EPI_COLOR);
    p.finish("Average cycle", "cycle point", "flow (mm³/s)")
}

/// Differences against pair means with the mean and limits of agreement.
pub fn bland_altman_svg(t: &BlandAltmanTable) -> String {
    let xs = extent(t.pair_means.iter().copied());
    let ys = extent(t.diffs.iter().copied().chain([t.loa_low, t.loa_high, t.mean_diff]));
    let mut p = Plot::new(xs, ys);
    p.hline(t.mean_diff, "black", false, &format!("mean {:.1}", t.mean_diff));
    p.hline(t.loa_low, "gray", true, &format!("LoA {:.1}", t.loa_low));
    p.hline(t.loa_high, "gray", true, &format!("LoA {:.1}", t.loa_high));
    for (m, d) in t.pair_means.iter().zip(&t.diffs) {
        p.marker(*m, *d, EPI_COLOR, false);
    }
    p.finish(
        "Bland–Altman: EPI − CINE",
        "mean of EPI and CINE (mm³/s)",
        "difference (mm³/s)",
    )
}

/// Area against mean flow per sweep cell, colour by pixel size, marker by mode,
/// over the confidence box of both gold values.
pub fn sweep_svg(points: &[SweepPoint]) -> String {
    let ok: Vec<(&SweepPoint, f64, f64)> = points
        .iter()
        .filter_map(|p| Some((p, p.area?, p.mean_flow?)))
        .collect();
    let area_ci = confidence_check(GOLD_AREA, GOLD_AREA, CI_TOLERANCE_PERCENT).expect("gold > 0");
    let flow_ci = confidence_check(GOLD_FLOW, GOLD_FLOW, CI_TOLERANCE_PERCENT).expect("gold > 0");
    let xs = extent(ok.iter().map(|p| p.1).chain([area_ci.low, area_ci.high]));
    let ys = extent(ok.iter().map(|p| p.2).chain([flow_ci.low, flow_ci.high]));
    let mut p = Plot::new(xs, ys);
    let (x0, x1) = (p.px(area_ci.low), p.px(area_ci.high));
    let (y0, y1) = (p.py(flow_ci.high), p.py(flow_ci.low));
    let _ = writeln!(
        p.body,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#2ca02c" fill-opacity="0.12" stroke="#2ca02c"/>"##,
        x1 - x0,
        y1 - y0
    );

    let mut sizes: Vec<f64> = points.iter().map(|p| p.pixel_size).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    for mode in [Mode::Cine, Mode::Epi] {
        for (k, size) in sizes.iter().enumerate() {
            let color = palette_color(k, sizes.len());
            let _ = writeln!(
                p.body,
                r#"<g class="series" data-mode="{mode}" data-pixel-size="{size:.2}">"#
            );
            for (_, area, flow) in ok.iter().filter(|q| q.0.mode == mode && q.0.pixel_size == *size) {
                p.marker(*area, *flow, color, mode == Mode::Epi);
            }
            p.body.push_str("</g>\n");
        }
    }
    let mut y = TOP + 14.0;
    for (k, size) in sizes.iter().enumerate() {
        let color = palette_color(k, sizes.len());
        p.text(WIDTH - RIGHT - 70.0, y, &format!("{size:.1} mm"), color);
        y += 14.0;
    }
    p.text(LEFT + 10.0, TOP + 16.0, "● CINE   ■ EPI", "black");
    p.finish("Pixel-size sweep", "segmented area (mm²)", "mean flow (mm³/s)")
}

fn palette_color(k: usize, n: usize) -> &'static str {
    if n <= 1 {
        return SIZE_PALETTE[0];
    }
    SIZE_PALETTE[k * (SIZE_PALETTE.len() - 1) / (n - 1)]
}

fn write(dir: &Path, name: &str, svg: String) -> Result<PathBuf, HarnessError> {
    let path = dir.join(name);
    fs::write(&path, svg).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Draws every figure whose CSVs are present in `dir`.
pub fn render_dir(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    if dir.join(CURVES_CSV).exists() {
        out.push(write(dir, FIG4_CURVES_SVG, curves_svg(&read_curves(dir)?))?);
    }
    if dir.join(BLAND_ALTMAN_CSV).exists() {
        out.push(write(
            dir,
            FIG4_BLAND_ALTMAN_SVG,
            bland_altman_svg(&read_bland_altman(dir)?),
        )?);
    }
    if dir.join(SWEEP_CSV).exists() {
        out.push(write(dir, FIG5_SWEEP_SVG, sweep_svg(&read_sweep(dir)?))?);
    }
    if out.is_empty() {
        return Err(HarnessError::Config(format!(
            "{} holds none of {CURVES_CSV}, {BLAND_ALTMAN_CSV}, {SWEEP_CSV}",
            dir.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(tick_step(60.0), 10.0);
        assert_eq!(tick_step(1200.0), 200.0);
        assert!((tick_step(3.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sweep_has_one_group_per_mode_and_size() {
        let mut pts = Vec::new();
        for k in 0..10 {
            for mode in [Mode::Cine, Mode::Epi] {
                pts.push(SweepPoint {
                    pixel_size: 0.8 + 0.4 * k as f64,
                    mode,
                    area: Some(70.0 - k as f64),
                    mean_flow: Some(1150.0 - 10.0 * k as f64),
                });
            }
        }
        pts.push(SweepPoint {
            pixel_size: 4.4,
            mode: Mode::Epi,
            area: None,
            mean_flow: None,
        });
        let svg = sweep_svg(&pts);
        assert_eq!(svg.matches(r#"<g class="series""#).count(), 20);
        assert_eq!(svg, sweep_svg(&pts));
    }
}
