//! Static SVG charts. Output depends only on the data, so reruns are
//! byte-identical.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use emi_core::econ::dist::t_quantile;
use emi_core::panel::PanelRow;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    step: f64,
}

impl Axis {
    /// Rounds the data range outwards to a 1-2-5 step grid.
    fn nice(mut lo: f64, mut hi: f64, target: usize) -> Axis {
        if !lo.is_finite() || !hi.is_finite() {
            return Axis { lo: 0.0, hi: 1.0, step: 0.2 };
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
            lo -= pad;
            hi += pad;
        }
        let raw = (hi - lo) / target.max(1) as f64;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        Axis { lo: (lo / step).floor() * step, hi: (hi / step).ceil() * step, step }
    }

    fn ticks(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }

    fn decimals(&self) -> usize {
        (-self.step.log10().floor()).max(0.0) as usize
    }
}

struct Frame {
    x: Axis,
    y: Axis,
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.lo) / (self.x.hi - self.x.lo) * (W - LEFT - RIGHT)
    }

    fn py_on(&self, axis: &Axis, v: f64) -> f64 {
        H - BOTTOM - (v - axis.lo) / (axis.hi - axis.lo) * (H - TOP - BOTTOM)
    }

    fn py(&self, v: f64) -> f64 {
        self.py_on(&self.y, v)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, title: &str, hash: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<!-- config_hash: {hash} -->");
    let _ = writeln!(out, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(out, r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title));
}

fn path(points: &[(f64, f64)]) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
    }
    d
}

fn x_axis(out: &mut String, f: &Frame, label: &str, integer: bool) {
    let base = H - BOTTOM;
    let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{base}" x2="{:.1}" y2="{base}" stroke="#333333"/>"##, W - RIGHT);
    for t in f.x.ticks() {
        let x = f.px(t);
        let text = if integer { format!("{}", t.round() as i64) } else { format!("{t:.*}", f.x.decimals()) };
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{base}" x2="{x:.2}" y2="{:.1}" stroke="#333333"/>"##, base + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">{text}</text>"#, base + 19.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 16.0,
        esc(label)
    );
}

fn y_axis(out: &mut String, f: &Frame, axis: &Axis, label: &str, right: bool) {
    let x0 = if right { W - RIGHT } else { LEFT };
    let dir = if right { 1.0 } else { -1.0 };
    let anchor = if right { "start" } else { "end" };
    let _ = writeln!(out, r##"<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{:.1}" stroke="#333333"/>"##, H - BOTTOM);
    for t in axis.ticks() {
        let y = f.py_on(axis, t);
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#333333"/>"##, x0 + 5.0 * dir);
        if !right {
            let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#e6e6e6"/>"##, W - RIGHT);
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="{anchor}">{t:.*}</text>"#,
            x0 + 8.0 * dir,
            y + 4.0,
            axis.decimals()
        );
    }
    let cx = x0 + 52.0 * dir;
    let cy = (TOP + H - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="{cx:.1}" y="{cy:.1}" text-anchor="middle" transform="rotate(-90 {cx:.1} {cy:.1})">{}</text>"#,
        esc(label)
    );
}

fn legend(out: &mut String, items: &[(String, &str, bool)]) {
    let mut x = LEFT + 10.0;
    let y = TOP + 14.0;
    for (label, colour, dashed) in items {
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{colour}" stroke-width="2"{dash}/>"#,
            x + 22.0
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 28.0, y + 4.0, esc(label));
        x += 40.0 + 7.0 * label.len() as f64;
    }
}

/// EMI with its interval band on the left axis, DDI dashed on the right axis.
pub fn trend_svg(country: &str, series: &[&PanelRow], hash: &str) -> String {
    let mut rows: Vec<&PanelRow> = series.to_vec();
    rows.sort_by_key(|r| r.year);
    let (y0, y1) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => (a.year as f64, b.year as f64),
        _ => (0.0, 1.0),
    };
    let x = if y1 > y0 { Axis { lo: y0, hi: y1, step: ((y1 - y0) / 10.0).ceil().max(1.0) } } else { Axis::nice(y0, y1, 4) };
    let lo = rows.iter().map(|r| r.emi_ci_low.min(r.emi)).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.emi_ci_high.max(r.emi)).fold(f64::NEG_INFINITY, f64::max);
    let y = Axis::nice(lo, hi, 5);
    let ddi: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.ddi.map(|d| (r.year as f64, d))).collect();
    let d_lo = ddi.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let d_hi = ddi.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let right = Axis::nice(d_lo, d_hi, 5);
    let f = Frame { x, y };

    let mut out = String::new();
    open(&mut out, &format!("EMI and DDI, {country}"), hash);
    y_axis(&mut out, &f, &f.y, "EMI", false);
    y_axis(&mut out, &f, &right, "DDI", true);
    x_axis(&mut out, &f, "Year", true);

    if !rows.is_empty() {
        let mut band: Vec<(f64, f64)> = rows.iter().map(|r| (f.px(r.year as f64), f.py(r.emi_ci_high))).collect();
        band.extend(rows.iter().rev().map(|r| (f.px(r.year as f64), f.py(r.emi_ci_low))));
        let _ = writeln!(out, r##"<path d="{} Z" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##, path(&band));
        let line: Vec<(f64, f64)> = rows.iter().map(|r| (f.px(r.year as f64), f.py(r.emi))).collect();
        let _ = writeln!(out, r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, path(&line));
        for (px, py) in &line {
            let _ = writeln!(out, r##"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="#1f77b4"/>"##);
        }
    }
    if !ddi.is_empty() {
        let pts: Vec<(f64, f64)> = ddi.iter().map(|(yr, d)| (f.px(*yr), f.py_on(&right, *d))).collect();
        let _ =
            writeln!(out, r##"<path d="{}" fill="none" stroke="#d62728" stroke-width="2" stroke-dasharray="6 4"/>"##, path(&pts));
    }
    legend(&mut out, &[("EMI (band: interval)".into(), "#1f77b4", false), ("DDI".into(), "#d62728", true)]);
    out.push_str("</svg>\n");
    out
}

struct LineFit {
    a: f64,
    b: f64,
    n: usize,
    mean_x: f64,
    sxx: f64,
    s2: f64,
}

fn fit_line(pts: &[(f64, f64)]) -> Option<LineFit> {
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let b = sxy / sxx;
    let a = mean_y - b * mean_x;
    let rss: f64 = pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    let s2 = if n > 2 { rss / (n - 2) as f64 } else { f64::NAN };
    Some(LineFit { a, b, n, mean_x, sxx, s2 })
}

/// EMI against DDI, one fitted line per country plus the pooled fit with a
/// 95% band for the mean prediction.
pub fn scatter_svg(rows: &[PanelRow], hash: &str) -> Result<String> {
    let pts: Vec<(&str, f64, f64)> = rows.iter().filter_map(|r| r.ddi.map(|d| (r.country.as_str(), r.emi, d))).collect();
    if pts.is_empty() {
        bail!("no panel rows with both EMI and DDI to plot");
    }
    let mut countries: Vec<&str> = pts.iter().map(|p| p.0).collect();
    countries.sort();
    countries.dedup();

    let (xl, xh) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.1), h.max(p.1)));
    let (yl, yh) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.2), h.max(p.2)));
    let all: Vec<(f64, f64)> = pts.iter().map(|p| (p.1, p.2)).collect();
    let pooled = fit_line(&all);

    let grid: Vec<f64> = (0..=40).map(|i| xl + (xh - xl) * i as f64 / 40.0).collect();
    let mut band: Vec<(f64, f64, f64)> = Vec::new();
    if let Some(fit) = pooled.as_ref().filter(|f| f.n > 2 && f.s2.is_finite()) {
        let t = t_quantile(0.975, (fit.n - 2) as f64);
        for &x in &grid {
            let se = (fit.s2 * (1.0 / fit.n as f64 + (x - fit.mean_x).powi(2) / fit.sxx)).sqrt();
            let m = fit.a + fit.b * x;
            band.push((x, m - t * se, m + t * se));
        }
    }
    let y_lo = band.iter().map(|b| b.1).fold(yl, f64::min);
    let y_hi = band.iter().map(|b| b.2).fold(yh, f64::max);
    let f = Frame { x: Axis::nice(xl, xh, 6), y: Axis::nice(y_lo, y_hi, 5) };

    let mut out = String::new();
    open(&mut out, "EMI and DDI", hash);
    y_axis(&mut out, &f, &f.y, "DDI", false);
    x_axis(&mut out, &f, "EMI", false);

    if !band.is_empty() {
        let mut poly: Vec<(f64, f64)> = band.iter().map(|b| (f.px(b.0), f.py(b.2))).collect();
        poly.extend(band.iter().rev().map(|b| (f.px(b.0), f.py(b.1))));
        let _ = writeln!(out, r##"<path d="{} Z" fill="#7f7f7f" fill-opacity="0.2" stroke="none"/>"##, path(&poly));
    }
    let mut items = Vec::new();
    for (i, c) in countries.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mine: Vec<(f64, f64)> = pts.iter().filter(|p| p.0 == *c).map(|p| (p.1, p.2)).collect();
        for (x, y) in &mine {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{colour}" fill-opacity="0.8"/>"#,
                f.px(*x),
                f.py(*y)
            );
        }
        if let Some(fit) = fit_line(&mine) {
            let (a, b) = mine.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0)));
            let seg = [(f.px(a), f.py(fit.a + fit.b * a)), (f.px(b), f.py(fit.a + fit.b * b))];
            let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, path(&seg));
        }
        items.push((c.to_string(), colour, false));
    }
    if let Some(fit) = &pooled {
        let line: Vec<(f64, f64)> = [xl, xh].iter().map(|&x| (f.px(x), f.py(fit.a + fit.b * x))).collect();
        let _ = writeln!(
            out,
            r##"<path d="{}" fill="none" stroke="#333333" stroke-width="2" stroke-dasharray="6 4"/>"##,
            path(&line)
        );
        items.push(("pooled fit (95% band)".into(), "#333333", true));
    }
    legend(&mut out, &items);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: &str, year: i32, emi: f64, ddi: f64) -> PanelRow {
        PanelRow {
            country: c.into(),
            year,
            emi,
            emi_ci_low: emi - 0.1,
            emi_ci_high: emi + 0.1,
            n_segments: 5,
            ddi: Some(ddi),
            tpl: None,
            clientelism_flipped: None,
            judicial_independence: None,
            log_gdp_pc: None,
            emi_lag1: None,
            ddi_lag1: None,
        }
    }

    #[test]
    fn nice_axis_covers_range() {
        let a = Axis::nice(0.13, 0.87, 5);
        assert!(a.lo <= 0.13 && a.hi >= 0.87);
        assert!((a.step - 0.2).abs() < 1e-12);
        let flat = Axis::nice(2.0, 2.0, 5);
        assert!(flat.lo < 2.0 && flat.hi > 2.0);
    }

    #[test]
    fn charts_are_deterministic_and_tagged() {
        let rows: Vec<PanelRow> = (0..6)
            .flat_map(|i| {
                [row("AA", 2010 + i, i as f64 * 0.1, 0.3 + i as f64 * 0.05), row("BB", 2010 + i, -(i as f64) * 0.1, 0.6)]
            })
            .collect();
        let a = scatter_svg(&rows, "abc").unwrap();
        assert_eq!(a, scatter_svg(&rows, "abc").unwrap());
        assert!(a.contains("config_hash: abc") && a.ends_with("</svg>\n"));
        let aa: Vec<&PanelRow> = rows.iter().filter(|r| r.country == "AA").collect();
        let t = trend_svg("AA", &aa, "abc");
        assert!(t.contains("EMI and DDI, AA") && !t.contains("NaN"));
    }
}
