//! Standalone SVG rendering of explanation tracks.
//!
//! Each panel draws the grey spectrum curve and overlays per-wavenumber
//! colored segments: opacity encodes back-projected importance, hue the
//! relative component value (red above average, blue below). Output is
//! plain SVG 1.1 with no external assets, byte-identical for identical
//! inputs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backproject::{ClassGlobal, LocalExplanation};
use crate::error::{Result, ShapcaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelLayout {
    Single,
    PerClassGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderSpec {
    pub width: u32,
    pub height: u32,
    /// Opacity floor so the curve stays visible at zero importance.
    pub alpha_min: f64,
    pub layout: PanelLayout,
    pub x_label: String,
    pub y_label: String,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            width: 900,
            height: 260,
            alpha_min: 0.05,
            layout: PanelLayout::PerClassGrid,
            x_label: "wavenumber".into(),
            y_label: "intensity".into(),
        }
    }
}

impl RenderSpec {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha_min) {
            return Err(ShapcaError::InvalidParameter(format!(
                "alpha_min must lie in [0,1), got {}",
                self.alpha_min
            )));
        }
        if self.width < 100 || self.height < 80 {
            return Err(ShapcaError::InvalidParameter(
                "panel must be at least 100x80 pixels".into(),
            ));
        }
        Ok(())
    }
}

const NEUTRAL: (u8, u8, u8) = (247, 247, 247);
const RED: (u8, u8, u8) = (178, 24, 43);
const BLUE: (u8, u8, u8) = (33, 102, 172);

/// Diverging red-white-blue map over [-1, 1]; 0 is neutral, positive
/// values shade toward red, negative toward blue.
pub fn diverging_color(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(-1.0, 1.0);
    let lerp = |a: u8, b: u8, f: f64| -> u8 { (a as f64 + (b as f64 - a as f64) * f).round() as u8 };
    if t >= 0.0 {
        (
            lerp(NEUTRAL.0, RED.0, t),
            lerp(NEUTRAL.1, RED.1, t),
            lerp(NEUTRAL.2, RED.2, t),
        )
    } else {
        (
            lerp(NEUTRAL.0, BLUE.0, -t),
            lerp(NEUTRAL.1, BLUE.1, -t),
            lerp(NEUTRAL.2, BLUE.2, -t),
        )
    }
}

/// Monotone opacity map: |psi| rescaled by the panel maximum into
/// [alpha_min, 1]; a panel with no importance stays at the floor.
pub fn opacity(abs_psi: f64, panel_max: f64, alpha_min: f64) -> f64 {
    if panel_max <= 0.0 {
        return alpha_min;
    }
    alpha_min + (1.0 - alpha_min) * (abs_psi / panel_max).clamp(0.0, 1.0)
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

struct PanelGeom {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    axis_min: f64,
    axis_max: f64,
    val_min: f64,
    val_max: f64,
}

impl PanelGeom {
    fn new(x0: f64, y0: f64, w: f64, h: f64, axis: &[f64], values: &[f64]) -> Self {
        let axis_min = axis.first().copied().unwrap_or(0.0);
        let axis_max = axis.last().copied().unwrap_or(1.0);
        let mut val_min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut val_max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !val_min.is_finite() || !val_max.is_finite() {
            val_min = 0.0;
            val_max = 1.0;
        }
        if val_max - val_min < 1e-12 {
            val_min -= 0.5;
            val_max += 0.5;
        }
        let pad = 0.06 * (val_max - val_min);
        Self {
            x0,
            y0,
            w,
            h,
            axis_min,
            axis_max,
            val_min: val_min - pad,
            val_max: val_max + pad,
        }
    }

    fn px(&self, axis_value: f64) -> f64 {
        let span = (self.axis_max - self.axis_min).max(1e-12);
        self.x0 + (axis_value - self.axis_min) / span * self.w
    }

    fn py(&self, value: f64) -> f64 {
        let span = (self.val_max - self.val_min).max(1e-12);
        self.y0 + self.h - (value - self.val_min) / span * self.h
    }
}

const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 14.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 38.0;

#[allow(clippy::too_many_arguments)]
fn draw_panel(
    out: &mut String,
    title: &str,
    axis: &[f64],
    spectrum: &[f64],
    psi_abs: &[f64],
    pc_track: &[f64],
    top: f64,
    spec: &RenderSpec,
) {
    let geom = PanelGeom::new(
        MARGIN_LEFT,
        top + MARGIN_TOP,
        spec.width as f64 - MARGIN_LEFT - MARGIN_RIGHT,
        spec.height as f64 - MARGIN_TOP - MARGIN_BOTTOM,
        axis,
        spectrum,
    );

    // frame + labels
    let _ = write!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="#888" stroke-width="1"/>"##,
        geom.x0, geom.y0, geom.w, geom.h
    );
    let _ = write!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" fill="#222">{}</text>"##,
        geom.x0,
        top + 18.0,
        escape_xml(title)
    );
    for (frac, value) in [(0.0, geom.axis_min), (0.5, (geom.axis_min + geom.axis_max) / 2.0), (1.0, geom.axis_max)] {
        let x = geom.x0 + frac * geom.w;
        let _ = write!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" fill="#444" text-anchor="middle">{:.1}</text>"##,
            x,
            geom.y0 + geom.h + 14.0,
            value
        );
    }
    let _ = write!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="#444" text-anchor="middle">{}</text>"##,
        geom.x0 + geom.w / 2.0,
        geom.y0 + geom.h + 30.0,
        escape_xml(&spec.x_label)
    );
    let _ = write!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="#444" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"##,
        geom.x0 - 40.0,
        geom.y0 + geom.h / 2.0,
        geom.x0 - 40.0,
        geom.y0 + geom.h / 2.0,
        escape_xml(&spec.y_label)
    );

    // grey mean curve
    let mut d = String::new();
    for (j, (&a, &v)) in axis.iter().zip(spectrum).enumerate() {
        let cmd = if j == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{}{:.2} {:.2}", cmd, geom.px(a), geom.py(v));
    }
    let _ = write!(
        out,
        r##"<path d="{d}" fill="none" stroke="#999" stroke-width="1.4"/>"##
    );

    // colored overlay segments
    let psi_max = psi_abs.iter().cloned().fold(0.0f64, f64::max);
    let pc_max = pc_track.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    for j in 0..axis.len().saturating_sub(1) {
        let alpha = opacity(psi_abs[j], psi_max, spec.alpha_min);
        let hue = if pc_max > 0.0 {
            (pc_track[j] / pc_max).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let (r, g, b) = diverging_color(hue);
        let _ = write!(
            out,
            r##"<path d="M{:.2} {:.2} L{:.2} {:.2}" stroke="rgb({r},{g},{b})" stroke-opacity="{:.4}" stroke-width="3" fill="none" stroke-linecap="round"/>"##,
            geom.px(axis[j]),
            geom.py(spectrum[j]),
            geom.px(axis[j + 1]),
            geom.py(spectrum[j + 1]),
            alpha
        );
    }
}

fn empty_panel(out: &mut String, title: &str, top: f64, spec: &RenderSpec) {
    let _ = write!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" fill="#222">{}</text>"##,
        MARGIN_LEFT,
        top + 18.0,
        escape_xml(title)
    );
    let _ = write!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" fill="#a33">no samples predicted as this class</text>"##,
        MARGIN_LEFT,
        top + spec.height as f64 / 2.0
    );
}

fn svg_open(width: u32, height: u32) -> String {
    format!(
        r##"<?xml version="1.0" encoding="UTF-8"?><svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"##
    )
}

/// Renders global explanations: one named SVG document per class under
/// the single layout, or one grid document stacking every class panel.
pub fn render_global(
    globals: &[ClassGlobal],
    class_names: &[String],
    axis: &[f64],
    mean_spectra: &[Option<Vec<f64>>],
    spec: &RenderSpec,
) -> Result<Vec<(String, String)>> {
    spec.validate()?;
    if globals.len() != class_names.len() || mean_spectra.len() != class_names.len() {
        return Err(ShapcaError::DimensionMismatch(format!(
            "{} explanations, {} class names, {} mean spectra",
            globals.len(),
            class_names.len(),
            mean_spectra.len()
        )));
    }
    for (cg, ms) in globals.iter().zip(mean_spectra) {
        if let (ClassGlobal::Explained(g), Some(m)) = (cg, ms) {
            if g.psi.len() != axis.len() || m.len() != axis.len() {
                return Err(ShapcaError::DimensionMismatch(format!(
                    "track length {} / spectrum {} vs axis {}",
                    g.psi.len(),
                    m.len(),
                    axis.len()
                )));
            }
        }
    }

    let render_one = |class: usize, top: f64, out: &mut String| {
        let name = &class_names[class];
        match (&globals[class], &mean_spectra[class]) {
            (ClassGlobal::Explained(g), Some(m)) => {
                let title = format!("class {name} (n={})", g.n_samples_used);
                let psi_abs: Vec<f64> = g.psi.iter().map(|v| v.abs()).collect();
                draw_panel(out, &title, axis, m, &psi_abs, &g.pc_track, top, spec);
            }
            _ => empty_panel(out, &format!("class {name}"), top, spec),
        }
    };

    match spec.layout {
        PanelLayout::Single => {
            let mut docs = Vec::new();
            for class in 0..class_names.len() {
                let mut out = svg_open(spec.width, spec.height);
                render_one(class, 0.0, &mut out);
                out.push_str("</svg>");
                docs.push((format!("global_{}", class_names[class]), out));
            }
            Ok(docs)
        }
        PanelLayout::PerClassGrid => {
            let total_h = spec.height * class_names.len() as u32;
            let mut out = svg_open(spec.width, total_h);
            for class in 0..class_names.len() {
                render_one(class, (class as u32 * spec.height) as f64, &mut out);
            }
            out.push_str("</svg>");
            Ok(vec![("global".into(), out)])
        }
    }
}

/// Renders one local explanation as two stacked panels: supporting
/// evidence on top, opposing evidence below, both colored by the same
/// component-value track.
pub fn render_local(
    le: &LocalExplanation,
    axis: &[f64],
    spectrum: &[f64],
    class_name: &str,
    spec: &RenderSpec,
) -> Result<String> {
    spec.validate()?;
    if le.psi_pos.len() != axis.len() || spectrum.len() != axis.len() {
        return Err(ShapcaError::DimensionMismatch(format!(
            "track length {} / spectrum {} vs axis {}",
            le.psi_pos.len(),
            spectrum.len(),
            axis.len()
        )));
    }
    let mut out = svg_open(spec.width, spec.height * 2);
    let pos_title = format!(
        "sample {} - evidence for class {class_name}",
        le.sample_index
    );
    draw_panel(&mut out, &pos_title, axis, spectrum, &le.psi_pos, &le.pc_track, 0.0, spec);
    let neg_abs: Vec<f64> = le.psi_neg.iter().map(|v| v.abs()).collect();
    let neg_title = format!(
        "sample {} - evidence against class {class_name}",
        le.sample_index
    );
    draw_panel(
        &mut out,
        &neg_title,
        axis,
        spectrum,
        &neg_abs,
        &le.pc_track,
        spec.height as f64,
        spec,
    );
    out.push_str("</svg>");
    Ok(out)
}

/// CSV export of the rendered tracks.
pub fn tracks_csv(axis: &[f64], psi: &[f64], pc: &[f64]) -> String {
    let mut out = String::from("axis,psi,pc\n");
    for i in 0..axis.len() {
        let _ = writeln!(out, "{},{},{}", axis[i], psi[i], pc[i]);
    }
    out
}
