//! Plot extraction and SVG rendering. Every figure is drawn only from its CSV
//! sidecar, so the SVG can be regenerated from the CSV alone.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::camera::DetectionClass;
use crate::coordination::{MissionPhase, Role};
use crate::engine::log::{LogRecord, SimLog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    DepthProfile,
    Trajectory3d,
    PixelError,
    PhaseTimeline,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::DepthProfile,
        PlotKind::Trajectory3d,
        PlotKind::PixelError,
        PlotKind::PhaseTimeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::DepthProfile => "depth_profile",
            PlotKind::Trajectory3d => "trajectory_3d",
            PlotKind::PixelError => "pixel_error",
            PlotKind::PhaseTimeline => "phase_timeline",
        }
    }

    /// Record type the figure is built from.
    pub fn source_record(self) -> &'static str {
        match self {
            PlotKind::DepthProfile => "detection",
            PlotKind::Trajectory3d => "truth",
            PlotKind::PixelError => "track",
            PlotKind::PhaseTimeline => "phase",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown plot kind '{s}'")))
    }
}

fn missing(kind: PlotKind) -> Error {
    Error::Log(format!(
        "log has no grabber '{}' records needed for {}",
        kind.source_record(),
        kind.name()
    ))
}

/// Extracts the CSV sidecar for one figure.
pub fn plot_csv(log: &SimLog, kind: PlotKind) -> Result<String> {
    let mut out = String::new();
    let mut rows = 0usize;
    match kind {
        PlotKind::DepthProfile => {
            let capture = log.capture_time();
            let dets: Vec<(f64, f64)> = log
                .records
                .iter()
                .filter_map(|r| match r {
                    LogRecord::Detection {
                        t,
                        drone: Role::Grabber,
                        class: DetectionClass::Ball,
                        range,
                        ..
                    } if capture.is_none_or(|c| *t <= c) => Some((*t, *range)),
                    _ => None,
                })
                .collect();
            out.push_str("t,range,capture\n");
            let last = dets.len().saturating_sub(1);
            for (i, (t, r)) in dets.iter().enumerate() {
                let mark = u8::from(capture.is_some() && i == last);
                writeln!(out, "{t},{r},{mark}").unwrap();
                rows += 1;
            }
        }
        PlotKind::Trajectory3d => {
            out.push_str("t,grabber_x,grabber_y,grabber_z,ball_x,ball_y,ball_z\n");
            for r in &log.records {
                if let LogRecord::Truth { t, ball, uavs, .. } = r {
                    if let Some(g) = uavs.iter().find(|u| u.drone == Role::Grabber) {
                        let p = g.state.position;
                        writeln!(out, "{t},{},{},{},{},{},{}", p.x, p.y, p.z, ball.x, ball.y, ball.z).unwrap();
                        rows += 1;
                    }
                }
            }
        }
        PlotKind::PixelError => {
            let (cx, cy) = log.header.config.intrinsics().center();
            out.push_str("t,ex,ey\n");
            for r in &log.records {
                if let LogRecord::Track {
                    t,
                    drone: Role::Grabber,
                    class: DetectionClass::Ball,
                    x,
                    y,
                    ..
                } = r
                {
                    if x.is_finite() && y.is_finite() {
                        writeln!(out, "{t},{},{}", x - cx, y - cy).unwrap();
                        rows += 1;
                    }
                }
            }
        }
        PlotKind::PhaseTimeline => {
            let end = log.verdict_record().map(|v| v.0).unwrap_or(0.0);
            out.push_str("drone,phase,t_start,t_end\n");
            for d in log.drones() {
                let name = format!("{d:?}").to_lowercase();
                let mut phase = MissionPhase::Idle;
                let mut start = 0.0;
                for r in &log.records {
                    if let LogRecord::Phase { t, drone, to, .. } = r {
                        if *drone == d {
                            writeln!(out, "{name},{},{start},{t}", phase.name()).unwrap();
                            phase = *to;
                            start = *t;
                            rows += 1;
                        }
                    }
                }
                writeln!(out, "{name},{},{start},{end}", phase.name()).unwrap();
            }
            if log.records.iter().all(|r| !matches!(r, LogRecord::Phase { .. })) {
                rows = 0;
            }
        }
    }
    if rows == 0 {
        return Err(missing(kind));
    }
    Ok(out)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(csv: &str) -> Result<Self> {
        let mut lines = csv.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty csv".into()))?
            .split(',')
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let row: Vec<String> = l.split(',').map(String::from).collect();
            if row.len() != header.len() {
                return Err(Error::Parse(format!("csv row {} has {} fields", i + 2, row.len())));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("csv missing column '{name}'")))
    }

    fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.col(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[c].parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number '{}' in column {name}", r[c])))
            })
            .collect()
    }
}

const W: f64 = 800.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Clone, Copy)]
struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn fit<'a>(xs: impl Iterator<Item = &'a f64> + Clone, ys: impl Iterator<Item = &'a f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = &'a f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-9 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#,
        W / 2.0
    )
    .unwrap();
    s
}

fn frame(s: &mut String, a: &Axes, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    writeln!(
        s,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{l}" y="{}" text-anchor="middle">{:.3}</text>"#,
        b + 16.0,
        a.x0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{r}" y="{}" text-anchor="middle">{:.3}</text>"#,
        b + 16.0,
        a.x1
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
        l - 4.0,
        b,
        a.y0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
        l - 4.0,
        t + 4.0,
        a.y1
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
        W / 2.0,
        H - 20.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    )
    .unwrap();
}

fn polyline(s: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str, label: &str) {
    let mut d = String::new();
    for (x, y) in pts {
        write!(d, "{x:.2},{y:.2} ").unwrap();
    }
    writeln!(
        s,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{label}</title></polyline>"#,
        d.trim_end()
    )
    .unwrap();
}

fn legend(s: &mut String, items: &[(&str, &str)]) {
    for (i, (label, color)) in items.iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * i as f64;
        let x = W - MARGIN - 140.0;
        writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#,
            x + 20.0
        )
        .unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, x + 26.0, y + 4.0).unwrap();
    }
}

/// Renders a figure from its CSV sidecar.
pub fn render_svg(kind: PlotKind, csv: &str) -> Result<String> {
    let table = Table::parse(csv)?;
    let mut s = match kind {
        PlotKind::DepthProfile => {
            let t = table.numbers("t")?;
            let r = table.numbers("range")?;
            let mark = table.numbers("capture")?;
            let a = Axes::fit(t.iter(), r.iter().chain(std::iter::once(&0.0)));
            let mut s = svg_open("Grabber ball depth");
            frame(&mut s, &a, "time [s]", "depth estimate [m]");
            polyline(
                &mut s,
                t.iter().zip(&r).map(|(x, y)| (a.sx(*x), a.sy(*y))),
                COLORS[0],
                "depth",
            );
            for ((x, y), m) in t.iter().zip(&r).zip(&mark) {
                if *m > 0.5 {
                    writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{}"><title>capture</title></circle>"#,
                        a.sx(*x),
                        a.sy(*y),
                        COLORS[3]
                    )
                    .unwrap();
                }
            }
            s
        }
        PlotKind::PixelError => {
            let t = table.numbers("t")?;
            let ex = table.numbers("ex")?;
            let ey = table.numbers("ey")?;
            let a = Axes::fit(t.iter(), ex.iter().chain(ey.iter()));
            let mut s = svg_open("Grabber ball pixel error");
            frame(&mut s, &a, "time [s]", "error [px]");
            polyline(
                &mut s,
                t.iter().zip(&ex).map(|(x, y)| (a.sx(*x), a.sy(*y))),
                COLORS[0],
                "ex",
            );
            polyline(
                &mut s,
                t.iter().zip(&ey).map(|(x, y)| (a.sx(*x), a.sy(*y))),
                COLORS[1],
                "ey",
            );
            legend(&mut s, &[("ex", COLORS[0]), ("ey", COLORS[1])]);
            s
        }
        PlotKind::Trajectory3d => {
            // Isometric view: world x to the lower right, y to the upper right, z up.
            let iso = |x: f64, y: f64, z: f64| {
                let c = std::f64::consts::FRAC_PI_6.cos();
                ((x + y) * c, z + (y - x) * 0.5)
            };
            let mut u = Vec::new();
            let mut v = Vec::new();
            let mut series = Vec::new();
            for prefix in ["grabber", "ball"] {
                let x = table.numbers(&format!("{prefix}_x"))?;
                let y = table.numbers(&format!("{prefix}_y"))?;
                let z = table.numbers(&format!("{prefix}_z"))?;
                let pts: Vec<(f64, f64)> = x.iter().zip(&y).zip(&z).map(|((x, y), z)| iso(*x, *y, *z)).collect();
                u.extend(pts.iter().map(|p| p.0));
                v.extend(pts.iter().map(|p| p.1));
                series.push((prefix, pts));
            }
            let a = Axes::fit(u.iter(), v.iter());
            let mut s = svg_open("Grabber and ball trajectories (isometric)");
            frame(&mut s, &a, "isometric u [m]", "isometric v [m]");
            for (i, (name, pts)) in series.iter().enumerate() {
                polyline(&mut s, pts.iter().map(|(x, y)| (a.sx(*x), a.sy(*y))), COLORS[i], name);
            }
            legend(&mut s, &[("grabber", COLORS[0]), ("ball", COLORS[1])]);
            s
        }
        PlotKind::PhaseTimeline => {
            let drone = table.col("drone")?;
            let phase = table.col("phase")?;
            let t0 = table.numbers("t_start")?;
            let t1 = table.numbers("t_end")?;
            let mut drones: Vec<&str> = Vec::new();
            for r in &table.rows {
                if !drones.contains(&r[drone].as_str()) {
                    drones.push(&r[drone]);
                }
            }
            let a = Axes::fit(t0.iter().chain(t1.iter()), [0.0, drones.len() as f64].iter());
            let mut s = svg_open("Mission phases");
            frame(&mut s, &a, "time [s]", "drone");
            let band = (H - 2.0 * MARGIN) / drones.len().max(1) as f64;
            for (i, row) in table.rows.iter().enumerate() {
                let lane = drones.iter().position(|d| *d == row[drone]).unwrap_or(0);
                let ordinal = MissionPhase::ALL
                    .iter()
                    .position(|p| p.name() == row[phase])
                    .unwrap_or(0);
                let x = a.sx(t0[i]);
                let w = (a.sx(t1[i]) - x).max(0.0);
                let y = MARGIN + lane as f64 * band + 0.15 * band;
                writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{:.2}" fill="{}" stroke="white"><title>{} {}</title></rect>"#,
                    0.7 * band,
                    COLORS[ordinal % COLORS.len()],
                    row[drone],
                    row[phase]
                )
                .unwrap();
                if w > 40.0 {
                    writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="white">{}</text>"#,
                        x + w / 2.0,
                        y + 0.35 * band + 4.0,
                        row[phase]
                    )
                    .unwrap();
                }
            }
            for (i, d) in drones.iter().enumerate() {
                writeln!(
                    s,
                    r#"<text x="{}" y="{:.2}" text-anchor="end">{d}</text>"#,
                    MARGIN - 4.0,
                    MARGIN + (i as f64 + 0.5) * band
                )
                .unwrap();
            }
            s
        }
    };
    s.push_str("</svg>\n");
    Ok(s)
}

/// Extracts and renders one figure, returning `(svg, csv)`.
pub fn plot(log: &SimLog, kind: PlotKind) -> Result<(String, String)> {
    let csv = plot_csv(log, kind)?;
    let svg = render_svg(kind, &csv)?;
    Ok((svg, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_roundtrip() {
        for k in PlotKind::ALL {
            assert_eq!(k.name().parse::<PlotKind>().unwrap(), k);
        }
        assert!("histogram".parse::<PlotKind>().is_err());
    }

    #[test]
    fn renders_from_csv_only() {
        let csv = "t,range,capture\n0,6,0\n0.5,4.5,0\n1,3,1\n";
        let svg = render_svg(PlotKind::DepthProfile, csv).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<circle"));
        assert_eq!(svg, render_svg(PlotKind::DepthProfile, csv).unwrap());
    }

    #[test]
    fn malformed_csv_rejected() {
        assert!(render_svg(PlotKind::PixelError, "t,ex\n0,1\n").is_err());
        assert!(render_svg(PlotKind::PixelError, "t,ex,ey\n0,1\n").is_err());
        assert!(render_svg(PlotKind::PixelError, "").is_err());
    }

    #[test]
    fn timeline_bands() {
        let csv = "drone,phase,t_start,t_end\ngrabber,idle,0,0.05\ngrabber,takeoff,0.05,3\ntracker,idle,0,3\n";
        let svg = render_svg(PlotKind::PhaseTimeline, csv).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 4);
    }
}
