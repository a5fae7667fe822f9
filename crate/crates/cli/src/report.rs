//! CSV tables and SVG plots from a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::manifest::{write_atomic, PointResult, RunManifest};
use crate::run::slope_row;
use crate::CliError;

/// Something the report could not draw, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportNotice {
    /// The manifest holds no quench times; nothing was written.
    EmptySweep,
    /// Fewer than two resolved correlation lengths, so no R-vs-T plot.
    LengthPlotSkipped { resolved: usize },
    /// No usable G(r) values for one quench time.
    ProfilePlotSkipped { label: String },
    /// Fewer than two positive ρ values.
    DensityPlotSkipped,
}

impl std::fmt::Display for ReportNotice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportNotice::EmptySweep => write!(f, "empty sweep: no tables or plots written"),
            ReportNotice::LengthPlotSkipped { resolved } => {
                write!(f, "R-vs-T plot skipped: {resolved} resolved correlation length(s)")
            }
            ReportNotice::ProfilePlotSkipped { label } => write!(f, "G(r) plot for T={label} skipped: no nonzero values"),
            ReportNotice::DensityPlotSkipped => write!(f, "rho-vs-T plot skipped: fewer than two positive values"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub notices: Vec<ReportNotice>,
}

/// Quench time label for file names: milliseconds with `.` written as `p`.
pub fn time_label(t: f64) -> String {
    let ms = format!("{:.6}", t * 1e3);
    let ms = ms.trim_end_matches('0').trim_end_matches('.');
    format!("{}ms", ms.replace('.', "p"))
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:e}"),
        _ => "nan".into(),
    }
}

pub fn emit_report(manifest: &RunManifest, dir: &Path, svg: bool) -> Result<Report, CliError> {
    let mut report = Report::default();
    let points = &manifest.points;
    if points.is_empty() {
        report.notices.push(ReportNotice::EmptySweep);
        return Ok(report);
    }
    let put = |name: String, body: String, report: &mut Report| -> Result<(), CliError> {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        report.files.push(path);
        Ok(())
    };

    let mut rho = String::from("T_s,J0T,rho,rho_err\n");
    for p in points {
        writeln!(rho, "{:e},{:e},{:e},{:e}", p.t_s, p.j0t, p.rho, p.rho_err).unwrap();
    }
    put("rho_vs_T.csv".into(), rho, &mut report)?;

    let lengths: Vec<(&PointResult, f64, Option<f64>)> =
        points.iter().filter_map(|p| p.length().map(|(r, e)| (p, r, e))).collect();
    let has_profiles = points.iter().any(|p| p.profile.is_some());
    if has_profiles {
        let mut table = String::from("T_s,J0T,R,R_err\n");
        for (p, r, e) in &lengths {
            writeln!(table, "{:e},{:e},{:e},{}", p.t_s, p.j0t, r, num(*e)).unwrap();
        }
        put("R_vs_T.csv".into(), table, &mut report)?;
    }

    for p in points {
        let Some(profile) = &p.profile else { continue };
        let mut body = Vec::new();
        profile.write_csv(&mut body).expect("in-memory write");
        put(
            format!("G_of_r_T{}.csv", time_label(p.t_s)),
            String::from_utf8(body).expect("ascii"),
            &mut report,
        )?;
    }

    if let Some(fit) = &manifest.slope {
        let (mu, sigma) = slope_row(fit);
        let body = format!("N,mu,sigma_mu\n{},{:e},{}\n", manifest.coupling.n, mu, num(Some(sigma)));
        put("slopes.csv".into(), body, &mut report)?;
    }

    if svg {
        let positive: Vec<(f64, f64)> = points.iter().filter(|p| p.rho > 0.0).map(|p| (p.j0t, p.rho)).collect();
        if positive.len() >= 2 {
            put("rho_vs_T.svg".into(), log_log_plot("defect density", "ρ", &positive, None)?, &mut report)?;
        } else {
            report.notices.push(ReportNotice::DensityPlotSkipped);
        }
        if has_profiles {
            if lengths.len() >= 2 {
                let xy: Vec<(f64, f64)> = lengths.iter().map(|(p, r, _)| (p.j0t, *r)).collect();
                let line = manifest.slope.as_ref().map(|f| (f.intercept, f.mu));
                put("R_vs_T.svg".into(), log_log_plot("correlation length", "R", &xy, line)?, &mut report)?;
            } else {
                report.notices.push(ReportNotice::LengthPlotSkipped { resolved: lengths.len() });
            }
        }
        for p in points {
            let Some(svg) = profile_plot(p)? else {
                if p.profile.is_some() {
                    report.notices.push(ReportNotice::ProfilePlotSkipped { label: time_label(p.t_s) });
                }
                continue;
            };
            put(format!("G_of_r_T{}.svg", time_label(p.t_s)), svg, &mut report)?;
        }
    }
    Ok(report)
}

fn plot_error(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("plot: {e}"))
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    (lo / 1.5, hi * 1.5)
}

/// Log-log scatter against |J0|T, with an optional fitted `e^c x^μ` line.
fn log_log_plot(title: &str, y_desc: &str, xy: &[(f64, f64)], line: Option<(f64, f64)>) -> Result<String, CliError> {
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (640, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let (x0, x1) = padded_range(xy.iter().map(|p| p.0));
        let (y0, y1) = padded_range(xy.iter().map(|p| p.1));
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale())
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .x_desc("|J0| T")
            .y_desc(y_desc)
            .draw()
            .map_err(plot_error)?;
        chart
            .draw_series(xy.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))
            .map_err(plot_error)?;
        if let Some((c, mu)) = line {
            let curve = (0..=50).map(|k| {
                let x = x0 * (x1 / x0).powf(k as f64 / 50.0);
                (x, c.exp() * x.powf(mu))
            });
            chart.draw_series(LineSeries::new(curve, &RED)).map_err(plot_error)?;
        }
        root.present().map_err(plot_error)?;
    }
    Ok(out)
}

/// Semilog `|G(r)|` with the fitted `|A e^{-r/R} + B|`.
fn profile_plot(p: &PointResult) -> Result<Option<String>, CliError> {
    let Some(profile) = &p.profile else { return Ok(None) };
    let xy: Vec<(f64, f64)> = profile
        .distances
        .iter()
        .zip(&profile.g)
        .filter(|(_, g)| g.abs() > 0.0 && g.is_finite())
        .map(|(&r, g)| (r as f64, g.abs()))
        .collect();
    if xy.is_empty() {
        return Ok(None);
    }
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (640, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let r_max = profile.r_max() as f64;
        let (y0, y1) = padded_range(xy.iter().map(|p| p.1));
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("|G(r)| at T = {}", time_label(p.t_s)), ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(0.5..r_max + 0.5, (y0..y1).log_scale())
            .map_err(plot_error)?;
        chart.configure_mesh().x_desc("r").y_desc("|G|").draw().map_err(plot_error)?;
        chart
            .draw_series(xy.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))
            .map_err(plot_error)?;
        if let Some(f) = &p.corr_fit {
            let curve: Vec<(f64, f64)> = (0..=60)
                .map(|k| {
                    let r = 1.0 + (r_max - 1.0) * k as f64 / 60.0;
                    (r, (f.a * (-r / f.r).exp() + f.b).abs())
                })
                .filter(|(_, v)| *v >= y0 && *v <= y1)
                .collect();
            chart.draw_series(LineSeries::new(curve, &RED)).map_err(plot_error)?;
        }
        root.present().map_err(plot_error)?;
    }
    Ok(Some(out))
}
