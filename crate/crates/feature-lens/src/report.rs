//! The analysis report (JSON), its per-panel CSV series and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub meta: Meta,
    pub conventions: Conventions,
    pub snapshots: Vec<SnapshotReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub run_id: String,
    pub architecture: String,
    pub dataset: String,
    pub num_classes: usize,
    pub manifest_sha256: String,
    pub tool_version: String,
    pub threads: usize,
    pub warnings: Vec<String>,
}

/// Everything needed to interpret the numbers without other documentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub eigenvalues: String,
    pub eigenfunctions: String,
    pub inner_product: String,
    pub evaluation_split: String,
    pub qr_corrected: bool,
    pub quality_normalization: String,
    pub utility_normalization: String,
    pub effective_dimension: String,
    pub regime: String,
    pub epsilon: f64,
    pub nc1_normalization: String,
    pub kmax: usize,
    pub subsample_max_points: usize,
    pub subsample_seed: u64,
    pub rate_convention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub per_feature: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub total: f64,
    pub d_eff: f64,
    pub subspace_dim: usize,
    pub dropped_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub rho_over_rho1: Vec<f64>,
    pub d_eff: f64,
    pub usable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub kappa_cka: f64,
    pub verdict: String,
    pub eigengap: Option<f64>,
    pub rank_limited: bool,
    pub plateau_flatness: Option<f64>,
    pub d_eff_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcSummary {
    pub nc1: f64,
    pub nc2_deviation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nc3_deviation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nc4_agreement: Option<f64>,
    pub degenerate_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotReport {
    pub epoch: f64,
    pub layer: String,
    pub train_points_used: usize,
    pub quality: ProfileReport,
    /// Absent when the learned functions vanish on the evaluation split.
    pub utility: Option<ProfileReport>,
    pub spectrum: SpectrumReport,
    pub regime: Option<RegimeSummary>,
    pub nc: Option<NcSummary>,
    pub constant_alignment: f64,
    /// Why optional sections are absent.
    pub notes: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: report is not valid: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}: report has no snapshots")]
    Empty(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn to_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn read_report(path: &Path) -> Result<AnalysisReport, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Formats a value the same way on every platform.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        "nan".into()
    }
}

/// `epoch,k,value` rows with `k` starting at 1.
fn series_csv<'a>(rows: impl Iterator<Item = (f64, &'a [f64])>) -> String {
    let mut s = String::from("epoch,k,value\n");
    for (epoch, values) in rows {
        for (k, v) in values.iter().enumerate() {
            let _ = writeln!(s, "{epoch},{},{}", k + 1, num(*v));
        }
    }
    s
}

pub fn quality_csv(r: &AnalysisReport) -> String {
    series_csv(r.snapshots.iter().map(|s| (s.epoch, s.quality.per_feature.as_slice())))
}

pub fn utility_csv(r: &AnalysisReport) -> String {
    series_csv(
        r.snapshots
            .iter()
            .filter_map(|s| s.utility.as_ref().map(|u| (s.epoch, u.per_feature.as_slice()))),
    )
}

pub fn spectrum_csv(r: &AnalysisReport) -> String {
    series_csv(r.snapshots.iter().map(|s| (s.epoch, s.spectrum.rho_over_rho1.as_slice())))
}

/// Writes `report.json`, `quality.csv`, `utility.csv` and `spectrum.csv`.
pub fn write_analysis(report: &AnalysisReport, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let files = [
        ("report.json", to_json(report)),
        ("quality.csv", quality_csv(report)),
        ("utility.csv", utility_csv(report)),
        ("spectrum.csv", spectrum_csv(report)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotFormat {
    Svg,
    Csv,
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Bar-style profile plot (per-feature values and the cumulative curve) or
/// a log-scale line plot of the spectrum.
fn svg_plot(title: &str, series: &[(&str, &str, &[f64])], log_y: bool) -> String {
    let n = series.iter().map(|s| s.2.len()).max().unwrap_or(0).max(1);
    let transform = |v: f64| if log_y { v.max(1e-300).log10() } else { v };
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|s| s.2.iter().copied())
        .filter(|v| v.is_finite() && (!log_y || *v > 0.0))
        .map(transform)
        .collect();
    let (mut lo, mut hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if !log_y {
        lo = lo.min(0.0);
    } else {
        lo = lo.floor();
        hi = hi.ceil();
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let x = |k: usize| MARGIN + (W - 2.0 * MARGIN) * (k as f64 + 0.5) / n as f64;
    let y = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (transform(v) - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let y_label = |v: f64| if log_y { format!("1e{v}") } else { format!("{v:.3}") };
    for (v, anchor_y) in [(lo, H - MARGIN), (hi, MARGIN)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{anchor_y}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            y_label(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">k (1..{n})</text>"#,
        W / 2.0,
        H - MARGIN / 2.0
    );
    for (i, (name, color, values)) in series.iter().enumerate() {
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite() && (!log_y || **v > 0.0))
            .map(|(k, &v)| format!("{:.2},{:.2}", x(k), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" fill="{color}">{name}</text>"#,
            W - MARGIN - 80.0,
            MARGIN + 12.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

fn panel_csv(series: &[(&str, &[f64])]) -> String {
    let mut s = String::from("k");
    for (name, _) in series {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    let n = series.iter().map(|x| x.1.len()).max().unwrap_or(0);
    for k in 0..n {
        let _ = write!(s, "{}", k + 1);
        for (_, v) in series {
            s.push(',');
            s.push_str(&v.get(k).map_or(String::new(), |x| num(*x)));
        }
        s.push('\n');
    }
    s
}

/// Writes the quality, utility and spectrum panels of every snapshot.
pub fn render(report: &AnalysisReport, report_path: &Path, format: PlotFormat, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
    if report.snapshots.is_empty() {
        return Err(ReportError::Empty(report_path.display().to_string()));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let ext = match format {
        PlotFormat::Svg => "svg",
        PlotFormat::Csv => "csv",
    };
    let mut written = Vec::new();
    for (i, snap) in report.snapshots.iter().enumerate() {
        let panels: [(&str, Vec<(&str, &str, &[f64])>, bool); 3] = [
            (
                "quality",
                vec![
                    ("per_feature", "steelblue", snap.quality.per_feature.as_slice()),
                    ("cumulative", "darkorange", snap.quality.cumulative.as_slice()),
                ],
                false,
            ),
            (
                "utility",
                snap.utility.as_ref().map_or_else(Vec::new, |u| {
                    vec![
                        ("per_feature", "steelblue", u.per_feature.as_slice()),
                        ("cumulative", "darkorange", u.cumulative.as_slice()),
                    ]
                }),
                false,
            ),
            (
                "spectrum",
                vec![("rho_over_rho1", "black", snap.spectrum.rho_over_rho1.as_slice())],
                true,
            ),
        ];
        for (name, series, log_y) in panels {
            let body = match format {
                PlotFormat::Svg => {
                    let title = format!("{name}, epoch {}", snap.epoch);
                    svg_plot(&title, &series, log_y)
                }
                PlotFormat::Csv => {
                    let cols: Vec<(&str, &[f64])> = series.iter().map(|(n, _, v)| (*n, *v)).collect();
                    panel_csv(&cols)
                }
            };
            let path = out.join(format!("snapshot{i:03}_{name}.{ext}"));
            fs::write(&path, body).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_start_at_one() {
        let s = series_csv([(2.0, &[0.5, 0.25][..])].into_iter());
        assert_eq!(s, "epoch,k,value\n2,1,5e-1\n2,2,2.5e-1\n");
    }

    #[test]
    fn log_plot_skips_non_positive_values() {
        let svg = svg_plot("t", &[("a", "black", &[1.0, 0.1, 0.0])], true);
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
        assert!(svg.contains("1e-1") && svg.contains("1e0"));
    }
}
