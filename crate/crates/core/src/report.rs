//! Run manifests, learning-curve plots and summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::SweepCurve;
use crate::selection::{
    accuracy_at, baseline_crossing, select_model, summarize_curve, CurvePoint, CurveSummary,
    SelectionError,
};
use crate::text::sha256_hex;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no curves to report")]
    Empty,
    #[error("curve file row {row}: {reason}")]
    MalformedCurve { row: usize, reason: String },
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> std::io::Result<FileDigest> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&fs::read(path)?),
        })
    }
}

/// Everything needed to replay one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; replaying them from the same
    /// working directory regenerates the outputs.
    #[serde(default)]
    pub argv: Vec<String>,
    pub version: String,
    /// Effective configuration after flags, config file and defaults.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: now_unix(),
            finished_unix: 0,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<&mut Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> std::io::Result<&mut Self> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    /// Stamps the finish time and writes pretty JSON.
    pub fn write(&mut self, path: &Path) -> std::io::Result<()> {
        self.finished_unix = now_unix();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(
            path,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }

    /// Conventional manifest location next to an output file or inside an
    /// output directory.
    pub fn path_for(output: &Path) -> PathBuf {
        if output.is_dir() {
            output.join("manifest.json")
        } else {
            let mut name = output
                .file_name()
                .map(|n| n.to_os_string())
                .unwrap_or_default();
            name.push(".manifest.json");
            output.with_file_name(name)
        }
    }
}

/// Directory name for a run: start time plus a short config hash.
pub fn run_dir_name(command: &str, config: &serde_json::Value) -> String {
    let h = sha256_hex(format!("{command}{config}").as_bytes());
    format!("{}-{}-{}", command, now_unix(), &h[..12])
}

/// One learning curve in percentage points, as plotted and tabulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub model: String,
    pub question: String,
    pub points: Vec<CurvePoint>,
}

impl From<&SweepCurve> for NamedCurve {
    fn from(c: &SweepCurve) -> NamedCurve {
        NamedCurve {
            model: c.model_name.clone(),
            question: c.question.clone(),
            points: c.accuracy_points(),
        }
    }
}

/// Reads curves written by the sweep and chain commands
/// (`model,question,fraction_pct,accuracy,...`).
pub fn read_curves_csv<R: Read>(input: R) -> Result<Vec<NamedCurve>, ReportError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ReportError::MalformedCurve {
                row: 0,
                reason: format!("missing column {name}"),
            })
    };
    let (cm, cq, cf, ca) = (
        col("model")?,
        col("question")?,
        col("fraction_pct")?,
        col("accuracy")?,
    );
    let mut curves: Vec<NamedCurve> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, ReportError> {
            rec.get(c)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| ReportError::MalformedCurve {
                    row: i + 1,
                    reason: format!("{e}"),
                })
        };
        let (model, question) = (rec.get(cm).unwrap_or(""), rec.get(cq).unwrap_or(""));
        let point = CurvePoint::new(num(cf)? / 100.0, num(ca)?);
        match curves
            .iter_mut()
            .find(|c| c.model == model && c.question == question)
        {
            Some(c) => c.points.push(point),
            None => curves.push(NamedCurve {
                model: model.to_string(),
                question: question.to_string(),
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Accuracy against training-data percentage for every curve, with each
/// curve's selected point marked.
pub fn render_curves_svg(
    title: &str,
    curves: &[NamedCurve],
    k: usize,
) -> Result<String, ReportError> {
    if curves.is_empty() {
        return Err(ReportError::Empty);
    }
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let lo = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.accuracy))
        .fold(f64::INFINITY, f64::min);
    let y_min = ((lo / 10.0).floor() * 10.0).clamp(0.0, 90.0);
    let x = |f: f64| left + pw * f;
    let y = |a: f64| top + ph * (1.0 - (a - y_min) / (100.0 - y_min));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=10 {
        let f = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x(f),
            top + ph + 18.0,
            i * 10
        );
    }
    let mut a = y_min;
    while a <= 100.0 + 1e-9 {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{a}</text>"#,
            left - 6.0,
            y(a) + 4.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            left + pw,
            y(a),
            y(a)
        );
        a += 10.0;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Training data (%)</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">Accuracy (%)</text>"#,
        top + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = c.points.clone();
        pts.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.fraction), y(p.accuracy)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"><title>{}</title></polyline>"#,
            path.join(" "),
            escape(&c.model)
        );
        let sel = select_model(&pts, k)?.chosen;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="5" fill="none" stroke="{color}" stroke-width="2"/>"#,
            x(sel.fraction),
            y(sel.accuracy)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{:.1}% / {:.2}</text>"#,
            x(sel.fraction) + 8.0,
            y(sel.accuracy) + 16.0,
            100.0 * sel.fraction,
            sel.accuracy
        );
        let ly = top + 12.0 + 18.0 * i as f64;
        let lx = left + pw - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(&c.model)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub const CHOSEN_MODELS_HEADER: [&str; 8] = [
    "model",
    "mean",
    "median",
    "sd",
    "max",
    "pct_data_for_max",
    "acc_within_1sd",
    "pct_data_for_1sd",
];

pub fn write_chosen_models_csv<W: Write>(rows: &[CurveSummary], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CHOSEN_MODELS_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            format!("{:.2}", r.mean),
            format!("{:.2}", r.median),
            format!("{:.2}", r.sd),
            format!("{:.2}", r.max),
            format!("{:.1}", 100.0 * r.fraction_for_max),
            format!("{:.2}", r.selected.chosen.accuracy),
            format!("{:.1}", 100.0 * r.selected.chosen.fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scratch and transfer models compared on one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRow {
    pub question: String,
    pub scratch_model: String,
    pub transfer_model: String,
    pub scratch_zero: f64,
    pub transfer_zero: f64,
    /// Transfer minus scratch accuracy with no target-question data.
    pub accuracy_advantage: f64,
    /// Scratch model accuracy on all of its training data.
    pub baseline: f64,
    pub tolerance_pp: f64,
    pub scratch_crossing: Option<f64>,
    pub transfer_crossing: Option<f64>,
}

pub fn advantage_row(
    scratch: &NamedCurve,
    transfer: &NamedCurve,
    tolerance_pp: f64,
) -> Result<AdvantageRow, ReportError> {
    let baseline = accuracy_at(&scratch.points, 1.0)?;
    let scratch_zero = accuracy_at(&scratch.points, 0.0)?;
    let transfer_zero = accuracy_at(&transfer.points, 0.0)?;
    Ok(AdvantageRow {
        question: transfer.question.clone(),
        scratch_model: scratch.model.clone(),
        transfer_model: transfer.model.clone(),
        scratch_zero,
        transfer_zero,
        accuracy_advantage: transfer_zero - scratch_zero,
        baseline,
        tolerance_pp,
        scratch_crossing: baseline_crossing(&scratch.points, baseline, tolerance_pp),
        transfer_crossing: baseline_crossing(&transfer.points, baseline, tolerance_pp),
    })
}

pub const ADVANTAGE_HEADER: [&str; 9] = [
    "question",
    "scratch_model",
    "transfer_model",
    "scratch_acc_0pct",
    "transfer_acc_0pct",
    "accuracy_advantage",
    "baseline_acc",
    "scratch_pct_for_baseline",
    "transfer_pct_for_baseline",
];

pub fn write_advantages_csv<W: Write>(rows: &[AdvantageRow], out: W) -> csv::Result<()> {
    let pct =
        |f: Option<f64>| f.map_or_else(|| "none".to_string(), |v| format!("{:.1}", 100.0 * v));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ADVANTAGE_HEADER)?;
    for r in rows {
        w.write_record([
            r.question.clone(),
            r.scratch_model.clone(),
            r.transfer_model.clone(),
            format!("{:.2}", r.scratch_zero),
            format!("{:.2}", r.transfer_zero),
            format!("{:.2}", r.accuracy_advantage),
            format!("{:.2}", r.baseline),
            pct(r.scratch_crossing),
            pct(r.transfer_crossing),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`write_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub plots: Vec<PathBuf>,
    pub chosen_models: PathBuf,
    pub advantages: PathBuf,
}

/// A scratch curve is one whose model was fine-tuned on the question alone.
fn is_scratch(c: &NamedCurve) -> bool {
    c.model == format!("BM{}", c.question)
}

/// One plot per question plus the chosen-model and advantage tables.
pub fn write_report(
    curves: &[NamedCurve],
    k: usize,
    tolerance_pp: f64,
    dir: &Path,
) -> Result<ReportFiles, ReportError> {
    if curves.is_empty() {
        return Err(ReportError::Empty);
    }
    fs::create_dir_all(dir)?;
    let mut questions: Vec<&str> = Vec::new();
    for c in curves {
        if !questions.contains(&c.question.as_str()) {
            questions.push(&c.question);
        }
    }
    let mut plots = Vec::new();
    let mut advantages = Vec::new();
    for q in questions {
        let group: Vec<NamedCurve> = curves.iter().filter(|c| c.question == q).cloned().collect();
        let svg = render_curves_svg(&format!("Accuracy vs training data ({q})"), &group, k)?;
        let path = dir.join(format!("curves_{q}.svg"));
        fs::write(&path, svg)?;
        plots.push(path);
        if let Some(scratch) = group.iter().find(|c| is_scratch(c)) {
            for t in group.iter().filter(|c| !is_scratch(c)) {
                advantages.push(advantage_row(scratch, t, tolerance_pp)?);
            }
        }
    }
    let summaries = curves
        .iter()
        .map(|c| summarize_curve(&c.model, &c.points, k))
        .collect::<Result<Vec<_>, _>>()?;
    let chosen_models = dir.join("chosen_models.csv");
    write_chosen_models_csv(&summaries, fs::File::create(&chosen_models)?)?;
    let adv = dir.join("advantages.csv");
    write_advantages_csv(&advantages, fs::File::create(&adv)?)?;
    Ok(ReportFiles {
        plots,
        chosen_models,
        advantages: adv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(model: &str, question: &str, accs: &[f64]) -> NamedCurve {
        let n = accs.len() - 1;
        NamedCurve {
            model: model.into(),
            question: question.into(),
            points: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| CurvePoint::new(i as f64 / n as f64, a))
                .collect(),
        }
    }

    #[test]
    fn flat_curve_plot() {
        let c = curve("BMQ2", "Q2", &[70.0; 5]);
        let svg = render_curves_svg("t", std::slice::from_ref(&c), 5).unwrap();
        assert!(svg.contains("0.0% / 70.00"));
        assert_eq!(select_model(&c.points, 5).unwrap().chosen.fraction, 0.0);
        assert!(matches!(
            render_curves_svg("t", &[], 5),
            Err(ReportError::Empty)
        ));
    }

    #[test]
    fn legend_uses_lineage_names() {
        let a = curve("BMQ2", "Q2", &[14.0, 60.0, 80.0, 90.0, 91.0]);
        let b = curve("BMQ1Q2", "Q2", &[58.0, 85.0, 90.0, 91.0, 91.5]);
        let svg = render_curves_svg("t", &[a, b], 5).unwrap();
        let legend: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains("class=\"legend\""))
            .map(|l| l.split('>').nth(1).unwrap().trim_end_matches("</text"))
            .collect();
        assert_eq!(legend, ["BMQ2", "BMQ1Q2"]);
    }

    #[test]
    fn report_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let a = curve("BMQ2", "Q2", &[14.77, 60.0, 80.0, 90.0, 91.22]);
        let b = curve("BMQ1Q2", "Q2", &[58.38, 85.0, 90.5, 91.3, 91.5]);
        let files = write_report(&[a, b], 5, 1.0, dir.path()).unwrap();
        assert_eq!(files.plots.len(), 1);
        let t3 = fs::read_to_string(&files.chosen_models).unwrap();
        assert!(t3.starts_with(
            "model,mean,median,sd,max,pct_data_for_max,acc_within_1sd,pct_data_for_1sd\n"
        ));
        let t4 = fs::read_to_string(&files.advantages).unwrap();
        let row = t4.lines().nth(1).unwrap();
        assert_eq!(row, "Q2,BMQ2,BMQ1Q2,14.77,58.38,43.61,91.22,100.0,50.0");
    }

    #[test]
    fn curve_csv_round_trip() {
        let text = "model,question,fraction_pct,accuracy,precision,recall,f1\nBMQ2,Q2,0.0,14.77,1,1,1\nBMQ2,Q2,2.5,40.00,1,1,1\n";
        let c = read_curves_csv(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].points[1], CurvePoint::new(0.025, 40.0));
    }
}
