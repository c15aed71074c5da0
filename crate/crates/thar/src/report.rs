//! Report rendering: Markdown tables, a lossless CSV and confusion heatmaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thar_core::benchlab::{
    ConfigDescriptor, ConfusionMatrix, EvalReport, FeasibilityVerdict, LatencyStats, McuEstimate,
};
use thar_core::datapipe::ChannelGroup;
use thar_core::model_ir::{Architecture, FilterLevel};
use thar_core::Precision;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report csv row {row}, column `{column}`: {message}")]
    Field {
        row: usize,
        column: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

const FIXED: [&str; 15] = [
    "arch",
    "group",
    "channels",
    "level",
    "filters",
    "precision",
    "accuracy",
    "macro_f1",
    "model_size_bytes",
    "mac_count",
    "arena_bytes",
    "host_runs",
    "host_mean_us",
    "host_p50_us",
    "host_p95_us",
];

const PER_PROFILE: [&str; 6] = [
    "latency_ms",
    "energy_mj",
    "flash_ok",
    "sram_ok",
    "flash_needed",
    "arena_needed",
];

fn arch_label(a: Architecture) -> &'static str {
    match a {
        Architecture::McCnn => "MC-CNN",
        Architecture::DeepConvLstm => "DeepConvLSTM",
    }
}

fn precision_label(p: Precision) -> &'static str {
    match p {
        Precision::Float32 => "float32",
        Precision::Int8Full => "int8",
    }
}

fn parse_precision(s: &str) -> Option<Precision> {
    match s {
        "float32" | "float" => Some(Precision::Float32),
        "int8" => Some(Precision::Int8Full),
        _ => None,
    }
}

/// Profile names across all reports, in first-seen order.
fn profile_names(reports: &[EvalReport]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in reports {
        for m in &r.mcu {
            if !names.contains(&m.profile) {
                names.push(m.profile.clone());
            }
        }
    }
    names
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn kb(bytes: u64) -> String {
    format!("{:.1}", bytes as f64 / 1024.0)
}

fn ratio(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "N/A".into())
}

/// Two Markdown tables: quality and size per config, then per-microcontroller estimates.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    s.push_str("# Benchmark report\n\n## Accuracy and model size\n\n");
    s.push_str("| Channels | Filters | Architecture | Model | Macro F1 | Accuracy | Size (KB) | MACs | Arena (KB) |\n");
    s.push_str("|---:|---:|---|---|---:|---:|---:|---:|---:|\n");
    for r in reports {
        let c = &r.config;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            c.channels(),
            c.filters(),
            arch_label(c.arch),
            precision_label(c.precision),
            ratio(r.macro_f1),
            ratio(r.accuracy),
            kb(r.model_size),
            r.mac_count,
            kb(r.arena_bytes),
        );
    }
    s.push_str("\n## Microcontroller estimates\n\n");
    s.push_str("| Channels | Filters | Architecture | Model | MCU | Latency (ms) | Energy (mJ) | Flash (KB) | RAM (KB) | Fits |\n");
    s.push_str("|---:|---:|---|---|---|---:|---:|---:|---:|---|\n");
    for r in reports {
        let c = &r.config;
        for m in &r.mcu {
            let fits = match (m.verdict.flash_ok, m.verdict.sram_ok) {
                (true, true) => "yes",
                (false, true) => "no (flash)",
                (true, false) => "no (RAM)",
                (false, false) => "no (flash, RAM)",
            };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {:.2} | {:.2} | {} | {} | {} |",
                c.channels(),
                c.filters(),
                arch_label(c.arch),
                precision_label(c.precision),
                m.profile,
                m.latency_ms,
                m.energy_mj,
                kb(m.verdict.flash_needed),
                kb(m.verdict.arena_needed),
                fits,
            );
        }
    }
    let failed: Vec<&EvalReport> = reports.iter().filter(|r| r.error.is_some()).collect();
    if !failed.is_empty() {
        s.push_str("\n## Failures\n\n");
        for r in failed {
            let c = &r.config;
            let _ = writeln!(
                s,
                "- {} {} {} {}: {}",
                arch_label(c.arch),
                c.group,
                c.level.as_str(),
                precision_label(c.precision),
                r.error.as_deref().unwrap_or_default().replace('\n', " "),
            );
        }
    }
    s
}

fn encode_confusion(m: &ConfusionMatrix) -> String {
    let counts: Vec<String> = m.counts().iter().map(u64::to_string).collect();
    format!("{}:{}", m.classes(), counts.join(" "))
}

fn decode_confusion(s: &str) -> Option<ConfusionMatrix> {
    let (classes, rest) = s.split_once(':')?;
    let classes: usize = classes.parse().ok()?;
    let counts = rest
        .split_whitespace()
        .map(|v| v.parse().ok())
        .collect::<Option<Vec<u64>>>()?;
    ConfusionMatrix::from_counts(classes, counts)
}

/// Header of the CSV for `reports`.
pub fn csv_header(reports: &[EvalReport]) -> Vec<String> {
    let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    for p in profile_names(reports) {
        for f in PER_PROFILE {
            h.push(format!("{p}:{f}"));
        }
    }
    h.push("confusion".into());
    h.push("error".into());
    h
}

/// One row per report. Floats use the shortest exact decimal, so [`parse_csv`] restores them bit for bit.
pub fn render_csv(reports: &[EvalReport]) -> String {
    let names = profile_names(reports);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(reports))
        .expect("in-memory write");
    for r in reports {
        let c = &r.config;
        let h = r.host_latency;
        let mut row = vec![
            c.arch.as_str().to_string(),
            c.group.as_str().to_string(),
            c.channels().to_string(),
            c.level.as_str().to_string(),
            c.filters().to_string(),
            precision_label(c.precision).to_string(),
            opt(r.accuracy),
            opt(r.macro_f1),
            r.model_size.to_string(),
            r.mac_count.to_string(),
            r.arena_bytes.to_string(),
            opt(h.map(|h| h.runs)),
            opt(h.map(|h| h.mean_us)),
            opt(h.map(|h| h.p50_us)),
            opt(h.map(|h| h.p95_us)),
        ];
        for name in &names {
            match r.mcu.iter().find(|m| &m.profile == name) {
                Some(m) => row.extend([
                    m.latency_ms.to_string(),
                    m.energy_mj.to_string(),
                    m.verdict.flash_ok.to_string(),
                    m.verdict.sram_ok.to_string(),
                    m.verdict.flash_needed.to_string(),
                    m.verdict.arena_needed.to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), PER_PROFILE.len())),
            }
        }
        row.push(
            r.confusion
                .as_ref()
                .map(encode_confusion)
                .unwrap_or_default(),
        );
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

struct Row<'a> {
    index: usize,
    header: &'a csv::StringRecord,
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn raw(&self, column: &str) -> Result<&str, ReportError> {
        let i = self
            .header
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| self.err(column, "missing column"))?;
        Ok(self.record.get(i).unwrap_or(""))
    }

    fn err(&self, column: &str, message: &str) -> ReportError {
        ReportError::Field {
            row: self.index,
            column: column.to_string(),
            message: message.to_string(),
        }
    }

    fn get<T: std::str::FromStr>(&self, column: &str) -> Result<T, ReportError> {
        let v = self.raw(column)?;
        v.parse()
            .map_err(|_| self.err(column, &format!("cannot parse `{v}`")))
    }

    fn get_opt<T: std::str::FromStr>(&self, column: &str) -> Result<Option<T>, ReportError> {
        if self.raw(column)?.is_empty() {
            Ok(None)
        } else {
            self.get(column).map(Some)
        }
    }
}

/// Inverse of [`render_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<EvalReport>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let mut profiles: Vec<String> = Vec::new();
    for h in header.iter() {
        if let Some((p, _)) = h.split_once(':') {
            if !profiles.iter().any(|q| q == p) {
                profiles.push(p.to_string());
            }
        }
    }
    let mut out = Vec::new();
    for (index, rec) in rdr.records().enumerate() {
        let record = rec?;
        let row = Row {
            index: index + 1,
            header: &header,
            record: &record,
        };
        let arch = Architecture::parse(row.raw("arch")?)
            .ok_or_else(|| row.err("arch", "unknown architecture"))?;
        let group: ChannelGroup = row.get("group")?;
        let level = FilterLevel::parse(row.raw("level")?)
            .ok_or_else(|| row.err("level", "unknown filter level"))?;
        let precision = parse_precision(row.raw("precision")?)
            .ok_or_else(|| row.err("precision", "unknown precision"))?;
        let host_latency = match row.get_opt::<usize>("host_runs")? {
            Some(runs) => Some(LatencyStats {
                runs,
                mean_us: row.get("host_mean_us")?,
                p50_us: row.get("host_p50_us")?,
                p95_us: row.get("host_p95_us")?,
            }),
            None => None,
        };
        let mut mcu = Vec::new();
        for p in &profiles {
            let col = |f: &str| format!("{p}:{f}");
            if row.raw(&col("latency_ms"))?.is_empty() {
                continue;
            }
            mcu.push(McuEstimate {
                profile: p.clone(),
                latency_ms: row.get(&col("latency_ms"))?,
                energy_mj: row.get(&col("energy_mj"))?,
                verdict: FeasibilityVerdict {
                    flash_ok: row.get(&col("flash_ok"))?,
                    sram_ok: row.get(&col("sram_ok"))?,
                    flash_needed: row.get(&col("flash_needed"))?,
                    arena_needed: row.get(&col("arena_needed"))?,
                },
            });
        }
        let confusion = match row.raw("confusion")? {
            "" => None,
            s => Some(decode_confusion(s).ok_or_else(|| row.err("confusion", "malformed matrix"))?),
        };
        let error = Some(row.raw("error")?.to_string()).filter(|e| !e.is_empty());
        out.push(EvalReport {
            config: ConfigDescriptor {
                arch,
                group,
                level,
                precision,
            },
            accuracy: row.get_opt("accuracy")?,
            macro_f1: row.get_opt("macro_f1")?,
            confusion,
            model_size: row.get("model_size_bytes")?,
            mac_count: row.get("mac_count")?,
            arena_bytes: row.get("arena_bytes")?,
            host_latency,
            mcu,
            error,
        });
    }
    Ok(out)
}

/// Row-normalized confusion heatmap.
pub fn render_heatmap_svg(m: &ConfusionMatrix, title: &str) -> String {
    const CELL: usize = 28;
    const LEFT: usize = 60;
    const TOP: usize = 60;
    let n = m.classes();
    let width = LEFT + n * CELL + 20;
    let height = TOP + n * CELL + 40;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">predicted</text>"#,
        LEFT + n * CELL / 2,
        TOP - 22
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {})">true</text>"#,
        TOP + n * CELL / 2,
        TOP + n * CELL / 2
    );
    for i in 0..n {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="9" text-anchor="middle">{i}</text>"#,
            LEFT + i * CELL + CELL / 2,
            TOP - 6
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="9" text-anchor="end">{i}</text>"#,
            LEFT - 6,
            TOP + i * CELL + CELL / 2 + 3
        );
    }
    for t in 0..n {
        let total = m.row_sum(t);
        for p in 0..n {
            let v = m.get(t, p);
            let frac = if total == 0 {
                0.0
            } else {
                v as f64 / total as f64
            };
            let shade = (255.0 - frac * 200.0).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="#ccc"><title>true {t}, predicted {p}: {v}</title></rect>"##,
                LEFT + p * CELL,
                TOP + t * CELL,
            );
            if v > 0 {
                let ink = if frac > 0.6 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-size="8" text-anchor="middle" fill="{ink}">{v}</text>"#,
                    LEFT + p * CELL + CELL / 2,
                    TOP + t * CELL + CELL / 2 + 3,
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// File stem identifying one configuration, e.g. `mc-cnn_g23_N1_int8`.
pub fn config_slug(c: &ConfigDescriptor) -> String {
    format!(
        "{}_{}_{}_{}",
        c.arch.as_str(),
        c.group,
        c.level.as_str(),
        precision_label(c.precision)
    )
}

/// Writes `report.md`, `report.csv` and one heatmap per report with a confusion matrix.
pub fn write_report_files(
    dir: &Path,
    reports: &[EvalReport],
) -> Result<BTreeMap<String, PathBuf>, ReportError> {
    let mut written = BTreeMap::new();
    let mut put = |name: String, body: String| -> Result<(), ReportError> {
        let path = dir.join(&name);
        fs::write(&path, body).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        written.insert(name, path);
        Ok(())
    };
    put("report.md".into(), render_markdown(reports))?;
    put("report.csv".into(), render_csv(reports))?;
    for r in reports {
        if let Some(m) = &r.confusion {
            let slug = config_slug(&r.config);
            put(
                format!("confusion_{slug}.svg"),
                render_heatmap_svg(m, &slug),
            )?;
        }
    }
    Ok(written)
}
