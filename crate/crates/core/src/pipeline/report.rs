use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::read_summary_csv;
use crate::training::{read_metrics_csv, EpochMetrics};

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

pub fn render_text(log: Option<&[EpochMetrics]>, summary: Option<&[(String, f64)]>) -> String {
    let mut s = String::new();
    if let Some(log) = log {
        s.push_str("training\n");
        let _ = writeln!(s, "{:>5} {:>10} {:>10} {:>8} {:>10}", "epoch", "train_loss", "val_loss", "val_acc", "lr_last");
        for r in log {
            let _ = writeln!(
                s,
                "{:>5} {:>10} {:>10.4} {:>8.4} {:>10}",
                r.epoch,
                opt(r.train_loss),
                r.val_loss,
                r.val_accuracy,
                r.lr_last.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into())
            );
        }
        if let Some(best) = log.iter().reduce(|a, b| if b.val_accuracy > a.val_accuracy { b } else { a }) {
            let _ = writeln!(s, "best epoch {} (val_acc {:.4})", best.epoch, best.val_accuracy);
        }
        s.push('\n');
    }
    if let Some(rows) = summary {
        s.push_str("filter\n");
        for (k, v) in rows {
            if v.fract() == 0.0 && v.abs() < 1e15 {
                let _ = writeln!(s, "{k:<18} {v:>12}");
            } else {
                let _ = writeln!(s, "{k:<18} {v:>12.4}");
            }
        }
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 260.0;
const PAD: f64 = 40.0;

fn polyline(points: &[(f64, f64)], x_max: f64, y_max: f64, y0: f64, color: &str) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            let px = PAD + (W - 2.0 * PAD) * x / x_max.max(1e-12);
            let py = y0 + (H - 2.0 * PAD) * (1.0 - y / y_max.max(1e-12)) + PAD;
            format!("{px:.1},{py:.1}")
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Loss/accuracy curves and, when the summary has them, flow-count bars.
pub fn render_svg(log: Option<&[EpochMetrics]>, summary: Option<&[(String, f64)]>) -> String {
    let flow: Vec<(&str, f64)> = summary
        .unwrap_or_default()
        .iter()
        .filter(|(k, _)| k.starts_with("flow_"))
        .map(|(k, v)| (k.as_str(), *v))
        .collect();
    let panels = log.is_some() as usize + !flow.is_empty() as usize;
    let height = H * panels.max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" font-family=\"monospace\" font-size=\"11\">\n"
    );
    let mut y0 = 0.0;
    if let Some(log) = log {
        let x_max = log.iter().map(|r| r.epoch).max().unwrap_or(1).max(1) as f64;
        let loss_max = log
            .iter()
            .flat_map(|r| [r.val_loss, r.train_loss.unwrap_or(0.0)])
            .fold(0.0f64, f64::max);
        let val_loss: Vec<(f64, f64)> = log.iter().map(|r| (r.epoch as f64, r.val_loss)).collect();
        let train_loss: Vec<(f64, f64)> = log
            .iter()
            .filter_map(|r| Some((r.epoch as f64, r.train_loss?)))
            .collect();
        let acc: Vec<(f64, f64)> = log.iter().map(|r| (r.epoch as f64, r.val_accuracy)).collect();
        let _ = writeln!(s, "<text x=\"{PAD}\" y=\"{}\">loss (blue train, orange val) / val accuracy (green, 0..1)</text>", y0 + 20.0);
        s.push_str(&polyline(&train_loss, x_max, loss_max, y0, "#1f77b4"));
        s.push_str(&polyline(&val_loss, x_max, loss_max, y0, "#ff7f0e"));
        s.push_str(&polyline(&acc, x_max, 1.0, y0, "#2ca02c"));
        y0 += H;
    }
    if !flow.is_empty() {
        let max = flow.iter().map(|f| f.1).fold(1.0f64, f64::max);
        let bar_w = (W - 2.0 * PAD) / flow.len() as f64;
        let _ = writeln!(s, "<text x=\"{PAD}\" y=\"{}\">model vs PP flow counts</text>", y0 + 20.0);
        for (i, (k, v)) in flow.iter().enumerate() {
            let h = (H - 2.0 * PAD - 20.0) * v / max;
            let x = PAD + i as f64 * bar_w;
            let base = y0 + H - PAD;
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"#9467bd\"/>",
                x + 4.0,
                base - h,
                bar_w - 8.0
            );
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\">{} ({v})</text>", x + 4.0, base + 14.0, k.trim_start_matches("flow_"));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.txt` and `report.svg` into `out_dir`.
pub fn render_report(
    metrics_csv: Option<&Path>,
    summary_csv: Option<&Path>,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if metrics_csv.is_none() && summary_csv.is_none() {
        return Err(Error::config("--metrics", "give --metrics and/or --summary"));
    }
    let log = metrics_csv.map(read_metrics_csv).transpose()?;
    let summary = summary_csv.map(read_summary_csv).transpose()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let txt = out_dir.join("report.txt");
    let svg = out_dir.join("report.svg");
    std::fs::write(&txt, render_text(log.as_deref(), summary.as_deref())).map_err(|e| Error::io(&txt, e))?;
    std::fs::write(&svg, render_svg(log.as_deref(), summary.as_deref())).map_err(|e| Error::io(&svg, e))?;
    Ok((txt, svg))
}
