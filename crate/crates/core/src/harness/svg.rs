//! Two-panel line charts of an unlearning run: accuracies on the left,
//! membership-inference scores on the right.

use std::fmt::Write;

use super::experiment::ExperimentReport;

const PANEL_W: f64 = 440.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const LEGEND_H: f64 = 90.0;

struct Series {
    label: &'static str,
    color: &'static str,
    points: Vec<(f64, f64)>,
}

/// Renders accuracy and MIA curves, epoch 0 being the pre-unlearning state.
pub fn render_curves(report: &ExperimentReport) -> String {
    let pre = &report.pre_unlearning;
    let mut states = vec![(&pre.metrics, &pre.baseline_attack)];
    states.extend(report.trace.entries.iter().map(|e| (&e.metrics, &e.attack)));
    let epochs: Vec<f64> = states.iter().map(|(m, _)| m.epoch as f64).collect();
    let collect = |f: &dyn Fn(usize) -> Option<f64>| -> Vec<(f64, f64)> {
        (0..states.len())
            .filter_map(|i| f(i).map(|v| (epochs[i], v)))
            .collect()
    };

    let accuracy = vec![
        Series {
            label: "train",
            color: "#1f77b4",
            points: collect(&|i| Some(states[i].0.train_acc)),
        },
        Series {
            label: "validation",
            color: "#9467bd",
            points: collect(&|i| states[i].0.val_acc),
        },
        Series {
            label: "test",
            color: "#2ca02c",
            points: collect(&|i| states[i].0.test_acc),
        },
        Series {
            label: "forget",
            color: "#d62728",
            points: collect(&|i| states[i].0.forget_acc),
        },
        Series {
            label: "retain",
            color: "#ff7f0e",
            points: collect(&|i| states[i].0.retain_acc),
        },
    ];
    let mia = vec![
        Series {
            label: "MIA forget",
            color: "#d62728",
            points: collect(&|i| Some(states[i].1.mia_forget_acc)),
        },
        Series {
            label: "MIA retain",
            color: "#ff7f0e",
            points: collect(&|i| Some(states[i].1.mia_retain_acc)),
        },
        Series {
            label: "adversary success",
            color: "#7f7f7f",
            points: collect(&|i| Some(states[i].1.adversary_success)),
        },
    ];

    let max_epoch = epochs.last().copied().unwrap_or(0.0).max(1.0);
    let width = 2.0 * (PANEL_W + 2.0 * MARGIN);
    let height = PANEL_H + 2.0 * MARGIN + LEGEND_H;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let title = format!("{} on {}", report.trace.method.name(), report.dataset.name);
    panel(
        &mut svg,
        0.0,
        &format!("Accuracy: {title}"),
        &accuracy,
        max_epoch,
    );
    panel(
        &mut svg,
        PANEL_W + 2.0 * MARGIN,
        &format!("Membership inference: {title}"),
        &mia,
        max_epoch,
    );
    svg.push_str("</svg>\n");
    svg
}

fn panel(svg: &mut String, x0: f64, title: &str, series: &[Series], max_epoch: f64) {
    let left = x0 + MARGIN;
    let top = MARGIN;
    let sx = |e: f64| left + PANEL_W * e / max_epoch;
    let sy = |v: f64| top + PANEL_H * (1.0 - v.clamp(0.0, 1.0));

    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        left + PANEL_W / 2.0,
        top - 20.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#333"/>"##
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            left + PANEL_W,
            left - 6.0,
            y + 4.0
        );
    }
    let step = (max_epoch / 10.0).ceil().max(1.0);
    let mut e = 0.0;
    while e <= max_epoch {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{e}</text>"#,
            sx(e),
            top + PANEL_H + 16.0
        );
        e += step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        left + PANEL_W / 2.0,
        top + PANEL_H + 34.0
    );

    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(e, v)| format!("{:.2},{:.2}", sx(e), sy(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            s.color,
            pts.join(" ")
        );
        let ly = top + PANEL_H + 50.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{left}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + 24.0,
            s.color,
            left + 30.0,
            ly + 4.0,
            escape(s.label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
