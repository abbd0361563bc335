//! Static SVG line charts of aggregate traces.

use std::fmt::Write as _;

use super::metrics::{fmt_float, AggregateRow};
use crate::error::{Error, Result};
use crate::homeostat::Controller;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    LearningRate,
}

/// How rows are split into traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKey {
    /// One trace per `(learner, shift_rate)`.
    LearnerRate,
    /// One trace per learner; epochs with a nonzero rate are shaded. Suits
    /// seasonal runs, where the rate changes along the trace.
    Learner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub metric: Metric,
    pub series: SeriesKey,
    pub learners: Option<Vec<Controller>>,
    pub shift_rates: Option<Vec<f64>>,
    pub title: Option<String>,
    pub log_y: bool,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            metric: Metric::Accuracy,
            series: SeriesKey::LearnerRate,
            learners: None,
            shift_rates: None,
            title: None,
            log_y: false,
            width: 760.0,
            height: 440.0,
        }
    }
}

/// Parses `key = value` pairs separated by newlines or `;`. Keys: `metric`
/// (`accuracy` | `lr`), `series` (`learner_rate` | `learner`), `learners`,
/// `shift_rates`, `title`, `log_y`, `width`, `height`.
pub fn parse_plot_spec(text: &str) -> Result<PlotSpec> {
    let mut spec = PlotSpec::default();
    for (n, part) in text.split(['\n', ';']).enumerate() {
        let part = part.split('#').next().unwrap_or("").trim();
        if part.is_empty() {
            continue;
        }
        let err = |key: &str, message: String| Error::Config {
            line: n + 1,
            key: key.into(),
            message,
        };
        let (k, v) = part
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(part, "expected `key = value`".into()))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| err(k, format!("`{v}` is not a number")));
        match k {
            "metric" => {
                spec.metric = match v {
                    "accuracy" | "acc" => Metric::Accuracy,
                    "lr" => Metric::LearningRate,
                    _ => return Err(err(k, format!("`{v}` is not `accuracy` or `lr`"))),
                }
            }
            "series" => {
                spec.series = match v {
                    "learner_rate" => SeriesKey::LearnerRate,
                    "learner" => SeriesKey::Learner,
                    _ => return Err(err(k, format!("`{v}` is not `learner_rate` or `learner`"))),
                }
            }
            "learners" => {
                spec.learners = Some(
                    v.split(',')
                        .map(|s| Controller::parse(s.trim()).ok_or_else(|| err(k, format!("unknown learner `{s}`"))))
                        .collect::<Result<_>>()?,
                )
            }
            "shift_rates" => spec.shift_rates = Some(v.split(',').map(|s| num(s.trim())).collect::<Result<_>>()?),
            "title" => spec.title = Some(v.to_string()),
            "log_y" => spec.log_y = v.parse().map_err(|_| err(k, format!("`{v}` is not true or false")))?,
            "width" => spec.width = num(v)?,
            "height" => spec.height = num(v)?,
            _ => return Err(err(k, "unknown key".into())),
        }
    }
    Ok(spec)
}

/// Trace color for a learner kind.
pub fn learner_color(c: Controller) -> &'static str {
    match c {
        Controller::Homeostatic => "#1f5fbf",
        Controller::RandomWalk => "#2a9d3a",
        Controller::Constant => "#d62828",
    }
}

const DASHES: [&str; 5] = ["", "6 3", "2 3", "10 4 2 4", "1 5"];

struct Trace<'a> {
    learner: Controller,
    rate: Option<f64>,
    rows: Vec<&'a AggregateRow>,
}

fn value(r: &AggregateRow, m: Metric) -> (f64, f64) {
    match m {
        Metric::Accuracy => (r.acc_mean, r.acc_sem),
        Metric::LearningRate => (r.lr_mean, r.lr_sem),
    }
}

/// Renders mean traces with shaded mean ± SEM bands. Errors when the spec
/// selects nothing.
pub fn render_plot(rows: &[AggregateRow], spec: &PlotSpec) -> Result<String> {
    let selected: Vec<&AggregateRow> = rows
        .iter()
        .filter(|r| spec.learners.as_ref().is_none_or(|l| l.contains(&r.learner)))
        .filter(|r| {
            spec.series == SeriesKey::Learner
                || spec.shift_rates.as_ref().is_none_or(|s| s.contains(&r.shift_rate))
        })
        .filter(|r| value(r, spec.metric).0.is_finite())
        .collect();
    if selected.is_empty() {
        return Err(Error::Plot("selection is empty".into()));
    }

    let mut traces: Vec<Trace> = Vec::new();
    for r in &selected {
        let rate = (spec.series == SeriesKey::LearnerRate).then_some(r.shift_rate);
        match traces.iter_mut().find(|t| t.learner == r.learner && t.rate == rate) {
            Some(t) => t.rows.push(r),
            None => traces.push(Trace {
                learner: r.learner,
                rate,
                rows: vec![r],
            }),
        }
    }
    let mut rates: Vec<f64> = traces.iter().filter_map(|t| t.rate).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();

    let x_max = selected.iter().map(|r| r.epoch + 1).max().unwrap_or(1) as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &selected {
        let (m, s) = value(r, spec.metric);
        lo = lo.min(m - s);
        hi = hi.max(m + s);
    }
    let log_y = spec.log_y && lo > 0.0;
    let (y_lo, y_hi) = match spec.metric {
        Metric::Accuracy => (0.0, 1.0),
        _ if log_y => (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0)),
        _ => (0.0, if hi > 0.0 { hi * 1.05 } else { 1.0 }),
    };

    let (w, h) = (spec.width, spec.height);
    let (left, right, top, bottom) = (70.0, 190.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + x / x_max * pw;
    let sy = |y: f64| {
        let t = if log_y { y.max(1e-300).log10() } else { y };
        top + ph - (t - y_lo) / (y_hi - y_lo) * ph
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);

    if spec.series == SeriesKey::Learner {
        let first = selected[0].learner;
        for r in selected.iter().filter(|r| r.learner == first && r.shift_rate > 0.0) {
            let x0 = sx(r.epoch as f64);
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{top}" width="{:.2}" height="{ph}" fill="#888" fill-opacity="0.12"/>"##,
                x0,
                sx(r.epoch as f64 + 1.0) - x0
            );
        }
    }

    // Axes, ticks and labels.
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    let x_step = ((x_max / 10.0).ceil()).max(1.0);
    let mut x = 0.0;
    while x <= x_max + 1e-9 {
        let px = sx(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            x
        );
        x += x_step;
    }
    let ticks = 5;
    for i in 0..=ticks {
        let t = y_lo + (y_hi - y_lo) * i as f64 / ticks as f64;
        let (y, label) = if log_y {
            (10f64.powf(t), fmt_float(10f64.powf(t)))
        } else {
            (t, fmt_float((t * 1e6).round() / 1e6))
        };
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/><line x1="{left}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
            left - 5.0,
            left + pw,
            left - 8.0,
            py + 4.0
        );
    }
    let y_name = match spec.metric {
        Metric::Accuracy => "validation accuracy",
        Metric::LearningRate => "learning rate",
    };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{y_name}</text>"#,
        top + ph / 2.0
    );
    if let Some(title) = &spec.title {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            left + pw / 2.0,
            escape(title)
        );
    }

    // Bands first so every mean line sits on top.
    for t in &traces {
        let color = learner_color(t.learner);
        let mut pts: Vec<String> = t
            .rows
            .iter()
            .map(|r| {
                let (m, e) = value(r, spec.metric);
                format!("{:.2},{:.2}", sx(r.epoch as f64 + 1.0), sy(m + e))
            })
            .collect();
        pts.extend(t.rows.iter().rev().map(|r| {
            let (m, e) = value(r, spec.metric);
            format!("{:.2},{:.2}", sx(r.epoch as f64 + 1.0), sy(m - e))
        }));
        let _ = writeln!(
            s,
            r#"<polygon class="sem-band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            pts.join(" ")
        );
    }
    for (i, t) in traces.iter().enumerate() {
        let color = learner_color(t.learner);
        let dash = t
            .rate
            .and_then(|r| rates.iter().position(|&q| q == r))
            .map(|k| DASHES[k % DASHES.len()])
            .unwrap_or("");
        let pts: Vec<String> = t
            .rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.epoch as f64 + 1.0), sy(value(r, spec.metric).0)))
            .collect();
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let _ = writeln!(
            s,
            r#"<polyline class="mean-trace" points="{}" fill="none" stroke="{color}" stroke-width="2"{dash_attr}/>"#,
            pts.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 15.0;
        let label = match t.rate {
            Some(r) => format!("{} (rate {})", t.learner, fmt_float(r)),
            None => t.learner.to_string(),
        };
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash_attr}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
