//! Minimal SVG line plots by direct path emission: fixed 800×500 canvas,
//! linear axes, no dependencies. Coordinate mapping: the data rectangle
//! [x_min, x_max] × [y_min, y_max] maps affinely onto the plot area
//! (margins: 60 left, 20 right, 30 top, 45 bottom), y inverted.

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal marker lines (value, label).
    pub hlines: Vec<(f64, String)>,
    /// Vertical marker lines (value, label).
    pub vlines: Vec<(f64, String)>,
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    } * mag;
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= hi + 1e-12 * span {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl LinePlot {
    pub fn render(&self) -> String {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for s in &self.series {
            for &(x, y) in &s.points {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
        for &(v, _) in &self.hlines {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
        for &(v, _) in &self.vlines {
            x_min = x_min.min(v);
            x_max = x_max.max(v);
        }
        if !x_min.is_finite() {
            x_min = 0.0;
            x_max = 1.0;
        }
        if !y_min.is_finite() {
            y_min = 0.0;
            y_max = 1.0;
        }
        if y_max - y_min < 1e-12 {
            y_max = y_min + 1.0;
        }
        if x_max - x_min < 1e-12 {
            x_max = x_min + 1.0;
        }
        // a little headroom on top
        let pad = 0.05 * (y_max - y_min);
        y_max += pad;
        if y_min > 0.0 && y_min < 0.3 * y_max {
            y_min = 0.0;
        }

        let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * (WIDTH - LEFT - RIGHT);
        let py = |y: f64| HEIGHT - BOTTOM - (y - y_min) / (y_max - y_min) * (HEIGHT - TOP - BOTTOM);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            WIDTH / 2.0,
            xml_escape(&self.title)
        ));

        // axes + ticks
        for t in nice_ticks(x_min, x_max, 8) {
            let x = px(t);
            out.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
                py(y_min),
                py(y_max)
            ));
            out.push_str(&format!(
                "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                HEIGHT - BOTTOM + 16.0,
                fmt_tick(t)
            ));
        }
        for t in nice_ticks(y_min, y_max, 6) {
            let y = py(t);
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
                LEFT,
                WIDTH - RIGHT
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(t)
            ));
        }
        out.push_str(&format!(
            "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
            WIDTH - LEFT - RIGHT,
            HEIGHT - TOP - BOTTOM
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            WIDTH / 2.0,
            HEIGHT - 8.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            xml_escape(&self.y_label)
        ));

        // marker lines
        for (v, label) in &self.hlines {
            let y = py(*v);
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#c22\" stroke-dasharray=\"6 3\"/>\n",
                LEFT,
                WIDTH - RIGHT
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.1}\" fill=\"#c22\" text-anchor=\"end\">{}</text>\n",
                WIDTH - RIGHT - 4.0,
                y - 4.0,
                xml_escape(label)
            ));
        }
        for (v, label) in &self.vlines {
            let x = px(*v);
            out.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#282\" stroke-dasharray=\"6 3\"/>\n",
                py(y_min),
                py(y_max)
            ));
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{}\" fill=\"#282\">{}</text>\n",
                x + 4.0,
                TOP + 14.0,
                xml_escape(label)
            ));
        }

        // series + legend
        for (i, s) in self.series.iter().enumerate() {
            if s.points.is_empty() {
                continue;
            }
            let mut path = String::from("M");
            for (j, &(x, y)) in s.points.iter().enumerate() {
                if j > 0 {
                    path.push('L');
                }
                path.push_str(&format!("{:.2} {:.2}", px(x), py(y)));
            }
            out.push_str(&format!(
                "<path d=\"{path}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.6\"/>\n",
                s.color
            ));
            let ly = TOP + 16.0 * (i as f64 + 1.0);
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{ly:.1}\" x2=\"{}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                LEFT + 10.0,
                LEFT + 40.0,
                s.color
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.1}\">{}</text>\n",
                LEFT + 46.0,
                ly + 4.0,
                xml_escape(&s.label)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_svg() {
        let plot = LinePlot {
            title: "control norm".into(),
            x_label: "t".into(),
            y_label: "value".into(),
            series: vec![Series {
                label: "‖u(t)‖".into(),
                color: "#26c",
                points: (0..50).map(|i| (i as f64 * 0.1, (i as f64 * 0.3).sin())).collect(),
            }],
            hlines: vec![(0.5, "threshold".into())],
            vlines: vec![(2.0, "T0".into())],
        };
        let svg = plot.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("<path"));
        assert!(svg.contains("threshold"));
        // tags balance
        assert_eq!(svg.matches("<svg").count(), 1);
    }

    #[test]
    fn ticks_cover_the_range() {
        let t = nice_ticks(0.0, 10.0, 8);
        assert!(t.first().copied().unwrap() >= 0.0);
        assert!(t.last().copied().unwrap() <= 10.0 + 1e-9);
        assert!(t.len() >= 5);
    }
}
