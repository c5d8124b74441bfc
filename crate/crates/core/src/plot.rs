//! Minimal SVG output for result figures: observed-versus-predicted
//! scatter, age-sex pyramid and parameter caterpillar.

use std::fmt::Write;

use crate::agesex::{self, ProportionSummary, N_AGE_BANDS};

const W: f64 = 640.0;
const H: f64 = 480.0;
const M: f64 = 60.0;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        "<line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ly}\" text-anchor=\"middle\">{xl}</text>\n\
         <text x=\"15\" y=\"{cy}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {cy})\">{yl}</text>",
        b = H - M,
        r = W - M,
        cx = W / 2.0,
        ly = H - 20.0,
        cy = H / 2.0,
        xl = escape(x_label),
        yl = escape(y_label),
    );
}

/// Linear map of `[lo, hi]` onto pixel range `[a, b]`.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

/// Observed against predicted means with 95% whiskers and a 1:1 line.
/// Points are `(observed, mean, lo95, hi95)`.
pub fn scatter_svg(title: &str, points: &[(f64, f64, f64, f64)]) -> String {
    let mut out = header(title);
    axes(&mut out, "Observed", "Predicted");
    let finite = points
        .iter()
        .flat_map(|p| [p.0, p.1, p.2, p.3])
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi) } else { (0.0, 1.0) };
    let sx = |v: f64| scale(v, lo, hi, M, W - M);
    let sy = |v: f64| scale(v, lo, hi, H - M, M);
    let _ = writeln!(
        out,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"grey\" stroke-dasharray=\"4\"/>",
        sx(lo),
        sy(lo),
        sx(hi),
        sy(hi)
    );
    for &(o, m, l, h) in points {
        if !(o.is_finite() && m.is_finite()) {
            continue;
        }
        let x = sx(o);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"steelblue\" stroke-opacity=\"0.4\"/>\n\
             <circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"steelblue\"/>",
            sy(l),
            sy(h),
            sy(m)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{M}\" y=\"{:.0}\">{lo:.1}</text><text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"end\">{hi:.1}</text>",
        H - M + 15.0,
        W - M,
        H - M + 15.0
    );
    out.push_str("</svg>\n");
    out
}

/// Population pyramid of posterior mean proportions with 95% bars for one
/// province. Males on the left, females on the right, youngest at the base.
pub fn pyramid_svg(title: &str, rows: &[ProportionSummary]) -> String {
    let mut out = header(title);
    let max = rows.iter().map(|r| r.hi95).fold(0.0, f64::max).max(1e-12);
    let cx = W / 2.0;
    let half = W / 2.0 - M;
    let band_h = (H - 2.0 * M) / N_AGE_BANDS as f64;
    let _ = writeln!(
        out,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\">Male</text><text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\">Female</text>",
        cx - half / 2.0,
        H - 20.0,
        cx + half / 2.0,
        H - 20.0
    );
    for r in rows {
        let band = r.group % N_AGE_BANDS;
        let male = r.group < N_AGE_BANDS;
        let y = H - M - (band as f64 + 1.0) * band_h;
        let len = r.mean / max * half;
        let x = if male { cx - len } else { cx };
        let fill = if male { "#4a7fb5" } else { "#c9655f" };
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{len:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
            y + 1.0,
            band_h - 2.0
        );
        let sign = if male { -1.0 } else { 1.0 };
        let ym = y + band_h / 2.0;
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{ym:.2}\" x2=\"{:.2}\" y2=\"{ym:.2}\" stroke=\"black\"/>",
            cx + sign * r.lo95 / max * half,
            cx + sign * r.hi95 / max * half
        );
        if male {
            let _ = writeln!(
                out,
                "<text x=\"{:.0}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"9\">{}</text>",
                M - 5.0,
                ym + 3.0,
                agesex::band_label(band)
            );
        }
    }
    let _ = writeln!(
        out,
        "<line x1=\"{cx}\" y1=\"{M}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>",
        H - M
    );
    out.push_str("</svg>\n");
    out
}

/// One row per parameter: posterior mean with its 95% interval.
/// Rows are `(name, mean, lo95, hi95)` drawn top to bottom in given order.
pub fn caterpillar_svg(title: &str, rows: &[(String, f64, f64, f64)]) -> String {
    let height = (2.0 * M + 14.0 * rows.len() as f64).max(H);
    let mut out = header(title).replace(
        &format!("height=\"{H}\" viewBox=\"0 0 {W} {H}\""),
        &format!("height=\"{height}\" viewBox=\"0 0 {W} {height}\""),
    );
    let (lo, hi) = rows
        .iter()
        .flat_map(|r| [r.2, r.3])
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let left = 2.5 * M;
    let sx = |v: f64| scale(v, lo, hi, left, W - M);
    if lo < 0.0 && hi > 0.0 {
        let _ = writeln!(
            out,
            "<line x1=\"{0:.2}\" y1=\"{M}\" x2=\"{0:.2}\" y2=\"{1:.2}\" stroke=\"grey\" stroke-dasharray=\"4\"/>",
            sx(0.0),
            height - M
        );
    }
    for (i, (name, m, l, h)) in rows.iter().enumerate() {
        let y = M + 14.0 * i as f64 + 7.0;
        let _ = writeln!(
            out,
            "<text x=\"{:.0}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"9\">{}</text>\n\
             <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>\n\
             <circle cx=\"{:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"black\"/>",
            left - 6.0,
            y + 3.0,
            escape(name),
            sx(*l),
            sx(*h),
            sx(*m)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(svg: &str) -> bool {
        svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>")
    }

    #[test]
    fn scatter_has_one_marker_per_point() {
        let pts = vec![(1.0, 1.2, 0.8, 1.5), (3.0, 2.5, 2.0, 3.1), (f64::NAN, 1.0, 0.0, 2.0)];
        let svg = scatter_svg("Totals", &pts);
        assert!(balanced(&svg));
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn pyramid_draws_every_group() {
        let rows: Vec<ProportionSummary> = (0..agesex::N_GROUPS)
            .map(|g| ProportionSummary {
                province_id: 1,
                group: g,
                mean: 1.0 / 36.0,
                lo95: 0.02,
                hi95: 0.035,
            })
            .collect();
        let svg = pyramid_svg("P1 <test>", &rows);
        assert!(balanced(&svg));
        assert_eq!(svg.matches("<rect x=").count(), 36);
        assert!(svg.contains("&lt;test&gt;"));
    }

    #[test]
    fn caterpillar_grows_with_rows() {
        let rows: Vec<(String, f64, f64, f64)> = (0..60)
            .map(|i| (format!("alpha[{i}]"), i as f64, i as f64 - 1.0, i as f64 + 1.0))
            .collect();
        let svg = caterpillar_svg("alpha", &rows);
        assert!(balanced(&svg));
        assert_eq!(svg.matches("<circle").count(), 60);
        assert!(svg.contains("height=\"960\""));
    }
}
