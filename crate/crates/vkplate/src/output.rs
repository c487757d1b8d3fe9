//! CSV and SVG artifact emission. Every CSV has a header row and a
//! deterministic row order; numeric cells use a fixed exponent format so
//! reruns of the same configuration are byte-identical.
//!
//! The SVG renderer draws straight from the same data the CSVs carry; it
//! is presentation only and nothing downstream reads it back.

use std::io::Write;
use std::path::Path;

use crate::continuation::{Branch, BifurcationDiagram};
use crate::eigen::{cluster_multiplicities, EigenPair, SpectrumTrace};
use crate::error::Result;
use crate::rom::RbLadderRow;

/// Fixed float format for all CSV cells.
pub fn fmt(v: f64) -> String {
    format!("{:.12e}", v)
}

pub fn write_lines(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

/// `eigs.csv`: one row per eigenvalue with its cluster multiplicity.
pub fn write_eigs_csv(path: &Path, pairs: &[EigenPair], cluster_rel_tol: f64) -> Result<()> {
    let values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
    let mult = cluster_multiplicities(&values, cluster_rel_tol);
    let rows: Vec<String> = values
        .iter()
        .zip(&mult)
        .enumerate()
        .map(|(i, (v, m))| format!("{},{},{m}", i + 1, fmt(*v)))
        .collect();
    write_lines(path, "index,value,multiplicity", &rows)
}

/// `spectrum.csv`: λ column followed by one σ column per tracked curve.
pub fn write_spectrum_csv(path: &Path, trace: &SpectrumTrace) -> Result<()> {
    let k = trace.sigma_curves.len();
    let header = std::iter::once("lambda".to_string())
        .chain((1..=k).map(|i| format!("sigma_{i}")))
        .collect::<Vec<_>>()
        .join(",");
    let rows: Vec<String> = trace
        .lambda_grid
        .iter()
        .enumerate()
        .map(|(g, lambda)| {
            let mut cells = vec![fmt(*lambda)];
            cells.extend(trace.sigma_curves.iter().map(|c| fmt(c[g])));
            cells.join(",")
        })
        .collect();
    write_lines(path, &header, &rows)
}

pub const DIAGRAM_HEADER: &str =
    "branch_id,seed_m,seed_n,seed_sign,psi,lambda,ordinate,converged,iterations";

/// Rows for traced branches; ids follow slice order.
pub fn branch_rows(branches: &[Branch]) -> Vec<String> {
    let mut rows = Vec::new();
    for (id, branch) in branches.iter().enumerate() {
        let (m, n) = branch.seed.mode;
        for p in &branch.points {
            rows.push(format!(
                "{id},{m},{n},{},{},{},{},{},{}",
                branch.seed.sign,
                fmt(p.psi),
                fmt(p.lambda),
                fmt(p.ordinate),
                p.converged,
                p.iterations
            ));
        }
    }
    rows
}

/// `diagram.csv`: branch rows, then the trivial branch as id −1 with a
/// zero seed.
pub fn write_diagram_csv(path: &Path, diagram: &BifurcationDiagram, psi: f64) -> Result<()> {
    let mut rows = branch_rows(&diagram.branches);
    for (lambda, ord) in &diagram.trivial_branch {
        rows.push(format!(
            "-1,0,0,0,{},{},{},true,0",
            fmt(psi),
            fmt(*lambda),
            fmt(*ord)
        ));
    }
    write_lines(path, DIAGRAM_HEADER, &rows)
}

/// `sweep2d.csv`: one row per (ψ, λ) station with the branch ordinate and
/// the ψ-row's detected critical load.
pub fn write_sweep2d_csv(path: &Path, rows2d: &[(f64, Branch, f64)]) -> Result<()> {
    let mut rows = Vec::new();
    for (psi, branch, lambda_star) in rows2d {
        for p in &branch.points {
            rows.push(format!(
                "{},{},{},{}",
                fmt(*psi),
                fmt(p.lambda),
                fmt(p.ordinate),
                fmt(*lambda_star)
            ));
        }
    }
    write_lines(path, "psi,lambda,ordinate,lambda_star", &rows)
}

/// `rb_error.csv`: accuracy/speed ladder of the reduced model. The two
/// timing columns are wall-clock measurements and vary between reruns;
/// every other column is deterministic.
pub fn write_rb_error_csv(path: &Path, rows: &[RbLadderRow]) -> Result<()> {
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{}", r.n, fmt(r.value), fmt(r.t_online_ms), fmt(r.t_full_ms)))
        .collect();
    write_lines(path, "N,E_N,t_online_ms,t_full_ms", &lines)
}

// ---------------------------------------------------------------------------
// SVG

const PALETTE: [&str; 8] = [
    "#01579b", "#c62828", "#2e7d32", "#6a1b9a", "#ef6c00", "#00838f", "#ad1457", "#4e342e",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    const W: f64 = 860.0;
    const H: f64 = 540.0;
    const ML: f64 = 70.0;
    const MR: f64 = 150.0;
    const MT: f64 = 30.0;
    const MB: f64 = 50.0;

    fn px(&self, x: f64) -> f64 {
        Frame::ML + (x - self.x0) / (self.x1 - self.x0) * (Frame::W - Frame::ML - Frame::MR)
    }

    fn py(&self, y: f64) -> f64 {
        Frame::H - Frame::MB - (y - self.y0) / (self.y1 - self.y0) * (Frame::H - Frame::MT - Frame::MB)
    }
}

/// Round tick step of the form {1, 2, 5}·10^k giving 4–9 ticks.
fn tick_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    for mult in [1.0, 2.0, 5.0, 10.0] {
        if mag * mult >= raw {
            return mag * mult;
        }
    }
    mag * 10.0
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = tick_step(hi - lo);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

/// Deflection-vs-load plot: one polyline per branch (converged points
/// only), the trivial baseline, and dashed markers at detected critical
/// loads.
pub fn diagram_svg(
    branches: &[Branch],
    trivial: &[(f64, f64)],
    detected: &[f64],
    title: &str,
) -> String {
    let xs: Vec<f64> = branches
        .iter()
        .flat_map(|b| b.points.iter().map(|p| p.lambda))
        .chain(trivial.iter().map(|t| t.0))
        .collect();
    let ys: Vec<f64> = branches
        .iter()
        .flat_map(|b| b.points.iter().filter(|p| p.converged).map(|p| p.ordinate))
        .collect();
    let (x0, x1) = match (xs.iter().cloned().reduce(f64::min), xs.iter().cloned().reduce(f64::max))
    {
        (Some(a), Some(b)) if b > a => (a, b),
        _ => (0.0, 1.0),
    };
    let ymax = ys.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3) * 1.1;
    let f = Frame { x0, x1, y0: -ymax, y1: ymax };

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n",
        Frame::W,
        Frame::H
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        Frame::W / 2.0
    ));

    for t in ticks(f.x0, f.x1) {
        let px = f.px(t);
        s.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{}\" x2=\"{px:.1}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            Frame::MT,
            Frame::H - Frame::MB
        ));
        s.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{}\" text-anchor=\"middle\">{t}</text>\n",
            Frame::H - Frame::MB + 18.0
        ));
    }
    for t in ticks(f.y0, f.y1) {
        let py = f.py(t);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py:.1}\" x2=\"{}\" y2=\"{py:.1}\" stroke=\"#ddd\"/>\n",
            Frame::ML,
            Frame::W - Frame::MR
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{py:.1}\" text-anchor=\"end\" dy=\"4\">{t:.3}</text>\n",
            Frame::ML - 6.0
        ));
    }
    s.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        Frame::ML,
        Frame::MT,
        Frame::W - Frame::ML - Frame::MR,
        Frame::H - Frame::MT - Frame::MB
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">load</text>\n",
        (Frame::ML + Frame::W - Frame::MR) / 2.0,
        Frame::H - 12.0
    ));

    if !trivial.is_empty() {
        let py = f.py(0.0);
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" \
             stroke=\"#888\" stroke-width=\"1.5\"/>\n",
            f.px(trivial[0].0),
            f.px(trivial[trivial.len() - 1].0)
        ));
    }
    for lam in detected {
        let px = f.px(*lam);
        s.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{}\" x2=\"{px:.1}\" y2=\"{}\" \
             stroke=\"#999\" stroke-dasharray=\"5 4\"/>\n",
            Frame::MT,
            Frame::H - Frame::MB
        ));
    }

    for (id, branch) in branches.iter().enumerate() {
        let color = PALETTE[id % PALETTE.len()];
        let pts: Vec<String> = branch
            .points
            .iter()
            .filter(|p| p.converged)
            .map(|p| format!("{:.2},{:.2}", f.px(p.lambda), f.py(p.ordinate)))
            .collect();
        if pts.len() >= 2 {
            s.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                pts.join(" ")
            ));
        }
        let (m, n) = branch.seed.mode;
        let sign = if branch.seed.sign > 0 { '+' } else { '-' };
        let ly = Frame::MT + 18.0 * (id as f64 + 1.0);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly:.1}\" x2=\"{}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"3\"/>\n",
            Frame::W - Frame::MR + 10.0,
            Frame::W - Frame::MR + 34.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{ly:.1}\" dy=\"4\">mode {m},{n} ({sign})</text>\n",
            Frame::W - Frame::MR + 40.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{BranchPoint, BranchSeed};

    fn toy_branch(sign: i8) -> Branch {
        let points = (0..4)
            .map(|i| BranchPoint {
                lambda: 39.0 + i as f64,
                psi: 0.0,
                ordinate: sign as f64 * 0.1 * i as f64,
                converged: true,
                iterations: 2,
                state: None,
            })
            .collect();
        Branch { seed: BranchSeed::new(1, 1, sign), points }
    }

    #[test]
    fn csv_files_have_headers_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let diagram = BifurcationDiagram {
            branches: vec![toy_branch(1), toy_branch(-1)],
            trivial_branch: vec![(39.0, 0.0), (40.0, 0.0)],
            detected_bifurcations: vec![39.5],
        };
        let path = dir.path().join("diagram.csv");
        write_diagram_csv(&path, &diagram, 0.0).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_diagram_csv(&path, &diagram, 0.0).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());

        let text = String::from_utf8(first).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), DIAGRAM_HEADER);
        // 2 branches x 4 points + 2 trivial rows
        assert_eq!(lines.count(), 10);
        assert!(text.contains("-1,0,0,0,"));

        let trace = SpectrumTrace {
            lambda_grid: vec![30.0, 30.5],
            sigma_curves: vec![vec![1.0, 0.5], vec![2.0, 1.5]],
            crossings: vec![],
        };
        let spath = dir.path().join("spectrum.csv");
        write_spectrum_csv(&spath, &trace).unwrap();
        let text = std::fs::read_to_string(&spath).unwrap();
        assert!(text.starts_with("lambda,sigma_1,sigma_2\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn float_format_is_fixed_width_exponent() {
        assert_eq!(fmt(39.5), "3.950000000000e1");
        assert_eq!(fmt(0.0), "0.000000000000e0");
        assert_eq!(fmt(-1.25e-4), "-1.250000000000e-4");
    }

    #[test]
    fn svg_plots_each_branch_once() {
        let branches = vec![toy_branch(1), toy_branch(-1)];
        let svg = diagram_svg(&branches, &[(39.0, 0.0), (42.0, 0.0)], &[39.5], "test");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(!svg.contains("NaN"));
    }
}
