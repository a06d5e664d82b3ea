//! Spectral radius maps for the two-state MDP over every (sampling
//! distribution, one-dimensional feature) pair.
//!
//! A point of the disk at radius `d` and angle `a` stands for
//! `D = diag(d, 1 − d)` and `Φ = [cos a, sin a]ᵀ`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_fa::{adaptive_eta, classify, Algorithm, Classification, IterationSpec, LinearFaProblem};
use crate::mdp::Mdp;
use crate::smallmat::Matrix;

/// `d(s₀)` is sampled in `[δ, 1 − δ]`; at 0 or 1 `D` is singular.
pub const RADIUS_MARGIN: f64 = 1e-3;
pub const MIN_RESOLUTION: (usize, usize) = (32, 64);

pub fn build_two_state_mdp(gamma: f64) -> Result<Mdp> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must be in (0,1), got {gamma}")));
    }
    Mdp::new(2, 1, vec![0.0, 1.0, 0.5, 0.5], vec![0.0, 0.0], gamma, vec![0.5, 0.5])
}

/// Step-size choice for every cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum EtaRule {
    /// Per algorithm and cell, from [`adaptive_eta`].
    Adaptive,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskParams {
    pub gamma: f64,
    pub kappa: f64,
    pub period: u64,
    pub eta: EtaRule,
    pub n_radius: usize,
    pub n_angle: usize,
}

impl DiskParams {
    pub fn new(gamma: f64, kappa: f64, period: u64, resolution: (usize, usize)) -> DiskParams {
        DiskParams { gamma, kappa, period, eta: EtaRule::Adaptive, n_radius: resolution.0, n_angle: resolution.1 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma must be in (0,1), got {}", self.gamma)));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa must be nonnegative, got {}", self.kappa)));
        }
        if self.period == 0 {
            return Err(Error::invalid("period must be at least 1"));
        }
        if self.n_radius < MIN_RESOLUTION.0 || self.n_angle < MIN_RESOLUTION.1 {
            return Err(Error::invalid(format!(
                "resolution must be at least {}x{}, got {}x{}",
                MIN_RESOLUTION.0, MIN_RESOLUTION.1, self.n_radius, self.n_angle
            )));
        }
        if let EtaRule::Fixed(eta) = self.eta {
            if !(eta > 0.0) {
                return Err(Error::invalid(format!("eta must be positive, got {eta}")));
            }
        }
        Ok(())
    }

    pub fn radius_at(&self, i: usize) -> f64 {
        RADIUS_MARGIN + i as f64 * (1.0 - 2.0 * RADIUS_MARGIN) / (self.n_radius - 1) as f64
    }

    pub fn angle_at(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_angle as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerAlgorithm<T> {
    pub td: T,
    pub tn: T,
    pub fr: T,
}

impl<T: Copy> PerAlgorithm<T> {
    pub fn get(&self, algorithm: Algorithm) -> T {
        match algorithm {
            Algorithm::Td0 => self.td,
            Algorithm::Tn => self.tn,
            Algorithm::Fr => self.fr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskCell {
    pub radius_coord: f64,
    pub angle: f64,
    pub rho: PerAlgorithm<f64>,
    pub class: PerAlgorithm<Classification>,
    /// Some matrix was singular; the affected entries are NaN and marginal.
    pub singular: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskGrid {
    pub params: DiskParams,
    /// Radius-major: cell `(i, j)` sits at `i * n_angle + j`.
    pub cells: Vec<DiskCell>,
}

impl DiskGrid {
    pub fn cell(&self, i: usize, j: usize) -> &DiskCell {
        &self.cells[i * self.params.n_angle + j]
    }
}

fn two_state_problem(gamma: f64, d0: f64, angle: f64) -> Result<LinearFaProblem> {
    LinearFaProblem::from_matrices(
        Matrix::column(&[angle.cos(), angle.sin()])?,
        vec![d0, 1.0 - d0],
        Matrix::from_rows(&[[0.0, 1.0], [0.5, 0.5]])?,
        vec![0.0, 0.0],
        gamma,
    )
}

fn rho_for(p: &LinearFaProblem, params: &DiskParams, algorithm: Algorithm) -> Result<(f64, Classification)> {
    let kappa = if algorithm == Algorithm::Fr { params.kappa } else { 0.0 };
    let eta = match params.eta {
        EtaRule::Adaptive => adaptive_eta(p, algorithm, kappa)?,
        EtaRule::Fixed(eta) => eta,
    };
    let r = classify(p, &IterationSpec::new(algorithm, eta, params.period, kappa)?)?;
    Ok((r.radius(), r.classification))
}

/// Radii and verdicts for a single disk point.
pub fn disk_cell(params: &DiskParams, d0: f64, angle: f64) -> Result<DiskCell> {
    let p = two_state_problem(params.gamma, d0, angle)?;
    let mut singular = false;
    let mut one = |algorithm| match rho_for(&p, params, algorithm) {
        Ok(v) => Ok(v),
        Err(Error::Singular { .. }) => {
            singular = true;
            Ok((f64::NAN, Classification::Marginal))
        }
        Err(e) => Err(e),
    };
    let td = one(Algorithm::Td0)?;
    let tn = one(Algorithm::Tn)?;
    let fr = one(Algorithm::Fr)?;
    Ok(DiskCell {
        radius_coord: d0,
        angle,
        rho: PerAlgorithm { td: td.0, tn: tn.0, fr: fr.0 },
        class: PerAlgorithm { td: td.1, tn: tn.1, fr: fr.1 },
        singular,
    })
}

/// Evaluates every cell; cells run in parallel, output order is radius-major.
pub fn sweep(params: &DiskParams) -> Result<DiskGrid> {
    params.validate()?;
    let cells = (0..params.n_radius * params.n_angle)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / params.n_angle, k % params.n_angle);
            disk_cell(params, params.radius_at(i), params.angle_at(j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiskGrid { params: params.clone(), cells })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub tn_only_diverge: usize,
    pub fr_only_diverge: usize,
    pub both: usize,
    pub neither: usize,
    pub excluded: usize,
}

/// Which of TN and FR diverge at a cell, or `None` when either is marginal.
pub fn domain_category(cell: &DiskCell) -> Option<(bool, bool)> {
    match (cell.class.tn, cell.class.fr) {
        (Classification::Marginal, _) | (_, Classification::Marginal) => None,
        (tn, fr) => Some((tn == Classification::Diverges, fr == Classification::Diverges)),
    }
}

pub fn compare_domains(grid: &DiskGrid) -> DomainCounts {
    let mut c = DomainCounts::default();
    for cell in &grid.cells {
        match domain_category(cell) {
            None => c.excluded += 1,
            Some((true, false)) => c.tn_only_diverge += 1,
            Some((false, true)) => c.fr_only_diverge += 1,
            Some((true, true)) => c.both += 1,
            Some((false, false)) => c.neither += 1,
        }
    }
    c
}

#[derive(Serialize)]
struct CsvRow<'a> {
    radius: f64,
    angle: f64,
    rho_td: f64,
    rho_tn: f64,
    rho_fr: f64,
    class_td: &'a str,
    class_tn: &'a str,
    class_fr: &'a str,
}

pub fn write_csv(grid: &DiskGrid, w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for c in &grid.cells {
        out.serialize(CsvRow {
            radius: c.radius_coord,
            angle: c.angle,
            rho_td: c.rho.td,
            rho_tn: c.rho.tn,
            rho_fr: c.rho.fr,
            class_td: c.class.td.label(),
            class_tn: c.class.tn.label(),
            class_fr: c.class.fr.label(),
        })?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Writes the CSV and, when `svg_dir` is given, `disk_{td,tn,fr}.svg` into it.
pub fn render(grid: &DiskGrid, out_csv: &Path, svg_dir: Option<&Path>) -> Result<()> {
    let file = std::fs::File::create(out_csv).map_err(|e| Error::io(out_csv, e))?;
    write_csv(grid, std::io::BufWriter::new(file))?;
    if let Some(dir) = svg_dir {
        for algorithm in [Algorithm::Td0, Algorithm::Tn, Algorithm::Fr] {
            let path = dir.join(format!("disk_{}.svg", algorithm.label()));
            std::fs::write(&path, svg(grid, algorithm)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

const SVG_SIZE: f64 = 560.0;
const DISK_PX: f64 = 240.0;
const LOG_RANGE: f64 = 1.0;
const COLOR_LEVELS: i32 = 10;

/// Quantized symmetric-log color level in `[-COLOR_LEVELS, COLOR_LEVELS]`,
/// or `None` for an undefined radius.
fn color_level(rho: f64) -> Option<i32> {
    if rho.is_nan() {
        return None;
    }
    let x = (rho.max(1e-300).log10() / LOG_RANGE).clamp(-1.0, 1.0);
    let level = (x * COLOR_LEVELS as f64).round() as i32;
    // Keep the sign of log ρ so cells on either side of ρ = 1 never share a color.
    Some(if level == 0 && rho != 1.0 { if rho > 1.0 { 1 } else { -1 } } else { level })
}

fn level_color(level: Option<i32>) -> String {
    match level {
        None => "#9e9e9e".to_string(),
        Some(l) => {
            let t = l.unsigned_abs() as f64 / COLOR_LEVELS as f64;
            let fade = (255.0 * (1.0 - 0.85 * t)).round() as u8;
            if l > 0 {
                format!("#ff{fade:02x}{fade:02x}")
            } else {
                format!("#{fade:02x}{fade:02x}ff")
            }
        }
    }
}

fn xy(d: f64, angle: f64) -> (f64, f64) {
    (SVG_SIZE / 2.0 + DISK_PX * d * angle.cos(), SVG_SIZE / 2.0 - DISK_PX * d * angle.sin())
}

/// Annular sector between radii `r0 < r1` and angles `a0 < a1`.
fn sector(path: &mut String, r0: f64, r1: f64, a0: f64, a1: f64) {
    let large = if a1 - a0 > PI { 1 } else { 0 };
    let (x0, y0) = xy(r1, a0);
    let (x1, y1) = xy(r1, a1);
    let (x2, y2) = xy(r0, a1);
    let (x3, y3) = xy(r0, a0);
    let (o, i) = (r1 * DISK_PX, r0 * DISK_PX);
    let _ = write!(
        path,
        "M{x0:.2} {y0:.2}A{o:.2} {o:.2} 0 {large} 0 {x1:.2} {y1:.2}L{x2:.2} {y2:.2}A{i:.2} {i:.2} 0 {large} 1 {x3:.2} {y3:.2}Z"
    );
}

/// Segments of the level set `ρ = 1` by marching squares over (radius, angle),
/// with the angle axis wrapping around.
fn contour_segments(grid: &DiskGrid, algorithm: Algorithm) -> Vec<((f64, f64), (f64, f64))> {
    let p = &grid.params;
    let f = |i: usize, j: usize| {
        let r = grid.cell(i, j % p.n_angle).rho.get(algorithm);
        if r.is_infinite() { 1e3 } else { r - 1.0 }
    };
    let at = |i: f64, j: f64| {
        let d = RADIUS_MARGIN + i * (1.0 - 2.0 * RADIUS_MARGIN) / (p.n_radius - 1) as f64;
        (d, 2.0 * PI * j / p.n_angle as f64)
    };
    let mut segs = Vec::new();
    for i in 0..p.n_radius - 1 {
        for j in 0..p.n_angle {
            // Corners counter-clockwise: (i,j), (i+1,j), (i+1,j+1), (i,j+1).
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let v: Vec<f64> = corners.iter().map(|&(a, b)| f(a, b)).collect();
            if v.iter().any(|x| x.is_nan()) {
                continue;
            }
            let mut pts = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (v[e], v[(e + 1) % 4]);
                if (a > 0.0) != (b > 0.0) {
                    let t = a / (a - b);
                    let (ci, cj) = corners[e];
                    let (ni, nj) = corners[(e + 1) % 4];
                    let fi = ci as f64 + t * (ni as f64 - ci as f64);
                    let fj = cj as f64 + t * (nj as f64 - cj as f64);
                    pts.push(at(fi, fj));
                }
            }
            match pts.len() {
                2 => segs.push((pts[0], pts[1])),
                4 => {
                    segs.push((pts[0], pts[1]));
                    segs.push((pts[2], pts[3]));
                }
                _ => {}
            }
        }
    }
    segs
}

/// Polar heatmap of `ρ` for one algorithm, with the `ρ = 1` contour and the
/// circle `d(s₀) = 1/3` where the sampling distribution is stationary.
pub fn svg(grid: &DiskGrid, algorithm: Algorithm) -> String {
    let p = &grid.params;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="10" y="20" font-family="sans-serif" font-size="14">{} spectral radius, gamma={}, kappa={}, T={}</text>"#,
        algorithm.label().to_uppercase(),
        p.gamma,
        p.kappa,
        p.period
    );

    let dr = (1.0 - 2.0 * RADIUS_MARGIN) / (p.n_radius - 1) as f64;
    let da = 2.0 * PI / p.n_angle as f64;
    // One path per color; consecutive cells of a ring with equal color merge.
    let mut by_color: std::collections::BTreeMap<Option<i32>, String> = Default::default();
    for i in 0..p.n_radius {
        let r = p.radius_at(i);
        let (r0, r1) = ((r - dr / 2.0).max(0.0), (r + dr / 2.0).min(1.0));
        let mut j = 0;
        while j < p.n_angle {
            let level = color_level(grid.cell(i, j).rho.get(algorithm));
            let mut k = j + 1;
            while k < p.n_angle && color_level(grid.cell(i, k).rho.get(algorithm)) == level {
                k += 1;
            }
            let a0 = p.angle_at(j) - da / 2.0;
            let a1 = p.angle_at(k - 1) + da / 2.0;
            let path = by_color.entry(level).or_default();
            if a1 - a0 >= 2.0 * PI - 1e-12 {
                sector(path, r0, r1, a0, a0 + PI);
                sector(path, r0, r1, a0 + PI, a1);
            } else {
                sector(path, r0, r1, a0, a1);
            }
            j = k;
        }
    }
    let _ = writeln!(s, r#"<g class="heatmap" stroke="none">"#);
    for (level, d) in &by_color {
        let _ = writeln!(s, r#"<path fill="{}" d="{d}"/>"#, level_color(*level));
    }
    let _ = writeln!(s, "</g>");

    let mut d = String::new();
    for ((r0, a0), (r1, a1)) in contour_segments(grid, algorithm) {
        let (x0, y0) = xy(r0, a0);
        let (x1, y1) = xy(r1, a1);
        let _ = write!(d, "M{x0:.2} {y0:.2}L{x1:.2} {y1:.2}");
    }
    let _ = writeln!(s, r#"<path class="contour" fill="none" stroke="black" stroke-width="1.2" d="{d}"/>"#);

    let c = SVG_SIZE / 2.0;
    let _ = writeln!(
        s,
        r#"<circle class="stationary" cx="{c}" cy="{c}" r="{:.2}" fill="none" stroke="black" stroke-width="2"/>"#,
        DISK_PX / 3.0
    );
    let _ = writeln!(s, r#"<circle cx="{c}" cy="{c}" r="{DISK_PX}" fill="none" stroke="gray" stroke-width="1"/>"#);

    // Legend: symmetric log scale around ρ = 1.
    let _ = writeln!(s, r#"<g class="legend" font-family="sans-serif" font-size="11">"#);
    for l in -COLOR_LEVELS..=COLOR_LEVELS {
        let x = 80.0 + (l + COLOR_LEVELS) as f64 * 19.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="19" height="12" fill="{}"/>"#, SVG_SIZE - 40.0, level_color(Some(l)));
    }
    let _ = writeln!(
        s,
        r#"<text x="80" y="{}">log10(rho), symmetric about rho = 1: blue &lt; 1 &lt; red, grey singular</text>"#,
        SVG_SIZE - 12.0
    );
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{policy_transition, stationary_distribution, Policy};

    fn small(kappa: f64, period: u64) -> DiskGrid {
        sweep(&DiskParams::new(0.99, kappa, period, (32, 64))).unwrap()
    }

    #[test]
    fn two_state_mdp() {
        let m = build_two_state_mdp(0.99).unwrap();
        let p = policy_transition(&m, &Policy::uniform(2, 1)).unwrap();
        let d = stationary_distribution(&p).unwrap();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
        for i in 0..2 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(m.reward_vector(), &[0.0, 0.0]);
        assert!(build_two_state_mdp(1.5).is_err());
    }

    #[test]
    fn td_converges_on_the_stationary_circle() {
        let params = DiskParams::new(0.99, 0.1, 10_000, (128, 256));
        for j in 0..256 {
            let c = disk_cell(&params, 1.0 / 3.0, params.angle_at(j)).unwrap();
            assert_eq!(c.class.td, Classification::Converges, "angle {}", c.angle);
        }
    }

    #[test]
    fn corollary_cell() {
        let params = DiskParams::new(0.99, 0.1, 10_000, (128, 256));
        let angle = (-2.0f64).atan2(1.0);
        let c = disk_cell(&params, 0.9, angle).unwrap();
        assert_eq!(c.class.tn, Classification::Diverges);
        assert_eq!(c.class.fr, Classification::Converges);
    }

    #[test]
    fn domains_at_defaults() {
        let g = small(0.1, 10_000);
        let c = compare_domains(&g);
        assert_eq!(c.fr_only_diverge, 0);
        assert!(c.tn_only_diverge > 0);
        assert_eq!(c.tn_only_diverge + c.fr_only_diverge + c.both + c.neither + c.excluded, 32 * 64);
    }

    #[test]
    fn fr_without_regularization_single_step_matches_td() {
        let g = small(0.0, 1);
        assert!(g.cells.iter().all(|c| c.class.fr == c.class.td));
    }

    #[test]
    fn categories_are_symmetric_under_sign_flip() {
        let g = small(0.1, 10_000);
        for i in 0..32 {
            for j in 0..32 {
                let a = g.cell(i, j);
                let b = g.cell(i, j + 32);
                assert_eq!(domain_category(a), domain_category(b));
                for alg in [Algorithm::Td0, Algorithm::Tn, Algorithm::Fr] {
                    let (x, y) = (a.rho.get(alg), b.rho.get(alg));
                    assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0) || x == y, "{i} {j} {alg:?}");
                }
            }
        }
    }

    #[test]
    fn fr_tends_to_td_as_kappa_vanishes() {
        // Same step size for both: the single-step FR matrix is I − ηA₀.
        let mut params = DiskParams::new(0.99, 1e-8, 1, (32, 64));
        params.eta = EtaRule::Fixed(0.5);
        let g = sweep(&params).unwrap();
        assert!(g.cells.iter().all(|c| (c.rho.fr - c.rho.td).abs() < 1e-6));

        // Per-algorithm step sizes: the gap vanishes cell by cell as κ → 0,
        // slowest next to the TD contour where A₀ ≈ 0.
        let gaps = |kappa: f64| -> Vec<f64> {
            let g = sweep(&DiskParams::new(0.99, kappa, 1, (32, 64))).unwrap();
            g.cells.iter().map(|c| (c.rho.fr - c.rho.td).abs()).collect()
        };
        let (a, b, c) = (gaps(1e-6), gaps(1e-9), gaps(1e-12));
        for k in 0..a.len() {
            assert!(b[k] <= a[k] + 1e-12 && c[k] <= b[k] + 1e-12, "cell {k}: {} {} {}", a[k], b[k], c[k]);
        }
        assert!(c.iter().all(|&x| x < 1e-6));
    }

    #[test]
    fn rendering() {
        let g = small(0.1, 10_000);
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("disk.csv");
        render(&g, &csv_path, Some(dir.path())).unwrap();
        let first = std::fs::read(&csv_path).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        assert!(text.starts_with("radius,angle,rho_td,rho_tn,rho_fr,class_td,class_tn,class_fr\n"));
        assert_eq!(text.lines().count(), 1 + 32 * 64);
        for alg in ["td", "tn", "fr"] {
            let svg = std::fs::read_to_string(dir.path().join(format!("disk_{alg}.svg"))).unwrap();
            assert_eq!(svg.matches(r#"class="contour""#).count(), 1);
            assert_eq!(svg.matches(r#"class="stationary""#).count(), 1);
        }
        render(&g, &csv_path, Some(dir.path())).unwrap();
        assert_eq!(std::fs::read(&csv_path).unwrap(), first);
        assert_eq!(svg(&g, Algorithm::Tn), svg(&g, Algorithm::Tn));
    }

    #[test]
    fn resolution_is_validated() {
        assert!(sweep(&DiskParams::new(0.99, 0.1, 10, (16, 64))).is_err());
        assert!(sweep(&DiskParams::new(1.0, 0.1, 10, (32, 64))).is_err());
    }
}
