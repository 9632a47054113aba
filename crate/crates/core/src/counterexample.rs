//! The 1D jump-dominated example on `(-1/2, 1/2)` with `f = I_h cos(mπx)`.
//!
//! With `h = 1/(m+1)²` the P1 solution is a multiple of `f`, both residuals
//! have closed forms, and unweighted equilibrated-flux estimators lose
//! robustness like `sqrt(κh/ε)`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::constants::constant_set;
use crate::equilibration::reconstruct;
use crate::error::{Error, Result};
use crate::estimators::{estimate, normal_jumps_sq};
use crate::fem::{assemble, error_energy, solve, ErrorMode, ExactSolution, ProblemSpec, Source};
use crate::mesh::{uniform_interval_mesh, Mesh};
use crate::poly::{l2_project_local, lagrange_element, Conformity, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CounterexampleConfig {
    pub m: usize,
    pub epsilon: f64,
    pub kappa: f64,
}

impl CounterexampleConfig {
    pub fn new(m: usize, epsilon: f64, kappa: f64) -> Result<Self> {
        if m % 2 == 0 {
            return Err(Error::invalid(format!("m must be odd, got {m}")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be non-negative, got {kappa}")));
        }
        Ok(CounterexampleConfig { m, epsilon, kappa })
    }

    /// `N = (m+1)²/2`
    pub fn n_half(&self) -> usize {
        (self.m + 1) * (self.m + 1) / 2
    }

    pub fn n_elements(&self) -> usize {
        2 * self.n_half()
    }

    /// `h = 1/(m+1)²`
    pub fn h(&self) -> f64 {
        1.0 / self.n_elements() as f64
    }

    pub fn mesh(&self) -> Result<Mesh> {
        uniform_interval_mesh(self.n_elements(), (-0.5, 0.5))
    }

    /// `f(x_i) = cos(mπ i h)` for `i = -N..=N`; exactly zero at the end points.
    pub fn f_node(&self, i: i64) -> f64 {
        let n = self.n_half() as i64;
        if i.abs() >= n {
            return 0.0;
        }
        let period = 2 * self.n_elements() as i64;
        let k = (self.m as i64 * i).rem_euclid(period);
        (PI * k as f64 / self.n_elements() as f64).cos()
    }

    /// `μ_h = 6/(2+cos(mπh)) · (1−cos(mπh))/h²`
    pub fn mu_h(&self) -> f64 {
        let h = self.h();
        let c = (self.m as f64 * PI * h).cos();
        6.0 / (2.0 + c) * (1.0 - c) / (h * h)
    }

    /// `(1−cos(mπh))/h`, which tends to `π²/2`.
    pub fn jump_factor(&self) -> f64 {
        let h = self.h();
        (1.0 - (self.m as f64 * PI * h).cos()) / h
    }

    /// `u_h = c f` with `c = 1/(ε²μ_h + κ²)`.
    pub fn solution_factor(&self) -> f64 {
        1.0 / (self.epsilon.powi(2) * self.mu_h() + self.kappa.powi(2))
    }

    /// `r_h = c_r f` with `c_r = ε²μ_h/(ε²μ_h+κ²)`.
    pub fn residual_factor(&self) -> f64 {
        self.epsilon.powi(2) * self.mu_h() * self.solution_factor()
    }

    /// `j_h(x_i) = ε²/(ε²μ_h+κ²) · 2(1−cos(mπh))/h · f(x_i)`
    pub fn jump_closed_form(&self, i: i64) -> f64 {
        self.epsilon.powi(2) * self.solution_factor() * 2.0 * self.jump_factor() * self.f_node(i)
    }

    /// `Σ_{i=-N+1}^{N-1} f(x_i)²`, equal to `N`.
    pub fn trig_sum(&self) -> f64 {
        let n = self.n_half() as i64;
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for i in -n + 1..n {
            let v = self.f_node(i).powi(2);
            let t = sum + v;
            comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
            sum = t;
        }
        sum + comp
    }

    fn node_index(&self, x: f64) -> i64 {
        ((x + 0.5) / self.h()).round() as i64 - self.n_half() as i64
    }

    /// Piecewise affine field through the nodal values `g(i)`.
    fn nodal_field(&self, mesh: &Mesh, g: impl Fn(i64) -> f64) -> Result<ScalarField> {
        let mut out = l2_project_local(
            |e, xh| {
                let v = mesh.element_vertices(e);
                let a = g(self.node_index(mesh.coords[v[0]][0]));
                let b = g(self.node_index(mesh.coords[v[1]][0]));
                (1.0 - xh[0]) * a + xh[0] * b
            },
            mesh,
            1,
            2,
        )?;
        out.conformity = Conformity::H10;
        Ok(out)
    }

    /// `f = I_h cos(mπx)`
    pub fn build_f(&self, mesh: &Mesh) -> Result<ScalarField> {
        self.nodal_field(mesh, |i| self.f_node(i))
    }

    pub fn discrete_solution(&self, mesh: &Mesh) -> Result<ScalarField> {
        let c = self.solution_factor();
        self.nodal_field(mesh, |i| c * self.f_node(i))
    }

    pub fn spec(&self, mesh: &Mesh) -> Result<ProblemSpec> {
        ProblemSpec::new(self.epsilon, self.kappa, Source::Field(self.build_f(mesh)?))
    }

    /// Closed-form solution of `−ε²u'' + κ²u = f` with the piecewise affine `f`.
    /// Requires `κ > 0`.
    pub fn exact_solution(&self) -> Result<ExactSolution> {
        if self.kappa <= 0.0 {
            return Err(Error::invalid("exact counterexample solution needs kappa > 0"));
        }
        let n = self.n_elements();
        let h = self.h();
        let k2 = self.kappa * self.kappa;
        let lam = self.kappa / self.epsilon;
        let den = -(-2.0 * lam * h).exp_m1();
        let coth = (2.0 - den) / den;
        let csch = 2.0 * (-lam * h).exp() / den;
        let f: Vec<f64> = (0..=n).map(|v| self.f_node(v as i64 - self.n_half() as i64)).collect();
        let slope: Vec<f64> = (0..n).map(|k| (f[k + 1] - f[k]) / h).collect();
        // g_v = u(x_v) − f(x_v)/κ² at interior nodes: tridiagonal, diagonally dominant.
        let ni = n - 1;
        let diag = 2.0 * lam * coth;
        let off = -lam * csch;
        let rhs: Vec<f64> = (1..n).map(|v| (slope[v] - slope[v - 1]) / k2).collect();
        let mut g = vec![0.0; n + 1];
        if ni > 0 {
            let mut c = vec![0.0; ni];
            let mut d = vec![0.0; ni];
            c[0] = off / diag;
            d[0] = rhs[0] / diag;
            for k in 1..ni {
                let piv = diag - off * c[k - 1];
                c[k] = off / piv;
                d[k] = (rhs[k] - off * d[k - 1]) / piv;
            }
            g[ni] = d[ni - 1];
            for k in (0..ni - 1).rev() {
                g[k + 1] = d[k] - c[k] * g[k + 2];
            }
        }
        let g = Arc::new(g);
        let f = Arc::new(f);
        // sinh(λt)/sinh(λh) and its t-derivative, stable for large λh.
        let s = move |t: f64| (lam * (t - h)).exp() * (-(-2.0 * lam * t).exp_m1()) / den;
        let ds = move |t: f64| lam * (lam * (t - h)).exp() * (1.0 + (-2.0 * lam * t).exp()) / den;
        let locate = move |x: f64| -> (usize, f64) {
            let k = (((x + 0.5) / h).floor().max(0.0) as usize).min(n - 1);
            (k, (x + 0.5 - k as f64 * h).clamp(0.0, h))
        };
        let (g1, f1) = (g.clone(), f.clone());
        let u = move |x: &[f64; 2]| {
            let (k, t) = locate(x[0]);
            let fx = f1[k] + (f1[k + 1] - f1[k]) * t / h;
            fx / k2 + g1[k] * s(h - t) + g1[k + 1] * s(t)
        };
        let du = move |x: &[f64; 2]| {
            let (k, t) = locate(x[0]);
            [(f[k + 1] - f[k]) / h / k2 - g[k] * ds(h - t) + g[k + 1] * ds(t), 0.0]
        };
        Ok(ExactSolution {
            u: Arc::new(u),
            grad: Arc::new(du),
        })
    }
}

/// Values of `g` at the global P1 degrees of freedom.
fn dof_vector(mesh: &Mesh, dofmap: &crate::fem::DofMap, g: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let el = lagrange_element(1, dofmap.degree)?;
    let mut out = vec![0.0; dofmap.n_dofs];
    for (e, dofs) in dofmap.element_dofs.iter().enumerate() {
        for (k, &d) in dofs.iter().enumerate() {
            let x = mesh.maps[e].map(&el.nodes[k])[0];
            out[d] = g(x);
        }
    }
    Ok(out)
}

/// Consistency of the closed forms with the generic pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct ClosedFormCheck {
    /// `‖K f − μ_h M f‖ / ‖K f‖` on the free nodes.
    pub mu_identity: f64,
    /// Largest nodal difference between the FEM solve and `(ε²μ_h+κ²)⁻¹ f`, relative.
    pub solution: f64,
    /// Largest coefficient difference between `r_h` and `c_r f`, relative to
    /// the largest coefficient of `Π_p f` (the summands of `r_h`).
    pub residual: f64,
    /// Largest difference between computed and closed-form `j_h`, relative.
    pub jump: f64,
    /// `|Σ f(x_i)² − N|`
    pub trig_sum: f64,
}

/// Signed jump residual `−ε²(u_h'(x_i⁺) − u_h'(x_i⁻))` at interior nodes, ordered by `i`.
pub fn jump_residuals(cfg: &CounterexampleConfig, mesh: &Mesh, u_h: &ScalarField) -> Vec<f64> {
    let n = cfg.n_elements();
    (1..n)
        .map(|v| {
            let left = u_h.grad(mesh, v - 1, &[1.0, 0.0])[0];
            let right = u_h.grad(mesh, v, &[0.0, 0.0])[0];
            -cfg.epsilon.powi(2) * (right - left)
        })
        .collect()
}

pub fn check_closed_forms(cfg: &CounterexampleConfig) -> Result<ClosedFormCheck> {
    let mesh = cfg.mesh()?;
    let spec = cfg.spec(&mesh)?;
    let fx = |x: f64| cfg.f_node(cfg.node_index(x));
    // Stiffness alone, with the source f: rhs = M f.
    let stiff = assemble(&mesh, 1, &ProblemSpec::new(1.0, 0.0, spec.source.clone())?)?;
    let dm = &stiff.dofmap;
    let all = dof_vector(&mesh, dm, fx)?;
    let mut free = vec![0.0; dm.n_free];
    for (d, fi) in dm.free_index.iter().enumerate() {
        if let Some(fi) = fi {
            free[*fi] = all[d];
        }
    }
    let kf = stiff.matrix.matvec(&free);
    let mu = cfg.mu_h();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = kf.iter().zip(&stiff.rhs).map(|(a, b)| a - mu * b).collect();
    let mu_identity = norm(&diff) / norm(&kf).max(f64::MIN_POSITIVE);

    let sol = solve(&assemble(&mesh, 1, &spec)?)?;
    let c = cfg.solution_factor();
    let expect = dof_vector(&mesh, &sol.dofmap, |x| c * fx(x))?;
    let scale = expect.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let solution = sol.nodal.iter().zip(&expect).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;

    let u_h = cfg.discrete_solution(&mesh)?;
    let r = crate::estimators::element_residual(&mesh, &u_h, &spec)?;
    let f = cfg.build_f(&mesh)?;
    let cr = cfg.residual_factor();
    let rscale = f.coeffs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let residual = r
        .coeffs
        .iter()
        .zip(&f.coeffs)
        .fold(0.0f64, |m, (a, b)| m.max((a - cr * b).abs()))
        / rscale.max(f64::MIN_POSITIVE);

    let signed = jump_residuals(cfg, &mesh, &u_h);
    let sq = normal_jumps_sq(&mesh, &u_h);
    let e4 = cfg.epsilon.powi(4);
    let nh = cfg.n_half() as i64;
    let jscale = cfg.epsilon.powi(2) * c * 2.0 * cfg.jump_factor();
    let mut jump = 0.0f64;
    for (k, j) in signed.iter().enumerate() {
        let i = k as i64 + 1 - nh;
        let closed = cfg.jump_closed_form(i);
        jump = jump.max((j - closed).abs() / jscale);
    }
    for fid in mesh.interior_faces() {
        let i = cfg.node_index(mesh.coords[mesh.faces[fid].vertices[0]][0]);
        let closed = cfg.jump_closed_form(i);
        jump = jump.max(((e4 * sq[fid]).sqrt() - closed.abs()).abs() / jscale);
    }
    Ok(ClosedFormCheck {
        mu_identity,
        solution,
        residual,
        jump,
        trig_sum: (cfg.trig_sum() - cfg.n_half() as f64).abs(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub m: usize,
    pub h: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub kappa_h_over_eps: f64,
    pub mu_h_times_h: f64,
    /// `Σ_F ε⁻¹α_F‖j_h‖²_F`
    pub jump_sum: f64,
    /// `Σ_K α_K²‖r_h‖²_K`
    pub residual_sum: f64,
    /// `‖ε∇u_h + ε⁻¹σ_h‖ / (jump_sum)^{1/2}`
    pub unweighted_ratio: f64,
    /// `(Σ w_K²‖ε∇u_h + ε⁻¹σ_h‖²_K)^{1/2} / (jump_sum)^{1/2}`
    pub weighted_ratio: f64,
    /// `η / (jump_sum)^{1/2}`
    pub eta_ratio: f64,
    /// `|||u − u_h||| / (jump_sum)^{1/2}` when the exact error is requested.
    pub error_ratio: Option<f64>,
}

pub fn sweep_point(cfg: &CounterexampleConfig, exact_error: bool) -> Result<SweepPoint> {
    let mesh = cfg.mesh()?;
    let mut spec = cfg.spec(&mesh)?;
    let u_h = cfg.discrete_solution(&mesh)?;
    let c_star = constant_set(1, 1, mesh.shape_regularity())?.c_star;
    let rec = reconstruct(&mesh, &u_h, &spec, c_star)?;
    let error = if exact_error {
        spec.exact = Some(cfg.exact_solution()?);
        Some(error_energy(&mesh, &u_h, &spec, ErrorMode::Exact)?)
    } else {
        None
    };
    let rep = estimate(&mesh, &u_h, &rec, &spec, c_star, error)?;
    let jump = rep.residual.jump_sum.sqrt();
    let h = cfg.h();
    Ok(SweepPoint {
        m: cfg.m,
        h,
        epsilon: cfg.epsilon,
        kappa: cfg.kappa,
        kappa_h_over_eps: cfg.kappa * h / cfg.epsilon,
        mu_h_times_h: cfg.mu_h() * h,
        jump_sum: rep.residual.jump_sum,
        residual_sum: rep.residual.residual_sum,
        unweighted_ratio: rep.guaranteed.unweighted_flux_total() / jump,
        weighted_ratio: rep.guaranteed.weighted_flux_total() / jump,
        eta_ratio: rep.eta() / jump,
        error_ratio: rep.error.as_ref().map(|e| e.total / jump),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyReport {
    pub points: Vec<SweepPoint>,
    /// `(m, κ, κh/ε)` of requested points with `κh/ε < 1`.
    pub excluded: Vec<(usize, f64, f64)>,
    pub slope_unweighted: Option<f64>,
    pub slope_weighted: Option<f64>,
    pub slope_eta: Option<f64>,
    /// Decades of `κh/ε` covered by the included points.
    pub decades: f64,
    /// `max residual_sum / jump_sum`
    pub max_dominance: f64,
}

/// Least-squares slope of `log y` against `log x`; `None` with fewer than two distinct `x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    if lx.len() < 2 {
        return None;
    }
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Runs the sweep over `(m, κ)` pairs at fixed `ε`; points with `κh/ε < 1` are excluded.
pub fn nonrobustness_study(epsilon: f64, points: &[(usize, f64)], exact_error: bool) -> Result<StudyReport> {
    let cfgs: Vec<CounterexampleConfig> = points
        .iter()
        .map(|&(m, k)| CounterexampleConfig::new(m, epsilon, k))
        .collect::<Result<_>>()?;
    let (keep, drop): (Vec<_>, Vec<_>) = cfgs.into_iter().partition(|c| c.kappa * c.h() / c.epsilon >= 1.0);
    let excluded = drop.iter().map(|c| (c.m, c.kappa, c.kappa * c.h() / c.epsilon)).collect();
    let pts: Vec<SweepPoint> = keep
        .par_iter()
        .map(|c| sweep_point(c, exact_error))
        .collect::<Result<_>>()?;
    let x: Vec<f64> = pts.iter().map(|p| p.kappa_h_over_eps).collect();
    let col = |f: fn(&SweepPoint) -> f64| pts.iter().map(f).collect::<Vec<_>>();
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(StudyReport {
        slope_unweighted: loglog_slope(&x, &col(|p| p.unweighted_ratio)),
        slope_weighted: loglog_slope(&x, &col(|p| p.weighted_ratio)),
        slope_eta: loglog_slope(&x, &col(|p| p.eta_ratio)),
        decades: if pts.is_empty() { 0.0 } else { (hi / lo).log10() },
        max_dominance: pts.iter().map(|p| p.residual_sum / p.jump_sum).fold(0.0, f64::max),
        points: pts,
        excluded,
    })
}

/// `(m, κ)` pairs with `κh/ε = 10^t` for `t` from `from` to `to` in steps of
/// `1/per_decade`, for every `m`.
pub fn log_sweep(epsilon: f64, ms: &[usize], from: i32, to: i32, per_decade: usize) -> Vec<(usize, f64)> {
    let per = per_decade.max(1) as i32;
    let mut out = Vec::new();
    for &m in ms {
        let h = 1.0 / ((m + 1) * (m + 1)) as f64;
        for k in from * per..=to * per {
            let t = 10f64.powf(k as f64 / per as f64);
            out.push((m, t * epsilon / h));
        }
    }
    out
}

pub const CSV_COLUMNS: [&str; 9] = [
    "m",
    "h",
    "epsilon",
    "kappa",
    "kappa_h_over_eps",
    "jump_sum",
    "residual_sum",
    "unweighted_ratio",
    "weighted_ratio",
];

impl StudyReport {
    pub fn write_csv(&self, out: &mut impl Write, precision: usize) -> Result<()> {
        let fmt = |x: f64| format!("{x:.precision$e}");
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        for p in &self.points {
            let row = [
                p.m.to_string(),
                fmt(p.h),
                fmt(p.epsilon),
                fmt(p.kappa),
                fmt(p.kappa_h_over_eps),
                fmt(p.jump_sum),
                fmt(p.residual_sum),
                fmt(p.unweighted_ratio),
                fmt(p.weighted_ratio),
            ];
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let s = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let mut text = format!(
            "points: {}\nexcluded (kappa h / eps < 1): {}\ndecades: {:.2}\nslope unweighted: {}\nslope weighted: {}\nslope eta: {}\nmax residual/jump: {:.4e}\n",
            self.points.len(),
            self.excluded.len(),
            self.decades,
            s(self.slope_unweighted),
            s(self.slope_weighted),
            s(self.slope_eta),
            self.max_dominance
        );
        for (m, k, r) in &self.excluded {
            text.push_str(&format!("  excluded m={m} kappa={k:e} kappa_h_over_eps={r:e}\n"));
        }
        text
    }
}
