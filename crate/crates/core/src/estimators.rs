//! Guaranteed weighted estimator, residual estimator and efficiency diagnostics.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibration::{data_rule_degree, Reconstruction};
use crate::error::{Error, Result};
use crate::fem::{ErrorReport, ProblemSpec};
use crate::mesh::Mesh;
use crate::poly::basis::scalar_tabulation;
use crate::poly::field::face_rule;
use crate::poly::rtn::rtn_tabulation;
use crate::poly::{bilinear_degree, l2_project_local, Conformity, ScalarField};

/// `min{a, 1/κ}` with `1/κ = ∞` at `κ = 0`.
fn cutoff(a: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        a
    } else {
        a.min(1.0 / kappa)
    }
}

/// `α_S = min{h_S/ε, 1/κ}`.
pub fn alpha(h: f64, epsilon: f64, kappa: f64) -> f64 {
    cutoff(h / epsilon, kappa)
}

/// `w_K = min{1, C_* sqrt(ε/(κ h_K))}`.
pub fn flux_weight(h: f64, epsilon: f64, kappa: f64, c_star: f64) -> f64 {
    crate::equilibration::weight(epsilon, kappa, h, c_star)
}

/// `w̃_K = min{h_K/(πε), 1/κ}`.
pub fn oscillation_weight(h: f64, epsilon: f64, kappa: f64) -> f64 {
    cutoff(h / (std::f64::consts::PI * epsilon), kappa)
}

#[derive(Clone, Debug, Serialize)]
pub struct ElementWeights {
    pub c_star: f64,
    pub w: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Indexed by mesh face; boundary faces carry a value too but are never used.
    pub alpha_face: Vec<f64>,
}

pub fn element_weights(mesh: &Mesh, spec: &ProblemSpec, c_star: f64) -> ElementWeights {
    let (eps, k) = (spec.epsilon, spec.kappa);
    ElementWeights {
        c_star,
        w: mesh.h.iter().map(|&h| flux_weight(h, eps, k, c_star)).collect(),
        w_tilde: mesh.h.iter().map(|&h| oscillation_weight(h, eps, k)).collect(),
        alpha: mesh.h.iter().map(|&h| alpha(h, eps, k)).collect(),
        alpha_face: mesh.faces.iter().map(|f| alpha(f.diameter, eps, k)).collect(),
    }
}

/// Per-element terms of the guaranteed bound.
#[derive(Clone, Debug, Serialize)]
pub struct GuaranteedEstimate {
    /// `w_K ‖ε∇u_h + ε⁻¹σ_h‖_K`
    pub flux: Vec<f64>,
    /// `‖ε∇u_h + ε⁻¹σ_h‖_K`
    pub flux_unweighted: Vec<f64>,
    /// `‖κ(u_h − φ_h)‖_K`
    pub potential: Vec<f64>,
    /// `w̃_K ‖f − Π_p f‖_K`
    pub oscillation: Vec<f64>,
    /// `‖f − Π_p f‖_K`
    pub data_oscillation: Vec<f64>,
    /// Sum of the three terms above.
    pub local: Vec<f64>,
    pub eta: f64,
}

impl GuaranteedEstimate {
    /// `η` recomputed from the local brackets.
    pub fn eta_from_local(&self) -> f64 {
        self.local.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn weighted_flux_total(&self) -> f64 {
        self.flux.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn unweighted_flux_total(&self) -> f64 {
        self.flux_unweighted.iter().map(|t| t * t).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualEstimate {
    /// `α_K ‖r_h‖_K`
    pub element: Vec<f64>,
    /// `ε^{-1/2} α_F^{1/2} ‖j_h‖_F` per mesh face (zero on the boundary).
    pub face: Vec<f64>,
    /// `‖j_h‖²_F` per mesh face.
    pub jump_sq: Vec<f64>,
    /// `Σ_K α_K²‖r_h‖²_K`
    pub residual_sum: f64,
    /// `Σ_F ε⁻¹α_F‖j_h‖²_F`
    pub jump_sum: f64,
    pub eta_res: f64,
}

impl ResidualEstimate {
    /// Half of each adjacent face term, so that the column sums to `jump_sum`.
    pub fn face_share(&self, mesh: &Mesh, e: usize) -> f64 {
        mesh.element_faces[e][..=mesh.dim]
            .iter()
            .filter(|&&f| !mesh.faces[f].is_boundary())
            .map(|&f| 0.5 * self.face[f] * self.face[f])
            .sum()
    }
}

fn projected_source(mesh: &Mesh, spec: &ProblemSpec, p: usize) -> Result<ScalarField> {
    l2_project_local(|e, xh| spec.source.value(mesh, e, xh), mesh, p, data_rule_degree(spec, p))
}

/// `‖f − Π_p f‖_K` for every element.
pub fn data_oscillation(mesh: &Mesh, spec: &ProblemSpec, p: usize) -> Result<Vec<f64>> {
    if spec.source.polynomial_degree().is_some_and(|d| d <= p) {
        return Ok(vec![0.0; mesh.n_elements()]);
    }
    let proj = projected_source(mesh, spec, p)?;
    let deg = data_rule_degree(spec, p).max(spec.source_degree(spec.source.polynomial_degree().unwrap_or(p)));
    let tab = scalar_tabulation(mesh.dim, p, deg)?;
    Ok((0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let c = proj.element(e);
            let mut s = 0.0;
            for (q, (xh, w)) in tab.rule.iter().enumerate() {
                let pf: f64 = c.iter().zip(&tab.val[q]).map(|(a, b)| a * b).sum();
                let d = spec.source.value(mesh, e, xh) - pf;
                s += w * d * d;
            }
            (s * mesh.maps[e].abs_det()).sqrt()
        })
        .collect())
}

fn flux_norm_element(mesh: &Mesh, u_h: &ScalarField, rec: &Reconstruction, eps: f64, e: usize) -> Result<f64> {
    let p = rec.sigma.degree;
    let qd = bilinear_degree(p.max(u_h.degree));
    let st = scalar_tabulation(mesh.dim, u_h.degree, qd)?;
    let rt = rtn_tabulation(mesh.dim, p, qd)?;
    let map = &mesh.maps[e];
    let cu = u_h.element(e);
    let cs = rec.sigma.element(e);
    let mut s = 0.0;
    for q in 0..st.rule.len() {
        let mut g = [0.0; 2];
        for (c, gi) in cu.iter().zip(&st.grad[q]) {
            g[0] += c * gi[0];
            g[1] += c * gi[1];
        }
        let g = map.grad(&g);
        let mut v = [0.0; 2];
        for (c, vi) in cs.iter().zip(&rt.val[q]) {
            v[0] += c * vi[0];
            v[1] += c * vi[1];
        }
        let v = map.piola(&v);
        let a = [eps * g[0] + v[0] / eps, eps * g[1] + v[1] / eps];
        s += st.rule.weights[q] * (a[0] * a[0] + a[1] * a[1]);
    }
    Ok((s * map.abs_det()).sqrt())
}

/// `‖ε∇u_h + ε⁻¹σ_h‖_K` for every element.
pub fn flux_norms(mesh: &Mesh, u_h: &ScalarField, rec: &Reconstruction, spec: &ProblemSpec) -> Result<Vec<f64>> {
    (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| flux_norm_element(mesh, u_h, rec, spec.epsilon, e))
        .collect()
}

pub fn guaranteed_estimate(
    mesh: &Mesh,
    u_h: &ScalarField,
    rec: &Reconstruction,
    spec: &ProblemSpec,
    weights: &ElementWeights,
) -> Result<GuaranteedEstimate> {
    if rec.phi.degree != u_h.degree {
        return Err(Error::invalid("potential and discrete solution degrees differ"));
    }
    let flux_unweighted = flux_norms(mesh, u_h, rec, spec)?;
    let data_osc = data_oscillation(mesh, spec, u_h.degree)?;
    let n = mesh.n_elements();
    let mut flux = Vec::with_capacity(n);
    let mut potential = Vec::with_capacity(n);
    let mut oscillation = Vec::with_capacity(n);
    let mut local = Vec::with_capacity(n);
    for e in 0..n {
        let fl = weights.w[e] * flux_unweighted[e];
        let diff: f64 = u_h
            .element(e)
            .iter()
            .zip(rec.phi.element(e))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let pot = spec.kappa * (diff * mesh.maps[e].abs_det()).sqrt();
        let osc = weights.w_tilde[e] * data_osc[e];
        flux.push(fl);
        potential.push(pot);
        oscillation.push(osc);
        local.push(fl + pot + osc);
    }
    let eta = local.iter().map(|t| t * t).sum::<f64>().sqrt();
    Ok(GuaranteedEstimate {
        flux,
        flux_unweighted,
        potential,
        oscillation,
        data_oscillation: data_osc,
        local,
        eta,
    })
}

/// `‖ε∇u_h + ε⁻¹σ_h‖` over the whole domain, without the weights `w_K`.
pub fn unweighted_flux_total(mesh: &Mesh, u_h: &ScalarField, rec: &Reconstruction, spec: &ProblemSpec) -> Result<f64> {
    Ok(flux_norms(mesh, u_h, rec, spec)?.iter().map(|t| t * t).sum::<f64>().sqrt())
}

/// Element residual `r_h = Π_p f + ε²Δ_h u_h − κ²u_h` as a broken degree-p field.
pub fn element_residual(mesh: &Mesh, u_h: &ScalarField, spec: &ProblemSpec) -> Result<ScalarField> {
    let p = u_h.degree;
    let tab = scalar_tabulation(mesh.dim, p, 2 * p)?;
    let e2 = spec.epsilon * spec.epsilon;
    let lap = l2_project_local(
        |e, xh| {
            let b = crate::poly::basis::scalar_basis(mesh.dim, p).expect("supported dimension");
            let ev = b.eval(xh);
            let mut h = [0.0; 3];
            for (c, hi) in u_h.element(e).iter().zip(&ev.hess) {
                for k in 0..3 {
                    h[k] += c * hi[k];
                }
            }
            mesh.maps[e].laplacian(&h)
        },
        mesh,
        p,
        tab.rule.exact_degree,
    )?;
    let proj = projected_source(mesh, spec, p)?;
    let k2 = spec.kappa * spec.kappa;
    let mut r = ScalarField::zeros(mesh, p, Conformity::Broken);
    r.coeffs
        .iter_mut()
        .zip(proj.coeffs.iter().zip(lap.coeffs.iter().zip(&u_h.coeffs)))
        .for_each(|(r, (f, (l, u)))| *r = f + e2 * l - k2 * u);
    Ok(r)
}

/// `‖⟦∇u_h·n⟧‖²_F` for every mesh face (zero on the boundary).
pub fn normal_jumps_sq(mesh: &Mesh, u_h: &ScalarField) -> Vec<f64> {
    (0..mesh.n_faces())
        .into_par_iter()
        .map(|fid| {
            let face = &mesh.faces[fid];
            let Some((n, _)) = face.neighbor else { return 0.0 };
            let (e, _) = face.owner;
            face_rule(mesh, fid, 2 * u_h.degree)
                .iter()
                .map(|(x, w)| {
                    let ga = u_h.grad(mesh, e, &mesh.maps[e].inverse_map(x));
                    let gb = u_h.grad(mesh, n, &mesh.maps[n].inverse_map(x));
                    let j = (ga[0] - gb[0]) * face.normal[0] + (ga[1] - gb[1]) * face.normal[1];
                    w * j * j
                })
                .sum()
        })
        .collect()
}

pub fn residual_estimate(
    mesh: &Mesh,
    u_h: &ScalarField,
    spec: &ProblemSpec,
    weights: &ElementWeights,
) -> Result<ResidualEstimate> {
    let r = element_residual(mesh, u_h, spec)?;
    let e4 = spec.epsilon.powi(4);
    let element: Vec<f64> = (0..mesh.n_elements())
        .map(|e| weights.alpha[e] * r.l2_norm_sq_element(mesh, e).sqrt())
        .collect();
    let jump_sq: Vec<f64> = normal_jumps_sq(mesh, u_h).into_iter().map(|j| e4 * j).collect();
    let face: Vec<f64> = jump_sq
        .iter()
        .zip(&weights.alpha_face)
        .map(|(j, a)| (a * j / spec.epsilon).sqrt())
        .collect();
    let residual_sum = element.iter().map(|t| t * t).sum::<f64>();
    let jump_sum = face.iter().map(|t| t * t).sum::<f64>();
    Ok(ResidualEstimate {
        element,
        face,
        jump_sq,
        residual_sum,
        jump_sum,
        eta_res: (residual_sum + jump_sum).sqrt(),
    })
}

/// Ratio of two nonnegative quantities; `None` when both vanish.
fn ratio(num: f64, den: f64) -> Option<f64> {
    if den == 0.0 {
        if num == 0.0 {
            None
        } else {
            Some(f64::INFINITY)
        }
    } else {
        Some(num / den)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyReport {
    /// `w_K²‖ε∇u_h + ε⁻¹σ_h‖²_K + ‖κ(u_h−φ_h)‖²_K`
    pub numerator: Vec<f64>,
    /// Residual estimator restricted to the neighbourhood of `K`.
    pub residual_neighbourhood: Vec<f64>,
    pub ratio_r: Vec<Option<f64>>,
    /// Error plus weighted oscillation over the neighbourhood of `K`.
    pub error_neighbourhood: Option<Vec<f64>>,
    pub ratio_e: Option<Vec<Option<f64>>>,
    pub max_ratio_r: Option<f64>,
    pub max_ratio_e: Option<f64>,
}

/// Elements and faces of the union of the vertex patches of `K`.
pub fn neighbourhood(mesh: &Mesh, e: usize) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut elems = BTreeSet::new();
    let mut faces = BTreeSet::new();
    for &a in mesh.element_vertices(e) {
        elems.extend(mesh.vertex_elements[a].iter().copied());
        for &k in &mesh.vertex_elements[a] {
            for &f in &mesh.element_faces[k][..=mesh.dim] {
                let face = &mesh.faces[f];
                if face.contains(a) && !face.is_boundary() {
                    faces.insert(f);
                }
            }
        }
    }
    (elems, faces)
}

fn max_ratio(r: &[Option<f64>]) -> Option<f64> {
    r.iter().flatten().copied().fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
}

pub fn efficiency_report(
    mesh: &Mesh,
    guaranteed: &GuaranteedEstimate,
    residual: &ResidualEstimate,
    weights: &ElementWeights,
    error: Option<&ErrorReport>,
) -> EfficiencyReport {
    let n = mesh.n_elements();
    let mut numerator = Vec::with_capacity(n);
    let mut res_n = Vec::with_capacity(n);
    let mut err_n = Vec::with_capacity(n);
    for e in 0..n {
        numerator.push(guaranteed.flux[e].powi(2) + guaranteed.potential[e].powi(2));
        let (elems, faces) = neighbourhood(mesh, e);
        let r: f64 = elems.iter().map(|&k| residual.element[k].powi(2)).sum::<f64>()
            + faces.iter().map(|&f| residual.face[f].powi(2)).sum::<f64>();
        res_n.push(r);
        if let Some(err) = error {
            err_n.push(
                elems
                    .iter()
                    .map(|&k| err.per_element[k] + (weights.alpha[k] * guaranteed.data_oscillation[k]).powi(2))
                    .sum::<f64>(),
            );
        }
    }
    let ratio_r: Vec<_> = numerator.iter().zip(&res_n).map(|(a, b)| ratio(*a, *b)).collect();
    let ratio_e: Option<Vec<_>> =
        error.map(|_| numerator.iter().zip(&err_n).map(|(a, b)| ratio(*a, *b)).collect());
    EfficiencyReport {
        max_ratio_r: max_ratio(&ratio_r),
        max_ratio_e: ratio_e.as_deref().and_then(max_ratio),
        numerator,
        residual_neighbourhood: res_n,
        ratio_r,
        error_neighbourhood: error.map(|_| err_n),
        ratio_e,
    }
}

/// Everything computed for one discrete solution.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorReport {
    pub weights: ElementWeights,
    pub guaranteed: GuaranteedEstimate,
    pub residual: ResidualEstimate,
    pub error: Option<ErrorReport>,
    pub efficiency: EfficiencyReport,
}

pub fn estimate(
    mesh: &Mesh,
    u_h: &ScalarField,
    rec: &Reconstruction,
    spec: &ProblemSpec,
    c_star: f64,
    error: Option<ErrorReport>,
) -> Result<EstimatorReport> {
    let weights = element_weights(mesh, spec, c_star);
    let guaranteed = guaranteed_estimate(mesh, u_h, rec, spec, &weights)?;
    let residual = residual_estimate(mesh, u_h, spec, &weights)?;
    let efficiency = efficiency_report(mesh, &guaranteed, &residual, &weights, error.as_ref());
    Ok(EstimatorReport {
        weights,
        guaranteed,
        residual,
        error,
        efficiency,
    })
}

/// Column order of [`EstimatorReport::write_csv`].
pub const CSV_COLUMNS: [&str; 12] = [
    "element",
    "h",
    "w",
    "w_tilde",
    "alpha",
    "flux",
    "potential",
    "oscillation",
    "eta_local",
    "residual",
    "face_jump_sq",
    "error",
];

impl EstimatorReport {
    pub fn eta(&self) -> f64 {
        self.guaranteed.eta
    }

    pub fn eta_res(&self) -> f64 {
        self.residual.eta_res
    }

    /// `η / |||u − u_h|||`
    pub fn effectivity(&self) -> Option<f64> {
        self.error.as_ref().and_then(|e| ratio(self.guaranteed.eta, e.total))
    }

    /// One row per element and a final `total` row. Per-element `face_jump_sq`
    /// holds half of each adjacent interior face term `ε⁻¹α_F‖j_h‖²_F`; the
    /// total row holds root sums of squares except for `face_jump_sq`, which
    /// is summed. Weight and size columns are empty in the total row.
    pub fn write_csv(&self, mesh: &Mesh, out: &mut impl Write, precision: usize) -> Result<()> {
        let fmt = |x: f64| format!("{x:.precision$e}");
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        let g = &self.guaranteed;
        for e in 0..mesh.n_elements() {
            let err = self
                .error
                .as_ref()
                .map(|r| fmt(r.per_element[e].sqrt()))
                .unwrap_or_default();
            let row = [
                e.to_string(),
                fmt(mesh.h[e]),
                fmt(self.weights.w[e]),
                fmt(self.weights.w_tilde[e]),
                fmt(self.weights.alpha[e]),
                fmt(g.flux[e]),
                fmt(g.potential[e]),
                fmt(g.oscillation[e]),
                fmt(g.local[e]),
                fmt(self.residual.element[e]),
                fmt(self.residual.face_share(mesh, e)),
                err,
            ];
            writeln!(out, "{}", row.join(","))?;
        }
        let rss = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
        let row = [
            "total".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            fmt(rss(&g.flux)),
            fmt(rss(&g.potential)),
            fmt(rss(&g.oscillation)),
            fmt(g.eta),
            fmt(self.residual.residual_sum.sqrt()),
            fmt(self.residual.jump_sum),
            self.error.as_ref().map(|r| fmt(r.total)).unwrap_or_default(),
        ];
        writeln!(out, "{}", row.join(","))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::constant_set;
    use crate::equilibration::reconstruct;
    use crate::fem::{error_energy, solve_problem, ErrorMode, Source};
    use crate::mesh::{structured_triangle_mesh, uniform_interval_mesh};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn c_star(mesh: &Mesh, p: usize) -> f64 {
        constant_set(p, mesh.dim, mesh.shape_regularity()).unwrap().c_star
    }

    fn run(mesh: &Mesh, p: usize, spec: &ProblemSpec) -> (ScalarField, EstimatorReport) {
        let u = solve_problem(mesh, p, spec).unwrap().u_h;
        let cs = c_star(mesh, p);
        let rec = reconstruct(mesh, &u, spec, cs).unwrap();
        let err = spec.exact.as_ref().map(|_| error_energy(mesh, &u, spec, ErrorMode::Exact).unwrap());
        let rep = estimate(mesh, &u, &rec, spec, cs, err).unwrap();
        (u, rep)
    }

    #[test]
    fn weight_examples() {
        let w = flux_weight(1.0 / 16.0, 1e-3, 1.0, 3.0);
        assert!((w - 3.0 * (1e-3f64 * 16.0).sqrt()).abs() < 1e-15);
        assert!((w - 0.37947).abs() < 1e-5);
        assert_eq!(oscillation_weight(1.0 / 16.0, 1e-3, 1.0), 1.0);
        assert_eq!(flux_weight(1.0 / 16.0, 1.0, 1.0, 3.0), 1.0);
        assert!((oscillation_weight(1.0 / 16.0, 1.0, 1.0) - 0.019894).abs() < 1e-6);
        assert_eq!(alpha(1.0 / 16.0, 1.0, 1.0), 1.0 / 16.0);
        // κ = 0
        assert_eq!(flux_weight(0.1, 0.5, 0.0, 3.0), 1.0);
        assert!((oscillation_weight(0.1, 0.5, 0.0) - 0.1 / (std::f64::consts::PI * 0.5)).abs() < 1e-15);
        assert!((alpha(0.1, 0.5, 0.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_source_gives_zero_everything() {
        let m = structured_triangle_mesh(3, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = ProblemSpec::new(0.1, 1.0, Source::function(|_| 0.0)).unwrap();
        let (_, rep) = run(&m, 2, &s);
        assert_eq!(rep.eta(), 0.0);
        assert_eq!(rep.eta_res(), 0.0);
        assert!(rep.efficiency.ratio_r.iter().all(|r| r.is_none()));
        assert!(rep.efficiency.max_ratio_r.is_none());
    }

    #[test]
    fn single_element_has_no_jumps() {
        let m = uniform_interval_mesh(1, (0.0, 1.0)).unwrap();
        let s = ProblemSpec::new(1.0, 1.0, Source::function(|x| x[0] * x[0])).unwrap();
        let (_, rep) = run(&m, 3, &s);
        assert_eq!(rep.residual.jump_sum, 0.0);
    }

    #[test]
    fn polynomial_source_has_no_oscillation() {
        let m = structured_triangle_mesh(2, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let f = l2_project_local(|e, xh| m.maps[e].map(xh)[0], &m, 1, 4).unwrap();
        let s = ProblemSpec::new(0.3, 2.0, Source::Field(f)).unwrap();
        let (_, rep) = run(&m, 2, &s);
        assert!(rep.guaranteed.oscillation.iter().all(|&o| o == 0.0));
    }

    fn layer_spec(eps: f64, kappa: f64) -> ProblemSpec {
        let r = kappa / eps;
        let u = move |x: f64| 1.0 - ((r * (x - 1.0)).exp() + (-r * x).exp()) / (1.0 + (-r).exp());
        let du = move |x: f64| -r * ((r * (x - 1.0)).exp() - (-r * x).exp()) / (1.0 + (-r).exp());
        ProblemSpec::new(eps, kappa, Source::function(move |_| kappa * kappa))
            .unwrap()
            .with_exact(Arc::new(move |x| u(x[0])), Arc::new(move |x| [du(x[0]), 0.0]))
    }

    #[test]
    fn guaranteed_upper_bound_1d_layer() {
        let m = uniform_interval_mesh(32, (0.0, 1.0)).unwrap();
        let s = layer_spec(1e-2, 1.0);
        let (_, rep) = run(&m, 1, &s);
        let eff = rep.effectivity().unwrap();
        assert!(eff >= 1.0 && eff <= 10.0, "effectivity {eff}");
    }

    #[test]
    fn guaranteed_upper_bound_2d() {
        let m = structured_triangle_mesh(4, 4, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let pi = std::f64::consts::PI;
        for &(eps, kappa) in &[(1.0, 0.0), (1.0, 1.0), (0.05, 1.0)] {
            let s = ProblemSpec::new(
                eps,
                kappa,
                Source::function(move |x| {
                    (2.0 * eps * eps * pi * pi + kappa * kappa) * (pi * x[0]).sin() * (pi * x[1]).sin()
                }),
            )
            .unwrap()
            .with_exact(
                Arc::new(move |x| (pi * x[0]).sin() * (pi * x[1]).sin()),
                Arc::new(move |x| {
                    [pi * (pi * x[0]).cos() * (pi * x[1]).sin(), pi * (pi * x[0]).sin() * (pi * x[1]).cos()]
                }),
            );
            for p in 1..=2 {
                let (_, rep) = run(&m, p, &s);
                let err = rep.error.as_ref().unwrap().total;
                assert!(rep.eta() >= err * (1.0 - 1e-9), "eps {eps} kappa {kappa} p {p}: {} < {err}", rep.eta());
            }
        }
    }

    #[test]
    fn additivity_and_domination() {
        let m = structured_triangle_mesh(3, 2, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = ProblemSpec::new(0.02, 1.0, Source::function(|x| (3.0 * x[0]).exp() * x[1])).unwrap();
        let (u, rep) = run(&m, 2, &s);
        let g = &rep.guaranteed;
        assert!((g.eta_from_local() - g.eta).abs() <= 1e-13 * g.eta);
        assert!(g.unweighted_flux_total() >= g.weighted_flux_total());
        let rec = reconstruct(&m, &u, &s, c_star(&m, 2)).unwrap();
        let total = unweighted_flux_total(&m, &u, &rec, &s).unwrap();
        assert!((total - g.unweighted_flux_total()).abs() <= 1e-13 * total);
        let mut ones = element_weights(&m, &s, c_star(&m, 2));
        ones.w.iter_mut().for_each(|w| *w = 1.0);
        let unit = guaranteed_estimate(&m, &u, &rec, &s, &ones).unwrap();
        assert!((unit.weighted_flux_total() - total).abs() <= 1e-13 * total);
        let share: f64 = (0..m.n_elements()).map(|e| rep.residual.face_share(&m, e)).sum();
        assert!((share - rep.residual.jump_sum).abs() <= 1e-12 * rep.residual.jump_sum);
    }

    #[test]
    fn residual_vanishes_for_exact_polynomial() {
        // u = x(1-x) solved exactly by p = 2: r_h = 0 and no jumps.
        let m = uniform_interval_mesh(4, (0.0, 1.0)).unwrap();
        let s = ProblemSpec::new(1.0, 0.0, Source::function(|_| 2.0)).unwrap();
        let (_, rep) = run(&m, 2, &s);
        assert!(rep.eta_res() < 1e-10, "{}", rep.eta_res());
        assert!(rep.eta() < 1e-10, "{}", rep.eta());
    }

    #[test]
    fn jump_matches_hand_computation() {
        // p = 1, u_h nodal; jumps from slopes.
        let m = uniform_interval_mesh(4, (0.0, 1.0)).unwrap();
        let s = ProblemSpec::new(0.5, 1.0, Source::function(|_| 1.0)).unwrap();
        let u = solve_problem(&m, 1, &s).unwrap().u_h;
        let j = normal_jumps_sq(&m, &u);
        for fid in m.interior_faces() {
            let face = &m.faces[fid];
            let x = m.coords[face.vertices[0]][0];
            let h = 0.25;
            let slope = |a: f64, b: f64| (u.value_at(&m, &[b, 0.0]).unwrap() - u.value_at(&m, &[a, 0.0]).unwrap()) / h;
            let jump = slope(x - h, x) - slope(x, x + h);
            assert!((j[fid] - jump * jump).abs() < 1e-10 * (1.0 + jump * jump));
        }
    }

    #[test]
    fn efficiency_ratios_finite_and_neighbourhood_sane() {
        let m = structured_triangle_mesh(4, 4, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let (elems, faces) = neighbourhood(&m, 0);
        assert!(elems.contains(&0));
        assert!(faces.iter().all(|&f| !m.faces[f].is_boundary()));
        let s = layer_spec(0.1, 1.0);
        let (_, rep) = run(&uniform_interval_mesh(16, (0.0, 1.0)).unwrap(), 1, &s);
        let ef = &rep.efficiency;
        assert!(ef.max_ratio_r.unwrap().is_finite());
        assert!(ef.max_ratio_e.unwrap().is_finite());
    }

    #[test]
    fn csv_is_deterministic_and_has_total_row() {
        let m = uniform_interval_mesh(4, (0.0, 1.0)).unwrap();
        let s = layer_spec(0.1, 1.0);
        let (_, rep) = run(&m, 1, &s);
        let mut a = Vec::new();
        let mut b = Vec::new();
        rep.write_csv(&m, &mut a, 16).unwrap();
        rep.write_csv(&m, &mut b, 16).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(lines.len(), 6);
        assert!(lines[5].starts_with("total,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn weights_are_monotone(h in 1e-3f64..1.0, eps in 1e-4f64..1.0, k in 0.1f64..100.0, t in 1.01f64..4.0) {
            prop_assert!(alpha(h, eps, k * t) <= alpha(h, eps, k));
            prop_assert!(alpha(h / t, eps, k) <= alpha(h, eps, k));
            prop_assert!(flux_weight(h, eps * t, k, 3.0) >= flux_weight(h, eps, k, 3.0));
            let w = flux_weight(h, eps, k, 3.0);
            prop_assert!(w > 0.0 && w <= 1.0);
        }

        #[test]
        fn estimators_scale_linearly(c in -5.0f64..5.0) {
            prop_assume!(c.abs() > 1e-2);
            let m = uniform_interval_mesh(6, (0.0, 1.0)).unwrap();
            let base = ProblemSpec::new(0.05, 1.0, Source::function(|x| (2.0 * x[0]).cos())).unwrap();
            let scaled = ProblemSpec::new(0.05, 1.0, Source::function(move |x| c * (2.0 * x[0]).cos())).unwrap();
            let (_, a) = run(&m, 2, &base);
            let (_, b) = run(&m, 2, &scaled);
            prop_assert!((b.eta() - c.abs() * a.eta()).abs() <= 1e-9 * c.abs() * a.eta());
            prop_assert!((b.eta_res() - c.abs() * a.eta_res()).abs() <= 1e-9 * c.abs() * a.eta_res());
        }
    }
}
