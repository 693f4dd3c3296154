//! Measurable forms of the a-priori estimates: energy and its Gronwall
//! envelope, the pointwise bound, weak residuals, two-run stability,
//! norm equivalence on nonconvex domains and gauge comparison.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::domain::{Axis, VoxelDomain};
use crate::dynamics::{Forcing, PhysParams, RunRecord, Snapshot, StepRow};
use crate::error::{Error, Result};
use crate::fields::{AppliedField, CenterField, FaceField, OrderParameterField, VectorPotentialField};
use crate::ops::{
    center_inner, center_norm2, covariant_grad, curl_face_to_edge, curl_interior, div_face_to_center, edge_norm2, face_inner, face_norm2,
    grad_center_to_face, supercurrent,
};
use crate::solvers::conjugate_gradient;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub condensation: f64,
    pub field: f64,
    pub gauge: f64,
    pub total: f64,
}

/// Free energy of a state.
///
/// The field term runs over interior edges, where `∇×A` is an unknown; on
/// boundary edges the natural condition makes `∇×A − H` vanish.
pub fn energy(psi: &OrderParameterField, a: &VectorPotentialField, applied: &AppliedField, kappa: f64) -> EnergyBreakdown {
    let dom = psi.domain();
    let v = dom.cell_volume();
    let kinetic = 0.5 * face_norm2(&covariant_grad(psi, a, kappa));
    let condensation = 0.25 * v * dom.inside_cells().iter().map(|&c| (psi.values[c].norm_sqr() - 1.0).powi(2)).sum::<f64>();
    let curl = curl_interior(a);
    let he = (!applied.is_zero()).then(|| applied.edge_samples(dom));
    let mut field = 0.0;
    for ax in Axis::ALL {
        let cc = curl.comp(ax);
        for (e, &c) in cc.iter().enumerate() {
            if dom.edge_is_interior(ax, e) {
                let h = he.as_ref().map_or(0.0, |he| he.at(ax, e));
                field += (c - h).powi(2);
            }
        }
    }
    let field = 0.5 * v * field;
    let gauge = 0.5 * center_norm2(&div_face_to_center(a));
    EnergyBreakdown {
        kinetic,
        condensation,
        field,
        gauge,
        total: kinetic + condensation + field + gauge,
    }
}

/// Per-step defect of the discrete energy inequality,
/// `rⁿ = (Eⁿ⁺¹−Eⁿ)/dt + ‖∂tA‖² + (η/2)‖∂tψ‖² − (ηκ²/2)‖∇·Aⁿ⁺¹‖²`.
pub fn lyapunov_residual(rows: &[StepRow], eta: f64, kappa: f64, dt: f64) -> Vec<f64> {
    rows.windows(2)
        .map(|w| {
            let (p, n) = (&w[0], &w[1]);
            (n.energy.total - p.energy.total) / dt + n.dt_a2 + 0.5 * eta * n.dt_psi2 - 0.5 * eta * kappa * kappa * n.div_a2
        })
        .collect()
}

/// Largest positive part of a residual series (zero if none is positive).
pub fn max_positive(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, &x| m.max(x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallCheck {
    pub holds: bool,
    /// Largest `E(t) − envelope(t)`; negative when the envelope holds strictly.
    pub worst_margin: f64,
    pub worst_time: f64,
}

/// Checks `E(t) ≤ (E(0)+ε)·exp(ηκ²t) + ε` at every row, `ε = 1e-8·|Ω|`.
pub fn gronwall_check(rows: &[StepRow], eta: f64, kappa: f64, volume: f64) -> GronwallCheck {
    let eps = 1e-8 * volume;
    let e0 = rows.first().map_or(0.0, |r| r.energy.total);
    let g = eta * kappa * kappa;
    let mut out = GronwallCheck {
        holds: true,
        worst_margin: f64::NEG_INFINITY,
        worst_time: 0.0,
    };
    for r in rows {
        let m = r.energy.total - ((e0 + eps) * (g * r.t).exp() + eps);
        if m > out.worst_margin {
            out.worst_margin = m;
            out.worst_time = r.t;
        }
        if !(m <= 0.0) {
            out.holds = false;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub max_psi: f64,
    pub max_overshoot: f64,
    pub times: Vec<f64>,
    /// `∫(|ψ|²−1)₊²` per row.
    pub excess: Vec<f64>,
}

/// Pointwise maximum and truncation functional over every recorded step.
pub fn bound_monitor(record: &RunRecord) -> BoundReport {
    let max_psi = record.rows.iter().map(|r| r.max_psi).fold(0.0, f64::max);
    BoundReport {
        max_psi,
        max_overshoot: (max_psi - 1.0).max(0.0),
        times: record.rows.iter().map(|r| r.t).collect(),
        excess: record.rows.iter().map(|r| r.excess).collect(),
    }
}

/// Same quantities from stored snapshots only.
pub fn bound_monitor_snapshots(snaps: &[Snapshot]) -> BoundReport {
    let mut rep = BoundReport {
        max_psi: 0.0,
        max_overshoot: 0.0,
        times: Vec::new(),
        excess: Vec::new(),
    };
    for s in snaps {
        let dom = s.psi.domain();
        rep.max_psi = rep.max_psi.max(s.psi.max_abs());
        rep.times.push(s.t);
        rep.excess.push(
            dom.inside_cells()
                .iter()
                .map(|&c| (s.psi.values[c].norm_sqr() - 1.0).max(0.0).powi(2))
                .sum::<f64>()
                * dom.cell_volume(),
        );
    }
    rep.max_overshoot = (rep.max_psi - 1.0).max(0.0);
    rep
}

/// Smooth test functions for the weak residual: Neumann cosines for ψ and
/// normal-trace-free sine/cosine products for A.
#[derive(Clone, Debug)]
pub struct TestBank {
    pub centers: Vec<OrderParameterField>,
    pub faces: Vec<VectorPotentialField>,
}

impl TestBank {
    /// All modes with wave numbers up to `kmax` in each direction.
    pub fn trigonometric(dom: &Arc<VoxelDomain>, kmax: usize) -> Self {
        let l = dom.lengths();
        let mut centers = Vec::new();
        let mut faces = Vec::new();
        for k0 in 0..=kmax {
            for k1 in 0..=kmax {
                for k2 in 0..=kmax {
                    let k = [k0 as f64, k1 as f64, k2 as f64];
                    let c = move |x: [f64; 3], d: usize| (k[d] * PI * x[d] / l[d]).cos();
                    let s = move |x: [f64; 3], d: usize| (k[d] * PI * x[d] / l[d]).sin();
                    centers.push(CenterField::from_fn(dom, |x| Complex64::new(c(x, 0) * c(x, 1) * c(x, 2), 0.0)));
                    centers.push(CenterField::from_fn(dom, |x| Complex64::new(0.0, c(x, 0) * c(x, 1) * c(x, 2))));
                    for ax in Axis::ALL {
                        let a = ax.index();
                        if k[a] == 0.0 {
                            continue;
                        }
                        faces.push(FaceField::from_fn_interior(dom, |fa, x| {
                            if fa != ax {
                                return 0.0;
                            }
                            (0..3).map(|d| if d == a { s(x, d) } else { c(x, d) }).product()
                        }));
                    }
                }
            }
        }
        TestBank { centers, faces }
    }
}

/// ψ-equation functional at the new state tested against `phi`.
pub fn weak_functional_psi(
    prev: &Snapshot,
    next: &Snapshot,
    params: &PhysParams,
    dt: f64,
    forcing: Option<&dyn Forcing>,
    phi: &OrderParameterField,
) -> Complex64 {
    let (eta, kappa) = (params.eta, params.kappa);
    let i = Complex64::new(0.0, 1.0);
    let div = div_face_to_center(&next.a);
    let f = forcing.map(|f| f.psi_source(next.psi.domain(), next.t));
    let local = CenterField::from_values(
        next.psi.domain(),
        (0..next.psi.values.len())
            .map(|c| {
                let p = next.psi.values[c];
                let mut r = (p - prev.psi.values[c]) * (eta / dt) + p * (p.norm_sqr() - 1.0) - i * (eta * kappa * div.values[c]) * p;
                if let Some(f) = &f {
                    r -= f.values[c];
                }
                r
            })
            .collect(),
    );
    center_inner(&local, phi) + face_inner(&covariant_grad(&next.psi, &next.a, kappa), &covariant_grad(phi, &next.a, kappa))
}

/// A-equation functional at the new state tested against `a_test`.
pub fn weak_functional_a(
    prev: &Snapshot,
    next: &Snapshot,
    params: &PhysParams,
    dt: f64,
    forcing: Option<&dyn Forcing>,
    a_test: &VectorPotentialField,
) -> f64 {
    let dom = next.a.domain();
    let mut local = next.a.sub(&prev.a);
    local.scale(1.0 / dt);
    local.axpy(1.0, &supercurrent(&next.psi, &next.a, params.kappa));
    if let Some(f) = forcing {
        local.axpy(-1.0, &f.a_source(dom, next.t));
    }
    let curl = curl_face_to_edge(&next.a, &params.applied);
    let he = params.applied.edge_samples(dom);
    let ct = curl_interior(a_test);
    let v = dom.cell_volume();
    let mut field = 0.0;
    for ax in Axis::ALL {
        for e in 0..dom.num_edges(ax) {
            if dom.edge_is_interior(ax, e) {
                field += (curl.at(ax, e) - he.at(ax, e)) * ct.at(ax, e);
            }
        }
    }
    face_inner(&local, a_test) + v * field + center_inner(&div_face_to_center(&next.a), &div_face_to_center(a_test))
}

/// Largest normalized residuals over the bank, `max |r(φ)|/‖φ‖`.
pub fn weak_residual(prev: &Snapshot, next: &Snapshot, params: &PhysParams, dt: f64, bank: &TestBank, forcing: Option<&dyn Forcing>) -> (f64, f64) {
    let rp = bank
        .centers
        .iter()
        .map(|phi| weak_functional_psi(prev, next, params, dt, forcing, phi).norm() / center_norm2(phi).sqrt())
        .fold(0.0, f64::max);
    let ra = bank
        .faces
        .iter()
        .map(|a| weak_functional_a(prev, next, params, dt, forcing, a).abs() / face_norm2(a).sqrt())
        .fold(0.0, f64::max);
    (rp, ra)
}

/// Differences between two runs over their common snapshot times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDelta {
    pub times: Vec<f64>,
    pub psi_l2: Vec<f64>,
    pub a_l2: Vec<f64>,
    /// `η/2‖e‖² + ½‖E‖²`
    pub q: Vec<f64>,
    /// Smallest `G` with `q(t) ≤ q(0)e^{Gt}` along the whole run.
    pub growth: f64,
    pub terminal: f64,
}

pub fn stability_compare(run1: &[Snapshot], run2: &[Snapshot], eta: f64) -> Result<RunDelta> {
    if run1.len() != run2.len() || run1.is_empty() {
        return Err(Error::invalid("runs must share the same non-empty snapshot schedule"));
    }
    let mut d = RunDelta {
        times: Vec::new(),
        psi_l2: Vec::new(),
        a_l2: Vec::new(),
        q: Vec::new(),
        growth: f64::NEG_INFINITY,
        terminal: 0.0,
    };
    for (s1, s2) in run1.iter().zip(run2) {
        if (s1.t - s2.t).abs() > 1e-12 * s1.t.abs().max(1.0) {
            return Err(Error::invalid(format!("snapshot times differ: {} vs {}", s1.t, s2.t)));
        }
        let e = center_norm2(&s1.psi.sub(&s2.psi));
        let ea = face_norm2(&s1.a.sub(&s2.a));
        d.times.push(s1.t);
        d.psi_l2.push(e.sqrt());
        d.a_l2.push(ea.sqrt());
        d.q.push(0.5 * eta * e + 0.5 * ea);
    }
    let q0 = d.q[0];
    if q0 > 0.0 {
        for (t, q) in d.times.iter().zip(&d.q).skip(1) {
            if *t > d.times[0] {
                d.growth = d.growth.max((q / q0).ln() / (t - d.times[0]));
            }
        }
    }
    if !d.growth.is_finite() {
        d.growth = 0.0;
    }
    d.terminal = d.q.last().copied().unwrap_or(0.0).sqrt();
    Ok(d)
}

/// `‖∇A‖² / (‖∇×A‖² + ‖∇·A‖² + ‖A‖²)`.
///
/// Each component is differenced along its own axis at cell centers and
/// across neighbouring faces along the other two axes; differences that
/// would reach outside the domain are dropped.
pub fn norm_ratio(a: &VectorPotentialField) -> Result<f64> {
    let grad = component_gradient_norm2(a);
    let denom = edge_norm2(&curl_interior(a)) + center_norm2(&div_face_to_center(a)) + face_norm2(a);
    if denom == 0.0 {
        return Err(Error::invalid("norm ratio of a zero field"));
    }
    Ok(grad / denom)
}

fn component_gradient_norm2(a: &VectorPotentialField) -> f64 {
    let dom = a.domain();
    let h = dom.spacing();
    let v = dom.cell_volume();
    let mut acc = 0.0;
    for ax in Axis::ALL {
        let dims = dom.face_dims(ax);
        let comp = a.comp(ax);
        for d in Axis::ALL {
            let stride = [1, dims[0], dims[0] * dims[1]][d.index()];
            let ih = 1.0 / h[d.index()];
            for f in 0..comp.len() {
                let p = dom.face_coords(ax, f);
                if p[d.index()] + 1 >= dims[d.index()] {
                    continue;
                }
                let g = f + stride;
                let ok = if d == ax {
                    // the cell between the two faces
                    dom.inside_at([p[0] as isize, p[1] as isize, p[2] as isize])
                } else {
                    dom.face_inside_count(ax, f) > 0 && dom.face_inside_count(ax, g) > 0
                };
                if ok {
                    acc += ((comp[g] - comp[f]) * ih).powi(2);
                }
            }
        }
    }
    acc * v
}

/// Discrete gradient of the re-entrant-edge singular function on an
/// L-shaped prism.
///
/// `u = r^{2/3} cos(2(θ−θ₀)/3)·χ(r)` around the re-entrant edge satisfies
/// the Neumann condition on both walls meeting there; `χ` is a smooth radial
/// weight, equal to 1 at the edge and vanishing at distance `L`. The returned
/// field is `∇φ_h` where `φ_h` solves the discrete Neumann problem with the
/// sampled (smooth) Laplacian of `u` as data, so it is exactly curl free with
/// a bounded divergence while `∇A` is not square integrable in the limit.
pub fn singular_gradient_field(dom: &Arc<VoxelDomain>) -> Result<VectorPotentialField> {
    singular_gradient_field_with(dom, 1.0, 0.0)
}

/// [`singular_gradient_field`] with `χ` supported on `r ≤ radius·L` and
/// equal to 1 on `r ≤ inner·radius·L`.
pub fn singular_gradient_field_with(dom: &Arc<VoxelDomain>, radius: f64, inner: f64) -> Result<VectorPotentialField> {
    let (ax_a, ax_b) = match dom.kind() {
        crate::domain::DomainKind::LShape { removed } => (removed[0].index(), removed[1].index()),
        _ => return Err(Error::invalid("singular field needs an L-shaped domain")),
    };
    let l = dom.lengths();
    let corner = [0.5 * l[ax_a], 0.5 * l[ax_b]];
    let radius = radius * l[ax_a].min(l[ax_b]);
    // the domain occupies θ ∈ [π/2, 2π] around the edge
    let theta0 = 0.5 * PI;
    let lap = |x: [f64; 3]| -> f64 {
        let (dx, dy) = (x[ax_a] - corner[0], x[ax_b] - corner[1]);
        let r = dx.hypot(dy);
        // Δ(uχ) = 2u_r χ' + u(χ'' + χ'/r) since u is harmonic
        let (chi1, chi2) = cutoff_derivs(r / radius, inner);
        let (chi1, chi2) = (chi1 / radius, chi2 / (radius * radius));
        if chi1 == 0.0 && chi2 == 0.0 {
            return 0.0;
        }
        let mut th = dy.atan2(dx);
        if th < theta0 - 1e-12 {
            th += 2.0 * PI;
        }
        let ang = (2.0 * (th - theta0) / 3.0).cos();
        let u = r.powf(2.0 / 3.0) * ang;
        let ur = (2.0 / 3.0) * r.powf(-1.0 / 3.0) * ang;
        2.0 * ur * chi1 + u * (chi2 + chi1 / r)
    };
    let rhs = CenterField::from_fn(dom, |x| Complex64::new(lap(x), 0.0));
    let phi = solve_neumann(dom, &rhs.values.iter().map(|z| z.re).collect::<Vec<_>>())?;
    Ok(grad_center_to_face(&CenterField::from_values(dom, phi)))
}

fn cutoff_derivs(s: f64, inner: f64) -> (f64, f64) {
    // χ(s) = 1 for s ≤ inner, smooth decay to 0 at s = 1, via the polynomial
    // smoothstep p(t) = 1 − t³(10 − 15t + 6t²) with t = (s − inner)/(1 − inner)
    if s <= inner || s >= 1.0 {
        return (0.0, 0.0);
    }
    let w = 1.0 / (1.0 - inner);
    let t = (s - inner) * w;
    let d1 = -(30.0 * t * t - 60.0 * t.powi(3) + 30.0 * t.powi(4));
    let d2 = -(60.0 * t - 180.0 * t * t + 120.0 * t.powi(3));
    (w * d1, w * w * d2)
}

/// Solves `div(grad φ) = f` with homogeneous Neumann data on inside cells,
/// after removing the mean of `f`; the result has zero mean.
fn solve_neumann(dom: &Arc<VoxelDomain>, f: &[f64]) -> Result<Vec<f64>> {
    let cells = dom.inside_cells();
    let mean = cells.iter().map(|&c| f[c]).sum::<f64>() / cells.len() as f64;
    let b: Vec<f64> = (0..f.len()).map(|c| if dom.mask()[c] { -(f[c] - mean) } else { 0.0 }).collect();
    let diag = neumann_diagonal(dom);
    let mut x = vec![0.0; f.len()];
    let apply = |u: &[f64], out: &mut [f64]| {
        let uf = CenterField::from_values(dom, u.to_vec());
        let lap = div_face_to_center(&grad_center_to_face(&uf));
        for (o, l) in out.iter_mut().zip(&lap.values) {
            *o = -l;
        }
    };
    conjugate_gradient(apply, &diag, &b, &mut x, 1e-11, 20_000)?;
    let m = cells.iter().map(|&c| x[c]).sum::<f64>() / cells.len() as f64;
    Ok((0..x.len()).map(|c| if dom.mask()[c] { x[c] - m } else { 0.0 }).collect())
}

fn neumann_diagonal(dom: &VoxelDomain) -> Vec<f64> {
    let h = dom.spacing();
    let mut d = vec![0.0; dom.num_cells()];
    for ax in Axis::ALL {
        let w = 1.0 / (h[ax.index()] * h[ax.index()]);
        for f in 0..dom.num_faces(ax) {
            if dom.face_is_interior(ax, f) {
                let p = dom.face_coords(ax, f);
                let hi = dom.cell_index(p[0], p[1], p[2]);
                let lo = hi - [1, dom.counts()[0], dom.counts()[0] * dom.counts()[1]][ax.index()];
                d[hi] += w;
                d[lo] += w;
            }
        }
    }
    d
}

/// Band-limited random field with A·n = 0 on the bounding box.
pub fn smooth_random_field(dom: &Arc<VoxelDomain>, seed: u64, kmax: usize) -> VectorPotentialField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let l = dom.lengths();
    let mut modes = Vec::new();
    for ax in 0..3 {
        for k0 in 0..=kmax {
            for k1 in 0..=kmax {
                for k2 in 0..=kmax {
                    let k = [k0, k1, k2];
                    if k[ax] == 0 {
                        continue;
                    }
                    modes.push((ax, k, rng.random_range(-1.0..1.0)));
                }
            }
        }
    }
    FaceField::from_fn_interior(dom, |fa, x| {
        modes
            .iter()
            .filter(|m| m.0 == fa.index())
            .map(|(ax, k, c)| {
                c * (0..3)
                    .map(|d| {
                        let arg = k[d] as f64 * PI * x[d] / l[d];
                        if d == *ax { arg.sin() } else { arg.cos() }
                    })
                    .product::<f64>()
            })
            .sum()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeDistance {
    pub times: Vec<f64>,
    pub modulus: Vec<f64>,
    pub curl: Vec<f64>,
}

/// Distances between the gauge-invariant observables `|ψ|` and `∇×A`.
pub fn gauge_compare(lorentz: &[Snapshot], zero: &[Snapshot], applied: &AppliedField) -> Result<GaugeDistance> {
    if lorentz.len() != zero.len() {
        return Err(Error::invalid("records have different snapshot schedules"));
    }
    let mut out = GaugeDistance {
        times: Vec::new(),
        modulus: Vec::new(),
        curl: Vec::new(),
    };
    for (l, z) in lorentz.iter().zip(zero) {
        if l.psi.domain().content_hash() != z.psi.domain().content_hash() {
            return Err(Error::invalid("records live on different grids"));
        }
        let dm = CenterField::from_values(
            l.psi.domain(),
            l.psi.values.iter().zip(&z.psi.values).map(|(a, b)| a.norm() - b.norm()).collect(),
        );
        let dc = curl_face_to_edge(&l.a, applied).sub(&curl_face_to_edge(&z.a, applied));
        out.times.push(l.t);
        out.modulus.push(center_norm2(&dm).sqrt());
        out.curl.push(edge_norm2(&dc).sqrt());
    }
    Ok(out)
}
