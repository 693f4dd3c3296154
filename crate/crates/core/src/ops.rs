//! Staggered-grid differential operators, covariant derivatives and the
//! discrete L² pairings they are adjoint under.
//!
//! Every control volume (cell, interior face, interior edge) carries the cell
//! volume `V = hx·hy·hz`, so the operator pairs below are exact transposes:
//!
//! * `div_face_to_center = −gradᵀ` on fields with A·n = 0,
//! * `curl_transpose` is the transpose of the interior-edge curl,
//! * `covariant_laplacian = Γᴴ Γ` with `Γ = (i/κ)∇ + A`.

use num_complex::Complex64;

use crate::domain::{Axis, VoxelDomain};
use crate::error::{Error, Result};
use crate::fields::{AppliedField, CenterField, EdgeField, FaceField, OrderParameterField, Scalar, VectorPotentialField};

#[inline]
fn cell_stride(dom: &VoxelDomain, ax: Axis) -> usize {
    let n = dom.counts();
    [1, n[0], n[0] * n[1]][ax.index()]
}

#[inline]
fn face_stride(dom: &VoxelDomain, face_axis: Axis, dir: Axis) -> usize {
    let d = dom.face_dims(face_axis);
    [1, d[0], d[0] * d[1]][dir.index()]
}

#[inline]
fn edge_stride(dom: &VoxelDomain, edge_axis: Axis, dir: Axis) -> usize {
    let d = dom.edge_dims(edge_axis);
    [1, d[0], d[0] * d[1]][dir.index()]
}

/// Cell index of the high-side cell of an axis-`ax` face.
#[inline]
fn face_hi_cell(dom: &VoxelDomain, ax: Axis, f: usize) -> usize {
    let p = dom.face_coords(ax, f);
    dom.cell_index(p[0], p[1], p[2])
}

/// Centered difference across interior faces; zero on boundary faces, which
/// is the discrete ∇ψ·n = 0.
pub fn grad_center_to_face<T: Scalar>(f: &CenterField<T>) -> FaceField<T> {
    let dom = f.domain();
    let h = dom.spacing();
    let mut out = FaceField::zeros(dom);
    for ax in Axis::ALL {
        let s = cell_stride(dom, ax);
        let inv_h = 1.0 / h[ax.index()];
        let comp = out.comp_mut(ax);
        for (fi, v) in comp.iter_mut().enumerate() {
            if dom.face_is_interior(ax, fi) {
                let hi = face_hi_cell(dom, ax, fi);
                *v = (f.values[hi] - f.values[hi - s]) * inv_h;
            }
        }
    }
    out
}

/// Discrete divergence at inside cells from the stored face values.
pub fn div_face_to_center<T: Scalar>(a: &FaceField<T>) -> CenterField<T> {
    let dom = a.domain();
    let h = dom.spacing();
    let mut out = CenterField::zeros(dom);
    for &c in dom.inside_cells() {
        let p = dom.cell_coords(c);
        let mut acc = T::zero();
        for ax in Axis::ALL {
            let lo = dom.face_index(ax, p[0], p[1], p[2]);
            let hi = lo + face_stride(dom, ax, ax);
            acc += (a.at(ax, hi) - a.at(ax, lo)) * (1.0 / h[ax.index()]);
        }
        out.values[c] = acc;
    }
    out
}

/// Discrete curl on interior edges; every other edge is left at zero.
pub fn curl_interior(a: &VectorPotentialField) -> EdgeField {
    let dom = a.domain();
    let h = dom.spacing();
    let mut out = EdgeField::zeros(dom);
    for ax in Axis::ALL {
        let (b, c) = ax.transverse();
        // ∂_b A_c − ∂_c A_b
        let sb = face_stride(dom, c, b);
        let sc = face_stride(dom, b, c);
        let (ib, ic) = (1.0 / h[b.index()], 1.0 / h[c.index()]);
        let ac = a.comp(c);
        let ab = a.comp(b);
        for e in 0..dom.num_edges(ax) {
            if !dom.edge_is_interior(ax, e) {
                continue;
            }
            let p = dom.edge_coords(ax, e);
            let fc = dom.face_index(c, p[0], p[1], p[2]);
            let fb = dom.face_index(b, p[0], p[1], p[2]);
            let v = (ac[fc] - ac[fc - sb]) * ib - (ab[fb] - ab[fb - sc]) * ic;
            *out.at_mut(ax, e) = v;
        }
    }
    out
}

/// Discrete curl with the natural boundary condition inserted: on boundary
/// edges the tangential curl is replaced by the tangential applied field.
pub fn curl_face_to_edge(a: &VectorPotentialField, applied: &AppliedField) -> EdgeField {
    let dom = a.domain();
    let mut out = curl_interior(a);
    if !applied.is_zero() {
        let he = applied.edge_samples(dom);
        for ax in Axis::ALL {
            for e in 0..dom.num_edges(ax) {
                if dom.edge_is_boundary(ax, e) {
                    *out.at_mut(ax, e) = he.at(ax, e);
                }
            }
        }
    }
    out
}

/// Edge-to-face curl evaluated on interior faces (boundary faces stay zero).
pub fn curl_transpose(e: &EdgeField) -> VectorPotentialField {
    let dom = e.domain();
    let h = dom.spacing();
    let mut out = FaceField::zeros(dom);
    for ax in Axis::ALL {
        let (b, c) = ax.transverse();
        let sb = edge_stride(dom, c, b);
        let sc = edge_stride(dom, b, c);
        let (ib, ic) = (1.0 / h[b.index()], 1.0 / h[c.index()]);
        let ec = e.comp(c);
        let eb = e.comp(b);
        let comp = out.comp_mut(ax);
        for (fi, v) in comp.iter_mut().enumerate() {
            if !dom.face_is_interior(ax, fi) {
                continue;
            }
            let p = dom.face_coords(ax, fi);
            let ic_idx = dom.edge_index(c, p[0], p[1], p[2]);
            let ib_idx = dom.edge_index(b, p[0], p[1], p[2]);
            *v = (ec[ic_idx + sb] - ec[ic_idx]) * ib - (eb[ib_idx + sc] - eb[ib_idx]) * ic;
        }
    }
    out
}

/// `∇×(∇×A) − ∇(∇·A)` with the boundary curl taken from H.
pub fn curlcurl_minus_graddiv(a: &VectorPotentialField, applied: &AppliedField) -> VectorPotentialField {
    let mut out = curl_transpose(&curl_face_to_edge(a, applied));
    let gd = grad_center_to_face(&div_face_to_center(a));
    out.axpy(-1.0, &gd);
    out
}

/// Symmetric part of the Lorentz-gauge operator (H = 0).
pub fn lorentz_operator(a: &VectorPotentialField) -> VectorPotentialField {
    let mut out = curl_transpose(&curl_interior(a));
    let gd = grad_center_to_face(&div_face_to_center(a));
    out.axpy(-1.0, &gd);
    out
}

/// Curl-curl only, for the zero-potential gauge.
pub fn curlcurl_operator(a: &VectorPotentialField) -> VectorPotentialField {
    curl_transpose(&curl_interior(a))
}

/// Discrete ∇×H: the edge-to-face curl of H sampled on every domain edge.
pub fn curl_of_applied(dom: &std::sync::Arc<VoxelDomain>, applied: &AppliedField) -> VectorPotentialField {
    if applied.is_zero() {
        return FaceField::zeros(dom);
    }
    curl_transpose(&applied.edge_samples(dom))
}

/// Source felt by the symmetric operator: `∇×H` minus the boundary-edge
/// insertion, i.e. `curlᵀ` of H restricted to interior edges. This satisfies
/// `curlcurl_minus_graddiv(A, H) − curl_of_applied(H) = lorentz_operator(A) − applied_source(H)`.
pub fn applied_source(dom: &std::sync::Arc<VoxelDomain>, applied: &AppliedField) -> VectorPotentialField {
    if applied.is_zero() {
        return FaceField::zeros(dom);
    }
    let mut he = applied.edge_samples(dom);
    for ax in Axis::ALL {
        for e in 0..dom.num_edges(ax) {
            if !dom.edge_is_interior(ax, e) {
                *he.at_mut(ax, e) = 0.0;
            }
        }
    }
    curl_transpose(&he)
}

/// Diagonal of `lorentz_operator` (or of the curl-curl part alone).
pub fn lorentz_diagonal(dom: &VoxelDomain, with_graddiv: bool) -> Vec<f64> {
    let h = dom.spacing();
    let mut diag = Vec::with_capacity(
        dom.num_faces(Axis::X) + dom.num_faces(Axis::Y) + dom.num_faces(Axis::Z),
    );
    for ax in Axis::ALL {
        let (b, c) = ax.transverse();
        let sb = edge_stride(dom, c, b);
        let sc = edge_stride(dom, b, c);
        for fi in 0..dom.num_faces(ax) {
            if !dom.face_is_interior(ax, fi) {
                diag.push(0.0);
                continue;
            }
            let p = dom.face_coords(ax, fi);
            let ec = dom.edge_index(c, p[0], p[1], p[2]);
            let eb = dom.edge_index(b, p[0], p[1], p[2]);
            let mut d = 0.0;
            for e in [ec, ec + sb] {
                if dom.edge_is_interior(c, e) {
                    d += 1.0 / (h[b.index()] * h[b.index()]);
                }
            }
            for e in [eb, eb + sc] {
                if dom.edge_is_interior(b, e) {
                    d += 1.0 / (h[c.index()] * h[c.index()]);
                }
            }
            if with_graddiv {
                d += 2.0 / (h[ax.index()] * h[ax.index()]);
            }
            diag.push(d);
        }
    }
    diag
}

/// Arithmetic mean of the two adjacent cell values on interior faces.
pub fn face_average(psi: &OrderParameterField) -> FaceField<Complex64> {
    let dom = psi.domain();
    let mut out = FaceField::zeros(dom);
    for ax in Axis::ALL {
        let s = cell_stride(dom, ax);
        let comp = out.comp_mut(ax);
        for (fi, v) in comp.iter_mut().enumerate() {
            if dom.face_is_interior(ax, fi) {
                let hi = face_hi_cell(dom, ax, fi);
                *v = (psi.values[hi] + psi.values[hi - s]) * 0.5;
            }
        }
    }
    out
}

/// `(i/κ)∇ψ + A ψ̄` on interior faces, ψ̄ the face average.
pub fn covariant_grad(psi: &OrderParameterField, a: &VectorPotentialField, kappa: f64) -> FaceField<Complex64> {
    let dom = psi.domain();
    let h = dom.spacing();
    let mut out = FaceField::zeros(dom);
    for ax in Axis::ALL {
        let s = cell_stride(dom, ax);
        let ik = Complex64::new(0.0, 1.0 / (kappa * h[ax.index()]));
        let av = a.comp(ax);
        let comp = out.comp_mut(ax);
        for (fi, v) in comp.iter_mut().enumerate() {
            if dom.face_is_interior(ax, fi) {
                let hi = face_hi_cell(dom, ax, fi);
                let (p, m) = (psi.values[hi], psi.values[hi - s]);
                *v = ik * (p - m) + (p + m) * (0.5 * av[fi]);
            }
        }
    }
    out
}

/// Adjoint `Γᴴ` of [`covariant_grad`] under the face/cell pairings.
pub fn covariant_grad_adjoint(g: &FaceField<Complex64>, a: &VectorPotentialField, kappa: f64) -> OrderParameterField {
    let dom = g.domain();
    let h = dom.spacing();
    let mut out = CenterField::zeros(dom);
    for ax in Axis::ALL {
        let s = cell_stride(dom, ax);
        let ik = Complex64::new(0.0, 1.0 / (kappa * h[ax.index()]));
        let av = a.comp(ax);
        let gv = g.comp(ax);
        for fi in 0..gv.len() {
            if dom.face_is_interior(ax, fi) {
                let hi = face_hi_cell(dom, ax, fi);
                let half_a = 0.5 * av[fi];
                let gf = gv[fi];
                out.values[hi] += (half_a - ik) * gf;
                out.values[hi - s] += (half_a + ik) * gf;
            }
        }
    }
    out
}

/// `(i/κ∇ + A)²ψ` in the weak sense: (Lψ, φ) = (Γψ, Γφ) for every φ.
pub fn covariant_laplacian(psi: &OrderParameterField, a: &VectorPotentialField, kappa: f64) -> OrderParameterField {
    covariant_grad_adjoint(&covariant_grad(psi, a, kappa), a, kappa)
}

/// Diagonal of [`covariant_laplacian`] at every cell.
pub fn covariant_laplacian_diagonal(a: &VectorPotentialField, kappa: f64) -> Vec<f64> {
    let dom = a.domain();
    let h = dom.spacing();
    let mut d = vec![0.0; dom.num_cells()];
    for ax in Axis::ALL {
        let s = cell_stride(dom, ax);
        let k2 = 1.0 / (kappa * kappa * h[ax.index()] * h[ax.index()]);
        let av = a.comp(ax);
        for fi in 0..av.len() {
            if dom.face_is_interior(ax, fi) {
                let hi = face_hi_cell(dom, ax, fi);
                let w = k2 + 0.25 * av[fi] * av[fi];
                d[hi] += w;
                d[hi - s] += w;
            }
        }
    }
    d
}

/// Supercurrent `Re[ψ̄* ((i/κ)∇ + A)ψ]` on interior faces.
pub fn supercurrent(psi: &OrderParameterField, a: &VectorPotentialField, kappa: f64) -> VectorPotentialField {
    let dom = psi.domain();
    let g = covariant_grad(psi, a, kappa);
    let avg = face_average(psi);
    let mut out = FaceField::zeros(dom);
    for (o, (gv, pv)) in out.data.iter_mut().zip(g.data.iter().zip(&avg.data)) {
        *o = (pv.conj() * gv).re;
    }
    out
}

/// Which control volumes a pairing integrates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Center,
    Face,
    Edge,
}

impl Layout {
    pub fn len(self, dom: &VoxelDomain) -> usize {
        match self {
            Layout::Center => dom.num_cells(),
            Layout::Face => Axis::ALL.iter().map(|&a| dom.num_faces(a)).sum(),
            Layout::Edge => Axis::ALL.iter().map(|&a| dom.num_edges(a)).sum(),
        }
    }

    /// Quadrature weights: the inside fraction of each control volume.
    pub fn weights(self, dom: &VoxelDomain) -> Vec<f64> {
        let v = dom.cell_volume();
        match self {
            Layout::Center => dom.mask().iter().map(|&m| if m { v } else { 0.0 }).collect(),
            Layout::Face => Axis::ALL
                .iter()
                .flat_map(|&ax| (0..dom.num_faces(ax)).map(move |f| (ax, f)))
                .map(|(ax, f)| v * dom.face_inside_count(ax, f) as f64 / 2.0)
                .collect(),
            Layout::Edge => Axis::ALL
                .iter()
                .flat_map(|&ax| (0..dom.num_edges(ax)).map(move |e| (ax, e)))
                .map(|(ax, e)| v * dom.edge_inside_count(ax, e) as f64 / 4.0)
                .collect(),
        }
    }
}

/// Volume-weighted `Σ w u v*` over the chosen layout.
pub fn inner_product<T: Scalar>(u: &[T], v: &[T], kind: Layout, dom: &VoxelDomain) -> Result<T> {
    let n = kind.len(dom);
    if u.len() != n || v.len() != n {
        return Err(Error::invalid(format!(
            "{kind:?} pairing expects {n} entries, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let w = kind.weights(dom);
    let mut acc = T::zero();
    for i in 0..n {
        if w[i] != 0.0 {
            acc += u[i] * v[i].conj() * w[i];
        }
    }
    Ok(acc)
}

pub fn center_inner<T: Scalar>(u: &CenterField<T>, v: &CenterField<T>) -> T {
    let dom = u.domain();
    let w = dom.cell_volume();
    let mut acc = T::zero();
    for &c in dom.inside_cells() {
        acc += u.values[c] * v.values[c].conj();
    }
    acc * w
}

/// Pairing over faces; vector potentials vanish on boundary faces so only
/// interior faces contribute for them.
pub fn face_inner<T: Scalar>(u: &FaceField<T>, v: &FaceField<T>) -> T {
    let dom = u.domain();
    let w = dom.cell_volume();
    let mut acc = T::zero();
    for ax in Axis::ALL {
        let (uc, vc) = (u.comp(ax), v.comp(ax));
        for f in 0..uc.len() {
            match dom.face_inside_count(ax, f) {
                2 => acc += uc[f] * vc[f].conj(),
                1 => acc += uc[f] * vc[f].conj() * 0.5,
                _ => {}
            }
        }
    }
    acc * w
}

pub fn edge_inner(u: &EdgeField, v: &EdgeField) -> f64 {
    let dom = u.domain();
    let w = dom.cell_volume() / 4.0;
    let mut acc = 0.0;
    for ax in Axis::ALL {
        let (uc, vc) = (u.comp(ax), v.comp(ax));
        for e in 0..uc.len() {
            let n = dom.edge_inside_count(ax, e);
            if n > 0 {
                acc += uc[e] * vc[e] * n as f64;
            }
        }
    }
    acc * w
}

pub fn center_norm2<T: Scalar>(u: &CenterField<T>) -> f64 {
    let dom = u.domain();
    dom.inside_cells().iter().map(|&c| u.values[c].abs2()).sum::<f64>() * dom.cell_volume()
}

pub fn face_norm2<T: Scalar>(u: &FaceField<T>) -> f64 {
    let dom = u.domain();
    let mut acc = 0.0;
    for ax in Axis::ALL {
        let uc = u.comp(ax);
        for f in 0..uc.len() {
            let n = dom.face_inside_count(ax, f);
            if n > 0 {
                acc += uc[f].abs2() * n as f64 * 0.5;
            }
        }
    }
    acc * dom.cell_volume()
}

pub fn edge_norm2(u: &EdgeField) -> f64 {
    edge_inner(u, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VoxelDomain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn cube(n: usize) -> Arc<VoxelDomain> {
        Arc::new(VoxelDomain::build_box([n, n, n], [1.0; 3]).unwrap())
    }

    fn lshape(n: usize) -> Arc<VoxelDomain> {
        Arc::new(VoxelDomain::build_lshape([n, n, n], [1.0; 3], [Axis::X, Axis::Y]).unwrap())
    }

    fn rand_center(dom: &Arc<VoxelDomain>, rng: &mut ChaCha8Rng) -> OrderParameterField {
        CenterField::from_fn(dom, |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn rand_faces(dom: &Arc<VoxelDomain>, rng: &mut ChaCha8Rng) -> VectorPotentialField {
        FaceField::from_fn_interior(dom, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs_faces(f: &FaceField<f64>) -> f64 {
        f.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn grad_of_constant_vanishes() {
        let dom = lshape(4);
        let f = CenterField::constant(&dom, 3.5f64);
        assert_eq!(max_abs_faces(&grad_center_to_face(&f)), 0.0);
    }

    #[test]
    fn grad_is_second_order_on_cosine() {
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let dom = cube(n);
            let f = CenterField::from_fn(&dom, |x| (PI * x[0]).cos());
            let g = grad_center_to_face(&f);
            let mut err = 0.0f64;
            for fi in 0..dom.num_faces(Axis::X) {
                if dom.face_is_interior(Axis::X, fi) {
                    let x = dom.face_center(Axis::X, fi);
                    err = err.max((g.at(Axis::X, fi) + PI * (PI * x[0]).sin()).abs());
                }
            }
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn grad_is_linear() {
        let dom = cube(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = rand_center(&dom, &mut rng);
        let g = rand_center(&dom, &mut rng);
        let (a, b) = (0.3, -1.7);
        let mut comb = f.clone();
        comb.scale(a);
        comb.axpy(b, &g);
        let lhs = grad_center_to_face(&comb);
        let mut rhs = grad_center_to_face(&f);
        rhs.scale(a);
        rhs.axpy(b, &grad_center_to_face(&g));
        for (l, r) in lhs.data.iter().zip(&rhs.data) {
            assert!((l - r).norm() <= 1e-12 * (1.0 + r.norm()));
        }
    }

    #[test]
    fn div_of_sampled_gradient_is_second_order() {
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let dom = cube(n);
            let a = FaceField::from_fn_interior(&dom, |ax, x| {
                if ax == Axis::X { -PI * (PI * x[0]).sin() } else { 0.0 }
            });
            let d = div_face_to_center(&a);
            let err = dom
                .inside_cells()
                .iter()
                .map(|&c| (d.values[c] + PI * PI * (PI * dom.cell_center(c)[0]).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // boundary cells see a one-sided closure; the rate is still 2 in the max norm here
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
        assert_eq!(div_face_to_center(&FaceField::<f64>::zeros(&cube(4))).values.iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    }

    #[test]
    fn summation_by_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dom in [cube(6), lshape(6)] {
            for _ in 0..5 {
                let a = rand_faces(&dom, &mut rng);
                let f = CenterField::from_fn(&dom, |_| rng.random_range(-1.0..1.0));
                let lhs = center_inner(&div_face_to_center(&a), &f);
                let rhs = face_inner(&a, &grad_center_to_face(&f));
                assert!((lhs + rhs).abs() <= 1e-12 * (lhs.abs() + rhs.abs()));
            }
        }
    }

    #[test]
    fn curl_of_grad_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dom = lshape(6);
        let f = CenterField::from_fn(&dom, |_| rng.random_range(-1.0..1.0));
        let c = curl_interior(&grad_center_to_face(&f));
        assert!(c.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn curl_of_shear_field_is_unit() {
        let dom = cube(6);
        let a = FaceField::from_fn_interior(&dom, |ax, x| if ax == Axis::Y { x[0] } else { 0.0 });
        let c = curl_interior(&a);
        for ax in Axis::ALL {
            for e in 0..dom.num_edges(ax) {
                if dom.edge_is_interior(ax, e) {
                    let expect = if ax == Axis::Z { 1.0 } else { 0.0 };
                    assert!((c.at(ax, e) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn boundary_edges_carry_applied_field() {
        let dom = cube(4);
        let a = FaceField::zeros(&dom);
        let h = AppliedField::Uniform([0.0, 0.0, 1.0]);
        let c = curl_face_to_edge(&a, &h);
        for ax in Axis::ALL {
            for e in 0..dom.num_edges(ax) {
                let v = c.at(ax, e);
                if dom.edge_is_boundary(ax, e) {
                    assert_eq!(v, if ax == Axis::Z { 1.0 } else { 0.0 });
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn curl_transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dom = lshape(6);
        let a = rand_faces(&dom, &mut rng);
        let mut e = EdgeField::zeros(&dom);
        for ax in Axis::ALL {
            for ei in 0..dom.num_edges(ax) {
                if dom.edge_is_interior(ax, ei) {
                    *e.at_mut(ax, ei) = rng.random_range(-1.0..1.0);
                }
            }
        }
        let lhs = edge_inner(&curl_interior(&a), &e);
        let rhs = face_inner(&a, &curl_transpose(&e));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn curlcurl_graddiv_zero_and_symmetry() {
        let dom = lshape(6);
        let z = FaceField::zeros(&dom);
        assert!(curlcurl_minus_graddiv(&z, &AppliedField::zero()).data.iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = rand_faces(&dom, &mut rng);
            let b = rand_faces(&dom, &mut rng);
            let h0 = AppliedField::zero();
            let ab = face_inner(&curlcurl_minus_graddiv(&a, &h0), &b);
            let ba = face_inner(&a, &curlcurl_minus_graddiv(&b, &h0));
            assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(ba.abs()));
        }
    }

    #[test]
    fn graddiv_branch_on_gradient_mode() {
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let dom = cube(n);
            let a = FaceField::from_fn_interior(&dom, |ax, x| {
                if ax == Axis::X { -PI * (PI * x[0]).sin() } else { 0.0 }
            });
            let op = curlcurl_minus_graddiv(&a, &AppliedField::zero());
            let mut err = 0.0f64;
            for fi in 0..dom.num_faces(Axis::X) {
                if dom.face_is_interior(Axis::X, fi) {
                    err = err.max((op.at(Axis::X, fi) - PI * PI * a.at(Axis::X, fi)).abs());
                }
            }
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn inserted_curl_splits_into_symmetric_part_and_source() {
        let dom = lshape(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_faces(&dom, &mut rng);
        let h = AppliedField::Uniform([0.2, -0.4, 0.5]);
        let mut lhs = curlcurl_minus_graddiv(&a, &h);
        lhs.axpy(-1.0, &curl_of_applied(&dom, &h));
        let mut rhs = lorentz_operator(&a);
        rhs.axpy(-1.0, &applied_source(&dom, &h));
        for (l, r) in lhs.data.iter().zip(&rhs.data) {
            assert!((l - r).abs() < 1e-10);
        }
        // a uniform field has no discrete curl away from the boundary
        assert!(curl_of_applied(&dom, &h).data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lorentz_diagonal_matches_probing() {
        let dom = lshape(4);
        for with_gd in [true, false] {
            let diag = lorentz_diagonal(&dom, with_gd);
            let mut probe = FaceField::zeros(&dom);
            for i in 0..probe.data.len() {
                if diag[i] == 0.0 {
                    continue;
                }
                probe.data[i] = 1.0;
                let r = if with_gd { lorentz_operator(&probe) } else { curlcurl_operator(&probe) };
                assert!((r.data[i] - diag[i]).abs() < 1e-9, "face {i}");
                probe.data[i] = 0.0;
            }
        }
    }

    #[test]
    fn covariant_grad_simple_cases() {
        let dom = lshape(4);
        let one = CenterField::constant(&dom, Complex64::new(1.0, 0.0));
        let z = FaceField::zeros(&dom);
        assert!(covariant_grad(&one, &z, 2.0).data.iter().all(|v| v.norm() == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_faces(&dom, &mut rng);
        let g = covariant_grad(&one, &a, 2.0);
        for (gv, av) in g.data.iter().zip(&a.data) {
            assert!((gv - Complex64::new(*av, 0.0)).norm() <= f64::EPSILON * av.abs().max(1.0));
        }
    }

    #[test]
    fn covariant_grad_gauge_cancellation() {
        // ψ = exp(iκ a·x) with A = a gives (i/κ)∇ψ + Aψ = 0
        let kappa = 1.5;
        let avec = [0.7, -0.4, 0.3];
        let mut errs = Vec::new();
        for n in [8, 16] {
            let dom = cube(n);
            let psi = CenterField::from_fn(&dom, |x| {
                Complex64::from_polar(1.0, kappa * (avec[0] * x[0] + avec[1] * x[1] + avec[2] * x[2]))
            });
            let a = FaceField::from_fn_interior(&dom, |ax, _| avec[ax.index()]);
            let g = covariant_grad(&psi, &a, kappa);
            errs.push(g.data.iter().fold(0.0f64, |m, v| m.max(v.norm())));
        }
        assert!(errs[0] < 1e-2 && errs[0] / errs[1] > 3.8, "{errs:?}");
    }

    #[test]
    fn supercurrent_is_kinetic_energy_gradient() {
        // ½‖Γψ‖² is quadratic in A, so the central difference is exact
        let dom = lshape(6);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kappa = 1.7;
        let psi = rand_center(&dom, &mut rng);
        let a = rand_faces(&dom, &mut rng);
        let b = rand_faces(&dom, &mut rng);
        let kinetic = |eps: f64| {
            let mut ae = a.clone();
            ae.axpy(eps, &b);
            0.5 * face_norm2(&covariant_grad(&psi, &ae, kappa))
        };
        let eps = 1e-3;
        let fd = (kinetic(eps) - kinetic(-eps)) / (2.0 * eps);
        let j = face_inner(&supercurrent(&psi, &a, kappa), &b);
        assert!((fd - j).abs() <= 1e-9 * j.abs().max(1.0), "{fd} vs {j}");
    }

    #[test]
    fn covariant_laplacian_neumann_eigenpair() {
        let kappa = 2.0;
        let mut errs = Vec::new();
        for n in [8, 16] {
            let dom = cube(n);
            let psi = CenterField::from_fn(&dom, |x| Complex64::new((PI * x[0]).cos(), 0.0));
            let l = covariant_laplacian(&psi, &FaceField::zeros(&dom), kappa);
            // Rayleigh quotient against the analytic eigenvalue π²/κ²
            let rq = center_inner(&l, &psi).re / center_norm2(&psi);
            errs.push((rq - PI * PI / (kappa * kappa)).abs());
            let one = CenterField::constant(&dom, Complex64::new(1.0, 0.0));
            let l1 = covariant_laplacian(&one, &FaceField::zeros(&dom), kappa);
            assert!(l1.max_abs() < 1e-12);
        }
        assert!(errs[0] / errs[1] > 3.8, "{errs:?}");
    }

    #[test]
    fn covariant_laplacian_is_hermitian_psd() {
        let dom = lshape(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_faces(&dom, &mut rng);
        let psi = rand_center(&dom, &mut rng);
        let phi = rand_center(&dom, &mut rng);
        let lp = center_inner(&covariant_laplacian(&psi, &a, 0.8), &phi);
        let pl = center_inner(&psi, &covariant_laplacian(&phi, &a, 0.8));
        assert!((lp - pl).norm() <= 1e-12 * lp.norm());
        let q = center_inner(&covariant_laplacian(&psi, &a, 0.8), &psi);
        assert!(q.re > 0.0 && q.im.abs() <= 1e-12 * q.re);
        let d = covariant_laplacian_diagonal(&a, 0.8);
        let mut e = CenterField::zeros(&dom);
        let c = dom.inside_cells()[5];
        e.values[c] = Complex64::new(1.0, 0.0);
        let r = covariant_laplacian(&e, &a, 0.8);
        assert!((r.values[c].re - d[c]).abs() < 1e-9 && r.values[c].im.abs() < 1e-9);
    }

    #[test]
    fn unit_volume_pairings() {
        let c = cube(4);
        let one = CenterField::constant(&c, 1.0f64);
        assert!((center_inner(&one, &one) - 1.0).abs() < 1e-14);
        let l = lshape(4);
        let one = CenterField::constant(&l, 1.0f64);
        assert!((center_inner(&one, &one) - 0.75).abs() < 1e-14);
        let raw = inner_product(&one.values, &one.values, Layout::Center, &l).unwrap();
        assert!((raw - 0.75).abs() < 1e-14);
        // one full component on every domain face integrates to |Ω|
        let f = FaceField::from_fn_all(&l, |ax, _| if ax == Axis::X { 1.0 } else { 0.0 });
        assert!((face_norm2(&f) - 0.75).abs() < 1e-14);
    }

    fn kahan(terms: impl Iterator<Item = f64>) -> f64 {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for t in terms {
            let y = t - c;
            let u = s + y;
            c = (u - s) - y;
            s = u;
        }
        s
    }

    #[test]
    fn pairings_match_compensated_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dom = lshape(8);
        let u = rand_center(&dom, &mut rng);
        let v = rand_center(&dom, &mut rng);
        let got = center_inner(&u, &v);
        let vol = dom.cell_volume();
        let re = kahan(dom.inside_cells().iter().map(|&c| (u.values[c] * v.values[c].conj()).re * vol));
        let im = kahan(dom.inside_cells().iter().map(|&c| (u.values[c] * v.values[c].conj()).im * vol));
        assert!((got - Complex64::new(re, im)).norm() <= 1e-13 * got.norm());

        let a = FaceField::from_fn_all(&dom, |_, _| rng.random_range(-1.0..1.0));
        let b = FaceField::from_fn_all(&dom, |_, _| rng.random_range(-1.0..1.0));
        let w = Layout::Face.weights(&dom);
        let oracle = kahan((0..w.len()).map(|i| a.data[i] * b.data[i] * w[i]));
        let got = face_inner(&a, &b);
        assert!((got - oracle).abs() <= 1e-13 * oracle.abs());
        let raw = inner_product(&a.data, &b.data, Layout::Face, &dom).unwrap();
        assert!((raw - oracle).abs() <= 1e-13 * oracle.abs());
    }

    #[test]
    fn layout_mismatch_rejected() {
        let dom = cube(4);
        let u = vec![1.0; dom.num_cells()];
        let v = vec![1.0; dom.num_cells() + 1];
        assert!(matches!(inner_product(&u, &v, Layout::Center, &dom), Err(Error::InvalidArgument(_))));
        assert!(inner_product(&u, &u, Layout::Face, &dom).is_err());
    }

    #[test]
    fn pairing_is_conjugate_linear() {
        let dom = lshape(4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = rand_center(&dom, &mut rng);
        let v = rand_center(&dom, &mut rng);
        let uv = center_inner(&u, &v);
        let vu = center_inner(&v, &u);
        assert!((uv - vu.conj()).norm() < 1e-14);
        let i = Complex64::new(0.0, 1.0);
        let iv = v.map(|x| x * i);
        assert!((center_inner(&u, &iv) - uv * i.conj()).norm() < 1e-13);
        assert!(center_inner(&u, &u).re > 0.0);
    }

    mod props {
        use super::*;
        use crate::testutil::{complex_center, faces, random_domain, real_center};
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn identities_on_random_masks(d in random_domain(), seed in any::<u64>()) {
                let f = real_center(&d, seed);
                let a = faces(&d, seed ^ 1);
                let g = grad_center_to_face(&f);
                let hmin = d.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
                let cg = edge_norm2(&curl_interior(&g)).sqrt();
                prop_assert!(cg <= 1e-12 * face_norm2(&g).sqrt() / hmin);
                let div = div_face_to_center(&a);
                let lhs = center_inner(&div, &f) + face_inner(&a, &g);
                let scale = center_norm2(&div).sqrt() * center_norm2(&f).sqrt() + face_norm2(&a).sqrt() * face_norm2(&g).sqrt();
                prop_assert!(lhs.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
            }

            #[test]
            fn operators_are_linear(d in random_domain(), seed in any::<u64>(), alpha in -3.0f64..3.0) {
                let (p1, p2) = (complex_center(&d, seed), complex_center(&d, seed ^ 7));
                let a = faces(&d, seed ^ 9);
                let mut comb = p1.clone();
                comb.scale(alpha);
                comb.axpy(1.0, &p2);
                let mut expect = covariant_grad(&p1, &a, 1.3);
                expect.scale(alpha);
                expect.axpy(1.0, &covariant_grad(&p2, &a, 1.3));
                let got = covariant_grad(&comb, &a, 1.3);
                let err = face_norm2(&got.sub(&expect)).sqrt();
                prop_assert!(err <= 1e-12 * (1.0 + face_norm2(&expect).sqrt()));

                let (u, v) = (faces(&d, seed ^ 3), faces(&d, seed ^ 4));
                let mut w = u.clone();
                w.scale(alpha);
                w.axpy(1.0, &v);
                let mut cw = curl_interior(&u);
                for (x, y) in cw.data.iter_mut().zip(&curl_interior(&v).data) {
                    *x = alpha * *x + y;
                }
                let direct = curl_interior(&w);
                let gap = direct.data.iter().zip(&cw.data).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                let size = cw.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                prop_assert!(gap <= 1e-13 * size);
            }

            #[test]
            fn pairings_conjugate_symmetric_and_positive(d in random_domain(), seed in any::<u64>()) {
                let (u, v) = (complex_center(&d, seed), complex_center(&d, seed ^ 5));
                let uv = center_inner(&u, &v);
                prop_assert!((uv - center_inner(&v, &u).conj()).norm() <= 1e-14 * (1.0 + uv.norm()));
                prop_assert!(center_inner(&u, &u).re > 0.0 && center_inner(&u, &u).im.abs() <= 1e-15);
                let (a, b) = (faces(&d, seed ^ 6), faces(&d, seed ^ 8));
                let ab = face_inner(&a, &b);
                prop_assert!((ab - face_inner(&b, &a)).abs() <= 1e-14 * (1.0 + ab.abs()));
                // a random mask can have no interior faces at all
                let any_interior = Axis::ALL.iter().any(|&ax| (0..d.num_faces(ax)).any(|f| d.face_is_interior(ax, f)));
                prop_assert_eq!(face_norm2(&a) > 0.0, any_interior);
            }

            #[test]
            fn covariant_laplacian_hermitian(d in random_domain(), seed in any::<u64>()) {
                let (u, v) = (complex_center(&d, seed), complex_center(&d, seed ^ 11));
                let a = faces(&d, seed ^ 12);
                let luv = center_inner(&covariant_laplacian(&u, &a, 0.8), &v);
                let ulv = center_inner(&u, &covariant_laplacian(&v, &a, 0.8));
                prop_assert!((luv - ulv).norm() <= 1e-11 * (1.0 + luv.norm()));
                prop_assert!(center_inner(&covariant_laplacian(&u, &a, 0.8), &u).re >= -1e-12);
            }
        }
    }
}
