//! Voxelized computational domains and boundary classification.
//!
//! A domain is a bounding box of `nx × ny × nz` cells with a boolean mask
//! selecting the cells inside Ω. Cells are addressed in lexicographic order
//! with x fastest. Faces and edges are addressed on the full bounding grid:
//! an axis-`a` face `(i, j, k)` sits at the low side of cell `(i, j, k)` in
//! direction `a`, and an axis-`a` edge `(i, j, k)` runs along `a` through the
//! grid vertex `(i, j, k)` in the two transverse directions.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i % 3]
    }

    /// The two transverse axes in cyclic order `(a+1, a+2)`.
    pub fn transverse(self) -> (Axis, Axis) {
        let a = self.index();
        (Axis::from_index(a + 1), Axis::from_index(a + 2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainKind {
    Box,
    LShape { removed: [Axis; 2] },
    Fichera,
    Mask,
}

/// Axis-aligned voxelization of a (possibly nonconvex) polyhedron.
#[derive(Clone, Debug)]
pub struct VoxelDomain {
    kind: DomainKind,
    counts: [usize; 3],
    lengths: [f64; 3],
    spacing: [f64; 3],
    mask: Vec<bool>,
    // number of inside cells adjacent to each face (0..=2), per axis
    face_cells: [Vec<u8>; 3],
    // number of inside cells adjacent to each edge (0..=4), per axis
    edge_cells: [Vec<u8>; 3],
    inside_cells: Vec<usize>,
}

impl PartialEq for VoxelDomain {
    fn eq(&self, other: &Self) -> bool {
        self.counts == other.counts && self.lengths == other.lengths && self.mask == other.mask
    }
}

fn check_box_args(counts: [usize; 3], lengths: [f64; 3]) -> Result<()> {
    for (a, &n) in counts.iter().enumerate() {
        if n < 2 {
            return Err(Error::invalid(format!(
                "cell count along axis {a} must be at least 2, got {n}"
            )));
        }
    }
    for (a, &l) in lengths.iter().enumerate() {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!(
                "length along axis {a} must be positive, got {l}"
            )));
        }
    }
    Ok(())
}

fn check_even(counts: [usize; 3], axes: &[Axis]) -> Result<()> {
    for &ax in axes {
        let n = counts[ax.index()];
        if !n.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "cell count along {ax:?} must be even so the removed block aligns with cells, got {n}"
            )));
        }
    }
    Ok(())
}

impl VoxelDomain {
    pub fn build_box(counts: [usize; 3], lengths: [f64; 3]) -> Result<Self> {
        check_box_args(counts, lengths)?;
        let n = counts.iter().product();
        Self::from_parts(DomainKind::Box, counts, lengths, vec![true; n])
    }

    /// Box minus the quadrant prism where both `removed` coordinates exceed
    /// half the box length, extruded along the remaining axis.
    pub fn build_lshape(counts: [usize; 3], lengths: [f64; 3], removed: [Axis; 2]) -> Result<Self> {
        check_box_args(counts, lengths)?;
        if removed[0] == removed[1] {
            return Err(Error::invalid("removed quadrant needs two distinct axes"));
        }
        check_even(counts, &removed)?;
        let (a, b) = (removed[0].index(), removed[1].index());
        let mask = Self::mask_from_fn(counts, |c| {
            !(c[a] >= counts[a] / 2 && c[b] >= counts[b] / 2)
        });
        Self::from_parts(DomainKind::LShape { removed }, counts, lengths, mask)
    }

    /// Cube minus the upper octant; the re-entrant edges meet at the center.
    pub fn build_fichera(counts: [usize; 3], lengths: [f64; 3]) -> Result<Self> {
        check_box_args(counts, lengths)?;
        check_even(counts, &Axis::ALL)?;
        let mask = Self::mask_from_fn(counts, |c| {
            !(0..3).all(|a| c[a] >= counts[a] / 2)
        });
        Self::from_parts(DomainKind::Fichera, counts, lengths, mask)
    }

    pub fn build_from_mask(counts: [usize; 3], lengths: [f64; 3], mask: Vec<bool>) -> Result<Self> {
        check_box_args(counts, lengths)?;
        Self::from_parts(DomainKind::Mask, counts, lengths, mask)
    }

    fn mask_from_fn(counts: [usize; 3], f: impl Fn([usize; 3]) -> bool) -> Vec<bool> {
        let mut mask = Vec::with_capacity(counts.iter().product());
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    mask.push(f([i, j, k]));
                }
            }
        }
        mask
    }

    fn from_parts(kind: DomainKind, counts: [usize; 3], lengths: [f64; 3], mask: Vec<bool>) -> Result<Self> {
        let ncell: usize = counts.iter().product();
        if mask.len() != ncell {
            return Err(Error::invalid(format!(
                "mask has {} entries, expected {ncell}",
                mask.len()
            )));
        }
        let spacing = [
            lengths[0] / counts[0] as f64,
            lengths[1] / counts[1] as f64,
            lengths[2] / counts[2] as f64,
        ];
        let inside_cells: Vec<usize> = (0..ncell).filter(|&c| mask[c]).collect();
        if inside_cells.is_empty() {
            return Err(Error::invalid("mask has no inside cells"));
        }
        let mut dom = VoxelDomain {
            kind,
            counts,
            lengths,
            spacing,
            mask,
            face_cells: [Vec::new(), Vec::new(), Vec::new()],
            edge_cells: [Vec::new(), Vec::new(), Vec::new()],
            inside_cells,
        };
        if !dom.is_face_connected() {
            return Err(Error::invalid("inside cells are not face-connected"));
        }
        for ax in Axis::ALL {
            let fd = dom.face_dims(ax);
            let mut fc = Vec::with_capacity(fd.iter().product());
            for k in 0..fd[2] {
                for j in 0..fd[1] {
                    for i in 0..fd[0] {
                        let mut lo = [i as isize, j as isize, k as isize];
                        let hi = lo;
                        lo[ax.index()] -= 1;
                        fc.push(dom.inside_at(lo) as u8 + dom.inside_at(hi) as u8);
                    }
                }
            }
            dom.face_cells[ax.index()] = fc;

            let ed = dom.edge_dims(ax);
            let (b, c) = ax.transverse();
            let mut ec = Vec::with_capacity(ed.iter().product());
            for k in 0..ed[2] {
                for j in 0..ed[1] {
                    for i in 0..ed[0] {
                        let base = [i as isize, j as isize, k as isize];
                        let mut n = 0u8;
                        for db in [-1isize, 0] {
                            for dc in [-1isize, 0] {
                                let mut p = base;
                                p[b.index()] += db;
                                p[c.index()] += dc;
                                n += dom.inside_at(p) as u8;
                            }
                        }
                        ec.push(n);
                    }
                }
            }
            dom.edge_cells[ax.index()] = ec;
        }
        Ok(dom)
    }

    fn is_face_connected(&self) -> bool {
        let ncell = self.mask.len();
        let mut seen = vec![false; ncell];
        let mut queue = VecDeque::new();
        let start = self.inside_cells[0];
        seen[start] = true;
        queue.push_back(start);
        let mut count = 1usize;
        while let Some(c) = queue.pop_front() {
            let p = self.cell_coords(c);
            for a in 0..3 {
                for d in [-1isize, 1] {
                    let mut q = [p[0] as isize, p[1] as isize, p[2] as isize];
                    q[a] += d;
                    if self.inside_at(q) {
                        let qi = self.cell_index(q[0] as usize, q[1] as usize, q[2] as usize);
                        if !seen[qi] {
                            seen[qi] = true;
                            count += 1;
                            queue.push_back(qi);
                        }
                    }
                }
            }
        }
        count == self.inside_cells.len()
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Volume of a single cell; every face and edge control volume uses it.
    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.inside_cells.len() as f64
    }

    pub fn num_cells(&self) -> usize {
        self.mask.len()
    }

    pub fn num_inside(&self) -> usize {
        self.inside_cells.len()
    }

    pub fn inside_cells(&self) -> &[usize] {
        &self.inside_cells
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    #[inline]
    pub fn cell_coords(&self, c: usize) -> [usize; 3] {
        let nx = self.counts[0];
        let ny = self.counts[1];
        [c % nx, (c / nx) % ny, c / (nx * ny)]
    }

    /// Inside test with everything beyond the bounding box treated as outside.
    #[inline]
    pub fn inside_at(&self, p: [isize; 3]) -> bool {
        for a in 0..3 {
            if p[a] < 0 || p[a] >= self.counts[a] as isize {
                return false;
            }
        }
        self.mask[self.cell_index(p[0] as usize, p[1] as usize, p[2] as usize)]
    }

    pub fn cell_center(&self, c: usize) -> [f64; 3] {
        let p = self.cell_coords(c);
        [
            (p[0] as f64 + 0.5) * self.spacing[0],
            (p[1] as f64 + 0.5) * self.spacing[1],
            (p[2] as f64 + 0.5) * self.spacing[2],
        ]
    }

    pub fn face_dims(&self, ax: Axis) -> [usize; 3] {
        let mut d = self.counts;
        d[ax.index()] += 1;
        d
    }

    pub fn edge_dims(&self, ax: Axis) -> [usize; 3] {
        let mut d = self.counts;
        let (b, c) = ax.transverse();
        d[b.index()] += 1;
        d[c.index()] += 1;
        d
    }

    pub fn num_faces(&self, ax: Axis) -> usize {
        self.face_dims(ax).iter().product()
    }

    pub fn num_edges(&self, ax: Axis) -> usize {
        self.edge_dims(ax).iter().product()
    }

    #[inline]
    pub fn face_index(&self, ax: Axis, i: usize, j: usize, k: usize) -> usize {
        let d = self.face_dims(ax);
        i + d[0] * (j + d[1] * k)
    }

    #[inline]
    pub fn face_coords(&self, ax: Axis, f: usize) -> [usize; 3] {
        let d = self.face_dims(ax);
        [f % d[0], (f / d[0]) % d[1], f / (d[0] * d[1])]
    }

    #[inline]
    pub fn edge_index(&self, ax: Axis, i: usize, j: usize, k: usize) -> usize {
        let d = self.edge_dims(ax);
        i + d[0] * (j + d[1] * k)
    }

    #[inline]
    pub fn edge_coords(&self, ax: Axis, e: usize) -> [usize; 3] {
        let d = self.edge_dims(ax);
        [e % d[0], (e / d[0]) % d[1], e / (d[0] * d[1])]
    }

    pub fn face_center(&self, ax: Axis, f: usize) -> [f64; 3] {
        let p = self.face_coords(ax, f);
        let mut x = [0.0; 3];
        for a in 0..3 {
            let off = if a == ax.index() { 0.0 } else { 0.5 };
            x[a] = (p[a] as f64 + off) * self.spacing[a];
        }
        x
    }

    pub fn edge_center(&self, ax: Axis, e: usize) -> [f64; 3] {
        let p = self.edge_coords(ax, e);
        let mut x = [0.0; 3];
        for a in 0..3 {
            let off = if a == ax.index() { 0.5 } else { 0.0 };
            x[a] = (p[a] as f64 + off) * self.spacing[a];
        }
        x
    }

    /// Number of inside cells touching the face (0, 1 or 2).
    #[inline]
    pub fn face_inside_count(&self, ax: Axis, f: usize) -> u8 {
        self.face_cells[ax.index()][f]
    }

    /// Faces with an inside cell on both sides carry degrees of freedom.
    #[inline]
    pub fn face_is_interior(&self, ax: Axis, f: usize) -> bool {
        self.face_cells[ax.index()][f] == 2
    }

    #[inline]
    pub fn face_is_boundary(&self, ax: Axis, f: usize) -> bool {
        self.face_cells[ax.index()][f] == 1
    }

    #[inline]
    pub fn edge_inside_count(&self, ax: Axis, e: usize) -> u8 {
        self.edge_cells[ax.index()][e]
    }

    #[inline]
    pub fn edge_is_interior(&self, ax: Axis, e: usize) -> bool {
        self.edge_cells[ax.index()][e] == 4
    }

    #[inline]
    pub fn edge_is_boundary(&self, ax: Axis, e: usize) -> bool {
        let n = self.edge_cells[ax.index()][e];
        n > 0 && n < 4
    }

    /// JSON-friendly descriptor with a run-length encoded mask.
    pub fn descriptor(&self) -> DomainDescriptor {
        let mut runs: Vec<(bool, usize)> = Vec::new();
        for &m in &self.mask {
            match runs.last_mut() {
                Some((v, n)) if *v == m => *n += 1,
                _ => runs.push((m, 1)),
            }
        }
        DomainDescriptor {
            shape: self.kind.clone(),
            counts: self.counts,
            lengths: self.lengths,
            mask_rle: runs,
        }
    }

    /// SHA-256 of the canonical descriptor JSON.
    pub fn content_hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(&self.descriptor()).expect("descriptor serializes");
        Sha256::digest(&json).into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDescriptor {
    pub shape: DomainKind,
    pub counts: [usize; 3],
    pub lengths: [f64; 3],
    pub mask_rle: Vec<(bool, usize)>,
}

impl DomainDescriptor {
    pub fn to_domain(&self) -> Result<VoxelDomain> {
        let mut mask = Vec::new();
        for &(v, n) in &self.mask_rle {
            mask.extend(std::iter::repeat_n(v, n));
        }
        check_box_args(self.counts, self.lengths)?;
        VoxelDomain::from_parts(self.shape.clone(), self.counts, self.lengths, mask)
    }
}

/// A boundary face with its outward normal `sign · e_axis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryFace {
    pub axis: Axis,
    pub index: usize,
    pub sign: i8,
}

impl BoundaryFace {
    pub fn normal(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis.index()] = self.sign as f64;
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GridEdge {
    pub axis: Axis,
    pub index: usize,
}

impl PartialOrd for Axis {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Axis {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.index().cmp(&other.index())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub boundary_faces: Vec<BoundaryFace>,
    pub reentrant_edges: Vec<GridEdge>,
}

impl BoundaryData {
    /// Σ (n · area) per axis; vanishes for any closed voxel surface.
    pub fn net_area_vector(&self, dom: &VoxelDomain) -> [f64; 3] {
        let h = dom.spacing();
        let area = [h[1] * h[2], h[2] * h[0], h[0] * h[1]];
        let mut s = [0.0; 3];
        for bf in &self.boundary_faces {
            let a = bf.axis.index();
            s[a] += bf.sign as f64 * area[a];
        }
        s
    }
}

/// Boundary faces carry the outward normal of their single inside cell;
/// re-entrant edges are those with exactly three of their four cells inside.
pub fn classify_boundary(dom: &VoxelDomain) -> BoundaryData {
    let mut boundary_faces = Vec::new();
    for ax in Axis::ALL {
        for f in 0..dom.num_faces(ax) {
            if dom.face_is_boundary(ax, f) {
                let p = dom.face_coords(ax, f);
                let hi = [p[0] as isize, p[1] as isize, p[2] as isize];
                // inside cell on the high side means the normal points down
                let sign = if dom.inside_at(hi) { -1 } else { 1 };
                boundary_faces.push(BoundaryFace {
                    axis: ax,
                    index: f,
                    sign,
                });
            }
        }
    }
    let mut reentrant_edges = Vec::new();
    for ax in Axis::ALL {
        for e in 0..dom.num_edges(ax) {
            if dom.edge_inside_count(ax, e) == 3 {
                reentrant_edges.push(GridEdge { axis: ax, index: e });
            }
        }
    }
    BoundaryData {
        boundary_faces,
        reentrant_edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: [f64; 3] = [1.0, 1.0, 1.0];

    // Independent enumeration: walk every cell and count exposed sides.
    fn brute_boundary_faces(dom: &VoxelDomain) -> usize {
        let n = dom.counts();
        let mut count = 0;
        for k in 0..n[2] as isize {
            for j in 0..n[1] as isize {
                for i in 0..n[0] as isize {
                    if !dom.inside_at([i, j, k]) {
                        continue;
                    }
                    for a in 0..3 {
                        for d in [-1, 1] {
                            let mut q = [i, j, k];
                            q[a] += d;
                            if !dom.inside_at(q) {
                                count += 1;
                            }
                        }
                    }
                }
            }
        }
        count
    }

    // Independent 4-cell scan around every grid line segment.
    fn brute_reentrant(dom: &VoxelDomain) -> usize {
        let n = dom.counts();
        let mut count = 0;
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            let mut dims = [n[0] as isize, n[1] as isize, n[2] as isize];
            dims[b] += 1;
            dims[c] += 1;
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let mut inside = 0;
                        for (db, dc) in [(-1, -1), (-1, 0), (0, -1), (0, 0)] {
                            let mut p = [i, j, k];
                            p[b] += db;
                            p[c] += dc;
                            if dom.inside_at(p) {
                                inside += 1;
                            }
                        }
                        if inside == 3 {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn box_domain_basics() {
        let d = VoxelDomain::build_box([2, 2, 2], UNIT).unwrap();
        assert_eq!(d.num_inside(), 8);
        assert_eq!(d.spacing(), [0.5, 0.5, 0.5]);

        let d = VoxelDomain::build_box([4, 4, 4], UNIT).unwrap();
        assert_eq!(d.num_inside(), 64);
        let bd = classify_boundary(&d);
        assert_eq!(bd.boundary_faces.len(), brute_boundary_faces(&d));
        assert_eq!(bd.boundary_faces.len(), 96);
        assert!(bd.reentrant_edges.is_empty());
    }

    #[test]
    fn box_rejects_bad_arguments() {
        assert!(matches!(
            VoxelDomain::build_box([1, 2, 2], UNIT),
            Err(Error::InvalidArgument(_))
        ));
        assert!(VoxelDomain::build_box([2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        assert!(VoxelDomain::build_box([2, 2, 2], [1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn box_face_count_formula() {
        for n in [[2, 3, 4], [5, 2, 7], [3, 3, 3]] {
            let d = VoxelDomain::build_box(n, UNIT).unwrap();
            let bd = classify_boundary(&d);
            let expect = 2 * (n[0] * n[1] + n[1] * n[2] + n[2] * n[0]);
            assert_eq!(bd.boundary_faces.len(), expect);
        }
    }

    #[test]
    fn lshape_counts() {
        let xy = [Axis::X, Axis::Y];
        let d = VoxelDomain::build_lshape([4, 4, 4], UNIT, xy).unwrap();
        assert_eq!(d.num_inside(), 48);
        let bd = classify_boundary(&d);
        assert_eq!(bd.reentrant_edges.len(), 4);
        assert_eq!(bd.reentrant_edges.len(), brute_reentrant(&d));
        for e in &bd.reentrant_edges {
            assert_eq!(e.axis, Axis::Z);
            let p = d.edge_coords(Axis::Z, e.index);
            assert_eq!((p[0], p[1]), (2, 2));
        }
        assert_eq!(bd.boundary_faces.len(), brute_boundary_faces(&d));

        let d = VoxelDomain::build_lshape([8, 8, 8], UNIT, xy).unwrap();
        assert_eq!(d.num_inside(), 384);
        assert!(matches!(
            VoxelDomain::build_lshape([5, 4, 4], UNIT, xy),
            Err(Error::InvalidArgument(_))
        ));
        assert!(VoxelDomain::build_lshape([4, 4, 4], UNIT, [Axis::X, Axis::X]).is_err());
    }

    #[test]
    fn fichera_counts() {
        let d = VoxelDomain::build_fichera([4, 4, 4], UNIT).unwrap();
        assert_eq!(d.num_inside(), 56);
        let bd = classify_boundary(&d);
        assert_eq!(bd.reentrant_edges.len(), brute_reentrant(&d));
        assert_eq!(bd.reentrant_edges.len(), 6);

        assert_eq!(VoxelDomain::build_fichera([8, 8, 8], UNIT).unwrap().num_inside(), 448);
        let d = VoxelDomain::build_fichera([2, 2, 2], UNIT).unwrap();
        assert_eq!(d.num_inside(), 7);
        // the removed cell is the one whose low corner is the center vertex
        assert!(!d.mask()[d.cell_index(1, 1, 1)]);
        assert!(VoxelDomain::build_fichera([4, 6, 5], UNIT).is_err());
    }

    #[test]
    fn disconnected_mask_rejected() {
        let mut mask = vec![false; 27];
        mask[0] = true;
        mask[26] = true;
        assert!(VoxelDomain::build_from_mask([3, 3, 3], UNIT, mask).is_err());
        assert!(VoxelDomain::build_from_mask([3, 3, 3], UNIT, vec![false; 27]).is_err());
        assert!(VoxelDomain::build_from_mask([3, 3, 3], UNIT, vec![true; 26]).is_err());
    }

    #[test]
    fn discrete_divergence_theorem() {
        let doms = [
            VoxelDomain::build_box([3, 4, 5], [1.0, 2.0, 0.5]).unwrap(),
            VoxelDomain::build_lshape([6, 4, 4], UNIT, [Axis::Y, Axis::Z]).unwrap(),
            VoxelDomain::build_fichera([6, 6, 6], UNIT).unwrap(),
        ];
        for d in &doms {
            let bd = classify_boundary(d);
            let s = bd.net_area_vector(d);
            let total: f64 = bd.boundary_faces.len() as f64 * d.spacing()[0];
            for v in s {
                assert!(v.abs() <= 1e-12 * total.max(1.0));
            }
        }
    }

    #[test]
    fn classification_is_idempotent() {
        let d = VoxelDomain::build_fichera([4, 4, 4], UNIT).unwrap();
        assert_eq!(classify_boundary(&d), classify_boundary(&d));
        // rebuilding from a descriptor gives an identical classification
        let d2 = d.descriptor().to_domain().unwrap();
        assert_eq!(classify_boundary(&d), classify_boundary(&d2));
    }

    #[test]
    fn outward_normals_point_away_from_inside() {
        let d = VoxelDomain::build_lshape([4, 4, 2], UNIT, [Axis::X, Axis::Y]).unwrap();
        let h = d.spacing();
        for bf in classify_boundary(&d).boundary_faces {
            let x = d.face_center(bf.axis, bf.index);
            let n = bf.normal();
            let probe = |s: f64| {
                let mut p = [0isize; 3];
                for a in 0..3 {
                    p[a] = ((x[a] + s * 0.5 * h[a] * n[a]) / h[a]).floor() as isize;
                }
                d.inside_at(p)
            };
            assert!(probe(-1.0));
            assert!(!probe(1.0));
        }
    }

    #[test]
    fn descriptor_json_roundtrip() {
        let d = VoxelDomain::build_lshape([4, 6, 2], [1.0, 1.5, 0.5], [Axis::X, Axis::Y]).unwrap();
        let json = serde_json::to_string(&d.descriptor()).unwrap();
        let back: DomainDescriptor = serde_json::from_str(&json).unwrap();
        let d2 = back.to_domain().unwrap();
        assert_eq!(d, d2);
        assert_eq!(d.content_hash(), d2.content_hash());
    }

    mod props {
        use super::*;
        use crate::testutil::random_domain;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn net_area_vanishes(d in random_domain()) {
                let bd = classify_boundary(&d);
                let scale = bd.boundary_faces.len() as f64;
                for v in bd.net_area_vector(&d) {
                    prop_assert!(v.abs() <= 1e-12 * scale.max(1.0));
                }
            }

            #[test]
            fn boundary_faces_match_cell_scan(d in random_domain()) {
                // walk the cells backwards and look at all six neighbours
                let mut scanned = Vec::new();
                for c in (0..d.num_cells()).rev() {
                    if !d.mask()[c] {
                        continue;
                    }
                    let p = d.cell_coords(c);
                    for ax in Axis::ALL {
                        let a = ax.index();
                        for (off, sign) in [(0usize, -1i8), (1, 1)] {
                            let mut q = [p[0] as isize, p[1] as isize, p[2] as isize];
                            q[a] += 2 * off as isize - 1;
                            if !d.inside_at(q) {
                                let mut f = p;
                                f[a] += off;
                                scanned.push((ax, d.face_index(ax, f[0], f[1], f[2]), sign));
                            }
                        }
                    }
                }
                scanned.sort_by_key(|&(ax, i, s)| (ax, i, s));
                let mut classified: Vec<_> = classify_boundary(&d).boundary_faces.iter().map(|b| (b.axis, b.index, b.sign)).collect();
                classified.sort_by_key(|&(ax, i, s)| (ax, i, s));
                prop_assert_eq!(classified, scanned);
                prop_assert_eq!(classify_boundary(&d), classify_boundary(&d));
            }

            #[test]
            fn box_boundary_face_count(nx in 2usize..8, ny in 2usize..8, nz in 2usize..8) {
                let d = VoxelDomain::build_box([nx, ny, nz], UNIT).unwrap();
                prop_assert_eq!(classify_boundary(&d).boundary_faces.len(), 2 * (nx * ny + ny * nz + nz * nx));
            }
        }
    }
}
