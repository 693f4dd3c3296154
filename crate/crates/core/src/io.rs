//! Run artifacts on disk: VTK snapshots, CSV series, binary states and a
//! JSON manifest with content hashes.
//!
//! Layout of a record directory:
//!
//! ```text
//! manifest.json      config, status, statistics, snapshot table, hashes
//! config.toml        the config that produced the run
//! series.csv         one row per step
//! snapshots/state_NNNNNN.bin, snapshots/snap_NNNNNN.vtk
//! snapshots/penultimate.bin
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, parse_config, SimConfig};
use crate::diagnostics::EnergyBreakdown;
use crate::domain::{Axis, DomainDescriptor, VoxelDomain};
use crate::dynamics::{Gauge, RunRecord, RunStatus, Snapshot, SolverStatistics, StepRow};
use crate::error::{Error, Result};
use crate::fields::{AppliedField, CenterField, FaceField, OrderParameterField, VectorPotentialField};
use crate::ops::curl_face_to_edge;

const STATE_MAGIC: &[u8; 8] = b"TDGLSTA1";

/// Binary state: magic, domain hash, time, cell and face counts, then
/// little-endian ψ (re, im pairs) and A.
pub fn write_state(path: &Path, t: f64, psi: &OrderParameterField, a: &VectorPotentialField) -> Result<()> {
    let dom = psi.domain();
    let mut buf = Vec::with_capacity(64 + 16 * psi.values.len() + 8 * a.data.len());
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&dom.content_hash());
    buf.extend_from_slice(&t.to_le_bytes());
    buf.extend_from_slice(&(psi.values.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(a.data.len() as u64).to_le_bytes());
    for v in &psi.values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    for v in &a.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_state(path: &Path, dom: &Arc<VoxelDomain>) -> Result<(f64, OrderParameterField, VectorPotentialField)> {
    let buf = fs::read(path).map_err(|e| Error::Record(format!("cannot read state {}: {e}", path.display())))?;
    let bad = |m: &str| Error::Record(format!("{}: {m}", path.display()));
    if buf.len() < 64 || &buf[..8] != STATE_MAGIC {
        return Err(bad("not a state file"));
    }
    if buf[8..40] != dom.content_hash() {
        return Err(bad("state belongs to a different domain"));
    }
    let f = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let u = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap()) as usize;
    let t = f(40);
    let (nc, nf) = (u(48), u(56));
    if nc != dom.num_cells() || buf.len() != 64 + 16 * nc + 8 * nf {
        return Err(bad("truncated or mis-sized state"));
    }
    let psi: Vec<Complex64> = (0..nc).map(|i| Complex64::new(f(64 + 16 * i), f(72 + 16 * i))).collect();
    let off = 64 + 16 * nc;
    let a: Vec<f64> = (0..nf).map(|i| f(off + 8 * i)).collect();
    let a = FaceField::from_data(dom, a);
    Ok((t, CenterField::from_values(dom, psi), a))
}

/// Legacy ASCII VTK on the cell grid: mask, Re ψ, Im ψ, |ψ|, cell-averaged A
/// and the edge-averaged ∇×A.
pub fn write_vtk(path: &Path, snap: &Snapshot, applied: &AppliedField) -> Result<()> {
    let dom = snap.psi.domain();
    let n = dom.counts();
    let h = dom.spacing();
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "tdgl step {} t {}", snap.step, snap.t)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", n[0] + 1, n[1] + 1, n[2] + 1)?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {} {} {}", h[0], h[1], h[2])?;
    writeln!(w, "CELL_DATA {}", dom.num_cells())?;
    writeln!(w, "SCALARS inside int 1\nLOOKUP_TABLE default")?;
    for &m in dom.mask() {
        writeln!(w, "{}", m as u8)?;
    }
    for (name, f) in [
        ("psi_re", (|z: Complex64| z.re) as fn(Complex64) -> f64),
        ("psi_im", |z: Complex64| z.im),
        ("psi_abs", |z: Complex64| z.norm()),
    ] {
        writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
        for v in &snap.psi.values {
            writeln!(w, "{:e}", f(*v))?;
        }
    }
    writeln!(w, "VECTORS A double")?;
    for [x, y, z] in cell_vectors(dom, |ax, i, j, k| {
        let lo = snap.a.at(ax, dom.face_index(ax, i, j, k));
        let mut q = [i, j, k];
        q[ax.index()] += 1;
        let hi = snap.a.at(ax, dom.face_index(ax, q[0], q[1], q[2]));
        0.5 * (lo + hi)
    }) {
        writeln!(w, "{x:e} {y:e} {z:e}")?;
    }
    let curl = curl_face_to_edge(&snap.a, applied);
    writeln!(w, "VECTORS curlA double")?;
    for [x, y, z] in cell_vectors(dom, |ax, i, j, k| {
        let (b, c) = ax.transverse();
        let mut s = 0.0;
        for db in 0..2 {
            for dc in 0..2 {
                let mut q = [i, j, k];
                q[b.index()] += db;
                q[c.index()] += dc;
                s += curl.at(ax, dom.edge_index(ax, q[0], q[1], q[2]));
            }
        }
        0.25 * s
    }) {
        writeln!(w, "{x:e} {y:e} {z:e}")?;
    }
    w.flush()?;
    Ok(())
}

fn cell_vectors(dom: &VoxelDomain, f: impl Fn(Axis, usize, usize, usize) -> f64) -> Vec<[f64; 3]> {
    let n = dom.counts();
    let mut out = Vec::with_capacity(dom.num_cells());
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                if dom.inside_at([i as isize, j as isize, k as isize]) {
                    out.push([f(Axis::X, i, j, k), f(Axis::Y, i, j, k), f(Axis::Z, i, j, k)]);
                } else {
                    out.push([0.0; 3]);
                }
            }
        }
    }
    out
}

const SERIES_HEADER: [&str; 22] = [
    "step",
    "t",
    "energy",
    "kinetic",
    "condensation",
    "field",
    "gauge",
    "dt_a2",
    "dt_psi2",
    "div_a2",
    "max_psi",
    "excess",
    "picard_iters",
    "picard_dist",
    "psi_iters",
    "psi_residual",
    "a_iters",
    "a_residual",
    "bound_flag",
    "psi_h1",
    "a_m",
    "lyapunov",
];

/// Writes the per-step series; the last column is the energy-inequality
/// defect of the step ending at that row (0 on the first row).
pub fn write_series_csv(path: &Path, rows: &[StepRow], eta: f64, kappa: f64, dt: f64) -> Result<()> {
    let lyap = crate::diagnostics::lyapunov_residual(rows, eta, kappa, dt);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SERIES_HEADER).map_err(csv_err)?;
    for (k, r) in rows.iter().enumerate() {
        let e = &r.energy;
        let l = if k == 0 { 0.0 } else { lyap[k - 1] };
        let rec = [
            r.step.to_string(),
            fmt(r.t),
            fmt(e.total),
            fmt(e.kinetic),
            fmt(e.condensation),
            fmt(e.field),
            fmt(e.gauge),
            fmt(r.dt_a2),
            fmt(r.dt_psi2),
            fmt(r.div_a2),
            fmt(r.max_psi),
            fmt(r.excess),
            r.picard_iters.to_string(),
            fmt(r.picard_dist),
            r.psi_iters.to_string(),
            fmt(r.psi_residual),
            r.a_iters.to_string(),
            fmt(r.a_residual),
            (r.bound_flag as u8).to_string(),
            fmt(r.psi_h1),
            fmt(r.a_m),
            fmt(l),
        ];
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(x: f64) -> String {
    // shortest round-trip representation
    format!("{x:?}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Record(format!("csv: {e}"))
}

pub fn read_series_csv(path: &Path) -> Result<Vec<StepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(SERIES_HEADER.iter().copied()) {
        return Err(Error::Record(format!("{}: unexpected series header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let g = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Record(format!("series column {}: {e}", SERIES_HEADER[i])))
        };
        let u = |i: usize| -> Result<usize> { Ok(g(i)? as usize) };
        rows.push(StepRow {
            step: u(0)?,
            t: g(1)?,
            energy: EnergyBreakdown {
                total: g(2)?,
                kinetic: g(3)?,
                condensation: g(4)?,
                field: g(5)?,
                gauge: g(6)?,
            },
            dt_a2: g(7)?,
            dt_psi2: g(8)?,
            div_a2: g(9)?,
            max_psi: g(10)?,
            excess: g(11)?,
            picard_iters: u(12)?,
            picard_dist: g(13)?,
            psi_iters: u(14)?,
            psi_residual: g(15)?,
            a_iters: u(16)?,
            a_residual: g(17)?,
            bound_flag: g(18)? != 0.0,
            psi_h1: g(19)?,
            a_m: g(20)?,
        });
    }
    Ok(rows)
}

/// Writes `(t, value…)` rows under the given column names.
pub fn write_table_csv(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(columns).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.iter().map(|&x| fmt(x))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: usize,
    pub t: f64,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vtk: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: SimConfig,
    pub domain: DomainDescriptor,
    pub gauge: Gauge,
    pub status: RunStatus,
    pub stats: SolverStatistics,
    pub warnings: Vec<String>,
    pub cap: Option<f64>,
    pub basis_size: Option<usize>,
    pub snapshots: Vec<SnapshotEntry>,
    pub penultimate: Option<SnapshotEntry>,
    /// SHA-256 of every artifact, keyed by relative path.
    pub files: BTreeMap<String, String>,
    /// SHA-256 over the sorted `path:hash` lines.
    pub content_hash: String,
}

impl Manifest {
    /// Output hashes excluding the binary states' host-independent header
    /// are not distinguished: a rerun must match every file exactly.
    pub fn same_outputs(&self, other: &Manifest) -> bool {
        self.files == other.files && self.content_hash == other.content_hash
    }
}

fn sha_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

/// Writes a full record directory and returns its manifest.
pub fn write_record(dir: &Path, rec: &RunRecord) -> Result<Manifest> {
    fs::create_dir_all(dir.join("snapshots"))?;
    let applied = rec.config.build_applied(&rec.domain)?;
    let mut files = BTreeMap::new();
    let mut put = |rel: &str| -> Result<()> {
        files.insert(rel.to_string(), sha_file(&dir.join(rel))?);
        Ok(())
    };
    fs::write(dir.join("config.toml"), rec.config.to_toml()?)?;
    put("config.toml")?;
    write_series_csv(&dir.join("series.csv"), &rec.rows, rec.config.params.eta, rec.config.params.kappa, rec.config.time.dt)?;
    put("series.csv")?;
    let mut snapshots = Vec::new();
    for s in &rec.snapshots {
        let state = format!("snapshots/state_{:06}.bin", s.step);
        write_state(&dir.join(&state), s.t, &s.psi, &s.a)?;
        put(&state)?;
        let vtk = if rec.config.output.vtk {
            let v = format!("snapshots/snap_{:06}.vtk", s.step);
            write_vtk(&dir.join(&v), s, &applied)?;
            put(&v)?;
            Some(v)
        } else {
            None
        };
        snapshots.push(SnapshotEntry { step: s.step, t: s.t, state, vtk });
    }
    let penultimate = match &rec.penultimate {
        Some(s) => {
            let state = "snapshots/penultimate.bin".to_string();
            write_state(&dir.join(&state), s.t, &s.psi, &s.a)?;
            put(&state)?;
            Some(SnapshotEntry {
                step: s.step,
                t: s.t,
                state,
                vtk: None,
            })
        }
        None => None,
    };
    let mut h = Sha256::new();
    for (k, v) in &files {
        h.update(format!("{k}:{v}\n").as_bytes());
    }
    let manifest = Manifest {
        config_hash: rec.config_hash.clone(),
        config: rec.config.clone(),
        domain: rec.domain.descriptor(),
        gauge: rec.gauge,
        status: rec.status.clone(),
        stats: rec.stats.clone(),
        warnings: rec.warnings.clone(),
        cap: rec.cap,
        basis_size: rec.basis_size,
        snapshots,
        penultimate,
        content_hash: hex(&h.finalize()),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Record(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::Record(format!("cannot read {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Record(format!("{}: {e}", p.display())))
}

/// Loads a record written by [`write_record`]. Every snapshot listed in the
/// manifest must be present.
pub fn load_record(dir: &Path) -> Result<RunRecord> {
    let m = read_manifest(dir)?;
    let domain = Arc::new(m.domain.to_domain()?);
    let load = |e: &SnapshotEntry| -> Result<Snapshot> {
        let p = dir.join(&e.state);
        if !p.exists() {
            return Err(Error::Record(format!("missing snapshot {} (step {})", e.state, e.step)));
        }
        let (t, psi, a) = read_state(&p, &domain)?;
        Ok(Snapshot { step: e.step, t, psi, a })
    };
    let snapshots = m.snapshots.iter().map(load).collect::<Result<Vec<_>>>()?;
    let penultimate = m.penultimate.as_ref().map(load).transpose()?;
    let rows = read_series_csv(&dir.join("series.csv"))?;
    let mut config = m.config.clone();
    // tabulated inputs resolve against the record's own copy of the config
    if config.base_dir.is_none() {
        config.base_dir = Some(PathBuf::from(dir));
    }
    Ok(RunRecord {
        config_hash: m.config_hash,
        config,
        domain,
        gauge: m.gauge,
        rows,
        snapshots,
        penultimate,
        stats: m.stats,
        status: m.status,
        warnings: m.warnings,
        cap: m.cap,
        basis_size: m.basis_size,
    })
}

/// Reads the config stored next to a manifest.
pub fn read_record_config(dir: &Path) -> Result<SimConfig> {
    parse_config(&fs::read_to_string(dir.join("config.toml"))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::random_psi;

    #[test]
    fn state_roundtrip_and_domain_check() {
        let dom = Arc::new(VoxelDomain::build_lshape([4, 4, 2], [1.0; 3], [Axis::X, Axis::Y]).unwrap());
        let psi = random_psi(&dom, 5, 1.0);
        let a = FaceField::from_fn_interior(&dom, |ax, x| x[ax.index()] * 0.3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        write_state(&p, 0.25, &psi, &a).unwrap();
        let (t, p2, a2) = read_state(&p, &dom).unwrap();
        assert_eq!((t, &p2, &a2), (0.25, &psi, &a));
        let other = Arc::new(VoxelDomain::build_box([4, 4, 2], [1.0; 3]).unwrap());
        assert!(matches!(read_state(&p, &other), Err(Error::Record(_))));
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_state(&p, &dom).is_err());
    }

    #[test]
    fn series_roundtrip_is_exact() {
        let rows: Vec<StepRow> = (0..4)
            .map(|k| StepRow {
                step: k,
                t: k as f64 * 0.1,
                energy: EnergyBreakdown {
                    kinetic: 0.1 / (k + 1) as f64,
                    total: 1.0 / 3.0,
                    ..Default::default()
                },
                max_psi: 0.9 + 1e-17 * k as f64,
                bound_flag: k == 2,
                picard_iters: k,
                ..Default::default()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_series_csv(&p, &rows, 1.0, 1.0, 0.1).unwrap();
        assert_eq!(read_series_csv(&p).unwrap(), rows);
    }

    #[test]
    fn vtk_header_and_counts() {
        let dom = Arc::new(VoxelDomain::build_box([2, 3, 2], [1.0; 3]).unwrap());
        let snap = Snapshot {
            step: 3,
            t: 0.5,
            psi: random_psi(&dom, 1, 1.0),
            a: FaceField::zeros(&dom),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.vtk");
        write_vtk(&p, &snap, &AppliedField::Uniform([0.0, 0.0, 1.0])).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains("DIMENSIONS 3 4 3"));
        assert!(text.contains("CELL_DATA 12"));
        // boundary edges carry H, interior edges the curl of A = 0; the corner
        // cell touches three boundary z-edges and one interior one
        let tail: Vec<&str> = text.split("VECTORS curlA double\n").nth(1).unwrap().lines().collect();
        assert_eq!(tail.len(), 12);
        assert_eq!(tail[0], "0e0 0e0 7.5e-1");
    }

    mod props {
        use super::*;
        use crate::testutil::{complex_center, faces, random_domain};
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn state_files_roundtrip(d in random_domain(), seed in any::<u64>(), t in 0.0f64..10.0) {
                let psi = complex_center(&d, seed);
                let a = faces(&d, seed ^ 1);
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("s.bin");
                write_state(&p, t, &psi, &a).unwrap();
                let (t2, psi2, a2) = read_state(&p, &d).unwrap();
                prop_assert_eq!(t2.to_bits(), t.to_bits());
                prop_assert_eq!(psi2, psi);
                prop_assert_eq!(a2, a);
            }
        }
    }
}
