//! Run configuration: a single TOML or JSON document, validated as a whole so
//! every violation is reported at once.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Axis, DomainDescriptor, VoxelDomain};
use crate::error::{Error, Result, Violation};
use crate::fields::{AppliedField, EdgeField, FaceField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Grid,
    Galerkin,
    ZeroPotential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Lshape,
    Fichera,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: Shape,
    pub counts: [usize; 3],
    #[serde(default = "unit_lengths")]
    pub lengths: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed: Option<[Axis; 2]>,
    /// JSON domain descriptor, for `kind = "mask"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<String>,
}

fn unit_lengths() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AppliedSpec {
    Uniform {
        value: [f64; 3],
    },
    /// JSON file with `faces` and `edges` arrays in the grid's flat layout.
    Tabulated {
        file: String,
        #[serde(default = "yes")]
        divergence_free: bool,
    },
}

impl Default for AppliedSpec {
    fn default() -> Self {
        AppliedSpec::Uniform { value: [0.0; 3] }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForcingSpec {
    #[default]
    None,
    Manufactured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub eta: f64,
    pub kappa: f64,
    pub t_final: f64,
    #[serde(default)]
    pub applied: AppliedSpec,
    #[serde(default)]
    pub forcing: ForcingSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Lagged,
    Picard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub picard_max: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_solver_iter: usize,
    #[serde(default = "default_bound_tol")]
    pub bound_tol: f64,
}

fn one() -> usize {
    1
}
fn default_picard_tol() -> f64 {
    1e-10
}
fn default_solver_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    2000
}
fn default_bound_tol() -> f64 {
    1e-2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Random,
    Preset,
    File,
}

/// Named initial states.
pub const PRESETS: [&str; 5] = ["superconducting", "normal", "uniform", "smooth", "manufactured"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub delta: f64,
    #[serde(default = "default_perturb_seed")]
    pub seed: u64,
}

fn default_perturb_seed() -> u64 {
    0x9e37
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub kind: InitialKind,
    /// Upper bound of |ψ₀| for random data; the modulus for `uniform`.
    #[serde(default = "unit")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
}

fn unit() -> f64 {
    1.0
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            kind: InitialKind::Random,
            amplitude: 1.0,
            preset: None,
            path: None,
            perturbation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Snapshot cadence in steps.
    #[serde(default = "default_every")]
    pub every: usize,
    #[serde(default = "yes")]
    pub vtk: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

fn default_every() -> usize {
    10
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            every: default_every(),
            vtk: true,
            name: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "yes")]
    pub energy: bool,
    #[serde(default = "yes")]
    pub bound: bool,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            energy: true,
            bound: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalerkinSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_file: Option<String>,
    #[serde(default = "default_eig_tol")]
    pub eig_tol: f64,
}

fn default_n() -> usize {
    16
}
fn default_eig_tol() -> f64 {
    1e-9
}

impl Default for GalerkinSpec {
    fn default() -> Self {
        GalerkinSpec {
            n: default_n(),
            basis_file: None,
            eig_tol: default_eig_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSpec,
    pub params: ParamSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub galerkin: GalerkinSpec,
    /// Directory that relative file references resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    fn sniff(text: &str) -> Format {
        if text.trim_start().starts_with('{') {
            Format::Json
        } else {
            Format::Toml
        }
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let cfg: SimConfig = match Format::sniff(text) {
        Format::Json => serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?,
        Format::Toml => toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let cfg: SimConfig = match Format::sniff(&text) {
        Format::Json => serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?,
        Format::Toml => toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?,
    };
    let cfg = SimConfig {
        base_dir: path.parent().map(Path::to_path_buf),
        ..cfg
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Deserialize)]
struct TabulatedField {
    faces: Vec<f64>,
    edges: Vec<f64>,
}

impl SimConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(canon.as_bytes()))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        match &self.base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.params.t_final / self.time.dt).round() as usize
    }

    pub fn build_domain(&self) -> Result<Arc<VoxelDomain>> {
        let d = &self.domain;
        let dom = match d.kind {
            Shape::Box => VoxelDomain::build_box(d.counts, d.lengths)?,
            Shape::Lshape => VoxelDomain::build_lshape(d.counts, d.lengths, d.removed.unwrap_or([Axis::X, Axis::Y]))?,
            Shape::Fichera => VoxelDomain::build_fichera(d.counts, d.lengths)?,
            Shape::Mask => {
                let file = d.mask_file.as_deref().ok_or_else(|| Error::invalid("mask domain needs mask_file"))?;
                let text = std::fs::read_to_string(self.resolve(file))?;
                let desc: DomainDescriptor = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
                desc.to_domain()?
            }
        };
        Ok(Arc::new(dom))
    }

    pub fn build_applied(&self, dom: &Arc<VoxelDomain>) -> Result<AppliedField> {
        match &self.params.applied {
            AppliedSpec::Uniform { value } => Ok(AppliedField::Uniform(*value)),
            AppliedSpec::Tabulated { file, divergence_free } => {
                let text = std::fs::read_to_string(self.resolve(file))?;
                let t: TabulatedField = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
                let mut faces = FaceField::zeros(dom);
                let mut edges = EdgeField::zeros(dom);
                if t.faces.len() != faces.data.len() || t.edges.len() != edges.data.len() {
                    return Err(Error::invalid(format!(
                        "tabulated field needs {} face and {} edge samples",
                        faces.data.len(),
                        edges.data.len()
                    )));
                }
                faces.data = t.faces;
                edges.data = t.edges;
                Ok(AppliedField::Sampled {
                    faces,
                    edges,
                    divergence_free: *divergence_free,
                })
            }
        }
    }

    /// Checks every invariant and returns all violations together.
    pub fn validate(&self) -> Result<()> {
        let v = std::cell::RefCell::new(Vec::new());
        let bad = |field: &str, message: String| {
            v.borrow_mut().push(Violation {
                field: field.to_string(),
                message,
            })
        };
        let p = &self.params;
        let t = &self.time;
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(p.eta) {
            bad("params.eta", format!("must be positive, got {}", p.eta));
        }
        if !pos(p.kappa) {
            bad("params.kappa", format!("must be positive, got {}", p.kappa));
        }
        if !pos(p.t_final) {
            bad("params.t_final", format!("must be positive, got {}", p.t_final));
        }
        if !pos(t.dt) {
            bad("time.dt", format!("must be positive, got {}", t.dt));
        } else if pos(p.t_final) {
            if t.dt > p.t_final {
                bad("time.dt", format!("exceeds t_final ({} > {})", t.dt, p.t_final));
            } else {
                let n = (p.t_final / t.dt).round();
                if (n * t.dt - p.t_final).abs() > 1e-9 * p.t_final {
                    bad("time.dt", format!("must divide t_final = {} into whole steps", p.t_final));
                }
            }
        }
        if t.picard_max < 1 {
            bad("time.picard_max", "must be at least 1".into());
        }
        if t.scheme == Scheme::Lagged && t.picard_max != 1 {
            bad("time.picard_max", "lagged scheme takes exactly one coupling pass".into());
        }
        if t.picard_tol.is_nan() || t.picard_tol <= 0.0 {
            bad("time.picard_tol", format!("must be positive, got {}", t.picard_tol));
        }
        if !(pos(t.solver_tol) && t.solver_tol < 1.0) {
            bad("time.solver_tol", format!("must lie in (0, 1), got {}", t.solver_tol));
        }
        if t.max_solver_iter == 0 {
            bad("time.max_solver_iter", "must be at least 1".into());
        }
        if !(t.bound_tol >= 0.0 && t.bound_tol.is_finite()) {
            bad("time.bound_tol", format!("must be nonnegative, got {}", t.bound_tol));
        }

        let d = &self.domain;
        if d.counts.iter().any(|&c| c < 2) {
            bad("domain.counts", format!("every count must be at least 2, got {:?}", d.counts));
        }
        if d.lengths.iter().any(|&l| !pos(l)) {
            bad("domain.lengths", format!("every length must be positive, got {:?}", d.lengths));
        }
        match d.kind {
            Shape::Lshape => {
                let r = d.removed.unwrap_or([Axis::X, Axis::Y]);
                if r[0] == r[1] {
                    bad("domain.removed", "axes must differ".into());
                } else if r.iter().any(|a| !d.counts[a.index()].is_multiple_of(2)) {
                    bad("domain.counts", "L-shape needs even counts on the removed axes".into());
                }
            }
            Shape::Fichera if d.counts.iter().any(|c| c % 2 != 0) => {
                bad("domain.counts", "Fichera domain needs even counts".into());
            }
            Shape::Mask if d.mask_file.is_none() => bad("domain.mask_file", "required for mask domains".into()),
            _ => {}
        }
        if d.kind != Shape::Lshape && d.removed.is_some() {
            bad("domain.removed", "only meaningful for lshape".into());
        }

        let init = &self.initial;
        match init.kind {
            InitialKind::Random => {
                if !(0.0..=1.0).contains(&init.amplitude) {
                    bad("initial.amplitude", format!("random data needs amplitude in [0, 1], got {}", init.amplitude));
                }
            }
            InitialKind::Preset => match init.preset.as_deref() {
                None => bad("initial.preset", "preset name required".into()),
                Some(name) if !PRESETS.contains(&name) => {
                    bad("initial.preset", format!("unknown preset {name:?}; expected one of {PRESETS:?}"))
                }
                _ => {}
            },
            InitialKind::File => {
                if init.path.is_none() {
                    bad("initial.path", "state file required".into());
                }
            }
        }
        if !(init.amplitude.is_finite() && init.amplitude >= 0.0) {
            bad("initial.amplitude", format!("must be finite and nonnegative, got {}", init.amplitude));
        }
        if let Some(pt) = &init.perturbation {
            if !(pt.delta >= 0.0 && pt.delta <= 1.0) {
                bad("initial.perturbation.delta", format!("must lie in [0, 1], got {}", pt.delta));
            }
        }
        if p.forcing == ForcingSpec::Manufactured && (d.kind != Shape::Box || d.lengths != [1.0; 3]) {
            bad("params.forcing", "manufactured forcing is defined on the unit cube only".into());
        }
        if self.output.every == 0 {
            bad("output.every", "must be at least 1".into());
        }
        if self.mode == Mode::Galerkin {
            if self.galerkin.n == 0 {
                bad("galerkin.n", "must be at least 1".into());
            }
            if !pos(self.galerkin.eig_tol) {
                bad("galerkin.eig_tol", "must be positive".into());
            }
        }
        if let AppliedSpec::Uniform { value } = &p.applied {
            if value.iter().any(|x| !x.is_finite()) {
                bad("params.applied.value", "entries must be finite".into());
            }
        }

        // checks that need the grid
        if v.borrow().is_empty() {
            match self.build_domain() {
                Err(e) => bad("domain", e.to_string()),
                Ok(dom) => {
                    if self.mode == Mode::Galerkin && self.galerkin.n > crate::galerkin::assemble_m(&dom).dof_count() {
                        bad("galerkin.n", "exceeds the number of interior-face unknowns".into());
                    }
                    match self.build_applied(&dom) {
                        Err(e) => bad("params.applied", e.to_string()),
                        Ok(h) if h.divergence_free_flag() => {
                            let div = crate::ops::div_face_to_center(&h.face_samples(&dom));
                            let m = div.max_abs();
                            if m > 1e-10 {
                                bad("params.applied", format!("flagged divergence-free but max |div H| = {m:e}"));
                            }
                        }
                        Ok(_) => {}
                    }
                }
            }
        }
        let v = v.into_inner();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[domain]
kind = "box"
counts = [4, 4, 4]

[params]
eta = 1.0
kappa = 1.0
t_final = 0.1

[time]
dt = 0.01
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.mode, Mode::Grid);
        assert_eq!(c.domain.lengths, [1.0; 3]);
        assert_eq!(c.time.scheme, Scheme::Lagged);
        assert_eq!(c.time.picard_max, 1);
        assert_eq!(c.time.solver_tol, 1e-10);
        assert_eq!(c.initial.kind, InitialKind::Random);
        assert_eq!(c.output.every, 10);
        assert_eq!(c.n_steps(), 10);
        assert_eq!(c.params.applied, AppliedSpec::Uniform { value: [0.0; 3] });
    }

    #[test]
    fn negative_eta_is_named() {
        let text = MINIMAL.replace("eta = 1.0", "eta = -1.0");
        match parse_config(&text) {
            Err(Error::Validation(v)) => assert!(v.iter().any(|x| x.field.contains("eta"))),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn all_violations_reported() {
        let text = MINIMAL
            .replace("eta = 1.0", "eta = 0.0")
            .replace("kappa = 1.0", "kappa = -2.0")
            .replace("dt = 0.01", "dt = 0.03");
        let Err(Error::Validation(v)) = parse_config(&text) else { panic!() };
        let fields: Vec<_> = v.iter().map(|x| x.field.as_str()).collect();
        assert!(fields.contains(&"params.eta") && fields.contains(&"params.kappa") && fields.contains(&"time.dt"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("kappa = 1.0", "kappa = 1.0\nbeta = 2.0");
        assert!(matches!(parse_config(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn toml_and_json_roundtrip() {
        let c = parse_config(MINIMAL).unwrap();
        let again = parse_config(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        let j = parse_config(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, j);
        assert_eq!(c.hash(), j.hash());
    }

    #[test]
    fn preset_must_resolve() {
        let text = format!("{MINIMAL}\n[initial]\nkind = \"preset\"\npreset = \"vortex\"\n");
        let Err(Error::Validation(v)) = parse_config(&text) else { panic!() };
        assert_eq!(v[0].field, "initial.preset");
    }

    #[test]
    fn odd_lshape_rejected() {
        let text = MINIMAL.replace("kind = \"box\"\ncounts = [4, 4, 4]", "kind = \"lshape\"\ncounts = [5, 4, 4]");
        let Err(Error::Validation(v)) = parse_config(&text) else { panic!() };
        assert_eq!(v[0].field, "domain.counts");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn serialize_parse_roundtrip(
                shape in prop::sample::select(vec!["box", "lshape", "fichera"]),
                half in [1usize..5, 1usize..5, 1usize..5],
                eta in 0.1f64..5.0,
                kappa in 0.1f64..10.0,
                steps in 1usize..200,
                dt in 1e-4f64..1e-1,
                seed in any::<u64>(),
                hz in -2.0f64..2.0,
                every in 1usize..50,
            ) {
                let counts = half.map(|h| 2 * h);
                let text = format!(
                    "seed = {seed}\n[domain]\nkind = \"{shape}\"\ncounts = {counts:?}\n[params]\neta = {eta:?}\nkappa = {kappa:?}\nt_final = {:?}\napplied = {{ kind = \"uniform\", value = [0.0, 0.0, {hz:?}] }}\n[time]\ndt = {dt:?}\n[output]\nevery = {every}\n",
                    dt * steps as f64
                );
                let c = parse_config(&text).unwrap();
                let toml_again = parse_config(&c.to_toml().unwrap()).unwrap();
                prop_assert_eq!(&c, &toml_again);
                let json_again = parse_config(&c.to_json().unwrap()).unwrap();
                prop_assert_eq!(&c, &json_again);
                prop_assert_eq!(c.hash(), json_again.hash());
            }
        }
    }
}
