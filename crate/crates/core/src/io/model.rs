//! Line-oriented model files.
//!
//! ```text
//! # comment
//! NODES
//! 0 0.0 0.0 0.0
//! ...
//! CELLS
//! 0 0 1 2 3
//! FIXED
//! 4            # all components held at zero
//! 5 z          # only u_z held
//! DRIVEN
//! 7 0 0 -0.02 z
//! EBC_SURFACE
//! 7 8 9
//! MATERIAL
//! neo_hookean young=3000 poisson=0.49 density=1000
//! CONFIG
//! radius 0.044
//! ```
//!
//! Node and cell lines start with their zero-based index, which must match
//! their position. Unset CONFIG keys take these defaults:
//!
//! | key | default |
//! |---|---|
//! | `radius` | 2.2 × mean background-cell edge |
//! | `mu` | 1e-7 |
//! | `integration` | `fixed` |
//! | `rule_order` | 1 (fixed) or 2 (adaptive base rule) |
//! | `tau` | 0.01 |
//! | `scheme` | 8 |
//! | `max_depth` | 6 |
//! | `ebc` | `ebciem` with an `EBC_SURFACE`, else `sebciem` |
//! | `mass_lumping` | `diagonal` (or `row_sum`) |
//! | `mode` | `steady` |
//! | `timestep` | wave-speed step × `safety`, capped by the highest mode |
//! | `safety` | 0.5 |
//! | `damping` | twice the slowest shear frequency estimate |
//! | `adaptive_damping` | `true` |
//! | `mass_scale` | 1 |
//! | `load_duration` | 1 s |
//! | `end_time` | `load_duration` |
//! | `convergence_tol` | 1e-7 × model diameter |
//! | `convergence_window` | 10 |
//! | `max_iterations` | 200000 |
//! | `load_stages` | 1 |
//! | `snapshots` | 0 |

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::cloud::{AxisMask, BoundarySpec, CloudError, DrivenNode, FixedNode, NodeCloud, Vec3};
use crate::materials::{Material, MaterialError, NeoHookeanParams, OgdenParams};
use crate::mmls::MmlsConfig;
use crate::quadrature::{AdaptiveConfig, Subdivision};
use crate::solver::{EbcMethod, IntegrationScheme, MassLumping, Mode, Model, SolverConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line} ({section}): {message}")]
    Parse { line: usize, section: String, message: String },
    #[error("{section}: {message}")]
    Validation { section: String, message: String },
}

fn invalid(section: &str, message: impl fmt::Display) -> ModelError {
    ModelError::Validation { section: section.into(), message: message.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaterialSpec {
    NeoHookean { young: f64, poisson: f64 },
    Ogden { a1: f64, mu1: f64, d1: f64 },
}

impl MaterialSpec {
    pub fn build(&self) -> Result<Material, MaterialError> {
        Ok(match *self {
            MaterialSpec::NeoHookean { young, poisson } => Material::NeoHookean(NeoHookeanParams::new(young, poisson)?),
            MaterialSpec::Ogden { a1, mu1, d1 } => Material::Ogden(OgdenParams::new(a1, mu1, d1)?),
        })
    }

    pub fn from_material(m: &Material) -> Self {
        match m {
            Material::NeoHookean(p) => MaterialSpec::NeoHookean { young: p.young, poisson: p.poisson },
            Material::Ogden(p) => MaterialSpec::Ogden { a1: p.a1, mu1: p.mu1, d1: p.d1 },
        }
    }
}

/// CONFIG values as written; `None` means "use the default".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSettings {
    pub radius: Option<f64>,
    pub mu: Option<f64>,
    pub integration: Option<String>,
    pub rule_order: Option<usize>,
    pub tau: Option<f64>,
    pub scheme: Option<usize>,
    pub max_depth: Option<usize>,
    pub ebc: Option<String>,
    pub mass_lumping: Option<String>,
    pub mode: Option<String>,
    pub timestep: Option<f64>,
    pub safety: Option<f64>,
    pub damping: Option<f64>,
    pub adaptive_damping: Option<bool>,
    pub mass_scale: Option<f64>,
    pub load_duration: Option<f64>,
    pub end_time: Option<f64>,
    pub convergence_tol: Option<f64>,
    pub convergence_window: Option<usize>,
    pub max_iterations: Option<usize>,
    pub load_stages: Option<usize>,
    pub snapshots: Option<usize>,
}

macro_rules! impl_settings {
    ($($key:ident),*) => {
        impl RunSettings {
            const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $(stringify!($key) => {
                        self.$key = Some(parse_value(value)?);
                        Ok(())
                    })*
                    _ => Err(format!("unknown key `{key}`; expected one of {}", Self::KEYS.join(", "))),
                }
            }

            fn write(&self, out: &mut String) {
                $(if let Some(v) = &self.$key {
                    let _ = writeln!(out, "{} {}", stringify!($key), v);
                })*
            }
        }
    };
}

impl_settings!(
    radius,
    mu,
    integration,
    rule_order,
    tau,
    scheme,
    max_depth,
    ebc,
    mass_lumping,
    mode,
    timestep,
    safety,
    damping,
    adaptive_damping,
    mass_scale,
    load_duration,
    end_time,
    convergence_tol,
    convergence_window,
    max_iterations,
    load_stages,
    snapshots
);

fn parse_value<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse `{s}` as {}", std::any::type_name::<T>()))
}

/// Parsed model file, kept close to the text so that writing it back and
/// reparsing gives an equal value.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub nodes: Vec<Vec3>,
    pub cells: Vec<[usize; 4]>,
    pub fixed: Vec<FixedNode>,
    pub driven: Vec<DrivenNode>,
    pub surface: Vec<[usize; 3]>,
    pub material: MaterialSpec,
    pub density: f64,
    pub settings: RunSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Nodes,
    Cells,
    Fixed,
    Driven,
    Surface,
    Material,
    Config,
}

impl Section {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "NODES" => Section::Nodes,
            "CELLS" => Section::Cells,
            "FIXED" => Section::Fixed,
            "DRIVEN" => Section::Driven,
            "EBC_SURFACE" => Section::Surface,
            "MATERIAL" => Section::Material,
            "CONFIG" => Section::Config,
            _ => return None,
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Section::Nodes => "NODES",
            Section::Cells => "CELLS",
            Section::Fixed => "FIXED",
            Section::Driven => "DRIVEN",
            Section::Surface => "EBC_SURFACE",
            Section::Material => "MATERIAL",
            Section::Config => "CONFIG",
        }
    }
}

impl ModelFile {
    pub fn from_model(model: &Model, settings: RunSettings) -> Self {
        Self {
            nodes: model.cloud.nodes().to_vec(),
            cells: model.cloud.cells().to_vec(),
            fixed: model.boundary.fixed().to_vec(),
            driven: model.boundary.driven().to_vec(),
            surface: model.surface.clone(),
            material: MaterialSpec::from_material(&model.material),
            density: model.cloud.density(),
            settings: RunSettings { load_duration: Some(model.boundary.load_duration()), ..settings },
        }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut nodes = Vec::new();
        let mut cells = Vec::new();
        let mut fixed = Vec::new();
        let mut driven = Vec::new();
        let mut surface = Vec::new();
        let mut material = None;
        let mut settings = RunSettings::default();
        let mut section: Option<Section> = None;
        let mut seen = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = Section::parse(line) {
                if seen.contains(&s) {
                    return Err(ModelError::Parse {
                        line: line_no,
                        section: s.name().into(),
                        message: "section appears twice".into(),
                    });
                }
                seen.push(s);
                section = Some(s);
                continue;
            }
            let Some(sec) = section else {
                return Err(ModelError::Parse {
                    line: line_no,
                    section: "-".into(),
                    message: format!("expected a section header, found `{line}`"),
                });
            };
            let err = |message: String| ModelError::Parse { line: line_no, section: sec.name().into(), message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match sec {
                Section::Nodes => {
                    let v = numbers::<f64>(&fields[1.min(fields.len())..], 3).map_err(err)?;
                    expect_index(fields[0], nodes.len()).map_err(err)?;
                    nodes.push(Vec3::new(v[0], v[1], v[2]));
                }
                Section::Cells => {
                    let v = numbers::<usize>(&fields[1.min(fields.len())..], 4).map_err(err)?;
                    expect_index(fields[0], cells.len()).map_err(err)?;
                    cells.push([v[0], v[1], v[2], v[3]]);
                }
                Section::Fixed => {
                    let (node, mask) = match fields.as_slice() {
                        [n] => (parse_value(n).map_err(err)?, AxisMask::ALL),
                        [n, m] => (parse_value(n).map_err(err)?, parse_mask(m).map_err(err)?),
                        _ => return Err(err("expected `node [mask]`".into())),
                    };
                    fixed.push(FixedNode { node, mask });
                }
                Section::Driven => {
                    let (head, mask) = match fields.len() {
                        4 => (&fields[..], AxisMask::ALL),
                        5 => (&fields[..4], parse_mask(fields[4]).map_err(err)?),
                        _ => return Err(err("expected `node ux uy uz [mask]`".into())),
                    };
                    let node = parse_value(head[0]).map_err(err)?;
                    let d = numbers::<f64>(&head[1..], 3).map_err(err)?;
                    driven.push(DrivenNode { node, mask, displacement: Vec3::new(d[0], d[1], d[2]) });
                }
                Section::Surface => {
                    let v = numbers::<usize>(&fields, 3).map_err(err)?;
                    surface.push([v[0], v[1], v[2]]);
                }
                Section::Material => {
                    if material.is_some() {
                        return Err(err("only one material line is allowed".into()));
                    }
                    material = Some(parse_material(&fields).map_err(err)?);
                }
                Section::Config => match fields.as_slice() {
                    [k, v] => settings.set(k, v).map_err(err)?,
                    _ => return Err(err("expected `key value`".into())),
                },
            }
        }
        let (material, density) = material.ok_or_else(|| invalid("MATERIAL", "missing material line"))?;
        let file = Self { nodes, cells, fixed, driven, surface, material, density, settings };
        file.check_references()?;
        Ok(file)
    }

    fn check_references(&self) -> Result<(), ModelError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(invalid("NODES", "no nodes"));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if let Some(v) = c.iter().find(|&&v| v >= n) {
                return Err(invalid("CELLS", format!("cell {i} references node {v}, only {n} nodes")));
            }
        }
        if let Some(f) = self.fixed.iter().find(|f| f.node >= n) {
            return Err(invalid("FIXED", format!("node {} does not exist ({n} nodes)", f.node)));
        }
        if let Some(d) = self.driven.iter().find(|d| d.node >= n) {
            return Err(invalid("DRIVEN", format!("node {} does not exist ({n} nodes)", d.node)));
        }
        if let Some(t) = self.surface.iter().find(|t| t.iter().any(|&v| v >= n)) {
            return Err(invalid("EBC_SURFACE", format!("triangle {t:?} references a missing node")));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("NODES\n");
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {} {}", p.x, p.y, p.z);
        }
        out.push_str("CELLS\n");
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {} {} {}", c[0], c[1], c[2], c[3]);
        }
        if !self.fixed.is_empty() {
            out.push_str("FIXED\n");
            for f in &self.fixed {
                if f.mask == AxisMask::ALL {
                    let _ = writeln!(out, "{}", f.node);
                } else {
                    let _ = writeln!(out, "{} {}", f.node, f.mask);
                }
            }
        }
        if !self.driven.is_empty() {
            out.push_str("DRIVEN\n");
            for d in &self.driven {
                let u = d.displacement;
                if d.mask == AxisMask::ALL {
                    let _ = writeln!(out, "{} {} {} {}", d.node, u.x, u.y, u.z);
                } else {
                    let _ = writeln!(out, "{} {} {} {} {}", d.node, u.x, u.y, u.z, d.mask);
                }
            }
        }
        if !self.surface.is_empty() {
            out.push_str("EBC_SURFACE\n");
            for t in &self.surface {
                let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
            }
        }
        out.push_str("MATERIAL\n");
        let _ = match self.material {
            MaterialSpec::NeoHookean { young, poisson } => {
                writeln!(out, "neo_hookean young={young} poisson={poisson} density={}", self.density)
            }
            MaterialSpec::Ogden { a1, mu1, d1 } => {
                writeln!(out, "ogden a1={a1} mu1={mu1} d1={d1} density={}", self.density)
            }
        };
        let mut cfg = String::new();
        self.settings.write(&mut cfg);
        if !cfg.is_empty() {
            out.push_str("CONFIG\n");
            out.push_str(&cfg);
        }
        out
    }

    /// Validated model and solver configuration with defaults applied.
    pub fn build(&self) -> Result<(Model, SolverConfig), ModelError> {
        let cloud = NodeCloud::new(self.nodes.clone(), self.cells.clone(), self.density).map_err(|e| {
            let section = match e {
                CloudError::BadDensity(_) => "MATERIAL",
                CloudError::NoCells | CloudError::IndexOutOfRange { .. } | CloudError::DegenerateCell { .. } => {
                    "CELLS"
                }
                _ => "NODES",
            };
            invalid(section, e)
        })?;
        let s = &self.settings;
        let load_duration = s.load_duration.unwrap_or(1.0);
        let boundary = BoundarySpec::new(cloud.len(), self.fixed.clone(), self.driven.clone(), load_duration)
            .map_err(|e| invalid("FIXED/DRIVEN", e))?;
        let material = self.material.build().map_err(|e| invalid("MATERIAL", e))?;

        let radius = s.radius.unwrap_or_else(|| 2.2 * mean_edge(&cloud));
        let mut cfg = SolverConfig::new(radius);
        cfg.mmls = MmlsConfig::with_mu(radius, s.mu.unwrap_or(crate::mmls::DEFAULT_MU));
        cfg.integration = match s.integration.as_deref().unwrap_or("fixed") {
            "fixed" => IntegrationScheme::Fixed { rule_order: s.rule_order.unwrap_or(1) },
            "adaptive" => {
                let d = AdaptiveConfig::default();
                let scheme = match s.scheme {
                    Some(a) => Subdivision::from_arity(a).map_err(|e| invalid("CONFIG", e))?,
                    None => d.scheme,
                };
                IntegrationScheme::Adaptive(AdaptiveConfig {
                    tau: s.tau.unwrap_or(d.tau),
                    scheme,
                    max_depth: s.max_depth.unwrap_or(d.max_depth),
                    rule_order: s.rule_order.unwrap_or(d.rule_order),
                })
            }
            other => return Err(invalid("CONFIG", format!("integration must be fixed or adaptive, got `{other}`"))),
        };
        cfg.ebc_method = match &s.ebc {
            Some(name) => EbcMethod::parse(name)
                .ok_or_else(|| invalid("CONFIG", format!("unknown ebc method `{name}`")))?,
            None if self.surface.is_empty() => EbcMethod::Sebciem,
            None => EbcMethod::Ebciem(crate::solver::SurfaceRule::Gauss3),
        };
        if let Some(name) = &s.mass_lumping {
            cfg.mass_lumping = MassLumping::parse(name)
                .ok_or_else(|| invalid("CONFIG", format!("mass_lumping must be diagonal or row_sum, got `{name}`")))?;
        }
        if let Some(m) = &s.mode {
            cfg.mode = Mode::parse(m).ok_or_else(|| invalid("CONFIG", format!("mode must be steady or dynamic, got `{m}`")))?;
        }
        cfg.timestep = s.timestep;
        cfg.safety = s.safety.unwrap_or(cfg.safety);
        cfg.damping = s.damping;
        cfg.adaptive_damping = s.adaptive_damping.unwrap_or(cfg.adaptive_damping);
        cfg.mass_scale = s.mass_scale.unwrap_or(cfg.mass_scale);
        cfg.end_time = s.end_time;
        cfg.convergence_tol = s.convergence_tol;
        cfg.convergence_window = s.convergence_window.unwrap_or(cfg.convergence_window);
        cfg.max_iterations = s.max_iterations.unwrap_or(cfg.max_iterations);
        cfg.load_stages = s.load_stages.unwrap_or(cfg.load_stages);
        cfg.snapshots = s.snapshots.unwrap_or(cfg.snapshots);
        cfg.validate().map_err(|e| invalid("CONFIG", e))?;
        Ok((Model { cloud, boundary, material, surface: self.surface.clone() }, cfg))
    }
}

impl fmt::Display for ModelFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Parses and validates a model file in one go.
pub fn load_model(path: &Path) -> Result<(Model, SolverConfig), ModelError> {
    ModelFile::load(path)?.build()
}

fn mean_edge(cloud: &NodeCloud) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in cloud.cells() {
        for a in 0..4 {
            for b in a + 1..4 {
                sum += (cloud.node(c[a]) - cloud.node(c[b])).norm();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn expect_index(field: &str, expected: usize) -> Result<(), String> {
    let i: usize = parse_value(field)?;
    if i != expected {
        return Err(format!("index {i} out of sequence, expected {expected}"));
    }
    Ok(())
}

fn numbers<T: FromStr>(fields: &[&str], count: usize) -> Result<Vec<T>, String> {
    if fields.len() != count {
        return Err(format!("expected {count} values, found {}", fields.len()));
    }
    fields.iter().map(|f| parse_value(f)).collect()
}

fn parse_mask(s: &str) -> Result<AxisMask, String> {
    AxisMask::parse(s).ok_or_else(|| format!("bad component mask `{s}`; use letters from xyz"))
}

fn parse_material(fields: &[&str]) -> Result<(MaterialSpec, f64), String> {
    let (name, rest) = fields.split_first().ok_or("empty material line")?;
    let mut kv = std::collections::BTreeMap::new();
    for f in rest {
        let (k, v) = f.split_once('=').ok_or_else(|| format!("expected key=value, found `{f}`"))?;
        if kv.insert(k, parse_value::<f64>(v)?).is_some() {
            return Err(format!("`{k}` given twice"));
        }
    }
    let mut take = |k: &str| kv.remove(k).ok_or_else(|| format!("{name} needs `{k}=`"));
    let spec = match *name {
        "neo_hookean" => MaterialSpec::NeoHookean { young: take("young")?, poisson: take("poisson")? },
        "ogden" => MaterialSpec::Ogden { a1: take("a1")?, mu1: take("mu1")?, d1: take("d1")? },
        other => return Err(format!("unknown material `{other}`; expected neo_hookean or ogden")),
    };
    let density = take("density")?;
    if let Some(k) = kv.keys().next() {
        return Err(format!("unexpected parameter `{k}`"));
    }
    Ok((spec, density))
}
