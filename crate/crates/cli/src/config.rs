//! Pipeline configuration (TOML).
//!
//! ```toml
//! [phantom]
//! breast_radius_mm = 20.0
//!
//! [mesh]
//! elements_min = 10000
//! elements_max = 50000
//!
//! [materials]
//! poisson_ratio = 0.45
//!
//! [materials.gland]
//! youngs_modulus = 15100.0
//!
//! [compression]
//! axis = "y"
//! compression_fraction = 0.3
//!
//! [solver]
//! kind = "both"
//!
//! [solver.explicit]
//! safety_factor = 0.5
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Relative input paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mammofem_core::material::{DEFAULT_DENSITY, FAT_YOUNGS, GLAND_YOUNGS};
use mammofem_core::{
    Axis, CompressionSetup, ElementBudget, ExplicitParams, ImplicitParams, Material, MaterialTable, PhantomSpec,
    Tissue,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<InputConfig>,
    pub phantom: Option<PhantomSpec>,
    pub mesh: MeshConfig,
    pub materials: MaterialsConfig,
    pub compression: CompressionSetup,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Label volume (.mhd or .nii).
    pub labels: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Softmax outputs to ensemble when no label volume is given.
    pub probabilities: Vec<PathBuf>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub elements_min: usize,
    pub elements_max: usize,
    /// Isotropic resampling pitch. Defaults to the finest input spacing.
    pub pitch_mm: Option<f64>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            elements_min: 10_000,
            elements_max: 50_000,
            pitch_mm: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TissueConfig {
    /// Pa
    pub youngs_modulus: Option<f64>,
    pub poisson_ratio: Option<f64>,
    /// kg/m³
    pub density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialsConfig {
    /// Shared Poisson ratio unless a tissue overrides it.
    pub poisson_ratio: f64,
    pub fat: TissueConfig,
    pub gland: TissueConfig,
}

impl Default for MaterialsConfig {
    fn default() -> Self {
        MaterialsConfig {
            poisson_ratio: mammofem_core::material::DEFAULT_POISSON,
            fat: TissueConfig::default(),
            gland: TissueConfig::default(),
        }
    }
}

const POISSON_RANGE: std::ops::RangeInclusive<f64> = 0.45..=0.499;

impl MaterialsConfig {
    pub fn table(&self) -> Result<MaterialTable> {
        let mut table = MaterialTable::breast_defaults(self.poisson_ratio)?;
        for (tissue, cfg, youngs) in [
            (Tissue::Fat, &self.fat, FAT_YOUNGS),
            (Tissue::Gland, &self.gland, GLAND_YOUNGS),
        ] {
            let nu = cfg.poisson_ratio.unwrap_or(self.poisson_ratio);
            if !POISSON_RANGE.contains(&nu) {
                bail!("{} poisson_ratio {nu} outside [0.45, 0.499]", tissue.name());
            }
            let m = Material::new(
                tissue.name(),
                cfg.youngs_modulus.unwrap_or(youngs),
                nu,
                cfg.density.unwrap_or(DEFAULT_DENSITY),
            )?;
            table.materials.insert(tissue.code(), m);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Explicit,
    Implicit,
    #[default]
    Both,
}

impl SolverChoice {
    pub fn kinds(self) -> Vec<mammofem_core::solvers::SolverKind> {
        use mammofem_core::solvers::SolverKind::*;
        match self {
            SolverChoice::Explicit => vec![Explicit],
            SolverChoice::Implicit => vec![Implicit],
            SolverChoice::Both => vec![Explicit, Implicit],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverChoice,
    pub explicit: ExplicitParams,
    pub implicit: ImplicitParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub case_id: String,
    /// Volume format for written maps: "mhd" or "nii".
    pub format: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            case_id: "case".into(),
            format: "mhd".into(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverChoice>,
    #[arg(long)]
    pub compression_fraction: Option<f64>,
    #[arg(long)]
    pub axis: Option<Axis>,
    #[arg(long)]
    pub elements_min: Option<usize>,
    #[arg(long)]
    pub elements_max: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Gland jitter seed for phantom input.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Config file (if any) with flags applied on top.
    pub fn from_overrides(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(o);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(input) = &mut self.input {
            input.labels.as_mut().map(fix);
            input.mask.as_mut().map(fix);
            input.probabilities.iter_mut().for_each(fix);
        }
        fix(&mut self.output.dir);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.solver {
            self.solver.kind = s;
        }
        if let Some(f) = o.compression_fraction {
            self.compression.compression_fraction = f;
        }
        if let Some(a) = o.axis {
            self.compression.axis = a;
        }
        if let Some(n) = o.elements_min {
            self.mesh.elements_min = n;
        }
        if let Some(n) = o.elements_max {
            self.mesh.elements_max = n;
        }
        if let Some(d) = &o.out_dir {
            self.output.dir = d.clone();
        }
        if let Some(seed) = o.seed {
            if let Some(p) = &mut self.phantom {
                p.jitter_seed = Some(seed);
            }
        }
    }

    pub fn budget(&self) -> Result<ElementBudget> {
        Ok(ElementBudget::new(self.mesh.elements_min, self.mesh.elements_max)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_source()?;
        self.validate_settings()
    }

    /// Exactly one of `[input]` and `[phantom]`, with existing files.
    pub fn validate_source(&self) -> Result<()> {
        match (&self.input, &self.phantom) {
            (Some(_), Some(_)) => bail!("config has both [input] and [phantom]; give exactly one"),
            (None, None) => bail!("config needs an [input] or a [phantom] section"),
            (Some(input), None) => {
                match (&input.labels, input.probabilities.len()) {
                    (Some(_), 0) => {}
                    (Some(_), _) => bail!("[input] has both labels and probabilities; give one"),
                    (None, 0) => bail!("[input] needs labels or probabilities"),
                    (None, 1) => bail!("ensembling needs at least two probability volumes"),
                    (None, n) => {
                        if let Some(w) = &input.weights {
                            if w.len() != n {
                                bail!("{} weights for {n} probability volumes", w.len());
                            }
                        }
                    }
                }
                let paths = input.labels.iter().chain(&input.mask).chain(&input.probabilities);
                for p in paths {
                    if !p.is_file() {
                        bail!("input file {} does not exist", p.display());
                    }
                }
            }
            (None, Some(p)) => p.validate()?,
        }
        Ok(())
    }

    /// Everything except the volume source.
    pub fn validate_settings(&self) -> Result<()> {
        if let Some(p) = self.mesh.pitch_mm {
            if !(p > 0.0 && p.is_finite()) {
                bail!("mesh pitch_mm must be positive, got {p}");
            }
        }
        self.budget()?;
        self.materials.table()?;
        self.compression.validate()?;
        self.solver.explicit.validate()?;
        self.solver.implicit.validate()?;
        if !["mhd", "nii"].contains(&self.output.format.as_str()) {
            bail!("output format must be \"mhd\" or \"nii\", got {:?}", self.output.format);
        }
        if self.output.case_id.is_empty() {
            bail!("output case_id must not be empty");
        }
        Ok(())
    }
}
