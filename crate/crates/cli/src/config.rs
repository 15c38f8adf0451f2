//! Validated run configurations. Each one is serialized into the header of
//! every file the run writes.

use std::env;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Serialize, Serializer};
use sketchfem::assembly::ProblemKind;
use sketchfem::data::ProblemData;
use sketchfem::mesh::io::load_mesh_prefix;
use sketchfem::mesh::{generate_structured, BcLayout, Mesh};
use sketchfem::rng::query_rng;

use crate::commands::{bench::BenchConfig, generate::GenerateConfig, precompute::PrecomputeConfig};
use crate::commands::{probe::ProbeConfig, solve::SolveConfig};
use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "SKETCHFEM_THREADS";

pub fn version() -> &'static str {
    concat!("sketchfem v", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Generate(GenerateConfig),
    Precompute(PrecomputeConfig),
    Solve(SolveConfig),
    Bench(BenchConfig),
    Probe(ProbeConfig),
}

impl RunConfig {
    /// `# config:` and `# version:` comment lines, newline terminated.
    pub fn provenance(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("# config: {json}\n# version: {}\n", version())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Bc {
    Dirichlet,
    Neumann,
    Mixed,
}

impl From<Bc> for BcLayout {
    fn from(bc: Bc) -> Self {
        match bc {
            Bc::Dirichlet => BcLayout::AllDirichlet,
            Bc::Neumann => BcLayout::AllNeumann,
            Bc::Mixed => BcLayout::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Dirichlet,
    Neumann,
}

impl From<Problem> for ProblemKind {
    fn from(p: Problem) -> Self {
        match p {
            Problem::Dirichlet => ProblemKind::Dirichlet,
            Problem::Neumann => ProblemKind::Neumann,
        }
    }
}

/// Dirichlet when the mesh has Dirichlet facets, Neumann otherwise.
pub fn resolve_problem(requested: Option<Problem>, mesh: &Mesh) -> ProblemKind {
    match requested {
        Some(p) => p.into(),
        None if mesh.has_dirichlet() => ProblemKind::Dirichlet,
        None => ProblemKind::Neumann,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum MeshSource {
    File { prefix: PathBuf },
    Structured { dim: usize, m: usize, bc: Bc },
}

impl MeshSource {
    pub fn structured(dim: usize, m: usize, bc: Bc) -> CliResult<Self> {
        if !(2..=3).contains(&dim) {
            return Err(CliError::Usage(format!("--dim must be 2 or 3, got {dim}")));
        }
        if m == 0 {
            return Err(CliError::Usage("--m must be at least 1".into()));
        }
        Ok(MeshSource::Structured { dim, m, bc })
    }

    pub fn load(&self) -> CliResult<Mesh> {
        Ok(match self {
            MeshSource::File { prefix } => load_mesh_prefix(prefix)?,
            MeshSource::Structured { dim, m, bc } => generate_structured(*dim, *m, (*bc).into())?,
        })
    }
}

/// Forcing and boundary data: a built-in preset or a JSON file.
#[derive(Debug, Clone, PartialEq)]
pub enum DataChoice {
    DeskDirichlet,
    DeskNeumann,
    SphereDirichlet,
    File(PathBuf),
}

impl DataChoice {
    pub fn default_for(problem: ProblemKind) -> Self {
        match problem {
            ProblemKind::Dirichlet => DataChoice::DeskDirichlet,
            ProblemKind::Neumann => DataChoice::DeskNeumann,
        }
    }

    pub fn resolve(&self) -> CliResult<ProblemData> {
        Ok(match self {
            DataChoice::DeskDirichlet => ProblemData::desk_dirichlet(),
            DataChoice::DeskNeumann => ProblemData::desk_neumann(),
            DataChoice::SphereDirichlet => ProblemData::sphere_dirichlet(),
            DataChoice::File(path) => {
                let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Data(format!("{}: invalid problem data: {e}", path.display())))?
            }
        })
    }
}

impl FromStr for DataChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "desk-dirichlet" => DataChoice::DeskDirichlet,
            "desk-neumann" => DataChoice::DeskNeumann,
            "sphere-dirichlet" => DataChoice::SphereDirichlet,
            "" => return Err("empty data spec".into()),
            path => DataChoice::File(PathBuf::from(path)),
        })
    }
}

impl fmt::Display for DataChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataChoice::DeskDirichlet => f.write_str("desk-dirichlet"),
            DataChoice::DeskNeumann => f.write_str("desk-neumann"),
            DataChoice::SphereDirichlet => f.write_str("sphere-dirichlet"),
            DataChoice::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl Serialize for DataChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// `p ~ U[a, b]`
    Uniform,
    /// `p = exp(-U[a, b])`
    Exp,
}

/// Per-element parameter sampler, written `uniform:a:b` or `exp:a:b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub lo: f64,
    pub hi: f64,
}

/// Parameter draws use streams from here up so they never share a stream
/// with the sketch of the same query.
const PARAM_STREAM_BASE: u64 = 1 << 63;

impl Sampler {
    pub fn draw(&self, k: usize, seed: u64, query: u64) -> Vec<f64> {
        let mut rng = query_rng(seed, PARAM_STREAM_BASE + query);
        (0..k)
            .map(|_| {
                let u = if self.lo == self.hi { self.lo } else { rng.gen_range(self.lo..=self.hi) };
                match self.kind {
                    SamplerKind::Uniform => u,
                    SamplerKind::Exp => (-u).exp(),
                }
            })
            .collect()
    }
}

impl FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [kind, lo, hi] = parts[..] else {
            return Err(format!("sampler {s:?} must look like uniform:a:b or exp:a:b"));
        };
        let kind = match kind {
            "uniform" => SamplerKind::Uniform,
            "exp" => SamplerKind::Exp,
            other => return Err(format!("unknown sampler family {other:?} (uniform, exp)")),
        };
        let num = |t: &str| t.parse::<f64>().map_err(|_| format!("cannot parse {t:?} in sampler {s:?}"));
        let (lo, hi) = (num(lo)?, num(hi)?);
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(format!("sampler bounds must be finite with a <= b, got {lo}, {hi}"));
        }
        if kind == SamplerKind::Uniform && lo <= 0.0 {
            return Err(format!("uniform sampler needs a > 0 for admissible parameters, got {lo}"));
        }
        Ok(Sampler { kind, lo, hi })
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Exp => "exp",
        };
        write!(f, "{kind}:{}:{}", self.lo, self.hi)
    }
}

impl Serialize for Sampler {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Worker pool capped by `SKETCHFEM_THREADS` when set.
pub fn worker_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_parsing() {
        let s: Sampler = "uniform:0.1:100".parse().unwrap();
        assert_eq!((s.kind, s.lo, s.hi), (SamplerKind::Uniform, 0.1, 100.0));
        assert_eq!(s.to_string(), "uniform:0.1:100");
        let e: Sampler = "exp:1e-4:1".parse().unwrap();
        assert_eq!(e.kind, SamplerKind::Exp);
        assert!("uniform:0:1".parse::<Sampler>().is_err());
        assert!("uniform:2:1".parse::<Sampler>().is_err());
        assert!("gamma:1:2".parse::<Sampler>().is_err());
        assert!("uniform:1".parse::<Sampler>().is_err());
    }

    #[test]
    fn sampler_ranges_and_determinism() {
        let u: Sampler = "uniform:0.01:1".parse().unwrap();
        let a = u.draw(500, 3, 7);
        assert!(a.iter().all(|&p| (0.01..=1.0).contains(&p)));
        assert_eq!(a, u.draw(500, 3, 7));
        assert_ne!(a, u.draw(500, 3, 8));
        let e: Sampler = "exp:0.0001:1".parse().unwrap();
        let b = e.draw(500, 3, 7);
        assert!(b.iter().all(|&p| p >= (-1.0f64).exp() && p <= (-0.0001f64).exp()));
        let c: Sampler = "uniform:2:2".parse().unwrap();
        assert!(c.draw(4, 0, 0).iter().all(|&p| p == 2.0));
    }

    #[test]
    fn mesh_source_validation() {
        assert!(matches!(MeshSource::structured(2, 0, Bc::Dirichlet), Err(CliError::Usage(_))));
        assert!(matches!(MeshSource::structured(4, 2, Bc::Dirichlet), Err(CliError::Usage(_))));
        let mesh = MeshSource::structured(3, 2, Bc::Neumann).unwrap().load().unwrap();
        assert_eq!(mesh.n_elements(), 48);
        assert_eq!(resolve_problem(None, &mesh), ProblemKind::Neumann);
    }

    #[test]
    fn data_choice_round_trip() {
        for s in ["desk-dirichlet", "desk-neumann", "sphere-dirichlet", "data/f.json"] {
            assert_eq!(s.parse::<DataChoice>().unwrap().to_string(), s);
        }
    }
}
