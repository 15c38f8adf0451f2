use std::path::PathBuf;

use serde::Serialize;
use sketchfem::mesh::generate_structured;
use sketchfem::mesh::io::{ele_file, face_file, mesh_paths, node_file};

use crate::config::{Bc, MeshSource, RunConfig};
use crate::error::CliResult;
use crate::output::write_text;

#[derive(Debug, Clone, Serialize)]
pub struct GenerateConfig {
    pub dim: usize,
    pub m: usize,
    pub bc: Bc,
    /// file prefix; `.node`, `.ele` and `.face` are appended
    pub out: PathBuf,
}

impl GenerateConfig {
    pub fn new(dim: usize, m: usize, bc: Bc, out: PathBuf) -> CliResult<Self> {
        MeshSource::structured(dim, m, bc)?;
        Ok(GenerateConfig { dim, m, bc, out })
    }
}

pub fn run(cfg: &GenerateConfig) -> CliResult<[PathBuf; 3]> {
    let mesh = generate_structured(cfg.dim, cfg.m, cfg.bc.into())?;
    let header = RunConfig::Generate(cfg.clone()).provenance();
    let (node, ele, face) = mesh_paths(&cfg.out);
    write_text(&node, &(header.clone() + &node_file(&mesh)))?;
    write_text(&ele, &(header.clone() + &ele_file(&mesh)))?;
    write_text(&face, &(header + &face_file(&mesh)))?;
    log::info!(
        "wrote {} nodes, {} elements, {} boundary facets to {}.{{node,ele,face}}",
        mesh.n_nodes(),
        mesh.n_elements(),
        mesh.n_facets(),
        cfg.out.display()
    );
    Ok([node, ele, face])
}
