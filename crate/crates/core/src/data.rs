//! Declarative forcing and boundary data, evaluated at element centroids
//! (forcing), facet centroids (Neumann flux) and nodes (Dirichlet values).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mesh::{hex, Mesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    /// `inside_value` within the closed ball, `outside_value` elsewhere.
    /// A center shorter than the mesh dimension is padded with zeros.
    BallIndicator {
        center: Vec<f64>,
        radius: f64,
        inside_value: f64,
        outside_value: f64,
    },
}

impl FieldSpec {
    pub fn zero() -> Self {
        FieldSpec::Constant { value: 0.0 }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FieldSpec::Constant { value } => *value,
            FieldSpec::BallIndicator { center, radius, inside_value, outside_value } => {
                let r2: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(q, xq)| {
                        let c = center.get(q).copied().unwrap_or(0.0);
                        (xq - c) * (xq - c)
                    })
                    .sum();
                if r2.sqrt() <= *radius {
                    *inside_value
                } else {
                    *outside_value
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            FieldSpec::Constant { value } => *value == 0.0,
            FieldSpec::BallIndicator { inside_value, outside_value, .. } => {
                *inside_value == 0.0 && *outside_value == 0.0
            }
        }
    }
}

/// Forcing `f`, Neumann flux `g^N` and Dirichlet data `g^D` of one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemData {
    pub forcing: FieldSpec,
    #[serde(default = "FieldSpec::zero")]
    pub neumann_flux: FieldSpec,
    #[serde(default = "FieldSpec::zero")]
    pub dirichlet_value: FieldSpec,
}

/// Data sampled on a concrete mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadData {
    /// per element
    pub forcing: Vec<f64>,
    /// per boundary facet (ignored on Dirichlet facets)
    pub neumann_flux: Vec<f64>,
    /// per node (ignored off Dirichlet nodes)
    pub dirichlet_value: Vec<f64>,
}

impl ProblemData {
    /// Off-center ball forcing `f = 5` (radius 0.3) inside the unit square / cube
    /// with homogeneous boundary data.
    pub fn desk_dirichlet() -> Self {
        ProblemData {
            forcing: FieldSpec::BallIndicator {
                center: vec![0.25, 0.5, 0.5],
                radius: 0.3,
                inside_value: 5.0,
                outside_value: 0.0,
            },
            neumann_flux: FieldSpec::zero(),
            dirichlet_value: FieldSpec::zero(),
        }
    }

    /// Zero forcing with unit flux through the boundary cap within 0.4 of (0, 1, 0).
    pub fn desk_neumann() -> Self {
        ProblemData {
            forcing: FieldSpec::zero(),
            neumann_flux: FieldSpec::BallIndicator {
                center: vec![0.0, 1.0, 0.0],
                radius: 0.4,
                inside_value: 1.0,
                outside_value: 0.0,
            },
            dirichlet_value: FieldSpec::zero(),
        }
    }

    /// Ball forcing of the unit-sphere Dirichlet benchmark: 5 within 0.3 of (-1/2, 0, 0).
    pub fn sphere_dirichlet() -> Self {
        ProblemData {
            forcing: FieldSpec::BallIndicator {
                center: vec![-0.5, 0.0, 0.0],
                radius: 0.3,
                inside_value: 5.0,
                outside_value: 0.0,
            },
            neumann_flux: FieldSpec::zero(),
            dirichlet_value: FieldSpec::zero(),
        }
    }

    pub fn sample(&self, mesh: &Mesh) -> LoadData {
        LoadData {
            forcing: (0..mesh.n_elements()).map(|l| self.forcing.eval(&mesh.centroid(l))).collect(),
            neumann_flux: (0..mesh.n_facets())
                .map(|t| self.neumann_flux.eval(&mesh.facet_centroid(t)))
                .collect(),
            dirichlet_value: (0..mesh.n_nodes()).map(|i| self.dirichlet_value.eval(mesh.node(i))).collect(),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        hex(Sha256::digest(&json).as_slice())
    }
}
