use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BodyTemplate;
use crate::error::{MugError, Result};
use crate::numerics::{CsrMatrix, DenseMatrix};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseTriplets {
    pub rows: usize,
    pub cols: usize,
    /// `[row, col, value]`.
    pub entries: Vec<(usize, usize, f64)>,
}

/// On-disk template document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemplateFile {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub skeleton_edges: Vec<(usize, usize)>,
    pub regressor: Vec<Vec<f64>>,
    pub upsample: SparseTriplets,
    pub root_index: usize,
    pub joint_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_symmetry: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex_symmetry: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex_driver: Option<Vec<usize>>,
}

impl TemplateFile {
    pub fn from_template(t: &BodyTemplate) -> Self {
        Self {
            vertices: (0..t.vertex_count())
                .map(|i| {
                    let r = t.vertices.row(i);
                    [r[0], r[1], r[2]]
                })
                .collect(),
            faces: t.faces.clone(),
            skeleton_edges: t.skeleton_edges.clone(),
            regressor: t.regressor.to_rows(),
            upsample: SparseTriplets {
                rows: t.upsample.rows(),
                cols: t.upsample.cols(),
                entries: t.upsample.triplets().collect(),
            },
            root_index: t.root_index,
            joint_names: t.joint_names.clone(),
            joint_symmetry: t.joint_symmetry.clone(),
            vertex_symmetry: t.vertex_symmetry.clone(),
            vertex_driver: Some(t.vertex_driver.clone()),
        }
    }

    pub fn into_template(self) -> Result<BodyTemplate> {
        let mut problems = Vec::new();
        let vertices = DenseMatrix::from_rows(&self.vertices)?;
        let regressor = if self.regressor.is_empty() {
            problems.push("regressor is empty".to_string());
            DenseMatrix::zeros(0, vertices.rows())
        } else {
            match DenseMatrix::from_rows(&self.regressor) {
                Ok(r) => r,
                Err(e) => {
                    problems.push(format!("regressor is ragged: {e}"));
                    DenseMatrix::zeros(0, vertices.rows())
                }
            }
        };
        let upsample = match CsrMatrix::from_triplets(
            self.upsample.rows,
            self.upsample.cols,
            self.upsample.entries.iter().copied(),
        ) {
            Ok(u) => u,
            Err(e) => {
                problems.push(format!("upsample: {e}"));
                CsrMatrix::identity(vertices.rows())
            }
        };
        match BodyTemplate::from_parts(
            vertices,
            self.faces,
            self.skeleton_edges,
            regressor,
            upsample,
            self.root_index,
            self.joint_names,
            self.joint_symmetry,
            self.vertex_symmetry,
            self.vertex_driver,
        ) {
            Ok(t) if problems.is_empty() => Ok(t),
            Ok(_) => Err(MugError::Template(problems)),
            Err(MugError::Template(more)) => {
                problems.extend(more);
                Err(MugError::Template(problems))
            }
            Err(e) => Err(e),
        }
    }
}

/// Reads and validates a template document.
pub fn load_template(path: &Path) -> Result<BodyTemplate> {
    let text = std::fs::read_to_string(path)?;
    let file: TemplateFile = serde_json::from_str(&text)
        .map_err(|e| MugError::Template(vec![format!("malformed template file: {e}")]))?;
    file.into_template()
}

pub fn save_template(template: &BodyTemplate, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&TemplateFile::from_template(template))?;
    std::fs::write(path, text)?;
    Ok(())
}

impl BodyTemplate {
    pub fn load(path: &Path) -> Result<Self> {
        load_template(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_template(self, path)
    }

    /// SHA-256 of the canonical serialized template, hex encoded.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(&TemplateFile::from_template(self))
            .expect("template serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
