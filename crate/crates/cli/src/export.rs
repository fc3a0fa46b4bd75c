use std::fmt::Write as _;
use std::path::Path;

use mug_core::body_template::BodyTemplate;
use mug_core::numerics::DenseMatrix;
use mug_core::trainer::Reconstruction;
use mug_core::{MugError, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunEcho;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MeshFormat {
    Obj,
    Json,
}

/// One human's surface: camera-space vertices in mm and 0-based faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshObject {
    pub name: String,
    pub vertices: DenseMatrix,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshExport {
    pub run: RunEcho,
    pub seed: u64,
    pub objects: Vec<MeshObject>,
}

/// Collects per-human meshes, coarse or upsampled.
pub fn mesh_objects(rec: &Reconstruction, template: &BodyTemplate, full: bool, run: &RunEcho) -> Result<MeshExport> {
    let faces = if full {
        template.full_faces().ok_or_else(|| {
            MugError::Data("template upsampler is not a midpoint subdivision; full-resolution faces are unknown".into())
        })?
    } else {
        template.faces.clone()
    };
    let mut objects = Vec::with_capacity(rec.humans.len());
    for (k, h) in rec.humans.iter().enumerate() {
        let vertices = if full {
            match &h.mesh_full {
                Some(m) => m.clone(),
                None => template.upsample_mesh(&h.mesh)?,
            }
        } else {
            h.mesh.clone()
        };
        let expected = if full { template.full_vertex_count() } else { template.vertex_count() };
        if vertices.rows() != expected || vertices.cols() != 3 {
            return Err(MugError::Data(format!(
                "human {k} has a {:?} mesh; the template expects {expected} x 3",
                vertices.shape()
            )));
        }
        objects.push(MeshObject {
            name: format!("human_{k}"),
            vertices,
            faces: faces.clone(),
        });
    }
    Ok(MeshExport {
        run: run.clone(),
        seed: rec.seed,
        objects,
    })
}

pub fn to_obj(export: &MeshExport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# seed {}", export.seed);
    let _ = writeln!(s, "# run {}", serde_json::to_string(&export.run).expect("echo serializes"));
    let mut offset = 1;
    for o in &export.objects {
        let _ = writeln!(s, "o {}", o.name);
        for i in 0..o.vertices.rows() {
            let r = o.vertices.row(i);
            let _ = writeln!(s, "v {} {} {}", r[0], r[1], r[2]);
        }
        for f in &o.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + offset, f[1] + offset, f[2] + offset);
        }
        offset += o.vertices.rows();
    }
    s
}

pub fn write_mesh(export: &MeshExport, path: &Path, format: MeshFormat) -> Result<()> {
    let text = match format {
        MeshFormat::Obj => to_obj(export),
        MeshFormat::Json => serde_json::to_string_pretty(export)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_mesh_json(path: &Path) -> Result<MeshExport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| MugError::Data(format!("malformed mesh file {}: {e}", path.display())))
}
