use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{quantize, Roadmap, RoadmapError, VertexId, ViewBookmark};
use crate::config::{distance, Configuration};

pub const ROADMAP_FORMAT_VERSION: u32 = 1;

/// On-disk roadmap document. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadmapFile {
    pub format_version: u32,
    pub epsilon: f64,
    pub vertices: Vec<Configuration>,
    pub edges: Vec<[u32; 2]>,
    pub views: Vec<ViewBookmark>,
}

impl Roadmap {
    pub fn to_file(&self) -> RoadmapFile {
        RoadmapFile {
            format_version: ROADMAP_FORMAT_VERSION,
            epsilon: self.epsilon,
            vertices: self.vertices.clone(),
            edges: self.edges.iter().map(|(a, b)| [a.0, b.0]).collect(),
            views: self.views.as_slice().to_vec(),
        }
    }

    /// Rebuilds a roadmap, checking every structural invariant on the way.
    pub fn from_file(file: RoadmapFile) -> Result<Self, RoadmapError> {
        if file.format_version != ROADMAP_FORMAT_VERSION {
            return Err(RoadmapError::UnsupportedVersion(file.format_version));
        }
        let mut rm = Roadmap::new(file.epsilon)?;
        for (i, q) in file.vertices.iter().enumerate() {
            q.check_finite()?;
            let id = VertexId(i as u32);
            if rm.by_key.insert(quantize(q), id).is_some() {
                return Err(RoadmapError::Malformed(format!(
                    "vertex {i} duplicates an earlier vertex"
                )));
            }
            rm.vertices.push(*q);
            rm.adjacency.push(Vec::new());
            rm.index.insert(q, id);
        }
        let n = rm.vertices.len() as u32;
        let mut seen = HashSet::with_capacity(file.edges.len());
        for &[a, b] in &file.edges {
            if a >= n || b >= n {
                return Err(RoadmapError::Malformed(format!(
                    "edge [{a}, {b}] references a missing vertex"
                )));
            }
            if a == b {
                return Err(RoadmapError::Malformed(format!("self-edge on vertex {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(RoadmapError::Malformed(format!(
                    "duplicate edge [{a}, {b}]"
                )));
            }
            let d = distance(&rm.vertices[a as usize], &rm.vertices[b as usize]);
            if d > rm.epsilon {
                return Err(RoadmapError::Malformed(format!(
                    "edge [{a}, {b}] has length {d} > epsilon {}",
                    rm.epsilon
                )));
            }
            rm.add_edge(VertexId(a), VertexId(b));
        }
        for view in file.views {
            if view.vertex_id.0 >= n {
                return Err(RoadmapError::Malformed(format!(
                    "view {:?} references missing vertex {}",
                    view.label, view.vertex_id.0
                )));
            }
            rm.clock = rm.clock.max(view.saved_at);
            rm.views.push(view)?;
        }
        Ok(rm)
    }

    /// Writes the roadmap as a single-line JSON document plus newline.
    pub fn save_json<W: Write>(&self, mut w: W) -> Result<(), RoadmapError> {
        serde_json::to_writer(&mut w, &self.to_file())
            .map_err(|e| RoadmapError::Malformed(e.to_string()))?;
        w.write_all(b"\n")
            .map_err(|e| RoadmapError::Malformed(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        let mut buf = Vec::new();
        self.save_json(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn load_json<R: Read>(r: R) -> Result<Self, RoadmapError> {
        let file: RoadmapFile =
            serde_json::from_reader(r).map_err(|e| RoadmapError::Malformed(e.to_string()))?;
        Self::from_file(file)
    }
}
