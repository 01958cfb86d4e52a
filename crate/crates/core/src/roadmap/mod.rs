//! Incremental roadmap of visited configurations and the library of saved views.
//!
//! Every configuration the operator drives through becomes a vertex; two
//! vertices are joined whenever they lie within `epsilon` of each other.
//! Vertex ids are dense, start at zero and are never reused or removed, so a
//! clone taken at any point stays a valid subgraph of the live roadmap.

mod file;
mod grid;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{distance, ConfigError, Configuration, AXES};

pub use file::{RoadmapFile, ROADMAP_FORMAT_VERSION};
pub use grid::GridIndex;

/// Density parameter used when none is configured.
pub const DEFAULT_EPSILON: f64 = 1.0;

/// Quantum for vertex identity, per axis (degrees or millimeters).
pub const DEDUP_QUANTUM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u32);

impl VertexId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoadmapError {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(#[from] ConfigError),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("empty roadmap")]
    EmptyRoadmap,
    #[error("view label must not be empty")]
    EmptyLabel,
    #[error("duplicate view label {0:?}")]
    DuplicateLabel(String),
    #[error("unknown view {0:?}")]
    UnknownView(String),
    #[error("malformed roadmap file: {0}")]
    Malformed(String),
    #[error("unsupported roadmap format version {0}")]
    UnsupportedVersion(u32),
}

/// A saved view: a label pinned to a roadmap vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewBookmark {
    pub label: String,
    pub vertex_id: VertexId,
    /// Value of the roadmap's observation clock when the view was saved.
    pub saved_at: u64,
}

/// Ordered list of bookmarks with unique labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewLibrary {
    views: Vec<ViewBookmark>,
}

impl ViewLibrary {
    pub fn get(&self, label: &str) -> Option<&ViewBookmark> {
        self.views.iter().find(|v| v.label == label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ViewBookmark> {
        self.views.iter()
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn as_slice(&self) -> &[ViewBookmark] {
        &self.views
    }

    fn push(&mut self, bookmark: ViewBookmark) -> Result<(), RoadmapError> {
        if bookmark.label.is_empty() {
            return Err(RoadmapError::EmptyLabel);
        }
        if self.get(&bookmark.label).is_some() {
            return Err(RoadmapError::DuplicateLabel(bookmark.label));
        }
        self.views.push(bookmark);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadmapStats {
    pub vertex_count: usize,
    pub edge_count: usize,
    pub view_count: usize,
}

/// What a single call to [`Roadmap::observe`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKind {
    /// Same configuration as the previous observation; nothing changed.
    Unchanged,
    /// Revisited an existing vertex.
    Matched,
    /// Inserted a new vertex together with `new_edges` edges.
    Inserted { new_edges: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub vertex: VertexId,
    pub kind: ObservationKind,
}

impl Observation {
    /// A new vertex that could not be connected to a non-empty roadmap.
    pub fn is_isolated(&self) -> bool {
        self.kind == ObservationKind::Inserted { new_edges: 0 } && self.vertex.0 > 0
    }
}

type QuantKey = [i64; AXES];

fn quantize(q: &Configuration) -> QuantKey {
    let a = q.to_array();
    std::array::from_fn(|i| (a[i] / DEDUP_QUANTUM).round() as i64)
}

#[derive(Debug, Clone)]
pub struct Roadmap {
    epsilon: f64,
    vertices: Vec<Configuration>,
    adjacency: Vec<Vec<(VertexId, f64)>>,
    edges: Vec<(VertexId, VertexId)>,
    index: GridIndex,
    by_key: HashMap<QuantKey, VertexId>,
    views: ViewLibrary,
    last_observed: Option<VertexId>,
    last_key: Option<QuantKey>,
    clock: u64,
}

impl Default for Roadmap {
    fn default() -> Self {
        Self::new(DEFAULT_EPSILON).expect("default epsilon is valid")
    }
}

impl Roadmap {
    pub fn new(epsilon: f64) -> Result<Self, RoadmapError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(RoadmapError::InvalidEpsilon(epsilon));
        }
        Ok(Self {
            epsilon,
            vertices: Vec::new(),
            adjacency: Vec::new(),
            edges: Vec::new(),
            index: GridIndex::new(epsilon),
            by_key: HashMap::new(),
            views: ViewLibrary::default(),
            last_observed: None,
            last_key: None,
            clock: 0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Feeds the current configuration into the roadmap.
    ///
    /// A repeat of the previous observation is a no-op. Otherwise the
    /// configuration is matched against existing vertices (after
    /// quantization to [`DEDUP_QUANTUM`]) or inserted and connected to every
    /// vertex within `epsilon`.
    pub fn observe(&mut self, q: Configuration) -> Result<Observation, RoadmapError> {
        q.check_finite()?;
        let key = quantize(&q);
        if let (Some(last), Some(last_key)) = (self.last_observed, self.last_key) {
            if last_key == key {
                return Ok(Observation {
                    vertex: last,
                    kind: ObservationKind::Unchanged,
                });
            }
        }
        self.clock += 1;
        self.last_key = Some(key);

        if let Some(&id) = self.by_key.get(&key) {
            self.last_observed = Some(id);
            return Ok(Observation {
                vertex: id,
                kind: ObservationKind::Matched,
            });
        }

        let neighbors = self.neighborhood(&q, self.epsilon);
        let id = VertexId(self.vertices.len() as u32);
        self.vertices.push(q);
        self.adjacency.push(Vec::with_capacity(neighbors.len()));
        self.index.insert(&q, id);
        self.by_key.insert(key, id);
        for &n in &neighbors {
            self.add_edge(n, id);
        }
        if neighbors.is_empty() && id.0 > 0 {
            log::warn!(
                "observation {q} is farther than epsilon={} from every vertex; {id} is isolated",
                self.epsilon
            );
        }
        self.last_observed = Some(id);
        Ok(Observation {
            vertex: id,
            kind: ObservationKind::Inserted {
                new_edges: neighbors.len(),
            },
        })
    }

    fn add_edge(&mut self, a: VertexId, b: VertexId) {
        let w = distance(&self.vertices[a.index()], &self.vertices[b.index()]);
        self.adjacency[a.index()].push((b, w));
        self.adjacency[b.index()].push((a, w));
        self.edges.push((a, b));
    }

    /// Ids of all vertices within `eps` of `q` (inclusive), ascending.
    pub fn neighborhood(&self, q: &Configuration, eps: f64) -> Vec<VertexId> {
        let mut out = Vec::new();
        self.index.for_each_candidate(q, eps, |id| {
            if distance(&self.vertices[id.index()], q) <= eps {
                out.push(id);
            }
        });
        out.sort_unstable();
        out
    }

    /// Closest vertex within `radius` of `q`; ties go to the smaller id.
    pub fn nearest_within(&self, q: &Configuration, radius: f64) -> Option<(VertexId, f64)> {
        let mut best: Option<(VertexId, f64)> = None;
        self.index.for_each_candidate(q, radius, |id| {
            let d = distance(&self.vertices[id.index()], q);
            if d > radius {
                return;
            }
            let better = match best {
                None => true,
                Some((bid, bd)) => d < bd || (d == bd && id < bid),
            };
            if better {
                best = Some((id, d));
            }
        });
        best
    }

    /// Exact (quantized) vertex lookup.
    pub fn find_vertex(&self, q: &Configuration) -> Option<VertexId> {
        self.by_key.get(&quantize(q)).copied()
    }

    /// Bookmarks the most recently observed vertex under `label`.
    pub fn save_view(&mut self, label: &str) -> Result<ViewBookmark, RoadmapError> {
        let vertex_id = self.last_observed.ok_or(RoadmapError::EmptyRoadmap)?;
        let bookmark = ViewBookmark {
            label: label.to_owned(),
            vertex_id,
            saved_at: self.clock,
        };
        self.views.push(bookmark.clone())?;
        Ok(bookmark)
    }

    pub fn stats(&self) -> RoadmapStats {
        RoadmapStats {
            vertex_count: self.vertices.len(),
            edge_count: self.edges.len(),
            view_count: self.views.len(),
        }
    }

    pub fn vertex(&self, id: VertexId) -> Option<&Configuration> {
        self.vertices.get(id.index())
    }

    pub fn vertices(&self) -> &[Configuration] {
        &self.vertices
    }

    /// Undirected edges in insertion order, lower id first.
    pub fn edges(&self) -> &[(VertexId, VertexId)] {
        &self.edges
    }

    /// Neighbors of `id` with their edge weights.
    pub fn neighbors(&self, id: VertexId) -> &[(VertexId, f64)] {
        self.adjacency
            .get(id.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, id: VertexId) -> bool {
        id.index() < self.vertices.len()
    }

    pub fn views(&self) -> &ViewLibrary {
        &self.views
    }

    pub fn view(&self, label: &str) -> Option<&ViewBookmark> {
        self.views.get(label)
    }

    /// The previous observation (`q_before`), if any.
    pub fn last_observed(&self) -> Option<VertexId> {
        self.last_observed
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q1(x: f64) -> Configuration {
        Configuration::new(x, 0.0, 0.0, 0.0)
    }

    fn chain() -> Roadmap {
        let mut rm = Roadmap::new(1.0).unwrap();
        for x in [0.0, 1.0, 2.0] {
            rm.observe(q1(x)).unwrap();
        }
        rm
    }

    #[test]
    fn first_observation() {
        let mut rm = Roadmap::new(1.0).unwrap();
        let obs = rm.observe(Configuration::ZERO).unwrap();
        assert_eq!(obs.kind, ObservationKind::Inserted { new_edges: 0 });
        assert!(!obs.is_isolated());
        assert_eq!(
            rm.stats(),
            RoadmapStats {
                vertex_count: 1,
                edge_count: 0,
                view_count: 0
            }
        );
    }

    #[test]
    fn repeated_observation_is_noop() {
        let mut rm = Roadmap::new(1.0).unwrap();
        rm.observe(q1(0.3)).unwrap();
        let before = rm.stats();
        let obs = rm.observe(q1(0.3)).unwrap();
        assert_eq!(obs.kind, ObservationKind::Unchanged);
        assert_eq!(rm.stats(), before);
    }

    #[test]
    fn chain_has_two_edges() {
        let rm = chain();
        assert_eq!(rm.stats().vertex_count, 3);
        assert_eq!(
            rm.edges(),
            &[(VertexId(0), VertexId(1)), (VertexId(1), VertexId(2))]
        );
    }

    #[test]
    fn revisit_matches_existing_vertex() {
        let mut rm = chain();
        let obs = rm.observe(q1(0.0)).unwrap();
        assert_eq!(
            obs,
            Observation {
                vertex: VertexId(0),
                kind: ObservationKind::Matched
            }
        );
        assert_eq!(rm.stats().vertex_count, 3);
        // sub-quantum noise still matches
        let obs = rm.observe(q1(1.0 + 1e-8)).unwrap();
        assert_eq!(obs.vertex, VertexId(1));
        assert_eq!(rm.last_observed(), Some(VertexId(1)));
    }

    #[test]
    fn neighborhood_examples() {
        let empty = Roadmap::new(1.0).unwrap();
        assert!(empty.neighborhood(&q1(0.0), 1.0).is_empty());
        let rm = chain();
        assert_eq!(
            rm.neighborhood(&q1(1.0), 1.0),
            vec![VertexId(0), VertexId(1), VertexId(2)]
        );
        assert!(rm.neighborhood(&q1(5.0), 1.0).is_empty());
    }

    #[test]
    fn save_view_examples() {
        let mut rm = Roadmap::new(1.0).unwrap();
        assert_eq!(rm.save_view("TV"), Err(RoadmapError::EmptyRoadmap));
        rm.observe(Configuration::ZERO).unwrap();
        let b = rm.save_view("TV").unwrap();
        assert_eq!(b.vertex_id, VertexId(0));
        assert_eq!(rm.stats().view_count, 1);
        assert_eq!(
            rm.save_view("TV"),
            Err(RoadmapError::DuplicateLabel("TV".into()))
        );
        assert_eq!(rm.save_view(""), Err(RoadmapError::EmptyLabel));

        let mut rm = chain();
        let order: Vec<_> = rm.vertices().to_vec();
        let b = rm.save_view("AV").unwrap();
        assert_eq!(rm.vertex(b.vertex_id), order.last());
        assert_eq!(
            rm.stats(),
            RoadmapStats {
                vertex_count: 3,
                edge_count: 2,
                view_count: 1
            }
        );
    }

    #[test]
    fn long_step_creates_isolated_vertex() {
        let mut rm = Roadmap::new(1.0).unwrap();
        rm.observe(q1(0.0)).unwrap();
        let obs = rm.observe(q1(3.0)).unwrap();
        assert!(obs.is_isolated());
        assert_eq!(rm.neighbors(obs.vertex), &[]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut rm = Roadmap::new(1.0).unwrap();
        assert!(matches!(
            rm.observe(Configuration::new(f64::INFINITY, 0.0, 0.0, 0.0)),
            Err(RoadmapError::InvalidConfiguration(_))
        ));
        assert!(rm.is_empty());
    }

    #[test]
    fn nearest_within_prefers_smaller_id_on_ties() {
        let rm = chain();
        let (id, d) = rm.nearest_within(&q1(0.5), 1.0).unwrap();
        assert_eq!((id, d), (VertexId(0), 0.5));
        assert!(rm.nearest_within(&q1(4.0), 1.0).is_none());
    }

    #[test]
    fn rejects_bad_epsilon() {
        assert!(Roadmap::new(0.0).is_err());
        assert!(Roadmap::new(f64::NAN).is_err());
    }
}
