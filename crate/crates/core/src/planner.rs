//! View-recovery queries: shortest roadmap path from the current vertex to a
//! saved view, found with A* under the motor-space metric.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{distance, Configuration};
use crate::roadmap::{Roadmap, VertexId};

pub const PATH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("unknown view {0:?}")]
    UnknownView(String),
    #[error("start vertex {0} is not in the roadmap")]
    InvalidStart(VertexId),
    #[error("no roadmap path from {start} to {goal}")]
    Unreachable { start: VertexId, goal: VertexId },
    #[error("current configuration is {distance:.3} away from the nearest roadmap vertex (epsilon {epsilon})")]
    OffRoadmap { distance: f64, epsilon: f64 },
    #[error("roadmap is empty")]
    EmptyRoadmap,
}

/// Ordered waypoints from the start vertex to the goal vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryPath {
    pub vertices: Vec<VertexId>,
    pub waypoints: Vec<Configuration>,
    pub total_cost: f64,
    pub search_time: Duration,
}

impl RecoveryPath {
    pub fn start(&self) -> &Configuration {
        &self.waypoints[0]
    }

    pub fn goal(&self) -> &Configuration {
        self.waypoints.last().expect("paths are never empty")
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Cost still to travel once `reached` waypoints have been visited.
    pub fn remaining_cost(&self, reached: usize) -> f64 {
        path_cost(&self.waypoints[reached.min(self.waypoints.len().saturating_sub(1))..])
    }

    pub fn to_file(&self) -> PathFile {
        PathFile {
            format_version: PATH_FORMAT_VERSION,
            waypoints: self.waypoints.clone(),
            total_cost: self.total_cost,
            search_time_ms: self.search_time.as_secs_f64() * 1e3,
        }
    }
}

/// Exported path document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFile {
    pub format_version: u32,
    pub waypoints: Vec<Configuration>,
    pub total_cost: f64,
    pub search_time_ms: f64,
}

/// Sum of distances between consecutive waypoints.
pub fn path_cost(waypoints: &[Configuration]) -> f64 {
    waypoints.windows(2).map(|w| distance(&w[0], &w[1])).sum()
}

/// Picks the start vertex for a query issued at configuration `q`: the
/// nearest vertex within `epsilon`, or `OffRoadmap`.
pub fn snap_to_roadmap(roadmap: &Roadmap, q: &Configuration) -> Result<VertexId, PlanError> {
    if roadmap.is_empty() {
        return Err(PlanError::EmptyRoadmap);
    }
    if let Some(id) = roadmap.find_vertex(q) {
        return Ok(id);
    }
    match roadmap.nearest_within(q, roadmap.epsilon()) {
        Some((id, _)) => Ok(id),
        None => {
            let nearest = roadmap
                .vertices()
                .iter()
                .map(|v| distance(v, q))
                .fold(f64::INFINITY, f64::min);
            Err(PlanError::OffRoadmap {
                distance: nearest,
                epsilon: roadmap.epsilon(),
            })
        }
    }
}

/// Plans a recovery from `start` to the vertex bookmarked as `view`.
pub fn plan(roadmap: &Roadmap, start: VertexId, view: &str) -> Result<RecoveryPath, PlanError> {
    let goal = roadmap
        .view(view)
        .ok_or_else(|| PlanError::UnknownView(view.to_owned()))?
        .vertex_id;
    astar(roadmap, start, goal)
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    f: f64,
    g: f64,
    id: VertexId,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // BinaryHeap is a max-heap: reverse so the smallest (f, id) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// A* between two vertices with `distance(v, goal)` as the heuristic.
///
/// The heuristic is consistent because edge weights use the same metric, so
/// the first time the goal is popped its cost is optimal. Ties on `f` are
/// broken toward the smaller vertex id.
pub fn astar(
    roadmap: &Roadmap,
    start: VertexId,
    goal: VertexId,
) -> Result<RecoveryPath, PlanError> {
    let started = Instant::now();
    if !roadmap.contains(start) {
        return Err(PlanError::InvalidStart(start));
    }
    let n = roadmap.len();
    let goal_q = *roadmap
        .vertex(goal)
        .ok_or(PlanError::Unreachable { start, goal })?;
    let heuristic = |id: VertexId| distance(&roadmap.vertices()[id.index()], &goal_q);

    let mut g = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<VertexId>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();

    g[start.index()] = 0.0;
    open.push(Frontier {
        f: heuristic(start),
        g: 0.0,
        id: start,
    });

    while let Some(Frontier { g: g_cur, id, .. }) = open.pop() {
        if closed[id.index()] {
            continue;
        }
        closed[id.index()] = true;
        if id == goal {
            let mut vertices = vec![goal];
            let mut cur = goal;
            while let Some(p) = parent[cur.index()] {
                vertices.push(p);
                cur = p;
            }
            vertices.reverse();
            let waypoints = vertices
                .iter()
                .map(|v| roadmap.vertices()[v.index()])
                .collect();
            return Ok(RecoveryPath {
                vertices,
                waypoints,
                total_cost: g_cur,
                search_time: started.elapsed(),
            });
        }
        for &(next, w) in roadmap.neighbors(id) {
            if closed[next.index()] {
                continue;
            }
            let candidate = g_cur + w;
            let slot = &mut g[next.index()];
            let improves = candidate < *slot
                || (candidate == *slot && parent[next.index()].is_some_and(|p| id < p));
            if improves {
                *slot = candidate;
                parent[next.index()] = Some(id);
                open.push(Frontier {
                    f: candidate + heuristic(next),
                    g: candidate,
                    id: next,
                });
            }
        }
    }
    Err(PlanError::Unreachable { start, goal })
}
