//! Uniform 4-D hash grid over roadmap vertices.

use std::collections::HashMap;

use crate::config::{Configuration, AXES};

use super::VertexId;

type Cell = [i64; AXES];

/// Buckets vertex ids by `floor(coordinate / cell_size)` on every axis.
///
/// With `cell_size == epsilon`, an ε-range query touches at most 3⁴ cells.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size: f64,
    buckets: HashMap<Cell, Vec<VertexId>>,
}

impl GridIndex {
    pub fn new(cell_size: f64) -> Self {
        assert!(
            cell_size > 0.0 && cell_size.is_finite(),
            "cell size must be positive"
        );
        Self {
            cell_size,
            buckets: HashMap::new(),
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn cell_coord(&self, v: f64) -> i64 {
        (v / self.cell_size).floor() as i64
    }

    fn cell_of(&self, q: &Configuration) -> Cell {
        let a = q.to_array();
        std::array::from_fn(|i| self.cell_coord(a[i]))
    }

    pub fn insert(&mut self, q: &Configuration, id: VertexId) {
        let cell = self.cell_of(q);
        self.buckets.entry(cell).or_default().push(id);
    }

    /// Calls `visit` for every id stored in a cell that can hold points
    /// within `radius` of `q`. Candidates still need an exact distance test.
    pub fn for_each_candidate(
        &self,
        q: &Configuration,
        radius: f64,
        mut visit: impl FnMut(VertexId),
    ) {
        let a = q.to_array();
        let lo: Cell = std::array::from_fn(|i| self.cell_coord(a[i] - radius));
        let hi: Cell = std::array::from_fn(|i| self.cell_coord(a[i] + radius));
        let mut cell = lo;
        loop {
            if let Some(ids) = self.buckets.get(&cell) {
                ids.iter().copied().for_each(&mut visit);
            }
            // odometer increment over the box [lo, hi]
            let mut axis = 0;
            loop {
                if axis == AXES {
                    return;
                }
                if cell[axis] < hi[axis] {
                    cell[axis] += 1;
                    break;
                }
                cell[axis] = lo[axis];
                axis += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_radius_scans_81_cells_at_most() {
        let mut grid = GridIndex::new(1.0);
        let mut id = 0;
        for a in -3..=3 {
            for b in -3..=3 {
                grid.insert(
                    &Configuration::new(a as f64 + 0.5, b as f64 + 0.5, 0.5, 0.5),
                    VertexId(id),
                );
                id += 1;
            }
        }
        let mut seen = Vec::new();
        grid.for_each_candidate(&Configuration::new(0.5, 0.5, 0.5, 0.5), 1.0, |v| {
            seen.push(v)
        });
        // 3x3 cells in the populated plane
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn negative_coordinates_floor_correctly() {
        let mut grid = GridIndex::new(1.0);
        grid.insert(&Configuration::new(-0.1, 0.0, 0.0, 0.0), VertexId(0));
        let mut seen = Vec::new();
        grid.for_each_candidate(&Configuration::new(-1.05, 0.0, 0.0, 0.0), 1.0, |v| {
            seen.push(v)
        });
        assert_eq!(seen, vec![VertexId(0)]);
    }
}
