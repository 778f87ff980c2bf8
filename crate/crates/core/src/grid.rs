//! Uniform cartesian lattices, field storage with staggering conventions and
//! ghost-cell boundary application.
//!
//! 1D grids carry one ghost cell on each side. Cell centers sit at `x_k = k h`
//! and interfaces at `x_{k+1/2} = (k + 1/2) h`. 3D grids are index boxes with
//! one fictitious layer beyond each bounded face; axes may independently be
//! periodic or bounded.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc1d {
    Periodic,
    /// Bounded domain; ghost cells copy the adjacent interior value.
    NeumannGhost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub n_cells: usize,
    pub h: f64,
    pub bc: Bc1d,
}

impl Grid1D {
    pub fn new(n_cells: usize, h: f64, bc: Bc1d) -> Result<Self> {
        if n_cells < 4 {
            return Err(Error::InvalidInput(format!("grid needs at least 4 cells, got {n_cells}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(format!("cell width must be positive, got {h}")));
        }
        Ok(Grid1D { n_cells, h, bc })
    }

    pub fn cell_center(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn interface(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.h
    }

    /// Interfaces: one per cell on a periodic grid, one extra on a bounded one.
    pub fn n_interfaces(&self) -> usize {
        match self.bc {
            Bc1d::Periodic => self.n_cells,
            Bc1d::NeumannGhost => self.n_cells + 1,
        }
    }

    /// Periodic wrap of a signed cell index.
    pub fn wrap(&self, k: isize) -> usize {
        let n = self.n_cells as isize;
        (((k % n) + n) % n) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Staggering {
    Cell,
    Face,
}

/// Field on a [`Grid1D`]. Cell-centered fields carry one ghost slot on each
/// side (`values[0]` and `values[n+1]`); face-centered fields store exactly
/// one value per interface.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub staggering: Staggering,
}

impl Field {
    pub fn cell_centered(grid: &Grid1D, interior: &[f64]) -> Result<Self> {
        if interior.len() != grid.n_cells {
            return Err(Error::InvalidInput("interior length does not match grid".into()));
        }
        if interior.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        let mut values = vec![0.0; grid.n_cells + 2];
        values[1..=grid.n_cells].copy_from_slice(interior);
        Ok(Field { values, staggering: Staggering::Cell })
    }

    pub fn face_centered(grid: &Grid1D, faces: &[f64]) -> Result<Self> {
        if faces.len() != grid.n_interfaces() {
            return Err(Error::InvalidInput("face count does not match grid".into()));
        }
        if faces.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        Ok(Field { values: faces.to_vec(), staggering: Staggering::Face })
    }

    pub fn interior(&self) -> &[f64] {
        match self.staggering {
            Staggering::Cell => &self.values[1..self.values.len() - 1],
            Staggering::Face => &self.values,
        }
    }
}

/// Fills the ghost entries of a cell-centered field: periodic wrap or
/// zero-flux copy. Interior values are untouched; the operation is
/// idempotent.
pub fn apply_bc(field: &mut Field, grid: &Grid1D) -> Result<()> {
    if field.staggering != Staggering::Cell {
        return Err(Error::InvalidInput("ghost filling expects a cell-centered field".into()));
    }
    let n = grid.n_cells;
    if field.values.len() != n + 2 {
        return Err(Error::InvalidInput("field length does not match grid including ghosts".into()));
    }
    match grid.bc {
        Bc1d::Periodic => {
            field.values[0] = field.values[n];
            field.values[n + 1] = field.values[1];
        }
        Bc1d::NeumannGhost => {
            field.values[0] = field.values[1];
            field.values[n + 1] = field.values[n];
        }
    }
    Ok(())
}

/// Axis topology of a 3D grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Periodic,
    Bounded,
}

/// Classification of a padded-grid cell along the bounded axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellClass {
    /// Strictly inside: every bounded axis at least one cell from the face.
    Interior,
    /// Last row of real cells against a bounded face.
    BoundaryLayer,
    /// Fictitious layer outside the box.
    Fictitious,
}

/// Uniform 3D lattice. Bounded axes get one fictitious layer on each side;
/// periodic axes wrap. `dims` counts the real (box) cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    pub dims: [usize; 3],
    pub h: [f64; 3],
    pub topo: [Topology; 3],
}

impl Grid3D {
    pub fn new(dims: [usize; 3], h: [f64; 3], topo: [Topology; 3]) -> Result<Self> {
        for a in 0..3 {
            if dims[a] < 3 {
                return Err(Error::InvalidInput(format!("axis {a}: need at least 3 cells, got {}", dims[a])));
            }
            if !(h[a] > 0.0) || !h[a].is_finite() {
                return Err(Error::InvalidInput(format!("axis {a}: cell width must be positive")));
            }
        }
        Ok(Grid3D { dims, h, topo })
    }

    /// Symmetric index box `[-M_a, M_a]` per axis, bounded everywhere, with
    /// one fictitious layer.
    pub fn symmetric_box(m: [usize; 3], h: [f64; 3]) -> Result<Self> {
        Grid3D::new(
            [2 * m[0] + 1, 2 * m[1] + 1, 2 * m[2] + 1],
            h,
            [Topology::Bounded; 3],
        )
    }

    /// Extent of the padded index range along an axis (fictitious layers
    /// included on bounded axes).
    pub fn padded_dim(&self, axis: usize) -> usize {
        match self.topo[axis] {
            Topology::Periodic => self.dims[axis],
            Topology::Bounded => self.dims[axis] + 2,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn n_padded(&self) -> usize {
        self.padded_dim(0) * self.padded_dim(1) * self.padded_dim(2)
    }

    /// Flat index over the box cells; periodic axes wrap, bounded axes must
    /// be in range `0..dims`.
    pub fn flat(&self, k: [isize; 3]) -> usize {
        let mut idx = 0usize;
        for a in 0..3 {
            let n = self.dims[a] as isize;
            let c = match self.topo[a] {
                Topology::Periodic => ((k[a] % n) + n) % n,
                Topology::Bounded => {
                    debug_assert!(k[a] >= 0 && k[a] < n, "axis {a}: box index {} out of range", k[a]);
                    k[a]
                }
            };
            idx = idx * self.dims[a] + c as usize;
        }
        idx
    }

    /// Flat index over the padded grid. Bounded axes accept `-1..=dims`
    /// (one fictitious layer each side); anything further is an indexing
    /// error.
    pub fn flat_padded(&self, k: [isize; 3]) -> usize {
        let mut idx = 0usize;
        for a in 0..3 {
            let n = self.dims[a] as isize;
            let c = match self.topo[a] {
                Topology::Periodic => ((k[a] % n) + n) % n,
                Topology::Bounded => {
                    assert!(
                        k[a] >= -1 && k[a] <= n,
                        "axis {a}: padded index {} outside fictitious layer",
                        k[a]
                    );
                    k[a] + 1
                }
            };
            idx = idx * self.padded_dim(a) + c as usize;
        }
        idx
    }

    /// Classifies a padded index.
    pub fn classify(&self, k: [isize; 3]) -> CellClass {
        let mut boundary = false;
        for a in 0..3 {
            if self.topo[a] == Topology::Bounded {
                let n = self.dims[a] as isize;
                if k[a] < 0 || k[a] >= n {
                    return CellClass::Fictitious;
                }
                if k[a] == 0 || k[a] == n - 1 {
                    boundary = true;
                }
            }
        }
        if boundary {
            CellClass::BoundaryLayer
        } else {
            CellClass::Interior
        }
    }

    /// Iterates the box cells in flat order.
    pub fn iter_box(&self) -> impl Iterator<Item = [isize; 3]> + '_ {
        let d = self.dims;
        (0..d[0] as isize).flat_map(move |i| {
            (0..d[1] as isize).flat_map(move |j| (0..d[2] as isize).map(move |k| [i, j, k]))
        })
    }

    pub fn cell_center(&self, k: [isize; 3]) -> [f64; 3] {
        [
            k[0] as f64 * self.h[0],
            k[1] as f64 * self.h[1],
            k[2] as f64 * self.h[2],
        ]
    }
}
