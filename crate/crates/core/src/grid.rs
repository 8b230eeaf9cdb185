//! Uniform Cartesian grids and dense field containers.
//!
//! Fields are stored flat with the x index fastest, which matches the point
//! ordering of legacy VTK structured-points files.

/// Axis-aligned uniform grid. Every axis shares one spacing `dx`; node `i`
/// sits at `origin + i * dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformGrid<const D: usize> {
    extents: [usize; D],
    dx: f64,
    origin: [f64; D],
}

impl<const D: usize> UniformGrid<D> {
    pub fn new(extents: [usize; D], dx: f64) -> Self {
        Self::with_origin(extents, dx, [0.0; D])
    }

    pub fn with_origin(extents: [usize; D], dx: f64, origin: [f64; D]) -> Self {
        assert!(dx > 0.0, "grid spacing must be positive");
        assert!(extents.iter().all(|&n| n >= 1), "grid extents must be >= 1");
        Self { extents, dx, origin }
    }

    pub fn extents(&self) -> [usize; D] {
        self.extents
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn origin(&self) -> [f64; D] {
        self.origin
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of a node, x fastest.
    pub fn flat(&self, idx: [usize; D]) -> usize {
        let mut out = 0;
        for a in (0..D).rev() {
            debug_assert!(idx[a] < self.extents[a]);
            out = out * self.extents[a] + idx[a];
        }
        out
    }

    /// Multi-index of a flat node index.
    pub fn node(&self, mut flat: usize) -> [usize; D] {
        let mut idx = [0usize; D];
        for a in 0..D {
            idx[a] = flat % self.extents[a];
            flat /= self.extents[a];
        }
        idx
    }

    /// Physical coordinates of a node.
    pub fn position(&self, idx: [usize; D]) -> [f64; D] {
        let mut x = [0.0; D];
        for a in 0..D {
            x[a] = self.origin[a] + idx[a] as f64 * self.dx;
        }
        x
    }

    /// Iterator over all multi-indices in flat order.
    pub fn nodes(&self) -> NodeIter<D> {
        NodeIter { extents: self.extents, next: Some([0; D]) }
    }
}

/// Odometer iterator over node multi-indices, x fastest.
pub struct NodeIter<const D: usize> {
    extents: [usize; D],
    next: Option<[usize; D]>,
}

impl<const D: usize> Iterator for NodeIter<D> {
    type Item = [usize; D];

    fn next(&mut self) -> Option<[usize; D]> {
        let current = self.next?;
        let mut bump = current;
        let mut carry = true;
        for a in 0..D {
            if carry {
                bump[a] += 1;
                if bump[a] == self.extents[a] {
                    bump[a] = 0;
                } else {
                    carry = false;
                }
            }
        }
        self.next = if carry { None } else { Some(bump) };
        Some(current)
    }
}

/// Dense scalar field over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<const D: usize> {
    extents: [usize; D],
    data: Vec<f64>,
}

impl<const D: usize> ScalarField<D> {
    pub fn zeros(grid: &UniformGrid<D>) -> Self {
        Self { extents: grid.extents(), data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &UniformGrid<D>, value: f64) -> Self {
        Self { extents: grid.extents(), data: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: &UniformGrid<D>, mut f: impl FnMut([usize; D]) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for (flat, idx) in grid.nodes().enumerate() {
            out.data[flat] = f(idx);
        }
        out
    }

    pub fn extents(&self) -> [usize; D] {
        self.extents
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl<const D: usize> std::ops::Index<usize> for ScalarField<D> {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl<const D: usize> std::ops::IndexMut<usize> for ScalarField<D> {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense vector field (one `[f64; D]` per node).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<const D: usize> {
    extents: [usize; D],
    data: Vec<[f64; D]>,
}

impl<const D: usize> VectorField<D> {
    pub fn zeros(grid: &UniformGrid<D>) -> Self {
        Self { extents: grid.extents(), data: vec![[0.0; D]; grid.len()] }
    }

    pub fn from_fn(grid: &UniformGrid<D>, mut f: impl FnMut([usize; D]) -> [f64; D]) -> Self {
        let mut out = Self::zeros(grid);
        for (flat, idx) in grid.nodes().enumerate() {
            out.data[flat] = f(idx);
        }
        out
    }

    pub fn extents(&self) -> [usize; D] {
        self.extents
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: [f64; D]) {
        self.data.fill(value);
    }

    pub fn as_slice(&self) -> &[[f64; D]] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [[f64; D]] {
        &mut self.data
    }

    /// Largest velocity magnitude over the field.
    pub fn max_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|u| u.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

impl<const D: usize> std::ops::Index<usize> for VectorField<D> {
    type Output = [f64; D];
    fn index(&self, i: usize) -> &[f64; D] {
        &self.data[i]
    }
}

impl<const D: usize> std::ops::IndexMut<usize> for VectorField<D> {
    fn index_mut(&mut self, i: usize) -> &mut [f64; D] {
        &mut self.data[i]
    }
}

/// Dense rank-2 tensor field (one `[[f64; D]; D]` per node).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField<const D: usize> {
    extents: [usize; D],
    data: Vec<[[f64; D]; D]>,
}

impl<const D: usize> TensorField<D> {
    pub fn zeros(grid: &UniformGrid<D>) -> Self {
        Self { extents: grid.extents(), data: vec![[[0.0; D]; D]; grid.len()] }
    }

    pub fn extents(&self) -> [usize; D] {
        self.extents
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: [[f64; D]; D]) {
        self.data.fill(value);
    }

    pub fn as_slice(&self) -> &[[[f64; D]; D]] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [[[f64; D]; D]] {
        &mut self.data
    }
}

impl<const D: usize> std::ops::Index<usize> for TensorField<D> {
    type Output = [[f64; D]; D];
    fn index(&self, i: usize) -> &[[f64; D]; D] {
        &self.data[i]
    }
}

impl<const D: usize> std::ops::IndexMut<usize> for TensorField<D> {
    fn index_mut(&mut self, i: usize) -> &mut [[f64; D]; D] {
        &mut self.data[i]
    }
}
