//! Uniform node-centered 2D grid and bilinear interpolation.
//!
//! Nodes sit at `(i*dx, j*dx)` for `i in 0..nx`, `j in 0..ny`; boundary nodes
//! are included, so the domain is the closed rectangle
//! `[0, (nx-1)*dx] x [0, (ny-1)*dx]`. Values are stored row-major with the
//! x-index varying slowest: `values[i*ny + j]`.

use crate::error::{KsError, Result};

/// Geometry of a uniform node-centered grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(KsError::InvalidInput(format!(
                "grid needs at least 3 nodes per axis, got {nx} x {ny}"
            )));
        }
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(KsError::InvalidInput(format!("mesh size must be positive, got {dx}")));
        }
        Ok(GridSpec { nx, ny, dx })
    }

    /// Square grid covering `[0, length]^2` with mesh size `dx`. The node
    /// count is rounded so that `(n-1)*dx` matches `length` as closely as
    /// possible (e.g. length 3.2, dx 0.05 gives 65 nodes per axis).
    pub fn square(length: f64, dx: f64) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(KsError::InvalidInput(format!("domain length must be positive, got {length}")));
        }
        let n = (length / dx).round() as usize + 1;
        GridSpec::new(n, n, dx)
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    /// Domain extent along x: `(nx-1)*dx`.
    #[inline]
    pub fn len_x(&self) -> f64 {
        (self.nx - 1) as f64 * self.dx
    }

    #[inline]
    pub fn len_y(&self) -> f64 {
        (self.ny - 1) as f64 * self.dx
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        i * self.ny + j
    }

    #[inline]
    pub fn node_pos(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.dx, j as f64 * self.dx)
    }

    /// Trapezoidal quadrature weight of a node: 1 interior, 1/2 on an edge,
    /// 1/4 in a corner. The discrete integral of a field F is
    /// `dx^2 * sum w_ij F_ij`.
    #[inline]
    pub fn quad_weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        wx * wy
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && x <= self.len_x() && y >= 0.0 && y <= self.len_y()
    }

    /// Locate the cell containing `(x, y)` and the local coordinates within
    /// it, both in `[0, 1]`. Points on the far boundary land in the last cell
    /// with local coordinate 1.
    #[inline]
    pub fn locate(&self, x: f64, y: f64) -> Result<(usize, usize, f64, f64)> {
        if !x.is_finite() || !y.is_finite() {
            return Err(KsError::InvalidInput(format!("non-finite position ({x}, {y})")));
        }
        if !self.contains(x, y) {
            return Err(KsError::OutOfDomain { x, y });
        }
        let u = x / self.dx;
        let v = y / self.dx;
        let ix = (u as usize).min(self.nx - 2);
        let iy = (v as usize).min(self.ny - 2);
        Ok((ix, iy, u - ix as f64, v - iy as f64))
    }
}

/// A scalar field sampled on the nodes of a [`GridSpec`].
#[derive(Debug, Clone)]
pub struct GridField {
    pub spec: GridSpec,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(spec: GridSpec) -> Self {
        GridField { spec, values: vec![0.0; spec.n_nodes()] }
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        GridField { spec, values: vec![value; spec.n_nodes()] }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_nodes() {
            return Err(KsError::InvalidInput(format!(
                "field length {} does not match grid with {} nodes",
                values.len(),
                spec.n_nodes()
            )));
        }
        Ok(GridField { spec, values })
    }

    /// Fill from a function of node position.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = vec![0.0; spec.n_nodes()];
        for i in 0..spec.nx {
            for j in 0..spec.ny {
                let (x, y) = spec.node_pos(i, j);
                values[spec.idx(i, j)] = f(x, y);
            }
        }
        GridField { spec, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.spec.idx(i, j);
        self.values[idx] = v;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| v.abs().max(m))
    }

    /// Quadrature-weighted discrete integral `dx^2 sum w_ij F_ij`.
    pub fn integral(&self) -> f64 {
        let s = &self.spec;
        let mut acc = 0.0;
        for i in 0..s.nx {
            for j in 0..s.ny {
                acc += s.quad_weight(i, j) * self.values[s.idx(i, j)];
            }
        }
        acc * s.dx * s.dx
    }

    /// Quadrature-weighted L2 norm, `sqrt(dx^2 sum w F^2)`.
    pub fn weighted_l2(&self) -> f64 {
        let s = &self.spec;
        let mut acc = 0.0;
        for i in 0..s.nx {
            for j in 0..s.ny {
                let v = self.values[s.idx(i, j)];
                acc += s.quad_weight(i, j) * v * v;
            }
        }
        (acc * s.dx * s.dx).sqrt()
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(KsError::InvalidInput(format!("{what} contains non-finite values")))
        }
    }

    /// Bilinear interpolation at an in-domain position.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Result<f64> {
        let (ix, iy, fx, fy) = self.spec.locate(x, y)?;
        Ok(self.cell_interp(ix, iy, fx, fy))
    }

    #[inline]
    fn cell_interp(&self, ix: usize, iy: usize, fx: f64, fy: f64) -> f64 {
        let s = &self.spec;
        let v00 = self.values[s.idx(ix, iy)];
        let v10 = self.values[s.idx(ix + 1, iy)];
        let v01 = self.values[s.idx(ix, iy + 1)];
        let v11 = self.values[s.idx(ix + 1, iy + 1)];
        v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
    }
}

/// Sample two fields sharing a spec at one position, computing the bilinear
/// weights once. Used for the gradient pair (CX, CY).
pub fn sample_bilinear_pair(fx_field: &GridField, fy_field: &GridField, x: f64, y: f64) -> Result<(f64, f64)> {
    if fx_field.spec != fy_field.spec {
        return Err(KsError::SpecMismatch("gradient components on different grids".into()));
    }
    let (ix, iy, fx, fy) = fx_field.spec.locate(x, y)?;
    Ok((fx_field.cell_interp(ix, iy, fx, fy), fy_field.cell_interp(ix, iy, fx, fy)))
}

/// Central-difference gradient fields (CX, CY) with mirrored ghost nodes, so
/// the normal component vanishes on the boundary.
pub fn build_gradient(c: &GridField) -> Result<(GridField, GridField)> {
    c.ensure_finite("concentration field")?;
    let s = c.spec;
    let inv2dx = 1.0 / (2.0 * s.dx);
    let mut cx = GridField::zeros(s);
    let mut cy = GridField::zeros(s);
    for i in 0..s.nx {
        for j in 0..s.ny {
            // Mirrored ghosts: C[-1] = C[1], C[n] = C[n-2]. On the boundary the
            // centered difference therefore evaluates to zero.
            let xp = if i + 1 < s.nx { c.get(i + 1, j) } else { c.get(i - 1, j) };
            let xm = if i > 0 { c.get(i - 1, j) } else { c.get(i + 1, j) };
            let yp = if j + 1 < s.ny { c.get(i, j + 1) } else { c.get(i, j - 1) };
            let ym = if j > 0 { c.get(i, j - 1) } else { c.get(i, j + 1) };
            cx.set(i, j, (xp - xm) * inv2dx);
            cy.set(i, j, (yp - ym) * inv2dx);
        }
    }
    Ok((cx, cy))
}
