use crate::error::{Error, Result};

/// Interior nodes of a uniform grid on the unit square with homogeneous
/// Dirichlet boundary, plus the nodes lying in the control square
/// `[1/3, 2/3]²`.
///
/// Node `(i, j)` sits at `((i + 1) hx, (j + 1) hy)` and has linear index
/// `j * nx + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    control_nodes: Vec<usize>,
    control_slot: Vec<Option<usize>>,
}

/// `1/3 <= k/(n+1) <= 2/3`, evaluated in integers so ties on the closed
/// boundary are included regardless of rounding.
fn in_control_band(k: usize, n: usize) -> bool {
    3 * k > n && 3 * k <= 2 * (n + 1)
}

impl Grid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!(
                "grid needs at least one interior node per axis, got {nx}x{ny}"
            )));
        }
        let mut control_nodes = Vec::new();
        let mut control_slot = vec![None; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                if in_control_band(i + 1, nx) && in_control_band(j + 1, ny) {
                    control_slot[j * nx + i] = Some(control_nodes.len());
                    control_nodes.push(j * nx + i);
                }
            }
        }
        if control_nodes.is_empty() {
            return Err(Error::Config(format!(
                "no interior node of the {nx}x{ny} grid lies in the control square"
            )));
        }
        Ok(Self {
            nx,
            ny,
            hx: 1.0 / (nx + 1) as f64,
            hy: 1.0 / (ny + 1) as f64,
            control_nodes,
            control_slot,
        })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of one node, `hx * hy`.
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Interior node indices inside the control square, in increasing order.
    pub fn control_nodes(&self) -> &[usize] {
        &self.control_nodes
    }

    pub fn control_len(&self) -> usize {
        self.control_nodes.len()
    }

    /// Position of `node` in the control snapshot layout, if it is a control node.
    pub fn control_slot(&self, node: usize) -> Option<usize> {
        self.control_slot.get(node).copied().flatten()
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        let (i, j) = (node % self.nx, node / self.nx);
        ((i + 1) as f64 * self.hx, (j + 1) as f64 * self.hy)
    }

    /// Samples `f(x, y)` at every interior node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> super::Field {
        super::Field::from_vec((0..self.len()).map(|k| {
            let (x, y) = self.coords(k);
            f(x, y)
        }).collect())
    }
}

/// Uniform fine time grid of `steps` implicit-Euler steps of size `dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    /// Builds the grid from a horizon and a step, requiring `horizon / dt`
    /// to be an integer up to rounding.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite() && dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!(
                "time horizon and step must be positive, got T={horizon}, dt={dt}"
            )));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "T={horizon} is not an integer multiple of dt={dt}"
            )));
        }
        Ok(Self { horizon, dt, steps: steps as usize })
    }

    pub fn from_steps(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("time horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon, dt: horizon / steps as f64, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn full_window(&self) -> Window {
        Window::new(0, self.steps)
    }
}

/// Half-open range `[start, end)` of fine steps; step `m` advances the
/// solution from `t_m` to `t_{m+1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "window start {start} after end {end}");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &Window) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}
