use super::grid::{Grid, Window};
use crate::error::{Error, Result};

/// Nodal values on the interior grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Field) {
        debug_assert_eq!(self.len(), x.len());
        for (s, xi) in self.values.iter_mut().zip(&x.values) {
            *s += a * xi;
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field::from_vec(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Field) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field::from_vec(self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect())
    }

    /// `(1 - theta) * self + theta * other`
    pub fn lerp(&self, other: &Field, theta: f64) -> Field {
        Field::from_vec(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn raw_dot(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn check_on(&self, grid: &Grid, what: &str) -> Result<()> {
        if self.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{what} has {} values, grid has {} interior nodes",
                self.len(),
                grid.len()
            )));
        }
        Ok(())
    }
}

impl Grid {
    /// Discrete `L²(Ω)` inner product.
    pub fn dot(&self, a: &Field, b: &Field) -> f64 {
        self.cell_area() * a.raw_dot(b)
    }

    pub fn norm(&self, f: &Field) -> f64 {
        self.dot(f, f).sqrt()
    }

    /// Discrete `L²(Ω_c)` inner product of two control snapshots.
    pub fn control_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_area() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// The injection `B`: extends a control snapshot by zero outside `Ω_c`.
    pub fn inject(&self, control: &[f64]) -> Result<Field> {
        let mut out = Field::zeros(self.len());
        self.inject_scaled_into(control, 1.0, &mut out)?;
        Ok(out)
    }

    /// `out += scale * B control`
    pub(crate) fn inject_scaled_into(&self, control: &[f64], scale: f64, out: &mut Field) -> Result<()> {
        if control.len() != self.control_len() {
            return Err(Error::Shape(format!(
                "control snapshot has {} values, control set has {} nodes",
                control.len(),
                self.control_len()
            )));
        }
        for (&node, c) in self.control_nodes().iter().zip(control) {
            out.values[node] += scale * c;
        }
        Ok(())
    }

    /// The restriction `B*`, adjoint of [`Grid::inject`].
    pub fn restrict(&self, f: &Field) -> Result<Vec<f64>> {
        f.check_on(self, "field")?;
        Ok(self.control_nodes().iter().map(|&n| f.values[n]).collect())
    }
}

/// One control snapshot per fine step of a window, stored contiguously.
///
/// Snapshot `j` is the control applied during fine step `window.start + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTrajectory {
    window: Window,
    width: usize,
    values: Vec<f64>,
}

impl ControlTrajectory {
    pub fn zeros(window: Window, width: usize) -> Self {
        Self { window, width, values: vec![0.0; window.len() * width] }
    }

    pub fn from_vec(window: Window, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != window.len() * width {
            return Err(Error::Shape(format!(
                "control trajectory needs {}x{} values, got {}",
                window.len(),
                width,
                values.len()
            )));
        }
        Ok(Self { window, width, values })
    }

    /// Builds a trajectory by evaluating `f(step, slot)` for every snapshot entry.
    pub fn from_fn(window: Window, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(window.len() * width);
        for m in window.start..window.end {
            for c in 0..width {
                values.push(f(m, c));
            }
        }
        Self { window, width, values }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Number of control nodes per snapshot.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn steps(&self) -> usize {
        self.window.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Snapshot by position inside the window.
    pub fn snapshot(&self, j: usize) -> &[f64] {
        &self.values[j * self.width..(j + 1) * self.width]
    }

    pub fn snapshot_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.width..(j + 1) * self.width]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Moves the trajectory to another window of the same length.
    pub fn shifted_to(mut self, window: Window) -> Result<Self> {
        if window.len() != self.window.len() {
            return Err(Error::Shape(format!(
                "cannot move {} snapshots to a window of length {}",
                self.window.len(),
                window.len()
            )));
        }
        self.window = window;
        Ok(self)
    }

    /// The snapshots falling in `sub`, which must lie inside this window.
    pub fn restrict_to(&self, sub: Window) -> Result<Self> {
        if !self.window.contains(&sub) {
            return Err(Error::Shape(format!(
                "window {:?} is not inside {:?}",
                sub, self.window
            )));
        }
        let lo = (sub.start - self.window.start) * self.width;
        let hi = (sub.end - self.window.start) * self.width;
        Ok(Self { window: sub, width: self.width, values: self.values[lo..hi].to_vec() })
    }

    /// Concatenates consecutive pieces into one trajectory.
    pub fn concat(parts: &[ControlTrajectory]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot concatenate zero trajectories".into()))?;
        let mut values = Vec::new();
        let mut end = first.window.start;
        for p in parts {
            if p.window.start != end || p.width != first.width {
                return Err(Error::Shape("trajectory pieces are not contiguous".into()));
            }
            end = p.window.end;
            values.extend_from_slice(&p.values);
        }
        Ok(Self { window: Window::new(first.window.start, end), width: first.width, values })
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.window != other.window || self.width != other.width {
            return Err(Error::Shape(format!(
                "trajectories on {:?}x{} and {:?}x{} do not match",
                self.window, self.width, other.window, other.width
            )));
        }
        Ok(())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.values.len(), x.values.len());
        for (s, xi) in self.values.iter_mut().zip(&x.values) {
            *s += a * xi;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            window: self.window,
            width: self.width,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// `(1 - theta) * self + theta * other`
    pub fn lerp(&self, other: &Self, theta: f64) -> Self {
        Self {
            window: self.window,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect(),
        }
    }

    /// Unweighted sum of products; scale by `dt * hx * hy` for the `L²(I; Ω_c)` product.
    pub fn raw_dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::new(7, 5).unwrap()
    }

    #[test]
    fn inject_zero_and_basis() {
        let g = grid();
        let zero = g.inject(&vec![0.0; g.control_len()]).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));

        let mut c = vec![0.0; g.control_len()];
        c[1] = 2.5;
        let f = g.inject(&c).unwrap();
        let nonzero: Vec<_> = f.as_slice().iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, g.control_nodes()[1]);
        assert_eq!(*nonzero[0].1, 2.5);
    }

    #[test]
    fn shape_errors() {
        let g = grid();
        assert!(matches!(g.inject(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(g.restrict(&Field::zeros(3)), Err(Error::Shape(_))));
        assert!(g.restrict(&Field::zeros(g.len())).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn restrict_to_and_concat() {
        let v = ControlTrajectory::from_fn(Window::new(0, 6), 2, |m, c| (10 * m + c) as f64);
        let a = v.restrict_to(Window::new(0, 2)).unwrap();
        let b = v.restrict_to(Window::new(2, 6)).unwrap();
        assert_eq!(b.snapshot(0), &[20.0, 21.0]);
        assert_eq!(ControlTrajectory::concat(&[a.clone(), b]).unwrap(), v);
        assert!(v.restrict_to(Window::new(4, 7)).is_err());
        assert!(ControlTrajectory::concat(&[a.clone(), a]).is_err());
    }

    proptest! {
        #[test]
        fn inject_restrict_adjoint(seed in proptest::collection::vec(-1.0f64..1.0, 35 + 35)) {
            let g = grid();
            let f = Field::from_vec(seed[..35].to_vec());
            let c: Vec<f64> = seed[35..35 + g.control_len()].to_vec();
            let lhs = g.dot(&g.inject(&c).unwrap(), &f);
            let rhs = g.control_dot(&c, &g.restrict(&f).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-14 * (1.0 + lhs.abs()));
            prop_assert_eq!(g.restrict(&g.inject(&c).unwrap()).unwrap(), c.clone());
            let rc = g.restrict(&f).unwrap();
            prop_assert!(g.control_dot(&rc, &rc).sqrt() <= g.norm(&f) + 1e-15);
        }
    }
}
