//! Small fixed-capacity vectors and toroidal arena geometry.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(SmallVec<[f64; 4]>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self(SmallVec::from_elem(0.0, dim))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self(SmallVec::from_slice(values))
    }

    /// Unit vector along `axis`, scaled by `scale`.
    pub fn axis(dim: usize, axis: usize, scale: f64) -> Self {
        let mut v = Self::zeros(dim);
        v.0[axis] = scale;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Rescales to magnitude `max` when longer than `max`; direction is kept.
    pub fn clamp_norm(&self, max: f64) -> Self {
        let n = self.norm();
        if n > max && n > 0.0 {
            self * (max / n)
        } else {
            self.clone()
        }
    }

    /// Clamps each component into `[-max, max]`.
    pub fn clamp_components(&self, max: f64) -> Self {
        Self(self.0.iter().map(|x| x.clamp(-max, max)).collect())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &Vector {
    type Output = Vector;
    fn add(self, rhs: &Vector) -> Vector {
        Vector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Vector {
    type Output = Vector;
    fn sub(self, rhs: &Vector) -> Vector {
        Vector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &Vector {
    type Output = Vector;
    fn mul(self, k: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * k).collect())
    }
}

impl AddAssign<&Vector> for Vector {
    fn add_assign(&mut self, rhs: &Vector) {
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a += b;
        }
    }
}

/// Periodic box `[-extent, extent)` on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Torus {
    pub extent: f64,
}

impl Torus {
    pub fn new(extent: f64) -> Self {
        Self { extent }
    }

    pub fn width(&self) -> f64 {
        2.0 * self.extent
    }

    /// Maps a coordinate back into `[-extent, extent)`.
    pub fn wrap_coord(&self, x: f64) -> f64 {
        let w = self.width();
        let y = (x + self.extent).rem_euclid(w) - self.extent;
        // rem_euclid can return exactly w for tiny negative inputs
        if y >= self.extent {
            -self.extent
        } else {
            y
        }
    }

    pub fn wrap(&self, v: &Vector) -> Vector {
        Vector(v.0.iter().map(|&x| self.wrap_coord(x)).collect())
    }

    /// Shortest-path displacement from `from` to `to`.
    pub fn delta(&self, from: &Vector, to: &Vector) -> Vector {
        let w = self.width();
        Vector(
            from.0
                .iter()
                .zip(&to.0)
                .map(|(&a, &b)| {
                    let d = b - a;
                    d - w * (d / w).round()
                })
                .collect(),
        )
    }

    /// Weighted mean of points, unwrapped around the first point.
    pub fn weighted_mean<'a>(&self, points: impl IntoIterator<Item = (&'a Vector, f64)>) -> Vector {
        let mut iter = points.into_iter();
        let (anchor, w0) = iter.next().expect("weighted_mean of empty set");
        let mut acc = Vector::zeros(anchor.dim());
        let mut total = w0;
        for (p, w) in iter {
            acc += &(&self.delta(anchor, p) * w);
            total += w;
        }
        self.wrap(&(anchor + &(&acc * (1.0 / total))))
    }
}
