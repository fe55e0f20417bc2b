use serde::{Deserialize, Serialize};

use super::GeostatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramModel {
    #[default]
    Exponential,
    Spherical,
}

impl VariogramModel {
    /// Correlation at lag `h` for practical range `range` (the exponential
    /// model reaches 95% of the sill at `h = range`).
    pub fn correlation(self, h: f64, range: f64) -> f64 {
        let r = h / range;
        match self {
            VariogramModel::Exponential => (-3.0 * r).exp(),
            VariogramModel::Spherical => {
                if r >= 1.0 {
                    0.0
                } else {
                    1.0 - 1.5 * r + 0.5 * r * r * r
                }
            }
        }
    }
}

impl std::str::FromStr for VariogramModel {
    type Err = GeostatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponential" | "exp" => Ok(Self::Exponential),
            "spherical" | "sph" => Ok(Self::Spherical),
            other => Err(GeostatError::Variogram(format!("unknown model {other:?}"))),
        }
    }
}

/// Stationary porosity statistics. `sill` is the total variance, nugget included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramParams {
    pub mean: f64,
    pub sill: f64,
    pub range: f64,
    pub nugget: f64,
    #[serde(default)]
    pub model: VariogramModel,
}

impl Default for VariogramParams {
    fn default() -> Self {
        Self {
            mean: 0.2,
            sill: 0.001,
            range: 20.0,
            nugget: 0.0001,
            model: VariogramModel::Exponential,
        }
    }
}

impl VariogramParams {
    pub fn validate(&self) -> Result<(), GeostatError> {
        let fail = |m: &str| Err(GeostatError::Variogram(m.to_string()));
        if !(self.sill > 0.0) {
            return fail("sill must be > 0");
        }
        if !(self.range > 0.0) {
            return fail("range must be > 0");
        }
        if !(self.nugget >= 0.0 && self.nugget < self.sill) {
            return fail("nugget must satisfy 0 <= nugget < sill");
        }
        if !(self.mean > 0.0 && self.mean < 1.0) {
            return fail("mean must lie in (0, 1)");
        }
        Ok(())
    }

    /// Covariance at lag `h` (cell units). The nugget only contributes at `h = 0`.
    pub fn covariance(&self, h: f64) -> f64 {
        if h <= 0.0 {
            self.sill
        } else {
            (self.sill - self.nugget) * self.model.correlation(h, self.range)
        }
    }

    /// Model semivariance γ(h) = C(0) − C(h).
    pub fn semivariance(&self, h: f64) -> f64 {
        self.sill - self.covariance(h)
    }
}
