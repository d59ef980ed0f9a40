use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::heat_core::{Field, Grid};

/// Named analytic initial and target profiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    Zero,
    /// `amp · exp(-((x-cx)² + (y-cy)²) / (2σ²))`
    Gaussian { cx: f64, cy: f64, sigma: f64, amp: f64 },
    /// `amp · sin(πx) sin(πy)`
    ProductSine { amp: f64 },
}

impl Profile {
    pub fn sample(&self, grid: &Grid) -> Field {
        match *self {
            Profile::Zero => Field::zeros(grid.len()),
            Profile::Gaussian { cx, cy, sigma, amp } => grid.sample(|x, y| {
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                amp * (-r2 / (2.0 * sigma * sigma)).exp()
            }),
            Profile::ProductSine { amp } => {
                grid.sample(|x, y| amp * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin())
            }
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Zero => f.write_str("zero"),
            Profile::Gaussian { cx, cy, sigma, amp } => write!(f, "gaussian({cx},{cy},{sigma},{amp})"),
            Profile::ProductSine { amp } => write!(f, "product_sine({amp})"),
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "zero" {
            return Ok(Profile::Zero);
        }
        let bad = || Error::Config(format!("unknown profile '{s}' (zero, gaussian(cx,cy,sigma,amp), product_sine(amp))"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad profile argument '{}'", a.trim()))))
            .collect::<Result<_>>()?;
        if args.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config(format!("profile arguments must be finite in '{s}'")));
        }
        match (name.trim(), args.as_slice()) {
            ("gaussian", &[cx, cy, sigma, amp]) => {
                if !(sigma > 0.0) {
                    return Err(Error::Config(format!("gaussian sigma must be positive, got {sigma}")));
                }
                Ok(Profile::Gaussian { cx, cy, sigma, amp })
            }
            ("product_sine", &[amp]) => Ok(Profile::ProductSine { amp }),
            ("gaussian", _) => Err(Error::Config("gaussian takes 4 arguments (cx,cy,sigma,amp)".into())),
            ("product_sine", _) => Err(Error::Config("product_sine takes 1 argument (amp)".into())),
            _ => Err(bad()),
        }
    }
}
