//! Dirichlet energy of the gap profile between two facing paraboloids.
//!
//! The gap region is `{r ≤ d, −a r² ≤ z ≤ ν + a r²}` in cylindrical
//! coordinates and the profile is `w = (a r² + ν − z) / (2 a r² + ν)`, equal to
//! 1 on the lower surface and 0 on the upper one.
//!
//! Quadrature uses the substitution `r = √(ν/2a)·sinh σ`, which resolves the
//! `O(√ν)` neck, and `z = −a r² + t·h(r)` with `h = 2 a r² + ν`, `t ∈ [0, 1]`.
//! Both axes use the midpoint rule followed by one Richardson step against the
//! half-resolution grid.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::stats::{linear_regression, LinearFit};

pub const MIN_GRID: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum KellerError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature grid {n_r}x{n_t} is below {MIN_GRID} points per axis")]
    DegenerateGrid { n_r: usize, n_t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KellerParams {
    /// Paraboloid curvature.
    pub a: f64,
    /// Gap width at the axis.
    pub nu: f64,
    /// Gap radius.
    pub d: f64,
    /// Exponent of the weight `|x|^{2γ}`.
    #[serde(default)]
    pub gamma: f64,
}

impl KellerParams {
    pub fn validate(&self) -> Result<(), KellerError> {
        let bad = |m: &str| Err(KellerError::InvalidParameter(m.into()));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad("a must be positive");
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return bad("nu must lie in (0, 1)");
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return bad("d must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub n_r: usize,
    pub n_t: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self { n_r: 256, n_t: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KellerEnergy {
    pub params: KellerParams,
    /// Exact `∫ |∂_z w|²`.
    pub z_closed_form: f64,
    /// Quadrature of `∫ |∂_z w|²`, a check on the closed form.
    pub z_quadrature: f64,
    /// Quadrature of `∫ |∇w|²`.
    pub full_quadrature: f64,
    /// Quadrature of `∫ |∇w|² |x|^{2γ}`.
    pub weighted_quadrature: f64,
}

impl KellerEnergy {
    /// Contribution of the radial derivative.
    pub fn radial_excess(&self) -> f64 {
        self.full_quadrature - self.z_closed_form
    }
}

pub fn z_closed_form(a: f64, nu: f64, d: f64) -> f64 {
    PI / (2.0 * a) * (2.0 * a * d * d / nu).ln_1p()
}

/// Exact `∫ |∂_r w|²` over the gap region.
pub fn radial_closed_form(a: f64, nu: f64, d: f64) -> f64 {
    4.0 * PI * a * a / 3.0 * (d * d / (2.0 * a) - nu / (4.0 * a * a) * (2.0 * a * d * d / nu).ln_1p())
}

/// Midpoint sums of the three integrands on an `n_r × n_t` grid.
fn midpoint(p: &KellerParams, n_r: usize, n_t: usize) -> [f64; 3] {
    let KellerParams { a, nu, d, gamma } = *p;
    let c = (nu / (2.0 * a)).sqrt();
    let s_max = (d / c).asinh();
    let ds = s_max / n_r as f64;
    let dt = 1.0 / n_t as f64;
    let mut acc = [0.0; 3];
    for i in 0..n_r {
        let s = (i as f64 + 0.5) * ds;
        let r = c * s.sinh();
        let dr_ds = c * s.cosh();
        let h = 2.0 * a * r * r + nu;
        let wz2 = 1.0 / (h * h);
        // Jacobian of (σ, t) ↦ (r, z) times the 2π r angular factor.
        let jac = 2.0 * PI * r * h * dr_ds * ds * dt;
        let mut z_row = 0.0;
        let mut full_row = 0.0;
        let mut weighted_row = 0.0;
        for j in 0..n_t {
            let t = (j as f64 + 0.5) * dt;
            let z = -a * r * r + t * h;
            let wr = 2.0 * a * r * (2.0 * z - nu) / (h * h);
            let g2 = wz2 + wr * wr;
            z_row += wz2;
            full_row += g2;
            weighted_row += if gamma == 0.0 { g2 } else { g2 * (r * r + z * z).powf(gamma) };
        }
        acc[0] += jac * z_row;
        acc[1] += jac * full_row;
        acc[2] += jac * weighted_row;
    }
    acc
}

pub fn keller_energy(params: KellerParams, grid: QuadratureGrid) -> Result<KellerEnergy, KellerError> {
    params.validate()?;
    if grid.n_r < MIN_GRID || grid.n_t < MIN_GRID {
        return Err(KellerError::DegenerateGrid {
            n_r: grid.n_r,
            n_t: grid.n_t,
        });
    }
    let coarse = midpoint(&params, grid.n_r, grid.n_t);
    let fine = midpoint(&params, 2 * grid.n_r, 2 * grid.n_t);
    let rich = |k: usize| (4.0 * fine[k] - coarse[k]) / 3.0;
    Ok(KellerEnergy {
        params,
        z_closed_form: z_closed_form(params.a, params.nu, params.d),
        z_quadrature: rich(0),
        full_quadrature: rich(1),
        weighted_quadrature: rich(2),
    })
}

/// Keller energies over a list of gap widths with the regression of the
/// closed form against `ln(1/ν)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KellerTable {
    pub rows: Vec<KellerEnergy>,
    pub slope_fit: Option<LinearFit>,
    /// `π / (2a)`.
    pub predicted_slope: f64,
}

pub fn keller_table(base: KellerParams, nus: &[f64], grid: QuadratureGrid) -> Result<KellerTable, KellerError> {
    let rows = nus
        .iter()
        .map(|&nu| keller_energy(KellerParams { nu, ..base }, grid))
        .collect::<Result<Vec<_>, _>>()?;
    let x: Vec<f64> = nus.iter().map(|nu| -nu.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.z_closed_form).collect();
    Ok(KellerTable {
        rows,
        slope_fit: linear_regression(&x, &y),
        predicted_slope: PI / (2.0 * base.a),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(nu: f64, gamma: f64) -> KellerParams {
        KellerParams { a: 1.0, nu, d: 1.0, gamma }
    }

    /// Plain Cartesian (r, z) midpoint rule, no substitution, as an independent check.
    fn brute(p: &KellerParams, n: usize) -> [f64; 2] {
        let dr = p.d / n as f64;
        let mut z_term = 0.0;
        let mut full = 0.0;
        for i in 0..n {
            let r = (i as f64 + 0.5) * dr;
            let lo = -p.a * r * r;
            let h = 2.0 * p.a * r * r + p.nu;
            let dz = h / 1024.0;
            for j in 0..1024 {
                let z = lo + (j as f64 + 0.5) * dz;
                let wz = -1.0 / h;
                let wr = 2.0 * p.a * r * (2.0 * z - p.nu) / (h * h);
                z_term += 2.0 * PI * r * wz * wz * dr * dz;
                full += 2.0 * PI * r * (wz * wz + wr * wr) * dr * dz;
            }
        }
        [z_term, full]
    }

    #[test]
    fn closed_form_value() {
        assert_relative_eq!(z_closed_form(1.0, 1e-2, 1.0), PI / 2.0 * 201f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(z_closed_form(1.0, 1e-2, 1.0), 8.3300, epsilon = 5e-4);
        assert!(z_closed_form(1.0, 1e-2, 1e-8) < 1e-10);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        for nu in [1e-2, 1e-4, 1e-6] {
            let k = keller_energy(params(nu, 0.0), QuadratureGrid::default()).unwrap();
            assert_relative_eq!(k.z_quadrature, k.z_closed_form, max_relative = 1e-6);
            assert_relative_eq!(k.radial_excess(), radial_closed_form(1.0, nu, 1.0), max_relative = 1e-5);
            assert_eq!(k.weighted_quadrature, k.full_quadrature);
        }
    }

    #[test]
    fn quadrature_matches_brute_force_at_moderate_gap() {
        let p = params(0.5, 0.0);
        let k = keller_energy(p, QuadratureGrid::default()).unwrap();
        let [z, full] = brute(&p, 2000);
        assert_relative_eq!(k.z_quadrature, z, max_relative = 1e-5);
        assert_relative_eq!(k.full_quadrature, full, max_relative = 1e-5);
    }

    #[test]
    fn radial_excess_is_bounded() {
        let ex: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&nu| keller_energy(params(nu, 0.0), QuadratureGrid::default()).unwrap().radial_excess())
            .collect();
        let limit = 2.0 * PI / 3.0;
        for e in &ex {
            assert!(*e > 0.0 && *e <= limit);
        }
        let (lo, hi) = ex.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!((hi - lo) / hi < 0.05);
    }

    #[test]
    fn slope_against_log_gap() {
        let nus = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        for a in [0.5, 1.0, 2.0] {
            let t = keller_table(KellerParams { a, nu: 1e-2, d: 1.0, gamma: 0.0 }, &nus, QuadratureGrid::default())
                .unwrap();
            let fit = t.slope_fit.unwrap();
            assert_relative_eq!(fit.slope, PI / (2.0 * a), max_relative = 0.01);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            keller_energy(params(1e-2, 0.0), QuadratureGrid { n_r: 8, n_t: 32 }),
            Err(KellerError::DegenerateGrid { .. })
        ));
        assert!(keller_energy(params(1.5, 0.0), QuadratureGrid::default()).is_err());
        assert!(keller_energy(KellerParams { a: 0.0, ..params(0.1, 0.0) }, QuadratureGrid::default()).is_err());
    }

    #[test]
    fn weighted_energy_is_bounded_in_gap_width() {
        let w: Vec<f64> = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&nu| {
                keller_energy(KellerParams { a: 1.0, nu, d: 1.0, gamma: 1.0 }, QuadratureGrid::default())
                    .unwrap()
                    .weighted_quadrature
            })
            .collect();
        let (lo, hi) = w.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!((hi - lo) / hi < 0.05, "{w:?}");
    }
}
