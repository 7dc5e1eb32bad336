//! Profile maximizer of `t^{m/2} g(t)` for a density generator `g`.
//!
//! Only used to check numerically that the nuisance scale drops out of the
//! fit: with `τ* = Q/t*` the scale factor `Q/τ*` equals `t*` for every
//! sample, whatever `Q` is.

use crate::error::{Error, Result};

const LOG_LO: f64 = -13.815510557964274; // ln 1e-6
const LOG_HI: f64 = 13.815510557964274; // ln 1e6
const REL_TOL: f64 = 1e-8;

/// `argsup_t t^{m/2} g(t)` by golden-section search on `ln t` over
/// `[1e-6, 1e6]`.
pub fn profile_argsup<G: Fn(f64) -> f64>(generator: G, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let half_m = m as f64 / 2.0;
    let objective = |u: f64| half_m * u + generator(u.exp()).ln();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;

    let (mut a, mut b) = (LOG_LO, LOG_HI);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while b - a > REL_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let u = 0.5 * (a + b);
    if u - LOG_LO < 1e-6 || LOG_HI - u < 1e-6 || !objective(u).is_finite() {
        return Err(Error::NoInteriorMaximum);
    }
    Ok(u.exp())
}

/// Nuisance scale maximizing the profile for a sample at distance `q`.
pub fn optimal_tau(q: f64, t_star: f64) -> f64 {
    q / t_star
}
