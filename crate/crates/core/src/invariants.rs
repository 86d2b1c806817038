//! Conserved quantities of the ZK flow on a field.

use crate::grid::RealField;

/// `M(u) = ∫ u²`.
pub fn mass(u: &RealField) -> f64 {
    u.norm_l2().powi(2)
}

/// `E(u) = ∫ ( |∇u|²/2 − u³/3 )`.
pub fn energy(u: &RealField) -> f64 {
    let cubic: f64 = u.data().iter().map(|v| v * v * v).sum::<f64>() * u.grid().cell_area();
    0.5 * u.gradient_sq_integral() - cubic / 3.0
}

/// `∫ u`.
pub fn integral(u: &RealField) -> f64 {
    u.integral()
}
