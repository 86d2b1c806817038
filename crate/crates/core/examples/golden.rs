//! Prints reference ground-state integrals at high resolution.

use zk_core::groundstate::{solve_ground_state, solve_ground_state_radial_3d};
use zk_core::Grid;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1024);
    let g = Grid::new(n, n, 60.0, 60.0).unwrap();
    let t = std::time::Instant::now();
    let gs = solve_ground_state(&g, 1e-12, 2000).unwrap();
    let fit = gs.fit_decay_rate().unwrap();
    println!("2d n={n} iters={} residual={:e} time={:?}", gs.report().iterations, gs.residual(), t.elapsed());
    println!("  mass={:.15e} energy={:.15e} peak={:.15e}", gs.mass(), gs.energy(), gs.peak());
    println!("  dx2={:.15e} integral={:.15e}", gs.dx_sq_integral(), gs.profile().integral());
    println!("  identity rel={:e}", (-2.0 * gs.energy() - 0.5 * gs.mass()).abs() / (0.5 * gs.mass()));
    println!("  decay {:?}", fit);
    let t = std::time::Instant::now();
    let r = solve_ground_state_radial_3d(16384, 60.0, 1e-12).unwrap();
    println!("3d iters={} residual={:e} time={:?}", r.report().iterations, r.residual(), t.elapsed());
    println!("  mass={:.15e} energy={:.15e} grad={:.15e} peak={:.15e}", r.mass(), r.energy(), r.gradient_sq_integral(), r.peak());
}
