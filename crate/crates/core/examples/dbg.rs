use num_complex::Complex64;
use ruelle::complexdyn::*;
use std::time::Instant;

fn main() {
    for n in [6usize, 8] {
        let map = ComplexQuadratic::new(Complex64::new(0.0, 0.0));
        let t = Instant::now();
        let pts = periodic_points_complex(&map, n).unwrap();
        println!("n={n}: {} roots in {:?}", pts.len(), t.elapsed());
    }
    let map = ComplexQuadratic::new(Complex64::new(-1.0, 0.0));
    let t = Instant::now();
    let est = complex_periodic_pressure(&map, &ComplexPotential::Zero, (3, 8)).unwrap();
    println!("basilica (3,8): {} in {:?}", est.extrapolated, t.elapsed());
}
