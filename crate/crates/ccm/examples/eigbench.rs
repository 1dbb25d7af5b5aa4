use mimo_ccm::numerics::*;
use std::time::Instant;
fn main() {
    let m = 128usize;
    // band-limited toeplitz like our CCMs
    let chi = std::f64::consts::PI;
    let col: Vec<C64> = (0..m).map(|k| {
        let x = (k as f64) * chi * 0.15;
        C64::from_polar((1.0/(1.0+x*x)).sqrt()/ m as f64, -0.5*x)
    }).collect();
    let h = hermitian_toeplitz(&col);
    let t0 = Instant::now();
    let n = 30;
    let mut acc = 0.0;
    for _ in 0..n {
        let e = hermitian_eig(&h).unwrap();
        acc += e.values[0];
    }
    println!("eig 128x128: {:?} per call (acc {acc})", t0.elapsed() / n);
}
