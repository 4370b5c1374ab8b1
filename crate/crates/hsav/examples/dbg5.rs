use hsav::models::*;
use hsav::sav::init_consistent;
use hsav::stepper::{integrate, Method, SolverConfig};
use hsav::Grid2D;
use std::f64::consts::PI;

fn main() {
    let g = Grid2D::new(128, 128, 4.0 * PI, 4.0 * PI).unwrap();
    let ch = cahn_hilliard(CahnHilliardParams { lambda: 0.1, eps: 0.025, gamma0: 1.0, c0: 1.0 }, g).unwrap();
    let ch0 = initial_condition(InitialCondition::Random { amp: 0.001, mean: 0.0, seed: 2024 }, g).unwrap();
    let g2 = Grid2D::new(128, 128, 2.0 * PI, 2.0 * PI).unwrap();
    let mb = mbe(MbeParams { m: 1.0, eps2: 0.1, gamma0: 1.0, c0: 1.0 }, g2).unwrap();
    let mb0 = initial_condition(InitialCondition::MbeTwoMode, g2).unwrap();
    let cfg = SolverConfig::default();
    for (name, model, phi0) in [("ch", &ch, &ch0), ("mbe", &mb, &mb0)] {
        for s in [1usize, 2, 3] {
            for dt in [0.1, 1.0, 10.0] {
                let state = init_consistent(phi0.clone(), model).unwrap();
                let res = integrate(state, model, Method::Gauss(s), dt, dt * 5.0, &mut [], &cfg);
                match res {
                    Ok(_) => println!("{name} gauss{s} dt={dt}: OK"),
                    Err(e) => println!("{name} gauss{s} dt={dt}: FAIL ({})", e.to_string().chars().take(60).collect::<String>()),
                }
            }
        }
    }
}
