use macprune::characterize::delay_profile_all;
use macprune::engine::adder_bounds;
use macprune::netlist::{gen_adder, gen_multiplier, CellLibrary};
use std::time::Instant;

fn main() {
    let lib = CellLibrary::default();
    let mult = gen_multiplier();
    let (bounds, psum) = adder_bounds(&gen_adder(), &lib).unwrap();
    let weights: Vec<i8> = (-127..=127).collect();
    let t0 = Instant::now();
    let profile = delay_profile_all(&mult, &lib, &bounds, psum, &weights).unwrap();
    println!(
        "255 x 65536 transitions in {:.1} s; global max {} ps, psum bound {} ps",
        t0.elapsed().as_secs_f64(),
        profile.global_max_ps,
        profile.psum_bound_ps
    );
}
