use bht_lab::fields::*;
use bht_lab::phases::*;
use bht_lab::static_solver::*;
use std::time::Instant;

fn main() {
    let k_max = 32;
    let v = VelocitySpec::new(0.01, -3.0, k_max).unwrap();
    let s = SourceSpec::flat(4.0).unwrap();
    let phi = sample_static_phases(derive_seed(1, 0, 0), k_max);
    let xi = sample_static_phases(derive_seed(1, 0, 1), k_max);
    let psi = build_streamfunction(&v, &phi);
    let u = velocity_from_streamfunction(&psi);
    let g = build_source_truncated(&s, &xi, k_max);
    let t0 = Instant::now();
    let it = iterate_static(&u, &g, None, 0).unwrap();
    println!("iterate_static: {:?} ({} iters)", t0.elapsed(), it.iterations);
    let t1 = Instant::now();
    let oracle = dense_oracle_solve(&u, &g).unwrap();
    println!("dense_oracle_solve: {:?}", t1.elapsed());
    let rel = it.theta.sub_field(&oracle).unwrap().l2_norm_sq().sqrt() / oracle.l2_norm_sq().sqrt();
    println!("rel diff: {rel:.3e}");
}
