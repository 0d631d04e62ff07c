use num_rational::BigRational;
use snake_cr_core::cr::adapted_coframe;
use snake_cr_core::equiv::*;
use snake_cr_core::snake::*;
use std::time::Instant;

fn main() {
    let params = SnakeParams::exact(
        BigRational::new(1.into(), 1.into()),
        BigRational::new(1.into(), 2.into()),
        BigRational::new(1.into(), 1.into()),
    )
    .unwrap();
    let m = build_model(&params).unwrap();
    let c = adapted_coframe(&m).unwrap();
    let sc = SymbolicCoframe::new(&c);
    let shape = AnsatzShape::full(1);
    let opts = NormalizeOptions { starts: 6, max_iters: 120, ..Default::default() };
    let t0 = Instant::now();
    let r = fit_normalization_verbose(&sc, [1.0, 0.5, 1.0], &shape, &opts);
    match r {
        Ok(f) => println!("CONVERGED: residual {:.3e} in {:?}", f.fit_residual, t0.elapsed()),
        Err(e) => println!("FAILED in {:?}: {e}", t0.elapsed()),
    }
}
